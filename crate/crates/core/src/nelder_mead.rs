//! Nelder-Mead simplex minimization.

/// Stopping and shape parameters for [`minimize`].
#[derive(Clone, Debug)]
pub struct Options {
    pub max_iters: usize,
    /// Stop when the simplex spread in f (relative to |f_best|) or the
    /// simplex diameter in x falls below this.
    pub tol: f64,
    /// Per-coordinate initial edge lengths; must match the dimension.
    pub steps: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimizes `f` starting from `x0`. Non-finite values are treated as `+inf`.
///
/// Both stopping tests are invariant under positive rescaling of `f`, so
/// minimizing `k·f` follows the same path as minimizing `f`.
pub fn minimize<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &Options) -> Minimum {
    let dim = x0.len();
    assert!(dim > 0, "cannot minimize over zero coordinates");
    assert_eq!(opts.steps.len(), dim, "one initial step per coordinate");
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += opts.steps[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let mut iterations = 0;
    let mut order: Vec<usize> = (0..=dim).collect();
    while iterations < opts.max_iters {
        // Stable sort keeps the result independent of anything but the values.
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];

        let spread = values[worst] - values[best];
        let f_scale = values[best].abs();
        let diameter = simplex
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[best])
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            })
            .fold(0.0, f64::max);
        if (spread.is_finite() && spread <= opts.tol * f_scale) || diameter <= opts.tol {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; dim];
        for &i in &order[..dim] {
            for (c, x) in centroid.iter_mut().zip(&simplex[i]) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= dim as f64);

        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let reflected = along(REFLECT);
        let f_reflected = eval(&reflected);
        if f_reflected < values[best] {
            let expanded = along(EXPAND);
            let f_expanded = eval(&expanded);
            if f_expanded < f_reflected {
                simplex[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_reflected;
            }
            continue;
        }
        if f_reflected < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = f_reflected;
            continue;
        }

        let (contracted, f_contracted) = if f_reflected < values[worst] {
            let p = along(CONTRACT * REFLECT);
            let v = eval(&p);
            (p, v)
        } else {
            let p = along(-CONTRACT);
            let v = eval(&p);
            (p, v)
        };
        if f_contracted < values[worst].min(f_reflected) {
            simplex[worst] = contracted;
            values[worst] = f_contracted;
            continue;
        }

        let anchor = simplex[best].clone();
        for &i in &order[1..] {
            for (x, a) in simplex[i].iter_mut().zip(&anchor) {
                *x = a + SHRINK * (*x - a);
            }
            values[i] = eval(&simplex[i]);
        }
    }

    let best = (0..=dim)
        .min_by(|&i, &j| values[i].total_cmp(&values[j]))
        .expect("simplex is non-empty");
    Minimum {
        x: simplex.swap_remove(best),
        value: values[best],
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_rosenbrock_minimum() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = Options {
            max_iters: 2000,
            tol: 1e-12,
            steps: vec![0.5, 0.5],
        };
        let m = minimize(rosen, &[-1.2, 1.0], &opts);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64]| x.iter().map(|v| v.abs()).sum::<f64>();
        let x0 = [0.3, -0.2, 0.1, 0.5];
        let opts = Options {
            max_iters: 5,
            tol: 1e-8,
            steps: vec![0.1; 4],
        };
        let m = minimize(f, &x0, &opts);
        assert!(m.value <= f(&x0));
    }

    #[test]
    fn treats_nan_as_infinite() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 1.0).powi(2) };
        let opts = Options {
            max_iters: 500,
            tol: 1e-10,
            steps: vec![0.5],
        };
        let m = minimize(f, &[0.2], &opts);
        assert!((m.x[0] - 1.0).abs() < 1e-4);
    }
}
