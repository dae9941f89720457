//! Uniform grids and the composite trapezoidal rule.

/// `n` evenly spaced points from `lo` to `hi` inclusive. `n == 1` yields `[lo]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let h = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + i as f64 * h })
                .collect()
        }
    }
}

/// Node spacing of `linspace(lo, hi, n)`.
pub fn step(lo: f64, hi: f64, n: usize) -> f64 {
    if n < 2 {
        0.0
    } else {
        (hi - lo) / (n - 1) as f64
    }
}

/// Trapezoid weights for `n` uniform nodes with spacing `h`.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    if let Some(first) = w.first_mut() {
        *first = 0.5 * h;
    }
    if n > 1 {
        w[n - 1] = 0.5 * h;
    }
    w
}

/// Composite trapezoidal rule over uniformly spaced samples.
pub fn trapezoid(ys: &[f64], h: f64) -> f64 {
    match ys.len() {
        0 | 1 => 0.0,
        n => {
            let interior: f64 = ys[1..n - 1].iter().sum();
            h * (0.5 * (ys[0] + ys[n - 1]) + interior)
        }
    }
}
