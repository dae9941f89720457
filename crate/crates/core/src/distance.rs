//! Affine-invariant distance between scalar functions.
//!
//! `ND(f1, f2) = min_{a,b,c,d} ∫ |f1(x) − (a·f2(c·x + d) + b)| dx` over a finite
//! domain, and the density-weighted variant with the integrand multiplied by
//! `ρ(x)`. The minimization is a coarse `(c, d)` grid with the best `(a, b)`
//! for each cell found by weighted linear least squares, followed by
//! Nelder-Mead refinement of all four parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::Density;
use crate::nelder_mead;
use crate::quadrature::{linspace, step, trapezoid_weights};

/// `x ↦ a·f(c·x + d) + b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineReparam {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl AffineReparam {
    pub const IDENTITY: AffineReparam = AffineReparam {
        a: 1.0,
        b: 0.0,
        c: 1.0,
        d: 0.0,
    };

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite() && self.d.is_finite()
    }

    /// Applies the reparameterization to `f` at `x`.
    pub fn apply<F: Fn(f64) -> f64 + ?Sized>(&self, f: &F, x: f64) -> f64 {
        self.a * f(self.c * x + self.d) + self.b
    }

    /// The reparameterization `r` with `r(self(f)) = f`, defined when `a ≠ 0`, `c ≠ 0`.
    pub fn inverse(&self) -> Option<Self> {
        (self.a != 0.0 && self.c != 0.0).then(|| Self {
            a: 1.0 / self.a,
            b: -self.b / self.a,
            c: 1.0 / self.c,
            d: -self.d / self.c,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceConfig {
    pub domain: (f64, f64),
    pub quad_points: usize,
    pub c_grid: Vec<f64>,
    pub d_grid: Vec<f64>,
    /// Nelder-Mead iterations per refinement round.
    pub refine_iters: usize,
    pub tol: f64,
    /// Drives the orientation of restart simplices.
    pub seed: u64,
}

/// Refinement rounds after the first; each restarts Nelder-Mead from the incumbent.
const REFINE_RESTARTS: usize = 3;

/// Refinement starts: the best grid cell of each of this many best `c` values.
const REFINE_STARTS: usize = 6;

/// Extra starts taken from the inverted cells of the mirrored grid search.
const MIRROR_STARTS: usize = 3;

impl Default for DistanceConfig {
    fn default() -> Self {
        let magnitudes = logspace(0.1, 10.0, 17);
        let mut c_grid: Vec<f64> = magnitudes.iter().rev().map(|m| -m).collect();
        c_grid.extend(magnitudes);
        Self {
            domain: (-3.0, 3.0),
            quad_points: 2001,
            c_grid,
            d_grid: linspace(-3.0, 3.0, 13),
            refine_iters: 200,
            tol: 1e-8,
            seed: 0,
        }
    }
}

/// `n` log-spaced values from `lo` to `hi` (both positive).
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    linspace(lo.log10(), hi.log10(), n)
        .into_iter()
        .map(|e| 10f64.powf(e))
        .collect()
}

impl DistanceConfig {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("distance domain [{lo}, {hi}]")));
        }
        if self.quad_points < 2 {
            return Err(Error::Config("quad_points must be at least 2".into()));
        }
        if self.c_grid.is_empty() || self.d_grid.is_empty() {
            return Err(Error::Config("c_grid and d_grid must be non-empty".into()));
        }
        if self.c_grid.iter().chain(&self.d_grid).any(|v| !v.is_finite()) {
            return Err(Error::Config("grid values must be finite".into()));
        }
        Ok(())
    }
}

/// Result of a distance minimization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distance {
    pub value: f64,
    #[serde(flatten)]
    pub reparam: AffineReparam,
}

/// Trapezoidal quadrature of `|f1(x) − (a·f2(c·x + d) + b)|`, optionally times `ρ(x)`.
pub fn integrate_abs_diff(
    f1: &dyn Fn(f64) -> f64,
    f2: &dyn Fn(f64) -> f64,
    rp: &AffineReparam,
    domain: (f64, f64),
    quad_points: usize,
    density: Option<&Density>,
) -> Result<f64> {
    let (lo, hi) = domain;
    if !(lo < hi) || quad_points < 2 {
        return Err(Error::Config("integration needs lo < hi and at least 2 nodes".into()));
    }
    let xs = linspace(lo, hi, quad_points);
    let w = trapezoid_weights(quad_points, step(lo, hi, quad_points));
    let mut total = 0.0;
    for (x, wi) in xs.into_iter().zip(w) {
        let v1 = f1(x);
        let v2 = rp.apply(f2, x);
        if !v1.is_finite() || !v2.is_finite() {
            return Err(Error::NonFinite(format!("integrand at x = {x}")));
        }
        let rho = density.map_or(1.0, |d| d.at(x));
        total += wi * rho * (v1 - v2).abs();
    }
    Ok(total)
}

/// Quadrature nodes with precomputed weights and `f1` values.
struct Problem<'a> {
    xs: Vec<f64>,
    weights: Vec<f64>,
    f1: Vec<f64>,
    f2: &'a dyn Fn(f64) -> f64,
}

impl Problem<'_> {
    fn new<'a>(
        f1: &dyn Fn(f64) -> f64,
        f2: &'a dyn Fn(f64) -> f64,
        cfg: &DistanceConfig,
        density: Option<&Density>,
    ) -> Result<Problem<'a>> {
        let (lo, hi) = cfg.domain;
        let xs = linspace(lo, hi, cfg.quad_points);
        let mut weights = trapezoid_weights(cfg.quad_points, step(lo, hi, cfg.quad_points));
        if let Some(d) = density {
            for (w, &x) in weights.iter_mut().zip(&xs) {
                *w *= d.at(x);
            }
        }
        let f1v: Vec<f64> = xs.iter().map(|&x| f1(x)).collect();
        if let Some(i) = f1v.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("f1 at x = {}", xs[i])));
        }
        Ok(Problem {
            xs,
            weights,
            f1: f1v,
            f2,
        })
    }

    /// `f2(c·x_i + d)` at every node, or `None` if any value is non-finite.
    fn inner(&self, c: f64, d: f64, out: &mut Vec<f64>) -> bool {
        out.clear();
        for &x in &self.xs {
            let v = (self.f2)(c * x + d);
            if !v.is_finite() {
                return false;
            }
            out.push(v);
        }
        true
    }

    fn l1(&self, a: f64, b: f64, g: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&self.f1)
            .zip(g)
            .map(|((w, f), g)| w * (f - a * g - b).abs())
            .sum()
    }

    fn objective(&self, p: &[f64], scratch: &mut Vec<f64>) -> f64 {
        if !self.inner(p[2], p[3], scratch) {
            return f64::INFINITY;
        }
        self.l1(p[0], p[1], scratch)
    }

    /// Weighted least-squares `(a, b)` for `f1 ≈ a·g + b`.
    fn least_squares(&self, g: &[f64]) -> (f64, f64) {
        let total: f64 = self.weights.iter().sum();
        if !(total > 0.0) {
            return (0.0, 0.0);
        }
        let mut g_mean = 0.0;
        let mut f_mean = 0.0;
        for ((w, f), g) in self.weights.iter().zip(&self.f1).zip(g) {
            g_mean += w * g;
            f_mean += w * f;
        }
        g_mean /= total;
        f_mean /= total;
        let mut cov = 0.0;
        let mut var = 0.0;
        for ((w, f), g) in self.weights.iter().zip(&self.f1).zip(g) {
            let dg = g - g_mean;
            cov += w * dg * (f - f_mean);
            var += w * dg * dg;
        }
        let scale: f64 = g.iter().fold(0.0, |m, v| m.max(v.abs()));
        let a = if var > 1e-24 * total * scale.max(1.0).powi(2) {
            cov / var
        } else {
            0.0
        };
        (a, f_mean - a * g_mean)
    }
}

/// Best grid cell for every `c`, sorted by value. Ties within a `c` resolve
/// towards the first cell in grid order.
fn grid_cells(problem: &Problem<'_>, cfg: &DistanceConfig, scratch: &mut Vec<f64>) -> Vec<(f64, AffineReparam)> {
    let mut per_c: Vec<(f64, AffineReparam)> = Vec::with_capacity(cfg.c_grid.len());
    for &c in &cfg.c_grid {
        let mut cell: Option<(f64, AffineReparam)> = None;
        for &d in &cfg.d_grid {
            if !problem.inner(c, d, scratch) {
                continue;
            }
            let (a, b) = problem.least_squares(scratch);
            let v = problem.l1(a, b, scratch);
            if v.is_finite() && cell.is_none_or(|(best, _)| v < best) {
                cell = Some((v, AffineReparam::new(a, b, c, d)));
            }
        }
        per_c.extend(cell);
    }
    per_c.sort_by(|x, y| x.0.total_cmp(&y.0));
    per_c
}

fn minimize(
    f1: &dyn Fn(f64) -> f64,
    f2: &dyn Fn(f64) -> f64,
    cfg: &DistanceConfig,
    density: Option<&Density>,
) -> Result<Distance> {
    let problem = Problem::new(f1, f2, cfg, density)?;
    let mut scratch = Vec::with_capacity(problem.xs.len());
    let per_c = grid_cells(&problem, cfg, &mut scratch);
    let Some(&grid_best) = per_c.first() else {
        return Ok(Distance {
            value: f64::INFINITY,
            reparam: AffineReparam::new(0.0, 0.0, cfg.c_grid[0], cfg.d_grid[0]),
        });
    };

    let mut starts: Vec<(f64, AffineReparam)> = per_c.iter().take(REFINE_STARTS).copied().collect();
    // A steep reparameterization of f2 is hard to find on a d grid that is
    // coarse relative to 1/|c|, while its inverse sits near a grid cell of the
    // mirrored problem. Those cells, inverted, seed extra starts.
    if let Ok(mirror) = Problem::new(f2, f1, cfg, density) {
        for &(_, rp) in grid_cells(&mirror, cfg, &mut scratch).iter().take(MIRROR_STARTS) {
            if let Some(inv) = rp.inverse().filter(|r| r.is_finite()) {
                let v = problem.objective(&[inv.a, inv.b, inv.c, inv.d], &mut scratch);
                if v.is_finite() {
                    starts.push((v, inv));
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best = grid_best;
    for &(start_value, start) in &starts {
        let (value, rp) = refine(&problem, cfg, start_value, start, &mut rng, &mut scratch);
        if value < best.0 {
            best = (value, rp);
        }
    }
    Ok(Distance {
        value: best.0.max(0.0),
        reparam: best.1,
    })
}

/// Nelder-Mead from `start`, restarted from the incumbent while it keeps improving.
fn refine(
    problem: &Problem<'_>,
    cfg: &DistanceConfig,
    start_value: f64,
    start: AffineReparam,
    rng: &mut ChaCha8Rng,
    scratch: &mut Vec<f64>,
) -> (f64, AffineReparam) {
    let mut x = vec![start.a, start.b, start.c, start.d];
    let mut value = start_value;
    for round in 0..=REFINE_RESTARTS {
        let steps: Vec<f64> = x
            .iter()
            .map(|v| {
                let base = (0.1 * v.abs()).max(0.05);
                if round == 0 {
                    base
                } else if rng.random_bool(0.5) {
                    -base
                } else {
                    base
                }
            })
            .collect();
        let opts = nelder_mead::Options {
            max_iters: cfg.refine_iters,
            tol: cfg.tol,
            steps,
        };
        let m = nelder_mead::minimize(|p| problem.objective(p, scratch), &x, &opts);
        if m.value < value {
            value = m.value;
            x = m.x;
        } else {
            break;
        }
    }
    (value, AffineReparam::new(x[0], x[1], x[2], x[3]))
}

/// Neural distance from `f1` to `f2`: the best affine reparameterization of `f2`
/// approximating `f1` in L1 over the configured domain.
pub fn nd(f1: &dyn Fn(f64) -> f64, f2: &dyn Fn(f64) -> f64, cfg: &DistanceConfig) -> Result<Distance> {
    cfg.validate()?;
    minimize(f1, f2, cfg, None)
}

/// `min(ND(f1, f2), ND(f2, f1))`.
pub fn nd_sym(f1: &dyn Fn(f64) -> f64, f2: &dyn Fn(f64) -> f64, cfg: &DistanceConfig) -> Result<f64> {
    let forward = nd(f1, f2, cfg)?.value;
    let backward = nd(f2, f1, cfg)?.value;
    Ok(forward.min(backward))
}

/// Tolerance on the quadrature mass of a density passed to [`rnd`].
pub const DENSITY_MASS_TOL: f64 = 1e-6;

/// Density-weighted neural distance. `density` must integrate to one over the
/// configured domain under the same trapezoidal rule.
pub fn rnd(
    f1: &dyn Fn(f64) -> f64,
    f2: &dyn Fn(f64) -> f64,
    density: &Density,
    cfg: &DistanceConfig,
) -> Result<Distance> {
    cfg.validate()?;
    let mass = density.mass_on(cfg.domain.0, cfg.domain.1, cfg.quad_points);
    if !((mass - 1.0).abs() <= DENSITY_MASS_TOL) {
        return Err(Error::UnnormalizedDensity(mass));
    }
    minimize(f1, f2, cfg, Some(density))
}

/// `min(rND(f1, f2), rND(f2, f1))` under one density.
pub fn rnd_sym(
    f1: &dyn Fn(f64) -> f64,
    f2: &dyn Fn(f64) -> f64,
    density: &Density,
    cfg: &DistanceConfig,
) -> Result<f64> {
    let forward = rnd(f1, f2, density, cfg)?.value;
    let backward = rnd(f2, f1, density, cfg)?.value;
    Ok(forward.min(backward))
}

/// Uniform density over the configuration's domain.
pub fn uniform_density(cfg: &DistanceConfig) -> Result<Density> {
    Density::uniform(cfg.domain.0, cfg.domain.1)
}
