//! Closed-form reference activations and least-squares fitting of safe
//! rationals to them.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::linspace;
use crate::rational::{RationalFunction, Variant};

pub const DEFAULT_LRELU_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum ReferenceActivation {
    #[serde(rename = "lrelu")]
    LeakyRelu { slope: f64 },
    Relu,
    Tanh,
    Sigmoid,
    Silu,
    /// Derivative of SiLU, `σ(x)(1 + x(1 − σ(x)))`.
    Dsilu,
    Swish { beta: f64 },
    Identity,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ReferenceActivation {
    pub fn lrelu() -> Self {
        ReferenceActivation::LeakyRelu {
            slope: DEFAULT_LRELU_SLOPE,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            ReferenceActivation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            ReferenceActivation::Relu => x.max(0.0),
            ReferenceActivation::Tanh => x.tanh(),
            ReferenceActivation::Sigmoid => sigmoid(x),
            ReferenceActivation::Silu => x * sigmoid(x),
            ReferenceActivation::Dsilu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            ReferenceActivation::Swish { beta } => x * sigmoid(beta * x),
            ReferenceActivation::Identity => x,
        }
    }

    /// Derivative; kinks (ReLU, LReLU at 0) take the right-hand slope.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ReferenceActivation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            ReferenceActivation::Relu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ReferenceActivation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ReferenceActivation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ReferenceActivation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            ReferenceActivation::Dsilu => {
                let s = sigmoid(x);
                s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
            }
            ReferenceActivation::Swish { beta } => {
                let s = sigmoid(beta * x);
                s + beta * x * s * (1.0 - s)
            }
            ReferenceActivation::Identity => 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ReferenceActivation::LeakyRelu { slope: p } | ReferenceActivation::Swish { beta: p }
                if !p.is_finite() =>
            {
                Err(Error::NonFinite("activation parameter".into()))
            }
            _ => Ok(()),
        }
    }
}

pub fn reference_eval(reference: ReferenceActivation, x: f64) -> f64 {
    reference.eval(x)
}

impl fmt::Display for ReferenceActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReferenceActivation::LeakyRelu { slope } => write!(f, "lrelu:{slope}"),
            ReferenceActivation::Relu => f.write_str("relu"),
            ReferenceActivation::Tanh => f.write_str("tanh"),
            ReferenceActivation::Sigmoid => f.write_str("sigmoid"),
            ReferenceActivation::Silu => f.write_str("silu"),
            ReferenceActivation::Dsilu => f.write_str("dsilu"),
            ReferenceActivation::Swish { beta } => write!(f, "swish:{beta}"),
            ReferenceActivation::Identity => f.write_str("identity"),
        }
    }
}

/// Parses `lrelu`, `lrelu:0.2`, `relu`, `tanh`, `sigmoid`, `silu`, `dsilu`,
/// `swish`, `swish:1.5` or `identity`.
impl FromStr for ReferenceActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => {
                let v: f64 = p
                    .parse()
                    .map_err(|_| Error::Config(format!("bad activation parameter in {s:?}")))?;
                (n, Some(v))
            }
            None => (s, None),
        };
        let parsed = match (name.to_ascii_lowercase().as_str(), param) {
            ("lrelu" | "leaky_relu", p) => ReferenceActivation::LeakyRelu {
                slope: p.unwrap_or(DEFAULT_LRELU_SLOPE),
            },
            ("swish", p) => ReferenceActivation::Swish {
                beta: p.unwrap_or(1.0),
            },
            ("relu", None) => ReferenceActivation::Relu,
            ("tanh", None) => ReferenceActivation::Tanh,
            ("sigmoid", None) => ReferenceActivation::Sigmoid,
            ("silu", None) => ReferenceActivation::Silu,
            ("dsilu", None) => ReferenceActivation::Dsilu,
            ("identity", None) => ReferenceActivation::Identity,
            _ => return Err(Error::Config(format!("unknown activation {s:?}"))),
        };
        parsed.validate()?;
        Ok(parsed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub interval: (f64, f64),
    pub n_points: usize,
    pub max_iters: usize,
    /// Stop once the max-norm of the (scaled) gradient falls below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            interval: (-3.0, 3.0),
            n_points: 1000,
            max_iters: 20_000,
            tolerance: 1e-12,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub final_mse: f64,
    pub iterations: usize,
    pub converged: bool,
}

const INIT_NOISE: f64 = 1e-2;
const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Fits a safe rational of degrees `(m, n)` to a closed-form target by
/// minimizing the mean squared error on a uniform grid.
pub fn fit(
    m: usize,
    n: usize,
    reference: ReferenceActivation,
    cfg: &FitConfig,
) -> Result<(RationalFunction, FitReport)> {
    reference.validate()?;
    fit_target(m, n, |x| reference.eval(x), cfg)
}

/// Safe `(5, 4)` rational fitted to the default leaky ReLU on the default
/// interval. Computed once per process; later calls return a clone.
pub fn lrelu_init() -> Result<RationalFunction> {
    static CACHE: OnceLock<RationalFunction> = OnceLock::new();
    if let Some(rf) = CACHE.get() {
        return Ok(rf.clone());
    }
    let (rf, _) = fit(5, 4, ReferenceActivation::lrelu(), &FitConfig::default())?;
    Ok(CACHE.get_or_init(|| rf).clone())
}

/// Same as [`fit`] for an arbitrary target function.
///
/// The search runs in the rescaled variable `t = x / s`, `s = max(|lo|, |hi|)`,
/// which keeps the monomial features on `[-1, 1]`; coefficients are mapped
/// back (`a_j = ã_j / s^j`) at the end. Steps are Barzilai-Borwein trial
/// lengths followed by Armijo backtracking, so accepted losses never increase.
///
/// Descent starts from the identity plus seeded noise. Because `|s(x)|` in the
/// safe denominator creates sign-symmetric basins, a second descent starts from
/// a linearized least-squares solution (see [`linearized_start`]); the better
/// of the two is returned.
pub fn fit_target<F: Fn(f64) -> f64>(
    m: usize,
    n: usize,
    target: F,
    cfg: &FitConfig,
) -> Result<(RationalFunction, FitReport)> {
    let (lo, hi) = cfg.interval;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Config(format!("fit interval [{lo}, {hi}]")));
    }
    if cfg.n_points < m + n + 1 || cfg.n_points < 2 {
        return Err(Error::Config(format!(
            "n_points = {} is below m + n + 1 = {}",
            cfg.n_points,
            m + n + 1
        )));
    }
    if !(cfg.tolerance >= 0.0) {
        return Err(Error::Config("tolerance must be non-negative".into()));
    }

    let scale = lo.abs().max(hi.abs());
    let xs = linspace(lo, hi, cfg.n_points);
    let ts: Vec<f64> = xs.iter().map(|x| x / scale).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| target(x)).collect();
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::NonFiniteLoss("target is not finite on the fit grid".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut numerator = vec![0.0; m + 1];
    if m >= 1 {
        numerator[1] = 1.0;
    }
    let mut denominator = vec![0.0; n];
    for c in numerator.iter_mut().chain(denominator.iter_mut()) {
        *c += rng.random_range(-INIT_NOISE..=INIT_NOISE);
    }

    // Scaled coefficients: ã_j = a_j s^j, b̃_k = b_k s^k (k starts at 1).
    let identity_start: Vec<f64> = numerator
        .iter()
        .enumerate()
        .map(|(j, a)| a * scale.powi(j as i32))
        .chain(
            denominator
                .iter()
                .enumerate()
                .map(|(k, b)| b * scale.powi(k as i32 + 1)),
        )
        .collect();

    let mut work = RationalFunction::safe(vec![0.0; m + 1], vec![0.0; n])?;
    let mut best = descend(&mut work, identity_start, &ts, &ys, cfg)?;
    if n > 0 {
        if let Some(start) = linearized_start(&mut work, m, n, &ts, &ys)? {
            let alt = descend(&mut work, start, &ts, &ys, cfg)?;
            if alt.loss < best.loss {
                best = alt;
            }
        }
    }

    let theta = &best.theta;
    let numerator = (0..=m).map(|j| theta[j] / scale.powi(j as i32)).collect();
    let denominator = (0..n)
        .map(|k| theta[m + 1 + k] / scale.powi(k as i32 + 1))
        .collect();
    let rf = RationalFunction::new(Variant::Safe, numerator, denominator)?;
    // Report the error of the returned (unscaled) coefficients on the original grid.
    let final_mse = mse(&rf, &xs, &ys)?;
    Ok((
        rf,
        FitReport {
            final_mse,
            iterations: best.iterations,
            converged: best.converged,
        },
    ))
}

struct Descent {
    theta: Vec<f64>,
    loss: f64,
    iterations: usize,
    converged: bool,
}

fn descend(
    work: &mut RationalFunction,
    mut theta: Vec<f64>,
    ts: &[f64],
    ys: &[f64],
    cfg: &FitConfig,
) -> Result<Descent> {
    let mut grad = vec![0.0; theta.len()];
    let mut loss = loss_and_grad(work, &theta, ts, ys, &mut grad)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!("initial loss {loss}")));
    }

    let mut trial = vec![0.0; theta.len()];
    let mut trial_grad = vec![0.0; theta.len()];
    let mut step = 1.0 / norm(&grad).max(1e-12);
    let mut iterations = 0;
    let mut converged = max_abs(&grad) <= cfg.tolerance;

    while !converged && iterations < cfg.max_iters {
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        let mut accepted = None;
        let mut alpha = step;
        for _ in 0..MAX_BACKTRACKS {
            for ((t, th), g) in trial.iter_mut().zip(&theta).zip(&grad) {
                *t = th - alpha * g;
            }
            let trial_loss = loss_and_grad(work, &trial, ts, ys, &mut trial_grad)?;
            if trial_loss.is_finite() && trial_loss <= loss - ARMIJO_C * alpha * g2 {
                accepted = Some(trial_loss);
                break;
            }
            alpha *= 0.5;
        }
        let Some(new_loss) = accepted else {
            break;
        };
        iterations += 1;

        // Barzilai-Borwein length for the next trial: s's / s'y.
        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..theta.len() {
            let s = trial[i] - theta[i];
            let y = trial_grad[i] - grad[i];
            ss += s * s;
            sy += s * y;
        }
        step = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { alpha * 2.0 };

        std::mem::swap(&mut theta, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        loss = new_loss;
        converged = max_abs(&grad) <= cfg.tolerance;
    }
    Ok(Descent {
        theta,
        loss,
        iterations,
        converged,
    })
}

const SIGN_SWEEPS: usize = 20;

/// Linear least-squares start for the safe form.
///
/// For a fixed sign pattern `σ_i = sign(s(t_i))`, `y_i (1 + σ_i s(t_i)) = P(t_i)`
/// is linear in all coefficients. Starting from a few patterns (`±sign(t)`,
/// `±1`), the system is solved and the pattern re-read from the solution until
/// it stops changing. Returns the candidate with the lowest true loss.
fn linearized_start(
    work: &mut RationalFunction,
    m: usize,
    n: usize,
    ts: &[f64],
    ys: &[f64],
) -> Result<Option<Vec<f64>>> {
    let patterns: [fn(f64) -> f64; 4] = [
        |t| if t < 0.0 { -1.0 } else { 1.0 },
        |t| if t < 0.0 { 1.0 } else { -1.0 },
        |_| 1.0,
        |_| -1.0,
    ];
    let mut grad = vec![0.0; m + 1 + n];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for pattern in patterns {
        let mut signs: Vec<f64> = ts.iter().map(|&t| pattern(t)).collect();
        for _ in 0..SIGN_SWEEPS {
            let Some(theta) = solve_linearized(m, n, ts, ys, &signs) else {
                break;
            };
            let loss = loss_and_grad(work, &theta, ts, ys, &mut grad)?;
            if loss.is_finite() && best.as_ref().is_none_or(|(b, _)| loss < *b) {
                best = Some((loss, theta.clone()));
            }
            let mut changed = false;
            for (sign, &t) in signs.iter_mut().zip(ts) {
                let s = t * crate::rational::horner(&theta[m + 1..], t);
                let new = if s > 0.0 {
                    1.0
                } else if s < 0.0 {
                    -1.0
                } else {
                    *sign
                };
                changed |= new != *sign;
                *sign = new;
            }
            if !changed {
                break;
            }
        }
    }
    Ok(best.map(|(_, theta)| theta))
}

fn solve_linearized(m: usize, n: usize, ts: &[f64], ys: &[f64], signs: &[f64]) -> Option<Vec<f64>> {
    let rows = ts.len();
    let cols = m + 1 + n;
    let design = DMatrix::from_fn(rows, cols, |i, j| {
        let t = ts[i];
        if j <= m {
            t.powi(j as i32)
        } else {
            -ys[i] * signs[i] * t.powi((j - m) as i32)
        }
    });
    let rhs = DVector::from_column_slice(ys);
    let svd = design.svd(true, true);
    let sol = svd.solve(&rhs, 1e-12).ok()?;
    let theta: Vec<f64> = sol.iter().copied().collect();
    theta.iter().all(|v| v.is_finite()).then_some(theta)
}

/// Mean squared error of `rf` against samples `(xs, ys)`.
pub fn mse(rf: &RationalFunction, xs: &[f64], ys: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let r = rf.eval(x)? - y;
        total += r * r;
    }
    Ok(total / xs.len() as f64)
}

fn loss_and_grad(
    work: &mut RationalFunction,
    theta: &[f64],
    ts: &[f64],
    ys: &[f64],
    grad: &mut [f64],
) -> Result<f64> {
    if theta.iter().any(|v| !v.is_finite()) {
        return Ok(f64::INFINITY);
    }
    work.set_params(theta)?;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let split = work.numerator().len();
    let (gn, gd) = grad.split_at_mut(split);
    let inv_n = 1.0 / ts.len() as f64;
    let mut total = 0.0;
    for (&t, &y) in ts.iter().zip(ys) {
        let value = work.eval(t)?;
        let r = value - y;
        total += r * r;
        work.accumulate_coeff_grads(t, 2.0 * r * inv_n, gn, gd)?;
    }
    Ok(total * inv_n)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(ReferenceActivation::Silu.eval(0.0), 0.0);
        assert_eq!(ReferenceActivation::Dsilu.eval(0.0), 0.5);
        let l = ReferenceActivation::LeakyRelu { slope: 0.01 };
        assert!((l.eval(-3.0) + 0.03).abs() < 1e-15);
        assert_eq!(ReferenceActivation::Swish { beta: 1.0 }.eval(1.3), ReferenceActivation::Silu.eval(1.3));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let refs = [
            ReferenceActivation::lrelu(),
            ReferenceActivation::Relu,
            ReferenceActivation::Tanh,
            ReferenceActivation::Sigmoid,
            ReferenceActivation::Silu,
            ReferenceActivation::Dsilu,
            ReferenceActivation::Swish { beta: 1.7 },
            ReferenceActivation::Identity,
        ];
        let h = 1e-6;
        for r in refs {
            for x in [-2.3, -0.7, 0.4, 1.9] {
                let fd = (r.eval(x + h) - r.eval(x - h)) / (2.0 * h);
                assert!((fd - r.derivative(x)).abs() < 1e-7, "{r} at {x}");
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("lrelu".parse::<ReferenceActivation>().unwrap(), ReferenceActivation::lrelu());
        assert_eq!(
            "swish:2".parse::<ReferenceActivation>().unwrap(),
            ReferenceActivation::Swish { beta: 2.0 }
        );
        assert!("gelu".parse::<ReferenceActivation>().is_err());
        assert!("tanh:3".parse::<ReferenceActivation>().is_err());
        for r in [ReferenceActivation::lrelu(), ReferenceActivation::Dsilu, ReferenceActivation::Swish { beta: 0.5 }] {
            assert_eq!(r.to_string().parse::<ReferenceActivation>().unwrap(), r);
        }
    }

    #[test]
    fn json_tagging() {
        let s = serde_json::to_string(&ReferenceActivation::lrelu()).unwrap();
        assert_eq!(s, r#"{"name":"lrelu","slope":0.01}"#);
        let back: ReferenceActivation = serde_json::from_str(r#"{"name":"silu"}"#).unwrap();
        assert_eq!(back, ReferenceActivation::Silu);
    }

    #[test]
    fn fits_exact_affine() {
        let cfg = FitConfig::default();
        let (rf, report) = fit_target(1, 0, |x| 2.0 * x + 1.0, &cfg).unwrap();
        assert!(report.final_mse <= 1e-10, "{report:?}");
        assert!((rf.numerator()[0] - 1.0).abs() < 1e-5);
        assert!((rf.numerator()[1] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn fits_constant() {
        let (rf, report) = fit_target(0, 0, |_| 5.0, &FitConfig::default()).unwrap();
        assert!((rf.numerator()[0] - 5.0).abs() < 1e-6, "{rf:?} {report:?}");
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = FitConfig {
            n_points: 5,
            ..FitConfig::default()
        };
        assert!(fit(5, 4, ReferenceActivation::lrelu(), &cfg).is_err());
        let cfg = FitConfig {
            interval: (1.0, -1.0),
            ..FitConfig::default()
        };
        assert!(fit(1, 0, ReferenceActivation::Identity, &cfg).is_err());
    }

    #[test]
    fn fit_is_deterministic() {
        let cfg = FitConfig {
            max_iters: 300,
            ..FitConfig::default()
        };
        let (a, ra) = fit(3, 2, ReferenceActivation::Tanh, &cfg).unwrap();
        let (b, rb) = fit(3, 2, ReferenceActivation::Tanh, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(ra, rb);
    }
}
