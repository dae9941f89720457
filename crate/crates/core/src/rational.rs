//! Rational activation functions `R(x) = P(x) / Q(x)`.
//!
//! Two denominator forms are supported:
//!
//! * [`Variant::Raw`]: `Q(x) = b_0 + b_1 x + ... + b_n x^n`, unconstrained. This is the
//!   form the closure algebra in [`crate::algebra`] works on.
//! * [`Variant::Safe`]: `Q(x) = 1 + |b_1 x + ... + b_n x^n|`, so `Q >= 1` and the function
//!   has no real poles. Only `b_1..b_n` are stored.
//!
//! Gradients of the safe form use subgradient 0 where the inner sum is exactly zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::Histogram;

/// Default numerator degree for activations.
pub const DEFAULT_NUMERATOR_DEGREE: usize = 5;
/// Default denominator degree for activations.
pub const DEFAULT_DENOMINATOR_DEGREE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Raw,
    Safe,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::Raw => "raw",
            Variant::Safe => "safe",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RationalRepr", into = "RationalRepr")]
pub struct RationalFunction {
    variant: Variant,
    numerator: Vec<f64>,
    denominator: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RationalRepr {
    variant: Variant,
    numerator: Vec<f64>,
    denominator: Vec<f64>,
}

impl TryFrom<RationalRepr> for RationalFunction {
    type Error = Error;

    fn try_from(r: RationalRepr) -> Result<Self> {
        RationalFunction::new(r.variant, r.numerator, r.denominator)
    }
}

impl From<RationalFunction> for RationalRepr {
    fn from(rf: RationalFunction) -> Self {
        RationalRepr {
            variant: rf.variant,
            numerator: rf.numerator,
            denominator: rf.denominator,
        }
    }
}

/// Gradient of `R(x)` with respect to the stored coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffGrad {
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
}

/// P, P', Q, Q' and the sign of the inner denominator sum at one point.
#[derive(Clone, Copy, Debug)]
struct Pieces {
    p: f64,
    dp: f64,
    q: f64,
    dq: f64,
    /// Raw: 1. Safe: sign of `sum_{k>=1} b_k x^k`, 0 at the kink.
    den_sign: f64,
}

/// Evaluates `sum c_j x^j` and its derivative by Horner's scheme.
fn horner_with_derivative(coeffs: &[f64], x: f64) -> (f64, f64) {
    let mut value = 0.0;
    let mut deriv = 0.0;
    for &c in coeffs.iter().rev() {
        deriv = deriv * x + value;
        value = value * x + c;
    }
    (value, deriv)
}

pub(crate) fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn sign_or_zero(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Identity-initialized safe rational of degrees `(m, n)`.
pub fn init_identity(m: usize, n: usize) -> Result<RationalFunction> {
    RationalFunction::identity(m, n, Variant::Safe)
}

impl RationalFunction {
    pub fn new(variant: Variant, numerator: Vec<f64>, denominator: Vec<f64>) -> Result<Self> {
        if numerator.is_empty() {
            return Err(Error::InvalidCoefficients("numerator needs at least a_0".into()));
        }
        if variant == Variant::Raw && denominator.is_empty() {
            return Err(Error::InvalidCoefficients("raw denominator needs at least b_0".into()));
        }
        if numerator.iter().chain(&denominator).any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("rational coefficients".into()));
        }
        Ok(Self {
            variant,
            numerator,
            denominator,
        })
    }

    pub fn raw(numerator: Vec<f64>, denominator: Vec<f64>) -> Result<Self> {
        Self::new(Variant::Raw, numerator, denominator)
    }

    pub fn safe(numerator: Vec<f64>, denominator: Vec<f64>) -> Result<Self> {
        Self::new(Variant::Safe, numerator, denominator)
    }

    /// The function `x` with numerator degree `m` and denominator degree `n`.
    pub fn identity(m: usize, n: usize, variant: Variant) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidDegree(
                "numerator degree must be at least 1 to represent x".into(),
            ));
        }
        let mut numerator = vec![0.0; m + 1];
        numerator[1] = 1.0;
        let denominator = match variant {
            Variant::Safe => vec![0.0; n],
            Variant::Raw => {
                let mut d = vec![0.0; n + 1];
                d[0] = 1.0;
                d
            }
        };
        Self::new(variant, numerator, denominator)
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn numerator(&self) -> &[f64] {
        &self.numerator
    }

    /// Stored denominator coefficients: `b_0..b_n` (raw) or `b_1..b_n` (safe).
    pub fn denominator(&self) -> &[f64] {
        &self.denominator
    }

    /// Numerator degree `m`.
    pub fn m(&self) -> usize {
        self.numerator.len() - 1
    }

    /// Denominator degree `n`.
    pub fn n(&self) -> usize {
        match self.variant {
            Variant::Raw => self.denominator.len() - 1,
            Variant::Safe => self.denominator.len(),
        }
    }

    /// Number of trainable coefficients.
    pub fn num_params(&self) -> usize {
        self.numerator.len() + self.denominator.len()
    }

    /// Coefficients flattened as numerator followed by stored denominator.
    pub fn params(&self) -> Vec<f64> {
        self.numerator.iter().chain(&self.denominator).copied().collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} rational parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("rational coefficients".into()));
        }
        let (num, den) = params.split_at(self.numerator.len());
        self.numerator.copy_from_slice(num);
        self.denominator.copy_from_slice(den);
        Ok(())
    }

    fn pieces(&self, x: f64) -> Result<Pieces> {
        let (p, dp) = horner_with_derivative(&self.numerator, x);
        match self.variant {
            Variant::Raw => {
                let (q, dq) = horner_with_derivative(&self.denominator, x);
                if q == 0.0 {
                    return Err(Error::Pole { x });
                }
                Ok(Pieces {
                    p,
                    dp,
                    q,
                    dq,
                    den_sign: 1.0,
                })
            }
            Variant::Safe => {
                // s(x) = x * (b_1 + b_2 x + ...), s'(x) = (b_1 + ...) + x * (...)'
                let (inner, dinner) = horner_with_derivative(&self.denominator, x);
                let s = x * inner;
                let ds = inner + x * dinner;
                let sign = sign_or_zero(s);
                Ok(Pieces {
                    p,
                    dp,
                    q: 1.0 + s.abs(),
                    dq: sign * ds,
                    den_sign: sign,
                })
            }
        }
    }

    /// Evaluates `R(x)`. Only the raw variant can fail, at a root of `Q`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let pc = self.pieces(x)?;
        Ok(pc.p / pc.q)
    }

    /// Value of the denominator `Q(x)` in this variant's form.
    pub fn denominator_at(&self, x: f64) -> f64 {
        match self.variant {
            Variant::Raw => horner(&self.denominator, x),
            Variant::Safe => 1.0 + (x * horner(&self.denominator, x)).abs(),
        }
    }

    /// `dR/dx` by the quotient rule.
    pub fn grad_input(&self, x: f64) -> Result<f64> {
        let pc = self.pieces(x)?;
        Ok((pc.dp * pc.q - pc.p * pc.dq) / (pc.q * pc.q))
    }

    /// Gradient of `R(x)` with respect to every stored coefficient.
    pub fn grad_coeffs(&self, x: f64) -> Result<CoeffGrad> {
        let mut numerator = vec![0.0; self.numerator.len()];
        let mut denominator = vec![0.0; self.denominator.len()];
        self.accumulate_coeff_grads(x, 1.0, &mut numerator, &mut denominator)?;
        Ok(CoeffGrad {
            numerator,
            denominator,
        })
    }

    /// Evaluates `R(x)`, `dR/dx`, and adds `upstream * dR/dθ` into the given buffers.
    pub(crate) fn accumulate_coeff_grads(
        &self,
        x: f64,
        upstream: f64,
        numerator: &mut [f64],
        denominator: &mut [f64],
    ) -> Result<(f64, f64)> {
        let pc = self.pieces(x)?;
        let inv_q = 1.0 / pc.q;
        let value = pc.p * inv_q;

        let mut xp = 1.0;
        for g in numerator.iter_mut() {
            *g += upstream * xp * inv_q;
            xp *= x;
        }

        let den_scale = -upstream * value * inv_q * pc.den_sign;
        // Raw stores b_0.. (first power 0); safe stores b_1.. (first power 1).
        let mut xp = match self.variant {
            Variant::Raw => 1.0,
            Variant::Safe => x,
        };
        for g in denominator.iter_mut() {
            *g += den_scale * xp;
            xp *= x;
        }

        let dx = (pc.dp * pc.q - pc.p * pc.dq) * inv_q * inv_q;
        Ok((value, dx))
    }

    /// Elementwise evaluation. When a tracker is given, every input is recorded
    /// before it is evaluated.
    pub fn eval_batch(&self, xs: &[f64], mut tracker: Option<&mut Histogram>) -> Result<Vec<f64>> {
        xs.iter()
            .enumerate()
            .map(|(index, &x)| {
                if let Some(h) = tracker.as_deref_mut() {
                    h.observe(x);
                }
                self.eval(x).map_err(|e| match e {
                    Error::Pole { x } => Error::PoleAt { index, x },
                    other => other,
                })
            })
            .collect()
    }

    /// Converts a safe rational to the equivalent raw form on `[lo, hi]`.
    ///
    /// Succeeds only if `sum_{k>=1} b_k x^k` keeps one sign on the interval
    /// (checked on a dense grid plus the endpoints); then `|s| = ±s` there.
    pub fn to_raw_on(&self, lo: f64, hi: f64) -> Result<Self> {
        match self.variant {
            Variant::Raw => return Ok(self.clone()),
            Variant::Safe => {}
        }
        let samples = 4097;
        let mut saw_pos = false;
        let mut saw_neg = false;
        for x in crate::quadrature::linspace(lo, hi, samples) {
            let s = x * horner(&self.denominator, x);
            saw_pos |= s > 0.0;
            saw_neg |= s < 0.0;
        }
        if saw_pos && saw_neg {
            return Err(Error::SignChange { lo, hi });
        }
        let sign = if saw_neg { -1.0 } else { 1.0 };
        let mut den = Vec::with_capacity(self.denominator.len() + 1);
        den.push(1.0);
        den.extend(self.denominator.iter().map(|b| sign * b));
        Self::raw(self.numerator.clone(), den)
    }

    pub(crate) fn require(&self, variant: Variant) -> Result<()> {
        if self.variant == variant {
            Ok(())
        } else {
            Err(Error::VariantMismatch {
                expected: variant.name(),
            })
        }
    }
}
