//! Exact polynomial arithmetic and closed-form rewrites of raw rationals:
//! absorbing a residual connection and composing two rationals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{horner, RationalFunction, Variant};

/// Dense real polynomial with coefficients in ascending degree order.
///
/// Trailing zeros are allowed; [`Polynomial::trimmed`] removes exact zeros only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: vec![0.0] }
    }

    pub fn one() -> Self {
        Self { coeffs: vec![1.0] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Degree of the canonical (trimmed) form; the zero polynomial has degree 0.
    pub fn degree(&self) -> usize {
        self.coeffs
            .iter()
            .rposition(|&c| c != 0.0)
            .unwrap_or(0)
    }

    /// Drops exactly-zero leading coefficients, keeping at least one entry.
    pub fn trimmed(mut self) -> Self {
        let len = self.degree() + 1;
        self.coeffs.truncate(len);
        if self.coeffs.is_empty() {
            self.coeffs.push(0.0);
        }
        self
    }

    pub fn eval(&self, x: f64) -> f64 {
        horner(&self.coeffs, x)
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let len = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..len)
            .map(|i| {
                self.coeffs.get(i).copied().unwrap_or(0.0) + other.coeffs.get(i).copied().unwrap_or(0.0)
            })
            .collect();
        Polynomial { coeffs }
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        Polynomial {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            return Polynomial::zero();
        }
        let mut coeffs = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Polynomial { coeffs }
    }

    /// `self(other(x))`, evaluated by Horner's scheme in the polynomial ring.
    pub fn compose(&self, other: &Polynomial) -> Polynomial {
        let mut acc = Polynomial::zero();
        for &c in self.coeffs.iter().rev() {
            acc = acc.mul(other).add(&Polynomial::new(vec![c]));
        }
        acc
    }

    /// `[p^0, p^1, ..., p^k]`.
    fn powers(&self, k: usize) -> Vec<Polynomial> {
        let mut out = Vec::with_capacity(k + 1);
        out.push(Polynomial::one());
        for i in 1..=k {
            let next = out[i - 1].mul(self);
            out.push(next);
        }
        out
    }
}

pub fn poly_add(p: &Polynomial, q: &Polynomial) -> Polynomial {
    p.add(q).trimmed()
}

pub fn poly_mul(p: &Polynomial, q: &Polynomial) -> Polynomial {
    p.mul(q).trimmed()
}

pub fn poly_compose(p: &Polynomial, q: &Polynomial) -> Polynomial {
    p.compose(q).trimmed()
}

/// Rewrites `R(x) + x` as a single rational with the same denominator.
///
/// With `R = P/Q`, `P` of degree `m` and `Q` of degree `n`, the new numerator is
/// `P(x) + x Q(x)` of degree `max(m, n + 1)`, i.e. `c_j = a_j + b_{j-1}`.
pub fn absorb_residual(rf: &RationalFunction) -> Result<RationalFunction> {
    rf.require(Variant::Raw)?;
    let a = rf.numerator();
    let b = rf.denominator();
    let degree = rf.m().max(rf.n() + 1);
    let numerator: Vec<f64> = (0..=degree)
        .map(|j| {
            let aj = a.get(j).copied().unwrap_or(0.0);
            let bj = if j == 0 { 0.0 } else { b.get(j - 1).copied().unwrap_or(0.0) };
            aj + bj
        })
        .collect();
    let numerator = Polynomial::new(numerator).trimmed().into_coeffs();
    RationalFunction::raw(numerator, b.to_vec())
}

/// The rational equal to `outer(inner(x))` off the poles of either factor.
///
/// With `outer = P1/Q1` and `inner = P2/Q2`, multiplying through by `Q2^D`,
/// `D = max(deg P1, deg Q1)`, gives
/// `sum a_j P2^j Q2^(D-j) / sum b_k P2^k Q2^(D-k)`.
pub fn compose(outer: &RationalFunction, inner: &RationalFunction) -> Result<RationalFunction> {
    outer.require(Variant::Raw)?;
    inner.require(Variant::Raw)?;
    let d = outer.m().max(outer.n());
    let p2 = Polynomial::new(inner.numerator().to_vec());
    let q2 = Polynomial::new(inner.denominator().to_vec());
    let p_pows = p2.powers(d);
    let q_pows = q2.powers(d);

    let combine = |coeffs: &[f64]| -> Polynomial {
        coeffs
            .iter()
            .enumerate()
            .fold(Polynomial::zero(), |acc, (j, &c)| {
                acc.add(&p_pows[j].mul(&q_pows[d - j]).scale(c))
            })
            .trimmed()
    };

    let numerator = combine(outer.numerator()).into_coeffs();
    let denominator = combine(outer.denominator()).into_coeffs();
    RationalFunction::raw(numerator, denominator)
}

/// Divides every coefficient by `b_0` so the constant denominator term is 1.
pub fn normalize(rf: &RationalFunction) -> Result<RationalFunction> {
    rf.require(Variant::Raw)?;
    let b0 = rf.denominator()[0];
    if b0 == 0.0 {
        return Err(Error::NotNormalizable);
    }
    RationalFunction::raw(
        rf.numerator().iter().map(|a| a / b0).collect(),
        rf.denominator().iter().map(|b| b / b0).collect(),
    )
}
