#![allow(dead_code)]

use num::{BigRational, Signed, ToPrimitive, Zero};

pub fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

/// Exact polynomial value for exact `x`.
pub fn poly_exact(c: &[f64], x: &BigRational) -> BigRational {
    let mut acc = BigRational::zero();
    for a in c.iter().rev() {
        acc = acc * x + exact(*a);
    }
    acc
}

pub fn to_f64(v: &BigRational) -> f64 {
    v.to_f64().expect("representable")
}

pub fn abs_f64(v: &BigRational) -> f64 {
    to_f64(&v.abs())
}

/// Central difference of `f` at `x`.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
