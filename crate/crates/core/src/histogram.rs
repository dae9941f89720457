//! Fixed-bin histograms of activation inputs and the piecewise-constant
//! densities derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

pub const DEFAULT_BINS: usize = 64;
pub const DEFAULT_LO: f64 = -5.0;
pub const DEFAULT_HI: f64 = 5.0;

/// Streaming histogram over `[lo, hi)` with a fixed number of equal-width bins.
///
/// Observations outside the range are counted in `underflow` / `overflow`;
/// `x == hi` lands in the last bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Histogram {
    lo: f64,
    hi: f64,
    counts: Vec<u64>,
    underflow: u64,
    overflow: u64,
}

impl Default for Histogram {
    fn default() -> Self {
        Self::new(DEFAULT_LO, DEFAULT_HI, DEFAULT_BINS).expect("default bounds are valid")
    }
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bin_count: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::Config(format!("histogram bounds [{lo}, {hi}]")));
        }
        if bin_count == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        Ok(Self {
            lo,
            hi,
            counts: vec![0; bin_count],
            underflow: 0,
            overflow: 0,
        })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn underflow(&self) -> u64 {
        self.underflow
    }

    pub fn overflow(&self) -> u64 {
        self.overflow
    }

    /// Number of observations, including out-of-range ones.
    pub fn total(&self) -> u64 {
        self.in_range() + self.underflow + self.overflow
    }

    pub fn in_range(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn bin_of(&self, x: f64) -> Option<usize> {
        if x < self.lo || x > self.hi || x.is_nan() {
            return None;
        }
        let idx = ((x - self.lo) / self.bin_width()) as usize;
        Some(idx.min(self.counts.len() - 1))
    }

    pub fn observe(&mut self, x: f64) {
        match self.bin_of(x) {
            Some(i) => self.counts[i] += 1,
            None if x < self.lo => self.underflow += 1,
            // NaN is counted as overflow so that total() still matches the number of calls.
            None => self.overflow += 1,
        }
    }

    pub fn observe_all(&mut self, xs: &[f64]) {
        for &x in xs {
            self.observe(x);
        }
    }

    pub fn clear(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.underflow = 0;
        self.overflow = 0;
    }

    fn same_binning(&self, other: &Histogram) -> bool {
        self.lo == other.lo && self.hi == other.hi && self.counts.len() == other.counts.len()
    }

    /// Adds another histogram's counts into this one. Both must share bounds and bin count.
    pub fn merge(&mut self, other: &Histogram) -> Result<()> {
        if !self.same_binning(other) {
            return Err(Error::Shape("histograms have different binning".into()));
        }
        for (c, o) in self.counts.iter_mut().zip(&other.counts) {
            *c += o;
        }
        self.underflow += other.underflow;
        self.overflow += other.overflow;
        Ok(())
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        let w = self.bin_width();
        (0..self.counts.len())
            .map(|i| self.lo + (i as f64 + 0.5) * w)
            .collect()
    }

    /// Piecewise-constant density of the in-range observations (integrates to 1 over `[lo, hi]`).
    pub fn density(&self) -> Result<Density> {
        let n = self.in_range();
        if n == 0 {
            return Err(Error::EmptyHistogram);
        }
        let scale = 1.0 / (n as f64 * self.bin_width());
        Ok(Density {
            lo: self.lo,
            hi: self.hi,
            values: self.counts.iter().map(|&c| c as f64 * scale).collect(),
        })
    }
}

/// Piecewise-constant density on `[lo, hi]`, zero outside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Density {
    lo: f64,
    hi: f64,
    values: Vec<f64>,
}

impl Density {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("density bounds [{lo}, {hi}]")));
        }
        Ok(Self {
            lo,
            hi,
            values: vec![1.0 / (hi - lo)],
        })
    }

    /// Builds a density from per-bin values on equal-width bins over `[lo, hi]`.
    pub fn from_bins(lo: f64, hi: f64, values: Vec<f64>) -> Result<Self> {
        if !(lo < hi) || values.is_empty() {
            return Err(Error::Config("density needs lo < hi and at least one bin".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite("density values must be finite and non-negative".into()));
        }
        Ok(Self { lo, hi, values })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn at(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        let w = (self.hi - self.lo) / self.values.len() as f64;
        let idx = (((x - self.lo) / w) as usize).min(self.values.len() - 1);
        self.values[idx]
    }

    /// Trapezoidal integral of the density over `[lo, hi]` with `nodes` points.
    pub fn mass_on(&self, lo: f64, hi: f64, nodes: usize) -> f64 {
        let xs = quadrature::linspace(lo, hi, nodes);
        let ys: Vec<f64> = xs.iter().map(|&x| self.at(x)).collect();
        quadrature::trapezoid(&ys, quadrature::step(lo, hi, nodes))
    }

    /// Rescales the density so that the trapezoidal rule on `nodes` points
    /// over `[lo, hi]` integrates it to exactly one.
    pub fn normalized_on(&self, lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        let mass = self.mass_on(lo, hi, nodes);
        if !(mass > 0.0) {
            return Err(Error::EmptyHistogram);
        }
        Ok(Self {
            lo: self.lo,
            hi: self.hi,
            values: self.values.iter().map(|v| v / mass).collect(),
        })
    }
}
