//! Learnable rational activation functions and the tooling around them.

pub mod algebra;
pub mod datasets;
pub mod distance;
pub mod error;
pub mod fitting;
pub mod histogram;
pub mod matrix;
pub mod nelder_mead;
pub mod nn;
pub mod quadrature;
pub mod rational;
pub mod rl;

pub use error::{Error, Result};
pub use histogram::{Density, Histogram};
pub use rational::{init_identity, RationalFunction, Variant};
pub use matrix::Matrix;
pub use nn::{ActivationSlot, NetworkSpec, SlotFunction};
