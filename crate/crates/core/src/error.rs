use thiserror::Error;

/// Errors produced by the rational-nets library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid degree: {0}")]
    InvalidDegree(String),

    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),

    #[error("denominator vanishes at x = {x}")]
    Pole { x: f64 },

    #[error("denominator vanishes at index {index} (x = {x})")]
    PoleAt { index: usize, x: f64 },

    #[error("operation requires the {expected} variant")]
    VariantMismatch { expected: &'static str },

    #[error("denominator sign changes on [{lo}, {hi}]; no equivalent raw form")]
    SignChange { lo: f64, hi: f64 },

    #[error("constant denominator term is zero; cannot normalize")]
    NotNormalizable,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("histogram is empty")]
    EmptyHistogram,

    #[error("density integrates to {0} over the domain, expected 1")]
    UnnormalizedDensity(f64),

    #[error("undefined normalization: {0}")]
    UndefinedNormalization(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid action id {0}")]
    InvalidAction(usize),

    #[error("forward cache does not match the current network parameters")]
    StaleCache,

    #[error("non-finite gradient at {path}")]
    NonFiniteGradient { path: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
