//! Concrete model implementations.

mod bimodal;
mod conjugate;
mod egarch;

pub use bimodal::BimodalLocation;
pub use conjugate::{ConjugateNormal, ConjugateOracle};
pub use egarch::{Egarch, EgarchParams, EgarchState};

/// Standard normal log density.
pub(crate) fn log_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln() - 0.5 * z * z
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}
