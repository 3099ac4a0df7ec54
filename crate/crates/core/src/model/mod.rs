//! Numerical engines behind the propensity models: plain logistic
//! regression and the random-intercept logistic mixed model.

pub mod glmm;
pub mod logistic;

use thiserror::Error;

pub use glmm::{fit_random_intercept_logistic, RandomInterceptFit};
pub use logistic::{fit_logistic, LogisticFit};

/// Fitted probabilities are kept inside `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("design matrix is rank deficient")]
    RankDeficientDesign,
    #[error("response is all zeros or all ones")]
    DegenerateResponse,
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
