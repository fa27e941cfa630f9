//! Regression engines shared by the construction methods and the estimation
//! pipeline: ordinary least squares, logistic regression via iteratively
//! reweighted least squares, and Laplace-approximated logistic mixed models
//! with a random intercept or random intercept + slope.
//!
//! Everything here is pure and RNG-free; callers may run fits in parallel.

pub(crate) mod chol;
pub mod glmm;
pub mod logistic;
pub mod ols;

pub use glmm::{fit_glmm_logistic, GlmmFit, GlmmModel, GlmmOptions, RandomEffects};
pub use logistic::{fit_logistic, LogisticFit, LogisticOptions};
pub use ols::{fit_ols, partial_f, OlsFit};

/// Inverse logit, evaluated without overflow on either tail.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log odds. Stable via `ln_1p` on the upper tail.
///
/// The round trip `logit(expit(x))` is exact to ~1e-13 while |x| is small,
/// but the conditioning of recovering x from a stored probability grows like
/// e^|x|·eps: beyond |x| ≈ 8.5 a double simply cannot hold enough of the
/// saturated tail. Callers comparing on the probability scale should compare
/// the linear predictors instead (the link is monotone).
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// ln(1 + e^x) without overflow or cancellation (Mächler's cutoffs).
pub(crate) fn log1pexp(x: f64) -> f64 {
    if x <= -37.0 {
        x.exp()
    } else if x <= 18.0 {
        x.exp().ln_1p()
    } else if x <= 33.3 {
        x + (-x).exp()
    } else {
        x
    }
}

/// Standard even/odd sample median. Sorts its scratch argument.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
