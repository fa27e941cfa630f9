use nalgebra::{DMatrix, DVector};

use super::chol::{chol_inverse, chol_solve, cholesky_named};
use crate::error::Error;

/// Ordinary least squares fit.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: DVector<f64>,
    /// σ̂²·(XᵀX)⁻¹ with σ̂² = rss/df_resid.
    pub coef_cov: DMatrix<f64>,
    pub rss: f64,
    pub df_resid: usize,
}

impl OlsFit {
    pub fn sigma2(&self) -> f64 {
        self.rss / self.df_resid as f64
    }

    /// Standard error of coefficient j.
    pub fn se(&self, j: usize) -> f64 {
        self.coef_cov[(j, j)].max(0.0).sqrt()
    }
}

/// Least-squares fit of `y` on the columns of `design` (include an intercept
/// column yourself if you want one). Solves the normal equations through a
/// column-naming Cholesky so rank trouble reports which column broke.
pub fn fit_ols(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit, Error> {
    let (n, k) = design.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "OLS response length vs design rows",
            expected: n,
            got: y.len(),
        });
    }
    if k == 0 || n <= k {
        return Err(Error::TooFewRows { rows: n, cols: k });
    }
    let gram = design.transpose() * design;
    let xty = design.transpose() * y;
    let l = cholesky_named(&gram).map_err(|column| Error::RankDeficient { column, names: None })?;
    let coef = chol_solve(&l, &xty);
    let resid = y - design * &coef;
    let rss = resid.norm_squared();
    let df_resid = n - k;
    let sigma2 = rss / df_resid as f64;
    let coef_cov = chol_inverse(&l) * sigma2;
    Ok(OlsFit {
        coef,
        coef_cov,
        rss,
        df_resid,
    })
}

/// Partial F statistic for the q columns dropped between a full and a nested
/// restricted first-stage model.
pub fn partial_f(full: &OlsFit, restricted: &OlsFit, q: usize) -> Result<f64, Error> {
    debug_assert!(q >= 1);
    let slack = 1e-8 * (1.0 + full.rss.abs());
    if restricted.rss < full.rss - slack {
        return Err(Error::NestingViolation {
            rss_restricted: restricted.rss,
            rss_full: full.rss,
        });
    }
    let num = (restricted.rss - full.rss).max(0.0) / q as f64;
    let den = full.rss / full.df_resid as f64;
    Ok(num / den)
}
