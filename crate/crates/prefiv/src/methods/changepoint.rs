//! Single change-point detection in a provider's treatment sequence and the
//! segmented cumulative-proportion instrument built on top of it.
//!
//! Detection compares a no-change logistic model of treatment on covariates
//! against change-time models that add an indicator 1(position > i) for each
//! screened candidate i. A provider is declared changed when the no-change
//! deviance exceeds the best change-time deviance by at least 4. Candidate
//! positions are screened by the difference in treatment proportions before
//! and after the split, |d| ≥ 0.2, over positions {3, …, n_j−3}.

use nalgebra::{DMatrix, DVector};

use super::{InstrumentSeries, Level, MethodId};
use crate::data::{PanelDataset, ProviderBlock};
use crate::error::Error;
use crate::numerics::{fit_logistic, LogisticFit, LogisticOptions};

/// Outcome of the change-point scan for one provider. Positions are 1-based
/// ranks within the analyzed block. `i_star` is the best screened candidate
/// whenever one was fit, even if the improvement fell short of the decision
/// threshold; `changed` alone decides segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeDecision {
    pub changed: bool,
    pub i_star: Option<u32>,
    pub deviance_no_change: f64,
    pub deviance_best_change: f64,
    pub screen_max_abs_d: f64,
}

/// Deviance improvement a change-time model must show over no-change.
const DECISION_MARGIN: f64 = 4.0;
/// Proportion-difference screen threshold.
const SCREEN_THRESHOLD: f64 = 0.2;

/// Fit tolerating separation and non-convergence: both still yield a usable
/// deviance, which is all the scan consumes.
fn tolerant_fit(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    init: Option<DVector<f64>>,
) -> Result<LogisticFit, Error> {
    let opts = LogisticOptions {
        init,
        ..LogisticOptions::default()
    };
    match fit_logistic(design, y, &opts) {
        Ok(f) => Ok(f),
        Err(Error::LogisticNotConverged { last, .. }) => Ok(*last),
        Err(e) => Err(e),
    }
}

/// Scan one provider for a preference change. `covariates` is the n_j × k
/// matrix of adjustment columns (no intercept; may have zero columns).
pub fn abrahamowicz_detect(
    block: &ProviderBlock,
    covariates: &DMatrix<f64>,
) -> Result<ChangeDecision, Error> {
    let n = block.records.len();
    if covariates.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "change-point covariate rows vs provider records",
            expected: n,
            got: covariates.nrows(),
        });
    }
    if n < 5 {
        return Err(Error::TooFewPatients { n, min: 5 });
    }
    let k = covariates.ncols();
    let y = DVector::from_iterator(n, block.records.iter().map(|r| r.x as f64));

    let mut base = DMatrix::<f64>::zeros(n, 1 + k);
    base.column_mut(0).fill(1.0);
    base.view_mut((0, 1), (n, k)).copy_from(covariates);
    let base_fit = tolerant_fit(&base, &y, None)?;
    let d0 = base_fit.deviance;

    // screen: d_i = proportion(positions ≤ i) − proportion(positions > i)
    let mut prefix = vec![0.0_f64; n + 1];
    for (i, r) in block.records.iter().enumerate() {
        prefix[i + 1] = prefix[i] + r.x as f64;
    }
    let total = prefix[n];
    let mut screen_max = 0.0_f64;
    let mut candidates = Vec::new();
    for i in 3..=n.saturating_sub(3) {
        let d = prefix[i] / i as f64 - (total - prefix[i]) / (n - i) as f64;
        screen_max = screen_max.max(d.abs());
        if d.abs() >= SCREEN_THRESHOLD {
            candidates.push(i);
        }
    }

    let mut best: Option<(usize, f64)> = None;
    if !candidates.is_empty() {
        let mut design = DMatrix::<f64>::zeros(n, 2 + k);
        design.view_mut((0, 0), (n, 1 + k)).copy_from(&base);
        let mut init = DVector::<f64>::zeros(2 + k);
        init.rows_mut(0, 1 + k).copy_from(&base_fit.coef);
        for &i in &candidates {
            for r in 0..n {
                design[(r, 1 + k)] = if r + 1 > i { 1.0 } else { 0.0 };
            }
            match tolerant_fit(&design, &y, Some(init.clone())) {
                // strict < keeps the earliest candidate on ties
                Ok(f) => {
                    if best.is_none_or(|(_, b)| f.deviance < b) {
                        best = Some((i, f.deviance));
                    }
                }
                // indicator collinear with covariates: candidate unusable
                Err(Error::RankDeficient { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
    }

    let (i_star, d_best) = match best {
        Some((i, d)) => (Some(i as u32), d),
        None => (None, d0),
    };
    let changed = i_star.is_some() && d0 >= d_best + DECISION_MARGIN;
    Ok(ChangeDecision {
        changed,
        i_star,
        deviance_no_change: d0,
        deviance_best_change: d_best,
        screen_max_abs_d: screen_max,
    })
}

fn fill_prefix_means(xs: &[u8], out: &mut [Option<f64>]) {
    let mut sum = 0usize;
    for (i, &x) in xs.iter().enumerate() {
        if i >= 1 {
            out[i] = Some(sum as f64 / i as f64);
        }
        sum += x as usize;
    }
}

/// Covariate columns (observed then missable) as a dense matrix. Requires
/// covariate-complete records.
pub(crate) fn covariate_matrix(
    block: &ProviderBlock,
    n_obs: usize,
    n_miss: usize,
) -> Result<DMatrix<f64>, Error> {
    let n = block.records.len();
    let mut m = DMatrix::<f64>::zeros(n, n_obs + n_miss);
    for (r, rec) in block.records.iter().enumerate() {
        for (c, &v) in rec.w_obs.iter().enumerate() {
            m[(r, c)] = v;
        }
        for (c, v) in rec.w_miss.iter().enumerate() {
            match v {
                Some(v) => m[(r, n_obs + c)] = *v,
                None => {
                    return Err(Error::InvalidInput(format!(
                        "provider {} patient {} has a missing covariate; \
                         apply the covariate complete-case filter first",
                        block.id, rec.order_index
                    )))
                }
            }
        }
    }
    Ok(m)
}

/// Segmented cumulative-proportion instrument: detect a change per provider;
/// unchanged providers get the plain within-provider running proportion,
/// changed providers get it separately per segment. Absent at the first
/// position and, for changed providers, at position i*+1.
pub fn construct_star(dataset: &PanelDataset) -> Result<InstrumentSeries, Error> {
    let mut series = InstrumentSeries::hollow(dataset, MethodId::Star, Level::PerPatient);
    let n_obs = dataset.schema.observed.len();
    let n_miss = dataset.schema.missable.len();
    for (pidx, block) in dataset.providers.iter().enumerate() {
        let cov = covariate_matrix(block, n_obs, n_miss)?;
        let decision = abrahamowicz_detect(block, &cov)?;
        let xs: Vec<u8> = block.records.iter().map(|r| r.x).collect();
        let out = &mut series.values[pidx];
        if decision.changed {
            let i_star = decision.i_star.expect("changed implies candidate") as usize;
            fill_prefix_means(&xs[..i_star], &mut out[..i_star]);
            fill_prefix_means(&xs[i_star..], &mut out[i_star..]);
        } else {
            fill_prefix_means(&xs, out);
        }
    }
    Ok(series)
}
