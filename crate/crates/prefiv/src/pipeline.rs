//! Two-stage least squares around a provider-preference instrument.
//!
//! One call prepares the data for a method (complete-case filter, minimum
//! provider size, exclusion of patients whose instrument cannot be
//! calculated), regresses treatment on instrument and covariates, regresses
//! outcome on the predicted treatment and the same covariates, and reports
//! the effect estimate with its first-stage F statistic. The benchmark
//! estimators (plain covariate-adjusted regression, instruments built from
//! simulated truth) share the same engine.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::data::{CcMode, PanelDataset};
use crate::error::Error;
use crate::methods::{self, MethodId};
use crate::numerics::{expit, fit_ols, partial_f};

/// First-stage partial F below this flags a weak instrument.
pub const WEAK_F_THRESHOLD: f64 = 10.0;

/// Normal 97.5% quantile; interval half-widths are fixed at 1.96·se rather
/// than a t quantile, which is immaterial at the sample sizes involved.
const CI_MULTIPLIER: f64 = 1.96;

/// Which covariates enter both regression stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateSet {
    /// Every covariate in the schema. Rows must be covariate-complete, so
    /// this pairs with [`CcMode::OutcomeAndCovariates`].
    All,
    /// Only covariates the schema lists as never missing, so rows with
    /// missing covariate values can still be used.
    ObservedOnly,
}

/// Data-preparation requirements of one instrument method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodRequirements {
    pub method: MethodId,
    /// Providers with fewer records than this are dropped before the
    /// instrument is constructed.
    pub n_j_min: usize,
    pub cc_mode: CcMode,
    pub covariates: CovariateSet,
}

impl MethodRequirements {
    pub fn for_method(method: MethodId) -> Self {
        let (n_j_min, cc_mode, covariates) = match method {
            // Model-based instruments keep covariate-incomplete patients in
            // the analysis; the preference model handles its own fitting
            // subset internally.
            MethodId::Epp | MethodId::EppRirs => {
                (2, CcMode::OutcomeOnly, CovariateSet::ObservedOnly)
            }
            // Change detection needs room for a split with three patients on
            // each side.
            MethodId::Star => (5, CcMode::OutcomeAndCovariates, CovariateSet::All),
            // A provider needs b+1 records before any patient has b
            // predecessors.
            MethodId::PrevB(b) => (b as usize + 1, CcMode::OutcomeAndCovariates, CovariateSet::All),
            MethodId::AllPrevProp
            | MethodId::AllProp
            | MethodId::AllDichMean
            | MethodId::AllDichMedian => (2, CcMode::OutcomeAndCovariates, CovariateSet::All),
        };
        MethodRequirements {
            method,
            n_j_min,
            cc_mode,
            covariates,
        }
    }
}

/// How the reported standard error is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeMode {
    /// Second-stage OLS standard error, ignoring first-stage uncertainty.
    /// This is the reporting convention the replication tables use.
    #[default]
    Naive,
    /// Sandwich standard error with residuals recomputed from the observed
    /// treatment instead of its first-stage projection. Offered for
    /// sensitivity checks; not used by the replication tables.
    Corrected,
}

/// Estimation options shared by every estimator.
#[derive(Debug, Clone, Copy, Default)]
pub struct PipelineOptions {
    pub se_mode: SeMode,
}

/// Identifies which estimator produced a result row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorId {
    /// Two-stage least squares with a constructed instrument.
    Iv(MethodId),
    /// Covariate-adjusted regression of outcome on treatment as given.
    Observational,
    /// Two-stage least squares with the simulated true preference signal.
    TruePp,
    /// Same, restricted to covariate-complete records.
    TruePpCc,
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorId::Iv(m) => write!(f, "{m}"),
            EstimatorId::Observational => f.write_str("observational"),
            EstimatorId::TruePp => f.write_str("iv_pp"),
            EstimatorId::TruePpCc => f.write_str("iv_pp_cc"),
        }
    }
}

/// Record and provider counts at each data-preparation step, so a result can
/// be audited without re-running the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PrepLedger {
    pub records_input: usize,
    pub providers_input: usize,
    pub records_complete: usize,
    pub providers_complete: usize,
    pub providers_dropped_small: usize,
    pub records_after_size: usize,
    pub providers_after_size: usize,
    pub records_with_instrument: usize,
    pub providers_with_instrument: usize,
}

impl PrepLedger {
    fn start(dataset: &PanelDataset) -> Self {
        PrepLedger {
            records_input: dataset.n_records(),
            providers_input: dataset.n_providers(),
            ..PrepLedger::default()
        }
    }

    fn note_complete(&mut self, cc: &PanelDataset) {
        self.records_complete = cc.n_records();
        self.providers_complete = cc.n_providers();
    }

    fn note_sized(&mut self, sized: &PanelDataset, dropped: usize) {
        self.providers_dropped_small = dropped;
        self.records_after_size = sized.n_records();
        self.providers_after_size = sized.n_providers();
    }
}

/// One estimator's output on one dataset.
#[derive(Debug, Clone)]
pub struct EstimateResult {
    pub estimator: EstimatorId,
    pub beta_hat: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Partial F of the instrument in the first stage; 0.0 for estimators
    /// without a first stage.
    pub f_statistic: f64,
    /// Rows in the second-stage design.
    pub n_used: usize,
    /// Providers contributing at least one of those rows.
    pub j_used: usize,
    pub prep: PrepLedger,
    pub warnings: Vec<String>,
}

impl EstimateResult {
    /// True when the first-stage F falls below [`WEAK_F_THRESHOLD`].
    pub fn is_weak(&self) -> bool {
        self.f_statistic < WEAK_F_THRESHOLD
    }
}

/// Prepare the data for `method`, construct its instrument, and estimate the
/// treatment effect by two-stage least squares.
pub fn run_method(
    dataset: &PanelDataset,
    method: MethodId,
    options: &PipelineOptions,
) -> Result<EstimateResult, Error> {
    let req = MethodRequirements::for_method(method);
    let mut prep = PrepLedger::start(dataset);
    let cc = dataset.complete_case(req.cc_mode)?;
    prep.note_complete(&cc);
    let (ready, dropped) = cc.filter_min_provider_size(req.n_j_min)?;
    prep.note_sized(&ready, dropped);
    let series = methods::construct(&ready, method).map_err(|e| Error::Method {
        method: method.to_string(),
        source: Box::new(e),
    })?;
    two_stage(
        &ready,
        &series.values,
        req.covariates,
        EstimatorId::Iv(method),
        prep,
        series.warnings,
        options,
    )
}

/// Covariate-adjusted regression of the outcome on treatment as given, on
/// covariate-complete records. No instrument and no first stage, so the
/// F statistic is reported as 0.
pub fn run_observational(dataset: &PanelDataset) -> Result<EstimateResult, Error> {
    let mut prep = PrepLedger::start(dataset);
    let cc = dataset.complete_case(CcMode::OutcomeAndCovariates)?;
    prep.note_complete(&cc);
    prep.note_sized(&cc, 0);
    let n = cc.n_records();
    prep.records_with_instrument = n;
    prep.providers_with_instrument = cc.n_providers();

    let n_cov = cc.schema.observed.len() + cc.schema.missable.len();
    let mut design = DMatrix::<f64>::zeros(n, 2 + n_cov);
    let mut y = DVector::<f64>::zeros(n);
    for (row, (_, rec)) in cc.iter_records().enumerate() {
        design[(row, 0)] = 1.0;
        design[(row, 1)] = rec.x as f64;
        let mut c = 2;
        for &w in &rec.w_obs {
            design[(row, c)] = w;
            c += 1;
        }
        for w in &rec.w_miss {
            design[(row, c)] = w.expect("complete-case rows");
            c += 1;
        }
        y[row] = rec.y.expect("outcome-complete rows");
    }
    let fit = fit_ols(&design, &y)?;
    let beta_hat = fit.coef[1];
    let se = fit.se(1);
    Ok(EstimateResult {
        estimator: EstimatorId::Observational,
        beta_hat,
        se,
        ci_low: beta_hat - CI_MULTIPLIER * se,
        ci_high: beta_hat + CI_MULTIPLIER * se,
        f_statistic: 0.0,
        n_used: n,
        j_used: cc.n_providers(),
        prep,
        warnings: Vec::new(),
    })
}

/// Benchmark estimates that use the simulated truth as the instrument: the
/// first member runs on outcome-complete data with never-missing covariates,
/// the second on covariate-complete data with all covariates. Records carry
/// the truth either as a preference probability or as a preference linear
/// predictor (mapped through the logistic function).
pub fn run_pp_benchmarks(
    dataset: &PanelDataset,
    options: &PipelineOptions,
) -> Result<(EstimateResult, EstimateResult), Error> {
    let full = pp_single(
        dataset,
        CcMode::OutcomeOnly,
        CovariateSet::ObservedOnly,
        EstimatorId::TruePp,
        options,
    )?;
    let cc = pp_single(
        dataset,
        CcMode::OutcomeAndCovariates,
        CovariateSet::All,
        EstimatorId::TruePpCc,
        options,
    )?;
    Ok((full, cc))
}

fn pp_single(
    dataset: &PanelDataset,
    cc_mode: CcMode,
    covariates: CovariateSet,
    estimator: EstimatorId,
    options: &PipelineOptions,
) -> Result<EstimateResult, Error> {
    let mut prep = PrepLedger::start(dataset);
    let cc = dataset.complete_case(cc_mode)?;
    prep.note_complete(&cc);
    prep.note_sized(&cc, 0);

    let mut any = false;
    let z: Vec<Vec<Option<f64>>> = cc
        .providers
        .iter()
        .map(|p| {
            p.records
                .iter()
                .map(|r| {
                    let v = r.true_pp.or_else(|| r.true_theta.map(expit));
                    any |= v.is_some();
                    v
                })
                .collect()
        })
        .collect();
    if !any {
        return Err(Error::MissingTruth {
            what: "a true preference signal (probability or linear predictor)".into(),
        });
    }
    two_stage(&cc, &z, covariates, estimator, prep, Vec::new(), options)
}

/// The shared engine: drop rows without an instrument value, regress
/// treatment on [1, Z, W*], regress outcome on [1, X̂, W*], and report the
/// treatment coefficient with the instrument's first-stage partial F.
fn two_stage(
    dataset: &PanelDataset,
    z: &[Vec<Option<f64>>],
    covariates: CovariateSet,
    estimator: EstimatorId,
    mut prep: PrepLedger,
    warnings: Vec<String>,
    options: &PipelineOptions,
) -> Result<EstimateResult, Error> {
    let mut rows: Vec<(usize, usize, f64)> = Vec::new();
    for (pidx, zs) in z.iter().enumerate() {
        for (ridx, zv) in zs.iter().enumerate() {
            if let Some(zv) = zv {
                rows.push((pidx, ridx, *zv));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyResult {
            context: format!("{estimator}: instrument exclusion"),
        });
    }
    prep.records_with_instrument = rows.len();
    let j_used = rows
        .iter()
        .map(|&(pidx, _, _)| pidx)
        .collect::<BTreeSet<_>>()
        .len();
    prep.providers_with_instrument = j_used;

    let n_cov = dataset.schema.observed.len()
        + match covariates {
            CovariateSet::All => dataset.schema.missable.len(),
            CovariateSet::ObservedOnly => 0,
        };
    let n = rows.len();
    let mut first_design = DMatrix::<f64>::zeros(n, 2 + n_cov);
    let mut restricted_design = DMatrix::<f64>::zeros(n, 1 + n_cov);
    let mut x = DVector::<f64>::zeros(n);
    let mut y = DVector::<f64>::zeros(n);
    for (row, &(pidx, ridx, zv)) in rows.iter().enumerate() {
        let rec = &dataset.providers[pidx].records[ridx];
        first_design[(row, 0)] = 1.0;
        restricted_design[(row, 0)] = 1.0;
        first_design[(row, 1)] = zv;
        let mut c = 2;
        for &w in &rec.w_obs {
            first_design[(row, c)] = w;
            restricted_design[(row, c - 1)] = w;
            c += 1;
        }
        if covariates == CovariateSet::All {
            for w in &rec.w_miss {
                let w = w.expect("complete-case rows");
                first_design[(row, c)] = w;
                restricted_design[(row, c - 1)] = w;
                c += 1;
            }
        }
        x[row] = rec.x as f64;
        y[row] = rec.y.expect("outcome-complete rows");
    }

    let first = fit_ols(&first_design, &x)?;
    let restricted = fit_ols(&restricted_design, &x)?;
    let f_statistic = partial_f(&first, &restricted, 1)?;

    let xhat = &first_design * &first.coef;
    let mut second_design = first_design;
    second_design.set_column(1, &xhat);
    let second = fit_ols(&second_design, &y)?;

    let beta_hat = second.coef[1];
    let se = match options.se_mode {
        SeMode::Naive => second.se(1),
        SeMode::Corrected => corrected_se(&second_design, &x, &y, &second.coef)?,
    };
    Ok(EstimateResult {
        estimator,
        beta_hat,
        se,
        ci_low: beta_hat - CI_MULTIPLIER * se,
        ci_high: beta_hat + CI_MULTIPLIER * se,
        f_statistic,
        n_used: second_design.nrows(),
        j_used,
        prep,
        warnings,
    })
}

/// Sandwich variance of the treatment coefficient with residuals recomputed
/// from the observed treatment rather than its projection, so first-stage
/// noise is not absorbed into an understated error.
fn corrected_se(
    design: &DMatrix<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    coef: &DVector<f64>,
) -> Result<f64, Error> {
    let mut actual = design.clone();
    actual.set_column(1, x);
    let resid = y - actual * coef;
    let gram = design.transpose() * design;
    let bread = nalgebra::Cholesky::new(gram)
        .ok_or_else(|| Error::Internal("second-stage design lost rank in the sandwich".into()))?
        .inverse();
    let mut scaled = design.clone();
    for i in 0..design.nrows() {
        let e = resid[i];
        scaled.row_mut(i).scale_mut(e);
    }
    let meat = scaled.transpose() * scaled;
    let cov = &bread * &meat * &bread;
    Ok(cov[(1, 1)].max(0.0).sqrt())
}
