//! Scenario configuration, replication and metric aggregation.
//!
//! A scenario is one cell of the study grid: a generator, a provider size,
//! a missingness arm. [`run_scenario`] replays it `n_reps` times with
//! counter-derived seeds, scores every requested estimator per replication,
//! and reduces to one [`MetricsRow`] per estimator. Replications run in
//! parallel but the output is a deterministic function of the
//! configuration: each replication owns its seed and the reduction is
//! ordered by replication index.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::Error;
use crate::methods::MethodId;
use crate::pipeline::{self, EstimateResult, EstimatorId, PipelineOptions};
use crate::sim::coefficients::GenCoefficients;
use crate::sim::{generate, missing, mix_seed};

/// Which generating process produces the population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Generator {
    /// Dichotomous provider preference, at most one mid-stream flip.
    A,
    /// Per-provider preference trajectory with random intercept and slope.
    B,
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Generator::A => "A",
            Generator::B => "B",
        })
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "A" | "a" => Ok(Generator::A),
            "B" | "b" => Ok(Generator::B),
            other => Err(Error::InvalidInput(format!(
                "unknown generator {other:?}; expected one of A, B"
            ))),
        }
    }
}

/// Which masking operator runs after generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Missingness {
    None,
    Mcar,
    Mnar,
}

impl fmt::Display for Missingness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Missingness::None => "none",
            Missingness::Mcar => "mcar",
            Missingness::Mnar => "mnar",
        })
    }
}

impl FromStr for Missingness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "none" => Ok(Missingness::None),
            "mcar" => Ok(Missingness::Mcar),
            "mnar" => Ok(Missingness::Mnar),
            other => Err(Error::InvalidInput(format!(
                "unknown missingness {other:?}; expected one of none, mcar, mnar"
            ))),
        }
    }
}

/// Maps the treatment model's linear predictor to a probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkMode {
    /// Inverse-logit (the default; every analysis model is logistic).
    Logit,
    /// Strict linear probability, clamped to [0.001, 0.999] for sensitivity
    /// runs.
    Linear,
}

impl LinkMode {
    pub fn probability(self, lp: f64, context: &'static str) -> Result<f64, Error> {
        if !lp.is_finite() {
            return Err(Error::InvalidProbability { context, value: lp });
        }
        Ok(match self {
            LinkMode::Logit => crate::numerics::expit(lp),
            LinkMode::Linear => lp.clamp(0.001, 0.999),
        })
    }
}

impl fmt::Display for LinkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkMode::Logit => "logit",
            LinkMode::Linear => "linear",
        })
    }
}

impl FromStr for LinkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "logit" => Ok(LinkMode::Logit),
            "linear" => Ok(LinkMode::Linear),
            other => Err(Error::InvalidInput(format!(
                "unknown link {other:?}; expected one of logit, linear"
            ))),
        }
    }
}

/// One cell of the study grid plus everything needed to replay it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub generator: Generator,
    /// Number of providers.
    pub j: usize,
    /// Patients per provider.
    pub n_j: usize,
    pub missingness: Missingness,
    /// Masking rate used by the MCAR arm.
    pub target_missing_rate: f64,
    pub n_reps: usize,
    pub seed: u64,
    pub link: LinkMode,
    pub coefficients: GenCoefficients,
}

impl ScenarioConfig {
    /// The study-grid cell with default sizes (100 providers, 200
    /// replications) and the calibrated coefficient set for `generator`.
    pub fn standard(generator: Generator, n_j: usize, missingness: Missingness, seed: u64) -> Self {
        ScenarioConfig {
            generator,
            j: 100,
            n_j,
            missingness,
            target_missing_rate: 0.40,
            n_reps: 200,
            seed,
            link: LinkMode::Logit,
            coefficients: GenCoefficients::defaults(generator),
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.j == 0 || self.n_j == 0 {
            return Err(Error::InvalidInput(format!(
                "scenario needs at least one provider and one patient, got j={}, n_j={}",
                self.j, self.n_j
            )));
        }
        if self.n_reps == 0 {
            return Err(Error::InvalidInput("n_reps must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.target_missing_rate) {
            return Err(Error::InvalidInput(format!(
                "target_missing_rate must lie in [0, 1), got {}",
                self.target_missing_rate
            )));
        }
        self.coefficients.validate()
    }

    /// Short label for table columns: generator, provider size, missingness.
    pub fn cell_label(&self) -> String {
        format!("{}/n{}/{}", self.generator, self.n_j, self.missingness)
    }
}

/// One estimator's result on one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicationOutcome {
    pub rep: usize,
    pub estimator: EstimatorId,
    pub beta_hat: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub f_statistic: f64,
    pub n_used: usize,
    pub j_used: usize,
}

impl ReplicationOutcome {
    fn from_estimate(rep: usize, e: &EstimateResult) -> Self {
        ReplicationOutcome {
            rep,
            estimator: e.estimator,
            beta_hat: e.beta_hat,
            se: e.se,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
            f_statistic: e.f_statistic,
            n_used: e.n_used,
            j_used: e.j_used,
        }
    }
}

/// An estimator that errored on one replication. Failures are data: the
/// metric row for the estimator excludes the replication and reports how
/// many were excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationFailure {
    pub rep: usize,
    pub estimator: EstimatorId,
    pub message: String,
}

/// Aggregated performance of one estimator over a scenario's replications.
/// `n_reps` counts successful replications only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub estimator: EstimatorId,
    pub n_reps: usize,
    pub n_failed: usize,
    pub bias: f64,
    pub mcse: f64,
    /// Percent of replications whose 95% CI contains the true effect.
    pub coverage: f64,
    pub rmse: f64,
    pub mean_f: f64,
}

/// Everything a scenario run produces: the aggregate table plus the
/// replication-level audit trail.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub metrics: Vec<MetricsRow>,
    pub replications: Vec<ReplicationOutcome>,
    pub failures: Vec<ReplicationFailure>,
}

/// Replays the scenario and scores the observational benchmark, both
/// true-preference benchmarks, and every requested method.
///
/// Per-replication estimator failures (e.g. a rank-deficient first stage on
/// an unlucky draw) are recorded and excluded; failures of the generator
/// itself abort the run, wrapped with the replication's derived seed so the
/// draw can be replayed in isolation.
pub fn run_scenario(
    config: &ScenarioConfig,
    methods: &[MethodId],
    options: PipelineOptions,
) -> Result<ScenarioResult, Error> {
    config.validate()?;
    let per_rep: Vec<Result<RepRows, Error>> = (0..config.n_reps)
        .into_par_iter()
        .map(|rep| run_replication(config, methods, options, rep))
        .collect();

    let mut replications = Vec::new();
    let mut failures = Vec::new();
    for result in per_rep {
        let (rows, fails) = result?;
        replications.extend(rows);
        failures.extend(fails);
    }

    let mut order = vec![EstimatorId::Observational, EstimatorId::TruePp, EstimatorId::TruePpCc];
    order.extend(methods.iter().map(|&m| EstimatorId::Iv(m)));
    let metrics = aggregate(config, &order, &replications, &failures);
    Ok(ScenarioResult { metrics, replications, failures })
}

type RepRows = (Vec<ReplicationOutcome>, Vec<ReplicationFailure>);

fn run_replication(
    config: &ScenarioConfig,
    methods: &[MethodId],
    options: PipelineOptions,
    rep: usize,
) -> Result<RepRows, Error> {
    let rep_seed = mix_seed(config.seed, rep as u64);
    let wrap = |e: Error| Error::Replication { rep, seed: rep_seed, source: Box::new(e) };
    let population = generate::gen_population(config, rep_seed).map_err(wrap)?;
    let dataset = missing::apply(config, &population, rep_seed).map_err(wrap)?;

    let mut rows = Vec::with_capacity(methods.len() + 3);
    let mut fails = Vec::new();
    match pipeline::run_observational(&dataset) {
        Ok(e) => rows.push(ReplicationOutcome::from_estimate(rep, &e)),
        Err(e) => fails.push(ReplicationFailure {
            rep,
            estimator: EstimatorId::Observational,
            message: e.to_string(),
        }),
    }
    match pipeline::run_pp_benchmarks(&dataset, &options) {
        Ok((pp, pp_cc)) => {
            rows.push(ReplicationOutcome::from_estimate(rep, &pp));
            rows.push(ReplicationOutcome::from_estimate(rep, &pp_cc));
        }
        Err(e) => {
            let message = e.to_string();
            for estimator in [EstimatorId::TruePp, EstimatorId::TruePpCc] {
                fails.push(ReplicationFailure { rep, estimator, message: message.clone() });
            }
        }
    }
    for &method in methods {
        match pipeline::run_method(&dataset, method, &options) {
            Ok(e) => rows.push(ReplicationOutcome::from_estimate(rep, &e)),
            Err(e) => fails.push(ReplicationFailure {
                rep,
                estimator: EstimatorId::Iv(method),
                message: e.to_string(),
            }),
        }
    }
    Ok((rows, fails))
}

/// Reduce replication rows to one metrics row per estimator, in `order`.
///
/// The variance entering mcse and the rmse identity is population-style
/// (divide by the replication count, not count − 1), which makes
/// `rmse² = bias² + variance` exact rather than approximate.
fn aggregate(
    config: &ScenarioConfig,
    order: &[EstimatorId],
    replications: &[ReplicationOutcome],
    failures: &[ReplicationFailure],
) -> Vec<MetricsRow> {
    let beta = config.coefficients.outcome.treatment_effect;
    order
        .iter()
        .map(|&estimator| {
            let rows: Vec<&ReplicationOutcome> =
                replications.iter().filter(|r| r.estimator == estimator).collect();
            let n_failed = failures.iter().filter(|f| f.estimator == estimator).count();
            let n = rows.len();
            if n == 0 {
                return MetricsRow {
                    estimator,
                    n_reps: 0,
                    n_failed,
                    bias: f64::NAN,
                    mcse: f64::NAN,
                    coverage: f64::NAN,
                    rmse: f64::NAN,
                    mean_f: f64::NAN,
                };
            }
            let nf = n as f64;
            let mean = rows.iter().map(|r| r.beta_hat).sum::<f64>() / nf;
            let variance = rows.iter().map(|r| (r.beta_hat - mean).powi(2)).sum::<f64>() / nf;
            let bias = mean - beta;
            let hits = rows.iter().filter(|r| r.ci_low <= beta && beta <= r.ci_high).count();
            MetricsRow {
                estimator,
                n_reps: n,
                n_failed,
                bias,
                mcse: (variance / nf).sqrt(),
                coverage: 100.0 * hits as f64 / nf,
                rmse: (bias * bias + variance).sqrt(),
                mean_f: rows.iter().map(|r| r.f_statistic).sum::<f64>() / nf,
            }
        })
        .collect()
}

/// Mean first-stage F per estimator (rows) across scenario cells (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct FStatTable {
    pub columns: Vec<String>,
    pub estimators: Vec<EstimatorId>,
    /// `values[row][column]`; None where the estimator did not run in the cell.
    pub values: Vec<Vec<Option<f64>>>,
}

/// Cross-tabulates mean F over labeled scenario results. Row order is the
/// estimators' first appearance across cells; the observational row is
/// dropped (it has no first stage).
pub fn f_stat_table(cells: &[(String, &ScenarioResult)]) -> FStatTable {
    let mut estimators: Vec<EstimatorId> = Vec::new();
    for (_, result) in cells {
        for row in &result.metrics {
            if row.estimator != EstimatorId::Observational && !estimators.contains(&row.estimator)
            {
                estimators.push(row.estimator);
            }
        }
    }
    let values = estimators
        .iter()
        .map(|&est| {
            cells
                .iter()
                .map(|(_, result)| {
                    result
                        .metrics
                        .iter()
                        .find(|r| r.estimator == est && r.n_reps > 0)
                        .map(|r| r.mean_f)
                })
                .collect()
        })
        .collect();
    FStatTable {
        columns: cells.iter().map(|(label, _)| label.clone()).collect(),
        estimators,
        values,
    }
}
