//! Pins the free intercepts and the outcome-noise scale against marginal
//! targets.
//!
//! The structural slopes are design choices; what the marginals (treated
//! share, outcome variance, overall masking rate) land on once those slopes
//! are fixed is controlled by three scalars — the treatment-model
//! intercept, the outcome noise sd and the selection intercept — each of
//! which moves its marginal monotonically. Calibration therefore bisects
//! each scalar in turn against a large generated probe population
//! (≥ 100 000 records, fixed probe seed), so repeated calibrations are
//! deterministic and independently seeded scenario runs reproduce the
//! targets up to Monte-Carlo noise.

use std::fmt;

use crate::data::PanelDataset;
use crate::error::Error;
use crate::sim::coefficients::GenCoefficients;
use crate::sim::generate::gen_population;
use crate::sim::missing::apply_mnar;
use crate::sim::mix_seed;
use crate::sim::scenario::{Generator, ScenarioConfig};

/// Counter reserved for the calibration probe; replication counters are
/// dense from zero and can never reach it.
const PROBE_COUNTER: u64 = u64::MAX;

/// How many records the probe population must have.
const PROBE_RECORDS: usize = 100_000;

/// Marginal targets. `missing_rate: None` skips the selection step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTargets {
    pub treated_share: f64,
    pub outcome_variance: f64,
    pub missing_rate: Option<f64>,
}

impl CalibrationTargets {
    /// The study's marginal targets for each generator.
    pub fn standard(generator: Generator) -> Self {
        match generator {
            Generator::A => CalibrationTargets {
                treated_share: 0.42,
                outcome_variance: 7.7,
                missing_rate: Some(0.40),
            },
            Generator::B => CalibrationTargets {
                treated_share: 0.56,
                outcome_variance: 6.9,
                missing_rate: Some(0.40),
            },
        }
    }
}

/// One adjusted scalar: where it landed and what it achieved on the probe.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationStep {
    pub parameter: &'static str,
    pub target: f64,
    pub achieved: f64,
    pub value: f64,
    pub evaluations: usize,
}

/// Audit trail of a calibration run.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub generator: Generator,
    pub probe_records: usize,
    pub steps: Vec<CalibrationStep>,
}

impl fmt::Display for CalibrationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "calibration: generator {}, probe population {} records",
            self.generator, self.probe_records
        )?;
        for s in &self.steps {
            writeln!(
                f,
                "  {:<22} = {:>9.5}   target {:>7.4}  achieved {:>7.4}  ({} evaluations)",
                s.parameter, s.value, s.target, s.achieved, s.evaluations
            )?;
        }
        Ok(())
    }
}

/// Bisects the three free scalars for `config`'s generator. Returns the
/// adjusted coefficient set and the audit report; the input config is only
/// read for its generator, sizes, link and starting coefficients.
pub fn calibrate(
    config: &ScenarioConfig,
    targets: &CalibrationTargets,
) -> Result<(GenCoefficients, CalibrationReport), Error> {
    config.validate()?;
    let mut probe = config.clone();
    probe.n_j = PROBE_RECORDS.div_ceil(probe.j);
    let probe_seed = mix_seed(config.seed, PROBE_COUNTER);
    let mut steps = Vec::new();
    let mut coefficients = config.coefficients;

    let (value, achieved, evaluations) = bisect(
        "treatment intercept",
        targets.treated_share,
        (-8.0, 8.0),
        1e-4,
        |x| {
            let mut c = coefficients;
            set_treatment_intercept(&mut c, probe.generator, x);
            probe.coefficients = c;
            Ok(treated_share(&gen_population(&probe, probe_seed)?))
        },
    )?;
    set_treatment_intercept(&mut coefficients, probe.generator, value);
    steps.push(CalibrationStep {
        parameter: "treatment intercept",
        target: targets.treated_share,
        achieved,
        value,
        evaluations,
    });

    let (value, achieved, evaluations) = bisect(
        "outcome noise sd",
        targets.outcome_variance,
        (0.01, 8.0),
        1e-4,
        |x| {
            let mut c = coefficients;
            c.outcome.sd_eps = x;
            probe.coefficients = c;
            Ok(outcome_variance(&gen_population(&probe, probe_seed)?))
        },
    )?;
    coefficients.outcome.sd_eps = value;
    steps.push(CalibrationStep {
        parameter: "outcome noise sd",
        target: targets.outcome_variance,
        achieved,
        value,
        evaluations,
    });

    if let Some(rate) = targets.missing_rate {
        probe.coefficients = coefficients;
        let base = gen_population(&probe, probe_seed)?;
        let (value, achieved, evaluations) =
            bisect("selection intercept", rate, (-8.0, 8.0), 1e-4, |x| {
                let mut c = coefficients;
                c.selection.intercept = x;
                Ok(masked_rate(&apply_mnar(&base, &c, probe_seed)?))
            })?;
        coefficients.selection.intercept = value;
        steps.push(CalibrationStep {
            parameter: "selection intercept",
            target: rate,
            achieved,
            value,
            evaluations,
        });
    }

    let report = CalibrationReport {
        generator: config.generator,
        probe_records: probe.j * probe.n_j,
        steps,
    };
    Ok((coefficients, report))
}

fn set_treatment_intercept(c: &mut GenCoefficients, generator: Generator, value: f64) {
    match generator {
        Generator::A => c.treatment_a.intercept = value,
        Generator::B => c.treatment_b.intercept = value,
    }
}

pub(crate) fn treated_share(d: &PanelDataset) -> f64 {
    d.iter_records().map(|(_, r)| f64::from(r.x)).sum::<f64>() / d.n_records() as f64
}

pub(crate) fn outcome_variance(d: &PanelDataset) -> f64 {
    let n = d.n_records() as f64;
    let mean = d.iter_records().map(|(_, r)| r.y.unwrap_or(f64::NAN)).sum::<f64>() / n;
    d.iter_records().map(|(_, r)| (r.y.unwrap_or(f64::NAN) - mean).powi(2)).sum::<f64>() / n
}

pub(crate) fn masked_rate(d: &PanelDataset) -> f64 {
    let missing = d.iter_records().filter(|(_, r)| r.w_miss.iter().any(Option::is_none)).count();
    missing as f64 / d.n_records() as f64
}

/// Bisection for a nondecreasing objective. The objective may be a step
/// function (Monte-Carlo probes with a frozen seed are): the loop narrows
/// the interval to `x_tol` and reports the achieved value at the midpoint.
/// Returns (value, achieved, evaluations).
fn bisect(
    parameter: &'static str,
    target: f64,
    (mut lo, mut hi): (f64, f64),
    x_tol: f64,
    mut objective: impl FnMut(f64) -> Result<f64, Error>,
) -> Result<(f64, f64, usize), Error> {
    let f_lo = objective(lo)?;
    let f_hi = objective(hi)?;
    let mut evaluations = 2;
    if !(f_lo <= target && target <= f_hi) {
        return Err(Error::NonBracketing {
            parameter: parameter.to_string(),
            target,
            lo,
            hi,
            f_lo,
            f_hi,
        });
    }
    while hi - lo > x_tol {
        let mid = 0.5 * (lo + hi);
        let f_mid = objective(mid)?;
        evaluations += 1;
        if f_mid < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let value = 0.5 * (lo + hi);
    let achieved = objective(value)?;
    Ok((value, achieved, evaluations + 1))
}
