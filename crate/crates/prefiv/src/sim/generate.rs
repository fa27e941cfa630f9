//! Population generators.
//!
//! Both processes share the outcome model, covariate structure and the
//! period mapping; they differ only in how a provider's treatment
//! propensity moves over its patient stream. Draw order is part of the
//! determinism contract and must not be reordered: per provider the
//! covariate means come first, then the provider's preference draws, then
//! per patient (in treatment order) W1, W2, U, the treatment uniform and
//! the outcome noise.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::data::{CovariateSchema, PanelDataset, PatientRecord, ProviderBlock};
use crate::error::Error;
use crate::sim::coefficients::GenCoefficients;
use crate::sim::scenario::{Generator, ScenarioConfig};
use crate::sim::{derive_stream, STREAM_POPULATION};

/// Calendar period of the i-th of n patients: 1..=12, ascending in i.
pub fn period_of_rank(i: usize, n: usize) -> u32 {
    ((12 * i).div_ceil(n)) as u32
}

/// Dispatches on the configured generator.
pub fn gen_population(config: &ScenarioConfig, seed: u64) -> Result<PanelDataset, Error> {
    match config.generator {
        Generator::A => gen_population_a(config, seed),
        Generator::B => gen_population_b(config, seed),
    }
}

/// Flip process: each provider starts on arm 1 with probability
/// `p_initial_1`; a starting-arm-dependent coin decides whether it flips
/// once, at a rank drawn uniformly from the switch window. The realized
/// preference enters the treatment model and is recorded in `true_pp`.
pub fn gen_population_a(config: &ScenarioConfig, seed: u64) -> Result<PanelDataset, Error> {
    let mut rng = derive_stream(seed, STREAM_POPULATION);
    let c = &config.coefficients;
    let pp = &c.preference;
    let mut providers = Vec::with_capacity(config.j);
    for j in 0..config.j {
        let shared = ProviderShared::draw(&mut rng, c);
        let initial = u8::from(rng.random::<f64>() < pp.p_initial_1);
        let p_switch = if initial == 1 { pp.p_switch_1_to_0 } else { pp.p_switch_0_to_1 };
        let switches = rng.random::<f64>() < p_switch;
        // The flip rank needs the pre-switch state realized at least once,
        // so the window floor is clamped to 2; providers too small for a
        // nonempty window never switch (and draw no rank).
        let lo = ((pp.switch_window.0 * config.n_j as f64).ceil() as usize).max(2);
        let hi = (pp.switch_window.1 * config.n_j as f64).floor() as usize;
        let switch_rank = (switches && lo <= hi).then(|| rng.random_range(lo..=hi));

        let mut records = Vec::with_capacity(config.n_j);
        for i in 1..=config.n_j {
            let state = match switch_rank {
                Some(rank) if i >= rank => 1 - initial,
                _ => initial,
            };
            let patient = PatientDraws::draw(&mut rng, c, &shared);
            let lp = c.treatment_a.intercept
                + c.treatment_a.preference * f64::from(state)
                + c.treatment_a.u * patient.u
                + c.treatment_a.w1 * patient.w1
                + c.treatment_a.w2 * patient.w2;
            records.push(patient.finish(
                &mut rng,
                config,
                i,
                lp,
                Some(f64::from(state)),
                None,
            )?);
        }
        providers.push(ProviderBlock { id: provider_id(j), records });
    }
    Ok(assemble(providers))
}

/// Trajectory process: each provider draws a random intercept and slope
/// from `omega`; its log-odds of treatment move linearly over the calendar
/// period. The provider-and-period part of the predictor is recorded in
/// `true_theta`.
pub fn gen_population_b(config: &ScenarioConfig, seed: u64) -> Result<PanelDataset, Error> {
    let mut rng = derive_stream(seed, STREAM_POPULATION);
    let c = &config.coefficients;
    let [l00, l10, l11] = c.treatment_b.omega.cholesky()?;
    let mut providers = Vec::with_capacity(config.j);
    for j in 0..config.j {
        let shared = ProviderShared::draw(&mut rng, c);
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let g0 = l00 * z0;
        let gt = l10 * z0 + l11 * z1;

        let mut records = Vec::with_capacity(config.n_j);
        for i in 1..=config.n_j {
            let t = f64::from(period_of_rank(i, config.n_j));
            let theta = c.treatment_b.intercept + g0 + (c.treatment_b.time + gt) * t;
            let patient = PatientDraws::draw(&mut rng, c, &shared);
            let lp = theta
                + c.treatment_b.u * patient.u
                + c.treatment_b.w1 * patient.w1
                + c.treatment_b.w2 * patient.w2;
            records.push(patient.finish(&mut rng, config, i, lp, None, Some(theta))?);
        }
        providers.push(ProviderBlock { id: provider_id(j), records });
    }
    Ok(assemble(providers))
}

fn provider_id(j: usize) -> String {
    format!("p{:03}", j + 1)
}

fn assemble(providers: Vec<ProviderBlock>) -> PanelDataset {
    // Freshly generated data is fully observed; the masking operators
    // demote W1 into the missable slot if and when they run.
    PanelDataset {
        providers,
        schema: CovariateSchema {
            observed: vec!["w1".into(), "w2".into()],
            missable: vec![],
        },
    }
}

/// Provider-level covariate means, drawn before the preference draws.
struct ProviderShared {
    mu_w1: f64,
    mu_w2: f64,
}

impl ProviderShared {
    fn draw(rng: &mut ChaCha12Rng, c: &GenCoefficients) -> Self {
        let sd = c.covariates.sd_provider_mean;
        ProviderShared {
            mu_w1: sd * rng.sample::<f64, _>(StandardNormal),
            mu_w2: sd * rng.sample::<f64, _>(StandardNormal),
        }
    }
}

/// One patient's exogenous draws, waiting for the treatment model's linear
/// predictor to finish the record.
struct PatientDraws {
    w1: f64,
    w2: f64,
    u: f64,
}

impl PatientDraws {
    fn draw(rng: &mut ChaCha12Rng, c: &GenCoefficients, shared: &ProviderShared) -> Self {
        let sd = c.covariates.sd_within;
        PatientDraws {
            w1: shared.mu_w1 + sd * rng.sample::<f64, _>(StandardNormal),
            w2: shared.mu_w2 + sd * rng.sample::<f64, _>(StandardNormal),
            u: rng.sample(StandardNormal),
        }
    }

    fn finish(
        self,
        rng: &mut ChaCha12Rng,
        config: &ScenarioConfig,
        rank: usize,
        treatment_lp: f64,
        true_pp: Option<f64>,
        true_theta: Option<f64>,
    ) -> Result<PatientRecord, Error> {
        let c = &config.coefficients;
        let p = config.link.probability(treatment_lp, "treatment")?;
        let x = u8::from(rng.random::<f64>() < p);
        let noise: f64 = rng.sample(StandardNormal);
        let y = c.outcome.intercept
            + c.outcome.treatment_effect * f64::from(x)
            + c.outcome.w1 * self.w1
            + c.outcome.w2 * self.w2
            + c.outcome.u * self.u
            + c.outcome.sd_eps * noise;
        Ok(PatientRecord {
            order_index: rank as u32,
            time_index: period_of_rank(rank, config.n_j),
            x,
            y: Some(y),
            w_obs: vec![self.w1, self.w2],
            w_miss: vec![],
            true_pp,
            true_theta,
            u: Some(self.u),
        })
    }
}
