//! Masking operators for the partially-observed covariate.
//!
//! Generated panels start fully observed. Each operator first demotes W1
//! from the observed columns into the missable slot (so the schema tells
//! downstream code which covariates can be trusted everywhere), then masks
//! individual entries. Under MCAR the mask is an independent coin per
//! record; under the selection model the masking probability loads on the
//! record's own W1, the unobserved confounder and the standardized
//! outcome — exactly the quantities a complete-case analysis cannot
//! condition on.

use rand::Rng;

use crate::data::PanelDataset;
use crate::error::Error;
use crate::numerics::expit;
use crate::sim::coefficients::GenCoefficients;
use crate::sim::scenario::{Missingness, ScenarioConfig};
use crate::sim::{derive_stream, STREAM_MISSINGNESS};

/// Applies the configured missingness arm to a generated population.
pub fn apply(
    config: &ScenarioConfig,
    dataset: &PanelDataset,
    seed: u64,
) -> Result<PanelDataset, Error> {
    match config.missingness {
        Missingness::None => Ok(dataset.clone()),
        Missingness::Mcar => apply_mcar(dataset, config.target_missing_rate, seed),
        Missingness::Mnar => apply_mnar(dataset, &config.coefficients, seed),
    }
}

/// Masks W1 entries independently with probability `rate`. With rate 0 the
/// values are untouched (only the schema demotion happens).
pub fn apply_mcar(dataset: &PanelDataset, rate: f64, seed: u64) -> Result<PanelDataset, Error> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidInput(format!(
            "masking rate must lie in [0, 1), got {rate}"
        )));
    }
    let mut rng = derive_stream(seed, STREAM_MISSINGNESS);
    let mut out = demote(dataset, "w1")?;
    for p in &mut out.providers {
        for r in &mut p.records {
            if rng.random::<f64>() < rate {
                r.w_miss[0] = None;
            }
        }
    }
    Ok(out)
}

/// Masks W1 through the two-factor logistic selection model. Requires the
/// generated truth columns (U and complete Y); the outcome enters
/// standardized over the whole population.
pub fn apply_mnar(
    dataset: &PanelDataset,
    coefficients: &GenCoefficients,
    seed: u64,
) -> Result<PanelDataset, Error> {
    let s = &coefficients.selection;
    let n = dataset.n_records() as f64;
    let mut sum = 0.0;
    for (_, r) in dataset.iter_records() {
        match (r.y, r.u) {
            (Some(y), Some(_)) => sum += y,
            _ => {
                return Err(Error::MissingTruth {
                    what: "complete outcomes and confounder draws for the selection model".into(),
                })
            }
        }
    }
    let mean = sum / n;
    let sd = (dataset
        .iter_records()
        .map(|(_, r)| (r.y.unwrap() - mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if sd == 0.0 {
        return Err(Error::InvalidInput(
            "outcome is constant; cannot standardize for the selection model".into(),
        ));
    }

    let mut rng = derive_stream(seed, STREAM_MISSINGNESS);
    let mut out = demote(dataset, "w1")?;
    for p in &mut out.providers {
        for r in &mut p.records {
            let w1 = r.w_miss[0].expect("demoted column is fully observed");
            let w2 = r.w_obs[0];
            let u = r.u.expect("checked above");
            let y_std = (r.y.expect("checked above") - mean) / sd;
            let v = rng.random_range(-2.0..2.0);
            let patient_factor =
                expit(s.intercept + s.w1 * w1 + s.w2 * w2 + s.u * u + s.y_std * y_std);
            let shock_factor = expit(s.intercept + s.v * v + s.v_w1 * v * w1 + s.v_w2 * v * w2);
            if rng.random::<f64>() < patient_factor * shock_factor {
                r.w_miss[0] = None;
            }
        }
    }
    Ok(out)
}

/// Moves a fully-observed covariate into the missable slot, preserving
/// values and the relative order of the remaining columns.
fn demote(dataset: &PanelDataset, name: &str) -> Result<PanelDataset, Error> {
    let idx = dataset
        .schema
        .observed
        .iter()
        .position(|c| c == name)
        .ok_or_else(|| Error::InvalidInput(format!(
            "cannot demote {name:?}: not among the observed covariates {:?}",
            dataset.schema.observed
        )))?;
    let mut out = dataset.clone();
    out.schema.observed.remove(idx);
    out.schema.missable.insert(0, name.to_string());
    for p in &mut out.providers {
        for r in &mut p.records {
            let value = r.w_obs.remove(idx);
            r.w_miss.insert(0, Some(value));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::generate::gen_population;
    use crate::sim::scenario::{Generator, ScenarioConfig};

    fn population(j: usize, n_j: usize, seed: u64) -> (ScenarioConfig, PanelDataset) {
        let mut config = ScenarioConfig::standard(Generator::A, n_j, Missingness::Mnar, seed);
        config.j = j;
        let d = gen_population(&config, seed).unwrap();
        (config, d)
    }

    fn masked_fraction(d: &PanelDataset) -> f64 {
        let missing = d.iter_records().filter(|(_, r)| r.w_miss[0].is_none()).count();
        missing as f64 / d.n_records() as f64
    }

    #[test]
    fn demotion_reshapes_the_schema_and_keeps_values() {
        let (_, d) = population(5, 20, 1);
        let out = demote(&d, "w1").unwrap();
        assert_eq!(out.schema.observed, vec!["w2".to_string()]);
        assert_eq!(out.schema.missable, vec!["w1".to_string()]);
        for ((_, a), (_, b)) in d.iter_records().zip(out.iter_records()) {
            assert_eq!(a.w_obs[0], b.w_miss[0].unwrap());
            assert_eq!(a.w_obs[1], b.w_obs[0]);
        }
        assert!(out.validate().is_empty());
        assert!(demote(&d, "w9").is_err());
    }

    #[test]
    fn mcar_hits_the_rate_and_ignores_the_outcome() {
        // 408 patients × 100 providers, the scenario-2 shape.
        let (_, d) = population(100, 408, 2);
        let masked = apply_mcar(&d, 0.40, 2).unwrap();
        let rate = masked_fraction(&masked);
        assert!((0.38..=0.42).contains(&rate), "rate {rate}");

        // Independence of the mask from Y: |corr| ≤ 0.02 at this size.
        let n = masked.n_records() as f64;
        let rs: Vec<f64> = masked
            .iter_records()
            .map(|(_, r)| f64::from(r.w_miss[0].is_none()))
            .collect();
        let ys: Vec<f64> = masked.iter_records().map(|(_, r)| r.y.unwrap()).collect();
        let (mr, my) = (rs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let cov = rs.iter().zip(&ys).map(|(r, y)| (r - mr) * (y - my)).sum::<f64>() / n;
        let vr = rs.iter().map(|r| (r - mr).powi(2)).sum::<f64>() / n;
        let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
        let corr = cov / (vr * vy).sqrt();
        assert!(corr.abs() <= 0.02, "corr(R, Y) = {corr}");
    }

    #[test]
    fn mcar_with_rate_zero_changes_no_values() {
        let (_, d) = population(4, 10, 3);
        let out = apply_mcar(&d, 0.0, 3).unwrap();
        assert_eq!(out.n_records(), d.n_records());
        for ((_, a), (_, b)) in d.iter_records().zip(out.iter_records()) {
            assert_eq!(b.w_miss[0], Some(a.w_obs[0]));
        }
        assert!(apply_mcar(&d, 1.0, 3).is_err());
        assert!(apply_mcar(&d, -0.1, 3).is_err());
    }

    #[test]
    fn selection_with_only_an_intercept_matches_the_closed_form() {
        // Both factors reduce to expit(intercept), so the masking rate is
        // its square; intercept = logit(sqrt(0.40)) gives 40%.
        let (config, d) = population(100, 408, 4);
        let mut c = config.coefficients;
        c.selection = crate::sim::coefficients::SelectionModel {
            intercept: crate::numerics::logit(0.40_f64.sqrt()),
            w1: 0.0,
            w2: 0.0,
            u: 0.0,
            y_std: 0.0,
            v: 0.0,
            v_w1: 0.0,
            v_w2: 0.0,
        };
        let masked = apply_mnar(&d, &c, 4).unwrap();
        let rate = masked_fraction(&masked);
        assert!((rate - 0.40).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn selection_leaves_a_partial_association_with_the_confounder_and_outcome() {
        let (config, d) = population(100, 408, 6);
        let masked = apply_mnar(&d, &config.coefficients, 6).unwrap();

        // Non-ignorability: partialling both measured covariates out of the
        // mask indicator still leaves correlations with U and Y bounded
        // away from zero. W1 uses the pre-mask values from the source panel
        // (record order is preserved by the operator).
        let n = masked.n_records();
        let mut r = Vec::with_capacity(n);
        let mut design = nalgebra::DMatrix::zeros(n, 3);
        let mut u = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for (row, ((_, src), (_, rec))) in
            d.iter_records().zip(masked.iter_records()).enumerate()
        {
            r.push(f64::from(rec.w_miss[0].is_none()));
            design[(row, 0)] = 1.0;
            design[(row, 1)] = src.w_obs[0];
            design[(row, 2)] = rec.w_obs[0];
            u.push(rec.u.unwrap());
            y.push(rec.y.unwrap());
        }
        let resid = |target: &[f64]| -> Vec<f64> {
            let t = nalgebra::DVector::from_column_slice(target);
            let fit = crate::numerics::fit_ols(&design, &t).unwrap();
            (&t - design.clone() * fit.coef).iter().copied().collect()
        };
        let corr = |a: &[f64], b: &[f64]| -> f64 {
            let nf = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / nf, b.iter().sum::<f64>() / nf);
            let cov = a.iter().zip(b).map(|(x, z)| (x - ma) * (z - mb)).sum::<f64>() / nf;
            let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / nf;
            let vb = b.iter().map(|z| (z - mb).powi(2)).sum::<f64>() / nf;
            cov / (va * vb).sqrt()
        };
        let r_given_w = resid(&r);
        assert!(corr(&r_given_w, &resid(&u)).abs() >= 0.03, "no U association");
        assert!(corr(&r_given_w, &resid(&y)).abs() >= 0.05, "no Y association");
        // And the marginal association the MCAR test rules out is present.
        assert!(corr(&r, &y).abs() >= 0.05, "marginal corr(R, Y) too small");
    }

    #[test]
    fn selection_requires_the_truth_columns() {
        let (config, mut d) = population(3, 8, 7);
        d.providers[0].records[0].u = None;
        assert!(matches!(
            apply_mnar(&d, &config.coefficients, 7),
            Err(Error::MissingTruth { .. })
        ));
    }

    #[test]
    fn masking_is_reproducible_per_seed() {
        let (config, d) = population(10, 30, 8);
        let a = apply_mnar(&d, &config.coefficients, 8).unwrap();
        let b = apply_mnar(&d, &config.coefficients, 8).unwrap();
        assert_eq!(a, b);
        let c = apply_mnar(&d, &config.coefficients, 9).unwrap();
        assert_ne!(a, c);
    }
}
