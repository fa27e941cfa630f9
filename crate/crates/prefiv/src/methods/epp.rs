//! Model-based instruments from estimated provider preference: a logistic
//! mixed model of treatment on covariates yields per-provider random effects,
//! dichotomized around their median.
//!
//! Both constructors fit on the covariate-complete subset and emit values for
//! every provider retained there; providers without a single complete record
//! are excluded (all-absent rows). The intercept-only variant gives one value
//! per provider; the intercept+slope variant gives a per-patient value from
//! the fitted preference trajectory at the patient's time index.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::{InstrumentSeries, Level, MethodId};
use crate::data::{CcMode, PanelDataset};
use crate::error::Error;
use crate::numerics::{fit_glmm_logistic, median, GlmmFit, GlmmOptions, RandomEffects};

/// Fit the preference model on the covariate-complete subset. Cluster labels
/// in the returned fit are provider indices into `dataset.providers`.
pub(crate) fn fit_preference_model(
    dataset: &PanelDataset,
    with_time: bool,
) -> Result<(GlmmFit, Vec<String>), Error> {
    let cc = dataset.complete_case(CcMode::OutcomeAndCovariates)?;
    let idx_of: HashMap<&str, usize> = dataset
        .providers
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.as_str(), i))
        .collect();

    let n = cc.n_records();
    let n_cov = cc.schema.observed.len() + cc.schema.missable.len();
    let k = 1 + usize::from(with_time) + n_cov;
    let mut design = DMatrix::<f64>::zeros(n, k);
    let mut y = DVector::<f64>::zeros(n);
    let mut slope = with_time.then(|| DVector::<f64>::zeros(n));
    let mut cluster_ids = Vec::with_capacity(n);
    let mut sizes = Vec::with_capacity(cc.providers.len());

    let mut row = 0;
    for block in &cc.providers {
        sizes.push(block.len() as f64);
        let pidx = idx_of[block.id.as_str()];
        for rec in &block.records {
            design[(row, 0)] = 1.0;
            let mut c = 1;
            if let Some(t) = slope.as_mut() {
                let time = rec.time_index as f64;
                design[(row, c)] = time;
                t[row] = time;
                c += 1;
            }
            for &v in &rec.w_obs {
                design[(row, c)] = v;
                c += 1;
            }
            for v in &rec.w_miss {
                design[(row, c)] = v.expect("complete-case subset");
                c += 1;
            }
            y[row] = rec.x as f64;
            cluster_ids.push(pidx);
            row += 1;
        }
    }

    let random = match &slope {
        Some(t) => RandomEffects::InterceptAndSlope(t),
        None => RandomEffects::Intercept,
    };
    let fit = fit_glmm_logistic(&design, &cluster_ids, random, &y, &GlmmOptions::default())?;

    let mut warnings = Vec::new();
    if fit.boundary {
        warnings.push(
            "random-effect variance collapsed below 1e-8; provider preference signal is degenerate"
                .into(),
        );
    }
    let j = fit.cluster_labels.len();
    let med_size = median(&mut sizes);
    if j < 30 || med_size < 30.0 {
        warnings.push(format!(
            "mixed model fit on {j} providers (median {med_size:.0} complete records); \
             fewer than 30 groups of 30 can yield unstable variance components"
        ));
    }
    Ok((fit, warnings))
}

/// Estimated-preference instrument: one value per provider, 1 when the
/// provider's random intercept exceeds the median across fitted providers
/// (ties to 0). The comparison is done on the intercept scale; dichotomizing
/// after any monotone transform (e.g. expit) gives the same instrument.
pub fn construct_epp(dataset: &PanelDataset) -> Result<InstrumentSeries, Error> {
    let (fit, warnings) = fit_preference_model(dataset, false)?;
    let mut series = InstrumentSeries::hollow(dataset, MethodId::Epp, Level::PerProvider);
    series.warnings = warnings;
    let gammas: Vec<f64> = fit.ranef.iter().map(|u| u[0]).collect();
    let med = median(&mut gammas.clone());
    for (k, &pidx) in fit.cluster_labels.iter().enumerate() {
        let z = if gammas[k] <= med { 0.0 } else { 1.0 };
        series.values[pidx].fill(Some(z));
    }
    Ok(series)
}

/// Estimated-preference instrument with a time-varying trajectory: the fitted
/// provider preference Θ̂_ji = γ̂_0 + γ̂_0j + (γ̂_T + γ̂_Tj)·T_ji is evaluated for
/// every analysis record of fitted providers (including covariate-incomplete
/// ones) and dichotomized around the pooled patient-level median (ties to 0),
/// so at least ⌈N/2⌉ patients receive 0.
pub fn construct_epp_rirs(dataset: &PanelDataset) -> Result<InstrumentSeries, Error> {
    let (fit, warnings) = fit_preference_model(dataset, true)?;
    let g0 = fit.fixed_coef[0];
    let gt = fit.fixed_coef[1];
    let mut series = InstrumentSeries::hollow(dataset, MethodId::EppRirs, Level::PerPatient);
    series.warnings = warnings;

    let mut pooled = Vec::new();
    let mut per_provider = Vec::with_capacity(fit.cluster_labels.len());
    for (k, &pidx) in fit.cluster_labels.iter().enumerate() {
        let u0 = fit.ranef[k][0];
        let ut = fit.ranef[k][1];
        let thetas: Vec<f64> = dataset.providers[pidx]
            .records
            .iter()
            .map(|r| g0 + u0 + (gt + ut) * r.time_index as f64)
            .collect();
        pooled.extend_from_slice(&thetas);
        per_provider.push((pidx, thetas));
    }
    let med = median(&mut pooled);
    for (pidx, thetas) in per_provider {
        for (i, theta) in thetas.into_iter().enumerate() {
            series.values[pidx][i] = Some(if theta <= med { 0.0 } else { 1.0 });
        }
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CovariateSchema, PatientRecord, ProviderBlock};
    use crate::numerics::expit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Providers whose treatment probability is expit(γ_0j + slope_j·T + 0.2·w1 − 0.1·w2).
    fn synth(seed: u64, intercepts: &[f64], slopes: &[f64], n: usize) -> PanelDataset {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let providers = intercepts
            .iter()
            .zip(slopes)
            .enumerate()
            .map(|(pj, (&g0, &gt))| {
                let records = (1..=n)
                    .map(|i| {
                        let w1: f64 = rng.random_range(-1.0..1.0);
                        let w2: f64 = rng.random_range(-1.0..1.0);
                        let t = (12 * i).div_ceil(n) as f64;
                        let p = expit(g0 + gt * t + 0.2 * w1 - 0.1 * w2);
                        PatientRecord {
                            order_index: i as u32,
                            time_index: t as u32,
                            x: u8::from(rng.random::<f64>() < p),
                            y: Some(rng.random_range(-1.0..1.0)),
                            w_obs: vec![w2],
                            w_miss: vec![Some(w1)],
                            true_pp: None,
                            true_theta: None,
                            u: None,
                        }
                    })
                    .collect();
                ProviderBlock {
                    id: format!("p{pj:03}"),
                    records,
                }
            })
            .collect();
        PanelDataset {
            providers,
            schema: CovariateSchema {
                observed: vec!["w2".into()],
                missable: vec!["w1".into()],
            },
        }
    }

    #[test]
    fn opposite_prescribing_blocks_split_cleanly() {
        // 5 high-preference providers (≈90% B), 5 low (≈10%)
        let intercepts: Vec<f64> = (0..10).map(|j| if j < 5 { 2.2 } else { -2.2 }).collect();
        let slopes = vec![0.0; 10];
        let d = synth(3, &intercepts, &slopes, 40);
        let z = construct_epp(&d).unwrap();
        for j in 0..10 {
            let expect = if j < 5 { 1.0 } else { 0.0 };
            assert!(z.values[j].iter().all(|v| *v == Some(expect)), "provider {j}");
        }
        // small panel: the grouped-data caveat warning fires
        assert!(z.warnings.iter().any(|w| w.contains("30")));
    }

    #[test]
    fn identical_providers_degenerate_with_warning() {
        // all providers share one deterministic alternating sequence
        let seqs: Vec<Vec<u8>> = (0..8).map(|_| (0..30).map(|i| (i % 2) as u8).collect()).collect();
        let providers = seqs
            .into_iter()
            .enumerate()
            .map(|(pj, xs)| ProviderBlock {
                id: format!("p{pj:03}"),
                records: xs
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| PatientRecord {
                        order_index: (i + 1) as u32,
                        time_index: ((12 * (i + 1)).div_ceil(30)) as u32,
                        x,
                        y: Some(0.0),
                        w_obs: vec![],
                        w_miss: vec![],
                        true_pp: None,
                        true_theta: None,
                        u: None,
                    })
                    .collect(),
            })
            .collect();
        let d = PanelDataset {
            providers,
            schema: CovariateSchema::default(),
        };
        let z = construct_epp(&d).unwrap();
        assert!(z.warnings.iter().any(|w| w.contains("degenerate")));
        for vals in &z.values {
            assert!(vals.iter().all(|v| *v == Some(0.0) || *v == Some(1.0)));
        }
    }

    #[test]
    fn median_rule_is_expit_invariant() {
        let intercepts: Vec<f64> = (0..12).map(|j| (j as f64 - 5.5) * 0.4).collect();
        let slopes = vec![0.0; 12];
        let d = synth(11, &intercepts, &slopes, 30);
        let z = construct_epp(&d).unwrap();
        let (fit, _) = fit_preference_model(&d, false).unwrap();
        let gammas: Vec<f64> = fit.ranef.iter().map(|u| u[0]).collect();
        let med = median(&mut gammas.clone());
        for (k, &pidx) in fit.cluster_labels.iter().enumerate() {
            let z_expit = if expit(gammas[k]) <= expit(med) { 0.0 } else { 1.0 };
            assert_eq!(z.values[pidx][0], Some(z_expit));
        }
    }

    #[test]
    fn providers_without_complete_records_are_excluded() {
        let mut d = synth(19, &[1.5, 0.5, -0.5, -1.5], &[0.0; 4], 20);
        for rec in &mut d.providers[2].records {
            rec.w_miss[0] = None;
        }
        let z = construct_epp(&d).unwrap();
        assert!(z.values[2].iter().all(Option::is_none));
        for j in [0usize, 1, 3] {
            assert!(z.values[j].iter().all(Option::is_some));
        }
    }

    #[test]
    fn zero_slope_truth_makes_rirs_agree_with_epp() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let intercepts: Vec<f64> = (0..20).map(|_| rng.random_range(-1.5..1.5)).collect();
        let slopes = vec![0.0; 20];
        let d = synth(31, &intercepts, &slopes, 30);
        let z_epp = construct_epp(&d).unwrap();
        let z_rirs = construct_epp_rirs(&d).unwrap();
        let mut agree = 0usize;
        let mut total = 0usize;
        for (a, b) in z_epp.values.iter().zip(&z_rirs.values) {
            for (va, vb) in a.iter().zip(b) {
                if let (Some(va), Some(vb)) = (va, vb) {
                    total += 1;
                    agree += usize::from(va == vb);
                }
            }
        }
        assert!(total > 0);
        let rate = agree as f64 / total as f64;
        assert!(rate >= 0.9, "agreement {rate}");
    }

    #[test]
    fn rirs_is_monotone_within_one_signed_slopes() {
        let mut rng = ChaCha12Rng::seed_from_u64(47);
        let intercepts: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let slopes: Vec<f64> = (0..16).map(|_| rng.random_range(0.15..0.4)).collect();
        let d = synth(53, &intercepts, &slopes, 36);
        let z = construct_epp_rirs(&d).unwrap();
        let (fit, _) = fit_preference_model(&d, true).unwrap();
        let gt = fit.fixed_coef[1];
        for (k, &pidx) in fit.cluster_labels.iter().enumerate() {
            let total_slope = gt + fit.ranef[k][1];
            let vals: Vec<f64> = z.values[pidx].iter().map(|v| v.unwrap()).collect();
            if total_slope > 0.0 {
                let mut switches = 0;
                for w in vals.windows(2) {
                    assert!(w[1] >= w[0], "provider {pidx} not monotone: {vals:?}");
                    switches += usize::from(w[1] > w[0]);
                }
                assert!(switches <= 1);
            }
        }
    }

    #[test]
    fn rirs_assigns_at_least_half_to_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        let intercepts: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let slopes: Vec<f64> = (0..15).map(|_| rng.random_range(-0.2..0.2)).collect();
        let d = synth(67, &intercepts, &slopes, 25);
        let z = construct_epp_rirs(&d).unwrap();
        let present: Vec<f64> = z.values.iter().flatten().filter_map(|v| *v).collect();
        let zeros = present.iter().filter(|&&v| v == 0.0).count();
        assert!(zeros >= present.len().div_ceil(2), "{zeros} of {}", present.len());
    }
}
