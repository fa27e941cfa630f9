//! Small random-panel builders shared by unit tests.

use rand::Rng;

use crate::data::{CovariateSchema, PanelDataset, PatientRecord, ProviderBlock};

/// A panel with random sizes and treatments: J ∈ [1, max_j], n_j ∈ [1, max_n].
/// Treatments are Bernoulli with a per-provider rate; outcomes and two
/// covariates (one missable, fully present) are filled with smooth noise.
pub fn random_panel<R: Rng>(rng: &mut R, max_j: usize, max_n: usize) -> PanelDataset {
    let j = rng.random_range(1..=max_j);
    let providers = (0..j)
        .map(|pj| {
            let n = rng.random_range(1..=max_n);
            let rate: f64 = rng.random();
            let records = (1..=n)
                .map(|i| {
                    let w1: f64 = rng.random_range(-2.0..2.0);
                    let w2: f64 = rng.random_range(-2.0..2.0);
                    PatientRecord {
                        order_index: i as u32,
                        time_index: ((12 * i).div_ceil(n)) as u32,
                        x: u8::from(rng.random::<f64>() < rate),
                        y: Some(rng.random_range(-3.0..3.0)),
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

/// Panel with prescribed treatment sequences, one provider per sequence.
pub fn panel_from_treatments(seqs: &[&[u8]]) -> PanelDataset {
    let providers = seqs
        .iter()
        .enumerate()
        .map(|(pj, xs)| ProviderBlock {
            id: format!("p{pj:03}"),
            records: xs
                .iter()
                .enumerate()
                .map(|(i, &x)| PatientRecord {
                    order_index: (i + 1) as u32,
                    time_index: ((12 * (i + 1)).div_ceil(xs.len().max(1))) as u32,
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
    PanelDataset {
        providers,
        schema: CovariateSchema::default(),
    }
}
