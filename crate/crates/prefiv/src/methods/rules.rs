//! Rule-based instruments: windowed, cumulative, and whole-provider
//! treatment proportions, plus their dichotomized variants.

use super::{InstrumentSeries, Level, MethodId};
use crate::data::PanelDataset;
use crate::error::Error;
use crate::numerics::median;

/// Mean treatment among the previous `b` patients of the same provider:
/// Z_ji = (1/b)·Σ_{d=i−b}^{i−1} X_jd. Absent for the first `b` patients.
pub fn z_prev_b(dataset: &PanelDataset, b: u32) -> Result<InstrumentSeries, Error> {
    if b == 0 {
        return Err(Error::InvalidInput("prev-b window must be at least 1".into()));
    }
    let b = b as usize;
    let mut series = InstrumentSeries::hollow(dataset, MethodId::PrevB(b as u32), Level::PerPatient);
    for (p, out) in dataset.providers.iter().zip(&mut series.values) {
        let mut window_sum = 0usize;
        for i in 0..p.records.len() {
            if i >= b {
                out[i] = Some(window_sum as f64 / b as f64);
                window_sum -= p.records[i - b].x as usize;
            }
            window_sum += p.records[i].x as usize;
        }
    }
    Ok(series)
}

/// Proportion of treatment B among all previous patients of the provider:
/// Z_ji = (1/(i−1))·Σ_{d<i} X_jd. Absent for the first patient.
pub fn z_all_prev_prop(dataset: &PanelDataset) -> InstrumentSeries {
    let mut series = InstrumentSeries::hollow(dataset, MethodId::AllPrevProp, Level::PerPatient);
    for (p, out) in dataset.providers.iter().zip(&mut series.values) {
        let mut prefix = 0usize;
        for i in 0..p.records.len() {
            if i >= 1 {
                out[i] = Some(prefix as f64 / i as f64);
            }
            prefix += p.records[i].x as usize;
        }
    }
    series
}

fn provider_proportions(dataset: &PanelDataset) -> Vec<f64> {
    dataset
        .providers
        .iter()
        .map(|p| p.records.iter().map(|r| r.x as usize).sum::<usize>() as f64 / p.len() as f64)
        .collect()
}

/// One instrument per provider: the provider's overall treatment-B proportion,
/// repeated for every patient.
pub fn z_all_prop(dataset: &PanelDataset) -> InstrumentSeries {
    let mut series = InstrumentSeries::hollow(dataset, MethodId::AllProp, Level::PerProvider);
    for (prop, out) in provider_proportions(dataset).into_iter().zip(&mut series.values) {
        out.fill(Some(prop));
    }
    series
}

/// Center used to dichotomize provider proportions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Center {
    Mean,
    Median,
}

/// Binary per-provider instrument: Z_j = 0 if the provider's proportion is at
/// or below the center of all provider proportions, else 1. Ties go to 0.
pub fn z_all_dich(dataset: &PanelDataset, center: Center) -> InstrumentSeries {
    let method = match center {
        Center::Mean => MethodId::AllDichMean,
        Center::Median => MethodId::AllDichMedian,
    };
    let mut series = InstrumentSeries::hollow(dataset, method, Level::PerProvider);
    let props = provider_proportions(dataset);
    if props.is_empty() {
        return series;
    }
    let c = match center {
        Center::Mean => props.iter().sum::<f64>() / props.len() as f64,
        Center::Median => median(&mut props.clone()),
    };
    if props.iter().all(|&p| p == props[0]) {
        series.warnings.push(format!(
            "all {} provider proportions equal {:.4}; dichotomized instrument is constant 0",
            props.len(),
            props[0]
        ));
    }
    for (p, out) in props.into_iter().zip(&mut series.values) {
        out.fill(Some(if p <= c { 0.0 } else { 1.0 }));
    }
    series
}
