//! Panel data model: patients nested in providers.
//!
//! All types are immutable after construction and safe to share across
//! parallel workers; filtering operations return new copies.

use std::fmt;

use crate::error::Error;

/// One treated patient. Covariates are split into fully-observed columns
/// (`w_obs`) and partially-observed columns (`w_miss`, `None` = missing).
///
/// `true_pp`, `true_theta` and `u` exist only on simulated data: the
/// generating preference, the generating linear predictor of the treatment
/// model, and the unobserved confounder (consumed by the missingness
/// mechanisms, never exported).
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    /// 1-based treatment rank within the provider.
    pub order_index: u32,
    /// Positive calendar period of the prescription.
    pub time_index: u32,
    /// Treatment arm: 0 or 1.
    pub x: u8,
    pub y: Option<f64>,
    pub w_obs: Vec<f64>,
    pub w_miss: Vec<Option<f64>>,
    pub true_pp: Option<f64>,
    pub true_theta: Option<f64>,
    pub u: Option<f64>,
}

/// One provider's patients, sorted by `order_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderBlock {
    pub id: String,
    pub records: Vec<PatientRecord>,
}

/// Names and observed/missable classification of the covariate columns.
/// Every record's `w_obs`/`w_miss` lengths must match.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CovariateSchema {
    pub observed: Vec<String>,
    pub missable: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub providers: Vec<ProviderBlock>,
    pub schema: CovariateSchema,
}

/// Which records count as complete.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcMode {
    /// Outcome present.
    OutcomeOnly,
    /// Outcome and every partially-observed covariate present.
    OutcomeAndCovariates,
}

/// A located invariant violation. Violations are data, not failures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub provider_id: String,
    pub order_index: Option<u32>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.order_index {
            Some(i) => write!(f, "provider {} patient {}: {}", self.provider_id, i, self.message),
            None => write!(f, "provider {}: {}", self.provider_id, self.message),
        }
    }
}

impl PatientRecord {
    pub fn is_complete(&self, mode: CcMode) -> bool {
        self.y.is_some()
            && (mode == CcMode::OutcomeOnly || self.w_miss.iter().all(Option::is_some))
    }
}

impl ProviderBlock {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl PanelDataset {
    pub fn n_records(&self) -> usize {
        self.providers.iter().map(ProviderBlock::len).sum()
    }

    pub fn n_providers(&self) -> usize {
        self.providers.len()
    }

    pub fn iter_records(&self) -> impl Iterator<Item = (&ProviderBlock, &PatientRecord)> {
        self.providers
            .iter()
            .flat_map(|p| p.records.iter().map(move |r| (p, r)))
    }

    /// Check every structural invariant of a source panel. Filtered views
    /// (see [`Self::complete_case`]) intentionally relax the contiguity
    /// invariant, so run this on ingested or generated data, not on subsets.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |provider: &str, idx: Option<u32>, message: String| {
            out.push(Violation {
                provider_id: provider.to_string(),
                order_index: idx,
                message,
            });
        };
        for p in &self.providers {
            if p.records.is_empty() {
                push(&p.id, None, "provider has no records".into());
                continue;
            }
            let mut seen = vec![false; p.records.len()];
            let mut sorted = true;
            let mut prev_order = 0u32;
            let mut prev_time = 0u32;
            for r in &p.records {
                if r.x > 1 {
                    push(&p.id, Some(r.order_index), format!("treatment must be 0 or 1, got {}", r.x));
                }
                if r.time_index == 0 {
                    push(&p.id, Some(r.order_index), "time_index must be positive".into());
                }
                if r.w_obs.len() != self.schema.observed.len() {
                    push(
                        &p.id,
                        Some(r.order_index),
                        format!(
                            "expected {} observed covariates, got {}",
                            self.schema.observed.len(),
                            r.w_obs.len()
                        ),
                    );
                }
                if r.w_miss.len() != self.schema.missable.len() {
                    push(
                        &p.id,
                        Some(r.order_index),
                        format!(
                            "expected {} missable covariates, got {}",
                            self.schema.missable.len(),
                            r.w_miss.len()
                        ),
                    );
                }
                if let Some(pp) = r.true_pp {
                    if !(0.0..=1.0).contains(&pp) {
                        push(&p.id, Some(r.order_index), format!("true_pp outside [0,1]: {pp}"));
                    }
                }
                let idx = r.order_index as usize;
                if idx == 0 || idx > p.records.len() {
                    push(
                        &p.id,
                        Some(r.order_index),
                        format!("order_index out of 1..={}", p.records.len()),
                    );
                } else if seen[idx - 1] {
                    push(&p.id, Some(r.order_index), "duplicated order_index".into());
                } else {
                    seen[idx - 1] = true;
                }
                if r.order_index <= prev_order {
                    sorted = false;
                }
                if sorted && r.time_index < prev_time {
                    push(
                        &p.id,
                        Some(r.order_index),
                        "time_index decreases along treatment order".into(),
                    );
                }
                prev_order = r.order_index;
                prev_time = r.time_index;
            }
            if !sorted {
                push(&p.id, None, "records not sorted by order_index".into());
            }
        }
        out
    }

    /// Keep records complete under `mode`. Providers emptied by the filter
    /// are dropped. Original `order_index` values are retained: treatment
    /// order is a property of the source data, not the filtered view.
    pub fn complete_case(&self, mode: CcMode) -> Result<PanelDataset, Error> {
        let providers: Vec<ProviderBlock> = self
            .providers
            .iter()
            .filter_map(|p| {
                let records: Vec<PatientRecord> =
                    p.records.iter().filter(|r| r.is_complete(mode)).cloned().collect();
                (!records.is_empty()).then(|| ProviderBlock { id: p.id.clone(), records })
            })
            .collect();
        if providers.is_empty() {
            return Err(Error::EmptyResult {
                context: "complete-case filter removed every record".into(),
            });
        }
        Ok(PanelDataset {
            providers,
            schema: self.schema.clone(),
        })
    }

    /// Drop providers with fewer than `n_min` records, returning the filtered
    /// panel and the number of providers dropped.
    pub fn filter_min_provider_size(&self, n_min: usize) -> Result<(PanelDataset, usize), Error> {
        if n_min == 0 {
            return Err(Error::InvalidInput("minimum provider size must be at least 1".into()));
        }
        let providers: Vec<ProviderBlock> = self
            .providers
            .iter()
            .filter(|p| p.len() >= n_min)
            .cloned()
            .collect();
        let dropped = self.providers.len() - providers.len();
        if providers.is_empty() {
            return Err(Error::EmptyResult {
                context: format!("no provider has at least {n_min} records"),
            });
        }
        Ok((
            PanelDataset {
                providers,
                schema: self.schema.clone(),
            },
            dropped,
        ))
    }
}
