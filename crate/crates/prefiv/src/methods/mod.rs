//! Instrument construction: eleven ways to proxy a provider's latent
//! prescribing preference from observed treatment sequences.
//!
//! Rule-based constructors ([`rules`]) read treatment histories directly;
//! model-based constructors ([`epp`], [`changepoint`]) fit logistic models
//! first. Every constructor maps an analysis-ready [`PanelDataset`] to an
//! [`InstrumentSeries`] whose rows parallel the dataset; positions where the
//! method is not calculable are absent and excluded downstream.

pub mod changepoint;
pub mod epp;
pub mod rules;

pub use changepoint::{abrahamowicz_detect, construct_star, ChangeDecision};
pub use epp::{construct_epp, construct_epp_rirs};
pub use rules::{z_all_dich, z_all_prev_prop, z_all_prop, z_prev_b, Center};

use std::fmt;
use std::str::FromStr;

use crate::data::PanelDataset;
use crate::error::Error;

/// Method identifier. `PrevB(b)` generalizes the fixed aliases
/// prevpatient (b=1), prev2patient, prev5patient, prev10patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodId {
    PrevB(u32),
    AllPrevProp,
    AllProp,
    AllDichMean,
    AllDichMedian,
    Epp,
    EppRirs,
    Star,
}

impl MethodId {
    /// The eleven methods of the study, in presentation order.
    pub fn standard_eleven() -> [MethodId; 11] {
        [
            MethodId::PrevB(1),
            MethodId::PrevB(2),
            MethodId::PrevB(5),
            MethodId::PrevB(10),
            MethodId::AllPrevProp,
            MethodId::AllProp,
            MethodId::AllDichMean,
            MethodId::AllDichMedian,
            MethodId::Epp,
            MethodId::EppRirs,
            MethodId::Star,
        ]
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodId::PrevB(1) => write!(f, "prevpatient"),
            MethodId::PrevB(b) => write!(f, "prev{b}patient"),
            MethodId::AllPrevProp => write!(f, "allprevprop"),
            MethodId::AllProp => write!(f, "allprop"),
            MethodId::AllDichMean => write!(f, "alldichmean"),
            MethodId::AllDichMedian => write!(f, "alldichmedian"),
            MethodId::Epp => write!(f, "epp"),
            MethodId::EppRirs => write!(f, "epp_rirs"),
            MethodId::Star => write!(f, "star"),
        }
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "prevpatient" => return Ok(MethodId::PrevB(1)),
            "allprevprop" => return Ok(MethodId::AllPrevProp),
            "allprop" => return Ok(MethodId::AllProp),
            "alldichmean" => return Ok(MethodId::AllDichMean),
            "alldichmedian" => return Ok(MethodId::AllDichMedian),
            "epp" => return Ok(MethodId::Epp),
            "epp_rirs" => return Ok(MethodId::EppRirs),
            "star" => return Ok(MethodId::Star),
            _ => {}
        }
        if let Some(b) = s
            .strip_prefix("prev")
            .and_then(|t| t.strip_suffix("patient"))
            .and_then(|digits| digits.parse::<u32>().ok())
        {
            if b >= 1 {
                return Ok(MethodId::PrevB(b));
            }
        }
        Err(Error::InvalidInput(format!(
            "unknown method '{s}' (expected one of {}, or prev<b>patient)",
            MethodId::standard_eleven().map(|m| m.to_string()).join(", ")
        )))
    }
}

/// Whether the instrument varies within provider or is one value per provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    PerPatient,
    PerProvider,
}

/// Instrument values parallel to the dataset the constructor received:
/// `values[p][i]` belongs to `dataset.providers[p].records[i]`. Present
/// values lie in [0,1]; binary methods emit only 0 or 1. `None` marks the
/// method's documented non-calculable positions.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentSeries {
    pub method: MethodId,
    pub level: Level,
    pub values: Vec<Vec<Option<f64>>>,
    pub warnings: Vec<String>,
}

impl InstrumentSeries {
    pub fn n_present(&self) -> usize {
        self.values
            .iter()
            .map(|v| v.iter().filter(|z| z.is_some()).count())
            .sum()
    }

    pub(crate) fn hollow(dataset: &PanelDataset, method: MethodId, level: Level) -> Self {
        InstrumentSeries {
            method,
            level,
            values: dataset.providers.iter().map(|p| vec![None; p.len()]).collect(),
            warnings: Vec::new(),
        }
    }
}

/// Construct the instrument for `method` on analysis-ready data (complete-case
/// and minimum-size filtering are the caller's responsibility; see pipeline).
pub fn construct(dataset: &PanelDataset, method: MethodId) -> Result<InstrumentSeries, Error> {
    match method {
        MethodId::PrevB(b) => rules::z_prev_b(dataset, b),
        MethodId::AllPrevProp => Ok(rules::z_all_prev_prop(dataset)),
        MethodId::AllProp => Ok(rules::z_all_prop(dataset)),
        MethodId::AllDichMean => Ok(rules::z_all_dich(dataset, Center::Mean)),
        MethodId::AllDichMedian => Ok(rules::z_all_dich(dataset, Center::Median)),
        MethodId::Epp => epp::construct_epp(dataset),
        MethodId::EppRirs => epp::construct_epp_rirs(dataset),
        MethodId::Star => changepoint::construct_star(dataset),
    }
}
