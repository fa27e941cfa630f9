//! Run manifests.
//!
//! Every command writes a `manifest.json` describing what it ran: inputs are
//! identified by a SHA-256 digest, outputs embed the same digest in their
//! header line, and re-running with identical inputs rewrites identical
//! bytes. Wall-clock timing is deliberately absent (it would break that
//! invariant); durations go to stderr instead.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use prefiv::data::CcMode;
use prefiv::methods::MethodId;
use prefiv::pipeline::{CovariateSet, MethodRequirements};
use prefiv::Error;

/// Hex SHA-256 over the given parts, length-prefixed so concatenation
/// boundaries cannot collide.
pub fn digest_parts(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let out = hasher.finalize();
    let mut hex = String::with_capacity(out.len() * 2);
    for byte in out {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// The data-preparation rules a method ran under.
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct MethodEntry {
    pub method: String,
    pub n_j_min: usize,
    pub complete_case: String,
    pub covariates: String,
}

impl MethodEntry {
    pub fn for_method(method: MethodId) -> Self {
        let req = MethodRequirements::for_method(method);
        MethodEntry {
            method: method.to_string(),
            n_j_min: req.n_j_min,
            complete_case: match req.cc_mode {
                CcMode::OutcomeOnly => "outcome_only".into(),
                CcMode::OutcomeAndCovariates => "outcome_and_covariates".into(),
            },
            covariates: match req.covariates {
                CovariateSet::All => "all".into(),
                CovariateSet::ObservedOnly => "observed_only".into(),
            },
        }
    }
}

/// What a run was: the command, its inputs (by digest), and the settings
/// that shaped the estimates.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub digest: String,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub link: Option<String>,
    pub se_mode: String,
    pub cells: Vec<String>,
    pub methods: Vec<MethodEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub coefficient_overrides: Vec<String>,
    pub calibrated: bool,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), Error> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Internal(format!("manifest serialization: {e}")))?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_changes_with_any_byte_and_with_boundaries() {
        let a = digest_parts(&[b"config", b"flags"]);
        assert_eq!(a.len(), 64);
        assert_eq!(a, digest_parts(&[b"config", b"flags"]));
        assert_ne!(a, digest_parts(&[b"confih", b"flags"]));
        // Same bytes, different split: still distinct.
        assert_ne!(a, digest_parts(&[b"conf", b"igflags"]));
    }

    #[test]
    fn method_entries_mirror_the_preparation_rules() {
        let epp = MethodEntry::for_method(MethodId::Epp);
        assert_eq!(epp.n_j_min, 2);
        assert_eq!(epp.complete_case, "outcome_only");
        assert_eq!(epp.covariates, "observed_only");
        let prev5 = MethodEntry::for_method(MethodId::PrevB(5));
        assert_eq!(prev5.n_j_min, 6);
        assert_eq!(prev5.complete_case, "outcome_and_covariates");
        let star = MethodEntry::for_method(MethodId::Star);
        assert_eq!(star.n_j_min, 5);
        assert_eq!(star.covariates, "all");
    }

    #[test]
    fn manifest_bytes_are_deterministic() {
        let manifest = RunManifest {
            command: "simulate".into(),
            version: "0.1.0".into(),
            digest: "abc".into(),
            seed: Some(7),
            reps: Some(10),
            link: Some("logit".into()),
            se_mode: "naive".into(),
            cells: vec!["A/n24/none".into()],
            methods: vec![MethodEntry::for_method(MethodId::PrevB(1))],
            coefficient_overrides: vec![],
            calibrated: false,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        manifest.write(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        manifest.write(&path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
        let text = String::from_utf8(first).unwrap();
        assert!(text.contains("\"digest\": \"abc\""));
        assert!(!text.contains("coefficient_overrides"));
        assert!(!text.to_lowercase().contains("time"));
    }
}
