use serde::{Deserialize, Serialize};

use super::note::{NoteRecord, D_EMB};
use crate::autodiff::Tensor;

/// EHR features per hour after one-hot encoding.
pub const D_EHR: usize = 42;
/// Phenotype conditions.
pub const N_PHENO: usize = 25;

/// Raw outcome annotations, as stored in `outcome.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub death_hour: Option<f64>,
    pub pheno: Vec<u8>,
}

/// One ICU stay.
#[derive(Clone, Debug, PartialEq)]
pub struct StayRecord {
    pub stay_id: String,
    /// `T×42` hourly grid; NaN marks missing values before imputation.
    pub ehr: Tensor<f32>,
    /// Sorted by `charttime_h` (stable).
    pub notes: Vec<NoteRecord>,
    pub outcome: Outcome,
    /// Set once a scaler has been applied.
    pub scaled: bool,
}

impl StayRecord {
    pub fn hours(&self) -> usize {
        self.ehr.rows()
    }

    pub fn visible_notes(&self) -> impl Iterator<Item = &NoteRecord> {
        self.notes.iter().filter(|n| n.visible)
    }

    /// Checks the stay's structural invariants; returns every violation.
    pub fn lint(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.ehr.shape().len() != 2 || self.ehr.cols() != D_EHR {
            issues.push(format!("ehr shape {:?}, expected [T, {D_EHR}]", self.ehr.shape()));
        }
        if self.ehr.rows() == 0 {
            issues.push("ehr has no hours".into());
        }
        if self.scaled && self.ehr.data().iter().any(|v| !v.is_finite()) {
            issues.push("non-finite EHR value after preprocessing".into());
        }
        if self.notes.windows(2).any(|w| w[1].charttime_h < w[0].charttime_h) {
            issues.push("notes are not sorted by charttime".into());
        }
        for (i, n) in self.notes.iter().enumerate() {
            if let Err(e) = n.validate() {
                issues.push(format!("note {i}: {e}"));
            }
            if self.scaled && !n.time_feature.is_some_and(f32::is_finite) {
                issues.push(format!("note {i}: missing scaled entry time"));
            }
        }
        if self.outcome.pheno.len() != N_PHENO || self.outcome.pheno.iter().any(|&p| p > 1) {
            issues.push(format!("pheno must be {N_PHENO} binary flags"));
        }
        if let Some(d) = self.outcome.death_hour {
            if !(d >= 0.0) {
                issues.push(format!("death hour {d} is negative"));
            }
        }
        issues
    }
}

/// Zero-embedding helper used by tests and fixtures.
pub fn blank_embedding() -> Vec<f32> {
    vec![0.0; D_EMB]
}
