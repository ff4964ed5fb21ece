use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Width of a note embedding.
pub const D_EMB: usize = 768;
/// Note feature width: embedding plus entry time.
pub const D_CN: usize = D_EMB + 1;

/// Clinical note categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NoteType {
    Nursing,
    Radiology,
    Physician,
    Ecg,
    DischargeSummary,
    Echo,
    Respiratory,
    Nutrition,
    General,
    RehabServices,
    SocialWork,
    CaseManagement,
    Pharmacy,
    Consult,
}

pub type NoteTypeSet = BTreeSet<NoteType>;

impl NoteType {
    pub const ALL: [NoteType; 14] = [
        NoteType::Nursing,
        NoteType::Radiology,
        NoteType::Physician,
        NoteType::Ecg,
        NoteType::DischargeSummary,
        NoteType::Echo,
        NoteType::Respiratory,
        NoteType::Nutrition,
        NoteType::General,
        NoteType::RehabServices,
        NoteType::SocialWork,
        NoteType::CaseManagement,
        NoteType::Pharmacy,
        NoteType::Consult,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoteType::Nursing => "Nursing",
            NoteType::Radiology => "Radiology",
            NoteType::Physician => "Physician",
            NoteType::Ecg => "ECG",
            NoteType::DischargeSummary => "Discharge summary",
            NoteType::Echo => "Echo",
            NoteType::Respiratory => "Respiratory",
            NoteType::Nutrition => "Nutrition",
            NoteType::General => "General",
            NoteType::RehabServices => "Rehab Services",
            NoteType::SocialWork => "Social Work",
            NoteType::CaseManagement => "Case Management",
            NoteType::Pharmacy => "Pharmacy",
            NoteType::Consult => "Consult",
        }
    }

    /// Types recorded with a chart date only; they get an end-of-day time.
    pub fn is_date_only(self) -> bool {
        matches!(self, NoteType::Ecg | NoteType::Echo | NoteType::DischargeSummary)
    }

    pub fn all() -> NoteTypeSet {
        Self::ALL.into_iter().collect()
    }
}

impl fmt::Display for NoteType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoteType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let key = s.trim();
        NoteType::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(key))
            .ok_or_else(|| Error::InvalidInput(format!("unknown note type {s:?}")))
    }
}

impl Serialize for NoteType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for NoteType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One clinical note as consumed by the model.
#[derive(Clone, Debug, PartialEq)]
pub struct NoteRecord {
    /// Hours since ICU admission.
    pub charttime_h: f64,
    pub note_type: NoteType,
    pub embedding: Vec<f32>,
    pub chunk_embeddings: Option<Vec<Vec<f32>>>,
    pub chunk_token_counts: Option<Vec<u32>>,
    pub visible: bool,
    /// Set when a date-only timestamp fell before admission and was clamped.
    pub clamped: bool,
    /// Index of the originating note; chunk-level records share it.
    pub source: usize,
    /// Standard-scaled entry time, present once a scaler was applied.
    pub time_feature: Option<f32>,
}

impl NoteRecord {
    pub fn new(charttime_h: f64, note_type: NoteType, embedding: Vec<f32>) -> Self {
        NoteRecord {
            charttime_h,
            note_type,
            embedding,
            chunk_embeddings: None,
            chunk_token_counts: None,
            visible: true,
            clamped: false,
            source: 0,
            time_feature: None,
        }
    }

    /// Checks the record's own invariants.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.charttime_h >= 0.0) || !self.charttime_h.is_finite() {
            return Err(format!("charttime {} is not a non-negative hour", self.charttime_h));
        }
        if self.embedding.len() != D_EMB {
            return Err(format!("embedding has {} entries, expected {D_EMB}", self.embedding.len()));
        }
        if self.embedding.iter().any(|v| !v.is_finite()) {
            return Err("embedding has non-finite entries".into());
        }
        if let Some(chunks) = &self.chunk_embeddings {
            if chunks.is_empty() {
                return Err("chunk list is empty".into());
            }
            if chunks.iter().any(|c| c.len() != D_EMB) {
                return Err("chunk embedding of wrong width".into());
            }
            let mean = chunk_mean(chunks);
            let tol = 1e-5f32;
            if mean.iter().zip(&self.embedding).any(|(a, b)| (a - b).abs() > tol * (1.0 + b.abs())) {
                return Err("embedding is not the mean of its chunks".into());
            }
            if let Some(counts) = &self.chunk_token_counts {
                if counts.len() != chunks.len() {
                    return Err("chunk token counts do not match chunk count".into());
                }
            }
        }
        if let Some(counts) = &self.chunk_token_counts {
            if counts.iter().any(|&c| c == 0) {
                return Err("chunk token counts must be positive".into());
            }
        }
        Ok(())
    }
}

pub fn chunk_mean(chunks: &[Vec<f32>]) -> Vec<f32> {
    let mut acc = vec![0f64; D_EMB];
    for c in chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a += v as f64;
        }
    }
    acc.iter().map(|a| (a / chunks.len() as f64) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_name() {
        for t in NoteType::ALL {
            assert_eq!(t.name().parse::<NoteType>().unwrap(), t);
        }
        assert_eq!("discharge SUMMARY".parse::<NoteType>().unwrap(), NoteType::DischargeSummary);
        assert!("Dentistry".parse::<NoteType>().is_err());
    }

    #[test]
    fn serde_uses_display_name() {
        let s = serde_json::to_string(&NoteType::SocialWork).unwrap();
        assert_eq!(s, "\"Social Work\"");
        let back: NoteType = serde_json::from_str(&s).unwrap();
        assert_eq!(back, NoteType::SocialWork);
    }

    #[test]
    fn validate_checks_chunk_mean() {
        let mut n = NoteRecord::new(1.0, NoteType::Nursing, vec![0.5; D_EMB]);
        n.chunk_embeddings = Some(vec![vec![0.0; D_EMB], vec![1.0; D_EMB]]);
        n.chunk_token_counts = Some(vec![128, 40]);
        assert!(n.validate().is_ok());
        n.embedding[3] = 0.9;
        assert!(n.validate().is_err());
    }

    #[test]
    fn validate_rejects_short_embedding() {
        let n = NoteRecord::new(1.0, NoteType::Nursing, vec![0.5; 10]);
        assert!(n.validate().is_err());
    }
}
