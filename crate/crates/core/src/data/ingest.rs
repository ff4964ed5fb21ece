//! Cohort directory layout:
//!
//! ```text
//! root/manifest.json        {"stays":[{"id","split","ehr","notes","outcome"}...]}
//! <stay>/ehr.cmt            CMT1 tensor, T×42, NaN = missing
//! <stay>/notes.jsonl        one note per line
//! <stay>/outcome.json       {"death_hour": number|null, "pheno": [25 of 0|1]}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::note::{chunk_mean, NoteRecord, NoteType};
use super::stay::{Outcome, StayRecord};
use super::tensor_io::{read_tensor, write_tensor};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub ehr: String,
    pub notes: String,
    pub outcome: String,
    /// Hour of day (0–24) at ICU admission; used to place date-only notes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admit_hour: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stays: Vec<ManifestEntry>,
}

/// One line of `notes.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawNote {
    pub charttime_h: Option<f64>,
    pub chartdate_day: Option<i64>,
    #[serde(rename = "type")]
    pub note_type: String,
    pub emb: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunks: Option<Vec<Vec<f32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_tokens: Option<Vec<u32>>,
}

/// Places a date-only note at 24:00 of its chart date, in hours since
/// admission. `day` counts calendar days from the admission day.
///
/// Dates before the admission day clamp to 0 and return `true` as a flag.
pub fn assign_charttime(day: i64, admit_hour_of_day: f64) -> (f64, bool) {
    if day < 0 {
        return (0.0, true);
    }
    ((day + 1) as f64 * 24.0 - admit_hour_of_day, false)
}

/// A validated cohort held in memory.
#[derive(Clone, Debug)]
pub struct Cohort {
    pub root: PathBuf,
    pub manifest: Manifest,
    /// Accepted stays in manifest order.
    pub stays: Vec<(Split, StayRecord)>,
    /// Stays excluded for having no notes at all.
    pub dropped_no_notes: usize,
    /// Stays rejected by validation, with the reason.
    pub rejected: Vec<(String, String)>,
}

impl Cohort {
    pub fn split(&self, which: Split) -> Vec<&StayRecord> {
        self.stays.iter().filter(|(s, _)| *s == which).map(|(_, r)| r).collect()
    }

    pub fn get(&self, id: &str) -> Option<&StayRecord> {
        self.stays.iter().map(|(_, r)| r).find(|r| r.stay_id == id)
    }

    /// Note counts per type over the training split, before masking.
    pub fn train_type_counts(&self) -> BTreeMap<NoteType, usize> {
        type_counts(self.split(Split::Train))
    }
}

pub fn type_counts<'a>(stays: impl IntoIterator<Item = &'a StayRecord>) -> BTreeMap<NoteType, usize> {
    let mut counts = BTreeMap::new();
    for s in stays {
        for n in &s.notes {
            *counts.entry(n.note_type).or_insert(0) += 1;
        }
    }
    counts
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join("manifest.json");
    if !path.is_file() {
        return Err(Error::NoManifest(root.to_path_buf()));
    }
    let m: Manifest = read_json(&path)?;
    let mut seen = HashSet::new();
    for e in &m.stays {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::InvalidInput(format!("stay {} listed twice in manifest", e.id)));
        }
    }
    Ok(m)
}

fn parse_note(raw: RawNote, admit_hour: f64, index: usize) -> std::result::Result<NoteRecord, String> {
    let note_type: NoteType = raw.note_type.parse().map_err(|e: Error| e.to_string())?;
    let (charttime_h, clamped) = match (raw.charttime_h, raw.chartdate_day) {
        (Some(t), _) => (t, false),
        (None, Some(day)) => assign_charttime(day, admit_hour),
        (None, None) => return Err(format!("note {index} has neither charttime_h nor chartdate_day")),
    };
    let mut n = NoteRecord::new(charttime_h, note_type, raw.emb);
    n.clamped = clamped;
    n.source = index;
    n.chunk_embeddings = raw.chunks;
    n.chunk_token_counts = raw.chunk_tokens;
    n.validate().map_err(|e| format!("note {index}: {e}"))?;
    Ok(n)
}

pub fn read_notes(path: &Path, admit_hour: f64) -> std::result::Result<Vec<NoteRecord>, String> {
    let f = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut notes = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawNote = serde_json::from_str(&line).map_err(|e| format!("notes line {}: {e}", i + 1))?;
        notes.push(parse_note(raw, admit_hour, notes.len())?);
    }
    if notes.windows(2).any(|w| w[1].charttime_h < w[0].charttime_h) {
        return Err("notes are not sorted by charttime".into());
    }
    Ok(notes)
}

enum Loaded {
    Ok(StayRecord),
    NoNotes,
    Rejected(String),
}

fn load_entry(root: &Path, e: &ManifestEntry) -> Loaded {
    let run = || -> std::result::Result<StayRecord, String> {
        let ehr = read_tensor(&root.join(&e.ehr)).map_err(|x| x.to_string())?;
        let notes = read_notes(&root.join(&e.notes), e.admit_hour.unwrap_or(0.0))?;
        let outcome: Outcome = read_json(&root.join(&e.outcome)).map_err(|x| x.to_string())?;
        let stay = StayRecord { stay_id: e.id.clone(), ehr, notes, outcome, scaled: false };
        let issues = stay.lint();
        if !issues.is_empty() {
            return Err(issues.join("; "));
        }
        Ok(stay)
    };
    match run() {
        Ok(s) if s.notes.is_empty() => Loaded::NoNotes,
        Ok(s) => Loaded::Ok(s),
        Err(reason) => Loaded::Rejected(reason),
    }
}

/// Reads and validates every stay listed in `root/manifest.json`.
///
/// Stays without notes are dropped and counted; invalid stays are rejected
/// individually with a reason instead of failing the whole load.
pub fn load_cohort(root: &Path) -> Result<Cohort> {
    let manifest = read_manifest(root)?;
    let loaded: Vec<Loaded> = manifest.stays.par_iter().map(|e| load_entry(root, e)).collect();
    let mut stays = Vec::new();
    let mut rejected = Vec::new();
    let mut dropped = 0;
    for (e, l) in manifest.stays.iter().zip(loaded) {
        match l {
            Loaded::Ok(s) => stays.push((e.split, s)),
            Loaded::NoNotes => dropped += 1,
            Loaded::Rejected(r) => {
                log::warn!("rejecting stay {}: {}", e.id, r);
                rejected.push((e.id.clone(), r));
            }
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} stays without notes");
    }
    Ok(Cohort { root: root.to_path_buf(), manifest, stays, dropped_no_notes: dropped, rejected })
}

/// Writes one stay's files under `root/<id>/` and returns its manifest entry.
pub fn write_stay(
    root: &Path,
    id: &str,
    split: Split,
    ehr: &Tensor<f32>,
    notes: &[RawNote],
    outcome: &Outcome,
    admit_hour: Option<f64>,
) -> Result<ManifestEntry> {
    let dir = root.join(id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_tensor(&dir.join("ehr.cmt"), ehr)?;

    let np = dir.join("notes.jsonl");
    let f = fs::File::create(&np).map_err(|e| Error::io(&np, e))?;
    let mut w = BufWriter::new(f);
    for n in notes {
        serde_json::to_writer(&mut w, n).map_err(|e| Error::json("notes", e))?;
        w.write_all(b"\n").map_err(|e| Error::io(&np, e))?;
    }
    w.flush().map_err(|e| Error::io(&np, e))?;

    let op = dir.join("outcome.json");
    let text = serde_json::to_string(outcome).map_err(|e| Error::json("outcome", e))?;
    fs::write(&op, text).map_err(|e| Error::io(&op, e))?;

    Ok(ManifestEntry {
        id: id.to_string(),
        split,
        ehr: format!("{id}/ehr.cmt"),
        notes: format!("{id}/notes.jsonl"),
        outcome: format!("{id}/outcome.json"),
        admit_hour,
    })
}

pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    let path = root.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::json("manifest", e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Raw line for a note record with an exact charttime.
pub fn raw_from_record(n: &NoteRecord) -> RawNote {
    RawNote {
        charttime_h: Some(n.charttime_h),
        chartdate_day: None,
        note_type: n.note_type.name().to_string(),
        emb: n.embedding.clone(),
        chunks: n.chunk_embeddings.clone(),
        chunk_tokens: n.chunk_token_counts.clone(),
    }
}

/// Mean-of-chunks embedding for a raw note built from chunks.
pub fn raw_with_chunks(
    charttime_h: Option<f64>,
    chartdate_day: Option<i64>,
    note_type: NoteType,
    chunks: Vec<Vec<f32>>,
    chunk_tokens: Vec<u32>,
) -> RawNote {
    RawNote {
        charttime_h,
        chartdate_day,
        note_type: note_type.name().to_string(),
        emb: chunk_mean(&chunks),
        chunks: Some(chunks),
        chunk_tokens: Some(chunk_tokens),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::note::D_EMB;
    use crate::data::stay::{D_EHR, N_PHENO};

    #[test]
    fn end_of_day_rule() {
        assert_eq!(assign_charttime(0, 8.0), (16.0, false));
        assert_eq!(assign_charttime(1, 8.0), (40.0, false));
        assert_eq!(assign_charttime(-1, 8.0), (0.0, true));
    }

    #[test]
    fn empty_dir_has_no_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_cohort(dir.path()).unwrap_err();
        assert!(matches!(err, Error::NoManifest(_)));
        assert!(err.to_string().contains("no manifest"));
    }

    fn raw(t: f64, ty: &str) -> RawNote {
        RawNote {
            charttime_h: Some(t),
            chartdate_day: None,
            note_type: ty.into(),
            emb: vec![0.1; D_EMB],
            chunks: None,
            chunk_tokens: None,
        }
    }

    fn outcome() -> Outcome {
        Outcome { death_hour: None, pheno: vec![0; N_PHENO] }
    }

    #[test]
    fn fixture_cohort_drops_noteless_stays() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let ehr = Tensor::zeros(&[4, D_EHR]);
        let mut m = Manifest::default();
        m.stays.push(write_stay(root, "a", Split::Train, &ehr, &[raw(1.0, "Nursing")], &outcome(), None).unwrap());
        m.stays.push(write_stay(root, "b", Split::Val, &ehr, &[], &outcome(), None).unwrap());
        let dated = RawNote { charttime_h: None, chartdate_day: Some(0), ..raw(0.0, "ECG") };
        m.stays.push(write_stay(root, "c", Split::Test, &ehr, &[raw(1.0, "Radiology"), dated], &outcome(), Some(8.0)).unwrap());
        write_manifest(root, &m).unwrap();

        let c = load_cohort(root).unwrap();
        assert_eq!(c.stays.len(), 2);
        assert_eq!(c.dropped_no_notes, 1);
        assert!(c.rejected.is_empty());
        assert_eq!(c.get("c").unwrap().notes[1].charttime_h, 16.0);
    }

    #[test]
    fn bad_stays_are_rejected_individually() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let ehr = Tensor::zeros(&[4, D_EHR]);
        let mut m = Manifest::default();
        m.stays.push(write_stay(root, "ok", Split::Train, &ehr, &[raw(1.0, "Nursing")], &outcome(), None).unwrap());
        m.stays.push(write_stay(root, "unknown", Split::Train, &ehr, &[raw(1.0, "Dentistry")], &outcome(), None).unwrap());
        m.stays.push(
            write_stay(root, "unsorted", Split::Train, &ehr, &[raw(5.0, "Nursing"), raw(1.0, "Nursing")], &outcome(), None)
                .unwrap(),
        );
        m.stays.push(write_stay(root, "header", Split::Train, &ehr, &[raw(1.0, "Nursing")], &outcome(), None).unwrap());
        fs::write(root.join("header/ehr.cmt"), b"CMT9junk").unwrap();
        write_manifest(root, &m).unwrap();

        let c = load_cohort(root).unwrap();
        assert_eq!(c.stays.len(), 1);
        let ids: Vec<&str> = c.rejected.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["unknown", "unsorted", "header"]);
        assert!(c.rejected[0].1.contains("unknown note type"));
        assert!(c.rejected[1].1.contains("sorted"));
        assert!(c.rejected[2].1.contains("magic"));
    }
}
