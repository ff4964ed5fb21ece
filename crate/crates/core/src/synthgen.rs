//! Synthetic cohorts with a planted cross-modal signal.
//!
//! Each stay carries a latent severity `z_t`, a reflected random walk in
//! `[0, 1]`. The patient dies at the first hour `z_t` exceeds the death
//! threshold. EHR features observe `z` with a lag; informative notes observe
//! the current `z`; redundant notes repeat the EHR's lagged view; noise notes
//! carry no severity at all. Every note type has a fixed signature direction
//! in embedding space so types are distinguishable.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{
    apply_scaler, assign_charttime, fit_scaler, make_task_targets, mask_last_note, write_manifest, write_stay,
    Manifest, NoteRecord, NoteType, NoteTypeSet, Outcome, RawNote, Split, StayRecord, Task, D_EHR, D_EMB,
    N_PHENO,
};
use crate::error::{Error, Result};
use crate::seed::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Inclusive range of planned stay lengths in hours.
    pub t_range: (usize, usize),
    /// Leading EHR features that carry lagged severity.
    pub d_ehr_observed: usize,
    /// Noise on severity-carrying EHR features.
    pub noise_std: f64,
    pub informative_types: Vec<NoteType>,
    pub redundant_types: Vec<NoteType>,
    pub noise_types: Vec<NoteType>,
    /// Notes per hour, by type.
    pub note_rate_per_type: BTreeMap<NoteType, f64>,
    /// Embedding coordinates carrying severity.
    pub signal_dims: Vec<usize>,
    pub horizon_h: f64,
    pub death_threshold: f64,
    /// Hours by which the EHR (and redundant notes) lag the severity.
    pub ehr_lag_h: usize,
    /// Std of the hourly severity step.
    pub step_std: f64,
    /// Range of the initial severity.
    pub z0_range: (f64, f64),
    /// Probability that an EHR entry is missing.
    pub missing_rate: f64,
    /// Noise on severity coordinates of informative/redundant notes.
    pub note_signal_noise: f64,
    /// Per-note noise on the remaining embedding coordinates.
    pub note_noise_std: f64,
    /// Weight of the phenotype factors on the unobserved EHR features.
    pub pheno_carry: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let mut rates = BTreeMap::new();
        rates.insert(NoteType::Nursing, 0.5);
        rates.insert(NoteType::Radiology, 0.15);
        rates.insert(NoteType::Physician, 0.05);
        rates.insert(NoteType::Ecg, 0.025);
        SynthConfig {
            n_train: 500,
            n_val: 100,
            n_test: 100,
            t_range: (48, 96),
            d_ehr_observed: 8,
            noise_std: 0.45,
            informative_types: vec![NoteType::Nursing, NoteType::Radiology],
            redundant_types: vec![NoteType::Physician],
            noise_types: vec![NoteType::Ecg],
            note_rate_per_type: rates,
            signal_dims: (0..64).collect(),
            horizon_h: 24.0,
            death_threshold: 0.95,
            ehr_lag_h: 6,
            step_std: 0.05,
            z0_range: (0.05, 0.5),
            missing_rate: 0.2,
            note_signal_noise: 0.05,
            note_noise_std: 0.02,
            pheno_carry: 0.8,
            seed: 0,
        }
    }
}

/// Role of a note type in the planted signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalRole {
    Informative,
    Redundant,
    Noise,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let sets = [&self.informative_types, &self.redundant_types, &self.noise_types];
        let mut seen = NoteTypeSet::new();
        for s in sets {
            for t in s {
                if !seen.insert(*t) {
                    return bad(format!("note type {t} appears in more than one role"));
                }
            }
        }
        for t in &seen {
            match self.note_rate_per_type.get(t) {
                Some(&r) if r > 0.0 => {}
                _ => return bad(format!("note type {t} needs a positive rate")),
            }
        }
        if let Some(t) = self.note_rate_per_type.keys().find(|t| !seen.contains(t)) {
            return bad(format!("rate given for note type {t} with no role"));
        }
        if self.signal_dims.iter().any(|&d| d >= D_EMB) {
            return bad("signal_dims must lie in [0, 768)".into());
        }
        if self.t_range.0 == 0 || self.t_range.0 > self.t_range.1 {
            return bad(format!("invalid t_range {:?}", self.t_range));
        }
        if self.d_ehr_observed > D_EHR {
            return bad(format!("d_ehr_observed exceeds {D_EHR}"));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad("missing_rate must be in [0, 1)".into());
        }
        if self.step_std < 0.0 || self.noise_std < 0.0 || self.note_signal_noise < 0.0 || self.note_noise_std < 0.0 {
            return bad("noise scales must be non-negative".into());
        }
        if self.z0_range.0 > self.z0_range.1 {
            return bad("z0_range must be ordered".into());
        }
        if self.death_threshold.is_finite() && self.death_threshold <= self.z0_range.1 {
            return bad("death_threshold must exceed the initial severity range".into());
        }
        Ok(())
    }

    pub fn role(&self, t: NoteType) -> Option<SignalRole> {
        if self.informative_types.contains(&t) {
            Some(SignalRole::Informative)
        } else if self.redundant_types.contains(&t) {
            Some(SignalRole::Redundant)
        } else if self.noise_types.contains(&t) {
            Some(SignalRole::Noise)
        } else {
            None
        }
    }
}

/// Machine-readable statement of the planted signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedSignal {
    pub informative: Vec<NoteType>,
    pub redundant: Vec<NoteType>,
    pub noise: Vec<NoteType>,
    pub ehr_lag_h: usize,
    pub signal_dims: Vec<usize>,
    pub cross_modal_gain_expected: bool,
    pub notes: Vec<String>,
}

pub fn describe_planted_signal(cfg: &SynthConfig) -> PlantedSignal {
    let mut notes = Vec::new();
    let gain = !cfg.informative_types.is_empty() && cfg.ehr_lag_h > 0;
    if cfg.informative_types.is_empty() {
        notes.push("no cross-modal gain expected: no informative note types".into());
    } else if cfg.ehr_lag_h == 0 {
        notes.push("no cross-modal gain expected: EHR observes severity without lag".into());
    }
    PlantedSignal {
        informative: cfg.informative_types.clone(),
        redundant: cfg.redundant_types.clone(),
        noise: cfg.noise_types.clone(),
        ehr_lag_h: cfg.ehr_lag_h,
        signal_dims: cfg.signal_dims.clone(),
        cross_modal_gain_expected: gain,
        notes,
    }
}

/// Fixed per-cohort quantities: EHR loadings and note-type signatures.
struct Loadings {
    slope: Vec<f64>,
    offset: Vec<f64>,
    signature: BTreeMap<NoteType, Vec<f32>>,
}

fn loadings(cfg: &SynthConfig) -> Loadings {
    let mut rng = stream(cfg.seed, "loadings", 0);
    let slope = (0..D_EHR).map(|_| rng.random_range(0.5..1.5)).collect();
    let offset = (0..D_EHR).map(|_| rng.random_range(-1.0..1.0)).collect();
    let normal = Normal::new(0.0, 0.5).unwrap();
    let mut signature = BTreeMap::new();
    for t in NoteType::ALL {
        let mut r = stream(cfg.seed, "signature", t as u64);
        let mut v: Vec<f32> = (0..D_EMB).map(|_| normal.sample(&mut r) as f32).collect();
        for &d in &cfg.signal_dims {
            v[d] = 0.0;
        }
        signature.insert(t, v);
    }
    Loadings { slope, offset, signature }
}

/// Latent severity path of one stay, `len` hours long.
fn severity_walk(cfg: &SynthConfig, rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let step = Normal::new(0.0, cfg.step_std.max(1e-12)).unwrap();
    let mut z = Vec::with_capacity(len);
    let mut cur = rng.random_range(cfg.z0_range.0..=cfg.z0_range.1);
    for _ in 0..len {
        z.push(cur);
        let mut next = cur + step.sample(rng);
        // reflect into [0, 1]
        if next < 0.0 {
            next = -next;
        }
        if next > 1.0 {
            next = 2.0 - next;
        }
        cur = next.clamp(0.0, 1.0);
    }
    z
}

/// Scale of severity as written into note embeddings.
fn encode_severity(z: f64) -> f64 {
    4.0 * (z - 0.5)
}

struct GeneratedStay {
    ehr: Tensor<f32>,
    notes: Vec<RawNote>,
    outcome: Outcome,
    admit_hour: f64,
    /// Latent severity per hour (for probes).
    z: Vec<f64>,
}

fn note_embedding(
    cfg: &SynthConfig,
    load: &Loadings,
    ty: NoteType,
    z_now: f64,
    z_lagged: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    let noise = Normal::new(0.0, cfg.note_noise_std.max(1e-12)).unwrap();
    let sig_noise = Normal::new(0.0, cfg.note_signal_noise.max(1e-12)).unwrap();
    let mut v: Vec<f32> = load.signature[&ty].iter().map(|&s| s + noise.sample(rng) as f32).collect();
    let value = match cfg.role(ty) {
        Some(SignalRole::Informative) => Some(z_now),
        Some(SignalRole::Redundant) => Some(z_lagged),
        _ => None,
    };
    for &d in &cfg.signal_dims {
        v[d] = match value {
            Some(z) => (encode_severity(z) + sig_noise.sample(rng)) as f32,
            None => rng.random_range(-2.0..2.0) as f32,
        };
    }
    v
}

fn ehr_grid(cfg: &SynthConfig, load: &Loadings, z: &[f64], factors: &[f64], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let hours = z.len();
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut data = Vec::with_capacity(hours * D_EHR);
    for t in 0..hours {
        let lagged = z[t.saturating_sub(cfg.ehr_lag_h)];
        for f in 0..D_EHR {
            let v = if f < cfg.d_ehr_observed {
                load.slope[f] * lagged + load.offset[f] + cfg.noise_std * unit.sample(rng)
            } else {
                let k = f - cfg.d_ehr_observed;
                let carry = if k < N_PHENO { cfg.pheno_carry * factors[k] } else { 0.0 };
                load.offset[f] + carry + 0.6 * unit.sample(rng)
            };
            let missing = t > 0 && rng.random::<f64>() < cfg.missing_rate;
            data.push(if missing { f32::NAN } else { v as f32 });
        }
    }
    Tensor::new(vec![hours, D_EHR], data).expect("grid shape")
}

fn poisson_times(rate: f64, span: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        t += -u.ln() / rate;
        if t >= span {
            return out;
        }
        out.push(t);
    }
}

fn generate_stay(cfg: &SynthConfig, load: &Loadings, index: u64) -> GeneratedStay {
    let mut rng = stream(cfg.seed, "stay", index);
    let planned = rng.random_range(cfg.t_range.0..=cfg.t_range.1);
    let admit_hour = rng.random_range(0.0..24.0);
    let z_full = severity_walk(cfg, &mut rng, planned);
    let death = z_full.iter().skip(1).position(|&v| v > cfg.death_threshold).map(|i| i + 1);
    let hours = death.unwrap_or(planned);
    let z = z_full[..hours].to_vec();

    let unit = Normal::new(0.0, 1.0).unwrap();
    let factors: Vec<f64> = (0..N_PHENO).map(|_| unit.sample(&mut rng)).collect();
    let pheno = factors.iter().map(|&f| u8::from(f > 0.5)).collect();

    let ehr = ehr_grid(cfg, load, &z, &factors, &mut rng);

    let mut timed: Vec<(f64, RawNote)> = Vec::new();
    for (&ty, &rate) in &cfg.note_rate_per_type {
        for tau in poisson_times(rate, hours as f64, &mut rng) {
            let hour = (tau.floor() as usize).min(hours - 1);
            let z_now = z[hour];
            let z_lag = z[hour.saturating_sub(cfg.ehr_lag_h)];
            let emb = note_embedding(cfg, load, ty, z_now, z_lag, &mut rng);
            let (charttime_h, chartdate_day, effective) = if ty.is_date_only() {
                let day = ((admit_hour + tau) / 24.0).floor() as i64;
                (None, Some(day), assign_charttime(day, admit_hour).0)
            } else {
                (Some(tau), None, tau)
            };
            timed.push((
                effective,
                RawNote { charttime_h, chartdate_day, note_type: ty.name().to_string(), emb, chunks: None, chunk_tokens: None },
            ));
        }
    }
    timed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let notes = timed.into_iter().map(|(_, n)| n).collect();
    GeneratedStay {
        ehr,
        notes,
        outcome: Outcome { death_hour: death.map(|d| d as f64), pheno },
        admit_hour,
        z,
    }
}

fn split_plan(cfg: &SynthConfig) -> Vec<(Split, u64)> {
    let mut plan = Vec::new();
    let mut idx = 0u64;
    for (split, n) in [(Split::Train, cfg.n_train), (Split::Val, cfg.n_val), (Split::Test, cfg.n_test)] {
        for _ in 0..n {
            plan.push((split, idx));
            idx += 1;
        }
    }
    plan
}

/// Label prevalence per split for decompensation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceReport {
    pub split: Split,
    pub decomp_pos: usize,
    pub decomp_total: usize,
    pub ihm_pos: usize,
    pub ihm_total: usize,
}

impl PrevalenceReport {
    pub fn decomp_rate(&self) -> f64 {
        self.decomp_pos as f64 / self.decomp_total.max(1) as f64
    }
}

fn raw_to_record(n: &RawNote, admit_hour: f64, i: usize) -> NoteRecord {
    let (t, clamped) = match (n.charttime_h, n.chartdate_day) {
        (Some(t), _) => (t, false),
        (None, Some(d)) => assign_charttime(d, admit_hour),
        _ => (0.0, true),
    };
    let mut r = NoteRecord::new(t, n.note_type.parse().expect("generated type"), n.emb.clone());
    r.clamped = clamped;
    r.source = i;
    r
}

fn to_record(id: String, g: &GeneratedStay) -> StayRecord {
    let notes = g.notes.iter().enumerate().map(|(i, n)| raw_to_record(n, g.admit_hour, i)).collect();
    StayRecord { stay_id: id, ehr: g.ehr.clone(), notes, outcome: g.outcome.clone(), scaled: false }
}

fn stay_id(index: u64) -> String {
    format!("stay_{index:05}")
}

fn prevalence(split: Split, stays: &[&StayRecord]) -> PrevalenceReport {
    let mut r = PrevalenceReport { split, decomp_pos: 0, decomp_total: 0, ihm_pos: 0, ihm_total: 0 };
    for s in stays {
        let d = make_task_targets(s, Task::Decomp);
        for (y, m) in d.targets.iter().zip(&d.mask) {
            if *m {
                r.decomp_total += 1;
                r.decomp_pos += usize::from(*y > 0.5);
            }
        }
        let i = make_task_targets(s, Task::Ihm);
        if i.mask[0] {
            r.ihm_total += 1;
            r.ihm_pos += usize::from(i.targets[0] > 0.5);
        }
    }
    r
}

/// Generates the cohort in memory (raw, unscaled stays with split tags).
pub fn generate_stays(cfg: &SynthConfig) -> Result<Vec<(Split, StayRecord)>> {
    Ok(generate_raw(cfg)?.into_iter().map(|(s, id, g)| (s, to_record(id, &g))).collect())
}

/// Latent severity path of every generated stay, in `generate_stays` order.
pub fn severity_paths(cfg: &SynthConfig) -> Result<Vec<(Split, String, Vec<f64>)>> {
    Ok(generate_raw(cfg)?.into_iter().map(|(s, id, g)| (s, id, g.z)).collect())
}

fn generate_raw(cfg: &SynthConfig) -> Result<Vec<(Split, String, GeneratedStay)>> {
    cfg.validate()?;
    let load = loadings(cfg);
    let plan = split_plan(cfg);
    let out: Vec<(Split, String, GeneratedStay)> =
        plan.par_iter().map(|&(split, i)| (split, stay_id(i), generate_stay(cfg, &load, i))).collect();
    Ok(out)
}

/// Writes a cohort directory and returns per-split prevalence.
///
/// A split with zero positive decompensation labels is an error, unless
/// the death threshold is infinite (no deaths by construction).
pub fn generate_cohort(cfg: &SynthConfig, out: &Path) -> Result<Vec<PrevalenceReport>> {
    let raw = generate_raw(cfg)?;
    let records: Vec<(Split, StayRecord)> = raw.iter().map(|(s, id, g)| (*s, to_record(id.clone(), g))).collect();
    let mut reports = Vec::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let stays: Vec<&StayRecord> = records.iter().filter(|(s, _)| *s == split).map(|(_, r)| r).collect();
        if stays.is_empty() {
            continue;
        }
        reports.push(prevalence(split, &stays));
    }
    if cfg.death_threshold.is_finite() {
        if let Some(r) = reports.iter().find(|r| r.decomp_pos == 0) {
            let summary: Vec<String> = reports
                .iter()
                .map(|r| format!("{:?}: {}/{} positive", r.split, r.decomp_pos, r.decomp_total))
                .collect();
            return Err(Error::Generation(format!(
                "{:?} split has no positive decompensation labels ({})",
                r.split,
                summary.join(", ")
            )));
        }
    }

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let entries: Vec<Result<crate::data::ManifestEntry>> = raw
        .par_iter()
        .map(|(split, id, g)| write_stay(out, id, *split, &g.ehr, &g.notes, &g.outcome, Some(g.admit_hour)))
        .collect();
    let stays = entries.into_iter().collect::<Result<Vec<_>>>()?;
    write_manifest(out, &Manifest { stays })?;
    let cfg_path = out.join("synth_config.json");
    let text = serde_json::to_string_pretty(cfg).map_err(|e| Error::json("synth config", e))?;
    fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;
    let sig_path = out.join("planted_signal.json");
    let text = serde_json::to_string_pretty(&describe_planted_signal(cfg)).map_err(|e| Error::json("planted signal", e))?;
    fs::write(&sig_path, text).map_err(|e| Error::io(&sig_path, e))?;
    Ok(reports)
}

/// Samples for probing how well each view predicts current severity.
#[derive(Clone, Debug, Default)]
pub struct ProbeData {
    /// (informative-note signal coordinates, z at note hour)
    pub note_rows: Vec<(Vec<f64>, f64)>,
    /// (EHR severity features at hour t, z_t)
    pub ehr_rows: Vec<(Vec<f64>, f64)>,
}

/// Collects probe samples from a generated cohort, with missing EHR values
/// forward-filled.
pub fn probe_data(cfg: &SynthConfig) -> Result<ProbeData> {
    let raw = generate_raw(cfg)?;
    let mut out = ProbeData::default();
    for (_, _, g) in &raw {
        for n in &g.notes {
            let ty: NoteType = n.note_type.parse()?;
            if cfg.role(ty) != Some(SignalRole::Informative) {
                continue;
            }
            let Some(t) = n.charttime_h else { continue };
            let hour = (t.floor() as usize).min(g.z.len() - 1);
            out.note_rows.push((cfg.signal_dims.iter().map(|&d| n.emb[d] as f64).collect(), g.z[hour]));
        }
        let cols = cfg.d_ehr_observed;
        let mut last = vec![0f64; cols];
        for t in 0..g.z.len() {
            for (c, l) in last.iter_mut().enumerate() {
                let v = g.ehr.at(t, c);
                if !v.is_nan() {
                    *l = v as f64;
                }
            }
            out.ehr_rows.push((last.clone(), g.z[t]));
        }
    }
    Ok(out)
}

/// A stay with exactly one informative note, planted at the hour severity
/// jumps from low to high. Noise-type notes precede it and a trailing note
/// is added so that last-note masking never hides the planted one.
#[derive(Clone, Debug)]
pub struct PlantedStay {
    pub stay: StayRecord,
    /// Index into `stay.notes` of the informative note.
    pub planted_index: usize,
    pub planted_hour: f64,
}

pub fn planted_divergence_stays(cfg: &SynthConfig, n: usize, seed: u64) -> Result<Vec<PlantedStay>> {
    cfg.validate()?;
    let informative = *cfg
        .informative_types
        .first()
        .ok_or_else(|| Error::Config("no informative note type to plant".into()))?;
    let filler = cfg.noise_types.first().copied();
    let load = loadings(cfg);
    let hours = 72usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream(seed, "planted", i as u64);
        let jump_at = rng.random_range(24.0..40.0f64);
        let low = rng.random_range(0.1..0.25);
        let high = if cfg.death_threshold.is_finite() { cfg.death_threshold - 0.02 } else { 0.95 };
        let z: Vec<f64> = (0..hours).map(|t| if (t as f64) < jump_at.floor() { low } else { high }).collect();
        let unit = Normal::new(0.0, 1.0).unwrap();
        let factors: Vec<f64> = (0..N_PHENO).map(|_| unit.sample(&mut rng)).collect();
        let ehr = ehr_grid(cfg, &load, &z, &factors, &mut rng);

        let mut notes: Vec<NoteRecord> = Vec::new();
        if let Some(ty) = filler {
            for k in 0..3 {
                let t = 2.0 + k as f64 * (jump_at - 4.0) / 3.0;
                notes.push(NoteRecord::new(t, ty, note_embedding(cfg, &load, ty, low, low, &mut rng)));
            }
        }
        let planted_index = notes.len();
        notes.push(NoteRecord::new(jump_at, informative, note_embedding(cfg, &load, informative, high, low, &mut rng)));
        let tail = filler.unwrap_or(informative);
        notes.push(NoteRecord::new(hours as f64 - 0.5, tail, note_embedding(cfg, &load, tail, high, high, &mut rng)));
        for (k, note) in notes.iter_mut().enumerate() {
            note.source = k;
        }
        let stay = StayRecord {
            stay_id: format!("planted_{i:03}"),
            ehr,
            notes,
            outcome: Outcome { death_hour: None, pheno: factors.iter().map(|&f| u8::from(f > 0.5)).collect() },
            scaled: false,
        };
        out.push(PlantedStay { stay, planted_index, planted_hour: jump_at });
    }
    Ok(out)
}

/// A tiny preprocessed stay for tests and gradient checks: `hours` hourly
/// rows and notes at `note_times` (the last one masked).
pub fn toy_stay(hours: usize, note_times: &[f64], seed: u64) -> StayRecord {
    let mut rng = stream(seed, "toy", 0);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let data = (0..hours * D_EHR).map(|_| unit.sample(&mut rng) as f32).collect();
    let ehr = Tensor::new(vec![hours, D_EHR], data).expect("toy shape");
    let notes = note_times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let emb = (0..D_EMB).map(|_| unit.sample(&mut rng) as f32 * 0.5).collect();
            let mut n = NoteRecord::new(t, NoteType::ALL[i % 3], emb);
            n.source = i;
            n
        })
        .collect();
    let stay = StayRecord {
        stay_id: format!("toy_{seed}"),
        ehr,
        notes,
        outcome: Outcome { death_hour: Some(hours as f64 + 3.0), pheno: (0..N_PHENO).map(|k| (k % 2) as u8).collect() },
        scaled: false,
    };
    let stats = fit_scaler([&stay]);
    apply_scaler(mask_last_note(stay), &stats).expect("toy stay scales")
}
