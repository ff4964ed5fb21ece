//! Attention-based explanations: cross-attention heatmaps, EHR-only vs
//! cross-modal divergence reports, attention rollout and word/chunk
//! importance.
//!
//! Rollout input directory layout:
//!
//! ```text
//! layer_0.cmt, layer_1.cmt, ...   n×n or heads×n×n attention, CMT1
//! sidecar.json                    {"tokens": [...], "word_groups": [...], "chunk_tokens": [...]}
//! ```
//!
//! `word_groups[i]` is the word index of token `i`, or null for tokens that
//! belong to no word (such as the classification token).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tensor};
use crate::data::tensor_io::{read_tensor, write_tensor};
use crate::data::{NoteType, ScalerStats, StayRecord};
use crate::error::{Error, Result};
use crate::model::{predict, ModelInput, ModelParams};
use crate::synthgen::PlantedStay;

/// Default absolute probability gap that counts as a divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 0.1;
/// Row-sum tolerance for rollout input matrices.
pub const STOCHASTIC_TOL: f64 = 1e-4;

/// Indices into `stay.notes` of the notes the model sees, in matrix order.
fn visible_indices(stay: &StayRecord) -> Vec<usize> {
    stay.notes.iter().enumerate().filter(|(_, n)| n.visible).map(|(i, _)| i).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteMeta {
    pub index: usize,
    pub note_type: NoteType,
    pub charttime_h: f64,
    pub visible: bool,
}

/// Cross-attention over every note of a stay, `T_EHR×N`; invisible notes
/// have all-zero columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub stay_id: String,
    pub weights: Tensor<f32>,
    pub notes: Vec<NoteMeta>,
}

pub fn cross_attention_heatmap(stay: &StayRecord, params: &ModelParams<f32>) -> Result<Heatmap> {
    if !params.config.mode.uses_notes() {
        return Err(Error::Config(format!("a {} model has no cross-attention", params.config.mode)));
    }
    let input = ModelInput::<f32>::from_stay(stay)?;
    let (_, rec) = predict(params, &input)?;
    let visible_weights = rec.cross_attn.expect("note-reading model records cross-attention");
    let hours = stay.hours();
    let n = stay.notes.len();
    let mut weights = Tensor::zeros(&[hours, n]);
    for (k, &j) in visible_indices(stay).iter().enumerate() {
        for t in 0..hours {
            weights.set(t, j, visible_weights.at(t, k));
        }
    }
    let notes = stay
        .notes
        .iter()
        .enumerate()
        .map(|(i, n)| NoteMeta { index: i, note_type: n.note_type, charttime_h: n.charttime_h, visible: n.visible })
        .collect();
    Ok(Heatmap { stay_id: stay.stay_id.clone(), weights, notes })
}

impl Heatmap {
    /// One row per note (`index,type,charttime_h,visible,h0..h{T-1}`), so
    /// notes run down the y-axis and hours along the x-axis.
    pub fn to_csv(&self) -> String {
        let hours = self.weights.rows();
        let mut out = String::from("note,type,charttime_h,visible");
        for t in 0..hours {
            out.push_str(&format!(",h{t}"));
        }
        out.push('\n');
        for (j, m) in self.notes.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}", m.index, m.note_type, m.charttime_h, m.visible));
            for t in 0..hours {
                out.push_str(&format!(",{}", self.weights.at(t, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// Writes `cross_attention.cmt` (T×N) and `cross_attention.csv` into `dir`.
pub fn export_cross_attention(stay: &StayRecord, params: &ModelParams<f32>, dir: &Path) -> Result<Heatmap> {
    let h = cross_attention_heatmap(stay, params)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_tensor(&dir.join("cross_attention.cmt"), &h.weights)?;
    let csv = dir.join("cross_attention.csv");
    fs::write(&csv, h.to_csv()).map_err(|e| Error::io(&csv, e))?;
    Ok(h)
}

/// Rollout input: row-stochastic `n×n` layers (heads already averaged)
/// with token metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutInput {
    pub layers: Vec<Tensor<f64>>,
    pub tokens: Vec<String>,
    pub word_groups: Vec<Option<usize>>,
    pub chunk_tokens: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct Sidecar {
    tokens: Vec<String>,
    #[serde(default)]
    word_groups: Vec<Option<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    chunk_tokens: Option<Vec<usize>>,
}

fn check_stochastic(m: &Tensor<f64>, n: usize, tol: f64, what: &str) -> Result<()> {
    if m.shape() != [n, n] {
        return Err(Error::Shape(format!("{what} is {:?}, expected [{n}, {n}]", m.shape())));
    }
    for i in 0..n {
        let row = m.row(i);
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!("{what} row {i} has negative or non-finite entries")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::InvalidInput(format!("{what} row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// Averages the head axis of a `heads×n×n` tensor; passes `n×n` through.
pub fn average_heads(t: &Tensor<f32>) -> Result<Tensor<f64>> {
    match *t.shape() {
        [n, m] => Ok(Tensor::new(vec![n, m], t.data().iter().map(|&v| v as f64).collect())?),
        [h, n, m] if h > 0 => {
            let mut out = vec![0f64; n * m];
            for head in 0..h {
                for (o, &v) in out.iter_mut().zip(&t.data()[head * n * m..(head + 1) * n * m]) {
                    *o += v as f64;
                }
            }
            out.iter_mut().for_each(|v| *v /= h as f64);
            Ok(Tensor::new(vec![n, m], out)?)
        }
        _ => Err(Error::Shape(format!("attention layer of shape {:?}", t.shape()))),
    }
}

impl RolloutInput {
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if self.layers.is_empty() {
            return Err(Error::InvalidInput("rollout needs at least one layer".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            check_stochastic(l, n, STOCHASTIC_TOL, &format!("layer_{i}"))?;
        }
        if !self.word_groups.is_empty() && self.word_groups.len() != n {
            return Err(Error::Shape(format!("{} word groups for {n} tokens", self.word_groups.len())));
        }
        if let Some(c) = &self.chunk_tokens {
            if c.iter().sum::<usize>() != n || c.contains(&0) {
                return Err(Error::InvalidInput(format!("chunk token counts {c:?} do not partition {n} tokens")));
            }
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let side = dir.join("sidecar.json");
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let s: Sidecar = serde_json::from_str(&text).map_err(|e| Error::json(side.display().to_string(), e))?;
        let mut layers = Vec::new();
        loop {
            let p = dir.join(format!("layer_{}.cmt", layers.len()));
            if !p.exists() {
                break;
            }
            layers.push(average_heads(&read_tensor(&p)?)?);
        }
        let input = RolloutInput { layers, tokens: s.tokens, word_groups: s.word_groups, chunk_tokens: s.chunk_tokens };
        input.validate()?;
        Ok(input)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, l) in self.layers.iter().enumerate() {
            write_tensor(&dir.join(format!("layer_{i}.cmt")), &l.cast())?;
        }
        let side = Sidecar {
            tokens: self.tokens.clone(),
            word_groups: self.word_groups.clone(),
            chunk_tokens: self.chunk_tokens.clone(),
        };
        let path = dir.join("sidecar.json");
        let text = serde_json::to_string_pretty(&side).map_err(|e| Error::json("rollout sidecar", e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// `0.5·A + 0.5·I`, rows renormalized.
fn augment(a: &Tensor<f64>) -> Tensor<f64> {
    let n = a.rows();
    let mut out = a.map(|v| 0.5 * v);
    for i in 0..n {
        let v = out.at(i, i);
        out.set(i, i, v + 0.5);
        let s: f64 = out.row(i).iter().sum();
        for j in 0..n {
            let v = out.at(i, j);
            out.set(i, j, v / s);
        }
    }
    out
}

/// Continues a rollout: `Ã_L·…·Ã_1·prefix`.
pub fn rollout_from(prefix: &Tensor<f64>, layers: &[Tensor<f64>]) -> Result<Tensor<f64>> {
    let n = prefix.rows();
    let mut r = prefix.clone();
    for (i, a) in layers.iter().enumerate() {
        check_stochastic(a, n, STOCHASTIC_TOL, &format!("layer_{i}"))?;
        r = augment(a).matmul(&r)?;
    }
    Ok(r)
}

/// `R = Ã_L·Ã_{L−1}·…·Ã_1` over residual-augmented layers.
pub fn attention_rollout(input: &RolloutInput) -> Result<Tensor<f64>> {
    input.validate()?;
    rollout_from(&Tensor::identity(input.tokens.len()), &input.layers)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordImportance {
    /// `R[cls, ·]`.
    pub tokens: Vec<f64>,
    /// Word labels, subtokens joined with continuation markers stripped.
    pub words: Vec<String>,
    pub word_scores: Vec<f64>,
    /// Token-score sum of each chunk divided by its token count.
    pub chunk_scores: Vec<f64>,
}

/// Token, word and chunk scores from row `cls` of a rollout matrix.
pub fn word_importance(
    r: &Tensor<f64>,
    cls: usize,
    tokens: &[String],
    word_groups: &[Option<usize>],
    chunk_tokens: Option<&[usize]>,
) -> Result<WordImportance> {
    let n = r.cols();
    if cls >= r.rows() {
        return Err(Error::InvalidInput(format!("cls index {cls} out of range for {} rows", r.rows())));
    }
    if word_groups.len() != n || tokens.len() != n {
        return Err(Error::Shape(format!("{} tokens and {} word groups for {n} columns", tokens.len(), word_groups.len())));
    }
    let row = r.row(cls).to_vec();
    let n_words = word_groups.iter().flatten().map(|&w| w + 1).max().unwrap_or(0);
    let mut word_scores = vec![0.0; n_words];
    let mut words = vec![String::new(); n_words];
    let mut sizes = vec![0usize; n_words];
    for (i, g) in word_groups.iter().enumerate() {
        if let Some(w) = *g {
            word_scores[w] += row[i];
            words[w].push_str(tokens[i].trim_start_matches("##"));
            sizes[w] += 1;
        }
    }
    if let Some(w) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidInput(format!("word {w} has no tokens")));
    }
    let all = [n];
    let chunks = chunk_tokens.unwrap_or(&all);
    if chunks.iter().sum::<usize>() != n || chunks.contains(&0) {
        return Err(Error::InvalidInput(format!("chunk token counts {chunks:?} do not partition {n} tokens")));
    }
    let mut chunk_scores = Vec::with_capacity(chunks.len());
    let mut start = 0;
    for &c in chunks {
        chunk_scores.push(row[start..start + c].iter().sum::<f64>() / c as f64);
        start += c;
    }
    Ok(WordImportance { tokens: row, words, word_scores, chunk_scores })
}

/// One hour where the two models disagree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub hour: usize,
    /// `p_cross − p_ehr`.
    pub delta: f64,
    /// Index into the stay's notes of the most-attended visible note.
    pub note_index: Option<usize>,
    pub note_type: Option<NoteType>,
    pub note_charttime_h: Option<f64>,
    /// Largest cross-attention weight in the row.
    pub max_weight: f64,
    /// Entropy (nats) of the cross-attention row.
    pub entropy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub stay_id: String,
    pub threshold: f64,
    pub p_ehr: Vec<f64>,
    pub p_cross: Vec<f64>,
    pub divergences: Vec<Divergence>,
}

impl DivergenceReport {
    pub fn first(&self) -> Option<&Divergence> {
        self.divergences.first()
    }
}

fn row_stats(row: &[f32]) -> (Option<usize>, f64, f64) {
    let mut best: Option<(usize, f32)> = None;
    let mut entropy = 0.0;
    for (k, &w) in row.iter().enumerate() {
        if w > 0.0 {
            entropy -= w as f64 * (w as f64).ln();
        }
        if w > 0.0 && best.is_none_or(|(_, b)| w > b) {
            best = Some((k, w));
        }
    }
    (best.map(|b| b.0), best.map_or(0.0, |b| b.1 as f64), entropy)
}

/// Hourly decompensation probabilities of both models with dropout off;
/// hours where they differ by more than `threshold` are attributed to the
/// argmax of the cross-attention row.
pub fn divergence_report(
    stay: &StayRecord,
    ehr: &ModelParams<f32>,
    cross: &ModelParams<f32>,
    threshold: f64,
) -> Result<DivergenceReport> {
    let input = ModelInput::<f32>::from_stay(stay)?;
    let (le, _) = predict(ehr, &input)?;
    let (lc, rec) = predict(cross, &input)?;
    if le.cols() != 1 || lc.cols() != 1 {
        return Err(Error::Config("divergence reports need single-output models".into()));
    }
    let p_ehr: Vec<f64> = le.data().iter().map(|&z| sigmoid(z as f64)).collect();
    let p_cross: Vec<f64> = lc.data().iter().map(|&z| sigmoid(z as f64)).collect();
    let vis = visible_indices(stay);
    let mut divergences = Vec::new();
    for t in 0..stay.hours() {
        let delta = p_cross[t] - p_ehr[t];
        if delta.abs() <= threshold {
            continue;
        }
        let (arg, max_weight, entropy) = match &rec.cross_attn {
            Some(a) if a.cols() > 0 => row_stats(a.row(t)),
            _ => (None, 0.0, 0.0),
        };
        let note_index = arg.map(|k| vis[k]);
        divergences.push(Divergence {
            hour: t,
            delta,
            note_index,
            note_type: note_index.map(|j| stay.notes[j].note_type),
            note_charttime_h: note_index.map(|j| stay.notes[j].charttime_h),
            max_weight,
            entropy,
        });
    }
    Ok(DivergenceReport { stay_id: stay.stay_id.clone(), threshold, p_ehr, p_cross, divergences })
}

/// How often the first divergence follows the planted note and is
/// attributed to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionSummary {
    pub stays: usize,
    pub hits: usize,
    /// Stays with no divergence at all.
    pub silent: usize,
    pub mean_max_weight: f64,
}

impl AttributionSummary {
    pub fn rate(&self) -> f64 {
        self.hits as f64 / self.stays.max(1) as f64
    }
}

pub fn planted_attribution(
    planted: &[PlantedStay],
    stats: &ScalerStats,
    ehr: &ModelParams<f32>,
    cross: &ModelParams<f32>,
    threshold: f64,
) -> Result<AttributionSummary> {
    let mut s = AttributionSummary { stays: planted.len(), hits: 0, silent: 0, mean_max_weight: 0.0 };
    let mut weights = Vec::new();
    for p in planted {
        let stay = crate::data::prepare_stay(p.stay.clone(), stats, None)?;
        let report = divergence_report(&stay, ehr, cross, threshold)?;
        match report.first() {
            None => s.silent += 1,
            Some(d) => {
                weights.push(d.max_weight);
                if d.hour as f64 >= p.planted_hour && d.note_index == Some(p.planted_index) {
                    s.hits += 1;
                }
            }
        }
    }
    if !weights.is_empty() {
        s.mean_max_weight = weights.iter().sum::<f64>() / weights.len() as f64;
    }
    Ok(s)
}

/// Writes `report` as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).and_then(|_| f.write_all(b"\n")).map_err(|e| Error::io(path, e))
}
