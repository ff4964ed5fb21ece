//! Forward imputation, standard scaling, note-type filtering, last-note
//! masking and note-matrix assembly.

use serde::{Deserialize, Serialize};

use super::note::{NoteTypeSet, D_CN, D_EMB};
use super::stay::{StayRecord, D_EHR};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Floor applied to standard deviations before dividing.
pub const STD_FLOOR: f64 = 1e-6;

/// Carries each column's last observed value forward.
///
/// Entries before a column's first observation take `leading_fill[col]`.
pub fn forward_impute(ehr: &Tensor<f32>, leading_fill: &[f32]) -> Tensor<f32> {
    let (rows, cols) = (ehr.rows(), ehr.cols());
    let mut out = ehr.clone();
    let data = out.data_mut();
    for c in 0..cols {
        let mut last = leading_fill.get(c).copied().unwrap_or(0.0);
        for r in 0..rows {
            let v = &mut data[r * cols + c];
            if v.is_nan() {
                *v = last;
            } else {
                last = *v;
            }
        }
    }
    out
}

/// Per-feature statistics fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub ehr_mean: Vec<f64>,
    pub ehr_std: Vec<f64>,
    pub time_mean: f64,
    pub time_std: f64,
}

/// Population mean/std over observed values of every training stay.
///
/// EHR statistics ignore missing entries; the entry-time statistics use
/// every note's `charttime_h`.
pub fn fit_scaler<'a>(train: impl IntoIterator<Item = &'a StayRecord>) -> ScalerStats {
    let mut sum = vec![0f64; D_EHR];
    let mut sq = vec![0f64; D_EHR];
    let mut cnt = vec![0usize; D_EHR];
    let (mut ts, mut tsq, mut tn) = (0f64, 0f64, 0usize);
    let mut stays: Vec<&StayRecord> = train.into_iter().collect();
    stays.sort_by(|a, b| a.stay_id.cmp(&b.stay_id));
    for s in stays {
        let cols = s.ehr.cols().min(D_EHR);
        for r in 0..s.ehr.rows() {
            for c in 0..cols {
                let v = s.ehr.at(r, c);
                if !v.is_nan() {
                    sum[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                    cnt[c] += 1;
                }
            }
        }
        for n in &s.notes {
            ts += n.charttime_h;
            tsq += n.charttime_h * n.charttime_h;
            tn += 1;
        }
    }
    let moments = |s: f64, q: f64, n: usize| -> (f64, f64) {
        if n == 0 {
            return (0.0, 0.0);
        }
        let mean = s / n as f64;
        let var = (q / n as f64 - mean * mean).max(0.0);
        (mean, var.sqrt())
    };
    let (ehr_mean, ehr_std) = (0..D_EHR).map(|c| moments(sum[c], sq[c], cnt[c])).unzip();
    let (time_mean, time_std) = moments(ts, tsq, tn);
    ScalerStats { ehr_mean, ehr_std, time_mean, time_std }
}

impl ScalerStats {
    pub fn scale_ehr(&self, col: usize, v: f32) -> f32 {
        ((v as f64 - self.ehr_mean[col]) / self.ehr_std[col].max(STD_FLOOR)) as f32
    }

    pub fn scale_time(&self, hours: f64) -> f32 {
        ((hours - self.time_mean) / self.time_std.max(STD_FLOOR)) as f32
    }
}

/// Imputes and scales the EHR grid and sets every note's scaled entry time.
///
/// Applying a scaler twice is rejected.
pub fn apply_scaler(mut stay: StayRecord, stats: &ScalerStats) -> Result<StayRecord> {
    if stay.scaled {
        return Err(Error::InvalidInput(format!("stay {} is already scaled", stay.stay_id)));
    }
    if stay.ehr.cols() != D_EHR || stats.ehr_mean.len() != D_EHR {
        return Err(Error::Shape(format!(
            "stay {} has {} EHR features, scaler has {}",
            stay.stay_id,
            stay.ehr.cols(),
            stats.ehr_mean.len()
        )));
    }
    let fill: Vec<f32> = stats.ehr_mean.iter().map(|&m| m as f32).collect();
    let mut ehr = forward_impute(&stay.ehr, &fill);
    let cols = ehr.cols();
    for (i, v) in ehr.data_mut().iter_mut().enumerate() {
        let c = i % cols;
        // leading fill equals the mean, which must land on exactly zero
        *v = if *v == fill[c] { 0.0 } else { stats.scale_ehr(c, *v) };
    }
    stay.ehr = ehr;
    for n in &mut stay.notes {
        n.time_feature = Some(stats.scale_time(n.charttime_h));
    }
    stay.scaled = true;
    Ok(stay)
}

/// Keeps only notes whose type is in `allowed`. Visibility is reset so
/// last-note masking can be recomputed on what survives.
pub fn filter_note_types(mut stay: StayRecord, allowed: &NoteTypeSet) -> StayRecord {
    stay.notes.retain(|n| allowed.contains(&n.note_type));
    for n in &mut stay.notes {
        n.visible = true;
    }
    stay
}

/// Hides the chronologically last note (and every chunk record sharing its
/// source). Ties on time resolve to the latest in input order.
pub fn mask_last_note(mut stay: StayRecord) -> StayRecord {
    if let Some(last) = stay.notes.last() {
        let src = last.source;
        let t = last.charttime_h;
        for n in stay.notes.iter_mut().rev() {
            if n.source == src && n.charttime_h == t {
                n.visible = false;
            }
        }
    }
    stay
}

/// `T_CN×769` matrix of visible notes: embedding followed by scaled entry
/// time. Also returns the visible notes' hours, in row order.
pub fn build_note_matrix(stay: &StayRecord) -> Result<(Tensor<f32>, Vec<f64>)> {
    let mut data = Vec::new();
    let mut times = Vec::new();
    for n in stay.visible_notes() {
        let tf = n.time_feature.ok_or_else(|| {
            Error::InvalidInput(format!("stay {}: note matrix requested before scaling", stay.stay_id))
        })?;
        debug_assert_eq!(n.embedding.len(), D_EMB);
        data.extend_from_slice(&n.embedding);
        data.push(tf);
        times.push(n.charttime_h);
    }
    let rows = times.len();
    Ok((Tensor::new(vec![rows, D_CN], data)?, times))
}

/// Expands a stay so each chunk becomes its own note record sharing the
/// parent's time and type. Notes without chunk data are kept as-is.
pub fn expand_chunks(mut stay: StayRecord) -> StayRecord {
    let mut out = Vec::new();
    for n in stay.notes.drain(..) {
        match n.chunk_embeddings.clone() {
            Some(chunks) => {
                let counts = n.chunk_token_counts.clone();
                for (k, c) in chunks.into_iter().enumerate() {
                    let mut r = n.clone();
                    r.embedding = c;
                    r.chunk_embeddings = None;
                    r.chunk_token_counts = counts.as_ref().map(|cs| vec![cs[k]]);
                    out.push(r);
                }
            }
            None => out.push(n),
        }
    }
    stay.notes = out;
    stay
}

/// Full per-stay preparation: optional type filter, last-note masking,
/// imputation and scaling.
pub fn prepare_stay(stay: StayRecord, stats: &ScalerStats, allowed: Option<&NoteTypeSet>) -> Result<StayRecord> {
    let stay = match allowed {
        Some(a) => filter_note_types(stay, a),
        None => stay,
    };
    apply_scaler(mask_last_note(stay), stats)
}
