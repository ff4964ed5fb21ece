use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Indices of `scores` sorted ascending (ties keep input order).
fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Area under the ROC curve: `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)` via midranks.
/// `None` unless both classes are present.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let idx = ascending(scores);
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        let pos_in_group = idx[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum += mid * pos_in_group as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Average precision. Tied scores form one group that is credited with the
/// precision at the group's end. `None` without positives.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return None;
    }
    let mut idx = ascending(scores);
    idx.reverse();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut total = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let pos = idx[i..=j].iter().filter(|&&k| labels[k]).count();
        tp += pos;
        seen += j - i + 1;
        total += pos as f64 * tp as f64 / seen as f64;
        i = j + 1;
    }
    Some(total / n_pos as f64)
}

/// Macro and micro AUROC over a row-major `n×k` label matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroMicro {
    pub macro_auc: Option<f64>,
    pub micro_auc: Option<f64>,
    /// Columns left out of the macro mean for having one class.
    pub excluded: usize,
}

pub fn macro_micro_auc(scores: &[f64], labels: &[bool], k: usize) -> MacroMicro {
    assert!(k > 0 && scores.len() == labels.len() && scores.len() % k == 0, "bad label matrix");
    let n = scores.len() / k;
    let mut per = Vec::with_capacity(k);
    let mut excluded = 0;
    for c in 0..k {
        let s: Vec<f64> = (0..n).map(|r| scores[r * k + c]).collect();
        let l: Vec<bool> = (0..n).map(|r| labels[r * k + c]).collect();
        match auroc(&s, &l) {
            Some(a) => per.push(a),
            None => excluded += 1,
        }
    }
    if excluded > 0 {
        log::warn!("{excluded} of {k} label columns have a single class and are left out of macro AUC");
    }
    let macro_auc = (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64);
    MacroMicro { macro_auc, micro_auc: auroc(scores, labels), excluded }
}

/// Mean and 95% Student-t half-width `t₀.₉₇₅,ₙ₋₁·s/√n`. The half-width is
/// absent for fewer than two values.
pub fn confidence_interval(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive dof").inverse_cdf(0.975);
    (mean, Some(t * var.sqrt() / (n as f64).sqrt()))
}

/// Metrics for one evaluated label stream.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auprc: Option<f64>,
    pub auroc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub micro_auc: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
    #[serde(default)]
    pub excluded_labels: usize,
}

impl MetricReport {
    /// Binary stream report.
    pub fn binary(scores: &[f64], labels: &[bool]) -> Self {
        let n_pos = labels.iter().filter(|&&l| l).count();
        MetricReport {
            auprc: auprc(scores, labels),
            auroc: auroc(scores, labels),
            n_pos,
            n_neg: labels.len() - n_pos,
            ..Default::default()
        }
    }

    /// Multi-label report; AUPRC/AUROC are over the flattened stream.
    pub fn multilabel(scores: &[f64], labels: &[bool], k: usize) -> Self {
        let mm = macro_micro_auc(scores, labels, k);
        MetricReport {
            macro_auc: mm.macro_auc,
            micro_auc: mm.micro_auc,
            excluded_labels: mm.excluded,
            ..Self::binary(scores, labels)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        let s = [0.9, 0.8, 0.7, 0.6];
        let l = [true, false, true, false];
        assert_eq!(auroc(&s, &l), Some(0.75));
        assert!((auprc(&s, &l).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_cases() {
        assert_eq!(auroc(&[0.1, 0.2], &[true, true]), None);
        assert_eq!(auprc(&[0.1, 0.2], &[false, false]), None);
        assert_eq!(auroc(&[0.3; 6], &[true, false, true, false, false, true]), Some(0.5));
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
        assert_eq!(auprc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
    }

    #[test]
    fn macro_of_two_conditions() {
        // condition 0 separates perfectly, condition 1 is all ties
        let scores = [0.9, 0.5, 0.8, 0.5, 0.2, 0.5, 0.1, 0.5];
        let labels = [true, true, true, false, false, true, false, false];
        let mm = macro_micro_auc(&scores, &labels, 2);
        assert_eq!(mm.macro_auc, Some(0.75));
        assert_eq!(mm.excluded, 0);
    }

    #[test]
    fn single_class_column_is_excluded() {
        let scores = [0.9, 0.5, 0.1, 0.4];
        let labels = [true, true, false, true];
        let mm = macro_micro_auc(&scores, &labels, 2);
        assert_eq!(mm.excluded, 1);
        assert_eq!(mm.macro_auc, Some(1.0));
    }

    #[test]
    fn t_interval() {
        let (m, h) = confidence_interval(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(m, 3.0);
        assert!((h.unwrap() - 1.963).abs() < 1e-3, "{h:?}");
        assert_eq!(confidence_interval(&[2.0; 4]).1, Some(0.0));
        assert_eq!(confidence_interval(&[2.0]).1, None);
    }
}
