//! Brute-force oracles shared by integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Pair-counting AUROC.
pub fn auroc_pairs(s: &[f64], l: &[bool]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if l[i] && !l[j] {
                den += 1.0;
                if s[i] > s[j] {
                    num += 1.0;
                } else if s[i] == s[j] {
                    num += 0.5;
                }
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Walks every distinct threshold from the top, crediting the recall gained
/// at each threshold with the precision of everything at or above it.
pub fn ap_threshold_walk(s: &[f64], l: &[bool]) -> Option<f64> {
    let n_pos = l.iter().filter(|&&x| x).count();
    if n_pos == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for th in thresholds {
        let above = s.iter().filter(|&&v| v >= th).count();
        let tp = s.iter().zip(l).filter(|(&v, &y)| v >= th && y).count();
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * tp as f64 / above as f64;
        prev_recall = recall;
    }
    Some(ap)
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=200);
    let levels = rng.random_range(2..=40);
    let p = rng.random_range(0.05..0.95);
    let s = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
    let l = (0..n).map(|_| rng.random::<f64>() < p).collect();
    (s, l)
}

