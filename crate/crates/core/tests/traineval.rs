use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cmt_core::data::{load_cohort, Cohort, NoteType, Task};
use cmt_core::model::{CrossModalConfig, Mode, ModelParams};
use cmt_core::synthgen::{generate_cohort, SynthConfig};
use cmt_core::traineval::*;

mod common;
use common::{ap_threshold_walk, auroc_pairs, random_instance};

#[test]
fn metrics_match_brute_force_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let (s, l) = random_instance(&mut rng);
        match (auroc(&s, &l), auroc_pairs(&s, &l)) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12, "auroc {a} vs {b}"),
            (a, b) => assert_eq!(a.is_some(), b.is_some()),
        }
        match (auprc(&s, &l), ap_threshold_walk(&s, &l)) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12, "auprc {a} vs {b}"),
            (a, b) => assert_eq!(a.is_some(), b.is_some()),
        }
    }
}

proptest! {
    #[test]
    fn metrics_ignore_monotone_transforms(
        pairs in prop::collection::vec((0u8..30, any::<bool>()), 2..120),
    ) {
        let s: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 7.0).collect();
        let l: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 40.0).collect();
        prop_assert_eq!(auroc(&s, &l), auroc(&t, &l));
        prop_assert_eq!(auprc(&s, &l), auprc(&t, &l));
    }

    #[test]
    fn metrics_stay_in_unit_interval(
        pairs in prop::collection::vec((0u8..10, any::<bool>()), 1..80),
    ) {
        let s: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let l: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        for m in [auroc(&s, &l), auprc(&s, &l)].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&m));
        }
        let r = MetricReport::binary(&s, &l);
        prop_assert_eq!(r.n_pos + r.n_neg, s.len());
    }

    #[test]
    fn interval_scales_linearly(
        values in prop::collection::vec(-5.0f64..5.0, 2..10),
        c in -4.0f64..4.0,
    ) {
        let (m, h) = confidence_interval(&values);
        let scaled: Vec<f64> = values.iter().map(|v| c * v).collect();
        let (ms, hs) = confidence_interval(&scaled);
        prop_assert!((ms - c * m).abs() <= 1e-9);
        prop_assert!((hs.unwrap() - c.abs() * h.unwrap()).abs() <= 1e-9);
        prop_assert!(hs.unwrap() >= 0.0);
    }
}

#[test]
fn random_scores_give_prevalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    let s: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let l: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.3).collect();
    let prev = l.iter().filter(|&&x| x).count() as f64 / n as f64;
    let ap = auprc(&s, &l).unwrap();
    assert!((ap - prev).abs() <= 0.02, "ap {ap} prevalence {prev}");
}

/// Two balanced conditions: the first separates perfectly, the second has
/// identical score distributions for both classes. Score ranges are
/// disjoint between conditions.
#[test]
fn macro_auc_of_constructed_conditions() {
    let n = 40;
    let mut scores = vec![0.0; n * 2];
    let mut labels = vec![false; n * 2];
    for r in 0..n {
        let pos = r % 2 == 0;
        labels[r * 2] = pos;
        scores[r * 2] = if pos { 0.9 + r as f64 * 1e-3 } else { 0.6 + r as f64 * 1e-3 };
        labels[r * 2 + 1] = pos;
        scores[r * 2 + 1] = 0.1 + (r / 2) as f64 * 1e-3;
    }
    let col = |c: usize| -> (Vec<f64>, Vec<bool>) {
        ((0..n).map(|r| scores[r * 2 + c]).collect(), (0..n).map(|r| labels[r * 2 + c]).collect())
    };
    let per: Vec<f64> = (0..2).map(|c| {
        let (s, l) = col(c);
        auroc_pairs(&s, &l).unwrap()
    }).collect();
    assert_eq!(per, vec![1.0, 0.5]);
    let mm = macro_micro_auc(&scores, &labels, 2);
    assert!((mm.macro_auc.unwrap() - 0.75).abs() < 1e-12);
    assert!((mm.micro_auc.unwrap() - auroc_pairs(&scores, &labels).unwrap()).abs() < 1e-12);

    // swapping the two columns
    let mut s2 = scores.clone();
    let mut l2 = labels.clone();
    for r in 0..n {
        s2.swap(r * 2, r * 2 + 1);
        l2.swap(r * 2, r * 2 + 1);
    }
    assert_eq!(macro_micro_auc(&s2, &l2, 2), mm);
}

#[test]
fn identical_columns_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (s, l) = random_instance(&mut rng);
    let k = 3;
    let scores: Vec<f64> = s.iter().flat_map(|&v| std::iter::repeat_n(v, k)).collect();
    let labels: Vec<bool> = l.iter().flat_map(|&v| std::iter::repeat_n(v, k)).collect();
    let mm = macro_micro_auc(&scores, &labels, k);
    let a = auroc(&s, &l).unwrap();
    assert!((mm.macro_auc.unwrap() - a).abs() < 1e-12);
    assert!((mm.micro_auc.unwrap() - a).abs() < 1e-12);
}

fn small_cohort() -> (tempfile::TempDir, Cohort) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { n_train: 40, n_val: 30, n_test: 30, seed: 3, ..Default::default() };
    generate_cohort(&cfg, dir.path()).unwrap();
    let c = load_cohort(dir.path()).unwrap();
    (dir, c)
}

fn fast() -> TrainConfig {
    TrainConfig { lr: 1e-3, max_epochs: 2, patience: 2, ..Default::default() }
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let (_d, c) = small_cohort();
    let data = TaskData::new(&prepare_splits(&c, None).unwrap(), Task::Decomp).unwrap();
    let cfg = TrainConfig { lr: 0.0, max_epochs: 2, ..Default::default() };
    let model = CrossModalConfig::default();
    let out = train(&data.train, &[], Task::Decomp, &model, &cfg).unwrap();
    assert!(out.steps > 0);
    assert_eq!(out.params, ModelParams::init(&model, cfg.seed).unwrap());
}

#[test]
fn one_stay_can_be_memorized() {
    let (_d, c) = small_cohort();
    let data = TaskData::new(&prepare_splits(&c, None).unwrap(), Task::Decomp).unwrap();
    // a stay with both label classes
    let ex = data
        .train
        .iter()
        .find(|e| {
            let pos = e.targets.targets.iter().zip(&e.targets.mask).filter(|(y, m)| **m && **y > 0.5).count();
            pos > 0 && pos < e.targets.mask.iter().filter(|m| **m).count()
        })
        .expect("a stay with a death")
        .clone();
    let cfg = TrainConfig { lr: 1e-3, max_epochs: 2000, batch_size: 1, ..Default::default() };
    let out = train(&[ex], &[], Task::Decomp, &CrossModalConfig::default(), &cfg).unwrap();
    let hit = out.history.iter().find(|h| h.train_loss < 0.1).map(|h| h.steps);
    assert!(hit.is_some_and(|s| s <= 2000), "final loss {}", out.history.last().unwrap().train_loss);
}

#[test]
fn training_is_reproducible() {
    let (_d, c) = small_cohort();
    let data = TaskData::new(&prepare_splits(&c, None).unwrap(), Task::Decomp).unwrap();
    let model = CrossModalConfig::default();
    let a = train(&data.train, &data.val, Task::Decomp, &model, &fast()).unwrap();
    let b = train(&data.train, &data.val, Task::Decomp, &model, &fast()).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
    let other = train(&data.train, &data.val, Task::Decomp, &model, &TrainConfig { seed: 1, ..fast() }).unwrap();
    assert_ne!(a.params, other.params);
}

#[test]
fn phenotyping_reports_macro_and_micro() {
    let (_d, c) = small_cohort();
    let data = TaskData::new(&prepare_splits(&c, None).unwrap(), Task::Pheno).unwrap();
    let model = CrossModalConfig { mode: Mode::EhrOnly, ..Default::default() };
    let (out, report) = train_and_test(&data, Task::Pheno, &model, &TrainConfig { max_epochs: 1, ..fast() }).unwrap();
    assert_eq!(out.params.config.n_outputs, 25);
    assert!(report.macro_auc.is_some() && report.micro_auc.is_some());
    assert_eq!(report.n_pos + report.n_neg, data.test.len() * 25);
}

#[test]
fn ablation_arms_nest_visible_notes() {
    let (_d, c) = small_cohort();
    let plan = AblationPlan::from_cohort(&c, Direction::Increasing);
    plan.validate().unwrap();
    let mut prev: Option<Vec<usize>> = None;
    for arm in &plan.arms {
        let p = prepare_splits(&c, Some(&arm.types)).unwrap();
        let counts: Vec<usize> = p.train.iter().map(|s| s.notes.iter().filter(|n| n.visible).count()).collect();
        if let Some(prev) = &prev {
            assert!(prev.iter().zip(&counts).all(|(a, b)| a <= b), "arm {}", arm.label);
        }
        prev = Some(counts);
    }
}

#[test]
fn single_full_arm_equals_plain_training() {
    let (_d, c) = small_cohort();
    let counts = c.train_type_counts();
    let all: cmt_core::data::NoteTypeSet = counts.iter().filter(|(_, &n)| n > 0).map(|(&t, _)| t).collect();
    let plan = AblationPlan {
        direction: Direction::Increasing,
        counts: counts.clone(),
        arms: vec![Arm { label: "all".into(), added: None, types: all }],
    };
    let model = CrossModalConfig::default();
    let table = run_ablation(&c, Task::Decomp, &plan, &model, &fast(), &[4]).unwrap();
    let data = TaskData::new(&prepare_splits(&c, None).unwrap(), Task::Decomp).unwrap();
    let (_, plain) = train_and_test(&data, Task::Decomp, &model, &TrainConfig { seed: 4, ..fast() }).unwrap();
    assert_eq!(table.rows[0].report.as_ref(), Some(&plain));
}

#[test]
fn ablation_is_deterministic() {
    let (_d, c) = small_cohort();
    let mut counts: BTreeMap<NoteType, usize> = c.train_type_counts();
    counts.retain(|t, _| matches!(t, NoteType::Ecg | NoteType::Nursing));
    let plan = AblationPlan::from_counts(&counts, Direction::Decreasing);
    assert_eq!(plan.arms.len(), 3);
    let cfg = TrainConfig { max_epochs: 1, ..fast() };
    let model = CrossModalConfig::default();
    let a = run_ablation(&c, Task::Decomp, &plan, &model, &cfg, &[0, 1]).unwrap();
    let b = run_ablation(&c, Task::Decomp, &plan, &model, &cfg, &[0, 1]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 6);
    assert!(a.rows.iter().all(|r| r.error.is_none()));
    assert!(a.summaries.iter().all(|(_, s)| s.auprc.ci_halfwidth.is_some()));
    assert_eq!(a.to_csv().lines().count(), 7);
}
