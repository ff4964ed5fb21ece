use std::path::Path;
use std::process::{Command, Output};

use cmt_core::autodiff::Tensor;
use cmt_core::data::tensor_io::read_tensor;
use cmt_core::data::{load_cohort, Split};
use cmt_core::interpret::RolloutInput;
use cmt_core::model::load_checkpoint;
use cmt_core::traineval::AblationTable;

fn cmt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmt")).current_dir(dir).args(args).output().expect("cmt runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: [&str; 6] = ["--set", "synth.n_train=24", "--set", "synth.n_val=10", "--set", "synth.n_test=10"];

fn synth(dir: &Path) {
    let mut args = vec!["synth", "--out", "cohort", "--seed", "2"];
    args.extend(SMALL);
    let o = cmt(dir, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn train(dir: &Path, out: &str, mode: &str) {
    let o = cmt(dir, &["train", "--cohort", "cohort", "--out", out, "--mode", mode, "--seed", "1", "--set", "train.max_epochs=1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn bad_input_exits_one_with_a_single_line() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--task", "mortality", "--cohort", "."],
        vec!["train", "--cohort", "missing", "--out", "x"],
        vec!["train", "--config", "bad.json"],
        vec!["synth", "--out", "c", "--set", "synth.no_such_key=1"],
        vec!["eval", "--cohort", ".", "--out", "x", "--checkpoint", "nowhere"],
        vec!["ablate", "--direction", "sideways"],
    ];
    std::fs::write(dir.path().join("bad.json"), "{ \"task\": ").unwrap();
    for args in cases {
        let o = cmt(dir.path(), &args);
        assert_eq!(code(&o), 1, "{args:?}: {}", stderr(&o));
        let err = stderr(&o);
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
    }
}

#[test]
fn synth_train_eval_outputs_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    let cohort = load_cohort(&d.join("cohort")).unwrap();
    assert_eq!(cohort.split(Split::Test).len(), 10);
    train(d, "run", "cross_modal");
    let (params, meta) = load_checkpoint(&d.join("run/checkpoint")).unwrap();
    assert_eq!(params.names(), meta.param_names.as_slice());
    let run: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("run/run.json")).unwrap()).unwrap();
    assert!(run["overrides"].as_array().unwrap().iter().any(|v| v.as_str().unwrap().starts_with("train.lr")));

    let o = cmt(d, &["eval", "--cohort", "cohort", "--out", "eval", "--checkpoint", "run/checkpoint"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("eval/metrics.json")).unwrap()).unwrap();
    assert_eq!(m["split"], "test");
    let csv = std::fs::read_to_string(d.join("eval/predictions.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("stay_id,index,prob,label"));
}

#[test]
fn eval_rejects_mismatched_dims() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    train(d, "run", "ehr_only");
    let meta_path = d.join("run/checkpoint/meta.json");
    let mut meta: serde_json::Value = serde_json::from_slice(&std::fs::read(&meta_path).unwrap()).unwrap();
    meta["config"]["d_ehr"] = serde_json::json!(12);
    std::fs::write(&meta_path, serde_json::to_vec(&meta).unwrap()).unwrap();
    let o = cmt(d, &["eval", "--cohort", "cohort", "--out", "eval", "--checkpoint", "run/checkpoint"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn ablation_arms_follow_training_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    let o = cmt(
        d,
        &["ablate", "--cohort", "cohort", "--out", "abl", "--seed", "0", "--direction", "increasing", "--set", "train.max_epochs=1"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table: AblationTable = serde_json::from_slice(&std::fs::read(d.join("abl/ablation.json")).unwrap()).unwrap();
    let counts: Vec<usize> = table.plan.arms.iter().filter_map(|a| a.added).map(|t| table.plan.counts[&t]).collect();
    assert!(!counts.is_empty());
    assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
    assert!(table.plan.arms[0].types.is_empty());
    let csv = std::fs::read_to_string(d.join("abl/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + table.plan.arms.len());
}

#[test]
fn explain_writes_heatmap_divergence_and_rollout() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    train(d, "cross", "cross_modal");
    train(d, "ehr", "ehr_only");
    let cohort = load_cohort(&d.join("cohort")).unwrap();
    let stay = cohort.split(Split::Test)[0].stay_id.clone();

    let layer = Tensor::new(vec![3, 3], vec![0.2, 0.3, 0.5, 0.1, 0.8, 0.1, 0.25, 0.25, 0.5]).unwrap();
    RolloutInput {
        layers: vec![layer.clone(), layer],
        tokens: vec!["[CLS]".into(), "sep".into(), "##sis".into()],
        word_groups: vec![None, Some(0), Some(0)],
        chunk_tokens: None,
    }
    .write(&d.join("attn"))
    .unwrap();

    let o = cmt(
        d,
        &[
            "explain", "--cohort", "cohort", "--out", "explain", "--stay", &stay, "--checkpoint", "cross/checkpoint",
            "--ehr-checkpoint", "ehr/checkpoint", "--rollout", "attn",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["cross_attention.csv", "cross_attention.cmt", "divergence.json", "word_importance.json"] {
        assert!(d.join("explain").join(f).is_file(), "{f}");
    }
    let r = read_tensor(&d.join("explain/rollout.cmt")).unwrap();
    assert_eq!(r.shape(), &[3, 3]);
    let w: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("explain/word_importance.json")).unwrap()).unwrap();
    assert_eq!(w["words"][0], "sepsis");

    let o = cmt(d, &["explain", "--cohort", "cohort", "--out", "x", "--stay", "nope", "--checkpoint", "cross/checkpoint"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn gradcheck_subcommand_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = cmt(dir.path(), &["gradcheck", "--instances", "2", "--out", "gc"]);
    assert!(matches!(code(&o), 0 | 2), "{}", stderr(&o));
    assert!(dir.path().join("gc/gradcheck.json").is_file());
    assert!(String::from_utf8_lossy(&o.stdout).contains("sum_of_squares"));
}
