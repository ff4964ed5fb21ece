//! Run configuration and the pipeline commands behind the `cmt` binary.
//!
//! Every command writes machine-readable files into an output directory;
//! none of them contain timestamps, so reruns with the same seeds produce
//! identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{load_cohort, prepare_stay, Cohort, NoteType, NoteTypeSet, Split, Task};
use crate::error::{Error, Result};
use crate::gradcheck::{model_battery, op_battery, sum_of_squares_example, CheckReport, SUM_SQ_TOL};
use crate::interpret::{
    attention_rollout, divergence_report, export_cross_attention, word_importance, write_json, RolloutInput,
    DIVERGENCE_THRESHOLD,
};
use crate::model::{load_checkpoint, save_checkpoint, CheckpointMeta, CrossModalConfig, Mode, ModelParams};
use crate::synthgen::{describe_planted_signal, generate_cohort, PrevalenceReport, SynthConfig};
use crate::traineval::{
    examples, predict_examples, prepare_splits, run_ablation, train, AblationPlan, AblationTable, Direction,
    EpochRecord, MetricReport, TaskData, TrainConfig,
};

/// How AUPRC is computed, recorded with every report.
pub const AUPRC_DEFINITION: &str = "average precision; tied scores form one group credited at group-end precision";

/// Training defaults for synthetic cohorts. The learning rate is raised
/// from 1e-5 so that desk-scale runs converge in a few epochs.
pub fn synthetic_train_defaults() -> TrainConfig {
    TrainConfig { lr: 1e-3, max_epochs: 15, ..TrainConfig::default() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub mode: Mode,
    pub model: CrossModalConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub cohort: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub divergence_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: Task::Decomp,
            mode: Mode::CrossModal,
            model: CrossModalConfig::default(),
            train: synthetic_train_defaults(),
            synth: SynthConfig::default(),
            cohort: None,
            out: None,
            seeds: (0..5).collect(),
            divergence_threshold: DIVERGENCE_THRESHOLD,
        }
    }
}

/// Parses the value side of `--set key=value`: JSON when it parses, a
/// string otherwise.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies a dotted `key=value` override such as `train.lr=0.001`.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let mut root = serde_json::to_value(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let key = key.trim();
        let (parent, leaf) = key.rsplit_once('.').unwrap_or(("", key));
        let pointer = if parent.is_empty() { String::new() } else { format!("/{}", parent.replace('.', "/")) };
        let obj = root
            .pointer_mut(&pointer)
            .and_then(Value::as_object_mut)
            .ok_or_else(|| Error::Config(format!("unknown config key {key}")))?;
        if !obj.contains_key(leaf) && !(parent.is_empty() && matches!(leaf, "cohort" | "out")) {
            return Err(Error::Config(format!("unknown config key {key}")));
        }
        obj.insert(leaf.to_string(), parse_value(raw.trim()));
        *self = serde_json::from_value(root).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.model.mode != CrossModalConfig::default().mode && self.model.mode != self.mode {
            return Err(Error::Config(format!("model.mode {} conflicts with mode {}", self.model.mode, self.mode)));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::Config("divergence_threshold must be positive".into()));
        }
        self.model_config().validate()?;
        self.train.validate()?;
        self.synth.validate()
    }

    /// Model config with the run's mode and the task's output width.
    pub fn model_config(&self) -> CrossModalConfig {
        CrossModalConfig { mode: self.mode, n_outputs: self.task.n_outputs(), ..self.model.clone() }
    }

    pub fn cohort_path(&self) -> Result<&Path> {
        let p = self.cohort.as_deref().ok_or_else(|| Error::Config("no cohort path given".into()))?;
        if !p.is_dir() {
            return Err(Error::Config(format!("cohort directory {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn out_path(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| Error::Config("no output directory given".into()))
    }

    /// Non-default settings, for run metadata.
    pub fn overrides(&self) -> Vec<String> {
        let mut out: Vec<String> = self.train.overrides().into_iter().map(|s| format!("train.{s}")).collect();
        out.extend(self.model.overrides().into_iter().map(|s| format!("model.{s}")));
        out
    }
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    config: &'a RunConfig,
    /// Settings that differ from the `TrainConfig` and model defaults.
    overrides: Vec<String>,
    auprc: &'a str,
}

fn write_meta(dir: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    write_json(&dir.join("run.json"), &RunMeta { command, config: cfg, overrides: cfg.overrides(), auprc: AUPRC_DEFINITION })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// Generates a synthetic cohort into `cfg.out`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Vec<PrevalenceReport>> {
    cfg.validate()?;
    let out = cfg.out_path()?;
    let reports = generate_cohort(&cfg.synth, out)?;
    for r in &reports {
        log::info!("{:?}: decomp {}/{} positive, ihm {}/{}", r.split, r.decomp_pos, r.decomp_total, r.ihm_pos, r.ihm_total);
    }
    write_json(&out.join("prevalence.json"), &reports)?;
    write_json(&out.join("planted_signal.json"), &describe_planted_signal(&cfg.synth))?;
    Ok(reports)
}

#[derive(Serialize)]
struct History<'a> {
    task: Task,
    mode: Mode,
    seed: u64,
    best_epoch: usize,
    steps: u64,
    epochs: &'a [EpochRecord],
}

/// Trains one model on the cohort with `cfg.seeds[0]`; writes
/// `checkpoint/`, `history.json` and `run.json`.
pub fn cmd_train(cfg: &RunConfig) -> Result<ModelParams<f32>> {
    cfg.validate()?;
    let cohort = load_cohort(cfg.cohort_path()?)?;
    let out = cfg.out_path()?;
    let seed = cfg.seeds[0];
    let model = cfg.model_config();
    let splits = prepare_splits(&cohort, None)?;
    let data = TaskData::new(&splits, cfg.task)?;
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let outcome = train(&data.train, &data.val, cfg.task, &model, &train_cfg)?;
    create_dir(out)?;
    let best = &outcome.history[outcome.best_epoch];
    let note_types: Vec<NoteType> = cohort.train_type_counts().into_iter().filter(|(_, n)| *n > 0).map(|(t, _)| t).collect();
    let meta = CheckpointMeta {
        config: outcome.params.config.clone(),
        task: cfg.task,
        seed,
        step: best.steps,
        epoch: outcome.best_epoch,
        param_names: outcome.params.names().to_vec(),
        config_overrides: cfg.overrides(),
        scaler: Some(splits.stats.clone()),
        note_types: Some(note_types),
    };
    save_checkpoint(&out.join("checkpoint"), &outcome.params, &meta)?;
    write_json(
        &out.join("history.json"),
        &History {
            task: cfg.task,
            mode: cfg.mode,
            seed,
            best_epoch: outcome.best_epoch,
            steps: outcome.steps,
            epochs: &outcome.history,
        },
    )?;
    write_meta(out, "train", cfg)?;
    Ok(outcome.params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub mode: Mode,
    pub split: String,
    pub seed: u64,
    pub auprc_definition: String,
    pub report: MetricReport,
}

/// Prepares stays of `split` the way the checkpoint saw its training data.
fn checkpoint_split(
    cohort: &Cohort,
    meta: &CheckpointMeta,
    split: Split,
) -> Result<Vec<crate::data::StayRecord>> {
    let stats = meta
        .scaler
        .as_ref()
        .ok_or_else(|| Error::Config("checkpoint has no scaler statistics".into()))?;
    let allowed: Option<NoteTypeSet> = meta.note_types.as_ref().map(|t| t.iter().copied().collect());
    cohort.split(split).into_iter().map(|s| prepare_stay(s.clone(), stats, allowed.as_ref())).collect()
}

fn open_checkpoint(dir: &Path) -> Result<(ModelParams<f32>, CheckpointMeta)> {
    if !dir.join("meta.json").is_file() {
        return Err(Error::Config(format!("{} is not a checkpoint directory", dir.display())));
    }
    load_checkpoint(dir)
}

fn check_dims(cohort: &Cohort, meta: &CheckpointMeta) -> Result<()> {
    if let Some((_, stay)) = cohort.stays.first() {
        if stay.ehr.cols() != meta.config.d_ehr {
            return Err(Error::Config(format!(
                "checkpoint expects {} EHR features, cohort has {}",
                meta.config.d_ehr,
                stay.ehr.cols()
            )));
        }
        if let Some(n) = stay.notes.first() {
            if n.embedding.len() + 1 != meta.config.d_cn {
                return Err(Error::Config(format!(
                    "checkpoint expects note width {}, cohort notes give {}",
                    meta.config.d_cn,
                    n.embedding.len() + 1
                )));
            }
        }
    }
    Ok(())
}

/// Scores a checkpoint on the test split; writes `metrics.json` and
/// `predictions.csv`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let cohort = load_cohort(cfg.cohort_path()?)?;
    let out = cfg.out_path()?;
    let (params, meta) = open_checkpoint(checkpoint)?;
    check_dims(&cohort, &meta)?;
    let test = checkpoint_split(&cohort, &meta, Split::Test)?;
    let data = examples(&test, meta.task)?;
    let preds = predict_examples(&params, &data, meta.task)?;
    let report = crate::traineval::evaluate(&params, &data, meta.task)?;
    create_dir(out)?;
    let mut csv = String::from("stay_id,index,prob,label\n");
    for p in &preds {
        for (i, (prob, label)) in p.probs.iter().zip(&p.labels).enumerate() {
            csv.push_str(&format!("{},{i},{prob},{}\n", p.stay_id, u8::from(*label)));
        }
    }
    write_text(&out.join("predictions.csv"), &csv)?;
    let r = EvalReport {
        task: meta.task,
        mode: meta.config.mode,
        split: "test".into(),
        seed: meta.seed,
        auprc_definition: AUPRC_DEFINITION.into(),
        report,
    };
    write_json(&out.join("metrics.json"), &r)?;
    Ok(r)
}

/// Runs the note-type ablation over `cfg.seeds`; writes `ablation.csv`
/// and `ablation.json`.
pub fn cmd_ablate(cfg: &RunConfig, direction: Direction) -> Result<AblationTable> {
    cfg.validate()?;
    if cfg.mode != Mode::CrossModal {
        return Err(Error::Config("ablation arms need the cross_modal mode".into()));
    }
    let cohort = load_cohort(cfg.cohort_path()?)?;
    let out = cfg.out_path()?;
    let plan = AblationPlan::from_cohort(&cohort, direction);
    let table = run_ablation(&cohort, cfg.task, &plan, &cfg.model_config(), &cfg.train, &cfg.seeds)?;
    create_dir(out)?;
    write_text(&out.join("ablation.csv"), &table.to_csv())?;
    write_json(&out.join("ablation.json"), &table)?;
    write_meta(out, "ablate", cfg)?;
    Ok(table)
}

/// Inputs of `explain` beyond the run config.
#[derive(Clone, Debug, Default)]
pub struct ExplainArgs {
    pub stay: String,
    pub checkpoint: PathBuf,
    pub ehr_checkpoint: Option<PathBuf>,
    pub rollout: Option<PathBuf>,
    pub cls_index: usize,
}

/// Heatmap for one stay, plus a divergence report when an EHR-only
/// checkpoint is given and a rollout when an attention stack is given.
pub fn cmd_explain(cfg: &RunConfig, args: &ExplainArgs) -> Result<()> {
    cfg.validate()?;
    let out = cfg.out_path()?;
    create_dir(out)?;
    let cohort = load_cohort(cfg.cohort_path()?)?;
    let (cross, meta) = open_checkpoint(&args.checkpoint)?;
    check_dims(&cohort, &meta)?;
    let raw = cohort.get(&args.stay).ok_or_else(|| Error::Config(format!("no stay {} in the cohort", args.stay)))?;
    let stats = meta.scaler.as_ref().ok_or_else(|| Error::Config("checkpoint has no scaler statistics".into()))?;
    let allowed: Option<NoteTypeSet> = meta.note_types.as_ref().map(|t| t.iter().copied().collect());
    let stay = prepare_stay(raw.clone(), stats, allowed.as_ref())?;
    export_cross_attention(&stay, &cross, out)?;
    if let Some(path) = &args.ehr_checkpoint {
        let (ehr, ehr_meta) = open_checkpoint(path)?;
        if ehr_meta.task != meta.task {
            return Err(Error::Config(format!("checkpoints disagree on task: {} vs {}", ehr_meta.task, meta.task)));
        }
        let report = divergence_report(&stay, &ehr, &cross, cfg.divergence_threshold)?;
        write_json(&out.join("divergence.json"), &report)?;
    }
    if let Some(dir) = &args.rollout {
        let input = RolloutInput::read(dir)?;
        let r = attention_rollout(&input)?;
        crate::data::tensor_io::write_tensor(&out.join("rollout.cmt"), &r.cast())?;
        let groups = if input.word_groups.is_empty() {
            (0..input.tokens.len()).map(Some).collect()
        } else {
            input.word_groups.clone()
        };
        let w = word_importance(&r, args.cls_index, &input.tokens, &groups, input.chunk_tokens.as_deref())?;
        write_json(&out.join("word_importance.json"), &w)?;
    }
    Ok(())
}

/// Gradient-check battery used by `cmt gradcheck`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradcheckSummary {
    pub sum_of_squares_rel_err: f64,
    pub reports: Vec<CheckReport>,
    pub seconds: f64,
}

impl GradcheckSummary {
    pub fn passed(&self) -> bool {
        self.sum_of_squares_rel_err <= SUM_SQ_TOL && self.reports.iter().all(|r| r.passed())
    }
}

pub fn cmd_gradcheck(instances: usize, seed: u64) -> Result<GradcheckSummary> {
    let start = std::time::Instant::now();
    let sum_sq = sum_of_squares_example()?;
    let mut reports = op_battery(instances, seed)?;
    reports.extend(model_battery(&CrossModalConfig::default(), 2, instances, 30, seed)?);
    Ok(GradcheckSummary { sum_of_squares_rel_err: sum_sq, reports, seconds: start.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_overrides() {
        let mut c = RunConfig::default();
        c.set("train.lr=0.01").unwrap();
        c.set("task=pheno").unwrap();
        c.set("synth.n_train=12").unwrap();
        c.set("cohort=/tmp/x").unwrap();
        c.set("seeds=[3,4]").unwrap();
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(c.task, Task::Pheno);
        assert_eq!(c.synth.n_train, 12);
        assert_eq!(c.cohort.as_deref(), Some(Path::new("/tmp/x")));
        assert_eq!(c.seeds, vec![3, 4]);
        assert!(c.set("train.nope=1").is_err());
        assert!(c.set("task=banana").is_err());
        assert!(c.set("no_equals").is_err());
    }

    #[test]
    fn overrides_are_recorded() {
        let c = RunConfig::default();
        assert!(c.overrides().iter().any(|s| s.starts_with("train.lr=")));
        let mut bad = RunConfig::default();
        bad.seeds.clear();
        assert!(bad.validate().is_err());
    }
}
