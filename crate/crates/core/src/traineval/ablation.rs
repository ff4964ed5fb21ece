use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{confidence_interval, MetricReport};
use super::train::{evaluate, examples, train, Example, TrainConfig, TrainOutcome};
use crate::data::{fit_scaler, prepare_stay, Cohort, NoteType, NoteTypeSet, ScalerStats, Split, StayRecord, Task};
use crate::error::{Error, Result};
use crate::model::CrossModalConfig;

/// Train/val/test stays after filtering, masking and scaling.
#[derive(Clone, Debug)]
pub struct PreparedSplits {
    pub stats: ScalerStats,
    pub train: Vec<StayRecord>,
    pub val: Vec<StayRecord>,
    pub test: Vec<StayRecord>,
}

/// Fits the scaler on the training split and prepares every split,
/// keeping only `allowed` note types when given.
pub fn prepare_splits(cohort: &Cohort, allowed: Option<&NoteTypeSet>) -> Result<PreparedSplits> {
    let stats = fit_scaler(cohort.split(Split::Train));
    let prep = |split| -> Result<Vec<StayRecord>> {
        cohort.split(split).into_iter().map(|s| prepare_stay(s.clone(), &stats, allowed)).collect()
    };
    Ok(PreparedSplits { train: prep(Split::Train)?, val: prep(Split::Val)?, test: prep(Split::Test)?, stats })
}

/// Model-ready examples for each split.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl TaskData {
    pub fn new(p: &PreparedSplits, task: Task) -> Result<Self> {
        Ok(TaskData { train: examples(&p.train, task)?, val: examples(&p.val, task)?, test: examples(&p.test, task)? })
    }
}

/// Train on `data.train`, select on `data.val`, report on `data.test`.
pub fn train_and_test(
    data: &TaskData,
    task: Task,
    model_cfg: &CrossModalConfig,
    train_cfg: &TrainConfig,
) -> Result<(TrainOutcome, MetricReport)> {
    let out = train(&data.train, &data.val, task, model_cfg, train_cfg)?;
    let report = evaluate(&out.params, &data.test, task)?;
    Ok((out, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increasing,
    Decreasing,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Increasing => "increasing",
            Direction::Decreasing => "decreasing",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "increasing" | "inc" => Ok(Direction::Increasing),
            "decreasing" | "dec" => Ok(Direction::Decreasing),
            other => Err(Error::Config(format!("unknown direction {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub label: String,
    /// Type added by this arm (absent for the no-notes arm).
    pub added: Option<NoteType>,
    pub types: NoteTypeSet,
}

/// Cumulative note-type sets ordered by training-split frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationPlan {
    pub direction: Direction,
    /// Training-split note counts per type.
    pub counts: BTreeMap<NoteType, usize>,
    pub arms: Vec<Arm>,
}

impl AblationPlan {
    /// Arms start with no notes and add one type at a time. Types absent
    /// from the training split are left out; count ties break by type order.
    pub fn from_counts(counts: &BTreeMap<NoteType, usize>, direction: Direction) -> Self {
        let mut order: Vec<(NoteType, usize)> = counts.iter().filter(|(_, &c)| c > 0).map(|(&t, &c)| (t, c)).collect();
        order.sort_by(|a, b| match direction {
            Direction::Increasing => a.1.cmp(&b.1).then(a.0.cmp(&b.0)),
            Direction::Decreasing => b.1.cmp(&a.1).then(a.0.cmp(&b.0)),
        });
        let mut arms = vec![Arm { label: "no notes".into(), added: None, types: NoteTypeSet::new() }];
        let mut acc = NoteTypeSet::new();
        for (t, _) in order {
            acc.insert(t);
            arms.push(Arm { label: format!("+{t}"), added: Some(t), types: acc.clone() });
        }
        AblationPlan { direction, counts: counts.clone(), arms }
    }

    pub fn from_cohort(cohort: &Cohort, direction: Direction) -> Self {
        Self::from_counts(&cohort.train_type_counts(), direction)
    }

    /// Checks nesting and frequency order.
    pub fn validate(&self) -> Result<()> {
        for w in self.arms.windows(2) {
            if !(w[0].types.is_subset(&w[1].types) && w[0].types.len() < w[1].types.len()) {
                return Err(Error::Config(format!("arms {} and {} are not strictly nested", w[0].label, w[1].label)));
            }
        }
        let added: Vec<usize> = self.arms.iter().filter_map(|a| a.added).map(|t| self.counts[&t]).collect();
        let ordered = added.windows(2).all(|w| match self.direction {
            Direction::Increasing => w[0] <= w[1],
            Direction::Decreasing => w[0] >= w[1],
        });
        if !ordered {
            return Err(Error::Config("arm order does not follow the frequency table".into()));
        }
        Ok(())
    }
}

/// One (arm, seed) result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: String,
    pub seed: u64,
    pub report: Option<MetricReport>,
    pub error: Option<String>,
}

/// Mean and 95% half-width of each metric over seeds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub ci_halfwidth: Option<f64>,
}

fn summarize(values: impl Iterator<Item = Option<f64>>) -> MetricSummary {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        return MetricSummary::default();
    }
    let (m, h) = confidence_interval(&v);
    MetricSummary { mean: Some(m), ci_halfwidth: h }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub per_seed: Vec<(u64, MetricReport)>,
    pub auprc: MetricSummary,
    pub auroc: MetricSummary,
    pub macro_auc: MetricSummary,
    pub micro_auc: MetricSummary,
}

impl RunSummary {
    pub fn new(per_seed: Vec<(u64, MetricReport)>) -> Self {
        RunSummary {
            auprc: summarize(per_seed.iter().map(|(_, r)| r.auprc)),
            auroc: summarize(per_seed.iter().map(|(_, r)| r.auroc)),
            macro_auc: summarize(per_seed.iter().map(|(_, r)| r.macro_auc)),
            micro_auc: summarize(per_seed.iter().map(|(_, r)| r.micro_auc)),
            per_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub task: Task,
    pub plan: AblationPlan,
    pub rows: Vec<AblationRow>,
    pub summaries: Vec<(String, RunSummary)>,
}

impl AblationTable {
    pub fn summary(&self, arm: &str) -> Option<&RunSummary> {
        self.summaries.iter().find(|(a, _)| a == arm).map(|(_, s)| s)
    }

    /// Mean test AUPRC per arm, in plan order.
    pub fn mean_auprc(&self) -> Vec<(String, Option<f64>)> {
        self.summaries.iter().map(|(a, s)| (a.clone(), s.auprc.mean)).collect()
    }

    /// `arm,seed,auprc,auroc,macro,micro`; absent values are empty, failed
    /// rows carry no metrics.
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        let mut out = String::from("arm,seed,auprc,auroc,macro,micro\n");
        for r in &self.rows {
            let m = r.report.clone().unwrap_or_default();
            let arm = if r.arm.contains(',') { format!("\"{}\"", r.arm) } else { r.arm.clone() };
            out.push_str(&format!(
                "{arm},{},{},{},{},{}\n",
                r.seed,
                f(m.auprc),
                f(m.auroc),
                f(m.macro_auc),
                f(m.micro_auc)
            ));
        }
        out
    }
}

/// One full train+eval per (arm, seed). Arms differ only in the allowed
/// note types; a failed arm is recorded and the run continues.
pub fn run_ablation(
    cohort: &Cohort,
    task: Task,
    plan: &AblationPlan,
    model_cfg: &CrossModalConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationTable> {
    run_ablation_with(cohort, task, plan, model_cfg, train_cfg, seeds, |_, _, _| {})
}

/// [`run_ablation`], handing every trained model to `inspect`.
pub fn run_ablation_with(
    cohort: &Cohort,
    task: Task,
    plan: &AblationPlan,
    model_cfg: &CrossModalConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
    mut inspect: impl FnMut(&Arm, u64, &TrainOutcome),
) -> Result<AblationTable> {
    plan.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for arm in &plan.arms {
        let data = prepare_splits(cohort, Some(&arm.types)).and_then(|p| TaskData::new(&p, task));
        let mut per_seed = Vec::new();
        for &seed in seeds {
            let cfg = TrainConfig { seed, ..train_cfg.clone() };
            let result = match &data {
                Ok(d) => train_and_test(d, task, model_cfg, &cfg),
                Err(e) => Err(Error::InvalidInput(format!("preparing arm {}: {e}", arm.label))),
            };
            match result {
                Ok((outcome, report)) => {
                    inspect(arm, seed, &outcome);
                    log::info!("arm {} seed {seed}: auprc {:?}", arm.label, report.auprc);
                    per_seed.push((seed, report.clone()));
                    rows.push(AblationRow { arm: arm.label.clone(), seed, report: Some(report), error: None });
                }
                Err(e) => {
                    log::warn!("arm {} seed {seed} failed: {e}", arm.label);
                    rows.push(AblationRow { arm: arm.label.clone(), seed, report: None, error: Some(e.to_string()) });
                }
            }
        }
        summaries.push((arm.label.clone(), RunSummary::new(per_seed)));
    }
    Ok(AblationTable { task, plan: plan.clone(), rows, summaries })
}
