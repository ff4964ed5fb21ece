use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::MetricReport;
use crate::autodiff::{sigmoid, AdamState, Tensor};
use crate::data::{make_task_targets, StayRecord, Task, TaskTargets};
use crate::error::{Error, Result};
use crate::model::{loss_and_grads, pool_for_task, pool_rows, predict, CrossModalConfig, ModelInput, ModelParams};
use crate::seed::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 16, lr: 1e-5, max_epochs: 50, patience: 5, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        Ok(())
    }

    /// Fields that differ from the defaults, for run metadata.
    pub fn overrides(&self) -> Vec<String> {
        let d = TrainConfig::default();
        let mut out = Vec::new();
        if self.batch_size != d.batch_size {
            out.push(format!("batch_size={}", self.batch_size));
        }
        if self.lr != d.lr {
            out.push(format!("lr={}", self.lr));
        }
        if self.max_epochs != d.max_epochs {
            out.push(format!("max_epochs={}", self.max_epochs));
        }
        if self.patience != d.patience {
            out.push(format!("patience={}", self.patience));
        }
        out
    }
}

/// A preprocessed stay with its task labels.
#[derive(Clone, Debug)]
pub struct Example {
    pub input: ModelInput<f32>,
    pub targets: TaskTargets,
}

/// Converts preprocessed stays into examples, skipping stays without a
/// valid label for `task` (e.g. IHM on stays shorter than 48 h).
pub fn examples(stays: &[StayRecord], task: Task) -> Result<Vec<Example>> {
    stays
        .par_iter()
        .filter_map(|s| {
            let targets = make_task_targets(s, task);
            if !targets.any_valid() || pool_rows(task, s.hours()).is_none() {
                return None;
            }
            Some(ModelInput::from_stay(s).map(|input| Example { input, targets }))
        })
        .collect()
}

/// Model scores and labels for one stay, restricted to valid targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StayPredictions {
    pub stay_id: String,
    pub probs: Vec<f64>,
    pub labels: Vec<bool>,
}

/// Per-stay probabilities on valid targets, in input order.
pub fn predict_examples(params: &ModelParams<f32>, data: &[Example], task: Task) -> Result<Vec<StayPredictions>> {
    data.par_iter()
        .map(|ex| {
            let (logits, _) = predict(params, &ex.input)?;
            let pooled = pool_for_task(&logits, task)
                .ok_or_else(|| Error::InvalidInput(format!("stay {} has no {task} read-out", ex.input.stay_id)))?;
            let mut probs = Vec::new();
            let mut labels = Vec::new();
            for ((z, y), m) in pooled.iter().zip(&ex.targets.targets).zip(&ex.targets.mask) {
                if *m {
                    probs.push(sigmoid(*z as f64));
                    labels.push(*y > 0.5);
                }
            }
            Ok(StayPredictions { stay_id: ex.input.stay_id.clone(), probs, labels })
        })
        .collect()
}

/// Pools every stay's predictions into one stream and scores it.
pub fn evaluate(params: &ModelParams<f32>, data: &[Example], task: Task) -> Result<MetricReport> {
    let preds = predict_examples(params, data, task)?;
    let scores: Vec<f64> = preds.iter().flat_map(|p| p.probs.iter().copied()).collect();
    let labels: Vec<bool> = preds.iter().flat_map(|p| p.labels.iter().copied()).collect();
    Ok(match task {
        Task::Pheno => MetricReport::multilabel(&scores, &labels, task.n_outputs()),
        _ => MetricReport::binary(&scores, &labels),
    })
}

/// Validation quantity used for early stopping.
pub fn selection_metric(task: Task, r: &MetricReport) -> Option<f64> {
    match task {
        Task::Pheno => r.macro_auc,
        _ => r.auprc,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub val: Option<MetricReport>,
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch (or the last epoch when
    /// there is no validation set).
    pub params: ModelParams<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub steps: u64,
}

/// Sums per-stay gradients in input order, so the result does not depend
/// on thread scheduling.
fn accumulate(into: &mut [Tensor<f32>], grads: &[Tensor<f32>]) {
    for (a, g) in into.iter_mut().zip(grads) {
        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
            *x += *y;
        }
    }
}

/// Mini-batch Adam on stay-level batches; per-stay losses are averaged.
///
/// Deterministic for a fixed seed: initialization, shuffling and dropout
/// all draw from streams keyed by the seed.
pub fn train(
    train_set: &[Example],
    val_set: &[Example],
    task: Task,
    model_cfg: &CrossModalConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidInput("training set has no usable stays".into()));
    }
    let model_cfg = CrossModalConfig { n_outputs: task.n_outputs(), ..model_cfg.clone() };
    let mut params = ModelParams::<f32>::init(&model_cfg, cfg.seed)?;
    let mut adam = AdamState::new(params.tensors());
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams<f32>)> = None;
    let mut since_best = 0;
    let mut steps = 0u64;

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut stream(cfg.seed, "shuffle", epoch as u64));
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<Option<(f32, Vec<Tensor<f32>>)>>> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = stream(cfg.seed, "dropout", (epoch as u64) << 32 | i as u64);
                    let ex = &train_set[i];
                    loss_and_grads(&params, &ex.input, task, &ex.targets, Some(&mut rng))
                })
                .collect();
            let mut sum: Vec<Tensor<f32>> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
            let mut n = 0usize;
            let mut batch_loss = 0.0f64;
            for (&i, r) in batch.iter().zip(results) {
                let Some((loss, grads)) = r? else { continue };
                if !loss.is_finite() {
                    return Err(Error::Diverged(format!(
                        "loss {loss} on stay {} at epoch {epoch}, step {steps}",
                        train_set[i].input.stay_id
                    )));
                }
                accumulate(&mut sum, &grads);
                batch_loss += loss as f64;
                n += 1;
            }
            if n == 0 {
                continue;
            }
            let scale = 1.0 / n as f32;
            for t in &mut sum {
                t.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            adam.step(params.tensors_mut(), &sum, cfg.lr)?;
            steps += 1;
            if !params.all_finite() {
                return Err(Error::Diverged(format!("non-finite parameters after step {steps} (epoch {epoch})")));
            }
            epoch_loss += batch_loss;
            epoch_count += n;
        }
        let train_loss = epoch_loss / epoch_count.max(1) as f64;
        let val = if val_set.is_empty() { None } else { Some(evaluate(&params, val_set, task)?) };
        let val_metric = val.as_ref().and_then(|r| selection_metric(task, r));
        log::info!(
            "epoch {epoch}: train loss {train_loss:.5}, val {}",
            val_metric.map_or("n/a".to_string(), |m| format!("{m:.4}"))
        );
        history.push(EpochRecord { epoch, steps, train_loss, val, val_metric });

        let score = val_metric.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => score > *b,
        };
        if improved {
            best = Some((score, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if !val_set.is_empty() && since_best >= cfg.patience {
                log::info!("stopping early at epoch {epoch}");
                break;
            }
        }
    }
    let (params, best_epoch) = match best {
        Some((_, e, p)) if !val_set.is_empty() => (p, e),
        _ => (params, history.len() - 1),
    };
    Ok(TrainOutcome { params, history, best_epoch, steps })
}
