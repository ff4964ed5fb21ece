//! Forward pass of the cross-modal model.
//!
//! EHR stream: embed → +PE → causal self-attention block(s).
//! Note stream: embed visible notes → +PE → cross-attention block(s) with
//! queries from the EHR stream (or, in text-only mode, a query clock made
//! of embedded all-zero EHR rows plus positions). Cross-branch rows with no visible note are zeroed. The branches
//! are fused by `h_self·W_s + h_cross·W_c + b`, then a linear head emits one
//! logit row per EHR hour.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{CrossModalConfig, Mode};
use super::params::ModelParams;
use crate::autodiff::{linear_embed, positional_encoding, transformer_block, BlockVars, Graph, Scalar, Tensor, Var};
use crate::data::{build_note_matrix, StayRecord, Task, TaskTargets, IHM_HOURS};
use crate::error::{Error, Result};

/// Model-ready tensors for one preprocessed stay.
#[derive(Clone, Debug)]
pub struct ModelInput<T> {
    pub stay_id: String,
    /// `T×d_ehr`, imputed and scaled.
    pub ehr: Tensor<T>,
    /// `T_CN×d_cn`, visible notes only.
    pub notes: Tensor<T>,
    /// Entry hour of each row of `notes`.
    pub note_times: Vec<f64>,
}

impl<T: Scalar> ModelInput<T> {
    pub fn from_stay(stay: &StayRecord) -> Result<Self> {
        if !stay.scaled {
            return Err(Error::InvalidInput(format!("stay {} has not been preprocessed", stay.stay_id)));
        }
        let (notes, note_times) = build_note_matrix(stay)?;
        Ok(ModelInput { stay_id: stay.stay_id.clone(), ehr: stay.ehr.cast(), notes: notes.cast(), note_times })
    }

    pub fn hours(&self) -> usize {
        self.ehr.rows()
    }
}

/// Attention weights captured during a forward pass (last layer,
/// head-averaged).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub stay_id: String,
    /// `T_EHR×T_EHR`; absent in text-only mode.
    pub self_attn: Option<Tensor<f32>>,
    /// `T_EHR×T_CN` over visible notes; absent in EHR-only mode.
    pub cross_attn: Option<Tensor<f32>>,
}

/// `mask[t, t'] = t' ≤ t`.
pub fn causal_mask(n: usize) -> Vec<bool> {
    let mut m = vec![false; n * n];
    for t in 0..n {
        for s in 0..=t {
            m[t * n + s] = true;
        }
    }
    m
}

/// `mask[t, j] = visible[j] && note_times[j] ≤ t`, row-major `hours×notes`.
pub fn build_cross_mask(hours: usize, note_times: &[f64], visible: &[bool]) -> Vec<bool> {
    let m = note_times.len();
    let mut mask = vec![false; hours * m];
    for t in 0..hours {
        for j in 0..m {
            mask[t * m + j] = visible[j] && note_times[j] <= t as f64;
        }
    }
    mask
}

/// Rows of the per-hour logits that a task reads. `None` when the task is
/// undefined for this stay (IHM on a stay shorter than 48 h).
pub fn pool_rows(task: Task, hours: usize) -> Option<Vec<usize>> {
    match task {
        Task::Decomp => Some((0..hours).collect()),
        Task::Ihm => (hours >= IHM_HOURS).then(|| vec![IHM_HOURS - 1]),
        Task::Pheno => hours.checked_sub(1).map(|last| vec![last]),
    }
}

/// Task-shaped logits from per-hour logits.
pub fn pool_for_task<T: Scalar>(logits: &Tensor<T>, task: Task) -> Option<Vec<T>> {
    let rows = pool_rows(task, logits.rows())?;
    Some(rows.iter().flat_map(|&r| logits.row(r).to_vec()).collect())
}

struct Handles<'a, T> {
    params: &'a ModelParams<T>,
    vars: &'a [Var],
}

impl<T: Scalar> Handles<'_, T> {
    fn var(&self, name: &str) -> Result<Var> {
        self.params
            .index_of(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("parameter {name} missing for mode {}", self.params.config.mode)))
    }

    fn block(&self, prefix: &str, layer: usize) -> Result<BlockVars> {
        let vars = crate::autodiff::BLOCK_PARAM_NAMES
            .iter()
            .map(|n| self.var(&format!("{prefix}.{layer}.{n}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockVars::from_slice(&vars))
    }
}

/// Builds the forward graph on `g` given parameter leaves `vars` (one per
/// entry of `params`, in order). Returns the `T×n_outputs` logits node.
pub fn forward_graph<T: Scalar, R: Rng>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    vars: &[Var],
    input: &ModelInput<T>,
    mut rng: Option<&mut R>,
) -> Result<(Var, AttentionRecord)> {
    let cfg: &CrossModalConfig = &params.config;
    let h = Handles { params, vars };
    let hours = input.hours();
    if hours == 0 {
        return Err(Error::InvalidInput(format!("stay {} has no hours", input.stay_id)));
    }
    if input.ehr.cols() != cfg.d_ehr {
        return Err(Error::Shape(format!(
            "stay {} has {} EHR features, model expects {}",
            input.stay_id,
            input.ehr.cols(),
            cfg.d_ehr
        )));
    }
    if input.notes.cols() != cfg.d_cn {
        return Err(Error::Shape(format!(
            "stay {} has note width {}, model expects {}",
            input.stay_id,
            input.notes.cols(),
            cfg.d_cn
        )));
    }
    let d = cfg.d_model;
    let pe_ehr = g.constant(positional_encoding(hours, d)?);

    // (embedded EHR used as cross-attention query, fused self-branch term, weights)
    let mut ehr_query = None;
    let mut fused_self = None;
    let mut self_attn = None;
    if cfg.mode.uses_ehr() {
        let x = g.constant(input.ehr.clone());
        let e = linear_embed(g, x, h.var("ehr_embed.w")?, h.var("ehr_embed.b")?)?;
        let x = g.add(e, pe_ehr)?;
        let mask = causal_mask(hours);
        let mut y = x;
        for l in 0..cfg.n_layers {
            let (out, w) =
                transformer_block(g, y, y, &mask, &h.block("self", l)?, cfg.n_heads, cfg.dropout, rng.as_deref_mut())?;
            y = out;
            self_attn = Some(w);
        }
        ehr_query = Some(x);
        fused_self = Some(g.matmul(y, h.var("fuse.self_w")?)?);
    }
    finish(g, &h, cfg, input, ehr_query, fused_self, self_attn, pe_ehr, rng)
}

#[allow(clippy::too_many_arguments)]
fn finish<T: Scalar, R: Rng>(
    g: &mut Graph<T>,
    h: &Handles<'_, T>,
    cfg: &CrossModalConfig,
    input: &ModelInput<T>,
    ehr_query: Option<Var>,
    fused_self: Option<Var>,
    self_attn: Option<Tensor<T>>,
    pe_ehr: Var,
    mut rng: Option<&mut R>,
) -> Result<(Var, AttentionRecord)> {
    let hours = input.hours();
    let d = cfg.d_model;
    let mut cross_attn = None;
    let mut fused = fused_self;
    if cfg.mode.uses_notes() {
        let n_notes = input.notes.rows();
        let notes = g.constant(input.notes.clone());
        let e = linear_embed(g, notes, h.var("note_embed.w")?, h.var("note_embed.b")?)?;
        let pe_notes = g.constant(positional_encoding(n_notes, d)?);
        let kv = g.add(e, pe_notes)?;
        let mask = build_cross_mask(hours, &input.note_times, &vec![true; n_notes]);
        let keep: Vec<bool> = (0..hours).map(|t| mask[t * n_notes..(t + 1) * n_notes].iter().any(|&m| m)).collect();
        let mut y = match (cfg.mode, ehr_query) {
            (Mode::CrossModal, Some(q)) => q,
            // embedded all-zero EHR plus positions
            _ => g.add_bias(pe_ehr, h.var("ehr_embed.b")?)?,
        };
        for l in 0..cfg.n_layers {
            let (out, w) = transformer_block(g, y, kv, &mask, &h.block("cross", l)?, cfg.n_heads, cfg.dropout, rng.as_deref_mut())?;
            y = out;
            cross_attn = Some(w);
        }
        let y = g.row_mask(y, &keep)?;
        let fc = g.matmul(y, h.var("fuse.cross_w")?)?;
        fused = Some(match fused {
            Some(fs) => g.add(fs, fc)?,
            None => fc,
        });
    }
    let fused = fused.ok_or_else(|| Error::Config("model has no input stream".into()))?;
    let fused = g.add_bias(fused, h.var("fuse.b")?)?;
    let head = g.matmul(fused, h.var("head.w")?)?;
    let logits = g.add_bias(head, h.var("head.b")?)?;
    let rec = AttentionRecord {
        stay_id: input.stay_id.clone(),
        self_attn: self_attn.map(|t| t.cast()),
        cross_attn: cross_attn.map(|t| t.cast()),
    };
    Ok((logits, rec))
}

fn leaves<T: Scalar>(g: &mut Graph<T>, params: &ModelParams<T>) -> Vec<Var> {
    params.tensors().iter().map(|t| g.param(t.clone())).collect()
}

/// Evaluation-mode forward: no dropout. Returns `T×n_outputs` logits.
pub fn predict<T: Scalar>(params: &ModelParams<T>, input: &ModelInput<T>) -> Result<(Tensor<T>, AttentionRecord)> {
    let mut g = Graph::new();
    let vars = leaves(&mut g, params);
    let (logits, rec) = forward_graph::<T, ChaCha8Rng>(&mut g, params, &vars, input, None)?;
    Ok((g.value(logits).clone(), rec))
}

/// Forward with optional dropout stream; returns logits only.
pub fn forward<T: Scalar, R: Rng>(
    params: &ModelParams<T>,
    input: &ModelInput<T>,
    rng: Option<&mut R>,
) -> Result<(Tensor<T>, AttentionRecord)> {
    let mut g = Graph::new();
    let vars = leaves(&mut g, params);
    let (logits, rec) = forward_graph(&mut g, params, &vars, input, rng)?;
    Ok((g.value(logits).clone(), rec))
}

/// Builds the task loss on a graph. `None` when the stay has no valid
/// target for the task.
pub fn task_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    task: Task,
    targets: &TaskTargets,
) -> Result<Option<Var>> {
    let hours = g.value(logits).rows();
    let Some(rows) = pool_rows(task, hours) else { return Ok(None) };
    if !targets.any_valid() {
        return Ok(None);
    }
    let pooled = g.select_rows(logits, &rows)?;
    let t: Vec<T> = targets.targets.iter().map(|&v| T::lit(v as f64)).collect();
    if t.len() != g.value(pooled).len() {
        return Err(Error::Shape(format!(
            "task {task}: {} logits but {} targets",
            g.value(pooled).len(),
            t.len()
        )));
    }
    g.bce_with_logits(pooled, &t, &targets.mask).map(Some)
}

/// Loss and per-parameter gradients for one stay.
pub fn loss_and_grads<T: Scalar, R: Rng>(
    params: &ModelParams<T>,
    input: &ModelInput<T>,
    task: Task,
    targets: &TaskTargets,
    rng: Option<&mut R>,
) -> Result<Option<(T, Vec<Tensor<T>>)>> {
    let mut g = Graph::new();
    let vars = leaves(&mut g, params);
    let (logits, _) = forward_graph(&mut g, params, &vars, input, rng)?;
    let Some(loss) = task_loss(&mut g, logits, task, targets)? else { return Ok(None) };
    let mut grads = g.backward(loss)?;
    let gs = vars
        .iter()
        .zip(params.tensors())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok(Some((g.value(loss).data()[0], gs)))
}
