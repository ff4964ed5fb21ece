use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::CrossModalConfig;
use crate::autodiff::{block_param_shapes, Scalar, Tensor, BLOCK_PARAM_NAMES};
use crate::data::tensor_io::{read_tensor, write_tensor};
use crate::error::{Error, Result};

/// Named learnable tensors of the cross-modal model.
///
/// Order is fixed by the config, so parameter lists line up with Adam
/// moments and gradient vectors by position.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: CrossModalConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

/// Parameter names and shapes for a config.
pub fn param_layout(cfg: &CrossModalConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    let block = |prefix: &str, layer: usize, out: &mut Vec<(String, Vec<usize>)>| {
        for (name, shape) in BLOCK_PARAM_NAMES.iter().zip(block_param_shapes(d)) {
            out.push((format!("{prefix}.{layer}.{name}"), shape));
        }
    };
    if cfg.mode.uses_ehr() {
        out.push(("ehr_embed.w".into(), vec![cfg.d_ehr, d]));
    }
    // text-only keeps the bias: embedded zeros form its query clock
    out.push(("ehr_embed.b".into(), vec![d]));
    if cfg.mode.uses_ehr() {
        for l in 0..cfg.n_layers {
            block("self", l, &mut out);
        }
    }
    if cfg.mode.uses_notes() {
        out.push(("note_embed.w".into(), vec![cfg.d_cn, d]));
        out.push(("note_embed.b".into(), vec![d]));
        for l in 0..cfg.n_layers {
            block("cross", l, &mut out);
        }
    }
    if cfg.mode.uses_ehr() {
        out.push(("fuse.self_w".into(), vec![d, d]));
    }
    if cfg.mode.uses_notes() {
        out.push(("fuse.cross_w".into(), vec![d, d]));
    }
    out.push(("fuse.b".into(), vec![d]));
    out.push(("head.w".into(), vec![d, cfg.n_outputs]));
    out.push(("head.b".into(), vec![cfg.n_outputs]));
    out
}

/// Fan-in used for a parameter's init bound: rows of the weight it
/// belongs to.
fn fan_in(name: &str, layout: &[(String, Vec<usize>)]) -> usize {
    let weight = match name.rsplit_once('.') {
        Some((prefix, last)) => {
            let w = match last {
                "b" => "w",
                "ff1_b" => "ff1_w",
                "ff2_b" => "ff2_w",
                other => other,
            };
            if prefix == "fuse" && last == "b" {
                // same bound in every mode, so the shared bias starts identical
                return layout.iter().find(|(n, _)| n == "head.w").map_or(1, |(_, s)| s[0]);
            }
            format!("{prefix}.{w}")
        }
        None => name.to_string(),
    };
    layout
        .iter()
        .find(|(n, _)| *n == weight)
        .map(|(_, s)| if s.len() == 2 { s[0] } else { 1 })
        .unwrap_or(1)
}

impl<T: Scalar> ModelParams<T> {
    /// Uniform(−1/√fan_in, 1/√fan_in) weights; layer-norm gains 1, shifts 0.
    ///
    /// Each tensor draws from its own stream keyed by (seed, name), so
    /// parameters shared between modes start identical.
    pub fn init(config: &CrossModalConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(config);
        let mut names = Vec::with_capacity(layout.len());
        let mut tensors = Vec::with_capacity(layout.len());
        for (name, shape) in &layout {
            let t = if name.ends_with("ln1_g") || name.ends_with("ln2_g") {
                Tensor::full(shape, T::one())
            } else if name.ends_with("ln1_b") || name.ends_with("ln2_b") {
                Tensor::zeros(shape)
            } else {
                let fan = if name == "ehr_embed.b" { config.d_ehr } else { fan_in(name, &layout) };
                let bound = 1.0 / (fan as f64).sqrt();
                let mut rng = crate::seed::stream(seed, name, 0);
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
                Tensor::new(shape.clone(), data)?
            };
            names.push(name.clone());
            tensors.push(t);
        }
        Ok(ModelParams { config: config.clone(), names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Copies the tensors named in `other` into `self` where names and
    /// shapes match. Returns how many were copied.
    pub fn copy_shared(&mut self, other: &ModelParams<T>) -> usize {
        let mut n = 0;
        for (name, t) in other.names.iter().zip(&other.tensors) {
            if let Some(dst) = self.get_mut(name) {
                if dst.shape() == t.shape() {
                    *dst = t.clone();
                    n += 1;
                }
            }
        }
        n
    }
}

/// Metadata stored next to checkpoint tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: CrossModalConfig,
    pub task: crate::data::Task,
    pub seed: u64,
    pub step: u64,
    pub epoch: usize,
    pub param_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub config_overrides: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaler: Option<crate::data::ScalerStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note_types: Option<Vec<crate::data::NoteType>>,
}

/// Writes one `CMT1` file per parameter plus `meta.json` into `dir`.
pub fn save_checkpoint(dir: &Path, params: &ModelParams<f32>, meta: &CheckpointMeta) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, t) in params.names.iter().zip(&params.tensors) {
        write_tensor(&dir.join(format!("{name}.cmt")), t)?;
    }
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::json("checkpoint meta", e))?;
    let path = dir.join("meta.json");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelParams<f32>, CheckpointMeta)> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    meta.config.validate()?;
    let layout = param_layout(&meta.config);
    let mut tensors = Vec::with_capacity(layout.len());
    for (name, shape) in &layout {
        let t = read_tensor(&dir.join(format!("{name}.cmt")))?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Shape(format!("checkpoint tensor {name} is {:?}, expected {:?}", t.shape(), shape)));
        }
        tensors.push(t);
    }
    let names = layout.into_iter().map(|(n, _)| n).collect();
    Ok((ModelParams { config: meta.config.clone(), names, tensors }, meta))
}
