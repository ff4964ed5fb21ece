//! Finite-difference battery over every differentiable op and the full
//! model, in f64.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    attention, block_param_shapes, grad_check_stats, transformer_block, BlockVars, GradCheckStats, Graph, Tensor, Var,
};
use crate::data::{make_task_targets, Task};
use crate::error::Result;
use crate::model::{forward_graph, task_loss, CrossModalConfig, ModelInput, ModelParams};
use crate::seed::stream;
use crate::synthgen::toy_stay;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
pub const OP_TOL: f64 = 1e-4;
pub const ATTENTION_TOL: f64 = 1e-6;
pub const SUM_SQ_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub coords: usize,
    /// Coordinates over tolerance with a gap beyond round-off.
    pub violations: usize,
    /// Coordinates over tolerance with a gap within round-off.
    pub noise_limited: usize,
    pub seconds: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }

    /// No coordinate disagrees by more than finite-difference round-off.
    pub fn consistent(&self) -> bool {
        self.violations == 0
    }
}

fn all_coords(inputs: &[Tensor<f64>]) -> Vec<(usize, usize)> {
    inputs.iter().enumerate().flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j))).collect()
}

fn full<F>(f: F, inputs: &[Tensor<f64>], tol: f64) -> Result<GradCheckStats>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    grad_check_stats(f, inputs, STEP, &all_coords(inputs), tol)
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| n.sample(rng)).collect()).unwrap()
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output coordinate matters.
fn project(g: &mut Graph<f64>, out: Var, rng_seed: u64) -> Result<Var> {
    let shape = g.value(out).shape().to_vec();
    let mut rng = stream(rng_seed, "projection", 0);
    let r = g.constant(randn(&mut rng, &shape));
    let p = g.mul(out, r)?;
    Ok(g.sum(p))
}

fn random_mask(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<bool> {
    // roughly one row in five fully masked
    (0..n)
        .flat_map(|_| {
            let dead = rng.random_bool(0.2);
            (0..m).map(|_| !dead && rng.random_bool(0.7)).collect::<Vec<_>>()
        })
        .collect()
}

fn run<F>(name: &str, instances: usize, tol: f64, seed: u64, one: F) -> Result<CheckReport>
where
    F: Fn(&mut ChaCha8Rng, u64, f64) -> Result<GradCheckStats> + Sync,
{
    let start = std::time::Instant::now();
    let all = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, name, i as u64);
            one(&mut rng, seed ^ (i as u64).wrapping_mul(0x9e37_79b9), tol)
        })
        .collect::<Result<Vec<GradCheckStats>>>()?;
    Ok(CheckReport {
        name: name.into(),
        instances,
        max_rel_err: all.iter().map(|s| s.max_rel_err).fold(0.0, f64::max),
        tolerance: tol,
        coords: all.iter().map(|s| s.coords).sum(),
        violations: all.iter().map(|s| s.violations).sum(),
        noise_limited: all.iter().map(|s| s.noise_limited).sum(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..6), rng.random_range(1..6))
}

/// Per-op checks: `instances` random inputs each.
pub fn op_battery(instances: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    out.push(run("sum_of_squares", instances, OP_TOL, seed, |rng, _, tol| {
        let (n, m) = dims(rng);
        full(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            },
            &[randn(rng, &[n, m])],
            tol,
        )
    })?);
    out.push(run("matmul", instances, OP_TOL, seed, |rng, s, tol| {
        let (n, k) = dims(rng);
        let m = rng.random_range(1..6);
        full(
            |g, v| {
                let y = g.matmul(v[0], v[1])?;
                project(g, y, s)
            },
            &[randn(rng, &[n, k]), randn(rng, &[k, m])],
            tol,
        )
    })?);
    out.push(run("matmul_nt", instances, OP_TOL, seed, |rng, s, tol| {
        let (n, k) = dims(rng);
        let m = rng.random_range(1..6);
        full(
            |g, v| {
                let y = g.matmul_nt(v[0], v[1])?;
                project(g, y, s)
            },
            &[randn(rng, &[n, k]), randn(rng, &[m, k])],
            tol,
        )
    })?);
    out.push(run("linear_embed", instances, OP_TOL, seed, |rng, s, tol| {
        let (n, k) = dims(rng);
        let m = rng.random_range(1..6);
        full(
            |g, v| {
                let y = crate::autodiff::linear_embed(g, v[0], v[1], v[2])?;
                project(g, y, s)
            },
            &[randn(rng, &[n, k]), randn(rng, &[k, m]), randn(rng, &[m])],
            tol,
        )
    })?);
    out.push(run("elementwise", instances, OP_TOL, seed, |rng, s, tol| {
        let (n, m) = dims(rng);
        full(
            |g, v| {
                let a = g.add(v[0], v[1])?;
                let b = g.mul(a, v[1])?;
                let c = g.scale(b, 0.7);
                let d = g.relu(c);
                project(g, d, s)
            },
            &[randn(rng, &[n, m]), randn(rng, &[n, m])],
            tol,
        )
    })?);
    out.push(run("layer_norm", instances, OP_TOL, seed, |rng, s, tol| {
        let n = rng.random_range(1..6);
        let m = rng.random_range(2..9);
        full(
            |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2])?;
                project(g, y, s)
            },
            &[randn(rng, &[n, m]), randn(rng, &[m]), randn(rng, &[m])],
            tol,
        )
    })?);
    out.push(run("masked_softmax", instances, OP_TOL, seed, |rng, s, tol| {
        let (n, m) = dims(rng);
        let mask = random_mask(rng, n, m);
        full(
            |g, v| {
                let y = g.masked_softmax(v[0], &mask)?;
                project(g, y, s)
            },
            &[randn(rng, &[n, m])],
            tol,
        )
    })?);
    out.push(run("slice_concat_select_rowmask", instances, OP_TOL, seed, |rng, s, tol| {
        let n = rng.random_range(1..6);
        let m = rng.random_range(2..7);
        let cut = rng.random_range(1..m);
        let rows: Vec<usize> = (0..rng.random_range(1..5)).map(|_| rng.random_range(0..n)).collect();
        let keep: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        full(
            |g, v| {
                let a = g.slice_cols(v[0], 0, cut)?;
                let b = g.slice_cols(v[0], cut, m - cut)?;
                let c = g.concat_cols(&[b, a, b])?;
                let c = g.row_mask(c, &keep)?;
                let d = g.select_rows(c, &rows)?;
                project(g, d, s)
            },
            &[randn(rng, &[n, m])],
            tol,
        )
    })?);
    out.push(run("add_bias", instances, OP_TOL, seed, |rng, s, tol| {
        let (n, m) = dims(rng);
        full(
            |g, v| {
                let y = g.add_bias(v[0], v[1])?;
                project(g, y, s)
            },
            &[randn(rng, &[n, m]), randn(rng, &[m])],
            tol,
        )
    })?);
    out.push(run("bce_with_logits", instances, OP_TOL, seed, |rng, _, tol| {
        let n = rng.random_range(1..10);
        let mut z = randn(rng, &[n, 1]);
        z.data_mut().iter_mut().for_each(|v| *v *= 2.5);
        let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        mask[0] = true;
        full(|g, v| g.bce_with_logits(v[0], &y, &mask), &[z], tol)
    })?);
    out.push(run("attention", instances, ATTENTION_TOL, seed, |rng, s, tol| {
        let n = rng.random_range(1..6);
        let m = rng.random_range(1..6);
        let d = rng.random_range(1..5);
        let mask = random_mask(rng, n, m);
        full(
            |g, v| {
                let (y, _) = attention(g, v[0], v[1], v[2], &mask)?;
                project(g, y, s)
            },
            &[randn(rng, &[n, d]), randn(rng, &[m, d]), randn(rng, &[m, d])],
            tol,
        )
    })?);
    out.push(run("transformer_block", instances, OP_TOL, seed, |rng, s, tol| {
        let d = 4;
        let heads = if rng.random_bool(0.5) { 1 } else { 2 };
        let n = rng.random_range(1..5);
        let m = rng.random_range(1..5);
        let mask = random_mask(rng, n, m);
        let mut inputs = vec![randn(rng, &[n, d]), randn(rng, &[m, d])];
        for shape in block_param_shapes(d) {
            let mut t = randn(rng, &shape);
            t.data_mut().iter_mut().for_each(|v| *v *= 0.5);
            inputs.push(t);
        }
        full(
            |g, v| {
                let b = BlockVars::from_slice(&v[2..]);
                let (y, _) = transformer_block::<f64, ChaCha8Rng>(g, v[0], v[1], &mask, &b, heads, 0.0, None)?;
                project(g, y, s)
            },
            &inputs,
            tol,
        )
    })?);
    Ok(out)
}

fn model_check(cfg: &CrossModalConfig, instances: usize, seed: u64, sampled: Option<usize>, name: &str) -> Result<CheckReport> {
    run(name, instances, OP_TOL, seed, |rng, s, tol| {
        let stay = toy_stay(4, &[0.0, 1.2, 2.5], s);
        let input = ModelInput::<f64>::from_stay(&stay)?;
        let params = ModelParams::<f64>::init(cfg, s)?;
        let targets = make_task_targets(&stay, Task::Decomp);
        let f = |g: &mut Graph<f64>, v: &[Var]| -> Result<Var> {
            let (logits, _) = forward_graph::<f64, ChaCha8Rng>(g, &params, v, &input, None)?;
            Ok(task_loss(g, logits, Task::Decomp, &targets)?.expect("toy stay has targets"))
        };
        let inputs = params.tensors().to_vec();
        let flat = all_coords(&inputs);
        let coords = match sampled {
            None => flat,
            Some(k) => sample(rng, flat.len(), k.min(flat.len())).into_iter().map(|i| flat[i]).collect(),
        };
        grad_check_stats(f, &inputs, STEP, &coords, tol)
    })
}

/// Full-model checks on a 4-hour stay with three notes (the last masked):
/// every parameter at width 8 on `exhaustive` instances, and `samples`
/// random coordinates per instance at `cfg`'s width on `instances`
/// instances.
pub fn model_battery(
    cfg: &CrossModalConfig,
    exhaustive: usize,
    instances: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<CheckReport>> {
    let small = CrossModalConfig { d_model: 8, n_heads: cfg.n_heads.min(2), dropout: 0.0, ..cfg.clone() };
    let full = CrossModalConfig { dropout: 0.0, ..cfg.clone() };
    Ok(vec![
        model_check(&small, exhaustive, seed, None, "model_all_params_d8")?,
        model_check(&full, instances, seed, Some(samples), "model_sampled_params")?,
    ])
}

/// The fixed sum-of-squares example, whose central difference is exact up
/// to round-off.
pub fn sum_of_squares_example() -> Result<f64> {
    let x = Tensor::new(vec![2, 3], vec![0.3, -1.2, 2.0, 0.7, 0.5, -0.4])?;
    crate::autodiff::grad_check(
        |g, v| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.sum(sq))
        },
        &[x],
        STEP,
    )
}
