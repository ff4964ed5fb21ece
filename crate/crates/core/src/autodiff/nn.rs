//! Layers built from graph ops: per-timestep embedding, sinusoidal
//! positions, scaled dot-product attention and the post-norm block.

use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Per-timestep linear map `x[t]·W + b` (a width-1 temporal convolution).
pub fn linear_embed<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let d_in = g.value(x).cols();
    let w_rows = g.value(w).rows();
    if d_in != w_rows {
        return Err(Error::Shape(format!(
            "embedding input has {d_in} features but the weight expects {w_rows}"
        )));
    }
    let xw = g.matmul(x, w)?;
    g.add_bias(xw, b)
}

/// Sinusoidal encoding: `PE[t,2i] = sin(t/10000^(2i/d))`, `PE[t,2i+1] = cos(..)`.
pub fn positional_encoding<T: Scalar>(len: usize, d_model: usize) -> Result<Tensor<T>> {
    if d_model % 2 != 0 {
        return Err(Error::InvalidInput(format!("positional encoding needs an even width, got {d_model}")));
    }
    let mut data = Vec::with_capacity(len * d_model);
    for t in 0..len {
        for i in 0..d_model / 2 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data.push(T::lit(angle.sin()));
            data.push(T::lit(angle.cos()));
        }
    }
    Tensor::new(vec![len, d_model], data)
}

/// Scaled dot-product attention. Returns the output and the weight node.
///
/// Rows of `mask` with no allowed key produce all-zero weights and hence a
/// zero output row.
pub fn attention<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    mask: &[bool],
) -> Result<(Var, Var)> {
    let d = g.value(q).cols();
    if g.value(k).cols() != d || g.value(v).cols() != d {
        return Err(Error::Shape(format!(
            "attention widths differ: q {}, k {}, v {}",
            d,
            g.value(k).cols(),
            g.value(v).cols()
        )));
    }
    if g.value(k).rows() != g.value(v).rows() {
        return Err(Error::Shape("attention: key and value counts differ".into()));
    }
    let logits = g.matmul_nt(q, k)?;
    let scaled = g.scale(logits, T::one() / T::from_usize(d).unwrap().sqrt());
    let weights = g.masked_softmax(scaled, mask)?;
    let out = g.matmul(weights, v)?;
    Ok((out, weights))
}

/// Handles to one block's parameters on a graph.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub ff1_w: Var,
    pub ff1_b: Var,
    pub ff2_w: Var,
    pub ff2_b: Var,
    pub ln2_g: Var,
    pub ln2_b: Var,
}

/// Names of a block's parameters, in [`BlockVars`] field order.
pub const BLOCK_PARAM_NAMES: [&str; 12] =
    ["wq", "wk", "wv", "wo", "ln1_g", "ln1_b", "ff1_w", "ff1_b", "ff2_w", "ff2_b", "ln2_g", "ln2_b"];

/// Shapes of a block's parameters for model width `d`, in [`BlockVars`] field order.
pub fn block_param_shapes(d: usize) -> [Vec<usize>; 12] {
    let h = 4 * d;
    [
        vec![d, d],
        vec![d, d],
        vec![d, d],
        vec![d, d],
        vec![d],
        vec![d],
        vec![d, h],
        vec![h],
        vec![h, d],
        vec![d],
        vec![d],
        vec![d],
    ]
}

impl BlockVars {
    pub fn from_slice(v: &[Var]) -> Self {
        BlockVars {
            wq: v[0],
            wk: v[1],
            wv: v[2],
            wo: v[3],
            ln1_g: v[4],
            ln1_b: v[5],
            ff1_w: v[6],
            ff1_b: v[7],
            ff2_w: v[8],
            ff2_b: v[9],
            ln2_g: v[10],
            ln2_b: v[11],
        }
    }
}

fn linear<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    g.add_bias(xw, b)
}

/// Post-norm transformer block with queries from `x_q` and keys/values from `x_kv`:
///
/// ```text
/// y = LN(x_q + Dropout(Attn(x_q Wq, x_kv Wk, x_kv Wv) Wo))
/// y = LN(y + Dropout(FFN(y)))
/// ```
///
/// Returns the block output and the head-averaged `n×m` attention weights.
pub fn transformer_block<T: Scalar, R: Rng>(
    g: &mut Graph<T>,
    x_q: Var,
    x_kv: Var,
    mask: &[bool],
    p: &BlockVars,
    n_heads: usize,
    dropout: f64,
    mut rng: Option<&mut R>,
) -> Result<(Var, Tensor<T>)> {
    let d = g.value(x_q).cols();
    if g.value(x_kv).cols() != d {
        return Err(Error::Shape(format!(
            "block width {d} but keys/values have width {}",
            g.value(x_kv).cols()
        )));
    }
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::Config(format!("{n_heads} heads do not divide width {d}")));
    }
    let (n, m) = (g.value(x_q).rows(), g.value(x_kv).rows());

    let q = g.matmul(x_q, p.wq)?;
    let k = g.matmul(x_kv, p.wk)?;
    let v = g.matmul(x_kv, p.wv)?;

    let (ctx, weights) = if n_heads == 1 {
        let (out, w) = attention(g, q, k, v, mask)?;
        (out, g.value(w).clone())
    } else {
        let dh = d / n_heads;
        let mut outs = Vec::with_capacity(n_heads);
        let mut avg = Tensor::<T>::zeros(&[n, m]);
        let inv = T::one() / T::from_usize(n_heads).unwrap();
        for h in 0..n_heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let (out, w) = attention(g, qh, kh, vh, mask)?;
            for (a, &b) in avg.data_mut().iter_mut().zip(g.value(w).data()) {
                *a = *a + b * inv;
            }
            outs.push(out);
        }
        (g.concat_cols(&outs)?, avg)
    };

    let proj = g.matmul(ctx, p.wo)?;
    let proj = g.dropout(proj, dropout, rng.as_deref_mut());
    let res = g.add(x_q, proj)?;
    let y = g.layer_norm(res, p.ln1_g, p.ln1_b)?;

    let hidden = linear(g, y, p.ff1_w, p.ff1_b)?;
    let hidden = g.relu(hidden);
    let ff = linear(g, hidden, p.ff2_w, p.ff2_b)?;
    let ff = g.dropout(ff, dropout, rng.as_deref_mut());
    let res2 = g.add(y, ff)?;
    let out = g.layer_norm(res2, p.ln2_g, p.ln2_b)?;
    Ok((out, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                for p in 0..k {
                    out[i * m + j] += a[i * k + p] * b[p * m + j];
                }
            }
        }
        out
    }

    #[test]
    fn embed_zero_input_zero_bias() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[3, 4]));
        let w = g.param(Tensor::full(&[4, 64], 0.3));
        let b = g.param(Tensor::zeros(&[64]));
        let y = linear_embed(&mut g, x, w, b).unwrap();
        assert_eq!(g.value(y).shape(), &[3, 64]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embed_identity() {
        let mut g = Graph::<f64>::new();
        let xt = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = g.constant(xt.clone());
        let w = g.param(Tensor::identity(2));
        let b = g.param(Tensor::zeros(&[2]));
        let y = linear_embed(&mut g, x, w, b).unwrap();
        assert_eq!(g.value(y), &xt);
    }

    #[test]
    fn embed_matches_naive_product() {
        let xs: Vec<f64> = (0..20).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let ws: Vec<f64> = (0..32).map(|i| ((i * 5 % 13) as f64 - 6.0) / 4.0).collect();
        let bs: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![5, 4], xs.clone()).unwrap());
        let w = g.param(Tensor::new(vec![4, 8], ws.clone()).unwrap());
        let b = g.param(Tensor::new(vec![8], bs.clone()).unwrap());
        let y = linear_embed(&mut g, x, w, b).unwrap();
        let expect = naive_matmul(&xs, &ws, 5, 4, 8);
        for j in 0..8 {
            assert!((g.value(y).at(2, j) - (expect[2 * 8 + j] + bs[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn embed_rejects_width_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[3, 5]));
        let w = g.param(Tensor::zeros(&[4, 8]));
        let b = g.param(Tensor::zeros(&[8]));
        let err = linear_embed(&mut g, x, w, b).unwrap_err();
        assert!(err.to_string().contains('5') && err.to_string().contains('4'));
    }

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding::<f64>(4, 8).unwrap();
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((pe.at(1, 0) - 0.84147).abs() < 1e-5);
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(positional_encoding::<f64>(4, 7).is_err());
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let mut g = Graph::<f64>::new();
        let q = g.constant(Tensor::new(vec![2, 2], vec![0.3, -1.0, 2.0, 0.5]).unwrap());
        let k = g.constant(Tensor::new(vec![3, 2], vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap());
        let v = g.constant(Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 3.0, 3.0]).unwrap());
        let mask = [true, true, true, true, true, false];
        let (_, w) = attention(&mut g, q, k, v, &mask).unwrap();
        let w = g.value(w);
        for j in 0..3 {
            assert!((w.at(0, j) - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((w.at(1, 0) - 0.5).abs() < 1e-12 && w.at(1, 2) == 0.0);
    }

    #[test]
    fn single_visible_key_copies_its_value() {
        let mut g = Graph::<f64>::new();
        let q = g.constant(Tensor::new(vec![1, 2], vec![0.3, -1.0]).unwrap());
        let k = g.constant(Tensor::new(vec![3, 2], vec![1.0, 2.0, -1.0, 0.0, 4.0, 2.0]).unwrap());
        let v = g.constant(Tensor::new(vec![3, 2], vec![1.0, 0.0, 7.0, -2.0, 3.0, 3.0]).unwrap());
        let (out, _) = attention(&mut g, q, k, v, &[false, true, false]).unwrap();
        assert_eq!(g.value(out).data(), &[7.0, -2.0]);
        let (out, _) = attention(&mut g, q, k, v, &[false, false, false]).unwrap();
        assert_eq!(g.value(out).data(), &[0.0, 0.0]);
    }

    #[test]
    fn attention_matches_straight_line_reference() {
        let qd = [0.2, -0.7, 1.1, 0.4, -0.3, 0.9];
        let kd = [0.5, 0.1, -0.6, 0.8, 0.3, -0.2];
        let vd = [1.0, -1.0, 0.5, 2.0, -0.5, 0.25];
        let mask = [true, false, true, true, true, false, true, true, true];
        let mut g = Graph::<f64>::new();
        let q = g.constant(Tensor::new(vec![3, 2], qd.to_vec()).unwrap());
        let k = g.constant(Tensor::new(vec![3, 2], kd.to_vec()).unwrap());
        let v = g.constant(Tensor::new(vec![3, 2], vd.to_vec()).unwrap());
        let (out, _) = attention(&mut g, q, k, v, &mask).unwrap();

        let scale = 1.0 / 2f64.sqrt();
        for i in 0..3 {
            let mut logits = [f64::NEG_INFINITY; 3];
            for j in 0..3 {
                if mask[i * 3 + j] {
                    logits[j] = (qd[2 * i] * kd[2 * j] + qd[2 * i + 1] * kd[2 * j + 1]) * scale;
                }
            }
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..2 {
                let r: f64 = (0..3).map(|j| e[j] / s * vd[2 * j + c]).sum();
                assert!((g.value(out).at(i, c) - r).abs() < 1e-5);
            }
        }
    }

    fn zero_block(g: &mut Graph<f64>, d: usize) -> BlockVars {
        let vars: Vec<Var> = block_param_shapes(d)
            .iter()
            .enumerate()
            .map(|(i, s)| {
                // layer-norm gains are one, everything else zero
                let t = if i == 4 || i == 10 { Tensor::full(s, 1.0) } else { Tensor::zeros(s) };
                g.param(t)
            })
            .collect();
        BlockVars::from_slice(&vars)
    }

    #[test]
    fn residual_only_block_is_double_layer_norm() {
        let mut g = Graph::<f64>::new();
        let xq = g.constant(Tensor::new(vec![2, 4], vec![1.0, 2.0, 3.0, 5.0, -1.0, 0.0, 0.5, 2.0]).unwrap());
        let xkv = g.constant(Tensor::new(vec![3, 4], vec![0.1; 12]).unwrap());
        let p = zero_block(&mut g, 4);
        let (y, w) = transformer_block::<f64, ChaCha8Rng>(&mut g, xq, xkv, &[true; 6], &p, 1, 0.0, None).unwrap();
        let gam = g.param(Tensor::full(&[4], 1.0));
        let bet = g.param(Tensor::zeros(&[4]));
        let l1 = g.layer_norm(xq, gam, bet).unwrap();
        let l2 = g.layer_norm(l1, gam, bet).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 4]);
        for (a, b) in g.value(y).data().iter().zip(g.value(l2).data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(w.shape(), &[2, 3]);
    }

    #[test]
    fn single_key_weight_is_one() {
        let mut g = Graph::<f64>::new();
        let xq = g.constant(Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 5.0]).unwrap());
        let xkv = g.constant(Tensor::new(vec![1, 4], vec![0.1, 0.4, -0.2, 0.0]).unwrap());
        let p = zero_block(&mut g, 4);
        let (_, w) = transformer_block::<f64, ChaCha8Rng>(&mut g, xq, xkv, &[true], &p, 1, 0.0, None).unwrap();
        assert_eq!(w.data(), &[1.0]);
    }
}
