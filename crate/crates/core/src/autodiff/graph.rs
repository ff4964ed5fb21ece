//! Tape-style computation graph with reverse-mode accumulation.
//!
//! Every op appends a node holding its forward value, so node order is a
//! topological order by construction. `backward` walks the tape in reverse.

use rand::Rng;

use super::tensor::{matmul_nn, matmul_nt, matmul_tn, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulNT(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    MaskedSoftmax { x: Var },
    RowMask { x: Var, keep: Vec<bool> },
    Dropout { x: Var, scale: Vec<T> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SelectRows { x: Var, rows: Vec<usize> },
    Sum(Var),
    Bce { logits: Var, targets: Vec<T>, mask: Vec<bool>, count: usize },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`; `None` when nothing flowed back to it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims2(a);
        let (k2, m) = self.dims2(b);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul: left is {n}x{k}, right is {k2}x{m}"
            )));
        }
        let mut out = vec![T::zero(); n * m];
        matmul_nn(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims2(a);
        let (m, k2) = self.dims2(b);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul_nt: left is {n}x{k}, right is {m}x{k2}"
            )));
        }
        let mut out = vec![T::zero(); n * m];
        matmul_nt(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMulNT(a, b), ng))
    }

    /// Adds a length-`m` bias to every row of an `n×m` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = self.dims2(x);
        if self.value(b).len() != m {
            return Err(Error::Shape(format!(
                "bias of length {} for {n}x{m} input",
                self.value(b).len()
            )));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(m.max(1)) {
            for (o, &bv) in row.iter_mut().zip(&bias) {
                *o = *o + bv;
            }
        }
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::AddBias(x, b), ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let t = self.value(x).map(|v| v * c);
        let ng = self.ng(x);
        self.push(t, Op::Scale(x, c), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let ng = self.ng(x);
        self.push(t, Op::Relu(x), ng)
    }

    /// Row-wise layer normalization with learnable gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, m) = self.dims2(x);
        if self.value(gamma).len() != m || self.value(beta).len() != m {
            return Err(Error::Shape(format!("layer_norm parameters must have length {m}")));
        }
        let eps = T::lit(LN_EPS);
        let mf = T::from_usize(m).unwrap();
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); n * m];
        let mut inv_std = vec![T::zero(); n];
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let row = &xs[i * m..(i + 1) * m];
            let mean = row.iter().copied().sum::<T>() / mf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / mf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..m {
                let h = (row[j] - mean) * is;
                xhat[i * m + j] = h;
                out[i * m + j] = h * g[j] + b[j];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let t = Tensor::new(vec![n, m], out)?;
        Ok(self.push(t, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, ng))
    }

    /// Softmax over each row restricted to `mask`-allowed entries.
    ///
    /// Disallowed entries are exactly zero. Rows with no allowed entry are
    /// all zeros.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (n, m) = self.dims2(x);
        if mask.len() != n * m {
            return Err(Error::Shape(format!("mask of {} entries for {n}x{m} logits", mask.len())));
        }
        let out = masked_softmax_rows(self.value(x).data(), mask, n, m);
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MaskedSoftmax { x }, ng))
    }

    /// Zeroes every row whose `keep` flag is false.
    pub fn row_mask(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let (n, m) = self.dims2(x);
        if keep.len() != n {
            return Err(Error::Shape(format!("row mask of {} for {n} rows", keep.len())));
        }
        let mut out = self.value(x).data().to_vec();
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                out[i * m..(i + 1) * m].iter_mut().for_each(|v| *v = T::zero());
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::RowMask { x, keep: keep.to_vec() }, ng))
    }

    /// Inverted dropout. `rate == 0` or `rng == None` is the identity.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: Option<&mut R>) -> Var {
        let rng = match rng {
            Some(r) if rate > 0.0 => r,
            _ => return x,
        };
        let keep = T::lit(1.0 / (1.0 - rate));
        let scale: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = self.value(x).data().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Dropout { x, scale }, ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.dims2(x);
        if start + len > m {
            return Err(Error::Shape(format!("columns {start}..{} of {m}", start + len)));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&src[i * m + start..i * m + start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(vec![n, len], out)?, Op::SliceCols { x, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.dims2(parts[0]).0;
        if parts.iter().any(|&p| self.dims2(p).0 != n) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.dims2(p).1).sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::new(vec![n, total], out)?, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, m) = self.dims2(x);
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Shape(format!("row {bad} out of range for {n} rows")));
        }
        let mut out = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            out.extend_from_slice(self.value(x).row(r));
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(vec![rows.len(), m], out)?, Op::SelectRows { x, rows: rows.to_vec() }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Mean binary cross-entropy over unmasked positions, computed from logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T], mask: &[bool]) -> Result<Var> {
        let z = self.value(logits).data();
        if targets.len() != z.len() || mask.len() != z.len() {
            return Err(Error::Shape(format!(
                "bce: {} logits, {} targets, {} mask entries",
                z.len(),
                targets.len(),
                mask.len()
            )));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::InvalidInput("bce: no unmasked positions".into()));
        }
        let mut total = T::zero();
        for ((&zi, &yi), &mi) in z.iter().zip(targets).zip(mask) {
            if mi {
                total = total + bce_term(zi, yi);
            }
        }
        let loss = total / T::from_usize(count).unwrap();
        let ng = self.ng(logits);
        let op = Op::Bce { logits, targets: targets.to_vec(), mask: mask.to_vec(), count };
        Ok(self.push(Tensor::scalar(loss), op, ng))
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.propagate(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|d| Tensor::new(n.value.shape().to_vec(), d).expect("grad shape")))
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let (n, m) = (node.value.rows(), node.value.cols());
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let k = self.value(*a).cols();
                if self.ng(*a) {
                    let ga = acc(grads, *a, n * k);
                    matmul_nt(gy, self.value(*b).data(), ga, n, m, k);
                }
                if self.ng(*b) {
                    let gb = acc(grads, *b, k * m);
                    matmul_tn(self.value(*a).data(), gy, gb, n, k, m);
                }
            }
            Op::MatMulNT(a, b) => {
                // y = a bᵀ, a: n×k, b: m×k
                let k = self.value(*a).cols();
                if self.ng(*a) {
                    let ga = acc(grads, *a, n * k);
                    matmul_nn(gy, self.value(*b).data(), ga, n, m, k);
                }
                if self.ng(*b) {
                    let gb = acc(grads, *b, m * k);
                    matmul_tn(gy, self.value(*a).data(), gb, n, m, k);
                }
            }
            Op::AddBias(x, b) => {
                if self.ng(*x) {
                    add_into(acc(grads, *x, n * m), gy);
                }
                if self.ng(*b) {
                    let gb = acc(grads, *b, m);
                    for row in gy.chunks(m.max(1)) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.ng(*v) {
                        add_into(acc(grads, *v, gy.len()), gy);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let bv = self.value(*b).data();
                    let ga = acc(grads, *a, gy.len());
                    for ((g, &d), &y) in ga.iter_mut().zip(gy).zip(bv) {
                        *g = *g + d * y;
                    }
                }
                if self.ng(*b) {
                    let av = self.value(*a).data();
                    let gb = acc(grads, *b, gy.len());
                    for ((g, &d), &x) in gb.iter_mut().zip(gy).zip(av) {
                        *g = *g + d * x;
                    }
                }
            }
            Op::Scale(x, c) => {
                let gx = acc(grads, *x, gy.len());
                for (g, &d) in gx.iter_mut().zip(gy) {
                    *g = *g + d * *c;
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx = acc(grads, *x, gy.len());
                for ((g, &d), &v) in gx.iter_mut().zip(gy).zip(xv) {
                    if v > T::zero() {
                        *g = *g + d;
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gam = self.value(*gamma).data();
                if self.ng(*gamma) {
                    let gg = acc(grads, *gamma, m);
                    for i in 0..n {
                        for j in 0..m {
                            gg[j] = gg[j] + gy[i * m + j] * xhat[i * m + j];
                        }
                    }
                }
                if self.ng(*beta) {
                    let gb = acc(grads, *beta, m);
                    for row in gy.chunks(m.max(1)) {
                        add_into(gb, row);
                    }
                }
                if self.ng(*x) {
                    let mf = T::from_usize(m).unwrap();
                    let gx = acc(grads, *x, n * m);
                    let mut dxhat = vec![T::zero(); m];
                    for i in 0..n {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..m {
                            let d = gy[i * m + j] * gam[j];
                            dxhat[j] = d;
                            s1 = s1 + d;
                            s2 = s2 + d * xhat[i * m + j];
                        }
                        for j in 0..m {
                            let h = xhat[i * m + j];
                            let v = inv_std[i] * (dxhat[j] - s1 / mf - h * s2 / mf);
                            gx[i * m + j] = gx[i * m + j] + v;
                        }
                    }
                }
            }
            Op::MaskedSoftmax { x } => {
                let y = node.value.data();
                let gx = acc(grads, *x, n * m);
                for i in 0..n {
                    let yr = &y[i * m..(i + 1) * m];
                    let dr = &gy[i * m..(i + 1) * m];
                    let dot: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                    for j in 0..m {
                        gx[i * m + j] = gx[i * m + j] + yr[j] * (dr[j] - dot);
                    }
                }
            }
            Op::RowMask { x, keep } => {
                let gx = acc(grads, *x, n * m);
                for (i, &k) in keep.iter().enumerate() {
                    if k {
                        add_into(&mut gx[i * m..(i + 1) * m], &gy[i * m..(i + 1) * m]);
                    }
                }
            }
            Op::Dropout { x, scale } => {
                let gx = acc(grads, *x, gy.len());
                for ((g, &d), &s) in gx.iter_mut().zip(gy).zip(scale) {
                    *g = *g + d * s;
                }
            }
            Op::SliceCols { x, start } => {
                let src_m = self.value(*x).cols();
                let gx = acc(grads, *x, n * src_m);
                for i in 0..n {
                    add_into(&mut gx[i * src_m + start..i * src_m + start + m], &gy[i * m..(i + 1) * m]);
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pm = self.value(p).cols();
                    if self.ng(p) {
                        let gp = acc(grads, p, n * pm);
                        for i in 0..n {
                            add_into(&mut gp[i * pm..(i + 1) * pm], &gy[i * m + off..i * m + off + pm]);
                        }
                    }
                    off += pm;
                }
            }
            Op::SelectRows { x, rows } => {
                let src_n = self.value(*x).rows();
                let gx = acc(grads, *x, src_n * m);
                for (k, &r) in rows.iter().enumerate() {
                    add_into(&mut gx[r * m..(r + 1) * m], &gy[k * m..(k + 1) * m]);
                }
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                let gx = acc(grads, *x, len);
                for g in gx.iter_mut() {
                    *g = *g + gy[0];
                }
            }
            Op::Bce { logits, targets, mask, count } => {
                let z = self.value(*logits).data();
                let inv = gy[0] / T::from_usize(*count).unwrap();
                let gz = acc(grads, *logits, z.len());
                for i in 0..z.len() {
                    if mask[i] {
                        gz[i] = gz[i] + (sigmoid(z[i]) - targets[i]) * inv;
                    }
                }
            }
        }
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// softplus(-z) + z(1-y), in the overflow-free form.
pub(crate) fn bce_term<T: Scalar>(z: T, y: T) -> T {
    let zero = T::zero();
    z.max(zero) - z * y + (T::one() + (-z.abs()).exp()).ln()
}

pub(crate) fn masked_softmax_rows<T: Scalar>(x: &[T], mask: &[bool], n: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let row = &x[i * m..(i + 1) * m];
        let mrow = &mask[i * m..(i + 1) * m];
        let Some(max) = row
            .iter()
            .zip(mrow)
            .filter(|(_, &ok)| ok)
            .map(|(&v, _)| v)
            .reduce(T::max)
        else {
            continue;
        };
        let mut denom = T::zero();
        for j in 0..m {
            if mrow[j] {
                let e = (row[j] - max).exp();
                out[i * m + j] = e;
                denom = denom + e;
            }
        }
        for v in &mut out[i * m..(i + 1) * m] {
            *v = *v / denom;
        }
    }
    out
}
