//! Reverse-mode autodiff over a flat tape of tensor ops.
//!
//! A [`Graph`] owns every intermediate value of one computation. Nodes are
//! created in topological order, so the backward pass is a single reverse
//! sweep. Parameters are attached as leaves; [`Graph::grad`] returns a named
//! gradient map covering every trainable parameter (zeros for parameters the
//! loss never touched).

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::param::ParamSet;
use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use super::KernelError;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef(usize);

// some fields (the add-const shift, stop-grad input, lin-comb base) are
// consumed at forward time only; they stay on the tape so a node fully
// describes the op that produced it
#[allow(dead_code)]
enum Op {
    Leaf,
    Linear { x: NodeRef, w: NodeRef, b: Option<NodeRef> },
    Add(NodeRef, NodeRef),
    Sub(NodeRef, NodeRef),
    Mul(NodeRef, NodeRef),
    Scale(NodeRef, f64),
    AddConst(NodeRef, f64),
    Relu(NodeRef),
    Tanh(NodeRef),
    Sigmoid(NodeRef),
    Softplus(NodeRef),
    GroupSoftmax { x: NodeRef, group: usize },
    GroupLogSoftmax { x: NodeRef, group: usize },
    /// One-hot sample with straight-through gradient; `probs` holds the
    /// row-wise softmax the backward pass differentiates through.
    StSample { x: NodeRef, group: usize, probs: Tensor },
    CatCols(Vec<NodeRef>),
    SumCols(NodeRef),
    SumAll(NodeRef),
    MaxConst(NodeRef, f64),
    PickPerRow { x: NodeRef, idx: Vec<usize> },
    StopGrad(NodeRef),
    LinComb { coeffs: NodeRef, base: Tensor, basis: Arc<Vec<Tensor>> },
    ConvexComb { weights: NodeRef, items: Vec<NodeRef> },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// One forward computation, ready for a reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, (NodeRef, bool)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeRef {
        self.nodes.push(Node { op, value });
        NodeRef(self.nodes.len() - 1)
    }

    pub fn value(&self, n: NodeRef) -> &Tensor {
        &self.nodes[n.0].value
    }

    pub fn constant(&mut self, t: Tensor) -> NodeRef {
        self.push(Op::Leaf, t)
    }

    /// Attach every parameter of `ps` as a leaf; look them up with [`Graph::p`].
    pub fn attach(&mut self, ps: &ParamSet) {
        for (name, param) in ps.iter() {
            let nr = self.push(Op::Leaf, param.value.clone());
            self.params.insert(name.clone(), (nr, param.trainable));
        }
    }

    /// Attach a single named parameter leaf.
    pub fn attach_one(&mut self, name: &str, value: Tensor, trainable: bool) -> NodeRef {
        let nr = self.push(Op::Leaf, value);
        self.params.insert(name.to_string(), (nr, trainable));
        nr
    }

    /// Node of an attached parameter. Panics on unknown names, which are
    /// programming errors rather than runtime conditions.
    pub fn p(&self, name: &str) -> NodeRef {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} not attached"))
            .0
    }

    fn same_shape(&self, a: NodeRef, b: NodeRef, op: &str) -> Result<(), KernelError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(KernelError::ShapeMismatch {
                op: op.into(),
                detail: format!("{sa:?} vs {sb:?}"),
            });
        }
        Ok(())
    }

    /// `y = x * w^T + b` with `x` of shape `[batch, in]` (or `[in]`),
    /// `w` of shape `[out, in]`, `b` of shape `[out]`.
    pub fn linear(&mut self, x: NodeRef, w: NodeRef, b: Option<NodeRef>) -> Result<NodeRef, KernelError> {
        let (xin, wt, batch) = {
            let xv = self.value(x);
            let wv = self.value(w);
            (xv.cols(), wv.shape().to_vec(), if xv.rank() == 2 { Some(xv.rows()) } else { None })
        };
        if wt.len() != 2 || wt[1] != xin {
            return Err(KernelError::ShapeMismatch {
                op: "linear".into(),
                detail: format!("weight {wt:?} does not accept input width {xin}"),
            });
        }
        let out = wt[0];
        if let Some(bn) = b {
            let bs = self.value(bn).shape().to_vec();
            if bs != [out] {
                return Err(KernelError::ShapeMismatch {
                    op: "linear".into(),
                    detail: format!("bias {bs:?} vs output width {out}"),
                });
            }
        }
        let mut y = matmul_nt(self.value(x), self.value(w));
        if let Some(bn) = b {
            let bias = self.value(bn).clone();
            let cols = y.cols();
            for row in y.data_mut().chunks_mut(cols) {
                for (v, bv) in row.iter_mut().zip(bias.data()) {
                    *v += bv;
                }
            }
        }
        if batch.is_none() {
            y = Tensor::vector(y.data().to_vec());
        }
        Ok(self.push(Op::Linear { x, w, b }, y))
    }

    pub fn add(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef, KernelError> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).add(self.value(b));
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef, KernelError> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).sub(self.value(b));
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef, KernelError> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).mul(self.value(b));
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, a: NodeRef, c: f64) -> NodeRef {
        let v = self.value(a).scale(c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_const(&mut self, a: NodeRef, c: f64) -> NodeRef {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddConst(a, c), v)
    }

    pub fn relu(&mut self, a: NodeRef) -> NodeRef {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn tanh(&mut self, a: NodeRef) -> NodeRef {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeRef) -> NodeRef {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn softplus(&mut self, a: NodeRef) -> NodeRef {
        let v = self.value(a).map(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        self.push(Op::Softplus(a), v)
    }

    fn check_group(&self, x: NodeRef, group: usize, op: &str) -> Result<(), KernelError> {
        let cols = self.value(x).cols();
        if group == 0 || cols % group != 0 {
            return Err(KernelError::ShapeMismatch {
                op: op.into(),
                detail: format!("row width {cols} not divisible by group {group}"),
            });
        }
        Ok(())
    }

    /// Softmax over consecutive groups of `group` columns in each row.
    pub fn group_softmax(&mut self, x: NodeRef, group: usize) -> Result<NodeRef, KernelError> {
        self.check_group(x, group, "group_softmax")?;
        let mut v = self.value(x).clone();
        for chunk in v.data_mut().chunks_mut(group) {
            softmax_inplace(chunk);
        }
        Ok(self.push(Op::GroupSoftmax { x, group }, v))
    }

    pub fn group_log_softmax(&mut self, x: NodeRef, group: usize) -> Result<NodeRef, KernelError> {
        self.check_group(x, group, "group_log_softmax")?;
        let mut v = self.value(x).clone();
        for chunk in v.data_mut().chunks_mut(group) {
            log_softmax_inplace(chunk);
        }
        Ok(self.push(Op::GroupLogSoftmax { x, group }, v))
    }

    /// One-hot categorical sample per group with a straight-through backward
    /// pass: gradients flow as if the output were the softmax probabilities.
    pub fn st_sample(
        &mut self,
        x: NodeRef,
        group: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeRef, KernelError> {
        self.check_group(x, group, "st_sample")?;
        let mut probs = self.value(x).clone();
        for chunk in probs.data_mut().chunks_mut(group) {
            softmax_inplace(chunk);
        }
        let mut sample = Tensor::zeros(probs.shape());
        for (pc, sc) in probs.data().chunks(group).zip(sample.data_mut().chunks_mut(group)) {
            let u: f64 = rng.gen();
            sc[sample_index(pc, u)] = 1.0;
        }
        Ok(self.push(Op::StSample { x, group, probs }, sample))
    }

    pub fn cat_cols(&mut self, parts: &[NodeRef]) -> Result<NodeRef, KernelError> {
        let rank = self.value(parts[0]).rank();
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows || v.rank() != rank {
                return Err(KernelError::ShapeMismatch {
                    op: "cat_cols".into(),
                    detail: format!("{:?} vs leading {:?}", v.shape(), self.value(parts[0]).shape()),
                });
            }
            cols += v.cols();
        }
        let mut data = vec![0.0; rows * cols];
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            let c = v.cols();
            for r in 0..rows {
                data[r * cols + off..r * cols + off + c].copy_from_slice(&v.data()[r * c..(r + 1) * c]);
            }
            off += c;
        }
        let shape = if rank == 2 { vec![rows, cols] } else { vec![cols] };
        let value = Tensor::new(shape, data).expect("cat_cols shape");
        Ok(self.push(Op::CatCols(parts.to_vec()), value))
    }

    /// Row-wise sum: `[batch, cols] -> [batch]`.
    pub fn sum_cols(&mut self, x: NodeRef) -> NodeRef {
        let v = self.value(x);
        let cols = v.cols();
        let sums: Vec<f64> = v.data().chunks(cols).map(|r| r.iter().sum()).collect();
        self.push(Op::SumCols(x), Tensor::vector(sums))
    }

    pub fn sum_all(&mut self, x: NodeRef) -> NodeRef {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Op::SumAll(x), Tensor::scalar(s))
    }

    pub fn mean_all(&mut self, x: NodeRef) -> NodeRef {
        let n = self.value(x).numel() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Element-wise `max(c, x)`; gradient passes only where `x > c`.
    pub fn max_const(&mut self, x: NodeRef, c: f64) -> NodeRef {
        let v = self.value(x).map(|a| a.max(c));
        self.push(Op::MaxConst(x, c), v)
    }

    /// Select one column per row: `[batch, cols] -> [batch]`.
    pub fn pick_per_row(&mut self, x: NodeRef, idx: &[usize]) -> Result<NodeRef, KernelError> {
        let v = self.value(x);
        let (rows, cols) = (v.rows(), v.cols());
        if idx.len() != rows || idx.iter().any(|&i| i >= cols) {
            return Err(KernelError::ShapeMismatch {
                op: "pick_per_row".into(),
                detail: format!("{} indices for {rows} rows of width {cols}", idx.len()),
            });
        }
        let picked: Vec<f64> = idx.iter().enumerate().map(|(r, &i)| v.at(r, i)).collect();
        Ok(self.push(Op::PickPerRow { x, idx: idx.to_vec() }, Tensor::vector(picked)))
    }

    pub fn stop_grad(&mut self, x: NodeRef) -> NodeRef {
        let v = self.value(x).clone();
        self.push(Op::StopGrad(x), v)
    }

    /// `base + sum_j coeffs[j] * basis[j]`, differentiable in `coeffs` only.
    pub fn lin_comb(
        &mut self,
        coeffs: NodeRef,
        base: Tensor,
        basis: Arc<Vec<Tensor>>,
    ) -> Result<NodeRef, KernelError> {
        let k = self.value(coeffs).numel();
        if basis.len() != k {
            return Err(KernelError::ShapeMismatch {
                op: "lin_comb".into(),
                detail: format!("{} coefficients vs {} basis tensors", k, basis.len()),
            });
        }
        for b in basis.iter() {
            if b.shape() != base.shape() {
                return Err(KernelError::ShapeMismatch {
                    op: "lin_comb".into(),
                    detail: format!("basis {:?} vs base {:?}", b.shape(), base.shape()),
                });
            }
        }
        let mut value = base.clone();
        for (j, b) in basis.iter().enumerate() {
            value.axpy(self.value(coeffs).get(j), b);
        }
        Ok(self.push(Op::LinComb { coeffs, base, basis }, value))
    }

    /// `sum_i weights[i] * items[i]` over shape-identical tensors.
    pub fn convex_comb(&mut self, weights: NodeRef, items: &[NodeRef]) -> Result<NodeRef, KernelError> {
        if self.value(weights).numel() != items.len() {
            return Err(KernelError::ShapeMismatch {
                op: "convex_comb".into(),
                detail: format!(
                    "{} weights vs {} items",
                    self.value(weights).numel(),
                    items.len()
                ),
            });
        }
        for &it in &items[1..] {
            self.same_shape(items[0], it, "convex_comb")?;
        }
        let mut value = Tensor::zeros(self.value(items[0]).shape());
        for (i, &it) in items.iter().enumerate() {
            value.axpy(self.value(weights).get(i), self.value(it));
        }
        Ok(self.push(Op::ConvexComb { weights, items: items.to_vec() }, value))
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// trainable attached parameter; parameters off the loss's computation
    /// path get exact zeros.
    pub fn grad(&self, loss: NodeRef) -> Result<BTreeMap<String, Tensor>, KernelError> {
        if self.value(loss).numel() != 1 {
            return Err(KernelError::NonScalarLoss { shape: self.value(loss).shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut out = BTreeMap::new();
        for (name, (nr, trainable)) in &self.params {
            if !trainable {
                continue;
            }
            let g = grads[nr.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.value(*nr).shape()));
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn accum(&self, grads: &mut [Option<Tensor>], n: NodeRef, delta: Tensor) {
        match &mut grads[n.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn backward_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::StopGrad(_) => {}
            Op::Linear { x, w, b } => {
                let gm = as_matrix(g);
                let xv = as_matrix(self.value(*x));
                let dw = matmul_tn(&gm, &xv);
                let dx = matmul(&gm, self.value(*w));
                let dx = reshape_like(dx, self.value(*x));
                self.accum(grads, *x, dx);
                self.accum(grads, *w, dw);
                if let Some(bn) = b {
                    let cols = gm.cols();
                    let mut db = vec![0.0; cols];
                    for row in gm.data().chunks(cols) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accum(grads, *bn, Tensor::vector(db));
                }
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                self.accum(grads, *a, g.mul(self.value(*b)));
                self.accum(grads, *b, g.mul(self.value(*a)));
            }
            Op::Scale(a, c) => self.accum(grads, *a, g.scale(*c)),
            Op::AddConst(a, _) => self.accum(grads, *a, g.clone()),
            Op::Relu(a) => {
                let xv = self.value(*a);
                let d = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                        .collect(),
                )
                .expect("relu grad");
                self.accum(grads, *a, d);
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let d = Tensor::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(y.data()).map(|(&gv, &y)| gv * (1.0 - y * y)).collect(),
                )
                .expect("tanh grad");
                self.accum(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let d = Tensor::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(y.data()).map(|(&gv, &y)| gv * y * (1.0 - y)).collect(),
                )
                .expect("sigmoid grad");
                self.accum(grads, *a, d);
            }
            Op::Softplus(a) => {
                let xv = self.value(*a);
                let d = Tensor::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(xv.data()).map(|(&gv, &x)| gv * sigmoid(x)).collect(),
                )
                .expect("softplus grad");
                self.accum(grads, *a, d);
            }
            Op::GroupSoftmax { x, group } => {
                self.accum(grads, *x, softmax_backward(g, &node.value, *group));
            }
            Op::StSample { x, group, probs } => {
                self.accum(grads, *x, softmax_backward(g, probs, *group));
            }
            Op::GroupLogSoftmax { x, group } => {
                let mut d = g.clone();
                for (dc, yc) in d.data_mut().chunks_mut(*group).zip(node.value.data().chunks(*group)) {
                    let gsum: f64 = dc.iter().sum();
                    for (dv, &yv) in dc.iter_mut().zip(yc) {
                        *dv -= gsum * yv.exp();
                    }
                }
                self.accum(grads, *x, d);
            }
            Op::CatCols(parts) => {
                let rows = node.value.rows();
                let cols = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let c = pv.cols();
                    let mut d = Tensor::zeros(pv.shape());
                    for r in 0..rows {
                        d.data_mut()[r * c..(r + 1) * c]
                            .copy_from_slice(&g.data()[r * cols + off..r * cols + off + c]);
                    }
                    self.accum(grads, p, d);
                    off += c;
                }
            }
            Op::SumCols(x) => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut d = Tensor::zeros(xv.shape());
                for (r, row) in d.data_mut().chunks_mut(cols).enumerate() {
                    row.fill(g.get(r));
                }
                self.accum(grads, *x, d);
            }
            Op::SumAll(x) => {
                let d = Tensor::full(self.value(*x).shape(), g.get(0));
                self.accum(grads, *x, d);
            }
            Op::MaxConst(x, c) => {
                let xv = self.value(*x);
                let d = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gv, &x)| if x > *c { gv } else { 0.0 })
                        .collect(),
                )
                .expect("max_const grad");
                self.accum(grads, *x, d);
            }
            Op::PickPerRow { x, idx } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut d = Tensor::zeros(xv.shape());
                for (r, &c) in idx.iter().enumerate() {
                    d.data_mut()[r * cols + c] = g.get(r);
                }
                self.accum(grads, *x, d);
            }
            Op::LinComb { coeffs, basis, .. } => {
                let dc: Vec<f64> = basis.iter().map(|b| b.dot_slice(g)).collect();
                self.accum(grads, *coeffs, Tensor::vector(dc));
            }
            Op::ConvexComb { weights, items } => {
                let wv = self.value(*weights).clone();
                let dw: Vec<f64> = items.iter().map(|&it| self.value(it).dot_slice(g)).collect();
                self.accum(grads, *weights, Tensor::vector(dw));
                for (i, &it) in items.iter().enumerate() {
                    self.accum(grads, it, g.scale(wv.get(i)));
                }
            }
        }
    }
}

impl Tensor {
    fn dot_slice(&self, other: &Tensor) -> f64 {
        self.data().iter().zip(other.data()).map(|(a, b)| a * b).sum()
    }
}

fn as_matrix(t: &Tensor) -> Tensor {
    if t.rank() == 2 {
        t.clone()
    } else {
        Tensor::matrix(1, t.numel(), t.data().to_vec()).expect("as_matrix")
    }
}

fn reshape_like(t: Tensor, like: &Tensor) -> Tensor {
    if like.rank() == 2 {
        t
    } else {
        Tensor::vector(t.data().to_vec())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn log_softmax_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    for v in row.iter_mut() {
        *v -= lse;
    }
}

pub(crate) fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn softmax_backward(g: &Tensor, probs: &Tensor, group: usize) -> Tensor {
    let mut d = g.clone();
    for (dc, pc) in d.data_mut().chunks_mut(group).zip(probs.data().chunks(group)) {
        let inner: f64 = dc.iter().zip(pc).map(|(gv, pv)| gv * pv).sum();
        for (dv, &pv) in dc.iter_mut().zip(pc) {
            *dv = pv * (*dv - inner);
        }
    }
    d
}
