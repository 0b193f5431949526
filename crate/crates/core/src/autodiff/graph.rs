use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::kernels::{self, ConvGeom, Padding, PoolMode};

/// Handle to a node on a [`Graph`]. Only valid for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Coarse op category, used to address ops for fault injection in tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    PoolSpatial,
    PoolChannel,
    Dense,
    Sigmoid,
    Relu,
    Scale,
    AddScalar,
    Add,
    Sub,
    Mul,
    Concat,
    Slice,
    Reshape,
    GatherRows,
    SumAll,
    SumLast,
    ExpClamp,
    CrossEntropy,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d(ConvGeom),
    PoolSpatial(PoolMode, Vec<usize>),
    PoolChannel(PoolMode, Vec<usize>),
    Dense,
    Sigmoid,
    Relu,
    Scale(T),
    AddScalar,
    Add,
    Sub,
    Mul,
    Concat(usize),
    Slice { axis: usize, start: usize },
    Reshape,
    GatherRows(Vec<usize>),
    SumAll,
    SumLast,
    ExpClamp(T),
    CrossEntropy { labels: Vec<usize>, probs: Vec<T> },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d(_) => OpKind::Conv2d,
            Op::PoolSpatial(..) => OpKind::PoolSpatial,
            Op::PoolChannel(..) => OpKind::PoolChannel,
            Op::Dense => OpKind::Dense,
            Op::Sigmoid => OpKind::Sigmoid,
            Op::Relu => OpKind::Relu,
            Op::Scale(_) => OpKind::Scale,
            Op::AddScalar => OpKind::AddScalar,
            Op::Add => OpKind::Add,
            Op::Sub => OpKind::Sub,
            Op::Mul => OpKind::Mul,
            Op::Concat(_) => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Reshape => OpKind::Reshape,
            Op::GatherRows(_) => OpKind::GatherRows,
            Op::SumAll => OpKind::SumAll,
            Op::SumLast => OpKind::SumLast,
            Op::ExpClamp(_) => OpKind::ExpClamp,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    parents: Vec<Var>,
}

/// Reverse-mode tape. Ops evaluate eagerly and append a node; node indices are
/// a topological order, so the graph is acyclic by construction and
/// [`Graph::backward`] is a single reverse sweep.
#[derive(Debug)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    track_branches: bool,
    branch_hash: u64,
    fault: Option<(OpKind, T)>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const FNV_PRIME: u64 = 0x100_0000_01b3;

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            track_branches: false,
            branch_hash: 0xcbf2_9ce4_8422_2325,
            fault: None,
        }
    }

    /// Record a fingerprint of every piecewise branch taken (ReLU signs, max
    /// winners, clamp activity). Two evaluations with equal fingerprints lie on
    /// the same smooth piece of the function.
    pub fn with_branch_tracking(mut self) -> Self {
        self.track_branches = true;
        self
    }

    pub fn branch_signature(&self) -> u64 {
        self.branch_hash
    }

    /// Scales every gradient leaving ops of `kind` by `factor`. Test fixture for
    /// checking that gradient verification catches broken backward rules.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: OpKind, factor: T) {
        self.fault = Some((kind, factor));
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn mix(&mut self, word: u64) {
        self.branch_hash = (self.branch_hash ^ word).wrapping_mul(FNV_PRIME);
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: Vec<Var>) -> Var {
        self.nodes.push(Node { value, op, parents });
        Var(self.nodes.len() - 1)
    }

    fn tensor(shape: &[usize], data: Vec<T>) -> Tensor<T> {
        Tensor::new(shape, data).expect("kernel produced consistent shape")
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, Vec::new())
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, padding: Padding, stride: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(k), self.shape(b), padding, stride)?;
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(k).data(),
            self.value(b).data(),
        );
        let value = Self::tensor(&geom.out_shape(), out);
        Ok(self.push(value, Op::Conv2d(geom), vec![x, k, b]))
    }

    fn check_fmap(&self, x: Var, what: &str) -> Result<()> {
        if self.shape(x).len() != 4 {
            return Err(Error::InvalidShape(format!(
                "{what} expects an [N, H, W, D] map, got {:?}",
                self.shape(x)
            )));
        }
        Ok(())
    }

    /// `[N, H, W, D] -> [N, 1, 1, D]`.
    pub fn pool_spatial(&mut self, x: Var, mode: PoolMode) -> Result<Var> {
        self.check_fmap(x, "pool_spatial")?;
        let shape = self.shape(x).to_vec();
        let (out, arg) = kernels::pool_spatial(self.value(x).data(), &shape, mode);
        if self.track_branches {
            for &a in &arg {
                self.mix(a as u64);
            }
        }
        let value = Self::tensor(&[shape[0], 1, 1, shape[3]], out);
        Ok(self.push(value, Op::PoolSpatial(mode, arg), vec![x]))
    }

    /// `[N, H, W, D] -> [N, H, W, 1]`.
    pub fn pool_channel(&mut self, x: Var, mode: PoolMode) -> Result<Var> {
        self.check_fmap(x, "pool_channel")?;
        let shape = self.shape(x).to_vec();
        let (out, arg) = kernels::pool_channel(self.value(x).data(), &shape, mode);
        if self.track_branches {
            for &a in &arg {
                self.mix(a as u64);
            }
        }
        let value = Self::tensor(&[shape[0], shape[1], shape[2], 1], out);
        Ok(self.push(value, Op::PoolChannel(mode, arg), vec![x]))
    }

    /// `x·w + b` for `x: [N, n]`, `w: [n, m]`, `b: [m]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(Error::InvalidShape(format!(
                "dense: x {xs:?}, w {ws:?}, b {bs:?}"
            )));
        }
        let (rows, n, m) = (xs[0], ws[0], ws[1]);
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = Vec::with_capacity(rows * m);
        for r in 0..rows {
            let mut acc = bd.to_vec();
            for k in 0..n {
                let xv = xd[r * n + k];
                for (a, &wv) in acc.iter_mut().zip(&wd[k * m..(k + 1) * m]) {
                    *a += xv * wv;
                }
            }
            out.extend(acc);
        }
        let value = Self::tensor(&[rows, m], out);
        Ok(self.push(value, Op::Dense, vec![x, w, b]))
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Self::tensor(src.shape(), data);
        self.push(value, op, vec![x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid, sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        if self.track_branches {
            let signs: Vec<u64> = self.value(x).data().iter().map(|&v| (v > T::zero()) as u64).collect();
            for chunk in signs.chunks(64) {
                let word = chunk.iter().enumerate().fold(0u64, |w, (i, &s)| w | (s << i));
                self.mix(word);
            }
        }
        self.unary(x, Op::Relu, |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        self.unary(x, Op::Scale(factor), |v| v * factor)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::AddScalar, |v| v + c)
    }

    /// `exp(min(x, clamp))`; the gradient is `exp(min(x, clamp))` on both sides.
    pub fn exp_clamped(&mut self, x: Var, clamp: T) -> Var {
        if self.track_branches {
            let active = self.value(x).data().iter().any(|&v| v > clamp);
            self.mix(active as u64);
        }
        self.unary(x, Op::ExpClamp(clamp), |v| v.min(clamp).exp())
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let out_shape = kernels::broadcast_shape(self.shape(a), self.shape(b))?;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); out_shape.iter().product()];
        kernels::broadcast_walk(&out_shape, self.shape(a), self.shape(b), |o, ia, ib| {
            out[o] = f(ad[ia], bd[ib]);
        });
        let value = Self::tensor(&out_shape, out);
        Ok(self.push(value, op, vec![a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidShape("concat of nothing".into()))?;
        let mut shape = self.shape(*first).to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidShape(format!("concat axis {axis} out of range")));
        }
        shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == shape.len()
                && s.iter().zip(&shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::InvalidShape(format!(
                    "concat along {axis}: {:?} vs {s:?}",
                    self.shape(*first)
                )));
            }
            shape[axis] += s[axis];
        }
        let (outer, _, inner) = kernels::axis_split(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let block = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * block..(o + 1) * block]);
            }
        }
        let value = Self::tensor(&shape, out);
        Ok(self.push(value, Op::Concat(axis), parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let src = self.shape(x).to_vec();
        if axis >= src.len() || len == 0 || start + len > src[axis] {
            return Err(Error::InvalidShape(format!(
                "slice [{start}, {}) along axis {axis} of {src:?}",
                start + len
            )));
        }
        let (outer, extent, inner) = kernels::axis_split(&src, axis);
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&data[base..base + len * inner]);
        }
        let mut shape = src;
        shape[axis] = len;
        let value = Self::tensor(&shape, out);
        Ok(self.push(value, Op::Slice { axis, start }, vec![x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape, vec![x]))
    }

    /// Picks rows of a `[R, K]` matrix.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::InvalidShape(format!("gather_rows on {s:?}")));
        }
        let (r, k) = (s[0], s[1]);
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::InvalidLabel { label: bad, classes: r });
        }
        let data = self.value(x).data();
        let out = rows.iter().flat_map(|&i| data[i * k..(i + 1) * k].iter().copied()).collect();
        let value = Self::tensor(&[rows.len(), k], out);
        Ok(self.push(value, Op::GatherRows(rows.to_vec()), vec![x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::SumAll, vec![x])
    }

    /// Sums the last axis, keeping it with extent 1.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let last = *src.shape().last().unwrap();
        let data = src.data().chunks_exact(last).map(|c| c.iter().copied().sum()).collect();
        let mut shape = src.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        let value = Self::tensor(&shape, data);
        self.push(value, Op::SumLast, vec![x])
    }

    /// Mean softmax cross-entropy of `[n, C]` logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::InvalidShape(format!(
                "cross_entropy: logits {s:?} vs {} labels",
                labels.len()
            )));
        }
        let classes = s[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidLabel { label: bad, classes });
        }
        let mut probs = Vec::with_capacity(labels.len() * classes);
        let mut total = T::zero();
        for (row, &y) in self.value(logits).data().chunks_exact(classes).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
            let z: T = exps.iter().copied().sum();
            total += z.ln() - (row[y] - max);
            probs.extend(exps.into_iter().map(|e| e / z));
        }
        let n = T::from_usize(labels.len()).unwrap();
        let op = Op::CrossEntropy {
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(total / n), op, vec![logits]))
    }

    /// Propagates d`loss`/d(node) to every node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Precondition(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(grad) = self.grads[idx].take() else {
                continue;
            };
            let mut contributions = self.local_backward(idx, &grad);
            if let Some((kind, factor)) = self.fault {
                if kind == self.nodes[idx].op.kind() {
                    for c in &mut contributions {
                        c.iter_mut().for_each(|v| *v *= factor);
                    }
                }
            }
            let parents = self.nodes[idx].parents.clone();
            for (p, contrib) in parents.into_iter().zip(contributions) {
                match &mut self.grads[p.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(&contrib)
                        .for_each(|(a, &c)| *a += c),
                    slot @ None => {
                        *slot = Some(Self::tensor(self.nodes[p.0].value.shape(), contrib));
                    }
                }
            }
            self.grads[idx] = Some(grad);
        }
        Ok(())
    }

    /// Gradient after [`Graph::backward`]; `None` for nodes the loss does not reach.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn grad_or_zeros(&self, v: Var) -> Tensor<T> {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    fn reduce_to(grad_shape: &[usize], grad: &[T], target: &[usize]) -> Vec<T> {
        if grad_shape == target {
            return grad.to_vec();
        }
        let mut out = vec![T::zero(); target.iter().product()];
        kernels::broadcast_walk(grad_shape, target, grad_shape, |o, it, _| out[it] += grad[o]);
        out
    }

    fn local_backward(&self, idx: usize, grad: &Tensor<T>) -> Vec<Vec<T>> {
        let node = &self.nodes[idx];
        let g = grad.data();
        let val = |i: usize| &self.nodes[node.parents[i].0].value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d(geom) => {
                let (gx, gk, gb) = kernels::conv2d_backward(geom, val(0).data(), val(1).data(), g);
                vec![gx, gk, gb]
            }
            Op::PoolSpatial(mode, arg) => {
                let src = val(0).shape();
                let mut gx = vec![T::zero(); val(0).numel()];
                match mode {
                    PoolMode::Avg => {
                        let (n, hw, d) = (src[0], src[1] * src[2], src[3]);
                        let scale = T::one() / T::from_usize(hw).unwrap();
                        for b in 0..n {
                            for p in 0..hw {
                                let row = &mut gx[(b * hw + p) * d..(b * hw + p + 1) * d];
                                for (a, &gv) in row.iter_mut().zip(&g[b * d..(b + 1) * d]) {
                                    *a = gv * scale;
                                }
                            }
                        }
                    }
                    PoolMode::Max => arg.iter().zip(g).for_each(|(&a, &gv)| gx[a] += gv),
                }
                vec![gx]
            }
            Op::PoolChannel(mode, arg) => {
                let d = val(0).shape()[3];
                let mut gx = vec![T::zero(); val(0).numel()];
                match mode {
                    PoolMode::Avg => {
                        let scale = T::one() / T::from_usize(d).unwrap();
                        for (row, &gv) in gx.chunks_exact_mut(d).zip(g) {
                            row.iter_mut().for_each(|a| *a = gv * scale);
                        }
                    }
                    PoolMode::Max => arg.iter().zip(g).for_each(|(&a, &gv)| gx[a] += gv),
                }
                vec![gx]
            }
            Op::Dense => {
                let (x, w) = (val(0), val(1));
                let (rows, n, m) = (x.shape()[0], w.shape()[0], w.shape()[1]);
                let (xd, wd) = (x.data(), w.data());
                let mut gx = vec![T::zero(); rows * n];
                let mut gw = vec![T::zero(); n * m];
                let mut gb = vec![T::zero(); m];
                for r in 0..rows {
                    let gr = &g[r * m..(r + 1) * m];
                    gb.iter_mut().zip(gr).for_each(|(a, &v)| *a += v);
                    for k in 0..n {
                        let wrow = &wd[k * m..(k + 1) * m];
                        gx[r * n + k] = wrow.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        let xv = xd[r * n + k];
                        gw[k * m..(k + 1) * m]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(a, &v)| *a += xv * v);
                    }
                }
                vec![gx, gw, gb]
            }
            Op::Sigmoid => vec![node
                .value
                .data()
                .iter()
                .zip(g)
                .map(|(&s, &gv)| gv * s * (T::one() - s))
                .collect()],
            Op::Relu => vec![val(0)
                .data()
                .iter()
                .zip(g)
                .map(|(&x, &gv)| if x > T::zero() { gv } else { T::zero() })
                .collect()],
            Op::Scale(f) => vec![g.iter().map(|&gv| gv * *f).collect()],
            Op::AddScalar | Op::Reshape => vec![g.to_vec()],
            Op::ExpClamp(_) => vec![node.value.data().iter().zip(g).map(|(&y, &gv)| gv * y).collect()],
            Op::Add | Op::Sub => {
                let gs = node.value.shape();
                let ga = Self::reduce_to(gs, g, val(0).shape());
                let mut gb = Self::reduce_to(gs, g, val(1).shape());
                if matches!(node.op, Op::Sub) {
                    gb.iter_mut().for_each(|v| *v = -*v);
                }
                vec![ga, gb]
            }
            Op::Mul => {
                let (a, b) = (val(0), val(1));
                let gs = node.value.shape();
                let mut ga = vec![T::zero(); a.numel()];
                let mut gb = vec![T::zero(); b.numel()];
                let (ad, bd) = (a.data(), b.data());
                kernels::broadcast_walk(gs, a.shape(), b.shape(), |o, ia, ib| {
                    ga[ia] += g[o] * bd[ib];
                    gb[ib] += g[o] * ad[ia];
                });
                vec![ga, gb]
            }
            Op::Concat(axis) => {
                let (outer, _, inner) = kernels::axis_split(node.value.shape(), *axis);
                let mut outs: Vec<Vec<T>> = node
                    .parents
                    .iter()
                    .map(|p| Vec::with_capacity(self.nodes[p.0].value.numel()))
                    .collect();
                let mut offset = 0;
                for _ in 0..outer {
                    for (out, p) in outs.iter_mut().zip(&node.parents) {
                        let block = self.nodes[p.0].value.shape()[*axis] * inner;
                        out.extend_from_slice(&g[offset..offset + block]);
                        offset += block;
                    }
                }
                outs
            }
            Op::Slice { axis, start } => {
                let src = val(0).shape();
                let (outer, extent, inner) = kernels::axis_split(src, *axis);
                let len = node.value.shape()[*axis];
                let mut gx = vec![T::zero(); val(0).numel()];
                for o in 0..outer {
                    let base = (o * extent + start) * inner;
                    gx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![gx]
            }
            Op::GatherRows(rows) => {
                let k = val(0).shape()[1];
                let mut gx = vec![T::zero(); val(0).numel()];
                for (r, &i) in rows.iter().enumerate() {
                    gx[i * k..(i + 1) * k]
                        .iter_mut()
                        .zip(&g[r * k..(r + 1) * k])
                        .for_each(|(a, &v)| *a += v);
                }
                vec![gx]
            }
            Op::SumAll => vec![vec![g[0]; val(0).numel()]],
            Op::SumLast => {
                let last = *val(0).shape().last().unwrap();
                vec![g.iter().flat_map(|&gv| std::iter::repeat_n(gv, last)).collect()]
            }
            Op::CrossEntropy { labels, probs } => {
                let classes = probs.len() / labels.len();
                let scale = g[0] / T::from_usize(labels.len()).unwrap();
                let mut gx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &y) in labels.iter().enumerate() {
                    gx[r * classes + y] -= scale;
                }
                vec![gx]
            }
        }
    }
}

/// Logistic function, clamped to the open interval (0, 1) at saturation.
pub fn sigmoid<T: Scalar>(v: T) -> T {
    let s = if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    };
    let two = T::one() + T::one();
    s.max(T::min_positive_value()).min(T::one() - T::epsilon() / two)
}
