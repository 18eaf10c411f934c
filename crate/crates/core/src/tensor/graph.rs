use std::collections::{BTreeMap, HashMap};

use super::{axis_split, matmul_into, normalize_rows, shape_str, ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Value {
    Owned(Tensor),
    Param(ParamId),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
        end: usize,
    },
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Sum(Var),
    WeightedSum(Var, Vec<(usize, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// The computation record: an append-only tape of primitive operations.
///
/// Nodes are only ever appended, so every node depends on earlier nodes and
/// the reverse sweep in [`Graph::backward`] visits them in topological order.
/// Parameter nodes borrow their values from a [`ParamSet`].
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

/// Result of a backward sweep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    params: BTreeMap<ParamId, Vec<f64>>,
    leaves: HashMap<Var, Vec<f64>>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(&id).map(Vec::as_slice)
    }

    pub fn leaf(&self, var: Var) -> Option<&[f64]> {
        self.leaves.get(&var).map(Vec::as_slice)
    }

    /// Adds another set of parameter gradients into this one.
    pub fn merge(&mut self, other: &Gradients) {
        for (id, g) in &other.params {
            match self.params.get_mut(id) {
                Some(mine) => mine.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => {
                    self.params.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.params.values_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Adds parameter gradients into the `grad` buffers of `params`.
    pub fn accumulate_into(&self, params: &mut ParamSet) {
        for (id, g) in &self.params {
            params.get_mut(*id).accumulate_grad(g);
        }
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params.iter().map(|(id, g)| (*id, g.as_slice()))
    }
}

fn add_into(acc: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match acc {
        Some(a) => a.iter_mut().zip(&delta).for_each(|(x, d)| *x += d),
        None => *acc = Some(delta),
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a free tensor. Gradients are tracked when the tensor has
    /// `requires_grad` set.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    /// Node for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds `b` to the 2-D tensor `a`, repeating it over rows, columns, or
    /// both. `b` may be `[1, m]`, `[m]` (treated as a row), `[n, 1]`, or a
    /// single value.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = {
            let s = self.shape(a);
            if s.len() != 2 {
                return Err(Error::dim(format!(
                    "add_broadcast expects a 2-D left operand, got {}",
                    shape_str(s)
                )));
            }
            (s[0], s[1])
        };
        let (br, bc) = broadcast_dims(self.shape(b), n, m)?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = av.to_vec();
        for r in 0..n {
            for c in 0..m {
                let bi = if br == 1 { 0 } else { r } * bc + if bc == 1 { 0 } else { c };
                out[r * m + c] += bv[bi];
            }
        }
        let out = Tensor::new(vec![n, m], out)?;
        Ok(self.push(out, Op::AddBroadcast(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).relu();
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.value(a).softmax(axis)?;
        Ok(self.push(out, Op::Softmax(a, axis), &[a]))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.value(a).log_softmax(axis)?;
        Ok(self.push(out, Op::LogSoftmax(a, axis), &[a]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let out = xv.layer_norm(self.value(gain), self.value(bias), eps)?;
        let (n, d) = (xv.rows(), xv.cols());
        let (normed, inv_std) = normalize_rows(xv.data(), n, d, eps);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat(&tensors, axis)?;
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), parts))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let out = self.value(x).slice(axis, start, end)?;
        Ok(self.push(
            out,
            Op::Slice {
                x,
                axis,
                start,
                end,
            },
            &[x],
        ))
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let out = self.value(table).gather_rows(ids)?;
        Ok(self.push(out, Op::GatherRows(table, ids.to_vec()), &[table]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// Σ coef · x[flat_index] over `entries`, as a one-element tensor.
    pub fn weighted_sum(&mut self, x: Var, entries: Vec<(usize, f64)>) -> Result<Var> {
        let data = self.value(x).data();
        let mut total = 0.0;
        for &(idx, coef) in &entries {
            let v = data.get(idx).ok_or_else(|| {
                Error::dim(format!("weighted_sum index {idx} out of range {}", data.len()))
            })?;
            total += coef * v;
        }
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(x, entries), &[x]))
    }

    /// Inverted dropout: zeroes each entry with probability `p` and rescales
    /// the survivors by 1/(1-p).
    pub fn dropout<R: rand::Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(x);
        }
        let shape = self.shape(x).to_vec();
        let keep = 1.0 / (1.0 - p);
        let len: usize = shape.iter().product();
        let mask = (0..len)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let m = self.constant(Tensor::new(shape, mask)?);
        self.mul(x, m)
    }

    /// Reverse sweep from a one-element `loss`.
    ///
    /// The returned gradients are not written anywhere; use
    /// [`Gradients::accumulate_into`] to add them to parameter buffers.
    /// Calling this twice yields the same gradients both times.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {}",
                shape_str(self.shape(loss))
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut result = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    result.leaves.insert(Var(idx), g);
                }
                Op::Param(id) => {
                    result.params.insert(*id, g);
                }
                op => self.propagate(op, idx, g, &mut grads)?,
            }
        }
        Ok(result)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(
        &self,
        op: &Op,
        idx: usize,
        g: Vec<f64>,
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let out = match &self.nodes[idx].value {
            Value::Owned(t) => t,
            Value::Param(_) => unreachable!("parameter nodes carry Op::Param"),
        };
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.wants(*a) {
                    // dA = dC · Bᵀ
                    let bt = bv.transpose()?;
                    let mut da = vec![0.0; m * k];
                    matmul_into(&g, bt.data(), &mut da, m, n, k);
                    add_into(&mut grads[a.0], da);
                }
                if self.wants(*b) {
                    // dB = Aᵀ · dC
                    let at = av.transpose()?;
                    let mut db = vec![0.0; k * n];
                    matmul_into(at.data(), &g, &mut db, k, m, n);
                    add_into(&mut grads[b.0], db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (out.rows(), out.cols());
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[j * r + i] = g[i * c + j];
                    }
                }
                add_into(&mut grads[a.0], da);
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g.clone());
                }
                if self.wants(*b) {
                    add_into(&mut grads[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g.clone());
                }
                if self.wants(*b) {
                    add_into(&mut grads[b.0], g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g.iter().zip(bv).map(|(g, b)| g * b).collect());
                }
                if self.wants(*b) {
                    add_into(&mut grads[b.0], g.iter().zip(av).map(|(g, a)| g * a).collect());
                }
            }
            Op::AddBroadcast(a, b) => {
                let (n, m) = (out.rows(), out.cols());
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g.clone());
                }
                if self.wants(*b) {
                    let (br, bc) = broadcast_dims(self.shape(*b), n, m)?;
                    let mut db = vec![0.0; br * bc];
                    for r in 0..n {
                        for c in 0..m {
                            let bi = if br == 1 { 0 } else { r } * bc + if bc == 1 { 0 } else { c };
                            db[bi] += g[r * m + c];
                        }
                    }
                    add_into(&mut grads[b.0], db);
                }
            }
            Op::Scale(a, s) => {
                add_into(&mut grads[a.0], g.iter().map(|v| v * s).collect());
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                let da = g
                    .iter()
                    .zip(av)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                add_into(&mut grads[a.0], da);
            }
            Op::Softmax(a, axis) => {
                let y = out.data();
                let (outer, len, inner) = axis_split(out.shape(), *axis);
                let mut da = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..len {
                            da[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                add_into(&mut grads[a.0], da);
            }
            Op::LogSoftmax(a, axis) => {
                let y = out.data();
                let (outer, len, inner) = axis_split(out.shape(), *axis);
                let mut da = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let total: f64 = (0..len).map(|k| g[at(k)]).sum();
                        for k in 0..len {
                            da[at(k)] = g[at(k)] - y[at(k)].exp() * total;
                        }
                    }
                }
                add_into(&mut grads[a.0], da);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let (n, d) = (out.rows(), out.cols());
                let gv = self.value(*gain).data();
                if self.wants(*gain) {
                    let mut dg = vec![0.0; d];
                    for r in 0..n {
                        for c in 0..d {
                            dg[c] += g[r * d + c] * normed[r * d + c];
                        }
                    }
                    add_into(&mut grads[gain.0], dg);
                }
                if self.wants(*bias) {
                    let mut db = vec![0.0; d];
                    for r in 0..n {
                        for c in 0..d {
                            db[c] += g[r * d + c];
                        }
                    }
                    add_into(&mut grads[bias.0], db);
                }
                if self.wants(*x) {
                    let mut dx = vec![0.0; n * d];
                    for r in 0..n {
                        let dxhat: Vec<f64> = (0..d).map(|c| g[r * d + c] * gv[c]).collect();
                        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dxhat_xhat = (0..d)
                            .map(|c| dxhat[c] * normed[r * d + c])
                            .sum::<f64>()
                            / d as f64;
                        for c in 0..d {
                            dx[r * d + c] = inv_std[r]
                                * (dxhat[c] - mean_dxhat - normed[r * d + c] * mean_dxhat_xhat);
                        }
                    }
                    add_into(&mut grads[x.0], dx);
                }
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = axis_split(out.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let plen = self.shape(*p)[*axis];
                    if self.wants(*p) {
                        let mut dp = Vec::with_capacity(outer * plen * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            dp.extend_from_slice(&g[base..base + plen * inner]);
                        }
                        add_into(&mut grads[p.0], dp);
                    }
                    offset += plen;
                }
            }
            Op::Slice {
                x,
                axis,
                start,
                end,
            } => {
                let xshape = self.shape(*x);
                let (outer, len, inner) = axis_split(xshape, *axis);
                let width = (end - start) * inner;
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let dst = (o * len + start) * inner;
                    dx[dst..dst + width].copy_from_slice(&g[o * width..(o + 1) * width]);
                }
                add_into(&mut grads[x.0], dx);
            }
            Op::GatherRows(table, ids) => {
                let tv = self.value(*table);
                let c = tv.cols();
                let mut dt = vec![0.0; tv.len()];
                for (k, &id) in ids.iter().enumerate() {
                    for j in 0..c {
                        dt[id * c + j] += g[k * c + j];
                    }
                }
                add_into(&mut grads[table.0], dt);
            }
            Op::Reshape(x) => add_into(&mut grads[x.0], g),
            Op::Sum(x) => {
                let len = self.value(*x).len();
                add_into(&mut grads[x.0], vec![g[0]; len]);
            }
            Op::WeightedSum(x, entries) => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for &(i, coef) in entries {
                    dx[i] += coef * g[0];
                }
                add_into(&mut grads[x.0], dx);
            }
        }
        Ok(())
    }
}

fn broadcast_dims(bshape: &[usize], n: usize, m: usize) -> Result<(usize, usize)> {
    let dims = match bshape {
        [len] if *len == m => (1, m),
        [1] => (1, 1),
        [r, c] if (*r == 1 || *r == n) && (*c == 1 || *c == m) => (*r, *c),
        _ => {
            return Err(Error::dim(format!(
                "cannot broadcast {} onto [{n}×{m}]",
                shape_str(bshape)
            )))
        }
    };
    Ok(dims)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_weights_gives_ones() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap());
        let mut g = Graph::new(&ps);
        let wv = g.param(w);
        let loss = g.sum(wv);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param(w).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let x = g.leaf(Tensor::zeros(&[2, 2]).with_requires_grad(true));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn repeated_backward_accumulates_in_params() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::full(&[2, 2], 1.0));
        let grads = {
            let mut g = Graph::new(&ps);
            let wv = g.param(w);
            let loss = g.sum(wv);
            let first = g.backward(loss).unwrap();
            let second = g.backward(loss).unwrap();
            assert_eq!(first, second);
            first
        };
        grads.accumulate_into(&mut ps);
        grads.accumulate_into(&mut ps);
        assert_eq!(ps.get(w).grad().unwrap(), &[2.0; 4]);
        ps.zero_grad();
        assert!(ps.get(w).grad().is_none());
    }

    #[test]
    fn broadcast_shapes() {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let row = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        let col = g.constant(Tensor::from_rows(&[vec![10.0], vec![20.0]]).unwrap());
        let r = g.add_broadcast(a, row).unwrap();
        let c = g.add_broadcast(r, col).unwrap();
        assert_eq!(g.value(c).data(), &[11.0, 12.0, 13.0, 21.0, 22.0, 23.0]);
        let bad = g.constant(Tensor::zeros(&[3, 3]));
        assert!(g.add_broadcast(a, bad).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::full(&[1, 2], 2.0));
        let mut g = Graph::new(&ps);
        let wv = g.param(w);
        let c = g.constant(Tensor::full(&[1, 2], 3.0));
        let p = g.mul(wv, c).unwrap();
        let loss = g.sum(p);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param(w).unwrap(), &[3.0, 3.0]);
        assert!(grads.leaf(c).is_none());
    }
}
