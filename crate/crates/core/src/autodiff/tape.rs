//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of a forward pass as a node. Parameters
//! are read from a borrowed [`ParamStore`] and never copied unless a node
//! needs the whole tensor. [`Tape::backward`] walks the nodes once in reverse
//! insertion order, which is a reverse topological order because a node can
//! only reference nodes created before it.

use super::params::{Gradients, ParamId, ParamStore};
use super::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Weight matrix, recurrent matrix and bias of one gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateIds {
    pub input: ParamId,
    pub recurrent: ParamId,
    pub bias: ParamId,
}

/// Update, reset and candidate gates of a GRU cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruIds {
    pub update: GateIds,
    pub reset: GateIds,
    pub candidate: GateIds,
}

/// Input, forget, output and candidate gates of an LSTM cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmIds {
    pub input: GateIds,
    pub forget: GateIds,
    pub output: GateIds,
    pub candidate: GateIds,
}

/// Deliberate backward-rule corruption, used to confirm that the gradient
/// checker notices a broken derivative.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackwardFault {
    #[default]
    None,
    /// `sigmoid` backward returns `s` instead of `s(1-s)`.
    SigmoidDerivative,
    /// GRU backward drops the reset-gate contribution.
    GruResetGate,
}

#[derive(Debug)]
struct GruCache {
    update: Vec<f64>,
    reset: Vec<f64>,
    candidate: Vec<f64>,
    reset_hidden: Vec<f64>,
}

#[derive(Debug)]
struct LstmCache {
    input: Vec<f64>,
    forget: Vec<f64>,
    output: Vec<f64>,
    candidate: Vec<f64>,
    cell_tanh: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    ParamRow { param: ParamId, row: usize },
    MatMul(Var, Var),
    Linear { weight: ParamId, x: Var },
    AddBias { x: Var, bias: ParamId },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, start: usize },
    Dot(Var, Var),
    Mean(Vec<Var>),
    Softmax(Var),
    WeightedSum { weights: Var, items: Vec<Var> },
    SoftmaxCrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    SquaredError { pred: Var, target: f64 },
    Gru { x: Option<Var>, h: Var, ids: GruIds, cache: Box<GruCache> },
    Lstm { x: Var, state: Var, ids: LstmIds, cache: Box<LstmCache> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    fault: BackwardFault,
}

fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[i * cols..(i + 1) * cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn matvec_t(w: &[f64], rows: usize, cols: usize, g: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        let gi = g[i];
        if gi == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += gi * a;
        }
    }
}

fn outer_acc(dw: &mut [f64], cols: usize, g: &[f64], x: &[f64]) {
    for (i, &gi) in g.iter().enumerate() {
        if gi == 0.0 {
            continue;
        }
        let row = &mut dw[i * cols..(i + 1) * cols];
        for (d, xj) in row.iter_mut().zip(x) {
            *d += gi * xj;
        }
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

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            fault: BackwardFault::None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: BackwardFault) {
        self.fault = fault;
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).clone();
        self.push(value, Op::Param(id))
    }

    /// Row `row` of a rank-2 parameter, as a vector.
    pub fn param_row(&mut self, id: ParamId, row: usize) -> Result<Var> {
        let table = self.params.get(id);
        if table.shape().len() != 2 || row >= table.rows() {
            return Err(Error::OutOfRange(format!(
                "row {row} of parameter {} with shape {:?}",
                self.params.name(id),
                table.shape()
            )));
        }
        let value = Tensor::vector(table.row(row).to_vec());
        Ok(self.push(value, Op::ParamRow { param: id, row }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `W · x` for a parameter matrix `W` and a vector `x`.
    pub fn linear(&mut self, weight: ParamId, x: Var) -> Result<Var> {
        let w = self.params.get(weight);
        let xv = self.data(x);
        if w.shape().len() != 2 || w.cols() != xv.len() {
            return Err(Error::shape("linear", w.shape(), self.shape(x)));
        }
        let mut out = vec![0.0; w.rows()];
        matvec(w.data(), w.rows(), w.cols(), xv, &mut out);
        Ok(self.push(Tensor::vector(out), Op::Linear { weight, x }))
    }

    pub fn add_bias(&mut self, x: Var, bias: ParamId) -> Result<Var> {
        let b = self.params.get(bias);
        if b.len() != self.value(x).len() {
            return Err(Error::shape("add_bias", self.shape(x), b.shape()));
        }
        let data = self.data(x).iter().zip(b.data()).map(|(a, b)| a + b).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(value, Op::AddBias { x, bias }))
    }

    /// `W · x + b`.
    pub fn affine(&mut self, weight: ParamId, x: Var, bias: ParamId) -> Result<Var> {
        let wx = self.linear(weight, x)?;
        self.add_bias(wx, bias)
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x).map(|a| a * factor);
        self.push(v, Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat(&values, axis)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Elements `start..start + len` of a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 1 || len == 0 || start + len > xv.len() {
            return Err(Error::OutOfRange(format!("slice {start}..{} of {:?}", start + len, xv.shape())));
        }
        let value = Tensor::vector(xv.data()[start..start + len].to_vec());
        Ok(self.push(value, Op::Slice { x, start }))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return Err(Error::shape("dot", self.shape(a), self.shape(b)));
        }
        let s = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b)))
    }

    /// Elementwise arithmetic mean of equally shaped tensors.
    pub fn mean(&mut self, items: &[Var]) -> Result<Var> {
        let first = *items.first().ok_or(Error::Empty("mean"))?;
        let mut acc = vec![0.0; self.value(first).len()];
        for &v in items {
            if self.shape(v) != self.shape(first) {
                return Err(Error::shape("mean", self.shape(first), self.shape(v)));
            }
            for (a, x) in acc.iter_mut().zip(self.data(v)) {
                *a += x;
            }
        }
        let n = items.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        let value = Tensor::new(self.shape(first).to_vec(), acc)?;
        Ok(self.push(value, Op::Mean(items.to_vec())))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let probs = softmax(self.data(x));
        let value = Tensor::new(self.shape(x).to_vec(), probs).expect("same shape");
        self.push(value, Op::Softmax(x))
    }

    /// `Σ_k weights[k] · items[k]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let first = *items.first().ok_or(Error::Empty("weighted_sum"))?;
        if self.value(weights).len() != items.len() {
            return Err(Error::shape("weighted_sum", self.shape(weights), &[items.len()]));
        }
        let mut acc = vec![0.0; self.value(first).len()];
        for (k, &v) in items.iter().enumerate() {
            if self.shape(v) != self.shape(first) {
                return Err(Error::shape("weighted_sum", self.shape(first), self.shape(v)));
            }
            let w = self.data(weights)[k];
            for (a, x) in acc.iter_mut().zip(self.data(v)) {
                *a += w * x;
            }
        }
        let value = Tensor::new(self.shape(first).to_vec(), acc)?;
        Ok(self.push(
            value,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        ))
    }

    /// `-log softmax(logits)[target]`, computed with max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let z = self.data(logits);
        if z.len() < 2 || target >= z.len() {
            return Err(Error::TargetOutOfRange {
                target,
                classes: z.len(),
            });
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        let loss = log_sum - z[target];
        let probs = softmax(z);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCrossEntropy { logits, target, probs }))
    }

    /// `(pred - target)²` for a one-element `pred`.
    pub fn squared_error(&mut self, pred: Var, target: f64) -> Result<Var> {
        if self.value(pred).len() != 1 {
            return Err(Error::shape("squared_error", self.shape(pred), &[1]));
        }
        let d = self.data(pred)[0] - target;
        Ok(self.push(Tensor::scalar(d * d), Op::SquaredError { pred, target }))
    }

    /// One GRU step. `x = None` feeds a zero input without materializing it.
    ///
    /// ```text
    /// z  = σ(W_z x + U_z h + b_z)
    /// r  = σ(W_r x + U_r h + b_r)
    /// n  = tanh(W_n x + U_n (r ⊙ h) + b_n)
    /// h' = (1 - z) ⊙ n + z ⊙ h
    /// ```
    pub fn gru_cell(&mut self, x: Option<Var>, h: Var, ids: &GruIds) -> Result<Var> {
        let params = self.params;
        let hidden = self.data(h);
        let hsize = hidden.len();
        let gate = |g: &GateIds, rec_in: &[f64], x: Option<&[f64]>| -> Result<Vec<f64>> {
            let w = params.get(g.input);
            let u = params.get(g.recurrent);
            let b = params.get(g.bias);
            if u.shape() != [hsize, hsize] || b.len() != hsize || w.rows() != hsize {
                return Err(Error::shape("gru_cell", u.shape(), &[hsize, hsize]));
            }
            let mut a = b.data().to_vec();
            if let Some(x) = x {
                if w.cols() != x.len() {
                    return Err(Error::shape("gru_cell", w.shape(), &[x.len()]));
                }
                matvec(w.data(), hsize, w.cols(), x, &mut a);
            }
            matvec(u.data(), hsize, hsize, rec_in, &mut a);
            Ok(a)
        };
        let xv = x.map(|x| self.data(x));
        let update: Vec<f64> = gate(&ids.update, hidden, xv)?.into_iter().map(sigmoid).collect();
        let reset: Vec<f64> = gate(&ids.reset, hidden, xv)?.into_iter().map(sigmoid).collect();
        let reset_hidden: Vec<f64> = reset.iter().zip(hidden).map(|(r, h)| r * h).collect();
        let candidate: Vec<f64> = gate(&ids.candidate, &reset_hidden, xv)?.into_iter().map(f64::tanh).collect();
        let out = (0..hsize)
            .map(|i| (1.0 - update[i]) * candidate[i] + update[i] * hidden[i])
            .collect();
        let cache = Box::new(GruCache {
            update,
            reset,
            candidate,
            reset_hidden,
        });
        Ok(self.push(Tensor::vector(out), Op::Gru { x, h, ids: *ids, cache }))
    }

    /// One LSTM step over a packed state `[h; c]` of length `2H`; returns the
    /// packed next state.
    ///
    /// ```text
    /// i, f, o = σ(W x + U h + b)   g = tanh(W_g x + U_g h + b_g)
    /// c' = f ⊙ c + i ⊙ g           h' = o ⊙ tanh(c')
    /// ```
    pub fn lstm_cell(&mut self, x: Var, state: Var, ids: &LstmIds) -> Result<Var> {
        let params = self.params;
        let packed = self.data(state);
        if packed.len() % 2 != 0 {
            return Err(Error::shape("lstm_cell", self.shape(state), &[]));
        }
        let hsize = packed.len() / 2;
        let (hidden, cell) = packed.split_at(hsize);
        let xv = self.data(x);
        let gate = |g: &GateIds| -> Result<Vec<f64>> {
            let w = params.get(g.input);
            let u = params.get(g.recurrent);
            let b = params.get(g.bias);
            if u.shape() != [hsize, hsize] || b.len() != hsize || w.shape() != [hsize, xv.len()] {
                return Err(Error::shape("lstm_cell", w.shape(), &[hsize, xv.len()]));
            }
            let mut a = b.data().to_vec();
            matvec(w.data(), hsize, xv.len(), xv, &mut a);
            matvec(u.data(), hsize, hsize, hidden, &mut a);
            Ok(a)
        };
        let input: Vec<f64> = gate(&ids.input)?.into_iter().map(sigmoid).collect();
        let forget: Vec<f64> = gate(&ids.forget)?.into_iter().map(sigmoid).collect();
        let output: Vec<f64> = gate(&ids.output)?.into_iter().map(sigmoid).collect();
        let candidate: Vec<f64> = gate(&ids.candidate)?.into_iter().map(f64::tanh).collect();
        let next_cell: Vec<f64> = (0..hsize).map(|k| forget[k] * cell[k] + input[k] * candidate[k]).collect();
        let cell_tanh: Vec<f64> = next_cell.iter().map(|c| c.tanh()).collect();
        let mut out: Vec<f64> = (0..hsize).map(|k| output[k] * cell_tanh[k]).collect();
        out.extend_from_slice(&next_cell);
        let cache = Box::new(LstmCache {
            input,
            forget,
            output,
            candidate,
            cell_tanh,
        });
        Ok(self.push(Tensor::vector(out), Op::Lstm { x, state, ids: *ids, cache }))
    }

    /// Gradients of the one-element node `loss` with respect to every
    /// parameter it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", self.shape(loss), &[1]));
        }
        if !self.value(loss).all_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let params = self.params;
        let mut pgrads = Gradients::zeros_like(params);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    for (a, b) in pgrads.slot(*id, params).iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::ParamRow { param, row } => {
                    let cols = params.get(*param).cols();
                    let slot = pgrads.slot(*param, params);
                    for (a, b) in slot[row * cols..(row + 1) * cols].iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let gt = Tensor::new(node.value.shape().to_vec(), g)?;
                    let ga = gt.matmul(&bv.transpose())?;
                    let gb = av.transpose().matmul(&gt)?;
                    accumulate(&mut grads, *a, ga.data());
                    accumulate(&mut grads, *b, gb.data());
                }
                Op::Linear { weight, x } => {
                    let w = params.get(*weight);
                    let (rows, cols) = (w.rows(), w.cols());
                    let xv = self.data(*x);
                    outer_acc(pgrads.slot(*weight, params), cols, &g, xv);
                    let mut gx = vec![0.0; cols];
                    matvec_t(w.data(), rows, cols, &g, &mut gx);
                    accumulate(&mut grads, *x, &gx);
                }
                Op::AddBias { x, bias } => {
                    for (a, b) in pgrads.slot(*bias, params).iter_mut().zip(&g) {
                        *a += b;
                    }
                    accumulate(&mut grads, *x, &g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g.iter().zip(self.data(*b)).map(|(g, y)| g * y).collect();
                    let gb: Vec<f64> = g.iter().zip(self.data(*a)).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::Scale(x, c) => {
                    let gx: Vec<f64> = g.iter().map(|v| v * c).collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Relu(x) => {
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(self.data(*x))
                        .map(|(g, &a)| if a > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Tanh(x) => {
                    let gx: Vec<f64> = g.iter().zip(node.value.data()).map(|(g, t)| g * (1.0 - t * t)).collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Sigmoid(x) => {
                    let corrupt = self.fault == BackwardFault::SigmoidDerivative;
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, s)| if corrupt { g * s } else { g * s * (1.0 - s) })
                        .collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Concat { parts, axis } => {
                    let shape = node.value.shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let total = shape[*axis] * inner;
                    let mut offset = 0;
                    for &p in parts {
                        let block = self.shape(p)[*axis] * inner;
                        let mut gp = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            gp.extend_from_slice(&g[o * total + offset..o * total + offset + block]);
                        }
                        accumulate(&mut grads, p, &gp);
                        offset += block;
                    }
                }
                Op::Slice { x, start } => {
                    let mut gx = vec![0.0; self.value(*x).len()];
                    gx[*start..start + g.len()].copy_from_slice(&g);
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Dot(a, b) => {
                    let s = g[0];
                    let ga: Vec<f64> = self.data(*b).iter().map(|y| s * y).collect();
                    let gb: Vec<f64> = self.data(*a).iter().map(|x| s * x).collect();
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::Mean(items) => {
                    let n = items.len() as f64;
                    let gi: Vec<f64> = g.iter().map(|v| v / n).collect();
                    for &v in items {
                        accumulate(&mut grads, v, &gi);
                    }
                }
                Op::Softmax(x) => {
                    let p = node.value.data();
                    let inner: f64 = g.iter().zip(p).map(|(g, p)| g * p).sum();
                    let gx: Vec<f64> = g.iter().zip(p).map(|(g, p)| p * (g - inner)).collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::WeightedSum { weights, items } => {
                    let w = self.data(*weights);
                    let mut gw = vec![0.0; items.len()];
                    for (k, &v) in items.iter().enumerate() {
                        gw[k] = g.iter().zip(self.data(v)).map(|(g, x)| g * x).sum();
                        let gv: Vec<f64> = g.iter().map(|g| g * w[k]).collect();
                        accumulate(&mut grads, v, &gv);
                    }
                    accumulate(&mut grads, *weights, &gw);
                }
                Op::SoftmaxCrossEntropy { logits, target, probs } => {
                    let s = g[0];
                    let mut gz: Vec<f64> = probs.iter().map(|p| s * p).collect();
                    gz[*target] -= s;
                    accumulate(&mut grads, *logits, &gz);
                }
                Op::SquaredError { pred, target } => {
                    let d = self.data(*pred)[0] - target;
                    accumulate(&mut grads, *pred, &[2.0 * d * g[0]]);
                }
                Op::Gru { x, h, ids, cache } => {
                    self.gru_backward(&g, *x, *h, ids, cache, &mut grads, &mut pgrads);
                }
                Op::Lstm { x, state, ids, cache } => {
                    self.lstm_backward(&g, *x, *state, ids, cache, &mut grads, &mut pgrads);
                }
            }
        }
        Ok(pgrads)
    }

    /// Accumulates parameter gradients of one gate pre-activation and returns
    /// `(W^T da, U^T da)`.
    #[allow(clippy::too_many_arguments)]
    fn gate_backward(
        &self,
        gate: &GateIds,
        da: &[f64],
        x: Option<&[f64]>,
        rec_in: &[f64],
        gx: &mut [f64],
        grec: &mut [f64],
        pgrads: &mut Gradients,
    ) {
        let params = self.params;
        let hsize = da.len();
        for (a, b) in pgrads.slot(gate.bias, params).iter_mut().zip(da) {
            *a += b;
        }
        outer_acc(pgrads.slot(gate.recurrent, params), hsize, da, rec_in);
        matvec_t(params.get(gate.recurrent).data(), hsize, hsize, da, grec);
        if let Some(x) = x {
            let cols = x.len();
            outer_acc(pgrads.slot(gate.input, params), cols, da, x);
            matvec_t(params.get(gate.input).data(), hsize, cols, da, gx);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn gru_backward(
        &self,
        g: &[f64],
        x: Option<Var>,
        h: Var,
        ids: &GruIds,
        cache: &GruCache,
        grads: &mut [Option<Vec<f64>>],
        pgrads: &mut Gradients,
    ) {
        let hidden = self.data(h);
        let hsize = hidden.len();
        let xv = x.map(|x| self.data(x));
        let mut gx = vec![0.0; xv.map_or(0, <[f64]>::len)];
        let mut gh: Vec<f64> = (0..hsize).map(|i| g[i] * cache.update[i]).collect();

        let da_n: Vec<f64> = (0..hsize)
            .map(|i| g[i] * (1.0 - cache.update[i]) * (1.0 - cache.candidate[i] * cache.candidate[i]))
            .collect();
        let mut g_reset_hidden = vec![0.0; hsize];
        self.gate_backward(&ids.candidate, &da_n, xv, &cache.reset_hidden, &mut gx, &mut g_reset_hidden, pgrads);

        let mut da_r = vec![0.0; hsize];
        for i in 0..hsize {
            gh[i] += g_reset_hidden[i] * cache.reset[i];
            let r = cache.reset[i];
            da_r[i] = g_reset_hidden[i] * hidden[i] * r * (1.0 - r);
        }
        if self.fault == BackwardFault::GruResetGate {
            da_r.iter_mut().for_each(|v| *v = 0.0);
        }
        self.gate_backward(&ids.reset, &da_r, xv, hidden, &mut gx, &mut gh, pgrads);

        let da_z: Vec<f64> = (0..hsize)
            .map(|i| {
                let z = cache.update[i];
                g[i] * (hidden[i] - cache.candidate[i]) * z * (1.0 - z)
            })
            .collect();
        self.gate_backward(&ids.update, &da_z, xv, hidden, &mut gx, &mut gh, pgrads);

        accumulate(grads, h, &gh);
        if let Some(x) = x {
            accumulate(grads, x, &gx);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn lstm_backward(
        &self,
        g: &[f64],
        x: Var,
        state: Var,
        ids: &LstmIds,
        cache: &LstmCache,
        grads: &mut [Option<Vec<f64>>],
        pgrads: &mut Gradients,
    ) {
        let packed = self.data(state);
        let hsize = packed.len() / 2;
        let (hidden, cell) = packed.split_at(hsize);
        let xv = self.data(x);
        let (gh_next, gc_next) = g.split_at(hsize);

        let mut da_i = vec![0.0; hsize];
        let mut da_f = vec![0.0; hsize];
        let mut da_o = vec![0.0; hsize];
        let mut da_g = vec![0.0; hsize];
        let mut gstate = vec![0.0; 2 * hsize];
        for k in 0..hsize {
            let (i, f, o, c_hat, tc) = (
                cache.input[k],
                cache.forget[k],
                cache.output[k],
                cache.candidate[k],
                cache.cell_tanh[k],
            );
            let dc = gc_next[k] + gh_next[k] * o * (1.0 - tc * tc);
            da_o[k] = gh_next[k] * tc * o * (1.0 - o);
            da_f[k] = dc * cell[k] * f * (1.0 - f);
            da_i[k] = dc * c_hat * i * (1.0 - i);
            da_g[k] = dc * i * (1.0 - c_hat * c_hat);
            gstate[hsize + k] = dc * f;
        }
        let mut gx = vec![0.0; xv.len()];
        let mut gh = vec![0.0; hsize];
        for (gate, da) in [
            (&ids.input, &da_i),
            (&ids.forget, &da_f),
            (&ids.output, &da_o),
            (&ids.candidate, &da_g),
        ] {
            self.gate_backward(gate, da, Some(xv), hidden, &mut gx, &mut gh, pgrads);
        }
        gstate[..hsize].copy_from_slice(&gh);
        accumulate(grads, state, &gstate);
        accumulate(grads, x, &gx);
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
