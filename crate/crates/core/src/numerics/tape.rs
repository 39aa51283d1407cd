//! Define-by-run reverse-mode differentiation over tensors.
//!
//! A [`Tape`] borrows the [`ParamStore`] for one forward pass. Operations on
//! it return [`Var`]s, which carry their value and, when the tape records and
//! some operand depends on a parameter, the index of the node that produced
//! them. Constants never create nodes, so inference passes allocate nothing
//! beyond their values.
//!
//! Vocabulary: matmul, add, sub, mul, scale, add_scalar, exp, log, tanh,
//! relu, sum (all / over rows / over columns), concat, slice, broadcast and
//! reshape. Binary operations broadcast their second operand either as a
//! single row over every row of the first, or as a scalar.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::tensor::gemm;
use crate::numerics::{Gradients, ParamId, ParamStore, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// A value flowing through a tape.
#[derive(Clone, Debug)]
pub struct Var {
    value: Arc<Tensor>,
    node: Option<(u64, usize)>,
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn into_tensor(self) -> Tensor {
        Arc::try_unwrap(self.value).unwrap_or_else(|arc| (*arc).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Scalar,
}

#[derive(Debug)]
enum Op {
    Param(ParamId),
    MatMul {
        a: Option<usize>,
        b: Option<usize>,
        av: Arc<Tensor>,
        bv: Arc<Tensor>,
    },
    Add {
        a: Option<usize>,
        b: Option<usize>,
        bcast: Bcast,
        negate_b: bool,
    },
    Mul {
        a: Option<usize>,
        b: Option<usize>,
        av: Arc<Tensor>,
        bv: Arc<Tensor>,
        bcast: Bcast,
    },
    Scale(usize, f64),
    Exp(usize, Arc<Tensor>),
    Log(usize, Arc<Tensor>),
    Tanh(usize, Arc<Tensor>),
    Relu(usize, Arc<Tensor>),
    SumAll(usize),
    SumRows(usize),
    SumCols(usize),
    ConcatCols {
        a: Option<usize>,
        b: Option<usize>,
        split: usize,
    },
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    BroadcastRows(usize),
    Reshape(usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// Running-statistic update requested by a batch-norm bijection in training
/// mode; applied by the caller after the step so that concurrent per-set
/// tapes never write shared state.
#[derive(Clone, Debug, PartialEq)]
pub struct StatUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Tensor,
    pub batch_var: Tensor,
    pub momentum: f64,
}

impl StatUpdate {
    /// `running <- momentum * running + (1 - momentum) * batch`.
    pub fn apply(&self, store: &mut ParamStore) {
        let m = self.momentum;
        for (id, batch) in [
            (self.running_mean, &self.batch_mean),
            (self.running_var, &self.batch_var),
        ] {
            for (r, b) in store.get_mut(id).data_mut().iter_mut().zip(batch.data()) {
                *r = m * *r + (1.0 - m) * b;
            }
        }
    }
}

pub struct Tape<'p> {
    id: u64,
    params: &'p ParamStore,
    record: bool,
    training: bool,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    stat_updates: Vec<StatUpdate>,
}

impl<'p> Tape<'p> {
    fn with_flags(params: &'p ParamStore, record: bool, training: bool) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            params,
            record,
            training,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            stat_updates: Vec::new(),
        }
    }

    /// No recording, inference-mode statistics.
    pub fn inference(params: &'p ParamStore) -> Self {
        Self::with_flags(params, false, false)
    }

    /// Recording, training-mode statistics.
    pub fn training(params: &'p ParamStore) -> Self {
        Self::with_flags(params, true, true)
    }

    /// Recording, inference-mode statistics. Used for gradient checks where
    /// the function must not depend on batch composition.
    pub fn gradient(params: &'p ParamStore) -> Self {
        Self::with_flags(params, true, false)
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn push_stat_update(&mut self, update: StatUpdate) {
        self.stat_updates.push(update);
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stat_updates)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        Var {
            value: Arc::new(value),
            node: None,
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = &self.param_vars[id.0] {
            return v.clone();
        }
        let value = Arc::new(self.params.get(id).clone());
        let trainable = self.params.entry(id).trainable;
        let var = if self.record && trainable {
            let shape = value.shape().to_vec();
            self.push(Op::Param(id), shape, value)
        } else {
            Var { value, node: None }
        };
        self.param_vars[id.0] = Some(var.clone());
        var
    }

    fn node_of(&self, v: &Var) -> Option<usize> {
        match v.node {
            Some((tape, idx)) if tape == self.id => Some(idx),
            Some(_) => panic!("variable recorded on a different tape"),
            None => None,
        }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Arc<Tensor>) -> Var {
        self.nodes.push(Node { op, shape });
        Var {
            value,
            node: Some((self.id, self.nodes.len() - 1)),
        }
    }

    fn emit(&mut self, track: bool, op: impl FnOnce() -> Op, value: Tensor) -> Var {
        let value = Arc::new(value);
        if self.record && track {
            let shape = value.shape().to_vec();
            let op = op();
            self.push(op, shape, value)
        } else {
            Var { value, node: None }
        }
    }

    pub fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = a.value.matmul(&b.value)?;
        let (na, nb) = (self.node_of(a), self.node_of(b));
        let (av, bv) = (a.value.clone(), b.value.clone());
        Ok(self.emit(
            na.is_some() || nb.is_some(),
            || Op::MatMul {
                a: na,
                b: nb,
                av,
                bv,
            },
            out,
        ))
    }

    fn bcast_kind(a: &Tensor, b: &Tensor) -> Result<Bcast> {
        if a.shape() == b.shape() {
            Ok(Bcast::Same)
        } else if b.len() == 1 {
            Ok(Bcast::Scalar)
        } else if b.rows() == 1 && b.cols() == a.cols() && b.rank() <= 2 {
            Ok(Bcast::Row)
        } else {
            Err(Error::dim(format!(
                "cannot broadcast {:?} onto {:?}",
                b.shape(),
                a.shape()
            )))
        }
    }

    fn broadcast_binary(a: &Tensor, b: &Tensor, kind: Bcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let bd = b.data();
        let data: Vec<f64> = match kind {
            Bcast::Same => a.data().iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Scalar => a.data().iter().map(|&x| f(x, bd[0])).collect(),
            Bcast::Row => {
                let n = bd.len();
                a.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, bd[i % n]))
                    .collect()
            }
        };
        Tensor::new(a.shape().to_vec(), data).expect("broadcast keeps shape")
    }

    /// Returns operands ordered so that the second one is the broadcast one.
    fn order_operands<'v>(a: &'v Var, b: &'v Var) -> (&'v Var, &'v Var, bool) {
        if a.value.len() < b.value.len() {
            (b, a, true)
        } else {
            (a, b, false)
        }
    }

    pub fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (a, b, _) = Self::order_operands(a, b);
        self.add_impl(a, b, false)
    }

    pub fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        if a.value.len() < b.value.len() {
            let nb = self.scale(b, -1.0);
            return self.add_impl(&nb, a, false);
        }
        self.add_impl(a, b, true)
    }

    fn add_impl(&mut self, a: &Var, b: &Var, negate_b: bool) -> Result<Var> {
        let bcast = Self::bcast_kind(&a.value, &b.value)?;
        let out = if negate_b {
            Self::broadcast_binary(&a.value, &b.value, bcast, |x, y| x - y)
        } else {
            Self::broadcast_binary(&a.value, &b.value, bcast, |x, y| x + y)
        };
        let (na, nb) = (self.node_of(a), self.node_of(b));
        Ok(self.emit(
            na.is_some() || nb.is_some(),
            || Op::Add {
                a: na,
                b: nb,
                bcast,
                negate_b,
            },
            out,
        ))
    }

    pub fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (a, b, _) = Self::order_operands(a, b);
        let bcast = Self::bcast_kind(&a.value, &b.value)?;
        let out = Self::broadcast_binary(&a.value, &b.value, bcast, |x, y| x * y);
        let (na, nb) = (self.node_of(a), self.node_of(b));
        let (av, bv) = (a.value.clone(), b.value.clone());
        Ok(self.emit(
            na.is_some() || nb.is_some(),
            || Op::Mul {
                a: na,
                b: nb,
                av,
                bv,
                bcast,
            },
            out,
        ))
    }

    pub fn scale(&mut self, a: &Var, c: f64) -> Var {
        let out = a.value.map(|x| x * c);
        let na = self.node_of(a);
        self.emit(na.is_some(), || Op::Scale(na.unwrap(), c), out)
    }

    pub fn add_scalar(&mut self, a: &Var, c: f64) -> Var {
        let out = a.value.map(|x| x + c);
        match self.node_of(a) {
            // d(a + c)/da = 1: reuse the reshape node, which passes gradients through.
            Some(na) => self.emit(true, || Op::Reshape(na), out),
            None => self.constant(out),
        }
    }

    pub fn exp(&mut self, a: &Var) -> Var {
        let out = Arc::new(a.value.map(f64::exp));
        match self.node_of(a) {
            Some(na) if self.record => {
                let shape = out.shape().to_vec();
                self.push(Op::Exp(na, out.clone()), shape, out)
            }
            _ => Var {
                value: out,
                node: None,
            },
        }
    }

    pub fn log(&mut self, a: &Var) -> Var {
        let out = a.value.map(f64::ln);
        let na = self.node_of(a);
        let av = a.value.clone();
        self.emit(na.is_some(), || Op::Log(na.unwrap(), av), out)
    }

    pub fn tanh(&mut self, a: &Var) -> Var {
        let out = Arc::new(a.value.map(f64::tanh));
        match self.node_of(a) {
            Some(na) if self.record => {
                let shape = out.shape().to_vec();
                self.push(Op::Tanh(na, out.clone()), shape, out)
            }
            _ => Var {
                value: out,
                node: None,
            },
        }
    }

    pub fn relu(&mut self, a: &Var) -> Var {
        let out = a.value.map(|x| if x > 0.0 { x } else { 0.0 });
        let na = self.node_of(a);
        let av = a.value.clone();
        self.emit(na.is_some(), || Op::Relu(na.unwrap(), av), out)
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&mut self, a: &Var) -> Var {
        let out = Tensor::scalar(a.value.sum());
        let na = self.node_of(a);
        self.emit(na.is_some(), || Op::SumAll(na.unwrap()), out)
    }

    /// `[m, n] -> [n]`: column sums (reduction over the row axis).
    pub fn sum_rows(&mut self, a: &Var) -> Var {
        let (m, n) = a.value.dims2();
        let d = a.value.data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, v) in out.iter_mut().zip(&d[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        let na = self.node_of(a);
        self.emit(na.is_some(), || Op::SumRows(na.unwrap()), Tensor::vector(out))
    }

    /// `[m, n] -> [m]`: row sums (reduction over the column axis).
    pub fn sum_cols(&mut self, a: &Var) -> Var {
        let (m, n) = a.value.dims2();
        let d = a.value.data();
        let out: Vec<f64> = (0..m).map(|i| d[i * n..(i + 1) * n].iter().sum()).collect();
        let na = self.node_of(a);
        self.emit(na.is_some(), || Op::SumCols(na.unwrap()), Tensor::vector(out))
    }

    /// `[m, p] ++ [m, q] -> [m, p + q]`.
    pub fn concat_cols(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (m, p) = a.value.dims2();
        let (m2, q) = b.value.dims2();
        if m != m2 {
            return Err(Error::dim(format!(
                "concat of {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (ad, bd) = (a.value.data(), b.value.data());
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(&ad[i * p..(i + 1) * p]);
            data.extend_from_slice(&bd[i * q..(i + 1) * q]);
        }
        let out = Tensor::matrix(m, p + q, data)?;
        let (na, nb) = (self.node_of(a), self.node_of(b));
        Ok(self.emit(
            na.is_some() || nb.is_some(),
            || Op::ConcatCols {
                a: na,
                b: nb,
                split: p,
            },
            out,
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: &Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = a.value.dims2();
        if start > end || end > n {
            return Err(Error::dim(format!("column slice {start}..{end} of {n}")));
        }
        let d = a.value.data();
        let mut data = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            data.extend_from_slice(&d[i * n + start..i * n + end]);
        }
        let out = Tensor::matrix(m, end - start, data)?;
        let na = self.node_of(a);
        Ok(self.emit(na.is_some(), || Op::SliceCols(na.unwrap(), start), out))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: &Var, start: usize, end: usize) -> Result<Var> {
        let (m, _) = a.value.dims2();
        if start > end || end > m {
            return Err(Error::dim(format!("row slice {start}..{end} of {m}")));
        }
        let out = a.value.slice_rows(start, end);
        let na = self.node_of(a);
        Ok(self.emit(na.is_some(), || Op::SliceRows(na.unwrap(), start), out))
    }

    /// Repeats a `k`-element tensor as `rows` identical rows: `[rows, k]`.
    pub fn broadcast_rows(&mut self, a: &Var, rows: usize) -> Var {
        let k = a.value.len();
        let mut data = Vec::with_capacity(rows * k);
        for _ in 0..rows {
            data.extend_from_slice(a.value.data());
        }
        let out = Tensor::matrix(rows, k, data).expect("consistent length");
        let na = self.node_of(a);
        self.emit(na.is_some(), || Op::BroadcastRows(na.unwrap()), out)
    }

    pub fn reshape(&mut self, a: &Var, shape: &[usize]) -> Result<Var> {
        let out = (*a.value).clone().reshape(shape)?;
        let na = self.node_of(a);
        Ok(self.emit(na.is_some(), || Op::Reshape(na.unwrap()), out))
    }

    /// Reverse pass from a single-element output. Returns gradients for every
    /// parameter of the store; parameters not reached are exact zeros.
    pub fn backward(&self, output: &Var) -> Result<Gradients> {
        if output.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                output.shape()
            )));
        }
        let mut result = Gradients::new(self.params.len());
        let root = match output.node {
            None => return Ok(result),
            Some((tape, _)) if tape != self.id => {
                return Err(Error::Usage("output was not produced on this tape".into()))
            }
            Some((_, idx)) => idx,
        };

        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(root + 1);
        grads.resize_with(root + 1, || None);
        grads[root] = Some(Tensor::full(&self.nodes[root].shape, 1.0));

        for idx in (0..=root).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Param(pid) => result.add_to(*pid, &g),
                Op::MatMul { a, b, av, bv } => {
                    let (m, k) = av.dims2();
                    let n = bv.cols();
                    if let Some(a) = a {
                        // dA = dC * B^T
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, (g.data(), n as isize, 1), (bv.data(), 1, n as isize), &mut da, false);
                        accumulate(&mut grads, *a, da, av.shape());
                    }
                    if let Some(b) = b {
                        // dB = A^T * dC
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, (av.data(), 1, k as isize), (g.data(), n as isize, 1), &mut db, false);
                        accumulate(&mut grads, *b, db, bv.shape());
                    }
                }
                Op::Add { a, b, bcast, negate_b } => {
                    if let Some(a) = a {
                        accumulate(&mut grads, *a, g.data().to_vec(), &node.shape);
                    }
                    if let Some(b) = b {
                        let b_shape = self.nodes[*b].shape.clone();
                        let mut gb = reduce_broadcast(&g, *bcast, &b_shape);
                        if *negate_b {
                            gb.iter_mut().for_each(|v| *v = -*v);
                        }
                        accumulate(&mut grads, *b, gb, &b_shape);
                    }
                }
                Op::Mul { a, b, av, bv, bcast } => {
                    if let Some(a) = a {
                        let ga = Self::broadcast_binary(&g, bv, *bcast, |x, y| x * y);
                        accumulate(&mut grads, *a, ga.into_data(), av.shape());
                    }
                    if let Some(b) = b {
                        let prod = g.zip_map(av, |x, y| x * y)?;
                        let gb = reduce_broadcast(&prod, *bcast, bv.shape());
                        accumulate(&mut grads, *b, gb, bv.shape());
                    }
                }
                Op::Scale(a, c) => {
                    let ga = g.data().iter().map(|v| v * c).collect();
                    accumulate(&mut grads, *a, ga, &self.nodes[*a].shape);
                }
                Op::Exp(a, out) => {
                    let ga = g.data().iter().zip(out.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads, *a, ga, &node.shape);
                }
                Op::Log(a, av) => {
                    let ga = g.data().iter().zip(av.data()).map(|(x, y)| x / y).collect();
                    accumulate(&mut grads, *a, ga, &node.shape);
                }
                Op::Tanh(a, out) => {
                    let ga = g
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(x, y)| x * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, *a, ga, &node.shape);
                }
                Op::Relu(a, av) => {
                    let ga = g
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(x, y)| if *y > 0.0 { *x } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, ga, &node.shape);
                }
                Op::SumAll(a) => {
                    let shape = &self.nodes[*a].shape;
                    let n = shape.iter().product();
                    accumulate(&mut grads, *a, vec![g.item(); n], shape);
                }
                Op::SumRows(a) => {
                    let shape = &self.nodes[*a].shape;
                    let n = g.len();
                    let m = shape.iter().product::<usize>().checked_div(n).unwrap_or(0);
                    let mut ga = Vec::with_capacity(m * n);
                    for _ in 0..m {
                        ga.extend_from_slice(g.data());
                    }
                    accumulate(&mut grads, *a, ga, shape);
                }
                Op::SumCols(a) => {
                    let shape = &self.nodes[*a].shape;
                    let m = g.len();
                    let n = shape.iter().product::<usize>().checked_div(m).unwrap_or(0);
                    let mut ga = Vec::with_capacity(m * n);
                    for &gi in g.data() {
                        ga.extend(std::iter::repeat_n(gi, n));
                    }
                    accumulate(&mut grads, *a, ga, shape);
                }
                Op::ConcatCols { a, b, split } => {
                    let (m, total) = g.dims2();
                    let d = g.data();
                    if let Some(a) = a {
                        let mut ga = Vec::with_capacity(m * split);
                        for i in 0..m {
                            ga.extend_from_slice(&d[i * total..i * total + split]);
                        }
                        accumulate(&mut grads, *a, ga, &self.nodes[*a].shape.clone());
                    }
                    if let Some(b) = b {
                        let mut gb = Vec::with_capacity(m * (total - split));
                        for i in 0..m {
                            gb.extend_from_slice(&d[i * total + split..(i + 1) * total]);
                        }
                        accumulate(&mut grads, *b, gb, &self.nodes[*b].shape.clone());
                    }
                }
                Op::SliceCols(a, start) => {
                    let shape = self.nodes[*a].shape.clone();
                    let n = *shape.last().unwrap_or(&1);
                    let (m, w) = g.dims2();
                    let mut ga = vec![0.0; m * n];
                    for i in 0..m {
                        ga[i * n + start..i * n + start + w].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                    }
                    accumulate(&mut grads, *a, ga, &shape);
                }
                Op::SliceRows(a, start) => {
                    let shape = self.nodes[*a].shape.clone();
                    let total: usize = shape.iter().product();
                    let n = g.cols();
                    let mut ga = vec![0.0; total];
                    ga[start * n..start * n + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, ga, &shape);
                }
                Op::BroadcastRows(a) => {
                    let shape = self.nodes[*a].shape.clone();
                    let (m, k) = g.dims2();
                    let mut ga = vec![0.0; k];
                    for i in 0..m {
                        for (o, v) in ga.iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *a, ga, &shape);
                }
                Op::Reshape(a) => {
                    let shape = self.nodes[*a].shape.clone();
                    accumulate(&mut grads, *a, g.into_data(), &shape);
                }
            }
        }
        Ok(result)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: Vec<f64>, shape: &[usize]) {
    match &mut grads[idx] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(Tensor::new(shape.to_vec(), g).expect("gradient shape")),
    }
}

/// Sums a full-shape gradient back onto a broadcast operand.
fn reduce_broadcast(g: &Tensor, bcast: Bcast, b_shape: &[usize]) -> Vec<f64> {
    match bcast {
        Bcast::Same => g.data().to_vec(),
        Bcast::Scalar => vec![g.sum()],
        Bcast::Row => {
            let n: usize = b_shape.iter().product();
            let mut out = vec![0.0; n];
            for chunk in g.data().chunks(n) {
                for (o, v) in out.iter_mut().zip(chunk) {
                    *o += v;
                }
            }
            out
        }
    }
}
