//! Recorded-operation reverse-mode differentiation.
//!
//! A [`Tape`] records every value produced during a forward pass in insertion
//! order, which is already a topological order. [`Tape::backward`] replays it
//! in reverse exactly once and writes parameter gradients into a
//! [`ParamStore`].
//!
//! The op vocabulary is deliberately closed. There is no general broadcasting:
//! the only shape-changing rules are the ones listed on [`OpKind`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numeric::params::{ParamId, ParamStore};
use crate::numeric::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// The fixed set of differentiable operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    /// `a · bᵀ` for `a: n×k`, `b: m×k`.
    MatMul,
    /// Elementwise sum of equal shapes, or a `1×c` row added to every row of an `n×c` matrix.
    Add,
    /// Column-wise concatenation of matrices with equal row counts.
    Concat,
    /// Row selection by index list; indices may repeat.
    Slice,
    Relu,
    Sigmoid,
    /// Natural log of the input clamped below at a floor.
    Log,
    /// Elementwise product of equal shapes.
    Mul,
    /// Per-group mean of rows. An empty group yields a zero row.
    MeanOverSet,
    /// Per-group, per-column max of rows. Ties go to the lowest row index.
    MaxOverSet,
    /// Sum of all entries into a one-element tensor.
    ScalarSum,
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add { a: Var, b: Var, row_bias: bool },
    Concat(Vec<Var>),
    Slice { input: Var, rows: Arc<[usize]> },
    Relu(Var),
    Sigmoid(Var),
    Log { input: Var, floor: f64 },
    Mul(Var, Var),
    MeanOverSet { input: Var, groups: Arc<[Vec<usize>]> },
    MaxOverSet { input: Var, argmax: Vec<usize> },
    ScalarSum(Var),
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Constant | Op::Param(_) => return None,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add { .. } => OpKind::Add,
            Op::Concat(_) => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Log { .. } => OpKind::Log,
            Op::Mul(..) => OpKind::Mul,
            Op::MeanOverSet { .. } => OpKind::MeanOverSet,
            Op::MaxOverSet { .. } => OpKind::MaxOverSet,
            Op::ScalarSum(_) => OpKind::ScalarSum,
        })
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Single-context recording of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_leaves: BTreeMap<ParamId, Var>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn matrix_shape(rows: usize, cols: usize, like_vector: bool) -> Vec<usize> {
    if like_vector && rows == 1 {
        vec![cols]
    } else {
        vec![rows, cols]
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded values (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn op_kind(&self, v: Var) -> Option<OpKind> {
        self.nodes[v.0].op.kind()
    }

    /// Winning row per (group, column) of a max-over-set node, row-major by group.
    pub fn argmax(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::MaxOverSet { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    /// Leaf for a parameter. Repeated requests for the same parameter share one leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.param_leaves.get(&id) {
            return *v;
        }
        let v = self.push(Op::Param(id), store.get(id).value.clone());
        self.param_leaves.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k, m) = (av.rows(), av.cols(), bv.rows());
        if bv.cols() != k {
            return Err(Error::shape("matmul", &[m, k], bv.shape()));
        }
        let mut out = vec![0.0; n * m];
        let (ad, bd) = (av.data(), bv.data());
        for i in 0..n {
            let arow = &ad[i * k..(i + 1) * k];
            for j in 0..m {
                let brow = &bd[j * k..(j + 1) * k];
                out[i * m + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        let shape = matrix_shape(n, m, av.shape().len() == 1);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
            let value = Tensor::new(av.shape().to_vec(), data)?;
            return Ok(self.push(Op::Add { a, b, row_bias: false }, value));
        }
        if bv.rows() == 1 && bv.cols() == av.cols() {
            let c = av.cols();
            let bias = bv.data();
            let data = av
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + bias[i % c])
                .collect();
            let value = Tensor::new(av.shape().to_vec(), data)?;
            return Ok(self.push(Op::Add { a, b, row_bias: true }, value));
        }
        Err(Error::shape("add", av.shape(), bv.shape()))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let rows = self.value(*first).rows();
        let all_vectors = parts.iter().all(|p| self.value(*p).shape().len() == 1);
        let mut cols = 0;
        for p in parts {
            let v = self.value(*p);
            if v.rows() != rows {
                return Err(Error::shape("concat", &[rows, v.cols()], v.shape()));
            }
            cols += v.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let value = Tensor::new(matrix_shape(rows, cols, all_vectors), data)?;
        Ok(self.push(Op::Concat(parts.to_vec()), value))
    }

    pub fn slice_rows(&mut self, input: Var, rows: Arc<[usize]>) -> Result<Var> {
        let v = self.value(input);
        let n = v.rows();
        if rows.is_empty() {
            return Err(Error::Contract("row selection must pick at least one row".into()));
        }
        if let Some(bad) = rows.iter().find(|r| **r >= n) {
            return Err(Error::Contract(format!("row index {bad} out of range for {n} rows")));
        }
        let c = v.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for r in rows.iter() {
            data.extend_from_slice(v.row(*r));
        }
        let value = Tensor::new(vec![rows.len(), c], data)?;
        Ok(self.push(Op::Slice { input, rows }, value))
    }

    fn map(&mut self, input: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value(input);
        let data = v.data().iter().map(|x| f(*x)).collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("shape preserved");
        self.push(op, value)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.map(input, Op::Relu(input), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.map(input, Op::Sigmoid(input), sigmoid)
    }

    /// `ln(max(x, floor))`; the gradient is zero wherever the floor is active.
    pub fn log(&mut self, input: Var, floor: f64) -> Var {
        self.map(input, Op::Log { input, floor }, |x| libm::log(x.max(floor)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("elementwise mul", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    /// Row `g` of the output is the mean of the input rows listed in `groups[g]`,
    /// accumulated in list order.
    pub fn mean_over_set(&mut self, input: Var, groups: Arc<[Vec<usize>]>) -> Result<Var> {
        let v = self.value(input);
        let (n, c) = (v.rows(), v.cols());
        check_groups(&groups, n)?;
        let mut data = vec![0.0; groups.len() * c];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            // Running mean: exact when every member row is identical.
            let out = &mut data[g * c..(g + 1) * c];
            for (k, r) in members.iter().enumerate() {
                let k = (k + 1) as f64;
                for (o, x) in out.iter_mut().zip(v.row(*r)) {
                    *o += (x - *o) / k;
                }
            }
        }
        let value = Tensor::new(vec![groups.len(), c], data)?;
        Ok(self.push(Op::MeanOverSet { input, groups }, value))
    }

    /// Row `g` of the output is the column-wise max over the input rows in `groups[g]`.
    pub fn max_over_set(&mut self, input: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let v = self.value(input);
        let (n, c) = (v.rows(), v.cols());
        check_groups(groups, n)?;
        let mut data = vec![0.0; groups.len() * c];
        let mut argmax = vec![0; groups.len() * c];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Contract(format!("max over empty set (group {g})")));
            }
            for col in 0..c {
                let mut best = members[0];
                for r in &members[1..] {
                    let (x, b) = (v.get(*r, col), v.get(best, col));
                    if x > b || (x == b && *r < best) {
                        best = *r;
                    }
                }
                data[g * c + col] = v.get(best, col);
                argmax[g * c + col] = best;
            }
        }
        let value = Tensor::new(vec![groups.len(), c], data)?;
        Ok(self.push(Op::MaxOverSet { input, argmax }, value))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        self.push(Op::ScalarSum(input), Tensor::scalar(s))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Gradients are written (not accumulated) into `store`, which must have been
    /// zeroed since the previous backward. Parameters that do not influence the
    /// loss receive a zero gradient.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.backward_impl(loss, store, None)
    }

    /// Backward with a deliberately wrong gradient rule for every parameter whose
    /// name starts with `prefix`. Only used to prove the gradient checker catches faults.
    #[doc(hidden)]
    pub fn backward_with_fault(&self, loss: Var, store: &mut ParamStore, prefix: &str) -> Result<()> {
        self.backward_impl(loss, store, Some(prefix))
    }

    fn backward_impl(&self, loss: Var, store: &mut ParamStore, fault: Option<&str>) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if store.grads_populated() {
            return Err(Error::Contract(
                "gradients already populated; zero them before another backward".into(),
            ));
        }
        // Parameters the loss never reaches end with a zero gradient.
        for p in store.iter_mut() {
            p.grad.fill(0.0);
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    let mut g = g;
                    if fault.is_some_and(|f| p.name().starts_with(f)) {
                        g.data_mut().iter_mut().for_each(|x| *x = 1.5 * *x + 1e-3);
                    }
                    p.grad = g;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (av.rows(), av.cols(), bv.rows());
                    let gd = g.data();
                    let mut da = vec![0.0; n * k];
                    let mut db = vec![0.0; m * k];
                    for i in 0..n {
                        let arow = av.row(i);
                        for j in 0..m {
                            let gij = gd[i * m + j];
                            if gij == 0.0 {
                                continue;
                            }
                            let brow = bv.row(j);
                            for t in 0..k {
                                da[i * k + t] += gij * brow[t];
                                db[j * k + t] += gij * arow[t];
                            }
                        }
                    }
                    accumulate(&mut adj, *a, Tensor::new(av.shape().to_vec(), da)?);
                    accumulate(&mut adj, *b, Tensor::new(bv.shape().to_vec(), db)?);
                }
                Op::Add { a, b, row_bias } => {
                    let bv = self.value(*b);
                    let db = if *row_bias {
                        let c = bv.cols();
                        let mut s = vec![0.0; c];
                        for (i, x) in g.data().iter().enumerate() {
                            s[i % c] += x;
                        }
                        Tensor::new(bv.shape().to_vec(), s)?
                    } else {
                        g.clone()
                    };
                    accumulate(&mut adj, *b, db);
                    accumulate(&mut adj, *a, g);
                }
                Op::Concat(parts) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let c = pv.cols();
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        offset += c;
                        accumulate(&mut adj, *p, Tensor::new(pv.shape().to_vec(), d)?);
                    }
                }
                Op::Slice { input, rows } => {
                    let iv = self.value(*input);
                    let c = iv.cols();
                    let mut d = Tensor::zeros(iv.shape());
                    let dd = d.data_mut();
                    for (out_r, in_r) in rows.iter().enumerate() {
                        for t in 0..c {
                            dd[in_r * c + t] += g.data()[out_r * c + t];
                        }
                    }
                    accumulate(&mut adj, *input, d);
                }
                Op::Relu(input) => {
                    let iv = self.value(*input);
                    let mut d = g;
                    for (x, gx) in iv.data().iter().zip(d.data_mut()) {
                        if *x <= 0.0 {
                            *gx = 0.0;
                        }
                    }
                    accumulate(&mut adj, *input, d);
                }
                Op::Sigmoid(input) => {
                    let mut d = g;
                    for (y, gx) in node.value.data().iter().zip(d.data_mut()) {
                        *gx *= y * (1.0 - y);
                    }
                    accumulate(&mut adj, *input, d);
                }
                Op::Log { input, floor } => {
                    let iv = self.value(*input);
                    let mut d = g;
                    for (x, gx) in iv.data().iter().zip(d.data_mut()) {
                        *gx = if *x < *floor { 0.0 } else { *gx / x };
                    }
                    accumulate(&mut adj, *input, d);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    let db = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut adj, *a, Tensor::new(av.shape().to_vec(), da)?);
                    accumulate(&mut adj, *b, Tensor::new(bv.shape().to_vec(), db)?);
                }
                Op::MeanOverSet { input, groups } => {
                    let iv = self.value(*input);
                    let c = iv.cols();
                    let mut d = Tensor::zeros(iv.shape());
                    let dd = d.data_mut();
                    for (gi, members) in groups.iter().enumerate() {
                        if members.is_empty() {
                            continue;
                        }
                        let inv = members.len() as f64;
                        for r in members {
                            for t in 0..c {
                                dd[r * c + t] += g.data()[gi * c + t] / inv;
                            }
                        }
                    }
                    accumulate(&mut adj, *input, d);
                }
                Op::MaxOverSet { input, argmax } => {
                    let iv = self.value(*input);
                    let c = iv.cols();
                    let mut d = Tensor::zeros(iv.shape());
                    let dd = d.data_mut();
                    for (slot, row) in argmax.iter().enumerate() {
                        dd[row * c + slot % c] += g.data()[slot];
                    }
                    accumulate(&mut adj, *input, d);
                }
                Op::ScalarSum(input) => {
                    let iv = self.value(*input);
                    let s = g.data()[0];
                    accumulate(&mut adj, *input, Tensor::full(iv.shape(), s));
                }
            }
        }

        store.mark_grads_populated();
        Ok(())
    }
}

fn check_groups(groups: &[Vec<usize>], rows: usize) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::Contract("set reduction needs at least one group".into()));
    }
    for members in groups {
        if let Some(bad) = members.iter().find(|r| **r >= rows) {
            return Err(Error::Contract(format!(
                "set member {bad} out of range for {rows} rows"
            )));
        }
    }
    Ok(())
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add(name, t).unwrap();
        (s, id)
    }

    #[test]
    fn linear_map_gradient_is_outer_product() {
        // loss = sum(W·x) ⇒ dW[i][j] = x[j]
        let (mut store, w) = store_with("W", Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let x = tape.constant(Tensor::vector(&[5.0, -7.0]));
        let y = tape.matmul(x, wv).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0 * 5.0 - 2.0 * 7.0, 3.0 * 5.0 - 4.0 * 7.0]);
        let loss = tape.sum(y);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.data(), &[5.0, -7.0, 5.0, -7.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_quarter() {
        let (mut store, w) = store_with("w", Tensor::vector(&[0.0]));
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let x = tape.constant(Tensor::vector(&[1.0]));
        let z = tape.matmul(x, wv).unwrap();
        let s = tape.sigmoid(z);
        let loss = tape.sum(s);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.data(), &[0.25]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let (mut store, w) = store_with("w", Tensor::vector(&[1.0, 2.0]));
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        assert!(matches!(tape.backward(wv, &mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn double_backward_without_zeroing_is_an_error() {
        let (mut store, w) = store_with("w", Tensor::vector(&[1.0]));
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let loss = tape.sum(wv);
        tape.backward(loss, &mut store).unwrap();
        assert!(tape.backward(loss, &mut store).is_err());
        store.zero_grad();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.data(), &[1.0]);
    }

    #[test]
    fn max_routes_only_to_first_argmax() {
        let (mut store, w) = store_with("s", Tensor::from_rows(&[[0.7, 0.1], [0.7, 0.3], [0.2, 0.3]]).unwrap());
        let mut tape = Tape::new();
        let sv = tape.param(&store, w);
        let m = tape.max_over_set(sv, &[vec![0, 1, 2]]).unwrap();
        assert_eq!(tape.value(m).data(), &[0.7, 0.3]);
        assert_eq!(tape.argmax(m).unwrap(), &[0, 1]);
        let loss = tape.sum(m);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn mean_of_identical_rows_is_exact() {
        let row = [0.1, 1.0 / 3.0, -2.7];
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[row, row, row]).unwrap());
        let m = tape.mean_over_set(x, Arc::from(vec![vec![0, 1, 2], vec![]])).unwrap();
        assert_eq!(tape.value(m).row(0), &row);
        assert_eq!(tape.value(m).row(1), &[0.0; 3]);
    }

    #[test]
    fn log_floor_blocks_gradient() {
        let (mut store, w) = store_with("p", Tensor::vector(&[0.0, 0.5]));
        let mut tape = Tape::new();
        let pv = tape.param(&store, w);
        let l = tape.log(pv, 1e-12);
        assert_eq!(tape.value(l).data()[0], libm::log(1e-12));
        let loss = tape.sum(l);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.data(), &[0.0, 2.0]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape { .. })));
        assert!(matches!(tape.mul(a, b), Err(Error::Shape { .. })));
        let c = tape.constant(Tensor::zeros(&[3, 3]));
        assert!(tape.concat(&[a, c]).is_err());
    }

    #[test]
    fn unreached_params_get_zero_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::vector(&[2.0])).unwrap();
        let b = store.add("b", Tensor::vector(&[3.0])).unwrap();
        store.get_mut(b).grad = Tensor::vector(&[9.0]);
        let mut tape = Tape::new();
        let av = tape.param(&store, a);
        let loss = tape.sum(av);
        tape.param(&store, b);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(b).grad.data(), &[0.0]);
    }
}
