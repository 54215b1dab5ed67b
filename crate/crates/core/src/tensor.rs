//! Minimal reverse-mode automatic differentiation over row-major matrices.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles and
//! replays them backwards from a scalar loss. Parameters live in a
//! [`ParamStore`] that the graph borrows immutably; gradients come back keyed
//! by [`ParamId`] so an optimizer can apply them afterwards.
//!
//! Everything is generic over [`Real`] so the same model code runs in 32-bit
//! and 64-bit precision.

use std::collections::HashMap;
use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{concatenate, s, Array2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

/// Floating point element type used throughout the crate.
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Hierarchy layer / role a parameter belongs to. Optimizer steps select
/// parameters by group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Sentence-encoder token embeddings.
    Embedding,
    /// Posterior network g_phi (sentence-layer encoder).
    Posterior,
    /// Recurrent word decoder (sentence-layer decoder).
    Decoder,
    /// Coupling-flow conditioners (feature-layer encoder and prior transform).
    Flow,
    /// Sentiment scaling network (feature-layer decoder).
    Scaler,
    /// Standalone models such as the evaluation classifier.
    Other,
}

impl ParamGroup {
    pub fn namespace(self) -> &'static str {
        match self {
            ParamGroup::Embedding => "embedding",
            ParamGroup::Posterior => "posterior",
            ParamGroup::Decoder => "decoder",
            ParamGroup::Flow => "flow",
            ParamGroup::Scaler => "feature",
            ParamGroup::Other => "other",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Array2<T>,
    pub trainable: bool,
}

/// Owned collection of named parameter matrices.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Array2<T>) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry { name, group, value, trainable: true });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array2<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids_in(&self, groups: &[ParamGroup]) -> Vec<ParamId> {
        self.ids().filter(|id| groups.contains(&self.entries[id.0].group)).collect()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}

/// Handle to a node inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, T, T),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    SumCols(Var),
    Sum(Var),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    EmbedMean(Var, Vec<Vec<usize>>),
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to every parameter it touched.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    pub by_param: HashMap<ParamId, Array2<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Array2<T>> {
        self.by_param.get(&id)
    }

    pub fn global_norm(&self, ids: &[ParamId]) -> T {
        ids.iter()
            .filter_map(|id| self.by_param.get(id))
            .map(|g| g.iter().map(|v| *v * *v).sum::<T>())
            .sum::<T>()
            .sqrt()
    }
}

/// Computation tape. Build one per forward pass.
pub struct Graph<'p, T: Real> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, Var>,
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self { store, nodes: Vec::with_capacity(256), param_nodes: HashMap::new() }
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1);
        val[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Constant input; never receives gradient.
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input that should receive a gradient (for finite-difference checks on
    /// inputs rather than parameters).
    pub fn input(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes.get(&id) {
            return *v;
        }
        let entry = self.store.entry(id);
        let v = self.push(entry.value.clone(), Op::Param, entry.trainable);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    /// `a` is n x m, `row` is 1 x m and is broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        let ng = self.ng(a) || self.ng(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// `a` is n x m, `col` is n x 1 and is broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let value = self.value(a) * self.value(col);
        let ng = self.ng(a) || self.ng(col);
        self.push(value, Op::MulCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a) * c;
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, c), ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a) + c;
        let ng = self.ng(a);
        self.push(value, Op::AddScalar(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v.tanh());
        let ng = self.ng(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v.exp());
        let ng = self.ng(a);
        self.push(value, Op::Exp(a), ng)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v.ln());
        let ng = self.ng(a);
        self.push(value, Op::Log(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v * v);
        let ng = self.ng(a);
        self.push(value, Op::Square(a), ng)
    }

    /// Elementwise clamp; gradient is zero where the input was clipped.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let value = self.value(a).mapv(|v| v.max(lo).min(hi));
        let ng = self.ng(a);
        self.push(value, Op::Clamp(a, lo, hi), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("row counts agree");
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("column counts agree");
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        let ng = self.ng(a);
        self.push(value, Op::SliceCols(a, start, end), ng)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![start..end, ..]).to_owned();
        let ng = self.ng(a);
        self.push(value, Op::SliceRows(a, start, end), ng)
    }

    /// Row sums, n x m -> n x 1.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.ng(a);
        self.push(value, Op::SumCols(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let total = self.sum(a);
        self.scale(total, T::one() / T::c(n as f64))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(T::neg_infinity(), |m, v| m.max(*v));
            let lse = max + row.iter().map(|v| (*v - max).exp()).sum::<T>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        let ng = self.ng(a);
        self.push(value, Op::LogSoftmax(a), ng)
    }

    /// Picks column `idx[i]` from row `i`; n x m -> n x 1.
    pub fn pick(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let src = self.value(a);
        assert_eq!(src.nrows(), idx.len());
        let value = Array2::from_shape_fn((idx.len(), 1), |(i, _)| src[[i, idx[i]]]);
        let ng = self.ng(a);
        self.push(value, Op::Pick(a, idx), ng)
    }

    /// Row lookup: returns `table[idx[i], ..]` for each i.
    pub fn gather(&mut self, table: Var, idx: Vec<usize>) -> Var {
        let src = self.value(table);
        let mut value = Array2::zeros((idx.len(), src.ncols()));
        for (i, &r) in idx.iter().enumerate() {
            value.row_mut(i).assign(&src.row(r));
        }
        let ng = self.ng(table);
        self.push(value, Op::Gather(table, idx), ng)
    }

    /// Mean of the table rows named by each sequence; one output row per
    /// sequence. Sequences must be non-empty.
    pub fn embed_mean(&mut self, table: Var, seqs: Vec<Vec<usize>>) -> Var {
        let src = self.value(table);
        let mut value = Array2::zeros((seqs.len(), src.ncols()));
        for (i, seq) in seqs.iter().enumerate() {
            assert!(!seq.is_empty(), "empty sequence in embed_mean");
            let inv = T::one() / T::c(seq.len() as f64);
            let mut row = value.row_mut(i);
            for &tok in seq {
                row.scaled_add(inv, &src.row(tok));
            }
        }
        let ng = self.ng(table);
        self.push(value, Op::EmbedMean(table, seqs), ng)
    }

    /// Reverse pass from a 1 x 1 node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let grads = self.backward_all(loss);
        let mut by_param = HashMap::new();
        for (id, v) in &self.param_nodes {
            if let Some(g) = &grads[v.0] {
                by_param.insert(*id, g.clone());
            }
        }
        Gradients { by_param }
    }

    /// Gradient of a scalar with respect to an arbitrary node (zeros if the
    /// node does not influence the loss).
    pub fn grad_of(&self, loss: Var, wrt: Var) -> Array2<T> {
        let grads = self.backward_all(loss);
        grads[wrt.0].clone().unwrap_or_else(|| Array2::zeros(self.value(wrt).dim()))
    }

    fn backward_all(&self, loss: Var) -> Vec<Option<Array2<T>>> {
        let mut grads: Vec<Option<Array2<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads
    }

    fn propagate(&self, node: &Node<T>, g: &Array2<T>, grads: &mut [Option<Array2<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, delta: Array2<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.scaled_add(T::one(), &delta),
                slot => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.dot(&val(*b).t()));
                }
                if self.ng(*b) {
                    acc(*b, val(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, g * val(*b));
                acc(*b, g * val(*a));
            }
            Op::MulCol(a, col) => {
                acc(*a, g * val(*col));
                acc(*col, (g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1)));
            }
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&node.value).for_each(|d, y| *d = *d * (T::one() - *y * *y));
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&node.value).for_each(|d, y| *d = *d * *y * (T::one() - *y));
                acc(*a, d);
            }
            Op::Exp(a) => acc(*a, g * &node.value),
            Op::Log(a) => acc(*a, g / val(*a)),
            Op::Square(a) => acc(*a, g * val(*a) * T::c(2.0)),
            Op::Clamp(a, lo, hi) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*a)).for_each(|d, x| {
                    if *x < *lo || *x > *hi {
                        *d = T::zero();
                    }
                });
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = val(*p).ncols();
                    acc(*p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let h = val(*p).nrows();
                    acc(*p, g.slice(s![start..start + h, ..]).to_owned());
                    start += h;
                }
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Array2::zeros(val(*a).dim());
                d.slice_mut(s![.., *start..*end]).assign(g);
                acc(*a, d);
            }
            Op::SliceRows(a, start, end) => {
                let mut d = Array2::zeros(val(*a).dim());
                d.slice_mut(s![*start..*end, ..]).assign(g);
                acc(*a, d);
            }
            Op::SumCols(a) => {
                let (n, m) = val(*a).dim();
                let d = Array2::from_shape_fn((n, m), |(i, _)| g[[i, 0]]);
                acc(*a, d);
            }
            Op::Sum(a) => {
                let d = Array2::from_elem(val(*a).dim(), g[[0, 0]]);
                acc(*a, d);
            }
            Op::LogSoftmax(a) => {
                // d/dx = g - softmax * rowsum(g)
                let mut d = g.clone();
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(node.value.rows()) {
                    let gsum = drow.sum();
                    Zip::from(&mut drow).and(&yrow).for_each(|d, y| *d = *d - y.exp() * gsum);
                }
                acc(*a, d);
            }
            Op::Pick(a, idx) => {
                let mut d = Array2::zeros(val(*a).dim());
                for (i, &j) in idx.iter().enumerate() {
                    d[[i, j]] = g[[i, 0]];
                }
                acc(*a, d);
            }
            Op::Gather(table, idx) => {
                let mut d = Array2::zeros(val(*table).dim());
                for (i, &r) in idx.iter().enumerate() {
                    d.row_mut(r).scaled_add(T::one(), &g.row(i));
                }
                acc(*table, d);
            }
            Op::EmbedMean(table, seqs) => {
                let mut d = Array2::zeros(val(*table).dim());
                for (i, seq) in seqs.iter().enumerate() {
                    let inv = T::one() / T::c(seq.len() as f64);
                    for &tok in seq {
                        d.row_mut(tok).scaled_add(inv, &g.row(i));
                    }
                }
                acc(*table, d);
            }
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable log(sum(exp(xs))).
pub fn log_sum_exp<T: Real>(xs: impl IntoIterator<Item = T>) -> T {
    let xs: Vec<T> = xs.into_iter().collect();
    let max = xs.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
    if max == T::neg_infinity() {
        return max;
    }
    max + xs.iter().map(|v| (*v - max).exp()).sum::<T>().ln()
}
