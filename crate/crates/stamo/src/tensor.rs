//! Reverse-mode automatic differentiation over 2-D `ndarray` matrices.
//!
//! Every tensor that flows through a model here is a `[rows × cols]` matrix
//! (token sequences are `[tokens × width]`, images are patchified before they
//! enter a graph). A [`Tape`] records the forward ops; [`Tape::backward`]
//! replays them in reverse and accumulates gradients for every parameter
//! leaf. The engine is generic over [`Real`] so the same model code runs in
//! f32 for training and in f64 for finite-difference gradient verification.
//!
//! Determinism: no op here is threaded and none depends on iteration order of
//! a hash map, so identical inputs produce bit-identical values and grads.

use ndarray::{concatenate, s, Array2, Axis};
use num_traits::Float;
use std::fmt::{Debug, Display};
use std::sync::Arc;

/// Scalar types the engine runs on (f32 / f64).
pub trait Real:
    ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::iter::Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64_(self) -> f64;

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64_(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64_(self) -> f64 {
        self
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(usize);

/// Identifies a parameter in a [`crate::nn::ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

enum Op<T: Real> {
    /// Constant or parameter leaf. `param` is set when gradients should be
    /// reported for this node.
    Leaf { param: Option<ParamId> },
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Relu(usize),
    Gelu(usize),
    SoftmaxRows(usize),
    LayerNormRows { x: usize, eps: T },
    Transpose(usize),
    Reshape(usize),
    SliceCols { x: usize, from: usize, to: usize },
    ConcatRows(Vec<usize>),
    GatherRows { table: usize, ids: Vec<usize> },
    MeanAll(usize),
    MseTo { x: usize, target: Arc<Array2<T>> },
    L1To { x: usize, target: Arc<Array2<T>> },
    CrossEntropyRows { logits: usize, ids: Vec<usize> },
}

struct Node<T: Real> {
    value: Arc<Array2<T>>,
    op: Op<T>,
}

/// A recording of a forward computation.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

/// Gradients keyed by parameter id, in first-use order.
pub struct Gradients<T: Real> {
    grads: Vec<(ParamId, Array2<T>)>,
}

impl<T: Real> Gradients<T> {
    pub fn empty() -> Self {
        Gradients { grads: Vec::new() }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<T>> {
        self.grads.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<T>)> {
        self.grads.iter().map(|(p, g)| (*p, g))
    }

    /// Elementwise sum of two gradient sets (for batch accumulation).
    pub fn merge(&mut self, other: Gradients<T>) {
        for (id, g) in other.grads {
            match self.grads.iter_mut().find(|(p, _)| *p == id) {
                Some((_, acc)) => *acc += &g,
                None => self.grads.push((id, g)),
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for (_, g) in self.grads.iter_mut() {
            g.mapv_inplace(|v| v * factor);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::with_capacity(256) }
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> TensorRef {
        self.nodes.push(Node { value: Arc::new(value), op });
        TensorRef(self.nodes.len() - 1)
    }

    pub fn value(&self, t: TensorRef) -> &Array2<T> {
        &self.nodes[t.0].value
    }

    pub fn scalar_value(&self, t: TensorRef) -> T {
        let v = self.value(t);
        assert_eq!(v.len(), 1, "expected scalar node");
        v[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ---- leaves ----

    pub fn constant(&mut self, v: Array2<T>) -> TensorRef {
        self.push(v, Op::Leaf { param: None })
    }

    pub fn shared(&mut self, v: Arc<Array2<T>>, param: Option<ParamId>) -> TensorRef {
        self.nodes.push(Node { value: v, op: Op::Leaf { param } });
        TensorRef(self.nodes.len() - 1)
    }

    // ---- ops ----

    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> TensorRef {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a.0, b.0))
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> TensorRef {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> TensorRef {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> TensorRef {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: TensorRef, c: T) -> TensorRef {
        let v = self.value(a).mapv(|x| x * c);
        self.push(v, Op::Scale(a.0, c))
    }

    /// `[m × n] + [1 × n]` row broadcast (bias add).
    pub fn add_row(&mut self, a: TensorRef, row: TensorRef) -> TensorRef {
        let r = self.value(row).row(0).to_owned();
        let v = self.value(a) + &r;
        self.push(v, Op::AddRow(a.0, row.0))
    }

    /// `[m × n] * [1 × n]` row broadcast (per-feature gain).
    pub fn mul_row(&mut self, a: TensorRef, row: TensorRef) -> TensorRef {
        let r = self.value(row).row(0).to_owned();
        let v = self.value(a) * &r;
        self.push(v, Op::MulRow(a.0, row.0))
    }

    pub fn relu(&mut self, a: TensorRef) -> TensorRef {
        let v = self.value(a).mapv(|x| if x > T::zero() { x } else { T::zero() });
        self.push(v, Op::Relu(a.0))
    }

    /// tanh-approximation GELU.
    pub fn gelu(&mut self, a: TensorRef) -> TensorRef {
        let v = self.value(a).mapv(gelu_fwd);
        self.push(v, Op::Gelu(a.0))
    }

    pub fn softmax_rows(&mut self, a: TensorRef) -> TensorRef {
        let x = self.value(a);
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            row.mapv_inplace(|e| (e - max).exp());
            let sum = row.iter().cloned().sum::<T>();
            row.mapv_inplace(|e| e / sum);
        }
        self.push(v, Op::SoftmaxRows(a.0))
    }

    /// Row-wise layer normalization without affine terms; compose with
    /// [`Tape::mul_row`] / [`Tape::add_row`] for gain and bias.
    pub fn layer_norm_rows(&mut self, a: TensorRef, eps: T) -> TensorRef {
        let x = self.value(a);
        let n = T::from_usize(x.ncols());
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let mean = row.iter().cloned().sum::<T>() / n;
            let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<T>() / n;
            let inv = (var + eps).sqrt().recip();
            row.mapv_inplace(|e| (e - mean) * inv);
        }
        self.push(v, Op::LayerNormRows { x: a.0, eps })
    }

    pub fn transpose(&mut self, a: TensorRef) -> TensorRef {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a.0))
    }

    /// Row-major reshape to `[rows × cols]`.
    pub fn reshape(&mut self, a: TensorRef, rows: usize, cols: usize) -> TensorRef {
        let v = Array2::from_shape_vec((rows, cols), self.value(a).iter().cloned().collect())
            .expect("reshape: element count mismatch");
        self.push(v, Op::Reshape(a.0))
    }

    pub fn slice_cols(&mut self, a: TensorRef, from: usize, to: usize) -> TensorRef {
        let v = self.value(a).slice(s![.., from..to]).to_owned();
        self.push(v, Op::SliceCols { x: a.0, from, to })
    }

    pub fn concat_rows(&mut self, parts: &[TensorRef]) -> TensorRef {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(v, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    pub fn slice_rows(&mut self, a: TensorRef, from: usize, to: usize) -> TensorRef {
        let ids: Vec<usize> = (from..to).collect();
        self.gather_rows(a, ids)
    }

    pub fn gather_rows(&mut self, a: TensorRef, ids: Vec<usize>) -> TensorRef {
        let x = self.value(a);
        let mut v = Array2::zeros((ids.len(), x.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            v.row_mut(i).assign(&x.row(id));
        }
        self.push(v, Op::GatherRows { table: a.0, ids })
    }

    pub fn mean_all(&mut self, a: TensorRef) -> TensorRef {
        let x = self.value(a);
        let n = T::from_usize(x.len());
        let m = x.iter().cloned().sum::<T>() / n;
        self.push(Array2::from_elem((1, 1), m), Op::MeanAll(a.0))
    }

    /// Mean squared error against a constant target, averaged over elements.
    pub fn mse_to(&mut self, a: TensorRef, target: Array2<T>) -> TensorRef {
        let x = self.value(a);
        assert_eq!(x.dim(), target.dim(), "mse_to: shape mismatch");
        let n = T::from_usize(x.len());
        let sum = x
            .iter()
            .zip(target.iter())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<T>();
        self.push(
            Array2::from_elem((1, 1), sum / n),
            Op::MseTo { x: a.0, target: Arc::new(target) },
        )
    }

    /// Mean absolute error against a constant target, averaged over elements.
    pub fn l1_to(&mut self, a: TensorRef, target: Array2<T>) -> TensorRef {
        let x = self.value(a);
        assert_eq!(x.dim(), target.dim(), "l1_to: shape mismatch");
        let n = T::from_usize(x.len());
        let sum = x
            .iter()
            .zip(target.iter())
            .map(|(&p, &t)| (p - t).abs())
            .sum::<T>();
        self.push(
            Array2::from_elem((1, 1), sum / n),
            Op::L1To { x: a.0, target: Arc::new(target) },
        )
    }

    /// Mean token-level cross entropy of row logits against class ids.
    pub fn cross_entropy_rows(&mut self, logits: TensorRef, ids: Vec<usize>) -> TensorRef {
        let x = self.value(logits);
        assert_eq!(x.nrows(), ids.len(), "cross_entropy: row/label mismatch");
        let n = T::from_usize(ids.len());
        let mut total = T::zero();
        for (row, &id) in x.rows().into_iter().zip(ids.iter()) {
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&e| (e - max).exp()).sum::<T>().ln() + max;
            total += lse - row[id];
        }
        self.push(
            Array2::from_elem((1, 1), total / n),
            Op::CrossEntropyRows { logits: logits.0, ids },
        )
    }

    // ---- backward ----

    /// Backpropagate from a scalar loss node; returns parameter gradients.
    pub fn backward(&self, loss: TensorRef) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward: loss must be scalar");
        let mut grads: Vec<Option<Array2<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), T::one()));

        let mut out = Gradients { grads: Vec::new() };
        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf { param } => {
                    if let Some(id) = param {
                        match out.grads.iter_mut().find(|(p, _)| p == id) {
                            Some((_, acc)) => *acc += &g,
                            None => out.grads.push((*id, g)),
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.nodes[*b].value.t());
                    let db = self.nodes[*a].value.t().dot(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.mapv(|v| -v));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = &g * &*self.nodes[*b].value;
                    let db = &g * &*self.nodes[*a].value;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.mapv(|v| v * *c)),
                Op::AddRow(a, row) => {
                    let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, dr);
                    accumulate(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let r = self.nodes[*row].value.row(0).to_owned();
                    let da = &g * &r;
                    let dr = (&g * &*self.nodes[*a].value)
                        .sum_axis(Axis(0))
                        .insert_axis(Axis(0));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *row, dr);
                }
                Op::Relu(a) => {
                    let x = &self.nodes[*a].value;
                    let mut da = g;
                    da.zip_mut_with(x, |gv, &xv| {
                        if xv <= T::zero() {
                            *gv = T::zero();
                        }
                    });
                    accumulate(&mut grads, *a, da);
                }
                Op::Gelu(a) => {
                    let x = &self.nodes[*a].value;
                    let mut da = g;
                    da.zip_mut_with(x, |gv, &xv| *gv = *gv * gelu_bwd(xv));
                    accumulate(&mut grads, *a, da);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[i].value;
                    let mut da = g;
                    for (mut grow, yrow) in da.rows_mut().into_iter().zip(y.rows()) {
                        let dot = grow
                            .iter()
                            .zip(yrow.iter())
                            .map(|(&gv, &yv)| gv * yv)
                            .sum::<T>();
                        for (gv, &yv) in grow.iter_mut().zip(yrow.iter()) {
                            *gv = yv * (*gv - dot);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LayerNormRows { x, eps } => {
                    let xin = &self.nodes[*x].value;
                    let y = &self.nodes[i].value;
                    let n = T::from_usize(xin.ncols());
                    let mut da = g;
                    for ((mut grow, yrow), xrow) in
                        da.rows_mut().into_iter().zip(y.rows()).zip(xin.rows())
                    {
                        let mean = xrow.iter().cloned().sum::<T>() / n;
                        let var =
                            xrow.iter().map(|&e| (e - mean) * (e - mean)).sum::<T>() / n;
                        let inv = (var + *eps).sqrt().recip();
                        let g_mean = grow.iter().cloned().sum::<T>() / n;
                        let gy_mean = grow
                            .iter()
                            .zip(yrow.iter())
                            .map(|(&gv, &yv)| gv * yv)
                            .sum::<T>()
                            / n;
                        for (gv, &yv) in grow.iter_mut().zip(yrow.iter()) {
                            *gv = inv * (*gv - g_mean - yv * gy_mean);
                        }
                    }
                    accumulate(&mut grads, *x, da);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.t().to_owned()),
                Op::Reshape(a) => {
                    let shape = self.nodes[*a].value.dim();
                    let da = Array2::from_shape_vec(shape, g.iter().cloned().collect()).unwrap();
                    accumulate(&mut grads, *a, da);
                }
                Op::SliceCols { x, from, to } => {
                    let shape = self.nodes[*x].value.dim();
                    let mut da = Array2::zeros(shape);
                    da.slice_mut(s![.., *from..*to]).assign(&g);
                    accumulate(&mut grads, *x, da);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.nodes[*p].value.nrows();
                        let dp = g.slice(s![offset..offset + rows, ..]).to_owned();
                        accumulate(&mut grads, *p, dp);
                        offset += rows;
                    }
                }
                Op::GatherRows { table, ids } => {
                    let shape = self.nodes[*table].value.dim();
                    let mut da = Array2::zeros(shape);
                    for (gi, &id) in ids.iter().enumerate() {
                        let mut row = da.row_mut(id);
                        row += &g.row(gi);
                    }
                    accumulate(&mut grads, *table, da);
                }
                Op::MeanAll(a) => {
                    let shape = self.nodes[*a].value.dim();
                    let c = g[[0, 0]] / T::from_usize(shape.0 * shape.1);
                    accumulate(&mut grads, *a, Array2::from_elem(shape, c));
                }
                Op::MseTo { x, target } => {
                    let xv = &self.nodes[*x].value;
                    let n = T::from_usize(xv.len());
                    let c = g[[0, 0]] * T::from_f64(2.0) / n;
                    let mut da = &**xv - &**target;
                    da.mapv_inplace(|v| v * c);
                    accumulate(&mut grads, *x, da);
                }
                Op::L1To { x, target } => {
                    let xv = &self.nodes[*x].value;
                    let n = T::from_usize(xv.len());
                    let c = g[[0, 0]] / n;
                    let mut da = &**xv - &**target;
                    da.mapv_inplace(|v| {
                        if v > T::zero() {
                            c
                        } else if v < T::zero() {
                            -c
                        } else {
                            T::zero()
                        }
                    });
                    accumulate(&mut grads, *x, da);
                }
                Op::CrossEntropyRows { logits, ids } => {
                    let x = &self.nodes[*logits].value;
                    let n = T::from_usize(ids.len());
                    let c = g[[0, 0]] / n;
                    let mut da = Array2::zeros(x.dim());
                    for ((mut drow, xrow), &id) in
                        da.rows_mut().into_iter().zip(x.rows()).zip(ids.iter())
                    {
                        let max = xrow.iter().cloned().fold(T::neg_infinity(), T::max);
                        let denom = xrow.iter().map(|&e| (e - max).exp()).sum::<T>();
                        for (j, (dv, &xv)) in
                            drow.iter_mut().zip(xrow.iter()).enumerate()
                        {
                            let p = (xv - max).exp() / denom;
                            *dv = c * if j == id { p - T::one() } else { p };
                        }
                    }
                    accumulate(&mut grads, *logits, da);
                }
            }
        }
        out
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Array2<T>>], idx: usize, g: Array2<T>) {
    match &mut grads[idx] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

fn gelu_fwd<T: Real>(x: T) -> T {
    let c = T::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_bwd<T: Real>(x: T) -> T {
    let c = T::from_f64(0.797_884_560_802_865_4);
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + three * k * x * x)
}
