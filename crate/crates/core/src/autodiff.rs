//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value on a [`Tape`] is a 2-D matrix. Sequences are time-major
//! (`frames x channels`) and vectors are single rows. The operation set is the
//! small closed family the factorization model needs; each op records its
//! parents and the backward pass walks the tape in reverse.

use std::sync::Arc;

use ndarray::{s, Array2, Axis};

pub type Mat = Array2<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparse linear map along the time axis.
///
/// Output row `i` is `sum_k w_k * input[j_k]` over the entries of `rows[i]`.
/// Resampling, pooling, upsampling, shifting and padding are all expressed
/// this way, which keeps them differentiable with respect to the input.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeMap {
    in_len: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl TimeMap {
    pub fn new(in_len: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        debug_assert!(rows.iter().flatten().all(|&(j, _)| j < in_len));
        Self { in_len, rows }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(n, (0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    /// `out[i] = in[i + offset]`, zero outside the input.
    pub fn shift(n: usize, offset: isize) -> Self {
        let rows = (0..n as isize)
            .map(|i| {
                let j = i + offset;
                if j >= 0 && (j as usize) < n {
                    vec![(j as usize, 1.0)]
                } else {
                    Vec::new()
                }
            })
            .collect();
        Self::new(n, rows)
    }

    /// Mean over consecutive windows of `factor` frames; the last window may
    /// be partial. Produces `ceil(n / factor)` rows.
    pub fn avg_pool(n: usize, factor: usize) -> Self {
        let factor = factor.max(1);
        let rows = (0..n.div_ceil(factor))
            .map(|o| {
                let lo = o * factor;
                let hi = (lo + factor).min(n);
                let w = 1.0 / (hi - lo) as f64;
                (lo..hi).map(|j| (j, w)).collect()
            })
            .collect();
        Self::new(n, rows)
    }

    /// Sample-and-hold upsampling: `out[i] = in[min(i / factor, in_len - 1)]`.
    pub fn repeat_upsample(in_len: usize, factor: usize, out_len: usize) -> Self {
        let factor = factor.max(1);
        let rows = (0..out_len)
            .map(|i| {
                if in_len == 0 {
                    Vec::new()
                } else {
                    vec![((i / factor).min(in_len - 1), 1.0)]
                }
            })
            .collect();
        Self::new(in_len, rows)
    }

    /// Linear interpolation from `in_len` to `out_len` frames with the first
    /// and last frames aligned.
    pub fn linear(in_len: usize, out_len: usize) -> Self {
        let rows = (0..out_len)
            .map(|i| {
                if in_len == 0 {
                    return Vec::new();
                }
                if in_len == 1 || out_len == 1 {
                    return vec![(0, 1.0)];
                }
                let pos = i as f64 * (in_len - 1) as f64 / (out_len - 1) as f64;
                lerp_row(pos, 0, in_len - 1)
            })
            .collect();
        Self::new(in_len, rows)
    }

    /// Truncate to, or pad with empty (zero) rows up to, `out_len` rows.
    pub fn fit_length(mut self, out_len: usize) -> Self {
        self.rows.resize(out_len, Vec::new());
        self
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn apply(&self, x: &Mat) -> Mat {
        assert_eq!(x.nrows(), self.in_len, "time map input length");
        let mut out = Mat::zeros((self.rows.len(), x.ncols()));
        for (i, row) in self.rows.iter().enumerate() {
            let mut dst = out.row_mut(i);
            for &(j, w) in row {
                dst.scaled_add(w, &x.row(j));
            }
        }
        out
    }

    fn apply_transpose(&self, g: &Mat) -> Mat {
        let mut out = Mat::zeros((self.in_len, g.ncols()));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                out.row_mut(j).scaled_add(w, &g.row(i));
            }
        }
        out
    }
}

/// Interpolation weights for fractional position `pos`, clamped to `[lo, hi]`.
pub(crate) fn lerp_row(pos: f64, lo: usize, hi: usize) -> Vec<(usize, f64)> {
    let pos = pos.clamp(lo as f64, hi as f64);
    let j = pos.floor() as usize;
    let frac = pos - j as f64;
    if j >= hi || frac < 1e-12 {
        vec![(j.min(hi), 1.0)]
    } else {
        vec![(j, 1.0 - frac), (j + 1, frac)]
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Time(Var, Arc<TimeMap>),
    BroadcastRows(Var),
    MeanRows(Var),
    SoftmaxRows(Var),
    L2NormalizeRows(Var, f64),
    StandardizeCols(Var, f64),
    MeanSquare(Var),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation record.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every tape node that requires one.
#[derive(Debug)]
pub struct Gradients(Vec<Option<Mat>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.0.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.0.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable leaf (a parameter or an input we want gradients for).
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shapes");
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row expects a single row");
        let value = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols row counts");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    pub fn time_map(&mut self, a: Var, map: Arc<TimeMap>) -> Var {
        let value = map.apply(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::Time(a, map), rg)
    }

    /// Repeats a single row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        assert_eq!(self.shape(a).0, 1, "broadcast_rows expects a single row");
        let row = self.value(a).row(0).to_owned();
        let value = row.broadcast((n, row.len())).unwrap().to_owned();
        let rg = self.rg(a);
        self.push(value, Op::BroadcastRows(a), rg)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = x
            .mean_axis(Axis(0))
            .expect("mean_rows of empty matrix")
            .insert_axis(Axis(0));
        let rg = self.rg(a);
        self.push(value, Op::MeanRows(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    /// `x / sqrt(|x|^2 + eps)` per row.
    pub fn l2_normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let n = (row.dot(&row) + eps).sqrt();
            row.mapv_inplace(|x| x / n);
        }
        let rg = self.rg(a);
        self.push(value, Op::L2NormalizeRows(a, eps), rg)
    }

    /// Per-column `(x - mean) / sqrt(var + floor^2)` over the rows.
    pub fn standardize_cols(&mut self, a: Var, floor: f64) -> Var {
        let value = standardize_cols(self.value(a), floor);
        let rg = self.rg(a);
        self.push(value, Op::StandardizeCols(a, floor), rg)
    }

    /// Mean of squared entries, as a `1 x 1` value.
    pub fn mean_square(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.len().max(1) as f64;
        let v = x.iter().map(|v| v * v).sum::<f64>() / n;
        let rg = self.rg(a);
        self.push(Mat::from_elem((1, 1), v), Op::MeanSquare(a), rg)
    }

    /// Mean squared difference between two equally shaped values.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        self.mean_square(d)
    }

    /// Dense layer `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    pub fn sum(&mut self, terms: &[Var]) -> Var {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t);
        }
        acc
    }

    /// Gradients of the scalar `root` with respect to all upstream nodes.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Mat::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                &Op::MatMul(a, b) => {
                    if self.rg(a) {
                        let ga = g.dot(&self.value(b).t());
                        accumulate(&mut grads, a, ga);
                    }
                    if self.rg(b) {
                        let gb = self.value(a).t().dot(&g);
                        accumulate(&mut grads, b, gb);
                    }
                }
                &Op::Add(a, b) => {
                    if self.rg(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                    if self.rg(b) {
                        accumulate(&mut grads, b, g);
                    }
                }
                &Op::Sub(a, b) => {
                    if self.rg(b) {
                        accumulate(&mut grads, b, -&g);
                    }
                    if self.rg(a) {
                        accumulate(&mut grads, a, g);
                    }
                }
                &Op::Mul(a, b) => {
                    if self.rg(a) {
                        accumulate(&mut grads, a, &g * self.value(b));
                    }
                    if self.rg(b) {
                        accumulate(&mut grads, b, &g * self.value(a));
                    }
                }
                &Op::AddRow(a, row) => {
                    if self.rg(row) {
                        let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, row, gr);
                    }
                    if self.rg(a) {
                        accumulate(&mut grads, a, g);
                    }
                }
                &Op::Scale(a, c) => accumulate(&mut grads, a, g * c),
                &Op::Tanh(a) => {
                    let ga = ndarray::Zip::from(&g)
                        .and(y)
                        .map_collect(|&g, &y| g * (1.0 - y * y));
                    accumulate(&mut grads, a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        if self.rg(p) {
                            accumulate(&mut grads, p, g.slice(s![.., col..col + w]).to_owned());
                        }
                        col += w;
                    }
                }
                &Op::SliceCols(a, start) => {
                    let mut ga = Mat::zeros(self.shape(a));
                    let w = g.ncols();
                    ga.slice_mut(s![.., start..start + w]).assign(&g);
                    accumulate(&mut grads, a, ga);
                }
                Op::Time(a, map) => accumulate(&mut grads, *a, map.apply_transpose(&g)),
                &Op::BroadcastRows(a) => {
                    accumulate(&mut grads, a, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                &Op::MeanRows(a) => {
                    let n = self.shape(a).0;
                    let row = g.row(0).mapv(|v| v / n as f64);
                    let ga = row.broadcast((n, row.len())).unwrap().to_owned();
                    accumulate(&mut grads, a, ga);
                }
                &Op::SoftmaxRows(a) => {
                    let mut ga = &g * y;
                    for (mut r, yr) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = r.sum();
                        r.zip_mut_with(&yr, |v, &yv| *v -= yv * dot);
                    }
                    accumulate(&mut grads, a, ga);
                }
                &Op::L2NormalizeRows(a, eps) => {
                    let x = self.value(a);
                    let mut ga = g.clone();
                    for ((mut r, yr), xr) in ga.rows_mut().into_iter().zip(y.rows()).zip(x.rows()) {
                        let n = (xr.dot(&xr) + eps).sqrt();
                        let gy = r.dot(&yr);
                        r.zip_mut_with(&yr, |v, &yv| *v = (*v - yv * gy) / n);
                    }
                    accumulate(&mut grads, a, ga);
                }
                &Op::StandardizeCols(a, floor) => {
                    let x = self.value(a);
                    let n = x.nrows() as f64;
                    let mut ga = g.clone();
                    for ((mut gc, yc), xc) in ga
                        .columns_mut()
                        .into_iter()
                        .zip(y.columns())
                        .zip(x.columns())
                    {
                        let m = xc.sum() / n;
                        let var = xc.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                        let sd = (var + floor * floor).sqrt();
                        let mg = gc.sum() / n;
                        let mgy = gc.dot(&yc) / n;
                        gc.zip_mut_with(&yc, |v, &yv| *v = (*v - mg - yv * mgy) / sd);
                    }
                    accumulate(&mut grads, a, ga);
                }
                &Op::MeanSquare(a) => {
                    let x = self.value(a);
                    let c = 2.0 * g[[0, 0]] / x.len().max(1) as f64;
                    accumulate(&mut grads, a, x * c);
                }
            }
        }
        Gradients(grads)
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Column-wise standardization shared by the tape op and non-differentiable callers.
pub fn standardize_cols(x: &Mat, floor: f64) -> Mat {
    let mut out = x.clone();
    let n = x.nrows().max(1) as f64;
    for mut col in out.columns_mut() {
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        let sd = (var + floor * floor).sqrt();
        col.mapv_inplace(|v| (v - m) / sd);
    }
    out
}
