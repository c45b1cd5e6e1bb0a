//! Dense 2-D reverse-mode autodiff, Adam and a step learning-rate schedule.
//!
//! Values live on a [`Tape`]; every primitive appends a node holding its
//! forward value and the handles it was computed from. Learned matrices are
//! kept in a [`ParamStore`] and enter a tape through [`Tape::param`], so one
//! store can back many short-lived tapes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows * cols");
        Matrix { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Matrix::from_vec(1, n, data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scalar(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "not a scalar");
        self.data[0]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    fn add_assign(&mut self, other: &Matrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `alpha * op(a) * op(b) + beta * c` where `op` optionally transposes.
fn gemm(a: &Matrix, ta: bool, b: &Matrix, tb: bool, c: &mut Matrix, beta: f64) {
    let (m, k) = if ta {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let n = if tb { b.rows } else { b.cols };
    debug_assert_eq!(c.shape(), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if tb {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    // SAFETY: strides and extents describe exactly the buffers of `a`, `b`
    // and `c`, which do not alias.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(shape_err("matmul", a, b));
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm(a, false, b, false, &mut c, 0.0);
    Ok(c)
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
}

/// Named learned matrices in declaration order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    pub params: Vec<Param>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.data.len()).sum()
    }
}

/// Gradient accumulators, one slot per parameter of a store.
#[derive(Debug, Clone, Default)]
pub struct Grads {
    slots: Vec<Option<Matrix>>,
}

impl Grads {
    pub fn new(store: &ParamStore) -> Self {
        Grads {
            slots: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.slots[id.0].as_ref()
    }

    pub fn set(&mut self, id: ParamId, g: Matrix) {
        self.slots[id.0] = Some(g);
    }

    pub fn clear(&mut self) {
        self.slots.iter_mut().for_each(|s| *s = None);
    }

    fn add(&mut self, id: ParamId, g: &Matrix) {
        match &mut self.slots[id.0] {
            Some(existing) => existing.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    RowSoftmax(Var),
    /// Normalized output kept in the node value; inverse std per row here.
    LayerNorm(Var, Vec<f64>),
    Relu(Var),
    Dropout(Var, Vec<f64>),
    RowMean(Var),
    Square(Var),
    Mean(Var),
}

struct Node {
    /// `None` for parameters, which are read from the store.
    value: Option<Matrix>,
    op: Op,
}

/// Recorded computation over one parameter store. `training` switches
/// dropout on.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    pub training: bool,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore, training: bool) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            training,
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(op, x, y));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let mut v = self.value(a).clone();
        for (x, y) in v.data.iter_mut().zip(&self.value(b).data) {
            *x -= y;
        }
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Adds the 1×n row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows != 1 || b.cols != x.cols {
            return Err(shape_err("add_row", x, b));
        }
        let mut v = x.clone();
        for row in v.data.chunks_mut(b.cols.max(1)) {
            for (y, bb) in row.iter_mut().zip(&b.data) {
                *y += bb;
            }
        }
        Ok(self.push(v, Op::AddRow(a, bias)))
    }

    /// Multiplies every row of `a` elementwise by the 1×n row `gain`.
    pub fn mul_row(&mut self, a: Var, gain: Var) -> Result<Var> {
        let (x, g) = (self.value(a), self.value(gain));
        if g.rows != 1 || g.cols != x.cols {
            return Err(shape_err("mul_row", x, g));
        }
        let mut v = x.clone();
        for row in v.data.chunks_mut(g.cols.max(1)) {
            for (y, gg) in row.iter_mut().zip(&g.data) {
                *y *= gg;
            }
        }
        Ok(self.push(v, Op::MulRow(a, gain)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x *= s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            if m.cols != cols {
                return Err(shape_err("concat_rows", self.value(parts[0]), m));
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(self.push(
            Matrix::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows;
        let mut cols = 0;
        for &p in parts {
            let m = self.value(p);
            if m.rows != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), m));
            }
            cols += m.cols;
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(a);
        if start + len > m.cols {
            return Err(shape_err(
                "slice_cols",
                m,
                &Matrix::zeros(m.rows, start + len),
            ));
        }
        let mut out = Matrix::zeros(m.rows, len);
        for r in 0..m.rows {
            out.data[r * len..(r + 1) * len]
                .copy_from_slice(&m.data[r * m.cols + start..r * m.cols + start + len]);
        }
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(a);
        if start + len > m.rows {
            return Err(shape_err(
                "slice_rows",
                m,
                &Matrix::zeros(start + len, m.cols),
            ));
        }
        let out = Matrix::from_vec(
            len,
            m.cols,
            m.data[start * m.cols..(start + len) * m.cols].to_vec(),
        );
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        let cols = v.cols.max(1);
        for row in v.data.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(v, Op::RowSoftmax(a))
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        let n = v.cols as f64;
        let mut inv = Vec::with_capacity(v.rows);
        for row in v.data.chunks_mut(v.cols.max(1)) {
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * s;
            }
            inv.push(s);
        }
        self.push(v, Op::LayerNorm(a, inv))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Inverted dropout; identity outside training mode or when `p == 0`.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: &mut R) -> Var {
        if !self.training || p <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(a).data.len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mut v = self.value(a).clone();
        for (x, m) in v.data.iter_mut().zip(&mask) {
            *x *= m;
        }
        self.push(v, Op::Dropout(a, mask))
    }

    /// Mean over rows: 1×cols.
    pub fn row_mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = Matrix::zeros(1, m.cols);
        for r in 0..m.rows {
            for (o, x) in out.data.iter_mut().zip(m.row(r)) {
                *o += x;
            }
        }
        let n = m.rows.max(1) as f64;
        out.data.iter_mut().for_each(|x| *x /= n);
        self.push(out, Op::RowMean(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x *= *x);
        self.push(v, Op::Square(a))
    }

    /// Mean of all entries: 1×1.
    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let s = m.data.iter().sum::<f64>() / m.data.len().max(1) as f64;
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::Mean(a))
    }

    /// Reverse pass from a scalar; parameter gradients are added to `grads`.
    pub fn backward(&self, loss: Var, grads_out: &mut Grads) -> Result<()> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: lv.shape(),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads, grads_out);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>], out: &mut Grads) {
        let node = &self.nodes[i];
        let value = || self.value(Var(i));
        let mut acc = |v: Var, d: Matrix| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&d),
            slot @ None => *slot = Some(d),
        };
        match &node.op {
            Op::Input => {}
            Op::Param(id) => out.add(*id, g),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = Matrix::zeros(av.rows, av.cols);
                gemm(g, false, bv, true, &mut da, 0.0);
                let mut db = Matrix::zeros(bv.rows, bv.cols);
                gemm(av, true, g, false, &mut db, 0.0);
                acc(*a, da);
                acc(*b, db);
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                let mut neg = g.clone();
                neg.data.iter_mut().for_each(|x| *x = -*x);
                acc(*b, neg);
            }
            Op::AddRow(a, bias) => {
                let mut db = Matrix::zeros(1, g.cols);
                for r in 0..g.rows {
                    for (d, x) in db.data.iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                acc(*a, g.clone());
                acc(*bias, db);
            }
            Op::MulRow(a, gain) => {
                let (x, gn) = (self.value(*a), self.value(*gain));
                let mut da = g.clone();
                let mut dg = Matrix::zeros(1, g.cols);
                for r in 0..g.rows {
                    for c in 0..g.cols {
                        let i = r * g.cols + c;
                        da.data[i] = g.data[i] * gn.data[c];
                        dg.data[c] += g.data[i] * x.data[i];
                    }
                }
                acc(*a, da);
                acc(*gain, dg);
            }
            Op::Scale(a, s) => {
                let mut d = g.clone();
                d.data.iter_mut().for_each(|x| *x *= s);
                acc(*a, d);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let m = self.value(p);
                    let n = m.rows * m.cols;
                    acc(
                        p,
                        Matrix::from_vec(m.rows, m.cols, g.data[off..off + n].to_vec()),
                    );
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let m = self.value(p);
                    let mut d = Matrix::zeros(m.rows, m.cols);
                    for r in 0..m.rows {
                        d.data[r * m.cols..(r + 1) * m.cols]
                            .copy_from_slice(&g.data[r * g.cols + off..r * g.cols + off + m.cols]);
                    }
                    acc(p, d);
                    off += m.cols;
                }
            }
            Op::SliceCols(a, start) => {
                let src = self.value(*a);
                let mut d = Matrix::zeros(src.rows, src.cols);
                for r in 0..g.rows {
                    d.data[r * src.cols + start..r * src.cols + start + g.cols]
                        .copy_from_slice(g.row(r));
                }
                acc(*a, d);
            }
            Op::SliceRows(a, start) => {
                let src = self.value(*a);
                let mut d = Matrix::zeros(src.rows, src.cols);
                d.data[start * src.cols..start * src.cols + g.data.len()].copy_from_slice(&g.data);
                acc(*a, d);
            }
            Op::RowSoftmax(a) => {
                let y = value();
                let mut d = Matrix::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols {
                        d.data[r * y.cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                acc(*a, d);
            }
            Op::LayerNorm(a, inv) => {
                let y = value();
                let n = y.cols as f64;
                let mut d = Matrix::zeros(y.rows, y.cols);
                for (r, &inv_r) in inv.iter().enumerate() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let mean_g = gr.iter().sum::<f64>() / n;
                    let mean_gy = yr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for c in 0..y.cols {
                        d.data[r * y.cols + c] = inv_r * (gr[c] - mean_g - yr[c] * mean_gy);
                    }
                }
                acc(*a, d);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let mut d = g.clone();
                for (dd, xx) in d.data.iter_mut().zip(&x.data) {
                    if *xx <= 0.0 {
                        *dd = 0.0;
                    }
                }
                acc(*a, d);
            }
            Op::Dropout(a, mask) => {
                let mut d = g.clone();
                for (dd, m) in d.data.iter_mut().zip(mask) {
                    *dd *= m;
                }
                acc(*a, d);
            }
            Op::RowMean(a) => {
                let src = self.value(*a);
                let n = src.rows.max(1) as f64;
                let mut d = Matrix::zeros(src.rows, src.cols);
                for r in 0..src.rows {
                    for c in 0..src.cols {
                        d.data[r * src.cols + c] = g.data[c] / n;
                    }
                }
                acc(*a, d);
            }
            Op::Square(a) => {
                let x = self.value(*a);
                let mut d = g.clone();
                for (dd, xx) in d.data.iter_mut().zip(&x.data) {
                    *dd *= 2.0 * xx;
                }
                acc(*a, d);
            }
            Op::Mean(a) => {
                let src = self.value(*a);
                let n = src.data.len().max(1) as f64;
                let gv = g.data[0] / n;
                acc(
                    *a,
                    Matrix::from_vec(src.rows, src.cols, vec![gv; src.data.len()]),
                );
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || {
            store
                .params
                .iter()
                .map(|p| vec![0.0; p.value.data.len()])
                .collect()
        };
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update from accumulated gradients; parameters without a
    /// gradient only receive weight decay.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) -> Result<()> {
        for (p, g) in store.params.iter().zip(&grads.slots) {
            if let Some(g) = g {
                if g.data.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in store.params.iter_mut().enumerate() {
            let decay = 1.0 - lr * weight_decay;
            if decay != 1.0 {
                p.value.data.iter_mut().for_each(|x| *x *= decay);
            }
            let Some(g) = &grads.slots[i] else {
                continue;
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.data.len() {
                let gj = g.data[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p.value.data[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Learning-rate multiplier `gamma^(epoch / step_size)`.
pub fn step_lr(step_size: usize, gamma: f64, epoch: usize) -> f64 {
    gamma.powi((epoch / step_size.max(1)) as i32)
}
