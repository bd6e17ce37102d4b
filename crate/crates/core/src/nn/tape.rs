//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the tape
//! visits every node after all of its consumers.

use std::collections::HashMap;

use super::mat::Mat;
use super::params::{ParamId, ParameterStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `a [r x c] + b [1 x c]` broadcast over rows.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    MeanRows(Var),
    /// `out[j] = sum_i alpha[i] * rows[i * groups + j]`
    FrameMix {
        alpha: Var,
        rows: Var,
        groups: usize,
    },
    /// `sum (r, c, w) w * a[r][c]`
    WeightedPick(Var, Vec<(usize, usize, T)>),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Mat<T>,
    op: Op<T>,
}

#[derive(Debug, Clone)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Row-wise softmax with an optional validity mask; masked entries are 0.
pub(crate) fn softmax_rows<T: Scalar>(x: &Mat<T>, mask: Option<&[bool]>) -> Result<Mat<T>> {
    let mut out = Mat::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let keep = |c: usize| mask.is_none_or(|m| m[r * x.cols() + c]);
        let row = x.row(r);
        let max = (0..x.cols())
            .filter(|&c| keep(c))
            .map(|c| row[c])
            .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.max(v))))
            .ok_or_else(|| Error::Validation(format!("softmax row {r} is fully masked")))?;
        let orow = out.row_mut(r);
        let mut total = T::zero();
        for c in 0..row.len() {
            if keep(c) {
                let e = (row[c] - max).exp();
                orow[c] = e;
                total += e;
            }
        }
        for v in orow.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

fn log_softmax_rows<T: Scalar>(x: &Mat<T>) -> Mat<T> {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, m: Mat<T>) -> Var {
        self.push(m, Op::Constant)
    }

    /// Binds a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParameterStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(format!(
                "add {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let mut v = x.clone();
        v.add_assign(y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(row));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(Error::shape(format!(
                "broadcast add of {:?} onto {:?}",
                b.shape(),
                x.shape()
            )));
        }
        let mut v = x.clone();
        for r in 0..v.rows() {
            for (o, &bb) in v.row_mut(r).iter_mut().zip(b.data()) {
                *o += bb;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(format!(
                "mul {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| p * q)
            .collect();
        let v = Mat::from_vec(x.rows(), x.cols(), data)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(T::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::shape("concat_cols row counts differ"));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                v.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(Error::shape(format!(
                "column slice {start}..{} of {} columns",
                start + len,
                x.cols()
            )));
        }
        let mut v = Mat::zeros(x.rows(), len);
        for r in 0..x.rows() {
            v.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(Error::shape("concat_rows column counts differ"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        let v = Mat::from_vec(rows, cols, data)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.rows() {
            return Err(Error::shape(format!(
                "row slice {start}..{} of {} rows",
                start + len,
                x.rows()
            )));
        }
        let v = Mat::from_vec(
            len,
            x.cols(),
            x.data()[start * x.cols()..(start + len) * x.cols()].to_vec(),
        )?;
        Ok(self.push(v, Op::SliceRows(a, start)))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * x.cols());
        for &i in idx {
            if i >= x.rows() {
                return Err(Error::Index {
                    index: i,
                    size: x.rows(),
                });
            }
            data.extend_from_slice(x.row(i));
        }
        let v = Mat::from_vec(idx.len(), x.cols(), data)?;
        Ok(self.push(v, Op::GatherRows(a, idx.to_vec())))
    }

    /// Row-wise softmax; `mask` (row-major, same shape) zeroes entries.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let x = self.value(a);
        if let Some(m) = &mask {
            if m.len() != x.len() {
                return Err(Error::shape(format!(
                    "softmax mask has {} entries for {:?}",
                    m.len(),
                    x.shape()
                )));
            }
        }
        let v = softmax_rows(x, mask.as_deref())?;
        Ok(self.push(v, Op::SoftmaxRows(a)))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let v = log_softmax_rows(self.value(a));
        self.push(v, Op::LogSoftmaxRows(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() == 0 {
            return Err(Error::Empty("mean over zero rows".into()));
        }
        let n = T::of(x.rows() as f64);
        let mut v = Mat::zeros(1, x.cols());
        for r in 0..x.rows() {
            for (o, &s) in v.row_mut(0).iter_mut().zip(x.row(r)) {
                *o += s;
            }
        }
        v.data_mut().iter_mut().for_each(|o| *o /= n);
        Ok(self.push(v, Op::MeanRows(a)))
    }

    /// Weighted sum of row groups: `rows` is `[L * groups, d]`, `alpha` is
    /// `[1, L]`, the result is `[groups, d]`.
    pub fn frame_mix(&mut self, alpha: Var, rows: Var, groups: usize) -> Result<Var> {
        let (a, x) = (self.value(alpha), self.value(rows));
        if a.rows() != 1 || a.cols() * groups != x.rows() {
            return Err(Error::shape(format!(
                "frame_mix weights {:?} over rows {:?} in groups of {groups}",
                a.shape(),
                x.shape()
            )));
        }
        let d = x.cols();
        let mut v = Mat::zeros(groups, d);
        for (i, &w) in a.data().iter().enumerate() {
            for j in 0..groups {
                for (o, &s) in v.row_mut(j).iter_mut().zip(x.row(i * groups + j)) {
                    *o += w * s;
                }
            }
        }
        Ok(self.push(
            v,
            Op::FrameMix {
                alpha,
                rows,
                groups,
            },
        ))
    }

    pub fn weighted_pick(&mut self, a: Var, entries: Vec<(usize, usize, T)>) -> Result<Var> {
        let x = self.value(a);
        let mut total = T::zero();
        for &(r, c, w) in &entries {
            if r >= x.rows() || c >= x.cols() {
                return Err(Error::Index {
                    index: r * x.cols() + c,
                    size: x.len(),
                });
            }
            total += w * x.get(r, c);
        }
        Ok(self.push(Mat::filled(1, 1, total), Op::WeightedPick(a, entries)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Mat::filled(1, 1, s), Op::Sum(a))
    }

    /// Reverse sweep from a `1 x 1` node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::shape("backward needs a scalar output"));
        }
        let mut grads: Vec<Option<Mat<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Mat::filled(1, 1, T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Adds d(loss)/d(param) into the store's gradient buffers.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (&id, &var) in &self.params {
            if let Some(g) = grads.wrt(var) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Mat<T>, grads: &mut [Option<Mat<T>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, delta: Mat<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                acc(*a, g.matmul_t(y).expect("shapes checked in forward"));
                acc(*b, x.t_matmul(g).expect("shapes checked in forward"));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, b) => {
                acc(*a, g.clone());
                let mut db = Mat::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, &s) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                        *o += s;
                    }
                }
                acc(*b, db);
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let gx = zip_map(g, y, |gg, yy| gg * yy);
                let gy = zip_map(g, x, |gg, xx| gg * xx);
                acc(*a, gx);
                acc(*b, gy);
            }
            Op::Scale(a, s) => acc(*a, g.map(|v| v * *s)),
            Op::Tanh(a) => acc(*a, zip_map(g, &node.value, |gg, y| gg * (T::one() - y * y))),
            Op::Sigmoid(a) => acc(*a, zip_map(g, &node.value, |gg, y| gg * y * (T::one() - y))),
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    let mut d = Mat::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                    }
                    off += cols;
                    acc(p, d);
                }
            }
            Op::SliceCols(a, start) => {
                let x = self.value(*a);
                let mut d = Mat::zeros(x.rows(), x.cols());
                for r in 0..g.rows() {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*a, d);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let d = Mat::from_vec(
                        rows,
                        g.cols(),
                        g.data()[off * g.cols()..(off + rows) * g.cols()].to_vec(),
                    )
                    .expect("row block");
                    off += rows;
                    acc(p, d);
                }
            }
            Op::SliceRows(a, start) => {
                let x = self.value(*a);
                let mut d = Mat::zeros(x.rows(), x.cols());
                d.data_mut()[start * x.cols()..(start + g.rows()) * x.cols()]
                    .copy_from_slice(g.data());
                acc(*a, d);
            }
            Op::GatherRows(a, idx) => {
                let x = self.value(*a);
                let mut d = Mat::zeros(x.rows(), x.cols());
                for (k, &r) in idx.iter().enumerate() {
                    for (o, &s) in d.row_mut(r).iter_mut().zip(g.row(k)) {
                        *o += s;
                    }
                }
                acc(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Mat::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: T = y.row(r).iter().zip(g.row(r)).map(|(&p, &q)| p * q).sum();
                    for ((o, &p), &q) in d.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                        *o = p * (q - dot);
                    }
                }
                acc(*a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Mat::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let gsum: T = g.row(r).iter().copied().sum();
                    for ((o, &ly), &q) in d.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                        *o = q - ly.exp() * gsum;
                    }
                }
                acc(*a, d);
            }
            Op::MeanRows(a) => {
                let x = self.value(*a);
                let n = T::of(x.rows() as f64);
                let mut d = Mat::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    for (o, &s) in d.row_mut(r).iter_mut().zip(g.row(0)) {
                        *o = s / n;
                    }
                }
                acc(*a, d);
            }
            Op::FrameMix {
                alpha,
                rows,
                groups,
            } => {
                let (w, x) = (self.value(*alpha), self.value(*rows));
                let mut dw = Mat::zeros(1, w.cols());
                let mut dx = Mat::zeros(x.rows(), x.cols());
                for i in 0..w.cols() {
                    let wi = w.data()[i];
                    let mut s = T::zero();
                    for j in 0..*groups {
                        let src = x.row(i * groups + j);
                        let gj = g.row(j);
                        s += src.iter().zip(gj).map(|(&p, &q)| p * q).sum::<T>();
                        for (o, &q) in dx.row_mut(i * groups + j).iter_mut().zip(gj) {
                            *o = wi * q;
                        }
                    }
                    dw.data_mut()[i] = s;
                }
                acc(*alpha, dw);
                acc(*rows, dx);
            }
            Op::WeightedPick(a, entries) => {
                let x = self.value(*a);
                let go = g.scalar();
                let mut d = Mat::zeros(x.rows(), x.cols());
                for &(r, c, w) in entries {
                    let cur = d.get(r, c);
                    d.set(r, c, cur + w * go);
                }
                acc(*a, d);
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                acc(*a, Mat::filled(x.rows(), x.cols(), g.scalar()));
            }
        }
    }
}

fn zip_map<T: Scalar>(a: &Mat<T>, b: &Mat<T>, f: impl Fn(T, T) -> T) -> Mat<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Mat::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

/// Result of a reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Mat<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`, or `None` if `v` does not reach the
    /// loss.
    pub fn wrt(&self, v: Var) -> Option<&Mat<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff(f: impl Fn(&Mat<f64>) -> f64, x: &Mat<f64>) -> Mat<f64> {
        let eps = 1e-6;
        let mut out = Mat::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += eps;
            let mut m = x.clone();
            m.data_mut()[i] -= eps;
            out.data_mut()[i] = (f(&p) - f(&m)) / (2.0 * eps);
        }
        out
    }

    fn sample(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
        let data = (0..rows * cols)
            .map(|i| (((i as u64 + 1) * 2654435761 + seed * 97) % 1000) as f64 / 500.0 - 1.0)
            .collect();
        Mat::from_vec(rows, cols, data).unwrap()
    }

    /// Checks d(readout)/dx for a unary graph builder against central
    /// differences.
    fn check_unary(build: impl Fn(&mut Tape<f64>, Var) -> Var, x: Mat<f64>) {
        let weights = sample(64, 64, 5);
        let readout = |t: &mut Tape<f64>, y: Var| {
            let (r, c) = t.shape(y);
            let w = Mat::from_vec(r, c, weights.data()[..r * c].to_vec()).unwrap();
            let wv = t.constant(w);
            let p = t.mul(y, wv).unwrap();
            t.sum(p)
        };
        let eval = |m: &Mat<f64>| {
            let mut t = Tape::new();
            let v = t.constant(m.clone());
            let y = build(&mut t, v);
            let l = readout(&mut t, y);
            t.value(l).scalar()
        };
        let mut t = Tape::new();
        let v = t.constant(x.clone());
        let y = build(&mut t, v);
        let l = readout(&mut t, y);
        let g = t.gradients(l).unwrap();
        let analytic = g.wrt(v).unwrap().clone();
        let numeric = finite_diff(eval, &x);
        assert!(
            analytic.max_abs_diff(&numeric) < 1e-7,
            "analytic {analytic:?} numeric {numeric:?}"
        );
    }

    #[test]
    fn unary_ops_match_finite_differences() {
        let x = sample(3, 4, 1);
        check_unary(|t, v| t.tanh(v), x.clone());
        check_unary(|t, v| t.sigmoid(v), x.clone());
        check_unary(|t, v| t.transpose(v), x.clone());
        check_unary(|t, v| t.scale(v, -2.5), x.clone());
        check_unary(|t, v| t.softmax_rows(v, None).unwrap(), x.clone());
        check_unary(
            |t, v| {
                let mask = vec![
                    true, false, true, true, false, true, true, true, true, true, false, false,
                ];
                t.softmax_rows(v, Some(mask)).unwrap()
            },
            x.clone(),
        );
        check_unary(|t, v| t.log_softmax_rows(v), x.clone());
        check_unary(|t, v| t.mean_rows(v).unwrap(), x.clone());
        check_unary(|t, v| t.slice_cols(v, 1, 2).unwrap(), x.clone());
        check_unary(|t, v| t.slice_rows(v, 1, 2).unwrap(), x.clone());
        check_unary(|t, v| t.gather_rows(v, &[2, 0, 2]).unwrap(), x.clone());
        check_unary(
            |t, v| {
                t.weighted_pick(v, vec![(0, 1, 0.5), (2, 3, -1.0), (0, 1, 2.0)])
                    .unwrap()
            },
            x.clone(),
        );
        check_unary(
            |t, v| {
                let s = t.slice_cols(v, 0, 1).unwrap();
                t.concat_cols(&[v, s, v]).unwrap()
            },
            x.clone(),
        );
        check_unary(
            |t, v| {
                let s = t.slice_rows(v, 0, 1).unwrap();
                t.concat_rows(&[s, v]).unwrap()
            },
            x.clone(),
        );
        check_unary(|t, v| t.mul(v, v).unwrap(), x.clone());
    }

    #[test]
    fn binary_ops_match_finite_differences() {
        let w = sample(4, 2, 3);
        let b = sample(1, 2, 4);
        check_unary(
            |t, v| {
                let wv = t.constant(w.clone());
                let bv = t.constant(b.clone());
                let y = t.matmul(v, wv).unwrap();
                t.add_row(y, bv).unwrap()
            },
            sample(3, 4, 1),
        );
        // gradient with respect to the right operand and the bias row
        let x = sample(3, 4, 1);
        check_unary(
            |t, v| {
                let xv = t.constant(x.clone());
                t.matmul(xv, v).unwrap()
            },
            w.clone(),
        );
        check_unary(
            |t, v| {
                let xv = t.constant(sample(3, 2, 9));
                t.add_row(xv, v).unwrap()
            },
            b.clone(),
        );
    }

    #[test]
    fn frame_mix_matches_finite_differences() {
        let rows = sample(6, 3, 2);
        let alpha = Mat::from_vec(1, 3, vec![0.2, 0.5, 0.3]).unwrap();
        check_unary(
            |t, v| {
                let a = t.constant(alpha.clone());
                t.frame_mix(a, v, 2).unwrap()
            },
            rows.clone(),
        );
        check_unary(
            |t, v| {
                let r = t.constant(rows.clone());
                t.frame_mix(v, r, 2).unwrap()
            },
            alpha,
        );
    }

    #[test]
    fn params_bind_once_and_accumulate() {
        let mut store = ParameterStore::<f64>::new();
        let id = store
            .insert("w", Mat::from_vec(1, 2, vec![1.0, 2.0]).unwrap())
            .unwrap();
        let mut t = Tape::new();
        let a = t.param(&store, id);
        let b = t.param(&store, id);
        assert_eq!(a, b);
        let p = t.mul(a, b).unwrap();
        let l = t.sum(p);
        t.backward(l, &mut store).unwrap();
        t.backward(l, &mut store).unwrap();
        assert_eq!(store.get(id).grad.data(), &[4.0, 8.0]);
    }

    #[test]
    fn fully_masked_softmax_row_is_error() {
        let mut t = Tape::<f64>::new();
        let v = t.constant(Mat::zeros(2, 2));
        assert!(t
            .softmax_rows(v, Some(vec![true, true, false, false]))
            .is_err());
    }

    #[test]
    fn nonscalar_backward_is_error() {
        let mut t = Tape::<f64>::new();
        let v = t.constant(Mat::zeros(2, 2));
        assert!(t.gradients(v).is_err());
    }
}
