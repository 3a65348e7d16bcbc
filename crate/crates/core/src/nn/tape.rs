//! Reverse-mode differentiation over matrix-valued nodes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::matrix::Matrix;
use super::params::{ParamGrads, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<'a> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SpMM(&'a SparseMatrix, Var),
    SegmentMean {
        x: Var,
        labels: &'a [usize],
        counts: &'a [usize],
    },
    MeanRows(Var),
    MeanCols(Var),
    Gather {
        x: Var,
        index: &'a [usize],
    },
    SegmentSoftmax {
        x: Var,
        segments: &'a [usize],
        n_segments: usize,
    },
    SegmentSum {
        x: Var,
        segments: &'a [usize],
    },
    BroadcastColMul(Var, Var),
    ConcatCols(Var, Var),
    BceWithLogits {
        x: Var,
        label: f64,
    },
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node<'a> {
    value: Matrix,
    op: Op<'a>,
}

/// Records operations for one forward pass. Sparse operators and index
/// arrays are borrowed for the lifetime of the tape.
#[derive(Debug, Clone, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

fn shape_err(what: &str, a: [usize; 2], b: [usize; 2]) -> Error {
    Error::ShapeMismatch(format!("{what}: {}x{} vs {}x{}", a[0], a[1], b[0], b[1]))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op<'a>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let v = self.value(a).matmul(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != [1, sa[1]] {
            return Err(shape_err("add_row", sa, sr));
        }
        let mut v = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..sa[0] {
            for (x, b) in v.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(what, sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Matrix::from_vec(sa[0], sa[1], data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// `op · a` for a sparse `op`.
    pub fn spmm(&mut self, op: &'a SparseMatrix, a: Var) -> Result<Var> {
        let sa = self.shape(a);
        if op.n_cols() != sa[0] {
            return Err(shape_err("spmm", [op.n_rows(), op.n_cols()], sa));
        }
        let v = Matrix::from_vec(op.n_rows(), sa[1], op.mul_dense(self.value(a).data(), sa[1]));
        Ok(self.push(v, Op::SpMM(op, a)))
    }

    /// Row `s` of the output is the mean of the rows `i` with `labels[i] == s`;
    /// `counts[s]` must be that number of rows. Empty segments give zero rows.
    pub fn segment_mean(&mut self, x: Var, labels: &'a [usize], counts: &'a [usize]) -> Result<Var> {
        let sx = self.shape(x);
        if labels.len() != sx[0] {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                sx[0]
            )));
        }
        let mut seen = vec![0usize; counts.len()];
        for &l in labels {
            if l >= counts.len() {
                return Err(Error::ShapeMismatch(format!(
                    "segment {l} outside {} segments",
                    counts.len()
                )));
            }
            seen[l] += 1;
        }
        if seen != counts {
            return Err(Error::ShapeMismatch("segment counts disagree with labels".into()));
        }
        let mut v = Matrix::zeros(counts.len(), sx[1]);
        let xv = self.value(x);
        for (i, &l) in labels.iter().enumerate() {
            let w = 1.0 / counts[l] as f64;
            for (d, s) in v.row_mut(l).iter_mut().zip(xv.row(i)) {
                *d += w * s;
            }
        }
        Ok(self.push(v, Op::SegmentMean { x, labels, counts }))
    }

    /// Column means as a `1 × c` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let [r, c] = self.shape(a);
        if r == 0 {
            return Err(Error::Empty("mean over zero rows"));
        }
        let mut v = Matrix::zeros(1, c);
        let av = self.value(a);
        for i in 0..r {
            for (d, s) in v.data_mut().iter_mut().zip(av.row(i)) {
                *d += s;
            }
        }
        v.scale_assign(1.0 / r as f64);
        Ok(self.push(v, Op::MeanRows(a)))
    }

    /// Row means as an `r × 1` column.
    pub fn mean_cols(&mut self, a: Var) -> Result<Var> {
        let [r, c] = self.shape(a);
        if c == 0 {
            return Err(Error::Empty("mean over zero columns"));
        }
        let av = self.value(a);
        let data = (0..r).map(|i| av.row(i).iter().sum::<f64>() / c as f64).collect();
        Ok(self.push(Matrix::from_vec(r, 1, data), Op::MeanCols(a)))
    }

    /// Output row `e` is row `index[e]` of `x`.
    pub fn gather(&mut self, x: Var, index: &'a [usize]) -> Result<Var> {
        let [r, c] = self.shape(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(Error::ShapeMismatch(format!("gather index {bad} outside {r} rows")));
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            data.extend_from_slice(xv.row(i));
        }
        Ok(self.push(Matrix::from_vec(index.len(), c, data), Op::Gather { x, index }))
    }

    /// Softmax over the rows sharing a segment, independently per column.
    pub fn segment_softmax(&mut self, x: Var, segments: &'a [usize], n_segments: usize) -> Result<Var> {
        let [r, c] = self.shape(x);
        check_segments(segments, r, n_segments)?;
        let xv = self.value(x);
        let mut max = Matrix::filled(n_segments, c, f64::NEG_INFINITY);
        for (e, &s) in segments.iter().enumerate() {
            for (m, &v) in max.row_mut(s).iter_mut().zip(xv.row(e)) {
                *m = m.max(v);
            }
        }
        let mut out = Matrix::zeros(r, c);
        let mut denom = Matrix::zeros(n_segments, c);
        for (e, &s) in segments.iter().enumerate() {
            for j in 0..c {
                let ex = libm::exp(xv.get(e, j) - max.get(s, j));
                out.set(e, j, ex);
                denom.set(s, j, denom.get(s, j) + ex);
            }
        }
        for (e, &s) in segments.iter().enumerate() {
            for j in 0..c {
                out.set(e, j, out.get(e, j) / denom.get(s, j));
            }
        }
        Ok(self.push(
            out,
            Op::SegmentSoftmax {
                x,
                segments,
                n_segments,
            },
        ))
    }

    /// Sums rows into `n_segments` output rows.
    pub fn segment_sum(&mut self, x: Var, segments: &'a [usize], n_segments: usize) -> Result<Var> {
        let [r, c] = self.shape(x);
        check_segments(segments, r, n_segments)?;
        let xv = self.value(x);
        let mut out = Matrix::zeros(n_segments, c);
        for (e, &s) in segments.iter().enumerate() {
            for (d, v) in out.row_mut(s).iter_mut().zip(xv.row(e)) {
                *d += v;
            }
        }
        Ok(self.push(out, Op::SegmentSum { x, segments }))
    }

    /// Scales row `i` of `b` by the scalar `a[i, 0]`.
    pub fn broadcast_col_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != [sb[0], 1] {
            return Err(shape_err("broadcast_col_mul", sa, sb));
        }
        let mut v = self.value(b).clone();
        let av = self.value(a).data().to_vec();
        for (i, s) in av.iter().enumerate() {
            v.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
        Ok(self.push(v, Op::BroadcastColMul(a, b)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[0] != sb[0] {
            return Err(shape_err("concat_cols", sa, sb));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(sa[0] * (sa[1] + sb[1]));
        for i in 0..sa[0] {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        Ok(self.push(Matrix::from_vec(sa[0], sa[1] + sb[1], data), Op::ConcatCols(a, b)))
    }

    /// Binary cross-entropy of a `1 × 1` logit against `label ∈ {0, 1}`.
    pub fn bce_with_logits(&mut self, x: Var, label: f64) -> Result<Var> {
        let sx = self.shape(x);
        if sx != [1, 1] {
            return Err(shape_err("bce_with_logits", sx, [1, 1]));
        }
        let z = self.value(x).get(0, 0);
        let loss = z.max(0.0) - z * label + libm::log1p(libm::exp(-z.abs()));
        Ok(self.push(Matrix::scalar(loss), Op::BceWithLogits { x, label }))
    }

    /// Sum of all entries as a `1 × 1` value.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Matrix::scalar(s), Op::Sum(a))
    }

    /// Reverse pass from a `1 × 1` output with seed gradient 1.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.shape(output) != [1, 1] {
            return Err(shape_err("backward output", self.shape(output), [1, 1]));
        }
        self.backward_with(output, Matrix::scalar(1.0))
    }

    /// Reverse pass from `output` with an explicit seed gradient.
    pub fn backward_with(&self, output: Var, seed: Matrix) -> Result<Gradients> {
        if seed.shape() != self.shape(output) {
            return Err(shape_err("backward seed", seed.shape(), self.shape(output)));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);
        let mut params: Vec<(ParamId, Matrix)> = Vec::new();
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => params.push((*id, g.clone())),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_transpose_rhs(self.value(*b));
                    let gb = self.value(*a).transpose_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, s) in gr.data_mut().iter_mut().zip(g.row(i)) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let ga = hadamard(&g, self.value(*b));
                    let gb = hadamard(&g, self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.map(|x| x * s)),
                Op::Relu(a) => {
                    let mask = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(mask.data())
                        .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, Matrix::from_vec(g.rows(), g.cols(), data));
                }
                Op::SpMM(op, a) => {
                    let data = op.transpose_mul_dense(g.data(), g.cols());
                    accumulate(&mut grads, *a, Matrix::from_vec(op.n_cols(), g.cols(), data));
                }
                Op::SegmentMean { x, labels, counts } => {
                    let mut gx = Matrix::zeros(labels.len(), g.cols());
                    for (i, &l) in labels.iter().enumerate() {
                        let w = 1.0 / counts[l] as f64;
                        for (d, s) in gx.row_mut(i).iter_mut().zip(g.row(l)) {
                            *d = w * s;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanRows(a) => {
                    let r = self.shape(*a)[0];
                    let w = 1.0 / r as f64;
                    let mut ga = Matrix::zeros(r, g.cols());
                    for i in 0..r {
                        for (d, s) in ga.row_mut(i).iter_mut().zip(g.data()) {
                            *d = w * s;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::MeanCols(a) => {
                    let [r, c] = self.shape(*a);
                    let w = 1.0 / c as f64;
                    let mut ga = Matrix::zeros(r, c);
                    for i in 0..r {
                        let gi = g.get(i, 0) * w;
                        ga.row_mut(i).iter_mut().for_each(|d| *d = gi);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Gather { x, index } => {
                    let mut gx = Matrix::zeros(self.shape(*x)[0], g.cols());
                    for (e, &i) in index.iter().enumerate() {
                        for (d, s) in gx.row_mut(i).iter_mut().zip(g.row(e)) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SegmentSoftmax {
                    x,
                    segments,
                    n_segments,
                } => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut dot = Matrix::zeros(*n_segments, c);
                    for (e, &s) in segments.iter().enumerate() {
                        for j in 0..c {
                            dot.set(s, j, dot.get(s, j) + y.get(e, j) * g.get(e, j));
                        }
                    }
                    let mut gx = Matrix::zeros(y.rows(), c);
                    for (e, &s) in segments.iter().enumerate() {
                        for j in 0..c {
                            gx.set(e, j, y.get(e, j) * (g.get(e, j) - dot.get(s, j)));
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SegmentSum { x, segments, .. } => {
                    let mut gx = Matrix::zeros(segments.len(), g.cols());
                    for (e, &s) in segments.iter().enumerate() {
                        gx.row_mut(e).copy_from_slice(g.row(s));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::BroadcastColMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = Matrix::zeros(av.rows(), 1);
                    let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                    for i in 0..bv.rows() {
                        let s = av.get(i, 0);
                        let mut acc = 0.0;
                        for ((d, &gv), &bx) in gb.row_mut(i).iter_mut().zip(g.row(i)).zip(bv.row(i)) {
                            *d = s * gv;
                            acc += gv * bx;
                        }
                        ga.set(i, 0, acc);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::ConcatCols(a, b) => {
                    let (ca, cb) = (self.shape(*a)[1], self.shape(*b)[1]);
                    let mut ga = Matrix::zeros(g.rows(), ca);
                    let mut gb = Matrix::zeros(g.rows(), cb);
                    for i in 0..g.rows() {
                        ga.row_mut(i).copy_from_slice(&g.row(i)[..ca]);
                        gb.row_mut(i).copy_from_slice(&g.row(i)[ca..]);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::BceWithLogits { x, label } => {
                    let z = self.value(*x).get(0, 0);
                    accumulate(&mut grads, *x, Matrix::scalar(g.get(0, 0) * (sigmoid(z) - label)));
                }
                Op::Sum(a) => {
                    let [r, c] = self.shape(*a);
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g.get(0, 0)));
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { nodes: grads, params })
    }
}

fn check_segments(segments: &[usize], rows: usize, n_segments: usize) -> Result<()> {
    if segments.len() != rows {
        return Err(Error::ShapeMismatch(format!(
            "{} segment ids for {rows} rows",
            segments.len()
        )));
    }
    if let Some(&bad) = segments.iter().find(|&&s| s >= n_segments) {
        return Err(Error::ShapeMismatch(format!("segment {bad} outside {n_segments}")));
    }
    Ok(())
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Result of a reverse pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    params: Vec<(ParamId, Matrix)>,
}

impl Gradients {
    /// Gradient with respect to a recorded node, if it influenced the output.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients aligned with `store`, zero for parameters not on the tape.
    pub fn param_grads(&self, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(store);
        for (id, g) in &self.params {
            out.add_to(*id, g);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_values() {
        let mut t = Tape::new();
        let z = t.constant(Matrix::scalar(0.0));
        let l = t.bce_with_logits(z, 1.0).unwrap();
        assert!((t.value(l).get(0, 0) - core::f64::consts::LN_2).abs() < 1e-15);
        let g = t.backward(l).unwrap();
        assert!((g.wrt(z).unwrap().get(0, 0) + 0.5).abs() < 1e-15);

        let big = t.constant(Matrix::scalar(800.0));
        let l = t.bce_with_logits(big, 1.0).unwrap();
        assert_eq!(t.value(l).get(0, 0), 0.0);
        let neg = t.constant(Matrix::scalar(-800.0));
        let l = t.bce_with_logits(neg, 1.0).unwrap();
        assert!((t.value(l).get(0, 0) - 800.0).abs() < 1e-9);
    }

    #[test]
    fn segment_softmax_sums_to_one() {
        let seg = [0, 1, 0, 1, 1];
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[
            &[1.0, -3.0],
            &[0.5, 2.0],
            &[4.0, 0.0],
            &[-1.0, 7.0],
            &[2.0, 2.0],
        ]));
        let y = t.segment_softmax(x, &seg, 2).unwrap();
        for s in 0..2 {
            for c in 0..2 {
                let total: f64 = (0..5).filter(|&e| seg[e] == s).map(|e| t.value(y).get(e, c)).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shared_input_gradients_accumulate() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[&[3.0]]));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().get(0, 0), 6.0);
    }

    #[test]
    fn segment_mean_checks_counts() {
        let labels = [0, 0, 1];
        let bad = [1, 2];
        let mut t = Tape::new();
        let x = t.constant(Matrix::zeros(3, 1));
        assert!(t.segment_mean(x, &labels, &bad).is_err());
    }
}
