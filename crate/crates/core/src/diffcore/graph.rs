//! Define-by-run reverse-mode differentiation.
//!
//! Nodes are appended to a tape as operations execute, so the tape order is
//! already a topological order. `backward` walks it in reverse, visiting only
//! nodes reachable from the root.

use crate::error::{Error, Result};

use super::matrix::{gemm, Matrix, Operand};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    Relu(Var),
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        normed: Matrix,
        inv_std: Vec<f64>,
    },
    Sin(Var),
    Cos(Var),
    Interleave(Var, Var),
    GatherRows(Var, Vec<usize>),
    PairwiseL2(Var, Var),
    MaxNormalize {
        input: Var,
        argmax: usize,
        max: f64,
    },
    NormalizeRows(Var, Vec<f64>),
    GatherEntries(Var, Vec<(usize, usize)>),
    Sum(Var),
    Mean(Var),
    L1Loss(Var, Matrix),
    L2Distance(Var, Var),
    RowL2(Var, Var),
    Hinge(Var, f64),
}

impl Op {
    fn for_each_parent(&self, mut f: impl FnMut(Var)) {
        match self {
            Op::Leaf => {}
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Interleave(a, b)
            | Op::PairwiseL2(a, b)
            | Op::L2Distance(a, b)
            | Op::RowL2(a, b) => {
                f(*a);
                f(*b);
            }
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::GatherRows(a, _)
            | Op::GatherEntries(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::L1Loss(a, _)
            | Op::Hinge(a, _) => f(*a),
            Op::MaxNormalize { input, .. } => f(*input),
            Op::NormalizeRows(a, _) => f(*a),
            Op::ConcatCols(parts) => parts.iter().copied().for_each(f),
            Op::LayerNorm { input, gain, bias, .. } => {
                f(*input);
                f(*gain);
                f(*bias);
            }
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// A computation tape holding node values and gradient buffers.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.leaf(Matrix::scalar(value))
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of `v`; zeros if nothing has flowed into it.
    pub fn grad(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.nodes[v.0].value.shape();
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_same("add", va, vb)?;
        let mut value = va.clone();
        value.add_assign(vb);
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: va.shape(),
                rhs: vr.shape(),
            });
        }
        let mut value = va.clone();
        for r in 0..value.rows() {
            for (x, b) in value.row_mut(r).iter_mut().zip(vr.data()) {
                *x += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_same("sub", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let value = Matrix::from_vec(va.rows(), va.cols(), data)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_same("mul", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Matrix::from_vec(va.rows(), va.cols(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of zero parts".into()))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for p in parts {
            let v = self.value(*p);
            if v.rows() != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.value(*first).shape(),
                    rhs: v.shape(),
                });
            }
            cols += v.cols();
        }
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let v = self.value(*p);
            for r in 0..rows {
                value.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
            }
            offset += v.cols();
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(value, Op::Relu(a))
    }

    /// Row-wise layer normalization followed by a `1×n` gain and bias.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let va = self.value(a);
        let n = va.cols();
        for p in [gain, bias] {
            let vp = self.value(p);
            if vp.shape() != (1, n) {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: va.shape(),
                    rhs: vp.shape(),
                });
            }
        }
        let (vg, vb) = (self.value(gain), self.value(bias));
        let mut normed = Matrix::zeros(va.rows(), n);
        let mut value = Matrix::zeros(va.rows(), n);
        let mut inv_std = Vec::with_capacity(va.rows());
        for r in 0..va.rows() {
            let row = va.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            let nr = normed.row_mut(r);
            for (o, x) in nr.iter_mut().zip(row) {
                *o = (x - mean) * is;
            }
            let nr = normed.row(r);
            for (c, o) in value.row_mut(r).iter_mut().enumerate() {
                *o = nr[c] * vg.data()[c] + vb.data()[c];
            }
        }
        Ok(self.push(
            value,
            Op::LayerNorm {
                input: a,
                gain,
                bias,
                normed,
                inv_std,
            },
        ))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sin);
        self.push(value, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::cos);
        self.push(value, Op::Cos(a))
    }

    pub fn sin_cos(&mut self, a: Var) -> (Var, Var) {
        (self.sin(a), self.cos(a))
    }

    /// Interleaves the columns of two equally shaped matrices:
    /// `[a₀, b₀, a₁, b₁, …]`.
    pub fn interleave_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_same("interleave_cols", va, vb)?;
        let mut value = Matrix::zeros(va.rows(), 2 * va.cols());
        for r in 0..va.rows() {
            let (ra, rb) = (va.row(r), vb.row(r));
            for (c, pair) in value.row_mut(r).chunks_exact_mut(2).enumerate() {
                pair[0] = ra[c];
                pair[1] = rb[c];
            }
        }
        Ok(self.push(value, Op::Interleave(a, b)))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let va = self.value(a);
        let mut value = Matrix::zeros(indices.len(), va.cols());
        for (o, &i) in indices.iter().enumerate() {
            if i >= va.rows() {
                return Err(Error::Index {
                    what: "gather_rows",
                    index: i,
                    len: va.rows(),
                });
            }
            value.row_mut(o).copy_from_slice(va.row(i));
        }
        Ok(self.push(value, Op::GatherRows(a, indices.to_vec())))
    }

    /// Euclidean distance between every row of `a` and every row of `b`.
    pub fn pairwise_l2(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(Error::Dimension {
                op: "pairwise_l2",
                lhs: va.shape(),
                rhs: vb.shape(),
            });
        }
        let value = pairwise_distances(va, vb);
        Ok(self.push(value, Op::PairwiseL2(a, b)))
    }

    /// Divides every entry by the maximum entry; leaves the matrix unchanged
    /// when that maximum is not positive.
    pub fn max_normalize(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (argmax, max) =
            va.data().iter().copied().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |best, (i, x)| {
                    if x > best.1 {
                        (i, x)
                    } else {
                        best
                    }
                },
            );
        let value = if max > 0.0 { va.map(|x| x / max) } else { va.clone() };
        self.push(value, Op::MaxNormalize { input: a, argmax, max })
    }

    /// Scales every row to unit Euclidean norm; all-zero rows pass through.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut value = va.clone();
        let mut norms = Vec::with_capacity(va.rows());
        for r in 0..va.rows() {
            let n = va.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                value.row_mut(r).iter_mut().for_each(|x| *x /= n);
            }
            norms.push(n);
        }
        self.push(value, Op::NormalizeRows(a, norms))
    }

    /// Collects the listed `(row, col)` entries into a `k×1` column.
    pub fn gather_entries(&mut self, a: Var, entries: &[(usize, usize)]) -> Result<Var> {
        let va = self.value(a);
        let mut data = Vec::with_capacity(entries.len());
        for &(r, c) in entries {
            if r >= va.rows() || c >= va.cols() {
                return Err(Error::Index {
                    what: "gather_entries",
                    index: r * va.cols() + c,
                    len: va.len(),
                });
            }
            data.push(va.get(r, c));
        }
        let value = Matrix::from_vec(entries.len(), 1, data)?;
        Ok(self.push(value, Op::GatherEntries(a, entries.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(Error::Contract("mean of an empty matrix".into()));
        }
        let value = Matrix::scalar(va.sum() / va.len() as f64);
        Ok(self.push(value, Op::Mean(a)))
    }

    /// Mean absolute error against a constant target.
    pub fn l1_loss(&mut self, a: Var, target: &Matrix) -> Result<Var> {
        let va = self.value(a);
        check_same("l1_loss", va, target)?;
        if va.is_empty() {
            return Err(Error::Contract("l1_loss of an empty matrix".into()));
        }
        let total: f64 = va.data().iter().zip(target.data()).map(|(x, t)| (x - t).abs()).sum();
        let value = Matrix::scalar(total / va.len() as f64);
        Ok(self.push(value, Op::L1Loss(a, target.clone())))
    }

    /// Euclidean (Frobenius) distance between two equally shaped matrices.
    pub fn l2_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_same("l2_distance", va, vb)?;
        let d = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        Ok(self.push(Matrix::scalar(d), Op::L2Distance(a, b)))
    }

    /// Euclidean distance between corresponding rows, as an `n×1` column.
    pub fn row_l2(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_same("row_l2", va, vb)?;
        let data = (0..va.rows()).map(|r| row_distance(va.row(r), vb.row(r))).collect();
        let value = Matrix::from_vec(va.rows(), 1, data)?;
        Ok(self.push(value, Op::RowL2(a, b)))
    }

    /// `max(0, x + margin)` elementwise.
    pub fn hinge(&mut self, a: Var, margin: f64) -> Var {
        let value = self.value(a).map(|x| (x + margin).max(0.0));
        self.push(value, Op::Hinge(a, margin))
    }

    /// Accumulates d(root)/d(node) into every node reachable from `root`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.value(root).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!("backward root must be scalar, got {shape:?}")));
        }
        let mut reachable = vec![false; root.0 + 1];
        reachable[root.0] = true;
        for i in (0..=root.0).rev() {
            if reachable[i] {
                self.nodes[i].op.for_each_parent(|p| reachable[p.0] = true);
            }
        }
        // Seed into a scratch buffer so that accumulated gradients from
        // earlier calls are preserved and only the new contributions flow.
        let mut pending: Vec<Option<Matrix>> = (0..=root.0).map(|_| None).collect();
        pending[root.0] = Some(Matrix::scalar(1.0));
        for i in (0..=root.0).rev() {
            if !reachable[i] {
                continue;
            }
            let Some(g) = pending[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut pending);
            match &mut self.grads[i] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Matrix, pending: &mut [Option<Matrix>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                gemm(Operand::plain(g), Operand::t(vb), buf(pending, nodes, *a), 1.0);
                gemm(Operand::t(va), Operand::plain(g), buf(pending, nodes, *b), 1.0);
            }
            Op::Add(a, b) => {
                buf(pending, nodes, *a).add_assign(g);
                buf(pending, nodes, *b).add_assign(g);
            }
            Op::AddRow(a, row) => {
                buf(pending, nodes, *a).add_assign(g);
                let gr = buf(pending, nodes, *row);
                for r in 0..g.rows() {
                    for (o, x) in gr.data_mut().iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
            }
            Op::Sub(a, b) => {
                buf(pending, nodes, *a).add_assign(g);
                let gb = buf(pending, nodes, *b);
                for (o, x) in gb.data_mut().iter_mut().zip(g.data()) {
                    *o -= x;
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let ga = buf(pending, nodes, *a);
                for ((o, x), y) in ga.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                    *o += x * y;
                }
                let gb = buf(pending, nodes, *b);
                for ((o, x), y) in gb.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                    *o += x * y;
                }
            }
            Op::Scale(a, s) => {
                let ga = buf(pending, nodes, *a);
                for (o, x) in ga.data_mut().iter_mut().zip(g.data()) {
                    *o += s * x;
                }
            }
            Op::Transpose(a) => {
                buf(pending, nodes, *a).add_assign(&g.transpose());
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let gp = buf(pending, nodes, *p);
                    let w = gp.cols();
                    for r in 0..g.rows() {
                        for (o, x) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                            *o += x;
                        }
                    }
                    offset += w;
                }
            }
            Op::Relu(a) => {
                let va = &nodes[a.0].value;
                let ga = buf(pending, nodes, *a);
                for ((o, x), v) in ga.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                    if *v > 0.0 {
                        *o += x;
                    }
                }
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let vg = &nodes[gain.0].value;
                let n = normed.cols();
                {
                    let gb = buf(pending, nodes, *bias);
                    for r in 0..g.rows() {
                        for (o, x) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
                {
                    let gg = buf(pending, nodes, *gain);
                    for r in 0..g.rows() {
                        for ((o, x), h) in gg.data_mut().iter_mut().zip(g.row(r)).zip(normed.row(r)) {
                            *o += x * h;
                        }
                    }
                }
                let gx = buf(pending, nodes, *input);
                let mut dxhat = vec![0.0; n];
                for (r, inv) in inv_std.iter().enumerate() {
                    let gr = g.row(r);
                    let hr = normed.row(r);
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for c in 0..n {
                        dxhat[c] = gr[c] * vg.data()[c];
                        s1 += dxhat[c];
                        s2 += dxhat[c] * hr[c];
                    }
                    let k = inv / n as f64;
                    for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                        *o += k * (n as f64 * dxhat[c] - s1 - hr[c] * s2);
                    }
                }
            }
            Op::Sin(a) => {
                let va = &nodes[a.0].value;
                let ga = buf(pending, nodes, *a);
                for ((o, x), v) in ga.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                    *o += x * v.cos();
                }
            }
            Op::Cos(a) => {
                let va = &nodes[a.0].value;
                let ga = buf(pending, nodes, *a);
                for ((o, x), v) in ga.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                    *o -= x * v.sin();
                }
            }
            Op::Interleave(a, b) => {
                let ga = buf(pending, nodes, *a);
                for r in 0..g.rows() {
                    for (o, pair) in ga.row_mut(r).iter_mut().zip(g.row(r).chunks_exact(2)) {
                        *o += pair[0];
                    }
                }
                let gb = buf(pending, nodes, *b);
                for r in 0..g.rows() {
                    for (o, pair) in gb.row_mut(r).iter_mut().zip(g.row(r).chunks_exact(2)) {
                        *o += pair[1];
                    }
                }
            }
            Op::GatherRows(a, indices) => {
                let ga = buf(pending, nodes, *a);
                for (o, &src) in indices.iter().enumerate() {
                    for (x, y) in ga.row_mut(src).iter_mut().zip(g.row(o)) {
                        *x += y;
                    }
                }
            }
            Op::PairwiseL2(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let d = &node.value;
                let dim = va.cols();
                let mut ga_buf = Matrix::zeros(va.rows(), dim);
                let mut gb_buf = Matrix::zeros(vb.rows(), dim);
                for u in 0..va.rows() {
                    for v in 0..vb.rows() {
                        let dist = d.get(u, v);
                        let gv = g.get(u, v);
                        if dist == 0.0 || gv == 0.0 {
                            continue;
                        }
                        let k = gv / dist;
                        let (ra, rb) = (va.row(u), vb.row(v));
                        let gar = ga_buf.row_mut(u);
                        for c in 0..dim {
                            gar[c] += k * (ra[c] - rb[c]);
                        }
                        let gbr = gb_buf.row_mut(v);
                        for c in 0..dim {
                            gbr[c] -= k * (ra[c] - rb[c]);
                        }
                    }
                }
                buf(pending, nodes, *a).add_assign(&ga_buf);
                buf(pending, nodes, *b).add_assign(&gb_buf);
            }
            Op::MaxNormalize { input, argmax, max } => {
                let ga = buf(pending, nodes, *input);
                if *max > 0.0 {
                    let va = &nodes[input.0].value;
                    let mut dmax = 0.0;
                    for ((o, x), v) in ga.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *o += x / max;
                        dmax -= x * v / (max * max);
                    }
                    ga.data_mut()[*argmax] += dmax;
                } else {
                    ga.add_assign(g);
                }
            }
            Op::GatherEntries(a, entries) => {
                let ga = buf(pending, nodes, *a);
                for (k, &(r, c)) in entries.iter().enumerate() {
                    let cols = ga.cols();
                    ga.data_mut()[r * cols + c] += g.data()[k];
                }
            }
            Op::Sum(a) => {
                let s = g.item();
                buf(pending, nodes, *a).data_mut().iter_mut().for_each(|o| *o += s);
            }
            Op::Mean(a) => {
                let ga = buf(pending, nodes, *a);
                let s = g.item() / ga.len() as f64;
                ga.data_mut().iter_mut().for_each(|o| *o += s);
            }
            Op::L1Loss(a, target) => {
                let va = &nodes[a.0].value;
                let ga = buf(pending, nodes, *a);
                let s = g.item() / va.len() as f64;
                for ((o, x), t) in ga.data_mut().iter_mut().zip(va.data()).zip(target.data()) {
                    let diff = x - t;
                    if diff > 0.0 {
                        *o += s;
                    } else if diff < 0.0 {
                        *o -= s;
                    }
                }
            }
            Op::L2Distance(a, b) => {
                let dist = node.value.item();
                if dist > 0.0 {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let k = g.item() / dist;
                    let ga = buf(pending, nodes, *a);
                    for ((o, x), y) in ga.data_mut().iter_mut().zip(va.data()).zip(vb.data()) {
                        *o += k * (x - y);
                    }
                    let gb = buf(pending, nodes, *b);
                    for ((o, x), y) in gb.data_mut().iter_mut().zip(va.data()).zip(vb.data()) {
                        *o -= k * (x - y);
                    }
                }
            }
            Op::NormalizeRows(a, norms) => {
                let y = &node.value;
                let ga = buf(pending, nodes, *a);
                for (r, &n) in norms.iter().enumerate() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let out = ga.row_mut(r);
                    if n > 0.0 {
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for ((o, y), g) in out.iter_mut().zip(yr).zip(gr) {
                            *o += (g - y * dot) / n;
                        }
                    } else {
                        out.iter_mut().zip(gr).for_each(|(o, g)| *o += g);
                    }
                }
            }
            Op::RowL2(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let d = &node.value;
                let mut ga_buf = Matrix::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    let dist = d.data()[r];
                    if dist == 0.0 {
                        continue;
                    }
                    let k = g.data()[r] / dist;
                    for ((o, x), y) in ga_buf.row_mut(r).iter_mut().zip(va.row(r)).zip(vb.row(r)) {
                        *o += k * (x - y);
                    }
                }
                buf(pending, nodes, *a).add_assign(&ga_buf);
                let gb = buf(pending, nodes, *b);
                for (o, x) in gb.data_mut().iter_mut().zip(ga_buf.data()) {
                    *o -= x;
                }
            }
            Op::Hinge(a, margin) => {
                let va = &nodes[a.0].value;
                let ga = buf(pending, nodes, *a);
                for ((o, x), v) in ga.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                    if v + margin > 0.0 {
                        *o += x;
                    }
                }
            }
        }
    }
}

fn buf<'p>(pending: &'p mut [Option<Matrix>], nodes: &[Node], v: Var) -> &'p mut Matrix {
    let (r, c) = nodes[v.0].value.shape();
    pending[v.0].get_or_insert_with(|| Matrix::zeros(r, c))
}

#[inline]
pub(crate) fn row_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Plain (non-differentiable) Euclidean distance matrix between row sets.
pub fn pairwise_distances(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for u in 0..a.rows() {
        for v in 0..b.rows() {
            out.set(u, v, row_distance(a.row(u), b.row(v)));
        }
    }
    out
}
