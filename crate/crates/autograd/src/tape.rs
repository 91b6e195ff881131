use std::borrow::Cow;

use crate::error::{AutogradError, Result};
use crate::kernels;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Relu(Var),
    Sigmoid(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Gather { table: Var, rows: Vec<usize> },
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    BceWithLogits { logit: Var, target: F },
    Sum(Var),
}

#[derive(Debug)]
struct Node<'a, F: Scalar> {
    value: Cow<'a, [F]>,
    shape: Vec<usize>,
    op: Op<F>,
    requires_grad: bool,
}

/// Records one forward pass. Leaves may borrow parameter storage for `'a`.
///
/// The graph is single-use: after [`Tape::backward`] the tape still answers
/// value queries but refuses a second backward pass.
#[derive(Debug)]
pub struct Tape<'a, F: Scalar> {
    nodes: Vec<Node<'a, F>>,
    consumed: bool,
}

impl<F: Scalar> Default for Tape<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        Some((&n, rest)) => (rest.iter().product(), n),
        None => (1, 1),
    }
}

fn matrix(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() == 2 {
        Ok((shape[0], shape[1]))
    } else {
        Err(AutogradError::ShapeMismatch {
            op,
            lhs: shape.to_vec(),
            rhs: vec![],
        })
    }
}

impl<'a, F: Scalar> Tape<'a, F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<F>, shape: Vec<usize>, op: Op<F>, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            value: Cow::Owned(value),
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'a, F> {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Borrows `t` as a leaf; it takes part in backward iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &'a Tensor<F>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t.data()),
            shape: t.shape().to_vec(),
            op: Op::Leaf,
            requires_grad: t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    /// Owned leaf taking its `requires_grad` flag from `t`.
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        let rg = t.requires_grad();
        let shape = t.shape().to_vec();
        self.push(t.into_data(), shape, Op::Leaf, rg)
    }

    /// Owned leaf that never receives a gradient.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<F>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(AutogradError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(self.push(data, shape, Op::Leaf, false))
    }

    /// Copy of `x` cut off from the graph.
    pub fn detach(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let (value, shape) = (n.value.to_vec(), n.shape.clone());
        self.push(value, shape, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<F> {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("node shape is consistent")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix("matmul", self.shape(a))?;
        let (k2, n) = matrix("matmul", self.shape(b))?;
        if k != k2 {
            return Err(AutogradError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out = kernels::matmul(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, vec![m, n], Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(AutogradError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.rg(&[a, b]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::Add(a, b), rg))
    }

    /// `x[..., n] + row[n]`, the row broadcast over all leading positions.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, n) = rows_cols(self.shape(x));
        if self.shape(x).is_empty() || self.shape(row) != [n] {
            return Err(AutogradError::ShapeMismatch {
                op: "add_row",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(row).to_vec(),
            });
        }
        let r = self.value(row);
        let out = self
            .value(x)
            .chunks(n)
            .flat_map(|c| c.iter().zip(r).map(|(&a, &b)| a + b))
            .collect();
        let rg = self.rg(&[x, row]);
        let shape = self.shape(x).to_vec();
        Ok(self.push(out, shape, Op::AddRow(x, row), rg))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.rg(&[a, b]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: F) -> Var {
        let out = self.value(x).iter().map(|&v| v * s).collect();
        let rg = self.rg(&[x]);
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Scale(x, s), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(F::zero())).collect();
        let rg = self.rg(&[x]);
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| kernels::sigmoid(v)).collect();
        let rg = self.rg(&[x]);
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Sigmoid(x), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = matrix("transpose", self.shape(x))?;
        let out = kernels::transpose(self.value(x), m, n);
        let rg = self.rg(&[x]);
        Ok(self.push(out, vec![n, m], Op::Transpose(x), rg))
    }

    /// Concatenates 2-D inputs along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(AutogradError::Invalid("concat of zero tensors".into()));
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| matrix("concat", self.shape(p)))
            .collect::<Result<_>>()?;
        let mismatch = |i: usize| AutogradError::ShapeMismatch {
            op: "concat",
            lhs: self.shape(parts[0]).to_vec(),
            rhs: self.shape(parts[i]).to_vec(),
        };
        let rg = self.rg(parts);
        match axis {
            0 => {
                let cols = dims[0].1;
                if let Some(i) = dims.iter().position(|d| d.1 != cols) {
                    return Err(mismatch(i));
                }
                let rows = dims.iter().map(|d| d.0).sum();
                let mut out = Vec::with_capacity(rows * cols);
                for &p in parts {
                    out.extend_from_slice(self.value(p));
                }
                Ok(self.push(out, vec![rows, cols], Op::ConcatRows(parts.to_vec()), rg))
            }
            1 => {
                let rows = dims[0].0;
                if let Some(i) = dims.iter().position(|d| d.0 != rows) {
                    return Err(mismatch(i));
                }
                let cols: usize = dims.iter().map(|d| d.1).sum();
                let mut out = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for (&p, d) in parts.iter().zip(&dims) {
                        out.extend_from_slice(&self.value(p)[r * d.1..(r + 1) * d.1]);
                    }
                }
                Ok(self.push(out, vec![rows, cols], Op::ConcatCols(parts.to_vec()), rg))
            }
            _ => Err(AutogradError::Invalid(format!("concat axis {axis} on 2-D tensors"))),
        }
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = matrix("slice_cols", self.shape(x))?;
        if start + len > n {
            return Err(AutogradError::Invalid(format!(
                "column range {start}..{} out of {n}",
                start + len
            )));
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, vec![m, len], Op::SliceCols { x, start }, rg))
    }

    /// Embedding lookup: row `rows[i]` of `table[R, n]` becomes output row `i`.
    pub fn gather(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let (r, n) = matrix("gather", self.shape(table))?;
        let src = self.value(table);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &i in rows {
            if i >= r {
                return Err(AutogradError::IndexOutOfRange { index: i, rows: r });
            }
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            out,
            vec![rows.len(), n],
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// Softmax over the last axis restricted to positions where `mask` is true.
    ///
    /// `mask` has either one entry per element of `x` or one per last-axis
    /// position, in which case it applies to every row. Masked positions get
    /// exactly zero weight. A row with no valid position comes out all zero.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (rows, n) = rows_cols(self.shape(x));
        let numel = rows * n;
        if mask.len() != n && mask.len() != numel {
            return Err(AutogradError::ShapeMismatch {
                op: "masked_softmax",
                lhs: self.shape(x).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let src = self.value(x);
        let mut out = vec![F::zero(); numel];
        for r in 0..rows {
            let xr = &src[r * n..(r + 1) * n];
            let mr = if mask.len() == n {
                mask
            } else {
                &mask[r * n..(r + 1) * n]
            };
            let max = xr
                .iter()
                .zip(mr)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(F::neg_infinity(), F::max);
            if max == F::neg_infinity() {
                continue;
            }
            let yr = &mut out[r * n..(r + 1) * n];
            let mut total = F::zero();
            for ((y, &v), &m) in yr.iter_mut().zip(xr).zip(mr) {
                if m {
                    *y = (v - max).exp();
                    total = total + *y;
                }
            }
            yr.iter_mut().for_each(|y| *y = *y / total);
        }
        let rg = self.rg(&[x]);
        let shape = self.shape(x).to_vec();
        Ok(self.push(out, shape, Op::MaskedSoftmax(x), rg))
    }

    /// `(x − mean) / sqrt(var + eps) · gain + bias` over the last axis,
    /// with the biased (divide by n) variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: F) -> Result<Var> {
        let (rows, n) = rows_cols(self.shape(x));
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(AutogradError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gain).to_vec(),
            });
        }
        let src = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let nf = F::of_f64(n as f64);
        let mut xhat = vec![F::zero(); rows * n];
        let mut rstd = vec![F::zero(); rows];
        let mut out = vec![F::zero(); rows * n];
        for r in 0..rows {
            let xr = &src[r * n..(r + 1) * n];
            let mean = xr.iter().copied().sum::<F>() / nf;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
            let s = F::one() / (var + eps).sqrt();
            rstd[r] = s;
            for i in 0..n {
                let h = (xr[i] - mean) * s;
                xhat[r * n + i] = h;
                out[r * n + i] = h * g[i] + b[i];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            out,
            shape,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Binary cross entropy on a one-element logit, in log-sum-exp form.
    pub fn bce_with_logits(&mut self, logit: Var, target: F) -> Result<Var> {
        if self.value(logit).len() != 1 {
            return Err(AutogradError::NonScalarLoss(self.shape(logit).to_vec()));
        }
        if target != F::zero() && target != F::one() {
            return Err(AutogradError::Invalid(format!(
                "bce target must be 0 or 1, got {target}"
            )));
        }
        let z = self.value(logit)[0];
        let out = vec![kernels::bce_with_logits(z, target)];
        let rg = self.rg(&[logit]);
        Ok(self.push(out, vec![], Op::BceWithLogits { logit, target }, rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = vec![self.value(x).iter().copied().sum()];
        let rg = self.rg(&[x]);
        self.push(out, vec![], Op::Sum(x), rg)
    }

    /// `x · w + b` for `x[m,in]`, `w[in,out]`, `b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Returns the gradient of every node that requires one; leaves are the
    /// interesting entries. The tape cannot be differentiated again afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<F>> {
        if self.consumed {
            return Err(AutogradError::GraphConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(AutogradError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        if !self.requires_grad(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![F::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'a, F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        // Lazily zero-initialised accumulator for input `v`.
        fn slot<F: Scalar>(grads: &mut [Option<Vec<F>>], v: Var, len: usize) -> &mut [F] {
            grads[v.0].get_or_insert_with(|| vec![F::zero(); len])
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[1];
                if wants(*a) {
                    let ga = slot(grads, *a, m * k);
                    kernels::matmul_a_bt_acc(g, &nodes[b.0].value, ga, m, n, k);
                }
                if wants(*b) {
                    let gb = slot(grads, *b, k * n);
                    kernels::matmul_at_b_acc(&nodes[a.0].value, g, gb, m, k, n);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        let gv = slot(grads, v, g.len());
                        gv.iter_mut().zip(g).for_each(|(o, &x)| *o = *o + x);
                    }
                }
            }
            Op::AddRow(x, row) => {
                if wants(*x) {
                    let gx = slot(grads, *x, g.len());
                    gx.iter_mut().zip(g).for_each(|(o, &v)| *o = *o + v);
                }
                if wants(*row) {
                    let n = nodes[row.0].value.len();
                    let gr = slot(grads, *row, n);
                    for chunk in g.chunks(n) {
                        gr.iter_mut().zip(chunk).for_each(|(o, &v)| *o = *o + v);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if wants(v) {
                        let ov = &nodes[other.0].value;
                        let gv = slot(grads, v, g.len());
                        for i in 0..g.len() {
                            gv[i] = gv[i] + g[i] * ov[i];
                        }
                    }
                }
            }
            Op::Scale(x, s) => {
                if wants(*x) {
                    let gx = slot(grads, *x, g.len());
                    gx.iter_mut().zip(g).for_each(|(o, &v)| *o = *o + v * *s);
                }
            }
            Op::Relu(x) => {
                if wants(*x) {
                    let xv = &nodes[x.0].value;
                    let gx = slot(grads, *x, g.len());
                    for i in 0..g.len() {
                        if xv[i] > F::zero() {
                            gx[i] = gx[i] + g[i];
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if wants(*x) {
                    let y = &node.value;
                    let gx = slot(grads, *x, g.len());
                    for i in 0..g.len() {
                        gx[i] = gx[i] + g[i] * y[i] * (F::one() - y[i]);
                    }
                }
            }
            Op::Transpose(x) => {
                if wants(*x) {
                    let (m, n) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
                    // g is [n, m]
                    let gt = kernels::transpose(g, n, m);
                    let gx = slot(grads, *x, m * n);
                    gx.iter_mut().zip(&gt).for_each(|(o, &v)| *o = *o + v);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    if wants(p) {
                        let gp = slot(grads, p, len);
                        gp.iter_mut()
                            .zip(&g[off..off + len])
                            .for_each(|(o, &v)| *o = *o + v);
                    }
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.shape[1];
                let rows = node.shape[0];
                let mut col = 0;
                for &p in parts {
                    let w = nodes[p.0].shape[1];
                    if wants(p) {
                        let gp = slot(grads, p, rows * w);
                        for r in 0..rows {
                            for c in 0..w {
                                gp[r * w + c] = gp[r * w + c] + g[r * total + col + c];
                            }
                        }
                    }
                    col += w;
                }
            }
            Op::SliceCols { x, start } => {
                if wants(*x) {
                    let (m, n) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
                    let len = node.shape[1];
                    let gx = slot(grads, *x, m * n);
                    for r in 0..m {
                        for c in 0..len {
                            gx[r * n + start + c] = gx[r * n + start + c] + g[r * len + c];
                        }
                    }
                }
            }
            Op::Gather { table, rows } => {
                if wants(*table) {
                    let n = nodes[table.0].shape[1];
                    let gt = slot(grads, *table, nodes[table.0].value.len());
                    for (i, &r) in rows.iter().enumerate() {
                        for c in 0..n {
                            gt[r * n + c] = gt[r * n + c] + g[i * n + c];
                        }
                    }
                }
            }
            Op::MaskedSoftmax(x) => {
                if wants(*x) {
                    let (rows, n) = rows_cols(&node.shape);
                    let y = &node.value;
                    let gx = slot(grads, *x, rows * n);
                    for r in 0..rows {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for i in 0..n {
                            gx[r * n + i] = gx[r * n + i] + yr[i] * (gr[i] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (rows, n) = rows_cols(&node.shape);
                if wants(*gain) {
                    let gg = slot(grads, *gain, n);
                    for r in 0..rows {
                        for i in 0..n {
                            gg[i] = gg[i] + g[r * n + i] * xhat[r * n + i];
                        }
                    }
                }
                if wants(*bias) {
                    let gb = slot(grads, *bias, n);
                    for r in 0..rows {
                        for i in 0..n {
                            gb[i] = gb[i] + g[r * n + i];
                        }
                    }
                }
                if wants(*x) {
                    let gain_v = &nodes[gain.0].value;
                    let nf = F::of_f64(n as f64);
                    let gx = slot(grads, *x, rows * n);
                    let mut dxhat = vec![F::zero(); n];
                    for r in 0..rows {
                        let h = &xhat[r * n..(r + 1) * n];
                        for i in 0..n {
                            dxhat[i] = g[r * n + i] * gain_v[i];
                        }
                        let s1: F = dxhat.iter().copied().sum();
                        let s2: F = dxhat.iter().zip(h).map(|(&a, &b)| a * b).sum();
                        let k = rstd[r] / nf;
                        for i in 0..n {
                            gx[r * n + i] = gx[r * n + i] + k * (nf * dxhat[i] - s1 - h[i] * s2);
                        }
                    }
                }
            }
            Op::BceWithLogits { logit, target } => {
                if wants(*logit) {
                    let z = nodes[logit.0].value[0];
                    let gz = slot(grads, *logit, 1);
                    gz[0] = gz[0] + g[0] * (kernels::sigmoid(z) - *target);
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    let len = nodes[x.0].value.len();
                    let gx = slot(grads, *x, len);
                    gx.iter_mut().for_each(|o| *o = *o + g[0]);
                }
            }
        }
    }
}

/// Result of [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of the loss w.r.t. `v`, or `None` if `v` does not require one
    /// or does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
