//! Minimal reverse-mode differentiation over dense matrices.
//!
//! Values are computed eagerly when a node is recorded, so intermediate
//! results (for example the embeddings fed to the transport solver) can be
//! read mid-forward. `backward` walks the tape in reverse creation order.

use crate::error::{ClotError, Result};
use crate::numeric::{softmax_in_place, DenseMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate backward bugs, used to prove the gradient checker catches them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// ReLU passes gradient through where the input was negative.
    LeakyReluBackward,
    /// Softmax backward drops the `−s·(g·s)` correction term.
    SoftmaxSkipsCorrection,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    /// `a · bᵀ`
    MatMulT(usize, usize),
    Add(usize, usize),
    /// `a + 1·bᵀ` with `b` a row vector
    AddRow(usize, usize),
    /// `a ⊙ (1·bᵀ)` with `b` a row vector
    MulRow(usize, usize),
    /// elementwise product with a constant (dropout masks)
    MulConst(usize, DenseMatrix),
    Scale(usize, f64),
    /// `a · s` with `s` a 1×1 variable
    ScaleVar(usize, usize),
    /// `a + s` with `s` a 1×1 variable
    AddScalarVar(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    SoftmaxRows(usize),
    /// normalization without affine; stores the per-row inverse std
    LayerNorm(usize, Vec<f64>),
    /// `a_i / ‖a_i‖`, zero rows map to zero; stores the row norms
    RowNormalize(usize, Vec<f64>),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    /// `−Σ t ⊙ log_softmax(a)` as a 1×1 value; stores the softmax
    SoftmaxCrossEntropy(usize, DenseMatrix, DenseMatrix),
    /// `Σ a ⊙ w` as a 1×1 value
    WeightedSum(usize, DenseMatrix),
}

struct Node {
    value: DenseMatrix,
    op: Op,
}

pub const LAYER_NORM_EPS: f64 = 1e-9;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: Option<Fault>) -> Self {
        Self { nodes: Vec::new(), fault }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DenseMatrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a.0, b.0)))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(v, Op::MatMulT(a.0, b.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a.0, b.0)))
    }

    fn check_row_vector(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (_, c) = self.value(a).shape();
        if self.value(b).shape() != (1, c) {
            return Err(ClotError::Dimension(format!(
                "{op}: expected a 1x{c} row vector, got {:?}",
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_row_vector(a, b, "add_row")?;
        let bias = self.value(b).row(0).to_vec();
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            v.row_mut(r).iter_mut().zip(&bias).for_each(|(x, &y)| *x += y);
        }
        Ok(self.push(v, Op::AddRow(a.0, b.0)))
    }

    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_row_vector(a, b, "mul_row")?;
        let gain = self.value(b).row(0).to_vec();
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            v.row_mut(r).iter_mut().zip(&gain).for_each(|(x, &y)| *x *= y);
        }
        Ok(self.push(v, Op::MulRow(a.0, b.0)))
    }

    pub fn mul_const(&mut self, a: Var, c: DenseMatrix) -> Result<Var> {
        let v = self.value(a).hadamard(&c)?;
        Ok(self.push(v, Op::MulConst(a.0, c)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a.0, s))
    }

    fn scalar(&self, s: Var) -> Result<f64> {
        let m = self.value(s);
        if m.shape() != (1, 1) {
            return Err(ClotError::Dimension(format!("expected a 1x1 scalar, got {:?}", m.shape())));
        }
        Ok(m[(0, 0)])
    }

    pub fn scale_var(&mut self, a: Var, s: Var) -> Result<Var> {
        let k = self.scalar(s)?;
        let v = self.value(a).scale(k);
        Ok(self.push(v, Op::ScaleVar(a.0, s.0)))
    }

    pub fn add_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        let k = self.scalar(s)?;
        let v = self.value(a).map(|x| x + k);
        Ok(self.push(v, Op::AddScalarVar(a.0, s.0)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a.0))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_mut(r));
        }
        self.push(v, Op::SoftmaxRows(a.0))
    }

    /// Per-row standardization to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.cols() as f64;
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        self.push(out, Op::LayerNorm(a.0, inv_std))
    }

    pub fn row_normalize(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let norms: Vec<f64> = x.row_iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let mut out = x.clone();
        for (r, &n) in norms.iter().enumerate() {
            let inv = if n > 0.0 { 1.0 / n } else { 0.0 };
            out.row_mut(r).iter_mut().for_each(|v| *v *= inv);
        }
        self.push(out, Op::RowNormalize(a.0, norms))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(ClotError::Dimension(format!(
                "slice_cols: columns {start}..{} of a {}-column matrix",
                start + len,
                x.cols()
            )));
        }
        let v = x.slice_cols(start, len);
        Ok(self.push(v, Op::SliceCols(a.0, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(ClotError::Dimension("concat_cols: row counts differ".into()));
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut v = DenseMatrix::zeros(rows, total);
        let mut offset = 0;
        for p in parts {
            let m = self.value(*p);
            for r in 0..rows {
                v.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
            }
            offset += m.cols();
        }
        Ok(self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect())))
    }

    /// `−Σ_ij t_ij · log softmax(logits)_ij` with constant targets.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &DenseMatrix) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(ClotError::Dimension(format!(
                "cross entropy: logits {:?} vs targets {:?}",
                z.shape(),
                targets.shape()
            )));
        }
        let mut probs = z.clone();
        let mut loss = 0.0;
        for r in 0..z.rows() {
            let lse = crate::numeric::logsumexp(z.row(r));
            for (j, p) in probs.row_mut(r).iter_mut().enumerate() {
                let log_p = z[(r, j)] - lse;
                loss -= targets[(r, j)] * log_p;
                *p = log_p.exp();
            }
        }
        let v = DenseMatrix::filled(1, 1, loss);
        Ok(self.push(v, Op::SoftmaxCrossEntropy(logits.0, targets.clone(), probs)))
    }

    pub fn weighted_sum(&mut self, a: Var, weights: &DenseMatrix) -> Result<Var> {
        let s = self.value(a).frobenius_dot(weights)?;
        Ok(self.push(DenseMatrix::filled(1, 1, s), Op::WeightedSum(a.0, weights.clone())))
    }

    /// Gradients of the 1×1 node `output` with respect to every node.
    ///
    /// Entries are `None` for nodes that do not influence the output.
    pub fn backward(&self, output: Var) -> Result<Vec<Option<DenseMatrix>>> {
        if self.value(output).shape() != (1, 1) {
            return Err(ClotError::State(format!(
                "backward needs a scalar output, got {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(DenseMatrix::filled(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(&self.nodes[*b].value)?;
                    let gb = self.nodes[*a].value.t_matmul(&g)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::MatMulT(a, b) => {
                    let ga = g.matmul(&self.nodes[*b].value)?;
                    let gb = g.t_matmul(&self.nodes[*a].value)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.clone())?;
                }
                Op::AddRow(a, b) => {
                    let gb = DenseMatrix::from_vec(1, g.cols(), g.col_sums())?;
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::MulRow(a, b) => {
                    let gain = self.nodes[*b].value.row(0);
                    let x = &self.nodes[*a].value;
                    let mut ga = g.clone();
                    let mut gb = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (c, v) in ga.row_mut(r).iter_mut().enumerate() {
                            gb[c] += *v * x[(r, c)];
                            *v *= gain[c];
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, DenseMatrix::from_vec(1, gb.len(), gb)?)?;
                }
                Op::MulConst(a, c) => accumulate(&mut grads, *a, g.hadamard(c)?)?,
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s))?,
                Op::ScaleVar(a, s) => {
                    let k = self.nodes[*s].value[(0, 0)];
                    let gs = g.frobenius_dot(&self.nodes[*a].value)?;
                    accumulate(&mut grads, *a, g.scale(k))?;
                    accumulate(&mut grads, *s, DenseMatrix::filled(1, 1, gs))?;
                }
                Op::AddScalarVar(a, s) => {
                    let gs = g.sum();
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *s, DenseMatrix::filled(1, 1, gs))?;
                }
                Op::Relu(a) => {
                    let x = &self.nodes[*a].value;
                    let leak = self.fault == Some(Fault::LeakyReluBackward);
                    let ga = g.zip_with(x, "relu", |gv, xv| if xv > 0.0 || leak { gv } else { 0.0 })?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_with(&node.value, "sigmoid", |gv, s| gv * s * (1.0 - s))?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::SoftmaxRows(a) => {
                    let s = &node.value;
                    let skip = self.fault == Some(Fault::SoftmaxSkipsCorrection);
                    let mut ga = DenseMatrix::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        let inner: f64 = if skip {
                            0.0
                        } else {
                            g.row(r).iter().zip(s.row(r)).map(|(x, y)| x * y).sum()
                        };
                        for (c, out) in ga.row_mut(r).iter_mut().enumerate() {
                            *out = s[(r, c)] * (g[(r, c)] - inner);
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::LayerNorm(a, inv_std) => {
                    let y = &node.value;
                    let c = y.cols() as f64;
                    let mut ga = DenseMatrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let gr = g.row(r);
                        let yr = y.row(r);
                        let mean_g = gr.iter().sum::<f64>() / c;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c;
                        for (k, out) in ga.row_mut(r).iter_mut().enumerate() {
                            *out = inv_std[r] * (gr[k] - mean_g - yr[k] * mean_gy);
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::RowNormalize(a, norms) => {
                    let u = &node.value;
                    let mut ga = DenseMatrix::zeros(u.rows(), u.cols());
                    for r in 0..u.rows() {
                        if norms[r] == 0.0 {
                            continue;
                        }
                        let gu: f64 = g.row(r).iter().zip(u.row(r)).map(|(x, y)| x * y).sum();
                        for (k, out) in ga.row_mut(r).iter_mut().enumerate() {
                            *out = (g[(r, k)] - gu * u[(r, k)]) / norms[r];
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::SliceCols(a, start) => {
                    let src = &self.nodes[*a].value;
                    let mut ga = DenseMatrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.cols();
                        accumulate(&mut grads, p, g.slice_cols(offset, w))?;
                        offset += w;
                    }
                }
                Op::SoftmaxCrossEntropy(a, targets, probs) => {
                    let scale = g[(0, 0)];
                    let mut ga = DenseMatrix::zeros(probs.rows(), probs.cols());
                    for r in 0..probs.rows() {
                        let mass: f64 = targets.row(r).iter().sum();
                        for (c, out) in ga.row_mut(r).iter_mut().enumerate() {
                            *out = scale * (mass * probs[(r, c)] - targets[(r, c)]);
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::WeightedSum(a, w) => accumulate(&mut grads, *a, w.scale(g[(0, 0)]))?,
            }
            grads[idx] = Some(g);
        }
        Ok(grads)
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], idx: usize, g: DenseMatrix) -> Result<()> {
    match &mut grads[idx] {
        Some(existing) => existing.add_scaled(&g, 1.0),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
