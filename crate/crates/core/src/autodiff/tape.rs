//! Tape-based reverse-mode differentiation over dense tensors.

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Storage<'p, F> {
    Owned(Vec<F>),
    Borrowed(&'p [F]),
}

impl<F> Storage<'_, F> {
    fn as_slice(&self) -> &[F] {
        match self {
            Storage::Owned(v) => v,
            Storage::Borrowed(s) => s,
        }
    }
}

enum Op<F> {
    Leaf,
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, F),
    MatMul(usize, usize),
    TransposeLast2(usize),
    SliceLast {
        a: usize,
        start: usize,
        width: usize,
    },
    ConcatLast(Vec<usize>),
    EmbeddingLookup {
        table: usize,
        ids: Vec<usize>,
    },
    LayerNorm {
        a: usize,
        gamma: usize,
        beta: usize,
        // per row: (mean, inverse std)
        aux: Vec<(F, F)>,
    },
    Relu(usize),
    Dropout {
        a: usize,
        mask: Vec<F>,
    },
    SoftmaxLast(usize),
    MaskedFill {
        a: usize,
        keep: Vec<bool>,
    },
    CrossEntropySum {
        logits: usize,
        targets: Vec<usize>,
        ignore: usize,
        probs: Vec<F>,
    },
    SumAll(usize),
}

struct Node<'p, F> {
    shape: Vec<usize>,
    values: Storage<'p, F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients per tape node after a backward pass.
pub struct TapeGrads<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> TapeGrads<F> {
    pub fn of(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Recorded forward graph for one pass. Consumed by [`Tape::backward`];
/// a second backward on the same tape is an error.
pub struct Tape<'p, F: Scalar> {
    nodes: Vec<Node<'p, F>>,
    spent: bool,
}

impl<'p, F: Scalar> Default for Tape<'p, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, F: Scalar> Tape<'p, F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            spent: false,
        }
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            values: Storage::Owned(values),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    pub fn value(&self, v: Var) -> &[F] {
        self.nodes[v.0].values.as_slice()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar_value(&self, v: Var) -> F {
        self.value(v)[0]
    }

    /// Bind an external tensor as a leaf without copying its values.
    pub fn leaf(&mut self, tensor: &'p Tensor<F>) -> Var {
        self.nodes.push(Node {
            shape: tensor.shape().to_vec(),
            values: Storage::Borrowed(tensor.values()),
            op: Op::Leaf,
            needs_grad: tensor.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    /// Owned non-differentiable input values.
    pub fn input(&mut self, shape: &[usize], values: Vec<F>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape {
                op: "input",
                lhs: shape.to_vec(),
                rhs: vec![values.len()],
            });
        }
        Ok(self.push(shape.to_vec(), values, Op::Leaf, false))
    }

    /// Owned differentiable leaf (used by tests probing gradients directly).
    pub fn differentiable(&mut self, shape: &[usize], values: Vec<F>) -> Result<Var> {
        let v = self.input(shape, values)?;
        self.nodes[v.0].needs_grad = true;
        Ok(v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("add", a, b));
        }
        let values = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Add(a.0, b.0), needs))
    }

    /// Add a vector of width `n` to every row of an `[..., n]` tensor.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(bias).last().unwrap_or(&0);
        if self.shape(bias).len() != 1 || self.shape(a).last() != Some(&n) {
            return Err(self.shape_err("add_row", a, bias));
        }
        let bias_vals = self.value(bias);
        let values: Vec<F> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bias_vals[i % n])
            .collect();
        let needs = self.needs(a.0) || self.needs(bias.0);
        Ok(self.push(
            self.nodes[a.0].shape.clone(),
            values,
            Op::AddRow(a.0, bias.0),
            needs,
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let values = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Mul(a.0, b.0), needs))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let values = self.value(a).iter().map(|&x| x * c).collect();
        let needs = self.needs(a.0);
        self.push(self.nodes[a.0].shape.clone(), values, Op::Scale(a.0, c), needs)
    }

    /// Row-major `[m, k] x [k, n]` product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.shape_err("matmul", a, b));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut values = vec![F::zero(); m * n];
        F::gemm(m, k, n, F::one(), self.value(a), self.value(b), &mut values);
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(vec![m, n], values, Op::MatMul(a.0, b.0), needs))
    }

    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a);
        if sa.len() != 2 {
            return Err(self.shape_err("transpose", a, a));
        }
        let (m, n) = (sa[0], sa[1]);
        let src = self.value(a);
        let mut values = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                values[j * m + i] = src[i * n + j];
            }
        }
        let needs = self.needs(a.0);
        Ok(self.push(vec![n, m], values, Op::TransposeLast2(a.0), needs))
    }

    /// Columns `start..start + width` of a 2-d tensor.
    pub fn slice_last(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let sa = self.shape(a);
        if sa.len() != 2 || start + width > sa[1] {
            return Err(Error::Shape {
                op: "slice_last",
                lhs: sa.to_vec(),
                rhs: vec![start, width],
            });
        }
        let (rows, cols) = (sa[0], sa[1]);
        let src = self.value(a);
        let mut values = Vec::with_capacity(rows * width);
        for r in 0..rows {
            values.extend_from_slice(&src[r * cols + start..r * cols + start + width]);
        }
        let needs = self.needs(a.0);
        Ok(self.push(
            vec![rows, width],
            values,
            Op::SliceLast { a: a.0, start, width },
            needs,
        ))
    }

    /// Concatenate 2-d tensors with equal row counts along the last dim.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Graph("concat_last of zero tensors".into()));
        }
        let rows = self.shape(parts[0])[0];
        let mut total = 0usize;
        for &p in parts {
            let sp = self.shape(p);
            if sp.len() != 2 || sp[0] != rows {
                return Err(self.shape_err("concat_last", parts[0], p));
            }
            total += sp[1];
        }
        let mut values = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let cols = self.shape(p)[1];
                let src = self.value(p);
                values.extend_from_slice(&src[r * cols..(r + 1) * cols]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p.0));
        Ok(self.push(
            vec![rows, total],
            values,
            Op::ConcatLast(parts.iter().map(|p| p.0).collect()),
            needs,
        ))
    }

    /// Gather rows of a `[v, h]` table by token id, producing `[ids.len(), h]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(self.shape_err("embedding", table, table));
        }
        let (v, h) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::Graph(format!(
                "embedding id {bad} out of range for table of {v}"
            )));
        }
        let src = self.value(table);
        let mut values = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            values.extend_from_slice(&src[id * h..(id + 1) * h]);
        }
        let needs = self.needs(table.0);
        Ok(self.push(
            vec![ids.len(), h],
            values,
            Op::EmbeddingLookup {
                table: table.0,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Normalize each last-dim row to zero mean and unit variance, then
    /// apply the affine (gamma, beta).
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var) -> Result<Var> {
        let h = *self.shape(a).last().unwrap_or(&0);
        if h == 0 || self.shape(gamma) != [h] || self.shape(beta) != [h] {
            return Err(self.shape_err("layer_norm", a, gamma));
        }
        let eps = crate::scalar::real::<F>(1e-5);
        let rows = self.value(a).len() / h;
        let src = self.value(a).to_vec();
        let g = self.value(gamma).to_vec();
        let b = self.value(beta).to_vec();
        let mut values = vec![F::zero(); src.len()];
        let mut aux = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &src[r * h..(r + 1) * h];
            let mean = row.iter().copied().sum::<F>() / crate::scalar::real::<F>(h as f64);
            let var = row
                .iter()
                .map(|&x| (x - mean) * (x - mean))
                .sum::<F>()
                / crate::scalar::real::<F>(h as f64);
            let inv_std = F::one() / (var + eps).sqrt();
            aux.push((mean, inv_std));
            for j in 0..h {
                values[r * h + j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        let needs = self.needs(a.0) || self.needs(gamma.0) || self.needs(beta.0);
        Ok(self.push(
            self.nodes[a.0].shape.clone(),
            values,
            Op::LayerNorm {
                a: a.0,
                gamma: gamma.0,
                beta: beta.0,
                aux,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let values = self
            .value(a)
            .iter()
            .map(|&x| if x > F::zero() { x } else { F::zero() })
            .collect();
        let needs = self.needs(a.0);
        self.push(self.nodes[a.0].shape.clone(), values, Op::Relu(a.0), needs)
    }

    /// Train-time inverted dropout; identity in eval mode or at p = 0.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, train: bool, rng: &mut R) -> Var {
        if !train || p <= 0.0 {
            return a;
        }
        let keep = crate::scalar::real::<F>(1.0 / (1.0 - p));
        let mask: Vec<F> = (0..self.value(a).len())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    F::zero()
                } else {
                    keep
                }
            })
            .collect();
        let values = self
            .value(a)
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let needs = self.needs(a.0);
        self.push(
            self.nodes[a.0].shape.clone(),
            values,
            Op::Dropout { a: a.0, mask },
            needs,
        )
    }

    /// Softmax over the last dimension. A row that is entirely -inf (fully
    /// masked) is defined to output zeros.
    pub fn softmax_last(&mut self, a: Var) -> Var {
        let h = *self.shape(a).last().unwrap_or(&1);
        let src = self.value(a);
        let mut values = vec![F::zero(); src.len()];
        if h > 0 {
            for r in 0..src.len() / h {
                let row = &src[r * h..(r + 1) * h];
                let max = row.iter().copied().fold(F::neg_infinity(), F::max);
                if max == F::neg_infinity() {
                    continue; // fully masked row stays zero
                }
                let mut sum = F::zero();
                for j in 0..h {
                    let e = (row[j] - max).exp();
                    values[r * h + j] = e;
                    sum += e;
                }
                for j in 0..h {
                    values[r * h + j] = values[r * h + j] / sum;
                }
            }
        }
        let needs = self.needs(a.0);
        self.push(self.nodes[a.0].shape.clone(), values, Op::SoftmaxLast(a.0), needs)
    }

    /// Replace positions where `keep` is false by -inf (pre-softmax mask).
    pub fn masked_fill(&mut self, a: Var, keep: &[bool]) -> Result<Var> {
        if keep.len() != self.value(a).len() {
            return Err(Error::Shape {
                op: "masked_fill",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: vec![keep.len()],
            });
        }
        let values = self
            .value(a)
            .iter()
            .zip(keep)
            .map(|(&x, &k)| if k { x } else { F::neg_infinity() })
            .collect();
        let needs = self.needs(a.0);
        Ok(self.push(
            self.nodes[a.0].shape.clone(),
            values,
            Op::MaskedFill {
                a: a.0,
                keep: keep.to_vec(),
            },
            needs,
        ))
    }

    /// Sum over non-ignored positions of -log softmax(logits)[target],
    /// returning the scalar sum and the number of counted positions.
    pub fn cross_entropy_sum(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore: usize,
    ) -> Result<(Var, usize)> {
        let sl = self.shape(logits);
        if sl.len() != 2 || sl[0] != targets.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: sl.to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let (t, v) = (sl[0], sl[1]);
        if let Some(&bad) = targets.iter().find(|&&id| id != ignore && id >= v) {
            return Err(Error::Graph(format!(
                "target id {bad} out of range for vocabulary of {v}"
            )));
        }
        let src = self.value(logits);
        let mut probs = vec![F::zero(); src.len()];
        let mut total = F::zero();
        let mut count = 0usize;
        for r in 0..t {
            let row = &src[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for j in 0..v {
                let e = (row[j] - max).exp();
                probs[r * v + j] = e;
                sum += e;
            }
            for j in 0..v {
                probs[r * v + j] = probs[r * v + j] / sum;
            }
            if targets[r] != ignore {
                let log_z = sum.ln() + max;
                total += log_z - row[targets[r]];
                count += 1;
            }
        }
        let needs = self.needs(logits.0);
        let var = self.push(
            vec![],
            vec![total],
            Op::CrossEntropySum {
                logits: logits.0,
                targets: targets.to_vec(),
                ignore,
                probs,
            },
            needs,
        );
        Ok((var, count))
    }

    /// Mean cross-entropy over non-ignored positions.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore: usize) -> Result<Var> {
        let (sum, count) = self.cross_entropy_sum(logits, targets, ignore)?;
        if count == 0 {
            return Err(Error::Graph(
                "cross_entropy with every position ignored".into(),
            ));
        }
        Ok(self.scale(sum, crate::scalar::real::<F>(1.0 / count as f64)))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total = self.value(a).iter().copied().sum();
        let needs = self.needs(a.0);
        self.push(vec![], vec![total], Op::SumAll(a.0), needs)
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            lhs: self.nodes[a.0].shape.clone(),
            rhs: self.nodes[b.0].shape.clone(),
        }
    }

    /// Populate gradients of every grad-requiring node reachable from the
    /// scalar `loss`. The tape is spent afterwards; calling backward twice
    /// is an error.
    pub fn backward(&mut self, loss: Var) -> Result<TapeGrads<F>> {
        if self.spent {
            return Err(Error::Graph(
                "backward called twice on the same tape".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Graph(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.spent = true;

        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![F::one()]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(up) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &up, &mut grads);
            grads[id] = Some(up);
        }

        Ok(TapeGrads { grads })
    }

    fn accumulate(grads: &mut [Option<Vec<F>>], id: usize, len: usize, f: impl FnOnce(&mut [F])) {
        let slot = grads[id].get_or_insert_with(|| vec![F::zero(); len]);
        f(slot);
    }

    fn propagate(&self, id: usize, up: &[F], grads: &mut Vec<Option<Vec<F>>>) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &p in [a, b] {
                    if self.needs(p) {
                        Self::accumulate(grads, p, up.len(), |g| {
                            for (gi, &u) in g.iter_mut().zip(up) {
                                *gi += u;
                            }
                        });
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if self.needs(*a) {
                    Self::accumulate(grads, *a, up.len(), |g| {
                        for (gi, &u) in g.iter_mut().zip(up) {
                            *gi += u;
                        }
                    });
                }
                if self.needs(*bias) {
                    let n = self.nodes[*bias].values.as_slice().len();
                    Self::accumulate(grads, *bias, n, |g| {
                        for (i, &u) in up.iter().enumerate() {
                            g[i % n] += u;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let av = self.nodes[*a].values.as_slice();
                let bv = self.nodes[*b].values.as_slice();
                if self.needs(*a) {
                    Self::accumulate(grads, *a, up.len(), |g| {
                        for i in 0..up.len() {
                            g[i] += up[i] * bv[i];
                        }
                    });
                }
                if self.needs(*b) {
                    Self::accumulate(grads, *b, up.len(), |g| {
                        for i in 0..up.len() {
                            g[i] += up[i] * av[i];
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                if self.needs(*a) {
                    Self::accumulate(grads, *a, up.len(), |g| {
                        for (gi, &u) in g.iter_mut().zip(up) {
                            *gi += u * *c;
                        }
                    });
                }
            }
            Op::MatMul(a, b) => {
                let sa = &self.nodes[*a].shape;
                let sb = &self.nodes[*b].shape;
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let av = self.nodes[*a].values.as_slice();
                let bv = self.nodes[*b].values.as_slice();
                if self.needs(*a) {
                    // dA = dC * B^T
                    let mut bt = vec![F::zero(); k * n];
                    for i in 0..k {
                        for j in 0..n {
                            bt[j * k + i] = bv[i * n + j];
                        }
                    }
                    Self::accumulate(grads, *a, m * k, |g| {
                        F::gemm(m, n, k, F::one(), up, &bt, g);
                    });
                }
                if self.needs(*b) {
                    // dB = A^T * dC
                    let mut at = vec![F::zero(); m * k];
                    for i in 0..m {
                        for j in 0..k {
                            at[j * m + i] = av[i * k + j];
                        }
                    }
                    Self::accumulate(grads, *b, k * n, |g| {
                        F::gemm(k, m, n, F::one(), &at, up, g);
                    });
                }
            }
            Op::TransposeLast2(a) => {
                if self.needs(*a) {
                    // node shape is [n, m]; parent is [m, n]
                    let (n, m) = (node.shape[0], node.shape[1]);
                    Self::accumulate(grads, *a, m * n, |g| {
                        for i in 0..n {
                            for j in 0..m {
                                g[j * n + i] += up[i * m + j];
                            }
                        }
                    });
                }
            }
            Op::SliceLast { a, start, width } => {
                if self.needs(*a) {
                    let cols = self.nodes[*a].shape[1];
                    let rows = self.nodes[*a].shape[0];
                    Self::accumulate(grads, *a, rows * cols, |g| {
                        for r in 0..rows {
                            for j in 0..*width {
                                g[r * cols + start + j] += up[r * width + j];
                            }
                        }
                    });
                }
            }
            Op::ConcatLast(parts) => {
                let rows = node.shape[0];
                let total = node.shape[1];
                let mut offset = 0usize;
                for &p in parts {
                    let cols = self.nodes[p].shape[1];
                    if self.needs(p) {
                        Self::accumulate(grads, p, rows * cols, |g| {
                            for r in 0..rows {
                                for j in 0..cols {
                                    g[r * cols + j] += up[r * total + offset + j];
                                }
                            }
                        });
                    }
                    offset += cols;
                }
            }
            Op::EmbeddingLookup { table, ids } => {
                if self.needs(*table) {
                    let h = node.shape[1];
                    let len = self.nodes[*table].values.as_slice().len();
                    Self::accumulate(grads, *table, len, |g| {
                        for (r, &id) in ids.iter().enumerate() {
                            for j in 0..h {
                                g[id * h + j] += up[r * h + j];
                            }
                        }
                    });
                }
            }
            Op::LayerNorm { a, gamma, beta, aux } => {
                let h = *node.shape.last().expect("layer_norm has a last dim");
                let rows = aux.len();
                let av = self.nodes[*a].values.as_slice();
                let gv = self.nodes[*gamma].values.as_slice();
                let inv_h = crate::scalar::real::<F>(1.0 / h as f64);
                if self.needs(*beta) {
                    Self::accumulate(grads, *beta, h, |g| {
                        for r in 0..rows {
                            for j in 0..h {
                                g[j] += up[r * h + j];
                            }
                        }
                    });
                }
                if self.needs(*gamma) {
                    Self::accumulate(grads, *gamma, h, |g| {
                        for r in 0..rows {
                            let (mean, inv_std) = aux[r];
                            for j in 0..h {
                                let xhat = (av[r * h + j] - mean) * inv_std;
                                g[j] += up[r * h + j] * xhat;
                            }
                        }
                    });
                }
                if self.needs(*a) {
                    Self::accumulate(grads, *a, rows * h, |g| {
                        for r in 0..rows {
                            let (mean, inv_std) = aux[r];
                            let mut sum_dxhat = F::zero();
                            let mut sum_dxhat_xhat = F::zero();
                            let mut dxhat = vec![F::zero(); h];
                            for j in 0..h {
                                let xhat = (av[r * h + j] - mean) * inv_std;
                                dxhat[j] = up[r * h + j] * gv[j];
                                sum_dxhat += dxhat[j];
                                sum_dxhat_xhat += dxhat[j] * xhat;
                            }
                            for j in 0..h {
                                let xhat = (av[r * h + j] - mean) * inv_std;
                                g[r * h + j] += inv_std
                                    * (dxhat[j]
                                        - inv_h * sum_dxhat
                                        - xhat * inv_h * sum_dxhat_xhat);
                            }
                        }
                    });
                }
            }
            Op::Relu(a) => {
                if self.needs(*a) {
                    let av = self.nodes[*a].values.as_slice();
                    Self::accumulate(grads, *a, up.len(), |g| {
                        for i in 0..up.len() {
                            if av[i] > F::zero() {
                                g[i] += up[i];
                            }
                        }
                    });
                }
            }
            Op::Dropout { a, mask } => {
                if self.needs(*a) {
                    Self::accumulate(grads, *a, up.len(), |g| {
                        for i in 0..up.len() {
                            g[i] += up[i] * mask[i];
                        }
                    });
                }
            }
            Op::SoftmaxLast(a) => {
                if self.needs(*a) {
                    let h = *node.shape.last().unwrap_or(&1);
                    let y = node.values.as_slice();
                    Self::accumulate(grads, *a, up.len(), |g| {
                        for r in 0..up.len() / h {
                            let row_y = &y[r * h..(r + 1) * h];
                            let row_up = &up[r * h..(r + 1) * h];
                            let dot = row_y
                                .iter()
                                .zip(row_up)
                                .map(|(&yy, &uu)| yy * uu)
                                .sum::<F>();
                            for j in 0..h {
                                g[r * h + j] += row_y[j] * (row_up[j] - dot);
                            }
                        }
                    });
                }
            }
            Op::MaskedFill { a, keep } => {
                if self.needs(*a) {
                    Self::accumulate(grads, *a, up.len(), |g| {
                        for i in 0..up.len() {
                            if keep[i] {
                                g[i] += up[i];
                            }
                        }
                    });
                }
            }
            Op::CrossEntropySum {
                logits,
                targets,
                ignore,
                probs,
            } => {
                if self.needs(*logits) {
                    let v = self.nodes[*logits].shape[1];
                    let scale = up[0];
                    Self::accumulate(grads, *logits, probs.len(), |g| {
                        for (r, &target) in targets.iter().enumerate() {
                            if target == *ignore {
                                continue;
                            }
                            for j in 0..v {
                                let indicator = if j == target { F::one() } else { F::zero() };
                                g[r * v + j] += scale * (probs[r * v + j] - indicator);
                            }
                        }
                    });
                }
            }
            Op::SumAll(a) => {
                if self.needs(*a) {
                    let len = self.nodes[*a].values.as_slice().len();
                    Self::accumulate(grads, *a, len, |g| {
                        for gi in g.iter_mut() {
                            *gi += up[0];
                        }
                    });
                }
            }
        }
    }
}
