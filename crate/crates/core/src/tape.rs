//! Reverse-mode differentiation over matrix primitives.
//!
//! A `Tape` records every primitive (matmul, add, elementwise maps, masked
//! softmax, concat, reductions) in creation order, which is already a
//! topological order of the computation graph. `backward` seeds the scalar
//! loss with 1 and walks the record once in reverse, accumulating
//! vector-Jacobian products into every node that can reach a parameter.
//! Forward values are plain `Matrix` data, so replaying the recorded inputs
//! reproduces every output bit-exactly.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// A · B
    MatMul(ValueId, ValueId),
    /// A · Bᵀ
    MatMulNT(ValueId, ValueId),
    /// Aᵀ · B
    MatMulTN(ValueId, ValueId),
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    /// matrix + row vector broadcast over rows
    AddRow(ValueId, ValueId),
    Scale(ValueId, f64),
    Hadamard(ValueId, ValueId),
    Relu(ValueId),
    Sigmoid(ValueId),
    ConcatCols(ValueId, ValueId),
    SliceCols(ValueId, usize, usize),
    GatherRows(ValueId, Vec<usize>),
    /// place rows of the input at the given indices of an otherwise-zero
    /// matrix with `usize` total rows
    ScatterRows(ValueId, Vec<usize>, usize),
    /// rows of A scaled by the entries of a column vector s
    ScaleRows(ValueId, ValueId),
    /// per-row inner product of two equally-shaped matrices -> n×1
    RowwiseDot(ValueId, ValueId),
    /// row softmax restricted to unmasked entries; masked entries are 0
    MaskedSoftmaxRows(ValueId, Vec<bool>),
    /// Σ_k c_k · M_k with a 1×K coefficient vector
    LinComb(Vec<ValueId>, ValueId),
    MeanAll(ValueId),
    /// mean over rows of -Σ_c t_c ln softmax(logits)_c; targets are constants
    SoftmaxCrossEntropy(ValueId, ValueId),
    /// mean over entries of the elementwise binary cross-entropy on sigmoids
    SigmoidBce(ValueId, ValueId),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Recorded forward computation, differentiable once per `backward` call.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<ValueId>,
}

/// Gradients per recorded parameter, keyed by the parameter's handle.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    is_param: Vec<bool>,
}

impl Gradients {
    pub fn wrt(&self, p: ValueId) -> Result<&Matrix> {
        if p.0 >= self.is_param.len() || !self.is_param[p.0] {
            return Err(Error::UnknownHandle(format!(
                "value {} is not a recorded parameter",
                p.0
            )));
        }
        self.grads[p.0]
            .as_ref()
            .ok_or_else(|| Error::UnknownHandle(format!("no gradient stored for {}", p.0)))
    }
}

fn softmax_rows_masked(logits: &Matrix, mask: &[bool]) -> Matrix {
    let (n, m) = (logits.rows(), logits.cols());
    let mut out = Matrix::zeros(n, m);
    for i in 0..n {
        let mut max = f64::NEG_INFINITY;
        for j in 0..m {
            if mask[i * m + j] {
                max = max.max(logits.get(i, j));
            }
        }
        if max == f64::NEG_INFINITY {
            continue; // fully masked row stays zero
        }
        let mut denom = 0.0;
        for j in 0..m {
            if mask[i * m + j] {
                denom += (logits.get(i, j) - max).exp();
            }
        }
        for j in 0..m {
            if mask[i * m + j] {
                out.set(i, j, (logits.get(i, j) - max).exp() / denom);
            }
        }
    }
    out
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    let mask = vec![true; logits.rows() * logits.cols()];
    softmax_rows_masked(logits, &mask)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> ValueId {
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        id
    }

    fn ng(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Record a trainable parameter leaf.
    pub fn param(&mut self, value: Matrix) -> ValueId {
        let id = self.push(value, Op::Leaf, true);
        self.params.push(id);
        id
    }

    /// Record a constant leaf (inputs, graph operators, masks).
    pub fn constant(&mut self, value: Matrix) -> ValueId {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn matmul_nt(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMulNT(a, b), ng))
    }

    pub fn matmul_tn(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).matmul_tn(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMulTN(a, b), ng))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).sub(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn add_row(&mut self, a: ValueId, row: ValueId) -> Result<ValueId> {
        let (m, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != m.cols() {
            return Err(Error::Shape(format!(
                "add_row: {}x{} + {}x{}",
                m.rows(),
                m.cols(),
                r.rows(),
                r.cols()
            )));
        }
        let mut value = m.clone();
        for i in 0..value.rows() {
            for j in 0..value.cols() {
                value.set(i, j, value.get(i, j) + r.get(0, j));
            }
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(value, Op::AddRow(a, row), ng))
    }

    pub fn scale(&mut self, a: ValueId, c: f64) -> ValueId {
        let value = self.value(a).scale(c);
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, c), ng)
    }

    pub fn hadamard(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).hadamard(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Hadamard(a, b), ng))
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn concat_cols(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ma, mb) = (self.value(a), self.value(b));
        if ma.rows() != mb.rows() {
            return Err(Error::Shape(format!(
                "concat_cols: {} rows vs {} rows",
                ma.rows(),
                mb.rows()
            )));
        }
        let (n, da, db) = (ma.rows(), ma.cols(), mb.cols());
        let mut value = Matrix::zeros(n, da + db);
        for i in 0..n {
            for j in 0..da {
                value.set(i, j, ma.get(i, j));
            }
            for j in 0..db {
                value.set(i, da + j, mb.get(i, j));
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::ConcatCols(a, b), ng))
    }

    pub fn slice_cols(&mut self, a: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let m = self.value(a);
        if start + len > m.cols() {
            return Err(Error::Shape(format!(
                "slice_cols: [{start}, {}) out of {} cols",
                start + len,
                m.cols()
            )));
        }
        let mut value = Matrix::zeros(m.rows(), len);
        for i in 0..m.rows() {
            for j in 0..len {
                value.set(i, j, m.get(i, start + j));
            }
        }
        let ng = self.ng(a);
        Ok(self.push(value, Op::SliceCols(a, start, len), ng))
    }

    pub fn gather_rows(&mut self, table: ValueId, indices: &[usize]) -> Result<ValueId> {
        let t = self.value(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Shape(format!(
                "gather_rows: index {bad} out of {} rows",
                t.rows()
            )));
        }
        let mut value = Matrix::zeros(indices.len(), t.cols());
        for (i, &src) in indices.iter().enumerate() {
            for j in 0..t.cols() {
                value.set(i, j, t.get(src, j));
            }
        }
        let ng = self.ng(table);
        Ok(self.push(value, Op::GatherRows(table, indices.to_vec()), ng))
    }

    pub fn scatter_rows(
        &mut self,
        a: ValueId,
        indices: &[usize],
        total_rows: usize,
    ) -> Result<ValueId> {
        let m = self.value(a);
        if indices.len() != m.rows() {
            return Err(Error::Shape(format!(
                "scatter_rows: {} indices for {} rows",
                indices.len(),
                m.rows()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= total_rows) {
            return Err(Error::Shape(format!(
                "scatter_rows: index {bad} out of {total_rows} rows"
            )));
        }
        let mut value = Matrix::zeros(total_rows, m.cols());
        for (i, &dst) in indices.iter().enumerate() {
            for j in 0..m.cols() {
                value.set(dst, j, m.get(i, j));
            }
        }
        let ng = self.ng(a);
        Ok(self.push(value, Op::ScatterRows(a, indices.to_vec(), total_rows), ng))
    }

    pub fn scale_rows(&mut self, a: ValueId, s: ValueId) -> Result<ValueId> {
        let (m, col) = (self.value(a), self.value(s));
        if col.cols() != 1 || col.rows() != m.rows() {
            return Err(Error::Shape(format!(
                "scale_rows: {}x{} scaled by {}x{}",
                m.rows(),
                m.cols(),
                col.rows(),
                col.cols()
            )));
        }
        let mut value = m.clone();
        for i in 0..m.rows() {
            let f = col.get(i, 0);
            for j in 0..m.cols() {
                value.set(i, j, m.get(i, j) * f);
            }
        }
        let ng = self.ng(a) || self.ng(s);
        Ok(self.push(value, Op::ScaleRows(a, s), ng))
    }

    pub fn rowwise_dot(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ma, mb) = (self.value(a), self.value(b));
        if !ma.same_shape(mb) {
            return Err(Error::Shape(format!(
                "rowwise_dot: {}x{} vs {}x{}",
                ma.rows(),
                ma.cols(),
                mb.rows(),
                mb.cols()
            )));
        }
        let mut value = Matrix::zeros(ma.rows(), 1);
        for i in 0..ma.rows() {
            let mut acc = 0.0;
            for j in 0..ma.cols() {
                acc += ma.get(i, j) * mb.get(i, j);
            }
            value.set(i, 0, acc);
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::RowwiseDot(a, b), ng))
    }

    /// Row softmax over unmasked entries; masked entries are exactly zero.
    /// `mask` is row-major with the same shape as the logits.
    pub fn masked_softmax_rows(&mut self, a: ValueId, mask: &[bool]) -> Result<ValueId> {
        let m = self.value(a);
        if mask.len() != m.rows() * m.cols() {
            return Err(Error::Shape(format!(
                "masked_softmax_rows: mask length {} for {}x{}",
                mask.len(),
                m.rows(),
                m.cols()
            )));
        }
        let value = softmax_rows_masked(m, mask);
        let ng = self.ng(a);
        Ok(self.push(value, Op::MaskedSoftmaxRows(a, mask.to_vec()), ng))
    }

    /// Σ_k coeffs[0,k] · terms[k]; coefficients are a 1×K row vector.
    pub fn lin_comb(&mut self, terms: &[ValueId], coeffs: ValueId) -> Result<ValueId> {
        let c = self.value(coeffs);
        if c.rows() != 1 || c.cols() != terms.len() {
            return Err(Error::Shape(format!(
                "lin_comb: {} terms with {}x{} coefficients",
                terms.len(),
                c.rows(),
                c.cols()
            )));
        }
        if terms.is_empty() {
            return Err(Error::Shape("lin_comb: no terms".into()));
        }
        let shape0 = (self.value(terms[0]).rows(), self.value(terms[0]).cols());
        let mut value = Matrix::zeros(shape0.0, shape0.1);
        for (k, &t) in terms.iter().enumerate() {
            let tm = self.value(t);
            if (tm.rows(), tm.cols()) != shape0 {
                return Err(Error::Shape("lin_comb: term shapes differ".into()));
            }
            let ck = self.value(coeffs).get(0, k);
            let term = tm.scale(ck);
            value.add_assign(&term)?;
        }
        let ng = terms.iter().any(|&t| self.ng(t)) || self.ng(coeffs);
        Ok(self.push(value, Op::LinComb(terms.to_vec(), coeffs), ng))
    }

    pub fn mean_all(&mut self, a: ValueId) -> Result<ValueId> {
        let m = self.value(a);
        let count = (m.rows() * m.cols()) as f64;
        if count == 0.0 {
            return Err(Error::Shape("mean_all of empty matrix".into()));
        }
        let value = Matrix::new(1, 1, vec![m.sum() / count])?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::MeanAll(a), ng))
    }

    /// Mean softmax cross-entropy over rows; `targets` holds one-hot (or
    /// general probability) rows and is treated as a constant.
    pub fn softmax_cross_entropy(&mut self, logits: ValueId, targets: ValueId) -> Result<ValueId> {
        let (lm, tm) = (self.value(logits), self.value(targets));
        if !lm.same_shape(tm) {
            return Err(Error::Shape(format!(
                "softmax_cross_entropy: {}x{} vs {}x{}",
                lm.rows(),
                lm.cols(),
                tm.rows(),
                tm.cols()
            )));
        }
        if lm.rows() == 0 {
            return Err(Error::Shape("softmax_cross_entropy: empty batch".into()));
        }
        let probs = softmax_rows(lm);
        let mut total = 0.0;
        for i in 0..lm.rows() {
            for j in 0..lm.cols() {
                let t = tm.get(i, j);
                if t != 0.0 {
                    total -= t * probs.get(i, j).max(1e-300).ln();
                }
            }
        }
        let value = Matrix::new(1, 1, vec![total / lm.rows() as f64])?;
        let ng = self.ng(logits);
        Ok(self.push(value, Op::SoftmaxCrossEntropy(logits, targets), ng))
    }

    /// Mean elementwise binary cross-entropy of sigmoid(logits) against
    /// 0/1 targets, averaged over every entry.
    pub fn sigmoid_bce(&mut self, logits: ValueId, targets: ValueId) -> Result<ValueId> {
        let (lm, tm) = (self.value(logits), self.value(targets));
        if !lm.same_shape(tm) {
            return Err(Error::Shape(format!(
                "sigmoid_bce: {}x{} vs {}x{}",
                lm.rows(),
                lm.cols(),
                tm.rows(),
                tm.cols()
            )));
        }
        if lm.rows() * lm.cols() == 0 {
            return Err(Error::Shape("sigmoid_bce: empty batch".into()));
        }
        let mut total = 0.0;
        for i in 0..lm.rows() {
            for j in 0..lm.cols() {
                let x = lm.get(i, j);
                let t = tm.get(i, j);
                // stable: max(x,0) - x t + ln(1 + e^{-|x|})
                total += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
            }
        }
        let count = (lm.rows() * lm.cols()) as f64;
        let value = Matrix::new(1, 1, vec![total / count])?;
        let ng = self.ng(logits);
        Ok(self.push(value, Op::SigmoidBce(logits, targets), ng))
    }

    /// Recompute every node from the recorded leaves; the outputs must match
    /// the recorded values bit-exactly.
    pub fn replay_matches(&self) -> bool {
        let mut values: Vec<Matrix> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf => node.value.clone(),
                op => self.eval(op, &values),
            };
            values.push(v);
        }
        self.nodes
            .iter()
            .zip(&values)
            .all(|(n, v)| n.value.same_shape(v) && n.value.as_slice() == v.as_slice())
    }

    fn eval(&self, op: &Op, values: &[Matrix]) -> Matrix {
        let v = |id: &ValueId| &values[id.0];
        match op {
            Op::Leaf => unreachable!(),
            Op::MatMul(a, b) => v(a).matmul(v(b)).unwrap(),
            Op::MatMulNT(a, b) => v(a).matmul_nt(v(b)).unwrap(),
            Op::MatMulTN(a, b) => v(a).matmul_tn(v(b)).unwrap(),
            Op::Add(a, b) => v(a).add(v(b)).unwrap(),
            Op::Sub(a, b) => v(a).sub(v(b)).unwrap(),
            Op::AddRow(a, r) => {
                let mut out = v(a).clone();
                for i in 0..out.rows() {
                    for j in 0..out.cols() {
                        out.set(i, j, out.get(i, j) + v(r).get(0, j));
                    }
                }
                out
            }
            Op::Scale(a, c) => v(a).scale(*c),
            Op::Hadamard(a, b) => v(a).hadamard(v(b)).unwrap(),
            Op::Relu(a) => v(a).map(|x| x.max(0.0)),
            Op::Sigmoid(a) => v(a).map(|x| 1.0 / (1.0 + (-x).exp())),
            Op::ConcatCols(a, b) => {
                let (ma, mb) = (v(a), v(b));
                let mut out = Matrix::zeros(ma.rows(), ma.cols() + mb.cols());
                for i in 0..ma.rows() {
                    for j in 0..ma.cols() {
                        out.set(i, j, ma.get(i, j));
                    }
                    for j in 0..mb.cols() {
                        out.set(i, ma.cols() + j, mb.get(i, j));
                    }
                }
                out
            }
            Op::SliceCols(a, start, len) => {
                let m = v(a);
                let mut out = Matrix::zeros(m.rows(), *len);
                for i in 0..m.rows() {
                    for j in 0..*len {
                        out.set(i, j, m.get(i, start + j));
                    }
                }
                out
            }
            Op::GatherRows(t, idx) => {
                let tm = v(t);
                let mut out = Matrix::zeros(idx.len(), tm.cols());
                for (i, &src) in idx.iter().enumerate() {
                    for j in 0..tm.cols() {
                        out.set(i, j, tm.get(src, j));
                    }
                }
                out
            }
            Op::ScatterRows(a, idx, total) => {
                let m = v(a);
                let mut out = Matrix::zeros(*total, m.cols());
                for (i, &dst) in idx.iter().enumerate() {
                    for j in 0..m.cols() {
                        out.set(dst, j, m.get(i, j));
                    }
                }
                out
            }
            Op::ScaleRows(a, s) => {
                let (m, col) = (v(a), v(s));
                let mut out = m.clone();
                for i in 0..m.rows() {
                    for j in 0..m.cols() {
                        out.set(i, j, m.get(i, j) * col.get(i, 0));
                    }
                }
                out
            }
            Op::RowwiseDot(a, b) => {
                let (ma, mb) = (v(a), v(b));
                let mut out = Matrix::zeros(ma.rows(), 1);
                for i in 0..ma.rows() {
                    let mut acc = 0.0;
                    for j in 0..ma.cols() {
                        acc += ma.get(i, j) * mb.get(i, j);
                    }
                    out.set(i, 0, acc);
                }
                out
            }
            Op::MaskedSoftmaxRows(a, mask) => softmax_rows_masked(v(a), mask),
            Op::LinComb(terms, coeffs) => {
                let c = v(coeffs);
                let first = v(&terms[0]);
                let mut out = Matrix::zeros(first.rows(), first.cols());
                for (k, t) in terms.iter().enumerate() {
                    out.add_assign(&v(t).scale(c.get(0, k))).unwrap();
                }
                out
            }
            Op::MeanAll(a) => {
                let m = v(a);
                Matrix::new(1, 1, vec![m.sum() / (m.rows() * m.cols()) as f64]).unwrap()
            }
            Op::SoftmaxCrossEntropy(l, t) => {
                let probs = softmax_rows(v(l));
                let tm = v(t);
                let mut total = 0.0;
                for i in 0..tm.rows() {
                    for j in 0..tm.cols() {
                        let tv = tm.get(i, j);
                        if tv != 0.0 {
                            total -= tv * probs.get(i, j).max(1e-300).ln();
                        }
                    }
                }
                Matrix::new(1, 1, vec![total / tm.rows() as f64]).unwrap()
            }
            Op::SigmoidBce(l, t) => {
                let (lm, tm) = (v(l), v(t));
                let mut total = 0.0;
                for i in 0..lm.rows() {
                    for j in 0..lm.cols() {
                        let x = lm.get(i, j);
                        let tv = tm.get(i, j);
                        total += x.max(0.0) - x * tv + (-x.abs()).exp().ln_1p();
                    }
                }
                let count = (lm.rows() * lm.cols()) as f64;
                Matrix::new(1, 1, vec![total / count]).unwrap()
            }
        }
    }

    /// Reverse pass from a scalar loss. Every node is visited exactly once in
    /// reverse topological (creation) order.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::UnknownHandle(format!(
                "loss handle {} not on tape",
                loss.0
            )));
        }
        let lv = self.value(loss);
        if lv.rows() != 1 || lv.cols() != 1 {
            return Err(Error::Shape(format!(
                "loss must be scalar, got {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }

        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::new(1, 1, vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            let op = self.nodes[idx].op.clone();
            self.accumulate(&op, &g, &mut grads)?;
        }

        // parameters disconnected from the loss get a zero gradient
        let mut is_param = vec![false; self.nodes.len()];
        for &p in &self.params {
            is_param[p.0] = true;
            if grads[p.0].is_none() {
                let shape = &self.nodes[p.0].value;
                grads[p.0] = Some(Matrix::zeros(shape.rows(), shape.cols()));
            }
        }
        Ok(Gradients { grads, is_param })
    }

    fn add_grad(&self, grads: &mut [Option<Matrix>], id: ValueId, g: Matrix) -> Result<()> {
        if !self.nodes[id.0].needs_grad {
            return Ok(());
        }
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn accumulate(&self, op: &Op, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                self.add_grad(grads, *a, g.matmul_nt(self.value(*b))?)?;
                self.add_grad(grads, *b, self.value(*a).matmul_tn(g)?)?;
            }
            Op::MatMulNT(a, b) => {
                // Y = A Bᵀ: dA = G B, dB = Gᵀ A
                self.add_grad(grads, *a, g.matmul(self.value(*b))?)?;
                self.add_grad(grads, *b, g.matmul_tn(self.value(*a))?)?;
            }
            Op::MatMulTN(a, b) => {
                // Y = Aᵀ B: dA = B Gᵀ, dB = A G
                self.add_grad(grads, *a, self.value(*b).matmul_nt(g)?)?;
                self.add_grad(grads, *b, self.value(*a).matmul(g)?)?;
            }
            Op::Add(a, b) => {
                self.add_grad(grads, *a, g.clone())?;
                self.add_grad(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.add_grad(grads, *a, g.clone())?;
                self.add_grad(grads, *b, g.scale(-1.0))?;
            }
            Op::AddRow(a, r) => {
                self.add_grad(grads, *a, g.clone())?;
                let sums = g.col_sums();
                self.add_grad(grads, *r, Matrix::row_vector(sums))?;
            }
            Op::Scale(a, c) => {
                self.add_grad(grads, *a, g.scale(*c))?;
            }
            Op::Hadamard(a, b) => {
                self.add_grad(grads, *a, g.hadamard(self.value(*b))?)?;
                self.add_grad(grads, *b, g.hadamard(self.value(*a))?)?;
            }
            Op::Relu(a) => {
                let mask = self.value(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                self.add_grad(grads, *a, g.hadamard(&mask)?)?;
            }
            Op::Sigmoid(a) => {
                let y = self.value(*a).map(|x| 1.0 / (1.0 + (-x).exp()));
                let dy = y.map(|s| s * (1.0 - s));
                self.add_grad(grads, *a, g.hadamard(&dy)?)?;
            }
            Op::ConcatCols(a, b) => {
                let da = self.value(*a).cols();
                let db = self.value(*b).cols();
                let mut ga = Matrix::zeros(g.rows(), da);
                let mut gb = Matrix::zeros(g.rows(), db);
                for i in 0..g.rows() {
                    for j in 0..da {
                        ga.set(i, j, g.get(i, j));
                    }
                    for j in 0..db {
                        gb.set(i, j, g.get(i, da + j));
                    }
                }
                self.add_grad(grads, *a, ga)?;
                self.add_grad(grads, *b, gb)?;
            }
            Op::SliceCols(a, start, len) => {
                let src = self.value(*a);
                let mut ga = Matrix::zeros(src.rows(), src.cols());
                for i in 0..g.rows() {
                    for j in 0..*len {
                        ga.set(i, start + j, g.get(i, j));
                    }
                }
                self.add_grad(grads, *a, ga)?;
            }
            Op::GatherRows(t, idx) => {
                let tm = self.value(*t);
                let mut gt = Matrix::zeros(tm.rows(), tm.cols());
                for (i, &src) in idx.iter().enumerate() {
                    for j in 0..tm.cols() {
                        gt.set(src, j, gt.get(src, j) + g.get(i, j));
                    }
                }
                self.add_grad(grads, *t, gt)?;
            }
            Op::ScatterRows(a, idx, _total) => {
                let m = self.value(*a);
                let mut ga = Matrix::zeros(m.rows(), m.cols());
                for (i, &dst) in idx.iter().enumerate() {
                    for j in 0..m.cols() {
                        ga.set(i, j, g.get(dst, j));
                    }
                }
                self.add_grad(grads, *a, ga)?;
            }
            Op::ScaleRows(a, s) => {
                let (m, col) = (self.value(*a), self.value(*s));
                let mut ga = Matrix::zeros(m.rows(), m.cols());
                let mut gs = Matrix::zeros(m.rows(), 1);
                for i in 0..m.rows() {
                    let f = col.get(i, 0);
                    let mut acc = 0.0;
                    for j in 0..m.cols() {
                        ga.set(i, j, g.get(i, j) * f);
                        acc += g.get(i, j) * m.get(i, j);
                    }
                    gs.set(i, 0, acc);
                }
                self.add_grad(grads, *a, ga)?;
                self.add_grad(grads, *s, gs)?;
            }
            Op::RowwiseDot(a, b) => {
                let (ma, mb) = (self.value(*a), self.value(*b));
                let mut ga = Matrix::zeros(ma.rows(), ma.cols());
                let mut gb = Matrix::zeros(mb.rows(), mb.cols());
                for i in 0..ma.rows() {
                    let gi = g.get(i, 0);
                    for j in 0..ma.cols() {
                        ga.set(i, j, gi * mb.get(i, j));
                        gb.set(i, j, gi * ma.get(i, j));
                    }
                }
                self.add_grad(grads, *a, ga)?;
                self.add_grad(grads, *b, gb)?;
            }
            Op::MaskedSoftmaxRows(a, mask) => {
                let m = self.value(*a);
                let y = softmax_rows_masked(m, mask);
                let (n, cols) = (m.rows(), m.cols());
                let mut ga = Matrix::zeros(n, cols);
                for i in 0..n {
                    let mut dot = 0.0;
                    for j in 0..cols {
                        if mask[i * cols + j] {
                            dot += g.get(i, j) * y.get(i, j);
                        }
                    }
                    for j in 0..cols {
                        if mask[i * cols + j] {
                            ga.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                }
                self.add_grad(grads, *a, ga)?;
            }
            Op::LinComb(terms, coeffs) => {
                let c = self.value(*coeffs);
                let mut gc = Matrix::zeros(1, terms.len());
                for (k, t) in terms.iter().enumerate() {
                    self.add_grad(grads, *t, g.scale(c.get(0, k)))?;
                    gc.set(0, k, g.frob_dot(self.value(*t))?);
                }
                self.add_grad(grads, *coeffs, gc)?;
            }
            Op::MeanAll(a) => {
                let m = self.value(*a);
                let f = g.get(0, 0) / (m.rows() * m.cols()) as f64;
                self.add_grad(grads, *a, Matrix::zeros(m.rows(), m.cols()).map(|_| f))?;
            }
            Op::SoftmaxCrossEntropy(l, t) => {
                let probs = softmax_rows(self.value(*l));
                let diff = probs.sub(self.value(*t))?;
                let f = g.get(0, 0) / self.value(*l).rows() as f64;
                self.add_grad(grads, *l, diff.scale(f))?;
            }
            Op::SigmoidBce(l, t) => {
                let s = self.value(*l).map(|x| 1.0 / (1.0 + (-x).exp()));
                let diff = s.sub(self.value(*t))?;
                let count = (s.rows() * s.cols()) as f64;
                self.add_grad(grads, *l, diff.scale(g.get(0, 0) / count))?;
            }
        }
        Ok(())
    }
}
