//! Multi-scale graph convolution layers.
//!
//! A layer computes σ(Σ_{k=0}^{K} Ã^k H W_k) with ReLU. Hop propagations
//! reuse the previous product (Ã·(Ã^{k-1}H)), so Ã^k is never materialized.
//! Inverted dropout hits the pre-activation sum during training only.

use crate::error::{Error, Result};
use crate::graph::GraphOperators;
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::tape::{Tape, ValueId};

/// One layer: a weight per hop count 0..=K, shared input/output dims.
#[derive(Debug, Clone)]
pub struct GcnLayerParams {
    pub hop_weights: Vec<Matrix>,
    pub dropout: f64,
}

impl GcnLayerParams {
    pub fn d_in(&self) -> usize {
        self.hop_weights[0].rows()
    }

    pub fn d_out(&self) -> usize {
        self.hop_weights[0].cols()
    }

    fn validate(&self) -> Result<()> {
        if self.hop_weights.is_empty() {
            return Err(Error::Config("gcn layer needs at least the 0-hop weight".into()));
        }
        let (din, dout) = (self.d_in(), self.d_out());
        if self
            .hop_weights
            .iter()
            .any(|w| w.rows() != din || w.cols() != dout)
        {
            return Err(Error::Shape("gcn hop weights must share dimensions".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Stack of layers with chained dimensions.
#[derive(Debug, Clone)]
pub struct GcnStack {
    pub layers: Vec<GcnLayerParams>,
}

impl GcnStack {
    pub fn validate(&self) -> Result<()> {
        for layer in &self.layers {
            layer.validate()?;
        }
        for pair in self.layers.windows(2) {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::Shape(format!(
                    "gcn stack dims do not chain: {} out vs {} in",
                    pair[0].d_out(),
                    pair[1].d_in()
                )));
            }
        }
        Ok(())
    }
}

/// Fresh inverted-dropout mask: entries are 0 with probability `rate`,
/// otherwise 1/(1-rate).
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut Rng) -> Matrix {
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep })
        .collect();
    Matrix::new(rows, cols, data).expect("mask shape")
}

/// One layer on the tape. `norm_adjacency` is a constant handle to Ã;
/// `hop_weights` are the layer's parameter handles in hop order.
pub fn gcn_layer_t(
    tape: &mut Tape,
    h: ValueId,
    norm_adjacency: ValueId,
    hop_weights: &[ValueId],
    dropout: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<ValueId> {
    if hop_weights.is_empty() {
        return Err(Error::Config("gcn layer needs at least the 0-hop weight".into()));
    }
    let mut propagated = h;
    let mut sum = tape.matmul(h, hop_weights[0])?;
    for w in &hop_weights[1..] {
        propagated = tape.matmul(norm_adjacency, propagated)?;
        let term = tape.matmul(propagated, *w)?;
        sum = tape.add(sum, term)?;
    }
    if training && dropout > 0.0 {
        let shape = (tape.value(sum).rows(), tape.value(sum).cols());
        let mask = tape.constant(dropout_mask(shape.0, shape.1, dropout, rng));
        sum = tape.hadamard(sum, mask)?;
    }
    Ok(tape.relu(sum))
}

/// Whole stack on the tape; layer handles come as one slice per layer.
pub fn gcn_forward_t(
    tape: &mut Tape,
    h0: ValueId,
    norm_adjacency: ValueId,
    layer_weights: &[Vec<ValueId>],
    dropout: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<ValueId> {
    let mut h = h0;
    for weights in layer_weights {
        h = gcn_layer_t(tape, h, norm_adjacency, weights, dropout, training, rng)?;
    }
    Ok(h)
}

/// Value-level single layer (runs the tape path on constants).
pub fn gcn_layer(
    h: &Matrix,
    ops: &GraphOperators,
    params: &GcnLayerParams,
    training: bool,
    rng: &mut Rng,
) -> Result<Matrix> {
    params.validate()?;
    if h.rows() != ops.n() {
        return Err(Error::Shape(format!(
            "gcn_layer: {} signal rows for {} nodes",
            h.rows(),
            ops.n()
        )));
    }
    if h.cols() != params.d_in() {
        return Err(Error::Shape(format!(
            "gcn_layer: {} signal cols vs weight d_in {}",
            h.cols(),
            params.d_in()
        )));
    }
    let mut tape = Tape::new();
    let hid = tape.constant(h.clone());
    let aid = tape.constant(ops.norm_adjacency.clone());
    let wids: Vec<ValueId> = params
        .hop_weights
        .iter()
        .map(|w| tape.constant(w.clone()))
        .collect();
    let out = gcn_layer_t(&mut tape, hid, aid, &wids, params.dropout, training, rng)?;
    Ok(tape.value(out).clone())
}

/// Value-level stack application.
pub fn gcn_forward(
    h0: &Matrix,
    ops: &GraphOperators,
    stack: &GcnStack,
    training: bool,
    rng: &mut Rng,
) -> Result<Matrix> {
    stack.validate()?;
    let mut h = h0.clone();
    for layer in &stack.layers {
        h = gcn_layer(&h, ops, layer, training, rng)?;
    }
    Ok(h)
}

/// Row-wise concatenation, first block's columns first; slicing the first
/// d₁ columns recovers the first block exactly.
pub fn concat_intra_inter(h_intra: &Matrix, h_inter: &Matrix) -> Result<Matrix> {
    if h_intra.rows() != h_inter.rows() {
        return Err(Error::Shape(format!(
            "concat_intra_inter: {} rows vs {} rows",
            h_intra.rows(),
            h_inter.rows()
        )));
    }
    let (n, d1, d2) = (h_intra.rows(), h_intra.cols(), h_inter.cols());
    let mut out = Matrix::zeros(n, d1 + d2);
    for i in 0..n {
        for j in 0..d1 {
            out.set(i, j, h_intra.get(i, j));
        }
        for j in 0..d2 {
            out.set(i, d1 + j, h_inter.get(i, j));
        }
    }
    Ok(out)
}
