//! Per-modality linear projection into the shared latent space.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tape::{Tape, ValueId};

/// Learnable projection for one modality: a `latent × raw` weight and a
/// `1 × latent` bias.
#[derive(Debug, Clone)]
pub struct ProjectionParams {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl ProjectionParams {
    pub fn latent_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn raw_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// W·x + b for a single feature vector.
pub fn project(x: &[f64], params: &ProjectionParams) -> Result<Vec<f64>> {
    if x.len() != params.raw_dim() {
        return Err(Error::Shape(format!(
            "project: input length {} vs weight {}x{}",
            x.len(),
            params.weight.rows(),
            params.weight.cols()
        )));
    }
    let d = params.latent_dim();
    let mut out = Vec::with_capacity(d);
    for i in 0..d {
        let mut acc = params.bias.get(0, i);
        for (j, xv) in x.iter().enumerate() {
            acc += params.weight.get(i, j) * xv;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Batched projection on the tape: rows of `x` are instances, so the result
/// is X·Wᵀ + b.
pub fn project_batch_t(
    tape: &mut Tape,
    x: ValueId,
    weight: ValueId,
    bias: ValueId,
) -> Result<ValueId> {
    let prod = tape.matmul_nt(x, weight)?;
    tape.add_row(prod, bias)
}
