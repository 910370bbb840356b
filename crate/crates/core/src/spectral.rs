//! Spectral filtering of node signals: an exact eigenbasis path and the
//! Chebyshev-recurrence approximation that only ever multiplies the scaled
//! Laplacian into the signal.

use crate::eigen::power_iteration_lambda_max;
use crate::error::{Error, Result};
use crate::graph::GraphOperators;
use crate::matrix::Matrix;
use crate::tape::{Tape, ValueId};

/// Polynomial filter: coefficients θ₀..θ_K over Chebyshev basis terms of the
/// Laplacian rescaled into [-1, 1] by `lambda_max`.
#[derive(Debug, Clone)]
pub struct ChebyshevFilter {
    pub theta: Vec<f64>,
    pub lambda_max: f64,
}

impl ChebyshevFilter {
    pub fn new(theta: Vec<f64>, lambda_max: f64) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::Config(
                "chebyshev filter needs at least the order-0 coefficient".into(),
            ));
        }
        if lambda_max <= 0.0 {
            return Err(Error::Config(format!(
                "lambda_max must be positive, got {lambda_max}"
            )));
        }
        Ok(ChebyshevFilter { theta, lambda_max })
    }

    pub fn order(&self) -> usize {
        self.theta.len() - 1
    }

    /// Scalar response Σ θ_k T_k(2λ/λ_max − 1) at one eigenvalue.
    pub fn response(&self, lambda: f64) -> f64 {
        let x = 2.0 * lambda / self.lambda_max - 1.0;
        self.theta
            .iter()
            .enumerate()
            .map(|(k, t)| t * chebyshev_scalar(k, x))
            .sum()
    }
}

/// T_k(x) by the three-term recurrence. Intended for |x| ≤ 1 + 1e-12.
pub fn chebyshev_scalar(k: usize, x: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let (mut prev, mut cur) = (1.0, x);
    for _ in 1..k {
        let next = 2.0 * x * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Largest Laplacian eigenvalue estimate for filter scaling: power iteration
/// with 1e-3 relative inflation, floored away from zero.
pub fn estimate_lambda_max(ops: &GraphOperators) -> Result<f64> {
    let est = power_iteration_lambda_max(&ops.laplacian, 200, 1e-3)?;
    Ok(est.max(1e-6))
}

/// L̃ = (2/λ_max)·L − I.
pub fn scaled_laplacian(ops: &GraphOperators, lambda_max: f64) -> Matrix {
    let n = ops.laplacian.rows();
    let mut out = ops.laplacian.scale(2.0 / lambda_max);
    for i in 0..n {
        out.set(i, i, out.get(i, i) - 1.0);
    }
    out
}

/// Exact spectral filter: U · diag(response) · Uᵀ · X, column-wise over X.
pub fn exact_filter(ops: &GraphOperators, response: &[f64], x: &Matrix) -> Result<Matrix> {
    let eig = ops.eigen.as_ref().ok_or_else(|| {
        Error::Shape("exact_filter needs operators built with an eigendecomposition".into())
    })?;
    let n = ops.n();
    if response.len() != n {
        return Err(Error::Shape(format!(
            "exact_filter: {} response samples for {n} nodes",
            response.len()
        )));
    }
    if x.rows() != n {
        return Err(Error::Shape(format!(
            "exact_filter: signal has {} rows for {n} nodes",
            x.rows()
        )));
    }
    let coeffs = eig.eigenvectors.matmul_tn(x)?; // Uᵀ X
    let mut scaled = coeffs;
    for i in 0..n {
        for j in 0..scaled.cols() {
            scaled.set(i, j, scaled.get(i, j) * response[i]);
        }
    }
    eig.eigenvectors.matmul(&scaled)
}

/// Chebyshev filtering on the tape: Σ_k θ_k T_k(L̃)·X by the three-term
/// recurrence, using only matrix-signal products. `theta` is a 1×(K+1)
/// coefficient row (learnable), the scaled Laplacian enters as a constant.
pub fn chebyshev_apply_t(
    tape: &mut Tape,
    theta: ValueId,
    ops: &GraphOperators,
    lambda_max: f64,
    x: ValueId,
) -> Result<ValueId> {
    let t = tape.value(theta);
    if t.rows() != 1 || t.cols() == 0 {
        return Err(Error::Config(format!(
            "chebyshev coefficients must be a nonempty row vector, got {}x{}",
            t.rows(),
            t.cols()
        )));
    }
    if tape.value(x).rows() != ops.n() {
        return Err(Error::Shape(format!(
            "chebyshev_apply: signal has {} rows for {} nodes",
            tape.value(x).rows(),
            ops.n()
        )));
    }
    let order = tape.value(theta).cols() - 1;
    let lt = tape.constant(scaled_laplacian(ops, lambda_max));
    let mut terms = vec![x];
    if order >= 1 {
        let t1 = tape.matmul(lt, x)?;
        terms.push(t1);
        for k in 2..=order {
            let prod = tape.matmul(lt, terms[k - 1])?;
            let doubled = tape.scale(prod, 2.0);
            let next = tape.sub(doubled, terms[k - 2])?;
            terms.push(next);
        }
    }
    tape.lin_comb(&terms, theta)
}

/// Value-level Chebyshev filtering; checks the filter's λ_max against a
/// fresh power-iteration estimate of the operators' Laplacian.
pub fn chebyshev_apply(
    filter: &ChebyshevFilter,
    ops: &GraphOperators,
    x: &Matrix,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let theta = tape.constant(Matrix::row_vector(filter.theta.clone()));
    let xid = tape.constant(x.clone());
    let out = chebyshev_apply_t(&mut tape, theta, ops, filter.lambda_max, xid)?;
    Ok(tape.value(out).clone())
}
