//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates per tensor, aligned with the caller's tensor order.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        AdamState {
            step: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over aligned parameter and gradient slices.
pub fn adam_step(
    params: &mut [&mut Matrix],
    grads: &[Matrix],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam_step: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let bc1 = 1.0 - config.beta1.powi(state.step as i32);
    let bc2 = 1.0 - config.beta2.powi(state.step as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if !p.same_shape(g) || !p.same_shape(m) {
            return Err(Error::Shape(format!(
                "adam_step: parameter {}x{} vs gradient {}x{}",
                p.rows(),
                p.cols(),
                g.rows(),
                g.cols()
            )));
        }
        let ps = p.as_slice_mut();
        let gs = g.as_slice();
        let ms = m.as_slice_mut();
        let vs = v.as_slice_mut();
        for i in 0..ps.len() {
            ms[i] = config.beta1 * ms[i] + (1.0 - config.beta1) * gs[i];
            vs[i] = config.beta2 * vs[i] + (1.0 - config.beta2) * gs[i] * gs[i];
            let m_hat = ms[i] / bc1;
            let v_hat = vs[i] / bc2;
            ps[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Matrix::new(1, 2, vec![1.0, -2.0]).unwrap();
        let g = Matrix::new(1, 2, vec![0.3, -7.0]).unwrap();
        let mut state = AdamState::new(&[(1, 2)]);
        let cfg = AdamConfig::default();
        let before = p.clone();
        adam_step(&mut [&mut p], &[g], &mut state, &cfg).unwrap();
        // bias-corrected first step: lr·g/(√(g²)+ε) ≈ lr·sign(g)
        for i in 0..2 {
            let delta = (p.get(0, i) - before.get(0, i)).abs();
            assert!((delta - cfg.learning_rate).abs() <= 1e-6, "delta {delta}");
        }
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = Matrix::new(1, 2, vec![1.5, -0.5]).unwrap();
        let g = Matrix::zeros(1, 2);
        let mut state = AdamState::new(&[(1, 2)]);
        let before = p.clone();
        adam_step(&mut [&mut p], &[g], &mut state, &AdamConfig::default()).unwrap();
        assert!(p.max_abs_diff(&before).unwrap() == 0.0);
    }

    #[test]
    fn quadratic_converges() {
        // minimize ‖w‖² from (1, 1); gradient 2w
        let mut w = Matrix::new(1, 2, vec![1.0, 1.0]).unwrap();
        let mut state = AdamState::new(&[(1, 2)]);
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        for _ in 0..200 {
            let g = w.scale(2.0);
            adam_step(&mut [&mut w], &[g], &mut state, &cfg).unwrap();
        }
        let norm = (w.get(0, 0).powi(2) + w.get(0, 1).powi(2)).sqrt();
        assert!(norm < 0.05, "‖w‖ = {norm}");
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut w = Matrix::new(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
            let mut state = AdamState::new(&[(1, 3)]);
            let cfg = AdamConfig::default();
            for i in 0..50 {
                let g = w.scale(2.0 + (i % 3) as f64);
                adam_step(&mut [&mut w], &[g], &mut state, &cfg).unwrap();
            }
            w
        };
        let a = run();
        let b = run();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Matrix::zeros(2, 2);
        let g = Matrix::zeros(2, 3);
        let mut state = AdamState::new(&[(2, 2)]);
        assert!(adam_step(&mut [&mut p], &[g], &mut state, &AdamConfig::default()).is_err());
    }
}
