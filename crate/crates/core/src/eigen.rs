//! Symmetric eigendecomposition (cyclic Jacobi) and power iteration.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Result of `sym_eig`: eigenvalues ascending, eigenvector i in column i.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

const SYMMETRY_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;
const OFF_DIAG_TOL: f64 = 1e-12;

fn check_symmetric(m: &Matrix, tol: f64, op: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Shape(format!(
            "{op}: matrix is {}x{}, expected square",
            m.rows(),
            m.cols()
        )));
    }
    for i in 0..m.rows() {
        for j in (i + 1)..m.cols() {
            if (m.get(i, j) - m.get(j, i)).abs() > tol {
                return Err(Error::Shape(format!(
                    "{op}: matrix not symmetric at ({i},{j}): {} vs {}",
                    m.get(i, j),
                    m.get(j, i)
                )));
            }
        }
    }
    Ok(())
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Sweeps over all (p, q) pairs annihilating off-diagonal entries until the
/// largest off-diagonal magnitude falls below 1e-12 relative to the matrix
/// scale, capped at 100 sweeps. Eigenvalues are returned ascending with a
/// fixed sign convention: the first component of each eigenvector with
/// magnitude above 1e-12 is positive.
pub fn sym_eig(m: &Matrix) -> Result<EigenDecomposition> {
    check_symmetric(m, SYMMETRY_TOL, "sym_eig")?;
    let n = m.rows();
    if n == 0 {
        return Ok(EigenDecomposition {
            eigenvalues: Vec::new(),
            eigenvectors: Matrix::zeros(0, 0),
        });
    }

    // work on a symmetrized copy so the 1e-10 input slack cannot bias sweeps
    let mut a = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, avg);
            a.set(j, i, avg);
        }
    }
    let mut v = Matrix::identity(n);
    let scale = a.max_abs().max(1.0);
    let tol = OFF_DIAG_TOL * scale;

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut off_max: f64 = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off_max = off_max.max(a.get(p, q).abs());
            }
        }
        if off_max <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= tol {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                // smaller-root tangent keeps rotations well conditioned
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    if !converged {
        let mut residual: f64 = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                residual = residual.max(a.get(p, q).abs());
            }
        }
        if residual > tol {
            return Err(Error::Convergence(format!(
                "jacobi did not converge in {MAX_SWEEPS} sweeps, max off-diagonal {residual:e}"
            )));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).partial_cmp(&a.get(j, j)).unwrap());

    let eigenvalues: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut sign = 1.0;
        for k in 0..n {
            let val = v.get(k, src);
            if val.abs() > 1e-12 {
                sign = if val > 0.0 { 1.0 } else { -1.0 };
                break;
            }
        }
        for k in 0..n {
            eigenvectors.set(k, col, sign * v.get(k, src));
        }
    }

    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

impl EigenDecomposition {
    /// U · diag(values) · Uᵀ
    pub fn reconstruct(&self) -> Result<Matrix> {
        let u = &self.eigenvectors;
        let n = u.rows();
        let mut scaled = u.clone();
        for j in 0..n {
            for i in 0..n {
                scaled.set(i, j, u.get(i, j) * self.eigenvalues[j]);
            }
        }
        scaled.matmul_nt(u)
    }
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
///
/// Runs at most `iters` matrix-vector products, stopping once the residual
/// ‖Mv − ρv‖₂ falls below `tol`·ρ; for symmetric M some eigenvalue lies
/// within the residual of the Rayleigh quotient ρ, so ρ is then within
/// tol·λ_max of the true maximum. The final quotient is inflated by `tol`
/// before returning so the estimate does not come in under the true value
/// by more than the tolerance.
pub fn power_iteration_lambda_max(m: &Matrix, iters: usize, tol: f64) -> Result<f64> {
    check_symmetric(m, SYMMETRY_TOL, "power_iteration_lambda_max")?;
    let n = m.rows();
    if n == 0 || m.max_abs() == 0.0 {
        return Ok(0.0);
    }

    // fixed pseudo-random start so no eigenvector is systematically missed
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + ((i.wrapping_mul(2654435761) % 1000) as f64) / 999.0)
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }

    let mut rayleigh = 0.0;
    for _ in 0..iters.max(1) {
        let mut w = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += m.get(i, j) * v[j];
            }
            w[i] = acc;
        }
        // v is unit, so the quotient is just v·w
        rayleigh = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let residual = v
            .iter()
            .zip(&w)
            .map(|(vi, wi)| {
                let r = wi - rayleigh * vi;
                r * r
            })
            .sum::<f64>()
            .sqrt();
        let wnorm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wnorm <= f64::MIN_POSITIVE {
            return Ok(0.0);
        }
        for (x, wi) in v.iter_mut().zip(&w) {
            *x = wi / wnorm;
        }
        if residual <= tol * rayleigh.abs().max(1e-30) {
            break;
        }
    }
    Ok(rayleigh * (1.0 + tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_symmetric(n: usize, rng: &mut Rng) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = rng.normal();
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        m
    }

    /// Naive characteristic-polynomial roots for 2x2 symmetric matrices.
    fn charpoly_roots_2x2(m: &Matrix) -> Vec<f64> {
        let (a, b, d) = (m.get(0, 0), m.get(0, 1), m.get(1, 1));
        let tr = a + d;
        let det = a * d - b * b;
        let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
        let mut roots = vec![(tr - disc) / 2.0, (tr + disc) / 2.0];
        roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
        roots
    }

    /// Roots of the 3x3 characteristic cubic via the trigonometric method.
    fn charpoly_roots_3x3(m: &Matrix) -> Vec<f64> {
        // det(M - xI) = -x^3 + c2 x^2 + c1 x + c0
        let (a, b, c) = (m.get(0, 0), m.get(0, 1), m.get(0, 2));
        let (d, e) = (m.get(1, 1), m.get(1, 2));
        let f = m.get(2, 2);
        let c2 = a + d + f;
        let c1 = -(a * d + a * f + d * f - b * b - c * c - e * e);
        let c0 = a * d * f + 2.0 * b * c * e - a * e * e - d * c * c - f * b * b;
        // x^3 - c2 x^2 - c1 x - c0 = 0; shift x = y + c2/3
        let p = -c1 - c2 * c2 / 3.0;
        let q = -c0 - c2 * c1 / 3.0 - 2.0 * c2 * c2 * c2 / 27.0;
        // y^3 + p y + q = 0, three real roots for symmetric input
        let inner = (-p / 3.0).max(0.0);
        let r = inner.sqrt();
        let mut roots = if r < 1e-300 {
            vec![0.0, 0.0, 0.0]
        } else {
            let arg = (3.0 * q / (2.0 * p * r)).clamp(-1.0, 1.0);
            let phi = arg.acos() / 3.0;
            (0..3)
                .map(|k| 2.0 * r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
                .collect()
        };
        for root in &mut roots {
            *root += c2 / 3.0;
        }
        roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
        roots
    }

    #[test]
    fn identity_eigens() {
        let e = sym_eig(&Matrix::identity(2)).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 1.0]);
        assert!(e
            .eigenvectors
            .max_abs_diff(&Matrix::identity(2))
            .unwrap()
            .abs()
            <= 1e-12);
    }

    #[test]
    fn two_cycle_eigens() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let e = sym_eig(&m).unwrap();
        assert!((e.eigenvalues[0] + 1.0).abs() <= 1e-12);
        assert!((e.eigenvalues[1] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn random_6x6_reconstructs() {
        let mut rng = Rng::from_seed(7);
        let m = random_symmetric(6, &mut rng);
        let e = sym_eig(&m).unwrap();
        let rec = e.reconstruct().unwrap();
        let rel = rec.max_abs_diff(&m).unwrap() / m.max_abs().max(1.0);
        assert!(rel <= 1e-8, "reconstruction error {rel}");
        // sorted ascending
        for w in e.eigenvalues.windows(2) {
            assert!(w[0] <= w[1]);
        }
        // orthonormal columns
        let utu = e.eigenvectors.matmul_tn(&e.eigenvectors).unwrap();
        assert!(utu.max_abs_diff(&Matrix::identity(6)).unwrap() <= 1e-8);
    }

    #[test]
    fn matches_charpoly_roots_small() {
        let mut rng = Rng::from_seed(13);
        for _ in 0..50 {
            let m = random_symmetric(2, &mut rng);
            let e = sym_eig(&m).unwrap();
            let roots = charpoly_roots_2x2(&m);
            for (got, want) in e.eigenvalues.iter().zip(&roots) {
                assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
            }
            let m = random_symmetric(3, &mut rng);
            let e = sym_eig(&m).unwrap();
            let roots = charpoly_roots_3x3(&m);
            for (got, want) in e.eigenvalues.iter().zip(&roots) {
                assert!((got - want).abs() <= 1e-8, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn sign_convention_deterministic() {
        let mut rng = Rng::from_seed(21);
        let m = random_symmetric(5, &mut rng);
        let a = sym_eig(&m).unwrap();
        let b = sym_eig(&m).unwrap();
        assert_eq!(a.eigenvectors, b.eigenvectors);
        for j in 0..5 {
            let first = (0..5)
                .map(|i| a.eigenvectors.get(i, j))
                .find(|v| v.abs() > 1e-12)
                .unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.5, 0.0]]).unwrap();
        assert!(matches!(sym_eig(&m), Err(Error::Shape(_))));
        let m = Matrix::zeros(2, 3);
        assert!(matches!(sym_eig(&m), Err(Error::Shape(_))));
    }

    #[test]
    fn power_iteration_identity() {
        let lam = power_iteration_lambda_max(&Matrix::identity(3), 100, 1e-6).unwrap();
        assert!((lam - 1.0).abs() <= 1e-4);
    }

    #[test]
    fn power_iteration_zero_matrix() {
        let lam = power_iteration_lambda_max(&Matrix::zeros(4, 4), 100, 1e-6).unwrap();
        assert_eq!(lam, 0.0);
    }

    #[test]
    fn power_iteration_never_underestimates_much() {
        let mut rng = Rng::from_seed(3);
        for _ in 0..20 {
            let m = random_symmetric(8, &mut rng);
            // make PSD: M M^T
            let psd = m.matmul_nt(&m).unwrap();
            let tol = 1e-3;
            let est = power_iteration_lambda_max(&psd, 500, tol).unwrap();
            let truth = *sym_eig(&psd)
                .unwrap()
                .eigenvalues
                .last()
                .unwrap();
            assert!(est >= truth * (1.0 - tol), "est {est} truth {truth}");
            assert!(est <= truth * (1.0 + 3.0 * tol) + 1e-12, "est {est} truth {truth}");
        }
    }
}
