//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use crate::error::{Error, Result};
use crate::graph::SymmetricMatrix;
use crate::scalar::Scalar;

/// Default off-diagonal convergence threshold for [`sym_eigh`].
pub const DEFAULT_EIGH_TOL: f64 = 1e-12;

const MAX_SWEEPS: usize = 100;

/// Eigenvalues in ascending order with the matching orthonormal
/// eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct Spectrum<S> {
    eigenvalues: Vec<S>,
    /// Column i pairs with eigenvalue i; row-major `dim x dim`.
    eigenvectors: Vec<S>,
    dim: usize,
}

impl<S: Scalar> Spectrum<S> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eigenvalues(&self) -> &[S] {
        &self.eigenvalues
    }

    /// Row-major matrix whose column i is the i-th eigenvector.
    pub fn eigenvectors(&self) -> &[S] {
        &self.eigenvectors
    }

    pub fn eigenvector(&self, i: usize) -> Vec<S> {
        (0..self.dim)
            .map(|r| self.eigenvectors[r * self.dim + i])
            .collect()
    }

    /// Max-norm of `A v_i - lambda_i v_i` over all eigenpairs.
    pub fn max_residual(&self, a: &SymmetricMatrix<S>) -> S {
        let n = self.dim;
        let mut worst = S::zero();
        for i in 0..n {
            for r in 0..n {
                let mut acc = S::zero();
                for c in 0..n {
                    acc += a.get(r, c) * self.eigenvectors[c * n + i];
                }
                acc -= self.eigenvalues[i] * self.eigenvectors[r * n + i];
                worst = worst.max(acc.abs());
            }
        }
        worst
    }

    /// Max-norm of `V^T V - I`.
    pub fn max_orthonormality_defect(&self) -> S {
        let n = self.dim;
        let mut worst = S::zero();
        for i in 0..n {
            for j in 0..n {
                let mut dot = S::zero();
                for r in 0..n {
                    dot += self.eigenvectors[r * n + i] * self.eigenvectors[r * n + j];
                }
                let target = if i == j { S::one() } else { S::zero() };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Diagonalize a symmetric matrix with cyclic Jacobi sweeps until the
/// largest off-diagonal magnitude drops below `tol`. Eigenpairs come back
/// sorted by ascending eigenvalue; the result is deterministic for a given
/// input.
pub fn sym_eigh<S: Scalar>(a: &SymmetricMatrix<S>, tol: S) -> Result<Spectrum<S>> {
    if !a.is_finite() {
        return Err(Error::Numeric(
            "eigendecomposition of non-finite matrix".to_string(),
        ));
    }
    let n = a.dim();
    let mut m: Vec<S> = a.data().to_vec();
    let mut v = vec![S::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = S::one();
    }

    if n > 1 {
        let mut converged = false;
        for _sweep in 0..MAX_SWEEPS {
            let mut off_max = S::zero();
            for p in 0..n - 1 {
                for q in p + 1..n {
                    off_max = off_max.max(m[p * n + q].abs());
                }
            }
            if off_max < tol {
                converged = true;
                break;
            }
            for p in 0..n - 1 {
                for q in p + 1..n {
                    rotate(&mut m, &mut v, n, p, q, tol);
                }
            }
        }
        if !converged {
            // Final check after the last sweep.
            let mut off_max = S::zero();
            for p in 0..n - 1 {
                for q in p + 1..n {
                    off_max = off_max.max(m[p * n + q].abs());
                }
            }
            if off_max >= tol {
                return Err(Error::Numeric(format!(
                    "Jacobi sweep limit reached with off-diagonal {}",
                    off_max
                )));
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[i * n + i]
            .partial_cmp(&m[j * n + j])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });

    let eigenvalues: Vec<S> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut eigenvectors = vec![S::zero(); n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            eigenvectors[r * n + new_col] = v[r * n + old_col];
        }
    }

    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
        dim: n,
    })
}

/// One Jacobi rotation annihilating `m[p][q]`, accumulated into `v`.
fn rotate<S: Scalar>(m: &mut [S], v: &mut [S], n: usize, p: usize, q: usize, tol: S) {
    let apq = m[p * n + q];
    if apq.abs() < tol * S::from_f64_lossy(0.01) {
        return;
    }
    let app = m[p * n + p];
    let aqq = m[q * n + q];
    let theta = (aqq - app) / (S::from_f64_lossy(2.0) * apq);
    let t = {
        let denom = theta.abs() + (S::one() + theta * theta).sqrt();
        let t = denom.recip();
        if theta < S::zero() {
            -t
        } else {
            t
        }
    };
    let c = (S::one() + t * t).sqrt().recip();
    let s = t * c;
    let tau = s / (S::one() + c);

    m[p * n + p] = app - t * apq;
    m[q * n + q] = aqq + t * apq;
    m[p * n + q] = S::zero();
    m[q * n + p] = S::zero();

    for j in 0..n {
        if j != p && j != q {
            let ajp = m[j * n + p];
            let ajq = m[j * n + q];
            let new_p = ajp - s * (ajq + tau * ajp);
            let new_q = ajq + s * (ajp - tau * ajq);
            m[j * n + p] = new_p;
            m[p * n + j] = new_p;
            m[j * n + q] = new_q;
            m[q * n + j] = new_q;
        }
    }
    for r in 0..n {
        let vrp = v[r * n + p];
        let vrq = v[r * n + q];
        v[r * n + p] = vrp - s * (vrq + tau * vrp);
        v[r * n + q] = vrq + s * (vrp - tau * vrq);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eigh(a: &SymmetricMatrix<f64>) -> Spectrum<f64> {
        sym_eigh(a, DEFAULT_EIGH_TOL).unwrap()
    }

    #[test]
    fn identity_spectrum() {
        let mut a = SymmetricMatrix::zeros(3);
        for i in 0..3 {
            a.set(i, i, 1.0);
        }
        let spec = eigh(&a);
        assert_eq!(spec.eigenvalues(), &[1.0, 1.0, 1.0]);
        assert!(spec.max_orthonormality_defect() < 1e-12);
    }

    #[test]
    fn two_by_two_offdiag() {
        let mut a = SymmetricMatrix::zeros(2);
        a.set(0, 1, 1.0);
        let spec = eigh(&a);
        assert!((spec.eigenvalues()[0] + 1.0).abs() < 1e-12);
        assert!((spec.eigenvalues()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_symmetric_residual() {
        // Simple deterministic pseudo-random fill.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        let n = 16;
        let mut a = SymmetricMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                a.set(i, j, next());
            }
        }
        let spec = eigh(&a);
        assert!(spec.max_residual(&a) < 1e-10);
        assert!(spec.max_orthonormality_defect() < 1e-10);
        for w in spec.eigenvalues().windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn path3_laplacian_eigenvalues() {
        use crate::graph::Graph;
        let g = Graph::new(3, vec![(0, 1), (1, 2)], vec![0; 3], vec![0; 2], vec![]).unwrap();
        let spec = eigh(&g.normalized_laplacian());
        let expect = [0.0, 1.0, 2.0];
        for (got, want) in spec.eigenvalues().iter().zip(expect) {
            assert!((got - want).abs() < 1e-10, "{} vs {}", got, want);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = SymmetricMatrix::zeros(2);
        a.set(0, 1, f64::NAN);
        assert!(sym_eigh(&a, 1e-12).is_err());
    }

    #[test]
    fn single_precision_solve() {
        let mut a: SymmetricMatrix<f32> = SymmetricMatrix::zeros(3);
        a.set(0, 0, 2.0);
        a.set(1, 1, 1.0);
        a.set(2, 2, 3.0);
        a.set(0, 1, 0.5);
        a.set(1, 2, -0.25);
        let spec = sym_eigh(&a, 1e-6f32).unwrap();
        assert!(spec.max_residual(&a) < 1e-5);
        assert!(spec.max_orthonormality_defect() < 1e-5);
    }
}
