//! Symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Jacobi is slow compared to tridiagonalization-based solvers but it is
//! simple, deterministic, and accurate to a small multiple of machine
//! precision, which is what the rest of the crate needs at dimensions
//! up to a few dozen. Eigenvalues are returned in descending order and each
//! eigenvector is sign-fixed so that its largest-magnitude component is
//! positive, making every quantity derived from a decomposition reproducible.

use crate::error::GeometryError;
use crate::mat::Mat;

const MAX_SWEEPS: usize = 100;

/// An eigendecomposition `A = U · diag(λ) · U^T` of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EigDecomp {
    /// Eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Orthogonal matrix whose columns are the corresponding eigenvectors.
    pub eigenvectors: Mat,
}

impl EigDecomp {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Reassembles `U · diag(f(λ)) · U^T`.
    pub fn assemble(&self, f: impl Fn(f64) -> f64) -> Mat {
        let n = self.dim();
        let u = &self.eigenvectors;
        let mut out = Mat::zeros(n, n);
        for k in 0..n {
            let fv = f(self.eigenvalues[k]);
            if fv == 0.0 {
                continue;
            }
            for i in 0..n {
                let uik = u[(i, k)];
                for j in 0..n {
                    out[(i, j)] += fv * uik * u[(j, k)];
                }
            }
        }
        out
    }
}

/// Eigendecomposition of a symmetric matrix via cyclic Jacobi sweeps.
///
/// The input is symmetrized before iteration; callers should validate
/// symmetry themselves if asymmetry is an error in their context.
pub fn sym_eig(a: &Mat) -> Result<EigDecomp, GeometryError> {
    if !a.is_square() {
        return Err(GeometryError::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    if !a.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let n = a.rows();
    let mut m = a.symmetrize();
    let mut u = Mat::identity(n);

    let scale = m.frobenius_norm();
    if n > 1 && scale > 0.0 {
        let tol = 1e-15 * scale;
        let mut converged = false;
        for _sweep in 0..MAX_SWEEPS {
            let off = off_diagonal_norm(&m);
            if off <= tol {
                converged = true;
                break;
            }
            for p in 0..n - 1 {
                for q in p + 1..n {
                    rotate(&mut m, &mut u, p, q);
                }
            }
        }
        if !converged && off_diagonal_norm(&m) > tol {
            return Err(GeometryError::EigNonConvergence { norm: off_diagonal_norm(&m) });
        }
    }

    // Sort descending, carrying eigenvectors along.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&k| m[(k, k)]).collect();
    let mut eigenvectors = Mat::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        // Sign convention: largest-magnitude component positive.
        let mut pivot = 0;
        let mut best = 0.0f64;
        for i in 0..n {
            if u[(i, k)].abs() > best {
                best = u[(i, k)].abs();
                pivot = i;
            }
        }
        let sign = if u[(pivot, k)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            eigenvectors[(i, col)] = sign * u[(i, k)];
        }
    }

    Ok(EigDecomp { eigenvalues, eigenvectors })
}

fn off_diagonal_norm(m: &Mat) -> f64 {
    let n = m.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += 2.0 * m[(i, j)] * m[(i, j)];
        }
    }
    s.sqrt()
}

/// One Jacobi rotation zeroing `m[(p, q)]`.
fn rotate(m: &mut Mat, u: &mut Mat, p: usize, q: usize) {
    let apq = m[(p, q)];
    if apq == 0.0 {
        return;
    }
    let app = m[(p, p)];
    let aqq = m[(q, q)];
    let theta = (aqq - app) / (2.0 * apq);
    // Smaller-angle root of t^2 + 2·theta·t - 1 = 0 for stability.
    let t = if theta >= 0.0 {
        1.0 / (theta + (1.0 + theta * theta).sqrt())
    } else {
        -1.0 / (-theta + (1.0 + theta * theta).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let n = m.rows();

    for i in 0..n {
        let mip = m[(i, p)];
        let miq = m[(i, q)];
        m[(i, p)] = c * mip - s * miq;
        m[(i, q)] = s * mip + c * miq;
    }
    for j in 0..n {
        let mpj = m[(p, j)];
        let mqj = m[(q, j)];
        m[(p, j)] = c * mpj - s * mqj;
        m[(q, j)] = s * mpj + c * mqj;
    }
    // Exact zeros on the rotated pair keep the sweep numerically clean.
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
    for i in 0..n {
        let uip = u[(i, p)];
        let uiq = u[(i, q)];
        u[(i, p)] = c * uip - s * uiq;
        u[(i, q)] = s * uip + c * uiq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix_is_its_own_decomposition() {
        let d = Mat::from_diag(&[3.0, 1.0]);
        let e = sym_eig(&d).unwrap();
        assert_eq!(e.eigenvalues, [3.0, 1.0]);
        assert_eq!(e.eigenvectors, Mat::identity(2));
    }

    #[test]
    fn two_by_two_hand_solve() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1 with eigenvectors (1,1)/√2, (1,-1)/√2.
        let a = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = sym_eig(&a).unwrap();
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-14);
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.eigenvectors[(0, 0)] - inv_sqrt2).abs() < 1e-14);
        assert!((e.eigenvectors[(1, 0)] - inv_sqrt2).abs() < 1e-14);
        // Sign convention: first component of the second eigenvector positive.
        assert!((e.eigenvectors[(0, 1)] - inv_sqrt2).abs() < 1e-14);
        assert!((e.eigenvectors[(1, 1)] + inv_sqrt2).abs() < 1e-14);
    }

    #[test]
    fn random_eight_by_eight_reconstructs() {
        // Deterministic pseudo-random symmetric matrix.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let raw = Mat::from_fn(8, 8, |_, _| next() * 4.0);
        let a = raw.symmetrize();
        let e = sym_eig(&a).unwrap();
        let rebuilt = e.assemble(|x| x);
        let rel = rebuilt.sub(&a).frobenius_norm() / a.frobenius_norm();
        assert!(rel <= 1e-10, "reconstruction error {rel}");
        let u = &e.eigenvectors;
        let orth = u.transpose().matmul(u).sub(&Mat::identity(8)).frobenius_norm();
        assert!(orth <= 1e-10, "orthogonality defect {orth}");
        for k in 1..8 {
            assert!(e.eigenvalues[k - 1] >= e.eigenvalues[k]);
        }
    }

    #[test]
    fn one_by_one() {
        let e = sym_eig(&Mat::from_diag(&[4.0])).unwrap();
        assert_eq!(e.eigenvalues, [4.0]);
    }

    #[test]
    fn rejects_non_finite() {
        let a = Mat::from_rows(&[vec![1.0, f64::NAN], vec![f64::NAN, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(GeometryError::NonFinite)));
    }
}
