//! Geometry of the cone of symmetric positive definite matrices.
//!
//! Two Riemannian structures are implemented side by side:
//!
//! * the **log-Euclidean metric**, under which the cone becomes a flat vector
//!   space through the matrix logarithm — distances, means, and geodesics all
//!   have closed forms:
//!   `d(S₁, S₂) = ‖log S₁ − log S₂‖_F`,
//!   `mean(B) = exp(|B|⁻¹ Σ log Sᵢ)`,
//!   `γ(t) = exp((1−t)·log S₁ + t·log S₂)`;
//! * the **affine-invariant metric**, invariant under congruence
//!   transformations, with
//!   `d(S₁, S₂) = ‖log(S₁^{-1/2} S₂ S₁^{-1/2})‖_F` and a Fréchet mean that
//!   only exists as the fixed point of an iteration.
//!
//! Under the log-Euclidean metric parallel transport is the identity map;
//! under the affine-invariant metric it is the congruence `s ↦ E·s·Eᵀ` with
//! `E = (S₁·S₂⁻¹)^{1/2}`.
//!
//! All values are immutable; every operation is a pure function.

use crate::eig::{sym_eig, EigDecomp};
use crate::error::GeometryError;
use crate::mat::Mat;

/// Relative symmetry tolerance for constructors.
const SYM_TOL: f64 = 1e-12;
/// Eigenvalue ratio below which a matrix is rejected as numerically singular.
const PD_RATIO: f64 = 1e-12;
/// Default iteration cap for the affine-invariant mean.
pub const AIRM_MEAN_MAX_ITER: usize = 100;
/// Default step-norm tolerance for the affine-invariant mean.
pub const AIRM_MEAN_TOL: f64 = 1e-10;

/// Choice of Riemannian metric on the cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    LogEuclidean,
    AffineInvariant,
}

/// A symmetric matrix: a tangent vector, a matrix logarithm, or a gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    mat: Mat,
}

impl SymMatrix {
    /// Validates symmetry to relative tolerance `1e-12`, then symmetrizes
    /// exactly so downstream arithmetic never sees the residual skew.
    pub fn new(mat: Mat) -> Result<Self, GeometryError> {
        if !mat.is_square() {
            return Err(GeometryError::NotSquare { rows: mat.rows(), cols: mat.cols() });
        }
        if !mat.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        let dev = mat.asymmetry();
        if dev > SYM_TOL {
            return Err(GeometryError::NotSymmetric { deviation: dev });
        }
        Ok(SymMatrix { mat: mat.symmetrize() })
    }

    pub(crate) fn from_symmetric(mat: Mat) -> Self {
        debug_assert!(mat.asymmetry() <= 1e-9);
        SymMatrix { mat: mat.symmetrize() }
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix { mat: Mat::zeros(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn mat(&self) -> &Mat {
        &self.mat
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.frobenius_norm()
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix { mat: self.mat.add(&other.mat) }
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix { mat: self.mat.sub(&other.mat) }
    }

    pub fn scale(&self, factor: f64) -> SymMatrix {
        SymMatrix { mat: self.mat.scale(factor) }
    }

    /// Matrix exponential; the inverse of [`SpdMatrix::log`].
    pub fn exp(&self) -> Result<SpdMatrix, GeometryError> {
        let e = sym_eig(&self.mat)?;
        let lambdas: Vec<f64> = e.eigenvalues.iter().map(|l| l.exp()).collect();
        if lambdas.iter().any(|l| !l.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(SpdMatrix::from_parts(e.eigenvectors, lambdas))
    }
}

/// A symmetric positive definite matrix.
///
/// Construction symmetrizes via `(A + Aᵀ)/2`, eigendecomposes, and rejects
/// inputs whose smallest eigenvalue is at most `1e-12` times the largest.
/// The decomposition is cached, so matrix functions (`log`, powers, inverses)
/// cost a single reassembly rather than a fresh eigensolve.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    mat: Mat,
    eig: EigDecomp,
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.mat == other.mat
    }
}

impl SpdMatrix {
    pub fn new(mat: Mat) -> Result<Self, GeometryError> {
        if !mat.is_square() {
            return Err(GeometryError::NotSquare { rows: mat.rows(), cols: mat.cols() });
        }
        if !mat.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        let dev = mat.asymmetry();
        if dev > SYM_TOL {
            return Err(GeometryError::NotSymmetric { deviation: dev });
        }
        let sym = mat.symmetrize();
        let eig = sym_eig(&sym)?;
        let max = eig.eigenvalues[0];
        let min = *eig.eigenvalues.last().expect("non-empty spectrum");
        if !min.is_finite() || min <= 0.0 || min <= PD_RATIO * max {
            return Err(GeometryError::NotPositiveDefinite { eigenvalue: min });
        }
        Ok(SpdMatrix { mat: sym, eig })
    }

    /// Builds a matrix from an orthogonal basis and strictly positive
    /// eigenvalues that are already known, skipping the eigensolve.
    pub(crate) fn from_parts(eigenvectors: Mat, eigenvalues: Vec<f64>) -> Self {
        debug_assert!(eigenvalues.iter().all(|&l| l > 0.0));
        let eig = EigDecomp { eigenvalues, eigenvectors };
        let mat = eig.assemble(|l| l).symmetrize();
        SpdMatrix { mat, eig }
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix { mat: Mat::identity(dim), eig: sym_eig(&Mat::identity(dim)).unwrap() }
    }

    pub fn from_diag(diag: &[f64]) -> Result<Self, GeometryError> {
        Self::new(Mat::from_diag(diag))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GeometryError> {
        Self::new(Mat::from_rows(rows)?)
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn mat(&self) -> &Mat {
        &self.mat
    }

    pub fn eig(&self) -> &EigDecomp {
        &self.eig
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eig.eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        *self.eig.eigenvalues.last().unwrap()
    }

    /// Principal matrix logarithm, `U · diag(ln λ) · Uᵀ`.
    pub fn log(&self) -> SymMatrix {
        SymMatrix::from_symmetric(self.eig.assemble(f64::ln))
    }

    /// Matrix power `S^p` through the spectrum; positive definite for any
    /// real exponent.
    pub fn powf(&self, p: f64) -> SpdMatrix {
        let lambdas: Vec<f64> = self.eig.eigenvalues.iter().map(|l| l.powf(p)).collect();
        SpdMatrix::from_parts(self.eig.eigenvectors.clone(), lambdas)
    }

    pub fn sqrt(&self) -> SpdMatrix {
        self.powf(0.5)
    }

    pub fn inv_sqrt(&self) -> SpdMatrix {
        self.powf(-0.5)
    }

    pub fn inv(&self) -> SpdMatrix {
        self.powf(-1.0)
    }
}

/// Number of free coordinates of a symmetric `dim`×`dim` matrix.
pub fn sym_coord_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Frobenius-isometric coordinates of a symmetric matrix: the upper triangle
/// read row by row, off-diagonal entries scaled by √2 so the Euclidean inner
/// product of coordinate vectors equals the Frobenius inner product of the
/// matrices.
pub fn sym_to_coords(x: &SymMatrix) -> Vec<f64> {
    let d = x.dim();
    let mut coords = Vec::with_capacity(sym_coord_len(d));
    for i in 0..d {
        for j in i..d {
            if i == j {
                coords.push(x.mat()[(i, i)]);
            } else {
                coords.push(std::f64::consts::SQRT_2 * x.mat()[(i, j)]);
            }
        }
    }
    coords
}

/// Inverse of [`sym_to_coords`].
pub fn coords_to_sym(dim: usize, coords: &[f64]) -> Result<SymMatrix, GeometryError> {
    if coords.len() != sym_coord_len(dim) {
        return Err(GeometryError::DimensionMismatch {
            expected: sym_coord_len(dim),
            found: coords.len(),
        });
    }
    let mut mat = Mat::zeros(dim, dim);
    let mut k = 0;
    for i in 0..dim {
        for j in i..dim {
            if i == j {
                mat[(i, i)] = coords[k];
            } else {
                let v = coords[k] / std::f64::consts::SQRT_2;
                mat[(i, j)] = v;
                mat[(j, i)] = v;
            }
            k += 1;
        }
    }
    Ok(SymMatrix { mat })
}

/// Matrix exponential of a symmetric matrix. Free-function alias of
/// [`SymMatrix::exp`].
pub fn spd_exp(x: &SymMatrix) -> Result<SpdMatrix, GeometryError> {
    x.exp()
}

/// Principal logarithm of a positive definite matrix. Free-function alias of
/// [`SpdMatrix::log`].
pub fn spd_log(s: &SpdMatrix) -> SymMatrix {
    s.log()
}

fn check_same_dim(a: usize, b: usize) -> Result<(), GeometryError> {
    if a != b {
        return Err(GeometryError::DimensionMismatch { expected: a, found: b });
    }
    Ok(())
}

/// Logarithmic multiplication `S₁ ⊙ S₂ = exp(log S₁ + log S₂)`; the
/// commutative group product of the log-Euclidean structure.
pub fn log_mult(s1: &SpdMatrix, s2: &SpdMatrix) -> Result<SpdMatrix, GeometryError> {
    check_same_dim(s1.dim(), s2.dim())?;
    s1.log().add(&s2.log()).exp()
}

/// Logarithmic scalar multiplication `λ ⊗ S = exp(λ·log S) = S^λ`.
pub fn log_scale(lambda: f64, s: &SpdMatrix) -> SpdMatrix {
    s.powf(lambda)
}

/// Log-Euclidean distance `‖log S₁ − log S₂‖_F`.
pub fn lem_distance(s1: &SpdMatrix, s2: &SpdMatrix) -> Result<f64, GeometryError> {
    check_same_dim(s1.dim(), s2.dim())?;
    Ok(s1.log().sub(&s2.log()).frobenius_norm())
}

/// Arithmetic mean of the logarithms of a batch.
pub fn mean_log(batch: &[SpdMatrix]) -> Result<SymMatrix, GeometryError> {
    let first = batch.first().ok_or(GeometryError::EmptyBatch)?;
    let dim = first.dim();
    let mut acc = Mat::zeros(dim, dim);
    for s in batch {
        check_same_dim(dim, s.dim())?;
        acc.add_in_place(s.log().mat(), 1.0);
    }
    Ok(SymMatrix::from_symmetric(acc.scale(1.0 / batch.len() as f64)))
}

/// Log-Euclidean Fréchet mean, `exp(|B|⁻¹ Σ log Sᵢ)`.
pub fn lem_frechet_mean(batch: &[SpdMatrix]) -> Result<SpdMatrix, GeometryError> {
    mean_log(batch)?.exp()
}

/// Logarithm of a raw matrix that is positive definite by construction
/// (congruences of positive definite matrices), with a domain check.
fn log_of_pd_mat(m: &Mat) -> Result<Mat, GeometryError> {
    let e = sym_eig(&m.symmetrize())?;
    let min = *e.eigenvalues.last().unwrap();
    if min <= 0.0 {
        return Err(GeometryError::NotPositiveDefinite { eigenvalue: min });
    }
    Ok(e.assemble(f64::ln))
}

/// Affine-invariant distance `‖log(S₁^{-1/2} S₂ S₁^{-1/2})‖_F`.
pub fn airm_distance(s1: &SpdMatrix, s2: &SpdMatrix) -> Result<f64, GeometryError> {
    check_same_dim(s1.dim(), s2.dim())?;
    let whitened = s1.inv_sqrt().mat().congruence(s2.mat());
    Ok(log_of_pd_mat(&whitened)?.frobenius_norm())
}

/// Affine-invariant exponential map,
/// `exp_P(v) = P^{1/2} exp(P^{-1/2} v P^{-1/2}) P^{1/2}`.
pub fn airm_exp(p: &SpdMatrix, v: &SymMatrix) -> Result<SpdMatrix, GeometryError> {
    check_same_dim(p.dim(), v.dim())?;
    let inner = SymMatrix::new(p.inv_sqrt().mat().congruence(v.mat()).symmetrize())?;
    let e = inner.exp()?;
    SpdMatrix::new(p.sqrt().mat().congruence(e.mat()).symmetrize())
}

/// Affine-invariant logarithm map,
/// `log_P(S) = P^{1/2} log(P^{-1/2} S P^{-1/2}) P^{1/2}`.
pub fn airm_log(p: &SpdMatrix, s: &SpdMatrix) -> Result<SymMatrix, GeometryError> {
    check_same_dim(p.dim(), s.dim())?;
    let inner = log_of_pd_mat(&p.inv_sqrt().mat().congruence(s.mat()))?;
    Ok(SymMatrix::from_symmetric(p.sqrt().mat().congruence(&inner).symmetrize()))
}

/// Affine-invariant inner product `⟨u, v⟩_P = tr(P⁻¹·u·P⁻¹·v)`.
pub fn airm_inner(p: &SpdMatrix, u: &SymMatrix, v: &SymMatrix) -> Result<f64, GeometryError> {
    check_same_dim(p.dim(), u.dim())?;
    check_same_dim(p.dim(), v.dim())?;
    let pinv = p.inv();
    Ok(pinv.mat().matmul(u.mat()).matmul(pinv.mat()).matmul(v.mat()).trace())
}

/// Geodesic between `s1` and `s2` under the chosen metric:
/// `exp((1−t)·log S₁ + t·log S₂)` (log-Euclidean) or
/// `S₁^{1/2} (S₁^{-1/2} S₂ S₁^{-1/2})^t S₁^{1/2}` (affine-invariant).
pub fn geodesic(
    s1: &SpdMatrix,
    s2: &SpdMatrix,
    t: f64,
    metric: Metric,
) -> Result<SpdMatrix, GeometryError> {
    check_same_dim(s1.dim(), s2.dim())?;
    match metric {
        Metric::LogEuclidean => s1.log().scale(1.0 - t).add(&s2.log().scale(t)).exp(),
        Metric::AffineInvariant => {
            let inner = SpdMatrix::new(s1.inv_sqrt().mat().congruence(s2.mat()).symmetrize())?;
            SpdMatrix::new(s1.sqrt().mat().congruence(inner.powf(t).mat()).symmetrize())
        }
    }
}

/// Affine-invariant Fréchet mean by fixed-point iteration
/// `μ ← μ^{1/2} exp(|B|⁻¹ Σ log(μ^{-1/2} Sᵢ μ^{-1/2})) μ^{1/2}`,
/// started at the log-Euclidean mean and stopped when the log-chart step
/// `‖log μ_{t+1} − log μ_t‖_F` drops below `tol`.
pub fn airm_frechet_mean(
    batch: &[SpdMatrix],
    max_iter: usize,
    tol: f64,
) -> Result<SpdMatrix, GeometryError> {
    if batch.is_empty() {
        return Err(GeometryError::EmptyBatch);
    }
    let mut mu = lem_frechet_mean(batch)?;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let inv_sqrt = mu.inv_sqrt();
        let dim = mu.dim();
        let mut tangent = Mat::zeros(dim, dim);
        for s in batch {
            check_same_dim(dim, s.dim())?;
            tangent.add_in_place(&log_of_pd_mat(&inv_sqrt.mat().congruence(s.mat()))?, 1.0);
        }
        tangent = tangent.scale(1.0 / batch.len() as f64);
        let step = SymMatrix::from_symmetric(tangent).exp()?;
        let next = SpdMatrix::new(mu.sqrt().mat().congruence(step.mat()).symmetrize())?;
        residual = next.log().sub(&mu.log()).frobenius_norm();
        mu = next;
        if residual < tol {
            return Ok(mu);
        }
    }
    Err(GeometryError::MeanNonConvergence {
        iterations: max_iter,
        residual,
        last_iterate: mu.mat().data().to_vec(),
    })
}

/// Parallel transport of the tangent vector `v` for the pair `(s1, s2)`.
///
/// Log-Euclidean transport is the identity map. Affine-invariant transport is
/// the congruence `E·v·Eᵀ` with `E = (S₁·S₂⁻¹)^{1/2}`, which satisfies
/// `E·S₂·Eᵀ = S₁` and so carries the inner product at `S₂` to the one at `S₁`.
pub fn parallel_transport(
    s1: &SpdMatrix,
    s2: &SpdMatrix,
    v: &SymMatrix,
    metric: Metric,
) -> Result<SymMatrix, GeometryError> {
    check_same_dim(s1.dim(), s2.dim())?;
    check_same_dim(s1.dim(), v.dim())?;
    match metric {
        Metric::LogEuclidean => Ok(v.clone()),
        Metric::AffineInvariant => {
            let e = transport_factor(s1, s2)?;
            Ok(SymMatrix::from_symmetric(e.congruence(v.mat()).symmetrize()))
        }
    }
}

/// The principal square root `(S₁·S₂⁻¹)^{1/2}`, computed through the similar
/// symmetric matrix `S₁^{1/2}·S₂⁻¹·S₁^{1/2}`.
fn transport_factor(s1: &SpdMatrix, s2: &SpdMatrix) -> Result<Mat, GeometryError> {
    let s1_sqrt = s1.sqrt();
    let b = SpdMatrix::new(s1_sqrt.mat().congruence(s2.inv().mat()).symmetrize())?;
    Ok(s1_sqrt.mat().matmul(b.sqrt().mat()).matmul(s1.inv_sqrt().mat()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(rows: &[Vec<f64>]) -> SpdMatrix {
        SpdMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn constructor_rejects_asymmetric_and_indefinite() {
        let asym = Mat::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(SpdMatrix::new(asym), Err(GeometryError::NotSymmetric { .. })));
        let indef = Mat::from_diag(&[1.0, -0.5]);
        match SpdMatrix::new(indef) {
            Err(GeometryError::NotPositiveDefinite { eigenvalue }) => {
                assert!((eigenvalue + 0.5).abs() < 1e-14)
            }
            other => panic!("expected positive-definiteness error, got {other:?}"),
        }
    }

    #[test]
    fn log_of_identity_is_zero() {
        let s = SpdMatrix::identity(3);
        assert_eq!(s.log().frobenius_norm(), 0.0);
    }

    #[test]
    fn log_of_diagonal_exponentials() {
        let e = std::f64::consts::E;
        let s = SpdMatrix::from_diag(&[e, e * e]).unwrap();
        let l = s.log();
        assert!((l.mat()[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((l.mat()[(1, 1)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn log_mult_cancels_inverse() {
        let s = spd(&[vec![2.0, 0.3], vec![0.3, 1.0]]);
        let prod = log_mult(&s, &s.inv()).unwrap();
        assert!(prod.mat().sub(&Mat::identity(2)).frobenius_norm() < 1e-12);
    }

    #[test]
    fn log_scale_squares_diagonals() {
        let s = SpdMatrix::from_diag(&[2.0, 3.0]).unwrap();
        let sq = log_scale(2.0, &s);
        assert!((sq.mat()[(0, 0)] - 4.0).abs() < 1e-12);
        assert!((sq.mat()[(1, 1)] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn lem_distance_identity_to_scaled_identity() {
        let e = std::f64::consts::E;
        let d = lem_distance(&SpdMatrix::identity(2), &SpdMatrix::from_diag(&[e, e]).unwrap())
            .unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn lem_distance_rejects_dim_mismatch() {
        let a = SpdMatrix::identity(2);
        let b = SpdMatrix::identity(3);
        assert!(matches!(
            lem_distance(&a, &b),
            Err(GeometryError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn frechet_mean_of_singleton_is_the_element() {
        let s = spd(&[vec![3.0, 0.7], vec![0.7, 1.5]]);
        let mean = lem_frechet_mean(std::slice::from_ref(&s)).unwrap();
        assert!(mean.mat().sub(s.mat()).frobenius_norm() < 1e-12);
    }

    #[test]
    fn frechet_mean_of_inverse_pair_is_identity() {
        let s = spd(&[vec![3.0, 0.7], vec![0.7, 1.5]]);
        let mean = lem_frechet_mean(&[s.clone(), s.inv()]).unwrap();
        assert!(mean.mat().sub(&Mat::identity(2)).frobenius_norm() < 1e-10);
    }

    #[test]
    fn frechet_mean_commuting_diagonals() {
        let a = SpdMatrix::from_diag(&[1.0, 4.0]).unwrap();
        let b = SpdMatrix::from_diag(&[4.0, 1.0]).unwrap();
        let mean = lem_frechet_mean(&[a.clone(), b.clone()]).unwrap();
        assert!((mean.mat()[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((mean.mat()[(1, 1)] - 2.0).abs() < 1e-12);
        let airm = airm_frechet_mean(&[a, b], AIRM_MEAN_MAX_ITER, AIRM_MEAN_TOL).unwrap();
        assert!(airm.mat().sub(mean.mat()).frobenius_norm() < 1e-8);
    }

    #[test]
    fn frechet_mean_rejects_empty_batch() {
        assert!(matches!(lem_frechet_mean(&[]), Err(GeometryError::EmptyBatch)));
    }

    #[test]
    fn airm_distance_matches_lem_on_commuting_pair() {
        let e = std::f64::consts::E;
        let d = airm_distance(&SpdMatrix::identity(2), &SpdMatrix::from_diag(&[e, e]).unwrap())
            .unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn airm_exp_log_round_trip() {
        let p = spd(&[vec![2.0, 0.4], vec![0.4, 1.2]]);
        let s = spd(&[vec![1.0, -0.2], vec![-0.2, 3.0]]);
        let v = airm_log(&p, &s).unwrap();
        let back = airm_exp(&p, &v).unwrap();
        assert!(back.mat().sub(s.mat()).frobenius_norm() < 1e-9);
    }

    #[test]
    fn geodesic_endpoints_and_lem_midpoint() {
        let a = spd(&[vec![2.0, 0.5], vec![0.5, 1.0]]);
        let b = spd(&[vec![1.0, -0.3], vec![-0.3, 2.5]]);
        for metric in [Metric::LogEuclidean, Metric::AffineInvariant] {
            let g0 = geodesic(&a, &b, 0.0, metric).unwrap();
            let g1 = geodesic(&a, &b, 1.0, metric).unwrap();
            assert!(g0.mat().sub(a.mat()).frobenius_norm() < 1e-10);
            assert!(g1.mat().sub(b.mat()).frobenius_norm() < 1e-10);
        }
        let e = std::f64::consts::E;
        let lo = SpdMatrix::identity(2);
        let hi = SpdMatrix::from_diag(&[e * e, e * e]).unwrap();
        let mid = geodesic(&lo, &hi, 0.5, Metric::LogEuclidean).unwrap();
        assert!((mid.mat()[(0, 0)] - e).abs() < 1e-12);
        assert!((mid.mat()[(1, 1)] - e).abs() < 1e-12);
    }

    #[test]
    fn airm_mean_of_single_matrix_converges_immediately() {
        let s = spd(&[vec![2.0, 0.1], vec![0.1, 0.5]]);
        let mean = airm_frechet_mean(std::slice::from_ref(&s), 1, 1e-10).unwrap();
        assert!(mean.mat().sub(s.mat()).frobenius_norm() < 1e-12);
    }

    #[test]
    fn airm_mean_of_inverse_pair_is_identity() {
        let s = spd(&[vec![2.0, 0.6], vec![0.6, 1.4]]);
        let mean =
            airm_frechet_mean(&[s.clone(), s.inv()], AIRM_MEAN_MAX_ITER, AIRM_MEAN_TOL).unwrap();
        assert!(mean.mat().sub(&Mat::identity(2)).frobenius_norm() < 1e-9);
    }

    #[test]
    fn airm_mean_nonconvergence_carries_last_iterate() {
        let a = spd(&[vec![5.0, 0.9], vec![0.9, 0.4]]);
        let b = spd(&[vec![0.3, -0.1], vec![-0.1, 6.0]]);
        match airm_frechet_mean(&[a, b], 1, 1e-300) {
            Err(GeometryError::MeanNonConvergence { iterations, residual, last_iterate }) => {
                assert_eq!(iterations, 1);
                assert!(residual.is_finite());
                assert_eq!(last_iterate.len(), 4);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn lem_transport_is_identity_and_airm_fixes_base_point() {
        let a = spd(&[vec![2.0, 0.5], vec![0.5, 1.0]]);
        let b = spd(&[vec![1.5, -0.2], vec![-0.2, 0.8]]);
        let v = SymMatrix::new(Mat::from_rows(&[vec![0.3, 0.1], vec![0.1, -0.4]]).unwrap()).unwrap();
        let lem = parallel_transport(&a, &b, &v, Metric::LogEuclidean).unwrap();
        assert_eq!(lem, v);
        let same = parallel_transport(&a, &a, &v, Metric::AffineInvariant).unwrap();
        assert!(same.mat().sub(v.mat()).frobenius_norm() < 1e-10);
    }

    #[test]
    fn airm_transport_factor_carries_s2_to_s1() {
        let a = spd(&[vec![3.0, 0.8], vec![0.8, 2.0]]);
        let b = spd(&[vec![1.0, -0.4], vec![-0.4, 1.7]]);
        let e = transport_factor(&a, &b).unwrap();
        let mapped = e.congruence(b.mat());
        assert!(mapped.sub(a.mat()).frobenius_norm() < 1e-10);
    }
}
