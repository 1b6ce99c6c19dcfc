//! Dense row-major `f64` matrices and the small amount of linear algebra the
//! rest of the crate needs: products, Frobenius geometry, column-stacking
//! vectorization, Kronecker products, and a Householder thin-QR.

use crate::error::GeometryError;

/// A dense matrix with row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Mat::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from a flat row-major buffer.
    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, GeometryError> {
        if data.len() != rows * cols {
            return Err(GeometryError::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GeometryError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(GeometryError::DimensionMismatch { expected: c, found: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(Mat { rows: r, cols: c, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Parses the CLI matrix syntax `a,b;c,d` (rows separated by `;`).
    pub fn parse(text: &str) -> Result<Self, GeometryError> {
        let mut rows = Vec::new();
        for row in text.split(';') {
            let entries: Result<Vec<f64>, _> = row
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| GeometryError::Parse(t.trim().to_string())))
                .collect();
            rows.push(entries?);
        }
        Self::from_rows(&rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul: inner dimensions differ");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// `self * other * self^T`, the congruence transformation.
    pub fn congruence(&self, other: &Mat) -> Mat {
        self.matmul(other).matmul(&self.transpose())
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, factor: f64) -> Mat {
        let data = self.data.iter().map(|a| a * factor).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn add_in_place(&mut self, other: &Mat, factor: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn frobenius_inner(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `(A + A^T) / 2`.
    pub fn symmetrize(&self) -> Mat {
        assert!(self.is_square());
        Mat::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    /// Deviation from symmetry relative to `max(1, ||A||_F)`.
    pub fn asymmetry(&self) -> f64 {
        let mut dev = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                dev = dev.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        dev / self.frobenius_norm().max(1.0)
    }

    /// Stacks the columns of the matrix into a single vector.
    pub fn vec_cols(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.rows * self.cols);
        for j in 0..self.cols {
            for i in 0..self.rows {
                v.push(self[(i, j)]);
            }
        }
        v
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Mat) -> Mat {
        let mut out = Mat::zeros(self.rows * other.rows, self.cols * other.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self[(i, j)];
                for k in 0..other.rows {
                    for l in 0..other.cols {
                        out[(i * other.rows + k, j * other.cols + l)] = a * other[(k, l)];
                    }
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    /// Thin QR factorization of an `m x k` matrix with `m >= k`, returning `Q`
    /// (`m x k`, orthonormal columns) with the convention `diag(R) >= 0` so the
    /// factorization is unique and QR of an already-orthonormal matrix returns
    /// it unchanged up to roundoff.
    pub fn qr_thin(&self) -> Mat {
        let (m, k) = (self.rows, self.cols);
        assert!(m >= k, "qr_thin expects a tall matrix");
        let mut r = self.clone();
        // Householder vectors stored per column.
        let mut vs: Vec<Vec<f64>> = Vec::with_capacity(k);
        for j in 0..k {
            let mut v: Vec<f64> = (j..m).map(|i| r[(i, j)]).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
                v[0] += sign * norm;
                let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if vnorm > 0.0 {
                    for x in v.iter_mut() {
                        *x /= vnorm;
                    }
                    // Apply the reflector to the trailing block of R.
                    for c in j..k {
                        let dot: f64 = (j..m).map(|i| v[i - j] * r[(i, c)]).sum();
                        for i in j..m {
                            r[(i, c)] -= 2.0 * v[i - j] * dot;
                        }
                    }
                }
            }
            vs.push(v);
        }
        // Form Q by applying the reflectors to the first k identity columns.
        let mut q = Mat::zeros(m, k);
        for j in 0..k {
            q[(j, j)] = 1.0;
        }
        for j in (0..k).rev() {
            let v = &vs[j];
            if v.iter().all(|&x| x == 0.0) {
                continue;
            }
            for c in 0..k {
                let dot: f64 = (j..m).map(|i| v[i - j] * q[(i, c)]).sum();
                for i in j..m {
                    q[(i, c)] -= 2.0 * v[i - j] * dot;
                }
            }
        }
        // Sign fix: make diag(R) nonnegative.
        for j in 0..k {
            if r[(j, j)] < 0.0 {
                for i in 0..m {
                    q[(i, j)] = -q[(i, j)];
                }
            }
        }
        q
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Column-stacking vectorization, `vec(A)`.
pub fn vec(a: &Mat) -> Vec<f64> {
    a.vec_cols()
}

/// The matrix `W ⊗ W` that represents `S ↦ W·S·W^T` on column-stacked
/// coordinates: `vec(W·S·W^T) = (W ⊗ W)·vec(S)`.
pub fn bimap_as_kron(w: &Mat) -> Mat {
    w.kron(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec_stacks_columns() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(vec(&a), [1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn kron_of_identity() {
        let i2 = Mat::identity(2);
        assert_eq!(i2.kron(&i2), Mat::identity(4));
    }

    #[test]
    fn parse_round_trips_shift_matrix() {
        let w = Mat::parse("1,0.5;0.5,1").unwrap();
        assert_eq!(w[(0, 1)], 0.5);
        assert_eq!(w[(1, 1)], 1.0);
        assert!(Mat::parse("1,x;0,1").is_err());
    }

    #[test]
    fn qr_thin_gives_orthonormal_columns() {
        let a = Mat::from_fn(5, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let q = a.qr_thin();
        let qtq = q.transpose().matmul(&q);
        assert!(qtq.sub(&Mat::identity(3)).frobenius_norm() < 1e-12);
    }

    #[test]
    fn qr_thin_is_identity_on_orthonormal_input() {
        let a = Mat::from_fn(4, 2, |i, j| {
            if (i, j) == (0, 0) || (i, j) == (2, 1) {
                1.0
            } else {
                0.0
            }
        });
        let q = a.qr_thin();
        assert!(q.sub(&a).frobenius_norm() < 1e-14);
    }
}
