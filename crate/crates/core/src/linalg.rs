//! Dense real matrix kernel.
//!
//! Storage is `nalgebra::DMatrix<f64>`; this module adds the checked
//! operations the rest of the crate relies on: general eigenvalues,
//! Moore-Penrose pseudo-inverse, Kronecker products, definiteness tests and
//! the real embedding of Hermitian matrices.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real matrix.
pub type Matrix = DMatrix<f64>;

/// Largest dimension accepted by [`eig_general`].
pub const MAX_EIG_DIM: usize = 64;

const SCHUR_MAX_ITER: usize = 10_000;
const PINV_RELATIVE_CUTOFF: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 60;
const SYMMETRY_TOL: f64 = 1e-10;

/// Complex matrix stored as separate real and imaginary parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    #[serde(with = "rows")]
    pub re: Matrix,
    #[serde(with = "rows")]
    pub im: Matrix,
}

impl ComplexMatrix {
    pub fn new(re: Matrix, im: Matrix) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::ShapeMismatch(format!(
                "real part {:?} vs imaginary part {:?}",
                re.shape(),
                im.shape()
            )));
        }
        ensure_finite(&re)?;
        ensure_finite(&im)?;
        Ok(Self { re, im })
    }

    pub fn from_real(re: Matrix) -> Self {
        let im = Matrix::zeros(re.nrows(), re.ncols());
        Self { re, im }
    }

    pub fn nrows(&self) -> usize {
        self.re.nrows()
    }
}

pub fn ensure_finite(m: &Matrix) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

pub fn ensure_square(m: &Matrix) -> Result<usize> {
    if m.is_square() {
        Ok(m.nrows())
    } else {
        Err(Error::NonSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        })
    }
}

/// Builds a matrix from row-major nested slices. Rows must share a length.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::ShapeMismatch("ragged rows".into()));
    }
    let m = Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
    ensure_finite(&m)?;
    Ok(m)
}

/// Row-major nested representation, the inverse of [`from_rows`].
pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Serde adapter storing a [`Matrix`] as row-major nested arrays. Shapes
/// with zero rows read back as `0 x 0`.
pub mod rows {
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    use super::{from_rows, to_rows, Matrix};

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }
}

/// All eigenvalues of a real square matrix, with multiplicity.
///
/// Hessenberg reduction followed by implicitly shifted (Francis) QR. The
/// order is whatever the Schur form produces, which is deterministic for a
/// fixed input.
pub fn eig_general(m: &Matrix) -> Result<Vec<Complex64>> {
    let n = ensure_square(m)?;
    ensure_finite(m)?;
    if n > MAX_EIG_DIM {
        return Err(Error::DimensionTooLarge {
            dim: n,
            max: MAX_EIG_DIM,
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let schur = m
        .clone()
        .try_schur(f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or(Error::ConvergenceFailure)?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect())
}

/// Thin SVD by one-sided (Hestenes) Jacobi rotations, for `rows >= cols`.
///
/// Returns `(w, sigma, v)` with `m = w v^T`, where the columns of `w` are
/// orthogonal with norms `sigma` and `v` is orthogonal.
fn jacobi_svd(m: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let n = m.ncols();
    let mut w = m.clone();
    let mut v = Matrix::identity(n, n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    for i in 0..mat.nrows() {
                        let (x, y) = (mat[(i, p)], mat[(i, q)]);
                        mat[(i, p)] = c * x - s * y;
                        mat[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma = (0..n).map(|k| w.column(k).norm()).collect();
    (w, sigma, v)
}

/// Singular values of `m` (unordered).
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() >= m.ncols() {
        jacobi_svd(m).1
    } else {
        jacobi_svd(&m.transpose()).1
    }
}

/// Moore-Penrose pseudo-inverse. Singular values below `1e-10 * sigma_max`
/// are treated as zero.
pub fn pinv(m: &Matrix) -> Matrix {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Matrix::zeros(c, r);
    }
    if r < c {
        return pinv(&m.transpose()).transpose();
    }
    let (w, sigma, v) = jacobi_svd(m);
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let cutoff = PINV_RELATIVE_CUTOFF * sigma_max;
    let mut out = Matrix::zeros(c, r);
    for (k, &s) in sigma.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            // v_k u_k^T / s with u_k = w_k / s
            out += v.column(k) * w.column(k).transpose() / (s * s);
        }
    }
    out
}

/// Standard Kronecker product.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// `(m + m^T) / 2`.
pub fn sym_part(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `m - m^T`.
pub fn asymmetry(m: &Matrix) -> f64 {
    (m - m.transpose()).amax()
}

fn check_symmetric(m: &Matrix) -> Result<()> {
    ensure_square(m)?;
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL * (1.0 + m.norm()) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// True iff `m - margin * I` admits a Cholesky factorization. The input is
/// projected onto its symmetric part first.
///
/// Negative definiteness is `is_positive_definite(&-m, margin)`.
pub fn is_positive_definite(m: &Matrix, margin: f64) -> Result<bool> {
    check_symmetric(m)?;
    ensure_finite(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(true);
    }
    let shifted = sym_part(m) - Matrix::identity(n, n) * margin;
    Ok(Cholesky::new(shifted).is_some())
}

/// Extreme eigenvalues `(min, max)` of the symmetric part of `m`.
pub fn sym_eig_range(m: &Matrix) -> (f64, f64) {
    if m.nrows() == 0 {
        return (f64::INFINITY, f64::NEG_INFINITY);
    }
    let eig = SymmetricEigen::new(sym_part(m));
    (eig.eigenvalues.min(), eig.eigenvalues.max())
}

/// Real symmetric embedding `[[X, -Y], [Y, X]]` of a Hermitian `X + iY`.
///
/// The embedding is positive definite iff the Hermitian matrix is; each
/// eigenvalue appears twice.
pub fn hermitian_real_embedding(p: &ComplexMatrix) -> Result<Matrix> {
    let n = ensure_square(&p.re)?;
    let scale = SYMMETRY_TOL * (1.0 + p.re.norm() + p.im.norm());
    if asymmetry(&p.re) > scale || (&p.im + p.im.transpose()).amax() > scale {
        return Err(Error::NotHermitian);
    }
    let mut out = Matrix::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(&p.re);
    out.view_mut((n, n), (n, n)).copy_from(&p.re);
    out.view_mut((0, n), (n, n)).copy_from(&(-&p.im));
    out.view_mut((n, 0), (n, n)).copy_from(&p.im);
    Ok(out)
}

/// 2-norm condition number via singular values; infinite when singular.
pub fn condition_number(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = singular_values(m);
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sv.iter().copied().fold(0.0, f64::max);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Inverse of a square matrix whose condition number stays below `max_cond`.
pub fn checked_inverse(m: &Matrix, max_cond: f64) -> Result<Matrix> {
    ensure_square(m)?;
    let cond = condition_number(m);
    if !(cond <= max_cond) {
        return Err(Error::SingularCertificate { cond });
    }
    m.clone()
        .try_inverse()
        .ok_or(Error::SingularCertificate { cond })
}

/// Places `blocks` on the diagonal of a fresh matrix.
pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let r: usize = blocks.iter().map(|b| b.nrows()).sum();
    let c: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(r, c);
    let (mut i, mut j) = (0, 0);
    for b in blocks {
        out.view_mut((i, j), b.shape()).copy_from(*b);
        i += b.nrows();
        j += b.ncols();
    }
    out
}
