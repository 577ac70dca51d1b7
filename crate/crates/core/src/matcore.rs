//! Dense linear-algebra building blocks: thin SVD, thin QR, hard thresholding
//! and the handful of norms and inner products the solvers rely on.
//!
//! Matrices are `nalgebra::DMatrix<f64>`, which stores data column-major; that
//! layout is the interchange format between every module in the crate.
//! Singular value decompositions are delegated to `faer`, whose bidiagonal
//! SVD stays accurate on the exactly rank-deficient inputs thresholding
//! produces all the time.

use faer::Mat;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Column-major dense real matrix.
pub type DenseMatrix = DMatrix<f64>;

/// Absolute floor used when a tolerance is expressed relative to a norm that may be zero.
pub const ZERO_FLOOR: f64 = 1e-14;

fn to_faer(m: &DenseMatrix) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Top-`k` singular triplets: `U` is m×k, `S` descending, `V` is n×k.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DenseMatrix,
    pub s: DVector<f64>,
    pub v: DenseMatrix,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `U diag(S) Vᵀ`.
    pub fn recompose(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for (j, s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        &us * self.v.transpose()
    }
}

/// Thin QR factors, `Q` m×k with orthonormal columns and `R` k×k upper triangular.
#[derive(Debug, Clone)]
pub struct QrFactors {
    pub q: DenseMatrix,
    pub r: DenseMatrix,
}

/// Builds a matrix from column-major data, rejecting wrong lengths and non-finite entries.
pub fn from_column_slice(rows: usize, cols: usize, data: &[f64]) -> Result<DenseMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Contract(format!("matrix dimensions must be positive, got {rows}x{cols}")));
    }
    if data.len() != rows * cols {
        return Err(Error::Contract(format!(
            "expected {} entries for a {rows}x{cols} matrix, got {}",
            rows * cols,
            data.len()
        )));
    }
    ensure_finite(data, "matrix data")?;
    Ok(DenseMatrix::from_column_slice(rows, cols, data))
}

pub(crate) fn ensure_finite(data: &[f64], what: &str) -> Result<()> {
    match data.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what}: entry {i} is {}", data[i]))),
        None => Ok(()),
    }
}

/// Top-`k` singular triplets of `m`, singular values in descending order.
///
/// Ties between repeated singular values keep the backend's order.
pub fn thin_svd(m: &DenseMatrix, k: usize) -> Result<ThinSvd> {
    let (rows, cols) = m.shape();
    let kmax = rows.min(cols);
    if k == 0 || k > kmax {
        return Err(Error::Contract(format!("thin_svd: k={k} must be in 1..={kmax} for a {rows}x{cols} matrix")));
    }
    ensure_finite(m.as_slice(), "thin_svd input")?;
    let svd = to_faer(m).thin_svd().map_err(|_| Error::SvdFailed { rows, cols })?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    Ok(ThinSvd {
        u: DenseMatrix::from_fn(rows, k, |i, j| u[(i, j)]),
        s: DVector::from_fn(k, |i, _| s[i]),
        v: DenseMatrix::from_fn(cols, k, |i, j| v[(i, j)]),
    })
}

/// All `min(m, n)` singular values, descending.
pub fn singular_values(m: &DenseMatrix) -> Result<DVector<f64>> {
    let (rows, cols) = m.shape();
    ensure_finite(m.as_slice(), "singular_values input")?;
    let s = to_faer(m).singular_values().map_err(|_| Error::SvdFailed { rows, cols })?;
    Ok(DVector::from_vec(s))
}

/// Best rank-`r` approximation in the Frobenius norm (`H_r`).
pub fn hard_threshold(m: &DenseMatrix, r: usize) -> Result<DenseMatrix> {
    Ok(thin_svd(m, r)?.recompose())
}

/// Thin Householder QR. Requires `rows >= cols`.
///
/// Rank-deficient input yields (near-)zero diagonal entries in `R`; `Q` keeps
/// orthonormal columns regardless.
pub fn qr_thin(m: &DenseMatrix) -> Result<QrFactors> {
    let (rows, cols) = m.shape();
    if rows < cols {
        return Err(Error::Contract(format!("qr_thin needs rows >= cols, got {rows}x{cols}")));
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    // sign convention: nonnegative diagonal of R
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
            r.row_mut(j).neg_mut();
        }
    }
    Ok(QrFactors { q, r })
}

/// QR of `y` whose `Q` is additionally orthogonal to the orthonormal columns of `basis`.
///
/// Modified Gram-Schmidt with one re-orthogonalisation pass. Columns of `y`
/// that are numerically dependent on `basis` and the previously accepted
/// columns get an arbitrary unit direction from the orthogonal complement, with
/// a zero row in `R`. `R = Qᵀ y` is upper triangular and `y = Q R` whenever the
/// columns of `y` are orthogonal to `basis`.
pub fn qr_orthogonal_to(y: &DenseMatrix, basis: &DenseMatrix) -> QrFactors {
    let (rows, k) = y.shape();
    assert_eq!(basis.nrows(), rows, "basis row count must match");
    let scale = y.norm().max(ZERO_FLOOR);
    let mut q = DenseMatrix::zeros(rows, k);
    let mut r = DenseMatrix::zeros(k, k);
    let mut next_canonical = 0usize;

    for j in 0..k {
        let mut w = y.column(j).into_owned();
        for _ in 0..2 {
            let c = basis.tr_mul(&w);
            w -= basis * c;
            for i in 0..j {
                let qi = q.column(i);
                let c = qi.dot(&w);
                r[(i, j)] += c;
                w.axpy(-c, &qi, 1.0);
            }
        }
        let nrm = w.norm();
        if nrm > 1e-13 * scale {
            r[(j, j)] = nrm;
            q.set_column(j, &(w / nrm));
        } else {
            // fill with a unit vector from the complement; R row stays zero
            loop {
                assert!(next_canonical < rows, "no complement direction left");
                let mut e = DVector::zeros(rows);
                e[next_canonical] = 1.0;
                next_canonical += 1;
                for _ in 0..2 {
                    let c = basis.tr_mul(&e);
                    e -= basis * c;
                    for i in 0..j {
                        let qi = q.column(i);
                        let c = qi.dot(&e);
                        e.axpy(-c, &qi, 1.0);
                    }
                }
                let en = e.norm();
                if en > 1e-8 {
                    q.set_column(j, &(e / en));
                    break;
                }
            }
        }
    }
    QrFactors { q, r }
}

/// Frobenius inner product `⟨A, B⟩ = tr(Aᵀ B)`.
pub fn inner(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

pub fn fro_norm(a: &DenseMatrix) -> f64 {
    a.norm()
}

/// Largest singular value.
pub fn spectral_norm(a: &DenseMatrix) -> Result<f64> {
    Ok(singular_values(a)?.iter().cloned().fold(0.0, f64::max))
}

/// `‖a − b‖_F / max(‖b‖_F, ZERO_FLOOR)`.
pub fn relative_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    (a - b).norm() / b.norm().max(ZERO_FLOOR)
}

/// Largest absolute entry of `QᵀQ − I`.
pub fn orthonormality_defect(q: &DenseMatrix) -> f64 {
    let g = q.tr_mul(q);
    let k = g.nrows();
    let mut worst = 0.0f64;
    for j in 0..k {
        for i in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// `diag(v)` as a dense matrix.
pub fn diag(v: &DVector<f64>) -> DenseMatrix {
    DenseMatrix::from_diagonal(v)
}

/// Numerical rank using a tolerance relative to the largest singular value.
pub fn numerical_rank(a: &DenseMatrix, rel_tol: f64) -> Result<usize> {
    let s = singular_values(a)?;
    let top = s.iter().cloned().fold(0.0, f64::max);
    if top <= ZERO_FLOOR {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&x| x > rel_tol * top).count())
}
