//! Geometry of the manifold of rank-`r` matrices at an iterate `X = U Σ Vᵀ`.
//!
//! The tangent space is `{U Rᵀ + L Vᵀ}`. Tangent vectors are kept in factored
//! form `ξ = U M Vᵀ + U_p Vᵀ + U V_pᵀ` with `U_pᵀ U = 0` and `V_pᵀ V = 0`, so
//! inner products, transport and the retraction all cost `O((m + n) r²)`.
//! Nothing here forms an m×n SVD.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{
    hard_threshold, inner, orthonormality_defect, qr_orthogonal_to, qr_thin, singular_values, spectral_norm, thin_svd,
    DenseMatrix, ThinSvd,
};

/// Orthonormality drift that triggers re-orthonormalisation after a retraction.
const DRIFT_TOL: f64 = 1e-10;

/// Which subspace search directions are projected onto.
///
/// `ColumnOnly` and `RowOnly` only move the column (row) factor. They cannot
/// leave a wrong row (column) space and generally stagnate; they exist to
/// demonstrate that failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SubspaceSelection {
    #[default]
    Tangent,
    ColumnOnly,
    RowOnly,
}

/// Factors of the current iterate, which also define its tangent space.
#[derive(Debug, Clone)]
pub struct TangentSpace {
    u: DenseMatrix,
    sigma: DVector<f64>,
    v: DenseMatrix,
}

impl TangentSpace {
    /// Validates shapes and orthonormality of `U` and `V` (to 1e-10).
    pub fn new(u: DenseMatrix, sigma: DVector<f64>, v: DenseMatrix) -> Result<Self> {
        let r = sigma.len();
        if r == 0 || u.ncols() != r || v.ncols() != r {
            return Err(Error::Contract(format!(
                "factor shapes disagree: U {}x{}, sigma {r}, V {}x{}",
                u.nrows(),
                u.ncols(),
                v.nrows(),
                v.ncols()
            )));
        }
        if orthonormality_defect(&u) > DRIFT_TOL || orthonormality_defect(&v) > DRIFT_TOL {
            return Err(Error::Contract("U and V must have orthonormal columns".into()));
        }
        Ok(TangentSpace { u, sigma, v })
    }

    pub fn from_svd(svd: ThinSvd) -> Self {
        TangentSpace { u: svd.u, sigma: svd.s, v: svd.v }
    }

    /// Factors of `H_r(x)`.
    pub fn from_matrix(x: &DenseMatrix, r: usize) -> Result<Self> {
        Ok(Self::from_svd(thin_svd(x, r)?))
    }

    pub fn u(&self) -> &DenseMatrix {
        &self.u
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.u.nrows(), self.v.nrows())
    }

    /// The iterate `U diag(Σ) Vᵀ`.
    pub fn point(&self) -> DenseMatrix {
        scale_columns(&self.u, &self.sigma) * self.v.transpose()
    }

    /// `(U Σ, V)`, i.e. the iterate as a low-rank product `L Rᵀ`.
    pub fn point_factors(&self) -> (DenseMatrix, DenseMatrix) {
        (scale_columns(&self.u, &self.sigma), self.v.clone())
    }

    /// Ambient projection `P(Z)`, computed directly from the defining formula.
    pub fn project(&self, z: &DenseMatrix, sel: SubspaceSelection) -> Result<DenseMatrix> {
        self.check_ambient(z)?;
        let utz = self.u.tr_mul(z);
        let zv = z * &self.v;
        Ok(match sel {
            SubspaceSelection::Tangent => {
                &self.u * &utz + &zv * self.v.transpose() - &self.u * (&utz * &self.v) * self.v.transpose()
            }
            SubspaceSelection::ColumnOnly => &self.u * utz,
            SubspaceSelection::RowOnly => zv * self.v.transpose(),
        })
    }

    /// Projection of an ambient matrix, returned in factored form.
    pub fn project_ambient(&self, z: &DenseMatrix, sel: SubspaceSelection) -> Result<TangentVector> {
        self.check_ambient(z)?;
        Ok(self.project_products(z * &self.v, z.tr_mul(&self.u), sel))
    }

    /// Projection of a matrix `G` given only `G V` (m×r) and `Gᵀ U` (n×r).
    pub fn project_products(&self, gv: DenseMatrix, gtu: DenseMatrix, sel: SubspaceSelection) -> TangentVector {
        let m = self.u.tr_mul(&gv);
        let up = match sel {
            SubspaceSelection::ColumnOnly => DenseMatrix::zeros(gv.nrows(), gv.ncols()),
            _ => gv - &self.u * &m,
        };
        let vp = match sel {
            SubspaceSelection::RowOnly => DenseMatrix::zeros(gtu.nrows(), gtu.ncols()),
            _ => gtu - &self.v * m.transpose(),
        };
        TangentVector { m, up, vp }
    }

    /// Projects `xi`, a tangent vector at `from`, onto this space.
    pub fn transport(&self, xi: &TangentVector, from: &TangentSpace, sel: SubspaceSelection) -> TangentVector {
        let (left, right) = xi.low_rank_factors(from);
        let zv = &left * right.tr_mul(&self.v);
        let ztu = &right * left.tr_mul(&self.u);
        self.project_products(zv, ztu, sel)
    }

    /// Factors of `H_r(X + ξ)` for a tangent vector `ξ` at this point.
    ///
    /// Uses the `2k×2k` core-matrix SVD. Falls back to a dense SVD only when
    /// `2k` exceeds `m` or `n`, where the core construction has no room.
    pub fn retract(&self, xi: &TangentVector, r: usize) -> Result<TangentSpace> {
        let (mrows, ncols) = self.shape();
        let k = self.rank();
        if r == 0 || r > mrows.min(ncols) || r > 2 * k {
            return Err(Error::Contract(format!("retraction rank {r} invalid for k={k}, {mrows}x{ncols}")));
        }
        if 2 * k > mrows || 2 * k > ncols {
            let w = self.point() + xi.to_dense(self);
            return TangentSpace::from_matrix(&w, r);
        }
        let q2 = qr_orthogonal_to(&xi.up, &self.u);
        let q1 = qr_orthogonal_to(&xi.vp, &self.v);
        let mut core = DenseMatrix::zeros(2 * k, 2 * k);
        let mut top_left = xi.m.clone();
        for i in 0..k {
            top_left[(i, i)] += self.sigma[i];
        }
        core.view_mut((0, 0), (k, k)).copy_from(&top_left);
        core.view_mut((0, k), (k, k)).copy_from(&q1.r.transpose());
        core.view_mut((k, 0), (k, k)).copy_from(&q2.r);
        let small = thin_svd(&core, r)?;

        let mut basis_u = DenseMatrix::zeros(mrows, 2 * k);
        basis_u.view_mut((0, 0), (mrows, k)).copy_from(&self.u);
        basis_u.view_mut((0, k), (mrows, k)).copy_from(&q2.q);
        let mut basis_v = DenseMatrix::zeros(ncols, 2 * k);
        basis_v.view_mut((0, 0), (ncols, k)).copy_from(&self.v);
        basis_v.view_mut((0, k), (ncols, k)).copy_from(&q1.q);

        let u = basis_u * small.u;
        let v = basis_v * small.v;
        if orthonormality_defect(&u) > DRIFT_TOL || orthonormality_defect(&v) > DRIFT_TOL {
            return reorthonormalize(&u, &small.s, &v);
        }
        Ok(TangentSpace { u, sigma: small.s, v })
    }

    fn check_ambient(&self, z: &DenseMatrix) -> Result<()> {
        if z.shape() != self.shape() {
            let (m, n) = self.shape();
            return Err(Error::Contract(format!("expected a {m}x{n} matrix, got {}x{}", z.nrows(), z.ncols())));
        }
        Ok(())
    }
}

fn scale_columns(a: &DenseMatrix, s: &DVector<f64>) -> DenseMatrix {
    let mut out = a.clone();
    for (j, sj) in s.iter().enumerate() {
        out.column_mut(j).scale_mut(*sj);
    }
    out
}

/// Rebuilds orthonormal factors of `U diag(s) Vᵀ` via QR of both sides.
fn reorthonormalize(u: &DenseMatrix, s: &DVector<f64>, v: &DenseMatrix) -> Result<TangentSpace> {
    let qu = qr_thin(u)?;
    let qv = qr_thin(v)?;
    let inner_core = scale_columns(&qu.r, s) * qv.r.transpose();
    let svd = thin_svd(&inner_core, s.len())?;
    Ok(TangentSpace { u: qu.q * svd.u, sigma: svd.s, v: qv.q * svd.v })
}

/// `ξ = U M Vᵀ + U_p Vᵀ + U V_pᵀ` relative to some [`TangentSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub m: DenseMatrix,
    pub up: DenseMatrix,
    pub vp: DenseMatrix,
}

impl TangentVector {
    pub fn zeros(m: usize, n: usize, r: usize) -> Self {
        TangentVector { m: DenseMatrix::zeros(r, r), up: DenseMatrix::zeros(m, r), vp: DenseMatrix::zeros(n, r) }
    }

    /// Frobenius inner product of two vectors in the same tangent space.
    pub fn inner(&self, other: &TangentVector) -> f64 {
        inner(&self.m, &other.m) + inner(&self.up, &other.up) + inner(&self.vp, &other.vp)
    }

    pub fn norm_squared(&self) -> f64 {
        self.inner(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.norm_squared() == 0.0
    }

    pub fn scaled(&self, a: f64) -> TangentVector {
        TangentVector { m: &self.m * a, up: &self.up * a, vp: &self.vp * a }
    }

    /// `self + a·other`.
    pub fn add_scaled(&self, a: f64, other: &TangentVector) -> TangentVector {
        TangentVector { m: &self.m + &other.m * a, up: &self.up + &other.up * a, vp: &self.vp + &other.vp * a }
    }

    /// `(L, R)` with `ξ = L Rᵀ`: `L = [U M + U_p, U]`, `R = [V, V_p]`.
    pub fn low_rank_factors(&self, at: &TangentSpace) -> (DenseMatrix, DenseMatrix) {
        let (mrows, ncols) = at.shape();
        let k = at.rank();
        let mut left = DenseMatrix::zeros(mrows, 2 * k);
        left.view_mut((0, 0), (mrows, k)).copy_from(&(&at.u * &self.m + &self.up));
        left.view_mut((0, k), (mrows, k)).copy_from(&at.u);
        let mut right = DenseMatrix::zeros(ncols, 2 * k);
        right.view_mut((0, 0), (ncols, k)).copy_from(&at.v);
        right.view_mut((0, k), (ncols, k)).copy_from(&self.vp);
        (left, right)
    }

    pub fn to_dense(&self, at: &TangentSpace) -> DenseMatrix {
        let (left, right) = self.low_rank_factors(at);
        left * right.transpose()
    }
}

/// `H_r(X + P(Z))` for the iterate held by `space`, plus the new factors.
///
/// Only the products `UᵀZ`-style contractions `Z V` and `Zᵀ U` touch the m×n
/// input; the rest is the factored retraction.
pub fn retract_fast(space: &TangentSpace, z: &DenseMatrix, r: usize) -> Result<(DenseMatrix, TangentSpace)> {
    let xi = space.project_ambient(z, SubspaceSelection::Tangent)?;
    let next = space.retract(&xi, r)?;
    Ok((next.point(), next))
}

/// Both sides of the projection-error and subspace-distance bounds for a pair
/// of rank-`r` matrices `X_l` (iterate) and `X` (target).
#[derive(Debug, Clone, Serialize)]
pub struct ProjectionBounds {
    /// `‖(I − P_{S_l}) X‖_F`.
    pub residual: f64,
    /// `‖X_l − X‖₂ ‖X_l − X‖_F / σ_min(X)`.
    pub spectral_bound: f64,
    /// `‖X_l − X‖_F² / σ_min(X)`.
    pub frobenius_bound: f64,
    /// `max(‖U_lU_lᵀ − UUᵀ‖₂, ‖V_lV_lᵀ − VVᵀ‖₂)`.
    pub subspace_spectral: f64,
    /// `‖X_l − X‖₂ / σ_min(X)`.
    pub subspace_spectral_bound: f64,
    /// `max(‖U_lU_lᵀ − UUᵀ‖_F, ‖V_lV_lᵀ − VVᵀ‖_F)`.
    pub subspace_frobenius: f64,
    /// `√2 ‖X_l − X‖_F / σ_min(X)`.
    pub subspace_frobenius_bound: f64,
    /// Scale used for absolute slack, `max(1, ‖X‖_F)`.
    pub scale: f64,
}

impl ProjectionBounds {
    /// Evaluates every quantity; both inputs must have numerical rank exactly `r`.
    pub fn evaluate(x_l: &DenseMatrix, x: &DenseMatrix, r: usize) -> Result<Self> {
        if x_l.shape() != x.shape() {
            return Err(Error::Contract("iterate and target shapes differ".into()));
        }
        let sl = TangentSpace::from_matrix(x_l, r)?;
        let st = TangentSpace::from_matrix(x, r)?;
        for (name, mat, sp) in [("iterate", x_l, &sl), ("target", x, &st)] {
            let sv = singular_values(mat)?;
            let top = sv[0];
            let exact = sp.sigma[r - 1] > 1e-10 * top && sv.iter().skip(r).all(|&s| s <= 1e-10 * top);
            if !exact {
                return Err(Error::Contract(format!("{name} does not have rank exactly {r}")));
            }
        }
        let sigma_min = st.sigma[r - 1];
        let diff = x_l - x;
        let d2 = spectral_norm(&diff)?;
        let df = diff.norm();
        let residual = (x - sl.project(x, SubspaceSelection::Tangent)?).norm();
        let pu = &sl.u * sl.u.transpose() - &st.u * st.u.transpose();
        let pv = &sl.v * sl.v.transpose() - &st.v * st.v.transpose();
        Ok(ProjectionBounds {
            residual,
            spectral_bound: d2 * df / sigma_min,
            frobenius_bound: df * df / sigma_min,
            subspace_spectral: spectral_norm(&pu)?.max(spectral_norm(&pv)?),
            subspace_spectral_bound: d2 / sigma_min,
            subspace_frobenius: pu.norm().max(pv.norm()),
            subspace_frobenius_bound: std::f64::consts::SQRT_2 * df / sigma_min,
            scale: x.norm().max(1.0),
        })
    }

    /// Projection-error bounds in both the spectral and Frobenius forms.
    pub fn projection_error_holds(&self, slack: f64) -> bool {
        let s = slack * self.scale;
        self.residual <= self.spectral_bound + s && self.spectral_bound <= self.frobenius_bound + s
    }

    /// Subspace-distance bounds in both norms, for column and row spaces.
    /// Projector differences are scale-free, so `slack` is absolute here.
    pub fn subspace_distance_holds(&self, slack: f64) -> bool {
        self.subspace_spectral <= self.subspace_spectral_bound + slack
            && self.subspace_frobenius <= self.subspace_frobenius_bound + slack
    }
}

/// Whether `‖(I − P_{S_l}) X‖_F ≤ ‖X_l − X‖₂‖X_l − X‖_F/σ_min(X) ≤ ‖X_l − X‖_F²/σ_min(X)`
/// holds with `1e-10` slack. Errors when either input is not of rank exactly `r`.
pub fn projection_error_bound_check(x_l: &DenseMatrix, x: &DenseMatrix, r: usize) -> Result<bool> {
    Ok(ProjectionBounds::evaluate(x_l, x, r)?.projection_error_holds(1e-10))
}

/// Dense reference for the retraction, `H_r(X + P(Z))` via a full SVD.
pub fn retract_dense(space: &TangentSpace, z: &DenseMatrix, r: usize) -> Result<DenseMatrix> {
    let w = space.point() + space.project(z, SubspaceSelection::Tangent)?;
    hard_threshold(&w, r)
}
