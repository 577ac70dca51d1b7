//! Linear measurement operators `A: R^{m×n} → R^p`.
//!
//! Two ensembles are provided: dense Gaussian sensing, where every measurement
//! is an inner product with an i.i.d. normal matrix, and entry sensing, where
//! measurements are a uniformly sampled subset of matrix entries. Operators are
//! regenerated from `(kind, m, n, p, seed, scale)`; the random matrices and
//! index sets themselves are never serialized.
//!
//! Besides `apply`/`adjoint` the trait exposes low-rank shortcuts used by the
//! solvers: `apply_low_rank` evaluates `A(L Rᵀ)` and `adjoint_products`
//! returns `A*(v) V` and `A*(v)ᵀ U` without materialising `A*(v)` when the
//! operator allows it (entry sensing never forms an m×n matrix there).

use nalgebra::DVector;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::matcore::DenseMatrix;

/// Measurement vector `y = A(X)`.
pub type Measurements = DVector<f64>;

/// Rows processed per parallel work item in dense passes.
const DENSE_ROW_BLOCK: usize = 64;
/// Output entries per parallel work item in the dense adjoint.
const DENSE_COL_BLOCK: usize = 2048;

pub trait SensingOperator: Send + Sync {
    /// `m`, the row count of the sensed matrices.
    fn rows(&self) -> usize;
    /// `n`, the column count of the sensed matrices.
    fn cols(&self) -> usize;
    /// `p`, the number of measurements.
    fn measurements(&self) -> usize;

    fn apply(&self, z: &DenseMatrix) -> Result<Measurements>;

    fn adjoint(&self, v: &Measurements) -> Result<DenseMatrix>;

    /// `A(Z_1), …, A(Z_k)`; dense operators do this in one pass over their data.
    fn apply_many(&self, zs: &[&DenseMatrix]) -> Result<Vec<Measurements>> {
        zs.iter().map(|z| self.apply(z)).collect()
    }

    /// `A(L Rᵀ)` for `L` m×k and `R` n×k.
    fn apply_low_rank(&self, left: &DenseMatrix, right: &DenseMatrix) -> Result<Measurements> {
        Ok(self.apply_low_rank_many(&[(left, right)])?.remove(0))
    }

    fn apply_low_rank_many(&self, factors: &[(&DenseMatrix, &DenseMatrix)]) -> Result<Vec<Measurements>> {
        let dense = factors
            .iter()
            .map(|(l, r)| {
                check_factors(self.rows(), self.cols(), l, r)?;
                Ok(*l * r.transpose())
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&DenseMatrix> = dense.iter().collect();
        self.apply_many(&refs)
    }

    /// `(A*(v) V, A*(v)ᵀ U)` for `U` m×k and `V` n×k.
    fn adjoint_products(
        &self,
        v: &Measurements,
        u: &DenseMatrix,
        vmat: &DenseMatrix,
    ) -> Result<(DenseMatrix, DenseMatrix)> {
        check_factors(self.rows(), self.cols(), u, vmat)?;
        let g = self.adjoint(v)?;
        Ok((&g * vmat, g.tr_mul(u)))
    }
}

fn check_shape(op_rows: usize, op_cols: usize, z: &DenseMatrix) -> Result<()> {
    if z.shape() != (op_rows, op_cols) {
        return Err(Error::Contract(format!(
            "operator acts on {op_rows}x{op_cols} matrices, got {}x{}",
            z.nrows(),
            z.ncols()
        )));
    }
    Ok(())
}

fn check_factors(m: usize, n: usize, left: &DenseMatrix, right: &DenseMatrix) -> Result<()> {
    if left.nrows() != m || right.nrows() != n || left.ncols() != right.ncols() {
        return Err(Error::Contract(format!(
            "low-rank factors {}x{} and {}x{} do not describe a {m}x{n} matrix",
            left.nrows(),
            left.ncols(),
            right.nrows(),
            right.ncols()
        )));
    }
    Ok(())
}

fn check_len(p: usize, v: &Measurements) -> Result<()> {
    if v.len() != p {
        return Err(Error::Contract(format!("expected {p} measurements, got {}", v.len())));
    }
    Ok(())
}

/// Dot product with four independent accumulators. The summation order only
/// depends on the slice length, so results are reproducible across threads.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Normalisation of the Gaussian ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GaussianScale {
    /// Entries `N(0, 1/p)`, so `E‖A(Z)‖² = ‖Z‖_F²`.
    #[default]
    Normalized,
    /// Entries `N(0, 1)`.
    Raw,
}

impl GaussianScale {
    pub fn factor(self, p: usize) -> f64 {
        match self {
            GaussianScale::Normalized => 1.0 / (p as f64).sqrt(),
            GaussianScale::Raw => 1.0,
        }
    }
}

/// Dense Gaussian sensing. The `p` sensing matrices are stored back to back,
/// each one column-major, so row `ℓ` of the p×mn block is `vec(A_ℓ)`.
#[derive(Debug, Clone)]
pub struct GaussianSensing {
    m: usize,
    n: usize,
    p: usize,
    seed: u64,
    scale: f64,
    data: Vec<f64>,
    exec: Exec,
}

impl GaussianSensing {
    pub fn new(m: usize, n: usize, p: usize, seed: u64, scale: GaussianScale) -> Result<Self> {
        Self::with_scale_factor(m, n, p, seed, scale.factor(p))
    }

    /// Like [`GaussianSensing::new`] with an explicit multiplier on the standard normal entries.
    pub fn with_scale_factor(m: usize, n: usize, p: usize, seed: u64, scale: f64) -> Result<Self> {
        validate_dims(m, n, p)?;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Contract(format!("gaussian scale must be positive, got {scale}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..p * m * n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Ok(GaussianSensing { m, n, p, seed, scale, data, exec: Exec::default() })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The unscaled sensing matrix `A_ℓ` (column-major, m×n).
    pub fn sensing_matrix(&self, l: usize) -> DenseMatrix {
        let mn = self.m * self.n;
        DenseMatrix::from_column_slice(self.m, self.n, &self.data[l * mn..(l + 1) * mn])
    }

    fn row(&self, l: usize) -> &[f64] {
        let mn = self.m * self.n;
        &self.data[l * mn..(l + 1) * mn]
    }
}

impl SensingOperator for GaussianSensing {
    fn rows(&self) -> usize {
        self.m
    }
    fn cols(&self) -> usize {
        self.n
    }
    fn measurements(&self) -> usize {
        self.p
    }

    fn apply(&self, z: &DenseMatrix) -> Result<Measurements> {
        Ok(self.apply_many(&[z])?.remove(0))
    }

    fn apply_many(&self, zs: &[&DenseMatrix]) -> Result<Vec<Measurements>> {
        for z in zs {
            check_shape(self.m, self.n, z)?;
        }
        let k = zs.len();
        let blocks = self.p.div_ceil(DENSE_ROW_BLOCK);
        // block b yields k values per row, row-major within the block
        let parts = self.exec.map_indexed(blocks, |b| {
            let lo = b * DENSE_ROW_BLOCK;
            let hi = (lo + DENSE_ROW_BLOCK).min(self.p);
            let mut vals = Vec::with_capacity((hi - lo) * k);
            for l in lo..hi {
                let row = self.row(l);
                for z in zs {
                    vals.push(self.scale * dot(row, z.as_slice()));
                }
            }
            vals
        });
        let mut out = vec![DVector::zeros(self.p); k];
        let mut l = 0;
        for part in parts {
            for chunk in part.chunks_exact(k) {
                for (j, v) in chunk.iter().enumerate() {
                    out[j][l] = *v;
                }
                l += 1;
            }
        }
        Ok(out)
    }

    fn adjoint(&self, v: &Measurements) -> Result<DenseMatrix> {
        check_len(self.p, v)?;
        let mn = self.m * self.n;
        let mut out = vec![0.0; mn];
        let coeffs: Vec<f64> = v.iter().map(|x| x * self.scale).collect();
        self.exec.for_each_chunk_mut(&mut out, DENSE_COL_BLOCK, |ci, chunk| {
            let lo = ci * DENSE_COL_BLOCK;
            let hi = lo + chunk.len();
            for (l, c) in coeffs.iter().enumerate() {
                let seg = &self.row(l)[lo..hi];
                for (o, a) in chunk.iter_mut().zip(seg) {
                    *o += c * a;
                }
            }
        });
        Ok(DenseMatrix::from_vec(self.m, self.n, out))
    }
}

/// Entry sensing: `p` distinct positions sampled uniformly without replacement,
/// stored sorted row-major. Measurement `ℓ` is the entry at the `ℓ`-th position.
#[derive(Debug, Clone)]
pub struct EntrySensing {
    m: usize,
    n: usize,
    seed: u64,
    row_idx: Vec<u32>,
    col_idx: Vec<u32>,
}

impl EntrySensing {
    pub fn new(m: usize, n: usize, p: usize, seed: u64) -> Result<Self> {
        validate_dims(m, n, p)?;
        if m > u32::MAX as usize || n > u32::MAX as usize {
            return Err(Error::Contract("entry sensing dimensions exceed u32 range".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<(u32, u32)> =
            index::sample(&mut rng, m * n, p).into_iter().map(|lin| ((lin / n) as u32, (lin % n) as u32)).collect();
        picked.sort_unstable();
        let (row_idx, col_idx) = picked.into_iter().unzip();
        Ok(EntrySensing { m, n, seed, row_idx, col_idx })
    }

    /// Entry sensing on an explicit list of distinct positions; sorted row-major internally.
    pub fn from_indices(m: usize, n: usize, mut positions: Vec<(usize, usize)>) -> Result<Self> {
        validate_dims(m, n, positions.len())?;
        let requested = positions.len();
        positions.sort_unstable();
        positions.dedup();
        if positions.len() != requested {
            return Err(Error::Contract("entry positions must be distinct".into()));
        }
        if let Some(&(i, j)) = positions.iter().find(|&&(i, j)| i >= m || j >= n) {
            return Err(Error::Contract(format!("position ({i}, {j}) outside {m}x{n}")));
        }
        let (row_idx, col_idx) = positions.into_iter().map(|(i, j)| (i as u32, j as u32)).unzip();
        Ok(EntrySensing { m, n, seed: 0, row_idx, col_idx })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_idx.iter().zip(&self.col_idx).map(|(&i, &j)| (i as usize, j as usize))
    }
}

impl SensingOperator for EntrySensing {
    fn rows(&self) -> usize {
        self.m
    }
    fn cols(&self) -> usize {
        self.n
    }
    fn measurements(&self) -> usize {
        self.row_idx.len()
    }

    fn apply(&self, z: &DenseMatrix) -> Result<Measurements> {
        check_shape(self.m, self.n, z)?;
        Ok(DVector::from_iterator(self.measurements(), self.positions().map(|(i, j)| z[(i, j)])))
    }

    fn adjoint(&self, v: &Measurements) -> Result<DenseMatrix> {
        check_len(self.measurements(), v)?;
        let mut out = DenseMatrix::zeros(self.m, self.n);
        for ((i, j), x) in self.positions().zip(v.iter()) {
            out[(i, j)] = *x;
        }
        Ok(out)
    }

    fn apply_low_rank_many(&self, factors: &[(&DenseMatrix, &DenseMatrix)]) -> Result<Vec<Measurements>> {
        factors
            .iter()
            .map(|(left, right)| {
                check_factors(self.m, self.n, left, right)?;
                // transposes give each row of a factor a contiguous column
                let lt = left.transpose();
                let rt = right.transpose();
                let k = lt.nrows();
                let (ls, rs) = (lt.as_slice(), rt.as_slice());
                Ok(DVector::from_iterator(
                    self.measurements(),
                    self.positions().map(|(i, j)| dot(&ls[i * k..(i + 1) * k], &rs[j * k..(j + 1) * k])),
                ))
            })
            .collect()
    }

    fn adjoint_products(
        &self,
        v: &Measurements,
        u: &DenseMatrix,
        vmat: &DenseMatrix,
    ) -> Result<(DenseMatrix, DenseMatrix)> {
        check_len(self.measurements(), v)?;
        check_factors(self.m, self.n, u, vmat)?;
        let k = u.ncols();
        let ut = u.transpose();
        let vt = vmat.transpose();
        let mut gv_t = DenseMatrix::zeros(k, self.m);
        let mut gtu_t = DenseMatrix::zeros(k, self.n);
        {
            let (us, vs) = (ut.as_slice(), vt.as_slice());
            let gv = gv_t.as_mut_slice();
            let gtu = gtu_t.as_mut_slice();
            for ((i, j), x) in self.positions().zip(v.iter()) {
                for t in 0..k {
                    gv[i * k + t] += x * vs[j * k + t];
                    gtu[j * k + t] += x * us[i * k + t];
                }
            }
        }
        Ok((gv_t.transpose(), gtu_t.transpose()))
    }
}

fn validate_dims(m: usize, n: usize, p: usize) -> Result<()> {
    if m == 0 || n == 0 || p == 0 {
        return Err(Error::Contract(format!("dimensions must be positive, got m={m} n={n} p={p}")));
    }
    if p > m * n {
        return Err(Error::Contract(format!("p={p} exceeds m*n={}", m * n)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensingKind {
    Gaussian,
    Entry,
}

/// Serializable description from which an operator is regenerated bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorDescriptor {
    pub kind: SensingKind,
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub scale: f64,
}

/// Either sensing ensemble behind one type.
#[derive(Debug, Clone)]
pub enum Operator {
    Gaussian(GaussianSensing),
    Entry(EntrySensing),
}

impl Operator {
    pub fn from_descriptor(d: &OperatorDescriptor) -> Result<Self> {
        Ok(match d.kind {
            SensingKind::Gaussian => {
                Operator::Gaussian(GaussianSensing::with_scale_factor(d.m, d.n, d.p, d.seed, d.scale)?)
            }
            SensingKind::Entry => Operator::Entry(EntrySensing::new(d.m, d.n, d.p, d.seed)?),
        })
    }

    pub fn descriptor(&self) -> OperatorDescriptor {
        match self {
            Operator::Gaussian(g) => {
                OperatorDescriptor { kind: SensingKind::Gaussian, m: g.m, n: g.n, p: g.p, seed: g.seed, scale: g.scale }
            }
            Operator::Entry(e) => OperatorDescriptor {
                kind: SensingKind::Entry,
                m: e.m,
                n: e.n,
                p: e.measurements(),
                seed: e.seed,
                scale: 1.0,
            },
        }
    }

    pub fn kind(&self) -> SensingKind {
        match self {
            Operator::Gaussian(_) => SensingKind::Gaussian,
            Operator::Entry(_) => SensingKind::Entry,
        }
    }

    fn inner(&self) -> &dyn SensingOperator {
        match self {
            Operator::Gaussian(g) => g,
            Operator::Entry(e) => e,
        }
    }
}

impl SensingOperator for Operator {
    fn rows(&self) -> usize {
        self.inner().rows()
    }
    fn cols(&self) -> usize {
        self.inner().cols()
    }
    fn measurements(&self) -> usize {
        self.inner().measurements()
    }
    fn apply(&self, z: &DenseMatrix) -> Result<Measurements> {
        self.inner().apply(z)
    }
    fn adjoint(&self, v: &Measurements) -> Result<DenseMatrix> {
        self.inner().adjoint(v)
    }
    fn apply_many(&self, zs: &[&DenseMatrix]) -> Result<Vec<Measurements>> {
        self.inner().apply_many(zs)
    }
    fn apply_low_rank_many(&self, factors: &[(&DenseMatrix, &DenseMatrix)]) -> Result<Vec<Measurements>> {
        self.inner().apply_low_rank_many(factors)
    }
    fn adjoint_products(
        &self,
        v: &Measurements,
        u: &DenseMatrix,
        vmat: &DenseMatrix,
    ) -> Result<(DenseMatrix, DenseMatrix)> {
        self.inner().adjoint_products(v, u, vmat)
    }
}

/// Sampled lower bound on the restricted isometry constant `R_r`.
///
/// Returns the largest `|‖A(Z)‖² − 1|` seen over `trials` random unit-Frobenius
/// matrices of rank at most `r`. **This is a lower bound only**: the true
/// constant is a supremum over all rank-`r` matrices and may be arbitrarily
/// larger than any sampled value. It must not be used where `R_r` itself is
/// required, e.g. to certify that a recovery guarantee holds.
///
/// Trial `t` draws Gaussian factor columns from its own stream and evaluates
/// the rank-1, …, rank-`r` prefixes, so the candidate set for `r` contains the
/// one for `r − 1` and the estimate is nondecreasing in `r` for a fixed seed.
pub fn estimate_ric_lower_bound<O: SensingOperator + ?Sized>(
    op: &O,
    r: usize,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<f64> {
    let (m, n) = (op.rows(), op.cols());
    if r == 0 || r > m.min(n) {
        return Err(Error::Contract(format!("rank {r} must be in 1..={}", m.min(n))));
    }
    if trials == 0 {
        return Err(Error::Contract("trials must be positive".into()));
    }
    const BATCH: usize = 256;
    let batches = trials.div_ceil(BATCH);
    let maxima = exec.map_indexed(batches, |b| -> Result<f64> {
        let mut worst = 0.0f64;
        for t in b * BATCH..((b + 1) * BATCH).min(trials) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let mut left = DenseMatrix::zeros(m, r);
            let mut right = DenseMatrix::zeros(n, r);
            for k in 0..r {
                for i in 0..m {
                    left[(i, k)] = rng.sample(StandardNormal);
                }
                for j in 0..n {
                    right[(j, k)] = rng.sample(StandardNormal);
                }
                let l = left.columns(0, k + 1).into_owned();
                let rr = right.columns(0, k + 1).into_owned();
                let z = &l * rr.transpose();
                let nz = z.norm();
                if nz <= 0.0 {
                    continue;
                }
                let az = op.apply(&(z / nz))?;
                worst = worst.max((az.norm_squared() - 1.0).abs());
            }
        }
        Ok(worst)
    });
    maxima.into_iter().try_fold(0.0f64, |acc, x| Ok(acc.max(x?)))
}
