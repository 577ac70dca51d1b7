//! Single iterations of each algorithm.
//!
//! Every step takes the current [`Iterate`] (which carries the residual
//! `y − A(X_l)` and whatever search history the method needs) and returns the
//! next one. The Riemannian steps touch the operator only through
//! `adjoint_products` and `apply_low_rank`, so `W_l` is never formed densely;
//! NIHT and CGIHT form it and take a full SVD, as those methods prescribe.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::matcore::{inner, DenseMatrix};
use crate::sensing::{Measurements, SensingOperator};
use crate::tangent::{SubspaceSelection, TangentSpace, TangentVector};

use super::config::{BetaRule, Retraction};

/// `β` denominators at or below this fraction of `‖y − A(X_l)‖²` count as zero.
pub const BETA_FLOOR: f64 = 1e-14;

/// Search history carried from one step to the next.
#[derive(Debug, Clone, Default)]
pub(crate) enum Memory {
    #[default]
    Empty,
    /// Previous direction and projected gradient, both tangent at `space`.
    Tangent { space: TangentSpace, direction: TangentVector, grad: TangentVector },
    /// Previous unprojected direction (CGIHT).
    Dense(DenseMatrix),
}

/// Current point `X_l = U Σ Vᵀ`, its residual and the search history.
#[derive(Debug, Clone)]
pub struct Iterate {
    pub space: TangentSpace,
    pub residual: Measurements,
    pub(crate) memory: Memory,
}

impl Iterate {
    /// `X_0 = H_r(A*(y))`.
    pub fn init_hard_threshold<O: SensingOperator + ?Sized>(op: &O, y: &Measurements, r: usize) -> Result<Self> {
        let (m, n) = (op.rows(), op.cols());
        if r == 0 || r > m.min(n) {
            return Err(Error::Contract(format!("rank {r} must be in 1..={}", m.min(n))));
        }
        let space = TangentSpace::from_matrix(&op.adjoint(y)?, r)?;
        Self::at(op, y, space)
    }

    /// Iterate at the point held by `space`, with empty history.
    pub fn at<O: SensingOperator + ?Sized>(op: &O, y: &Measurements, space: TangentSpace) -> Result<Self> {
        let residual = residual_at(op, y, &space)?;
        Ok(Iterate { space, residual, memory: Memory::Empty })
    }

    pub fn point(&self) -> DenseMatrix {
        self.space.point()
    }

    pub fn rank(&self) -> usize {
        self.space.rank()
    }

    /// Drops the search history, as after a method switch.
    pub fn forget_history(&mut self) {
        self.memory = Memory::Empty;
    }

    /// Previous search direction and the space it is tangent to, if any.
    pub fn previous_direction(&self) -> Option<(&TangentSpace, &TangentVector)> {
        match &self.memory {
            Memory::Tangent { space, direction, .. } => Some((space, direction)),
            _ => None,
        }
    }

    /// Previous projected gradient, tangent at the space of [`Iterate::previous_direction`].
    pub fn previous_gradient(&self) -> Option<&TangentVector> {
        match &self.memory {
            Memory::Tangent { grad, .. } => Some(grad),
            _ => None,
        }
    }

    /// Previous unprojected search direction of CGIHT, or NIHT's last gradient.
    pub fn previous_dense_direction(&self) -> Option<&DenseMatrix> {
        match &self.memory {
            Memory::Dense(p) => Some(p),
            _ => None,
        }
    }
}

fn residual_at<O: SensingOperator + ?Sized>(op: &O, y: &Measurements, space: &TangentSpace) -> Result<Measurements> {
    let (left, right) = space.point_factors();
    Ok(y - op.apply_low_rank(&left, &right)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub alpha: f64,
    pub beta: Option<f64>,
    pub restarted: bool,
}

#[derive(Debug, Clone)]
pub enum StepOutcome {
    Moved(Iterate, StepInfo),
    /// The search direction is zero or lies in the operator's null space, so no
    /// finite stepsize exists.
    Annihilated,
}

/// When the restarted conjugate-gradient method drops its history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RestartPolicy {
    Never,
    /// Restart when the angle or magnitude condition fails.
    Conditions {
        kappa1: f64,
        kappa2: f64,
    },
    /// Restart on every step, which reduces the method to gradient descent.
    Always,
}

/// Options shared by the Riemannian steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub subspace: SubspaceSelection,
    pub retraction: Retraction,
    pub beta_rule: BetaRule,
    pub restart: RestartPolicy,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            subspace: SubspaceSelection::Tangent,
            retraction: Retraction::Fast,
            beta_rule: BetaRule::ConjugateOrthogonal,
            restart: RestartPolicy::Never,
        }
    }
}

/// `true` keeps the conjugate direction; `false` asks for a restart.
///
/// Keeping requires a nonzero previous direction `p` with
/// `|⟨g, p⟩| ≤ κ₁ ‖g‖ ‖p‖` and `‖g‖ ≤ κ₂ ‖p‖`.
pub fn restart_check(grad: &TangentVector, prev: Option<&TangentVector>, kappa1: f64, kappa2: f64) -> bool {
    let Some(p) = prev else { return false };
    let pn = p.norm();
    if pn == 0.0 {
        return false;
    }
    let gn = grad.norm();
    grad.inner(p).abs() <= kappa1 * gn * pn && gn <= kappa2 * pn
}

fn retract(space: &TangentSpace, step: &TangentVector, mode: Retraction) -> Result<TangentSpace> {
    let r = space.rank();
    match mode {
        Retraction::Fast => space.retract(step, r),
        Retraction::DenseSvd => TangentSpace::from_matrix(&(space.point() + step.to_dense(space)), r),
    }
}

fn projected_gradient<O: SensingOperator + ?Sized>(
    it: &Iterate,
    op: &O,
    sel: SubspaceSelection,
) -> Result<TangentVector> {
    let (gv, gtu) = op.adjoint_products(&it.residual, it.space.u(), it.space.v())?;
    Ok(it.space.project_products(gv, gtu, sel))
}

fn sense_tangent<O: SensingOperator + ?Sized>(
    op: &O,
    space: &TangentSpace,
    xs: &[&TangentVector],
) -> Result<Vec<Measurements>> {
    let factors: Vec<_> = xs.iter().map(|x| x.low_rank_factors(space)).collect();
    let refs: Vec<_> = factors.iter().map(|(l, r)| (l, r)).collect();
    op.apply_low_rank_many(&refs)
}

/// Riemannian gradient descent step.
pub fn step_rgrad<O: SensingOperator + ?Sized>(
    it: &Iterate,
    op: &O,
    y: &Measurements,
    opts: &StepOptions,
) -> Result<StepOutcome> {
    let grad = projected_gradient(it, op, opts.subspace)?;
    let num = grad.norm_squared();
    if num == 0.0 {
        return Ok(StepOutcome::Annihilated);
    }
    let a_grad = sense_tangent(op, &it.space, &[&grad])?.remove(0);
    let den = a_grad.norm_squared();
    if den == 0.0 {
        return Ok(StepOutcome::Annihilated);
    }
    let alpha = num / den;
    let space = retract(&it.space, &grad.scaled(alpha), opts.retraction)?;
    let residual = residual_at(op, y, &space)?;
    let memory = Memory::Tangent { space: it.space.clone(), direction: grad.clone(), grad };
    Ok(StepOutcome::Moved(Iterate { space, residual, memory }, StepInfo { alpha, beta: None, restarted: false }))
}

/// Riemannian conjugate gradient step with the given `β` rule and restart policy.
pub fn step_rcg<O: SensingOperator + ?Sized>(
    it: &Iterate,
    op: &O,
    y: &Measurements,
    opts: &StepOptions,
) -> Result<StepOutcome> {
    let sel = opts.subspace;
    let grad = projected_gradient(it, op, sel)?;
    let gnorm2 = grad.norm_squared();
    if gnorm2 == 0.0 {
        return Ok(StepOutcome::Annihilated);
    }

    let history = match (&it.memory, opts.restart) {
        (_, RestartPolicy::Always) => None,
        (Memory::Tangent { space, direction, grad: prev_grad }, _) => Some((space, direction, prev_grad)),
        _ => None,
    };
    let transported = history.map(|(space, direction, _)| it.space.transport(direction, space, sel));
    let keep = match opts.restart {
        RestartPolicy::Never => transported.is_some(),
        RestartPolicy::Always => false,
        RestartPolicy::Conditions { kappa1, kappa2 } => restart_check(&grad, transported.as_ref(), kappa1, kappa2),
    };
    let restarted = transported.is_some() && !keep;

    let (a_grad, a_prev) = match (&transported, keep) {
        (Some(p), true) => {
            let mut v = sense_tangent(op, &it.space, &[&grad, p])?;
            let a_prev = v.pop();
            (v.pop().unwrap(), a_prev)
        }
        _ => (sense_tangent(op, &it.space, &[&grad])?.remove(0), None),
    };

    let beta = match (&transported, &a_prev, history) {
        (Some(_), Some(ap), Some((prev_space, _, prev_grad))) => match opts.beta_rule {
            BetaRule::ConjugateOrthogonal => {
                let den = ap.norm_squared();
                if den <= BETA_FLOOR * it.residual.norm_squared() {
                    0.0
                } else {
                    -a_grad.dot(ap) / den
                }
            }
            rule => {
                let den = prev_grad.norm_squared();
                if den == 0.0 {
                    0.0
                } else if rule == BetaRule::FletcherReeves {
                    gnorm2 / den
                } else {
                    let moved = it.space.transport(prev_grad, prev_space, sel);
                    let pr = (gnorm2 - grad.inner(&moved)) / den;
                    if rule == BetaRule::PolakRibierePlus {
                        pr.max(0.0)
                    } else {
                        pr
                    }
                }
            }
        },
        _ => 0.0,
    };

    let (direction, a_dir) = match (&transported, &a_prev) {
        (Some(p), Some(ap)) if beta != 0.0 => (grad.add_scaled(beta, p), &a_grad + ap * beta),
        _ => (grad.clone(), a_grad),
    };
    let den = a_dir.norm_squared();
    if den == 0.0 {
        return Ok(StepOutcome::Annihilated);
    }
    let alpha = grad.inner(&direction) / den;
    let space = retract(&it.space, &direction.scaled(alpha), opts.retraction)?;
    let residual = residual_at(op, y, &space)?;
    let memory = Memory::Tangent { space: it.space.clone(), direction, grad };
    let info = StepInfo { alpha, beta: Some(beta), restarted };
    Ok(StepOutcome::Moved(Iterate { space, residual, memory }, info))
}

/// Normalized iterative hard thresholding step: unprojected gradient, stepsize
/// from its column-space projection, full SVD of `W_l`.
pub fn step_niht<O: SensingOperator + ?Sized>(it: &Iterate, op: &O, y: &Measurements) -> Result<StepOutcome> {
    let g = op.adjoint(&it.residual)?;
    let u = it.space.u();
    let gtu = g.tr_mul(u);
    let num = gtu.norm_squared();
    if num == 0.0 {
        return Ok(StepOutcome::Annihilated);
    }
    let den = op.apply_low_rank(u, &gtu)?.norm_squared();
    if den == 0.0 {
        return Ok(StepOutcome::Annihilated);
    }
    let alpha = num / den;
    let w = it.point() + &g * alpha;
    let space = TangentSpace::from_matrix(&w, it.rank())?;
    let residual = residual_at(op, y, &space)?;
    let info = StepInfo { alpha, beta: None, restarted: false };
    Ok(StepOutcome::Moved(Iterate { space, residual, memory: Memory::Dense(g) }, info))
}

/// Conjugate gradient iterative hard thresholding step (non-restarted).
pub fn step_cgiht<O: SensingOperator + ?Sized>(it: &Iterate, op: &O, y: &Measurements) -> Result<StepOutcome> {
    let g = op.adjoint(&it.residual)?;
    let u = it.space.u();
    let gtu = g.tr_mul(u);
    let gnorm2 = gtu.norm_squared();
    if gnorm2 == 0.0 {
        return Ok(StepOutcome::Annihilated);
    }
    let prev = match &it.memory {
        Memory::Dense(p) => Some(p),
        _ => None,
    };
    let (direction, num, a_dir, beta) = match prev {
        Some(p) => {
            let ptu = p.tr_mul(u);
            let mut v = op.apply_low_rank_many(&[(u, &gtu), (u, &ptu)])?;
            let a_prev = v.pop().unwrap();
            let a_grad = v.pop().unwrap();
            let den = a_prev.norm_squared();
            let beta = if den <= BETA_FLOOR * it.residual.norm_squared() { 0.0 } else { -a_grad.dot(&a_prev) / den };
            if beta == 0.0 {
                (g, gnorm2, a_grad, 0.0)
            } else {
                let num = gnorm2 + beta * inner(&gtu, &ptu);
                (&g + p * beta, num, &a_grad + &a_prev * beta, beta)
            }
        }
        None => {
            let a_grad = op.apply_low_rank(u, &gtu)?;
            (g, gnorm2, a_grad, 0.0)
        }
    };
    let den = a_dir.norm_squared();
    if den == 0.0 {
        return Ok(StepOutcome::Annihilated);
    }
    let alpha = num / den;
    let w = it.point() + &direction * alpha;
    let space = TangentSpace::from_matrix(&w, it.rank())?;
    let residual = residual_at(op, y, &space)?;
    let info = StepInfo { alpha, beta: Some(beta), restarted: false };
    Ok(StepOutcome::Moved(Iterate { space, residual, memory: Memory::Dense(direction) }, info))
}

/// Factored iterate `L R` for alternating steepest descent.
#[derive(Debug, Clone)]
pub struct AsdIterate {
    /// m×r.
    pub left: DenseMatrix,
    /// r×n.
    pub right: DenseMatrix,
    pub residual: Measurements,
}

impl AsdIterate {
    /// Balanced factors `U√Σ`, `√Σ Vᵀ` of the point held by `space`.
    pub fn from_space<O: SensingOperator + ?Sized>(op: &O, y: &Measurements, space: &TangentSpace) -> Result<Self> {
        let mut left = space.u().clone();
        let mut right_t = space.v().clone();
        for (j, s) in space.sigma().iter().enumerate() {
            let root = s.sqrt();
            left.column_mut(j).scale_mut(root);
            right_t.column_mut(j).scale_mut(root);
        }
        Self::new(op, y, left, right_t.transpose())
    }

    pub fn new<O: SensingOperator + ?Sized>(
        op: &O,
        y: &Measurements,
        left: DenseMatrix,
        right: DenseMatrix,
    ) -> Result<Self> {
        let residual = y - op.apply_low_rank(&left, &right.transpose())?;
        Ok(AsdIterate { left, right, residual })
    }

    pub fn point(&self) -> DenseMatrix {
        &self.left * &self.right
    }

    /// Recomputes the residual from scratch, discarding accumulated rounding.
    pub fn refresh_residual<O: SensingOperator + ?Sized>(&mut self, op: &O, y: &Measurements) -> Result<()> {
        self.residual = y - op.apply_low_rank(&self.left, &self.right.transpose())?;
        Ok(())
    }
}

/// Stepsizes of the two half-steps; `None` marks a skipped half-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsdInfo {
    pub t_left: Option<f64>,
    pub t_right: Option<f64>,
}

/// Alternating steepest descent: exact line search on `L`, then on `R`.
///
/// The residual is updated by linearity, `res ← res − t A(D R)`, which costs
/// one forward application per half-step.
pub fn step_asd<O: SensingOperator + ?Sized>(f: &mut AsdIterate, op: &O) -> Result<AsdInfo> {
    let right_t = f.right.transpose();
    let (d_left, _) = op.adjoint_products(&f.residual, &f.left, &right_t)?;
    let num = d_left.norm_squared();
    let ad = op.apply_low_rank(&d_left, &right_t)?;
    let den = ad.norm_squared();
    let t_left = if num > 0.0 && den > 0.0 {
        let t = num / den;
        f.left += &d_left * t;
        f.residual -= &ad * t;
        Some(t)
    } else {
        None
    };

    let (_, d_right_t) = op.adjoint_products(&f.residual, &f.left, &right_t)?;
    let num = d_right_t.norm_squared();
    let ad = op.apply_low_rank(&f.left, &d_right_t)?;
    let den = ad.norm_squared();
    let t_right = if num > 0.0 && den > 0.0 {
        let t = num / den;
        f.right += d_right_t.transpose() * t;
        f.residual -= &ad * t;
        Some(t)
    } else {
        None
    };
    Ok(AsdInfo { t_left, t_right })
}

/// Counts forward and adjoint applications made through it.
pub struct Counted<'a, O: ?Sized> {
    inner: &'a O,
    applies: AtomicU64,
    adjoints: AtomicU64,
}

impl<'a, O: SensingOperator + ?Sized> Counted<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        Counted { inner, applies: AtomicU64::new(0), adjoints: AtomicU64::new(0) }
    }

    pub fn applies(&self) -> u64 {
        self.applies.load(Ordering::Relaxed)
    }

    pub fn adjoints(&self) -> u64 {
        self.adjoints.load(Ordering::Relaxed)
    }

    fn count_apply(&self, k: usize) {
        self.applies.fetch_add(k as u64, Ordering::Relaxed);
    }

    fn count_adjoint(&self) {
        self.adjoints.fetch_add(1, Ordering::Relaxed);
    }
}

impl<O: SensingOperator + ?Sized> SensingOperator for Counted<'_, O> {
    fn rows(&self) -> usize {
        self.inner.rows()
    }
    fn cols(&self) -> usize {
        self.inner.cols()
    }
    fn measurements(&self) -> usize {
        self.inner.measurements()
    }
    fn apply(&self, z: &DenseMatrix) -> Result<Measurements> {
        self.count_apply(1);
        self.inner.apply(z)
    }
    fn adjoint(&self, v: &Measurements) -> Result<DenseMatrix> {
        self.count_adjoint();
        self.inner.adjoint(v)
    }
    fn apply_many(&self, zs: &[&DenseMatrix]) -> Result<Vec<Measurements>> {
        self.count_apply(zs.len());
        self.inner.apply_many(zs)
    }
    fn apply_low_rank_many(&self, factors: &[(&DenseMatrix, &DenseMatrix)]) -> Result<Vec<Measurements>> {
        self.count_apply(factors.len());
        self.inner.apply_low_rank_many(factors)
    }
    fn adjoint_products(
        &self,
        v: &Measurements,
        u: &DenseMatrix,
        vmat: &DenseMatrix,
    ) -> Result<(DenseMatrix, DenseMatrix)> {
        self.count_adjoint();
        self.inner.adjoint_products(v, u, vmat)
    }
}
