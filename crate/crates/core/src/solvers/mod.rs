//! NIHT, CGIHT, RGrad, RCG, restarted RCG and ASD behind one driver.
//!
//! [`solve`] initialises at `H_r(A*(y))`, optionally warm-starts with NIHT,
//! then iterates the selected method until the relative residual
//! `‖y − A(X_l)‖₂ / ‖y‖₂` drops below the tolerance, the iteration cap is hit,
//! or progress stalls.
//!
//! `ColumnOnly` and `RowOnly` subspace selections are accepted by the
//! Riemannian methods but do not converge in general: the iterate can never
//! leave its initial row (column) space.

mod config;
mod steps;
mod trace;

pub use config::{Algorithm, BetaRule, Retraction, SolverConfig};
pub use steps::{
    restart_check, step_asd, step_cgiht, step_niht, step_rcg, step_rgrad, AsdInfo, AsdIterate, Counted, Iterate,
    RestartPolicy, StepInfo, StepOptions, StepOutcome, BETA_FLOOR,
};
pub use trace::{IterRecord, SolverTrace, Status};

use crate::error::{Error, Result};
use crate::matcore::{DenseMatrix, ZERO_FLOOR};
use crate::sensing::{Measurements, SensingOperator};

/// ASD updates its residual by linearity; it is recomputed exactly this often.
const ASD_REFRESH: usize = 50;

#[derive(Debug, Clone)]
pub struct Solution {
    pub x_hat: DenseMatrix,
    pub trace: SolverTrace,
}

/// `H_r(A*(y))` with its residual and empty search history.
pub fn init_hard_threshold<O: SensingOperator + ?Sized>(op: &O, y: &Measurements, r: usize) -> Result<Iterate> {
    Iterate::init_hard_threshold(op, y, r)
}

/// Runs the configured method. `ground_truth`, when given, adds the relative
/// error `‖X_l − X‖_F / ‖X‖_F` to every trace record.
pub fn solve<O: SensingOperator + ?Sized>(
    op: &O,
    y: &Measurements,
    config: &SolverConfig,
    ground_truth: Option<&DenseMatrix>,
) -> Result<Solution> {
    config.validate()?;
    let (m, n) = (op.rows(), op.cols());
    if config.rank > m.min(n) {
        return Err(Error::config("rank", format!("{} exceeds min(m, n) = {}", config.rank, m.min(n))));
    }
    if y.len() != op.measurements() {
        return Err(Error::Contract(format!("expected {} measurements, got {}", op.measurements(), y.len())));
    }
    if let Some(x) = ground_truth {
        if x.shape() != (m, n) {
            return Err(Error::Contract("ground truth shape does not match the operator".into()));
        }
    }

    let counted = Counted::new(op);
    let mut run = Run::new(y, config, ground_truth);
    let it = Iterate::init_hard_threshold(&counted, y, config.rank)?;
    run.record(0, &it.residual, || it.point(), None)?;

    let (status, x_hat) = if config.algorithm == Algorithm::Asd {
        run.asd(&counted, y, it)?
    } else {
        let (status, last) = run.iterate(&counted, y, it)?;
        (status, last.point())
    };
    Ok(Solution { x_hat, trace: run.finish(status, &counted) })
}

struct Run<'a> {
    y_norm: f64,
    config: &'a SolverConfig,
    truth: Option<(&'a DenseMatrix, f64)>,
    records: Vec<IterRecord>,
}

impl<'a> Run<'a> {
    fn new(y: &Measurements, config: &'a SolverConfig, truth: Option<&'a DenseMatrix>) -> Self {
        Run {
            y_norm: y.norm().max(ZERO_FLOOR),
            config,
            truth: truth.map(|x| (x, x.norm().max(ZERO_FLOOR))),
            records: Vec::new(),
        }
    }

    fn record(
        &mut self,
        iter: usize,
        residual: &Measurements,
        point: impl FnOnce() -> DenseMatrix,
        info: Option<StepInfo>,
    ) -> Result<()> {
        let (alpha, beta) = (info.map(|i| i.alpha), info.and_then(|i| i.beta));
        self.push(iter, residual, point, alpha, beta, info.is_some_and(|i| i.restarted))
    }

    fn push(
        &mut self,
        iter: usize,
        residual: &Measurements,
        point: impl FnOnce() -> DenseMatrix,
        alpha: Option<f64>,
        beta: Option<f64>,
        restarted: bool,
    ) -> Result<()> {
        let rel_residual = residual.norm() / self.y_norm;
        if !rel_residual.is_finite() {
            return Err(Error::NonFinite(format!("relative residual at iteration {iter}")));
        }
        let rel_error = self.truth.map(|(x, xn)| (point() - x).norm() / xn);
        self.records.push(IterRecord { iter, rel_residual, alpha, beta, restarted, rel_error });
        Ok(())
    }

    /// Status if the run should stop before taking step `iter + 1`.
    fn should_stop(&self) -> Option<Status> {
        let last = self.records.last().expect("initial record present");
        if last.rel_residual <= self.config.rel_residual_tol {
            return Some(Status::Converged);
        }
        if last.iter >= self.config.max_iters {
            return Some(Status::MaxIters);
        }
        let w = self.config.stall_window;
        if w > 0 && self.records.len() > w {
            let old = self.records[self.records.len() - 1 - w].rel_residual;
            if old - last.rel_residual < self.config.stall_tol * old {
                return Some(Status::Stalled);
            }
        }
        None
    }

    fn iterate<O: SensingOperator + ?Sized>(
        &mut self,
        op: &O,
        y: &Measurements,
        mut it: Iterate,
    ) -> Result<(Status, Iterate)> {
        let c = self.config;
        let opts = StepOptions {
            subspace: c.subspace,
            retraction: c.retraction,
            beta_rule: c.beta_rule_or_default(),
            restart: match c.algorithm {
                Algorithm::RcgRestarted => RestartPolicy::Conditions { kappa1: c.kappa1, kappa2: c.kappa2 },
                _ => RestartPolicy::Never,
            },
        };
        let mut iter = 0;
        loop {
            if let Some(status) = self.should_stop() {
                return Ok((status, it));
            }
            let warm = iter < c.warm_start_niht_iters;
            let outcome = if warm {
                step_niht(&it, op, y)?
            } else {
                match c.algorithm {
                    Algorithm::Niht => step_niht(&it, op, y)?,
                    Algorithm::Cgiht => step_cgiht(&it, op, y)?,
                    Algorithm::Rgrad => step_rgrad(&it, op, y, &opts)?,
                    Algorithm::Rcg | Algorithm::RcgRestarted => step_rcg(&it, op, y, &opts)?,
                    Algorithm::Asd => unreachable!("ASD has its own loop"),
                }
            };
            let (mut next, info) = match outcome {
                StepOutcome::Moved(next, info) => (next, info),
                StepOutcome::Annihilated => return Ok((Status::Stalled, it)),
            };
            iter += 1;
            if warm && iter == c.warm_start_niht_iters && c.algorithm != Algorithm::Niht {
                next.forget_history();
            }
            self.record(iter, &next.residual, || next.point(), Some(info))?;
            it = next;
        }
    }

    fn asd<O: SensingOperator + ?Sized>(
        &mut self,
        op: &O,
        y: &Measurements,
        it: Iterate,
    ) -> Result<(Status, DenseMatrix)> {
        let c = self.config;
        let mut iter = 0;
        let mut warm = it;
        while iter < c.warm_start_niht_iters {
            if let Some(status) = self.should_stop() {
                return Ok((status, warm.point()));
            }
            match step_niht(&warm, op, y)? {
                StepOutcome::Moved(next, info) => {
                    iter += 1;
                    self.record(iter, &next.residual, || next.point(), Some(info))?;
                    warm = next;
                }
                StepOutcome::Annihilated => return Ok((Status::Stalled, warm.point())),
            }
        }
        let mut f = AsdIterate::from_space(op, y, &warm.space)?;
        loop {
            if let Some(status) = self.should_stop() {
                return Ok((status, f.point()));
            }
            let info = step_asd(&mut f, op)?;
            if info.t_left.is_none() && info.t_right.is_none() {
                return Ok((Status::Stalled, f.point()));
            }
            iter += 1;
            if iter % ASD_REFRESH == 0 {
                f.refresh_residual(op, y)?;
            }
            let rel = f.residual.norm() / self.y_norm;
            if rel <= c.rel_residual_tol && iter % ASD_REFRESH != 0 {
                // confirm convergence against the exact residual
                f.refresh_residual(op, y)?;
            }
            self.push(iter, &f.residual, || f.point(), info.t_left, info.t_right, false)?;
        }
    }

    fn finish<O: SensingOperator + ?Sized>(self, status: Status, counted: &Counted<'_, O>) -> SolverTrace {
        SolverTrace { records: self.records, status, applies: counted.applies(), adjoints: counted.adjoints() }
    }
}
