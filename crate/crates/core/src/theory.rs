//! Closed-form recovery-guarantee constants for Riemannian gradient descent
//! and restarted Riemannian conjugate gradient, plus the three-term
//! recurrence that turns the conjugate gradient bound into a linear rate.
//!
//! Everything here takes restricted isometry constants as inputs. True RICs
//! are intractable to compute; values produced by
//! [`estimate_ric_lower_bound`](crate::sensing::estimate_ric_lower_bound) are
//! lower bounds, so a guarantee evaluated from them can only rule recovery
//! guarantees *out*, never in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when checking the `‖X‖_F` versus `σ_max` invariants.
const NORM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuaranteeInputs {
    /// `R_{2r}`
    pub r2r: f64,
    /// `R_{3r}`
    pub r3r: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// `‖X‖_F`
    pub x_frob: f64,
    pub r: usize,
    #[serde(default = "default_kappa1")]
    pub kappa1: f64,
    #[serde(default = "default_kappa2")]
    pub kappa2: f64,
}

fn default_kappa1() -> f64 {
    0.1
}

fn default_kappa2() -> f64 {
    1.0
}

impl GuaranteeInputs {
    /// Inputs for a matrix with the given spectrum summary, κ₁ = 0.1, κ₂ = 1.
    pub fn new(r2r: f64, r3r: f64, sigma_min: f64, sigma_max: f64, x_frob: f64, r: usize) -> Self {
        GuaranteeInputs {
            r2r,
            r3r,
            sigma_min,
            sigma_max,
            x_frob,
            r,
            kappa1: default_kappa1(),
            kappa2: default_kappa2(),
        }
    }

    pub fn with_kappas(mut self, kappa1: f64, kappa2: f64) -> Self {
        self.kappa1 = kappa1;
        self.kappa2 = kappa2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.r2r, self.r3r, self.sigma_min, self.sigma_max, self.x_frob, self.kappa1, self.kappa2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("all inputs must be finite".into()));
        }
        for (name, v) in [("R_2r", self.r2r), ("R_3r", self.r3r)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Domain(format!("{name} = {v} must lie in [0, 1)")));
            }
        }
        if self.r2r > self.r3r {
            return Err(Error::Domain(format!("R_2r = {} exceeds R_3r = {}", self.r2r, self.r3r)));
        }
        if self.r == 0 {
            return Err(Error::Domain("r must be positive".into()));
        }
        if self.sigma_min <= 0.0 || self.sigma_min > self.sigma_max {
            return Err(Error::Domain(format!(
                "need 0 < sigma_min <= sigma_max, got {} and {}",
                self.sigma_min, self.sigma_max
            )));
        }
        let upper = (self.r as f64).sqrt() * self.sigma_max;
        if self.x_frob < self.sigma_max * (1.0 - NORM_SLACK) || self.x_frob > upper * (1.0 + NORM_SLACK) {
            return Err(Error::Domain(format!(
                "x_frob = {} must lie in [sigma_max, sqrt(r) sigma_max] = [{}, {}]",
                self.x_frob, self.sigma_max, upper
            )));
        }
        if self.kappa1 < 0.0 || self.kappa2 < 0.0 {
            return Err(Error::Domain("kappa1 and kappa2 must be nonnegative".into()));
        }
        Ok(())
    }

    fn frob_term(&self) -> f64 {
        4.0 * self.r2r * self.x_frob / self.sigma_min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeReport {
    pub gamma: f64,
    pub mu: f64,
    /// Present for the conjugate gradient guarantee only.
    pub epsilon_alpha: Option<f64>,
    pub epsilon_beta: Option<f64>,
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    /// `γ < 1`
    pub satisfied: bool,
    /// RIC level `R_{3r}` at or below which `γ < 1` is implied.
    pub ric_sufficient: f64,
    pub ric_condition_met: bool,
    /// Worst-case `‖X_0 − X‖_F` after hard-thresholded initialisation, `2 R_{2r} ‖X‖_F`.
    pub initial_error_bound: f64,
}

/// Gradient descent guarantee: `γ = (4R_{2r} + 2R_{3r})/(1 − R_{2r}) + 4R_{2r}‖X‖_F/σ_min`, `μ = γ`.
pub fn gamma_rgrad(inputs: &GuaranteeInputs) -> Result<GuaranteeReport> {
    inputs.validate()?;
    let i = inputs;
    let gamma = (4.0 * i.r2r + 2.0 * i.r3r) / (1.0 - i.r2r) + i.frob_term();
    let ric_sufficient = ric_threshold(i, 12.0);
    Ok(GuaranteeReport {
        gamma,
        mu: gamma,
        epsilon_alpha: None,
        epsilon_beta: None,
        tau1: None,
        tau2: None,
        satisfied: gamma < 1.0,
        ric_sufficient,
        ric_condition_met: i.r3r <= ric_sufficient,
        initial_error_bound: 2.0 * i.r2r * i.x_frob,
    })
}

/// Restarted conjugate gradient guarantee with restart constants κ₁, κ₂.
///
/// The RIC threshold `σ_min/σ_max · 1/(25√r)` is the one established for
/// κ₁ = 0.1, κ₂ = 1; for other constants it is reported but carries no proof.
pub fn gamma_rcg(inputs: &GuaranteeInputs) -> Result<GuaranteeReport> {
    inputs.validate()?;
    let i = inputs;
    let (k1, k2, r2) = (i.kappa1, i.kappa2, i.r2r);
    let denom = (1.0 - r2) - k1 * (1.0 + r2);
    if denom <= 0.0 {
        return Err(Error::Domain(format!("(1 - R_2r) - kappa1 (1 + R_2r) = {denom} must be positive")));
    }
    let eps_a = r2 / denom;
    let eps_b = k2 * r2 / (1.0 - r2) + k1 * k2 / (1.0 - r2);
    let tau1 = 2.0 * (r2 + i.r3r) * (1.0 + eps_a) + 2.0 * eps_a + i.frob_term() + eps_b;
    let tau2 = 2.0 * eps_b * (1.0 + eps_a) * (1.0 + r2);
    let gamma = tau1 + tau2;
    let ric_sufficient = ric_threshold(i, 25.0);
    Ok(GuaranteeReport {
        gamma,
        mu: three_term_rate(tau1, tau2),
        epsilon_alpha: Some(eps_a),
        epsilon_beta: Some(eps_b),
        tau1: Some(tau1),
        tau2: Some(tau2),
        satisfied: gamma < 1.0,
        ric_sufficient,
        ric_condition_met: i.r3r <= ric_sufficient,
        initial_error_bound: 2.0 * r2 * i.x_frob,
    })
}

fn ric_threshold(i: &GuaranteeInputs, c: f64) -> f64 {
    i.sigma_min / i.sigma_max / (c * (i.r as f64).sqrt())
}

/// `μ = (τ₁ + √(τ₁² + 4τ₂)) / 2`
pub fn three_term_rate(tau1: f64, tau2: f64) -> f64 {
    0.5 * (tau1 + (tau1 * tau1 + 4.0 * tau2).sqrt())
}

/// One-step contraction factor of gradient descent at the current error:
/// `‖X_{l+1} − X‖_F ≤ [(4R_{2r} + 2R_{3r})/(1 − R_{2r}) + 2‖X_l − X‖_F/σ_min] ‖X_l − X‖_F`.
///
/// At the worst-case initial error `2R_{2r}‖X‖_F` this equals the a-priori `γ`.
pub fn rgrad_step_factor(inputs: &GuaranteeInputs, current_error: f64) -> Result<f64> {
    inputs.validate()?;
    if current_error.is_nan() || current_error < 0.0 {
        return Err(Error::Domain(format!("current error {current_error} must be nonnegative")));
    }
    let i = inputs;
    Ok((4.0 * i.r2r + 2.0 * i.r3r) / (1.0 - i.r2r) + 2.0 * current_error / i.sigma_min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceCheck {
    pub mu: f64,
    /// `c_0, c_1, …` generated with equality in the recurrence.
    pub sequence: Vec<f64>,
    /// `τ₁ + τ₂ < 1`
    pub hypothesis_holds: bool,
    /// `c_l ≤ μ^l c_0` for every generated term.
    pub bound_holds: bool,
}

/// Worst case of `c_l ≤ τ₁ c_{l−1} + τ₂ c_{l−2}` run for `steps` terms after `c_0`.
pub fn recurrence_mu(tau1: f64, tau2: f64, c0: f64, c1: f64, steps: usize) -> Result<RecurrenceCheck> {
    if !(tau1 >= 0.0 && tau2 >= 0.0 && c0 >= 0.0 && c1 >= 0.0) || !(tau1 + tau2 + c0 + c1).is_finite() {
        return Err(Error::Domain("tau1, tau2, c0, c1 must be finite and nonnegative".into()));
    }
    let mu = three_term_rate(tau1, tau2);
    if c1 > mu * c0 * (1.0 + NORM_SLACK) {
        return Err(Error::Domain(format!("c1 = {c1} exceeds mu c0 = {}", mu * c0)));
    }
    let mut sequence = Vec::with_capacity(steps + 1);
    sequence.push(c0);
    if steps >= 1 {
        sequence.push(c1);
    }
    for l in 2..=steps {
        sequence.push(tau1 * sequence[l - 1] + tau2 * sequence[l - 2]);
    }
    let bound_holds =
        sequence.iter().enumerate().all(|(l, &c)| c <= mu.powi(l as i32) * c0 * (1.0 + NORM_SLACK) + f64::MIN_POSITIVE);
    Ok(RecurrenceCheck { mu, sequence, hypothesis_holds: tau1 + tau2 < 1.0, bound_holds })
}

/// Order-of-magnitude measurement count `max(m, n) · r · log(κ√r)` with unit
/// constant, where `κ = σ_max/σ_min`. The logarithm is floored at 1 so that
/// well-conditioned rank-1 targets do not report zero.
pub fn sampling_complexity(m: usize, n: usize, r: usize, condition: f64) -> Result<f64> {
    if m == 0 || n == 0 || r == 0 {
        return Err(Error::Domain("m, n and r must be positive".into()));
    }
    if !condition.is_finite() || condition < 1.0 {
        return Err(Error::Domain(format!("condition number {condition} must be >= 1")));
    }
    let log = (condition * (r as f64).sqrt()).ln().max(1.0);
    Ok((m.max(n) * r) as f64 * log)
}
