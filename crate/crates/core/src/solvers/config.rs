use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tangent::SubspaceSelection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Niht,
    Cgiht,
    Rgrad,
    Rcg,
    RcgRestarted,
    Asd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] =
        [Algorithm::Niht, Algorithm::Cgiht, Algorithm::Rgrad, Algorithm::Rcg, Algorithm::RcgRestarted, Algorithm::Asd];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Niht => "niht",
            Algorithm::Cgiht => "cgiht",
            Algorithm::Rgrad => "rgrad",
            Algorithm::Rcg => "rcg",
            Algorithm::RcgRestarted => "rcg-restarted",
            Algorithm::Asd => "asd",
        }
    }

    /// Riemannian methods: projected directions and the factored retraction.
    pub fn is_riemannian(self) -> bool {
        matches!(self, Algorithm::Rgrad | Algorithm::Rcg | Algorithm::RcgRestarted)
    }

    pub fn is_conjugate(self) -> bool {
        matches!(self, Algorithm::Rcg | Algorithm::RcgRestarted)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config("algorithm", format!("unknown algorithm `{s}`")))
    }
}

/// Choice of the conjugate-gradient weight `β`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BetaRule {
    /// `β = −⟨A ξ_G, A P⟩ / ‖A P‖²`, making consecutive directions conjugate.
    #[default]
    ConjugateOrthogonal,
    FletcherReeves,
    PolakRibiere,
    /// `max(β_PR, 0)`.
    PolakRibierePlus,
}

/// How the rank-`r` iterate is recovered from `X + αP` in the Riemannian methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Retraction {
    /// `2r×2r` core SVD.
    #[default]
    Fast,
    /// Forms `W` densely and takes its full SVD. For cross-checking only.
    DenseSvd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub rank: usize,
    /// Only meaningful for `rcg` and `rcg-restarted`; defaults to conjugate-orthogonal there.
    pub beta_rule: Option<BetaRule>,
    pub kappa1: f64,
    pub kappa2: f64,
    pub max_iters: usize,
    pub rel_residual_tol: f64,
    pub warm_start_niht_iters: usize,
    /// `0` disables stall detection.
    pub stall_window: usize,
    pub stall_tol: f64,
    /// Recorded for provenance; every solver is deterministic.
    pub seed: u64,
    pub subspace: SubspaceSelection,
    pub retraction: Retraction,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            algorithm: Algorithm::Rgrad,
            rank: 1,
            beta_rule: None,
            kappa1: 0.1,
            kappa2: 1.0,
            max_iters: 5000,
            rel_residual_tol: 1e-9,
            warm_start_niht_iters: 0,
            stall_window: 50,
            stall_tol: 1e-14,
            seed: 0,
            subspace: SubspaceSelection::Tangent,
            retraction: Retraction::Fast,
        }
    }
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, rank: usize) -> Self {
        SolverConfig { algorithm, rank, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::config("rank", "must be positive"));
        }
        if !(self.kappa1 > 0.0 && self.kappa1 < 1.0) {
            return Err(Error::config("kappa1", format!("must lie in (0, 1), got {}", self.kappa1)));
        }
        if !(self.kappa2 >= 1.0 && self.kappa2.is_finite()) {
            return Err(Error::config("kappa2", format!("must be at least 1, got {}", self.kappa2)));
        }
        if !(self.rel_residual_tol > 0.0 && self.rel_residual_tol.is_finite()) {
            return Err(Error::config("rel_residual_tol", "must be positive"));
        }
        if !(self.stall_tol > 0.0 && self.stall_tol.is_finite()) {
            return Err(Error::config("stall_tol", "must be positive"));
        }
        if self.beta_rule.is_some() && !self.algorithm.is_conjugate() {
            return Err(Error::config(
                "beta_rule",
                format!("only applies to rcg and rcg-restarted, not {}", self.algorithm),
            ));
        }
        if self.subspace != SubspaceSelection::Tangent && !self.algorithm.is_riemannian() {
            return Err(Error::config(
                "subspace",
                format!("subspace selection only applies to Riemannian methods, not {}", self.algorithm),
            ));
        }
        if self.retraction != Retraction::Fast && !self.algorithm.is_riemannian() {
            return Err(Error::config("retraction", format!("not used by {}", self.algorithm)));
        }
        Ok(())
    }

    pub fn beta_rule_or_default(&self) -> BetaRule {
        self.beta_rule.unwrap_or_default()
    }
}
