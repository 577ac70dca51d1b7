//! Run configuration: every flag also exists as a key of the `--config` JSON
//! file, with dashes replaced by underscores. Flags win over file values.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use rlr_core::harness::{BracketMode, Sampling};
use rlr_core::sensing::{GaussianScale, SensingKind};
use rlr_core::solvers::{Algorithm, BetaRule, Retraction};
use rlr_core::tangent::SubspaceSelection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Recover one synthetic instance.
    Solve,
    /// Bracket the recovery phase transition over one or more δ.
    Phase,
    /// Residual-versus-iteration curves over seeded trials.
    Bench,
    /// Evaluate the convergence constants for given RIC values.
    Theory,
    /// Sampled lower bound on the restricted isometry constant.
    RicEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Jsonl,
    Json,
}

/// All run parameters. `None` means "not given"; each command supplies its
/// own defaults and reports missing required fields by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Must match the command on the command line when set in a file.
    #[arg(skip)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,

    /// niht, cgiht, rgrad, rcg, rcg-restarted or asd.
    #[arg(long, value_parser = kebab::<Algorithm>)]
    pub alg: Option<Algorithm>,
    /// Comma-separated algorithms for `bench`.
    #[arg(long, value_delimiter = ',', value_parser = kebab::<Algorithm>)]
    pub algs: Option<Vec<Algorithm>>,

    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    /// gaussian or entry.
    #[arg(long, value_parser = kebab::<SensingKind>)]
    pub sensing: Option<SensingKind>,
    /// Gaussian normalisation: normalized (1/√p) or raw.
    #[arg(long, value_parser = kebab::<GaussianScale>)]
    pub scale: Option<GaussianScale>,

    /// Undersampling ratio p/(mn).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Comma-separated δ values for `phase`.
    #[arg(long, value_delimiter = ',')]
    pub deltas: Option<Vec<f64>>,
    /// Measurements per degree of freedom, p/((m+n−r)r).
    #[arg(long)]
    pub inv_rho: Option<f64>,
    /// Measurement count.
    #[arg(long)]
    pub p: Option<usize>,

    /// Base seed for every random quantity.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `solve`: draw the ground truth from this seed and report the relative error.
    #[arg(long)]
    pub ground_truth_seed: Option<u64>,

    #[arg(long)]
    pub kappa1: Option<f64>,
    #[arg(long)]
    pub kappa2: Option<f64>,
    /// conjugate-orthogonal, fletcher-reeves, polak-ribiere or polak-ribiere-plus.
    #[arg(long, value_parser = kebab::<BetaRule>)]
    pub beta_rule: Option<BetaRule>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Relative residual at which a solve stops.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub stall_window: Option<usize>,
    #[arg(long)]
    pub stall_tol: Option<f64>,
    #[arg(long)]
    pub warm_start_niht_iters: Option<usize>,
    /// tangent, column-only or row-only.
    #[arg(long, value_parser = kebab::<SubspaceSelection>)]
    pub subspace: Option<SubspaceSelection>,
    /// fast or dense-svd.
    #[arg(long, value_parser = kebab::<Retraction>)]
    pub retraction: Option<Retraction>,

    /// Trials per rank (`phase`), per algorithm (`bench`) or random matrices (`ric-estimate`).
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub r_cap: Option<usize>,
    #[arg(long)]
    pub start_rank: Option<usize>,
    /// exhaustive or decisive.
    #[arg(long, value_parser = kebab::<BracketMode>)]
    pub mode: Option<BracketMode>,

    #[arg(long)]
    pub r2r: Option<f64>,
    #[arg(long)]
    pub r3r: Option<f64>,
    #[arg(long)]
    pub sigma_min: Option<f64>,
    #[arg(long)]
    pub sigma_max: Option<f64>,
    #[arg(long)]
    pub x_frob: Option<f64>,
    /// `theory`: fill missing inputs from a generated instance, using sampled RIC lower bounds.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub estimate_ric: Option<bool>,

    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Also write the recovered and true matrices.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub dump_matrices: Option<bool>,
    /// Worker threads; falls back to RLR_THREADS.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Parses a value through its serde name, so flags and JSON accept the same spellings.
fn kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug)]
pub enum CliError {
    /// Bad or missing input; exit code 2.
    Config { field: String, reason: String },
    /// Failure while running; exit code 1.
    Backend(String),
}

impl CliError {
    pub fn config(field: &str, reason: impl Into<String>) -> Self {
        CliError::Config { field: field.to_string(), reason: reason.into() }
    }

    pub fn missing(field: &str) -> Self {
        CliError::config(field, "required but not given")
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Backend(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { field, reason } => write!(f, "invalid configuration field `{field}`: {reason}"),
            CliError::Backend(msg) => f.write_str(msg),
        }
    }
}

impl From<rlr_core::Error> for CliError {
    fn from(e: rlr_core::Error) -> Self {
        match e {
            rlr_core::Error::Config { field, reason } => CliError::Config { field, reason },
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Backend(format!("io error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Backend(format!("serialization error: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("config", format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(&json_field(&e.to_string()), e.to_string()))
    }

    /// `self` with every unset field taken from `base`.
    pub fn over(self, base: RunConfig) -> CliResult<Self> {
        let Value::Object(mut merged) = serde_json::to_value(base)? else { unreachable!() };
        let Value::Object(top) = serde_json::to_value(self)? else { unreachable!() };
        for (k, v) in top {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
        Ok(serde_json::from_value(Value::Object(merged))?)
    }

    pub fn require<T: Clone>(value: &Option<T>, field: &str) -> CliResult<T> {
        value.clone().ok_or_else(|| CliError::missing(field))
    }

    /// Exactly one of `delta`, `inv_rho` and `p`.
    pub fn sampling(&self) -> CliResult<Sampling> {
        match (self.delta, self.inv_rho, self.p) {
            (Some(d), None, None) => Ok(Sampling::Delta(d)),
            (None, Some(k), None) => Ok(Sampling::InvRho(k)),
            (None, None, Some(p)) => Ok(Sampling::Count(p)),
            (None, None, None) => Err(CliError::config("delta", "one of delta, inv_rho or p is required")),
            _ => Err(CliError::config("delta", "give only one of delta, inv_rho and p")),
        }
    }

    pub fn threads(&self) -> CliResult<Option<usize>> {
        if let Some(t) = self.threads {
            return Ok(Some(t));
        }
        match std::env::var("RLR_THREADS") {
            Ok(s) if !s.trim().is_empty() => s
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| CliError::config("threads", format!("RLR_THREADS={s} is not a count"))),
            _ => Ok(None),
        }
    }
}

/// Best-effort field name from a serde error such as "unknown field `foo`".
fn json_field(msg: &str) -> String {
    msg.split('`').nth(1).unwrap_or("config").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file = RunConfig { m: Some(10), n: Some(12), seed: Some(1), ..Default::default() };
        let flags = RunConfig { m: Some(20), ..Default::default() };
        let merged = flags.over(file).unwrap();
        assert_eq!((merged.m, merged.n, merged.seed), (Some(20), Some(12), Some(1)));
    }

    #[test]
    fn sampling_needs_exactly_one_source() {
        let mut c = RunConfig::default();
        assert!(matches!(c.sampling(), Err(CliError::Config { .. })));
        c.delta = Some(0.1);
        assert_eq!(c.sampling().unwrap(), Sampling::Delta(0.1));
        c.p = Some(5);
        assert!(matches!(c.sampling(), Err(CliError::Config { ref field, .. }) if field == "delta"));
    }

    #[test]
    fn file_keys_use_serde_names() {
        let c: RunConfig = serde_json::from_str(
            r#"{"alg": "rcg-restarted", "sensing": "gaussian", "inv_rho": 2.0, "command": "solve"}"#,
        )
        .unwrap();
        assert_eq!(c.alg, Some(Algorithm::RcgRestarted));
        assert_eq!(c.command, Some(Command::Solve));
        let err = serde_json::from_str::<RunConfig>(r#"{"kapa1": 0.1}"#).unwrap_err();
        assert_eq!(json_field(&err.to_string()), "kapa1");
    }

    #[test]
    fn kebab_matches_serde() {
        assert_eq!(kebab::<Algorithm>("rcg-restarted").unwrap(), Algorithm::RcgRestarted);
        assert_eq!(kebab::<SubspaceSelection>("column-only").unwrap(), SubspaceSelection::ColumnOnly);
        assert!(kebab::<SensingKind>("sparse").is_err());
    }
}
