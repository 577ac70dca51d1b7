//! Experiment harness: seeded problem generation, success adjudication,
//! phase-transition rank brackets and convergence benchmarks.
//!
//! Every random quantity derives from a base seed through [`derive_seed`], so
//! a sweep is reproducible trial by trial no matter how trials are scheduled.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::matcore::{relative_diff, DenseMatrix};
use crate::sensing::{
    EntrySensing, GaussianScale, GaussianSensing, Measurements, Operator, SensingKind, SensingOperator,
};
use crate::solvers::{solve, Algorithm, SolverConfig, Status};

/// Relative Frobenius error at or below which a recovery counts as a success.
pub const SUCCESS_TOL: f64 = 1e-2;

/// Splitmix64 chain over `parts`.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        h = splitmix(h ^ splitmix(p));
    }
    h
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How the measurement count is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// `p = round(δ·m·n)`
    Delta(f64),
    /// `p = round((1/ρ)·(m + n − r)·r)`
    InvRho(f64),
    Count(usize),
}

/// `ρ = (m + n − r)·r / p`
pub fn oversampling(m: usize, n: usize, r: usize, p: usize) -> f64 {
    degrees_of_freedom(m, n, r) as f64 / p as f64
}

/// `(m + n − r)·r`, the dimension of the rank-r manifold.
pub fn degrees_of_freedom(m: usize, n: usize, r: usize) -> usize {
    (m + n - r) * r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub sensing: SensingKind,
    pub sampling: Sampling,
    pub seed: u64,
    #[serde(default)]
    pub scale: GaussianScale,
}

impl ProblemSpec {
    pub fn new(m: usize, n: usize, r: usize, sensing: SensingKind, sampling: Sampling, seed: u64) -> Self {
        ProblemSpec { m, n, r, sensing, sampling, seed, scale: GaussianScale::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn measurements(&self) -> Result<usize> {
        let mn = self.m * self.n;
        let p = match self.sampling {
            Sampling::Delta(d) => {
                if !(d > 0.0 && d <= 1.0) {
                    return Err(Error::config("delta", format!("{d} must lie in (0, 1]")));
                }
                (d * mn as f64).round() as usize
            }
            Sampling::InvRho(k) => {
                if !(k.is_finite() && k > 0.0) {
                    return Err(Error::config("inv_rho", format!("{k} must be positive")));
                }
                (k * degrees_of_freedom(self.m, self.n, self.r) as f64).round() as usize
            }
            Sampling::Count(p) => p,
        };
        if p == 0 || p > mn {
            return Err(Error::config("p", format!("{p} measurements for a {}x{} matrix", self.m, self.n)));
        }
        Ok(p)
    }

    pub fn delta(&self) -> Result<f64> {
        Ok(self.measurements()? as f64 / (self.m * self.n) as f64)
    }

    pub fn rho(&self) -> Result<f64> {
        Ok(oversampling(self.m, self.n, self.r, self.measurements()?))
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::config("m", "matrix dimensions must be positive"));
        }
        if self.r == 0 || self.r > self.m.min(self.n) {
            return Err(Error::config("r", format!("{} must lie in [1, min(m, n)]", self.r)));
        }
        self.measurements().map(|_| ())
    }

    /// True when there are at least as many measurements as degrees of freedom.
    pub fn is_meaningful(&self) -> Result<bool> {
        Ok(self.rho()? <= 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub x: DenseMatrix,
    pub op: Operator,
    pub y: Measurements,
}

/// `X = L·R` with standard normal factors, its sensing operator and `y = A(X)`.
pub fn generate_problem(spec: &ProblemSpec) -> Result<Problem> {
    generate_problem_with(spec, Exec::default())
}

pub fn generate_problem_with(spec: &ProblemSpec, exec: Exec) -> Result<Problem> {
    generate_problem_split(spec, spec.seed, spec.seed, exec)
}

/// Like [`generate_problem_with`], but the ground truth comes from
/// `truth_seed` and the operator from `op_seed`. With both equal to
/// `spec.seed` this is the same instance.
pub fn generate_problem_split(spec: &ProblemSpec, truth_seed: u64, op_seed: u64, exec: Exec) -> Result<Problem> {
    spec.validate()?;
    let p = spec.measurements()?;
    let (m, n, r) = (spec.m, spec.n, spec.r);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[truth_seed, 0]));
    let left = DenseMatrix::from_fn(m, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let right = DenseMatrix::from_fn(r, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = &left * &right;
    let op_seed = derive_seed(&[op_seed, 1]);
    let op = match spec.sensing {
        SensingKind::Gaussian => {
            Operator::Gaussian(GaussianSensing::new(m, n, p, op_seed, spec.scale)?.with_exec(exec))
        }
        SensingKind::Entry => Operator::Entry(EntrySensing::new(m, n, p, op_seed)?),
    };
    let y = op.apply_low_rank(&left, &right.transpose())?;
    Ok(Problem { spec: *spec, x, op, y })
}

/// `‖X̂ − X‖_F / ‖X‖_F ≤ 10⁻²`
pub fn is_success(x_hat: &DenseMatrix, x: &DenseMatrix) -> bool {
    x_hat.shape() == x.shape() && relative_diff(x_hat, x) <= SUCCESS_TOL
}

/// Stopping rule used for recovery trials, where only a 10⁻² error matters.
///
/// A trial stops at relative residual 10⁻⁶, after 3000 iterations, or when
/// the residual improved by less than 10% over the last 100 iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhasePolicy {
    pub rel_residual_tol: f64,
    pub max_iters: usize,
    pub stall_window: usize,
    pub stall_tol: f64,
}

impl Default for PhasePolicy {
    fn default() -> Self {
        PhasePolicy { rel_residual_tol: 1e-6, max_iters: 3000, stall_window: 100, stall_tol: 0.1 }
    }
}

impl PhasePolicy {
    pub fn apply(&self, config: &mut SolverConfig) {
        config.rel_residual_tol = self.rel_residual_tol;
        config.max_iters = self.max_iters;
        config.stall_window = self.stall_window;
        config.stall_tol = self.stall_tol;
    }
}

/// How many of the trials at one rank are run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BracketMode {
    /// Run every trial at every visited rank.
    Exhaustive,
    /// Stop a rank as soon as it has both a success and a failure. The
    /// bracket is unchanged; per-rank success counts become partial.
    #[default]
    Decisive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub m: usize,
    pub n: usize,
    pub sensing: SensingKind,
    pub delta: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Highest rank tried. Defaults to the largest rank with `ρ ≤ 1`, since
    /// beyond it there are fewer measurements than unknowns.
    #[serde(default)]
    pub r_cap: Option<usize>,
    /// First rank tried. Defaults to a one-trial bisection for the largest
    /// rank whose first trial succeeds.
    #[serde(default)]
    pub start_rank: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: BracketMode,
    #[serde(default)]
    pub policy: PhasePolicy,
    /// Algorithm and solver options; `rank` and the stopping fields are overwritten per trial.
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub scale: GaussianScale,
}

fn default_trials() -> usize {
    10
}

impl PhaseConfig {
    pub fn new(m: usize, n: usize, sensing: SensingKind, delta: f64, algorithm: Algorithm) -> Self {
        PhaseConfig {
            m,
            n,
            sensing,
            delta,
            trials: default_trials(),
            r_cap: None,
            start_rank: None,
            seed: 0,
            mode: BracketMode::default(),
            policy: PhasePolicy::default(),
            solver: SolverConfig::new(algorithm, 1),
            scale: GaussianScale::default(),
        }
    }

    pub fn measurements(&self) -> Result<usize> {
        self.spec(1, 0).measurements()
    }

    fn spec(&self, r: usize, seed: u64) -> ProblemSpec {
        ProblemSpec {
            m: self.m,
            n: self.n,
            r,
            sensing: self.sensing,
            sampling: Sampling::Delta(self.delta),
            seed,
            scale: self.scale,
        }
    }

    /// `hash(base_seed, δ, r, trial)`
    pub fn trial_seed(&self, r: usize, trial: usize) -> u64 {
        derive_seed(&[self.seed, self.delta.to_bits(), r as u64, trial as u64])
    }

    pub fn effective_cap(&self) -> Result<usize> {
        let p = self.measurements()?;
        let cap = match self.r_cap {
            Some(c) => c,
            None => {
                (1..=self.m.min(self.n)).take_while(|&r| degrees_of_freedom(self.m, self.n, r) <= p).last().unwrap_or(0)
            }
        };
        if cap == 0 || cap > self.m.min(self.n) {
            return Err(Error::config("r_cap", format!("{cap} must lie in [1, min(m, n)]")));
        }
        Ok(cap)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("trials", "must be positive"));
        }
        let cap = self.effective_cap()?;
        if let Some(s) = self.start_rank {
            if s == 0 || s > cap {
                return Err(Error::config("start_rank", format!("{s} must lie in [1, {cap}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub success: bool,
    pub iterations: usize,
    pub status: Status,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub delta: f64,
    pub algorithm: Algorithm,
    pub r: usize,
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub iterations: usize,
    pub status: Status,
    pub rel_error: f64,
}

/// Trials recorded at one rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCell {
    pub r: usize,
    pub rho: f64,
    pub successes: usize,
    /// Trials actually run, at most the configured count.
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub delta: f64,
    pub algorithm: Algorithm,
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub trials: usize,
    /// Largest rank at which every trial succeeded; 0 if none did.
    pub r_min: usize,
    /// Smallest rank at which every trial failed; `None` if every rank up to the cap had a success.
    pub r_max: Option<usize>,
    pub rho_min: f64,
    pub rho_max: Option<f64>,
    pub r_cap: usize,
    pub ranks: Vec<RankCell>,
    pub records: Vec<TrialRecord>,
}

impl PhaseCell {
    /// `ρ` at `r = (r_min + r_max)/2`, the point plotted on phase-transition curves.
    pub fn rho_mid(&self) -> Option<f64> {
        let r = (self.r_min + self.r_max?) as f64 / 2.0;
        Some(((self.m + self.n) as f64 - r) * r / self.p as f64)
    }

    pub const CSV_HEADER: &'static str = "delta,algorithm,r_min,r_max,rho_min,rho_max";

    pub fn csv_row(&self) -> String {
        let r_max = self.r_max.map_or_else(|| "above-cap".to_string(), |r| r.to_string());
        let rho_max = self.rho_max.map_or_else(String::new, |r| format!("{r:.4}"));
        format!("{},{},{},{},{:.4},{}", self.delta, self.algorithm, self.r_min, r_max, self.rho_min, rho_max)
    }
}

/// One recovery trial as run by [`bracket_rank`].
pub fn run_trial(config: &PhaseConfig, r: usize, seed: u64) -> Result<TrialOutcome> {
    let problem = generate_problem_with(&config.spec(r, seed), Exec::Sequential)?;
    let mut solver = config.solver.clone();
    solver.rank = r;
    config.policy.apply(&mut solver);
    let sol = solve(&problem.op, &problem.y, &solver, None)?;
    let rel_error = relative_diff(&sol.x_hat, &problem.x);
    Ok(TrialOutcome {
        success: rel_error <= SUCCESS_TOL,
        iterations: sol.trace.iterations(),
        status: sol.trace.status,
        rel_error,
    })
}

/// Brackets the recovery phase transition at one `δ`, running trials with [`run_trial`].
pub fn bracket_rank(config: &PhaseConfig, exec: Exec) -> Result<PhaseCell> {
    bracket_rank_with(config, exec, |r, seed| run_trial(config, r, seed))
}

/// Brackets with a caller-supplied trial; `trial(r, seed)` must be deterministic.
///
/// From the start rank, steps down until all trials succeed (`r_min`), then
/// up until all trials fail (`r_max`). Trials at a rank are evaluated in
/// index order; under early-stopping modes only the prefix up to the deciding
/// trial is kept, so results do not depend on the thread count.
pub fn bracket_rank_with<F>(config: &PhaseConfig, exec: Exec, trial: F) -> Result<PhaseCell>
where
    F: Fn(usize, u64) -> Result<TrialOutcome> + Sync + Send,
{
    config.validate()?;
    let cap = config.effective_cap()?;
    let p = config.measurements()?;
    let mut runner = Runner { config, exec, trial: &trial, cache: BTreeMap::new() };

    let start = match config.start_rank {
        Some(s) => s,
        None => runner.bisect(cap)?.max(1),
    };

    let mut r = start;
    let r_min = loop {
        if runner.classify(r)? == Class::AllSuccess {
            break r;
        }
        if r == 1 {
            break 0;
        }
        r -= 1;
    };

    let mut highest_all_success = r_min;
    let mut r_max = None;
    for r in (r_min + 1)..=cap {
        match runner.classify(r)? {
            Class::AllSuccess if highest_all_success + 1 == r => highest_all_success = r,
            Class::AllFail => {
                r_max = Some(r);
                break;
            }
            _ => {}
        }
    }
    let r_min = highest_all_success;

    let mut ranks = Vec::new();
    let mut records = Vec::new();
    for (&r, outcomes) in &runner.cache {
        let run: Vec<_> = outcomes.iter().enumerate().filter_map(|(i, o)| o.map(|o| (i, o))).collect();
        if run.is_empty() {
            continue;
        }
        ranks.push(RankCell {
            r,
            rho: oversampling(config.m, config.n, r, p),
            successes: run.iter().filter(|(_, o)| o.success).count(),
            trials: run.len(),
        });
        records.extend(run.iter().map(|&(i, o)| TrialRecord {
            delta: config.delta,
            algorithm: config.solver.algorithm,
            r,
            trial: i,
            seed: config.trial_seed(r, i),
            success: o.success,
            iterations: o.iterations,
            status: o.status,
            rel_error: o.rel_error,
        }));
    }

    Ok(PhaseCell {
        delta: config.delta,
        algorithm: config.solver.algorithm,
        m: config.m,
        n: config.n,
        p,
        trials: config.trials,
        r_min,
        r_max,
        rho_min: oversampling(config.m, config.n, r_min, p),
        rho_max: r_max.map(|r| oversampling(config.m, config.n, r, p)),
        r_cap: cap,
        ranks,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    AllSuccess,
    Mixed,
    AllFail,
}

struct Runner<'a, F> {
    config: &'a PhaseConfig,
    exec: Exec,
    trial: &'a F,
    /// Outcome of trial `i` at rank `r`, if it was run.
    cache: BTreeMap<usize, Vec<Option<TrialOutcome>>>,
}

impl<F> Runner<'_, F>
where
    F: Fn(usize, u64) -> Result<TrialOutcome> + Sync + Send,
{
    fn slot(&mut self, r: usize) -> &mut Vec<Option<TrialOutcome>> {
        let trials = self.config.trials;
        self.cache.entry(r).or_insert_with(|| vec![None; trials])
    }

    fn first_trial(&mut self, r: usize) -> Result<TrialOutcome> {
        if let Some(o) = self.slot(r)[0] {
            return Ok(o);
        }
        let o = (self.trial)(r, self.config.trial_seed(r, 0))?;
        self.slot(r)[0] = Some(o);
        Ok(o)
    }

    /// Largest rank in `[0, cap]` whose first trial succeeds, assuming monotonicity.
    fn bisect(&mut self, cap: usize) -> Result<usize> {
        let (mut lo, mut hi) = (0, cap + 1);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.first_trial(mid)?.success {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }

    fn classify(&mut self, r: usize) -> Result<Class> {
        let trials = self.config.trials;
        let mode = self.config.mode;
        let width = self.exec.width().max(1);
        let mut i = 0;
        let (mut ok, mut bad) = (0, 0);
        while i < trials {
            let pending: Vec<usize> = (i..(i + width).min(trials)).filter(|&t| self.slot(r)[t].is_none()).collect();
            let seeds: Vec<u64> = pending.iter().map(|&t| self.config.trial_seed(r, t)).collect();
            let trial = self.trial;
            let fresh = self.exec.map_indexed(pending.len(), |k| trial(r, seeds[k]));
            for (t, o) in pending.into_iter().zip(fresh) {
                self.slot(r)[t] = Some(o?);
            }
            let end = (i + width).min(trials);
            for t in i..end {
                let o = self.slot(r)[t].expect("trial evaluated");
                if o.success {
                    ok += 1;
                } else {
                    bad += 1;
                }
                if mode == BracketMode::Decisive && ok > 0 && bad > 0 {
                    // Drop anything evaluated past the deciding trial.
                    for s in (t + 1)..end {
                        self.slot(r)[s] = None;
                    }
                    return Ok(Class::Mixed);
                }
            }
            i = end;
        }
        Ok(match (ok, bad) {
            (_, 0) => Class::AllSuccess,
            (0, _) => Class::AllFail,
            _ => Class::Mixed,
        })
    }
}

/// Brackets every `δ` in turn.
pub fn phase_sweep(base: &PhaseConfig, deltas: &[f64], exec: Exec) -> Result<Vec<PhaseCell>> {
    deltas.iter().map(|&delta| bracket_rank(&PhaseConfig { delta, ..base.clone() }, exec)).collect()
}

/// The eighteen equispaced undersampling ratios 0.10, 0.15, …, 0.95.
pub fn default_deltas() -> Vec<f64> {
    (0..18).map(|i| (10 + 5 * i) as f64 / 100.0).collect()
}

pub fn write_phase_csv<W: Write>(cells: &[PhaseCell], mut w: W) -> Result<()> {
    writeln!(w, "{}", PhaseCell::CSV_HEADER)?;
    for c in cells {
        writeln!(w, "{}", c.csv_row())?;
    }
    Ok(())
}

/// One JSON record per (δ, r, trial).
pub fn write_trials_jsonl<W: Write>(cells: &[PhaseCell], mut w: W) -> Result<()> {
    for rec in cells.iter().flat_map(|c| &c.records) {
        serde_json::to_writer(&mut w, rec)?;
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTrial {
    pub seed: u64,
    pub iterations: usize,
    pub status: Status,
    pub final_rel_residual: f64,
    pub final_rel_error: f64,
    pub applies: u64,
    pub adjoints: u64,
    pub rel_residuals: Vec<f64>,
}

/// Traces of one algorithm on one problem specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSeries {
    pub spec: ProblemSpec,
    pub algorithm: Algorithm,
    pub trials: Vec<BenchTrial>,
    /// Per-iteration mean and standard deviation of the relative residual;
    /// shorter traces are padded with their final value.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Wall-clock seconds per trial. Machine dependent; kept out of files.
    #[serde(skip)]
    pub seconds: Vec<f64>,
}

impl BenchSeries {
    pub fn iterations(&self) -> Vec<usize> {
        self.trials.iter().map(|t| t.iterations).collect()
    }

    pub fn mean_seconds(&self) -> f64 {
        self.seconds.iter().sum::<f64>() / self.seconds.len().max(1) as f64
    }
}

/// Runs every algorithm on `trials` seeded instances of every spec.
///
/// Trial `t` of a spec uses seed `hash(spec.seed, t)`, so all algorithms see
/// the same problems. `base` supplies everything but algorithm and rank.
pub fn convergence_benchmark(
    specs: &[ProblemSpec],
    algorithms: &[Algorithm],
    base: &SolverConfig,
    trials: usize,
) -> Result<Vec<BenchSeries>> {
    if trials == 0 {
        return Err(Error::config("trials", "must be positive"));
    }
    let mut out = Vec::new();
    for spec in specs {
        spec.validate()?;
        let problems: Vec<Problem> = (0..trials)
            .map(|t| generate_problem(&spec.with_seed(derive_seed(&[spec.seed, t as u64]))))
            .collect::<Result<_>>()?;
        for &algorithm in algorithms {
            let config = SolverConfig { algorithm, rank: spec.r, ..base.clone() };
            let mut runs = Vec::with_capacity(trials);
            let mut seconds = Vec::with_capacity(trials);
            for problem in &problems {
                let start = Instant::now();
                let sol = solve(&problem.op, &problem.y, &config, Some(&problem.x))?;
                seconds.push(start.elapsed().as_secs_f64());
                let t = &sol.trace;
                runs.push(BenchTrial {
                    seed: problem.spec.seed,
                    iterations: t.iterations(),
                    status: t.status,
                    final_rel_residual: t.final_rel_residual(),
                    final_rel_error: relative_diff(&sol.x_hat, &problem.x),
                    applies: t.applies,
                    adjoints: t.adjoints,
                    rel_residuals: t.rel_residuals(),
                });
            }
            let (mean, std) = padded_moments(runs.iter().map(|t| t.rel_residuals.as_slice()));
            out.push(BenchSeries { spec: *spec, algorithm, trials: runs, mean, std, seconds });
        }
    }
    Ok(out)
}

fn padded_moments<'a>(curves: impl Iterator<Item = &'a [f64]> + Clone) -> (Vec<f64>, Vec<f64>) {
    let len = curves.clone().map(<[f64]>::len).max().unwrap_or(0);
    let count = curves.clone().count() as f64;
    let at = |c: &[f64], i: usize| c.get(i).or(c.last()).copied().unwrap_or(0.0);
    let mut mean = Vec::with_capacity(len);
    let mut std = Vec::with_capacity(len);
    for i in 0..len {
        let mu = curves.clone().map(|c| at(c, i)).sum::<f64>() / count;
        let var = curves.clone().map(|c| (at(c, i) - mu).powi(2)).sum::<f64>() / count;
        mean.push(mu);
        std.push(var.sqrt());
    }
    (mean, std)
}

/// Mean curves, one row per (series, iteration): the data behind an
/// iteration-versus-residual plot.
pub fn write_curves_csv<W: Write>(series: &[BenchSeries], mut w: W) -> Result<()> {
    writeln!(w, "spec,algorithm,iter,mean_rel_residual,std_rel_residual")?;
    for (k, s) in series.iter().enumerate() {
        let spec = spec_index(series, k);
        for (i, (m, sd)) in s.mean.iter().zip(&s.std).enumerate() {
            writeln!(w, "{spec},{},{i},{m:e},{sd:e}", s.algorithm)?;
        }
    }
    Ok(())
}

/// Per-trial summary without timings.
pub fn write_bench_summary_csv<W: Write>(series: &[BenchSeries], mut w: W) -> Result<()> {
    writeln!(w, "spec,m,n,r,p,algorithm,seed,iterations,status,final_rel_residual,final_rel_error,applies,adjoints")?;
    for (k, s) in series.iter().enumerate() {
        let spec = spec_index(series, k);
        let p = s.spec.measurements()?;
        for t in &s.trials {
            writeln!(
                w,
                "{spec},{},{},{},{p},{},{},{},{},{:e},{:e},{},{}",
                s.spec.m,
                s.spec.n,
                s.spec.r,
                s.algorithm,
                t.seed,
                t.iterations,
                t.status,
                t.final_rel_residual,
                t.final_rel_error,
                t.applies,
                t.adjoints
            )?;
        }
    }
    Ok(())
}

/// Position of series `k`'s spec among the distinct specs, in order of appearance.
fn spec_index(series: &[BenchSeries], k: usize) -> usize {
    let mut seen: Vec<&ProblemSpec> = Vec::new();
    for s in &series[..=k] {
        if !seen.contains(&&s.spec) {
            seen.push(&s.spec);
        }
    }
    seen.iter().position(|s| **s == series[k].spec).expect("spec present")
}
