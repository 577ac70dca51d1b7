use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use rlr_core::exec::{configure_threads, Exec};
use rlr_core::harness::{
    bracket_rank, convergence_benchmark, default_deltas, generate_problem_split, write_bench_summary_csv,
    write_curves_csv, write_phase_csv, write_trials_jsonl, PhaseConfig, ProblemSpec,
};
use rlr_core::matcore::{relative_diff, singular_values, DenseMatrix};
use rlr_core::sensing::estimate_ric_lower_bound;
use rlr_core::solvers::{solve, Algorithm, SolverConfig};
use rlr_core::theory::{gamma_rcg, gamma_rgrad, GuaranteeInputs, GuaranteeReport};

use crate::config::{CliError, CliResult, Command, Format, RunConfig};

const RIC_TRIALS: usize = 1000;
const RIC_LABEL: &str = "lower bound - guarantee check is necessary-direction only";

pub fn run(command: Command, config: RunConfig) -> CliResult<()> {
    if let Some(c) = config.command {
        if c != command {
            return Err(CliError::config("command", format!("config file is for {c:?}, not {command:?}")));
        }
    }
    configure_threads(config.threads()?);
    let out = Output::new(&config)?;
    match command {
        Command::Solve => cmd_solve(&config, &out),
        Command::Phase => cmd_phase(&config, &out),
        Command::Bench => cmd_bench(&config, &out),
        Command::Theory => cmd_theory(&config, &out),
        Command::RicEstimate => cmd_ric(&config, &out),
    }
}

/// Artifact writer. Without an output directory nothing is written.
struct Output {
    dir: Option<PathBuf>,
    format: Format,
}

impl Output {
    fn new(config: &RunConfig) -> CliResult<Self> {
        if let Some(dir) = &config.output_dir {
            fs::create_dir_all(dir)
                .map_err(|e| CliError::config("output_dir", format!("cannot create {}: {e}", dir.display())))?;
            let mut saved = config.clone();
            saved.threads = None;
            saved.output_dir = None;
            write_json_file(&dir.join("config.json"), &saved)?;
        }
        Ok(Output { dir: config.output_dir.clone(), format: config.format.unwrap_or_default() })
    }

    fn write(&self, name: &str, body: impl FnOnce(&mut dyn Write) -> CliResult<()>) -> CliResult<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let mut w = BufWriter::new(File::create(dir.join(name))?);
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        match &self.dir {
            Some(dir) => write_json_file(&dir.join(name), value),
            None => Ok(()),
        }
    }
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn jsonl<T: Serialize>(w: &mut dyn Write, items: &[T]) -> CliResult<()> {
    for item in items {
        serde_json::to_writer(&mut *w, item)?;
        writeln!(w)?;
    }
    Ok(())
}

fn write_matrix(w: &mut dyn Write, a: &DenseMatrix) -> CliResult<()> {
    for i in 0..a.nrows() {
        let row: Vec<String> = a.row(i).iter().map(f64::to_string).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

fn problem_spec(c: &RunConfig) -> CliResult<ProblemSpec> {
    let spec = ProblemSpec {
        m: RunConfig::require(&c.m, "m")?,
        n: RunConfig::require(&c.n, "n")?,
        r: RunConfig::require(&c.r, "r")?,
        sensing: RunConfig::require(&c.sensing, "sensing")?,
        sampling: c.sampling()?,
        seed: c.seed.unwrap_or(0),
        scale: c.scale.unwrap_or_default(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Solver options from the config, on top of `base`.
fn solver_config(c: &RunConfig, mut base: SolverConfig) -> SolverConfig {
    base.beta_rule = c.beta_rule.or(base.beta_rule);
    base.kappa1 = c.kappa1.unwrap_or(base.kappa1);
    base.kappa2 = c.kappa2.unwrap_or(base.kappa2);
    base.max_iters = c.max_iters.unwrap_or(base.max_iters);
    base.rel_residual_tol = c.tol.unwrap_or(base.rel_residual_tol);
    base.stall_window = c.stall_window.unwrap_or(base.stall_window);
    base.stall_tol = c.stall_tol.unwrap_or(base.stall_tol);
    base.warm_start_niht_iters = c.warm_start_niht_iters.unwrap_or(base.warm_start_niht_iters);
    base.subspace = c.subspace.unwrap_or(base.subspace);
    base.retraction = c.retraction.unwrap_or(base.retraction);
    base.seed = c.seed.unwrap_or(base.seed);
    base
}

fn cmd_solve(c: &RunConfig, out: &Output) -> CliResult<()> {
    let alg = RunConfig::require(&c.alg, "alg")?;
    let spec = problem_spec(c)?;
    let solver = solver_config(c, SolverConfig::new(alg, spec.r));
    solver.validate()?;
    let truth_seed = c.ground_truth_seed.unwrap_or(spec.seed);
    let problem = generate_problem_split(&spec, truth_seed, spec.seed, Exec::Parallel)?;
    let truth = c.ground_truth_seed.map(|_| &problem.x);

    let start = Instant::now();
    let sol = solve(&problem.op, &problem.y, &solver, truth)?;
    let seconds = start.elapsed().as_secs_f64();
    let trace = &sol.trace;
    let rel_error = truth.map(|x| relative_diff(&sol.x_hat, x));

    println!("status: {}", trace.status);
    println!("iterations: {}", trace.iterations());
    println!("rel_residual: {:e}", trace.final_rel_residual());
    if let Some(e) = rel_error {
        println!("rel_error: {e:e}");
    }
    println!("seconds: {seconds:.3}");

    let summary = json!({
        "algorithm": alg,
        "problem": spec,
        "p": spec.measurements()?,
        "operator": problem.op.descriptor(),
        "solver": solver,
        "status": trace.status,
        "iterations": trace.iterations(),
        "rel_residual": trace.final_rel_residual(),
        "rel_error": rel_error,
        "applies": trace.applies,
        "adjoints": trace.adjoints,
    });
    out.json("summary.json", &summary)?;
    match out.format {
        Format::Csv => out.write("trace.csv", |w| Ok(trace.write_csv(w)?))?,
        Format::Jsonl => out.write("trace.jsonl", |w| Ok(trace.write_jsonl(w)?))?,
        Format::Json => out.json("trace.json", trace)?,
    }
    if c.dump_matrices.unwrap_or(false) {
        out.write("x_hat.csv", |w| write_matrix(w, &sol.x_hat))?;
        out.write("x_true.csv", |w| write_matrix(w, &problem.x))?;
    }
    Ok(())
}

fn cmd_phase(c: &RunConfig, out: &Output) -> CliResult<()> {
    let alg = RunConfig::require(&c.alg, "alg")?;
    let deltas = match (c.delta, &c.deltas) {
        (Some(_), Some(_)) => return Err(CliError::config("deltas", "give either delta or deltas")),
        (Some(d), None) => vec![d],
        (None, Some(ds)) if ds.is_empty() => return Err(CliError::config("deltas", "empty list")),
        (None, Some(ds)) => ds.clone(),
        (None, None) => default_deltas(),
    };
    if c.inv_rho.is_some() || c.p.is_some() {
        return Err(CliError::config("delta", "phase sweeps are indexed by delta only"));
    }
    let mut base = PhaseConfig::new(
        RunConfig::require(&c.m, "m")?,
        RunConfig::require(&c.n, "n")?,
        RunConfig::require(&c.sensing, "sensing")?,
        deltas[0],
        alg,
    );
    base.trials = c.trials.unwrap_or(base.trials);
    base.r_cap = c.r_cap;
    base.start_rank = c.start_rank;
    base.seed = c.seed.unwrap_or(0);
    base.mode = c.mode.unwrap_or_default();
    base.scale = c.scale.unwrap_or_default();
    base.policy.rel_residual_tol = c.tol.unwrap_or(base.policy.rel_residual_tol);
    base.policy.max_iters = c.max_iters.unwrap_or(base.policy.max_iters);
    base.policy.stall_window = c.stall_window.unwrap_or(base.policy.stall_window);
    base.policy.stall_tol = c.stall_tol.unwrap_or(base.policy.stall_tol);
    base.solver = solver_config(c, SolverConfig::new(alg, 1));

    let mut cells = Vec::with_capacity(deltas.len());
    println!("{}", rlr_core::harness::PhaseCell::CSV_HEADER);
    for &delta in &deltas {
        let config = PhaseConfig { delta, ..base.clone() };
        config.validate()?;
        let start = Instant::now();
        let cell = bracket_rank(&config, Exec::Parallel)?;
        println!("{}", cell.csv_row());
        eprintln!("delta {delta}: {} trials in {:.1}s", cell.records.len(), start.elapsed().as_secs_f64());
        cells.push(cell);
    }

    match out.format {
        Format::Csv => {
            out.write("phase.csv", |w| Ok(write_phase_csv(&cells, w)?))?;
            out.write("trials.jsonl", |w| Ok(write_trials_jsonl(&cells, w)?))?;
        }
        Format::Jsonl => out.write("phase.jsonl", |w| jsonl(w, &cells))?,
        Format::Json => out.json("phase.json", &cells)?,
    }
    Ok(())
}

fn cmd_bench(c: &RunConfig, out: &Output) -> CliResult<()> {
    let spec = problem_spec(c)?;
    let algs = match (&c.algs, c.alg) {
        (Some(a), _) if a.is_empty() => return Err(CliError::config("algs", "empty list")),
        (Some(a), _) => a.clone(),
        (None, Some(a)) => vec![a],
        (None, None) => vec![Algorithm::Rgrad, Algorithm::Rcg, Algorithm::RcgRestarted],
    };
    let base = solver_config(c, SolverConfig::default());
    for &a in &algs {
        SolverConfig { algorithm: a, rank: spec.r, ..base.clone() }.validate()?;
    }
    let series = convergence_benchmark(&[spec], &algs, &base, c.trials.unwrap_or(10))?;

    for s in &series {
        let iters = s.iterations();
        let mean = iters.iter().sum::<usize>() as f64 / iters.len() as f64;
        let converged = s.trials.iter().filter(|t| t.status == rlr_core::solvers::Status::Converged).count();
        println!(
            "{}: mean iterations {mean:.1}, converged {converged}/{}, mean seconds {:.3}",
            s.algorithm,
            s.trials.len(),
            s.mean_seconds()
        );
    }

    match out.format {
        Format::Csv => {
            out.write("curves.csv", |w| Ok(write_curves_csv(&series, w)?))?;
            out.write("bench_summary.csv", |w| Ok(write_bench_summary_csv(&series, w)?))?;
        }
        Format::Jsonl => out.write("bench.jsonl", |w| jsonl(w, &series))?,
        Format::Json => out.json("bench.json", &series)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct TheoryOutput {
    algorithm: Algorithm,
    inputs: GuaranteeInputs,
    /// Set when some inputs were sampled rather than given.
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<&'static str>,
    report: GuaranteeReport,
}

fn cmd_theory(c: &RunConfig, out: &Output) -> CliResult<()> {
    let alg = c.alg.unwrap_or(Algorithm::Rgrad);
    let mut inputs = GuaranteeInputs {
        r2r: c.r2r.unwrap_or(f64::NAN),
        r3r: c.r3r.unwrap_or(f64::NAN),
        sigma_min: c.sigma_min.unwrap_or(f64::NAN),
        sigma_max: c.sigma_max.unwrap_or(f64::NAN),
        x_frob: c.x_frob.unwrap_or(f64::NAN),
        r: c.r.unwrap_or(0),
        ..GuaranteeInputs::new(0.0, 0.0, 1.0, 1.0, 1.0, 1)
    };
    inputs.kappa1 = c.kappa1.unwrap_or(inputs.kappa1);
    inputs.kappa2 = c.kappa2.unwrap_or(inputs.kappa2);

    let mut note = None;
    if c.estimate_ric.unwrap_or(false) {
        fill_from_instance(c, &mut inputs)?;
        note = Some(RIC_LABEL);
    }
    for (name, v) in [
        ("r2r", inputs.r2r),
        ("r3r", inputs.r3r),
        ("sigma_min", inputs.sigma_min),
        ("sigma_max", inputs.sigma_max),
        ("x_frob", inputs.x_frob),
    ] {
        if v.is_nan() {
            return Err(CliError::missing(name));
        }
    }
    if inputs.r == 0 {
        return Err(CliError::missing("r"));
    }

    let report = match alg {
        Algorithm::Rgrad | Algorithm::Niht => gamma_rgrad(&inputs),
        Algorithm::Rcg | Algorithm::RcgRestarted | Algorithm::Cgiht => gamma_rcg(&inputs),
        Algorithm::Asd => return Err(CliError::config("alg", "no guarantee constants for asd")),
    }
    .map_err(|e| match e {
        rlr_core::Error::Domain(msg) => CliError::config("theory", msg),
        other => other.into(),
    })?;

    println!("algorithm: {alg}");
    println!("gamma: {}", report.gamma);
    println!("mu: {}", report.mu);
    println!("satisfied: {}", report.satisfied);
    println!("ric_sufficient: {}", report.ric_sufficient);
    println!("ric_condition_met: {}", report.ric_condition_met);
    if let Some(n) = note {
        println!("note: R_2r and R_3r are sampled, {n}");
    }
    out.json("theory.json", &TheoryOutput { algorithm: alg, inputs, note, report })
}

/// Fills unset theory inputs from a generated instance: RIC lower bounds from
/// its operator and the spectrum of its ground truth.
fn fill_from_instance(c: &RunConfig, inputs: &mut GuaranteeInputs) -> CliResult<()> {
    let spec = problem_spec(c)?;
    let problem = generate_problem_split(&spec, spec.seed, spec.seed, Exec::Parallel)?;
    let (m, n, r) = (spec.m, spec.n, spec.r);
    let trials = c.trials.unwrap_or(RIC_TRIALS);
    let seed = spec.seed;
    if inputs.r2r.is_nan() {
        inputs.r2r = estimate_ric_lower_bound(&problem.op, (2 * r).min(m.min(n)), trials, seed, Exec::Parallel)?;
    }
    if inputs.r3r.is_nan() {
        inputs.r3r = estimate_ric_lower_bound(&problem.op, (3 * r).min(m.min(n)), trials, seed, Exec::Parallel)?;
    }
    let s = singular_values(&problem.x)?;
    if inputs.sigma_max.is_nan() {
        inputs.sigma_max = s[0];
    }
    if inputs.sigma_min.is_nan() {
        inputs.sigma_min = s[r - 1];
    }
    if inputs.x_frob.is_nan() {
        inputs.x_frob = problem.x.norm();
    }
    inputs.r = r;
    Ok(())
}

fn cmd_ric(c: &RunConfig, out: &Output) -> CliResult<()> {
    let spec = problem_spec(c)?;
    let trials = c.trials.unwrap_or(RIC_TRIALS);
    let problem = generate_problem_split(&spec, spec.seed, spec.seed, Exec::Parallel)?;
    let estimate = estimate_ric_lower_bound(&problem.op, spec.r, trials, spec.seed, Exec::Parallel)?;
    println!("ric_lower_bound: {estimate}");
    println!("note: {RIC_LABEL}");
    out.json(
        "ric.json",
        &json!({
            "operator": problem.op.descriptor(),
            "r": spec.r,
            "trials": trials,
            "ric_lower_bound": estimate,
            "note": RIC_LABEL,
        }),
    )
}
