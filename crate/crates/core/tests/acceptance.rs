//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.
//!
//! `RLR_ACCEPTANCE=1,4,9` restricts the run to the listed criteria. The phase
//! brackets (2 and 3) dominate the runtime at several minutes each.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rlr_core::exec::Exec;
use rlr_core::harness::{
    bracket_rank, convergence_benchmark, generate_problem, is_success, PhaseConfig, PhasePolicy, ProblemSpec, Sampling,
};
use rlr_core::matcore::{hard_threshold, inner, qr_thin, DenseMatrix};
use rlr_core::sensing::{
    estimate_ric_lower_bound, EntrySensing, GaussianScale, GaussianSensing, SensingKind, SensingOperator,
};
use rlr_core::solvers::{solve, Algorithm, SolverConfig, Status};
use rlr_core::tangent::{retract_dense, retract_fast, ProjectionBounds, SubspaceSelection, TangentSpace};
use rlr_core::theory::{gamma_rcg, gamma_rgrad, GuaranteeInputs};

type Check = Result<String, String>;

fn gaussian_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(m, n, |_, _| rng.sample(StandardNormal))
}

fn rank_r(rng: &mut ChaCha8Rng, m: usize, n: usize, r: usize) -> DenseMatrix {
    gaussian_matrix(rng, m, r) * gaussian_matrix(rng, r, n)
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn retraction_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let r = rng.random_range(1..=8);
        let m = rng.random_range(r..=60);
        let n = rng.random_range(r..=60);
        let x = rank_r(&mut rng, m, n, r);
        let space = TangentSpace::from_matrix(&x, r).map_err(|e| e.to_string())?;
        let z = gaussian_matrix(&mut rng, m, n);
        let (fast, _) = retract_fast(&space, &z, r).map_err(|e| e.to_string())?;
        let dense = retract_dense(&space, &z, r).map_err(|e| e.to_string())?;
        worst = worst.max((fast - dense).norm());
    }
    ensure(worst <= 1e-10, format!("max Frobenius difference {worst:.2e} over 200 instances"))
}

fn bracket(
    m: usize,
    sensing: SensingKind,
    delta: f64,
    alg: Algorithm,
    expected: (usize, usize),
) -> Result<(bool, String), String> {
    let cfg = PhaseConfig::new(m, m, sensing, delta, alg);
    let cell = bracket_rank(&cfg, Exec::Parallel).map_err(|e| e.to_string())?;
    let r_max = cell.r_max;
    let ok = cell.r_min.abs_diff(expected.0) <= 1 && r_max.is_some_and(|r| r.abs_diff(expected.1) <= 1);
    let shown = r_max.map_or("above cap".to_string(), |r| r.to_string());
    Ok((
        ok,
        format!("{alg} delta={delta}: r_min={} r_max={shown} (expected {}, {})", cell.r_min, expected.0, expected.1),
    ))
}

fn gaussian_table_rows() -> Check {
    let mut all = true;
    let mut parts = Vec::new();
    for (delta, expected) in [(0.1, (3, 4)), (0.25, (8, 10))] {
        for alg in [Algorithm::Rgrad, Algorithm::Rcg, Algorithm::RcgRestarted] {
            let (ok, detail) = bracket(80, SensingKind::Gaussian, delta, alg, expected)?;
            all &= ok;
            parts.push(detail);
        }
    }
    ensure(all, parts.join("; "))
}

fn entry_table_row() -> Check {
    let (ok, detail) = bracket(800, SensingKind::Entry, 0.1, Algorithm::Rgrad, (36, 38))?;
    ensure(ok, detail)
}

fn convergence_comparison() -> Check {
    let spec = ProblemSpec::new(80, 80, 10, SensingKind::Gaussian, Sampling::InvRho(3.0), 2024);
    let algs = [Algorithm::Rgrad, Algorithm::Rcg, Algorithm::RcgRestarted];
    let series = convergence_benchmark(&[spec], &algs, &SolverConfig::default(), 10).map_err(|e| e.to_string())?;
    let iters: Vec<Vec<usize>> = series.iter().map(|s| s.iterations()).collect();
    let converged =
        series.iter().all(|s| s.trials.iter().all(|t| t.status == Status::Converged && t.final_rel_residual <= 1e-9));
    let faster = iters[1].iter().zip(&iters[0]).filter(|(rcg, rgrad)| rcg < rgrad).count();
    let close = iters[1].iter().zip(&iters[2]).filter(|(a, b)| a.abs_diff(**b) <= 2).count();
    ensure(
        converged && faster == 10 && close == 10,
        format!(
            "all converged: {converged}; RCG < RGrad in {faster}/10; |RCG - restarted| <= 2 in {close}/10; \
             iterations RGrad {:?}, RCG {:?}, restarted {:?}",
            iters[0], iters[1], iters[2]
        ),
    )
}

fn theory_reductions() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_reduction = 0.0f64;
    let mut equivalence_checked = 0;
    let mut equivalence_failures = 0;
    for _ in 0..1000 {
        let r = rng.random_range(1..=20usize);
        let r3r: f64 = rng.random_range(0.0..0.2);
        let r2r = r3r * rng.random::<f64>();
        let sigma_max: f64 = rng.random_range(0.5..5.0);
        let sigma_min = sigma_max * rng.random_range(0.05..=1.0);
        let x_frob = sigma_max * (1.0 + ((r as f64).sqrt() - 1.0) * rng.random::<f64>());
        let base = GuaranteeInputs::new(r2r, r3r, sigma_min, sigma_max, x_frob, r);

        let a = gamma_rgrad(&base).map_err(|e| e.to_string())?;
        let b = gamma_rcg(&base.with_kappas(0.0, 0.0)).map_err(|e| e.to_string())?;
        worst_reduction = worst_reduction.max((a.gamma - b.gamma).abs() / a.gamma.abs().max(1.0));

        let kappas = base.with_kappas(rng.random_range(0.0..0.3), rng.random_range(1.0..2.0));
        if let Ok(rep) = gamma_rcg(&kappas) {
            if (rep.gamma - 1.0).abs() > 1e-9 {
                equivalence_checked += 1;
                if (rep.mu < 1.0) != (rep.gamma < 1.0) {
                    equivalence_failures += 1;
                }
            }
        }
    }
    let limit = gamma_rcg(&GuaranteeInputs::new(1e-8, 1e-8, 1.0, 1.0, 1.0, 1)).map_err(|e| e.to_string())?;
    let limit_gap = (limit.gamma - 0.3).abs();
    ensure(
        worst_reduction <= 1e-14 && limit_gap <= 1e-6 && equivalence_failures == 0 && equivalence_checked > 500,
        format!(
            "kappa=0 reduction max diff {worst_reduction:.1e}; limit gap {limit_gap:.1e}; \
             mu<1 iff gamma<1 at {equivalence_checked} points, {equivalence_failures} violations"
        ),
    )
}

fn linear_rate() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_ratio = 0.0f64;
    let mut worst_spread = 0.0f64;
    for t in 0..20 {
        let m = rng.random_range(20..=40);
        let n = rng.random_range(20..=40);
        let r = rng.random_range(1..=3);
        let p = 4 * (m + n - r) * r + rng.random_range(0..50);
        let spec = ProblemSpec::new(m, n, r, SensingKind::Gaussian, Sampling::Count(p), 600 + t);
        let prob = generate_problem(&spec).map_err(|e| e.to_string())?;
        let sol = solve(&prob.op, &prob.y, &SolverConfig::new(Algorithm::Rgrad, r), Some(&prob.x))
            .map_err(|e| e.to_string())?;
        let errs = sol.trace.rel_errors().expect("ground truth supplied");
        if errs.len() < 22 {
            return Err(format!("instance {t} converged in {} iterations, too few to fit", errs.len() - 1));
        }
        let tail = &errs[errs.len() - 21..];
        let ratios: Vec<f64> = tail.windows(2).map(|w| w[1] / w[0]).collect();
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let sd = (ratios.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / ratios.len() as f64).sqrt();
        worst_ratio = worst_ratio.max(ratios.iter().cloned().fold(0.0, f64::max));
        worst_spread = worst_spread.max(sd / mean);
    }
    ensure(
        worst_ratio < 1.0 && worst_spread < 0.25,
        format!("largest tail ratio {worst_ratio:.3}; largest relative spread {:.1}%", 100.0 * worst_spread),
    )
}

fn lemma_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = 0;
    for _ in 0..100 {
        let r = rng.random_range(1..=5);
        let m = rng.random_range(r + 2..=30);
        let n = rng.random_range(r + 2..=30);
        let x = rank_r(&mut rng, m, n, r);
        let scale: f64 = 10f64.powf(rng.random_range(-3.0..0.0));
        let x_l = &x + rank_r(&mut rng, m, n, r) * scale;
        let x_l = hard_threshold(&x_l, r).map_err(|e| e.to_string())?;
        let b = ProjectionBounds::evaluate(&x_l, &x, r).map_err(|e| e.to_string())?;
        if !(b.projection_error_holds(1e-10) && b.subspace_distance_holds(1e-10)) {
            failures += 1;
        }
    }

    // Restricted orthogonality of a normalized Gaussian ensemble.
    let (m, n, r) = (20, 20, 2);
    let op = GaussianSensing::new(m, n, 6 * m.max(n) * r, 8, GaussianScale::Normalized).map_err(|e| e.to_string())?;
    let ric = estimate_ric_lower_bound(&op, 2 * r, 10_000, 9, Exec::Parallel).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        // Disjoint column spaces make the pair orthogonal while each keeps rank r.
        let q = qr_thin(&gaussian_matrix(&mut rng, m, 2 * r)).map_err(|e| e.to_string())?.q;
        let z1 = q.columns(0, r) * gaussian_matrix(&mut rng, r, n);
        let z2 = q.columns(r, r) * gaussian_matrix(&mut rng, r, n);
        let lhs = op.apply(&z1).map_err(|e| e.to_string())?.dot(&op.apply(&z2).map_err(|e| e.to_string())?);
        worst = worst.max(lhs.abs() / (z1.norm() * z2.norm()));
    }
    ensure(
        failures == 0 && worst <= ric + 0.15,
        format!(
            "projection bounds failed on {failures}/100 pairs; restricted orthogonality max {worst:.3} vs \
             sampled R {ric:.3} + 0.15"
        ),
    )
}

fn column_subspace_failure() -> Check {
    let policy = PhasePolicy::default();
    let mut tangent_ok = 0;
    let mut column_fail = 0;
    for t in 0..10 {
        let spec = ProblemSpec::new(30, 30, 2, SensingKind::Gaussian, Sampling::Count(540), 800 + t);
        let prob = generate_problem(&spec).map_err(|e| e.to_string())?;
        let mut outcomes = Vec::new();
        for subspace in [SubspaceSelection::Tangent, SubspaceSelection::ColumnOnly] {
            let mut config = SolverConfig { subspace, ..SolverConfig::new(Algorithm::Rgrad, 2) };
            policy.apply(&mut config);
            let sol = solve(&prob.op, &prob.y, &config, None).map_err(|e| e.to_string())?;
            outcomes.push(is_success(&sol.x_hat, &prob.x));
        }
        tangent_ok += outcomes[0] as usize;
        column_fail += !outcomes[1] as usize;
    }
    ensure(
        tangent_ok == 10 && column_fail == 10,
        format!("tangent space succeeds {tangent_ok}/10; column space fails {column_fail}/10"),
    )
}

fn identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_adjoint = 0.0f64;
    let mut worst_proj = 0.0f64;
    let mut expansive = 0;
    for draw in 0..100 {
        let m = rng.random_range(2..=15);
        let n = rng.random_range(2..=15);
        let p = rng.random_range(1..=m * n);
        let gauss = GaussianSensing::new(m, n, p, draw, GaussianScale::Normalized).map_err(|e| e.to_string())?;
        let entry = EntrySensing::new(m, n, p, draw).map_err(|e| e.to_string())?;
        let z = gaussian_matrix(&mut rng, m, n);
        let v = rlr_core::sensing::Measurements::from_fn(p, |_, _| rng.sample(StandardNormal));
        for op in [&gauss as &dyn SensingOperator, &entry] {
            let lhs = op.apply(&z).map_err(|e| e.to_string())?.dot(&v);
            let rhs = inner(&z, &op.adjoint(&v).map_err(|e| e.to_string())?);
            let scale = op.apply(&z).unwrap().norm() * v.norm() + z.norm() * op.adjoint(&v).unwrap().norm();
            worst_adjoint = worst_adjoint.max((lhs - rhs).abs() / scale.max(f64::MIN_POSITIVE));
        }

        let r = rng.random_range(1..=m.min(n));
        let space = TangentSpace::from_matrix(&rank_r(&mut rng, m, n, r), r).map_err(|e| e.to_string())?;
        let z2 = gaussian_matrix(&mut rng, m, n);
        for sel in [SubspaceSelection::Tangent, SubspaceSelection::ColumnOnly, SubspaceSelection::RowOnly] {
            let pz = space.project(&z, sel).map_err(|e| e.to_string())?;
            let ppz = space.project(&pz, sel).map_err(|e| e.to_string())?;
            let pz2 = space.project(&z2, sel).map_err(|e| e.to_string())?;
            let idem = (&ppz - &pz).norm() / z.norm();
            let adj = (inner(&pz, &z2) - inner(&z, &pz2)).abs() / (z.norm() * z2.norm());
            worst_proj = worst_proj.max(idem).max(adj);
            if pz.norm() > z.norm() * (1.0 + 1e-12) {
                expansive += 1;
            }
        }
    }
    ensure(
        worst_adjoint <= 1e-12 && worst_proj <= 1e-12 && expansive == 0,
        format!(
            "adjoint identity max rel error {worst_adjoint:.1e}; projector idempotence and symmetry {worst_proj:.1e}; \
             {expansive} expansive projections"
        ),
    )
}

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 9] = [
        ("retraction matches dense truncated SVD", retraction_oracle),
        ("Gaussian phase brackets, m=n=80", gaussian_table_rows),
        ("entry sensing phase bracket, m=n=800", entry_table_row),
        ("conjugate gradient convergence comparison", convergence_comparison),
        ("theory constant reductions", theory_reductions),
        ("empirical linear convergence of RGrad", linear_rate),
        ("projection and subspace lemmas, restricted orthogonality", lemma_suite),
        ("column-space selection fails where tangent succeeds", column_subspace_failure),
        ("adjoint and projector identities", identities),
    ];
    let selected: Option<Vec<usize>> =
        std::env::var("RLR_ACCEPTANCE").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());

    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            println!("criterion {id} SKIP {name}");
            continue;
        }
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {id} PASS {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} FAIL {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
