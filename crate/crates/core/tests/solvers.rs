use rlr_core::exec::Exec;
use rlr_core::harness::{generate_problem, Problem, ProblemSpec, Sampling};
use rlr_core::matcore::{numerical_rank, relative_diff, DenseMatrix};
use rlr_core::sensing::{estimate_ric_lower_bound, SensingKind, SensingOperator};
use rlr_core::solvers::*;
use rlr_core::tangent::{SubspaceSelection, TangentVector};
use rlr_core::Error;

fn gaussian(m: usize, r: usize, p: usize, seed: u64) -> Problem {
    generate_problem(&ProblemSpec::new(m, m, r, SensingKind::Gaussian, Sampling::Count(p), seed)).unwrap()
}

fn fully_sampled(m: usize, n: usize, r: usize, seed: u64) -> Problem {
    generate_problem(&ProblemSpec::new(m, n, r, SensingKind::Entry, Sampling::Delta(1.0), seed)).unwrap()
}

fn moved(outcome: StepOutcome) -> (Iterate, StepInfo) {
    match outcome {
        StepOutcome::Moved(it, info) => (it, info),
        StepOutcome::Annihilated => panic!("direction annihilated"),
    }
}

fn run(p: &Problem, algorithm: Algorithm, max_iters: usize) -> Solution {
    let config = SolverConfig { max_iters, ..SolverConfig::new(algorithm, p.spec.r) };
    solve(&p.op, &p.y, &config, Some(&p.x)).unwrap()
}

fn objective(p: &Problem, z: &DenseMatrix) -> f64 {
    0.5 * (&p.y - p.op.apply(z).unwrap()).norm_squared()
}

#[test]
fn exact_start_converges_at_iteration_zero() {
    let p = fully_sampled(12, 9, 3, 1);
    let it = init_hard_threshold(&p.op, &p.y, 3).unwrap();
    assert!(relative_diff(&it.point(), &p.x) < 1e-12);
    for alg in Algorithm::ALL {
        let sol = run(&p, alg, 100);
        assert_eq!(sol.trace.status, Status::Converged, "{alg}");
        assert_eq!(sol.trace.iterations(), 0);
    }
}

#[test]
fn isometry_gives_unit_stepsize() {
    // Start away from X so there is something to do.
    let p = fully_sampled(10, 8, 2, 2);
    let noisy = &p.y + p.op.apply(&DenseMatrix::from_fn(10, 8, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0)).unwrap();
    let it = init_hard_threshold(&p.op, &noisy, 2).unwrap();
    let it = Iterate::at(&p.op, &p.y, it.space).unwrap();

    let (_, info) = moved(step_rgrad(&it, &p.op, &p.y, &StepOptions::default()).unwrap());
    assert!((info.alpha - 1.0).abs() < 1e-12);

    let (next, info) = moved(step_niht(&it, &p.op, &p.y).unwrap());
    assert!((info.alpha - 1.0).abs() < 1e-12);
    // W = X_l + (X − X_l) = X, so thresholding lands on X.
    assert!(relative_diff(&next.point(), &p.x) < 1e-12);
}

#[test]
fn rgrad_stepsize_is_exact_line_search() {
    for seed in 0..3 {
        let p = gaussian(20, 2, 300, seed);
        let mut it = init_hard_threshold(&p.op, &p.y, 2).unwrap();
        for _ in 0..3 {
            let g = p.op.adjoint(&it.residual).unwrap();
            let dir = it.space.project(&g, SubspaceSelection::Tangent).unwrap();
            let (next, info) = moved(step_rgrad(&it, &p.op, &p.y, &StepOptions::default()).unwrap());
            let x = it.point();
            let f = |a: f64| objective(&p, &(&x + &dir * a));
            let a = info.alpha;
            assert!(a > 0.0);
            assert!(f(a) <= f(a * (1.0 + 1e-3)) && f(a) <= f(a * (1.0 - 1e-3)));
            it = next;
        }
    }
}

#[test]
fn niht_stepsize_is_exact_line_search() {
    for seed in 0..3 {
        let p = gaussian(20, 2, 300, seed);
        let mut it = init_hard_threshold(&p.op, &p.y, 2).unwrap();
        for _ in 0..3 {
            let g = p.op.adjoint(&it.residual).unwrap();
            let u = it.space.u();
            let dir = u * u.tr_mul(&g);
            let (next, info) = moved(step_niht(&it, &p.op, &p.y).unwrap());
            let x = it.point();
            let f = |a: f64| objective(&p, &(&x + &dir * a));
            let a = info.alpha;
            assert!(f(a) <= f(a * (1.0 + 1e-3)) && f(a) <= f(a * (1.0 - 1e-3)));
            it = next;
        }
    }
}

#[test]
fn first_conjugate_steps_match_gradient_steps() {
    let p = gaussian(20, 3, 400, 4);
    let it = init_hard_threshold(&p.op, &p.y, 3).unwrap();
    let opts = StepOptions::default();
    let (a, _) = moved(step_rgrad(&it, &p.op, &p.y, &opts).unwrap());
    let (b, info) = moved(step_rcg(&it, &p.op, &p.y, &opts).unwrap());
    assert_eq!(info.beta, Some(0.0));
    assert!(relative_diff(&a.point(), &b.point()) < 1e-12);

    let (a, _) = moved(step_niht(&it, &p.op, &p.y).unwrap());
    let (b, info) = moved(step_cgiht(&it, &p.op, &p.y).unwrap());
    assert_eq!(info.beta, Some(0.0));
    assert!(relative_diff(&a.point(), &b.point()) < 1e-12);
}

fn cosine(a: &rlr_core::sensing::Measurements, b: &rlr_core::sensing::Measurements) -> f64 {
    a.dot(b).abs() / (a.norm() * b.norm())
}

#[test]
fn rcg_directions_are_conjugate() {
    for seed in 0..3 {
        let p = gaussian(20, 2, 240, 10 + seed);
        let mut it = init_hard_threshold(&p.op, &p.y, 2).unwrap();
        let opts = StepOptions::default();
        let mut checked = 0;
        for _ in 0..8 {
            let prev = it.previous_direction().map(|(s, d)| it.space.transport(d, s, SubspaceSelection::Tangent));
            let (next, info) = moved(step_rcg(&it, &p.op, &p.y, &opts).unwrap());
            if let Some(prev) = prev {
                if info.beta != Some(0.0) {
                    let (_, dir) = next.previous_direction().unwrap();
                    let a_dir = p.op.apply(&dir.to_dense(&it.space)).unwrap();
                    let a_prev = p.op.apply(&prev.to_dense(&it.space)).unwrap();
                    assert!(cosine(&a_dir, &a_prev) <= 1e-8, "cosine {}", cosine(&a_dir, &a_prev));
                    checked += 1;
                }
            }
            it = next;
        }
        assert!(checked >= 5);
    }
}

#[test]
fn cgiht_directions_are_conjugate() {
    let p = gaussian(20, 2, 240, 21);
    let mut it = init_hard_threshold(&p.op, &p.y, 2).unwrap();
    it = moved(step_cgiht(&it, &p.op, &p.y).unwrap()).0;
    for _ in 0..6 {
        let prev = it.previous_dense_direction().unwrap().clone();
        let u = it.space.u().clone();
        let (next, _) = moved(step_cgiht(&it, &p.op, &p.y).unwrap());
        let dir = next.previous_dense_direction().unwrap();
        let a_dir = p.op.apply(&(&u * u.tr_mul(dir))).unwrap();
        let a_prev = p.op.apply(&(&u * u.tr_mul(&prev))).unwrap();
        assert!(cosine(&a_dir, &a_prev) <= 1e-8);
        it = next;
    }
}

#[test]
fn polak_ribiere_plus_clamps_negative_beta() {
    let pr = StepOptions { beta_rule: BetaRule::PolakRibiere, ..Default::default() };
    let prp = StepOptions { beta_rule: BetaRule::PolakRibierePlus, ..Default::default() };
    for seed in 0..5 {
        let p = gaussian(16, 2, 150, 30 + seed);
        let mut it = init_hard_threshold(&p.op, &p.y, 2).unwrap();
        for _ in 0..60 {
            let (next, info) = moved(step_rcg(&it, &p.op, &p.y, &pr).unwrap());
            let beta = info.beta.unwrap();
            if beta < 0.0 {
                // β_PR = ⟨ξ_l, ξ_l − P_S(ξ_{l−1})⟩ / ‖ξ_{l−1}‖² from dense projections.
                let g = p.op.adjoint(&it.residual).unwrap();
                let xi = it.space.project(&g, SubspaceSelection::Tangent).unwrap();
                let (prev_space, _) = it.previous_direction().unwrap();
                let prev = it.previous_gradient().unwrap().to_dense(prev_space);
                let moved_prev = it.space.project(&prev, SubspaceSelection::Tangent).unwrap();
                let direct = xi.dot(&(&xi - &moved_prev)) / prev.norm_squared();
                assert!((direct - beta).abs() <= 1e-9 * direct.abs().max(1.0), "{direct} vs {beta}");

                let (_, clamped) = moved(step_rcg(&it, &p.op, &p.y, &prp).unwrap());
                assert_eq!(clamped.beta, Some(0.0));
                return;
            }
            it = next;
        }
    }
    panic!("no iterate with a negative Polak-Ribiere coefficient found");
}

fn vector(m: &[f64], up: &[f64]) -> TangentVector {
    TangentVector {
        m: DenseMatrix::from_row_slice(1, m.len(), m),
        up: DenseMatrix::from_row_slice(1, up.len(), up),
        vp: DenseMatrix::zeros(1, 1),
    }
}

#[test]
fn restart_conditions() {
    let g = vector(&[1.0, 0.0], &[0.0]);
    assert!(!restart_check(&g, None, 0.1, 1.0));
    assert!(!restart_check(&g, Some(&vector(&[0.0, 0.0], &[0.0])), 0.1, 1.0));
    // orthogonal and not larger
    assert!(restart_check(&g, Some(&vector(&[0.0, 1.0], &[0.0])), 0.1, 1.0));
    // orthogonal but ‖g‖ > κ₂‖p‖
    assert!(!restart_check(&g, Some(&vector(&[0.0, 0.5], &[0.0])), 0.1, 1.0));
    // cosine exactly 0.2
    let c = 0.2f64;
    let p = vector(&[c, (1.0 - c * c).sqrt()], &[0.0]);
    assert!((g.inner(&p) / (g.norm() * p.norm()) - 0.2).abs() < 1e-15);
    assert!(!restart_check(&g, Some(&p), 0.1, 1.0));
    assert!(restart_check(&g, Some(&p), 0.25, 1.0));
}

#[test]
fn forced_restart_reproduces_gradient_descent() {
    let p = gaussian(20, 2, 300, 40);
    let always = StepOptions { restart: RestartPolicy::Always, ..Default::default() };
    let never_keep =
        StepOptions { restart: RestartPolicy::Conditions { kappa1: 0.0, kappa2: 1.0 }, ..Default::default() };
    let start = init_hard_threshold(&p.op, &p.y, 2).unwrap();
    let (mut a, mut b, mut c) = (start.clone(), start.clone(), start);
    for _ in 0..30 {
        a = moved(step_rgrad(&a, &p.op, &p.y, &StepOptions::default()).unwrap()).0;
        b = moved(step_rcg(&b, &p.op, &p.y, &always).unwrap()).0;
        c = moved(step_rcg(&c, &p.op, &p.y, &never_keep).unwrap()).0;
        assert!(relative_diff(&a.point(), &b.point()) <= 1e-12);
        assert!(relative_diff(&a.point(), &c.point()) <= 1e-12);
    }
}

#[test]
fn fast_and_dense_retractions_agree() {
    let p = gaussian(25, 3, 450, 41);
    let fast = StepOptions::default();
    let dense = StepOptions { retraction: Retraction::DenseSvd, ..Default::default() };
    let start = init_hard_threshold(&p.op, &p.y, 3).unwrap();
    for step in [step_rgrad::<rlr_core::sensing::Operator>, step_rcg] {
        let (mut a, mut b) = (start.clone(), start.clone());
        for _ in 0..100 {
            if a.residual.norm() <= 1e-13 * p.y.norm() {
                break;
            }
            a = moved(step(&a, &p.op, &p.y, &fast).unwrap()).0;
            b = moved(step(&b, &p.op, &p.y, &dense).unwrap()).0;
            let scale = p.x.norm();
            assert!((a.point() - b.point()).norm() <= 1e-9 * scale);
        }
    }
}

#[test]
fn small_instance_convergence() {
    // m = n = 30, r = 2, p = 540
    for seed in 0..2 {
        let p = gaussian(30, 2, 540, 50 + seed);
        let mut iters = Vec::new();
        for alg in Algorithm::ALL {
            let cap = if alg == Algorithm::Asd { 2000 } else { 500 };
            let sol = run(&p, alg, cap);
            let err = sol.trace.final_rel_error().unwrap();
            assert!(err <= 1e-4, "{alg}: error {err}");
            assert_eq!(sol.trace.status, Status::Converged, "{alg}");
            assert!(relative_diff(&sol.x_hat, &p.x) <= 1e-4);
            iters.push((alg, sol.trace.iterations()));
        }
        let of = |a: Algorithm| iters.iter().find(|(b, _)| *b == a).unwrap().1;
        assert!(of(Algorithm::Cgiht) < of(Algorithm::Niht), "{iters:?}");
        assert!(of(Algorithm::Rcg) < of(Algorithm::Rgrad), "{iters:?}");
    }
}

#[test]
fn iterates_keep_rank() {
    let p = gaussian(16, 3, 200, 60);
    let mut it = init_hard_threshold(&p.op, &p.y, 3).unwrap();
    for _ in 0..10 {
        it = moved(step_rcg(&it, &p.op, &p.y, &StepOptions::default()).unwrap()).0;
        assert_eq!(it.rank(), 3);
        assert!(numerical_rank(&it.point(), 1e-10).unwrap() <= 3);
        let n = moved(step_niht(&it, &p.op, &p.y).unwrap()).0;
        assert!(numerical_rank(&n.point(), 1e-10).unwrap() <= 3);
    }
}

#[test]
fn residual_decreases_with_ample_measurements() {
    // Diagnostic: p ≥ 3(m + n − r) r.
    let p = gaussian(20, 2, 3 * 76, 61);
    for alg in [Algorithm::Rgrad, Algorithm::Niht] {
        let sol = run(&p, alg, 200);
        let res = sol.trace.rel_residuals();
        assert!(res.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)), "{alg}");
    }
}

#[test]
fn asd_half_steps_decrease_objective() {
    for seed in 0..3 {
        let p = gaussian(20, 2, 250, 70 + seed);
        let it = init_hard_threshold(&p.op, &p.y, 2).unwrap();
        let mut f = AsdIterate::from_space(&p.op, &p.y, &it.space).unwrap();
        assert!(relative_diff(&f.point(), &it.point()) < 1e-12);
        let mut last = objective(&p, &f.point());
        for _ in 0..20 {
            let before = f.clone();
            let info = step_asd(&mut f, &p.op).unwrap();
            // left half-step alone
            let mut half = before.left.clone();
            let t = info.t_left.unwrap();
            let (d, _) = p.op.adjoint_products(&before.residual, &before.left, &before.right.transpose()).unwrap();
            half += d * t;
            let mid = objective(&p, &(&half * &before.right));
            let now = objective(&p, &f.point());
            assert!(mid < last && now < mid, "{last} {mid} {now}");
            assert!((0.5 * f.residual.norm_squared() - now).abs() <= 1e-9 * now.max(1e-300) + 1e-20);
            last = now;
        }
    }
}

#[test]
fn asd_stationary_at_zero_residual() {
    let p = fully_sampled(8, 8, 2, 3);
    let it = init_hard_threshold(&p.op, &p.y, 2).unwrap();
    let mut f = AsdIterate::from_space(&p.op, &p.y, &it.space).unwrap();
    f.residual.fill(0.0);
    let before = f.clone();
    let info = step_asd(&mut f, &p.op).unwrap();
    assert_eq!((info.t_left, info.t_right), (None, None));
    assert_eq!(before.left, f.left);
    assert_eq!(before.right, f.right);
}

#[test]
fn initial_error_respects_sampled_bound() {
    let p = gaussian(40, 2, 1600, 80);
    let it = init_hard_threshold(&p.op, &p.y, 2).unwrap();
    let r2 = estimate_ric_lower_bound(&p.op, 4, 200, 81, Exec::Parallel).unwrap();
    let err = (it.point() - &p.x).norm();
    let xn = p.x.norm();
    assert!(err <= 2.0 * r2 * xn + 0.1 * xn, "error {err}, R {r2}, |X| {xn}");
}

#[test]
fn rgrad_converges_linearly() {
    let p = gaussian(30, 2, 4 * 116, 90);
    let sol = run(&p, Algorithm::Rgrad, 500);
    let errs = sol.trace.rel_errors().unwrap();
    // Tail before the error reaches rounding level.
    let usable: Vec<f64> = errs.into_iter().take_while(|&e| e > 1e-12).collect();
    let tail = &usable[usable.len().saturating_sub(21)..];
    let ratios: Vec<f64> = tail.windows(2).map(|w| w[1] / w[0]).collect();
    assert!(ratios.len() >= 10);
    let mu = ratios.iter().cloned().fold(0.0, f64::max);
    assert!(mu < 1.0, "{ratios:?}");
}

#[test]
fn column_only_subspace_stalls() {
    let p = gaussian(20, 2, 300, 95);
    for alg in [Algorithm::Rgrad, Algorithm::Rcg] {
        let config = SolverConfig { subspace: SubspaceSelection::ColumnOnly, ..SolverConfig::new(alg, 2) };
        let sol = solve(&p.op, &p.y, &config, Some(&p.x)).unwrap();
        assert_ne!(sol.trace.status, Status::Converged);
        assert!(sol.trace.final_rel_residual() > 1e-3);
        assert!(sol.trace.final_rel_error().unwrap() > 1e-2);
    }
}

#[test]
fn warm_start_then_switch() {
    let p = gaussian(20, 2, 300, 96);
    let config = SolverConfig { warm_start_niht_iters: 5, ..SolverConfig::new(Algorithm::Rcg, 2) };
    let sol = solve(&p.op, &p.y, &config, None).unwrap();
    assert_eq!(sol.trace.status, Status::Converged);
    assert!(sol.trace.records[1..=5].iter().all(|r| r.beta.is_none()));
    assert_eq!(sol.trace.records[6].beta, Some(0.0));
}

#[test]
fn trace_and_counts() {
    let p = gaussian(12, 2, 100, 97);
    let sol = run(&p, Algorithm::Rcg, 300);
    let t = &sol.trace;
    assert!(t.records.windows(2).all(|w| w[1].iter == w[0].iter + 1));
    assert!(t.records.iter().all(|r| r.rel_residual.is_finite()));
    assert_eq!(t.records[0].alpha, None);
    assert!(t.applies > t.iterations() as u64);
    assert!(t.adjoints >= t.iterations() as u64);
    let mut csv = Vec::new();
    t.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), t.records.len() + 1);
}

#[test]
fn configuration_errors_name_fields() {
    let p = gaussian(8, 1, 40, 98);
    let cases = [
        (
            SolverConfig { beta_rule: Some(BetaRule::FletcherReeves), ..SolverConfig::new(Algorithm::Rgrad, 1) },
            "beta_rule",
        ),
        (SolverConfig { kappa1: 1.5, ..SolverConfig::new(Algorithm::RcgRestarted, 1) }, "kappa1"),
        (SolverConfig::new(Algorithm::Rgrad, 9), "rank"),
    ];
    for (config, field) in cases {
        match solve(&p.op, &p.y, &config, None) {
            Err(Error::Config { field: f, .. }) => assert_eq!(f, field),
            other => panic!("expected config error for {field}, got {other:?}"),
        }
    }
}
