use bouligand_landweber::bouligand::{apply_subderivative, build_linearized};
use bouligand_landweber::experiments::run_noise_free;
use bouligand_landweber::fem::{m_inner, m_norm};
use bouligand_landweber::forward::{brute_force_forward, forward_residual, solve_forward};
use bouligand_landweber::landweber::run;
use bouligand_landweber::linalg::max_abs_diff;
use bouligand_landweber::verification::{
    adjoint_check, mismatch_measure, sign_preserving_pairs, tcc_ratio,
};
use bouligand_landweber::{
    ExactData, ForwardProblem, GridFunction, LandweberConfig, NoiseSpec, Role, Start,
};
use proptest::prelude::*;

/// Upper bound on `‖F(u) − F(v)‖_M / ‖u − v‖_M`: the inverse of the smallest
/// Dirichlet eigenvalue `2π²`, with a little room for discretization.
const LIPSCHITZ: f64 = 0.06;

fn field(p: &ForwardProblem, role: Role, values: Vec<f64>) -> GridFunction {
    GridFunction::new(p.mesh(), role, values).unwrap()
}

fn sources(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_map_is_monotone(
        n in 3usize..=17,
        u in sources(225),
        bump in prop::collection::vec(0.0f64..20.0, 225),
    ) {
        let p = ForwardProblem::positive_part(n).unwrap();
        let m = p.dim();
        let v: Vec<f64> = u.iter().zip(&bump).map(|(a, b)| a + b).take(m).collect();
        let yu = solve_forward(&p, &field(&p, Role::Source, u[..m].to_vec()), None).unwrap().y;
        let yv = solve_forward(&p, &field(&p, Role::Source, v), None).unwrap().y;
        for (a, b) in yu.values().iter().zip(yv.values()) {
            prop_assert!(*a <= *b + 1e-10, "{a} > {b}");
        }
    }

    #[test]
    fn forward_map_is_lipschitz(n in 3usize..=17, u in sources(225), v in sources(225)) {
        let p = ForwardProblem::positive_part(n).unwrap();
        let m = p.dim();
        let u = field(&p, Role::Source, u[..m].to_vec());
        let v = field(&p, Role::Source, v[..m].to_vec());
        let yu = solve_forward(&p, &u, None).unwrap().y;
        let yv = solve_forward(&p, &v, None).unwrap().y;
        let dy = m_norm(p.mass(), &yu.sub(&yv).unwrap()).unwrap();
        let du = m_norm(p.mass(), &u.sub(&v).unwrap()).unwrap();
        prop_assert!(dy <= LIPSCHITZ * du + 1e-14, "{dy} vs {du}");
    }

    #[test]
    fn newton_agrees_with_enumeration(n in 3usize..=5, u in prop::collection::vec(-1.0f64..1.0, 9)) {
        let p = ForwardProblem::positive_part(n).unwrap();
        let u = field(&p, Role::Source, u[..p.dim()].to_vec());
        let newton = solve_forward(&p, &u, None).unwrap();
        let oracle = brute_force_forward(&p, &u).unwrap();
        prop_assert!(max_abs_diff(newton.y.values(), oracle.y.values()) <= 1e-10);
        prop_assert!(newton.final_residual <= p.options().tolerance);
        prop_assert!(newton.ssn_iterations <= 30);
    }

    #[test]
    fn forward_residual_contract(n in 3usize..=33, u in sources(961)) {
        let p = ForwardProblem::positive_part(n).unwrap();
        let u = field(&p, Role::Source, u[..p.dim()].to_vec());
        let sol = solve_forward(&p, &u, None).unwrap();
        prop_assert!(forward_residual(&p, &sol.y, &u).unwrap() <= 1e-11);
    }

    #[test]
    fn subderivative_is_self_adjoint(
        n in 5usize..=33,
        u in sources(961),
        h in prop::collection::vec(-1.0f64..1.0, 961),
        w in prop::collection::vec(-1.0f64..1.0, 961),
    ) {
        let p = ForwardProblem::positive_part(n).unwrap();
        let m = p.dim();
        let y = solve_forward(&p, &field(&p, Role::Source, u[..m].to_vec()), None).unwrap().y;
        let op = build_linearized(&p, &y).unwrap();
        let opts = p.options().linear;
        let h = field(&p, Role::Source, h[..m].to_vec());
        let w = field(&p, Role::Source, w[..m].to_vec());
        let gh = apply_subderivative(&op, p.mass(), &h, &opts).unwrap();
        let gw = apply_subderivative(&op, p.mass(), &w, &opts).unwrap();
        let lhs = m_inner(p.mass(), &h, &gw).unwrap();
        let rhs = m_inner(p.mass(), &w, &gh).unwrap();
        let scale = m_norm(p.mass(), &h).unwrap() * m_norm(p.mass(), &w).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * scale);
    }

    #[test]
    fn mismatch_measure_is_symmetric_and_bounded(
        a in prop::collection::vec(-1.0f64..1.0, 49),
        b in prop::collection::vec(-1.0f64..1.0, 49),
    ) {
        let p = ForwardProblem::positive_part(9).unwrap();
        let y = field(&p, Role::State, a);
        let z = field(&p, Role::State, b);
        let m1 = mismatch_measure(p.lumped(), &y, &z).unwrap();
        let m2 = mismatch_measure(p.lumped(), &z, &y).unwrap();
        prop_assert_eq!(m1, m2);
        prop_assert!((0.0..=1.0).contains(&m1));
    }
}

#[test]
fn matched_sign_patterns_linearize_exactly() {
    let p = ForwardProblem::positive_part(17).unwrap();
    for (u, u_hat) in sign_preserving_pairs(&p, 20, 5).unwrap() {
        let y = solve_forward(&p, &u, None).unwrap().y;
        let y_hat = solve_forward(&p, &u_hat, None).unwrap().y;
        assert!(y
            .values()
            .iter()
            .zip(y_hat.values())
            .all(|(a, b)| *a != 0.0 && (*a > 0.0) == (*b > 0.0)));
        let op = build_linearized(&p, &y).unwrap();
        let step = u_hat.sub(&u).unwrap();
        let lin = apply_subderivative(&op, p.mass(), &step, &p.options().linear).unwrap();
        let rem = y_hat.sub(&y).unwrap().sub(&lin).unwrap();
        let bound = 1e-10 * m_norm(p.mass(), &step).unwrap();
        assert!(m_norm(p.mass(), &rem).unwrap() <= bound);
        let est = tcc_ratio(&p, &u, &u_hat).unwrap();
        assert!(est.ratio <= 1e-9);
        assert_eq!(est.mismatch, 0.0);
    }
}

#[test]
fn perturbation_inside_positive_region_keeps_linearization_exact() {
    let p = ForwardProblem::positive_part(33).unwrap();
    let exact = ExactData::default();
    let fields: bouligand_landweber::ExactFields = exact.fields(&p.mesh()).unwrap();
    let u = fields.source.clone();
    let y = solve_forward(&p, &u, None).unwrap().y;
    let floor = 1e-3;
    let bump: Vec<f64> = y
        .values()
        .iter()
        .map(|&v| if v > floor { 1.0 } else { 0.0 })
        .collect();
    let mut amplitude = 1.0;
    loop {
        let mut u_hat = u.clone();
        u_hat
            .axpy(amplitude, &field(&p, Role::Source, bump.clone()))
            .unwrap();
        let y_hat = solve_forward(&p, &u_hat, None).unwrap().y;
        let same = y
            .values()
            .iter()
            .zip(y_hat.values())
            .all(|(a, b)| (*a > 0.0) == (*b > 0.0) && *b != 0.0);
        if same {
            assert!(tcc_ratio(&p, &u, &u_hat).unwrap().ratio <= 1e-9);
            break;
        }
        amplitude *= 0.5;
        assert!(amplitude > 1e-12, "no sign-preserving amplitude found");
    }
}

#[test]
fn random_probes_respect_norm_bound() {
    for n in [9, 17, 33, 65] {
        let p = ForwardProblem::positive_part(n).unwrap();
        let report = adjoint_check(&p, 10, n as u64).unwrap();
        assert!(report.max_asymmetry <= 1e-10);
        assert!(
            report.max_rayleigh <= 0.05,
            "n={n}: {}",
            report.max_rayleigh
        );
    }
}

/// Exact fields together with data produced by the discrete forward map, so
/// that the only data error is the one added on purpose.
fn consistent_data(p: &ForwardProblem) -> (bouligand_landweber::ExactFields, GridFunction) {
    let fields: bouligand_landweber::ExactFields = ExactData::default().fields(&p.mesh()).unwrap();
    let y = solve_forward(p, &fields.source, None)
        .unwrap()
        .y
        .with_role(Role::Data);
    (fields, y)
}

#[test]
fn noise_free_error_is_monotone() {
    let p = ForwardProblem::positive_part(33).unwrap();
    let (fields, data) = consistent_data(&p);
    let cfg = LandweberConfig::default().with_max_iterations(40);
    let rec = run(
        &p,
        &data,
        &cfg,
        &Start::Source.field(&fields),
        Some(&fields.source),
    )
    .unwrap();
    assert_eq!(rec.rel_errors.len(), 41);
    for w in rec.rel_errors.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} > {}", w[1], w[0]);
    }
    assert!(rec.rel_errors[40] < 2e-3);
}

#[test]
fn noise_free_runs_start_from_the_requested_iterate() {
    let p = ForwardProblem::positive_part(17).unwrap();
    let exact = ExactData::default();
    let zero = run_noise_free(&p, &exact, Start::Zero, 0, &LandweberConfig::default()).unwrap();
    assert_eq!(zero.rel_errors, vec![1.0]);
    let biased = run_noise_free(&p, &exact, Start::Source, 3, &LandweberConfig::default()).unwrap();
    assert_eq!(biased.residuals.len(), 4);
    assert!(biased.rel_errors[0] > 3.0);
}

#[test]
fn noisy_iterates_are_fejer_monotone_until_stopping() {
    let p = ForwardProblem::positive_part(33).unwrap();
    let (fields, exact_data) = consistent_data(&p);
    let (data, delta) = bouligand_landweber::experiments::add_noise(
        &exact_data,
        &NoiseSpec::target(3, 1e-4),
        p.mass(),
    )
    .unwrap();
    let mut cfg = LandweberConfig::default().with_delta(delta);
    cfg.store_iterates = true;
    let u0 = Start::Source.field(&fields);
    let rec = run(&p, &data, &cfg, &u0, Some(&fields.source)).unwrap();
    assert_eq!(rec.reason, bouligand_landweber::Termination::Discrepancy);
    let iterates = rec.iterates.as_ref().unwrap();
    assert_eq!(iterates.len(), rec.stopping_index + 1);
    let errors: Vec<f64> = iterates
        .iter()
        .map(|u| m_norm(p.mass(), &u.sub(&fields.source).unwrap()).unwrap())
        .collect();
    for w in errors.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} > {}", w[1], w[0]);
    }
}

#[test]
fn runs_are_deterministic() {
    let p = ForwardProblem::positive_part(17).unwrap();
    let exact = ExactData::default();
    let fields: bouligand_landweber::ExactFields = exact.fields(&p.mesh()).unwrap();
    let go = || {
        let (data, delta) = bouligand_landweber::experiments::add_noise(
            &fields.state,
            &NoiseSpec::target(9, 1e-3),
            p.mass(),
        )
        .unwrap();
        let cfg = LandweberConfig::default().with_delta(delta);
        run(
            &p,
            &data,
            &cfg,
            &Start::Source.field(&fields),
            Some(&fields.source),
        )
        .unwrap()
    };
    let (a, b) = (go(), go());
    assert_eq!(a.residuals, b.residuals);
    assert_eq!(a.rel_errors, b.rel_errors);
    assert_eq!(a.final_iterate, b.final_iterate);
}
