use mdes_core::engine::{eg_pm_step, run_eg_pm, run_kernel, EgPmState};
use mdes_core::linalg::BallQuadratic;
use mdes_core::mirror::{three_point_gap, AnyMap};
use mdes_core::offset::{offset_complexity_mc, ClassSpec};
use mdes_core::problem::rbf_gram;
use mdes_core::{
    run_continuous, run_discrete, EuclideanMap, HypentropyMap, KernelProblem, MirrorMap,
    QuadraticMap, RegressionProblem, RunOptions, StopReason,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn matrix(n: usize, m: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, n * m).prop_map(move |v| DMatrix::from_vec(n, m, v))
}

fn vector(m: usize, scale: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-scale..scale, m).prop_map(DVector::from_vec)
}

fn problem(n: usize, m: usize) -> impl Strategy<Value = RegressionProblem> {
    (matrix(n, m), vector(n, 3.0)).prop_map(|(z, y)| RegressionProblem::new(z, y).unwrap())
}

fn spd(m: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(m, m).prop_map(move |a| &a * a.transpose() + DMatrix::identity(m, m) * 0.1)
}

fn any_map(m: usize) -> impl Strategy<Value = AnyMap> {
    prop_oneof![
        Just(AnyMap::from(EuclideanMap)),
        (spd(m), prop::sample::select(vec![0.5, 1.0]))
            .prop_map(|(q, s)| AnyMap::from(QuadraticMap::new(q, s).unwrap())),
        (1e-4..2.0f64).prop_map(|g| AnyMap::from(HypentropyMap::new(g).unwrap())),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn missing_term_identity(p in problem(9, 4), a in vector(4, 5.0), b in vector(4, 5.0)) {
        let (lhs, rhs) = p.missing_term_sides(&a, &b).unwrap();
        let scale = 1.0 + lhs.abs().max(rhs.abs()) + p.empirical_risk(&a).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * scale);
    }

    #[test]
    fn bregman_is_nonnegative_and_three_point_gap_vanishes(
        map in any_map(3), x in vector(3, 4.0), y in vector(3, 4.0), z in vector(3, 4.0)
    ) {
        prop_assert!(map.bregman(&x, &y).unwrap() >= -1e-12);
        prop_assert!(map.bregman(&x, &x).unwrap().abs() <= 1e-12 * (1.0 + map.value(&x).unwrap().abs()));
        let gap = three_point_gap(&map, &z, &x, &y).unwrap();
        prop_assert!(gap.abs() <= 1e-9 * (1.0 + map.bregman(&z, &x).unwrap().abs()));
    }

    #[test]
    fn dual_roundtrip(map in any_map(3), x in vector(3, 50.0)) {
        let back = map.dual_inverse(&map.dual(&x).unwrap()).unwrap();
        prop_assert!((back - &x).amax() <= 1e-8 * (1.0 + x.amax()));
    }

    #[test]
    fn eg_pm_product_is_invariant(g_seq in prop::collection::vec(vector(5, 2.0), 1..50), gamma in 1e-5..1.0f64) {
        let mut s = EgPmState::init(5, gamma).unwrap();
        let target = gamma * gamma / 4.0;
        for g in &g_seq {
            s = eg_pm_step(&s, g, 0.05, gamma).unwrap();
            for (p, m) in s.plus.iter().zip(s.minus.iter()) {
                prop_assert!((p * m - target).abs() <= 1e-6 * target);
            }
        }
    }

    #[test]
    fn ball_solver_is_optimal(h in spd(3), g in vector(3, 5.0), radius in 0.01..3.0f64, probe in vector(3, 1.0)) {
        let sol = BallQuadratic::new(&h).unwrap().solve(&g, radius).unwrap();
        prop_assert!(sol.alpha.norm() <= radius * (1.0 + 1e-8));
        let f = |a: &DVector<f64>| 0.5 * a.dot(&(&h * a)) - g.dot(a);
        let feasible = if probe.norm() > radius { &probe * (radius / probe.norm()) } else { probe.clone() };
        prop_assert!(f(&sol.alpha) <= f(&feasible) + 1e-9 * (1.0 + f(&feasible).abs()));
    }

    #[test]
    fn offset_complexity_monotone(z in matrix(8, 3), c1 in 0.0..2.0f64, dc in 0.0..2.0f64, r1 in 0.0..2.0f64, dr in 0.0..2.0f64) {
        let est = |c: f64, r: f64| offset_complexity_mc(&z, &ClassSpec::L2Ball { radius: r }, c, 16, 5).unwrap().per_draw_values;
        for (a, b) in est(c1, r1).iter().zip(est(c1 + dc, r1)) {
            prop_assert!(b <= a + 1e-10);
        }
        for (a, b) in est(c1, r1).iter().zip(est(c1, r1 + dr)) {
            prop_assert!(b >= a - 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn euclidean_potential_drops(p in problem(12, 4), reference in vector(4, 2.0), init in vector(4, 2.0)) {
        let beta = p.smoothness_l2().unwrap();
        prop_assume!(beta > 1e-6);
        let eta = 1.0 / beta;
        let opts = RunOptions { max_iters: Some(300), ..Default::default() };
        let (traj, rep) = run_discrete(&EuclideanMap, &p, &init, eta, 0.05, &reference, &opts).unwrap();
        let d0 = traj.first().potential;
        let rr = p.empirical_risk(&reference).unwrap();
        for w in traj.records.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            prop_assert!(a.potential - b.potential >= eta * (b.delta + a.r) - 1e-8 * (1.0 + a.potential));
            prop_assert!(b.potential <= d0 + eta * rr + 1e-8);
        }
        if rep.stopped_by == StopReason::Threshold {
            prop_assert!(rep.residual <= 0.05);
        }
    }

    #[test]
    fn quadratic_potential_drops(p in problem(12, 3), q in spd(3), reference in vector(3, 2.0)) {
        // ρ = 2·scale with respect to ‖·‖_Q; β = 2λ_max(Q^{-1/2} ZᵀZ/n Q^{-1/2}).
        let map = QuadraticMap::new(q.clone(), 0.5).unwrap();
        let qinv = q.clone().cholesky().unwrap().inverse();
        let gram = p.design().tr_mul(p.design()) / 12.0;
        let beta = 2.0 * (&qinv * &gram).eigenvalues().map_or(f64::NAN, |e| e.amax());
        prop_assume!(beta.is_finite() && beta > 1e-6);
        let eta = 1.0 / beta;
        let opts = RunOptions { max_iters: Some(300), ..Default::default() };
        let (traj, _) = run_discrete(&map, &p, &DVector::zeros(3), eta, 0.05, &reference, &opts).unwrap();
        for w in traj.records.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            prop_assert!(a.potential - b.potential >= eta * (b.delta + a.r) - 1e-8 * (1.0 + a.potential));
        }
    }

    #[test]
    fn hypentropy_eg_runs_agree(p in problem(10, 5), reference in vector(5, 1.0)) {
        let kappa = p.column_bound();
        let l1 = reference.lp_norm(1).max(1e-3);
        let gamma = mdes_core::mirror::hypentropy_gamma_limit(l1, 5);
        let radius = mdes_core::mirror::hypentropy_ball_radius(gamma, l1).unwrap();
        let eta = 1.0 / (4.0 * kappa * kappa * radius);
        let opts = RunOptions { max_iters: Some(200), store_alpha: true, ..Default::default() };
        let map = HypentropyMap::new(gamma).unwrap();
        let (md, _) = run_discrete(&map, &p, &DVector::zeros(5), eta, 1e-3, &reference, &opts).unwrap();
        let (eg, _) = run_eg_pm(&p, gamma, eta, 1e-3, &reference, &opts).unwrap();
        prop_assert_eq!(md.len(), eg.len());
        for (a, b) in md.records.iter().zip(&eg.records) {
            let diff = a.alpha_vector().unwrap() - b.alpha_vector().unwrap();
            prop_assert!(diff.amax() <= 1e-8);
        }
        for w in md.records.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            prop_assert!(a.potential - b.potential >= eta * (b.delta + a.r) - 1e-8 * (1.0 + a.potential));
        }
    }

    #[test]
    fn continuous_potential_is_monotone(p in problem(10, 3), reference in vector(3, 2.0)) {
        let opts = RunOptions { stop_at_threshold: true, ..Default::default() };
        let (traj, rep) = run_continuous(&EuclideanMap, &p, &DVector::zeros(3), 0.05, &reference, Some(5.0), Some(1e-3), &opts).unwrap();
        let d0 = traj.first().potential;
        for w in traj.records.windows(2) {
            prop_assert!(w[1].potential <= w[0].potential + 1e-10 * (1.0 + d0));
        }
        if rep.stopped_by == StopReason::Threshold {
            prop_assert!(rep.t_star <= rep.budget_t + 1e-3);
        }
    }
}

#[test]
fn kernel_potential_drops_with_rkhs_geometry() {
    let pts = DMatrix::from_fn(30, 1, |i, _| i as f64 / 29.0);
    let k = rbf_gram(&pts, 0.2).unwrap();
    let y = DVector::from_fn(30, |i, _| (6.0 * i as f64 / 29.0).sin());
    let kp = KernelProblem::new(k.clone(), y, 1.0).unwrap();
    let reference = mdes_core::baselines::constrained_kernel_erm(&kp, 1.5).unwrap();
    let eta = mdes_core::engine::kernel_step_limit(&kp);
    let opts = RunOptions {
        max_iters: Some(2000),
        ..Default::default()
    };
    let (traj, _) = run_kernel(
        &kp,
        &DVector::zeros(30),
        eta,
        1e-3,
        &reference,
        &opts,
        false,
    )
    .unwrap();
    for w in traj.records.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        assert!(a.potential - b.potential >= eta * (b.delta + a.r) - 1e-8 * (1.0 + a.potential));
    }
    // The kernel potential equals (α′ − α)ᵀK(α′ − α) exactly as computed directly.
    let last = traj.last();
    assert!(last.potential >= 0.0);
}
