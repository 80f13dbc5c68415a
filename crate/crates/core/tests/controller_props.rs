use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tpc_core::controller::{
    build_tpc_problem, dq_power, Controller, ReferenceSchedule, RegularizationConfig, RegularizationKind, TpcConfig,
    TpcController,
};
use tpc_core::hankel::{build_hankel, ExcitationSpec, SignalLayout, Trajectory};
use tpc_core::predictor::{estimate, Dims, EstimatorOptions, MultistepPredictor};
use tpc_core::sim::{collect_training_data, run_closed_loop, GridSpec, NonlinearitySpec, PlantModel};
use tpc_core::solver::{solve_unconstrained, QuadraticObjective, SocpSolver, SolveStatus, SolverSettings};
use tpc_oracles::{stack_window, white_inputs, InnovationModel};

const RHO: usize = 6;
const TAU: usize = 6;

fn oracle_predictor(seed: u64) -> (InnovationModel, MultistepPredictor) {
    let sys = InnovationModel::random_deadbeat(4, 2, 4, seed);
    let len = 1500 + RHO + TAU - 1;
    let u = white_inputs(2, len, 1.0, seed);
    let y = sys.simulate(&u, 0.02, seed + 1);
    let traj = Trajectory::new(0.01, u, y, SignalLayout::inverter()).unwrap();
    let pred = estimate(&build_hankel(&traj, RHO, TAU).unwrap(), &EstimatorOptions::default()).unwrap();
    (sys, pred)
}

/// `u* = −(H_uᵀ L_y H_u + L_u)⁻¹ H_uᵀ L_y (H_p z_p − y_r)` by LU.
fn normal_equation_plan(pred: &MultistepPredictor, cfg: &TpcConfig, zp: &DVector<f64>, y_ref: &[f64]) -> DVector<f64> {
    let (q, m) = (pred.dims.q, pred.dims.m);
    let ly = DMatrix::from_diagonal(&DVector::from_fn(q * TAU, |i, _| cfg.ly_weights[i % q]));
    let lu = DMatrix::from_diagonal(&DVector::from_fn(m * TAU, |i, _| cfg.lu_weights[i % m]));
    let yr = DVector::from_fn(q * TAU, |i, _| y_ref[i % q]);
    let lhs = pred.hu.transpose() * &ly * &pred.hu + lu;
    let rhs = -(pred.hu.transpose() * &ly * (&pred.hp * zp - yr));
    lhs.lu().solve(&rhs).unwrap()
}

#[test]
fn first_input_matches_normal_equations() {
    for seed in 0..3 {
        let (sys, pred) = oracle_predictor(seed);
        let cfg = TpcConfig::inverter_default();
        let mut ctl = TpcController::new(pred.clone(), cfg.clone()).unwrap();
        let u = white_inputs(2, 30, 0.5, 40 + seed);
        let y = sys.simulate(&u, 0.0, 0);
        let y_ref = [0.3, -0.1, 0.0, 0.0];
        for k in 0..RHO {
            ctl.set_applied_input(u.column(k).as_slice()).unwrap();
            ctl.control_step(y.column(k).as_slice(), &y_ref, &[0.0, 0.0]).unwrap();
        }
        let zp = stack_window(&y, &u, 0, RHO);
        let expected = normal_equation_plan(&pred, &cfg, &zp, &y_ref);
        let scale = 1.0 + expected.amax();
        for c in 0..2 {
            assert!((ctl.input()[c] - expected[c]).abs() < 1e-8 * scale, "{:?} vs {}", ctl.input(), expected);
        }
    }
}

#[test]
fn solver_optimum_has_vanishing_finite_difference_gradient() {
    let (_, pred) = oracle_predictor(7);
    let cfg = TpcConfig::inverter_default();
    let zp = DVector::from_fn(pred.dims.past_len(), |i, _| ((i * 7) % 5) as f64 * 0.05);
    let (obj, cons) = build_tpc_problem(&pred, &zp, &[0.3, 0.0, 0.0, 0.0], &[0.0, 0.0], &cfg).unwrap();
    let mut solver = SocpSolver::new(SolverSettings::default());
    let info = solver.solve(&obj, &cons, None).unwrap();
    assert_eq!(info.status, SolveStatus::Optimal);
    let x = DVector::from_column_slice(solver.x());
    // Central differences are exact on a quadratic up to rounding, so a wide step is fine.
    let h = 0.1;
    let mut grad = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        grad[i] = (obj.value(&xp) - obj.value(&xm)) / (2.0 * h);
    }
    assert!(grad.norm() < 1e-8, "gradient norm {:e}", grad.norm());
}

#[test]
fn zero_weight_channels_do_not_change_the_optimum() {
    let (_, pred) = oracle_predictor(3);
    let cfg = TpcConfig::inverter_default();
    let zp = DVector::from_fn(pred.dims.past_len(), |i, _| (i as f64 * 0.37).sin() * 0.2);
    let (full, _) = build_tpc_problem(&pred, &zp, &[0.3, 0.1, 0.0, 0.0], &[0.0, 0.0], &cfg).unwrap();
    let u_full = solve_unconstrained(&full).unwrap();

    // Drop the current rows; the lead-in keeps all four outputs so the reduced objective is built by hand.
    let keep: Vec<usize> = (0..TAU).flat_map(|k| [4 * k, 4 * k + 1]).collect();
    let hp = pred.hp.select_rows(keep.iter());
    let hu = pred.hu.select_rows(keep.iter());
    let ly = DMatrix::from_diagonal(&DVector::from_fn(2 * TAU, |_, _| 4.5e5));
    let lu = DMatrix::from_diagonal(&DVector::from_fn(2 * TAU, |i, _| cfg.lu_weights[i % 2]));
    let yr = DVector::from_fn(2 * TAU, |i, _| [0.3, 0.1][i % 2]);
    let p = hu.transpose() * &ly * &hu + lu;
    let p = (&p + p.transpose()) * 0.5;
    let c = hu.transpose() * &ly * (&hp * &zp - yr);
    let u_red = solve_unconstrained(&QuadraticObjective::new(p, c)).unwrap();
    assert!((&u_full - &u_red).amax() < 1e-10 * (1.0 + u_full.amax()), "{}", (&u_full - &u_red).amax());
}

#[test]
fn steady_references_reproduce_the_steady_input() {
    let sys = InnovationModel::random_deadbeat(4, 2, 4, 12);
    let (hp, hu) = sys.multistep_predictor(RHO, TAU);
    let pred = MultistepPredictor { hp, hu, dims: Dims { m: 2, q: 4, rho: RHO, tau: TAU }, layout: SignalLayout::inverter() };
    let u_ss = DVector::from_column_slice(&[0.3, -0.2]);
    let x_ss = (DMatrix::identity(4, 4) - &sys.a).lu().solve(&(&sys.b * &u_ss)).unwrap();
    let y_ss = &sys.c * x_ss;
    let mut ctl = TpcController::new(pred, TpcConfig::inverter_default()).unwrap();
    for _ in 0..RHO {
        ctl.set_applied_input(u_ss.as_slice()).unwrap();
        ctl.control_step(y_ss.as_slice(), y_ss.as_slice(), u_ss.as_slice()).unwrap();
    }
    for c in 0..2 {
        assert!((ctl.input()[c] - u_ss[c]).abs() < 1e-6, "{:?}", ctl.input());
    }
}

#[test]
fn regularization_none_adds_nothing_and_quadratic_is_convex() {
    let (_, pred) = oracle_predictor(5);
    let zp = DVector::from_fn(pred.dims.past_len(), |i, _| (i as f64).cos() * 0.1);
    let base = TpcConfig::inverter_default();
    let none = TpcConfig { reg: RegularizationConfig { kind: RegularizationKind::None, weight: 5.0, coupling: None }, ..base.clone() };
    let (a, _) = build_tpc_problem(&pred, &zp, &[0.3, 0.0, 0.0, 0.0], &[0.0; 2], &base).unwrap();
    let (b, _) = build_tpc_problem(&pred, &zp, &[0.3, 0.0, 0.0, 0.0], &[0.0; 2], &none).unwrap();
    assert_eq!(a, b);
    let k = DMatrix::from_fn(12, 36, |i, j| if i == j { 0.5 } else { 0.0 });
    let coupled = TpcConfig {
        reg: RegularizationConfig { kind: RegularizationKind::LeadinCoupled, weight: 2.0, coupling: Some(k.clone()) },
        ..base.clone()
    };
    let (c, _) = build_tpc_problem(&pred, &zp, &[0.3, 0.0, 0.0, 0.0], &[0.0; 2], &coupled).unwrap();
    // Difference of objectives is exactly ½·w‖u − K z_p‖².
    let u = DVector::from_fn(12, |i, _| 0.1 * i as f64 - 0.4);
    let diff = c.value(&u) - a.value(&u);
    let expected = 0.5 * 2.0 * (&u - &k * &zp).norm_squared();
    assert!((diff - expected).abs() < 1e-9 * (1.0 + a.value(&u).abs()));
}

#[test]
fn constrained_plans_respect_the_predicted_current_limit() {
    let mut plant = PlantModel::first_order_lag(2e-3, 2e-4, 50, GridSpec::default(), NonlinearitySpec::default(), [1e-3; 4]).unwrap();
    let spec = ExcitationSpec { amplitude: 0.1, length: 500, channels: 2 };
    let traj = collect_training_data(&mut plant, &spec, 500, 3, None).unwrap();
    let pred = estimate(&build_hankel(&traj, RHO, TAU).unwrap(), &EstimatorOptions::default()).unwrap();
    let cfg = TpcConfig { current_limit: Some(0.2), ..TpcConfig::inverter_default() };
    let mut ctl = TpcController::new(pred.clone(), cfg).unwrap();
    let sched = ReferenceSchedule::new(vec![(0.0, 0.0, 0.0), (0.1, 0.3, 0.0)]).unwrap();
    let mut worst: f64 = 0.0;
    plant.reset(1);
    let mut y = [0.0; 4];
    for k in 0..60 {
        let mut yr = [0.0; 4];
        sched.fill_output_reference(k as f64 * 0.01, &pred.layout, &mut yr);
        let info = ctl.control_step(&y, &yr, &[0.0; 2]).unwrap();
        if info.status.is_some() {
            assert_eq!(info.status, Some(SolveStatus::Optimal));
            let plan = DVector::from_column_slice(ctl.plan());
            worst = worst.max(ctl.constraints().max_violation(&plan));
        }
        let u = [ctl.input()[0], ctl.input()[1]];
        for _ in 0..50 {
            y = plant.plant_step(u).unwrap().measured;
        }
    }
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn closed_loop_is_deterministic() {
    let build = || {
        let mut plant = PlantModel::first_order_lag(2e-3, 2e-4, 50, GridSpec::default(), NonlinearitySpec::default(), [1e-3; 4]).unwrap();
        let spec = ExcitationSpec { amplitude: 0.1, length: 300, channels: 2 };
        let traj = collect_training_data(&mut plant, &spec, 300, 9, None).unwrap();
        let pred = estimate(&build_hankel(&traj, RHO, TAU).unwrap(), &EstimatorOptions::default()).unwrap();
        let mut ctl = TpcController::new(pred, TpcConfig::inverter_default()).unwrap();
        let sched = ReferenceSchedule::new(vec![(0.0, 0.0, 0.0), (0.1, 0.3, 0.0)]).unwrap();
        run_closed_loop(&mut plant, &mut ctl, &sched, 0.5, 4).unwrap().telemetry
    };
    assert_eq!(build(), build());
}

proptest! {
    #[test]
    fn apparent_power_identity(vd in -2.0f64..2.0, vq in -2.0f64..2.0, id in -2.0f64..2.0, iq in -2.0f64..2.0) {
        let (p, q) = dq_power(vd, vq, id, iq);
        let lhs = p * p + q * q;
        let rhs = (vd * vd + vq * vq) * (id * id + iq * iq);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
    }
}
