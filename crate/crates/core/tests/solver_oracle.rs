use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tpc_core::solver::{
    solve_socp, BoxBounds, ConstraintSet, QuadraticObjective, SocConstraint, SocpSolver, SolveStatus,
    SolverSettings,
};
use tpc_oracles::{project_disk, projected_gradient, random_disks, random_objective};

fn disk_problem(seed: u64) -> (QuadraticObjective, ConstraintSet, Vec<([f64; 2], f64)>) {
    let (p, c) = random_objective(12, seed);
    let disks = random_disks(6, seed + 7);
    let socs = disks
        .iter()
        .enumerate()
        .map(|(k, (center, radius))| {
            let mut a = DMatrix::zeros(2, 12);
            a[(0, 2 * k)] = 1.0;
            a[(1, 2 * k + 1)] = 1.0;
            SocConstraint { a, b: DVector::from_column_slice(&[-center[0], -center[1]]), radius: *radius }
        })
        .collect();
    (QuadraticObjective::new(p, c), ConstraintSet { socs, ..Default::default() }, disks)
}

#[test]
fn random_socps_match_projected_gradient() {
    for seed in 0..20 {
        let (obj, cons, disks) = disk_problem(seed);
        let rep = solve_socp(&obj, &cons, &SolverSettings::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Optimal, "seed {seed}");
        assert!(cons.max_violation(&rep.x_star) <= 1e-8, "seed {seed}");
        let oracle = projected_gradient(
            &obj.p,
            &obj.c,
            |x| {
                for (k, (center, radius)) in disks.iter().enumerate() {
                    project_disk(x, 2 * k, *center, *radius);
                }
            },
            20000,
        );
        let (f, f_ref) = (obj.value(&rep.x_star), obj.value(&oracle));
        assert!((f - f_ref).abs() <= 1e-6 * f_ref.abs().max(1.0), "seed {seed}: {f} vs {f_ref}");
    }
}

#[test]
fn random_box_qps_match_projected_gradient() {
    for seed in 0..10 {
        let (p, c) = random_objective(12, 100 + seed);
        let obj = QuadraticObjective::new(p, c);
        let bounds = BoxBounds { lower: DVector::from_element(12, -0.3), upper: DVector::from_element(12, 0.4) };
        let cons = ConstraintSet { bounds: Some(bounds), ..Default::default() };
        let rep = solve_socp(&obj, &cons, &SolverSettings::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Optimal);
        let oracle = projected_gradient(&obj.p, &obj.c, |x| x.apply(|v| *v = v.clamp(-0.3, 0.4)), 20000);
        let (f, f_ref) = (obj.value(&rep.x_star), obj.value(&oracle));
        assert!((f - f_ref).abs() <= 1e-6 * f_ref.abs().max(1.0), "seed {seed}: {f} vs {f_ref}");
        assert!(cons.max_violation(&rep.x_star) <= 1e-8);
    }
}

#[test]
fn warm_start_does_not_change_the_solution() {
    let (obj, cons, _) = disk_problem(3);
    let mut solver = SocpSolver::new(SolverSettings::default());
    solver.solve(&obj, &cons, None).unwrap();
    let cold = solver.x().to_vec();
    let warm: Vec<f64> = cold.iter().map(|v| v + 0.05).collect();
    let info = solver.solve(&obj, &cons, Some(&warm)).unwrap();
    assert_eq!(info.status, SolveStatus::Optimal);
    let diff = cold.iter().zip(solver.x()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-6, "{diff}");
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    let (obj, cons, _) = disk_problem(5);
    let mut solver = SocpSolver::new(SolverSettings::default());
    solver.solve(&obj, &cons, None).unwrap();
    let first = solver.x().to_vec();
    solver.solve(&obj, &cons, None).unwrap();
    assert_eq!(first, solver.x());
}

#[test]
fn max_iter_reports_best_iterate() {
    let (obj, cons, _) = disk_problem(1);
    let settings = SolverSettings { max_iter: 2, ..Default::default() };
    let rep = solve_socp(&obj, &cons, &settings).unwrap();
    assert_eq!(rep.status, SolveStatus::MaxIter);
    assert_eq!(rep.iterations, 2);
    assert!(rep.x_star.iter().all(|v| v.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn inactive_constraints_give_unconstrained_optimum(seed in 0u64..10_000) {
        let (p, c) = random_objective(6, seed);
        let obj = QuadraticObjective::new(p, c);
        let x_free = obj.p.clone().cholesky().unwrap().solve(&(-&obj.c));
        let radius = 10.0 * (1.0 + x_free.norm());
        let cons = ConstraintSet {
            socs: vec![SocConstraint { a: DMatrix::identity(6, 6), b: DVector::zeros(6), radius }],
            ..Default::default()
        };
        let rep = solve_socp(&obj, &cons, &SolverSettings::default()).unwrap();
        prop_assert_eq!(rep.status, SolveStatus::Optimal);
        prop_assert!((&rep.x_star - &x_free).amax() <= 1e-7 * (1.0 + x_free.amax()));
    }

    #[test]
    fn solutions_satisfy_box_and_cone(seed in 0u64..10_000, r in 0.05f64..2.0) {
        let (p, c) = random_objective(8, seed);
        let obj = QuadraticObjective::new(p, c);
        let mut a = DMatrix::zeros(3, 8);
        for i in 0..3 {
            a[(i, i)] = 1.0;
            a[(i, i + 3)] = -0.5;
        }
        let cons = ConstraintSet {
            bounds: Some(BoxBounds { lower: DVector::from_element(8, -1.0), upper: DVector::from_element(8, 1.0) }),
            socs: vec![SocConstraint { a, b: DVector::from_element(3, 0.1), radius: r }],
            ..Default::default()
        };
        let rep = solve_socp(&obj, &cons, &SolverSettings::default()).unwrap();
        prop_assert_eq!(rep.status, SolveStatus::Optimal);
        prop_assert!(cons.max_violation(&rep.x_star) <= 1e-8);
    }
}
