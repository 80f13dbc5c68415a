use nalgebra::{DMatrix, DVector};
use tpc_core::hankel::{build_hankel, SignalLayout, Trajectory};
use tpc_core::predictor::{estimate, EstimatorOptions, MultistepPredictor};
use tpc_core::TpcError;
use tpc_oracles::{stack_window, white_inputs, InnovationModel};

const RHO: usize = 6;
const TAU: usize = 6;

fn fit(sys: &InnovationModel, n_cols: usize, sigma: f64, seed: u64) -> Result<MultistepPredictor, TpcError> {
    let len = n_cols + RHO + TAU - 1;
    let u = white_inputs(sys.m(), len, 1.0, seed);
    let y = sys.simulate(&u, sigma, seed + 1000);
    let traj = Trajectory::new(0.01, u, y, SignalLayout::generic(sys.q(), sys.m()))?;
    estimate(&build_hankel(&traj, RHO, TAU)?, &EstimatorOptions::default())
}

/// Largest prediction error over noise-free validation windows.
fn validation_error(sys: &InnovationModel, pred: &MultistepPredictor, seed: u64) -> f64 {
    let u = white_inputs(sys.m(), 400, 1.0, seed);
    let y = sys.simulate(&u, 0.0, 0);
    let (q, m) = (sys.q(), sys.m());
    let mut worst: f64 = 0.0;
    for start in (50..400 - RHO - TAU).step_by(7) {
        let zp = stack_window(&y, &u, start, RHO);
        let uf = DVector::from_fn(m * TAU, |i, _| u[(i % m, start + RHO + i / m)]);
        let yhat = pred.predict(&zp, &uf).unwrap();
        for k in 0..TAU {
            for c in 0..q {
                worst = worst.max((yhat[k * q + c] - y[(c, start + RHO + k)]).abs());
            }
        }
    }
    worst
}

#[test]
fn near_noise_free_data_reproduces_true_predictions() {
    for seed in 0..5 {
        let sys = InnovationModel::random_deadbeat(4, 2, 4, seed);
        let pred = fit(&sys, 2000, 1e-8, seed).unwrap();
        let err = validation_error(&sys, &pred, seed + 50);
        assert!(err < 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn noisy_data_converges_to_true_predictor() {
    let sys = InnovationModel::random_deadbeat(3, 1, 2, 11);
    let (hp, hu) = sys.multistep_predictor(RHO, TAU);
    let small = fit(&sys, 500, 0.1, 1).unwrap();
    let large = fit(&sys, 20000, 0.1, 1).unwrap();
    let err = |p: &MultistepPredictor| (&p.hp - &hp).amax().max((&p.hu - &hu).amax());
    assert!(err(&large) < 0.5 * err(&small), "{} vs {}", err(&large), err(&small));
    assert!(err(&large) < 0.05);
}

#[test]
fn exactly_noise_free_data_is_rank_deficient() {
    let sys = InnovationModel::random_stable(4, 2, 4, 5);
    match fit(&sys, 2000, 0.0, 2) {
        Err(TpcError::SingularFactorization { .. }) => {}
        other => panic!("expected a singular factorization, got {other:?}"),
    }
}

#[test]
fn estimates_are_causal_and_strictly_proper() {
    for seed in 0..4 {
        let sys = InnovationModel::random_deadbeat(4, 2, 3, 20 + seed);
        let pred = fit(&sys, 800, 0.05, seed).unwrap();
        let scale = pred.hu.norm();
        assert!(pred.causality_violation() <= 1e-10 * scale);
        for k in 0..TAU {
            assert_eq!(pred.hu.view((k * 3, k * 2), (3, 2)).amax(), 0.0);
        }
    }
}

#[test]
fn predictor_is_invariant_to_output_scaling() {
    // Scaling all outputs by s scales the y-columns of H_p by 1 and the
    // u-columns and H_u by s.
    let sys = InnovationModel::random_deadbeat(3, 1, 2, 4);
    let len = 600 + RHO + TAU - 1;
    let u = white_inputs(1, len, 1.0, 3);
    let y = sys.simulate(&u, 0.05, 4);
    let base = {
        let traj = Trajectory::new(0.01, u.clone(), y.clone(), SignalLayout::generic(2, 1)).unwrap();
        estimate(&build_hankel(&traj, RHO, TAU).unwrap(), &EstimatorOptions::default()).unwrap()
    };
    let s = 7.5;
    let scaled = {
        let traj = Trajectory::new(0.01, u, y * s, SignalLayout::generic(2, 1)).unwrap();
        estimate(&build_hankel(&traj, RHO, TAU).unwrap(), &EstimatorOptions::default()).unwrap()
    };
    let mut expected_hp: DMatrix<f64> = base.hp.clone();
    for b in 0..RHO {
        let col = b * 3 + 2;
        expected_hp.column_mut(col).scale_mut(s);
    }
    assert!((&scaled.hp - expected_hp).amax() < 1e-8 * base.hp.amax().max(1.0) * s);
    assert!((&scaled.hu - &base.hu * s).amax() < 1e-8 * s * base.hu.amax().max(1.0));
}
