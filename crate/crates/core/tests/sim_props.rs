use tpc_core::controller::{dq_power, ProportionalFeedback, ReferenceSchedule};
use tpc_core::hankel::ExcitationSpec;
use tpc_core::sim::{
    collect_training_data, run_closed_loop, GridMode, GridSpec, NonlinearitySpec, PlantModel, DEFAULT_SUBSTEPS,
    DEFAULT_SUBSTEP_DT, DEFAULT_THETA,
};
use tpc_oracles::white_inputs;

fn plant(grid: GridSpec, noise: [f64; 4]) -> PlantModel {
    PlantModel::first_order_lag(DEFAULT_THETA, DEFAULT_SUBSTEP_DT, DEFAULT_SUBSTEPS, grid, NonlinearitySpec::default(), noise)
        .unwrap()
}

fn response(model: &mut PlantModel, u: &nalgebra::DMatrix<f64>) -> Vec<[f64; 4]> {
    model.reset(0);
    (0..u.ncols()).map(|k| model.plant_step([u[(0, k)], u[(1, k)]]).unwrap().clean).collect()
}

#[test]
fn linear_regime_obeys_superposition() {
    let mut m = plant(GridSpec::default(), [0.0; 4]);
    let u1 = white_inputs(2, 400, 0.3, 1);
    let u2 = white_inputs(2, 400, 0.3, 2);
    let y1 = response(&mut m, &u1);
    let y2 = response(&mut m, &u2);
    let y12 = response(&mut m, &(&u1 + &u2));
    let mut worst: f64 = 0.0;
    for k in 0..400 {
        for c in 0..4 {
            worst = worst.max((y12[k][c] - y1[k][c] - y2[k][c]).abs());
        }
    }
    assert!(worst < 1e-10, "{worst:e}");
}

#[test]
fn settles_to_the_commanded_current() {
    let mut m = plant(GridSpec::default(), [0.0; 4]);
    let mut out = m.output([0.0; 2]);
    for _ in 0..2000 {
        out = m.plant_step([0.3, 0.0]).unwrap();
    }
    let [p, q, id, iq] = out.clean;
    assert!((p - 0.3).abs() < 1e-6 && q.abs() < 1e-6 && (id - 0.3).abs() < 1e-6 && iq.abs() < 1e-6);
}

#[test]
fn power_is_voltage_times_current_at_every_sample() {
    let grid = GridSpec {
        mode: GridMode::Thevenin,
        r: 0.01,
        x: 0.02,
        drift_amplitude: 0.01,
        drift_period: 0.05,
        ..GridSpec::default()
    };
    let mut m = plant(grid, [1e-2; 4]);
    m.reset(5);
    for k in 0..500 {
        let u = [0.5 * (k as f64 * 0.01).sin(), 0.2];
        let out = m.plant_step(u).unwrap();
        let [p, q, id, iq] = out.clean;
        let (vd, vq) = grid.terminal_voltage(m.time(), id, iq);
        assert_eq!((p, q), dq_power(vd, vq, id, iq));
        assert_eq!(p, vd * id + vq * iq);
        assert_ne!(out.measured, out.clean);
    }
}

#[test]
fn saturation_bounds_the_realized_current() {
    let nonlin = NonlinearitySpec { current_saturation: Some(0.25), deadzone: None };
    let mut m =
        PlantModel::first_order_lag(DEFAULT_THETA, DEFAULT_SUBSTEP_DT, DEFAULT_SUBSTEPS, GridSpec::default(), nonlin, [0.0; 4])
            .unwrap();
    for _ in 0..1000 {
        let [_, _, id, iq] = m.plant_step([0.6, -0.4]).unwrap().clean;
        assert!((id * id + iq * iq).sqrt() <= 0.25 + 1e-12);
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let run = |seed: u64| {
        let mut m = plant(GridSpec::default(), [0.05; 4]);
        let spec = ExcitationSpec { amplitude: 0.1, length: 200, channels: 2 };
        let data = collect_training_data(&mut m, &spec, 200, seed, None).unwrap();
        let mut fb = ProportionalFeedback::inverter(0.5);
        let sched = ReferenceSchedule::new(vec![(0.0, 0.2, 0.1)]).unwrap();
        let cl = run_closed_loop(&mut m, &mut fb, &sched, 0.3, seed).unwrap();
        (data, cl.telemetry)
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3).0, run(4).0);
}
