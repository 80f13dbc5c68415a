//! dq-frame simulation of a current-controlled grid-following inverter.
//!
//! The inner current loop is a discrete LTI system at the plant rate (a
//! first-order lag by default) that tracks the current references
//! `(i_d*, i_q*)`. Power is computed from the realized current and the
//! voltage at the point of connection, which is either a fixed bus or a
//! Thevenin source behind `R + jX` with an optional slow voltage drift.
//! The controller runs once every `substeps_per_tick` plant steps.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::controller::{dq_power, Controller, ReferenceSchedule, TickInfo};
use crate::error::{Result, TpcError};
use crate::hankel::{generate_excitation, ExcitationSpec, SignalLayout, Trajectory};
use crate::solver::SolveStatus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridMode {
    #[default]
    InfiniteBus,
    Thevenin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub mode: GridMode,
    pub v_d: f64,
    pub v_q: f64,
    pub frequency: f64,
    /// Thevenin resistance and reactance (p.u.).
    pub r: f64,
    pub x: f64,
    /// Relative amplitude of the sinusoidal source-voltage drift.
    pub drift_amplitude: f64,
    /// Drift period in seconds; no drift when not positive.
    pub drift_period: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            mode: GridMode::InfiniteBus,
            v_d: 1.0,
            v_q: 0.0,
            frequency: 50.0,
            r: 0.0,
            x: 0.0,
            drift_amplitude: 0.0,
            drift_period: 0.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.v_d, self.v_q, self.frequency, self.r, self.x, self.drift_amplitude, self.drift_period]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(TpcError::Config("grid parameters must be finite".into()));
        }
        if !(self.v_d * self.v_d + self.v_q * self.v_q > 0.0) {
            return Err(TpcError::Config("grid voltage must be nonzero".into()));
        }
        if self.drift_amplitude.abs() >= 1.0 {
            return Err(TpcError::Config("drift amplitude must be below 1".into()));
        }
        Ok(())
    }

    /// Source voltage at time `t`.
    pub fn source_voltage(&self, t: f64) -> (f64, f64) {
        let scale = if self.drift_period > 0.0 && self.drift_amplitude != 0.0 {
            1.0 + self.drift_amplitude * (2.0 * PI * t / self.drift_period).sin()
        } else {
            1.0
        };
        (self.v_d * scale, self.v_q * scale)
    }

    /// Voltage at the converter terminals for injected current `(i_d, i_q)`.
    pub fn terminal_voltage(&self, t: f64, i_d: f64, i_q: f64) -> (f64, f64) {
        let (vd, vq) = self.source_voltage(t);
        match self.mode {
            GridMode::InfiniteBus => (vd, vq),
            GridMode::Thevenin => (vd + self.r * i_d - self.x * i_q, vq + self.r * i_q + self.x * i_d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NonlinearitySpec {
    /// Hard limit on the realized current magnitude.
    pub current_saturation: Option<f64>,
    /// Reference components smaller than this in magnitude are not tracked.
    pub deadzone: Option<f64>,
}

impl NonlinearitySpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("current saturation", self.current_saturation), ("deadzone", self.deadzone)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(TpcError::Config(format!("{name} must be positive")));
                }
            }
        }
        Ok(())
    }
}

/// Plant outputs `[P, Q, i_d, i_q]` before and after measurement noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantOutput {
    pub clean: [f64; 4],
    pub measured: [f64; 4],
}

/// Inner current loop `x⁺ = A x + B u`, `i = C x + D u` at the plant rate.
#[derive(Debug, Clone)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub state: DVector<f64>,
    pub grid: GridSpec,
    pub nonlin: NonlinearitySpec,
    /// Measurement noise standard deviation for `[P, Q, i_d, i_q]`.
    pub noise_std: [f64; 4],
    pub substep_dt: f64,
    pub substeps_per_tick: usize,
    time: f64,
    rng: ChaCha8Rng,
    noise: [Option<Normal<f64>>; 4],
    next_state: DVector<f64>,
}

/// Default inner-loop time constant (s).
pub const DEFAULT_THETA: f64 = 2e-3;
/// Default plant step (s), i.e. 5 kHz.
pub const DEFAULT_SUBSTEP_DT: f64 = 2e-4;
/// Default plant steps per controller tick (100 Hz control).
pub const DEFAULT_SUBSTEPS: usize = 50;

impl PlantModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        grid: GridSpec,
        nonlin: NonlinearitySpec,
        noise_std: [f64; 4],
        substep_dt: f64,
        substeps_per_tick: usize,
    ) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.shape() != (n, 2) || c.shape() != (2, n) || d.shape() != (2, 2) {
            return Err(TpcError::Dimension(
                "plant needs square A, B of n×2, C of 2×n and D of 2×2".into(),
            ));
        }
        let radius = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        if !(radius < 1.0) {
            return Err(TpcError::Config(format!("plant is not stable: spectral radius {radius:.6}")));
        }
        grid.validate()?;
        nonlin.validate()?;
        if noise_std.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(TpcError::Config("noise standard deviations must be nonnegative".into()));
        }
        if !(substep_dt > 0.0) || substeps_per_tick == 0 {
            return Err(TpcError::Config("plant step and substep count must be positive".into()));
        }
        let mut model = PlantModel {
            state: DVector::zeros(n),
            next_state: DVector::zeros(n),
            a,
            b,
            c,
            d,
            grid,
            nonlin,
            noise_std,
            substep_dt,
            substeps_per_tick,
            time: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
            noise: [None; 4],
        };
        model.reset(0);
        Ok(model)
    }

    /// First-order lag `i⁺ = α i + (1 − α) i*`, `α = exp(−dt/θ)`, per axis.
    pub fn first_order_lag(
        theta: f64,
        substep_dt: f64,
        substeps_per_tick: usize,
        grid: GridSpec,
        nonlin: NonlinearitySpec,
        noise_std: [f64; 4],
    ) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(TpcError::Config("time constant must be positive".into()));
        }
        let alpha = (-substep_dt / theta).exp();
        PlantModel::new(
            DMatrix::identity(2, 2) * alpha,
            DMatrix::identity(2, 2) * (1.0 - alpha),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            grid,
            nonlin,
            noise_std,
            substep_dt,
            substeps_per_tick,
        )
    }

    /// Default 2 ms lag at 5 kHz on an infinite bus, no noise.
    pub fn default_inverter() -> Self {
        PlantModel::first_order_lag(
            DEFAULT_THETA,
            DEFAULT_SUBSTEP_DT,
            DEFAULT_SUBSTEPS,
            GridSpec::default(),
            NonlinearitySpec::default(),
            [0.0; 4],
        )
        .expect("default plant is valid")
    }

    pub fn tick_dt(&self) -> f64 {
        self.substep_dt * self.substeps_per_tick as f64
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Zero state, zero time, noise stream restarted from `seed`.
    pub fn reset(&mut self, seed: u64) {
        self.state.fill(0.0);
        self.time = 0.0;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.rng.set_stream(1);
        for (slot, &std) in self.noise.iter_mut().zip(&self.noise_std) {
            *slot = if std > 0.0 { Normal::new(0.0, std).ok() } else { None };
        }
    }

    fn shaped_reference(&self, u: &[f64; 2]) -> [f64; 2] {
        let mut r = *u;
        if let Some(dz) = self.nonlin.deadzone {
            for v in &mut r {
                if v.abs() < dz {
                    *v = 0.0;
                }
            }
        }
        r
    }

    fn realized_current(&self, u: &[f64; 2]) -> [f64; 2] {
        let mut i = [0.0; 2];
        for (r, out) in i.iter_mut().enumerate() {
            *out = (0..self.state.len()).map(|j| self.c[(r, j)] * self.state[j]).sum::<f64>()
                + self.d[(r, 0)] * u[0]
                + self.d[(r, 1)] * u[1];
        }
        if let Some(limit) = self.nonlin.current_saturation {
            let mag = (i[0] * i[0] + i[1] * i[1]).sqrt();
            if mag > limit {
                i[0] *= limit / mag;
                i[1] *= limit / mag;
            }
        }
        i
    }

    /// Outputs at the current time for reference `u` (which only matters
    /// through `D`), without advancing.
    pub fn output(&mut self, u: [f64; 2]) -> PlantOutput {
        let r = self.shaped_reference(&u);
        let i = self.realized_current(&r);
        let (vd, vq) = self.grid.terminal_voltage(self.time, i[0], i[1]);
        let (p, q) = dq_power(vd, vq, i[0], i[1]);
        let clean = [p, q, i[0], i[1]];
        let mut measured = clean;
        for (k, dist) in self.noise.iter().enumerate() {
            if let Some(dist) = dist {
                measured[k] += dist.sample(&mut self.rng);
            }
        }
        PlantOutput { clean, measured }
    }

    /// Advances one plant step under reference `u` and returns the outputs
    /// at the new time.
    pub fn plant_step(&mut self, u: [f64; 2]) -> Result<PlantOutput> {
        if !u[0].is_finite() || !u[1].is_finite() {
            return Err(TpcError::Data("non-finite current reference".into()));
        }
        let r = self.shaped_reference(&u);
        let n = self.state.len();
        for i in 0..n {
            let mut v = self.b[(i, 0)] * r[0] + self.b[(i, 1)] * r[1];
            for j in 0..n {
                v += self.a[(i, j)] * self.state[j];
            }
            self.next_state[i] = v;
        }
        std::mem::swap(&mut self.state, &mut self.next_state);
        self.time += self.substep_dt;
        Ok(self.output(u))
    }
}

/// One controller tick of a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub tick: usize,
    pub time: f64,
    pub p_ref: f64,
    pub q_ref: f64,
    /// Measured `[P, Q, i_d, i_q]` handed to the controller.
    pub y_meas: [f64; 4],
    /// Noise-free outputs at the same instant.
    pub y_clean: [f64; 4],
    /// Input applied from this tick to the next.
    pub u: [f64; 2],
    /// Controller prediction of the next tick's outputs.
    pub y_hat: [f64; 4],
    pub status: Option<SolveStatus>,
    pub iterations: usize,
    pub degraded: bool,
    /// Largest realized current magnitude over the following plant steps.
    pub max_current: f64,
}

/// Noise-free plant-rate sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubstepSample {
    pub time: f64,
    pub y: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    /// Tick-rate data: applied inputs and measured outputs.
    pub trajectory: Trajectory,
    pub telemetry: Vec<TickRecord>,
    pub substeps: Vec<SubstepSample>,
    /// Per-tick controller solve times (s); kept apart from the telemetry
    /// so that the telemetry is reproducible bit for bit.
    pub solve_times: Vec<f64>,
}

impl ClosedLoopRun {
    pub fn degraded_ticks(&self) -> usize {
        self.telemetry.iter().filter(|r| r.degraded).count()
    }
}

fn to4(v: &[f64]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (o, x) in out.iter_mut().zip(v) {
        *o = *x;
    }
    out
}

/// Lock-step closed loop: at every tick the controller sees `y(t)`, the
/// plant then runs `substeps_per_tick` steps under the input computed at the
/// previous tick (plus `excitation`, if given), and the controller's new
/// input takes effect from the next tick. The plant is reset with `seed`.
pub fn run_closed_loop_with_excitation(
    model: &mut PlantModel,
    controller: &mut dyn Controller,
    schedule: &ReferenceSchedule,
    duration: f64,
    seed: u64,
    excitation: Option<&DMatrix<f64>>,
) -> Result<ClosedLoopRun> {
    let layout = controller.layout().clone();
    if layout.q() != 4 || layout.m() != 2 {
        return Err(TpcError::Dimension(format!(
            "plant has 4 outputs and 2 inputs, controller expects {} and {}",
            layout.q(),
            layout.m()
        )));
    }
    schedule.validate()?;
    if !(duration >= 0.0) {
        return Err(TpcError::Config("duration must be nonnegative".into()));
    }
    let dt = model.tick_dt();
    let ticks = (duration / dt + 1e-9).floor() as usize;
    if let Some(e) = excitation {
        if e.nrows() != 2 || e.ncols() < ticks {
            return Err(TpcError::Dimension(format!(
                "excitation must be 2×{ticks}, got {}×{}",
                e.nrows(),
                e.ncols()
            )));
        }
    }
    model.reset(seed);
    controller.reset();

    let mut u_cols = DMatrix::zeros(2, ticks);
    let mut y_cols = DMatrix::zeros(4, ticks);
    let mut telemetry = Vec::with_capacity(ticks);
    let mut substeps = Vec::with_capacity(ticks * model.substeps_per_tick);
    let mut solve_times = Vec::with_capacity(ticks);
    let mut y_ref = [0.0; 4];
    let mut u_ref = [0.0; 2];
    let mut u_ctrl = [0.0; 2];
    u_ctrl.copy_from_slice(controller.input());
    let mut out = model.output(u_ctrl);

    for k in 0..ticks {
        let t = k as f64 * dt;
        let mut u = u_ctrl;
        if let Some(e) = excitation {
            u[0] += e[(0, k)];
            u[1] += e[(1, k)];
        }
        controller.set_applied_input(&u)?;
        schedule.fill_output_reference(t, &layout, &mut y_ref);
        schedule.fill_input_reference(&mut u_ref);
        let info: TickInfo = controller.control_step(&out.measured, &y_ref, &u_ref)?;
        u_ctrl.copy_from_slice(controller.input());
        let (p_ref, q_ref) = schedule.power_at(t);
        let mut record = TickRecord {
            tick: k,
            time: t,
            p_ref,
            q_ref,
            y_meas: out.measured,
            y_clean: out.clean,
            u,
            y_hat: to4(controller.predicted_output()),
            status: info.status,
            iterations: info.iterations,
            degraded: info.degraded,
            max_current: 0.0,
        };
        u_cols.set_column(k, &DVector::from_column_slice(&u));
        y_cols.set_column(k, &DVector::from_column_slice(&out.measured));
        solve_times.push(info.solve_time);
        let mut max_current: f64 = 0.0;
        for _ in 0..model.substeps_per_tick {
            out = model.plant_step(u)?;
            max_current = max_current.max(out.clean[2].hypot(out.clean[3]));
            substeps.push(SubstepSample { time: model.time(), y: out.clean });
        }
        record.max_current = max_current;
        telemetry.push(record);
    }
    let trajectory = Trajectory { dt, t0: 0, u: u_cols, y: y_cols, layout };
    Ok(ClosedLoopRun { trajectory, telemetry, substeps, solve_times })
}

pub fn run_closed_loop(
    model: &mut PlantModel,
    controller: &mut dyn Controller,
    schedule: &ReferenceSchedule,
    duration: f64,
    seed: u64,
) -> Result<ClosedLoopRun> {
    run_closed_loop_with_excitation(model, controller, schedule, duration, seed, None)
}

/// Training data of `length` ticks. Open loop applies the excitation as the
/// current reference; closed loop adds it to the inputs of a running
/// controller tracking `schedule`. Excitation and measurement noise use
/// separate streams derived from `seed`.
pub fn collect_training_data(
    model: &mut PlantModel,
    excitation: &ExcitationSpec,
    length: usize,
    seed: u64,
    closed_loop: Option<(&mut dyn Controller, &ReferenceSchedule)>,
) -> Result<Trajectory> {
    if length == 0 {
        return Err(TpcError::Config("training length must be positive".into()));
    }
    let spec = ExcitationSpec { length, channels: 2, ..*excitation };
    let e = generate_excitation(&spec, seed);
    let dt = model.tick_dt();
    match closed_loop {
        Some((controller, schedule)) => {
            let duration = length as f64 * dt;
            let run = run_closed_loop_with_excitation(model, controller, schedule, duration, seed, Some(&e))?;
            Ok(run.trajectory)
        }
        None => {
            model.reset(seed);
            let mut y = DMatrix::zeros(4, length);
            let mut out = model.output([0.0; 2]);
            for k in 0..length {
                y.set_column(k, &DVector::from_column_slice(&out.measured));
                let u = [e[(0, k)], e[(1, k)]];
                for _ in 0..model.substeps_per_tick {
                    out = model.plant_step(u)?;
                }
            }
            Trajectory::new(dt, e, y, SignalLayout::inverter())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_keeps_zero_output() {
        let mut plant = PlantModel::default_inverter();
        for _ in 0..100 {
            assert_eq!(plant.plant_step([0.0, 0.0]).unwrap().clean, [0.0; 4]);
        }
    }

    #[test]
    fn constant_reference_settles() {
        let mut plant = PlantModel::default_inverter();
        let mut out = plant.output([0.0; 2]);
        for _ in 0..500 {
            out = plant.plant_step([0.3, 0.0]).unwrap();
        }
        for (got, want) in out.clean.iter().zip([0.3, 0.0, 0.3, 0.0]) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn saturation_clamps_magnitude() {
        let nl = NonlinearitySpec { current_saturation: Some(0.2), deadzone: None };
        let mut plant =
            PlantModel::first_order_lag(DEFAULT_THETA, DEFAULT_SUBSTEP_DT, 50, GridSpec::default(), nl, [0.0; 4])
                .unwrap();
        let mut out = plant.output([0.0; 2]);
        for _ in 0..500 {
            out = plant.plant_step([0.3, 0.0]).unwrap();
        }
        assert!((out.clean[2].hypot(out.clean[3]) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn deadzone_ignores_small_references() {
        let nl = NonlinearitySpec { current_saturation: None, deadzone: Some(0.05) };
        let mut plant =
            PlantModel::first_order_lag(DEFAULT_THETA, DEFAULT_SUBSTEP_DT, 50, GridSpec::default(), nl, [0.0; 4])
                .unwrap();
        let mut out = plant.output([0.0; 2]);
        for _ in 0..500 {
            out = plant.plant_step([0.3, 0.02]).unwrap();
        }
        assert!(out.clean[3].abs() < 1e-15 && (out.clean[2] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn thevenin_power_uses_terminal_voltage() {
        let grid = GridSpec { mode: GridMode::Thevenin, r: 0.01, x: 0.02, ..GridSpec::default() };
        let (vd, vq) = grid.terminal_voltage(0.0, 0.5, 0.1);
        assert!((vd - (1.0 + 0.005 - 0.002)).abs() < 1e-15);
        assert!((vq - (0.001 + 0.01)).abs() < 1e-15);
    }

    #[test]
    fn unstable_plant_is_rejected() {
        let r = PlantModel::new(
            DMatrix::identity(2, 2) * 1.01,
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            GridSpec::default(),
            NonlinearitySpec::default(),
            [0.0; 4],
            1e-4,
            10,
        );
        assert!(matches!(r, Err(TpcError::Config(_))));
    }

    #[test]
    fn zero_excitation_open_loop_is_all_zero() {
        let mut plant = PlantModel::default_inverter();
        let spec = ExcitationSpec { amplitude: 0.0, length: 50, channels: 2 };
        let traj = collect_training_data(&mut plant, &spec, 50, 1, None).unwrap();
        assert!(traj.u.iter().chain(traj.y.iter()).all(|v| *v == 0.0));
    }
}
