//! Receding-horizon controller built on an estimated multistep predictor.
//!
//! Each tick minimizes
//!
//! ```text
//! ½‖Ĥ_p z_p + Ĥ_u u_f − y_r‖²_Ly + ½‖u_f − u_r‖²_Lu + ½·w‖u_f − K z_p‖²
//! ```
//!
//! over the planned inputs `u_f`, optionally subject to an input box and a
//! bound on the predicted current magnitude at every future step. The
//! quadratic term does not depend on the lead-in, so it is assembled once;
//! per tick only the linear term and the cone offsets change.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TpcError};
use crate::hankel::SignalLayout;
use crate::predictor::MultistepPredictor;
use crate::solver::{
    BoxBounds, ConstraintSet, QuadraticObjective, SocConstraint, SocpSolver, SolveStatus, SolverSettings,
};

/// `P = v_d i_d + v_q i_q`, `Q = v_q i_d − v_d i_q` (per-unit, amplitude-invariant).
pub fn dq_power(v_d: f64, v_q: f64, i_d: f64, i_q: f64) -> (f64, f64) {
    (v_d * i_d + v_q * i_q, v_q * i_d - v_d * i_q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RegularizationKind {
    #[default]
    None,
    InputQuadratic,
    LeadinCoupled,
}

/// Extra cost `w‖u_f − K z_p‖²`; `K = 0` for the input-quadratic form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegularizationConfig {
    pub kind: RegularizationKind,
    pub weight: f64,
    /// `mτ × (q+m)ρ`; required for `LeadinCoupled`.
    pub coupling: Option<DMatrix<f64>>,
}

impl RegularizationConfig {
    fn active_weight(&self) -> f64 {
        match self.kind {
            RegularizationKind::None => 0.0,
            _ => self.weight,
        }
    }
}

/// Per-channel input bounds, replicated over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpcConfig {
    pub rho: usize,
    pub tau: usize,
    /// Length `q`, replicated over the horizon.
    pub ly_weights: Vec<f64>,
    /// Length `m`, replicated over the horizon.
    pub lu_weights: Vec<f64>,
    pub reg: RegularizationConfig,
    pub input_box: Option<InputBox>,
    /// Bound on `‖(i_d, i_q)‖` of every predicted step.
    pub current_limit: Option<f64>,
    /// Input issued while the lead-in buffer is filling.
    pub safe_input: Vec<f64>,
    pub solver: SolverSettings,
}

impl TpcConfig {
    /// Horizons 6/6, tracking weight 4.5e5 on P and Q, 1e-3 on both inputs.
    pub fn inverter_default() -> Self {
        TpcConfig {
            rho: 6,
            tau: 6,
            ly_weights: vec![4.5e5, 4.5e5, 0.0, 0.0],
            lu_weights: vec![1e-3, 1e-3],
            reg: RegularizationConfig::default(),
            input_box: None,
            current_limit: None,
            safe_input: vec![0.0, 0.0],
            solver: SolverSettings::default(),
        }
    }

    pub fn validate(&self, layout: &SignalLayout) -> Result<()> {
        let (q, m) = (layout.q(), layout.m());
        let cfg = |msg: String| Err(TpcError::Config(msg));
        if self.rho == 0 || self.tau == 0 {
            return cfg("rho and tau must be positive".into());
        }
        if self.ly_weights.len() != q || self.lu_weights.len() != m {
            return cfg(format!(
                "expected {q} output weights and {m} input weights, got {} and {}",
                self.ly_weights.len(),
                self.lu_weights.len()
            ));
        }
        if self.ly_weights.iter().chain(&self.lu_weights).any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return cfg("weights must be finite and nonnegative".into());
        }
        if self.ly_weights.iter().chain(&self.lu_weights).all(|w| *w == 0.0) {
            return cfg("at least one output or input weight must be positive".into());
        }
        if self.safe_input.len() != m {
            return cfg(format!("safe input must have {m} entries"));
        }
        if let Some(bx) = &self.input_box {
            if bx.lower.len() != m || bx.upper.len() != m {
                return cfg(format!("input box must have {m} lower and upper entries"));
            }
            if bx.lower.iter().zip(&bx.upper).any(|(l, u)| !(l <= u)) {
                return cfg("input box lower bound exceeds upper bound".into());
            }
        }
        if let Some(limit) = self.current_limit {
            if !(limit > 0.0) {
                return cfg("current limit must be positive".into());
            }
            if layout.current_indices().is_none() {
                return cfg("current limit requires a layout with current channels".into());
            }
        }
        let reg = &self.reg;
        if !(reg.weight >= 0.0) || !reg.weight.is_finite() {
            return cfg("regularization weight must be finite and nonnegative".into());
        }
        if reg.kind == RegularizationKind::LeadinCoupled {
            match &reg.coupling {
                Some(k) if k.shape() == (m * self.tau, (q + m) * self.rho) => {}
                Some(k) => {
                    return cfg(format!(
                        "coupling matrix is {}x{}, expected {}x{}",
                        k.nrows(),
                        k.ncols(),
                        m * self.tau,
                        (q + m) * self.rho
                    ))
                }
                None => return cfg("lead-in coupled regularization needs a coupling matrix".into()),
            }
        }
        Ok(())
    }
}

/// Piecewise-constant power references.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSchedule {
    /// `(time [s], P_r, Q_r)`, strictly increasing in time.
    pub breakpoints: Vec<(f64, f64, f64)>,
    /// Input reference, zero when absent.
    pub u_ref: Option<Vec<f64>>,
}

impl ReferenceSchedule {
    pub fn new(breakpoints: Vec<(f64, f64, f64)>) -> Result<Self> {
        let s = ReferenceSchedule { breakpoints, u_ref: None };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.breakpoints.is_empty() {
            return Err(TpcError::Config("reference schedule has no breakpoints".into()));
        }
        if self.breakpoints.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(TpcError::Config("reference breakpoint times must be strictly increasing".into()));
        }
        if self.breakpoints.iter().any(|b| !b.0.is_finite() || !b.1.is_finite() || !b.2.is_finite()) {
            return Err(TpcError::Config("reference breakpoints must be finite".into()));
        }
        Ok(())
    }

    /// `(P_r, Q_r)` in force at time `t`; the first breakpoint also covers
    /// earlier times.
    pub fn power_at(&self, t: f64) -> (f64, f64) {
        let mut cur = self.breakpoints[0];
        for &bp in &self.breakpoints {
            if bp.0 <= t {
                cur = bp;
            } else {
                break;
            }
        }
        (cur.1, cur.2)
    }

    /// Writes the output reference for one step into `y_ref` (length `q`):
    /// the power channels get `(P_r, Q_r)`, every other channel zero.
    pub fn fill_output_reference(&self, t: f64, layout: &SignalLayout, y_ref: &mut [f64]) {
        y_ref.fill(0.0);
        let (p, q) = self.power_at(t);
        if let Some(&i) = layout.power_indices.first() {
            y_ref[i] = p;
        }
        if let Some(&i) = layout.power_indices.get(1) {
            y_ref[i] = q;
        }
    }

    pub fn fill_input_reference(&self, u_ref: &mut [f64]) {
        match &self.u_ref {
            Some(v) => u_ref.copy_from_slice(v),
            None => u_ref.fill(0.0),
        }
    }
}

/// Ring buffer of the last `ρ` stacked samples `z = [y; u]`.
#[derive(Debug, Clone)]
pub struct LeadInBuffer {
    data: DMatrix<f64>,
    head: usize,
    count: usize,
}

impl LeadInBuffer {
    pub fn new(block: usize, rho: usize) -> Self {
        LeadInBuffer { data: DMatrix::zeros(block, rho), head: 0, count: 0 }
    }

    pub fn push(&mut self, y: &[f64], u: &[f64]) {
        let q = y.len();
        let mut col = self.data.column_mut(self.head);
        for (i, v) in y.iter().chain(u).enumerate() {
            col[i] = *v;
        }
        debug_assert_eq!(q + u.len(), col.len());
        self.head = (self.head + 1) % self.data.ncols();
        self.count = (self.count + 1).min(self.data.ncols());
    }

    pub fn is_full(&self) -> bool {
        self.count == self.data.ncols()
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn clear(&mut self) {
        self.head = 0;
        self.count = 0;
    }

    /// Writes the samples oldest first into `out`.
    pub fn stacked(&self, out: &mut [f64]) {
        let (block, rho) = (self.data.nrows(), self.data.ncols());
        for b in 0..rho {
            let src = (self.head + b) % rho;
            out[b * block..(b + 1) * block].copy_from_slice(self.data.column(src).as_slice());
        }
    }
}

/// Quadratic part and constraint structure shared by every tick.
struct Template {
    objective: QuadraticObjective,
    constraints: ConstraintSet,
    /// `Ĥ_uᵀ L_y`.
    hu_t_ly: DMatrix<f64>,
    /// Horizon steps carrying a current cone, in the order of `constraints.socs`.
    soc_steps: Vec<usize>,
}

fn build_template(pred: &MultistepPredictor, cfg: &TpcConfig) -> Result<Template> {
    let layout = &pred.layout;
    cfg.validate(layout)?;
    let d = pred.dims;
    if d.rho != cfg.rho || d.tau != cfg.tau {
        return Err(TpcError::Dimension(format!(
            "predictor horizons (rho={}, tau={}) differ from controller config (rho={}, tau={})",
            d.rho, d.tau, cfg.rho, cfg.tau
        )));
    }
    let (q, m, tau) = (d.q, d.m, d.tau);
    let mut hu_t_ly = pred.hu.transpose();
    for k in 0..tau {
        for c in 0..q {
            hu_t_ly.column_mut(k * q + c).scale_mut(cfg.ly_weights[c]);
        }
    }
    let mut p = &hu_t_ly * &pred.hu;
    let w = cfg.reg.active_weight();
    for k in 0..tau {
        for c in 0..m {
            p[(k * m + c, k * m + c)] += cfg.lu_weights[c] + w;
        }
    }
    // Symmetrize exactly so the solver's symmetry check sees rounding-free data.
    let p = (&p + p.transpose()) * 0.5;
    let n = m * tau;
    let objective = QuadraticObjective::new(p, DVector::zeros(n));

    let bounds = cfg.input_box.as_ref().map(|bx| BoxBounds {
        lower: DVector::from_fn(n, |i, _| bx.lower[i % m]),
        upper: DVector::from_fn(n, |i, _| bx.upper[i % m]),
    });
    let mut socs = Vec::new();
    let mut soc_steps = Vec::new();
    if let Some(limit) = cfg.current_limit {
        let (id, iq) = layout.current_indices().expect("validated");
        for k in 0..tau {
            let a = pred.hu.select_rows([k * q + id, k * q + iq].iter());
            // The first predicted step does not depend on the plan; its
            // current is already fixed by the lead-in.
            if a.amax() == 0.0 {
                continue;
            }
            socs.push(SocConstraint { a, b: DVector::zeros(2), radius: limit });
            soc_steps.push(k);
        }
    }
    Ok(Template {
        objective,
        constraints: ConstraintSet { bounds, socs, equality: None },
        hu_t_ly,
        soc_steps,
    })
}

/// Buffers for the lead-in dependent terms.
struct LinearTerms {
    hp_zp: DVector<f64>,
    resid: DVector<f64>,
    k_zp: DVector<f64>,
}

impl LinearTerms {
    fn new(q_tau: usize, m_tau: usize) -> Self {
        LinearTerms { hp_zp: DVector::zeros(q_tau), resid: DVector::zeros(q_tau), k_zp: DVector::zeros(m_tau) }
    }

    /// Fills `c`, the objective constant and the cone offsets for lead-in
    /// `z_p` and per-step references `y_ref` (length q) and `u_ref` (length m).
    fn update(
        &mut self,
        pred: &MultistepPredictor,
        cfg: &TpcConfig,
        tpl: &mut Template,
        z_p: &DVector<f64>,
        y_ref: &[f64],
        u_ref: &[f64],
    ) {
        let d = pred.dims;
        let (q, m, tau) = (d.q, d.m, d.tau);
        self.hp_zp.gemv(1.0, &pred.hp, z_p, 0.0);
        let mut constant = 0.0;
        for k in 0..tau {
            for c in 0..q {
                let r = self.hp_zp[k * q + c] - y_ref[c];
                self.resid[k * q + c] = r;
                constant += 0.5 * cfg.ly_weights[c] * r * r;
            }
        }
        let obj = &mut tpl.objective;
        obj.c.gemv(1.0, &tpl.hu_t_ly, &self.resid, 0.0);
        for k in 0..tau {
            for c in 0..m {
                obj.c[k * m + c] -= cfg.lu_weights[c] * u_ref[c];
                constant += 0.5 * cfg.lu_weights[c] * u_ref[c] * u_ref[c];
            }
        }
        let w = cfg.reg.active_weight();
        if cfg.reg.kind == RegularizationKind::LeadinCoupled && w > 0.0 {
            let kmat = cfg.reg.coupling.as_ref().expect("validated");
            self.k_zp.gemv(1.0, kmat, z_p, 0.0);
            obj.c.axpy(-w, &self.k_zp, 1.0);
            constant += 0.5 * w * self.k_zp.norm_squared();
        }
        obj.constant = constant;
        if let Some((id, iq)) = pred.layout.current_indices() {
            for (soc, &k) in tpl.constraints.socs.iter_mut().zip(&tpl.soc_steps) {
                soc.b[0] = self.hp_zp[k * q + id];
                soc.b[1] = self.hp_zp[k * q + iq];
            }
        }
    }
}

/// Objective and constraints of one receding-horizon problem in `u_f`.
/// `y_ref` holds one step of output references (length q), `u_ref` one step
/// of input references (length m); both are held over the horizon.
pub fn build_tpc_problem(
    pred: &MultistepPredictor,
    z_p: &DVector<f64>,
    y_ref: &[f64],
    u_ref: &[f64],
    cfg: &TpcConfig,
) -> Result<(QuadraticObjective, ConstraintSet)> {
    let d = pred.dims;
    check_lengths(z_p.len(), d.past_len(), "lead-in")?;
    check_lengths(y_ref.len(), d.q, "output reference")?;
    check_lengths(u_ref.len(), d.m, "input reference")?;
    let mut tpl = build_template(pred, cfg)?;
    let mut lin = LinearTerms::new(d.yf_len(), d.uf_len());
    lin.update(pred, cfg, &mut tpl, z_p, y_ref, u_ref);
    Ok((tpl.objective, tpl.constraints))
}

fn check_lengths(got: usize, want: usize, what: &str) -> Result<()> {
    if got != want {
        return Err(TpcError::Dimension(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

/// Per-tick outcome. `status` is `None` while the lead-in is filling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickInfo {
    pub status: Option<SolveStatus>,
    pub iterations: usize,
    pub solve_time: f64,
    pub degraded: bool,
}

impl TickInfo {
    fn lead_in() -> Self {
        TickInfo { status: None, iterations: 0, solve_time: 0.0, degraded: false }
    }
}

/// Common interface of the closed-loop controllers.
///
/// At every tick the controller receives the measurement `y(t)`; the input
/// applied during the current interval was produced at the previous tick.
/// The returned input is applied from the next tick on.
pub trait Controller {
    fn label(&self) -> &str;
    fn layout(&self) -> &SignalLayout;
    fn control_step(&mut self, y_meas: &[f64], y_ref: &[f64], u_ref: &[f64]) -> Result<TickInfo>;
    /// Input computed by the last `control_step`.
    fn input(&self) -> &[f64];
    /// Predicted output for the next tick (zeros when not available).
    fn predicted_output(&self) -> &[f64];
    /// Overrides the input recorded as applied (e.g. with added excitation).
    fn set_applied_input(&mut self, u: &[f64]) -> Result<()>;
    fn reset(&mut self);
}

pub struct TpcController {
    pred: MultistepPredictor,
    cfg: TpcConfig,
    tpl: Template,
    lin: LinearTerms,
    solver: SocpSolver,
    buffer: LeadInBuffer,
    z_p: DVector<f64>,
    u_applied: DVector<f64>,
    u_next: DVector<f64>,
    y_hat: DVector<f64>,
    plan: Vec<f64>,
    warm: Vec<f64>,
    has_plan: bool,
    degraded_ticks: usize,
}

impl TpcController {
    pub fn new(pred: MultistepPredictor, cfg: TpcConfig) -> Result<Self> {
        let tpl = build_template(&pred, &cfg)?;
        let d = pred.dims;
        let solver = SocpSolver::with_shape(d.uf_len(), &tpl.constraints, cfg.solver);
        let safe = DVector::from_column_slice(&cfg.safe_input);
        Ok(TpcController {
            lin: LinearTerms::new(d.yf_len(), d.uf_len()),
            buffer: LeadInBuffer::new(d.block(), d.rho),
            z_p: DVector::zeros(d.past_len()),
            u_applied: safe.clone(),
            u_next: safe,
            y_hat: DVector::zeros(d.q),
            plan: vec![0.0; d.uf_len()],
            warm: vec![0.0; d.uf_len()],
            has_plan: false,
            degraded_ticks: 0,
            solver,
            tpl,
            pred,
            cfg,
        })
    }

    pub fn predictor(&self) -> &MultistepPredictor {
        &self.pred
    }

    pub fn config(&self) -> &TpcConfig {
        &self.cfg
    }

    /// Last optimal input plan `u_f`.
    pub fn plan(&self) -> &[f64] {
        &self.plan
    }

    /// Ticks whose solve did not reach optimality.
    pub fn degraded_ticks(&self) -> usize {
        self.degraded_ticks
    }

    pub fn objective(&self) -> &QuadraticObjective {
        &self.tpl.objective
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.tpl.constraints
    }

    pub fn workspace_bytes(&self) -> usize {
        self.solver.workspace_bytes()
    }
}

impl Controller for TpcController {
    fn label(&self) -> &str {
        "tpc"
    }

    fn layout(&self) -> &SignalLayout {
        &self.pred.layout
    }

    fn control_step(&mut self, y_meas: &[f64], y_ref: &[f64], u_ref: &[f64]) -> Result<TickInfo> {
        let d = self.pred.dims;
        check_lengths(y_meas.len(), d.q, "measurement")?;
        check_lengths(y_ref.len(), d.q, "output reference")?;
        check_lengths(u_ref.len(), d.m, "input reference")?;
        if y_meas.iter().any(|v| !v.is_finite()) {
            return Err(TpcError::Data("non-finite measurement".into()));
        }
        self.buffer.push(y_meas, self.u_applied.as_slice());
        if !self.buffer.is_full() {
            self.u_next.as_mut_slice().copy_from_slice(&self.cfg.safe_input);
            self.u_applied.copy_from(&self.u_next);
            self.y_hat.fill(0.0);
            return Ok(TickInfo::lead_in());
        }
        self.buffer.stacked(self.z_p.as_mut_slice());
        self.lin.update(&self.pred, &self.cfg, &mut self.tpl, &self.z_p, y_ref, u_ref);

        let m = d.m;
        let warm = if self.has_plan {
            let n = self.plan.len();
            self.warm[..n - m].copy_from_slice(&self.plan[m..]);
            self.warm[n - m..].copy_from_slice(&self.plan[n - m..]);
            Some(self.warm.as_slice())
        } else {
            None
        };
        let info = self.solver.solve(&self.tpl.objective, &self.tpl.constraints, warm)?;
        self.plan.copy_from_slice(self.solver.x());
        self.has_plan = true;
        let degraded = info.status != SolveStatus::Optimal;
        if degraded {
            self.degraded_ticks += 1;
        }
        self.u_next.as_mut_slice().copy_from_slice(&self.plan[..m]);
        self.u_applied.copy_from(&self.u_next);
        for c in 0..d.q {
            let mut v = self.lin.hp_zp[c];
            for j in 0..d.uf_len() {
                v += self.pred.hu[(c, j)] * self.plan[j];
            }
            self.y_hat[c] = v;
        }
        Ok(TickInfo {
            status: Some(info.status),
            iterations: info.iterations,
            solve_time: info.solve_time,
            degraded,
        })
    }

    fn input(&self) -> &[f64] {
        self.u_next.as_slice()
    }

    fn predicted_output(&self) -> &[f64] {
        self.y_hat.as_slice()
    }

    fn set_applied_input(&mut self, u: &[f64]) -> Result<()> {
        check_lengths(u.len(), self.pred.dims.m, "applied input")?;
        self.u_applied.as_mut_slice().copy_from_slice(u);
        Ok(())
    }

    fn reset(&mut self) {
        self.buffer.clear();
        self.u_applied.as_mut_slice().copy_from_slice(&self.cfg.safe_input);
        self.u_next.copy_from(&self.u_applied);
        self.has_plan = false;
        self.degraded_ticks = 0;
        self.y_hat.fill(0.0);
    }
}

/// `u = K (y_ref − y)`, used to gather closed-loop training data.
pub struct ProportionalFeedback {
    gain: DMatrix<f64>,
    layout: SignalLayout,
    u: DVector<f64>,
    y_hat: DVector<f64>,
}

impl ProportionalFeedback {
    pub fn new(gain: DMatrix<f64>, layout: SignalLayout) -> Result<Self> {
        if gain.shape() != (layout.m(), layout.q()) {
            return Err(TpcError::Dimension(format!(
                "feedback gain is {}x{}, expected {}x{}",
                gain.nrows(),
                gain.ncols(),
                layout.m(),
                layout.q()
            )));
        }
        let (m, q) = (layout.m(), layout.q());
        Ok(ProportionalFeedback { gain, layout, u: DVector::zeros(m), y_hat: DVector::zeros(q) })
    }

    /// Power-to-current feedback for the inverter layout:
    /// `i_d* = f (P_r − P)`, `i_q* = −f (Q_r − Q)`.
    pub fn inverter(f: f64) -> Self {
        let layout = SignalLayout::inverter();
        let mut gain = DMatrix::zeros(2, 4);
        gain[(0, 0)] = f;
        gain[(1, 1)] = -f;
        ProportionalFeedback::new(gain, layout).expect("consistent shapes")
    }
}

impl Controller for ProportionalFeedback {
    fn label(&self) -> &str {
        "proportional"
    }

    fn layout(&self) -> &SignalLayout {
        &self.layout
    }

    fn control_step(&mut self, y_meas: &[f64], y_ref: &[f64], _u_ref: &[f64]) -> Result<TickInfo> {
        let q = self.layout.q();
        check_lengths(y_meas.len(), q, "measurement")?;
        check_lengths(y_ref.len(), q, "output reference")?;
        for i in 0..self.u.len() {
            self.u[i] = (0..q).map(|j| self.gain[(i, j)] * (y_ref[j] - y_meas[j])).sum();
        }
        Ok(TickInfo { status: Some(SolveStatus::Optimal), iterations: 0, solve_time: 0.0, degraded: false })
    }

    fn input(&self) -> &[f64] {
        self.u.as_slice()
    }

    fn predicted_output(&self) -> &[f64] {
        self.y_hat.as_slice()
    }

    fn set_applied_input(&mut self, u: &[f64]) -> Result<()> {
        check_lengths(u.len(), self.layout.m(), "applied input")
    }

    fn reset(&mut self) {
        self.u.fill(0.0);
    }
}
