//! Behavioral (DeePC) baseline.
//!
//! Decision variables are the trajectory weights `g ∈ R^N` and the planned
//! inputs `u_f`; future outputs `y_f = Y_f g` are substituted out:
//!
//! ```text
//! minimize    ½‖Y_f g − y_r‖²_Ly + ½‖u_f − u_r‖²_Lu + ½γ‖g‖²
//! subject to  Z_p g = z_p,   U_f g = u_f,   input box,   ‖(i_d, i_q)(Y_f g)‖ ≤ i_max
//! ```
//!
//! The lead-in rows of the equality are compressed onto the numerical range
//! of `Z_p` once, so rank-deficient (e.g. noise-free) data and `N` smaller
//! than the lead-in dimension are handled; a lead-in outside that range is
//! reported as infeasible.

use nalgebra::{DMatrix, DVector};

use crate::controller::{Controller, InputBox, LeadInBuffer, TickInfo};
use crate::error::{Result, TpcError};
use crate::hankel::{split_hankel, HankelStack, SignalLayout};
use crate::predictor::{Dims, MultistepPredictor};
use crate::solver::{
    BoxBounds, ConstraintSet, LinearEquality, QuadraticObjective, SocConstraint, SocpSolver, SolveStatus,
    SolverSettings,
};

/// Relative eigenvalue cutoff of `Z_p Z_pᵀ` when compressing the lead-in rows.
const RANGE_CUTOFF: f64 = 1e-12;
/// Relative lead-in residual outside the data range tolerated as consistent.
const LEADIN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DeepcSettings {
    /// Weight of `½γ‖g‖²`.
    pub gamma: f64,
    pub ly_weights: Vec<f64>,
    pub lu_weights: Vec<f64>,
    pub input_box: Option<InputBox>,
    pub current_limit: Option<f64>,
    pub safe_input: Vec<f64>,
    pub solver: SolverSettings,
}

impl DeepcSettings {
    pub fn inverter_default() -> Self {
        DeepcSettings {
            gamma: 1e-3,
            ly_weights: vec![4.5e5, 4.5e5, 0.0, 0.0],
            lu_weights: vec![1e-3, 1e-3],
            input_box: None,
            current_limit: None,
            safe_input: vec![0.0, 0.0],
            solver: SolverSettings::default(),
        }
    }
}

/// Data blocks and the fixed parts of the optimization problem.
#[derive(Debug, Clone)]
pub struct DeepcProblem {
    pub z_past: DMatrix<f64>,
    pub u_future: DMatrix<f64>,
    pub y_future: DMatrix<f64>,
    pub dims: Dims,
    pub layout: SignalLayout,
    pub settings: DeepcSettings,
    /// Orthonormal basis (columns) of the numerical range of `Z_p`.
    range_basis: DMatrix<f64>,
    objective: QuadraticObjective,
    constraints: ConstraintSet,
    /// `Y_fᵀ L_y`.
    yf_t_ly: DMatrix<f64>,
}

impl DeepcProblem {
    pub fn new(h: &HankelStack, settings: DeepcSettings) -> Result<Self> {
        let dims = Dims { m: h.m(), q: h.q(), rho: h.rho, tau: h.tau };
        let layout = h.layout.clone();
        if settings.ly_weights.len() != dims.q || settings.lu_weights.len() != dims.m {
            return Err(TpcError::Config("weight lengths do not match the data layout".into()));
        }
        if settings.safe_input.len() != dims.m {
            return Err(TpcError::Config("safe input length does not match the data layout".into()));
        }
        if !(settings.gamma >= 0.0) {
            return Err(TpcError::Config("gamma must be nonnegative".into()));
        }
        if settings.current_limit.is_some() && layout.current_indices().is_none() {
            return Err(TpcError::Config("current limit requires a layout with current channels".into()));
        }
        let (z_past, u_future, y_future) = split_hankel(h)?;
        let n_cols = h.n_cols();
        let (m, q, tau) = (dims.m, dims.q, dims.tau);
        let n = n_cols + m * tau;

        let gram = &z_past * z_past.transpose();
        let eig = gram.symmetric_eigen();
        let top = eig.eigenvalues.amax();
        let keep: Vec<usize> = (0..eig.eigenvalues.len())
            .filter(|&i| eig.eigenvalues[i] > RANGE_CUTOFF * top && top > 0.0)
            .collect();
        let range_basis = eig.eigenvectors.select_columns(keep.iter());
        let r = range_basis.ncols();

        let mut yf_t_ly = y_future.transpose();
        for k in 0..tau {
            for c in 0..q {
                yf_t_ly.column_mut(k * q + c).scale_mut(settings.ly_weights[c]);
            }
        }
        let mut p = DMatrix::zeros(n, n);
        let pg = &yf_t_ly * &y_future;
        p.view_mut((0, 0), (n_cols, n_cols)).copy_from(&((&pg + pg.transpose()) * 0.5));
        for i in 0..n_cols {
            p[(i, i)] += settings.gamma;
        }
        for k in 0..tau {
            for c in 0..m {
                p[(n_cols + k * m + c, n_cols + k * m + c)] = settings.lu_weights[c];
            }
        }
        let objective = QuadraticObjective::new(p, DVector::zeros(n));

        let mut a = DMatrix::zeros(r + m * tau, n);
        a.view_mut((0, 0), (r, n_cols)).copy_from(&(range_basis.transpose() * &z_past));
        a.view_mut((r, 0), (m * tau, n_cols)).copy_from(&u_future);
        for i in 0..m * tau {
            a[(r + i, n_cols + i)] = -1.0;
        }
        let equality = LinearEquality { a, b: DVector::zeros(r + m * tau) };

        let bounds = settings.input_box.as_ref().map(|bx| {
            let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
            let mut upper = DVector::from_element(n, f64::INFINITY);
            for i in 0..m * tau {
                lower[n_cols + i] = bx.lower[i % m];
                upper[n_cols + i] = bx.upper[i % m];
            }
            BoxBounds { lower, upper }
        });
        let mut socs = Vec::new();
        if let (Some(limit), Some((id, iq))) = (settings.current_limit, layout.current_indices()) {
            // Step one is fixed by the lead-in, as for the predictive controller.
            for k in 1..tau {
                let mut ak = DMatrix::zeros(2, n);
                ak.view_mut((0, 0), (1, n_cols)).copy_from(&y_future.row(k * q + id));
                ak.view_mut((1, 0), (1, n_cols)).copy_from(&y_future.row(k * q + iq));
                socs.push(SocConstraint { a: ak, b: DVector::zeros(2), radius: limit });
            }
        }
        Ok(DeepcProblem {
            z_past,
            u_future,
            y_future,
            dims,
            layout,
            settings,
            range_basis,
            objective,
            constraints: ConstraintSet { bounds, socs, equality: Some(equality) },
            yf_t_ly,
        })
    }

    pub fn n_cols(&self) -> usize {
        self.z_past.ncols()
    }

    /// Decision dimension `N + mτ`.
    pub fn decision_dim(&self) -> usize {
        self.objective.dim()
    }

    /// Bytes held by the data blocks and the problem matrices.
    pub fn data_bytes(&self) -> usize {
        let eq = self.constraints.equality.as_ref().map_or(0, |e| e.a.len() + e.b.len());
        let socs: usize = self.constraints.socs.iter().map(|s| s.a.len() + s.b.len()).sum();
        let bounds = self.constraints.bounds.as_ref().map_or(0, |b| 2 * b.lower.len());
        8 * (self.z_past.len()
            + self.u_future.len()
            + self.y_future.len()
            + self.range_basis.len()
            + self.yf_t_ly.len()
            + self.objective.p.len()
            + self.objective.c.len()
            + eq
            + socs
            + bounds)
    }

    /// Writes the lead-in and reference dependent terms.
    fn update(&mut self, z_p: &DVector<f64>, y_ref: &[f64], u_ref: &[f64]) -> Result<()> {
        let (m, q, tau) = (self.dims.m, self.dims.q, self.dims.tau);
        let n_cols = self.n_cols();
        let r = self.range_basis.ncols();
        let eq = self.constraints.equality.as_mut().expect("always present");
        let mut outside = z_p.norm_squared();
        for i in 0..r {
            let v = self.range_basis.column(i).dot(z_p);
            eq.b[i] = v;
            outside -= v * v;
        }
        if outside.max(0.0).sqrt() > LEADIN_TOL * z_p.norm().max(1.0) {
            return Err(TpcError::Numerical(format!(
                "lead-in lies outside the span of the data (residual {:.3e})",
                outside.max(0.0).sqrt()
            )));
        }
        let obj = &mut self.objective;
        let mut constant = 0.0;
        for c in 0..q {
            constant += 0.5 * tau as f64 * self.settings.ly_weights[c] * y_ref[c] * y_ref[c];
        }
        for i in 0..n_cols {
            let mut v = 0.0;
            for k in 0..tau {
                for c in 0..q {
                    v += self.yf_t_ly[(i, k * q + c)] * y_ref[c];
                }
            }
            obj.c[i] = -v;
        }
        for k in 0..tau {
            for c in 0..m {
                obj.c[n_cols + k * m + c] = -self.settings.lu_weights[c] * u_ref[c];
                constant += 0.5 * self.settings.lu_weights[c] * u_ref[c] * u_ref[c];
            }
        }
        obj.constant = constant;
        Ok(())
    }

    /// Equality residual `‖[Z_p; U_f; Y_f] g − [z_p; u_f; Y_f g]‖` reduces to
    /// the lead-in and input parts.
    pub fn equality_residual(&self, z_p: &DVector<f64>, g: &DVector<f64>, u_f: &DVector<f64>) -> f64 {
        let rz = &self.z_past * g - z_p;
        let ru = &self.u_future * g - u_f;
        (rz.norm_squared() + ru.norm_squared()).sqrt()
    }
}

/// Solves one DeePC problem from scratch and returns `(g*, u_f*)`. The
/// solver tolerance is taken from `tol`.
pub fn solve_deepc(
    problem: &mut DeepcProblem,
    z_p: &DVector<f64>,
    y_ref: &[f64],
    u_ref: &[f64],
    tol: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = problem.dims;
    if z_p.len() != d.past_len() || y_ref.len() != d.q || u_ref.len() != d.m {
        return Err(TpcError::Dimension("lead-in or reference length mismatch".into()));
    }
    problem.update(z_p, y_ref, u_ref)?;
    let settings = SolverSettings { tol, ..problem.settings.solver };
    let mut solver = SocpSolver::new(settings);
    let info = solver.solve(&problem.objective, &problem.constraints, None)?;
    if info.status == SolveStatus::Infeasible {
        return Err(TpcError::Numerical(format!(
            "DeePC problem infeasible (relaxation {:.3e})",
            info.infeasibility.unwrap_or(f64::NAN)
        )));
    }
    let x = solver.x();
    let n_cols = problem.n_cols();
    Ok((DVector::from_column_slice(&x[..n_cols]), DVector::from_column_slice(&x[n_cols..])))
}

/// The least-squares predictor DeePC implicitly uses as `γ → 0`:
/// `Y_f Wᵀ (W Wᵀ)⁻¹` with `W = [Z_p; U_f]`, split into lead-in and input parts.
/// Unlike the causal estimator it does not enforce causality.
pub fn implied_predictor(h: &HankelStack) -> Result<MultistepPredictor> {
    let dims = Dims { m: h.m(), q: h.q(), rho: h.rho, tau: h.tau };
    let (zp, uf, yf) = split_hankel(h)?;
    let past = zp.nrows();
    let mut w = DMatrix::zeros(past + uf.nrows(), zp.ncols());
    w.view_mut((0, 0), (past, zp.ncols())).copy_from(&zp);
    w.view_mut((past, 0), (uf.nrows(), zp.ncols())).copy_from(&uf);
    let gram = &w * w.transpose();
    let chol = gram
        .cholesky()
        .ok_or_else(|| TpcError::Numerical("data Gram matrix is singular; excitation insufficient".into()))?;
    let coef = chol.solve(&(&w * yf.transpose())).transpose();
    Ok(MultistepPredictor {
        hp: coef.columns(0, past).into_owned(),
        hu: coef.columns(past, uf.nrows()).into_owned(),
        dims,
        layout: h.layout.clone(),
    })
}

/// Closed-form memory estimate in bytes for `N` data columns:
///
/// ```text
/// 8 · [ (p + mτ + qτ)·N                 Hankel blocks
///     + n² + e·n + 2·s·n                objective, equality and cone maps
///     + 2·n² + (l + 3s)·n + e·n + e²    solver KKT, scaled constraints, Schur
///     + 24·(n + l + 3s + e) ]           vectors
/// ```
///
/// with `p = (q+m)ρ`, `n = N + mτ`, `e = p + mτ` equality rows, `s = τ − 1`
/// current cones (0 without a limit) and `l = 2mτ` box rows (0 without a box).
pub fn deepc_memory_estimate(n_cols: usize, dims: &Dims, with_box: bool, with_current_limit: bool) -> usize {
    let p = dims.past_len();
    let mt = dims.uf_len();
    let qt = dims.yf_len();
    let n = n_cols + mt;
    let e = p + mt;
    let s = if with_current_limit { dims.tau.saturating_sub(1) } else { 0 };
    let l = if with_box { 2 * mt } else { 0 };
    let rows = l + 3 * s;
    8 * ((p + mt + qt) * n_cols + n * n + e * n + 2 * s * n + 2 * n * n + rows * n + e * n + e * e + 24 * (n + rows + e))
}

pub struct DeepcController {
    problem: DeepcProblem,
    solver: SocpSolver,
    buffer: LeadInBuffer,
    z_p: DVector<f64>,
    u_applied: DVector<f64>,
    u_next: DVector<f64>,
    y_hat: DVector<f64>,
    warm: Vec<f64>,
    has_plan: bool,
    degraded_ticks: usize,
}

impl DeepcController {
    pub fn new(problem: DeepcProblem) -> Result<Self> {
        let d = problem.dims;
        if problem.decision_dim() > problem.settings.solver.max_dim {
            return Err(TpcError::Dimension(format!(
                "DeePC decision dimension {} exceeds solver cap {}",
                problem.decision_dim(),
                problem.settings.solver.max_dim
            )));
        }
        let solver = SocpSolver::with_shape(problem.decision_dim(), &problem.constraints, problem.settings.solver);
        let safe = DVector::from_column_slice(&problem.settings.safe_input);
        Ok(DeepcController {
            buffer: LeadInBuffer::new(d.block(), d.rho),
            z_p: DVector::zeros(d.past_len()),
            u_applied: safe.clone(),
            u_next: safe,
            y_hat: DVector::zeros(d.q),
            warm: vec![0.0; problem.decision_dim()],
            has_plan: false,
            degraded_ticks: 0,
            solver,
            problem,
        })
    }

    pub fn problem(&self) -> &DeepcProblem {
        &self.problem
    }

    pub fn degraded_ticks(&self) -> usize {
        self.degraded_ticks
    }

    /// Data, problem and solver workspace bytes.
    pub fn memory_bytes(&self) -> usize {
        self.problem.data_bytes() + self.solver.workspace_bytes()
    }
}

impl Controller for DeepcController {
    fn label(&self) -> &str {
        "deepc"
    }

    fn layout(&self) -> &SignalLayout {
        &self.problem.layout
    }

    fn control_step(&mut self, y_meas: &[f64], y_ref: &[f64], u_ref: &[f64]) -> Result<TickInfo> {
        let d = self.problem.dims;
        if y_meas.len() != d.q || y_ref.len() != d.q || u_ref.len() != d.m {
            return Err(TpcError::Dimension("measurement or reference length mismatch".into()));
        }
        self.buffer.push(y_meas, self.u_applied.as_slice());
        if !self.buffer.is_full() {
            self.u_next.as_mut_slice().copy_from_slice(&self.problem.settings.safe_input);
            self.u_applied.copy_from(&self.u_next);
            return Ok(TickInfo { status: None, iterations: 0, solve_time: 0.0, degraded: false });
        }
        self.buffer.stacked(self.z_p.as_mut_slice());
        let n_cols = self.problem.n_cols();
        let m = d.m;
        let (status, iterations, solve_time) = match self.problem.update(&self.z_p, y_ref, u_ref) {
            Ok(()) => {
                let warm = if self.has_plan { Some(self.warm.as_slice()) } else { None };
                let info = self.solver.solve(&self.problem.objective, &self.problem.constraints, warm)?;
                (info.status, info.iterations, info.solve_time)
            }
            Err(TpcError::Numerical(_)) => (SolveStatus::Infeasible, 0, 0.0),
            Err(e) => return Err(e),
        };
        let degraded = status != SolveStatus::Optimal;
        if degraded {
            self.degraded_ticks += 1;
        }
        let x = self.solver.x();
        if x.len() == self.warm.len() {
            self.warm.copy_from_slice(x);
            self.has_plan = true;
            self.u_next.as_mut_slice().copy_from_slice(&x[n_cols..n_cols + m]);
            for c in 0..d.q {
                let row = self.problem.y_future.row(c);
                self.y_hat[c] = (0..n_cols).map(|j| row[j] * x[j]).sum();
            }
        }
        self.u_applied.copy_from(&self.u_next);
        Ok(TickInfo { status: Some(status), iterations, solve_time, degraded })
    }

    fn input(&self) -> &[f64] {
        self.u_next.as_slice()
    }

    fn predicted_output(&self) -> &[f64] {
        self.y_hat.as_slice()
    }

    fn set_applied_input(&mut self, u: &[f64]) -> Result<()> {
        if u.len() != self.problem.dims.m {
            return Err(TpcError::Dimension("applied input length mismatch".into()));
        }
        self.u_applied.as_mut_slice().copy_from_slice(u);
        Ok(())
    }

    fn reset(&mut self) {
        self.buffer.clear();
        self.u_applied.as_mut_slice().copy_from_slice(&self.problem.settings.safe_input);
        self.u_next.copy_from(&self.u_applied);
        self.has_plan = false;
        self.degraded_ticks = 0;
        self.y_hat.fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hankel::{build_hankel, Trajectory};

    #[test]
    fn memory_estimate_is_monotone_with_fixed_overhead() {
        let dims = Dims { m: 2, q: 4, rho: 6, tau: 6 };
        let base = deepc_memory_estimate(0, &dims, false, true);
        assert!(base > 0);
        let mut prev = base;
        for n in [1, 10, 100, 500, 5000] {
            let v = deepc_memory_estimate(n, &dims, false, true);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn single_column_scales_its_future_inputs() {
        // One window: q = 1, m = 1, rho = 1, tau = 1.
        let u = DMatrix::from_row_slice(1, 2, &[0.5, 2.0]);
        let y = DMatrix::from_row_slice(1, 2, &[1.0, 3.0]);
        let traj = Trajectory::new(0.01, u, y, SignalLayout::generic(1, 1)).unwrap();
        let h = build_hankel(&traj, 1, 1).unwrap();
        let settings = DeepcSettings {
            gamma: 1e-6,
            ly_weights: vec![1.0],
            lu_weights: vec![1e-3],
            input_box: None,
            current_limit: None,
            safe_input: vec![0.0],
            solver: SolverSettings::default(),
        };
        let mut problem = DeepcProblem::new(&h, settings).unwrap();
        // Lead-in 3× the column's past block: g pinned, u_f = 3·2.0.
        let zp = DVector::from_column_slice(&[3.0, 1.5]);
        let (g, uf) = solve_deepc(&mut problem, &zp, &[0.0], &[0.0], 1e-8).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-6, "{g}");
        assert!((uf[0] - 6.0).abs() < 1e-6, "{uf}");
    }

    #[test]
    fn lead_in_outside_data_span_is_reported() {
        let u = DMatrix::from_row_slice(1, 2, &[0.5, 2.0]);
        let y = DMatrix::from_row_slice(1, 2, &[1.0, 3.0]);
        let traj = Trajectory::new(0.01, u, y, SignalLayout::generic(1, 1)).unwrap();
        let h = build_hankel(&traj, 1, 1).unwrap();
        let settings = DeepcSettings {
            ly_weights: vec![1.0],
            lu_weights: vec![1e-3],
            safe_input: vec![0.0],
            ..DeepcSettings::inverter_default()
        };
        let mut problem = DeepcProblem::new(&h, settings).unwrap();
        let zp = DVector::from_column_slice(&[1.0, 0.0]);
        assert!(matches!(solve_deepc(&mut problem, &zp, &[0.0], &[0.0], 1e-8), Err(TpcError::Numerical(_))));
    }
}
