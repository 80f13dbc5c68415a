//! Dense primal-dual interior-point solver for small convex programs
//!
//! ```text
//! minimize    ½ xᵀPx + cᵀx + constant
//! subject to  lower ≤ x ≤ upper
//!             ‖A_k x + b_k‖₂ ≤ r_k        k = 1..K
//!             E x = f
//! ```
//!
//! Internally every inequality is written as `Gx + s = h` with the slack `s`
//! in a product of nonnegative orthants and second-order cones. Search
//! directions use Nesterov-Todd scaling with a Mehrotra predictor-corrector
//! step; the reduced KKT system `(P + GᵀW⁻²G) Δx + EᵀΔy = r` is solved by a
//! Cholesky factorization, with a Schur complement for the equality rows.
//!
//! All buffers live in a [`SocpSolver`] sized for one problem shape. Repeated
//! solves of a problem with the same shape do not allocate, which is what the
//! receding-horizon controllers rely on.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TpcError};
use crate::linalg::{cholesky_in_place, cholesky_solve_in_place};

/// `½ xᵀ P x + cᵀ x + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub p: DMatrix<f64>,
    pub c: DVector<f64>,
    pub constant: f64,
}

impl QuadraticObjective {
    pub fn new(p: DMatrix<f64>, c: DVector<f64>) -> Self {
        QuadraticObjective { p, c, constant: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.c.dot(x) + self.constant
    }

    /// Shape and symmetry check; the PSD condition is left to the solvers.
    pub fn validate(&self) -> Result<()> {
        let n = self.c.len();
        if self.p.shape() != (n, n) {
            return Err(TpcError::Dimension(format!(
                "objective matrix is {}x{} but linear term has length {n}",
                self.p.nrows(),
                self.p.ncols()
            )));
        }
        if self.p.iter().chain(self.c.iter()).any(|v| !v.is_finite()) {
            return Err(TpcError::Objective("non-finite objective data".into()));
        }
        let scale = self.p.amax().max(f64::MIN_POSITIVE);
        let mut asym: f64 = 0.0;
        for j in 0..n {
            for i in j + 1..n {
                asym = asym.max((self.p[(i, j)] - self.p[(j, i)]).abs());
            }
        }
        if asym > 1e-12 * scale {
            return Err(TpcError::Objective(format!("objective matrix is not symmetric ({asym:.3e})")));
        }
        Ok(())
    }
}

/// Per-coordinate bounds; infinite entries are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

/// `‖a x + b‖₂ ≤ radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub radius: f64,
}

impl SocConstraint {
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        ((&self.a * x + &self.b).norm() - self.radius).max(0.0)
    }
}

/// `a x = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEquality {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintSet {
    pub bounds: Option<BoxBounds>,
    pub socs: Vec<SocConstraint>,
    pub equality: Option<LinearEquality>,
}

impl ConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.bounds.is_none() && self.socs.is_empty() && self.equality.is_none()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if let Some(bx) = &self.bounds {
            if bx.lower.len() != n || bx.upper.len() != n {
                return Err(TpcError::Dimension(format!("box bounds must have length {n}")));
            }
            if let Some(i) = (0..n).find(|&i| !(bx.lower[i] <= bx.upper[i])) {
                return Err(TpcError::Config(format!(
                    "box bound {i}: lower {} exceeds upper {}",
                    bx.lower[i], bx.upper[i]
                )));
            }
        }
        for (k, soc) in self.socs.iter().enumerate() {
            if soc.a.ncols() != n || soc.a.nrows() != soc.b.len() || soc.a.nrows() == 0 {
                return Err(TpcError::Dimension(format!(
                    "cone {k}: map is {}x{}, offset has length {}, decision has length {n}",
                    soc.a.nrows(),
                    soc.a.ncols(),
                    soc.b.len()
                )));
            }
            if !(soc.radius > 0.0) || !soc.radius.is_finite() {
                return Err(TpcError::Config(format!("cone {k}: radius must be positive")));
            }
        }
        if let Some(eq) = &self.equality {
            if eq.a.ncols() != n || eq.a.nrows() != eq.b.len() {
                return Err(TpcError::Dimension("equality constraint shape mismatch".into()));
            }
        }
        Ok(())
    }

    /// Largest violation over all constraints at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        if let Some(bx) = &self.bounds {
            for i in 0..x.len() {
                worst = worst.max(bx.lower[i] - x[i]).max(x[i] - bx.upper[i]);
            }
        }
        for soc in &self.socs {
            worst = worst.max(soc.violation(x));
        }
        if let Some(eq) = &self.equality {
            worst = worst.max((&eq.a * x - &eq.b).amax());
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Feasibility and stationarity tolerance.
    pub tol: f64,
    /// Relative duality-gap tolerance.
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Largest accepted decision dimension.
    pub max_dim: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { tol: 1e-8, gap_tol: 1e-12, max_iter: 60, max_dim: 512 }
    }
}

/// Outcome of one solve; the iterate itself stays in the solver ([`SocpSolver::x`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveInfo {
    pub status: SolveStatus,
    pub iterations: usize,
    /// Wall-clock seconds spent inside the solve.
    pub solve_time: f64,
    pub kkt_residual: f64,
    /// For `Infeasible`: the smallest uniform relaxation of the inequality
    /// constraints that makes the problem feasible.
    pub infeasibility: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x_star: DVector<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub solve_time: f64,
    pub kkt_residual: f64,
    pub infeasibility: Option<f64>,
}

/// Row layout of the stacked inequality `Gx + s = h`: `n_lp` orthant rows
/// first, then one block per second-order cone.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct ConeShape {
    n: usize,
    n_lp: usize,
    soc_dims: Vec<usize>,
    n_eq: usize,
}

impl ConeShape {
    fn of(n: usize, cons: &ConstraintSet) -> Self {
        let n_lp = cons
            .bounds
            .as_ref()
            .map(|bx| {
                bx.lower.iter().filter(|v| v.is_finite()).count()
                    + bx.upper.iter().filter(|v| v.is_finite()).count()
            })
            .unwrap_or(0);
        ConeShape {
            n,
            n_lp,
            soc_dims: cons.socs.iter().map(|s| s.a.nrows() + 1).collect(),
            n_eq: cons.equality.as_ref().map_or(0, |e| e.a.nrows()),
        }
    }

    fn matches(&self, n: usize, cons: &ConstraintSet) -> bool {
        let n_lp = cons.bounds.as_ref().map_or(0, |bx| {
            bx.lower.iter().filter(|v| v.is_finite()).count() + bx.upper.iter().filter(|v| v.is_finite()).count()
        });
        self.n == n
            && self.n_lp == n_lp
            && self.soc_dims.len() == cons.socs.len()
            && self.soc_dims.iter().zip(&cons.socs).all(|(&d, s)| d == s.a.nrows() + 1)
            && self.n_eq == cons.equality.as_ref().map_or(0, |e| e.a.nrows())
    }

    fn rows(&self) -> usize {
        self.n_lp + self.soc_dims.iter().sum::<usize>()
    }

    /// Number of cones, the barrier degree used for `μ = sᵀz / degree`.
    fn degree(&self) -> usize {
        self.n_lp + self.soc_dims.len()
    }
}

/// Nesterov-Todd scaling `W` for the current `(s, z)`. For each cone
/// `W = β·[[w₀, w₁ᵀ], [w₁, I + w₁w₁ᵀ/(1+w₀)]]` with `w₀² − ‖w₁‖² = 1`;
/// orthant rows use `W = diag(√(s/z))`.
struct Scaling {
    lp_d: DVector<f64>,
    soc_w: DVector<f64>,
    soc_beta: DVector<f64>,
}

impl Scaling {
    fn new(shape: &ConeShape) -> Self {
        Scaling {
            lp_d: DVector::zeros(shape.n_lp),
            soc_w: DVector::zeros(shape.rows() - shape.n_lp),
            soc_beta: DVector::zeros(shape.soc_dims.len()),
        }
    }

    fn identity(&mut self, shape: &ConeShape) {
        self.lp_d.fill(1.0);
        let mut off = 0;
        for (k, &dim) in shape.soc_dims.iter().enumerate() {
            self.soc_w.rows_mut(off, dim).fill(0.0);
            self.soc_w[off] = 1.0;
            self.soc_beta[k] = 1.0;
            off += dim;
        }
    }

    fn update(&mut self, shape: &ConeShape, s: &[f64], z: &[f64]) -> bool {
        for i in 0..shape.n_lp {
            if !(s[i] > 0.0 && z[i] > 0.0) {
                return false;
            }
            self.lp_d[i] = (s[i] / z[i]).sqrt();
        }
        let mut off = 0;
        for (k, &dim) in shape.soc_dims.iter().enumerate() {
            let so = &s[shape.n_lp + off..shape.n_lp + off + dim];
            let zo = &z[shape.n_lp + off..shape.n_lp + off + dim];
            let s_det = jnorm_sq(so);
            let z_det = jnorm_sq(zo);
            if !(s_det > 0.0 && z_det > 0.0 && so[0] > 0.0 && zo[0] > 0.0) {
                return false;
            }
            let (sn, zn) = (s_det.sqrt(), z_det.sqrt());
            let mut dot = 0.0;
            for i in 0..dim {
                dot += so[i] * zo[i];
            }
            let gamma = ((1.0 + dot / (sn * zn)) / 2.0).sqrt();
            let w = &mut self.soc_w.as_mut_slice()[off..off + dim];
            w[0] = (so[0] / sn + zo[0] / zn) / (2.0 * gamma);
            for i in 1..dim {
                w[i] = (so[i] / sn - zo[i] / zn) / (2.0 * gamma);
            }
            self.soc_beta[k] = (s_det / z_det).sqrt().sqrt();
            off += dim;
        }
        true
    }

    /// `out = W v` (or `W⁻¹ v` when `inverse`).
    fn apply(&self, shape: &ConeShape, inverse: bool, v: &[f64], out: &mut [f64]) {
        for i in 0..shape.n_lp {
            out[i] = if inverse { v[i] / self.lp_d[i] } else { v[i] * self.lp_d[i] };
        }
        let mut off = 0;
        for (k, &dim) in shape.soc_dims.iter().enumerate() {
            let base = shape.n_lp + off;
            let w = &self.soc_w.as_slice()[off..off + dim];
            let vi = &v[base..base + dim];
            let oi = &mut out[base..base + dim];
            let sign = if inverse { -1.0 } else { 1.0 };
            let mut a = 0.0;
            for i in 1..dim {
                a += w[i] * vi[i];
            }
            let scale = if inverse { 1.0 / self.soc_beta[k] } else { self.soc_beta[k] };
            let coef = a / (1.0 + w[0]);
            oi[0] = scale * (w[0] * vi[0] + sign * a);
            for i in 1..dim {
                oi[i] = scale * (sign * vi[0] * w[i] + vi[i] + coef * w[i]);
            }
            off += dim;
        }
    }
}

/// `v₀² − ‖v₁‖²`, computed as a product to limit cancellation.
fn jnorm_sq(v: &[f64]) -> f64 {
    let tail = v[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
    (v[0] - tail) * (v[0] + tail)
}

/// Jordan product `out = u ∘ v`.
fn jordan_prod(shape: &ConeShape, u: &[f64], v: &[f64], out: &mut [f64]) {
    for i in 0..shape.n_lp {
        out[i] = u[i] * v[i];
    }
    let mut off = shape.n_lp;
    for &dim in &shape.soc_dims {
        let (ub, vb) = (&u[off..off + dim], &v[off..off + dim]);
        out[off] = ub.iter().zip(vb).map(|(a, b)| a * b).sum();
        for i in 1..dim {
            out[off + i] = ub[0] * vb[i] + vb[0] * ub[i];
        }
        off += dim;
    }
}

/// Solves `λ ∘ out = d` for `out`.
fn jordan_div(shape: &ConeShape, lambda: &[f64], d: &[f64], out: &mut [f64]) {
    for i in 0..shape.n_lp {
        out[i] = d[i] / lambda[i];
    }
    let mut off = shape.n_lp;
    for &dim in &shape.soc_dims {
        let (l, db) = (&lambda[off..off + dim], &d[off..off + dim]);
        let mut l1d1 = 0.0;
        for i in 1..dim {
            l1d1 += l[i] * db[i];
        }
        let x0 = (l[0] * db[0] - l1d1) / jnorm_sq(l);
        out[off] = x0;
        for i in 1..dim {
            out[off + i] = (db[i] - x0 * l[i]) / l[0];
        }
        off += dim;
    }
}

/// Largest `α ≥ 0` keeping `v + α d` in the cone (`v` interior); may be ∞.
fn max_step(shape: &ConeShape, v: &[f64], d: &[f64]) -> f64 {
    let mut alpha = f64::INFINITY;
    for i in 0..shape.n_lp {
        if d[i] < 0.0 {
            alpha = alpha.min(-v[i] / d[i]);
        }
    }
    let mut off = shape.n_lp;
    for &dim in &shape.soc_dims {
        let (vb, db) = (&v[off..off + dim], &d[off..off + dim]);
        let c = jnorm_sq(vb);
        let mut b = vb[0] * db[0];
        let mut a = db[0] * db[0];
        for i in 1..dim {
            b -= vb[i] * db[i];
            a -= db[i] * db[i];
        }
        // f(α) = a α² + 2 b α + c, f(0) = c > 0; first positive root.
        let root = if a.abs() <= 1e-300 {
            if b < 0.0 {
                -c / (2.0 * b)
            } else {
                f64::INFINITY
            }
        } else {
            let disc = b * b - a * c;
            if disc < 0.0 {
                f64::INFINITY
            } else {
                let qq = -(b + b.signum() * disc.sqrt());
                let r1 = if qq != 0.0 { qq / a } else { f64::INFINITY };
                let r2 = if qq != 0.0 { c / qq } else { f64::INFINITY };
                [r1, r2].into_iter().filter(|r| *r > 0.0).fold(f64::INFINITY, f64::min)
            }
        };
        // A direction leaving through the apex is caught by the leading entry.
        let apex = if db[0] < 0.0 { -vb[0] / db[0] } else { f64::INFINITY };
        alpha = alpha.min(root).min(apex);
        off += dim;
    }
    alpha
}

/// `v += (1 + t) e` when `v` is not safely interior, `t` being its largest
/// cone-eigenvalue violation.
fn push_interior(shape: &ConeShape, v: &mut [f64]) {
    let mut t = f64::NEG_INFINITY;
    for &vi in &v[..shape.n_lp] {
        t = t.max(-vi);
    }
    let mut off = shape.n_lp;
    for &dim in &shape.soc_dims {
        let tail = v[off + 1..off + dim].iter().map(|x| x * x).sum::<f64>().sqrt();
        t = t.max(tail - v[off]);
        off += dim;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if t >= -1e-8 * norm.max(1.0) {
        let shift = 1.0 + t;
        for vi in &mut v[..shape.n_lp] {
            *vi += shift;
        }
        let mut off = shape.n_lp;
        for &dim in &shape.soc_dims {
            v[off] += shift;
            off += dim;
        }
    }
}

fn add_identity_elem(shape: &ConeShape, v: &mut [f64], coef: f64) {
    for vi in &mut v[..shape.n_lp] {
        *vi += coef;
    }
    let mut off = shape.n_lp;
    for &dim in &shape.soc_dims {
        v[off] += coef;
        off += dim;
    }
}

/// Problem data in stacked form, borrowed for one solve.
struct Conic<'a> {
    p: &'a DMatrix<f64>,
    c: &'a DVector<f64>,
    g: &'a DMatrix<f64>,
    h: &'a DVector<f64>,
    eq: Option<(&'a DMatrix<f64>, &'a DVector<f64>)>,
}

struct Workspace {
    shape: ConeShape,
    x: DVector<f64>,
    y: DVector<f64>,
    s: DVector<f64>,
    z: DVector<f64>,
    dx: DVector<f64>,
    dy: DVector<f64>,
    ds: DVector<f64>,
    dz: DVector<f64>,
    rx: DVector<f64>,
    ry: DVector<f64>,
    rz: DVector<f64>,
    lambda: DVector<f64>,
    lambda_sq: DVector<f64>,
    dsa: DVector<f64>,
    dza: DVector<f64>,
    rhs_cmp: DVector<f64>,
    xi: DVector<f64>,
    bz: DVector<f64>,
    tmp_rows: DVector<f64>,
    tmp_n: DVector<f64>,
    tmp_eq: DVector<f64>,
    scaling: Scaling,
    gs: DMatrix<f64>,
    kkt: DMatrix<f64>,
    m_eq: DMatrix<f64>,
    schur: DMatrix<f64>,
}

impl Workspace {
    fn new(shape: ConeShape) -> Self {
        let (n, rows, ne) = (shape.n, shape.rows(), shape.n_eq);
        let v = DVector::zeros;
        Workspace {
            x: v(n),
            y: v(ne),
            s: v(rows),
            z: v(rows),
            dx: v(n),
            dy: v(ne),
            ds: v(rows),
            dz: v(rows),
            rx: v(n),
            ry: v(ne),
            rz: v(rows),
            lambda: v(rows),
            lambda_sq: v(rows),
            dsa: v(rows),
            dza: v(rows),
            rhs_cmp: v(rows),
            xi: v(rows),
            bz: v(rows),
            tmp_rows: v(rows),
            tmp_n: v(n),
            tmp_eq: v(ne),
            scaling: Scaling::new(&shape),
            gs: DMatrix::zeros(rows, n),
            kkt: DMatrix::zeros(n, n),
            m_eq: DMatrix::zeros(n, ne),
            schur: DMatrix::zeros(ne, ne),
            shape,
        }
    }

    fn bytes(&self) -> usize {
        let vecs = [
            &self.x, &self.y, &self.s, &self.z, &self.dx, &self.dy, &self.ds, &self.dz, &self.rx, &self.ry,
            &self.rz, &self.lambda, &self.lambda_sq, &self.dsa, &self.dza, &self.rhs_cmp, &self.xi, &self.bz,
            &self.tmp_rows, &self.tmp_n, &self.tmp_eq, &self.scaling.lp_d, &self.scaling.soc_w,
            &self.scaling.soc_beta,
        ];
        let mats = [&self.gs, &self.kkt, &self.m_eq, &self.schur];
        8 * (vecs.iter().map(|v| v.len()).sum::<usize>() + mats.iter().map(|m| m.len()).sum::<usize>())
    }

    /// Builds `H = P + ĜᵀĜ` with `Ĝ = W⁻¹G`, factors it and, with equality
    /// rows, the Schur complement `E H⁻¹ Eᵀ`. Returns whether a diagonal
    /// shift was needed.
    fn factor(&mut self, prob: &Conic) -> Result<bool> {
        let (n, rows) = (self.shape.n, self.shape.rows());
        for j in 0..n {
            let src = &prob.g.as_slice()[j * rows..(j + 1) * rows];
            let dst = &mut self.gs.as_mut_slice()[j * rows..(j + 1) * rows];
            self.scaling.apply(&self.shape, true, src, dst);
        }
        let mut regularized = false;
        let diag_scale = (0..n).fold(1.0_f64, |a, i| a.max(prob.p[(i, i)].abs()));
        let mut shift = 0.0;
        loop {
            self.kkt.copy_from(prob.p);
            if rows > 0 {
                self.kkt.gemm_tr(1.0, &self.gs, &self.gs, 1.0);
            }
            for i in 0..n {
                self.kkt[(i, i)] += shift;
            }
            match cholesky_in_place(&mut self.kkt) {
                Ok(()) => break,
                Err(_) if shift < 1e-6 * diag_scale => {
                    shift = if shift == 0.0 { 1e-13 * diag_scale } else { shift * 100.0 };
                    regularized = true;
                }
                Err(j) => {
                    return Err(TpcError::Objective(format!(
                        "reduced KKT matrix is not positive definite (pivot {j}); objective may be indefinite or unbounded"
                    )))
                }
            }
        }
        if let Some((a, _)) = prob.eq {
            let ne = self.shape.n_eq;
            for i in 0..ne {
                let col = &mut self.m_eq.as_mut_slice()[i * n..(i + 1) * n];
                for j in 0..n {
                    col[j] = a[(i, j)];
                }
                cholesky_solve_in_place(&self.kkt, col);
            }
            let schur_scale = (0..ne).fold(f64::MIN_POSITIVE, |acc, i| {
                acc.max((0..n).map(|j| a[(i, j)] * self.m_eq[(j, i)]).sum::<f64>().abs())
            });
            let mut shift = 0.0;
            loop {
                self.schur.gemm(1.0, a, &self.m_eq, 0.0);
                for i in 0..ne {
                    self.schur[(i, i)] += shift;
                }
                match cholesky_in_place(&mut self.schur) {
                    Ok(()) => break,
                    Err(_) if shift < 1e-6 * schur_scale => {
                        shift = if shift == 0.0 { 1e-14 * schur_scale } else { shift * 100.0 };
                        regularized = true;
                    }
                    Err(j) => {
                        return Err(TpcError::Numerical(format!(
                            "equality constraints are rank deficient (row {j})"
                        )))
                    }
                }
            }
        }
        Ok(regularized)
    }

    /// Solves `H dx + Eᵀdy = tmp_n`, `E dx = tmp_eq` into `dx`, `dy`.
    fn solve_reduced(&mut self, prob: &Conic) {
        cholesky_solve_in_place(&self.kkt, self.tmp_n.as_mut_slice());
        if let Some((a, _)) = prob.eq {
            // dy = S⁻¹(E H⁻¹ r1 − r2), dx = H⁻¹ r1 − M dy
            self.tmp_eq.gemv(1.0, a, &self.tmp_n, -1.0);
            cholesky_solve_in_place(&self.schur, self.tmp_eq.as_mut_slice());
            self.dy.copy_from(&self.tmp_eq);
            self.tmp_n.gemv(-1.0, &self.m_eq, &self.dy, 1.0);
        }
        self.dx.copy_from(&self.tmp_n);
    }

    /// Newton direction for complementarity right-hand side `rhs_cmp`
    /// (λ-space). Leaves `dx`, `dy` and the scaled directions in `ds`, `dz`.
    fn direction(&mut self, prob: &Conic) {
        let (rows, n_eq) = (self.shape.rows(), self.shape.n_eq);
        jordan_div(&self.shape, self.lambda.as_slice(), self.rhs_cmp.as_slice(), self.xi.as_mut_slice());
        // bz = −W⁻¹ rz − ξ
        self.scaling.apply(&self.shape, true, self.rz.as_slice(), self.bz.as_mut_slice());
        self.bz.neg_mut();
        self.bz -= &self.xi;
        self.tmp_n.copy_from(&self.rx);
        self.tmp_n.neg_mut();
        if rows > 0 {
            self.tmp_n.gemv_tr(1.0, &self.gs, &self.bz, 1.0);
        }
        if n_eq > 0 {
            self.tmp_eq.copy_from(&self.ry);
            self.tmp_eq.neg_mut();
        }
        self.solve_reduced(prob);
        // scaled dz = Ĝ dx − bz, scaled ds = ξ − scaled dz
        self.dz.copy_from(&self.bz);
        if rows > 0 {
            self.dz.gemv(1.0, &self.gs, &self.dx, -1.0);
        }
        self.ds.copy_from(&self.xi);
        self.ds -= &self.dz;
    }

    fn residuals(&mut self, prob: &Conic) {
        self.rx.copy_from(prob.c);
        self.rx.gemv(1.0, prob.p, &self.x, 1.0);
        if self.shape.rows() > 0 {
            self.rx.gemv_tr(1.0, prob.g, &self.z, 1.0);
            self.rz.copy_from(&self.s);
            self.rz -= prob.h;
            self.rz.gemv(1.0, prob.g, &self.x, 1.0);
        }
        if let Some((a, b)) = prob.eq {
            self.rx.gemv_tr(1.0, a, &self.y, 1.0);
            self.ry.copy_from(b);
            self.ry.gemv(1.0, a, &self.x, -1.0);
        }
    }

    fn initialize(&mut self, prob: &Conic, warm: Option<&[f64]>) -> Result<()> {
        let rows = self.shape.rows();
        self.scaling.identity(&self.shape);
        self.factor(prob)?;
        // (P + GᵀG) x + Eᵀy = −c + Gᵀh,  E x = f
        self.tmp_n.copy_from(prob.c);
        self.tmp_n.neg_mut();
        if rows > 0 {
            self.tmp_n.gemv_tr(1.0, prob.g, prob.h, 1.0);
        }
        if let Some((_, b)) = prob.eq {
            self.tmp_eq.copy_from(b);
        }
        self.solve_reduced(prob);
        self.x.copy_from(&self.dx);
        self.y.copy_from(&self.dy);
        if let Some(w) = warm {
            self.x.as_mut_slice().copy_from_slice(w);
        }
        if rows > 0 {
            // s = h − Gx, z = Gx − h, each pushed into the cone interior.
            self.s.copy_from(prob.h);
            self.s.gemv(-1.0, prob.g, &self.dx, 1.0);
            self.z.copy_from(&self.s);
            self.z.neg_mut();
            if warm.is_some() {
                self.s.copy_from(prob.h);
                self.s.gemv(-1.0, prob.g, &self.x, 1.0);
            }
            push_interior(&self.shape, self.s.as_mut_slice());
            push_interior(&self.shape, self.z.as_mut_slice());
        }
        Ok(())
    }
}

/// Farkas test on the current dual iterate: `z ∈ K` with `Gᵀz + Eᵀy ≈ 0`
/// and `hᵀz + fᵀy < 0` proves the inequalities cannot all hold.
fn certifies_infeasibility(ws: &mut Workspace, prob: &Conic) -> bool {
    let mut t = -prob.h.dot(&ws.z);
    if let Some((_, b)) = prob.eq {
        t -= b.dot(&ws.y);
    }
    if !(t > 0.0) {
        return false;
    }
    // Gᵀz + Eᵀy = rx − Px − c
    ws.tmp_n.copy_from(&ws.rx);
    ws.tmp_n -= prob.c;
    ws.tmp_n.gemv(-1.0, prob.p, &ws.x, 1.0);
    ws.tmp_n.norm() <= INFEASIBILITY_RATIO * t
}

/// Certificate residual, relative to the certificate's separation, below
/// which the dual iterate is taken as proof of infeasibility.
const INFEASIBILITY_RATIO: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
struct Outcome {
    status: SolveStatus,
    iterations: usize,
    kkt_residual: f64,
}

fn run_ipm(ws: &mut Workspace, prob: &Conic, settings: &SolverSettings, warm: Option<&[f64]>) -> Result<Outcome> {
    ws.initialize(prob, warm)?;
    let rows = ws.shape.rows();
    let degree = ws.shape.degree();
    let resp0 = 1.0_f64.max(prob.h.norm()).max(prob.eq.map_or(0.0, |(_, b)| b.norm()));
    let resd0 = 1.0_f64.max(prob.c.norm());
    let mut merit_prev = f64::INFINITY;
    let mut merit_floor = 0.0;
    let mut last_regularized = true;
    let mut iterations = 0;
    let mut kkt_residual;

    loop {
        ws.residuals(prob);
        let rx_n = ws.rx.norm();
        let (ry_n, rz_n) = (ws.ry.norm(), ws.rz.norm());
        let merit = rx_n + ry_n + rz_n;
        if iterations == 0 {
            merit_floor = 1e-9 * (1.0 + merit + prob.p.amax() * (1.0 + ws.x.norm()) + resd0 + resp0);
        }
        if !last_regularized {
            debug_assert!(
                merit <= merit_prev * (1.0 + 1e-6) + merit_floor * (1.0 + ws.z.amax() + ws.s.amax()),
                "residual merit increased: {merit_prev:e} -> {merit:e}"
            );
        }
        merit_prev = merit;

        ws.tmp_n.gemv(1.0, prob.p, &ws.x, 0.0);
        let pcost = 0.5 * ws.x.dot(&ws.tmp_n) + prob.c.dot(&ws.x);
        let gap = if rows > 0 { ws.s.dot(&ws.z) } else { 0.0 };
        let pres = ry_n.max(rz_n) / resp0;
        let dres = rx_n / resd0;
        let relgap = gap / 1.0_f64.max(pcost.abs());
        kkt_residual = pres.max(dres).max(relgap);
        if pres <= settings.tol && dres <= settings.tol && relgap <= settings.gap_tol {
            return Ok(Outcome { status: SolveStatus::Optimal, iterations, kkt_residual });
        }
        if rows > 0 && certifies_infeasibility(ws, prob) {
            return Ok(Outcome { status: SolveStatus::Infeasible, iterations, kkt_residual });
        }
        if iterations >= settings.max_iter {
            break;
        }

        if !ws.scaling.update(&ws.shape, ws.s.as_slice(), ws.z.as_slice()) {
            return Err(TpcError::Numerical("iterate left the cone interior".into()));
        }
        {
            let (z, lambda) = (ws.z.as_slice(), ws.lambda.as_mut_slice());
            ws.scaling.apply(&ws.shape, false, z, lambda);
        }
        last_regularized = ws.factor(prob)?;
        jordan_prod(&ws.shape, ws.lambda.as_slice(), ws.lambda.as_slice(), ws.lambda_sq.as_mut_slice());
        let mu = if degree > 0 { gap / degree as f64 } else { 0.0 };

        // Predictor: d = −λ∘λ.
        ws.rhs_cmp.copy_from(&ws.lambda_sq);
        ws.rhs_cmp.neg_mut();
        ws.direction(prob);
        let alpha_aff = max_step(&ws.shape, ws.lambda.as_slice(), ws.ds.as_slice())
            .min(max_step(&ws.shape, ws.lambda.as_slice(), ws.dz.as_slice()))
            .min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3);
        ws.dsa.copy_from(&ws.ds);
        ws.dza.copy_from(&ws.dz);

        // Corrector: d = −λ∘λ − Δŝ_a∘Δẑ_a + σμe.
        jordan_prod(&ws.shape, ws.dsa.as_slice(), ws.dza.as_slice(), ws.tmp_rows.as_mut_slice());
        ws.rhs_cmp.copy_from(&ws.lambda_sq);
        ws.rhs_cmp += &ws.tmp_rows;
        ws.rhs_cmp.neg_mut();
        add_identity_elem(&ws.shape, ws.rhs_cmp.as_mut_slice(), sigma * mu);
        ws.direction(prob);
        let step_max = max_step(&ws.shape, ws.lambda.as_slice(), ws.ds.as_slice())
            .min(max_step(&ws.shape, ws.lambda.as_slice(), ws.dz.as_slice()));
        let alpha = (0.99 * step_max).min(1.0);
        if !(alpha > 1e-12) {
            break;
        }

        // Undo the scaling: Δs = W Δŝ, Δz = W⁻¹ Δẑ.
        ws.tmp_rows.copy_from(&ws.ds);
        ws.scaling.apply(&ws.shape, false, ws.tmp_rows.as_slice(), ws.ds.as_mut_slice());
        ws.tmp_rows.copy_from(&ws.dz);
        ws.scaling.apply(&ws.shape, true, ws.tmp_rows.as_slice(), ws.dz.as_mut_slice());

        ws.x.axpy(alpha, &ws.dx, 1.0);
        ws.y.axpy(alpha, &ws.dy, 1.0);
        ws.s.axpy(alpha, &ws.ds, 1.0);
        ws.z.axpy(alpha, &ws.dz, 1.0);
        iterations += 1;
    }
    Ok(Outcome { status: SolveStatus::MaxIter, iterations, kkt_residual })
}

/// Reusable solver with preallocated workspace.
pub struct SocpSolver {
    settings: SolverSettings,
    g: DMatrix<f64>,
    h: DVector<f64>,
    ws: Workspace,
}

impl SocpSolver {
    pub fn new(settings: SolverSettings) -> Self {
        SocpSolver {
            settings,
            g: DMatrix::zeros(0, 0),
            h: DVector::zeros(0),
            ws: Workspace::new(ConeShape::default()),
        }
    }

    /// Solver whose buffers already fit problems shaped like `(n, cons)`.
    pub fn with_shape(n: usize, cons: &ConstraintSet, settings: SolverSettings) -> Self {
        let mut solver = SocpSolver::new(settings);
        solver.reshape(n, cons);
        solver
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    fn reshape(&mut self, n: usize, cons: &ConstraintSet) {
        let shape = ConeShape::of(n, cons);
        self.g = DMatrix::zeros(shape.rows(), n);
        self.h = DVector::zeros(shape.rows());
        self.ws = Workspace::new(shape);
    }

    /// Bytes held by the workspace buffers.
    pub fn workspace_bytes(&self) -> usize {
        self.ws.bytes() + 8 * (self.g.len() + self.h.len())
    }

    /// Current (last returned) iterate.
    pub fn x(&self) -> &[f64] {
        self.ws.x.as_slice()
    }

    fn fill_stacked(&mut self, cons: &ConstraintSet) {
        let n = self.ws.shape.n;
        self.g.fill(0.0);
        let mut row = 0;
        if let Some(bx) = &cons.bounds {
            for i in 0..n {
                if bx.lower[i].is_finite() {
                    self.g[(row, i)] = -1.0;
                    self.h[row] = -bx.lower[i];
                    row += 1;
                }
            }
            for i in 0..n {
                if bx.upper[i].is_finite() {
                    self.g[(row, i)] = 1.0;
                    self.h[row] = bx.upper[i];
                    row += 1;
                }
            }
        }
        for soc in &cons.socs {
            self.h[row] = soc.radius;
            row += 1;
            for r in 0..soc.a.nrows() {
                for j in 0..n {
                    self.g[(row, j)] = -soc.a[(r, j)];
                }
                self.h[row] = soc.b[r];
                row += 1;
            }
        }
    }

    /// Solves the program; the solution is read back with [`SocpSolver::x`].
    /// Problems with the shape the solver was built for reuse its buffers.
    pub fn solve(
        &mut self,
        obj: &QuadraticObjective,
        cons: &ConstraintSet,
        warm: Option<&[f64]>,
    ) -> Result<SolveInfo> {
        let start = Instant::now();
        let n = obj.dim();
        if n > self.settings.max_dim {
            return Err(TpcError::Dimension(format!(
                "decision dimension {n} exceeds solver cap {}",
                self.settings.max_dim
            )));
        }
        obj.validate()?;
        cons.validate(n)?;
        if let Some(w) = warm {
            if w.len() != n {
                return Err(TpcError::Dimension(format!("warm start has length {}, expected {n}", w.len())));
            }
        }
        if !self.ws.shape.matches(n, cons) {
            self.reshape(n, cons);
        }
        self.fill_stacked(cons);
        let prob = Conic {
            p: &obj.p,
            c: &obj.c,
            g: &self.g,
            h: &self.h,
            eq: cons.equality.as_ref().map(|e| (&e.a, &e.b)),
        };
        let outcome = match run_ipm(&mut self.ws, &prob, &self.settings, warm) {
            Ok(o) => o,
            Err(TpcError::Numerical(_)) => Outcome {
                status: SolveStatus::MaxIter,
                iterations: self.settings.max_iter,
                kkt_residual: f64::INFINITY,
            },
            Err(e) => return Err(e),
        };
        if let Some(bx) = &cons.bounds {
            for i in 0..n {
                self.ws.x[i] = self.ws.x[i].clamp(bx.lower[i], bx.upper[i]);
            }
        }
        let mut info = SolveInfo {
            status: outcome.status,
            iterations: outcome.iterations,
            solve_time: 0.0,
            kkt_residual: outcome.kkt_residual,
            infeasibility: None,
        };
        if info.status != SolveStatus::Optimal && (self.ws.shape.rows() > 0) {
            let margin = feasibility_margin(n, cons, &self.settings)?;
            if margin > self.settings.tol.sqrt() {
                info.status = SolveStatus::Infeasible;
                info.infeasibility = Some(margin);
            } else {
                info.status = SolveStatus::MaxIter;
            }
        }
        info.solve_time = start.elapsed().as_secs_f64();
        Ok(info)
    }
}

/// Smallest uniform relaxation `t` of every inequality (box rows and cone
/// radii) that admits a feasible point, found with the same interior-point
/// method on an augmented problem. Allocates; runs only on the failure path.
fn feasibility_margin(n: usize, cons: &ConstraintSet, settings: &SolverSettings) -> Result<f64> {
    let shape = ConeShape::of(n + 1, cons);
    let rows = shape.rows();
    let mut g = DMatrix::zeros(rows, n + 1);
    let mut h = DVector::zeros(rows);
    let mut row = 0;
    if let Some(bx) = &cons.bounds {
        for i in 0..n {
            if bx.lower[i].is_finite() {
                g[(row, i)] = -1.0;
                g[(row, n)] = -1.0;
                h[row] = -bx.lower[i];
                row += 1;
            }
        }
        for i in 0..n {
            if bx.upper[i].is_finite() {
                g[(row, i)] = 1.0;
                g[(row, n)] = -1.0;
                h[row] = bx.upper[i];
                row += 1;
            }
        }
    }
    for soc in &cons.socs {
        g[(row, n)] = -1.0;
        h[row] = soc.radius;
        row += 1;
        for r in 0..soc.a.nrows() {
            for j in 0..n {
                g[(row, j)] = -soc.a[(r, j)];
            }
            h[row] = soc.b[r];
            row += 1;
        }
    }
    let eq_a = cons.equality.as_ref().map(|e| {
        let mut a = DMatrix::zeros(e.a.nrows(), n + 1);
        a.columns_mut(0, n).copy_from(&e.a);
        a
    });
    let p = DMatrix::identity(n + 1, n + 1) * 1e-9;
    let mut c = DVector::zeros(n + 1);
    c[n] = 1.0;
    let prob = Conic {
        p: &p,
        c: &c,
        g: &g,
        h: &h,
        eq: match (&eq_a, &cons.equality) {
            (Some(a), Some(e)) => Some((a, &e.b)),
            _ => None,
        },
    };
    let mut ws = Workspace::new(shape);
    let phase1 = SolverSettings { max_iter: settings.max_iter.max(80), ..*settings };
    match run_ipm(&mut ws, &prob, &phase1, None) {
        Ok(_) => Ok(ws.x[n].max(0.0)),
        Err(_) => Ok(0.0),
    }
}

/// One-shot convenience wrapper around [`SocpSolver`].
pub fn solve_socp(
    obj: &QuadraticObjective,
    cons: &ConstraintSet,
    settings: &SolverSettings,
) -> Result<SolveReport> {
    let mut solver = SocpSolver::new(*settings);
    let info = solver.solve(obj, cons, None)?;
    Ok(SolveReport {
        x_star: DVector::from_column_slice(solver.x()),
        status: info.status,
        iterations: info.iterations,
        solve_time: info.solve_time,
        kkt_residual: info.kkt_residual,
        infeasibility: info.infeasibility,
    })
}

/// Minimizer of an objective without constraints: solves `Px = −c` by
/// Cholesky, or returns the minimum-norm solution when `P` is singular PSD.
pub fn solve_unconstrained(obj: &QuadraticObjective) -> Result<DVector<f64>> {
    obj.validate()?;
    let n = obj.dim();
    let mut l = obj.p.clone();
    if cholesky_in_place(&mut l).is_ok() {
        let mut x = obj.c.clone();
        x.neg_mut();
        cholesky_solve_in_place(&l, x.as_mut_slice());
        return Ok(x);
    }
    let eig = obj.p.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    if eig.eigenvalues.iter().any(|&e| e < -1e-10 * scale) {
        return Err(TpcError::Objective("objective matrix is indefinite".into()));
    }
    let cutoff = 1e-12 * scale * n as f64;
    let coords = eig.eigenvectors.transpose() * &obj.c;
    let mut x = DVector::zeros(n);
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        if lam > cutoff {
            x.axpy(-coords[k] / lam, &eig.eigenvectors.column(k), 1.0);
        } else if coords[k].abs() > 1e-9 * (1.0 + obj.c.norm()) {
            return Err(TpcError::Objective("linear term outside the range of P: objective unbounded".into()));
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingStats {
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub samples: usize,
}

impl TimingStats {
    pub fn from_samples(samples: &mut [f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        samples.sort_by(|a, b| a.total_cmp(b));
        let k = samples.len();
        let median = if k % 2 == 1 { samples[k / 2] } else { 0.5 * (samples[k / 2 - 1] + samples[k / 2]) };
        Some(TimingStats { median, min: samples[0], max: samples[k - 1], samples: k })
    }
}

/// Wall-clock statistics of `repeats` calls to `solve_once`, after one
/// discarded warm-up call. `solve_once` returns the seconds it wants counted,
/// which lets callers exclude problem construction.
pub fn timing_probe<F>(repeats: usize, mut solve_once: F) -> Result<TimingStats>
where
    F: FnMut() -> Result<f64>,
{
    if repeats == 0 {
        return Err(TpcError::Config("timing probe needs at least one repeat".into()));
    }
    solve_once()?;
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        samples.push(solve_once()?);
    }
    Ok(TimingStats::from_samples(&mut samples).expect("nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(radius: f64) -> SocConstraint {
        SocConstraint { a: DMatrix::identity(2, 2), b: DVector::zeros(2), radius }
    }

    #[test]
    fn scaling_maps_z_and_s_to_same_point() {
        let shape = ConeShape { n: 0, n_lp: 2, soc_dims: vec![3, 4], n_eq: 0 };
        let s = [0.7, 2.0, 3.0, 1.0, -0.5, 2.5, 0.3, -1.1, 0.4];
        let z = [1.5, 0.2, 1.2, 0.4, 0.1, 4.0, -2.0, 1.0, 0.5];
        let mut sc = Scaling::new(&shape);
        assert!(sc.update(&shape, &s, &z));
        let mut wz = [0.0; 9];
        let mut winv_s = [0.0; 9];
        sc.apply(&shape, false, &z, &mut wz);
        sc.apply(&shape, true, &s, &mut winv_s);
        for i in 0..9 {
            assert!((wz[i] - winv_s[i]).abs() < 1e-12, "{i}: {} vs {}", wz[i], winv_s[i]);
        }
        let mut back = [0.0; 9];
        sc.apply(&shape, true, &wz, &mut back);
        for i in 0..9 {
            assert!((back[i] - z[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn jordan_div_inverts_product() {
        let shape = ConeShape { n: 0, n_lp: 1, soc_dims: vec![3], n_eq: 0 };
        let l = [2.0, 3.0, 0.5, -1.0];
        let x = [0.3, -1.0, 2.0, 0.7];
        let mut d = [0.0; 4];
        jordan_prod(&shape, &l, &x, &mut d);
        let mut back = [0.0; 4];
        jordan_div(&shape, &l, &d, &mut back);
        for i in 0..4 {
            assert!((back[i] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn max_step_reaches_boundary() {
        let shape = ConeShape { n: 0, n_lp: 0, soc_dims: vec![3], n_eq: 0 };
        let v = [1.0, 0.0, 0.0];
        let d = [0.0, 1.0, 0.0];
        assert!((max_step(&shape, &v, &d) - 1.0).abs() < 1e-14);
        let inward = [1.0, 0.0, 0.0];
        assert!(max_step(&shape, &v, &inward).is_infinite());
    }

    #[test]
    fn unconstrained_identity_and_scaled() {
        let obj = QuadraticObjective::new(DMatrix::identity(3, 3), DVector::zeros(3));
        assert_eq!(solve_unconstrained(&obj).unwrap(), DVector::zeros(3));
        let obj = QuadraticObjective::new(DMatrix::identity(4, 4) * 2.0, DVector::from_element(4, -2.0));
        let x = solve_unconstrained(&obj).unwrap();
        assert!((x - DVector::from_element(4, 1.0)).amax() < 1e-15);
    }

    #[test]
    fn unconstrained_singular_gives_min_norm() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let obj = QuadraticObjective::new(p, DVector::from_column_slice(&[-2.0, -2.0]));
        let x = solve_unconstrained(&obj).unwrap();
        assert!((x - DVector::from_column_slice(&[1.0, 1.0])).amax() < 1e-12);
    }

    #[test]
    fn unconstrained_rejects_indefinite() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let obj = QuadraticObjective::new(p, DVector::zeros(2));
        assert!(matches!(solve_unconstrained(&obj), Err(TpcError::Objective(_))));
    }

    #[test]
    fn projection_onto_disk() {
        let obj = QuadraticObjective::new(DMatrix::identity(2, 2) * 2.0, DVector::from_column_slice(&[-2.0, 0.0]));
        let cons = ConstraintSet { socs: vec![disk(0.5)], ..Default::default() };
        let rep = solve_socp(&obj, &cons, &SolverSettings::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Optimal);
        assert!((rep.x_star[0] - 0.5).abs() < 1e-8 && rep.x_star[1].abs() < 1e-8, "{}", rep.x_star);
        assert!(cons.max_violation(&rep.x_star) <= 1e-8);
    }

    #[test]
    fn no_constraints_matches_direct_solve() {
        let p = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let obj = QuadraticObjective::new(p, DVector::from_column_slice(&[1.0, -2.0, 0.5]));
        let rep = solve_socp(&obj, &ConstraintSet::default(), &SolverSettings::default()).unwrap();
        let direct = solve_unconstrained(&obj).unwrap();
        assert_eq!(rep.status, SolveStatus::Optimal);
        assert!((rep.x_star - direct).amax() < 1e-8);
    }

    #[test]
    fn box_bounds_are_exact() {
        let obj = QuadraticObjective::new(DMatrix::identity(2, 2), DVector::from_column_slice(&[-3.0, 3.0]));
        let cons = ConstraintSet {
            bounds: Some(BoxBounds {
                lower: DVector::from_column_slice(&[-1.0, -1.0]),
                upper: DVector::from_column_slice(&[1.0, 1.0]),
            }),
            ..Default::default()
        };
        let rep = solve_socp(&obj, &cons, &SolverSettings::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Optimal);
        assert!(rep.x_star[0] <= 1.0 && rep.x_star[1] >= -1.0);
        assert!((rep.x_star[0] - 1.0).abs() < 1e-8 && (rep.x_star[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn equality_constrained_least_norm() {
        // min ½‖x‖² s.t. x0 + x1 + x2 = 3  ->  x = (1,1,1)
        let obj = QuadraticObjective::new(DMatrix::identity(3, 3), DVector::zeros(3));
        let cons = ConstraintSet {
            equality: Some(LinearEquality { a: DMatrix::from_element(1, 3, 1.0), b: DVector::from_element(1, 3.0) }),
            socs: vec![SocConstraint { a: DMatrix::identity(3, 3).rows(0, 2).into_owned(), b: DVector::zeros(2), radius: 5.0 }],
            ..Default::default()
        };
        let rep = solve_socp(&obj, &cons, &SolverSettings::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Optimal);
        assert!((rep.x_star - DVector::from_element(3, 1.0)).amax() < 1e-8);
    }

    #[test]
    fn infeasible_box_and_disk() {
        let obj = QuadraticObjective::new(DMatrix::identity(2, 2), DVector::zeros(2));
        let cons = ConstraintSet {
            bounds: Some(BoxBounds {
                lower: DVector::from_column_slice(&[1.0, -10.0]),
                upper: DVector::from_column_slice(&[10.0, 10.0]),
            }),
            socs: vec![disk(0.5)],
            ..Default::default()
        };
        let rep = solve_socp(&obj, &cons, &SolverSettings::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Infeasible);
        // uniform relaxation t with 1 − t ≤ 0.5 + t  →  t = 0.25
        assert!((rep.infeasibility.unwrap() - 0.25).abs() < 1e-4, "{:?}", rep.infeasibility);
    }

    #[test]
    fn dimension_cap_is_enforced() {
        let settings = SolverSettings { max_dim: 4, ..Default::default() };
        let obj = QuadraticObjective::new(DMatrix::identity(5, 5), DVector::zeros(5));
        assert!(solve_socp(&obj, &ConstraintSet::default(), &settings).is_err());
    }

    #[test]
    fn timing_probe_single_repeat() {
        let stats = timing_probe(1, || Ok(0.5)).unwrap();
        assert_eq!((stats.min, stats.median, stats.max), (0.5, 0.5, 0.5));
        assert!(timing_probe(0, || Ok(0.0)).is_err());
    }
}
