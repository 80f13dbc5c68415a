//! Independent reference computations used by the test suites.
//!
//! Nothing here shares code with `tpc-core`: systems are simulated directly
//! from their state-space matrices, true predictors are built from Markov
//! parameters, and constrained quadratic programs are solved with a plain
//! accelerated projected-gradient method.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

/// `x(t+1) = A x(t) + B u(t) + K e(t)`, `y(t) = C x(t) + e(t)`.
#[derive(Debug, Clone)]
pub struct InnovationModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

impl InnovationModel {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn q(&self) -> usize {
        self.c.nrows()
    }

    /// Random stable model whose predictor matrix `A − KC` is nilpotent, so
    /// the Kalman predictor forgets its initial state after `n` steps and
    /// any lead-in of length `ρ ≥ n` determines the prediction exactly.
    pub fn random_deadbeat(n: usize, m: usize, q: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let mut strict = randn(&mut rng, n, n, 0.5);
            for i in 0..n {
                for j in 0..=i {
                    strict[(i, j)] = 0.0;
                }
            }
            let s = DMatrix::identity(n, n) + randn(&mut rng, n, n, 0.3);
            let Some(s_inv) = s.clone().try_inverse() else { continue };
            let abar = &s * strict * s_inv;
            let b = randn(&mut rng, n, m, 1.0);
            let c = randn(&mut rng, q, n, 1.0);
            let mut k = randn(&mut rng, n, q, 0.3);
            for _ in 0..20 {
                let a = &abar + &k * &c;
                if spectral_radius(&a) < 0.9 {
                    return InnovationModel { a, b, c, k };
                }
                k *= 0.7;
            }
        }
    }

    /// Random deterministic model (`K = 0`) with spectral radius below 0.9.
    pub fn random_stable(n: usize, m: usize, q: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = randn(&mut rng, n, n, 1.0);
        let r = spectral_radius(&a);
        a *= 0.85 / r.max(1e-12);
        InnovationModel { a, b: randn(&mut rng, n, m, 1.0), c: randn(&mut rng, q, n, 1.0), k: DMatrix::zeros(n, q) }
    }

    /// Observer gain making `A − KC` zero; needs `C` with full column rank.
    pub fn deadbeat_gain(&self) -> Option<DMatrix<f64>> {
        let ctc = self.c.transpose() * &self.c;
        let pinv = ctc.try_inverse()? * self.c.transpose();
        Some(&self.a * pinv)
    }

    /// Outputs for inputs `u` (m×T), innovation noise of standard deviation
    /// `sigma`, zero initial state.
    pub fn simulate(&self, u: &DMatrix<f64>, sigma: f64, seed: u64) -> DMatrix<f64> {
        let (n, q) = (self.n(), self.q());
        let t = u.ncols();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma.max(0.0)).unwrap();
        let mut x = DVector::zeros(n);
        let mut y = DMatrix::zeros(q, t);
        for k in 0..t {
            let e = DVector::from_fn(q, |_, _| if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 });
            y.set_column(k, &(&self.c * &x + &e));
            x = &self.a * &x + &self.b * u.column(k) + &self.k * &e;
        }
        y
    }

    /// Output for a given initial state and no noise.
    pub fn free_run(&self, x0: &DVector<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = x0.clone();
        let mut y = DMatrix::zeros(self.q(), u.ncols());
        for k in 0..u.ncols() {
            y.set_column(k, &(&self.c * &x));
            x = &self.a * &x + &self.b * u.column(k);
        }
        y
    }

    /// True multistep predictor `(H_p, H_u)` for lead-in windows of `rho`
    /// samples stacked `[y; u]` oldest first and `tau` future inputs, using
    /// the observer gain `gain` (which must make `A − gain·C` vanish within
    /// `rho` steps).
    pub fn multistep_predictor_with_gain(&self, gain: &DMatrix<f64>, rho: usize, tau: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let (n, m, q) = (self.n(), self.m(), self.q());
        let abar = &self.a - gain * &self.c;
        let blk = q + m;
        // x̂(t) = Σ_{i=1..ρ} Ā^{i−1}(B u(t−i) + K y(t−i)); past block b holds time t−ρ+b.
        let mut state_map = DMatrix::zeros(n, blk * rho);
        let mut apow = DMatrix::identity(n, n);
        for i in 1..=rho {
            let b = rho - i;
            state_map.view_mut((0, b * blk), (n, q)).copy_from(&(&apow * gain));
            state_map.view_mut((0, b * blk + q), (n, m)).copy_from(&(&apow * &self.b));
            apow = &abar * apow;
        }
        let mut hp = DMatrix::zeros(q * tau, blk * rho);
        let mut hu = DMatrix::zeros(q * tau, m * tau);
        let mut ca = self.c.clone();
        let mut markov = Vec::with_capacity(tau);
        for k in 0..tau {
            hp.view_mut((k * q, 0), (q, blk * rho)).copy_from(&(&ca * &state_map));
            markov.push(&ca * &self.b);
            ca = &ca * &self.a;
        }
        for k in 0..tau {
            for i in 0..k {
                hu.view_mut((k * q, i * m), (q, m)).copy_from(&markov[k - 1 - i]);
            }
        }
        (hp, hu)
    }

    pub fn multistep_predictor(&self, rho: usize, tau: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        self.multistep_predictor_with_gain(&self.k, rho, tau)
    }
}

/// Gaussian white inputs, `m × len`.
pub fn white_inputs(m: usize, len: usize, std: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    randn(&mut rng, m, len, std)
}

/// Stacks samples `start..start+rho` into a lead-in `[y; u]` per sample.
pub fn stack_window(y: &DMatrix<f64>, u: &DMatrix<f64>, start: usize, rho: usize) -> DVector<f64> {
    let (q, m) = (y.nrows(), u.nrows());
    let mut z = DVector::zeros((q + m) * rho);
    for b in 0..rho {
        z.rows_mut(b * (q + m), q).copy_from(&y.column(start + b));
        z.rows_mut(b * (q + m) + q, m).copy_from(&u.column(start + b));
    }
    z
}

/// Minimizes `½xᵀPx + cᵀx` over a convex set given by its Euclidean
/// projection, with FISTA and gradient restarts. `P` must be positive
/// definite for the iteration count to be meaningful.
pub fn projected_gradient<F>(p: &DMatrix<f64>, c: &DVector<f64>, project: F, iters: usize) -> DVector<f64>
where
    F: Fn(&mut DVector<f64>),
{
    let lip = p.clone().symmetric_eigen().eigenvalues.amax();
    let step = 1.0 / lip;
    let mut x = DVector::zeros(c.len());
    project(&mut x);
    let mut yk = x.clone();
    let mut t = 1.0_f64;
    for _ in 0..iters {
        let grad = p * &yk + c;
        let mut next = &yk - step * grad;
        project(&mut next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let moved = &next - &x;
        if (&yk - &next).dot(&moved) > 0.0 {
            t = 1.0;
            yk = next.clone();
        } else {
            yk = &next + ((t - 1.0) / t_next) * moved;
            t = t_next;
        }
        x = next;
    }
    x
}

/// Projection of the pair `x[i..i+2]` onto the disk `‖· − center‖ ≤ radius`.
pub fn project_disk(x: &mut DVector<f64>, i: usize, center: [f64; 2], radius: f64) {
    let (dx, dy) = (x[i] - center[0], x[i + 1] - center[1]);
    let r = (dx * dx + dy * dy).sqrt();
    if r > radius {
        x[i] = center[0] + dx * radius / r;
        x[i + 1] = center[1] + dy * radius / r;
    }
}

/// A random strongly convex objective `(P, c)` of dimension `n`.
pub fn random_objective(n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = randn(&mut rng, n, n, 1.0);
    let p = m.transpose() * m + DMatrix::identity(n, n) * 0.5;
    let p = (&p + p.transpose()) * 0.5;
    let c = DVector::from_iterator(n, randn(&mut rng, n, 1, 3.0).iter().copied());
    (p, c)
}

/// Random disks `(center, radius)` for consecutive coordinate pairs.
pub fn random_disks(pairs: usize, seed: u64) -> Vec<([f64; 2], f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
    (0..pairs)
        .map(|_| {
            let center = [0.5 * draw(), 0.5 * draw()];
            let radius = 0.2 + 0.8 * draw().abs().min(2.0) / 2.0;
            (center, radius)
        })
        .collect()
}
