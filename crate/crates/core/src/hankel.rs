//! Trajectories, the scaled block-Hankel stack and excitation signals.
//!
//! Samples are stacked per timestep as `z(t) = [y(t); u(t)]`, outputs above
//! inputs. Every downstream module (the estimator's block-diagonal zeroing,
//! the predictor's column partition, DeePC's row split) relies on this order.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, TpcError};

/// Names and roles of the input and output channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalLayout {
    pub output_names: Vec<String>,
    pub input_names: Vec<String>,
    pub current_d_index: Option<usize>,
    pub current_q_index: Option<usize>,
    pub power_indices: Vec<usize>,
}

impl SignalLayout {
    /// Layout without named roles: `y_0..y_{q-1}`, `u_0..u_{m-1}`.
    pub fn generic(q: usize, m: usize) -> Self {
        SignalLayout {
            output_names: (0..q).map(|i| format!("y_{i}")).collect(),
            input_names: (0..m).map(|i| format!("u_{i}")).collect(),
            current_d_index: None,
            current_q_index: None,
            power_indices: Vec::new(),
        }
    }

    /// `y = [P, Q, i_d, i_q]`, `u = [i_d*, i_q*]`.
    pub fn inverter() -> Self {
        SignalLayout {
            output_names: ["P", "Q", "i_d", "i_q"].map(String::from).to_vec(),
            input_names: ["i_d_ref", "i_q_ref"].map(String::from).to_vec(),
            current_d_index: Some(2),
            current_q_index: Some(3),
            power_indices: vec![0, 1],
        }
    }

    pub fn q(&self) -> usize {
        self.output_names.len()
    }

    pub fn m(&self) -> usize {
        self.input_names.len()
    }

    pub fn current_indices(&self) -> Option<(usize, usize)> {
        self.current_d_index.zip(self.current_q_index)
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.q();
        let mut seen = Vec::new();
        let named = self
            .current_d_index
            .iter()
            .chain(self.current_q_index.iter())
            .chain(self.power_indices.iter());
        for &idx in named {
            if idx >= q {
                return Err(TpcError::Config(format!(
                    "layout index {idx} out of range for {q} outputs"
                )));
            }
            if seen.contains(&idx) {
                return Err(TpcError::Config(format!("layout index {idx} used twice")));
            }
            seen.push(idx);
        }
        if self.current_d_index.is_some() != self.current_q_index.is_some() {
            return Err(TpcError::Config(
                "current_d_index and current_q_index must be given together".into(),
            ));
        }
        Ok(())
    }
}

/// Time-indexed record of inputs and outputs. Column `k` of `u` / `y` is the
/// sample at index `t0 + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub t0: i64,
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub layout: SignalLayout,
}

impl Trajectory {
    pub fn new(dt: f64, u: DMatrix<f64>, y: DMatrix<f64>, layout: SignalLayout) -> Result<Self> {
        let traj = Trajectory { dt, t0: 0, u, y, layout };
        traj.validate()?;
        Ok(traj)
    }

    pub fn len(&self) -> usize {
        self.u.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.u.ncols() == 0
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn q(&self) -> usize {
        self.y.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.u.ncols() != self.y.ncols() {
            return Err(TpcError::Dimension(format!(
                "input has {} samples but output has {}",
                self.u.ncols(),
                self.y.ncols()
            )));
        }
        if self.u.ncols() == 0 {
            return Err(TpcError::Dimension("trajectory is empty".into()));
        }
        if self.layout.m() != self.m() || self.layout.q() != self.q() {
            return Err(TpcError::Dimension(format!(
                "layout describes m={}, q={} but data has m={}, q={}",
                self.layout.m(),
                self.layout.q(),
                self.m(),
                self.q()
            )));
        }
        if let Some(k) = (0..self.len()).find(|&k| {
            self.u.column(k).iter().chain(self.y.column(k).iter()).any(|v| !v.is_finite())
        }) {
            return Err(TpcError::Data(format!("non-finite sample at index {}", self.t0 + k as i64)));
        }
        Ok(())
    }

    /// Joint sample `z(k) = [y(k); u(k)]` for column `k`.
    pub fn z(&self, k: usize) -> DVector<f64> {
        let mut z = DVector::zeros(self.q() + self.m());
        z.rows_mut(0, self.q()).copy_from(&self.y.column(k));
        z.rows_mut(self.q(), self.m()).copy_from(&self.u.column(k));
        z
    }

    /// Writes the `t,u_0..,y_0..` CSV schema. Values use 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.m()).map(|i| format!("u_{i}")));
        header.extend((0..self.q()).map(|i| format!("y_{i}")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec = vec![(self.t0 + k as i64).to_string()];
            rec.extend(self.u.column(k).iter().map(|v| format!("{v:.16e}")));
            rec.extend(self.y.column(k).iter().map(|v| format!("{v:.16e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV schema written by [`Trajectory::write_csv`]. Channel counts
    /// come from the header; `layout` must agree with them when given.
    pub fn read_csv<R: Read>(reader: R, dt: f64, layout: Option<SignalLayout>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.get(0) != Some("t") {
            return Err(TpcError::Parse("first column must be `t`".into()));
        }
        let m = header.iter().filter(|h| h.starts_with("u_")).count();
        let q = header.iter().filter(|h| h.starts_with("y_")).count();
        let expected: Vec<String> = std::iter::once("t".to_string())
            .chain((0..m).map(|i| format!("u_{i}")))
            .chain((0..q).map(|i| format!("y_{i}")))
            .collect();
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(TpcError::Parse(format!(
                "unexpected header {:?}; expected {:?}",
                header.iter().collect::<Vec<_>>(),
                expected
            )));
        }
        let mut t0 = None;
        let mut u_cols = Vec::new();
        let mut y_cols = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| {
                    TpcError::Parse(format!("row {}: cannot parse `{s}`: {e}", line + 2))
                })
            };
            let t: i64 = rec[0]
                .trim()
                .parse()
                .map_err(|e| TpcError::Parse(format!("row {}: bad index: {e}", line + 2)))?;
            if let Some(start) = t0 {
                if t != start + line as i64 {
                    return Err(TpcError::Data(format!("row {}: index {t} is not consecutive", line + 2)));
                }
            } else {
                t0 = Some(t);
            }
            for i in 0..m {
                u_cols.push(parse(&rec[1 + i])?);
            }
            for i in 0..q {
                y_cols.push(parse(&rec[1 + m + i])?);
            }
        }
        let len = u_cols.len().checked_div(m.max(1)).unwrap_or(0);
        let layout = match layout {
            Some(l) => l,
            None => SignalLayout::generic(q, m),
        };
        let traj = Trajectory {
            dt,
            t0: t0.unwrap_or(0),
            u: DMatrix::from_vec(m, len, u_cols),
            y: DMatrix::from_vec(q, len, y_cols),
            layout,
        };
        traj.validate()?;
        Ok(traj)
    }
}

/// The 1/√N-scaled block-Hankel matrix `Z_[1,ρ+τ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelStack {
    pub matrix: DMatrix<f64>,
    pub rho: usize,
    pub tau: usize,
    pub layout: SignalLayout,
}

impl HankelStack {
    pub fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn q(&self) -> usize {
        self.layout.q()
    }

    pub fn m(&self) -> usize {
        self.layout.m()
    }

    pub fn block(&self) -> usize {
        self.q() + self.m()
    }

    /// Row count `(q+m)(ρ+τ)`.
    pub fn n_rows(&self) -> usize {
        self.block() * (self.rho + self.tau)
    }
}

/// Builds `Z_[1,ρ+τ]` with `N = T − (ρ+τ) + 1` columns. Entry
/// `(block i, column j)` is `z(t0+i+j)/√N`.
pub fn build_hankel(traj: &Trajectory, rho: usize, tau: usize) -> Result<HankelStack> {
    traj.validate()?;
    let depth = rho + tau;
    if depth == 0 {
        return Err(TpcError::Dimension("rho + tau must be positive".into()));
    }
    let len = traj.len();
    if len < depth {
        return Err(TpcError::Dimension(format!(
            "trajectory of length {len} is shorter than rho + tau = {depth}"
        )));
    }
    let n = len - depth + 1;
    let (q, m) = (traj.q(), traj.m());
    let block = q + m;
    let scale = 1.0 / (n as f64).sqrt();
    let mut matrix = DMatrix::zeros(block * depth, n);
    for j in 0..n {
        for i in 0..depth {
            let k = i + j;
            for c in 0..q {
                matrix[(i * block + c, j)] = traj.y[(c, k)] * scale;
            }
            for c in 0..m {
                matrix[(i * block + q + c, j)] = traj.u[(c, k)] * scale;
            }
        }
    }
    Ok(HankelStack { matrix, rho, tau, layout: traj.layout.clone() })
}

/// Row indices of the three DeePC blocks under the interleaved layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HankelRows {
    pub past: Vec<usize>,
    pub future_u: Vec<usize>,
    pub future_y: Vec<usize>,
}

pub fn hankel_rows(q: usize, m: usize, rho: usize, tau: usize) -> HankelRows {
    let block = q + m;
    let past = (0..block * rho).collect();
    let future_u = (rho..rho + tau)
        .flat_map(|b| (0..m).map(move |c| b * block + q + c))
        .collect();
    let future_y = (rho..rho + tau)
        .flat_map(|b| (0..q).map(move |c| b * block + c))
        .collect();
    HankelRows { past, future_u, future_y }
}

/// Past-z, future-u and future-y row selections `(Z_p, U_f, Y_f)`.
pub fn split_hankel(h: &HankelStack) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if h.matrix.nrows() != h.n_rows() {
        return Err(TpcError::Dimension(format!(
            "hankel has {} rows, layout implies {}",
            h.matrix.nrows(),
            h.n_rows()
        )));
    }
    let rows = hankel_rows(h.q(), h.m(), h.rho, h.tau);
    Ok((
        h.matrix.select_rows(rows.past.iter()),
        h.matrix.select_rows(rows.future_u.iter()),
        h.matrix.select_rows(rows.future_y.iter()),
    ))
}

/// White-noise excitation settings. `amplitude` is the per-channel standard
/// deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcitationSpec {
    pub amplitude: f64,
    pub length: usize,
    pub channels: usize,
}

/// Zero-mean Gaussian white noise, `channels × length`, reproducible from the seed.
pub fn generate_excitation(spec: &ExcitationSpec, rng_seed: u64) -> DMatrix<f64> {
    if spec.amplitude <= 0.0 || !spec.amplitude.is_finite() {
        return DMatrix::zeros(spec.channels, spec.length);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let normal = Normal::new(0.0, spec.amplitude).expect("finite positive std");
    DMatrix::from_fn(spec.channels, spec.length, |_, _| normal.sample(&mut rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub rank: usize,
    pub rows: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
    /// `rank < rows`.
    pub deficient: bool,
}

/// Relative singular-value threshold used by [`excitation_rank_check`].
pub const RANK_THRESHOLD: f64 = 1e-8;

/// Numerical rank of the Hankel stack: singular values above
/// `1e-8 · σ_max` count. Advisory only.
pub fn excitation_rank_check(h: &HankelStack) -> RankReport {
    let rows = h.matrix.nrows();
    // The triangular factor of Zᵀ = QR carries the singular values of Z and is
    // at most rows × rows, which keeps the SVD cheap for long records.
    let sv = if h.matrix.ncols() > rows {
        let r = h.matrix.transpose().qr().r();
        r.singular_values()
    } else {
        h.matrix.singular_values()
    };
    let sigma_max = sv.iter().cloned().fold(0.0, f64::max);
    let mut sorted: Vec<f64> = sv.iter().cloned().collect();
    sorted.resize(rows, 0.0);
    let sigma_min = sorted.iter().cloned().fold(f64::INFINITY, f64::min);
    let rank = if sigma_max > 0.0 {
        sorted.iter().filter(|&&s| s > RANK_THRESHOLD * sigma_max).count()
    } else {
        0
    };
    RankReport { rank, rows, sigma_max, sigma_min, deficient: rank < rows }
}
