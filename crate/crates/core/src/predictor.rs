//! Offline estimation of the causal multistep predictor `Ĥ = [Ĥ_p Ĥ_u]`.
//!
//! The estimator factors the Hankel stack as `Z = L·Q`, drops the
//! per-timestep diagonal blocks of `L`, regresses every future output row on
//! the rows preceding it (`Φ̂ = L⁰_y L⁻¹`) and finally unrolls the one-step
//! regressions into a `τ`-step map by solving `(I − Φ̂_y) Ĥ = [Φ̂_p Φ̂_u]`.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TpcError};
use crate::hankel::{hankel_rows, HankelStack, SignalLayout};

/// Channel counts and horizons shared by every predictor-shaped object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub m: usize,
    pub q: usize,
    pub rho: usize,
    pub tau: usize,
}

impl Dims {
    pub fn block(&self) -> usize {
        self.q + self.m
    }

    /// Length of the lead-in `z_p`.
    pub fn past_len(&self) -> usize {
        self.block() * self.rho
    }

    pub fn uf_len(&self) -> usize {
        self.m * self.tau
    }

    pub fn yf_len(&self) -> usize {
        self.q * self.tau
    }

    pub fn stack_rows(&self) -> usize {
        self.block() * (self.rho + self.tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    /// Relative threshold on `L`'s diagonal below which the stack is treated
    /// as rank deficient.
    pub singular_tol: f64,
    /// Allowed upper block-triangle mass of `Ĥ_u`, relative to `‖Ĥ_u‖_F`.
    pub causality_tol: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions { singular_tol: 1e-10, causality_tol: 1e-10 }
    }
}

/// Intermediate quantities of the estimator, kept for inspection and tests.
#[derive(Debug, Clone)]
pub struct PhiDecomposition {
    pub l: DMatrix<f64>,
    pub l0: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub dims: Dims,
}

impl PhiDecomposition {
    pub fn phi_p(&self) -> DMatrix<f64> {
        self.phi.columns(0, self.dims.past_len()).into_owned()
    }

    pub fn phi_u(&self) -> DMatrix<f64> {
        let rows = hankel_rows(self.dims.q, self.dims.m, self.dims.rho, self.dims.tau);
        self.phi.select_columns(rows.future_u.iter())
    }

    pub fn phi_y(&self) -> DMatrix<f64> {
        let rows = hankel_rows(self.dims.q, self.dims.m, self.dims.rho, self.dims.tau);
        self.phi.select_columns(rows.future_y.iter())
    }
}

/// `ŷ_f = Ĥ_p z_p + Ĥ_u u_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultistepPredictor {
    pub hp: DMatrix<f64>,
    pub hu: DMatrix<f64>,
    pub dims: Dims,
    pub layout: SignalLayout,
}

/// Lower-triangular `L` with nonnegative diagonal such that `Z = L·Q`, `QQᵀ = I`.
///
/// Computed from the Householder QR of `Zᵀ`. Fails when a diagonal entry
/// drops below `singular_tol · max|L_ii|`, naming the first such row.
pub fn lq_factorize(h: &HankelStack, singular_tol: f64) -> Result<DMatrix<f64>> {
    let rows = h.matrix.nrows();
    let n = h.matrix.ncols();
    if n < rows {
        return Err(TpcError::Dimension(format!(
            "hankel stack has {n} columns but {rows} rows; at least {rows} samples windows are needed"
        )));
    }
    let mut r = h.matrix.transpose().qr().r();
    for i in 0..rows {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
        }
    }
    let l = r.transpose();
    check_diagonal(&l, singular_tol).map_err(|(row, value, threshold)| {
        TpcError::SingularFactorization { row, value, threshold }
    })?;
    Ok(l)
}

fn check_diagonal(l: &DMatrix<f64>, tol: f64) -> std::result::Result<(), (usize, f64, f64)> {
    let max_diag = l.diagonal().iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let threshold = tol * max_diag;
    match (0..l.nrows()).find(|&i| !(l[(i, i)].abs() > threshold)) {
        Some(row) => Err((row, l[(row, row)].abs(), threshold)),
        None => Ok(()),
    }
}

/// Copy of `l` with its `block_size × block_size` diagonal blocks set to zero.
pub fn zero_block_diagonal(l: &DMatrix<f64>, block_size: usize) -> Result<DMatrix<f64>> {
    if block_size == 0 || !l.is_square() || l.nrows() % block_size != 0 {
        return Err(TpcError::Dimension(format!(
            "{}x{} factor cannot be split into {block_size}-blocks",
            l.nrows(),
            l.ncols()
        )));
    }
    let mut l0 = l.clone();
    for b in 0..l.nrows() / block_size {
        l0.view_mut((b * block_size, b * block_size), (block_size, block_size)).fill(0.0);
    }
    Ok(l0)
}

/// The `qτ` rows of `L⁰` belonging to future outputs.
pub fn extract_y_rows(l0: &DMatrix<f64>, dims: &Dims) -> Result<DMatrix<f64>> {
    if l0.nrows() != dims.stack_rows() {
        return Err(TpcError::Dimension(format!(
            "factor has {} rows, dims imply {}",
            l0.nrows(),
            dims.stack_rows()
        )));
    }
    let rows = hankel_rows(dims.q, dims.m, dims.rho, dims.tau);
    Ok(l0.select_rows(rows.future_y.iter()))
}

/// `Φ̂ = L⁰_y L⁻¹`, obtained row by row from `Φ̂ L = L⁰_y` by back-substitution.
pub fn compute_phi(l0_y: &DMatrix<f64>, l: &DMatrix<f64>, singular_tol: f64) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    if !l.is_square() || l0_y.ncols() != n {
        return Err(TpcError::Dimension(format!(
            "cannot solve {}x{} against {}x{} factor",
            l0_y.nrows(),
            l0_y.ncols(),
            l.nrows(),
            l.ncols()
        )));
    }
    check_diagonal(l, singular_tol)
        .map_err(|(row, value, threshold)| TpcError::Conditioning { row, value, threshold })?;
    let mut phi = DMatrix::zeros(l0_y.nrows(), n);
    for r in 0..l0_y.nrows() {
        for j in (0..n).rev() {
            let mut acc = l0_y[(r, j)];
            for i in j + 1..n {
                acc -= phi[(r, i)] * l[(i, j)];
            }
            phi[(r, j)] = acc / l[(j, j)];
        }
    }
    Ok(phi)
}

/// `Ĥ = (I − Φ̂_y)⁻¹ [Φ̂_p Φ̂_u]` by forward substitution on the unit lower
/// triangular system.
pub fn assemble_predictor(phi: &DMatrix<f64>, dims: Dims, layout: SignalLayout) -> Result<MultistepPredictor> {
    if phi.nrows() != dims.yf_len() || phi.ncols() != dims.stack_rows() {
        return Err(TpcError::Dimension(format!(
            "phi is {}x{}, dims imply {}x{}",
            phi.nrows(),
            phi.ncols(),
            dims.yf_len(),
            dims.stack_rows()
        )));
    }
    let cols = hankel_rows(dims.q, dims.m, dims.rho, dims.tau);
    let past = dims.past_len();
    let mut hp = phi.columns(0, past).into_owned();
    let mut hu = phi.select_columns(cols.future_u.iter());
    let phi_y = phi.select_columns(cols.future_y.iter());
    for r in 0..dims.yf_len() {
        for s in 0..r {
            let a = phi_y[(r, s)];
            if a != 0.0 {
                for c in 0..past {
                    hp[(r, c)] += a * hp[(s, c)];
                }
                for c in 0..dims.uf_len() {
                    hu[(r, c)] += a * hu[(s, c)];
                }
            }
        }
    }
    let predictor = MultistepPredictor { hp, hu, dims, layout };
    if predictor.hp.iter().chain(predictor.hu.iter()).any(|v| !v.is_finite()) {
        return Err(TpcError::Numerical("non-finite entry in assembled predictor".into()));
    }
    Ok(predictor)
}

/// Runs the full estimator, returning the intermediate factors as well.
pub fn estimate_with_decomposition(
    h: &HankelStack,
    opts: &EstimatorOptions,
) -> Result<(MultistepPredictor, PhiDecomposition)> {
    let dims = Dims { m: h.m(), q: h.q(), rho: h.rho, tau: h.tau };
    if dims.tau == 0 {
        return Err(TpcError::Dimension("tau must be positive".into()));
    }
    let l = lq_factorize(h, opts.singular_tol)?;
    let l0 = zero_block_diagonal(&l, dims.block())?;
    let l0_y = extract_y_rows(&l0, &dims)?;
    let phi = compute_phi(&l0_y, &l, opts.singular_tol)?;
    let predictor = assemble_predictor(&phi, dims, h.layout.clone())?;
    let violation = predictor.causality_violation();
    let scale = predictor.hu.norm();
    if violation > opts.causality_tol * scale.max(f64::MIN_POSITIVE) {
        return Err(TpcError::Numerical(format!(
            "estimated predictor violates causality: {violation:.3e} vs ‖H_u‖ = {scale:.3e}"
        )));
    }
    Ok((predictor, PhiDecomposition { l, l0, phi, dims }))
}

/// Estimates `Ĥ` from the Hankel stack.
pub fn estimate(h: &HankelStack, opts: &EstimatorOptions) -> Result<MultistepPredictor> {
    estimate_with_decomposition(h, opts).map(|(p, _)| p)
}

impl MultistepPredictor {
    pub fn predict(&self, z_p: &DVector<f64>, u_f: &DVector<f64>) -> Result<DVector<f64>> {
        if z_p.len() != self.dims.past_len() || u_f.len() != self.dims.uf_len() {
            return Err(TpcError::Dimension(format!(
                "expected z_p of length {} and u_f of length {}, got {} and {}",
                self.dims.past_len(),
                self.dims.uf_len(),
                z_p.len(),
                u_f.len()
            )));
        }
        Ok(&self.hp * z_p + &self.hu * u_f)
    }

    /// Frobenius norm of the blocks `(k, j)`, `j > k`, of `Ĥ_u`: the part of
    /// the prediction of `y(t+k)` that would depend on later inputs.
    pub fn causality_violation(&self) -> f64 {
        let (q, m, tau) = (self.dims.q, self.dims.m, self.dims.tau);
        let mut acc = 0.0;
        for k in 0..tau {
            for j in k + 1..tau {
                acc += self.hu.view((k * q, j * m), (q, m)).norm_squared();
            }
        }
        acc.sqrt()
    }

    /// Artifact format: one line `m,q,rho,tau`, then the `qτ` rows of `H_p`
    /// followed by the `qτ` rows of `H_u`, comma separated, 17 significant digits.
    pub fn write_artifact<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dims;
        writeln!(w, "{},{},{},{}", d.m, d.q, d.rho, d.tau)?;
        for mat in [&self.hp, &self.hu] {
            for r in 0..mat.nrows() {
                let line: Vec<String> = mat.row(r).iter().map(|v| format!("{v:.16e}")).collect();
                writeln!(w, "{}", line.join(","))?;
            }
        }
        Ok(())
    }

    /// Reads an artifact; `layout` defaults to generic channel names.
    pub fn read_artifact<R: Read>(r: R, layout: Option<SignalLayout>) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| TpcError::Parse("empty predictor artifact".into()))??;
        let nums: Vec<usize> = header
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| TpcError::Parse(format!("bad artifact header `{header}`: {e}")))?;
        let [m, q, rho, tau] = nums[..] else {
            return Err(TpcError::Parse(format!("artifact header needs 4 fields, got `{header}`")));
        };
        let dims = Dims { m, q, rho, tau };
        let mut read_block = |rows: usize, cols: usize| -> Result<DMatrix<f64>> {
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let line = lines
                    .next()
                    .ok_or_else(|| TpcError::Parse(format!("artifact truncated at matrix row {r}")))??;
                let before = data.len();
                for field in line.split(',') {
                    data.push(field.trim().parse::<f64>().map_err(|e| {
                        TpcError::Parse(format!("bad artifact value `{field}`: {e}"))
                    })?);
                }
                if data.len() - before != cols {
                    return Err(TpcError::Parse(format!(
                        "artifact row has {} values, expected {cols}",
                        data.len() - before
                    )));
                }
            }
            Ok(DMatrix::from_row_slice(rows, cols, &data))
        };
        let hp = read_block(dims.yf_len(), dims.past_len())?;
        let hu = read_block(dims.yf_len(), dims.uf_len())?;
        let layout = layout.unwrap_or_else(|| SignalLayout::generic(q, m));
        if layout.q() != q || layout.m() != m {
            return Err(TpcError::Dimension(format!(
                "layout (q={}, m={}) does not match artifact (q={q}, m={m})",
                layout.q(),
                layout.m()
            )));
        }
        Ok(MultistepPredictor { hp, hu, dims, layout })
    }
}
