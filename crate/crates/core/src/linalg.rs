//! Allocation-free dense Cholesky kernels on column-major `DMatrix` storage.

use nalgebra::DMatrix;

/// Overwrites the lower triangle of `a` with its Cholesky factor. The strict
/// upper triangle is left untouched and never read. Returns the failing pivot
/// index when `a` is not numerically positive definite.
pub(crate) fn cholesky_in_place(a: &mut DMatrix<f64>) -> Result<(), usize> {
    let n = a.nrows();
    debug_assert!(a.is_square());
    let data = a.as_mut_slice();
    for j in 0..n {
        let (done, rest) = data.split_at_mut(j * n);
        let col_j = &mut rest[..n];
        for k in 0..j {
            let col_k = &done[k * n..(k + 1) * n];
            let ljk = col_k[j];
            if ljk != 0.0 {
                for i in j..n {
                    col_j[i] -= ljk * col_k[i];
                }
            }
        }
        let d = col_j[j];
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        let d = d.sqrt();
        col_j[j] = d;
        let inv = 1.0 / d;
        for v in &mut col_j[j + 1..] {
            *v *= inv;
        }
    }
    Ok(())
}

/// Solves `L Lᵀ x = b` in place given the factor from [`cholesky_in_place`].
pub(crate) fn cholesky_solve_in_place(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    debug_assert_eq!(b.len(), n);
    let data = l.as_slice();
    for j in 0..n {
        let col = &data[j * n..(j + 1) * n];
        b[j] /= col[j];
        let bj = b[j];
        if bj != 0.0 {
            for i in j + 1..n {
                b[i] -= col[i] * bj;
            }
        }
    }
    for j in (0..n).rev() {
        let col = &data[j * n..(j + 1) * n];
        let mut acc = b[j];
        for i in j + 1..n {
            acc -= col[i] * b[i];
        }
        b[j] = acc / col[j];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_and_solve_spd_system() {
        let m = DMatrix::from_fn(5, 5, |i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0);
        let a = &m * m.transpose() + DMatrix::identity(5, 5);
        let mut l = a.clone();
        cholesky_in_place(&mut l).unwrap();
        let mut x = vec![1.0, -2.0, 0.5, 3.0, 0.0];
        let b = nalgebra::DVector::from_column_slice(&x);
        cholesky_solve_in_place(&l, &mut x);
        let r = &a * nalgebra::DVector::from_column_slice(&x) - b;
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn indefinite_matrix_reports_pivot() {
        let mut a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(cholesky_in_place(&mut a), Err(1));
    }
}
