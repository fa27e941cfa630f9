//! Small dense Cholesky kept in-crate so rank problems can name the
//! offending column, which nalgebra's factorization does not report.

use nalgebra::{DMatrix, DVector};

/// Lower-triangular L with A = L·Lᵀ for a symmetric matrix given in full
/// storage. `Err(j)` means column j failed positivity, i.e. is zero or
/// (numerically) linearly dependent on columns 0..j.
pub(crate) fn cholesky_named(a: &DMatrix<f64>) -> Result<DMatrix<f64>, usize> {
    let k = a.nrows();
    debug_assert_eq!(k, a.ncols());
    let mut l = DMatrix::<f64>::zeros(k, k);
    for j in 0..k {
        let mut d = a[(j, j)];
        for m in 0..j {
            d -= l[(j, m)] * l[(j, m)];
        }
        if !(d > a[(j, j)].abs() * 1e-12 + 1e-300) {
            return Err(j);
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..k {
            let mut s = a[(i, j)];
            for m in 0..j {
                s -= l[(i, m)] * l[(j, m)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(l)
}

/// Solve A·x = b given L from [`cholesky_named`].
pub(crate) fn chol_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let k = l.nrows();
    let mut x = b.clone();
    for i in 0..k {
        let mut s = x[i];
        for m in 0..i {
            s -= l[(i, m)] * x[m];
        }
        x[i] = s / l[(i, i)];
    }
    for i in (0..k).rev() {
        let mut s = x[i];
        for m in (i + 1)..k {
            s -= l[(m, i)] * x[m];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// A⁻¹ given L from [`cholesky_named`].
pub(crate) fn chol_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let k = l.nrows();
    let mut inv = DMatrix::<f64>::zeros(k, k);
    let mut e = DVector::<f64>::zeros(k);
    for j in 0..k {
        e.fill(0.0);
        e[j] = 1.0;
        let col = chol_solve(l, &e);
        inv.set_column(j, &col);
    }
    // symmetrize away the last rounding
    for i in 0..k {
        for j in (i + 1)..k {
            let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = v;
            inv[(j, i)] = v;
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_solve_invert_roundtrip() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let l = cholesky_named(&a).unwrap();
        let b = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let x = chol_solve(&l, &b);
        let r = &a * &x - &b;
        assert!(r.amax() < 1e-12);
        let inv = chol_inverse(&l);
        let id = &a * &inv;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn names_dependent_column() {
        // column 2 = column 0 + column 1
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 2.0, 3.0, 1.0, 3.0, 4.0]);
        let gram = x.transpose() * &x;
        assert_eq!(cholesky_named(&gram), Err(2));
    }

    #[test]
    fn names_zero_column() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let gram = x.transpose() * &x;
        assert_eq!(cholesky_named(&gram), Err(1));
    }
}
