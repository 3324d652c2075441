//! Small dense linear-algebra helpers: stationary Lyapunov equations,
//! observer pole placement, and norm/eigenvalue utilities.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Solve the stationary Lyapunov equation `M' P + P M = -Q` for symmetric P
/// via the Kronecker vectorization trick. Sizes here are tiny (n <= 4).
pub fn solve_lyapunov(m: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::InvalidBounds {
            detail: "Lyapunov equation needs square matrices of equal size".into(),
        });
    }
    // vec(M'P + PM) = (I kron M' + M' kron I) vec(P), column-major vec.
    let mt = m.transpose();
    let mut big = DMatrix::zeros(n * n, n * n);
    for col in 0..n {
        for row in 0..n {
            let out = col * n + row;
            for k in 0..n {
                big[(out, col * n + k)] += mt[(row, k)];
                big[(out, k * n + row)] += mt[(col, k)];
            }
        }
    }
    let rhs = DVector::from_iterator(n * n, (0..n * n).map(|i| -q[(i % n, i / n)]));
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidBounds { detail: "singular Lyapunov operator".into() })?;
    let p = DMatrix::from_iterator(n, n, sol.iter().copied());
    // symmetrize away rounding
    Ok((&p + p.transpose()) * 0.5)
}

/// Observability matrix [C; CA; ...; CA^{n-1}].
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let p = c.nrows();
    let mut rows = DMatrix::zeros(n * p, n);
    let mut block = c.clone();
    for i in 0..n {
        rows.view_mut((i * p, 0), (p, n)).copy_from(&block);
        block = &block * a;
    }
    rows
}

/// Observer gain K with eig(A - K C) at `poles`, via Ackermann's formula on
/// the observability matrix. Single-output pairs only, real poles.
pub fn place_observer_gain(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    poles: &[f64],
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if c.nrows() != 1 {
        return Err(Error::InvalidConfig {
            detail: "pole placement implemented for single-output pairs".into(),
        });
    }
    if poles.len() != n {
        return Err(Error::InvalidConfig {
            detail: format!("need {n} poles, got {}", poles.len()),
        });
    }
    let obsv = observability_matrix(a, c);
    if obsv.clone().lu().is_invertible() == false {
        return Err(Error::UnstabilizablePair);
    }
    // q(A) = prod_i (A - p_i I)
    let mut qa = DMatrix::identity(n, n);
    for &p in poles {
        qa = qa * (a - DMatrix::identity(n, n) * p);
    }
    let inv = obsv.lu().solve(&DMatrix::identity(n, n)).ok_or(Error::UnstabilizablePair)?;
    let mut e_last = DVector::zeros(n);
    e_last[n - 1] = 1.0;
    let k = qa * inv * e_last;
    Ok(DMatrix::from_column_slice(n, 1, k.as_slice()))
}

/// (min, max) eigenvalue of a symmetric matrix.
pub fn sym_eig_bounds(p: &DMatrix<f64>) -> (f64, f64) {
    let eig = p.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eig_sym(m: &DMatrix<f64>) -> f64 {
    sym_eig_bounds(m).1
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Real parts of the eigenvalues (for Hurwitz checks).
pub fn eigenvalue_real_parts(m: &DMatrix<f64>) -> Vec<f64> {
    m.complex_eigenvalues().iter().map(|c| c.re).collect()
}
