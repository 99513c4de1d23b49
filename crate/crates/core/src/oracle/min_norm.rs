//! Minimum-Frobenius-norm reconstructions of `P` from `h P = v`.
//!
//! The closed forms are what the optimizer relies on implicitly; the numeric
//! solvers pose the same equality-constrained least-squares problem over the
//! vectorised matrix and solve its KKT system directly, so they share no
//! algebra with the closed forms.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_len, Error, Result};
use crate::vector::norm_sq;

fn nonzero_norm_sq(h: &[f64], context: &'static str) -> Result<f64> {
    let x = norm_sq(h);
    if x > 0.0 {
        Ok(x)
    } else {
        Err(Error::ZeroGradient { context })
    }
}

/// `P = h^T v / |h|^2`.
pub fn min_norm_p_vanilla(h: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
    ensure_len("min-norm: v", h.len(), v.len())?;
    let x = nonzero_norm_sq(h, "vanilla min-norm reconstruction")?;
    let n = h.len();
    Ok(DMatrix::from_fn(n, n, |i, j| h[i] * v[j] / x))
}

/// `P = (h^T v + v^T h) / |h|^2 - (h v^T) h^T h / |h|^4`.
pub fn min_norm_p_symmetric(h: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
    ensure_len("min-norm: v", h.len(), v.len())?;
    let x = nonzero_norm_sq(h, "symmetric min-norm reconstruction")?;
    let y = crate::vector::dot(h, v);
    let n = h.len();
    let c = y / (x * x);
    // fill the upper triangle and mirror so the result is exactly symmetric
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let value = (h[i] * v[j] + v[i] * h[j]) / x - c * h[i] * h[j];
            p[(i, j)] = value;
            p[(j, i)] = value;
        }
    }
    Ok(p)
}

/// Above this KKT dimension [`numeric_min_norm_solve`] switches from the
/// assembled system to block elimination.
const FULL_KKT_MAX_DIM: usize = 300;

/// Numeric minimum-norm solve of `min |P|_F^2  s.t.  h P = v` (and `P = P^T`).
pub fn numeric_min_norm_solve(h: &[f64], v: &[f64], symmetric: bool) -> Result<DMatrix<f64>> {
    let n = h.len();
    let kkt_dim = n * n + n + if symmetric { n * n.saturating_sub(1) / 2 } else { 0 };
    if kkt_dim <= FULL_KKT_MAX_DIM {
        numeric_min_norm_solve_full(h, v, symmetric)
    } else {
        numeric_min_norm_solve_schur(h, v, symmetric)
    }
}

/// Assembles the full KKT matrix over `vec(P)` (row-major, `n^2` unknowns)
/// with explicit `P_ij - P_ji = 0` rows for the symmetric case and
/// LU-factorises it.
///
/// ```text
/// [ 2I  A^T ] [ x  ]   [ 0 ]
/// [ A   0   ] [ mu ] = [ b ]
/// ```
pub fn numeric_min_norm_solve_full(h: &[f64], v: &[f64], symmetric: bool) -> Result<DMatrix<f64>> {
    ensure_len("numeric min-norm: v", h.len(), v.len())?;
    let n = h.len();
    let vars = n * n;
    let sym_rows = if symmetric { n * n.saturating_sub(1) / 2 } else { 0 };
    let cons = n + sym_rows;
    let dim = vars + cons;
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for k in 0..vars {
        kkt[(k, k)] = 2.0;
    }
    let put = |row: usize, col: usize, value: f64, kkt: &mut DMatrix<f64>| {
        kkt[(vars + row, col)] = value;
        kkt[(col, vars + row)] = value;
    };
    // (h P)_j = sum_i h_i P_ij
    for j in 0..n {
        for (i, hi) in h.iter().enumerate() {
            put(j, i * n + j, *hi, &mut kkt);
        }
        rhs[vars + j] = v[j];
    }
    let mut row = n;
    if symmetric {
        for i in 0..n {
            for j in (i + 1)..n {
                put(row, i * n + j, 1.0, &mut kkt);
                put(row, j * n + i, -1.0, &mut kkt);
                row += 1;
            }
        }
    }
    let sol = kkt.lu().solve(&rhs).ok_or(Error::SingularKkt { n })?;
    if !sol.iter().all(|x| x.is_finite()) {
        return Err(Error::SingularKkt { n });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| sol[i * n + j]))
}

/// Same problem with the symmetric case parametrised by the upper triangle
/// (off-diagonal entries weighted 2 in the norm). The diagonal Hessian block is
/// eliminated, leaving the `n x n` system `A W^-1 A^T mu = b`, which is
/// LU-factorised.
pub fn numeric_min_norm_solve_schur(h: &[f64], v: &[f64], symmetric: bool) -> Result<DMatrix<f64>> {
    ensure_len("numeric min-norm: v", h.len(), v.len())?;
    let n = h.len();
    // unknown index -> (i, j) entry it stands for, and its weight in |P|_F^2
    let unknowns: Vec<(usize, usize, f64)> = if symmetric {
        (0..n)
            .flat_map(|i| (i..n).map(move |j| (i, j, if i == j { 1.0 } else { 2.0 })))
            .collect()
    } else {
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j, 1.0))).collect()
    };
    let m = unknowns.len();
    // A[c, k] = d (h P)_c / d x_k
    let mut a = DMatrix::<f64>::zeros(n, m);
    for (k, &(i, j, _)) in unknowns.iter().enumerate() {
        a[(j, k)] += h[i];
        if symmetric && i != j {
            a[(i, k)] += h[j];
        }
    }
    let w_inv = DVector::from_iterator(m, unknowns.iter().map(|u| 1.0 / u.2));
    let a_winv = DMatrix::from_fn(n, m, |r, k| a[(r, k)] * w_inv[k]);
    let gram = &a_winv * a.transpose();
    let b = DVector::from_column_slice(v);
    let mu = gram.lu().solve(&b).ok_or(Error::SingularKkt { n })?;
    let x = a_winv.transpose() * mu;
    if !x.iter().all(|e| e.is_finite()) {
        return Err(Error::SingularKkt { n });
    }
    let mut p = DMatrix::zeros(n, n);
    for (k, &(i, j, _)) in unknowns.iter().enumerate() {
        p[(i, j)] = x[k];
        if symmetric {
            p[(j, i)] = x[k];
        }
    }
    Ok(p)
}
