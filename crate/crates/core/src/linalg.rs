//! Small linear-algebra kernels: shifted-Laplacian solves and dense m×m systems.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Conjugate gradients for `(-Δ + shift) x = rhs` in the grid's weighted inner product.
pub(crate) fn cg_solve(
    g: &Grid,
    shift: f64,
    rhs: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = g.len();
    let mut x = vec![0.0; n];
    let mut r: Vec<f64> = rhs
        .iter()
        .zip(g.interior())
        .map(|(&b, &inside)| if inside { b } else { 0.0 })
        .collect();
    let b_norm = g.dot(&r, &r).sqrt();
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = g.dot(&r, &r);
    for _ in 0..max_iter {
        g.neg_laplacian_into(&p, &mut ap);
        if shift != 0.0 {
            for (a, (&pi, &inside)) in ap.iter_mut().zip(p.iter().zip(g.interior())) {
                if inside {
                    *a += shift * pi;
                }
            }
        }
        let pap = g.dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::InvalidArgument(
                "shifted Laplacian is not positive definite".into(),
            ));
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = g.dot(&r, &r);
        if rr_new.sqrt() <= rel_tol * b_norm {
            return Ok(x);
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
    }
    Err(Error::Convergence { what: "conjugate gradients", iterations: max_iter })
}

/// Direct solve of the radial flux-form operator; the last node is the Dirichlet end.
pub(crate) fn radial_tridiagonal_solve(g: &Grid, faces: &[f64], shift: f64, rhs: &[f64]) -> Vec<f64> {
    let n = g.len();
    let m = n - 1;
    let w = g.weights();
    // symmetric form: W(-Δ + shift) x = W rhs
    let mut diag = vec![0.0; m];
    let mut off = vec![0.0; m.saturating_sub(1)];
    let mut b = vec![0.0; m];
    for k in 0..m {
        diag[k] = faces[k] + if k > 0 { faces[k - 1] } else { 0.0 } + shift * w[k];
        if k + 1 < m {
            off[k] = -faces[k];
        }
        b[k] = w[k] * rhs[k];
    }
    // Thomas algorithm
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    c[0] = if m > 1 { off[0] / diag[0] } else { 0.0 };
    d[0] = b[0] / diag[0];
    for k in 1..m {
        let denom = diag[k] - off[k - 1] * c[k - 1];
        c[k] = if k + 1 < m { off[k] / denom } else { 0.0 };
        d[k] = (b[k] - off[k - 1] * d[k - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[m - 1] = d[m - 1];
    for k in (0..m - 1).rev() {
        x[k] = d[k] - c[k] * x[k + 1];
    }
    x
}

/// Gaussian elimination with partial pivoting. `None` when a pivot falls below
/// `1e-14 · max|a_ij|`.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let m = b.len();
    let scale = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    let mut lu: Vec<Vec<f64>> = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&i, &j| lu[i][col].abs().total_cmp(&lu[j][col].abs()))
            .unwrap();
        if lu[piv][col].abs() < 1e-14 * scale {
            return None;
        }
        lu.swap(col, piv);
        x.swap(col, piv);
        for row in col + 1..m {
            let f = lu[row][col] / lu[col][col];
            if f != 0.0 {
                for k in col..m {
                    lu[row][k] -= f * lu[col][k];
                }
                x[row] -= f * x[col];
            }
        }
    }
    for col in (0..m).rev() {
        let s: f64 = (col + 1..m).map(|k| lu[col][k] * x[k]).sum();
        x[col] = (x[col] - s) / lu[col][col];
    }
    Some(x)
}

/// True when the symmetric matrix admits a Cholesky factorization (positive definite).
pub fn cholesky_succeeds(a: &[Vec<f64>]) -> bool {
    let m = a.len();
    let mut l = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return false;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    true
}
