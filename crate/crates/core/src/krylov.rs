//! Right-preconditioned restarted GMRES for the cell and Newton solves.
//!
//! The preconditioned operators here are O(1) non-normal perturbations of
//! the identity; GMRES is monotone and free of the breakdowns that plague
//! short-recurrence methods on such systems.

use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve `A x = b` via GMRES(m) with right preconditioning.
///
/// Returns `(x, iterations, residual)` where the residual is the true
/// `||b - A x||_2` of the returned iterate.
pub fn gmres(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol_abs: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize, f64)> {
    let n = b.len();
    let restart = 60.min(max_iter.max(1));
    let mut x = vec![0.0; n];
    let mut total_iters = 0usize;

    loop {
        let ax = apply(&x);
        let r0: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r0);
        if !beta.is_finite() {
            return Err(Error::NonConvergence {
                iterations: total_iters,
                residual: beta,
            });
        }
        if beta <= tol_abs {
            return Ok((x, total_iters, beta));
        }
        if total_iters >= max_iter {
            return Err(Error::NonConvergence {
                iterations: total_iters,
                residual: beta,
            });
        }

        // Arnoldi with modified Gram-Schmidt
        let mut basis: Vec<Vec<f64>> = vec![r0.iter().map(|v| v / beta).collect()];
        let mut h: Vec<Vec<f64>> = Vec::new(); // h[j] has length j+2
        let mut cs: Vec<f64> = Vec::new();
        let mut sn: Vec<f64> = Vec::new();
        let mut g = vec![beta];
        let mut k_used = 0;

        for j in 0..restart {
            if total_iters >= max_iter {
                break;
            }
            total_iters += 1;
            let mut w = apply(&precond(&basis[j]));
            let mut hj = vec![0.0; j + 2];
            for (i, vi) in basis.iter().enumerate() {
                hj[i] = dot(&w, vi);
                for (wk, vk) in w.iter_mut().zip(vi) {
                    *wk -= hj[i] * vk;
                }
            }
            hj[j + 1] = norm(&w);
            // previous Givens rotations
            for i in 0..j {
                let t = cs[i] * hj[i] + sn[i] * hj[i + 1];
                hj[i + 1] = -sn[i] * hj[i] + cs[i] * hj[i + 1];
                hj[i] = t;
            }
            let denom = (hj[j] * hj[j] + hj[j + 1] * hj[j + 1]).sqrt();
            let (c, s) = if denom > 0.0 {
                (hj[j] / denom, hj[j + 1] / denom)
            } else {
                (1.0, 0.0)
            };
            cs.push(c);
            sn.push(s);
            g.push(-s * g[j]);
            g[j] *= c;
            hj[j] = denom;
            let happy = hj[j + 1] <= 1e-14 * beta;
            hj[j + 1] = 0.0;
            h.push(hj);
            k_used = j + 1;
            let res_est = g[j + 1].abs();
            if res_est <= tol_abs || happy {
                break;
            }
            let inv = 1.0 / norm(&w).max(1e-300);
            basis.push(w.iter().map(|v| v * inv).collect());
        }

        // back substitution for the least-squares coefficients
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for (l, yl) in y.iter().enumerate().skip(i + 1) {
                s -= h[l][i] * yl;
            }
            y[i] = s / h[i][i];
        }
        let mut update = vec![0.0; n];
        for (i, yi) in y.iter().enumerate() {
            for (u, v) in update.iter_mut().zip(&basis[i]) {
                *u += yi * v;
            }
        }
        let pu = precond(&update);
        for (xi, ui) in x.iter_mut().zip(&pu) {
            *xi += ui;
        }
    }
}
