//! Lawson-Hanson nonnegative least squares.
//!
//! Solves `min ||A eta - v||` over `eta >= 0` where A is given by its
//! columns. The passive-set least-squares subproblems are re-solved from
//! scratch with the QR kernel from [`crate::linalg`]; the systems here never
//! exceed a handful of columns.

use crate::linalg::{axpy, dot, lstsq, norm2, sub};

/// Outcome of an NNLS solve.
#[derive(Clone, Debug)]
pub struct NnlsResult {
    /// Nonnegative coefficients, one per column of A.
    pub x: Vec<f64>,
    /// Residual 2-norm `||A x - v||`.
    pub residual: f64,
}

/// Solve `min ||sum_j x_j col_j - v||` subject to `x >= 0`.
pub fn nnls(cols: &[Vec<f64>], v: &[f64]) -> NnlsResult {
    let k = cols.len();
    if k == 0 {
        return NnlsResult { x: vec![], residual: norm2(v) };
    }
    let scale = cols
        .iter()
        .map(|c| norm2(c))
        .chain(std::iter::once(norm2(v)))
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let tol = 1e-12 * scale;

    let mut x = vec![0.0; k];
    let mut passive = vec![false; k];
    let residual_vec = |x: &[f64]| -> Vec<f64> {
        let mut r = v.to_vec();
        for (c, xj) in cols.iter().zip(x) {
            axpy(-*xj, c, &mut r);
        }
        r
    };

    for _outer in 0..10 * k + 20 {
        let r = residual_vec(&x);
        // Dual w_j = col_j . r; optimal when w <= tol outside the passive set.
        let mut best = None;
        for j in 0..k {
            if !passive[j] {
                let w = dot(&cols[j], &r);
                if w > tol {
                    match best {
                        None => best = Some((j, w)),
                        Some((_, bw)) if w > bw => best = Some((j, w)),
                        _ => {}
                    }
                }
            }
        }
        let Some((jin, _)) = best else {
            return NnlsResult { residual: norm2(&r), x };
        };
        passive[jin] = true;

        loop {
            // Unconstrained LS on the passive columns.
            let idx: Vec<usize> = (0..k).filter(|&j| passive[j]).collect();
            let rows_t: Vec<Vec<f64>> = (0..v.len())
                .map(|i| idx.iter().map(|&j| cols[j][i]).collect())
                .collect();
            let z = lstsq(&rows_t, v).x;
            if z.iter().all(|&zj| zj > tol) {
                for xj in x.iter_mut() {
                    *xj = 0.0;
                }
                for (t, &j) in idx.iter().enumerate() {
                    x[j] = z[t];
                }
                break;
            }
            // Step toward z until the first passive coefficient hits zero.
            let mut alpha = f64::INFINITY;
            for (t, &j) in idx.iter().enumerate() {
                if z[t] <= tol {
                    let denom = x[j] - z[t];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (t, &j) in idx.iter().enumerate() {
                x[j] += alpha * (z[t] - x[j]);
            }
            let mut dropped = false;
            for &j in &idx {
                if passive[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                    dropped = true;
                }
            }
            if !dropped {
                // Numerical stall: accept clamped z.
                for (t, &j) in idx.iter().enumerate() {
                    x[j] = z[t].max(0.0);
                }
                break;
            }
        }
    }
    let r = residual_vec(&x);
    NnlsResult { residual: norm2(&r), x }
}

/// Among exact fits (`||A eta - v|| <= tol`), find the minimum-Euclidean-norm
/// nonnegative solution by enumerating supports. Falls back to the NNLS
/// answer when the column count makes enumeration unreasonable.
pub fn min_norm_nonneg_fit(cols: &[Vec<f64>], v: &[f64], tol: f64) -> Option<Vec<f64>> {
    let k = cols.len();
    let base = nnls(cols, v);
    if base.residual > tol {
        return None;
    }
    if k > 12 {
        return Some(base.x);
    }
    let mut best = base.x.clone();
    let mut best_norm = norm2(&best);
    for mask in 0u32..(1u32 << k) {
        let idx: Vec<usize> = (0..k).filter(|j| mask >> j & 1 == 1).collect();
        let sub_cols: Vec<Vec<f64>> = idx.iter().map(|&j| cols[j].clone()).collect();
        let Some(eta_s) = crate::linalg::min_norm_solution(&sub_cols, v, tol) else {
            continue;
        };
        if eta_s.iter().any(|&e| e < -tol) {
            continue;
        }
        let mut eta = vec![0.0; k];
        for (t, &j) in idx.iter().enumerate() {
            eta[j] = eta_s[t].max(0.0);
        }
        // Re-check the fit after clipping.
        let mut fit = vec![0.0; v.len()];
        for (c, e) in cols.iter().zip(&eta) {
            axpy(*e, c, &mut fit);
        }
        if norm2(&sub(&fit, v)) > tol {
            continue;
        }
        let nrm = norm2(&eta);
        if nrm < best_norm - 1e-15 {
            best_norm = nrm;
            best = eta;
        }
    }
    Some(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_nonneg_combination() {
        let cols = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let r = nnls(&cols, &[2.0, 3.0]);
        assert!(r.residual < 1e-12);
        assert!((r.x[0] - 2.0).abs() < 1e-12 && (r.x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn clamps_negative_fit() {
        // v = -col: best nonnegative fit is x = 0 with residual ||v||.
        let cols = vec![vec![1.0, 0.0]];
        let r = nnls(&cols, &[-1.0, 0.0]);
        assert!(r.x[0].abs() < 1e-12);
        assert!((r.residual - 1.0).abs() < 1e-12);
    }

    #[test]
    fn picks_min_norm_among_exact_fits() {
        // Duplicate columns: (2,0) = a*c1 + b*c2 with a+b = 2; min norm -> (1,1).
        let cols = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let eta = min_norm_nonneg_fit(&cols, &[2.0, 0.0], 1e-10).unwrap();
        assert!((eta[0] - 1.0).abs() < 1e-8 && (eta[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn overdetermined_residual() {
        let cols = vec![vec![1.0, 1.0, 1.0]];
        let r = nnls(&cols, &[1.0, 2.0, 3.0]);
        // Best x = 2, residual sqrt(2).
        assert!((r.x[0] - 2.0).abs() < 1e-10);
        assert!((r.residual - 2.0_f64.sqrt()).abs() < 1e-10);
    }
}
