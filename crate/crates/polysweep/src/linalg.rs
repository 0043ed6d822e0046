//! Small dense linear-algebra helpers on plain `Vec<f64>` storage.
//!
//! Everything in this crate works with matrices of a few dozen rows at most,
//! so the kernels below favor clarity and numerical robustness (Householder
//! QR with column pivoting) over speed.

/// Dot product.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Euclidean norm.
pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Max-abs norm.
pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// y += a * x
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// x - y as a new vector.
pub fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

/// x + y as a new vector.
pub fn add(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a + b).collect()
}

/// c * x as a new vector.
pub fn scale(c: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| c * v).collect()
}

/// Dense matrix stored row-major as a list of rows.
pub type Rows = Vec<Vec<f64>>;

/// A * x where `a` holds the rows of A.
pub fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| dot(row, x)).collect()
}

/// A^T * y where `a` holds the rows of A (so columns of A^T).
pub fn mat_t_vec(a: &[Vec<f64>], y: &[f64], ncols: usize) -> Vec<f64> {
    let mut out = vec![0.0; ncols];
    for (row, yi) in a.iter().zip(y) {
        axpy(*yi, row, &mut out);
    }
    out
}

/// Result of a column-pivoted Householder QR least-squares solve.
pub struct LstsqResult {
    /// A basic solution of min ||A x - b|| (zero on dependent columns).
    pub x: Vec<f64>,
    /// Residual 2-norm ||A x - b||.
    pub residual: f64,
    /// Numerical rank of A at the relative tolerance used.
    pub rank: usize,
}

/// Least squares via Householder QR with column pivoting.
///
/// `rows` holds the m rows of A (each of length n). Handles rank-deficient
/// systems by truncating at a relative pivot tolerance and returning the
/// basic solution on the pivoted columns.
pub fn lstsq(rows: &[Vec<f64>], b: &[f64]) -> LstsqResult {
    let m = rows.len();
    let n = if m == 0 { 0 } else { rows[0].len() };
    if m == 0 || n == 0 {
        return LstsqResult { x: vec![0.0; n], residual: norm2(b), rank: 0 };
    }
    // Column-major working copy.
    let mut col: Vec<Vec<f64>> = (0..n).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let mut rhs = b.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let kmax = m.min(n);
    let mut rank = kmax;
    let scale0 = col
        .iter()
        .map(|c| norm2(c))
        .fold(0.0_f64, f64::max)
        .max(1e-300);
    let tol = 1e-12 * scale0;

    for k in 0..kmax {
        // Pivot: remaining column with the largest trailing norm.
        let (jbest, nbest) = (k..n)
            .map(|j| (j, norm2(&col[j][k..])))
            .fold((k, -1.0), |acc, (j, nj)| if nj > acc.1 { (j, nj) } else { acc });
        if nbest <= tol {
            rank = k;
            break;
        }
        col.swap(k, jbest);
        perm.swap(k, jbest);

        // Householder vector for col[k][k..].
        let alpha = {
            let x0 = col[k][k];
            let nx = norm2(&col[k][k..]);
            if x0 >= 0.0 {
                -nx
            } else {
                nx
            }
        };
        let mut v: Vec<f64> = col[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm = norm2(&v);
        if vnorm <= tol {
            col[k][k] = alpha;
            for t in k + 1..m {
                col[k][t] = 0.0;
            }
            continue;
        }
        for vi in v.iter_mut() {
            *vi /= vnorm;
        }
        // Apply H = I - 2 v v^T to remaining columns and rhs.
        for j in k..n {
            let s = 2.0 * dot(&v, &col[j][k..]);
            for (t, vi) in v.iter().enumerate() {
                col[j][k + t] -= s * vi;
            }
        }
        let s = 2.0 * dot(&v, &rhs[k..]);
        for (t, vi) in v.iter().enumerate() {
            rhs[k + t] -= s * vi;
        }
        col[k][k] = alpha;
        for t in k + 1..m {
            col[k][t] = 0.0;
        }
    }
    // Detect rank by diagonal magnitude.
    let mut r = 0;
    for k in 0..rank {
        if col[k][k].abs() > tol {
            r = k + 1;
        } else {
            break;
        }
    }
    rank = r;

    // Back substitution on the leading rank x rank triangle.
    let mut y = vec![0.0; n];
    for k in (0..rank).rev() {
        let mut s = rhs[k];
        for j in k + 1..rank {
            s -= col[j][k] * y[j];
        }
        y[k] = s / col[k][k];
    }
    let mut x = vec![0.0; n];
    for k in 0..rank {
        x[perm[k]] = y[k];
    }
    let resid = sub(&mat_vec(rows, &x), b);
    LstsqResult { x, residual: norm2(&resid), rank }
}

/// Numerical rank of the given rows.
pub fn rank(rows: &[Vec<f64>]) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let m = rows.len();
    lstsq(rows, &vec![0.0; m]).rank
}

/// Solve the square system A x = b by Gaussian elimination with partial
/// pivoting. Returns `None` when the matrix is numerically singular.
pub fn solve_square(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = a.len();
    debug_assert!(a.iter().all(|r| r.len() == n));
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x = b.to_vec();
    for k in 0..n {
        let (piv, pmax) = (k..n)
            .map(|i| (i, m[i][k].abs()))
            .fold((k, -1.0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        if pmax < 1e-13 {
            return None;
        }
        m.swap(k, piv);
        x.swap(k, piv);
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            if f != 0.0 {
                for j in k..n {
                    m[i][j] -= f * m[k][j];
                }
                x[i] -= f * x[k];
            }
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for j in k + 1..n {
            s -= m[k][j] * x[j];
        }
        x[k] = s / m[k][k];
    }
    Some(x)
}

/// Minimum-norm solution of the underdetermined system M eta = v where the
/// columns of M are `cols`. Returns `None` when the residual of the computed
/// point exceeds `tol` (v not in the column span).
pub fn min_norm_solution(cols: &[Vec<f64>], v: &[f64], tol: f64) -> Option<Vec<f64>> {
    let k = cols.len();
    if k == 0 {
        return if norm2(v) <= tol { Some(vec![]) } else { None };
    }
    let n = v.len();
    // eta = M^T z with (M M^T) z = v solved in the least-squares sense.
    let mut gram_rows: Vec<Vec<f64>> = vec![vec![0.0; n]; n];
    for c in cols {
        for i in 0..n {
            for j in 0..n {
                gram_rows[i][j] += c[i] * c[j];
            }
        }
    }
    let z = lstsq(&gram_rows, v).x;
    let eta: Vec<f64> = cols.iter().map(|c| dot(c, &z)).collect();
    let mut fit = vec![0.0; n];
    for (c, e) in cols.iter().zip(&eta) {
        axpy(*e, c, &mut fit);
    }
    if norm2(&sub(&fit, v)) <= tol {
        Some(eta)
    } else {
        None
    }
}
