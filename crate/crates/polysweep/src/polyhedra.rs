//! Polyhedral moving-set geometry: active sets, Euclidean projection,
//! normal-cone multiplier recovery, and constraint-qualification checks.
//!
//! A polyhedron is the sublevel set `C = { x : <a_i, x> <= b_i }` described
//! by its constraint rows. All operations are pure; a constructed value is
//! immutable and safe to share across threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, lstsq, norm2, rank, sub};
use crate::lp::{LinProg, LpOutcome, Rel};
use crate::nnls::{min_norm_nonneg_fit, nnls};

/// Convex polyhedron `{ x : <a_i, x> <= b_i, i = 1..m }`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Polyhedron {
    /// Constraint rows a_i, each of length n.
    pub rows: Vec<Vec<f64>>,
    /// Offsets b_i.
    pub offsets: Vec<f64>,
    /// Optional row-norm band `[lo, hi]` that every `||a_i||` must satisfy.
    #[serde(default)]
    pub norm_band: Option<[f64; 2]>,
}

impl Polyhedron {
    pub fn new(rows: Vec<Vec<f64>>, offsets: Vec<f64>) -> Result<Self> {
        Self::with_band(rows, offsets, None)
    }

    pub fn with_band(
        rows: Vec<Vec<f64>>,
        offsets: Vec<f64>,
        norm_band: Option<[f64; 2]>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::BadPolyhedron("need at least one row".into()));
        }
        let n = rows[0].len();
        if n == 0 {
            return Err(Error::BadPolyhedron("rows must have positive dimension".into()));
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::BadPolyhedron("rows have inconsistent lengths".into()));
        }
        if rows.len() != offsets.len() {
            return Err(Error::BadPolyhedron("offsets length must match row count".into()));
        }
        let finite = rows.iter().flatten().chain(offsets.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::BadPolyhedron("entries must be finite".into()));
        }
        if let Some([lo, hi]) = norm_band {
            for (i, r) in rows.iter().enumerate() {
                let nr = norm2(r);
                if nr < lo - 1e-12 || nr > hi + 1e-12 {
                    return Err(Error::BadPolyhedron(format!(
                        "row {i} norm {nr:.6} outside band [{lo:.6}, {hi:.6}]"
                    )));
                }
            }
        }
        Ok(Self { rows, offsets, norm_band })
    }

    /// Ambient dimension n.
    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    /// Number of constraint rows m.
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Constraint slacks `<a_i, x> - b_i` (nonpositive on the feasible set).
    pub fn slacks(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.offsets)
            .map(|(a, b)| dot(a, x) - b)
            .collect()
    }

    /// Scale-aware default activity tolerance at `x`.
    pub fn default_tol(&self, x: &[f64]) -> f64 {
        1e-9 * (1.0 + norm2(x) + norm2(&self.offsets))
    }

    /// Largest constraint violation, 0 when feasible.
    pub fn violation(&self, x: &[f64]) -> f64 {
        self.slacks(x).into_iter().fold(0.0, f64::max)
    }
}

/// Indices of constraints active at a query point, with the tolerance that
/// classified them.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveSet {
    pub indices: Vec<usize>,
    pub tolerance: f64,
}

impl ActiveSet {
    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

/// Active constraint indices at `x`: those with `|<a_i,x> - b_i| <= tol`.
///
/// Errors with `InfeasiblePoint` when some constraint is violated beyond
/// `tol`.
pub fn active_set(p: &Polyhedron, x: &[f64], tol: f64) -> Result<ActiveSet> {
    let slacks = p.slacks(x);
    for (i, s) in slacks.iter().enumerate() {
        if *s > tol {
            return Err(Error::InfeasiblePoint { index: i, violation: *s });
        }
    }
    let indices = slacks
        .iter()
        .enumerate()
        .filter(|(_, s)| s.abs() <= tol)
        .map(|(i, _)| i)
        .collect();
    Ok(ActiveSet { indices, tolerance: tol })
}

/// Result of a Euclidean projection: the projected point and KKT multipliers
/// `mu >= 0` with `y - x = sum_i mu_i a_i` and complementary slackness.
#[derive(Clone, Debug)]
pub struct Projection {
    pub point: Vec<f64>,
    pub multipliers: Vec<f64>,
}

/// Euclidean projection of `y` onto the polyhedron.
///
/// Primal active-set QP with Bland-style index ordering for anti-cycling;
/// the phase-1 start comes from a feasibility LP when `y` itself is
/// infeasible.
pub fn project(p: &Polyhedron, y: &[f64]) -> Result<Projection> {
    let m = p.n_rows();
    let n = p.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "point has length {}, expected {n}",
            y.len()
        )));
    }
    let scale = 1.0 + norm2(y) + norm2(&p.offsets);
    let tol = 1e-10 * scale;
    if p.violation(y) <= tol {
        return Ok(Projection { point: y.to_vec(), multipliers: vec![0.0; m] });
    }

    // Phase 1: feasible starting point via min t s.t. Ax - t <= b, t >= 0.
    let mut lp = LinProg::new();
    let xs: Vec<usize> = (0..n)
        .map(|_| lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY))
        .collect();
    let t = lp.add_var(1.0, 0.0, f64::INFINITY);
    for i in 0..m {
        let mut terms: Vec<(usize, f64)> = xs.iter().copied().zip(p.rows[i].iter().copied()).collect();
        terms.push((t, -1.0));
        lp.add_row_sparse(&terms, Rel::Le, p.offsets[i]);
    }
    let start = match lp.solve() {
        LpOutcome::Optimal { x, value } => {
            if value > 1e-7 * scale {
                return Err(Error::EmptyPolyhedron { violation: value });
            }
            x[..n].to_vec()
        }
        _ => return Err(Error::EmptyPolyhedron { violation: f64::INFINITY }),
    };

    match active_set_qp(p, y, start, tol) {
        Some(pr) => Ok(pr),
        // Iteration cap hit: fall back to exhaustive enumeration on small m.
        None => brute_force_projection(p, y, tol).ok_or(Error::EmptyPolyhedron { violation: f64::NAN }),
    }
}

fn active_set_qp(p: &Polyhedron, y: &[f64], start: Vec<f64>, tol: f64) -> Option<Projection> {
    let m = p.n_rows();
    let n = p.dim();
    let mut x = start;
    // Clamp the start into the feasible set against rounding in the LP.
    let mut working: Vec<usize> = Vec::new();
    for (i, s) in p.slacks(&x).iter().enumerate() {
        if *s > -tol {
            working.push(i);
        }
    }
    prune_dependent(&p.rows, &mut working);

    let max_iter = 50 * (m + n) + 100;
    for _ in 0..max_iter {
        // Equality-constrained projection onto the working set:
        // x* = y - A_W^T mu,  (A_W A_W^T) mu = A_W y - b_W.
        let wa: Vec<Vec<f64>> = working.iter().map(|&i| p.rows[i].clone()).collect();
        let (xstar, mu) = if working.is_empty() {
            (y.to_vec(), vec![])
        } else {
            let gram: Vec<Vec<f64>> = wa
                .iter()
                .map(|ri| wa.iter().map(|rj| dot(ri, rj)).collect())
                .collect();
            let rhs: Vec<f64> = working.iter().map(|&i| dot(&p.rows[i], y) - p.offsets[i]).collect();
            let mu = lstsq(&gram, &rhs).x;
            let mut xs = y.to_vec();
            for (k, &i) in working.iter().enumerate() {
                crate::linalg::axpy(-mu[k], &p.rows[i], &mut xs);
            }
            (xs, mu)
        };

        let step = sub(&xstar, &x);
        if norm2(&step) <= tol {
            // At the working-set minimizer: check multiplier signs.
            if let Some(pos) = working
                .iter()
                .enumerate()
                .filter(|(k, _)| mu[*k] < -tol)
                .map(|(k, _)| k)
                .min_by_key(|&k| working[k])
            {
                working.remove(pos);
                continue;
            }
            let mut multipliers = vec![0.0; m];
            for (k, &i) in working.iter().enumerate() {
                multipliers[i] = mu.get(k).copied().unwrap_or(0.0).max(0.0);
            }
            return Some(Projection { point: x, multipliers });
        }

        // Longest feasible step toward the subproblem minimizer.
        let mut alpha = 1.0_f64;
        let mut blocker: Option<usize> = None;
        for i in 0..m {
            if working.contains(&i) {
                continue;
            }
            let ad = dot(&p.rows[i], &step);
            if ad > tol {
                let room = p.offsets[i] - dot(&p.rows[i], &x);
                let a = (room / ad).max(0.0);
                if a < alpha - 1e-15 || (a < alpha + 1e-15 && blocker.map_or(true, |b| i < b)) {
                    if a < alpha {
                        alpha = a;
                        blocker = Some(i);
                    }
                }
            }
        }
        for (xi, si) in x.iter_mut().zip(&step) {
            *xi += alpha * si;
        }
        if let Some(i) = blocker {
            working.push(i);
            working.sort_unstable();
            prune_dependent(&p.rows, &mut working);
        }
    }
    None
}

/// Drop rows from the working set until the remaining ones are linearly
/// independent, preferring to keep lower indices.
fn prune_dependent(rows: &[Vec<f64>], working: &mut Vec<usize>) {
    let mut kept: Vec<usize> = Vec::new();
    for &i in working.iter() {
        let mut trial: Vec<Vec<f64>> = kept.iter().map(|&k| rows[k].clone()).collect();
        trial.push(rows[i].clone());
        if rank(&trial) == trial.len() {
            kept.push(i);
        }
    }
    *working = kept;
}

/// Exact projection by enumerating active subsets; exponential in m, used as
/// oracle and fallback for small polyhedra.
pub fn brute_force_projection(p: &Polyhedron, y: &[f64], tol: f64) -> Option<Projection> {
    let m = p.n_rows();
    if m > 20 {
        return None;
    }
    let n = p.dim();
    let mut best: Option<(f64, Vec<f64>, Vec<usize>)> = None;
    for mask in 0u32..(1u32 << m) {
        let subset: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
        if subset.len() > n {
            continue;
        }
        let wa: Vec<Vec<f64>> = subset.iter().map(|&i| p.rows[i].clone()).collect();
        let x = if subset.is_empty() {
            y.to_vec()
        } else {
            let gram: Vec<Vec<f64>> = wa
                .iter()
                .map(|ri| wa.iter().map(|rj| dot(ri, rj)).collect())
                .collect();
            let rhs: Vec<f64> = subset.iter().map(|&i| dot(&p.rows[i], y) - p.offsets[i]).collect();
            let mu = lstsq(&gram, &rhs).x;
            let mut xs = y.to_vec();
            for (k, &i) in subset.iter().enumerate() {
                crate::linalg::axpy(-mu[k], &p.rows[i], &mut xs);
            }
            xs
        };
        if p.violation(&x) > tol {
            continue;
        }
        let d = norm2(&sub(&x, y));
        if best.as_ref().map_or(true, |(bd, _, _)| d < bd - 1e-15) {
            best = Some((d, x, subset));
        }
    }
    best.map(|(_, x, _)| {
        // Recover multipliers for the winning point.
        let tol2 = tol.max(1e-12);
        let act: Vec<usize> = p
            .slacks(&x)
            .iter()
            .enumerate()
            .filter(|(_, s)| s.abs() <= 10.0 * tol2)
            .map(|(i, _)| i)
            .collect();
        let cols: Vec<Vec<f64>> = act.iter().map(|&i| p.rows[i].clone()).collect();
        let fit = nnls(&cols, &sub(y, &x));
        let mut multipliers = vec![0.0; p.n_rows()];
        for (k, &i) in act.iter().enumerate() {
            multipliers[i] = fit.x[k];
        }
        Projection { point: x, multipliers }
    })
}

/// Recover `eta >= 0` supported on the active set with
/// `sum_i eta_i a_i = v` (within `tol`), minimum-norm among exact fits.
///
/// Errors with `NotInNormalCone` when the best nonnegative fit misses `v` by
/// more than `tol`.
pub fn normal_cone_multipliers(
    p: &Polyhedron,
    x: &[f64],
    v: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    let act = active_set(p, x, tol)?;
    let cols: Vec<Vec<f64>> = act.indices.iter().map(|&i| p.rows[i].clone()).collect();
    let m = p.n_rows();
    if cols.is_empty() {
        let r = norm2(v);
        if r <= tol {
            return Ok(vec![0.0; m]);
        }
        return Err(Error::NotInNormalCone { residual: r });
    }
    match min_norm_nonneg_fit(&cols, v, tol) {
        Some(eta_act) => {
            let mut eta = vec![0.0; m];
            for (k, &i) in act.indices.iter().enumerate() {
                eta[i] = eta_act[k];
            }
            Ok(eta)
        }
        None => {
            let r = nnls(&cols, v).residual;
            Err(Error::NotInNormalCone { residual: r })
        }
    }
}

/// Outcome of the positive-linear-independence check.
#[derive(Clone, Debug)]
pub struct PlicqReport {
    pub holds: bool,
    /// When PLICQ fails: nonzero alpha >= 0 on the active rows with
    /// `sum alpha_i a_i = 0` (full-length, zero off the active set).
    pub certificate: Option<Vec<f64>>,
    /// LICQ (plain linear independence of active rows).
    pub licq: bool,
    pub active: Vec<usize>,
}

/// Positive linear independence constraint qualification at `x`.
///
/// Decided by the LP `max sum alpha_i` over `alpha >= 0`,
/// `sum alpha_i a_i = 0`, `sum alpha_i <= 1`: PLICQ holds iff the optimum is
/// zero. Zero rows never enter the certificate.
pub fn check_plicq(p: &Polyhedron, x: &[f64], tol: f64) -> Result<PlicqReport> {
    let act = active_set(p, x, tol)?;
    let idx: Vec<usize> = act
        .indices
        .iter()
        .copied()
        .filter(|&i| norm2(&p.rows[i]) > 1e-14)
        .collect();
    let n = p.dim();
    if idx.is_empty() {
        return Ok(PlicqReport { holds: true, certificate: None, licq: true, active: act.indices });
    }
    let mut lp = LinProg::new();
    let avars: Vec<usize> = idx.iter().map(|_| lp.add_var(-1.0, 0.0, f64::INFINITY)).collect();
    for c in 0..n {
        let terms: Vec<(usize, f64)> = avars
            .iter()
            .zip(&idx)
            .map(|(&v, &i)| (v, p.rows[i][c]))
            .collect();
        lp.add_row_sparse(&terms, Rel::Eq, 0.0);
    }
    lp.add_row_sparse(
        &avars.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(),
        Rel::Le,
        1.0,
    );
    let (alpha, value) = match lp.solve() {
        LpOutcome::Optimal { x, value } => (x, -value),
        _ => return Err(Error::BadPolyhedron("PLICQ LP failed".into())),
    };
    let active_rows: Vec<Vec<f64>> = idx.iter().map(|&i| p.rows[i].clone()).collect();
    let licq = rank(&active_rows) == active_rows.len();
    if value <= 1e-7 {
        Ok(PlicqReport { holds: true, certificate: None, licq, active: act.indices })
    } else {
        let mut cert = vec![0.0; p.n_rows()];
        for (k, &i) in idx.iter().enumerate() {
            cert[i] = alpha[k].max(0.0);
        }
        Ok(PlicqReport { holds: false, certificate: Some(cert), licq, active: act.indices })
    }
}

/// Slater margin of the polyhedron.
#[derive(Clone, Debug, PartialEq)]
pub enum SlaterMargin {
    /// Finite minimax slack `theta = min_x max_i (<a_i,x> - b_i)`.
    Bounded(f64),
    /// The slack can be pushed to `-inf`; the Slater condition holds.
    UnboundedBelow,
}

impl SlaterMargin {
    /// Whether a strictly feasible point exists.
    pub fn slater_holds(&self) -> bool {
        match self {
            SlaterMargin::Bounded(v) => *v < 0.0,
            SlaterMargin::UnboundedBelow => true,
        }
    }
}

/// Compute `theta = min_x max_i (<a_i, x> - b_i)` by LP.
pub fn slater_margin(p: &Polyhedron) -> SlaterMargin {
    let n = p.dim();
    let mut lp = LinProg::new();
    let xs: Vec<usize> = (0..n)
        .map(|_| lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY))
        .collect();
    let t = lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..p.n_rows() {
        let mut terms: Vec<(usize, f64)> = xs.iter().copied().zip(p.rows[i].iter().copied()).collect();
        terms.push((t, -1.0));
        lp.add_row_sparse(&terms, Rel::Le, p.offsets[i]);
    }
    match lp.solve() {
        LpOutcome::Optimal { value, .. } => SlaterMargin::Bounded(value),
        LpOutcome::Unbounded => SlaterMargin::UnboundedBelow,
        LpOutcome::Infeasible => SlaterMargin::Bounded(f64::INFINITY),
    }
}

/// Witness constant for the inverse triangle inequality on the active rows
/// at `x`: the smallest `gamma` with
/// `sum lambda_i ||a_i|| <= gamma ||sum lambda_i a_i||` for all `lambda >= 0`.
///
/// Equals `1 / dist(0, conv{a_i / ||a_i||})`; infinite when PLICQ fails.
/// Computed exactly by enumerating faces of the hull (active sets are small).
pub fn inverse_triangle_witness(p: &Polyhedron, x: &[f64], tol: f64) -> Result<f64> {
    let act = active_set(p, x, tol)?;
    let dirs: Vec<Vec<f64>> = act
        .indices
        .iter()
        .map(|&i| p.rows[i].clone())
        .filter(|r| norm2(r) > 1e-14)
        .map(|r| {
            let nr = norm2(&r);
            r.iter().map(|v| v / nr).collect()
        })
        .collect();
    let k = dirs.len();
    if k == 0 {
        return Ok(1.0);
    }
    if k > 16 {
        return Err(Error::BadPolyhedron("too many active rows for witness enumeration".into()));
    }
    let n = p.dim();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1u32 << k) {
        let idx: Vec<usize> = (0..k).filter(|j| mask >> j & 1 == 1).collect();
        // Min-norm affine combination on this support:
        // minimize ||sum mu_j d_j||^2 s.t. sum mu_j = 1.
        // KKT: G mu = lam 1, 1.mu = 1 with G the Gram matrix.
        let g: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| idx.iter().map(|&j| dot(&dirs[i], &dirs[j])).collect())
            .collect();
        let kk = idx.len();
        let mut kkt: Vec<Vec<f64>> = Vec::with_capacity(kk + 1);
        for r in 0..kk {
            let mut row = g[r].clone();
            row.push(-1.0);
            kkt.push(row);
        }
        let mut last = vec![1.0; kk];
        last.push(0.0);
        kkt.push(last);
        let mut rhs = vec![0.0; kk];
        rhs.push(1.0);
        let sol = lstsq(&kkt, &rhs);
        if sol.residual > 1e-8 {
            continue;
        }
        let mu = &sol.x[..kk];
        if mu.iter().any(|&m| m < -1e-9) {
            continue;
        }
        let mut point = vec![0.0; n];
        for (t, &i) in idx.iter().enumerate() {
            crate::linalg::axpy(mu[t], &dirs[i], &mut point);
        }
        best = best.min(norm2(&point));
    }
    if best <= 1e-9 {
        // 0 lies in the hull: PLICQ fails, no finite witness.
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / best)
}

/// Verify a projection result against the defining variational inequality:
/// `y - x` must be reproducible as a nonnegative combination of active rows.
pub fn projection_residual(p: &Polyhedron, y: &[f64], pr: &Projection) -> f64 {
    let recon = {
        let mut r = vec![0.0; p.dim()];
        for (mu, row) in pr.multipliers.iter().zip(&p.rows) {
            crate::linalg::axpy(*mu, row, &mut r);
        }
        r
    };
    let gap = sub(&sub(y, &pr.point), &recon);
    let comp = pr
        .multipliers
        .iter()
        .zip(p.slacks(&pr.point))
        .map(|(mu, s)| (mu * s).abs())
        .fold(0.0, f64::max);
    norm2(&gap).max(comp).max(p.violation(&pr.point))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn halfspace_unit() -> Polyhedron {
        // Showcase set {x1 + 2 x2 >= 2} described by its unit-norm row.
        let s = 5.0_f64.sqrt();
        Polyhedron::new(vec![vec![-1.0 / s, -2.0 / s]], vec![-2.0 / s]).unwrap()
    }

    #[test]
    fn active_set_interior_boundary_infeasible() {
        let p = halfspace_unit();
        let tol = 1e-9;
        assert!(active_set(&p, &[1.5, 1.0], tol).unwrap().indices.is_empty());
        assert_eq!(active_set(&p, &[1.0, 0.5], tol).unwrap().indices, vec![0]);
        assert!(matches!(
            active_set(&p, &[0.0, 0.0], tol),
            Err(Error::InfeasiblePoint { index: 0, .. })
        ));
    }

    #[test]
    fn project_halfspace_origin() {
        let p = halfspace_unit();
        let pr = project(&p, &[0.0, 0.0]).unwrap();
        assert!((pr.point[0] - 0.4).abs() < 1e-10);
        assert!((pr.point[1] - 0.8).abs() < 1e-10);
        assert!((pr.multipliers[0] - 2.0 / 5.0_f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn project_feasible_is_identity() {
        let p = halfspace_unit();
        let pr = project(&p, &[1.5, 1.0]).unwrap();
        assert_eq!(pr.point, vec![1.5, 1.0]);
        assert_eq!(pr.multipliers, vec![0.0]);
    }

    #[test]
    fn project_unit_box_corner() {
        let p = Polyhedron::new(
            vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]],
            vec![1.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        let pr = project(&p, &[3.0, 3.0]).unwrap();
        assert!((pr.point[0] - 1.0).abs() < 1e-10 && (pr.point[1] - 1.0).abs() < 1e-10);
        let oracle = brute_force_projection(&p, &[3.0, 3.0], 1e-10).unwrap();
        assert!(norm2(&sub(&oracle.point, &pr.point)) < 1e-10);
    }

    #[test]
    fn multipliers_on_boundary() {
        let p = halfspace_unit();
        let a = p.rows[0].clone();
        let v: Vec<f64> = a.iter().map(|c| 0.2 * c).collect();
        let eta = normal_cone_multipliers(&p, &[1.0, 0.5], &v, 1e-8).unwrap();
        assert!((eta[0] - 0.2).abs() < 1e-8);

        let eta0 = normal_cone_multipliers(&p, &[1.5, 1.0], &[0.0, 0.0], 1e-8).unwrap();
        assert_eq!(eta0, vec![0.0]);

        let err = normal_cone_multipliers(&p, &[1.0, 0.5], &[1.0, 0.0], 1e-8);
        match err {
            Err(Error::NotInNormalCone { residual }) => assert!(residual > 0.5),
            other => panic!("expected NotInNormalCone, got {other:?}"),
        }
    }

    #[test]
    fn plicq_cases() {
        let p = halfspace_unit();
        let rep = check_plicq(&p, &[1.0, 0.5], 1e-9).unwrap();
        assert!(rep.holds && rep.licq);

        // Opposite rows active at the origin.
        let p2 = Polyhedron::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![0.0, 0.0]).unwrap();
        let rep2 = check_plicq(&p2, &[0.0, 0.0], 1e-9).unwrap();
        assert!(!rep2.holds);
        let cert = rep2.certificate.unwrap();
        assert!(cert.iter().sum::<f64>() > 0.5);
        // Certificate really cancels.
        let mut comb = vec![0.0; 2];
        for (c, row) in cert.iter().zip(&p2.rows) {
            crate::linalg::axpy(*c, row, &mut comb);
        }
        assert!(norm2(&comb) < 1e-7);

        let p3 = Polyhedron::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
        let rep3 = check_plicq(&p3, &[0.0, 0.0], 1e-9).unwrap();
        assert!(rep3.holds && rep3.licq);
    }

    #[test]
    fn plicq_skips_zero_rows() {
        // A zero row is active everywhere but never enters the certificate.
        let p = Polyhedron::new(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 0.0, 0.0],
        )
        .unwrap();
        let rep = check_plicq(&p, &[0.0, 0.0], 1e-9).unwrap();
        assert!(rep.holds && rep.certificate.is_none());
    }

    #[test]
    fn plicq_invariant_under_row_rescaling() {
        let p2 = Polyhedron::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![0.0, 0.0]).unwrap();
        let p2s = Polyhedron::new(vec![vec![3.0, 0.0], vec![-0.5, 0.0]], vec![0.0, 0.0]).unwrap();
        assert_eq!(
            check_plicq(&p2, &[0.0, 0.0], 1e-9).unwrap().holds,
            check_plicq(&p2s, &[0.0, 0.0], 1e-9).unwrap().holds
        );
    }

    #[test]
    fn slater_margin_cases() {
        assert_eq!(slater_margin(&halfspace_unit()), SlaterMargin::UnboundedBelow);

        let axis = Polyhedron::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![0.0, 0.0]).unwrap();
        match slater_margin(&axis) {
            SlaterMargin::Bounded(v) => assert!(v.abs() < 1e-9),
            other => panic!("expected bounded, got {other:?}"),
        }

        let boxp = Polyhedron::new(
            vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]],
            vec![1.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        match slater_margin(&boxp) {
            SlaterMargin::Bounded(v) => assert!((v + 1.0).abs() < 1e-9),
            other => panic!("expected bounded, got {other:?}"),
        }
    }

    #[test]
    fn norm_band_rejects_bad_rows() {
        let r = Polyhedron::with_band(vec![vec![2.0, 0.0]], vec![1.0], Some([0.9, 1.1]));
        assert!(r.is_err());
        let ok = Polyhedron::with_band(vec![vec![1.0, 0.0]], vec![1.0], Some([0.9, 1.1]));
        assert!(ok.is_ok());
        let zero = Polyhedron::with_band(vec![vec![0.0, 0.0]], vec![1.0], Some([0.9, 1.1]));
        assert!(zero.is_err());
    }

    #[test]
    fn witness_single_unit_row() {
        let p = halfspace_unit();
        let g = inverse_triangle_witness(&p, &[1.0, 0.5], 1e-9).unwrap();
        assert!((g - 1.0).abs() < 1e-9);
    }

    #[test]
    fn witness_infinite_when_plicq_fails() {
        let p2 = Polyhedron::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![0.0, 0.0]).unwrap();
        let g = inverse_triangle_witness(&p2, &[0.0, 0.0], 1e-9).unwrap();
        assert!(g.is_infinite());
    }

    #[test]
    fn projection_idempotent() {
        let p = halfspace_unit();
        let pr = project(&p, &[-1.0, -2.0]).unwrap();
        let pr2 = project(&p, &pr.point).unwrap();
        assert!(norm2(&sub(&pr2.point, &pr.point)) < 1e-10);
    }

    #[test]
    fn json_round_trip() {
        let p = halfspace_unit();
        let s = serde_json::to_string(&p).unwrap();
        let q: Polyhedron = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        assert!(s.contains("\"rows\"") && s.contains("\"offsets\"") && s.contains("\"norm_band\""));
    }

    #[test]
    fn empty_polyhedron_detected() {
        let p = Polyhedron::new(vec![vec![1.0], vec![-1.0]], vec![-1.0, -1.0]).unwrap();
        assert!(matches!(project(&p, &[5.0]), Err(Error::EmptyPolyhedron { .. })));
    }

    #[test]
    fn mat_vec_consistency() {
        let p = halfspace_unit();
        let x = [1.0, 0.5];
        assert!((crate::linalg::mat_vec(&p.rows, &x)[0] - dot(&p.rows[0], &x)).abs() < 1e-15);
    }
}
