//! Coderivative calculators for the orthant normal-cone mapping, the
//! polyhedral normal-cone mapping `G(x,a,b) = N(x; C(a,b))`, and the
//! sweeping velocity mapping `F = G - g`.
//!
//! Coderivative values are infinite polyhedral sets; they are exposed here as
//! finitely presented descriptors (forced-zero / nonnegative / free
//! components) together with membership residuals: the distance from a
//! candidate vector to the set of admissible stacked outputs, minimized over
//! the finitely many extreme multipliers `p` and the admissible `q`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, lstsq, mat_t_vec, mat_vec, norm2, rank, sub};
#[cfg(test)]
use crate::linalg::dot;
use crate::nnls::min_norm_nonneg_fit;
use crate::polyhedra::{active_set, Polyhedron};

/// Finitely presented description of one coderivative value.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoderivDescriptor {
    /// The value is the empty set.
    Empty,
    /// The value is `{ q : q_i = 0 on zero, q_i >= 0 on nonneg, free rest }`.
    Constrained {
        zero_indices: Vec<usize>,
        nonneg_indices: Vec<usize>,
        free_indices: Vec<usize>,
    },
}

impl CoderivDescriptor {
    pub fn is_empty(&self) -> bool {
        matches!(self, CoderivDescriptor::Empty)
    }

    /// Whether `q` belongs to the described set (within `tol`).
    pub fn admits(&self, q: &[f64], tol: f64) -> bool {
        match self {
            CoderivDescriptor::Empty => false,
            CoderivDescriptor::Constrained { zero_indices, nonneg_indices, .. } => {
                zero_indices.iter().all(|&i| q[i].abs() <= tol)
                    && nonneg_indices.iter().all(|&i| q[i] >= -tol)
            }
        }
    }
}

/// Coderivative of the normal-cone mapping of the nonpositive orthant at a
/// graph point `(x, v)` in direction `w`.
///
/// Requires `(x, v)` on the graph: `x <= 0`, `v >= 0`, `x_i v_i = 0`.
pub fn coderiv_orthant(x: &[f64], v: &[f64], w: &[f64], tol: f64) -> Result<CoderivDescriptor> {
    let m = x.len();
    if v.len() != m || w.len() != m {
        return Err(Error::DimensionMismatch("orthant coderivative arguments".into()));
    }
    for i in 0..m {
        if x[i] > tol {
            return Err(Error::NotInGraph(format!("x[{i}] = {} > 0", x[i])));
        }
        if v[i] < -tol {
            return Err(Error::NotInGraph(format!("v[{i}] = {} < 0", v[i])));
        }
        if (x[i] * v[i]).abs() > tol * (1.0 + x[i].abs() + v[i].abs()) {
            return Err(Error::NotInGraph(format!("x[{i}] v[{i}] = {} != 0", x[i] * v[i])));
        }
    }
    if (0..m).any(|i| v[i] > tol && w[i].abs() > tol) {
        return Ok(CoderivDescriptor::Empty);
    }
    let mut zero = Vec::new();
    let mut nonneg = Vec::new();
    let mut free = Vec::new();
    for i in 0..m {
        if x[i] < -tol {
            zero.push(i);
        } else if v[i] <= tol && w[i] < -tol {
            zero.push(i);
        } else if v[i] <= tol && w[i] > tol {
            nonneg.push(i);
        } else {
            free.push(i);
        }
    }
    Ok(CoderivDescriptor::Constrained {
        zero_indices: zero,
        nonneg_indices: nonneg,
        free_indices: free,
    })
}

/// Membership residual and the witnessing multipliers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MembershipReport {
    /// Distance from the candidate to the admissible set; `<= tol` certifies
    /// membership.
    pub residual: f64,
    pub witness_p: Vec<f64>,
    pub witness_q: Vec<f64>,
}

/// Extreme points of `{ p : p >= 0 on the active set, 0 elsewhere,
/// A^T p = v }`, the multiplier polytope behind a normal-cone element.
fn multiplier_vertices(p: &Polyhedron, x: &[f64], v: &[f64], tol: f64) -> Result<Vec<Vec<f64>>> {
    let act = active_set(p, x, tol)?;
    let m = p.n_rows();
    let n = p.dim();
    let idx = &act.indices;
    let mut verts: Vec<Vec<f64>> = Vec::new();
    if norm2(v) <= tol {
        verts.push(vec![0.0; m]);
    }
    if idx.len() <= 16 {
        for mask in 1u32..(1u32 << idx.len()) {
            let subset: Vec<usize> = (0..idx.len())
                .filter(|j| mask >> j & 1 == 1)
                .map(|j| idx[j])
                .collect();
            if subset.len() > n {
                continue;
            }
            let cols: Vec<Vec<f64>> = subset.iter().map(|&i| p.rows[i].clone()).collect();
            // Vertices correspond to linearly independent supports.
            if rank(&cols) < cols.len() {
                continue;
            }
            let rows_t: Vec<Vec<f64>> = (0..n)
                .map(|r| cols.iter().map(|c| c[r]).collect())
                .collect();
            let sol = lstsq(&rows_t, v);
            if sol.residual > tol || sol.x.iter().any(|&pi| pi < -tol) {
                continue;
            }
            let mut full = vec![0.0; m];
            for (k, &i) in subset.iter().enumerate() {
                full[i] = sol.x[k].max(0.0);
            }
            if !verts.iter().any(|u| norm2(&sub(u, &full)) <= 1e-9 * (1.0 + norm2(&full))) {
                verts.push(full);
            }
        }
    } else {
        // Too many active rows for enumeration: seed with the min-norm fit.
        let cols: Vec<Vec<f64>> = idx.iter().map(|&i| p.rows[i].clone()).collect();
        if let Some(fit) = min_norm_nonneg_fit(&cols, v, tol) {
            let mut full = vec![0.0; m];
            for (k, &i) in idx.iter().enumerate() {
                full[i] = fit[k];
            }
            verts.push(full);
        }
    }
    if verts.is_empty() {
        return Err(Error::NotInGraph(
            "v is not a nonnegative combination of active rows (v not in N(x;C))".into(),
        ));
    }
    Ok(verts)
}

/// Distance from `target` to `{ offset + sum_i q_i columns[i] : q in desc }`.
/// Exact for small descriptor sizes via support enumeration over the
/// sign-constrained components.
fn descriptor_distance(
    target: &[f64],
    offset: &[f64],
    columns: &[Vec<f64>],
    desc: &CoderivDescriptor,
) -> Option<(f64, Vec<f64>)> {
    let CoderivDescriptor::Constrained { zero_indices, nonneg_indices, free_indices } = desc
    else {
        return None;
    };
    let m = columns.len();
    let goal = sub(target, offset);
    let dim = goal.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let nn = nonneg_indices.len();
    debug_assert!(zero_indices.len() + nn + free_indices.len() == m);
    for mask in 0u32..(1u32 << nn) {
        let mut support: Vec<usize> = free_indices.clone();
        for (t, &i) in nonneg_indices.iter().enumerate() {
            if mask >> t & 1 == 1 {
                support.push(i);
            }
        }
        support.sort_unstable();
        let rows_t: Vec<Vec<f64>> = (0..dim)
            .map(|r| support.iter().map(|&i| columns[i][r]).collect())
            .collect();
        let sol = lstsq(&rows_t, &goal);
        // Enforce nonnegativity on the sign-constrained support entries.
        let mut ok = true;
        for (k, &i) in support.iter().enumerate() {
            if nonneg_indices.contains(&i) && sol.x[k] < -1e-10 {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        let mut q = vec![0.0; m];
        for (k, &i) in support.iter().enumerate() {
            q[i] = if nonneg_indices.contains(&i) { sol.x[k].max(0.0) } else { sol.x[k] };
        }
        let mut fit = vec![0.0; dim];
        for (c, qi) in columns.iter().zip(&q) {
            axpy(*qi, c, &mut fit);
        }
        let res = norm2(&sub(&fit, &goal));
        if best.as_ref().map_or(true, |(b, _)| res < *b - 1e-15) {
            best = Some((res, q));
        }
    }
    best
}

/// Stacked output vector of the normal-cone-mapping coderivative for given
/// multipliers: `(A^T q | p_1 w + q_1 x | ... | p_m w + q_m x | -q)`.
pub fn stacked_g_vector(
    poly: &Polyhedron,
    x: &[f64],
    w: &[f64],
    p: &[f64],
    q: &[f64],
) -> Vec<f64> {
    let n = poly.dim();
    let m = poly.n_rows();
    let mut out = Vec::with_capacity(n + m * n + m);
    out.extend(mat_t_vec(&poly.rows, q, n));
    for i in 0..m {
        for c in 0..n {
            out.push(p[i] * w[c] + q[i] * x[c]);
        }
    }
    out.extend(q.iter().map(|qi| -qi));
    out
}

fn g_offset_and_columns(
    poly: &Polyhedron,
    x: &[f64],
    mid: &[f64],
    p: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = poly.dim();
    let m = poly.n_rows();
    let dim = n + m * n + m;
    let mut offset = vec![0.0; dim];
    for i in 0..m {
        for c in 0..n {
            offset[n + i * n + c] = p[i] * mid[c];
        }
    }
    let mut columns = Vec::with_capacity(m);
    for i in 0..m {
        let mut col = vec![0.0; dim];
        col[..n].copy_from_slice(&poly.rows[i]);
        for c in 0..n {
            col[n + i * n + c] = x[c];
        }
        col[n + m * n + i] = -1.0;
        columns.push(col);
    }
    (offset, columns)
}

/// Membership residual for the coderivative of `G(x,a,b) = N(x; C(a,b))`.
///
/// Searches admissible `p` (vertices of the multiplier polytope for `v`) and
/// `q` in the orthant descriptor at `(Ax - b, p)(Aw)`; the residual is the
/// minimum distance between `candidate` and the stacked output over all
/// admissible pairs. Errors with `DomainViolation` when the value is empty
/// for every admissible `p`.
pub fn coderiv_g_membership(
    poly: &Polyhedron,
    x: &[f64],
    v: &[f64],
    w: &[f64],
    candidate: &[f64],
    tol: f64,
) -> Result<MembershipReport> {
    let n = poly.dim();
    let m = poly.n_rows();
    if candidate.len() != n + m * n + m {
        return Err(Error::DimensionMismatch(format!(
            "candidate has length {}, expected {}",
            candidate.len(),
            n + m * n + m
        )));
    }
    let slacks = poly.slacks(x);
    let aw = mat_vec(&poly.rows, w);
    let verts = multiplier_vertices(poly, x, v, tol)?;
    let mut best: Option<MembershipReport> = None;
    for p in &verts {
        if (0..m).any(|i| p[i] > tol && aw[i].abs() > tol) {
            continue; // w leaves the domain for this p
        }
        let desc = coderiv_orthant(&slacks, p, &aw, tol)?;
        if desc.is_empty() {
            continue;
        }
        let (offset, columns) = g_offset_and_columns(poly, x, w, p);
        if let Some((res, q)) = descriptor_distance(candidate, &offset, &columns, &desc) {
            if best.as_ref().map_or(true, |b| res < b.residual) {
                best = Some(MembershipReport { residual: res, witness_p: p.clone(), witness_q: q });
            }
        }
    }
    best.ok_or(Error::DomainViolation)
}

/// Stacked output vector for the sweeping velocity mapping coderivative:
/// `(A^T q - Gx^T y | p_1 y + q_1 x | ... | p_m y + q_m x | -q | -Gu^T y)`.
pub fn stacked_f_vector(
    poly: &Polyhedron,
    grad_x: &[Vec<f64>],
    grad_u: &[Vec<f64>],
    x: &[f64],
    y: &[f64],
    p: &[f64],
    q: &[f64],
) -> Vec<f64> {
    let n = poly.dim();
    let m = poly.n_rows();
    let d = if grad_u.is_empty() { 0 } else { grad_u[0].len() };
    let mut out = Vec::with_capacity(n + m * n + m + d);
    let gxty = mat_t_vec(grad_x, y, n);
    let mut head = mat_t_vec(&poly.rows, q, n);
    for (h, g) in head.iter_mut().zip(&gxty) {
        *h -= g;
    }
    out.extend(head);
    for i in 0..m {
        for c in 0..n {
            out.push(p[i] * y[c] + q[i] * x[c]);
        }
    }
    out.extend(q.iter().map(|qi| -qi));
    let guty = mat_t_vec(grad_u, y, d);
    out.extend(guty.iter().map(|g| -g));
    out
}

/// Membership residual for the coderivative of the sweeping velocity mapping
/// `F(x,a,b,u) = N(x; C(a,b)) - g(x,u)` at a graph point with
/// `w + g(x,u) in G(x,a,b)`, evaluated in direction `y`.
///
/// `grad_x` (n rows of length n) and `grad_u` (n rows of length d) are the
/// Jacobians of `g` at the reference point; `g_val = g(x,u)`.
#[allow(clippy::too_many_arguments)]
pub fn coderiv_f_membership(
    poly: &Polyhedron,
    grad_x: &[Vec<f64>],
    grad_u: &[Vec<f64>],
    g_val: &[f64],
    x: &[f64],
    w: &[f64],
    y: &[f64],
    candidate: &[f64],
    tol: f64,
) -> Result<MembershipReport> {
    let n = poly.dim();
    let m = poly.n_rows();
    let d = if grad_u.is_empty() { 0 } else { grad_u[0].len() };
    if candidate.len() != n + m * n + m + d {
        return Err(Error::DimensionMismatch(format!(
            "candidate has length {}, expected {}",
            candidate.len(),
            n + m * n + m + d
        )));
    }
    let v: Vec<f64> = w.iter().zip(g_val).map(|(wi, gi)| wi + gi).collect();
    let slacks = poly.slacks(x);
    let ay = mat_vec(&poly.rows, y);
    let verts = multiplier_vertices(poly, x, &v, tol)?;
    let mut best: Option<MembershipReport> = None;
    for p in &verts {
        if (0..m).any(|i| p[i] > tol && ay[i].abs() > tol) {
            continue;
        }
        let desc = coderiv_orthant(&slacks, p, &ay, tol)?;
        if desc.is_empty() {
            continue;
        }
        // Offset: stacked vector at q = 0; columns d/dq_i.
        let offset = stacked_f_vector(poly, grad_x, grad_u, x, y, p, &vec![0.0; m]);
        let mut columns = Vec::with_capacity(m);
        for i in 0..m {
            let mut col = vec![0.0; n + m * n + m + d];
            col[..n].copy_from_slice(&poly.rows[i]);
            for c in 0..n {
                col[n + i * n + c] = x[c];
            }
            col[n + m * n + i] = -1.0;
            columns.push(col);
        }
        if let Some((res, q)) = descriptor_distance(candidate, &offset, &columns, &desc) {
            if best.as_ref().map_or(true, |b| res < b.residual) {
                best = Some(MembershipReport { residual: res, witness_p: p.clone(), witness_q: q });
            }
        }
    }
    best.ok_or(Error::DomainViolation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn halfspace_unit() -> Polyhedron {
        let s = 5.0_f64.sqrt();
        Polyhedron::new(vec![vec![-1.0 / s, -2.0 / s]], vec![-2.0 / s]).unwrap()
    }

    #[test]
    fn orthant_structural_cases() {
        let tol = 1e-10;
        // boundary with positive multiplier, moving direction: empty.
        assert_eq!(coderiv_orthant(&[0.0], &[1.0], &[1.0], tol).unwrap(), CoderivDescriptor::Empty);
        // boundary, zero multiplier, outward direction: gamma >= 0.
        assert_eq!(
            coderiv_orthant(&[0.0], &[0.0], &[1.0], tol).unwrap(),
            CoderivDescriptor::Constrained {
                zero_indices: vec![],
                nonneg_indices: vec![0],
                free_indices: vec![]
            }
        );
        // interior: gamma = 0 regardless of w.
        assert_eq!(
            coderiv_orthant(&[-1.0], &[0.0], &[7.0], tol).unwrap(),
            CoderivDescriptor::Constrained {
                zero_indices: vec![0],
                nonneg_indices: vec![],
                free_indices: vec![]
            }
        );
        // boundary, zero multiplier, inward direction: gamma = 0.
        assert_eq!(
            coderiv_orthant(&[0.0], &[0.0], &[-1.0], tol).unwrap(),
            CoderivDescriptor::Constrained {
                zero_indices: vec![0],
                nonneg_indices: vec![],
                free_indices: vec![]
            }
        );
        // boundary, positive multiplier, zero direction: gamma free.
        assert_eq!(
            coderiv_orthant(&[0.0], &[2.0], &[0.0], tol).unwrap(),
            CoderivDescriptor::Constrained {
                zero_indices: vec![],
                nonneg_indices: vec![],
                free_indices: vec![0]
            }
        );
    }

    #[test]
    fn orthant_rejects_off_graph_pairs() {
        let tol = 1e-10;
        assert!(coderiv_orthant(&[1.0], &[0.0], &[0.0], tol).is_err());
        assert!(coderiv_orthant(&[0.0], &[-1.0], &[0.0], tol).is_err());
        assert!(coderiv_orthant(&[-1.0], &[1.0], &[0.0], tol).is_err());
    }

    #[test]
    fn g_membership_zero_pair() {
        // v = 0 forces p = 0; w violating no sign rule admits q = 0, and the
        // zero candidate is a member.
        let p = halfspace_unit();
        let x = [1.0, 0.5];
        let w = [1.0, 0.0];
        let cand = stacked_g_vector(&p, &x, &w, &[0.0], &[0.0]);
        let rep = coderiv_g_membership(&p, &x, &[0.0, 0.0], &w, &cand, 1e-9).unwrap();
        assert!(rep.residual <= 1e-9, "residual {}", rep.residual);
    }

    #[test]
    fn g_membership_domain_violation() {
        // v = a needs p = 1 > 0, and w = a has <a, w> = 1 != 0: empty value.
        let p = halfspace_unit();
        let x = [1.0, 0.5];
        let a = p.rows[0].clone();
        let cand = vec![0.0; 5];
        let out = coderiv_g_membership(&p, &x, &a, &a, &cand, 1e-9);
        assert!(matches!(out, Err(Error::DomainViolation)));
    }

    #[test]
    fn g_membership_interior_point() {
        let p = halfspace_unit();
        let x = [1.5, 1.0];
        let cand = vec![0.0; 5];
        let rep = coderiv_g_membership(&p, &x, &[0.0, 0.0], &[0.3, -0.4], &cand, 1e-9).unwrap();
        assert!(rep.residual <= 1e-9);
        // q is forced to zero at interior points.
        assert!(rep.witness_q[0].abs() <= 1e-12);
    }

    #[test]
    fn g_membership_detects_nonmember() {
        let p = halfspace_unit();
        let x = [1.5, 1.0];
        // Interior: stacked set is {0}; any nonzero candidate has its own norm
        // as residual.
        let mut cand = vec![0.0; 5];
        cand[0] = 1.0;
        let rep = coderiv_g_membership(&p, &x, &[0.0, 0.0], &[0.0, 0.0], &cand, 1e-9).unwrap();
        assert!((rep.residual - 1.0).abs() < 1e-9);
    }

    #[test]
    fn f_membership_boundary_witness() {
        // g(x,u) = u: grad_x = 0, grad_u = I. Boundary point with velocity
        // riding the constraint; y orthogonal to the row.
        let p = halfspace_unit();
        let x = [1.0, 0.5];
        let a = p.rows[0].clone();
        let eta = 0.3;
        let u = [-0.4, 0.1];
        // xdot = u - eta a, w = -xdot, so w + g = eta a in N(x; C).
        let xdot: Vec<f64> = u.iter().zip(&a).map(|(ui, ai)| ui - eta * ai).collect();
        let w: Vec<f64> = xdot.iter().map(|v| -v).collect();
        let y = vec![-a[1], a[0]]; // y orthogonal to a
        let grad_x = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let grad_u = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let cand = stacked_f_vector(&p, &grad_x, &grad_u, &x, &y, &[eta], &[0.0]);
        let rep =
            coderiv_f_membership(&p, &grad_x, &grad_u, &u, &x, &w, &y, &cand, 1e-9).unwrap();
        assert!(rep.residual <= 1e-9, "residual {}", rep.residual);
        assert!((rep.witness_p[0] - eta).abs() < 1e-9);
    }

    #[test]
    fn f_membership_zero_direction() {
        let p = halfspace_unit();
        let x = [1.5, 1.0];
        let u = [0.0, 0.0];
        let w = [0.0, 0.0];
        let grad_x = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let grad_u = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let cand = vec![0.0; 7];
        let rep = coderiv_f_membership(
            &p, &grad_x, &grad_u, &u, &x, &w, &[0.0, 0.0], &cand, 1e-9,
        )
        .unwrap();
        assert!(rep.residual <= 1e-12);
    }

    #[test]
    fn f_membership_u_block_equality_gap() {
        // The last block equals -grad_u^T y exactly; a candidate off by delta
        // in that block carries at least that residual.
        let p = halfspace_unit();
        let x = [1.5, 1.0];
        let u = [0.0, 0.0];
        let w = [0.0, 0.0];
        let y = [0.5, -0.2];
        let grad_x = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let grad_u = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let mut cand = stacked_f_vector(&p, &grad_x, &grad_u, &x, &y, &[0.0], &[0.0]);
        let last = cand.len() - 1;
        cand[last] += 0.25;
        let rep =
            coderiv_f_membership(&p, &grad_x, &grad_u, &u, &x, &w, &y, &cand, 1e-9).unwrap();
        assert!(rep.residual >= 0.25 - 1e-12);
    }

    #[test]
    fn witness_is_deterministic_under_licq() {
        let p = halfspace_unit();
        let x = [1.0, 0.5];
        let a = p.rows[0].clone();
        let v: Vec<f64> = a.iter().map(|c| 0.4 * c).collect();
        let w = [-2.0 * a[1], 2.0 * a[0]];
        let cand = stacked_g_vector(&p, &x, &w, &[0.4], &[0.0]);
        let r1 = coderiv_g_membership(&p, &x, &v, &w, &cand, 1e-9).unwrap();
        let r2 = coderiv_g_membership(&p, &x, &v, &w, &cand, 1e-9).unwrap();
        assert_eq!(r1.witness_p, r2.witness_p);
        assert_eq!(r1.witness_q, r2.witness_q);
        // LICQ makes p unique: it must equal the constructing multiplier.
        assert!((r1.witness_p[0] - 0.4).abs() < 1e-10);
    }

    #[test]
    fn positive_homogeneity_of_membership() {
        let p = halfspace_unit();
        let x = [1.0, 0.5];
        let a = p.rows[0].clone();
        let w = [-2.0 * a[1], 2.0 * a[0]]; // orthogonal to a: stays in every domain
        assert!(dot(&a, &w).abs() < 1e-12);
        let eta = 0.7;
        let v: Vec<f64> = a.iter().map(|c| eta * c).collect();
        for t in [1.0, 2.5, 10.0] {
            let wt: Vec<f64> = w.iter().map(|c| t * c).collect();
            let cand = stacked_g_vector(&p, &x, &wt, &[eta], &[0.0]);
            let rep = coderiv_g_membership(&p, &x, &v, &wt, &cand, 1e-9).unwrap();
            assert!(rep.residual <= 1e-9);
        }
    }
}
