//! The discrete optimal control problem built around a reference solution:
//! cost with proximity integrals, per-constraint residuals, and the
//! interval-mean deviation terms entering the optimality conditions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, sub};
use crate::sweeping::{
    validate_mesh, DiscreteQuadruple, RowControl, SampledTrajectory, SweepingProblem,
};

/// Discretized problem: base data, mesh, the reference solution being
/// localized around, the localization radius, and the row-norm half-width.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscreteProblem {
    pub base: SweepingProblem,
    pub mesh: Vec<f64>,
    pub reference: SampledTrajectory,
    pub epsilon: f64,
    pub delta_k: f64,
}

impl DiscreteProblem {
    pub fn new(
        base: SweepingProblem,
        mesh: Vec<f64>,
        reference: SampledTrajectory,
        epsilon: f64,
        delta_k: f64,
    ) -> Result<Self> {
        base.validate()?;
        validate_mesh(&mesh, base.horizon)?;
        if epsilon <= 0.0 {
            return Err(Error::BadProblem("epsilon must be positive".into()));
        }
        if delta_k < 0.0 {
            return Err(Error::BadProblem("delta_k must be nonnegative".into()));
        }
        // The reference must be feasible for its own moving set at the
        // sample times.
        for (k, &t) in reference.times.iter().enumerate() {
            let poly = crate::polyhedra::Polyhedron::new(
                reference.a[k].clone(),
                reference.b[k].clone(),
            )?;
            let viol = poly.violation(&reference.x[k]);
            let tol = 1e-6 * (1.0 + norm2(&reference.x[k]));
            if viol > tol {
                return Err(Error::BadProblem(format!(
                    "reference infeasible at t = {t} (violation {viol:.3e})"
                )));
            }
        }
        Ok(DiscreteProblem { base, mesh, reference, epsilon, delta_k })
    }

    pub fn nu(&self) -> usize {
        self.mesh.len() - 1
    }

    /// Quadrature nodes of the composite rectangle rule on interval `j`:
    /// mesh endpoints plus every reference sample strictly inside, as
    /// (node, weight) pairs with left-endpoint evaluation.
    fn quad_nodes(&self, j: usize) -> Vec<(f64, f64)> {
        let t0 = self.mesh[j];
        let t1 = self.mesh[j + 1];
        let mut pts = vec![t0];
        for &t in &self.reference.times {
            if t > t0 + 1e-14 && t < t1 - 1e-14 {
                pts.push(t);
            }
        }
        pts.push(t1);
        pts.windows(2).map(|w| (w[0], w[1] - w[0])).collect()
    }
}

fn flatten_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

/// Per-step interval means of the deviation from the reference:
/// `integral(u_j - u_ref)`, `integral(dx_j - xdot_ref)`, and the row/offset
/// analogues.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThetaTerms {
    pub theta_u: Vec<Vec<f64>>,
    pub theta_x: Vec<Vec<f64>>,
    /// Flattened m x n row deviations.
    pub theta_a: Vec<Vec<f64>>,
    pub theta_b: Vec<Vec<f64>>,
}

/// Interval-mean deviation terms by the rectangle rule on the reference grid.
pub fn theta_terms(dp: &DiscreteProblem, q: &DiscreteQuadruple) -> Result<ThetaTerms> {
    check_on_mesh(dp, q)?;
    let nu = dp.nu();
    let mut out = ThetaTerms {
        theta_u: Vec::with_capacity(nu),
        theta_x: Vec::with_capacity(nu),
        theta_a: Vec::with_capacity(nu),
        theta_b: Vec::with_capacity(nu),
    };
    for j in 0..nu {
        let h = q.h(j);
        let dx: Vec<f64> = q.x[j + 1].iter().zip(&q.x[j]).map(|(a, b)| (a - b) / h).collect();
        let da: Vec<f64> = flatten_rows(&q.a[j + 1])
            .iter()
            .zip(&flatten_rows(&q.a[j]))
            .map(|(a, b)| (a - b) / h)
            .collect();
        let db: Vec<f64> = q.b[j + 1].iter().zip(&q.b[j]).map(|(a, b)| (a - b) / h).collect();
        let mut tu = vec![0.0; dp.base.d];
        let mut tx = vec![0.0; dp.base.n];
        let mut ta = vec![0.0; dp.base.m * dp.base.n];
        let mut tb = vec![0.0; dp.base.m];
        for (t, w) in dp.quad_nodes(j) {
            let ur = dp.reference.u_at(t);
            let xr = dp.reference.xdot_at(t);
            let ar = flatten_rows(&dp.reference.adot_at(t));
            let br = dp.reference.bdot_at(t);
            for (o, (a, b)) in tu.iter_mut().zip(q.u[j].iter().zip(&ur)) {
                *o += w * (a - b);
            }
            for (o, (a, b)) in tx.iter_mut().zip(dx.iter().zip(&xr)) {
                *o += w * (a - b);
            }
            for (o, (a, b)) in ta.iter_mut().zip(da.iter().zip(&ar)) {
                *o += w * (a - b);
            }
            for (o, (a, b)) in tb.iter_mut().zip(db.iter().zip(&br)) {
                *o += w * (a - b);
            }
        }
        out.theta_u.push(tu);
        out.theta_x.push(tx);
        out.theta_a.push(ta);
        out.theta_b.push(tb);
    }
    Ok(out)
}

/// Discrete Bolza cost with the proximity integral:
/// `phi(x_nu) + sum_j h_j ell(...) + 1/2 sum_j integral ||(dx, da, db, u_j)
///  - (xdot_ref, adot_ref, bdot_ref, u_ref)(t)||^2 dt`.
pub fn cost_jk(dp: &DiscreteProblem, q: &DiscreteQuadruple) -> Result<f64> {
    check_on_mesh(dp, q)?;
    let nu = dp.nu();
    let mut total = dp.base.phi.value(&q.x[nu]);
    for j in 0..nu {
        let h = q.h(j);
        let dx: Vec<f64> = q.x[j + 1].iter().zip(&q.x[j]).map(|(a, b)| (a - b) / h).collect();
        let da_rows: Vec<Vec<f64>> = q.a[j + 1]
            .iter()
            .zip(&q.a[j])
            .map(|(rn, rc)| rn.iter().zip(rc).map(|(a, b)| (a - b) / h).collect())
            .collect();
        let db: Vec<f64> = q.b[j + 1].iter().zip(&q.b[j]).map(|(a, b)| (a - b) / h).collect();
        total += h
            * dp.base.ell.value(
                q.mesh[j],
                &q.x[j],
                &q.a[j],
                &q.b[j],
                &q.u[j],
                &dx,
                &da_rows,
                &db,
            );
        let da = flatten_rows(&da_rows);
        for (t, w) in dp.quad_nodes(j) {
            let gx = sub(&dx, &dp.reference.xdot_at(t));
            let ga = sub(&da, &flatten_rows(&dp.reference.adot_at(t)));
            let gb = sub(&db, &dp.reference.bdot_at(t));
            let gu = sub(&q.u[j], &dp.reference.u_at(t));
            total += 0.5 * w * (dot(&gx, &gx) + dot(&ga, &ga) + dot(&gb, &gb) + dot(&gu, &gu));
        }
    }
    Ok(total)
}

/// Gradient of the cost with respect to one control `u_j`, holding every
/// state fixed: `h_j grad_u ell + theta_u_j`.
pub fn cost_gradient_u(dp: &DiscreteProblem, q: &DiscreteQuadruple, j: usize) -> Result<Vec<f64>> {
    let thetas = theta_terms(dp, q)?;
    let h = q.h(j);
    let grads = dp.base.ell.gradients(dp.base.n, dp.base.m, &q.u[j]);
    Ok(grads
        .wu
        .iter()
        .zip(&thetas.theta_u[j])
        .map(|(w, th)| h * w + th)
        .collect())
}

/// Per-constraint residual report for a quadruple against the discrete
/// problem.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Discrete inclusion residual per step.
    pub inclusion: Vec<f64>,
    /// Endpoint inequality violation `max_i (<a_i, x_nu> - b_i)_+`.
    pub endpoint: f64,
    /// Gaps in the pinned initial values (x_0, a_0, b_0, u_0).
    pub init_x: f64,
    pub init_a: f64,
    pub init_b: f64,
    pub init_u: f64,
    /// Localization sums and their bound epsilon/2.
    pub localization_state: f64,
    pub localization_velocity: f64,
    pub localization_bound: f64,
    /// Control-set violation per step.
    pub control_violations: Vec<f64>,
    /// Row-norm band violations (i, j, amount); only for decision rows or an
    /// explicit band on the polyhedron.
    pub band_violations: Vec<(usize, usize, f64)>,
    /// Overall verdict at the tolerance used.
    pub feasible: bool,
    pub tolerance: f64,
}

impl FeasibilityReport {
    pub fn max_residual(&self) -> f64 {
        let mut worst = self
            .inclusion
            .iter()
            .copied()
            .fold(0.0_f64, f64::max)
            .max(self.endpoint)
            .max(self.init_x)
            .max(self.init_a)
            .max(self.init_b)
            .max(self.init_u)
            .max((self.localization_state - self.localization_bound).max(0.0))
            .max((self.localization_velocity - self.localization_bound).max(0.0));
        for v in &self.control_violations {
            worst = worst.max(*v);
        }
        for (_, _, v) in &self.band_violations {
            worst = worst.max(*v);
        }
        worst
    }
}

/// Evaluate every constraint family of the discrete problem on `q`.
pub fn feasibility_residuals(
    dp: &DiscreteProblem,
    q: &DiscreteQuadruple,
    tol: f64,
) -> Result<FeasibilityReport> {
    check_on_mesh(dp, q)?;
    let nu = dp.nu();
    let mut inclusion = Vec::with_capacity(nu);
    for j in 0..nu {
        let h = q.h(j);
        let mut r: Vec<f64> =
            q.x[j + 1].iter().zip(&q.x[j]).map(|(xn, xc)| (xn - xc) / h).collect();
        let drift = dp.base.g.eval(&q.x[j], &q.u[j]);
        for (ri, di) in r.iter_mut().zip(&drift) {
            *ri -= di;
        }
        for (i, row) in q.a[j].iter().enumerate() {
            crate::linalg::axpy(q.eta[j][i], row, &mut r);
        }
        inclusion.push(norm2(&r));
    }

    let endpoint = q.a[nu]
        .iter()
        .zip(&q.b[nu])
        .map(|(row, b)| (dot(row, &q.x[nu]) - b).max(0.0))
        .fold(0.0, f64::max);

    let init_x = norm2(&sub(&q.x[0], &dp.base.x0));
    let a0_ref = dp.reference.a_at(0.0);
    let init_a = {
        let mut s = 0.0;
        for (ra, rb) in q.a[0].iter().zip(&a0_ref) {
            let dr = sub(ra, rb);
            s += dot(&dr, &dr);
        }
        s.sqrt()
    };
    let init_b = norm2(&sub(&q.b[0], &dp.reference.b_at(0.0)));
    let init_u = norm2(&sub(&q.u[0], &dp.reference.u_at(0.0)));

    // Localization sums by the same rectangle rule.
    let mut loc_state = 0.0;
    let mut loc_vel = 0.0;
    for j in 0..nu {
        let h = q.h(j);
        let dx: Vec<f64> = q.x[j + 1].iter().zip(&q.x[j]).map(|(a, b)| (a - b) / h).collect();
        let da = flatten_rows(
            &q.a[j + 1]
                .iter()
                .zip(&q.a[j])
                .map(|(rn, rc)| rn.iter().zip(rc).map(|(a, b)| (a - b) / h).collect())
                .collect::<Vec<Vec<f64>>>(),
        );
        let db: Vec<f64> = q.b[j + 1].iter().zip(&q.b[j]).map(|(a, b)| (a - b) / h).collect();
        let aj = flatten_rows(&q.a[j]);
        for (t, w) in dp.quad_nodes(j) {
            let gx = sub(&q.x[j], &dp.reference.x_at(t));
            let ga = sub(&aj, &flatten_rows(&dp.reference.a_at(t)));
            let gb = sub(&q.b[j], &dp.reference.b_at(t));
            let gu = sub(&q.u[j], &dp.reference.u_at(t));
            loc_state += w * (dot(&gx, &gx) + dot(&ga, &ga) + dot(&gb, &gb) + dot(&gu, &gu));
            let vx = sub(&dx, &dp.reference.xdot_at(t));
            let va = sub(&da, &flatten_rows(&dp.reference.adot_at(t)));
            let vb = sub(&db, &dp.reference.bdot_at(t));
            loc_vel += w * (dot(&vx, &vx) + dot(&va, &va) + dot(&vb, &vb));
        }
    }

    let control_violations: Vec<f64> =
        q.u.iter().map(|u| dp.base.control_set.violation(u)).collect();

    let band = match &dp.base.a_ctrl {
        RowControl::Decision { band } => {
            Some([band[0] - dp.delta_k, band[1] + dp.delta_k])
        }
        _ => dp.base.polyhedron.norm_band,
    };
    let mut band_violations = Vec::new();
    if let Some([lo, hi]) = band {
        for (j, rows) in q.a.iter().enumerate() {
            for (i, r) in rows.iter().enumerate() {
                let nr = norm2(r);
                let v = (lo - nr).max(nr - hi).max(0.0);
                if v > tol {
                    band_violations.push((i, j, v));
                }
            }
        }
    }

    let report = FeasibilityReport {
        inclusion,
        endpoint,
        init_x,
        init_a,
        init_b,
        init_u,
        localization_state: loc_state,
        localization_velocity: loc_vel,
        localization_bound: dp.epsilon / 2.0,
        control_violations,
        band_violations,
        feasible: false,
        tolerance: tol,
    };
    let feasible = report.max_residual() <= tol;
    Ok(FeasibilityReport { feasible, ..report })
}

fn check_on_mesh(dp: &DiscreteProblem, q: &DiscreteQuadruple) -> Result<()> {
    if q.mesh.len() != dp.mesh.len()
        || q.mesh.iter().zip(&dp.mesh).any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(Error::MeshMismatch);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example8;
    use crate::sweeping::{simulate, uniform_mesh, ControlInput, StepMode};

    fn showcase_dp(nu: usize, ref_samples: usize) -> DiscreteProblem {
        DiscreteProblem::new(
            example8::problem(),
            uniform_mesh(1.0, nu),
            example8::reference(ref_samples),
            1.0,
            0.0,
        )
        .unwrap()
    }

    fn quadruple_for(controls: Vec<Vec<f64>>, nu: usize) -> DiscreteQuadruple {
        let prob = example8::problem();
        let mesh = uniform_mesh(1.0, nu);
        simulate(&prob, &ControlInput { u: controls, a: None, b: None }, &mesh, StepMode::Explicit)
            .unwrap()
            .quadruple
    }

    #[test]
    fn infeasible_reference_is_rejected() {
        let prob = example8::problem();
        let mut reference = example8::reference(8);
        reference.x[3] = vec![-5.0, -5.0];
        let r = DiscreteProblem::new(prob, uniform_mesh(1.0, 2), reference, 1.0, 0.0);
        assert!(matches!(r, Err(crate::error::Error::BadProblem(_))));
    }

    #[test]
    fn cost_of_optimal_quadruple() {
        let dp = showcase_dp(2, 2);
        let q = quadruple_for(example8::optimal_controls(2), 2);
        let j = cost_jk(&dp, &q).unwrap();
        assert!((j - 2.205).abs() < 1e-12, "J = {j}");
    }

    #[test]
    fn cost_of_tangential_branch_as_own_reference() {
        // The tangential candidate evaluated against itself: no proximity
        // term, plain Bolza value 53/24.
        let prob = example8::problem();
        let nu = 2;
        let mesh = uniform_mesh(1.0, nu);
        let q = quadruple_for(example8::tangential_controls(nu), nu);
        let u1 = example8::TANGENTIAL_U1;
        let reference = SampledTrajectory::from_closures(
            1.0,
            64,
            |t| {
                if t <= 0.5 {
                    vec![1.5 - t, 1.0 - t]
                } else {
                    vec![1.0 + (t - 0.5) * u1[0], 0.5 + (t - 0.5) * u1[1]]
                }
            },
            move |t| if t < 0.5 { vec![-1.0, -1.0] } else { u1.to_vec() },
            |_| vec![vec![-1.0, -2.0]],
            |_| vec![vec![0.0, 0.0]],
            |_| vec![-2.0],
            |_| vec![0.0],
            move |t| if t < 0.5 { vec![-1.0, -1.0] } else { u1.to_vec() },
        );
        let dp = DiscreteProblem::new(prob, mesh, reference, 1.0, 0.0).unwrap();
        let j = cost_jk(&dp, &q).unwrap();
        assert!((j - 53.0 / 24.0).abs() < 1e-12, "J = {j}");
    }

    #[test]
    fn proximity_vanishes_at_reference() {
        // Reference grid equal to the mesh: evaluating the reference's own
        // quadruple leaves exactly the Bolza part.
        let dp = showcase_dp(2, 64);
        let q = quadruple_for(example8::optimal_controls(2), 2);
        let j = cost_jk(&dp, &q).unwrap();
        // Piecewise-linear reference: derivative gaps vanish on both
        // segments even on the fine grid.
        assert!((j - 2.205).abs() < 1e-12, "J = {j}");
    }

    #[test]
    fn theta_terms_vanish_at_reference_and_scale_with_shifts() {
        let dp = showcase_dp(2, 2);
        let q = quadruple_for(example8::optimal_controls(2), 2);
        let th = theta_terms(&dp, &q).unwrap();
        for j in 0..2 {
            assert!(norm2(&th.theta_u[j]) < 1e-14);
            assert!(norm2(&th.theta_x[j]) < 1e-14);
            assert!(norm2(&th.theta_a[j]) < 1e-14);
            assert!(norm2(&th.theta_b[j]) < 1e-14);
        }
        // Constant control shift of c on one interval: theta_u = c h.
        let mut shifted = example8::optimal_controls(2);
        shifted[1][0] += 0.2;
        let q2 = quadruple_for(shifted, 2);
        let th2 = theta_terms(&dp, &q2).unwrap();
        assert!((th2.theta_u[1][0] - 0.1).abs() < 1e-14);
        assert!(th2.theta_u[1][1].abs() < 1e-14);
    }

    #[test]
    fn residuals_of_optimal_quadruple() {
        let dp = showcase_dp(2, 2);
        let q = quadruple_for(example8::optimal_controls(2), 2);
        let rep = feasibility_residuals(&dp, &q, 1e-10).unwrap();
        assert!(rep.feasible, "report {rep:?}");
        assert!(rep.max_residual() < 1e-10);
        // Reference grid == mesh: localization sums vanish (up to one ulp of
        // the simulated state).
        assert!(rep.localization_state < 1e-30);
        assert!(rep.localization_velocity < 1e-30);

        // A quadruple copied bitwise from the reference samples: the state
        // sum is exactly zero and the velocity sum vanishes to the last bit
        // (the divided differences of non-dyadic values round once).
        let mut q2 = q.clone();
        for (j, t) in dp.mesh.iter().enumerate() {
            q2.x[j] = dp.reference.x_at(*t);
            q2.a[j] = dp.reference.a_at(*t);
            q2.b[j] = dp.reference.b_at(*t);
        }
        for j in 0..q2.nu() {
            q2.u[j] = dp.reference.u_at(dp.mesh[j]);
        }
        let rep2 = feasibility_residuals(&dp, &q2, 1e-8).unwrap();
        assert_eq!(rep2.localization_state, 0.0);
        assert!(rep2.localization_velocity < 1e-30);
    }

    #[test]
    fn localization_sums_with_fine_reference_stay_below_bound() {
        let dp = showcase_dp(2, 512);
        let q = quadruple_for(example8::optimal_controls(2), 2);
        let rep = feasibility_residuals(&dp, &q, 1e-8).unwrap();
        // Hand integral: state part 1/12 + (81/625 + 81/2500)/24 ~ 0.0901.
        assert!(rep.localization_state > 0.05 && rep.localization_state < 0.5);
        assert!(rep.localization_velocity < 1e-20);
        assert!(rep.feasible);
    }

    #[test]
    fn control_violation_reported() {
        let dp = showcase_dp(2, 2);
        let mut q = quadruple_for(example8::optimal_controls(2), 2);
        q.u[1] = vec![2.0, 0.0];
        let rep = feasibility_residuals(&dp, &q, 1e-9).unwrap();
        assert!(!rep.feasible);
        assert!((rep.control_violations[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cost_gradient_matches_finite_differences() {
        let dp = showcase_dp(2, 128);
        let base_controls = example8::optimal_controls(2);
        // Random-ish probe points around the optimum, staying in the box.
        let probes = [
            vec![-0.4, 0.1],
            vec![-0.3, 0.2],
            vec![-0.9, -0.5],
            vec![0.5, 0.5],
            vec![0.0, -0.7],
            vec![0.3, 0.9],
            vec![-0.6, 0.7],
            vec![0.8, -0.1],
            vec![-0.2, -0.2],
            vec![0.1, 0.4],
        ];
        for probe in probes {
            let mut ctrl = base_controls.clone();
            ctrl[1] = probe.clone();
            let q = quadruple_for(ctrl.clone(), 2);
            let g = cost_gradient_u(&dp, &q, 1).unwrap();
            let s = 1e-6;
            for c in 0..2 {
                // Central difference holding the trajectory fixed.
                let mut qp = q.clone();
                qp.u[1][c] += s;
                let mut qm = q.clone();
                qm.u[1][c] -= s;
                let fd = (cost_jk(&dp, &qp).unwrap() - cost_jk(&dp, &qm).unwrap()) / (2.0 * s);
                let rel = (fd - g[c]).abs() / (1.0 + g[c].abs());
                assert!(rel <= 1e-4, "probe {probe:?} comp {c}: fd {fd} vs {})", g[c]);
            }
        }
    }

    #[test]
    fn refined_reference_grid_shrinks_proximity_error() {
        // The proximity integral under grid refinement settles monotonically
        // for a candidate with constant gaps.
        let mut controls = example8::optimal_controls(2);
        controls[1] = vec![-0.2, 0.05];
        let q = quadruple_for(controls, 2);
        let mut last = f64::INFINITY;
        let mut values = Vec::new();
        for refn in [2usize, 4, 8, 16, 32] {
            let dp = showcase_dp(2, refn);
            let j = cost_jk(&dp, &q).unwrap();
            values.push(j);
            last = j.min(last);
        }
        // Differences between consecutive refinements shrink.
        let d1 = (values[1] - values[0]).abs();
        let d4 = (values[4] - values[3]).abs();
        assert!(d4 <= d1 + 1e-15, "refinement drift {values:?}");
    }
}
