//! Dual certificates for the discrete necessary optimality conditions.
//!
//! For a candidate quadruple the conditions form a system that is linear in
//! the dual variables once a branch of the sign rule for the row multipliers
//! `gamma` is fixed per constraint cell. The engine enumerates the genuinely
//! ambiguous branches, solves one small LP per pattern (minimize the
//! infinity norm of the condition residuals subject to the sign constraints
//! and the nontriviality normalization), and returns the best certificate;
//! among residual-minimal duals a second LP maximizes `lambda`, so normal
//! (non-degenerate) certificates are preferred whenever they exist.
//!
//! Condition families for the moving-set rows and offsets (their adjoints,
//! norm-band multipliers, and closures) enter only when those controls are
//! decision variables; for a fixed moving set the corresponding constraints
//! are absent from the underlying program and the families are dropped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2};
use crate::lp::{LinProg, LpOutcome, Rel};
use crate::nnls::nnls;
use crate::sweeping::{ControlSet, DiscreteQuadruple, OffsetControl, RowControl, RunningCostGrads};
use crate::transcription::{theta_terms, DiscreteProblem, ThetaTerms};

/// Which condition set to assemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionMode {
    /// The raw dual system of the mathematical-programming reduction,
    /// reported with its own nontriviality sum.
    Th71,
    /// The data-expressed conditions (default).
    Th72,
}

/// Branch of the sign rule for one constraint cell (i, j).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaBranch {
    /// Inactive constraint: gamma pinned to zero.
    InactiveZero,
    /// Active, zero multiplier, leaving direction: gamma = 0, <a, y> <= 0.
    ZeroWNonpos,
    /// Active, zero multiplier, entering direction: gamma >= 0, <a, y> >= 0.
    NonnegWNonneg,
    /// Positive multiplier: <a, y> = 0 and gamma free; the flag fixes the
    /// sign used to linearize |gamma| in the normalization row.
    FreeWZero { nonneg: bool },
}

impl GammaBranch {
    fn label(&self) -> String {
        match self {
            GammaBranch::InactiveZero => "inactive".into(),
            GammaBranch::ZeroWNonpos => "zero_leave".into(),
            GammaBranch::NonnegWNonneg => "nonneg_enter".into(),
            GammaBranch::FreeWZero { nonneg: true } => "free_pos".into(),
            GammaBranch::FreeWZero { nonneg: false } => "free_neg".into(),
        }
    }
}

/// A full case pattern: one branch per (j, i) cell.
pub type CasePattern = Vec<Vec<GammaBranch>>;

/// The multiplier tuple of a certificate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualCertificate {
    pub lambda: f64,
    /// eta_0 .. eta_{nu-1} from the primal arc plus the endpoint multiplier
    /// eta_nu.
    pub eta: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub p_x: Vec<Vec<f64>>,
    /// Flattened m x n row adjoints; zero unless the rows are decision
    /// controls.
    pub p_a: Vec<Vec<f64>>,
    pub p_b: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    pub alpha1: Vec<Vec<f64>>,
    pub alpha2: Vec<Vec<f64>>,
    pub case_pattern: Vec<Vec<String>>,
    /// The terminal-cost gradient and running-cost gradient selections used.
    pub terminal_gradient: Vec<f64>,
    pub running_gradients: Vec<RunningCostGrads>,
}

impl DualCertificate {
    /// Nontriviality normalization sum
    /// `lambda + ||alpha1 + alpha2||_1 + ||gamma||_1`.
    pub fn normalization_sum(&self) -> f64 {
        let mut s = self.lambda;
        for (a1, a2) in self.alpha1.iter().zip(&self.alpha2) {
            for (x, y) in a1.iter().zip(a2) {
                s += (x + y).abs();
            }
        }
        for g in &self.gamma {
            for v in g {
                s += v.abs();
            }
        }
        s
    }

    /// Rescale all dual variables so the normalization sum equals one.
    pub fn normalize(&self) -> DualCertificate {
        let s = self.normalization_sum();
        if s <= 0.0 {
            return self.clone();
        }
        let f = 1.0 / s;
        let mul = |m: &[Vec<f64>]| -> Vec<Vec<f64>> {
            m.iter().map(|r| r.iter().map(|v| f * v).collect()).collect()
        };
        let mut eta = self.eta.clone();
        if let Some(last) = eta.last_mut() {
            for v in last.iter_mut() {
                *v *= f;
            }
        }
        DualCertificate {
            lambda: f * self.lambda,
            eta,
            gamma: mul(&self.gamma),
            p_x: mul(&self.p_x),
            p_a: mul(&self.p_a),
            p_b: mul(&self.p_b),
            psi: mul(&self.psi),
            alpha1: mul(&self.alpha1),
            alpha2: mul(&self.alpha2),
            case_pattern: self.case_pattern.clone(),
            terminal_gradient: self.terminal_gradient.clone(),
            running_gradients: self.running_gradients.clone(),
        }
    }
}

struct CellData {
    /// Constraint slacks per (j, i) for j = 0..nu.
    slacks: Vec<Vec<f64>>,
    /// Activity tolerance per j.
    act_tol: Vec<f64>,
    /// Primal step multipliers per (j, i), j < nu.
    eta: Vec<Vec<f64>>,
    /// Endpoint active flags.
    end_active: Vec<bool>,
}

fn cell_data(q: &DiscreteQuadruple) -> Result<CellData> {
    let nu = q.nu();
    let mut slacks = Vec::with_capacity(nu + 1);
    let mut act_tol = Vec::with_capacity(nu + 1);
    for j in 0..=nu {
        let poly = q.polyhedron_at(j)?;
        slacks.push(poly.slacks(&q.x[j]));
        act_tol.push(poly.default_tol(&q.x[j]).max(1e-9));
    }
    let end_active = slacks[nu].iter().map(|s| s.abs() <= act_tol[nu]).collect();
    Ok(CellData { slacks, act_tol, eta: q.eta.clone(), end_active })
}

/// Residuals of the primal arc representation per step.
fn primal_residuals(dp: &DiscreteProblem, q: &DiscreteQuadruple) -> Vec<f64> {
    let nu = q.nu();
    let mut out = Vec::with_capacity(nu);
    for j in 0..nu {
        let h = q.h(j);
        let mut r: Vec<f64> =
            q.x[j + 1].iter().zip(&q.x[j]).map(|(xn, xc)| -(xn - xc) / h).collect();
        let drift = dp.base.g.eval(&q.x[j], &q.u[j]);
        for (ri, di) in r.iter_mut().zip(&drift) {
            *ri += di;
        }
        for (i, row) in q.a[j].iter().enumerate() {
            crate::linalg::axpy(-q.eta[j][i], row, &mut r);
        }
        out.push(norm2(&r));
    }
    out
}

/// Variable indices of the dual LP.
struct VarMap {
    lambda: usize,
    xi: Vec<usize>,
    gamma: Vec<Vec<usize>>,
    p_x: Vec<Vec<usize>>,
    psi: Vec<Vec<usize>>,
    p_a: Vec<Vec<usize>>,
    p_b: Vec<Vec<usize>>,
    alpha1: Vec<Vec<usize>>,
    alpha2: Vec<Vec<usize>>,
    /// Ray parameters for sphere-face normal cones of ball control sets.
    ball_t: Vec<Option<usize>>,
    total: usize,
}

/// One linear condition row: `sum(terms) - rhs` is the residual.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionRow {
    pub family: String,
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Hard constraint: `sum(terms) rel rhs`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HardRow {
    pub terms: Vec<(usize, f64)>,
    pub rel: String,
    pub rhs: f64,
}

/// Assembled linear description of the optimality conditions under a fixed
/// case pattern.
pub struct AssembledSystem {
    pub var_names: Vec<String>,
    pub soft: Vec<ConditionRow>,
    pub hard: Vec<HardRow>,
    map: VarMap,
    decision_a: bool,
    decision_b: bool,
}

fn running_grads(dp: &DiscreteProblem, q: &DiscreteQuadruple) -> Vec<RunningCostGrads> {
    (0..q.nu()).map(|j| dp.base.ell.gradients(dp.base.n, dp.base.m, &q.u[j])).collect()
}

/// Assemble the condition system for a candidate and a case pattern.
///
/// Errors with `PrimalInfeasible` when the quadruple's multipliers cannot
/// reproduce the step velocities within tolerance.
pub fn assemble_conditions(
    dp: &DiscreteProblem,
    q: &DiscreteQuadruple,
    pattern: &CasePattern,
    _mode: ConditionMode,
) -> Result<AssembledSystem> {
    let nu = q.nu();
    let n = dp.base.n;
    let m = dp.base.m;
    let d = dp.base.d;
    if pattern.len() != nu || pattern.iter().any(|r| r.len() != m) {
        return Err(Error::DimensionMismatch("pattern shape".into()));
    }

    // Primal consistency: eta must reproduce the step velocities.
    let prim = primal_residuals(dp, q);
    for (j, res) in prim.iter().enumerate() {
        if *res > 1e-7 {
            // Retry with a fresh nonnegative fit before giving up.
            let h = q.h(j);
            let drift = dp.base.g.eval(&q.x[j], &q.u[j]);
            let target: Vec<f64> = q.x[j + 1]
                .iter()
                .zip(&q.x[j])
                .zip(&drift)
                .map(|((xn, xc), g)| -(xn - xc) / h + g)
                .collect();
            let fit = nnls(&q.a[j], &target);
            if fit.residual > 1e-7 {
                return Err(Error::PrimalInfeasible { residual: fit.residual });
            }
        }
    }

    let thetas = theta_terms(dp, q)?;
    let grads = running_grads(dp, q);
    let decision_a = matches!(dp.base.a_ctrl, RowControl::Decision { .. });
    let decision_b = matches!(dp.base.b_ctrl, OffsetControl::Decision);

    // Variable layout.
    let mut names: Vec<String> = Vec::new();
    fn push(name: String, names: &mut Vec<String>) -> usize {
        names.push(name);
        names.len() - 1
    }
    let lambda = push("lambda".into(), &mut names);
    let xi: Vec<usize> = (0..m).map(|i| push(format!("xi[{i}]"), &mut names)).collect();
    let gamma: Vec<Vec<usize>> = (0..nu)
        .map(|j| (0..m).map(|i| push(format!("gamma[{j}][{i}]"), &mut names)).collect())
        .collect();
    let p_x: Vec<Vec<usize>> = (0..=nu)
        .map(|j| (0..n).map(|c| push(format!("p_x[{j}][{c}]"), &mut names)).collect())
        .collect();
    let psi: Vec<Vec<usize>> = (0..nu)
        .map(|j| (0..d).map(|c| push(format!("psi[{j}][{c}]"), &mut names)).collect())
        .collect();
    let (p_a, alpha1, alpha2) = if decision_a {
        (
            (0..=nu)
                .map(|j| (0..m * n).map(|c| push(format!("p_a[{j}][{c}]"), &mut names)).collect())
                .collect(),
            (0..=nu)
                .map(|j| (0..m).map(|i| push(format!("alpha1[{j}][{i}]"), &mut names)).collect())
                .collect(),
            (0..=nu)
                .map(|j| (0..m).map(|i| push(format!("alpha2[{j}][{i}]"), &mut names)).collect())
                .collect(),
        )
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    let p_b: Vec<Vec<usize>> = if decision_b {
        (0..=nu)
            .map(|j| (0..m).map(|i| push(format!("p_b[{j}][{i}]"), &mut names)).collect())
            .collect()
    } else {
        Vec::new()
    };
    let mut ball_t: Vec<Option<usize>> = vec![None; nu];
    if let ControlSet::Ball { center, radius } = &dp.base.control_set {
        for j in 0..nu {
            let on_sphere = (norm2(&crate::linalg::sub(&q.u[j], center)) - radius).abs() <= 1e-7;
            if on_sphere {
                ball_t[j] = Some(push(format!("ball_t[{j}]"), &mut names));
            }
        }
    }
    let total = names.len();
    let map = VarMap { lambda, xi, gamma, p_x, psi, p_a, p_b, alpha1, alpha2, ball_t, total };

    let cells = cell_data(q)?;
    let mut soft: Vec<ConditionRow> = Vec::new();
    let mut hard: Vec<HardRow> = Vec::new();

    let grad_x = dp.base.g.grad_x(n);
    let grad_u = dp.base.g.grad_u(n, d);
    let phi_grad = dp.base.phi.gradient(&q.x[nu]);

    // y_j = lambda c_j + p_x[j+1] with c_j = -theta_x[j]/h_j - v^x_j.
    let c_vec = |j: usize| -> Vec<f64> {
        let h = q.h(j);
        (0..n).map(|c| -thetas.theta_x[j][c] / h - grads[j].vx[c]).collect()
    };
    // Linear form <row, y_j> as LP terms.
    let ay_terms = |j: usize, row: &[f64]| -> Vec<(usize, f64)> {
        let cj = c_vec(j);
        let mut terms: Vec<(usize, f64)> = (0..n).map(|c| (map.p_x[j + 1][c], row[c])).collect();
        terms.push((map.lambda, dot(row, &cj)));
        terms
    };

    for j in 0..nu {
        let h = q.h(j);
        let cj = c_vec(j);

        // adjoint_x rows (n components):
        // (p_x[j+1] - p_x[j])/h - lambda w^x + Gx^T y_j - sum_i gamma a_i = 0.
        for c in 0..n {
            let mut terms: Vec<(usize, f64)> =
                vec![(map.p_x[j + 1][c], 1.0 / h), (map.p_x[j][c], -1.0 / h)];
            let mut lam = -grads[j].wx[c];
            for r in 0..n {
                let g = grad_x[r][c];
                if g != 0.0 {
                    lam += g * cj[r];
                    terms.push((map.p_x[j + 1][r], g));
                }
            }
            terms.push((map.lambda, lam));
            for i in 0..m {
                terms.push((map.gamma[j][i], -q.a[j][i][c]));
            }
            soft.push(ConditionRow { family: "adjoint_x".into(), terms, rhs: 0.0 });
        }

        // Local maximum principle rows (d components):
        // -(1/h) psi - (1/h) lambda theta_u - lambda w^u + Gu^T y_j = 0.
        for c in 0..d {
            let mut terms: Vec<(usize, f64)> = vec![(map.psi[j][c], -1.0 / h)];
            let mut lam = -thetas.theta_u[j][c] / h - grads[j].wu[c];
            for r in 0..n {
                let g = grad_u[r][c];
                if g != 0.0 {
                    lam += g * cj[r];
                    terms.push((map.p_x[j + 1][r], g));
                }
            }
            terms.push((map.lambda, lam));
            soft.push(ConditionRow { family: "max_principle".into(), terms, rhs: 0.0 });
        }

        // Branch rows per cell.
        for i in 0..m {
            match pattern[j][i] {
                GammaBranch::InactiveZero => {
                    hard.push(HardRow {
                        terms: vec![(map.gamma[j][i], 1.0)],
                        rel: "eq".into(),
                        rhs: 0.0,
                    });
                }
                GammaBranch::ZeroWNonpos => {
                    hard.push(HardRow {
                        terms: vec![(map.gamma[j][i], 1.0)],
                        rel: "eq".into(),
                        rhs: 0.0,
                    });
                    let neg: Vec<(usize, f64)> =
                        ay_terms(j, &q.a[j][i]).into_iter().map(|(k, v)| (k, -v)).collect();
                    hard.push(HardRow { terms: neg, rel: "ge".into(), rhs: 0.0 });
                }
                GammaBranch::NonnegWNonneg => {
                    hard.push(HardRow {
                        terms: vec![(map.gamma[j][i], 1.0)],
                        rel: "ge".into(),
                        rhs: 0.0,
                    });
                    hard.push(HardRow { terms: ay_terms(j, &q.a[j][i]), rel: "ge".into(), rhs: 0.0 });
                }
                GammaBranch::FreeWZero { nonneg } => {
                    hard.push(HardRow { terms: ay_terms(j, &q.a[j][i]), rel: "eq".into(), rhs: 0.0 });
                    hard.push(HardRow {
                        terms: vec![(map.gamma[j][i], if nonneg { 1.0 } else { -1.0 })],
                        rel: "ge".into(),
                        rhs: 0.0,
                    });
                }
            }
        }

        // psi_j in N(u_j; U).
        match &dp.base.control_set {
            ControlSet::Box { lo, hi } => {
                let ftol = 1e-7;
                for c in 0..d {
                    let at_lo = (q.u[j][c] - lo[c]).abs() <= ftol * (1.0 + lo[c].abs());
                    let at_hi = (q.u[j][c] - hi[c]).abs() <= ftol * (1.0 + hi[c].abs());
                    if at_lo && at_hi {
                        // Degenerate interval: psi free.
                    } else if at_lo {
                        hard.push(HardRow {
                            terms: vec![(map.psi[j][c], -1.0)],
                            rel: "ge".into(),
                            rhs: 0.0,
                        });
                    } else if at_hi {
                        hard.push(HardRow {
                            terms: vec![(map.psi[j][c], 1.0)],
                            rel: "ge".into(),
                            rhs: 0.0,
                        });
                    } else {
                        hard.push(HardRow {
                            terms: vec![(map.psi[j][c], 1.0)],
                            rel: "eq".into(),
                            rhs: 0.0,
                        });
                    }
                }
            }
            ControlSet::Ball { center, .. } => match map.ball_t[j] {
                Some(tvar) => {
                    for c in 0..d {
                        hard.push(HardRow {
                            terms: vec![(map.psi[j][c], 1.0), (tvar, -(q.u[j][c] - center[c]))],
                            rel: "eq".into(),
                            rhs: 0.0,
                        });
                    }
                    hard.push(HardRow { terms: vec![(tvar, 1.0)], rel: "ge".into(), rhs: 0.0 });
                }
                None => {
                    for c in 0..d {
                        hard.push(HardRow {
                            terms: vec![(map.psi[j][c], 1.0)],
                            rel: "eq".into(),
                            rhs: 0.0,
                        });
                    }
                }
            },
            ControlSet::Finite { .. } => {
                return Err(Error::BadProblem(
                    "certification supports box and ball control sets".into(),
                ));
            }
        }

        if decision_a {
            // adjoint_a: (p_a[j+1] - p_a[j])/h - lambda w^a
            //   - (2/h)(alpha1 + alpha2) a_j - gamma_j x_j - eta_j y_j = 0.
            for i in 0..m {
                for c in 0..n {
                    let k = i * n + c;
                    let terms: Vec<(usize, f64)> = vec![
                        (map.p_a[j + 1][k], 1.0 / h),
                        (map.p_a[j][k], -1.0 / h),
                        (map.alpha1[j][i], -2.0 / h * q.a[j][i][c]),
                        (map.alpha2[j][i], -2.0 / h * q.a[j][i][c]),
                        (map.gamma[j][i], -q.x[j][c]),
                        (map.p_x[j + 1][c], -cells.eta[j][i]),
                        (map.lambda, -grads[j].wa[k] - cells.eta[j][i] * cj[c]),
                    ];
                    soft.push(ConditionRow { family: "adjoint_a".into(), terms, rhs: 0.0 });
                }
            }
            // Closure: p_a[j+1] = lambda (v^a_j + theta_a[j]/h_j).
            for k in 0..m * n {
                let coeff = grads[j].va[k] + thetas.theta_a[j][k] / h;
                soft.push(ConditionRow {
                    family: "p_closure".into(),
                    terms: vec![(map.p_a[j + 1][k], 1.0), (map.lambda, -coeff)],
                    rhs: 0.0,
                });
            }
        }
        if decision_b {
            // adjoint_b: (p_b[j+1] - p_b[j])/h - lambda w^b + gamma_j = 0.
            for i in 0..m {
                let terms: Vec<(usize, f64)> = vec![
                    (map.p_b[j + 1][i], 1.0 / h),
                    (map.p_b[j][i], -1.0 / h),
                    (map.lambda, -grads[j].wb[i]),
                    (map.gamma[j][i], 1.0),
                ];
                soft.push(ConditionRow { family: "adjoint_b".into(), terms, rhs: 0.0 });
            }
            // Closure: p_b[j+1] = lambda (v^b_j + theta_b[j]/h_j).
            for i in 0..m {
                let coeff = grads[j].vb[i] + thetas.theta_b[j][i] / h;
                soft.push(ConditionRow {
                    family: "p_closure".into(),
                    terms: vec![(map.p_b[j + 1][i], 1.0), (map.lambda, -coeff)],
                    rhs: 0.0,
                });
            }
        }
    }

    // Norm-band multiplier signs and complementarity pins (decision rows).
    if decision_a {
        let band = match &dp.base.a_ctrl {
            RowControl::Decision { band } => *band,
            _ => [1.0 - dp.delta_k, 1.0 + dp.delta_k],
        };
        for j in 0..=nu {
            for i in 0..m {
                let nr = norm2(&q.a[j][i]);
                if nr < band[1] - 1e-9 {
                    hard.push(HardRow {
                        terms: vec![(map.alpha1[j][i], 1.0)],
                        rel: "eq".into(),
                        rhs: 0.0,
                    });
                }
                if nr > band[0] + 1e-9 {
                    hard.push(HardRow {
                        terms: vec![(map.alpha2[j][i], 1.0)],
                        rel: "eq".into(),
                        rhs: 0.0,
                    });
                }
                hard.push(HardRow {
                    terms: vec![(map.alpha1[j][i], 1.0)],
                    rel: "ge".into(),
                    rhs: 0.0,
                });
                hard.push(HardRow {
                    terms: vec![(map.alpha2[j][i], -1.0)],
                    rel: "ge".into(),
                    rhs: 0.0,
                });
            }
        }
    }

    // Transversality: p_x[nu] + lambda grad_phi + sum_i xi_i a_i(nu) = 0.
    for c in 0..n {
        let mut terms: Vec<(usize, f64)> =
            vec![(map.p_x[nu][c], 1.0), (map.lambda, phi_grad[c])];
        for i in 0..m {
            terms.push((map.xi[i], q.a[nu][i][c]));
        }
        soft.push(ConditionRow { family: "transversality".into(), terms, rhs: 0.0 });
    }
    for i in 0..m {
        hard.push(HardRow { terms: vec![(map.xi[i], 1.0)], rel: "ge".into(), rhs: 0.0 });
        if !cells.end_active[i] {
            hard.push(HardRow { terms: vec![(map.xi[i], 1.0)], rel: "eq".into(), rhs: 0.0 });
        }
    }
    if decision_a {
        for i in 0..m {
            for c in 0..n {
                let k = i * n + c;
                let terms: Vec<(usize, f64)> = vec![
                    (map.p_a[nu][k], 1.0),
                    (map.alpha1[nu][i], 2.0 * q.a[nu][i][c]),
                    (map.alpha2[nu][i], 2.0 * q.a[nu][i][c]),
                    (map.xi[i], q.x[nu][c]),
                ];
                soft.push(ConditionRow { family: "transversality".into(), terms, rhs: 0.0 });
            }
        }
    }
    if decision_b {
        for i in 0..m {
            let terms: Vec<(usize, f64)> = vec![(map.p_b[nu][i], 1.0), (map.xi[i], -1.0)];
            soft.push(ConditionRow { family: "transversality".into(), terms, rhs: 0.0 });
        }
    }

    // lambda >= 0 and the normalization row: lambda + ||gamma||_1
    // (+ alpha1 - alpha2 in decision mode) = 1.
    hard.push(HardRow { terms: vec![(map.lambda, 1.0)], rel: "ge".into(), rhs: 0.0 });
    let mut norm_terms: Vec<(usize, f64)> = vec![(map.lambda, 1.0)];
    for j in 0..nu {
        for i in 0..m {
            match pattern[j][i] {
                GammaBranch::InactiveZero | GammaBranch::ZeroWNonpos => {}
                GammaBranch::NonnegWNonneg => norm_terms.push((map.gamma[j][i], 1.0)),
                GammaBranch::FreeWZero { nonneg } => {
                    norm_terms.push((map.gamma[j][i], if nonneg { 1.0 } else { -1.0 }))
                }
            }
        }
    }
    if decision_a {
        for j in 0..=nu {
            for i in 0..m {
                norm_terms.push((map.alpha1[j][i], 1.0));
                norm_terms.push((map.alpha2[j][i], -1.0));
            }
        }
    }
    hard.push(HardRow { terms: norm_terms, rel: "eq".into(), rhs: 1.0 });

    Ok(AssembledSystem { var_names: names, soft, hard, map, decision_a, decision_b })
}

/// Branch menus per cell: forced where activity or multiplier positivity
/// decides, two or four branches where genuinely ambiguous.
fn branch_menus(q: &DiscreteQuadruple) -> Result<Vec<Vec<Vec<GammaBranch>>>> {
    let cells = cell_data(q)?;
    let nu = q.nu();
    let m = q.eta.first().map_or(0, |e| e.len());
    let eta_tol = 1e-9;
    let mut menus = Vec::with_capacity(nu);
    for j in 0..nu {
        let mut row = Vec::with_capacity(m);
        for i in 0..m {
            let slack = cells.slacks[j][i];
            let eta = cells.eta[j][i];
            let menu: Vec<GammaBranch> = if slack < -cells.act_tol[j] {
                vec![GammaBranch::InactiveZero]
            } else if eta > eta_tol {
                vec![
                    GammaBranch::FreeWZero { nonneg: false },
                    GammaBranch::FreeWZero { nonneg: true },
                ]
            } else if eta > 0.0 {
                vec![
                    GammaBranch::ZeroWNonpos,
                    GammaBranch::NonnegWNonneg,
                    GammaBranch::FreeWZero { nonneg: false },
                    GammaBranch::FreeWZero { nonneg: true },
                ]
            } else {
                vec![GammaBranch::ZeroWNonpos, GammaBranch::NonnegWNonneg]
            };
            row.push(menu);
        }
        menus.push(row);
    }
    Ok(menus)
}

const PATTERN_CAP: usize = 59049; // 3^10

/// Search output.
#[derive(Clone, Debug)]
pub struct CertificateSearch {
    pub certificate: DualCertificate,
    /// Minimal infinity-norm of the condition residuals over all patterns.
    pub residual: f64,
    pub patterns_tried: usize,
    pub pattern_budget_exceeded: bool,
}

fn solve_pattern(sys: &AssembledSystem) -> Option<(f64, Vec<f64>)> {
    // Phase 1: minimize the residual bound t.
    let nv = sys.map.total;
    let mut lp = LinProg::new();
    for _ in 0..nv {
        lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY);
    }
    let t = lp.add_var(1.0, 0.0, f64::INFINITY);
    for row in &sys.soft {
        let mut up: Vec<(usize, f64)> = row.terms.clone();
        up.push((t, -1.0));
        lp.add_row_sparse(&up, Rel::Le, row.rhs);
        let mut dn: Vec<(usize, f64)> = row.terms.clone();
        dn.push((t, 1.0));
        lp.add_row_sparse(&dn, Rel::Ge, row.rhs);
    }
    for hr in &sys.hard {
        let rel = match hr.rel.as_str() {
            "eq" => Rel::Eq,
            "ge" => Rel::Ge,
            _ => Rel::Le,
        };
        lp.add_row_sparse(&hr.terms, rel, hr.rhs);
    }
    let (x1, t_star) = match lp.solve() {
        LpOutcome::Optimal { x, value } => (x, value.max(0.0)),
        _ => return None,
    };

    // Phase 2: among residual-minimal duals, maximize lambda.
    let bound = t_star + 1e-10 * (1.0 + t_star);
    let mut lp2 = LinProg::new();
    for k in 0..nv {
        let obj = if k == sys.map.lambda { -1.0 } else { 0.0 };
        lp2.add_var(obj, f64::NEG_INFINITY, f64::INFINITY);
    }
    for row in &sys.soft {
        lp2.add_row_sparse(&row.terms, Rel::Le, row.rhs + bound);
        lp2.add_row_sparse(&row.terms, Rel::Ge, row.rhs - bound);
    }
    for hr in &sys.hard {
        let rel = match hr.rel.as_str() {
            "eq" => Rel::Eq,
            "ge" => Rel::Ge,
            _ => Rel::Le,
        };
        lp2.add_row_sparse(&hr.terms, rel, hr.rhs);
    }
    match lp2.solve() {
        LpOutcome::Optimal { x, .. } => Some((t_star, x[..nv].to_vec())),
        _ => Some((t_star, x1[..nv].to_vec())),
    }
}

fn extract_certificate(
    dp: &DiscreteProblem,
    q: &DiscreteQuadruple,
    sys: &AssembledSystem,
    z: &[f64],
    pattern: &CasePattern,
) -> DualCertificate {
    let nu = q.nu();
    let n = dp.base.n;
    let m = dp.base.m;
    let map = &sys.map;
    let grab = |idx: &Vec<usize>| -> Vec<f64> { idx.iter().map(|&k| z[k]).collect() };
    let mut eta = q.eta.clone();
    eta.push(grab(&map.xi));
    let zeros = |rows: usize, cols: usize| vec![vec![0.0; cols]; rows];
    DualCertificate {
        lambda: z[map.lambda],
        eta,
        gamma: map.gamma.iter().map(grab).collect(),
        p_x: map.p_x.iter().map(grab).collect(),
        p_a: if sys.decision_a { map.p_a.iter().map(grab).collect() } else { zeros(nu + 1, m * n) },
        p_b: if sys.decision_b { map.p_b.iter().map(grab).collect() } else { zeros(nu + 1, m) },
        psi: map.psi.iter().map(grab).collect(),
        alpha1: if sys.decision_a {
            map.alpha1.iter().map(grab).collect()
        } else {
            zeros(nu + 1, m)
        },
        alpha2: if sys.decision_a {
            map.alpha2.iter().map(grab).collect()
        } else {
            zeros(nu + 1, m)
        },
        case_pattern: pattern.iter().map(|row| row.iter().map(|b| b.label()).collect()).collect(),
        terminal_gradient: dp.base.phi.gradient(&q.x[nu]),
        running_gradients: running_grads(dp, q),
    }
}

/// Enumerate case patterns, solve the residual LP per pattern, and return
/// the best certificate: minimal residual, and among residual-minimal
/// patterns the one admitting the largest `lambda`.
pub fn find_certificate(
    dp: &DiscreteProblem,
    q: &DiscreteQuadruple,
    mode: ConditionMode,
) -> Result<CertificateSearch> {
    let menus = branch_menus(q)?;
    let nu = q.nu();
    let m = dp.base.m;
    let sizes: Vec<usize> = menus.iter().flatten().map(|menu| menu.len()).collect();
    let total = sizes.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s)).unwrap_or(usize::MAX);
    let capped = total.min(PATTERN_CAP);
    let budget_exceeded = total > PATTERN_CAP;

    let mut best: Option<(f64, f64, DualCertificate)> = None;
    for idx in 0..capped {
        let mut rem = idx;
        let mut pattern: CasePattern = Vec::with_capacity(nu);
        let mut k = 0;
        for j in 0..nu {
            let mut row = Vec::with_capacity(m);
            for i in 0..m {
                let s = sizes[k];
                row.push(menus[j][i][rem % s]);
                rem /= s;
                k += 1;
            }
            pattern.push(row);
        }
        let sys = assemble_conditions(dp, q, &pattern, mode)?;
        let Some((t_star, z)) = solve_pattern(&sys) else {
            continue;
        };
        let lam = z[sys.map.lambda];
        let better = match &best {
            None => true,
            Some((bt, bl, _)) => {
                t_star < bt - 1e-12 || ((t_star - bt).abs() <= 1e-12 && lam > bl + 1e-12)
            }
        };
        if better {
            let cert = extract_certificate(dp, q, &sys, &z, &pattern);
            best = Some((t_star, lam, cert));
        }
    }
    let (residual, _, certificate) = best.ok_or(Error::DomainViolation)?;
    Ok(CertificateSearch {
        certificate,
        residual,
        patterns_tried: capped,
        pattern_budget_exceeded: budget_exceeded,
    })
}

/// Per-family residual report of a certificate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateReport {
    pub families: Vec<(String, f64)>,
    pub max_residual: f64,
    /// The two nontriviality sums of the data-expressed conditions.
    pub ntc_sum: f64,
    pub ntc1_sum: f64,
    /// Nontriviality sum of the raw dual system.
    pub raw_sum: f64,
}

impl CertificateReport {
    pub fn family(&self, name: &str) -> f64 {
        self.families.iter().find(|(f, _)| f == name).map(|(_, v)| *v).unwrap_or(f64::NAN)
    }
}

/// Evaluate every condition family on a given certificate.
pub fn check_certificate(
    dp: &DiscreteProblem,
    q: &DiscreteQuadruple,
    cert: &DualCertificate,
    mode: ConditionMode,
) -> Result<CertificateReport> {
    let nu = q.nu();
    let n = dp.base.n;
    let m = dp.base.m;
    let d = dp.base.d;
    if cert.p_x.len() != nu + 1
        || cert.gamma.len() != nu
        || cert.psi.len() != nu
        || cert.eta.len() != nu + 1
        || cert.p_x.iter().any(|v| v.len() != n)
        || cert.psi.iter().any(|v| v.len() != d)
        || cert.gamma.iter().any(|v| v.len() != m)
    {
        return Err(Error::DimensionMismatch("certificate arrays".into()));
    }
    let thetas: ThetaTerms = theta_terms(dp, q)?;
    let grads = running_grads(dp, q);
    let grad_x = dp.base.g.grad_x(n);
    let grad_u = dp.base.g.grad_u(n, d);
    let phi_grad = dp.base.phi.gradient(&q.x[nu]);
    let cells = cell_data(q)?;
    let decision_a = matches!(dp.base.a_ctrl, RowControl::Decision { .. });
    let decision_b = matches!(dp.base.b_ctrl, OffsetControl::Decision);

    let mut fam: Vec<(String, f64)> = Vec::new();
    fn push(fam: &mut Vec<(String, f64)>, name: &str, v: f64) {
        if let Some(slot) = fam.iter_mut().find(|(f, _)| f == name) {
            slot.1 = slot.1.max(v);
        } else {
            fam.push((name.into(), v));
        }
    }

    let prim = primal_residuals(dp, q);
    push(&mut fam, "primal_arc", prim.iter().copied().fold(0.0, f64::max));

    let y_vec = |j: usize| -> Vec<f64> {
        let h = q.h(j);
        (0..n)
            .map(|c| {
                cert.lambda * (-thetas.theta_x[j][c] / h - grads[j].vx[c]) + cert.p_x[j + 1][c]
            })
            .collect()
    };

    for j in 0..nu {
        let h = q.h(j);
        let y = y_vec(j);
        for c in 0..n {
            let mut r = (cert.p_x[j + 1][c] - cert.p_x[j][c]) / h - cert.lambda * grads[j].wx[c];
            for t in 0..n {
                r += grad_x[t][c] * y[t];
            }
            for i in 0..m {
                r -= cert.gamma[j][i] * q.a[j][i][c];
            }
            push(&mut fam, "adjoint_x", r.abs());
        }
        for c in 0..d {
            let mut r = -cert.psi[j][c] / h
                - cert.lambda * thetas.theta_u[j][c] / h
                - cert.lambda * grads[j].wu[c];
            for t in 0..n {
                r += grad_u[t][c] * y[t];
            }
            push(&mut fam, "max_principle", r.abs());
        }
        // Normal-cone membership of psi and the maximization gap.
        match &dp.base.control_set {
            ControlSet::Box { lo, hi } => {
                let ftol = 1e-7;
                for c in 0..d {
                    let at_lo = (q.u[j][c] - lo[c]).abs() <= ftol * (1.0 + lo[c].abs());
                    let at_hi = (q.u[j][c] - hi[c]).abs() <= ftol * (1.0 + hi[c].abs());
                    let v = if at_lo && at_hi {
                        0.0
                    } else if at_lo {
                        cert.psi[j][c].max(0.0)
                    } else if at_hi {
                        (-cert.psi[j][c]).max(0.0)
                    } else {
                        cert.psi[j][c].abs()
                    };
                    push(&mut fam, "max_principle", v);
                }
                let best: f64 = (0..d)
                    .map(|c| (cert.psi[j][c] * lo[c]).max(cert.psi[j][c] * hi[c]))
                    .sum();
                push(&mut fam, "max_principle", (best - dot(&cert.psi[j], &q.u[j])).max(0.0));
            }
            ControlSet::Ball { center, radius } => {
                let best = dot(&cert.psi[j], center) + radius * norm2(&cert.psi[j]);
                push(&mut fam, "max_principle", (best - dot(&cert.psi[j], &q.u[j])).max(0.0));
            }
            ControlSet::Finite { points } => {
                let best = points
                    .iter()
                    .map(|p| dot(&cert.psi[j], p))
                    .fold(f64::NEG_INFINITY, f64::max);
                push(&mut fam, "max_principle", (best - dot(&cert.psi[j], &q.u[j])).max(0.0));
            }
        }
        // Complementarity and the gamma sign structure.
        for i in 0..m {
            let slack = cells.slacks[j][i];
            let eta = cells.eta[j][i];
            let w = dot(&q.a[j][i], &y);
            if slack < -cells.act_tol[j] {
                push(&mut fam, "complementarity", eta.abs());
                push(&mut fam, "complementarity", cert.gamma[j][i].abs());
            } else if eta > 1e-9 {
                push(&mut fam, "complementarity", w.abs());
            } else if w > 1e-9 {
                push(&mut fam, "complementarity", (-cert.gamma[j][i]).max(0.0));
            } else if w < -1e-9 {
                push(&mut fam, "complementarity", cert.gamma[j][i].abs());
            }
            push(&mut fam, "complementarity", (eta * slack).abs());
        }
        if decision_a {
            for i in 0..m {
                for c in 0..n {
                    let k = i * n + c;
                    let r = (cert.p_a[j + 1][k] - cert.p_a[j][k]) / h
                        - cert.lambda * grads[j].wa[k]
                        - 2.0 / h * (cert.alpha1[j][i] + cert.alpha2[j][i]) * q.a[j][i][c]
                        - cert.gamma[j][i] * q.x[j][c]
                        - cells.eta[j][i] * y[c];
                    push(&mut fam, "adjoint_a", r.abs());
                }
            }
            for k in 0..m * n {
                let r = cert.p_a[j + 1][k]
                    - cert.lambda * (grads[j].va[k] + thetas.theta_a[j][k] / h);
                push(&mut fam, "p_closure", r.abs());
            }
        }
        if decision_b {
            for i in 0..m {
                let r = (cert.p_b[j + 1][i] - cert.p_b[j][i]) / h
                    - cert.lambda * grads[j].wb[i]
                    + cert.gamma[j][i];
                push(&mut fam, "adjoint_b", r.abs());
                let rc = cert.p_b[j + 1][i]
                    - cert.lambda * (grads[j].vb[i] + thetas.theta_b[j][i] / h);
                push(&mut fam, "p_closure", rc.abs());
            }
        }
    }

    for c in 0..n {
        let mut r = cert.p_x[nu][c] + cert.lambda * phi_grad[c];
        for i in 0..m {
            r += cert.eta[nu][i] * q.a[nu][i][c];
        }
        push(&mut fam, "transversality", r.abs());
    }
    for i in 0..m {
        push(&mut fam, "transversality", (-cert.eta[nu][i]).max(0.0));
        if !cells.end_active[i] {
            push(&mut fam, "complementarity", cert.eta[nu][i].abs());
        }
    }
    if decision_a {
        for i in 0..m {
            for c in 0..n {
                let k = i * n + c;
                let r = cert.p_a[nu][k]
                    + 2.0 * (cert.alpha1[nu][i] + cert.alpha2[nu][i]) * q.a[nu][i][c]
                    + cert.eta[nu][i] * q.x[nu][c];
                push(&mut fam, "transversality", r.abs());
            }
        }
    }
    if decision_b {
        for i in 0..m {
            let r = cert.p_b[nu][i] - cert.eta[nu][i];
            push(&mut fam, "transversality", r.abs());
        }
    }

    // Nontriviality sums.
    let ntc1 = cert.normalization_sum();
    let mut ntc = cert.lambda + norm2(&cert.eta[nu]) + norm2(&cert.psi.concat());
    for (a1, a2) in cert.alpha1.iter().zip(&cert.alpha2) {
        let s: Vec<f64> = a1.iter().zip(a2).map(|(x, y)| x + y).collect();
        ntc += norm2(&s);
    }
    for j in 0..nu {
        ntc += norm2(&cert.p_x[j]);
    }
    ntc += norm2(&cert.p_a[0]) + norm2(&cert.p_b[0]);
    let raw_sum = ntc;
    let nontriv = match mode {
        ConditionMode::Th72 => {
            if ntc1 < 1e-8 {
                1.0
            } else {
                (ntc1 - 1.0).abs()
            }
        }
        ConditionMode::Th71 => {
            if raw_sum < 1e-8 {
                1.0
            } else {
                0.0
            }
        }
    };
    push(&mut fam, "nontriviality", nontriv);

    let max_residual = fam.iter().map(|(_, v)| *v).fold(0.0, f64::max);
    Ok(CertificateReport { families: fam, max_residual, ntc_sum: ntc, ntc1_sum: ntc1, raw_sum })
}
