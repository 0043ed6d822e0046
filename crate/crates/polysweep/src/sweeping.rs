//! Forward simulation of the controlled sweeping inclusion
//! `xdot in -N(x; C(a,b)) + g(x,u)` and the constructive discretizer that
//! turns a sampled feasible continuous trajectory into a feasible discrete
//! quadruple with matching active sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2, sub};
use crate::nnls::{min_norm_nonneg_fit, nnls};
use crate::polyhedra::{active_set, inverse_triangle_witness, normal_cone_multipliers, project, Polyhedron};

/// Built-in perturbation mappings `g(x, u)`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    /// g = 0.
    Zero,
    /// g(x, u) = u (requires d = n).
    Identity,
    /// g(x, u) = Gx x + Gu u + c.
    Affine { gx: Vec<Vec<f64>>, gu: Vec<Vec<f64>>, c: Vec<f64> },
}

impl Perturbation {
    pub fn eval(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        match self {
            Perturbation::Zero => vec![0.0; x.len()],
            Perturbation::Identity => u.to_vec(),
            Perturbation::Affine { gx, gu, c } => {
                let mut out = c.clone();
                for (row, o) in gx.iter().zip(out.iter_mut()) {
                    *o += dot(row, x);
                }
                for (row, o) in gu.iter().zip(out.iter_mut()) {
                    *o += dot(row, u);
                }
                out
            }
        }
    }

    /// Jacobian with respect to x as n rows of length n.
    pub fn grad_x(&self, n: usize) -> Vec<Vec<f64>> {
        match self {
            Perturbation::Zero | Perturbation::Identity => vec![vec![0.0; n]; n],
            Perturbation::Affine { gx, .. } => gx.clone(),
        }
    }

    /// Jacobian with respect to u as n rows of length d.
    pub fn grad_u(&self, n: usize, d: usize) -> Vec<Vec<f64>> {
        match self {
            Perturbation::Zero => vec![vec![0.0; d]; n],
            Perturbation::Identity => {
                (0..n).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
            }
            Perturbation::Affine { gu, .. } => gu.clone(),
        }
    }

    /// Crude Lipschitz bound in (x, u), used only in diagnostics.
    pub fn lipschitz_bound(&self, n: usize, d: usize) -> f64 {
        match self {
            Perturbation::Zero => 0.0,
            Perturbation::Identity => 1.0,
            Perturbation::Affine { .. } => {
                let fx: f64 = self.grad_x(n).iter().map(|r| dot(r, r)).sum::<f64>().sqrt();
                let fu: f64 = self.grad_u(n, d).iter().map(|r| dot(r, r)).sum::<f64>().sqrt();
                fx.max(fu).max(1e-30)
            }
        }
    }
}

/// Built-in terminal costs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminalCost {
    Zero,
    /// phi(x) = <coefs, x>.
    Linear { coefs: Vec<f64> },
    /// phi(x) = sum_i coefs_i x_i^2.
    QuadraticDiag { coefs: Vec<f64> },
}

impl TerminalCost {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            TerminalCost::Zero => 0.0,
            TerminalCost::Linear { coefs } => dot(coefs, x),
            TerminalCost::QuadraticDiag { coefs } => {
                x.iter().zip(coefs).map(|(xi, c)| c * xi * xi).sum()
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            TerminalCost::Zero => vec![0.0; x.len()],
            TerminalCost::Linear { coefs } => coefs.clone(),
            TerminalCost::QuadraticDiag { coefs } => {
                x.iter().zip(coefs).map(|(xi, c)| 2.0 * c * xi).collect()
            }
        }
    }
}

/// Built-in running costs; all depend on the control only.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunningCost {
    Zero,
    /// ell = sum_i coefs_i u_i^2.
    ControlQuadraticDiag { coefs: Vec<f64> },
    /// ell = ||u||^2.
    ControlNormSq,
}

/// Gradient selection of the running cost in all of its arguments.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunningCostGrads {
    pub wx: Vec<f64>,
    pub wa: Vec<f64>,
    pub wb: Vec<f64>,
    pub wu: Vec<f64>,
    pub vx: Vec<f64>,
    pub va: Vec<f64>,
    pub vb: Vec<f64>,
}

impl RunningCost {
    #[allow(clippy::too_many_arguments)]
    pub fn value(
        &self,
        _t: f64,
        _x: &[f64],
        _a: &[Vec<f64>],
        _b: &[f64],
        u: &[f64],
        _xdot: &[f64],
        _adot: &[Vec<f64>],
        _bdot: &[f64],
    ) -> f64 {
        match self {
            RunningCost::Zero => 0.0,
            RunningCost::ControlQuadraticDiag { coefs } => {
                u.iter().zip(coefs).map(|(ui, c)| c * ui * ui).sum()
            }
            RunningCost::ControlNormSq => dot(u, u),
        }
    }

    /// Gradients with respect to every argument (zero except the control
    /// block for the built-in costs).
    pub fn gradients(&self, n: usize, m: usize, u: &[f64]) -> RunningCostGrads {
        let d = u.len();
        let wu = match self {
            RunningCost::Zero => vec![0.0; d],
            RunningCost::ControlQuadraticDiag { coefs } => {
                u.iter().zip(coefs).map(|(ui, c)| 2.0 * c * ui).collect()
            }
            RunningCost::ControlNormSq => u.iter().map(|ui| 2.0 * ui).collect(),
        };
        RunningCostGrads {
            wx: vec![0.0; n],
            wa: vec![0.0; m * n],
            wb: vec![0.0; m],
            wu,
            vx: vec![0.0; n],
            va: vec![0.0; m * n],
            vb: vec![0.0; m],
        }
    }
}

/// Admissible control set U.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlSet {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Finite { points: Vec<Vec<f64>> },
}

impl ControlSet {
    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Box { lo, .. } => lo.len(),
            ControlSet::Ball { center, .. } => center.len(),
            ControlSet::Finite { points } => points.first().map_or(0, |p| p.len()),
        }
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        match self {
            ControlSet::Box { lo, hi } => u
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(ui, (l, h))| *ui >= l - tol && *ui <= h + tol),
            ControlSet::Ball { center, radius } => norm2(&sub(u, center)) <= radius + tol,
            ControlSet::Finite { points } => {
                points.iter().any(|p| norm2(&sub(u, p)) <= tol.max(1e-12))
            }
        }
    }

    /// Violation magnitude, 0 when `u` is admissible.
    pub fn violation(&self, u: &[f64]) -> f64 {
        match self {
            ControlSet::Box { lo, hi } => u
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(ui, (l, h))| (l - ui).max(ui - h).max(0.0))
                .fold(0.0, f64::max),
            ControlSet::Ball { center, radius } => (norm2(&sub(u, center)) - radius).max(0.0),
            ControlSet::Finite { points } => points
                .iter()
                .map(|p| norm2(&sub(u, p)))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Euclidean projection onto the set (nearest point for finite sets).
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        match self {
            ControlSet::Box { lo, hi } => u
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(ui, (l, h))| ui.max(*l).min(*h))
                .collect(),
            ControlSet::Ball { center, radius } => {
                let diff = sub(u, center);
                let nd = norm2(&diff);
                if nd <= *radius {
                    u.to_vec()
                } else {
                    center.iter().zip(&diff).map(|(c, d)| c + d * radius / nd).collect()
                }
            }
            ControlSet::Finite { points } => points
                .iter()
                .min_by(|p, q| {
                    norm2(&sub(u, p)).partial_cmp(&norm2(&sub(u, q))).unwrap()
                })
                .cloned()
                .unwrap_or_else(|| u.to_vec()),
        }
    }
}

/// How the moving-set rows a_i(t) are specified.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowControl {
    /// Time-constant rows taken from the problem polyhedron.
    Fixed,
    /// Rows given on a sample grid, interpolated piecewise linearly.
    Sampled { times: Vec<f64>, rows: Vec<Vec<Vec<f64>>> },
    /// Rows are decision variables subject to the norm band.
    Decision { band: [f64; 2] },
}

/// How the moving-set offsets b_i(t) are specified.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OffsetControl {
    Fixed,
    Sampled { times: Vec<f64>, offsets: Vec<Vec<f64>> },
    Decision,
}

/// The controlled sweeping problem data.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SweepingProblem {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    /// Final time T.
    pub horizon: f64,
    pub x0: Vec<f64>,
    /// Initial polyhedron (a(0), b(0)).
    pub polyhedron: Polyhedron,
    pub g: Perturbation,
    pub phi: TerminalCost,
    pub ell: RunningCost,
    pub control_set: ControlSet,
    pub a_ctrl: RowControl,
    pub b_ctrl: OffsetControl,
}

impl SweepingProblem {
    pub fn validate(&self) -> Result<()> {
        if self.polyhedron.dim() != self.n || self.polyhedron.n_rows() != self.m {
            return Err(Error::BadProblem("polyhedron dimensions disagree with (n, m)".into()));
        }
        if self.x0.len() != self.n {
            return Err(Error::BadProblem("x0 has the wrong length".into()));
        }
        if self.control_set.dim() != self.d {
            return Err(Error::BadProblem("control set dimension disagrees with d".into()));
        }
        if matches!(self.g, Perturbation::Identity) && self.d != self.n {
            return Err(Error::BadProblem("identity perturbation needs d = n".into()));
        }
        if self.horizon <= 0.0 {
            return Err(Error::BadProblem("horizon must be positive".into()));
        }
        let tol = self.polyhedron.default_tol(&self.x0);
        if self.polyhedron.violation(&self.x0) > tol {
            return Err(Error::BadProblem("x0 is not in C(a(0), b(0))".into()));
        }
        if let RowControl::Decision { band } = &self.a_ctrl {
            if band[0] > band[1] || band[0] < 0.0 {
                return Err(Error::BadProblem("invalid norm band".into()));
            }
        }
        Ok(())
    }

    /// Moving polyhedron evaluated at time `t` (Fixed or Sampled specs).
    pub fn polyhedron_at(&self, t: f64) -> Result<Polyhedron> {
        let rows = match &self.a_ctrl {
            RowControl::Fixed | RowControl::Decision { .. } => self.polyhedron.rows.clone(),
            RowControl::Sampled { times, rows } => interp_rows(times, rows, t),
        };
        let offsets = match &self.b_ctrl {
            OffsetControl::Fixed | OffsetControl::Decision => self.polyhedron.offsets.clone(),
            OffsetControl::Sampled { times, offsets } => interp_vecs(times, offsets, t),
        };
        Polyhedron::new(rows, offsets)
    }
}

fn bracket(times: &[f64], t: f64) -> (usize, usize, f64) {
    if t <= times[0] {
        return (0, 0, 0.0);
    }
    let last = times.len() - 1;
    if t >= times[last] {
        return (last, last, 0.0);
    }
    let mut k = match times.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
        Ok(i) => return (i, i, 0.0),
        Err(i) => i - 1,
    };
    if k >= last {
        k = last - 1;
    }
    let w = (t - times[k]) / (times[k + 1] - times[k]);
    (k, k + 1, w)
}

fn interp_vecs(times: &[f64], values: &[Vec<f64>], t: f64) -> Vec<f64> {
    let (i, j, w) = bracket(times, t);
    values[i]
        .iter()
        .zip(&values[j])
        .map(|(a, b)| a * (1.0 - w) + b * w)
        .collect()
}

fn interp_rows(times: &[f64], values: &[Vec<Vec<f64>>], t: f64) -> Vec<Vec<f64>> {
    let (i, j, w) = bracket(times, t);
    values[i]
        .iter()
        .zip(&values[j])
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(a, b)| a * (1.0 - w) + b * w).collect())
        .collect()
}

/// Left-constant lookup (step functions: controls and derivative samples).
fn step_lookup<'a, T>(times: &[f64], values: &'a [T], t: f64) -> &'a T {
    let last = times.len() - 1;
    if t <= times[0] {
        return &values[0];
    }
    if t >= times[last] {
        return values.last().unwrap();
    }
    let k = match times.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
        Ok(i) => i,
        Err(i) => i - 1,
    };
    &values[k.min(values.len() - 1)]
}

/// Uniform mesh `0 = t_0 < ... < t_nu = T`.
pub fn uniform_mesh(t_end: f64, nu: usize) -> Vec<f64> {
    (0..=nu).map(|j| t_end * j as f64 / nu as f64).collect()
}

/// Check that a mesh is strictly increasing and starts at zero.
pub fn validate_mesh(mesh: &[f64], t_end: f64) -> Result<()> {
    if mesh.len() < 2 {
        return Err(Error::BadProblem("mesh needs at least two points".into()));
    }
    if mesh[0].abs() > 1e-12 || (mesh[mesh.len() - 1] - t_end).abs() > 1e-9 {
        return Err(Error::BadProblem("mesh must run from 0 to the horizon".into()));
    }
    if mesh.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::BadProblem("mesh must be strictly increasing".into()));
    }
    Ok(())
}

/// Mesh-indexed discrete trajectory with controls and multipliers.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DiscreteQuadruple {
    /// Times t_0 .. t_nu.
    pub mesh: Vec<f64>,
    /// States x_0 .. x_nu.
    pub x: Vec<Vec<f64>>,
    /// Row sets a_0 .. a_nu (each m x n).
    pub a: Vec<Vec<Vec<f64>>>,
    /// Offsets b_0 .. b_nu.
    pub b: Vec<Vec<f64>>,
    /// Controls u_0 .. u_{nu-1}.
    pub u: Vec<Vec<f64>>,
    /// Step multipliers eta_0 .. eta_{nu-1} (each in R^m_+).
    pub eta: Vec<Vec<f64>>,
}

impl DiscreteQuadruple {
    pub fn nu(&self) -> usize {
        self.mesh.len() - 1
    }

    pub fn h(&self, j: usize) -> f64 {
        self.mesh[j + 1] - self.mesh[j]
    }

    pub fn polyhedron_at(&self, j: usize) -> Result<Polyhedron> {
        Polyhedron::new(self.a[j].clone(), self.b[j].clone())
    }

    /// Largest step residual of the discrete inclusion
    /// `(x_{j+1} - x_j)/h_j - g(x_j, u_j) + sum_i eta_ij a_ij = 0`.
    pub fn inclusion_residual(&self, g: &Perturbation) -> f64 {
        let mut worst = 0.0_f64;
        for j in 0..self.nu() {
            let h = self.h(j);
            let mut r: Vec<f64> = self.x[j + 1]
                .iter()
                .zip(&self.x[j])
                .map(|(xn, xc)| (xn - xc) / h)
                .collect();
            let drift = g.eval(&self.x[j], &self.u[j]);
            for (ri, di) in r.iter_mut().zip(&drift) {
                *ri -= di;
            }
            for (i, row) in self.a[j].iter().enumerate() {
                axpy(self.eta[j][i], row, &mut r);
            }
            worst = worst.max(norm2(&r));
        }
        worst
    }

    /// Verify the quadruple invariants: inclusion residual, multiplier
    /// support on active constraints, control admissibility, feasibility.
    pub fn check_invariants(&self, prob: &SweepingProblem, tol: f64) -> Result<()> {
        let nu = self.nu();
        if self.x.len() != nu + 1
            || self.a.len() != nu + 1
            || self.b.len() != nu + 1
            || self.u.len() != nu
            || self.eta.len() != nu
        {
            return Err(Error::DimensionMismatch("quadruple arrays disagree with mesh".into()));
        }
        let res = self.inclusion_residual(&prob.g);
        if res > tol {
            return Err(Error::InfeasibleInput(format!("inclusion residual {res:.3e} > {tol:.3e}")));
        }
        for j in 0..nu {
            let poly = self.polyhedron_at(j)?;
            let slacks = poly.slacks(&self.x[j]);
            for (i, s) in slacks.iter().enumerate() {
                if *s > tol {
                    return Err(Error::InfeasibleInput(format!(
                        "state {j} violates constraint {i} by {s:.3e}"
                    )));
                }
                if self.eta[j][i] > tol && s.abs() > tol.max(poly.default_tol(&self.x[j])) {
                    return Err(Error::InfeasibleInput(format!(
                        "eta[{j}][{i}] > 0 on an inactive constraint"
                    )));
                }
            }
            if !prob.control_set.contains(&self.u[j], tol) {
                return Err(Error::InfeasibleInput(format!("u[{j}] outside the control set")));
            }
        }
        let last = self.polyhedron_at(nu)?;
        if last.violation(&self.x[nu]) > tol {
            return Err(Error::InfeasibleInput("endpoint violates the final constraint".into()));
        }
        if let RowControl::Decision { band } = &prob.a_ctrl {
            for (j, rows) in self.a.iter().enumerate() {
                for (i, r) in rows.iter().enumerate() {
                    let nr = norm2(r);
                    if nr < band[0] - tol || nr > band[1] + tol {
                        return Err(Error::InfeasibleInput(format!(
                            "row ({i},{j}) norm {nr:.6} outside the band"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Time-stepping flavor of the catching-up scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// Evaluate the normal cone at the current point (the discrete inclusion
    /// as written); default for certificate work.
    Explicit,
    /// Project the drifted state onto the next polyhedron.
    Projective,
}

/// One catching-up step from a feasible point.
///
/// Explicit mode finds the minimum-norm `eta >= 0` supported on the active
/// rows with the drifted point satisfying the active constraints (NNLS on
/// the active rows); projective mode projects `x + h g` onto `p_next` and
/// divides the multipliers by `h`.
pub fn catching_up_step(
    p: &Polyhedron,
    x: &[f64],
    u: &[f64],
    h: f64,
    g: &Perturbation,
    mode: StepMode,
) -> Result<(Vec<f64>, Vec<f64>)> {
    catching_up_step_moving(p, p, x, u, h, g, mode)
}

/// Catching-up step with distinct current and next polyhedra.
pub fn catching_up_step_moving(
    p_curr: &Polyhedron,
    p_next: &Polyhedron,
    x: &[f64],
    u: &[f64],
    h: f64,
    g: &Perturbation,
    mode: StepMode,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = p_curr.n_rows();
    let drift = g.eval(x, u);
    match mode {
        StepMode::Explicit => {
            let tol = p_curr.default_tol(x);
            let act = active_set(p_curr, x, tol)?;
            let cols: Vec<Vec<f64>> = act.indices.iter().map(|&i| p_curr.rows[i].clone()).collect();
            let eta_act = if cols.is_empty() {
                vec![]
            } else {
                let fit = nnls(&cols, &drift);
                // Minimum-norm representation of the same normal-cone element.
                let mut target = vec![0.0; drift.len()];
                for (c, e) in cols.iter().zip(&fit.x) {
                    axpy(*e, c, &mut target);
                }
                min_norm_nonneg_fit(&cols, &target, 1e-10 * (1.0 + norm2(&target)))
                    .unwrap_or(fit.x)
            };
            let mut eta = vec![0.0; m];
            for (k, &i) in act.indices.iter().enumerate() {
                eta[i] = eta_act[k];
            }
            let mut v = drift.clone();
            for (i, row) in p_curr.rows.iter().enumerate() {
                axpy(-eta[i], row, &mut v);
            }
            let x_next: Vec<f64> = x.iter().zip(&v).map(|(xi, vi)| xi + h * vi).collect();
            // The active constraints must hold at the new point.
            for &i in &act.indices {
                let s = dot(&p_curr.rows[i], &x_next) - p_curr.offsets[i];
                if s > 10.0 * tol {
                    return Err(Error::StepFailure {
                        step: 0,
                        detail: format!("active constraint {i} violated by {s:.3e}"),
                    });
                }
            }
            Ok((x_next, eta))
        }
        StepMode::Projective => {
            let y: Vec<f64> = x.iter().zip(&drift).map(|(xi, di)| xi + h * di).collect();
            let pr = project(p_next, &y)?;
            let eta: Vec<f64> = pr.multipliers.iter().map(|mu| mu / h).collect();
            Ok((pr.point, eta))
        }
    }
}

/// Control input for a simulation run; `a`/`b` override the problem's
/// moving-set specs when present (one entry per mesh point).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub u: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
}

/// Simulation output: the quadruple plus the first mesh index where the
/// state hit the boundary (nonempty active set).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Simulation {
    pub quadruple: DiscreteQuadruple,
    pub first_hit: Option<usize>,
}

/// Fold the catching-up step along the mesh.
pub fn simulate(
    prob: &SweepingProblem,
    controls: &ControlInput,
    mesh: &[f64],
    mode: StepMode,
) -> Result<Simulation> {
    prob.validate()?;
    validate_mesh(mesh, prob.horizon)?;
    let nu = mesh.len() - 1;
    if controls.u.len() != nu {
        return Err(Error::DimensionMismatch(format!(
            "expected {nu} controls, got {}",
            controls.u.len()
        )));
    }
    let poly_at = |j: usize| -> Result<Polyhedron> {
        if let (Some(a), Some(b)) = (&controls.a, &controls.b) {
            Polyhedron::new(a[j].clone(), b[j].clone())
        } else if let Some(a) = &controls.a {
            Polyhedron::new(a[j].clone(), prob.polyhedron_at(mesh[j])?.offsets)
        } else if let Some(b) = &controls.b {
            Polyhedron::new(prob.polyhedron_at(mesh[j])?.rows, b[j].clone())
        } else {
            prob.polyhedron_at(mesh[j])
        }
    };

    let mut x = vec![prob.x0.clone()];
    let mut eta = Vec::with_capacity(nu);
    let mut a_seq = Vec::with_capacity(nu + 1);
    let mut b_seq = Vec::with_capacity(nu + 1);
    let mut first_hit: Option<usize> = None;
    for j in 0..=nu {
        let pj = poly_at(j)?;
        a_seq.push(pj.rows.clone());
        b_seq.push(pj.offsets.clone());
        if first_hit.is_none() {
            let tol = pj.default_tol(&x[j]);
            if let Ok(act) = active_set(&pj, &x[j], tol) {
                if !act.indices.is_empty() {
                    first_hit = Some(j);
                }
            }
        }
        if j == nu {
            break;
        }
        let p_next = poly_at(j + 1)?;
        let h = mesh[j + 1] - mesh[j];
        if !prob.control_set.contains(&controls.u[j], 1e-9) {
            return Err(Error::InfeasibleInput(format!("u[{j}] outside the control set")));
        }
        let (x_next, eta_j) =
            catching_up_step_moving(&pj, &p_next, &x[j], &controls.u[j], h, &prob.g, mode)
                .map_err(|e| match e {
                    Error::StepFailure { detail, .. } => Error::StepFailure { step: j, detail },
                    Error::InfeasiblePoint { index, violation } => Error::StepFailure {
                        step: j,
                        detail: format!("state infeasible for row {index} by {violation:.3e}"),
                    },
                    other => other,
                })?;
        if p_next.violation(&x_next) > 100.0 * p_next.default_tol(&x_next) {
            return Err(Error::StepFailure {
                step: j,
                detail: format!(
                    "explicit step left the moving set (violation {:.3e})",
                    p_next.violation(&x_next)
                ),
            });
        }
        x.push(x_next);
        eta.push(eta_j);
    }
    Ok(Simulation {
        quadruple: DiscreteQuadruple {
            mesh: mesh.to_vec(),
            x,
            a: a_seq,
            b: b_seq,
            u: controls.u.clone(),
            eta,
        },
        first_hit,
    })
}

/// Sampled continuous trajectory with derivative samples: values are
/// interpolated piecewise linearly, derivatives and controls looked up as
/// left-constant step functions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampledTrajectory {
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub xdot: Vec<Vec<f64>>,
    pub a: Vec<Vec<Vec<f64>>>,
    pub adot: Vec<Vec<Vec<f64>>>,
    pub b: Vec<Vec<f64>>,
    pub bdot: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

impl SampledTrajectory {
    /// Build by sampling closures on a uniform grid of `samples + 1` points.
    #[allow(clippy::too_many_arguments)]
    pub fn from_closures(
        t_end: f64,
        samples: usize,
        fx: impl Fn(f64) -> Vec<f64>,
        fxdot: impl Fn(f64) -> Vec<f64>,
        fa: impl Fn(f64) -> Vec<Vec<f64>>,
        fadot: impl Fn(f64) -> Vec<Vec<f64>>,
        fb: impl Fn(f64) -> Vec<f64>,
        fbdot: impl Fn(f64) -> Vec<f64>,
        fu: impl Fn(f64) -> Vec<f64>,
    ) -> Self {
        let times = uniform_mesh(t_end, samples);
        SampledTrajectory {
            x: times.iter().map(|&t| fx(t)).collect(),
            xdot: times.iter().map(|&t| fxdot(t)).collect(),
            a: times.iter().map(|&t| fa(t)).collect(),
            adot: times.iter().map(|&t| fadot(t)).collect(),
            b: times.iter().map(|&t| fb(t)).collect(),
            bdot: times.iter().map(|&t| fbdot(t)).collect(),
            u: times.iter().map(|&t| fu(t)).collect(),
            times,
        }
    }

    pub fn x_at(&self, t: f64) -> Vec<f64> {
        interp_vecs(&self.times, &self.x, t)
    }
    pub fn xdot_at(&self, t: f64) -> Vec<f64> {
        step_lookup(&self.times, &self.xdot, t).clone()
    }
    pub fn a_at(&self, t: f64) -> Vec<Vec<f64>> {
        interp_rows(&self.times, &self.a, t)
    }
    pub fn adot_at(&self, t: f64) -> Vec<Vec<f64>> {
        step_lookup(&self.times, &self.adot, t).clone()
    }
    pub fn b_at(&self, t: f64) -> Vec<f64> {
        interp_vecs(&self.times, &self.b, t)
    }
    pub fn bdot_at(&self, t: f64) -> Vec<f64> {
        step_lookup(&self.times, &self.bdot, t).clone()
    }
    pub fn u_at(&self, t: f64) -> Vec<f64> {
        step_lookup(&self.times, &self.u, t).clone()
    }
}

/// Error diagnostics reported by [`discretize_feasible`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscretizeDiagnostics {
    /// Squared L2 error of the piecewise-constant control/row-velocity
    /// approximations (the larger of the two).
    pub mu_k: f64,
    /// Row-norm band half-width `sqrt(n mu_k T)`.
    pub delta_k: f64,
    /// W^{1,2} distance of the discrete state to the continuous one.
    pub w12_state_gap: f64,
    /// W^{1,2} distance of the discrete (a, b) to the continuous ones.
    pub w12_ab_gap: f64,
    /// L2 distance of the piecewise-constant control to the continuous one.
    pub u_gap: f64,
    /// A-priori bound on `max_j ||x^k_j - x(t_j)||` assembled from empirical
    /// constants (Lipschitz/growth of g, variation of the derivative
    /// samples, inverse-triangle witness).
    pub apriori_state_bound: f64,
    /// Largest inverse-triangle witness along the mesh samples.
    pub gamma_witness: f64,
}

/// Discretize a feasible continuous trajectory into a feasible quadruple
/// whose active sets match the continuous ones at every mesh point.
///
/// Controls and row velocities become left-constant step functions; offsets
/// are rebuilt so the constraint slacks at mesh points equal the continuous
/// slacks exactly; multipliers are recovered from the continuous inclusion
/// and the state advances with the reconstructed velocity.
pub fn discretize_feasible(
    prob: &SweepingProblem,
    reference: &SampledTrajectory,
    mesh: &[f64],
    refinement: usize,
) -> Result<(DiscreteQuadruple, DiscretizeDiagnostics)> {
    prob.validate()?;
    validate_mesh(mesh, prob.horizon)?;
    let nu = mesh.len() - 1;
    let n = prob.n;
    let m = prob.m;

    let mut a_seq: Vec<Vec<Vec<f64>>> = Vec::with_capacity(nu + 1);
    let mut b_seq: Vec<Vec<f64>> = Vec::with_capacity(nu + 1);
    let mut x_seq: Vec<Vec<f64>> = Vec::with_capacity(nu + 1);
    let mut u_seq: Vec<Vec<f64>> = Vec::with_capacity(nu);
    let mut eta_seq: Vec<Vec<f64>> = Vec::with_capacity(nu);
    let mut gamma_witness: f64 = 0.0;

    a_seq.push(reference.a_at(0.0));
    x_seq.push(reference.x_at(0.0));
    for j in 0..=nu {
        let t = mesh[j];
        let a_bar = reference.a_at(t);
        let b_bar = reference.b_at(t);
        let x_bar = reference.x_at(t);
        // Offsets preserving the continuous slacks at the discrete state.
        let b_j: Vec<f64> = (0..m)
            .map(|i| dot(&a_seq[j][i], &x_seq[j]) + b_bar[i] - dot(&a_bar[i], &x_bar))
            .collect();
        b_seq.push(b_j);

        let cont_poly = Polyhedron::new(a_bar.clone(), b_bar.clone())?;
        let tol = cont_poly.default_tol(&x_bar).max(1e-9);
        let plicq = crate::polyhedra::check_plicq(&cont_poly, &x_bar, tol)
            .map_err(|_| Error::InfeasibleInput(format!("sample at t={t} infeasible")))?;
        if !plicq.holds {
            return Err(Error::PlicqViolation { index: j });
        }
        if let Ok(g) = inverse_triangle_witness(&cont_poly, &x_bar, tol) {
            gamma_witness = gamma_witness.max(g);
        }

        if j == nu {
            break;
        }
        let u_bar = reference.u_at(t);
        let drift = prob.g.eval(&x_bar, &u_bar);
        let v_target = sub(&drift, &reference.xdot_at(t));
        // eta(t_j) from the continuous inclusion -xdot = sum eta a - g.
        let eta_cont = normal_cone_multipliers(&cont_poly, &x_bar, &v_target, (10.0 * tol).max(1e-8))
            .map_err(|e| match e {
                Error::NotInNormalCone { .. } => Error::InfeasibleInput(format!(
                    "inclusion fails at sample t={t}"
                )),
                other => other,
            })?;

        // Discrete velocity: g at the discrete state, rows at the discrete a.
        let drift_disc = prob.g.eval(&x_seq[j], &u_bar);
        let mut v = drift_disc.clone();
        for (i, row) in a_seq[j].iter().enumerate() {
            axpy(-eta_cont[i], row, &mut v);
        }
        let h = mesh[j + 1] - mesh[j];
        let x_next: Vec<f64> = x_seq[j].iter().zip(&v).map(|(xi, vi)| xi + h * vi).collect();
        x_seq.push(x_next);
        u_seq.push(u_bar);
        eta_seq.push(eta_cont);

        // Advance the rows with the left-constant row velocity.
        let adot = reference.adot_at(t);
        let a_next: Vec<Vec<f64>> = a_seq[j]
            .iter()
            .zip(&adot)
            .map(|(row, rdot)| row.iter().zip(rdot).map(|(r, rd)| r + h * rd).collect())
            .collect();
        a_seq.push(a_next);
    }

    // mu_k by rectangle quadrature on the refined grid.
    let refinement = refinement.max(1);
    let mut int_u = 0.0;
    let mut int_alpha = 0.0;
    for j in 0..nu {
        let h = (mesh[j + 1] - mesh[j]) / refinement as f64;
        let u_step = &u_seq[j];
        let adot_step = reference.adot_at(mesh[j]);
        for s in 0..refinement {
            let t = mesh[j] + (s as f64 + 0.5) * h;
            let du = sub(u_step, &reference.u_at(t));
            int_u += h * dot(&du, &du);
            let adot_t = reference.adot_at(t);
            let mut da2 = 0.0;
            for (ra, rb) in adot_step.iter().zip(&adot_t) {
                let dr = sub(ra, rb);
                da2 += dot(&dr, &dr);
            }
            int_alpha += h * da2;
        }
    }
    let mu_k = int_u.max(int_alpha);
    let delta_k = (n as f64 * mu_k * prob.horizon).sqrt();

    let quad = DiscreteQuadruple {
        mesh: mesh.to_vec(),
        x: x_seq,
        a: a_seq,
        b: b_seq,
        u: u_seq,
        eta: eta_seq,
    };
    let w12 = w12_distance(
        TrajectoryData::Quadruple(&quad),
        TrajectoryData::Sampled(reference),
        mesh,
        true,
    )?;

    // A-priori state bound from empirical constants.
    let h_max = (0..nu).map(|j| mesh[j + 1] - mesh[j]).fold(0.0, f64::max);
    let nu_tilde = nu as f64 * h_max;
    let lips = prob.g.lipschitz_bound(prob.n, prob.d);
    let var_xdot = total_variation(&reference.xdot);
    let var_u = total_variation(&reference.u);
    let mu_var = var_xdot.max(var_u);
    let m1x = reference.xdot.iter().map(|v| norm2(v)).fold(0.0, f64::max);
    let growth = reference
        .x
        .iter()
        .zip(&reference.u)
        .map(|(x, u)| norm2(&prob.g.eval(x, u)) / (1.0 + norm2(x)))
        .fold(0.0, f64::max);
    let max_x = reference.x.iter().map(|v| norm2(v)).fold(0.0, f64::max);
    let m2x = gamma_witness * (m1x + growth * (1.0 + max_x));
    let k_idx = (nu as f64).log2().max(1.0);
    let apriori = (lips * nu_tilde).exp()
        * ((h_max * mu_var + nu_tilde * 2f64.powf(-k_idx)) * (lips + 1.0)
            + lips * (prob.horizon * mu_k).sqrt()
            + m2x * m as f64 * nu_tilde * delta_k);

    let diags = DiscretizeDiagnostics {
        mu_k,
        delta_k,
        w12_state_gap: w12.state,
        w12_ab_gap: w12.ab,
        u_gap: w12.u,
        apriori_state_bound: apriori,
        gamma_witness,
    };
    Ok((quad, diags))
}

fn total_variation(samples: &[Vec<f64>]) -> f64 {
    samples.windows(2).map(|w| norm2(&sub(&w[1], &w[0]))).sum()
}

/// Input side of a W^{1,2} distance computation.
pub enum TrajectoryData<'a> {
    Quadruple(&'a DiscreteQuadruple),
    Sampled(&'a SampledTrajectory),
}

/// Distance components: state in W^{1,2}, rows/offsets in W^{1,2}, control
/// in L^2.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct W12Components {
    pub state: f64,
    pub ab: f64,
    pub u: f64,
}

struct MeshSamples {
    x: Vec<Vec<f64>>,
    a: Vec<Vec<Vec<f64>>>,
    b: Vec<Vec<f64>>,
    dx: Vec<Vec<f64>>,
    da: Vec<Vec<Vec<f64>>>,
    db: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
}

fn resample(data: &TrajectoryData, mesh: &[f64], resample_ok: bool) -> Result<MeshSamples> {
    let nu = mesh.len() - 1;
    match data {
        TrajectoryData::Quadruple(q) => {
            let aligned = q.mesh.len() == mesh.len()
                && q.mesh.iter().zip(mesh).all(|(a, b)| (a - b).abs() <= 1e-12);
            if !aligned && !resample_ok {
                return Err(Error::MeshMismatch);
            }
            let x_at = |t: f64| interp_vecs(&q.mesh, &q.x, t);
            let a_at = |t: f64| interp_rows(&q.mesh, &q.a, t);
            let b_at = |t: f64| interp_vecs(&q.mesh, &q.b, t);
            let x: Vec<Vec<f64>> = mesh.iter().map(|&t| x_at(t)).collect();
            let a: Vec<Vec<Vec<f64>>> = mesh.iter().map(|&t| a_at(t)).collect();
            let b: Vec<Vec<f64>> = mesh.iter().map(|&t| b_at(t)).collect();
            let mut dx = Vec::with_capacity(nu);
            let mut da = Vec::with_capacity(nu);
            let mut db = Vec::with_capacity(nu);
            let mut u = Vec::with_capacity(nu);
            for j in 0..nu {
                let h = mesh[j + 1] - mesh[j];
                dx.push(x[j + 1].iter().zip(&x[j]).map(|(n, c)| (n - c) / h).collect());
                da.push(
                    a[j + 1]
                        .iter()
                        .zip(&a[j])
                        .map(|(rn, rc)| {
                            rn.iter().zip(rc).map(|(nn, cc)| (nn - cc) / h).collect()
                        })
                        .collect(),
                );
                db.push(b[j + 1].iter().zip(&b[j]).map(|(n, c)| (n - c) / h).collect());
                u.push(step_lookup(&q.mesh[..q.mesh.len() - 1], &q.u, mesh[j]).clone());
            }
            Ok(MeshSamples { x, a, b, dx, da, db, u })
        }
        TrajectoryData::Sampled(s) => {
            let x: Vec<Vec<f64>> = mesh.iter().map(|&t| s.x_at(t)).collect();
            let a: Vec<Vec<Vec<f64>>> = mesh.iter().map(|&t| s.a_at(t)).collect();
            let b: Vec<Vec<f64>> = mesh.iter().map(|&t| s.b_at(t)).collect();
            let dx = mesh[..nu].iter().map(|&t| s.xdot_at(t)).collect();
            let da = mesh[..nu].iter().map(|&t| s.adot_at(t)).collect();
            let db = mesh[..nu].iter().map(|&t| s.bdot_at(t)).collect();
            let u = mesh[..nu].iter().map(|&t| s.u_at(t)).collect();
            Ok(MeshSamples { x, a, b, dx, da, db, u })
        }
    }
}

/// Discrete W^{1,2} x L^2 distance between two trajectories on a common
/// mesh: value gap at t = 0 plus the rectangle-rule L^2 norms of the
/// derivative/control gaps.
pub fn w12_distance(
    q1: TrajectoryData,
    q2: TrajectoryData,
    mesh: &[f64],
    resample_ok: bool,
) -> Result<W12Components> {
    let s1 = resample(&q1, mesh, resample_ok)?;
    let s2 = resample(&q2, mesh, resample_ok)?;
    let nu = mesh.len() - 1;
    let mut dx2 = 0.0;
    let mut dab2 = 0.0;
    let mut du2 = 0.0;
    for j in 0..nu {
        let h = mesh[j + 1] - mesh[j];
        let gx = sub(&s1.dx[j], &s2.dx[j]);
        dx2 += h * dot(&gx, &gx);
        let mut ga = 0.0;
        for (ra, rb) in s1.da[j].iter().zip(&s2.da[j]) {
            let dr = sub(ra, rb);
            ga += dot(&dr, &dr);
        }
        let gb = sub(&s1.db[j], &s2.db[j]);
        dab2 += h * (ga + dot(&gb, &gb));
        let gu = sub(&s1.u[j], &s2.u[j]);
        du2 += h * dot(&gu, &gu);
    }
    let x0_gap = norm2(&sub(&s1.x[0], &s2.x[0]));
    let mut ab0 = 0.0;
    for (ra, rb) in s1.a[0].iter().zip(&s2.a[0]) {
        let dr = sub(ra, rb);
        ab0 += dot(&dr, &dr);
    }
    let b0 = sub(&s1.b[0], &s2.b[0]);
    ab0 += dot(&b0, &b0);
    Ok(W12Components {
        state: x0_gap + dx2.sqrt(),
        ab: ab0.sqrt() + dab2.sqrt(),
        u: du2.sqrt(),
    })
}
