//! Minimization of the discrete cost over the admissible controls: a
//! reduced analytic path for the bundled halfspace family and a generic
//! penalized single-shooting solver, plus the mesh-refinement study.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;
#[cfg(test)]
use crate::linalg::{norm2, sub};
use crate::sweeping::{
    simulate, uniform_mesh, w12_distance, ControlInput, ControlSet, DiscreteQuadruple,
    OffsetControl, Perturbation, RowControl, RunningCost, StepMode, TerminalCost, TrajectoryData,
};
use crate::transcription::{cost_jk, feasibility_residuals, DiscreteProblem};

/// One analyzed branch of the reduced problem.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReducedCandidate {
    pub label: String,
    /// Control on the boundary-riding segment.
    pub second_segment: Vec<f64>,
    /// Boundary multiplier along that segment.
    pub eta: f64,
    /// Bolza cost of the branch (no proximity term).
    pub cost: f64,
    /// Whether the branch is admissible (multiplier sign and box bounds).
    pub admissible: bool,
}

/// Output of the reduced halfspace solver.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReducedSolution {
    /// Optimal full control sequence on the mesh.
    pub controls: Vec<Vec<f64>>,
    /// Per-step boundary multipliers of the optimal branch.
    pub eta: Vec<f64>,
    pub cost: f64,
    /// The winning branch plus every analyzed case (stationary, tangential,
    /// and the four box faces).
    pub cases: Vec<ReducedCandidate>,
}

struct ReducedFamily {
    /// Outward-scaled boundary direction: x(T) gains `eta * dir` per unit
    /// time of riding.
    dir: Vec<f64>,
    /// eta(u) = <eta_coef, u> (nonnegativity is the branch condition).
    eta_coef: Vec<f64>,
    /// Linear term of the reduced cost.
    lin: Vec<f64>,
    /// Diagonal quadratic term of the reduced cost.
    quad: Vec<f64>,
    /// Constant term (approach phase plus terminal value at the hit point).
    constant: f64,
    /// Box bounds.
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Riding time T - t*.
    tau: f64,
}

/// Validate that `dp` is in the reduced family and extract the reduced
/// quadratic data. The family: n = 2, m = 1, fixed halfspace through the
/// start's hitting geometry, identity perturbation, linear terminal cost,
/// diagonal quadratic running cost, box controls, uniform even mesh.
fn reduced_family(dp: &DiscreteProblem) -> Result<ReducedFamily> {
    let b = &dp.base;
    let fail = |msg: &str| Err(Error::FamilyMismatch(msg.into()));
    if b.n != 2 || b.m != 1 || b.d != 2 {
        return fail("needs n = 2, m = 1, d = 2");
    }
    if !matches!(b.g, Perturbation::Identity) {
        return fail("needs identity perturbation");
    }
    if !matches!(b.a_ctrl, RowControl::Fixed) || !matches!(b.b_ctrl, OffsetControl::Fixed) {
        return fail("needs a fixed moving set");
    }
    let TerminalCost::Linear { coefs: phi } = &b.phi else {
        return fail("needs a linear terminal cost");
    };
    let RunningCost::ControlQuadraticDiag { coefs: ell } = &b.ell else {
        return fail("needs a diagonal quadratic running cost");
    };
    if ell.iter().any(|&c| c <= 0.0) {
        return fail("running cost must be positive definite");
    }
    let ControlSet::Box { lo, hi } = &b.control_set else {
        return fail("needs box controls");
    };
    let nu = dp.nu();
    if nu < 2 || nu % 2 != 0 {
        return fail("needs an even mesh");
    }
    let hs: Vec<f64> = (0..nu).map(|j| dp.mesh[j + 1] - dp.mesh[j]).collect();
    if hs.iter().any(|h| (h - hs[0]).abs() > 1e-12) {
        return fail("needs a uniform mesh");
    }

    let row = &b.polyhedron.rows[0];
    let offset = b.polyhedron.offsets[0];
    // Hitting analysis: full corner thrust must reach the boundary exactly at
    // the mesh midpoint T/2 (the bundled family geometry).
    let corner: Vec<f64> = row.iter().map(|&r| if r >= 0.0 { *hi.first().unwrap() } else { 0.0 }).collect();
    let _ = corner;
    let u_approach = vec![lo[0], lo[1]];
    let t_star = b.horizon / 2.0;
    let x_star: Vec<f64> =
        b.x0.iter().zip(&u_approach).map(|(x, u)| x + t_star * u).collect();
    let slack = dot(row, &x_star) - offset;
    if slack.abs() > 1e-9 {
        return fail("corner thrust does not reach the boundary at T/2");
    }

    // eta(u): riding the boundary means <row, u + eta dir> = 0 with
    // dir = -row (the inward-normal direction scaled by the row itself).
    let dir: Vec<f64> = row.iter().map(|r| -r).collect();
    let r2 = dot(row, row);
    let eta_coef: Vec<f64> = row.iter().map(|r| r / r2).collect();

    let tau = b.horizon - t_star;
    // x(T) = x_star + tau (u + eta(u) dir); phi linear, so
    // J(u) = const + <phi, tau (u + <eta_coef, u> dir)> + tau sum c_i u_i^2.
    let phi_dir = dot(phi, &dir);
    let lin: Vec<f64> = phi
        .iter()
        .zip(&eta_coef)
        .map(|(p, e)| tau * (p + phi_dir * e))
        .collect();
    let quad: Vec<f64> = ell.iter().map(|c| tau * c).collect();
    let ell_approach = {
        let u = &u_approach;
        ell.iter().zip(u).map(|(c, ui)| c * ui * ui).sum::<f64>()
    };
    let constant = b.phi.value(&x_star) + t_star * ell_approach;
    Ok(ReducedFamily {
        dir,
        eta_coef,
        lin,
        quad,
        constant,
        lo: lo.clone(),
        hi: hi.clone(),
        tau,
    })
}

impl ReducedFamily {
    fn eta(&self, u: &[f64]) -> f64 {
        dot(&self.eta_coef, u)
    }

    fn cost(&self, u: &[f64]) -> f64 {
        self.constant
            + dot(&self.lin, u)
            + self.quad.iter().zip(u).map(|(q, ui)| q * ui * ui).sum::<f64>()
    }

    fn in_box(&self, u: &[f64]) -> bool {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(ui, (l, h))| *ui >= l - 1e-12 && *ui <= h + 1e-12)
    }
}

/// Solve the reduced program for the bundled halfspace family: minimize the
/// reduced quadratic over the box intersected with the nonnegative-multiplier
/// halfplane, reporting the stationary branch, the tangential branch, and
/// the box-face branches.
pub fn solve_reduced_halfspace(dp: &DiscreteProblem) -> Result<ReducedSolution> {
    let fam = reduced_family(dp)?;
    let mut cases: Vec<ReducedCandidate> = Vec::new();

    // Branch 1: interior stationary point of the reduced quadratic.
    let u_star: Vec<f64> =
        fam.lin.iter().zip(&fam.quad).map(|(l, q)| -l / (2.0 * q)).collect();
    cases.push(ReducedCandidate {
        label: "interior_stationary".into(),
        eta: fam.eta(&u_star),
        cost: fam.cost(&u_star),
        admissible: fam.eta(&u_star) >= -1e-12 && fam.in_box(&u_star),
        second_segment: u_star,
    });

    // Branch 2: tangential (multiplier pinned to zero). Minimize on the line
    // eta(u) = 0, i.e. u = t * w with w orthogonal to eta_coef.
    let w = vec![-fam.eta_coef[1], fam.eta_coef[0]];
    let denom = 2.0 * (fam.quad[0] * w[0] * w[0] + fam.quad[1] * w[1] * w[1]);
    let t_opt = -(fam.lin[0] * w[0] + fam.lin[1] * w[1]) / denom;
    let u_tan = vec![t_opt * w[0], t_opt * w[1]];
    cases.push(ReducedCandidate {
        label: "tangential".into(),
        eta: 0.0,
        cost: fam.cost(&u_tan),
        admissible: fam.in_box(&u_tan),
        second_segment: u_tan,
    });

    // Branches 3-6: each box face, optimizing the free coordinate.
    for (c, fixed, label) in [
        (0usize, fam.hi[0], "face_u1_hi"),
        (0, fam.lo[0], "face_u1_lo"),
        (1, fam.hi[1], "face_u2_hi"),
        (1, fam.lo[1], "face_u2_lo"),
    ] {
        let free = 1 - c;
        let mut u = vec![0.0; 2];
        u[c] = fixed;
        u[free] = -fam.lin[free] / (2.0 * fam.quad[free]);
        u[free] = u[free].clamp(fam.lo[free], fam.hi[free]);
        let eta = fam.eta(&u);
        cases.push(ReducedCandidate {
            label: label.into(),
            eta,
            cost: fam.cost(&u),
            admissible: eta >= -1e-12 && fam.in_box(&u),
            second_segment: u,
        });
    }

    let best = cases
        .iter()
        .filter(|c| c.admissible)
        .min_by(|a, b| a.cost.partial_cmp(&b.cost).unwrap())
        .cloned()
        .ok_or_else(|| Error::FamilyMismatch("no admissible reduced branch".into()))?;

    let nu = dp.nu();
    let controls: Vec<Vec<f64>> = (0..nu)
        .map(|j| {
            if dp.mesh[j] < dp.base.horizon / 2.0 - 1e-12 {
                vec![fam.lo[0], fam.lo[1]]
            } else {
                best.second_segment.clone()
            }
        })
        .collect();
    let eta: Vec<f64> = (0..nu)
        .map(|j| if dp.mesh[j] < dp.base.horizon / 2.0 - 1e-12 { 0.0 } else { best.eta })
        .collect();
    let _ = fam.dir;
    let _ = fam.tau;
    Ok(ReducedSolution { controls, eta, cost: best.cost, cases })
}

/// Options of the shooting solver.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveOptions {
    pub starts: usize,
    pub seed: u64,
    pub mode: StepMode,
    pub max_sweeps: usize,
    /// Control-space convergence tolerance.
    pub tol: f64,
    pub penalty_initial: f64,
    pub penalty_factor: f64,
    pub penalty_max: f64,
    /// When set, confine the search to the infinity-ball of this radius
    /// around the reference controls: the solver then tracks the local
    /// optimum near the reference instead of the global one.
    pub trust_radius: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            starts: 16,
            seed: 0,
            mode: StepMode::Explicit,
            max_sweeps: 24,
            tol: 1e-11,
            penalty_initial: 10.0,
            penalty_factor: 10.0,
            penalty_max: 1e6,
            trust_radius: None,
        }
    }
}

/// Progress of a solve: accepted cost values (never increasing) and flags.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SolveHistory {
    pub evaluations: usize,
    pub accepted_costs: Vec<f64>,
    pub budget_exceeded: bool,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

const PRIMES: [usize; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// One decision point of the shooting solver: the perturbation controls
/// plus, when the moving set is a decision control, the per-step row and
/// offset velocities.
#[derive(Clone, Debug)]
struct DecisionVars {
    u: Vec<Vec<f64>>,
    /// Row velocities per step (nu x m x n) when the rows are decision.
    da: Option<Vec<Vec<Vec<f64>>>>,
    /// Offset velocities per step (nu x m) when the offsets are decision.
    db: Option<Vec<Vec<f64>>>,
}

/// Coordinate address into a [`DecisionVars`].
#[derive(Clone, Copy)]
enum Coord {
    U(usize, usize),
    Da(usize, usize, usize),
    Db(usize, usize),
}

impl DecisionVars {
    fn get(&self, c: Coord) -> f64 {
        match c {
            Coord::U(j, k) => self.u[j][k],
            Coord::Da(j, i, k) => self.da.as_ref().unwrap()[j][i][k],
            Coord::Db(j, i) => self.db.as_ref().unwrap()[j][i],
        }
    }

    fn set(&mut self, c: Coord, v: f64) {
        match c {
            Coord::U(j, k) => self.u[j][k] = v,
            Coord::Da(j, i, k) => self.da.as_mut().unwrap()[j][i][k] = v,
            Coord::Db(j, i) => self.db.as_mut().unwrap()[j][i] = v,
        }
    }

    /// Integrate the velocity decisions into full (a, b) sequences.
    fn to_input(&self, dp: &DiscreteProblem) -> ControlInput {
        let nu = dp.nu();
        let a = self.da.as_ref().map(|da| {
            let mut seq = vec![dp.base.polyhedron.rows.clone()];
            for j in 0..nu {
                let h = dp.mesh[j + 1] - dp.mesh[j];
                let next: Vec<Vec<f64>> = seq[j]
                    .iter()
                    .zip(&da[j])
                    .map(|(row, vel)| row.iter().zip(vel).map(|(r, v)| r + h * v).collect())
                    .collect();
                seq.push(next);
            }
            seq
        });
        let b = self.db.as_ref().map(|db| {
            let mut seq = vec![dp.base.polyhedron.offsets.clone()];
            for j in 0..nu {
                let h = dp.mesh[j + 1] - dp.mesh[j];
                let next: Vec<f64> =
                    seq[j].iter().zip(&db[j]).map(|(o, v)| o + h * v).collect();
                seq.push(next);
            }
            seq
        });
        ControlInput { u: self.u.clone(), a, b }
    }
}

struct Shooter<'a> {
    dp: &'a DiscreteProblem,
    mode: StepMode,
    penalty: f64,
    evaluations: std::cell::Cell<usize>,
}

impl<'a> Shooter<'a> {
    /// Penalized objective; infinite when the simulation fails.
    fn eval(&self, vars: &DecisionVars) -> f64 {
        self.evaluations.set(self.evaluations.get() + 1);
        let input = vars.to_input(self.dp);
        let Ok(sim) = simulate(&self.dp.base, &input, &self.dp.mesh, self.mode) else {
            return f64::INFINITY;
        };
        let q = &sim.quadruple;
        let Ok(base_cost) = cost_jk(self.dp, q) else {
            return f64::INFINITY;
        };
        let Ok(rep) = feasibility_residuals(self.dp, q, 1e-8) else {
            return f64::INFINITY;
        };
        let mut excess = (rep.localization_state - rep.localization_bound).max(0.0)
            + (rep.localization_velocity - rep.localization_bound).max(0.0);
        for (_, _, v) in &rep.band_violations {
            excess += v;
        }
        base_cost + self.penalty * excess * excess
    }
}

/// Minimize the discrete cost by single shooting over the decision
/// variables: the controls `u_1 .. u_{nu-1}` (the first control is pinned
/// to the reference start) and, when the moving set is a decision control,
/// the per-step row/offset velocities. Projected coordinate descent from
/// multiple deterministic starts, finished by a derivative polish.
pub fn solve_pk(
    dp: &DiscreteProblem,
    init: &DiscreteQuadruple,
    options: &SolveOptions,
) -> Result<(DiscreteQuadruple, SolveHistory)> {
    let nu = dp.nu();
    let d = dp.base.d;
    let n = dp.base.n;
    let m = dp.base.m;
    if init.mesh.len() != dp.mesh.len() {
        return Err(Error::NoFeasibleStart("init mesh disagrees with the problem".into()));
    }
    let decision_a = matches!(dp.base.a_ctrl, crate::sweeping::RowControl::Decision { .. });
    let decision_b = matches!(dp.base.b_ctrl, crate::sweeping::OffsetControl::Decision);
    let u0 = dp.reference.u_at(0.0);
    let trust: Option<Vec<Vec<f64>>> = options.trust_radius.map(|_| {
        (0..nu).map(|j| dp.reference.u_at(dp.mesh[j])).collect()
    });
    let confine = |u: &[f64], j: usize| -> Vec<f64> {
        let mut v = dp.base.control_set.project(u);
        if let (Some(r), Some(centers)) = (options.trust_radius, trust.as_ref()) {
            for (vc, cc) in v.iter_mut().zip(&centers[j]) {
                *vc = vc.clamp(cc - r, cc + r);
            }
        }
        v
    };

    // Reference row/offset velocities anchor the decision windows.
    let ref_da: Vec<Vec<Vec<f64>>> =
        (0..nu).map(|j| dp.reference.adot_at(dp.mesh[j])).collect();
    let ref_db: Vec<Vec<f64>> = (0..nu).map(|j| dp.reference.bdot_at(dp.mesh[j])).collect();
    let da_window = |j: usize, i: usize, k: usize| -> (f64, f64) {
        let c = ref_da[j][i][k];
        let w = options.trust_radius.unwrap_or(2.0 * (1.0 + c.abs()));
        (c - w, c + w)
    };
    let db_window = |j: usize, i: usize| -> (f64, f64) {
        let c = ref_db[j][i];
        let w = options.trust_radius.unwrap_or(2.0 * (1.0 + c.abs()));
        (c - w, c + w)
    };

    // Decision velocities implied by the init quadruple.
    let init_da = decision_a.then(|| {
        (0..nu)
            .map(|j| {
                let h = dp.mesh[j + 1] - dp.mesh[j];
                init.a[j + 1]
                    .iter()
                    .zip(&init.a[j])
                    .map(|(an, ac)| an.iter().zip(ac).map(|(x, y)| (x - y) / h).collect())
                    .collect()
            })
            .collect::<Vec<Vec<Vec<f64>>>>()
    });
    let init_db = decision_b.then(|| {
        (0..nu)
            .map(|j| {
                let h = dp.mesh[j + 1] - dp.mesh[j];
                init.b[j + 1]
                    .iter()
                    .zip(&init.b[j])
                    .map(|(x, y)| (x - y) / h)
                    .collect()
            })
            .collect::<Vec<Vec<f64>>>()
    });

    // Validate the starting point by simulating it.
    let mut init_controls = init.u.clone();
    if init_controls.len() != nu {
        return Err(Error::NoFeasibleStart("init has the wrong number of controls".into()));
    }
    init_controls[0] = u0.clone();
    for (j, u) in init_controls.iter_mut().enumerate() {
        *u = confine(u, j);
    }
    let init_vars =
        DecisionVars { u: init_controls.clone(), da: init_da.clone(), db: init_db.clone() };
    {
        let input = init_vars.to_input(dp);
        simulate(&dp.base, &input, &dp.mesh, options.mode)
            .map_err(|e| Error::NoFeasibleStart(format!("init simulation failed: {e}")))?;
    }

    // Coordinate addresses of every decision variable.
    let mut coords: Vec<Coord> = Vec::new();
    for j in 1..nu {
        for c in 0..d {
            coords.push(Coord::U(j, c));
        }
    }
    if decision_a {
        for j in 0..nu {
            for i in 0..m {
                for k in 0..n {
                    coords.push(Coord::Da(j, i, k));
                }
            }
        }
    }
    if decision_b {
        for j in 0..nu {
            for i in 0..m {
                coords.push(Coord::Db(j, i));
            }
        }
    }
    let coord_window = |coord: Coord, vars: &DecisionVars| -> (f64, f64) {
        match coord {
            Coord::U(j, c) => {
                let (mut lo, mut hi) = coordinate_range(&dp.base.control_set, &vars.u[j], c);
                if let (Some(r), Some(centers)) = (options.trust_radius, trust.as_ref()) {
                    lo = lo.max(centers[j][c] - r);
                    hi = hi.min(centers[j][c] + r);
                }
                (lo, hi)
            }
            Coord::Da(j, i, k) => da_window(j, i, k),
            Coord::Db(j, i) => db_window(j, i),
        }
    };
    let apply = |vars: &DecisionVars, coord: Coord, v: f64| -> DecisionVars {
        let mut out = vars.clone();
        out.set(coord, v);
        if let Coord::U(j, _) = coord {
            out.u[j] = confine(&out.u[j], j);
        }
        out
    };

    // Deterministic start list: init, the reference point, then scrambled
    // low-discrepancy control points (decision velocities start at the
    // reference velocities).
    let ref_vars = DecisionVars {
        u: {
            let mut c: Vec<Vec<f64>> =
                (0..nu).map(|j| confine(&dp.reference.u_at(dp.mesh[j]), j)).collect();
            c[0] = u0.clone();
            c
        },
        da: decision_a.then(|| ref_da.clone()),
        db: decision_b.then(|| ref_db.clone()),
    };
    let mut rng_state = options.seed ^ 0xD1B54A32D192ED03;
    let scramble: Vec<f64> = (0..(nu.saturating_sub(1)) * d)
        .map(|_| (splitmix64(&mut rng_state) >> 11) as f64 / (1u64 << 53) as f64)
        .collect();
    let mut starts: Vec<DecisionVars> = vec![init_vars, ref_vars.clone()];
    for s in 0..options.starts.saturating_sub(starts.len()) {
        let mut ctrl = vec![u0.clone()];
        for j in 1..nu {
            let mut u = vec![0.0; d];
            for c in 0..d {
                let k = (j - 1) * d + c;
                let frac = (halton(s + 1, PRIMES[k % PRIMES.len()]) + scramble[k]).fract();
                u[c] = match &dp.base.control_set {
                    ControlSet::Box { lo, hi } => lo[c] + frac * (hi[c] - lo[c]),
                    ControlSet::Ball { center, radius } => {
                        center[c] + (2.0 * frac - 1.0) * radius
                    }
                    ControlSet::Finite { points } => {
                        points[(frac * points.len() as f64) as usize % points.len()][c]
                    }
                };
            }
            ctrl.push(confine(&u, j));
        }
        starts.push(DecisionVars { u: ctrl, da: ref_vars.da.clone(), db: ref_vars.db.clone() });
    }

    let mut history = SolveHistory::default();
    let mut best: Option<(f64, DecisionVars)> = None;
    let mut penalty = options.penalty_initial;
    loop {
        let shooter = Shooter {
            dp,
            mode: options.mode,
            penalty,
            evaluations: std::cell::Cell::new(0),
        };
        for start in &starts {
            let mut vars = start.clone();
            let mut current = shooter.eval(&vars);
            if !current.is_finite() {
                continue;
            }
            for _sweep in 0..options.max_sweeps {
                let mut improved = false;
                for &coord in &coords {
                    let (lo, hi) = coord_window(coord, &vars);
                    if hi - lo < 1e-15 {
                        continue;
                    }
                    let f = |v: f64| shooter.eval(&apply(&vars, coord, v));
                    let v_opt = line_minimize(&f, lo, hi, vars.get(coord), current);
                    let trial = apply(&vars, coord, v_opt);
                    let val = shooter.eval(&trial);
                    if val < current - 1e-14 {
                        if (val - current).abs() > options.tol {
                            improved = true;
                        }
                        vars = trial;
                        current = val;
                        // Incumbent trajectory: record only global
                        // improvements so the history is a descent.
                        if best.as_ref().map_or(true, |(bv, _)| val < *bv) {
                            history.accepted_costs.push(val);
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
            let better = match &best {
                None => true,
                Some((bv, bc)) => {
                    current < bv - 1e-12
                        || ((current - bv).abs() <= 1e-12
                            && lexicographic_less(&vars.u, &bc.u))
                }
            };
            if better {
                best = Some((current, vars));
            }
        }
        // Derivative polish on the incumbent: coordinate Newton with
        // finite-difference slopes resolves past the rounding floor that
        // value comparisons hit.
        if let Some((bv, bc)) = &best {
            let mut vars = bc.clone();
            let mut moved = false;
            for _ in 0..8 {
                let mut max_step = 0.0_f64;
                for &coord in &coords {
                    let (lo, hi) = coord_window(coord, &vars);
                    let v0 = vars.get(coord);
                    let h = 1e-5 * (1.0 + v0.abs());
                    if v0 - h < lo || v0 + h > hi {
                        continue;
                    }
                    let eval_at = |v: f64| shooter.eval(&apply(&vars, coord, v));
                    let f0 = eval_at(v0);
                    let fp = eval_at(v0 + h);
                    let fm_ = eval_at(v0 - h);
                    if !(f0.is_finite() && fp.is_finite() && fm_.is_finite()) {
                        continue;
                    }
                    let grad = (fp - fm_) / (2.0 * h);
                    let hess = (fp - 2.0 * f0 + fm_) / (h * h);
                    if hess <= 1e-9 {
                        continue;
                    }
                    let vn = (v0 - grad / hess).clamp(lo, hi);
                    let fn_ = eval_at(vn);
                    if fn_ <= f0 + 1e-12 {
                        max_step = max_step.max((vn - v0).abs());
                        vars.set(coord, vn);
                        moved = true;
                    }
                }
                if max_step < 1e-11 {
                    break;
                }
            }
            if moved {
                let val = shooter.eval(&vars);
                if val <= bv + 1e-12 {
                    best = Some((val.min(*bv), vars));
                }
            }
        }
        history.evaluations += shooter.evaluations.get();

        // Re-check the localization penalty on the incumbent.
        let Some((_, vars)) = &best else {
            return Err(Error::NoFeasibleStart("every start failed to simulate".into()));
        };
        let input = vars.to_input(dp);
        let sim = simulate(&dp.base, &input, &dp.mesh, options.mode)?;
        let rep = feasibility_residuals(dp, &sim.quadruple, 1e-8)?;
        let mut excess = (rep.localization_state - rep.localization_bound).max(0.0)
            + (rep.localization_velocity - rep.localization_bound).max(0.0);
        for (_, _, v) in &rep.band_violations {
            excess += v;
        }
        if excess <= 1e-10 {
            return Ok((sim.quadruple, history));
        }
        if penalty >= options.penalty_max {
            history.budget_exceeded = true;
            return Ok((sim.quadruple, history));
        }
        penalty *= options.penalty_factor;
    }
}

fn coordinate_range(set: &ControlSet, u: &[f64], c: usize) -> (f64, f64) {
    match set {
        ControlSet::Box { lo, hi } => (lo[c], hi[c]),
        ControlSet::Ball { center, radius } => {
            let mut slack2 = radius * radius;
            for (i, (ui, ci)) in u.iter().zip(center).enumerate() {
                if i != c {
                    slack2 -= (ui - ci) * (ui - ci);
                }
            }
            let half = slack2.max(0.0).sqrt();
            (center[c] - half, center[c] + half)
        }
        ControlSet::Finite { .. } => (u[c], u[c]),
    }
}

/// Golden-section search followed by a parabolic polish; handles the
/// piecewise-quadratic one-dimensional slices exactly enough for 1e-9 cost
/// accuracy.
fn line_minimize(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, current_v: f64, current_f: f64) -> f64 {
    const PHI: f64 = 0.618_033_988_749_894_9;
    let mut a = lo;
    let mut b = hi;
    let mut x1 = b - PHI * (b - a);
    let mut x2 = a + PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..70 {
        if b - a < 1e-12 * (1.0 + hi.abs() + lo.abs()) {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + PHI * (b - a);
            f2 = f(x2);
        }
    }
    let mut xm = 0.5 * (a + b);
    let mut fm = f(xm);
    // Parabolic refinement on the smooth piece around the minimizer. The
    // probe step stays well above the cost's rounding floor so the fitted
    // vertex of a quadratic slice is accurate to ~1e-10.
    for _ in 0..4 {
        let h = (1e-5 * (1.0 + xm.abs())).min((hi - lo) / 4.0).max(1e-12);
        let (xl, xr) = (xm - h, xm + h);
        if xl < lo || xr > hi {
            break;
        }
        let (fl, fr) = (f(xl), f(xr));
        let denom = fl - 2.0 * fm + fr;
        if denom.abs() < 1e-300 {
            break;
        }
        let step = 0.5 * h * (fl - fr) / denom;
        if !step.is_finite() || step.abs() > h * 1e6 {
            break;
        }
        let xn = (xm + step).clamp(lo, hi);
        let fn_ = f(xn);
        if fn_ <= fm {
            xm = xn;
            fm = fn_;
        } else {
            break;
        }
    }
    // Keep the incumbent when the line search found nothing better.
    if fm < current_f {
        xm
    } else {
        current_v
    }
}

fn lexicographic_less(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    for (ua, ub) in a.iter().zip(b) {
        for (va, vb) in ua.iter().zip(ub) {
            if va < vb {
                return true;
            }
            if va > vb {
                return false;
            }
        }
    }
    false
}

/// One row of the convergence study.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyRow {
    pub nu: usize,
    pub cost: f64,
    pub state_gap: f64,
    pub ab_gap: f64,
    pub u_gap: f64,
    pub failed: bool,
}

/// For each mesh size, build the discrete problem around the reference,
/// solve it, and record the cost and the distance components to the
/// reference.
pub fn convergence_study(
    prob: &crate::sweeping::SweepingProblem,
    reference: &crate::sweeping::SampledTrajectory,
    nu_list: &[usize],
    epsilon: f64,
    options: &SolveOptions,
) -> Vec<StudyRow> {
    let mut rows = Vec::with_capacity(nu_list.len());
    for &nu in nu_list {
        let row = (|| -> Result<StudyRow> {
            let mesh = uniform_mesh(prob.horizon, nu);
            let dp = DiscreteProblem::new(prob.clone(), mesh.clone(), reference.clone(), epsilon, 0.0)?;
            let ref_controls: Vec<Vec<f64>> = (0..nu)
                .map(|j| prob.control_set.project(&reference.u_at(mesh[j])))
                .collect();
            let init = simulate(
                prob,
                &ControlInput { u: ref_controls, a: None, b: None },
                &mesh,
                options.mode,
            )?
            .quadruple;
            // The tracked neighborhood shrinks with the mesh: a fixed
            // control-space radius would leave the reference's descent
            // basin on fine meshes.
            let mut row_opts = options.clone();
            row_opts.trust_radius =
                options.trust_radius.map(|r| r.min(0.08 * prob.horizon / nu as f64));
            let (best, _) = solve_pk(&dp, &init, &row_opts)?;
            let w = w12_distance(
                TrajectoryData::Quadruple(&best),
                TrajectoryData::Sampled(reference),
                &mesh,
                true,
            )?;
            Ok(StudyRow {
                nu,
                cost: cost_jk(&dp, &best)?,
                state_gap: w.state,
                ab_gap: w.ab,
                u_gap: w.u,
                failed: false,
            })
        })();
        rows.push(row.unwrap_or(StudyRow {
            nu,
            cost: f64::NAN,
            state_gap: f64::NAN,
            ab_gap: f64::NAN,
            u_gap: f64::NAN,
            failed: true,
        }));
    }
    rows
}

/// Render study rows as CSV.
pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut out = String::from("nu,cost,state_gap_w12,ab_gap_w12,u_gap_l2,failed\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{}\n",
            r.nu, r.cost, r.state_gap, r.ab_gap, r.u_gap, r.failed
        ));
    }
    out
}
