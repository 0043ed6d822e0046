//! Python bindings for the sweeping-process toolkit: polyhedral geometry,
//! catching-up simulation, the bundled showcase problem, and the dual
//! certificate search. Structured values cross the boundary as JSON strings;
//! small vectors as native lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use polysweep::certify::{find_certificate as rs_find_certificate, ConditionMode};
use polysweep::jsonio::to_canonical_json;
use polysweep::polyhedra::{self, Polyhedron, SlaterMargin};
use polysweep::solve::{solve_reduced_halfspace, solve_pk, SolveOptions};
use polysweep::sweeping::{
    simulate as rs_simulate, uniform_mesh, ControlInput, DiscreteQuadruple, SampledTrajectory,
    StepMode, SweepingProblem,
};
use polysweep::transcription::{cost_jk, DiscreteProblem};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn poly(rows: Vec<Vec<f64>>, offsets: Vec<f64>) -> PyResult<Polyhedron> {
    Polyhedron::new(rows, offsets).map_err(err)
}

/// Euclidean projection onto `{x : <a_i, x> <= b_i}`; returns the projected
/// point and the KKT multipliers.
#[pyfunction]
fn project(
    rows: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    point: Vec<f64>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let p = poly(rows, offsets)?;
    let pr = polyhedra::project(&p, &point).map_err(err)?;
    Ok((pr.point, pr.multipliers))
}

/// Indices of constraints active at `point` within `tol`.
#[pyfunction]
fn active_set(
    rows: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    point: Vec<f64>,
    tol: f64,
) -> PyResult<Vec<usize>> {
    let p = poly(rows, offsets)?;
    Ok(polyhedra::active_set(&p, &point, tol).map_err(err)?.indices)
}

/// Minimum-norm nonnegative multipliers reproducing `v` on the active rows.
#[pyfunction]
fn normal_cone_multipliers(
    rows: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    x: Vec<f64>,
    v: Vec<f64>,
    tol: f64,
) -> PyResult<Vec<f64>> {
    let p = poly(rows, offsets)?;
    polyhedra::normal_cone_multipliers(&p, &x, &v, tol).map_err(err)
}

/// Positive linear independence check: (holds, licq, certificate-or-None).
#[pyfunction]
fn check_plicq(
    rows: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    x: Vec<f64>,
    tol: f64,
) -> PyResult<(bool, bool, Option<Vec<f64>>)> {
    let p = poly(rows, offsets)?;
    let rep = polyhedra::check_plicq(&p, &x, tol).map_err(err)?;
    Ok((rep.holds, rep.licq, rep.certificate))
}

/// Minimax slack of the polyhedron: (value-or-None, unbounded_below).
#[pyfunction]
fn slater_margin(rows: Vec<Vec<f64>>, offsets: Vec<f64>) -> PyResult<(Option<f64>, bool)> {
    let p = poly(rows, offsets)?;
    Ok(match polyhedra::slater_margin(&p) {
        SlaterMargin::Bounded(v) => (Some(v), false),
        SlaterMargin::UnboundedBelow => (None, true),
    })
}

/// Orthant normal-cone coderivative descriptor as canonical JSON.
#[pyfunction]
fn coderiv_orthant(x: Vec<f64>, v: Vec<f64>, w: Vec<f64>, tol: f64) -> PyResult<String> {
    let d = polysweep::coderiv::coderiv_orthant(&x, &v, &w, tol).map_err(err)?;
    to_canonical_json(&d).map_err(err)
}

/// The bundled showcase problem as canonical JSON.
#[pyfunction]
fn example8_problem() -> PyResult<String> {
    to_canonical_json(&polysweep::example8::problem()).map_err(err)
}

/// The showcase reference trajectory sampled on `samples + 1` points.
#[pyfunction]
fn example8_reference(samples: usize) -> PyResult<String> {
    to_canonical_json(&polysweep::example8::reference(samples)).map_err(err)
}

/// Catching-up simulation; returns the quadruple as canonical JSON.
#[pyfunction]
#[pyo3(signature = (problem_json, controls_json, mode = "explicit"))]
fn simulate(problem_json: &str, controls_json: &str, mode: &str) -> PyResult<String> {
    let prob: SweepingProblem = serde_json::from_str(problem_json).map_err(err)?;
    let controls: ControlInput = serde_json::from_str(controls_json).map_err(err)?;
    let mesh = uniform_mesh(prob.horizon, controls.u.len());
    let step = match mode {
        "projective" => StepMode::Projective,
        _ => StepMode::Explicit,
    };
    let sim = rs_simulate(&prob, &controls, &mesh, step).map_err(err)?;
    to_canonical_json(&sim.quadruple).map_err(err)
}

fn build_dp(problem_json: &str, reference_json: &str, nu: usize) -> PyResult<DiscreteProblem> {
    let prob: SweepingProblem = serde_json::from_str(problem_json).map_err(err)?;
    let reference: SampledTrajectory = serde_json::from_str(reference_json).map_err(err)?;
    let mesh = uniform_mesh(prob.horizon, nu);
    DiscreteProblem::new(prob, mesh, reference, 1.0, 0.0).map_err(err)
}

/// Reduced analytic solve of the showcase family:
/// (controls, cost, per-step multipliers).
#[pyfunction]
fn solve_reduced(
    problem_json: &str,
    reference_json: &str,
    nu: usize,
) -> PyResult<(Vec<Vec<f64>>, f64, Vec<f64>)> {
    let dp = build_dp(problem_json, reference_json, nu)?;
    let sol = solve_reduced_halfspace(&dp).map_err(err)?;
    Ok((sol.controls, sol.cost, sol.eta))
}

/// Multistart shooting solve; returns (cost, quadruple JSON).
#[pyfunction]
#[pyo3(signature = (problem_json, reference_json, nu, starts = 16, seed = 0, trust_radius = None))]
fn solve(
    problem_json: &str,
    reference_json: &str,
    nu: usize,
    starts: usize,
    seed: u64,
    trust_radius: Option<f64>,
) -> PyResult<(f64, String)> {
    let dp = build_dp(problem_json, reference_json, nu)?;
    let ref_controls: Vec<Vec<f64>> = (0..nu)
        .map(|j| dp.base.control_set.project(&dp.reference.u_at(dp.mesh[j])))
        .collect();
    let init = rs_simulate(
        &dp.base,
        &ControlInput { u: ref_controls, a: None, b: None },
        &dp.mesh,
        StepMode::Explicit,
    )
    .map_err(err)?
    .quadruple;
    let opts = SolveOptions { starts, seed, trust_radius, ..Default::default() };
    let (best, _) = solve_pk(&dp, &init, &opts).map_err(err)?;
    let cost = cost_jk(&dp, &best).map_err(err)?;
    Ok((cost, to_canonical_json(&best).map_err(err)?))
}

/// Discrete cost of a quadruple against the reference-localized problem.
#[pyfunction]
fn cost(problem_json: &str, reference_json: &str, solution_json: &str) -> PyResult<f64> {
    let q: DiscreteQuadruple = serde_json::from_str(solution_json).map_err(err)?;
    let dp = build_dp(problem_json, reference_json, q.mesh.len() - 1)?;
    cost_jk(&dp, &q).map_err(err)
}

/// Dual certificate search; returns (residual, lambda, certificate JSON).
#[pyfunction]
#[pyo3(signature = (problem_json, reference_json, solution_json, mode = "th72"))]
fn find_certificate(
    problem_json: &str,
    reference_json: &str,
    solution_json: &str,
    mode: &str,
) -> PyResult<(f64, f64, String)> {
    let q: DiscreteQuadruple = serde_json::from_str(solution_json).map_err(err)?;
    let dp = build_dp(problem_json, reference_json, q.mesh.len() - 1)?;
    let m = match mode {
        "th71" => ConditionMode::Th71,
        _ => ConditionMode::Th72,
    };
    let search = rs_find_certificate(&dp, &q, m).map_err(err)?;
    Ok((
        search.residual,
        search.certificate.lambda,
        to_canonical_json(&search.certificate).map_err(err)?,
    ))
}

#[pymodule]
fn polysweep_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(active_set, m)?)?;
    m.add_function(wrap_pyfunction!(normal_cone_multipliers, m)?)?;
    m.add_function(wrap_pyfunction!(check_plicq, m)?)?;
    m.add_function(wrap_pyfunction!(slater_margin, m)?)?;
    m.add_function(wrap_pyfunction!(coderiv_orthant, m)?)?;
    m.add_function(wrap_pyfunction!(example8_problem, m)?)?;
    m.add_function(wrap_pyfunction!(example8_reference, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(solve_reduced, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(cost, m)?)?;
    m.add_function(wrap_pyfunction!(find_certificate, m)?)?;
    Ok(())
}
