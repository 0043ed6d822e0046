//! Cross-module integration checks that tie the discretizer, the cost, and
//! the certificate engine together.

mod common;
use common::rotating_halfspace_reference;

use polysweep::certify::{find_certificate, ConditionMode};
use polysweep::example8;
use polysweep::linalg::norm2;
use polysweep::polyhedra::{inverse_triangle_witness, Polyhedron};
use polysweep::sweeping::{
    discretize_feasible, simulate, uniform_mesh, ControlInput, ControlSet, OffsetControl,
    Perturbation, RowControl, RunningCost, SampledTrajectory, StepMode, SweepingProblem,
    TerminalCost,
};
use polysweep::transcription::{cost_gradient_u, DiscreteProblem};

/// Recovered multipliers obey the inverse-triangle energy bound
/// `eta_i <= gamma (||xdot|| + ||g||)` with the witness constant from the
/// active rows.
#[test]
fn discretizer_multipliers_obey_energy_bound() {
    let (prob, reference) = rotating_halfspace_reference(1024);
    let mesh = uniform_mesh(1.0, 32);
    let (quad, diags) = discretize_feasible(&prob, &reference, &mesh, 4).unwrap();
    assert!(diags.gamma_witness.is_finite());
    for j in 0..quad.nu() {
        let t = mesh[j];
        let poly = Polyhedron::new(reference.a_at(t), reference.b_at(t)).unwrap();
        let xc = reference.x_at(t);
        let gamma = inverse_triangle_witness(&poly, &xc, poly.default_tol(&xc)).unwrap();
        let xdot = norm2(&reference.xdot_at(t));
        let g = norm2(&prob.g.eval(&xc, &reference.u_at(t)));
        let bound = gamma * (xdot + g);
        for &e in &quad.eta[j] {
            assert!(e <= bound + 1e-9, "step {j}: eta {e} > bound {bound}");
        }
    }
    // The a-priori diagnostic dominates the realized mesh-point state gap.
    let mut worst = 0.0_f64;
    for (j, &t) in mesh.iter().enumerate() {
        worst = worst.max(norm2(&polysweep::linalg::sub(&quad.x[j], &reference.x_at(t))));
    }
    assert!(
        worst <= diags.apriori_state_bound,
        "gap {worst} vs bound {}",
        diags.apriori_state_bound
    );
}

/// The inclusion residual of every simulated quadruple stays below 1e-8 when
/// re-evaluated independently of the stepper.
#[test]
fn simulated_quadruples_satisfy_the_inclusion() {
    let prob = example8::problem();
    for nu in [2usize, 4, 8, 16] {
        let mesh = uniform_mesh(1.0, nu);
        let sim = simulate(
            &prob,
            &ControlInput { u: example8::optimal_controls(nu), a: None, b: None },
            &mesh,
            StepMode::Explicit,
        )
        .unwrap();
        assert!(sim.quadruple.inclusion_residual(&prob.g) <= 1e-8);
        sim.quadruple.check_invariants(&prob, 1e-8).unwrap();
    }
}

fn interior_problem() -> (SweepingProblem, SampledTrajectory) {
    let prob = SweepingProblem {
        n: 2,
        m: 1,
        d: 2,
        horizon: 1.0,
        x0: vec![5.0, 5.0],
        polyhedron: Polyhedron::new(vec![vec![-1.0, -2.0]], vec![-2.0]).unwrap(),
        g: Perturbation::Identity,
        phi: TerminalCost::Zero,
        ell: RunningCost::ControlNormSq,
        control_set: ControlSet::Box { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0] },
        a_ctrl: RowControl::Fixed,
        b_ctrl: OffsetControl::Fixed,
    };
    let reference = SampledTrajectory::from_closures(
        1.0,
        16,
        |_| vec![5.0, 5.0],
        |_| vec![0.0, 0.0],
        |_| vec![vec![-1.0, -2.0]],
        |_| vec![vec![0.0, 0.0]],
        |_| vec![-2.0],
        |_| vec![0.0],
        |_| vec![0.0, 0.0],
    );
    (prob, reference)
}

/// On an interior trajectory the conditions collapse to classical
/// stationarity: the certificate residual vanishes exactly when the direct
/// cost gradient does.
#[test]
fn interior_certificate_matches_classical_stationarity() {
    let (prob, reference) = interior_problem();
    let mesh = uniform_mesh(1.0, 3);
    let dp = DiscreteProblem::new(prob.clone(), mesh.clone(), reference, 1.0, 0.0).unwrap();

    // Stationary candidate: u = 0 (matches the reference start, so the
    // pinned first control is consistent).
    let q0 = simulate(
        &prob,
        &ControlInput { u: vec![vec![0.0, 0.0]; 3], a: None, b: None },
        &mesh,
        StepMode::Explicit,
    )
    .unwrap()
    .quadruple;
    let g0 = cost_gradient_u(&dp, &q0, 1).unwrap();
    assert!(norm2(&g0) < 1e-12);
    let s0 = find_certificate(&dp, &q0, ConditionMode::Th72).unwrap();
    assert!(s0.residual <= 1e-10);

    // Non-stationary candidate: positive gradient, positive residual.
    let mut u = vec![vec![0.0, 0.0]; 3];
    u[1] = vec![0.3, -0.2];
    u[2] = vec![0.3, -0.2];
    let q1 = simulate(&prob, &ControlInput { u, a: None, b: None }, &mesh, StepMode::Explicit)
        .unwrap()
        .quadruple;
    let g1 = cost_gradient_u(&dp, &q1, 1).unwrap();
    assert!(norm2(&g1) > 1e-3);
    let s1 = find_certificate(&dp, &q1, ConditionMode::Th72).unwrap();
    assert!(s1.residual > 1e-3, "residual {}", s1.residual);
}

/// The discretizer error indicators shrink under mesh refinement together
/// with the realized gaps.
#[test]
fn discretizer_diagnostics_track_refinement() {
    let (prob, reference) = rotating_halfspace_reference(2048);
    let mut prev_gap = f64::INFINITY;
    let mut prev_mu = f64::INFINITY;
    for nu in [8usize, 32, 128] {
        let mesh = uniform_mesh(1.0, nu);
        let (_, diags) = discretize_feasible(&prob, &reference, &mesh, 4).unwrap();
        assert!(diags.w12_state_gap < prev_gap);
        assert!(diags.mu_k < prev_mu);
        assert!(diags.delta_k >= 0.0);
        prev_gap = diags.w12_state_gap;
        prev_mu = diags.mu_k;
    }
}
