//! Shared fixtures for the integration suites.

use polysweep::polyhedra::Polyhedron;
use polysweep::sweeping::{
    OffsetControl, Perturbation, RowControl, RunningCost, SampledTrajectory, SweepingProblem,
    TerminalCost,
};

/// Synthetic boundary-riding analytic solution on a rotating halfspace.
pub fn rotating_halfspace_reference(samples: usize) -> (SweepingProblem, SampledTrajectory) {
    let theta = |t: f64| 0.3 + 0.2 * t;
    let a = move |t: f64| vec![theta(t).cos(), theta(t).sin()];
    let a_perp = move |t: f64| vec![-theta(t).sin(), theta(t).cos()];
    let b = |t: f64| 1.0 + 0.1 * t.sin();
    let bdot = |t: f64| 0.1 * t.cos();
    let tau = |t: f64| 0.5 * t.cos();
    let taudot = |t: f64| -0.5 * t.sin();
    let eta = |t: f64| 0.5 + 0.3 * (2.0 * t).sin();
    let x = move |t: f64| {
        let av = a(t);
        let pv = a_perp(t);
        (0..2).map(|c| b(t) * av[c] + tau(t) * pv[c]).collect::<Vec<f64>>()
    };
    let xdot = move |t: f64| {
        let av = a(t);
        let pv = a_perp(t);
        let c1 = bdot(t) - tau(t) * 0.2;
        let c2 = b(t) * 0.2 + taudot(t);
        (0..2).map(|c| c1 * av[c] + c2 * pv[c]).collect::<Vec<f64>>()
    };
    let u = move |t: f64| {
        let av = a(t);
        let xd = xdot(t);
        (0..2).map(|c| xd[c] + eta(t) * av[c]).collect::<Vec<f64>>()
    };
    let adot = move |t: f64| {
        let pv = a_perp(t);
        vec![(0..2).map(|c| 0.2 * pv[c]).collect::<Vec<f64>>()]
    };
    let reference = SampledTrajectory::from_closures(
        1.0,
        samples,
        x.clone(),
        xdot,
        move |t| vec![a(t)],
        adot,
        move |t| vec![b(t)],
        move |t| vec![bdot(t)],
        u,
    );
    let prob = SweepingProblem {
        n: 2,
        m: 1,
        d: 2,
        horizon: 1.0,
        x0: x(0.0),
        polyhedron: Polyhedron::new(vec![a(0.0)], vec![b(0.0)]).unwrap(),
        g: Perturbation::Identity,
        phi: TerminalCost::Zero,
        ell: RunningCost::ControlNormSq,
        control_set: polysweep::sweeping::ControlSet::Box {
            lo: vec![-4.0, -4.0],
            hi: vec![4.0, 4.0],
        },
        a_ctrl: RowControl::Sampled {
            times: reference.times.clone(),
            rows: reference.a.clone(),
        },
        b_ctrl: OffsetControl::Sampled {
            times: reference.times.clone(),
            offsets: reference.b.clone(),
        },
    };
    (prob, reference)
}

