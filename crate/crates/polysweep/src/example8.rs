//! Bundled showcase problem: a particle in the fixed halfspace
//! `{ x1 + 2 x2 >= 2 }` with identity perturbation, terminal cost
//! `x1 + x2`, running cost `u1^2/2 + u2^2`, and box controls, starting at
//! `(3/2, 1)`. The optimal trajectory travels with full thrust to the
//! boundary, hits it at `t = 1/2`, then rides it to the final time.

use crate::polyhedra::Polyhedron;
use crate::sweeping::{
    ControlSet, OffsetControl, Perturbation, RowControl, RunningCost, SampledTrajectory,
    SweepingProblem, TerminalCost,
};

/// Optimal cost of the showcase problem (441/200).
pub const OPTIMAL_COST: f64 = 2.205;
/// Cost of the tangential branch where the boundary multiplier vanishes
/// (53/24).
pub const TANGENTIAL_COST: f64 = 53.0 / 24.0;
/// Boundary multiplier along the optimal second segment (1/25).
pub const OPTIMAL_ETA: f64 = 0.04;
/// Second-segment optimal control.
pub const OPTIMAL_U1: [f64; 2] = [-0.4, 0.1];
/// Second-segment control on the tangential branch.
pub const TANGENTIAL_U1: [f64; 2] = [-1.0 / 3.0, 1.0 / 6.0];

/// The showcase problem data.
pub fn problem() -> SweepingProblem {
    SweepingProblem {
        n: 2,
        m: 1,
        d: 2,
        horizon: 1.0,
        x0: vec![1.5, 1.0],
        polyhedron: Polyhedron::new(vec![vec![-1.0, -2.0]], vec![-2.0]).unwrap(),
        g: Perturbation::Identity,
        phi: TerminalCost::Linear { coefs: vec![1.0, 1.0] },
        ell: RunningCost::ControlQuadraticDiag { coefs: vec![0.5, 1.0] },
        control_set: ControlSet::Box { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0] },
        a_ctrl: RowControl::Fixed,
        b_ctrl: OffsetControl::Fixed,
    }
}

/// Closed-form optimal state.
pub fn optimal_state(t: f64) -> Vec<f64> {
    if t <= 0.5 {
        vec![1.5 - t, 1.0 - t]
    } else {
        vec![1.0 - 9.0 / 25.0 * (t - 0.5), 0.5 + 9.0 / 50.0 * (t - 0.5)]
    }
}

fn optimal_velocity(t: f64) -> Vec<f64> {
    if t < 0.5 {
        vec![-1.0, -1.0]
    } else {
        vec![-9.0 / 25.0, 9.0 / 50.0]
    }
}

fn optimal_control(t: f64) -> Vec<f64> {
    if t < 0.5 {
        vec![-1.0, -1.0]
    } else {
        OPTIMAL_U1.to_vec()
    }
}

/// Sampled form of the optimal solution on `samples + 1` uniform points.
pub fn reference(samples: usize) -> SampledTrajectory {
    SampledTrajectory::from_closures(
        1.0,
        samples,
        optimal_state,
        optimal_velocity,
        |_| vec![vec![-1.0, -2.0]],
        |_| vec![vec![0.0, 0.0]],
        |_| vec![-2.0],
        |_| vec![0.0],
        optimal_control,
    )
}

/// The optimal piecewise-constant controls on the uniform `nu`-interval
/// mesh (`nu` even so the switch at t = 1/2 is representable).
pub fn optimal_controls(nu: usize) -> Vec<Vec<f64>> {
    (0..nu)
        .map(|j| {
            let t = j as f64 / nu as f64;
            optimal_control(t)
        })
        .collect()
}

/// Controls of the tangential branch (same approach phase, boundary-parallel
/// second phase).
pub fn tangential_controls(nu: usize) -> Vec<Vec<f64>> {
    (0..nu)
        .map(|j| {
            let t = j as f64 / nu as f64;
            if t < 0.5 {
                vec![-1.0, -1.0]
            } else {
                TANGENTIAL_U1.to_vec()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn problem_validates() {
        problem().validate().unwrap();
    }

    #[test]
    fn state_hits_boundary_at_half() {
        let x = optimal_state(0.5);
        assert!((x[0] + 2.0 * x[1] - 2.0).abs() < 1e-15);
        let x1 = optimal_state(1.0);
        assert!((x1[0] - 0.82).abs() < 1e-15 && (x1[1] - 0.59).abs() < 1e-15);
    }

    #[test]
    fn reference_is_consistent() {
        let r = reference(100);
        // Hand value: x(0.3) = (1.2, 0.7).
        let x = r.x_at(0.3);
        assert!((x[0] - 1.2).abs() < 1e-12 && (x[1] - 0.7).abs() < 1e-12);
        assert_eq!(r.u_at(0.75), OPTIMAL_U1.to_vec());
    }
}
