//! Optimal control of perturbed polyhedral sweeping processes.
//!
//! The crate covers the full discrete pipeline for the controlled sweeping
//! inclusion `xdot in -N(x; C(t)) + g(x, u)` over a moving polyhedron
//! `C = { x : <a_i, x> <= b_i }`:
//!
//! * [`polyhedra`] — projections, active sets, normal-cone multipliers, and
//!   constraint-qualification checks;
//! * [`coderiv`] — closed-form coderivative descriptors for the orthant and
//!   polyhedral normal-cone mappings and the sweeping velocity mapping;
//! * [`sweeping`] — catching-up simulation and the feasible-trajectory
//!   discretizer with its error diagnostics;
//! * [`transcription`] — the discretized Bolza cost, constraint residuals,
//!   and proximity integrals;
//! * [`solve`] — reduced analytic and single-shooting solvers plus the mesh
//!   convergence study;
//! * [`certify`] — assembly and LP search of dual certificates for the
//!   discrete necessary optimality conditions.

pub mod error;
pub mod linalg;
pub mod lp;
pub mod nnls;
pub mod polyhedra;
pub mod coderiv;
pub mod sweeping;
pub mod transcription;
pub mod solve;
pub mod certify;
pub mod jsonio;
pub mod example8;

pub use error::{Error, Result};
pub use polyhedra::{
    active_set, check_plicq, inverse_triangle_witness, normal_cone_multipliers, project,
    slater_margin, ActiveSet, Polyhedron, Projection, SlaterMargin,
};
