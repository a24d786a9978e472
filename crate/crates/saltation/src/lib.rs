//! First-order sensitivity analysis and LQR tracking for hybrid systems
//! with state-triggered jumps.
//!
//! A hybrid trajectory flows under an ante vector field until a scalar
//! guard crosses zero, applies an instantaneous state impulse, and then
//! flows under a post field. Perturbations of the initial state or input
//! do not pass through the event smoothly: to first order they are
//! multiplied by a jump gain assembled from the fields, the guard
//! gradient, and the impulse Jacobians at the nominal event. This crate
//! computes that gain, propagates perturbations through it along extended
//! reference trajectories, verifies the first-order accuracy against full
//! nonlinear simulations, and synthesizes time-varying LQR tracking gains
//! by integrating a Riccati equation backward through the jump.
//!
//! Entry points:
//!
//! - [`hybrid::simulate`] integrates the nominal trajectory, locates the
//!   event, and extends both branches across the full span.
//! - [`sensitivity::linearize`] builds the time-varying linearization and
//!   the jump gain; [`sensitivity::propagate_linearization`] pushes a
//!   perturbation direction through it and
//!   [`sensitivity::convergence_study`] measures the first-order error
//!   against the nonlinear flow.
//! - [`tracking::riccati_with_jumps`] solves the backward Riccati pass
//!   with the congruence reset at the event; [`tracking::track`] closes
//!   the loop on the plant.
//! - [`models`] carries ready-made benchmark systems with closed forms,
//!   [`oracle`] independent finite-difference and fine-grid cross-checks.

// Validation deliberately writes `!(x > 0.0)` and friends: the negated
// comparison rejects NaN, which the un-negated flip would silently accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod hybrid;
pub mod models;
pub mod ode;
pub mod oracle;
pub mod report;
pub mod sensitivity;
pub mod signal;
pub mod system;
pub mod tracking;

pub use error::{Error, Result};
pub use hybrid::{
    extend_segment, locate_event, simulate, Branch, Direction, EventRecord, HybridTrajectory,
    IntegrationOptions,
};
pub use models::{bouncing_ball, moving_wall_ball, switched_linear, CatalogEntry, ClosedForms};
pub use ode::{rk4_integrate, DenseSegment};
pub use oracle::{bisect, fd_sensitivity, fine_riccati, FdProbe, FineRiccati};
pub use sensitivity::{
    approximate, convergence_study, event_data, jump_gain, linearize, propagate_linearization,
    ApproxTrajectory, ConvergenceRow, ConvergenceStudy, EventData, JumpLinearization, JumpPart,
    LinearizedTrajectory,
};
pub use signal::InputSignal;
pub use system::{HybridSystem, HybridSystemBuilder};
pub use tracking::{
    closed_loop_fields, lqr_cost, riccati_segment, riccati_with_jumps, track, ClosedLoopTrace,
    GainFn, LinearPolicy, LqrWeights, MatrixSegment, RiccatiSolution, SwitchingPolicy,
};
