//! Synthesize time-varying LQR gains around a hybrid nominal trajectory:
//! sweep the Riccati equation backward from the horizon, reset it across
//! the event with the transfer matrix congruence, and verify the value
//! function against a simulated closed-loop cost.
//!
//! Run with: cargo run --example riccati_jumps

use nalgebra::{DMatrix, DVector};
use saltation::{
    bouncing_ball, linearize, lqr_cost, riccati_with_jumps, simulate, IntegrationOptions,
    LinearPolicy, LqrWeights,
};

fn main() {
    let entry = bouncing_ball(9.81, 0.5, DVector::from_vec(vec![1.0, 0.0]), (0.0, 0.8)).unwrap();
    let opts = IntegrationOptions::default();
    let traj = simulate(&entry.system, &entry.x0, &entry.input, entry.span, &opts).unwrap();
    let lin = linearize(&entry.system, &traj, &entry.input, &opts).unwrap();

    let weights = LqrWeights::constant(
        DMatrix::identity(2, 2),
        DMatrix::identity(1, 1),
        DMatrix::identity(2, 2),
        entry.span.1,
    )
    .unwrap();
    let sol = riccati_with_jumps(&lin, &weights, &opts).unwrap();

    println!(
        "event at t = {:.6}, horizon {:.2}",
        sol.tau(),
        sol.horizon()
    );
    println!("P just after the event {:.6}", sol.p_plus_at_tau());
    println!(
        "P just before (congruence by I + H) {:.6}",
        sol.p_minus_at_tau()
    );
    println!("reset residual {:.2e}", sol.reset_residual());
    println!("gain left of the event  {:.6}", sol.gain(sol.tau() - 1e-9));
    println!("gain right of the event {:.6}", sol.gain(sol.tau()));

    let z0 = DVector::from_vec(vec![0.6, -0.8]);
    let predicted = sol.value(&z0);
    let simulated = lqr_cost(&lin, &weights, &z0, LinearPolicy::Feedback(&sol), &opts).unwrap();
    println!("\nvalue check for z0 = ({}, {}):", z0[0], z0[1]);
    println!("  half z0' P(t0) z0      = {predicted:.9}");
    println!("  simulated feedback cost = {simulated:.9}");
    println!(
        "  relative error {:.2e}",
        (predicted - simulated).abs() / predicted
    );
}
