//! Compute the jump gain H for two canonical events and compare with the
//! hand-derived closed forms. The matrix I + H transfers a first-order
//! perturbation across the event.
//!
//! Run with: cargo run --example jump_gain

use nalgebra::{DMatrix, DVector};
use saltation::{
    bouncing_ball, event_data, jump_gain, simulate, switched_linear, IntegrationOptions,
};

fn main() {
    let opts = IntegrationOptions::default();

    // Impact with a velocity reversal: state jumps, field does not.
    let e = 0.5;
    let entry = bouncing_ball(9.81, e, DVector::from_vec(vec![1.0, 0.0]), (0.0, 0.8)).unwrap();
    let traj = simulate(&entry.system, &entry.x0, &entry.input, entry.span, &opts).unwrap();
    let data = event_data(&entry.system, &traj, &entry.input, &opts).unwrap();
    let gain = jump_gain(&data, opts.transversality_tolerance).unwrap();
    let transfer = DMatrix::identity(2, 2) + &gain;
    println!("bouncing ball (e = {e}):");
    println!("  jump gain H {gain:.6}");
    println!("  transfer I + H {transfer:.6}");
    let v_minus = data.x_minus[1];
    let closed = DMatrix::from_row_slice(2, 2, &[-e, 0.0, -(1.0 + e) * 9.81 / v_minus, -e]);
    println!("  closed form {closed:.6}");
    println!("  deviation {:.2e}", (&transfer - closed).amax());

    // Field switch with a continuous state: H is rank one, built from the
    // field mismatch and the guard normal.
    let d = 0.7;
    let a1 = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
    let a2 = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, -d]);
    let b = DMatrix::zeros(2, 1);
    let entry = switched_linear(
        a1,
        b.clone(),
        a2,
        b,
        DVector::from_vec(vec![1.0, 0.0]),
        0.0,
        DVector::from_vec(vec![-1.0, 0.0]),
        (0.0, 2.5),
    )
    .unwrap();
    let traj = simulate(&entry.system, &entry.x0, &entry.input, entry.span, &opts).unwrap();
    let data = event_data(&entry.system, &traj, &entry.input, &opts).unwrap();
    let gain = jump_gain(&data, opts.transversality_tolerance).unwrap();
    println!("\nswitched rotation (extra damping {d}):");
    println!("  event at t = {:.6} (quarter turn)", data.tau);
    println!("  jump gain H {gain:.6}");
    let closed = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, d, 0.0]);
    println!("  closed form {closed:.6}");
    println!("  deviation {:.2e}", (&gain - closed).amax());
}
