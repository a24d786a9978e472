//! Sweep the perturbation size over three decades and confirm that the
//! first-order prediction errs at second order, in the state sup-norm and
//! in the event time alike.
//!
//! Run with: cargo run --example convergence_study

use nalgebra::DVector;
use saltation::{
    bouncing_ball, convergence_study, linearize, propagate_linearization, simulate, InputSignal,
    IntegrationOptions,
};

fn main() {
    let entry = bouncing_ball(9.81, 0.5, DVector::from_vec(vec![1.0, 0.0]), (0.0, 0.8)).unwrap();
    let opts = IntegrationOptions::default();
    let traj = simulate(&entry.system, &entry.x0, &entry.input, entry.span, &opts).unwrap();
    let lin = linearize(&entry.system, &traj, &entry.input, &opts).unwrap();
    let z0 = DVector::from_vec(vec![1.0, 0.0]);
    let v = InputSignal::zero(1);
    let lt = propagate_linearization(&lin, &z0, &v, &opts).unwrap();

    let ladder = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4];
    let study = convergence_study(&entry.system, &entry.input, &traj, &lt, &ladder, &opts).unwrap();

    println!("  eps        state error   event-time error");
    for row in &study.rows {
        println!(
            "  {:>8.1e}   {:>11.3e}   {:>11.3e}",
            row.eps,
            row.state_error,
            row.event_time_error.unwrap()
        );
    }
    println!("\nleast-squares log-log slopes:");
    println!("  state      {:.3}", study.state_fit_slope.unwrap());
    println!("  event time {:.3}", study.event_time_fit_slope.unwrap());
    println!("slopes of 2 mean the first-order prediction captures everything linear in eps");
}
