//! Simulate a bouncing ball through its first impact and print the event
//! record along with a few glued trajectory samples.
//!
//! Run with: cargo run --example simulate_ball

use nalgebra::DVector;
use saltation::{bouncing_ball, simulate, IntegrationOptions};

fn main() {
    let entry = bouncing_ball(9.81, 0.5, DVector::from_vec(vec![1.0, 0.0]), (0.0, 0.8)).unwrap();
    let opts = IntegrationOptions::default();
    let traj = simulate(&entry.system, &entry.x0, &entry.input, entry.span, &opts).unwrap();

    let ev = traj.event().expect("the ball impacts inside the span");
    println!("impact at t = {:.6}", ev.time);
    println!(
        "  state before: ({:.6}, {:.6})",
        ev.pre_state[0], ev.pre_state[1]
    );
    println!(
        "  state after:  ({:.6}, {:.6})",
        ev.post_state[0], ev.post_state[1]
    );
    println!(
        "  guard rate {:.4}, residual {:.2e}",
        ev.guard_rate, ev.guard_residual
    );

    let closed = entry.facts.event_time.unwrap();
    println!(
        "closed-form impact time {closed:.6} (difference {:.2e})",
        (ev.time - closed).abs()
    );

    println!("\n  t       height     velocity   branch");
    for i in 0..=8 {
        let t = 0.1 * i as f64;
        let x = traj.eval(t);
        println!(
            "  {t:.2}   {:>9.5}  {:>9.5}   {:?}",
            x[0],
            x[1],
            traj.branch_at(t)
        );
    }
}
