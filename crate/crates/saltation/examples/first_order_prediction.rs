//! Predict a perturbed hybrid trajectory to first order: flow the
//! perturbation through both phases, transfer it across the event with
//! I + H, and shift the switching time by eps tau'. Compare against the
//! fully re-simulated perturbed plant.
//!
//! Run with: cargo run --example first_order_prediction

use nalgebra::DVector;
use saltation::{
    approximate, bouncing_ball, linearize, propagate_linearization, simulate, InputSignal,
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
    let tau = traj.event().unwrap().time;
    println!(
        "nominal impact at {tau:.6}, sensitivity tau' = {:.6}",
        lt.tau_prime.unwrap()
    );

    let eps = 1e-2;
    let pred = approximate(&traj, &lt, eps);
    println!(
        "perturbing the drop height by {eps}: predicted impact at {:.6}",
        pred.switch_time.unwrap()
    );

    let x0_eps = &entry.x0 + &z0 * eps;
    let ptraj = simulate(&entry.system, &x0_eps, &entry.input, entry.span, &opts).unwrap();
    let true_tau = ptraj.event().unwrap().time;
    println!(
        "re-simulated impact at {true_tau:.6} (prediction off by {:.2e})",
        (true_tau - pred.switch_time.unwrap()).abs()
    );

    println!("\n  t      truth                predicted            error");
    for i in 0..=8 {
        let t = 0.1 * i as f64;
        let truth = ptraj.eval(t);
        let approx = pred.eval(t);
        println!(
            "  {t:.2}   ({:>8.5}, {:>8.5})   ({:>8.5}, {:>8.5})   {:.2e}",
            truth[0],
            truth[1],
            approx[0],
            approx[1],
            (&truth - &approx).norm()
        );
    }
    println!("\nthe error is O(eps^2) everywhere once the predicted switch uses tau + eps tau'");
}
