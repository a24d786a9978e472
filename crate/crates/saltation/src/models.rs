use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::signal::InputSignal;
use crate::system::HybridSystem;

/// Analytic facts a model can supply about its nominal trajectory, used to
/// cross-check the numerical pipeline. Entries are filled only when a
/// closed form exists.
#[derive(Clone, Debug, Default)]
pub struct ClosedForms {
    /// First guard crossing of the ante flow (absolute time), whether or
    /// not it lies inside the nominal span.
    pub event_time: Option<f64>,
    /// State immediately before the crossing.
    pub pre_event_state: Option<DVector<f64>>,
    /// The perturbation transfer matrix I + H at the crossing.
    pub transfer: Option<DMatrix<f64>>,
}

/// A ready-to-run benchmark: system, nominal initial state, nominal input,
/// and time span, plus whatever closed forms the model knows about itself.
#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub system: HybridSystem,
    pub x0: DVector<f64>,
    pub input: InputSignal,
    pub span: (f64, f64),
    pub facts: ClosedForms,
}

fn validate_span(span: (f64, f64)) -> Result<()> {
    if !(span.0 < span.1) {
        return Err(Error::InvalidArgument(format!(
            "span ({}, {}) must be increasing",
            span.0, span.1
        )));
    }
    Ok(())
}

/// Ball with state (height, velocity) under gravity, a vertical thrust
/// input, an impact when the height reaches zero, and a restitution-law
/// velocity reversal. Flow is the same before and after impact:
/// h' = v, v' = -gravity + u. All Jacobians are analytic.
pub fn bouncing_ball(
    gravity: f64,
    restitution: f64,
    x0: DVector<f64>,
    span: (f64, f64),
) -> Result<CatalogEntry> {
    if !(gravity > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gravity {gravity} must be positive"
        )));
    }
    if !(restitution > 0.0 && restitution <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "restitution {restitution} must lie in (0, 1]"
        )));
    }
    if x0.len() != 2 {
        return Err(Error::DimensionMismatch {
            context: "bouncing ball initial state",
            expected: 2,
            actual: x0.len(),
        });
    }
    validate_span(span)?;

    let g = gravity;
    let e = restitution;
    let field =
        move |x: &DVector<f64>, u: &DVector<f64>, _t: f64| DVector::from_vec(vec![x[1], -g + u[0]]);
    let system = HybridSystem::builder(2, 1)
        .f_ante(field)
        .guard(|x: &DVector<f64>, _t| x[0])
        .impulse(move |x: &DVector<f64>, _t| DVector::from_vec(vec![0.0, -(1.0 + e) * x[1]]))
        .d1_f_ante(|_x, _u, _t| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]))
        .d2_f_ante(|_x, _u, _t| DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
        .d1_guard(|_x, _t| DVector::from_vec(vec![1.0, 0.0]))
        .d2_guard(|_x, _t| 0.0)
        .d1_impulse(move |_x, _t| DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -(1.0 + e)]))
        .d2_impulse(|_x, _t| DVector::from_vec(vec![0.0, 0.0]))
        .build()?;

    // Free-fall crossing of h(t) = h0 + v0 t - g t^2 / 2, valid for the
    // unforced nominal input.
    let (h0, v0) = (x0[0], x0[1]);
    let disc = v0 * v0 + 2.0 * g * h0;
    let mut facts = ClosedForms::default();
    if disc > 0.0 {
        let tau_rel = (v0 + disc.sqrt()) / g;
        if tau_rel > 0.0 {
            let v_minus = -disc.sqrt();
            facts.event_time = Some(span.0 + tau_rel);
            facts.pre_event_state = Some(DVector::from_vec(vec![0.0, v_minus]));
            facts.transfer = Some(DMatrix::from_row_slice(
                2,
                2,
                &[-e, 0.0, -(1.0 + e) * g / v_minus, -e],
            ));
        }
    }

    Ok(CatalogEntry {
        name: "bouncing_ball",
        system,
        x0,
        input: InputSignal::zero(1),
        span,
        facts,
    })
}

/// Piecewise-linear system x' = A1 x + B1 u before the hyperplane
/// normal . x = offset is reached and x' = A2 x + B2 u after, with a
/// continuous state (zero impulse). The jump gain then comes purely from
/// the field switch.
#[allow(clippy::too_many_arguments)]
pub fn switched_linear(
    a_ante: DMatrix<f64>,
    b_ante: DMatrix<f64>,
    a_post: DMatrix<f64>,
    b_post: DMatrix<f64>,
    normal: DVector<f64>,
    offset: f64,
    x0: DVector<f64>,
    span: (f64, f64),
) -> Result<CatalogEntry> {
    let n = a_ante.nrows();
    let m = b_ante.ncols();
    for (name, rows, cols, expected) in [
        ("A_ante", a_ante.nrows(), a_ante.ncols(), (n, n)),
        ("A_post", a_post.nrows(), a_post.ncols(), (n, n)),
        ("B_ante", b_ante.nrows(), b_ante.ncols(), (n, m)),
        ("B_post", b_post.nrows(), b_post.ncols(), (n, m)),
    ] {
        if (rows, cols) != expected {
            return Err(Error::InvalidArgument(format!(
                "{name} must be {}x{}, got {rows}x{cols}",
                expected.0, expected.1
            )));
        }
    }
    if normal.len() != n || x0.len() != n {
        return Err(Error::DimensionMismatch {
            context: "switched linear state dimension",
            expected: n,
            actual: normal.len().max(x0.len()),
        });
    }
    validate_span(span)?;

    let (a1, b1) = (Arc::new(a_ante), Arc::new(b_ante));
    let (a2, b2) = (Arc::new(a_post), Arc::new(b_post));
    let nrm = Arc::new(normal);
    let (a1f, b1f, a1j, b1j) = (a1.clone(), b1.clone(), a1.clone(), b1.clone());
    let (a2f, b2f, a2j, b2j) = (a2.clone(), b2.clone(), a2.clone(), b2.clone());
    let (ng, nj) = (nrm.clone(), nrm.clone());

    let system = HybridSystem::builder(n, m)
        .f_ante(move |x, u, _t| &*a1f * x + &*b1f * u)
        .f_post(move |x, u, _t| &*a2f * x + &*b2f * u)
        .guard(move |x, _t| ng.dot(x) - offset)
        .impulse(move |x, _t| DVector::zeros(x.len()))
        .d1_f_ante(move |_x, _u, _t| (*a1j).clone())
        .d2_f_ante(move |_x, _u, _t| (*b1j).clone())
        .d1_f_post(move |_x, _u, _t| (*a2j).clone())
        .d2_f_post(move |_x, _u, _t| (*b2j).clone())
        .d1_guard(move |_x, _t| (*nj).clone())
        .d2_guard(|_x, _t| 0.0)
        .d1_impulse(move |x, _t| DMatrix::zeros(x.len(), x.len()))
        .d2_impulse(move |x, _t| DVector::zeros(x.len()))
        .build()?;

    Ok(CatalogEntry {
        name: "switched_linear",
        system,
        x0,
        input: InputSignal::zero(m),
        span,
        facts: ClosedForms::default(),
    })
}

/// Ball impacting a moving wall: the guard is height minus the wall
/// position w(t) and the restitution law acts on the relative velocity
/// v - w'(t). `wall_rate` must be the exact time derivative of `wall`;
/// it enters the guard's time derivative and the impulse.
pub fn moving_wall_ball(
    gravity: f64,
    restitution: f64,
    wall: impl Fn(f64) -> f64 + Send + Sync + 'static,
    wall_rate: impl Fn(f64) -> f64 + Send + Sync + 'static,
    x0: DVector<f64>,
    span: (f64, f64),
) -> Result<CatalogEntry> {
    if !(gravity > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gravity {gravity} must be positive"
        )));
    }
    if !(restitution > 0.0 && restitution <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "restitution {restitution} must lie in (0, 1]"
        )));
    }
    if x0.len() != 2 {
        return Err(Error::DimensionMismatch {
            context: "moving wall initial state",
            expected: 2,
            actual: x0.len(),
        });
    }
    validate_span(span)?;

    let g = gravity;
    let e = restitution;
    let wall = Arc::new(wall);
    let rate = Arc::new(wall_rate);
    let (w_g, r_i, r_g) = (wall.clone(), rate.clone(), rate.clone());

    let system = HybridSystem::builder(2, 1)
        .f_ante(move |x: &DVector<f64>, u: &DVector<f64>, _t| {
            DVector::from_vec(vec![x[1], -g + u[0]])
        })
        .guard(move |x: &DVector<f64>, t| x[0] - w_g(t))
        .impulse(move |x: &DVector<f64>, t| {
            DVector::from_vec(vec![0.0, -(1.0 + e) * (x[1] - r_i(t))])
        })
        .d1_f_ante(|_x, _u, _t| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]))
        .d2_f_ante(|_x, _u, _t| DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
        .d1_guard(|_x, _t| DVector::from_vec(vec![1.0, 0.0]))
        .d2_guard(move |_x, t| -r_g(t))
        .d1_impulse(move |_x, _t| DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -(1.0 + e)]))
        .build()?;

    Ok(CatalogEntry {
        name: "moving_wall_ball",
        system,
        x0,
        input: InputSignal::zero(1),
        span,
        facts: ClosedForms::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{simulate, IntegrationOptions};
    use crate::oracle::{bisect, fd_sensitivity};
    use crate::sensitivity::{event_data, jump_gain, linearize, propagate_linearization};

    const GRAVITY: f64 = 9.81;

    #[test]
    fn ball_facts_match_the_simulated_event() {
        let entry =
            bouncing_ball(GRAVITY, 0.5, DVector::from_vec(vec![1.0, 0.0]), (0.0, 0.8)).unwrap();
        let opts = IntegrationOptions::default();
        let traj = simulate(&entry.system, &entry.x0, &entry.input, entry.span, &opts).unwrap();
        let ev = traj.event().expect("ball must impact");
        let tau_fact = entry.facts.event_time.unwrap();
        println!("event at {:.12}, closed form {:.12}", ev.time, tau_fact);
        assert!((ev.time - tau_fact).abs() <= 1e-10);
        let pre = entry.facts.pre_event_state.as_ref().unwrap();
        assert!((&ev.pre_state - pre).amax() <= 1e-9);

        let data = event_data(&entry.system, &traj, &entry.input, &opts).unwrap();
        let gain = jump_gain(&data, opts.transversality_tolerance).unwrap();
        let transfer = DMatrix::identity(2, 2) + &gain;
        let fact = entry.facts.transfer.as_ref().unwrap();
        println!("transfer {transfer:.6}, closed form {fact:.6}");
        assert!((&transfer - fact).amax() <= 1e-9);
    }

    #[test]
    fn ball_thrown_upward_finds_the_later_drop() {
        let v0 = 2.0;
        let entry =
            bouncing_ball(GRAVITY, 1.0, DVector::from_vec(vec![1.0, v0]), (0.0, 1.2)).unwrap();
        let expected = (v0 + (v0 * v0 + 2.0 * GRAVITY).sqrt()) / GRAVITY;
        assert!((entry.facts.event_time.unwrap() - expected).abs() <= 1e-14);
        let opts = IntegrationOptions::default();
        let traj = simulate(&entry.system, &entry.x0, &entry.input, entry.span, &opts).unwrap();
        assert!((traj.event().unwrap().time - expected).abs() <= 1e-10);
    }

    #[test]
    fn ball_facts_are_absent_without_a_crossing_ahead() {
        // Starting below the floor and falling, the guard never crosses
        // zero again.
        let entry =
            bouncing_ball(GRAVITY, 0.5, DVector::from_vec(vec![-1.0, 0.0]), (0.0, 0.1)).unwrap();
        assert!(entry.facts.event_time.is_none());
        assert!(entry.facts.transfer.is_none());
    }

    #[test]
    fn ball_constructor_rejects_bad_parameters() {
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        assert!(bouncing_ball(0.0, 0.5, x0.clone(), (0.0, 1.0)).is_err());
        assert!(bouncing_ball(GRAVITY, 0.0, x0.clone(), (0.0, 1.0)).is_err());
        assert!(bouncing_ball(GRAVITY, 1.2, x0.clone(), (0.0, 1.0)).is_err());
        assert!(bouncing_ball(GRAVITY, 0.5, DVector::zeros(3), (0.0, 1.0)).is_err());
        assert!(bouncing_ball(GRAVITY, 0.5, x0, (1.0, 1.0)).is_err());
    }

    #[test]
    fn rotation_switch_reproduces_the_rank_one_gain() {
        // Circular rotation until the state crosses the vertical axis,
        // then extra damping d on the second row. The crossing happens a
        // quarter turn after (-1, 0) and the gain is (f_post - f_ante)
        // times the unit normal.
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
        let opts = IntegrationOptions::default();
        let traj = simulate(&entry.system, &entry.x0, &entry.input, entry.span, &opts).unwrap();
        let ev = traj.event().unwrap();
        println!(
            "rotation event at {:.9}, expected {:.9}",
            ev.time,
            std::f64::consts::FRAC_PI_2
        );
        assert!((ev.time - std::f64::consts::FRAC_PI_2).abs() <= 1e-9);
        assert!(
            (&ev.post_state - &ev.pre_state).amax() == 0.0,
            "zero impulse keeps the state continuous"
        );

        let data = event_data(&entry.system, &traj, &entry.input, &opts).unwrap();
        let gain = jump_gain(&data, opts.transversality_tolerance).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, -d * ev.pre_state[1], 0.0]);
        println!("gain {gain:.6}, expected {expected:.6}");
        assert!((&gain - &expected).amax() <= 1e-8);
    }

    #[test]
    fn switched_linear_validates_shapes() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::zeros(2, 1);
        let bad = switched_linear(
            a.clone(),
            b.clone(),
            DMatrix::identity(3, 3),
            b.clone(),
            DVector::from_vec(vec![1.0, 0.0]),
            0.0,
            DVector::zeros(2),
            (0.0, 1.0),
        );
        assert!(bad.is_err());
        let bad = switched_linear(
            a,
            b.clone(),
            DMatrix::identity(2, 2),
            b,
            DVector::from_vec(vec![1.0]),
            0.0,
            DVector::zeros(2),
            (0.0, 1.0),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn still_wall_reduces_to_the_fixed_floor_ball() {
        // A wall frozen at height 0.25 only shifts the impact; the gain
        // formula is the fixed-floor one evaluated at the wall crossing.
        let e = 0.8;
        let entry = moving_wall_ball(
            GRAVITY,
            e,
            |_t| 0.25,
            |_t| 0.0,
            DVector::from_vec(vec![1.0, 0.0]),
            (0.0, 0.7),
        )
        .unwrap();
        let opts = IntegrationOptions::default();
        let traj = simulate(&entry.system, &entry.x0, &entry.input, entry.span, &opts).unwrap();
        let ev = traj.event().unwrap();
        let tau = (2.0 * (1.0 - 0.25) / GRAVITY).sqrt();
        assert!((ev.time - tau).abs() <= 1e-10);
        let v_minus = -GRAVITY * tau;
        assert!((ev.pre_state[1] - v_minus).abs() <= 1e-9);

        let data = event_data(&entry.system, &traj, &entry.input, &opts).unwrap();
        let gain = jump_gain(&data, opts.transversality_tolerance).unwrap();
        let transfer = DMatrix::identity(2, 2) + &gain;
        let expected =
            DMatrix::from_row_slice(2, 2, &[-e, 0.0, -(1.0 + e) * GRAVITY / v_minus, -e]);
        println!("still wall transfer {transfer:.6}, expected {expected:.6}");
        assert!((&transfer - &expected).amax() <= 1e-8);
    }

    #[test]
    fn moving_wall_event_obeys_the_relative_restitution_law() {
        let e = 0.5;
        let wall = |t: f64| 0.1 + 0.05 * (3.0 * t).sin();
        let rate = |t: f64| 0.15 * (3.0 * t).cos();
        let entry = moving_wall_ball(
            GRAVITY,
            e,
            wall,
            rate,
            DVector::from_vec(vec![1.0, 0.0]),
            (0.0, 0.8),
        )
        .unwrap();
        let opts = IntegrationOptions::default();
        let traj = simulate(&entry.system, &entry.x0, &entry.input, entry.span, &opts).unwrap();
        let ev = traj.event().unwrap();

        // Free fall meets the wall where 1 - g t^2 / 2 = w(t).
        let crossing = |t: f64| 1.0 - 0.5 * GRAVITY * t * t - wall(t);
        let tau = bisect(&crossing, 0.05, 0.7, 1e-14).unwrap();
        println!(
            "impact at {:.12}, root of the closed form {:.12}",
            ev.time, tau
        );
        assert!((ev.time - tau).abs() <= 1e-9);

        let w_rate = rate(ev.time);
        let rel_pre = ev.pre_state[1] - w_rate;
        let rel_post = ev.post_state[1] - w_rate;
        println!("relative velocity {rel_pre:.6} -> {rel_post:.6}");
        assert!((rel_post + e * rel_pre).abs() <= 1e-10);

        // The guard rate seen by the gain formula is the relative speed.
        let data = event_data(&entry.system, &traj, &entry.input, &opts).unwrap();
        assert!((data.g_dot - rel_pre).abs() <= 1e-9);
    }

    #[test]
    fn moving_wall_sensitivity_agrees_with_finite_differences() {
        let entry = moving_wall_ball(
            GRAVITY,
            0.5,
            |t: f64| 0.1 + 0.05 * (3.0 * t).sin(),
            |t: f64| 0.15 * (3.0 * t).cos(),
            DVector::from_vec(vec![1.0, 0.0]),
            (0.0, 0.8),
        )
        .unwrap();
        let opts = IntegrationOptions::default();
        let traj = simulate(&entry.system, &entry.x0, &entry.input, entry.span, &opts).unwrap();
        let lin = linearize(&entry.system, &traj, &entry.input, &opts).unwrap();
        let z0 = DVector::from_vec(vec![1.0, -0.5]);
        let v = InputSignal::zero(1);
        let lt = propagate_linearization(&lin, &z0, &v, &opts).unwrap();

        let probe = fd_sensitivity(
            &entry.system,
            &entry.x0,
            &entry.input,
            entry.span,
            &z0,
            &v,
            1e-5,
            &opts,
        )
        .unwrap();
        let t1 = entry.span.1;
        let z_lin = lt.z_post.as_ref().unwrap().eval(t1);
        let z_fd = probe.direction(t1).expect("t1 lies outside the event band");
        let rel = (&z_lin - &z_fd).amax() / z_fd.amax();
        println!("moving wall z({t1}) = {z_lin:.6}, fd {z_fd:.6}, rel {rel:.3e}");
        assert!(rel <= 1e-3);
        let fd_rate = probe.event_time_derivative.unwrap();
        println!("tau' = {:.8}, fd {:.8}", lt.tau_prime.unwrap(), fd_rate);
        assert!((lt.tau_prime.unwrap() - fd_rate).abs() <= 1e-4);
    }
}
