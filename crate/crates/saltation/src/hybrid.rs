use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::ode::{rk4_integrate, DenseSegment};
use crate::signal::InputSignal;
use crate::system::HybridSystem;

/// Tolerances and step count for fixed-step integration and event location.
#[derive(Clone, Debug)]
pub struct IntegrationOptions {
    /// Number of fixed Runge-Kutta steps over the simulation span.
    pub steps: usize,
    /// Bound on |guard| at a located event.
    pub event_tolerance: f64,
    /// Width to which the event time is bracketed.
    pub time_tolerance: f64,
    /// Lower bound on |dg/dt| at the event; below it the crossing is
    /// rejected as grazing.
    pub transversality_tolerance: f64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            event_tolerance: 1e-10,
            time_tolerance: 1e-12,
            transversality_tolerance: 1e-8,
        }
    }
}

impl IntegrationOptions {
    pub fn step_size(&self, span: (f64, f64)) -> f64 {
        (span.1 - span.0).abs() / self.steps.max(1) as f64
    }
}

/// Which vector field a segment follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Ante,
    Post,
}

/// Direction of a segment extension away from its anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// A located guard crossing.
#[derive(Clone, Debug)]
pub struct EventRecord {
    /// Event time tau.
    pub time: f64,
    /// State just before the jump, on the guard surface.
    pub pre_state: DVector<f64>,
    /// State just after the jump: pre_state + impulse.
    pub post_state: DVector<f64>,
    /// Total guard rate dg/dt along the ante flow at the event. Its sign is
    /// the crossing direction.
    pub guard_rate: f64,
    /// Guard residual at the located event time.
    pub guard_residual: f64,
}

/// A simulated trajectory with one state-triggered jump.
///
/// `ante_ext` follows the ante field over the whole span, continuing past
/// the event; `post_ext` follows the post field over the whole span,
/// extended backward from the post-jump state. The physical trajectory is
/// the right-continuous concatenation exposed by `eval`.
#[derive(Clone, Debug)]
pub struct HybridTrajectory {
    span: (f64, f64),
    ante_ext: DenseSegment,
    post_ext: Option<DenseSegment>,
    event: Option<EventRecord>,
}

impl HybridTrajectory {
    pub fn span(&self) -> (f64, f64) {
        self.span
    }

    /// The accepted integration knot times of the ante sweep.
    pub fn grid(&self) -> &[f64] {
        self.ante_ext.times()
    }

    pub fn event(&self) -> Option<&EventRecord> {
        self.event.as_ref()
    }

    pub fn event_found(&self) -> bool {
        self.event.is_some()
    }

    /// The ante-field trajectory extended over the whole span.
    pub fn ante_ext(&self) -> &DenseSegment {
        &self.ante_ext
    }

    /// The post-field trajectory extended over the whole span; absent when
    /// no event was found.
    pub fn post_ext(&self) -> Option<&DenseSegment> {
        self.post_ext.as_ref()
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        self.ante_ext.first_state()
    }

    /// The glued trajectory: ante branch before the event, post branch from
    /// the event time on (right-continuous at the jump).
    pub fn eval(&self, t: f64) -> DVector<f64> {
        match (&self.event, &self.post_ext) {
            (Some(ev), Some(post)) if t >= ev.time => post.eval(t),
            _ => self.ante_ext.eval(t),
        }
    }

    /// Branch active at time t under the gluing convention.
    pub fn branch_at(&self, t: f64) -> Branch {
        match &self.event {
            Some(ev) if t >= ev.time => Branch::Post,
            _ => Branch::Ante,
        }
    }
}

/// A root of the guard along a dense segment.
#[derive(Clone, Debug)]
pub struct LocatedRoot {
    pub time: f64,
    pub state: DVector<f64>,
    pub guard_value: f64,
}

/// Finds a zero of `guard` along `segment` inside `bracket`, assuming
/// opposite guard signs at the bracket ends. Regula falsi with an Illinois
/// weight and a periodic bisection fallback, run until the bracket is
/// narrower than `time_tolerance`.
pub fn locate_event(
    segment: &DenseSegment,
    guard: impl Fn(&DVector<f64>, f64) -> f64,
    bracket: (f64, f64),
    time_tolerance: f64,
) -> Result<LocatedRoot> {
    let phi = |t: f64| guard(&segment.eval(t), t);
    let (mut a, mut b) = bracket;
    if !(a < b) {
        return Err(Error::InvalidArgument(
            "event bracket must satisfy left < right".into(),
        ));
    }
    let mut fa = phi(a);
    let mut fb = phi(b);
    let root_at = |t: f64, g: f64| LocatedRoot {
        time: t,
        state: segment.eval(t),
        guard_value: g,
    };
    if fa == 0.0 {
        return Ok(root_at(a, fa));
    }
    if fb == 0.0 {
        return Ok(root_at(b, fb));
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoSignChange { left: a, right: b });
    }

    let mut last_side = 0i8;
    for iter in 0..200 {
        if b - a <= time_tolerance {
            break;
        }
        // Regula falsi candidate, replaced by the midpoint when it is
        // degenerate or every fourth iteration as a safeguard.
        let mut c = b - fb * (b - a) / (fb - fa);
        if !c.is_finite() || c <= a || c >= b || iter % 4 == 3 {
            c = 0.5 * (a + b);
        }
        let fc = phi(c);
        if fc == 0.0 {
            return Ok(root_at(c, fc));
        }
        if fc.signum() == fa.signum() {
            a = c;
            fa = fc;
            if last_side == -1 {
                fb *= 0.5;
            }
            last_side = -1;
        } else {
            b = c;
            fb = fc;
            if last_side == 1 {
                fa *= 0.5;
            }
            last_side = 1;
        }
    }
    let (t, g) = if fa.abs() <= fb.abs() {
        (a, fa)
    } else {
        (b, fb)
    };
    Ok(root_at(t, g))
}

/// Total guard rate dg/dt = D1g . f_ante + D2g at (x, u, t). The event
/// machinery requires this to be bounded away from zero at crossings.
pub fn transversality_check(sys: &HybridSystem, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> f64 {
    let f = sys.f_ante(x, u, t);
    sys.d1_guard(x, t).dot(&f) + sys.d2_guard(x, t)
}

/// Integrates the selected vector field from an anchor point over one side
/// of `span`. `Forward` covers [anchor_time, span.1], `Backward` covers
/// [span.0, anchor_time]. Guard crossings are deliberately ignored: this is
/// the extension primitive.
#[allow(clippy::too_many_arguments)]
pub fn extend_segment(
    sys: &HybridSystem,
    anchor_state: &DVector<f64>,
    anchor_time: f64,
    input: &InputSignal,
    span: (f64, f64),
    direction: Direction,
    branch: Branch,
    opts: &IntegrationOptions,
) -> Result<DenseSegment> {
    if !(span.0 <= anchor_time && anchor_time <= span.1) {
        return Err(Error::InvalidArgument(format!(
            "anchor time {anchor_time} lies outside the span [{}, {}]",
            span.0, span.1
        )));
    }
    sys.validate_at(anchor_state, &input.eval(anchor_time), anchor_time)?;
    let target = match direction {
        Direction::Forward => span.1,
        Direction::Backward => span.0,
    };
    let h = opts.step_size(span).max(f64::MIN_POSITIVE);
    match branch {
        Branch::Ante => rk4_integrate(
            &|x, t| sys.f_ante(x, &input.eval(t), t),
            anchor_state,
            anchor_time,
            target,
            h,
        ),
        Branch::Post => rk4_integrate(
            &|x, t| sys.f_post(x, &input.eval(t), t),
            anchor_state,
            anchor_time,
            target,
            h,
        ),
    }
}

/// Simulates the hybrid system over `span` from `x0`, honoring the first
/// transversal guard crossing: flow by the ante field, jump by the impulse,
/// flow by the post field. Both the ante and post trajectories are extended
/// over the whole span. Only the first crossing is acted on; later sign
/// changes of the guard are ignored.
pub fn simulate(
    sys: &HybridSystem,
    x0: &DVector<f64>,
    input: &InputSignal,
    span: (f64, f64),
    opts: &IntegrationOptions,
) -> Result<HybridTrajectory> {
    let (t0, t1) = span;
    if !(t0 < t1) {
        return Err(Error::InvalidArgument("span must satisfy t0 < t1".into()));
    }
    if input.dim() != sys.n_input() {
        return Err(Error::DimensionMismatch {
            context: "input signal dimension",
            expected: sys.n_input(),
            actual: input.dim(),
        });
    }
    sys.validate_at(x0, &input.eval(t0), t0)?;
    if sys.guard(x0, t0) == 0.0 {
        return Err(Error::InvalidArgument(
            "initial state lies exactly on the guard surface".into(),
        ));
    }

    let h = opts.step_size(span);
    let mu = input.clone();
    let sys_a = sys.clone();
    let f_ante = move |x: &DVector<f64>, t: f64| sys_a.f_ante(x, &mu.eval(t), t);
    let ante_ext = rk4_integrate(&f_ante, x0, t0, t1, h)?;

    // First sign change of the guard between accepted knots, either
    // direction. An exact zero at a knot is taken as the event time.
    let g_values: Vec<f64> = ante_ext
        .times()
        .iter()
        .zip(ante_ext.states())
        .map(|(&t, x)| sys.guard(x, t))
        .collect();
    let mut crossing = None;
    for k in 0..g_values.len() - 1 {
        if g_values[k + 1] == 0.0 && k + 2 < g_values.len() {
            // Zero exactly at an interior knot.
            crossing = Some((k, true));
            break;
        }
        if g_values[k].signum() != g_values[k + 1].signum() {
            crossing = Some((k, false));
            break;
        }
    }

    let root = match crossing {
        None => {
            return Ok(HybridTrajectory {
                span,
                ante_ext,
                post_ext: None,
                event: None,
            });
        }
        Some((k, exact_at_knot)) => {
            if exact_at_knot {
                let t = ante_ext.times()[k + 1];
                LocatedRoot {
                    time: t,
                    state: ante_ext.states()[k + 1].clone(),
                    guard_value: 0.0,
                }
            } else {
                let bracket = (ante_ext.times()[k], ante_ext.times()[k + 1]);
                locate_event(
                    &ante_ext,
                    |x, t| sys.guard(x, t),
                    bracket,
                    opts.time_tolerance,
                )?
            }
        }
    };

    let tau = root.time;
    let x_minus = root.state;
    if root.guard_value.abs() > opts.event_tolerance {
        return Err(Error::EventResidual {
            time: tau,
            residual: root.guard_value.abs(),
            tolerance: opts.event_tolerance,
        });
    }
    let u_tau = input.eval(tau);
    let guard_rate = transversality_check(sys, &x_minus, &u_tau, tau);
    if guard_rate.abs() <= opts.transversality_tolerance {
        return Err(Error::GrazingEvent {
            time: tau,
            rate: guard_rate.abs(),
            tolerance: opts.transversality_tolerance,
        });
    }

    let x_plus = &x_minus + sys.impulse(&x_minus, tau);
    let mu_p = input.clone();
    let sys_p = sys.clone();
    let f_post = move |x: &DVector<f64>, t: f64| sys_p.f_post(x, &mu_p.eval(t), t);
    let back = rk4_integrate(&f_post, &x_plus, tau, t0, h)?;
    let fwd = rk4_integrate(&f_post, &x_plus, tau, t1, h)?;
    let post_ext = DenseSegment::stitch(back, fwd)?;

    Ok(HybridTrajectory {
        span,
        ante_ext,
        post_ext: Some(post_ext),
        event: Some(EventRecord {
            time: tau,
            pre_state: x_minus,
            post_state: x_plus,
            guard_rate,
            guard_residual: root.guard_value,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{bouncing_ball, CatalogEntry};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    const GRAVITY: f64 = 9.81;

    fn ball(restitution: f64) -> CatalogEntry {
        bouncing_ball(
            GRAVITY,
            restitution,
            DVector::from_vec(vec![1.0, 0.0]),
            (0.0, 0.8),
        )
        .unwrap()
    }

    fn run(entry: &CatalogEntry) -> HybridTrajectory {
        simulate(
            &entry.system,
            &entry.x0,
            &entry.input,
            entry.span,
            &IntegrationOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn ball_event_matches_closed_form() {
        let entry = ball(1.0);
        let traj = run(&entry);
        let ev = traj.event().expect("drop from 1 m must hit the floor");
        let tau = (2.0 / GRAVITY).sqrt();
        let v_minus = -(2.0 * GRAVITY).sqrt();
        println!("located event t = {:.15}, closed form {:.15}", ev.time, tau);
        assert!(
            (ev.time - tau).abs() <= 1e-10,
            "event time error {:.3e}",
            (ev.time - tau).abs()
        );
        assert!(
            ev.guard_residual.abs() <= 1e-10,
            "residual {:.3e}",
            ev.guard_residual
        );
        assert!(
            ev.pre_state[0].abs() <= 1e-9,
            "height at impact {:.3e}",
            ev.pre_state[0]
        );
        assert!(
            (ev.pre_state[1] - v_minus).abs() <= 1e-9,
            "impact velocity {:.3e}",
            ev.pre_state[1] - v_minus
        );
        assert!(
            (ev.post_state[1] + v_minus).abs() <= 1e-9,
            "unit restitution must reverse the velocity"
        );
        assert!(
            (ev.guard_rate - v_minus).abs() <= 1e-9,
            "guard rate must equal the impact velocity"
        );
    }

    #[test]
    fn glued_trajectory_is_right_continuous_at_the_event() {
        let entry = ball(0.5);
        let traj = run(&entry);
        let ev = traj.event().unwrap().clone();
        assert!((traj.eval(ev.time) - &ev.post_state).norm() <= 1e-14);
        assert_eq!(traj.branch_at(ev.time), Branch::Post);
        assert_eq!(traj.branch_at(ev.time - 1e-9), Branch::Ante);
        let just_before = traj.eval(ev.time - 1e-9);
        assert!(
            (just_before - &ev.pre_state).norm() <= 1e-6,
            "left limit must approach the pre-impact state"
        );
    }

    #[test]
    fn guard_without_zero_yields_smooth_trajectory() {
        let sys = HybridSystem::builder(1, 0)
            .f_ante(|x: &DVector<f64>, _u: &DVector<f64>, _t| -x.clone())
            .guard(|_x, _t| 1.0)
            .build()
            .unwrap();
        let traj = simulate(
            &sys,
            &DVector::from_vec(vec![1.0]),
            &InputSignal::zero(0),
            (0.0, 1.0),
            &IntegrationOptions::default(),
        )
        .unwrap();
        assert!(!traj.event_found());
        assert!(traj.post_ext().is_none());
        assert!(
            (traj.eval(1.0)[0] - (-1.0f64).exp()).abs() <= 1e-10,
            "smooth decay must match exp(-t)"
        );
    }

    #[test]
    fn time_triggered_guard_fires_at_its_zero() {
        // Pure time dependence: the guard rate comes entirely from D2 g.
        let sys = HybridSystem::builder(1, 0)
            .f_ante(|_x: &DVector<f64>, _u: &DVector<f64>, _t| DVector::from_vec(vec![0.0]))
            .guard(|_x, t| t - 0.3)
            .build()
            .unwrap();
        let traj = simulate(
            &sys,
            &DVector::from_vec(vec![2.0]),
            &InputSignal::zero(0),
            (0.0, 1.0),
            &IntegrationOptions::default(),
        )
        .unwrap();
        let ev = traj.event().unwrap();
        assert!((ev.time - 0.3).abs() <= 1e-10, "event time {:.15}", ev.time);
        assert!(
            (ev.guard_rate - 1.0).abs() <= 1e-6,
            "rate {:.3e}",
            ev.guard_rate
        );
        assert_eq!(
            ev.pre_state, ev.post_state,
            "default impulse must be the zero map"
        );
    }

    #[test]
    fn near_tangent_crossing_is_rejected_as_grazing() {
        // A drop from 1e-18 m hits with |dg/dt| about 4.4e-9, below the
        // 1e-8 transversality floor.
        let entry = bouncing_ball(
            GRAVITY,
            0.5,
            DVector::from_vec(vec![1e-18, 0.0]),
            (0.0, 0.8),
        )
        .unwrap();
        let err = simulate(
            &entry.system,
            &entry.x0,
            &entry.input,
            entry.span,
            &IntegrationOptions::default(),
        )
        .unwrap_err();
        match err {
            Error::GrazingEvent {
                rate, tolerance, ..
            } => {
                assert!(rate < tolerance);
            }
            other => panic!("expected a grazing rejection, got {other}"),
        }
    }

    #[test]
    fn post_extension_backward_matches_projectile_closed_form() {
        let entry = ball(1.0);
        let traj = run(&entry);
        let ev = traj.event().unwrap();
        let tau = ev.time;
        let v_plus = ev.post_state[1];

        // Closed form of the post branch h(t) = v+ (t - tau) - g (t - tau)^2 / 2
        // run backward to t = 0.
        let expected_h = v_plus * (0.0 - tau) - 0.5 * GRAVITY * (0.0 - tau).powi(2);
        let expected_v = v_plus + GRAVITY * tau;
        println!("post branch at t = 0: expected ({expected_h:.6}, {expected_v:.6})");

        let seg = extend_segment(
            &entry.system,
            &ev.post_state,
            tau,
            &entry.input,
            entry.span,
            Direction::Backward,
            Branch::Post,
            &IntegrationOptions::default(),
        )
        .unwrap();
        let at0 = seg.eval(0.0);
        assert!(
            (at0[0] - expected_h).abs() <= 1e-9,
            "height {:.3e}",
            at0[0] - expected_h
        );
        assert!(
            (at0[1] - expected_v).abs() <= 1e-9,
            "velocity {:.3e}",
            at0[1] - expected_v
        );

        // The stitched post extension of the trajectory must agree.
        let stitched = traj.post_ext().unwrap().eval(0.0);
        assert!((&stitched - &at0).norm() <= 1e-12);
    }

    #[test]
    fn only_the_first_crossing_is_acted_on() {
        // With e = 0.5 the post branch re-crosses the floor near t = 0.9;
        // the simulation must flow straight through it.
        let entry =
            bouncing_ball(GRAVITY, 0.5, DVector::from_vec(vec![1.0, 0.0]), (0.0, 1.0)).unwrap();
        let traj = run(&entry);
        let ev = traj.event().unwrap();
        let tau = ev.time;
        let v_plus = ev.post_state[1];
        let second = tau + 2.0 * v_plus / GRAVITY;
        assert!(second < 1.0, "test setup: second crossing inside the span");

        let h_end = traj.eval(1.0)[0];
        let expected = v_plus * (1.0 - tau) - 0.5 * GRAVITY * (1.0 - tau).powi(2);
        assert!(h_end < 0.0, "post branch must pass through the floor");
        assert!(
            (h_end - expected).abs() <= 1e-8,
            "free flight error {:.3e}",
            h_end - expected
        );

        // The ante extension also continues past its own crossing.
        let h_ante_end = traj.ante_ext().eval(0.8)[0];
        let expected_ante = 1.0 - 0.5 * GRAVITY * 0.64;
        assert!((h_ante_end - expected_ante).abs() <= 1e-9);
    }

    #[test]
    fn mirrored_flight_for_unit_restitution() {
        // With e = 1 the rebound replays the fall with the velocity sign
        // flipped: post(tau + s) = (h(tau - s), -v(tau - s)).
        let entry = ball(1.0);
        let traj = run(&entry);
        let tau = traj.event().unwrap().time;
        for s in [0.05, 0.1, 0.2, 0.3] {
            let up = traj.post_ext().unwrap().eval(tau + s);
            let down = traj.ante_ext().eval(tau - s);
            assert!(
                (up[0] - down[0]).abs() <= 1e-8,
                "height mismatch at s = {s}"
            );
            assert!(
                (up[1] + down[1]).abs() <= 1e-8,
                "velocity mismatch at s = {s}"
            );
        }
    }

    #[test]
    fn backward_extension_of_linear_decay_reaches_euler_number() {
        let sys = HybridSystem::builder(1, 0)
            .f_ante(|x: &DVector<f64>, _u: &DVector<f64>, _t| -x.clone())
            .guard(|_x, _t| 1.0)
            .build()
            .unwrap();
        let seg = extend_segment(
            &sys,
            &DVector::from_vec(vec![1.0]),
            1.0,
            &InputSignal::zero(0),
            (0.0, 1.0),
            Direction::Backward,
            Branch::Ante,
            &IntegrationOptions::default(),
        )
        .unwrap();
        let e = std::f64::consts::E;
        assert!(
            (seg.eval(0.0)[0] - e).abs() <= 1e-10,
            "x(0) = {:.15}",
            seg.eval(0.0)[0]
        );
    }

    #[test]
    fn event_locator_pins_a_linear_root() {
        let f = |_x: &DVector<f64>, _t: f64| DVector::from_vec(vec![-1.0]);
        let seg = rk4_integrate(&f, &DVector::from_vec(vec![2.0]), 0.0, 3.0, 3.0 / 2000.0).unwrap();
        let root = locate_event(&seg, |x, _t| x[0], (0.0, 3.0), 1e-12).unwrap();
        assert!((root.time - 2.0).abs() <= 1e-9, "root at {:.15}", root.time);
        assert!(root.guard_value.abs() <= 1e-9);
    }

    #[test]
    fn event_locator_requires_a_sign_change() {
        let f = |_x: &DVector<f64>, _t: f64| DVector::from_vec(vec![-1.0]);
        let seg = rk4_integrate(&f, &DVector::from_vec(vec![2.0]), 0.0, 1.0, 1e-3).unwrap();
        let err = locate_event(&seg, |x, _t| x[0], (0.0, 1.0), 1e-12).unwrap_err();
        assert!(matches!(err, Error::NoSignChange { .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn located_roots_match_exponential_decay(
            a in 0.5f64..2.0,
            x0 in 0.5f64..2.0,
            frac in 0.3f64..0.8,
        ) {
            let f = move |x: &DVector<f64>, _t: f64| x * -a;
            let seg = rk4_integrate(&f, &DVector::from_vec(vec![x0]), 0.0, 3.0, 3.0 / 2000.0).unwrap();
            let level = frac * x0;
            let t_true = (1.0 / frac).ln() / a;
            let root = locate_event(&seg, |x, _t| x[0] - level, (0.0, 3.0), 1e-12).unwrap();
            prop_assert!(
                (root.time - t_true).abs() <= 1e-8,
                "root {} vs closed form {}",
                root.time,
                t_true
            );
        }

        #[test]
        fn extension_round_trips_through_its_endpoint(
            entries in proptest::array::uniform4(-1.0f64..1.0),
            anchor in proptest::array::uniform2(-1.0f64..1.0),
        ) {
            let a = DMatrix::from_row_slice(2, 2, &entries);
            let af = a.clone();
            let sys = HybridSystem::builder(2, 0)
                .f_ante(move |x: &DVector<f64>, _u: &DVector<f64>, _t| &af * x)
                .guard(|_x, _t| 1.0)
                .build()
                .unwrap();
            let opts = IntegrationOptions::default();
            let x_anchor = DVector::from_vec(anchor.to_vec());
            let back = extend_segment(
                &sys, &x_anchor, 0.6, &InputSignal::zero(0), (0.0, 1.0),
                Direction::Backward, Branch::Ante, &opts,
            ).unwrap();
            let fwd = extend_segment(
                &sys, back.first_state(), 0.0, &InputSignal::zero(0), (0.0, 1.0),
                Direction::Forward, Branch::Ante, &opts,
            ).unwrap();
            let round = fwd.eval(0.6);
            prop_assert!(
                (round - &x_anchor).norm() <= 1e-9,
                "round trip drifted by {:.3e}",
                (fwd.eval(0.6) - &x_anchor).norm()
            );
        }
    }
}
