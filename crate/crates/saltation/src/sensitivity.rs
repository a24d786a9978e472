use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hybrid::{HybridTrajectory, IntegrationOptions};
use crate::ode::{rk4_integrate, DenseSegment};
use crate::signal::InputSignal;
use crate::system::HybridSystem;

/// Everything the jump gain needs, evaluated at the located event.
///
/// Minus quantities are taken on the ante side at (x_minus, tau), plus
/// quantities on the post side at (x_plus, tau), both with the nominal
/// input at tau.
#[derive(Clone, Debug)]
pub struct EventData {
    pub tau: f64,
    pub x_minus: DVector<f64>,
    pub x_plus: DVector<f64>,
    pub u_at_tau: DVector<f64>,
    /// Ante field at the pre-event state.
    pub f_minus: DVector<f64>,
    /// Post field at the post-event state.
    pub f_plus: DVector<f64>,
    /// State Jacobian of the impulse at the pre-event state.
    pub d1_delta: DMatrix<f64>,
    /// Time partial of the impulse at the pre-event state.
    pub d2_delta: DVector<f64>,
    /// Total impulse rate along the ante flow: D1_delta f_minus + D2_delta.
    pub delta_dot: DVector<f64>,
    /// Guard gradient at the pre-event state.
    pub d1_g: DVector<f64>,
    /// Guard time partial at the pre-event state.
    pub d2_g: f64,
    /// Total guard rate along the ante flow: D1_g . f_minus + D2_g.
    pub g_dot: f64,
}

/// Evaluates the event quantities on a trajectory whose event was located.
pub fn event_data(
    sys: &HybridSystem,
    traj: &HybridTrajectory,
    mu: &InputSignal,
    opts: &IntegrationOptions,
) -> Result<EventData> {
    let ev = traj.event().ok_or_else(|| {
        Error::InvalidArgument("event data requested on a trajectory without an event".into())
    })?;
    let tau = ev.time;
    let x_minus = ev.pre_state.clone();
    let x_plus = ev.post_state.clone();
    let u = mu.eval(tau);
    let f_minus = sys.f_ante(&x_minus, &u, tau);
    let f_plus = sys.f_post(&x_plus, &u, tau);
    let d1_delta = sys.d1_impulse(&x_minus, tau);
    let d2_delta = sys.d2_impulse(&x_minus, tau);
    let delta_dot = &d1_delta * &f_minus + &d2_delta;
    let d1_g = sys.d1_guard(&x_minus, tau);
    let d2_g = sys.d2_guard(&x_minus, tau);
    let g_dot = d1_g.dot(&f_minus) + d2_g;
    if g_dot.abs() <= opts.transversality_tolerance {
        return Err(Error::TransversalityViolated {
            time: tau,
            rate: g_dot.abs(),
            tolerance: opts.transversality_tolerance,
        });
    }
    Ok(EventData {
        tau,
        x_minus,
        x_plus,
        u_at_tau: u,
        f_minus,
        f_plus,
        d1_delta,
        d2_delta,
        delta_dot,
        d1_g,
        d2_g,
        g_dot,
    })
}

/// The jump gain H: first-order perturbations map across the event as
/// z_post = (I + H) z_ante, with
///
///   H = ((f_plus - f_minus - delta_dot) / g_dot) * d1_g^T + D1_delta.
///
/// With a zero impulse this is the classical saltation correction; with a
/// zero impulse and matching fields it vanishes identically.
pub fn jump_gain(ev: &EventData, transversality_tolerance: f64) -> Result<DMatrix<f64>> {
    if ev.g_dot.abs() <= transversality_tolerance {
        return Err(Error::TransversalityViolated {
            time: ev.tau,
            rate: ev.g_dot.abs(),
            tolerance: transversality_tolerance,
        });
    }
    let core = (&ev.f_plus - &ev.f_minus - &ev.delta_dot) / ev.g_dot;
    Ok(core * ev.d1_g.transpose() + &ev.d1_delta)
}

/// Jump gain and event quantities bundled with the post-side reference.
#[derive(Clone, Debug)]
pub struct JumpPart {
    pub event: EventData,
    /// The jump gain H.
    pub gain: DMatrix<f64>,
    post_ref: DenseSegment,
}

impl JumpPart {
    pub fn post_ref(&self) -> &DenseSegment {
        &self.post_ref
    }

    /// I + H, the one-step perturbation transfer across the jump.
    pub fn transfer(&self) -> DMatrix<f64> {
        DMatrix::identity(self.gain.nrows(), self.gain.ncols()) + &self.gain
    }
}

/// Time-varying linearization of the hybrid system along the extended
/// reference trajectories: A/B Jacobians on each side plus the jump gain.
///
/// For a trajectory without an event the post accessors mirror the ante
/// ones and `jump` is `None`; the pipeline then degenerates to classical
/// smooth sensitivity analysis.
#[derive(Clone, Debug)]
pub struct JumpLinearization {
    sys: HybridSystem,
    mu: InputSignal,
    span: (f64, f64),
    ante_ref: DenseSegment,
    pub jump: Option<JumpPart>,
}

impl JumpLinearization {
    pub fn n_state(&self) -> usize {
        self.sys.n_state()
    }

    pub fn n_input(&self) -> usize {
        self.sys.n_input()
    }

    pub fn span(&self) -> (f64, f64) {
        self.span
    }

    pub fn system(&self) -> &HybridSystem {
        &self.sys
    }

    pub fn input(&self) -> &InputSignal {
        &self.mu
    }

    pub fn ante_ref(&self) -> &DenseSegment {
        &self.ante_ref
    }

    /// Evaluation time clamped to the reference span: beyond the trajectory
    /// the Jacobians hold their endpoint values.
    fn clamp(&self, t: f64) -> f64 {
        t.clamp(self.span.0, self.span.1)
    }

    /// A_ante(t) = D1 f_ante along the extended ante reference.
    pub fn a_ante(&self, t: f64) -> DMatrix<f64> {
        let tc = self.clamp(t);
        self.sys
            .d1_f_ante(&self.ante_ref.eval(tc), &self.mu.eval(tc), tc)
    }

    /// B_ante(t) = D2 f_ante along the extended ante reference.
    pub fn b_ante(&self, t: f64) -> DMatrix<f64> {
        let tc = self.clamp(t);
        self.sys
            .d2_f_ante(&self.ante_ref.eval(tc), &self.mu.eval(tc), tc)
    }

    /// A_post(t) = D1 f_post along the extended post reference.
    pub fn a_post(&self, t: f64) -> DMatrix<f64> {
        let tc = self.clamp(t);
        match &self.jump {
            Some(j) => self
                .sys
                .d1_f_post(&j.post_ref.eval(tc), &self.mu.eval(tc), tc),
            None => self.a_ante(t),
        }
    }

    /// B_post(t) = D2 f_post along the extended post reference.
    pub fn b_post(&self, t: f64) -> DMatrix<f64> {
        let tc = self.clamp(t);
        match &self.jump {
            Some(j) => self
                .sys
                .d2_f_post(&j.post_ref.eval(tc), &self.mu.eval(tc), tc),
            None => self.b_ante(t),
        }
    }
}

/// Builds the linearization of `sys` along a simulated trajectory.
pub fn linearize(
    sys: &HybridSystem,
    traj: &HybridTrajectory,
    mu: &InputSignal,
    opts: &IntegrationOptions,
) -> Result<JumpLinearization> {
    let jump = match traj.event() {
        None => None,
        Some(_) => {
            let ev = event_data(sys, traj, mu, opts)?;
            let gain = jump_gain(&ev, opts.transversality_tolerance)?;
            let post_ref = traj
                .post_ext()
                .ok_or_else(|| {
                    Error::InvalidArgument("trajectory with an event lacks a post extension".into())
                })?
                .clone();
            Some(JumpPart {
                event: ev,
                gain,
                post_ref,
            })
        }
    };
    Ok(JumpLinearization {
        sys: sys.clone(),
        mu: mu.clone(),
        span: traj.span(),
        ante_ref: traj.ante_ext().clone(),
        jump,
    })
}

/// First-order perturbation trajectories for one direction (z0, v).
///
/// `z_ante` solves the ante variational equation over the whole span;
/// `z_post` solves the post variational equation over the whole span,
/// seeded at the nominal event time by (I + H) z_ante(tau) and extended
/// backward; `tau_prime` is the first-order event-time shift per unit of
/// perturbation size.
#[derive(Clone, Debug)]
pub struct LinearizedTrajectory {
    pub z_ante: DenseSegment,
    pub z_post: Option<DenseSegment>,
    pub tau_prime: Option<f64>,
    pub z0: DVector<f64>,
    pub v: InputSignal,
    span: (f64, f64),
}

impl LinearizedTrajectory {
    pub fn span(&self) -> (f64, f64) {
        self.span
    }
}

/// Integrates the variational equations z' = A(t) z + B(t) v(t) along both
/// sides of the linearization.
pub fn propagate_linearization(
    lin: &JumpLinearization,
    z0: &DVector<f64>,
    v: &InputSignal,
    opts: &IntegrationOptions,
) -> Result<LinearizedTrajectory> {
    let n = lin.n_state();
    if z0.len() != n {
        return Err(Error::DimensionMismatch {
            context: "perturbation direction z0",
            expected: n,
            actual: z0.len(),
        });
    }
    if v.dim() != lin.n_input() {
        return Err(Error::DimensionMismatch {
            context: "input perturbation direction v",
            expected: lin.n_input(),
            actual: v.dim(),
        });
    }
    let (t0, t1) = lin.span();
    let h = opts.step_size(lin.span());

    let va = v.clone();
    let f_ante = |z: &DVector<f64>, t: f64| lin.a_ante(t) * z + lin.b_ante(t) * va.eval(t);
    let z_ante = rk4_integrate(&f_ante, z0, t0, t1, h)?;

    let (z_post, tau_prime) = match &lin.jump {
        None => (None, None),
        Some(jump) => {
            let tau = jump.event.tau;
            let z_tau = z_ante.eval(tau);
            let z_plus = &z_tau + &jump.gain * &z_tau;
            let tau_prime = -jump.event.d1_g.dot(&z_tau) / jump.event.g_dot;
            let vp = v.clone();
            let f_post = |z: &DVector<f64>, t: f64| lin.a_post(t) * z + lin.b_post(t) * vp.eval(t);
            let back = rk4_integrate(&f_post, &z_plus, tau, t0, h)?;
            let fwd = rk4_integrate(&f_post, &z_plus, tau, t1, h)?;
            (Some(DenseSegment::stitch(back, fwd)?), Some(tau_prime))
        }
    };

    Ok(LinearizedTrajectory {
        z_ante,
        z_post,
        tau_prime,
        z0: z0.clone(),
        v: v.clone(),
        span: lin.span(),
    })
}

/// The first-order predictor for a perturbation of size eps: ante branch
/// before the predicted event time, post branch from it on.
#[derive(Clone, Debug)]
pub struct ApproxTrajectory {
    base: HybridTrajectory,
    lin: LinearizedTrajectory,
    pub eps: f64,
    /// Predicted event time tau + eps * tau_prime; `None` without an event.
    pub switch_time: Option<f64>,
    /// Set when the predicted event time falls outside the span. The
    /// predictor stays evaluable with the switch clamped to the span.
    pub switch_outside_span: bool,
}

impl ApproxTrajectory {
    pub fn base(&self) -> &HybridTrajectory {
        &self.base
    }

    pub fn lin(&self) -> &LinearizedTrajectory {
        &self.lin
    }

    /// Ante-branch prediction at t.
    pub fn eval_ante(&self, t: f64) -> DVector<f64> {
        self.base.ante_ext().eval(t) + self.lin.z_ante.eval(t) * self.eps
    }

    /// Post-branch prediction at t; `None` without an event.
    pub fn eval_post(&self, t: f64) -> Option<DVector<f64>> {
        let post_ref = self.base.post_ext()?;
        let z_post = self.lin.z_post.as_ref()?;
        Some(post_ref.eval(t) + z_post.eval(t) * self.eps)
    }

    /// Prediction with an explicit branch cutoff instead of the predicted
    /// one (used to compare against a known true event time).
    pub fn eval_with_switch(&self, t: f64, switch: Option<f64>) -> DVector<f64> {
        match switch {
            Some(s) if t >= s => self
                .eval_post(t)
                .expect("switch time given for a predictor without a post branch"),
            _ => self.eval_ante(t),
        }
    }

    /// Prediction at t with the predicted event time as branch cutoff,
    /// clamped into the span.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let (t0, t1) = self.base.span();
        self.eval_with_switch(t, self.switch_time.map(|s| s.clamp(t0, t1)))
    }
}

/// Assembles the first-order predictor for perturbation size eps.
pub fn approximate(
    base: &HybridTrajectory,
    lin_traj: &LinearizedTrajectory,
    eps: f64,
) -> ApproxTrajectory {
    let switch_time = match (base.event(), lin_traj.tau_prime) {
        (Some(ev), Some(tp)) => Some(ev.time + eps * tp),
        _ => None,
    };
    let (t0, t1) = base.span();
    let switch_outside_span = switch_time.map(|s| s < t0 || s > t1).unwrap_or(false);
    ApproxTrajectory {
        base: base.clone(),
        lin: lin_traj.clone(),
        eps,
        switch_time,
        switch_outside_span,
    }
}

/// One row of a convergence study.
#[derive(Clone, Debug)]
pub struct ConvergenceRow {
    pub eps: f64,
    /// Sup-norm state error of the first-order predictor against the true
    /// perturbed trajectory, with branches selected by the true event time.
    pub state_error: f64,
    /// |tau_eps - (tau + eps tau_prime)|; `None` without events.
    pub event_time_error: Option<f64>,
    pub true_event_time: Option<f64>,
    pub predicted_event_time: Option<f64>,
}

/// Errors of the first-order predictor over a list of perturbation sizes,
/// with observed log-log convergence slopes.
#[derive(Clone, Debug)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    /// Slopes between consecutive eps for the state error.
    pub state_slopes: Vec<f64>,
    /// Slopes between consecutive eps for the event-time error.
    pub event_time_slopes: Vec<f64>,
    /// Least-squares slope of log state error against log eps.
    pub state_fit_slope: Option<f64>,
    /// Least-squares slope of log event-time error against log eps.
    pub event_time_fit_slope: Option<f64>,
}

fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(e, err)| *e > 0.0 && *err > 1e-300)
        .map(|(e, err)| (e.ln(), err.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

fn consecutive_slopes(points: &[(f64, f64)]) -> Vec<f64> {
    points
        .windows(2)
        .map(|w| {
            let ((e0, r0), (e1, r1)) = (w[0], w[1]);
            if r0 > 1e-300 && r1 > 1e-300 {
                (r0 / r1).ln() / (e0 / e1).ln()
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Measures the first-order predictor against fully simulated perturbed
/// trajectories for each eps in `eps_list` (positive, strictly decreasing).
///
/// Branch selection for the comparison uses the true perturbed event time:
/// inside the band between the nominal and perturbed event times the two
/// branches differ by the jump magnitude, so selecting by the predicted
/// time would hide the predictor's actual order. The comparison grid is
/// the union of both trajectories' knot grids plus uniform samples across
/// that band.
pub fn convergence_study(
    sys: &HybridSystem,
    mu: &InputSignal,
    traj: &HybridTrajectory,
    lin_traj: &LinearizedTrajectory,
    eps_list: &[f64],
    opts: &IntegrationOptions,
) -> Result<ConvergenceStudy> {
    if eps_list.is_empty() {
        return Err(Error::InvalidArgument("eps list must not be empty".into()));
    }
    if eps_list.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidArgument("eps values must be positive".into()));
    }
    if eps_list.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InvalidArgument(
            "eps values must be strictly decreasing".into(),
        ));
    }

    let span = traj.span();
    let x0 = traj.initial_state().clone();
    let predictor_for = |eps: f64| approximate(traj, lin_traj, eps);

    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let x0_eps = &x0 + &lin_traj.z0 * eps;
        let mu_eps = mu.add_scaled(&lin_traj.v, eps)?;
        let ptraj = crate::hybrid::simulate(sys, &x0_eps, &mu_eps, span, opts)?;

        let (true_tau, predicted_tau) = match (traj.event(), ptraj.event()) {
            (Some(ev), Some(pev)) => {
                let predicted = ev.time + eps * lin_traj.tau_prime.unwrap_or(0.0);
                (Some(pev.time), Some(predicted))
            }
            (None, None) => (None, None),
            (Some(_), None) => return Err(Error::EventLost { eps }),
            (None, Some(pev)) => {
                return Err(Error::InvalidArgument(format!(
                    "perturbed run at eps = {eps:.3e} gained a guard crossing at t = {} absent from the nominal trajectory",
                    pev.time
                )));
            }
        };

        let mut grid: Vec<f64> = traj.grid().to_vec();
        grid.extend_from_slice(ptraj.grid());
        if let (Some(ev), Some(pev)) = (traj.event(), ptraj.event()) {
            let lo = ev.time.min(pev.time);
            let hi = ev.time.max(pev.time);
            for i in 0..=10 {
                grid.push(lo + (hi - lo) * i as f64 / 10.0);
            }
        }
        grid.sort_unstable_by(f64::total_cmp);
        grid.dedup();

        let pred = predictor_for(eps);
        let mut state_error = 0.0f64;
        for &t in &grid {
            let truth = ptraj.eval(t);
            let approx = pred.eval_with_switch(t, true_tau);
            state_error = state_error.max((truth - approx).norm());
        }

        let event_time_error = match (true_tau, predicted_tau) {
            (Some(tt), Some(pt)) => Some((tt - pt).abs()),
            _ => None,
        };
        rows.push(ConvergenceRow {
            eps,
            state_error,
            event_time_error,
            true_event_time: true_tau,
            predicted_event_time: predicted_tau,
        });
    }

    let state_points: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps, r.state_error)).collect();
    let event_points: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.event_time_error.map(|e| (r.eps, e)))
        .collect();
    Ok(ConvergenceStudy {
        state_slopes: consecutive_slopes(&state_points),
        event_time_slopes: consecutive_slopes(&event_points),
        state_fit_slope: fit_slope(&state_points),
        event_time_fit_slope: fit_slope(&event_points),
        rows,
    })
}
