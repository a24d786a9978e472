//! Independent cross-checks for the sensitivity and Riccati pipelines:
//! finite-difference probes built from full nonlinear simulations, a
//! first-order Riccati integrator on a fine grid, and a plain bisection
//! root finder. Nothing here shares code with the solvers it checks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hybrid::{simulate, HybridTrajectory, IntegrationOptions};
use crate::signal::InputSignal;
use crate::system::HybridSystem;

/// A central-difference probe of the flow around a nominal trajectory:
/// two full nonlinear simulations at +/- eps along a perturbation
/// direction.
#[derive(Clone, Debug)]
pub struct FdProbe {
    pub eps: f64,
    pub plus: HybridTrajectory,
    pub minus: HybridTrajectory,
    /// (tau_plus - tau_minus) / (2 eps) when both runs had an event.
    pub event_time_derivative: Option<f64>,
}

impl FdProbe {
    /// Central-difference estimate of the first-order flow direction at
    /// time t. Near the pair's event times the two runs sit on different
    /// branches and the quotient measures the O(1) jump mismatch instead
    /// of the derivative, so a band of width 5 eps (1 + |tau'|) around
    /// the events returns None.
    pub fn direction(&self, t: f64) -> Option<DVector<f64>> {
        if let (Some(ep), Some(em)) = (self.plus.event(), self.minus.event()) {
            let mid = 0.5 * (ep.time + em.time);
            let rate = self.event_time_derivative.unwrap_or(0.0);
            let band = 5.0 * self.eps * (1.0 + rate.abs()) + 0.5 * (ep.time - em.time).abs();
            if (t - mid).abs() <= band {
                return None;
            }
        }
        Some((self.plus.eval(t) - self.minus.eval(t)) / (2.0 * self.eps))
    }
}

/// Simulates the plant at x0 +/- eps z0 with input mu +/- eps v and wraps
/// the pair as a probe. Fails with EventLost if exactly one of the two
/// runs crosses the guard, since no central difference is meaningful
/// then.
#[allow(clippy::too_many_arguments)]
pub fn fd_sensitivity(
    sys: &HybridSystem,
    x0: &DVector<f64>,
    mu: &InputSignal,
    span: (f64, f64),
    z0: &DVector<f64>,
    v: &InputSignal,
    eps: f64,
    opts: &IntegrationOptions,
) -> Result<FdProbe> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "probe step {eps} must be positive"
        )));
    }
    let x_plus = x0 + z0 * eps;
    let x_minus = x0 - z0 * eps;
    let mu_plus = mu.add_scaled(v, eps)?;
    let mu_minus = mu.add_scaled(v, -eps)?;
    let plus = simulate(sys, &x_plus, &mu_plus, span, opts)?;
    let minus = simulate(sys, &x_minus, &mu_minus, span, opts)?;

    let event_time_derivative = match (plus.event(), minus.event()) {
        (Some(ep), Some(em)) => Some((ep.time - em.time) / (2.0 * eps)),
        (None, None) => None,
        _ => return Err(Error::EventLost { eps }),
    };

    Ok(FdProbe {
        eps,
        plus,
        minus,
        event_time_derivative,
    })
}

/// Result of the fine-grid Riccati reference pass.
pub struct FineRiccati {
    pub p_at_start: DMatrix<f64>,
    pub p_plus: DMatrix<f64>,
    pub p_minus: DMatrix<f64>,
}

/// Integrates the Riccati equation backward with plain first-order Euler
/// steps on a fine grid, applying the congruence reset
/// P_minus = transfer' P_plus transfer at tau. Deliberately a different
/// method and code path from the production solver; accuracy is O(1/steps).
#[allow(clippy::too_many_arguments)]
pub fn fine_riccati(
    a_ante: &dyn Fn(f64) -> DMatrix<f64>,
    b_ante: &dyn Fn(f64) -> DMatrix<f64>,
    a_post: &dyn Fn(f64) -> DMatrix<f64>,
    b_post: &dyn Fn(f64) -> DMatrix<f64>,
    q: &dyn Fn(f64) -> DMatrix<f64>,
    r: &dyn Fn(f64) -> DMatrix<f64>,
    transfer: &DMatrix<f64>,
    tau: f64,
    p_terminal: &DMatrix<f64>,
    span: (f64, f64),
    steps_per_phase: usize,
) -> Result<FineRiccati> {
    let (t0, t_end) = span;
    if !(t0 <= tau && tau <= t_end) {
        return Err(Error::InvalidArgument(format!(
            "event time {tau} must lie inside the span ({t0}, {t_end})"
        )));
    }
    if steps_per_phase == 0 {
        return Err(Error::InvalidArgument(
            "steps_per_phase must be positive".into(),
        ));
    }

    let sweep = |a: &dyn Fn(f64) -> DMatrix<f64>,
                 b: &dyn Fn(f64) -> DMatrix<f64>,
                 p_end: &DMatrix<f64>,
                 from: f64,
                 to: f64|
     -> Result<DMatrix<f64>> {
        // Backward Euler from `from` down to `to`.
        let mut p = p_end.clone();
        if from == to {
            return Ok(p);
        }
        let h = (from - to) / steps_per_phase as f64;
        for k in 0..steps_per_phase {
            let t = from - h * k as f64;
            let a_t = a(t);
            let b_t = b(t);
            let r_inv = r(t)
                .try_inverse()
                .ok_or_else(|| Error::InvalidArgument(format!("R(t) is singular at t = {t}")))?;
            let s = &b_t * r_inv * b_t.transpose();
            let pdot = -(a_t.transpose() * &p + &p * a_t - &p * s * &p + q(t));
            p -= pdot * h;
            p = (&p + p.transpose()) * 0.5;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::IntegrationFailure { time: t - h });
            }
        }
        Ok(p)
    };

    let p_plus = sweep(a_post, b_post, p_terminal, t_end, tau)?;
    let p_minus = transfer.transpose() * &p_plus * transfer;
    let p_at_start = sweep(a_ante, b_ante, &p_minus, tau, t0)?;
    Ok(FineRiccati {
        p_at_start,
        p_plus,
        p_minus,
    })
}

/// Plain bisection on [lo, hi]; requires a sign change and shrinks the
/// bracket to `tol`. Used to pin down closed-form event times without
/// touching the production event locator.
pub fn bisect(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut lo, mut hi) = (lo, hi);
    let (mut f_lo, f_hi) = (f(lo), f(hi));
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoSignChange {
            left: lo,
            right: hi,
        });
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol {
            return Ok(mid);
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::bouncing_ball;
    use nalgebra::DMatrix;

    const GRAVITY: f64 = 9.81;

    #[test]
    fn smooth_probe_is_exact_for_linear_dynamics() {
        // For x' = A x the flow is linear in x0, so the central difference
        // equals the true directional derivative e^{A t} z0 up to
        // integration error.
        let sys = HybridSystem::builder(2, 1)
            .f_ante(|x: &DVector<f64>, _u: &DVector<f64>, _t| DVector::from_vec(vec![x[1], -x[0]]))
            .guard(|_x, _t| 1.0)
            .build()
            .unwrap();
        let opts = IntegrationOptions::default();
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let z0 = DVector::from_vec(vec![0.3, -0.4]);
        let probe = fd_sensitivity(
            &sys,
            &x0,
            &InputSignal::zero(1),
            (0.0, 1.0),
            &z0,
            &InputSignal::zero(1),
            1e-6,
            &opts,
        )
        .unwrap();
        assert!(probe.event_time_derivative.is_none());
        for t in [0.25f64, 1.0] {
            let expected = DVector::from_vec(vec![
                z0[0] * t.cos() + z0[1] * t.sin(),
                -z0[0] * t.sin() + z0[1] * t.cos(),
            ]);
            let got = probe.direction(t).unwrap();
            println!("fd direction at {t}: {got:.9}, rotation gives {expected:.9}");
            assert!((&got - &expected).amax() <= 1e-9);
        }
    }

    #[test]
    fn ball_event_rate_matches_the_closed_form() {
        // tau(h0) = sqrt(2 h0 / g), so d tau / d h0 = 1 / sqrt(2 g h0).
        let entry =
            bouncing_ball(GRAVITY, 1.0, DVector::from_vec(vec![1.0, 0.0]), (0.0, 0.8)).unwrap();
        let opts = IntegrationOptions::default();
        let probe = fd_sensitivity(
            &entry.system,
            &entry.x0,
            &entry.input,
            entry.span,
            &DVector::from_vec(vec![1.0, 0.0]),
            &InputSignal::zero(1),
            1e-4,
            &opts,
        )
        .unwrap();
        let rate = probe.event_time_derivative.unwrap();
        let expected = 1.0 / (2.0 * GRAVITY).sqrt();
        println!("fd event rate {rate:.9}, closed form {expected:.9}");
        assert!((rate - expected).abs() <= 1e-6);
    }

    #[test]
    fn probe_direction_is_masked_inside_the_event_band() {
        let entry =
            bouncing_ball(GRAVITY, 0.5, DVector::from_vec(vec![1.0, 0.0]), (0.0, 0.8)).unwrap();
        let opts = IntegrationOptions::default();
        let probe = fd_sensitivity(
            &entry.system,
            &entry.x0,
            &entry.input,
            entry.span,
            &DVector::from_vec(vec![1.0, 0.0]),
            &InputSignal::zero(1),
            1e-3,
            &opts,
        )
        .unwrap();
        let tau = (2.0 / GRAVITY).sqrt();
        assert!(probe.direction(tau).is_none(), "band around the event");
        assert!(probe.direction(0.1).is_some());
        assert!(probe.direction(0.7).is_some());
    }

    #[test]
    fn probe_reports_a_lost_event() {
        // With the span ending exactly at the nominal impact, raising the
        // drop pushes the crossing past the end while lowering it keeps
        // one inside; no central difference exists there.
        let tau = (2.0 / GRAVITY).sqrt();
        let entry =
            bouncing_ball(GRAVITY, 0.5, DVector::from_vec(vec![1.0, 0.0]), (0.0, tau)).unwrap();
        let opts = IntegrationOptions::default();
        let err = fd_sensitivity(
            &entry.system,
            &entry.x0,
            &entry.input,
            entry.span,
            &DVector::from_vec(vec![1.0, 0.0]),
            &InputSignal::zero(1),
            1e-3,
            &opts,
        )
        .unwrap_err();
        assert!(matches!(err, Error::EventLost { .. }), "got {err}");
    }

    #[test]
    fn bisect_finds_the_cosine_root() {
        let root = bisect(&|t: f64| t.cos(), 1.0, 2.0, 1e-14).unwrap();
        assert!((root - std::f64::consts::FRAC_PI_2).abs() <= 1e-13);
    }

    #[test]
    fn bisect_requires_a_sign_change() {
        let err = bisect(&|t: f64| t.cos(), 0.0, 1.0, 1e-14).unwrap_err();
        assert!(matches!(err, Error::NoSignChange { .. }));
    }

    #[test]
    fn fine_riccati_converges_to_the_tanh_solution() {
        // Same scalar benchmark as the main pass; the first-order sweep
        // should land within O(1/steps) of p(0) = 1 + sqrt(2) tanh(sqrt(2)).
        let one = |_t: f64| DMatrix::from_element(1, 1, 1.0);
        let fine = fine_riccati(
            &one,
            &one,
            &one,
            &one,
            &one,
            &one,
            &DMatrix::identity(1, 1),
            0.5,
            &DMatrix::from_element(1, 1, 1.0),
            (0.0, 1.0),
            200_000,
        )
        .unwrap();
        let s2 = 2.0f64.sqrt();
        let expected = 1.0 + s2 * (s2).tanh();
        let got = fine.p_at_start[(0, 0)];
        println!("fine p(0) = {got:.9}, closed form {expected:.9}");
        assert!((got - expected).abs() <= 5e-4);
    }
}
