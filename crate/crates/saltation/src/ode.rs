use nalgebra::DVector;

use crate::error::{Error, Result};

/// A trajectory segment with cubic Hermite dense output.
///
/// Stores states and vector-field values at the accepted integration knots;
/// `eval` interpolates anywhere in between with the cubic that matches value
/// and slope at both ends of each knot interval. Knot times are strictly
/// increasing regardless of the integration direction.
#[derive(Clone, Debug)]
pub struct DenseSegment {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    derivs: Vec<DVector<f64>>,
}

impl DenseSegment {
    pub fn from_parts(
        times: Vec<f64>,
        states: Vec<DVector<f64>>,
        derivs: Vec<DVector<f64>>,
    ) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() || times.len() != derivs.len() {
            return Err(Error::InvalidArgument(
                "dense segment needs equally many times, states, and derivatives".into(),
            ));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "dense segment knot times must be strictly increasing".into(),
            ));
        }
        let dim = states[0].len();
        if states.iter().any(|s| s.len() != dim) || derivs.iter().any(|d| d.len() != dim) {
            return Err(Error::InvalidArgument(
                "dense segment states and derivatives must share one dimension".into(),
            ));
        }
        Ok(Self {
            times,
            states,
            derivs,
        })
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn first_state(&self) -> &DVector<f64> {
        &self.states[0]
    }

    pub fn last_state(&self) -> &DVector<f64> {
        self.states.last().unwrap()
    }

    /// Index of the knot interval containing t (clamped to the boundary
    /// intervals outside the knot range).
    fn interval_of(&self, t: f64) -> usize {
        let idx = self.times.partition_point(|&tk| tk <= t);
        idx.saturating_sub(1)
            .min(self.times.len().saturating_sub(2))
    }

    /// Interpolated state at t. Evaluation clamps t to the segment's time
    /// range; callers that care should check the range themselves.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        if self.times.len() == 1 {
            return self.states[0].clone();
        }
        let k = self.interval_of(t);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        &self.states[k] * h00
            + &self.derivs[k] * (h10 * h)
            + &self.states[k + 1] * h01
            + &self.derivs[k + 1] * (h11 * h)
    }

    /// Time derivative of the interpolant at t.
    pub fn eval_derivative(&self, t: f64) -> DVector<f64> {
        if self.times.len() == 1 {
            return self.derivs[0].clone();
        }
        let k = self.interval_of(t);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let s2 = s * s;
        let d00 = (6.0 * s2 - 6.0 * s) / h;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = (6.0 * s - 6.0 * s2) / h;
        let d11 = 3.0 * s2 - 2.0 * s;
        &self.states[k] * d00
            + &self.derivs[k] * d10
            + &self.states[k + 1] * d01
            + &self.derivs[k + 1] * d11
    }

    /// Reverses the knot order in place so times become increasing. Used
    /// after backward integration.
    fn reversed(mut self) -> Self {
        self.times.reverse();
        self.states.reverse();
        self.derivs.reverse();
        self
    }

    /// Concatenates a backward and a forward sweep that share their anchor
    /// knot. The shared knot is kept once.
    pub fn stitch(back: DenseSegment, forward: DenseSegment) -> Result<DenseSegment> {
        if back.end_time() != forward.start_time() {
            return Err(Error::InvalidArgument(
                "segments to stitch must share their anchor time".into(),
            ));
        }
        let mut times = back.times;
        let mut states = back.states;
        let mut derivs = back.derivs;
        times.extend_from_slice(&forward.times[1..]);
        states.extend_from_slice(&forward.states[1..]);
        derivs.extend_from_slice(&forward.derivs[1..]);
        DenseSegment::from_parts(times, states, derivs)
    }
}

/// One classical Runge-Kutta step of signed size h.
fn rk4_step(
    f: &dyn Fn(&DVector<f64>, f64) -> DVector<f64>,
    x: &DVector<f64>,
    t: f64,
    h: f64,
) -> DVector<f64> {
    let k1 = f(x, t);
    let k2 = f(&(x + &k1 * (h / 2.0)), t + h / 2.0);
    let k3 = f(&(x + &k2 * (h / 2.0)), t + h / 2.0);
    let k4 = f(&(x + &k3 * h), t + h);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Integrates dx/dt = f(x, t) from `from` to `to` with fixed steps of
/// magnitude near `step_hint` (the interval is divided evenly). Works in
/// either time direction; `from == to` yields a single-knot segment.
pub fn rk4_integrate(
    f: &dyn Fn(&DVector<f64>, f64) -> DVector<f64>,
    x0: &DVector<f64>,
    from: f64,
    to: f64,
    step_hint: f64,
) -> Result<DenseSegment> {
    if !from.is_finite() || !to.is_finite() {
        return Err(Error::InvalidArgument(
            "integration bounds must be finite".into(),
        ));
    }
    if !(step_hint > 0.0) {
        return Err(Error::InvalidArgument("step size must be positive".into()));
    }
    let span = to - from;
    if span == 0.0 {
        let d = f(x0, from);
        return DenseSegment::from_parts(vec![from], vec![x0.clone()], vec![d]);
    }
    let n_steps = ((span.abs() / step_hint - 1e-9).ceil().max(1.0)) as usize;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut derivs = Vec::with_capacity(n_steps + 1);

    let mut x = x0.clone();
    times.push(from);
    derivs.push(f(&x, from));
    states.push(x.clone());

    for k in 0..n_steps {
        let t_k = from + span * (k as f64 / n_steps as f64);
        let t_next = if k + 1 == n_steps {
            to
        } else {
            from + span * ((k + 1) as f64 / n_steps as f64)
        };
        x = rk4_step(f, &x, t_k, t_next - t_k);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationFailure { time: t_next });
        }
        times.push(t_next);
        derivs.push(f(&x, t_next));
        states.push(x.clone());
    }

    let seg = DenseSegment {
        times,
        states,
        derivs,
    };
    Ok(if span < 0.0 { seg.reversed() } else { seg })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_matches_closed_form() {
        let f = |x: &DVector<f64>, _: f64| -x.clone();
        let seg = rk4_integrate(&f, &DVector::from_element(1, 1.0), 0.0, 1.0, 1.0 / 200.0).unwrap();
        for &t in &[0.0, 0.25, 0.333, 0.5, 1.0] {
            let got = seg.eval(t)[0];
            let expected = (-t).exp();
            assert!(
                (got - expected).abs() < 1e-9,
                "t = {t}: got {got}, expected {expected}"
            );
        }
    }

    #[test]
    fn backward_integration_reaches_closed_form_anchor() {
        // dx/dt = -x anchored at x(1) = 1, integrated back to 0: x(0) = e.
        let f = |x: &DVector<f64>, _: f64| -x.clone();
        let seg = rk4_integrate(&f, &DVector::from_element(1, 1.0), 1.0, 0.0, 1.0 / 200.0).unwrap();
        assert!(seg.start_time() == 0.0 && seg.end_time() == 1.0);
        assert!((seg.eval(0.0)[0] - 1.0f64.exp()).abs() < 1e-9);
        assert!((seg.eval(1.0)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn global_error_scales_as_fourth_order() {
        let f = |x: &DVector<f64>, _: f64| -x.clone();
        let x0 = DVector::from_element(1, 1.0);
        let err_at = |steps: usize| {
            let seg = rk4_integrate(&f, &x0, 0.0, 1.0, 1.0 / steps as f64).unwrap();
            (seg.last_state()[0] - (-1.0f64).exp()).abs()
        };
        let errs = [err_at(25), err_at(50), err_at(100)];
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(
                (3.5..=4.5).contains(&order),
                "observed order {order} outside the fourth-order window"
            );
        }
    }

    #[test]
    fn dense_output_residual_is_small_at_midpoints() {
        let f = |x: &DVector<f64>, _: f64| -x.clone();
        let seg = rk4_integrate(&f, &DVector::from_element(1, 1.0), 0.0, 1.0, 1.0 / 500.0).unwrap();
        let mut worst = 0.0f64;
        for w in seg.times().windows(2) {
            let tm = 0.5 * (w[0] + w[1]);
            let resid = (seg.eval_derivative(tm) - f(&seg.eval(tm), tm)).norm();
            worst = worst.max(resid);
        }
        assert!(worst < 1e-6, "midpoint residual {worst} too large");
    }

    #[test]
    fn degenerate_span_yields_single_knot() {
        let f = |x: &DVector<f64>, _: f64| x.clone();
        let seg = rk4_integrate(&f, &DVector::from_element(1, 2.0), 0.3, 0.3, 0.1).unwrap();
        assert_eq!(seg.times().len(), 1);
        assert_eq!(seg.eval(0.3)[0], 2.0);
    }

    #[test]
    fn finite_time_blowup_reports_integration_failure() {
        // dx/dt = x^2 from x(0) = 1 blows up at t = 1.
        let f = |x: &DVector<f64>, _: f64| DVector::from_element(1, x[0] * x[0]);
        let err = rk4_integrate(&f, &DVector::from_element(1, 1.0), 0.0, 2.0, 1e-3).unwrap_err();
        assert!(matches!(err, Error::IntegrationFailure { .. }));
    }

    #[test]
    fn stitch_keeps_shared_knot_once() {
        let f = |x: &DVector<f64>, _: f64| -x.clone();
        let anchor = DVector::from_element(1, 1.0);
        let back = rk4_integrate(&f, &anchor, 0.5, 0.0, 0.05).unwrap();
        let fwd = rk4_integrate(&f, &anchor, 0.5, 1.0, 0.05).unwrap();
        let whole = DenseSegment::stitch(back, fwd).unwrap();
        assert_eq!(whole.start_time(), 0.0);
        assert_eq!(whole.end_time(), 1.0);
        let dup = whole.times().windows(2).filter(|w| w[0] == w[1]).count();
        assert_eq!(dup, 0);
        assert!((whole.eval(0.5)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eval_clamps_outside_knot_range() {
        let f = |x: &DVector<f64>, _: f64| x.clone() * 0.0;
        let seg = rk4_integrate(&f, &DVector::from_element(1, 5.0), 0.0, 1.0, 0.25).unwrap();
        assert_eq!(seg.eval(-3.0)[0], 5.0);
        assert_eq!(seg.eval(9.0)[0], 5.0);
    }
}
