use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hybrid::{simulate, Branch, HybridTrajectory, IntegrationOptions};
use crate::ode::{rk4_integrate, DenseSegment};
use crate::sensitivity::JumpLinearization;
use crate::signal::InputSignal;
use crate::system::HybridSystem;

pub type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
pub type GainFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// Riccati iterates above this norm abort the backward pass.
const RICCATI_NORM_LIMIT: f64 = 1e12;
/// Per-step symmetry drift above this aborts the backward pass. The iterate
/// is re-symmetrized every step regardless.
const SYMMETRY_DRIFT_LIMIT: f64 = 1e-8;

/// Quadratic tracking weights on [t0, T]: running cost
/// (z' Q(t) z + v' R(t) v) / 2 and terminal cost z' P_T z / 2.
#[derive(Clone)]
pub struct LqrWeights {
    q: MatrixFn,
    r: MatrixFn,
    p_terminal: DMatrix<f64>,
    horizon: f64,
}

impl LqrWeights {
    /// Constant weights. Q and P_T must be symmetric, R symmetric and
    /// invertible (positive definiteness is the caller's contract).
    pub fn constant(
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        p_terminal: DMatrix<f64>,
        horizon: f64,
    ) -> Result<Self> {
        for (name, m) in [("Q", &q), ("R", &r), ("P_T", &p_terminal)] {
            if !m.is_square() {
                return Err(Error::InvalidArgument(format!("{name} must be square")));
            }
            if !is_symmetric(m) {
                return Err(Error::InvalidArgument(format!("{name} must be symmetric")));
            }
        }
        if r.clone().try_inverse().is_none() {
            return Err(Error::InvalidArgument("R must be invertible".into()));
        }
        let qc = q.clone();
        let rc = r.clone();
        Ok(Self {
            q: Arc::new(move |_| qc.clone()),
            r: Arc::new(move |_| rc.clone()),
            p_terminal,
            horizon,
        })
    }

    /// Time-varying weights; symmetry of each sample is checked during the
    /// backward pass.
    pub fn time_varying(
        q: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
        r: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
        p_terminal: DMatrix<f64>,
        horizon: f64,
    ) -> Self {
        Self {
            q: Arc::new(q),
            r: Arc::new(r),
            p_terminal,
            horizon,
        }
    }

    pub fn q(&self, t: f64) -> DMatrix<f64> {
        (self.q)(t)
    }

    pub fn r(&self, t: f64) -> DMatrix<f64> {
        (self.r)(t)
    }

    pub fn p_terminal(&self) -> &DMatrix<f64> {
        &self.p_terminal
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
}

impl std::fmt::Debug for LqrWeights {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LqrWeights")
            .field("horizon", &self.horizon)
            .finish()
    }
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = 1.0 + m.amax();
    (m - m.transpose()).amax() <= 1e-9 * scale
}

/// A matrix-valued trajectory with cubic Hermite dense output, mirroring
/// `DenseSegment` for Riccati iterates.
#[derive(Clone, Debug)]
pub struct MatrixSegment {
    times: Vec<f64>,
    values: Vec<DMatrix<f64>>,
    derivs: Vec<DMatrix<f64>>,
}

impl MatrixSegment {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn first_value(&self) -> &DMatrix<f64> {
        &self.values[0]
    }

    pub fn last_value(&self) -> &DMatrix<f64> {
        self.values.last().unwrap()
    }

    /// Cubic Hermite interpolation, clamped to the knot range.
    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        if self.times.len() == 1 {
            return self.values[0].clone();
        }
        let idx = self.times.partition_point(|&tk| tk <= t);
        let k = idx.saturating_sub(1).min(self.times.len() - 2);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        &self.values[k] * h00
            + &self.derivs[k] * (h10 * h)
            + &self.values[k + 1] * h01
            + &self.derivs[k + 1] * (h11 * h)
    }
}

/// Diagnostics of one backward Riccati sweep.
#[derive(Clone, Debug)]
pub struct RiccatiSegmentResult {
    pub segment: MatrixSegment,
    /// Largest per-step asymmetry observed before re-symmetrization.
    pub max_symmetry_drift: f64,
    /// Largest Frobenius condition estimate of R(t) along the sweep.
    pub max_r_condition: f64,
}

/// Integrates the matrix Riccati equation
///
///   -dP/dt = A(t)' P + P A(t) - P B(t) R(t)^-1 B(t)' P + Q(t)
///
/// backward from P(span.1) = p_end to span.0 with fixed fourth-order steps.
/// The iterate is re-symmetrized each step; excessive drift, a singular
/// R(t), or norm blow-up abort the sweep.
pub fn riccati_segment(
    a: &dyn Fn(f64) -> DMatrix<f64>,
    b: &dyn Fn(f64) -> DMatrix<f64>,
    q: &dyn Fn(f64) -> DMatrix<f64>,
    r: &dyn Fn(f64) -> DMatrix<f64>,
    p_end: &DMatrix<f64>,
    span: (f64, f64),
    step_hint: f64,
) -> Result<RiccatiSegmentResult> {
    let (t_start, t_end) = span;
    if !(t_start <= t_end) {
        return Err(Error::InvalidArgument(
            "riccati span must satisfy start <= end".into(),
        ));
    }
    let mut max_drift = 0.0f64;
    let mut max_cond = 0.0f64;

    let mut rhs = |t: f64, p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let a_t = a(t);
        let b_t = b(t);
        let q_t = q(t);
        let r_t = r(t);
        if !is_symmetric(&q_t) {
            return Err(Error::InvalidArgument(format!(
                "Q(t) not symmetric at t = {t}"
            )));
        }
        if !is_symmetric(&r_t) {
            return Err(Error::InvalidArgument(format!(
                "R(t) not symmetric at t = {t}"
            )));
        }
        let r_inv = r_t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument(format!("R(t) is singular at t = {t}")))?;
        let cond = r_t.norm() * r_inv.norm();
        if cond > max_cond {
            max_cond = cond;
        }
        let s = &b_t * r_inv * b_t.transpose();
        Ok(-(a_t.transpose() * p + p * a_t - p * &s * p + q_t))
    };

    if t_start == t_end {
        let d = rhs(t_end, p_end)?;
        return Ok(RiccatiSegmentResult {
            segment: MatrixSegment {
                times: vec![t_end],
                values: vec![p_end.clone()],
                derivs: vec![d],
            },
            max_symmetry_drift: 0.0,
            max_r_condition: max_cond,
        });
    }

    let width = t_end - t_start;
    let n_steps = ((width / step_hint - 1e-9).ceil().max(1.0)) as usize;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut values = Vec::with_capacity(n_steps + 1);
    let mut derivs = Vec::with_capacity(n_steps + 1);

    let mut p = p_end.clone();
    times.push(t_end);
    derivs.push(rhs(t_end, &p)?);
    values.push(p.clone());

    for k in 0..n_steps {
        let t_k = t_end - width * (k as f64 / n_steps as f64);
        let t_next = if k + 1 == n_steps {
            t_start
        } else {
            t_end - width * ((k + 1) as f64 / n_steps as f64)
        };
        let dt = t_next - t_k;
        let k1 = rhs(t_k, &p)?;
        let k2 = rhs(t_k + dt / 2.0, &(&p + &k1 * (dt / 2.0)))?;
        let k3 = rhs(t_k + dt / 2.0, &(&p + &k2 * (dt / 2.0)))?;
        let k4 = rhs(t_next, &(&p + &k3 * dt))?;
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);

        if p.iter().any(|v| !v.is_finite()) || p.amax() > RICCATI_NORM_LIMIT {
            return Err(Error::RiccatiBlowup {
                time: t_next,
                norm: p.amax(),
                threshold: RICCATI_NORM_LIMIT,
            });
        }
        let drift = (&p - p.transpose()).amax();
        if drift > max_drift {
            max_drift = drift;
        }
        if drift > SYMMETRY_DRIFT_LIMIT {
            return Err(Error::NonSymmetricDrift {
                time: t_next,
                drift,
                tolerance: SYMMETRY_DRIFT_LIMIT,
            });
        }
        p = (&p + p.transpose()) * 0.5;

        times.push(t_next);
        derivs.push(rhs(t_next, &p)?);
        values.push(p.clone());
    }

    times.reverse();
    values.reverse();
    derivs.reverse();
    Ok(RiccatiSegmentResult {
        segment: MatrixSegment {
            times,
            values,
            derivs,
        },
        max_symmetry_drift: max_drift,
        max_r_condition: max_cond,
    })
}

/// Backward Riccati solution across the jump: the post sweep on [tau, T],
/// the congruence reset P_minus = (I+H)' P_plus (I+H) at the nominal event
/// time, and the ante sweep on [t0, tau]. The gain schedule is
/// K(t) = R(t)^-1 B(t)' P(t) with the post pair on [tau, T] and the ante
/// pair on [t0, tau).
#[derive(Clone)]
pub struct RiccatiSolution {
    lin: JumpLinearization,
    weights: LqrWeights,
    ante: MatrixSegment,
    post: MatrixSegment,
    tau: f64,
    p_plus_at_tau: DMatrix<f64>,
    p_minus_at_tau: DMatrix<f64>,
    max_symmetry_drift: f64,
    max_r_condition: f64,
}

impl std::fmt::Debug for RiccatiSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RiccatiSolution")
            .field("tau", &self.tau)
            .field("horizon", &self.weights.horizon())
            .finish()
    }
}

impl RiccatiSolution {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn horizon(&self) -> f64 {
        self.weights.horizon()
    }

    pub fn weights(&self) -> &LqrWeights {
        &self.weights
    }

    pub fn linearization(&self) -> &JumpLinearization {
        &self.lin
    }

    pub fn ante_segment(&self) -> &MatrixSegment {
        &self.ante
    }

    pub fn post_segment(&self) -> &MatrixSegment {
        &self.post
    }

    pub fn p_plus_at_tau(&self) -> &DMatrix<f64> {
        &self.p_plus_at_tau
    }

    pub fn p_minus_at_tau(&self) -> &DMatrix<f64> {
        &self.p_minus_at_tau
    }

    pub fn max_symmetry_drift(&self) -> f64 {
        self.max_symmetry_drift
    }

    pub fn max_r_condition(&self) -> f64 {
        self.max_r_condition
    }

    /// P(t), taking the post segment from tau on and clamping outside
    /// [t0, T].
    pub fn p(&self, t: f64) -> DMatrix<f64> {
        if t >= self.tau {
            self.post.eval(t)
        } else {
            self.ante.eval(t)
        }
    }

    /// K(t) = R(t)^-1 B(t)' P(t). Beyond the horizon the terminal gain is
    /// held; before t0 the initial gain is held. Panics if R(t) is
    /// singular, which the weight contract excludes.
    pub fn gain(&self, t: f64) -> DMatrix<f64> {
        if t >= self.tau {
            self.gain_post(t)
        } else {
            self.gain_ante(t)
        }
    }

    /// Ante-phase gain built from the pre-reset P, valid through the left
    /// limit at tau. Times are clamped to [t0, tau].
    pub fn gain_ante(&self, t: f64) -> DMatrix<f64> {
        let tc = t.clamp(self.ante.start_time(), self.tau);
        self.invert_r(tc) * self.lin.b_ante(tc).transpose() * self.ante.eval(tc)
    }

    /// Post-phase gain from the reset P onward. Times are clamped to
    /// [tau, T].
    pub fn gain_post(&self, t: f64) -> DMatrix<f64> {
        let tc = t.clamp(self.tau, self.weights.horizon());
        self.invert_r(tc) * self.lin.b_post(tc).transpose() * self.post.eval(tc)
    }

    fn invert_r(&self, t: f64) -> DMatrix<f64> {
        self.weights
            .r(t)
            .try_inverse()
            .expect("R(t) must stay invertible over the horizon")
    }

    /// The gain schedule as a shareable callable.
    pub fn gain_fn(&self) -> GainFn {
        let sol = Arc::new(self.clone());
        Arc::new(move |t| sol.gain(t))
    }

    /// Residual of the stored reset: ||P_minus - (I+H)' P_plus (I+H)||.
    pub fn reset_residual(&self) -> f64 {
        let jump = self.lin.jump.as_ref().expect("solution built with a jump");
        let transfer = jump.transfer();
        (&self.p_minus_at_tau - transfer.transpose() * &self.p_plus_at_tau * transfer).amax()
    }

    /// Predicted optimal cost from initial deviation z0: z0' P(t0) z0 / 2.
    pub fn value(&self, z0: &DVector<f64>) -> f64 {
        0.5 * (z0.transpose() * self.ante.first_value() * z0)[(0, 0)]
    }
}

/// Solves the backward Riccati pass with the jump reset at the nominal
/// event time. Requires a linearization with a jump and a horizon at or
/// beyond the trajectory span; Jacobians past the span hold their endpoint
/// values.
pub fn riccati_with_jumps(
    lin: &JumpLinearization,
    weights: &LqrWeights,
    opts: &IntegrationOptions,
) -> Result<RiccatiSolution> {
    let jump = lin.jump.as_ref().ok_or_else(|| {
        Error::InvalidArgument(
            "riccati_with_jumps needs a linearization with a jump; use riccati_segment for smooth problems"
                .into(),
        )
    })?;
    let n = lin.n_state();
    let (t0, t1) = lin.span();
    let t_end = weights.horizon();
    if t_end < t1 {
        return Err(Error::InvalidArgument(format!(
            "horizon {t_end} must not precede the trajectory end {t1}"
        )));
    }
    let p_t = weights.p_terminal();
    if p_t.nrows() != n || p_t.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "terminal weight P_T",
            expected: n,
            actual: p_t.nrows(),
        });
    }
    if weights.q(t_end).nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "state weight Q",
            expected: n,
            actual: weights.q(t_end).nrows(),
        });
    }
    if weights.r(t_end).nrows() != lin.n_input() {
        return Err(Error::DimensionMismatch {
            context: "input weight R",
            expected: lin.n_input(),
            actual: weights.r(t_end).nrows(),
        });
    }

    let tau = jump.event.tau;
    let h = (t_end - t0) / opts.steps.max(1) as f64;

    let post = riccati_segment(
        &|t| lin.a_post(t),
        &|t| lin.b_post(t),
        &|t| weights.q(t),
        &|t| weights.r(t),
        p_t,
        (tau, t_end),
        h,
    )?;
    let p_plus = post.segment.first_value().clone();
    let transfer = jump.transfer();
    let p_minus = transfer.transpose() * &p_plus * &transfer;

    let ante = riccati_segment(
        &|t| lin.a_ante(t),
        &|t| lin.b_ante(t),
        &|t| weights.q(t),
        &|t| weights.r(t),
        &p_minus,
        (t0, tau),
        h,
    )?;

    Ok(RiccatiSolution {
        lin: lin.clone(),
        weights: weights.clone(),
        max_symmetry_drift: post.max_symmetry_drift.max(ante.max_symmetry_drift),
        max_r_condition: post.max_r_condition.max(ante.max_r_condition),
        ante: ante.segment,
        post: post.segment,
        tau,
        p_plus_at_tau: p_plus,
        p_minus_at_tau: p_minus,
    })
}

/// Input policy for the jump-linear quadratic cost.
pub enum LinearPolicy<'a> {
    /// v = -K(t) z.
    Feedback(&'a RiccatiSolution),
    /// v = -K(t) z + offset(t).
    FeedbackWithOffset(&'a RiccatiSolution, &'a InputSignal),
    /// Open-loop v = v(t).
    Open(&'a InputSignal),
}

/// Simulates the jump-linear dynamics z' = A(t) z + B(t) v with the reset
/// z_plus = (I+H) z_minus at the nominal event time and accumulates
///
///   J = (1/2) integral of z'Qz + v'Rv over [t0, T] + (1/2) z(T)' P_T z(T).
pub fn lqr_cost(
    lin: &JumpLinearization,
    weights: &LqrWeights,
    z0: &DVector<f64>,
    policy: LinearPolicy<'_>,
    opts: &IntegrationOptions,
) -> Result<f64> {
    let jump = lin.jump.as_ref().ok_or_else(|| {
        Error::InvalidArgument("lqr_cost needs a linearization with a jump".into())
    })?;
    let n = lin.n_state();
    if z0.len() != n {
        return Err(Error::DimensionMismatch {
            context: "initial deviation z0",
            expected: n,
            actual: z0.len(),
        });
    }
    let (t0, _) = lin.span();
    let t_end = weights.horizon();
    let tau = jump.event.tau;
    if t_end < tau {
        return Err(Error::InvalidArgument(
            "horizon must not precede the event time".into(),
        ));
    }
    let h = (t_end - t0) / opts.steps.max(1) as f64;

    // The phase flag keeps the ante sweep on the pre-reset gain up to and
    // including the left limit at tau; the gain schedule itself is
    // right-continuous there.
    let policy_v = |t: f64, z: &DVector<f64>, ante: bool| -> DVector<f64> {
        let feedback_gain = |sol: &RiccatiSolution| {
            if ante {
                sol.gain_ante(t)
            } else {
                sol.gain_post(t)
            }
        };
        match &policy {
            LinearPolicy::Feedback(sol) => -(feedback_gain(sol) * z),
            LinearPolicy::FeedbackWithOffset(sol, off) => -(feedback_gain(sol) * z) + off.eval(t),
            LinearPolicy::Open(v) => v.eval(t),
        }
    };

    // Augmented state [z; running cost].
    let phase = |a: &dyn Fn(f64) -> DMatrix<f64>,
                 b: &dyn Fn(f64) -> DMatrix<f64>,
                 zj0: &DVector<f64>,
                 from: f64,
                 to: f64,
                 ante: bool|
     -> Result<DVector<f64>> {
        let f = |zj: &DVector<f64>, t: f64| {
            let z = zj.rows(0, n).into_owned();
            let v = policy_v(t, &z, ante);
            let dz = a(t) * &z + b(t) * &v;
            let dj = 0.5
                * ((&z.transpose() * weights.q(t) * &z)[(0, 0)]
                    + (&v.transpose() * weights.r(t) * &v)[(0, 0)]);
            let mut out = DVector::zeros(n + 1);
            out.rows_mut(0, n).copy_from(&dz);
            out[n] = dj;
            out
        };
        let seg = rk4_integrate(&f, zj0, from, to, h)?;
        Ok(seg.last_state().clone())
    };

    let mut zj = DVector::zeros(n + 1);
    zj.rows_mut(0, n).copy_from(z0);
    let zj_tau = phase(&|t| lin.a_ante(t), &|t| lin.b_ante(t), &zj, t0, tau, true)?;

    let z_minus = zj_tau.rows(0, n).into_owned();
    let z_plus = jump.transfer() * &z_minus;
    let mut zj_reset = DVector::zeros(n + 1);
    zj_reset.rows_mut(0, n).copy_from(&z_plus);
    zj_reset[n] = zj_tau[n];

    let zj_end = phase(
        &|t| lin.a_post(t),
        &|t| lin.b_post(t),
        &zj_reset,
        tau,
        t_end,
        false,
    )?;
    let z_end = zj_end.rows(0, n).into_owned();
    let terminal = 0.5 * (z_end.transpose() * weights.p_terminal() * &z_end)[(0, 0)];
    Ok(zj_end[n] + terminal)
}

/// Builds the autonomous closed-loop hybrid system under the tracking law
/// u = mu(t) + K(t) (ref_s(t) - x), where the reference branch follows the
/// plant's own event (ante before, post after). Guard and impulse pass
/// through; field Jacobians are derived from the open-loop ones.
pub fn closed_loop_fields(
    sys: &HybridSystem,
    traj: &HybridTrajectory,
    mu: &InputSignal,
    gain: GainFn,
) -> Result<HybridSystem> {
    let ante_ref = Arc::new(traj.ante_ext().clone());
    let post_ref = Arc::new(
        traj.post_ext()
            .ok_or_else(|| {
                Error::InvalidArgument("closed-loop fields need a trajectory with an event".into())
            })?
            .clone(),
    );
    let n = sys.n_state();

    let u_of = |reference: Arc<DenseSegment>| {
        let mu = mu.clone();
        let gain = gain.clone();
        move |x: &DVector<f64>, t: f64| mu.eval(t) + gain(t) * (reference.eval(t) - x)
    };

    let builder = HybridSystem::builder(n, 0);
    let (s1, s2, s3, s4, s5, s6, s7, s8) = (
        sys.clone(),
        sys.clone(),
        sys.clone(),
        sys.clone(),
        sys.clone(),
        sys.clone(),
        sys.clone(),
        sys.clone(),
    );
    let (ua_f, ua_j) = (u_of(ante_ref.clone()), u_of(ante_ref));
    let (up_f, up_j) = (u_of(post_ref.clone()), u_of(post_ref));
    let (ka, kp) = (gain.clone(), gain.clone());

    builder
        .f_ante(move |x, _, t| s1.f_ante(x, &ua_f(x, t), t))
        .f_post(move |x, _, t| s2.f_post(x, &up_f(x, t), t))
        .guard({
            let s = sys.clone();
            move |x, t| s.guard(x, t)
        })
        .impulse({
            let s = sys.clone();
            move |x, t| s.impulse(x, t)
        })
        .d1_f_ante(move |x, _, t| {
            let u = ua_j(x, t);
            s3.d1_f_ante(x, &u, t) - s3.d2_f_ante(x, &u, t) * ka(t)
        })
        .d1_f_post(move |x, _, t| {
            let u = up_j(x, t);
            s4.d1_f_post(x, &u, t) - s4.d2_f_post(x, &u, t) * kp(t)
        })
        .d2_f_ante(move |_, _, _| DMatrix::zeros(s5.n_state(), 0))
        .d2_f_post(move |_, _, _| DMatrix::zeros(s6.n_state(), 0))
        .d1_guard(move |x, t| s7.d1_guard(x, t))
        .d2_guard({
            let s = sys.clone();
            move |x, t| s.d2_guard(x, t)
        })
        .d1_impulse(move |x, t| s8.d1_impulse(x, t))
        .d2_impulse({
            let s = sys.clone();
            move |x, t| s.d2_impulse(x, t)
        })
        .build()
}

/// How the tracking controller chooses its reference branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwitchingPolicy {
    /// Ante reference until the plant's own event is detected, post after.
    Detection,
    /// At every instant, the branch whose reference is nearest the plant
    /// state.
    MinNorm,
}

/// A closed-loop tracking run sampled on the integration grid.
#[derive(Clone, Debug)]
pub struct ClosedLoopTrace {
    pub trajectory: HybridTrajectory,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub applied_input: Vec<DVector<f64>>,
    pub reference_branch: Vec<Branch>,
    /// min(||ref_ante - x||, ||ref_post - x||) at each sample.
    pub error_min_norm: Vec<f64>,
    /// ||alpha - x|| against the glued nominal trajectory at each sample.
    pub error_naive: Vec<f64>,
    /// First time the controller used the post reference.
    pub detection_time: Option<f64>,
    pub policy: SwitchingPolicy,
    nominal_ante: DenseSegment,
    nominal_post: DenseSegment,
    nominal_event_time: f64,
}

impl ClosedLoopTrace {
    pub fn nominal_event_time(&self) -> f64 {
        self.nominal_event_time
    }

    /// Distance to the glued nominal trajectory at an arbitrary time.
    pub fn error_naive_at(&self, t: f64) -> f64 {
        let x = self.trajectory.eval(t);
        let alpha = if t >= self.nominal_event_time {
            self.nominal_post.eval(t)
        } else {
            self.nominal_ante.eval(t)
        };
        (alpha - x).norm()
    }

    /// Min-norm distance to the two reference branches at an arbitrary time.
    pub fn error_min_norm_at(&self, t: f64) -> f64 {
        let x = self.trajectory.eval(t);
        let ea = (self.nominal_ante.eval(t) - &x).norm();
        let ep = (self.nominal_post.eval(t) - &x).norm();
        ea.min(ep)
    }

    pub fn sup_error_min_norm(&self) -> f64 {
        self.error_min_norm.iter().copied().fold(0.0, f64::max)
    }

    pub fn sup_error_naive(&self) -> f64 {
        self.error_naive.iter().copied().fold(0.0, f64::max)
    }
}

/// Simulates the tracking controller u = mu + K(t)(ref - x) on the plant
/// from a perturbed initial state. The plant keeps its own guard and
/// impulse; `policy` selects how the controller switches its reference
/// branch.
pub fn track(
    sys: &HybridSystem,
    traj: &HybridTrajectory,
    mu: &InputSignal,
    gain: GainFn,
    x0: &DVector<f64>,
    policy: SwitchingPolicy,
    opts: &IntegrationOptions,
) -> Result<ClosedLoopTrace> {
    let nominal_event = traj.event().ok_or_else(|| {
        Error::InvalidArgument("tracking needs a nominal trajectory with an event".into())
    })?;
    let nominal_tau = nominal_event.time;
    let ante_ref = traj.ante_ext().clone();
    let post_ref = traj
        .post_ext()
        .expect("trajectory with an event carries a post extension")
        .clone();

    let cl_sys = match policy {
        SwitchingPolicy::Detection => closed_loop_fields(sys, traj, mu, gain.clone())?,
        SwitchingPolicy::MinNorm => {
            let aa = Arc::new(ante_ref.clone());
            let ap = Arc::new(post_ref.clone());
            let pick = move |x: &DVector<f64>, t: f64| -> DVector<f64> {
                let ra = aa.eval(t);
                let rp = ap.eval(t);
                if (&ra - x).norm() <= (&rp - x).norm() {
                    ra
                } else {
                    rp
                }
            };
            let pick = Arc::new(pick);
            let mu_a = mu.clone();
            let mu_p = mu.clone();
            let (ga, gp) = (gain.clone(), gain.clone());
            let (pa, pp) = (pick.clone(), pick);
            let (s1, s2, s3, s4) = (sys.clone(), sys.clone(), sys.clone(), sys.clone());
            HybridSystem::builder(sys.n_state(), 0)
                .f_ante(move |x, _, t| {
                    let u = mu_a.eval(t) + ga(t) * (pa(x, t) - x);
                    s1.f_ante(x, &u, t)
                })
                .f_post(move |x, _, t| {
                    let u = mu_p.eval(t) + gp(t) * (pp(x, t) - x);
                    s2.f_post(x, &u, t)
                })
                .guard(move |x, t| s3.guard(x, t))
                .impulse(move |x, t| s4.impulse(x, t))
                .build()?
        }
    };

    let cl = simulate(&cl_sys, x0, &InputSignal::zero(0), traj.span(), opts)?;

    let times: Vec<f64> = cl.grid().to_vec();
    let mut states = Vec::with_capacity(times.len());
    let mut applied = Vec::with_capacity(times.len());
    let mut branches = Vec::with_capacity(times.len());
    let mut err_min = Vec::with_capacity(times.len());
    let mut err_naive = Vec::with_capacity(times.len());
    let mut detection_time = None;

    for &t in &times {
        let x = cl.eval(t);
        let ra = ante_ref.eval(t);
        let rp = post_ref.eval(t);
        let ea = (&ra - &x).norm();
        let ep = (&rp - &x).norm();
        let branch = match policy {
            SwitchingPolicy::Detection => cl.branch_at(t),
            SwitchingPolicy::MinNorm => {
                if ea <= ep {
                    Branch::Ante
                } else {
                    Branch::Post
                }
            }
        };
        if branch == Branch::Post && detection_time.is_none() {
            detection_time = Some(match policy {
                SwitchingPolicy::Detection => cl.event().map(|e| e.time).unwrap_or(t),
                SwitchingPolicy::MinNorm => t,
            });
        }
        let reference = match branch {
            Branch::Ante => &ra,
            Branch::Post => &rp,
        };
        let u = mu.eval(t) + gain(t) * (reference - &x);
        let alpha = if t >= nominal_tau { &rp } else { &ra };
        err_naive.push((alpha - &x).norm());
        err_min.push(ea.min(ep));
        states.push(x);
        applied.push(u);
        branches.push(branch);
    }

    Ok(ClosedLoopTrace {
        trajectory: cl,
        times,
        states,
        applied_input: applied,
        reference_branch: branches,
        error_min_norm: err_min,
        error_naive: err_naive,
        detection_time,
        policy,
        nominal_ante: ante_ref,
        nominal_post: post_ref,
        nominal_event_time: nominal_tau,
    })
}
