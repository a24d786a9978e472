use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type FieldFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64> + Send + Sync>;
pub type GuardFn = Arc<dyn Fn(&DVector<f64>, f64) -> f64 + Send + Sync>;
pub type ResetFn = Arc<dyn Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync>;
pub type FieldJacFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>, f64) -> DMatrix<f64> + Send + Sync>;
pub type ResetJacFn = Arc<dyn Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync>;
pub type ResetRateFn = Arc<dyn Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync>;
pub type GuardGradFn = Arc<dyn Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync>;
pub type GuardRateFn = Arc<dyn Fn(&DVector<f64>, f64) -> f64 + Send + Sync>;

/// Finite-difference step for the component with magnitude `v`.
fn fd_step(v: f64) -> f64 {
    1e-6 * v.abs().max(1.0)
}

/// A hybrid system with one state-triggered jump: flow by the ante field
/// until the guard crosses zero, apply the state impulse, then flow by the
/// post field.
///
/// Analytic derivatives are optional; any that are absent are filled by
/// central finite differences with per-component step `1e-6 * max(1, |v|)`.
/// All callables must be pure; they may be evaluated concurrently.
#[derive(Clone)]
pub struct HybridSystem {
    n_state: usize,
    n_input: usize,
    f_ante: FieldFn,
    f_post: FieldFn,
    guard: GuardFn,
    impulse: ResetFn,
    d1_f_ante: Option<FieldJacFn>,
    d2_f_ante: Option<FieldJacFn>,
    d1_f_post: Option<FieldJacFn>,
    d2_f_post: Option<FieldJacFn>,
    d1_guard: Option<GuardGradFn>,
    d2_guard: Option<GuardRateFn>,
    d1_impulse: Option<ResetJacFn>,
    d2_impulse: Option<ResetRateFn>,
}

impl std::fmt::Debug for HybridSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HybridSystem")
            .field("n_state", &self.n_state)
            .field("n_input", &self.n_input)
            .finish()
    }
}

impl HybridSystem {
    pub fn builder(n_state: usize, n_input: usize) -> HybridSystemBuilder {
        HybridSystemBuilder {
            n_state,
            n_input,
            f_ante: None,
            f_post: None,
            guard: None,
            impulse: None,
            d1_f_ante: None,
            d2_f_ante: None,
            d1_f_post: None,
            d2_f_post: None,
            d1_guard: None,
            d2_guard: None,
            d1_impulse: None,
            d2_impulse: None,
        }
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn n_input(&self) -> usize {
        self.n_input
    }

    /// Evaluates every callable once at the given point and checks output
    /// dimensions. Called at the entry of simulation routines so later
    /// evaluations can rely on plain length asserts.
    pub fn validate_at(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<()> {
        let check = |context: &'static str, actual: usize, expected: usize| {
            if actual == expected {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    context,
                    expected,
                    actual,
                })
            }
        };
        check("state", x.len(), self.n_state)?;
        check("input", u.len(), self.n_input)?;
        check(
            "ante field output",
            (self.f_ante)(x, u, t).len(),
            self.n_state,
        )?;
        check(
            "post field output",
            (self.f_post)(x, u, t).len(),
            self.n_state,
        )?;
        let _ = (self.guard)(x, t);
        check("impulse output", (self.impulse)(x, t).len(), self.n_state)?;
        Ok(())
    }

    pub fn f_ante(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DVector<f64> {
        let v = (self.f_ante)(x, u, t);
        assert_eq!(v.len(), self.n_state, "ante field returned wrong dimension");
        v
    }

    pub fn f_post(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DVector<f64> {
        let v = (self.f_post)(x, u, t);
        assert_eq!(v.len(), self.n_state, "post field returned wrong dimension");
        v
    }

    pub fn guard(&self, x: &DVector<f64>, t: f64) -> f64 {
        (self.guard)(x, t)
    }

    pub fn impulse(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        let v = (self.impulse)(x, t);
        assert_eq!(v.len(), self.n_state, "impulse returned wrong dimension");
        v
    }

    pub fn guard_fn(&self) -> GuardFn {
        Arc::clone(&self.guard)
    }

    /// State Jacobian of the ante field, n x n.
    pub fn d1_f_ante(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DMatrix<f64> {
        match &self.d1_f_ante {
            Some(j) => j(x, u, t),
            None => fd_state_jacobian(|y, s| (self.f_ante)(y, u, s), x, t, self.n_state),
        }
    }

    /// Input Jacobian of the ante field, n x m.
    pub fn d2_f_ante(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DMatrix<f64> {
        match &self.d2_f_ante {
            Some(j) => j(x, u, t),
            None => fd_input_jacobian(|w, s| (self.f_ante)(x, w, s), u, t, self.n_state),
        }
    }

    /// State Jacobian of the post field, n x n.
    pub fn d1_f_post(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DMatrix<f64> {
        match &self.d1_f_post {
            Some(j) => j(x, u, t),
            None => fd_state_jacobian(|y, s| (self.f_post)(y, u, s), x, t, self.n_state),
        }
    }

    /// Input Jacobian of the post field, n x m.
    pub fn d2_f_post(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DMatrix<f64> {
        match &self.d2_f_post {
            Some(j) => j(x, u, t),
            None => fd_input_jacobian(|w, s| (self.f_post)(x, w, s), u, t, self.n_state),
        }
    }

    /// State gradient of the guard, returned as a length-n vector.
    pub fn d1_guard(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        match &self.d1_guard {
            Some(j) => j(x, t),
            None => fd_state_gradient(|y, s| (self.guard)(y, s), x, t),
        }
    }

    /// Time partial of the guard.
    pub fn d2_guard(&self, x: &DVector<f64>, t: f64) -> f64 {
        match &self.d2_guard {
            Some(j) => j(x, t),
            None => {
                let h = fd_step(t);
                ((self.guard)(x, t + h) - (self.guard)(x, t - h)) / (2.0 * h)
            }
        }
    }

    /// State Jacobian of the impulse, n x n.
    pub fn d1_impulse(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64> {
        match &self.d1_impulse {
            Some(j) => j(x, t),
            None => fd_state_jacobian(|y, s| (self.impulse)(y, s), x, t, self.n_state),
        }
    }

    /// Time partial of the impulse, length n.
    pub fn d2_impulse(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        match &self.d2_impulse {
            Some(j) => j(x, t),
            None => {
                let h = fd_step(t);
                ((self.impulse)(x, t + h) - (self.impulse)(x, t - h)) / (2.0 * h)
            }
        }
    }
}

/// Central-difference Jacobian with respect to the state.
fn fd_state_jacobian(
    f: impl Fn(&DVector<f64>, f64) -> DVector<f64>,
    x: &DVector<f64>,
    t: f64,
    n_out: usize,
) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n_out, n);
    let mut xp = x.clone();
    let mut xm = x.clone();
    for i in 0..n {
        let h = fd_step(x[i]);
        xp[i] = x[i] + h;
        xm[i] = x[i] - h;
        let col = (f(&xp, t) - f(&xm, t)) / (2.0 * h);
        jac.set_column(i, &col);
        xp[i] = x[i];
        xm[i] = x[i];
    }
    jac
}

/// Central-difference Jacobian with respect to the input.
fn fd_input_jacobian(
    f: impl Fn(&DVector<f64>, f64) -> DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    n_out: usize,
) -> DMatrix<f64> {
    let m = u.len();
    let mut jac = DMatrix::zeros(n_out, m);
    let mut up = u.clone();
    let mut um = u.clone();
    for i in 0..m {
        let h = fd_step(u[i]);
        up[i] = u[i] + h;
        um[i] = u[i] - h;
        let col = (f(&up, t) - f(&um, t)) / (2.0 * h);
        jac.set_column(i, &col);
        up[i] = u[i];
        um[i] = u[i];
    }
    jac
}

/// Central-difference gradient of a scalar function of the state.
fn fd_state_gradient(
    g: impl Fn(&DVector<f64>, f64) -> f64,
    x: &DVector<f64>,
    t: f64,
) -> DVector<f64> {
    let n = x.len();
    let mut grad = DVector::zeros(n);
    let mut xp = x.clone();
    let mut xm = x.clone();
    for i in 0..n {
        let h = fd_step(x[i]);
        xp[i] = x[i] + h;
        xm[i] = x[i] - h;
        grad[i] = (g(&xp, t) - g(&xm, t)) / (2.0 * h);
        xp[i] = x[i];
        xm[i] = x[i];
    }
    grad
}

pub struct HybridSystemBuilder {
    n_state: usize,
    n_input: usize,
    f_ante: Option<FieldFn>,
    f_post: Option<FieldFn>,
    guard: Option<GuardFn>,
    impulse: Option<ResetFn>,
    d1_f_ante: Option<FieldJacFn>,
    d2_f_ante: Option<FieldJacFn>,
    d1_f_post: Option<FieldJacFn>,
    d2_f_post: Option<FieldJacFn>,
    d1_guard: Option<GuardGradFn>,
    d2_guard: Option<GuardRateFn>,
    d1_impulse: Option<ResetJacFn>,
    d2_impulse: Option<ResetRateFn>,
}

impl HybridSystemBuilder {
    pub fn f_ante(
        mut self,
        f: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.f_ante = Some(Arc::new(f));
        self
    }

    /// Defaults to the ante field when omitted (pure state-jump systems).
    pub fn f_post(
        mut self,
        f: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.f_post = Some(Arc::new(f));
        self
    }

    pub fn guard(mut self, g: impl Fn(&DVector<f64>, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.guard = Some(Arc::new(g));
        self
    }

    /// Defaults to the zero map (mode switch without state jump) when omitted.
    pub fn impulse(
        mut self,
        d: impl Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.impulse = Some(Arc::new(d));
        self
    }

    pub fn d1_f_ante(
        mut self,
        j: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.d1_f_ante = Some(Arc::new(j));
        self
    }

    pub fn d2_f_ante(
        mut self,
        j: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.d2_f_ante = Some(Arc::new(j));
        self
    }

    pub fn d1_f_post(
        mut self,
        j: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.d1_f_post = Some(Arc::new(j));
        self
    }

    pub fn d2_f_post(
        mut self,
        j: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.d2_f_post = Some(Arc::new(j));
        self
    }

    pub fn d1_guard(
        mut self,
        j: impl Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.d1_guard = Some(Arc::new(j));
        self
    }

    pub fn d2_guard(
        mut self,
        j: impl Fn(&DVector<f64>, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.d2_guard = Some(Arc::new(j));
        self
    }

    pub fn d1_impulse(
        mut self,
        j: impl Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.d1_impulse = Some(Arc::new(j));
        self
    }

    pub fn d2_impulse(
        mut self,
        j: impl Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.d2_impulse = Some(Arc::new(j));
        self
    }

    pub fn build(self) -> Result<HybridSystem> {
        if self.n_state == 0 {
            return Err(Error::InvalidArgument(
                "state dimension must be positive".into(),
            ));
        }
        let f_ante = self
            .f_ante
            .ok_or_else(|| Error::InvalidArgument("ante vector field is required".into()))?;
        let guard = self
            .guard
            .ok_or_else(|| Error::InvalidArgument("guard function is required".into()))?;
        let f_post = self.f_post.unwrap_or_else(|| Arc::clone(&f_ante));
        let n = self.n_state;
        let impulse: ResetFn = self
            .impulse
            .unwrap_or_else(|| Arc::new(move |_: &DVector<f64>, _| DVector::zeros(n)));
        Ok(HybridSystem {
            n_state: self.n_state,
            n_input: self.n_input,
            f_ante,
            f_post,
            guard,
            impulse,
            d1_f_ante: self.d1_f_ante,
            d2_f_ante: self.d2_f_ante,
            d1_f_post: self.d1_f_post,
            d2_f_post: self.d2_f_post,
            d1_guard: self.d1_guard,
            d2_guard: self.d2_guard,
            d1_impulse: self.d1_impulse,
            d2_impulse: self.d2_impulse,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_send_sync<T: Send + Sync>() {}

    #[test]
    fn system_is_send_and_sync() {
        assert_send_sync::<HybridSystem>();
        assert_send_sync::<crate::signal::InputSignal>();
    }

    fn double_integrator() -> HybridSystem {
        HybridSystem::builder(2, 1)
            .f_ante(|x, u, _| DVector::from_vec(vec![x[1], u[0]]))
            .guard(|x, _| x[0])
            .build()
            .unwrap()
    }

    #[test]
    fn builder_requires_field_and_guard() {
        assert!(HybridSystem::builder(2, 0).build().is_err());
        assert!(HybridSystem::builder(2, 0)
            .f_ante(|x, _, _| x.clone())
            .build()
            .is_err());
    }

    #[test]
    fn post_field_defaults_to_ante() {
        let sys = double_integrator();
        let x = DVector::from_vec(vec![0.5, -1.0]);
        let u = DVector::from_element(1, 2.0);
        assert_eq!(sys.f_ante(&x, &u, 0.0), sys.f_post(&x, &u, 0.0));
    }

    #[test]
    fn impulse_defaults_to_zero_map() {
        let sys = double_integrator();
        let x = DVector::from_vec(vec![0.5, -1.0]);
        assert_eq!(sys.impulse(&x, 0.0), DVector::zeros(2));
    }

    #[test]
    fn fd_jacobians_match_linear_field_exactly() {
        let sys = double_integrator();
        let x = DVector::from_vec(vec![0.3, 0.7]);
        let u = DVector::from_element(1, -0.2);
        let a = sys.d1_f_ante(&x, &u, 0.0);
        let b = sys.d2_f_ante(&x, &u, 0.0);
        let a_expect = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b_expect = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!((a - a_expect).norm() < 1e-8);
        assert!((b - b_expect).norm() < 1e-8);
    }

    #[test]
    fn fd_gradient_matches_nonlinear_guard() {
        let sys = HybridSystem::builder(2, 0)
            .f_ante(|x, _, _| x.clone())
            .guard(|x, t| x[0] * x[0] + 3.0 * x[1] - t * t)
            .build()
            .unwrap();
        let x = DVector::from_vec(vec![2.0, -1.0]);
        let grad = sys.d1_guard(&x, 0.5);
        assert!((grad[0] - 4.0).abs() < 1e-7);
        assert!((grad[1] - 3.0).abs() < 1e-7);
        assert!((sys.d2_guard(&x, 0.5) + 1.0).abs() < 1e-7);
    }

    #[test]
    fn analytic_jacobians_take_precedence() {
        let sys = HybridSystem::builder(1, 0)
            .f_ante(|x, _, _| x.clone())
            .guard(|x, _| x[0])
            .d1_guard(|_, _| DVector::from_element(1, 42.0))
            .build()
            .unwrap();
        assert_eq!(sys.d1_guard(&DVector::zeros(1), 0.0)[0], 42.0);
    }

    #[test]
    fn validate_reports_bad_dimensions() {
        let sys = HybridSystem::builder(2, 1)
            .f_ante(|_, _, _| DVector::zeros(3))
            .guard(|x, _| x[0])
            .build()
            .unwrap();
        let err = sys
            .validate_at(&DVector::zeros(2), &DVector::zeros(1), 0.0)
            .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }
}
