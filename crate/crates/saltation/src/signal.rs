use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};

type SignalFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// An open-loop input signal t -> R^m.
///
/// Signals are immutable and cheap to clone; evaluation is safe from
/// multiple threads.
#[derive(Clone)]
pub struct InputSignal {
    dim: usize,
    eval: SignalFn,
}

impl InputSignal {
    /// The zero signal of dimension `dim` (`dim` may be 0 for autonomous systems).
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            eval: Arc::new(move |_| DVector::zeros(dim)),
        }
    }

    /// A constant signal.
    pub fn constant(value: DVector<f64>) -> Self {
        let dim = value.len();
        Self {
            dim,
            eval: Arc::new(move |_| value.clone()),
        }
    }

    /// A signal backed by an arbitrary closure. The closure must return
    /// vectors of length `dim` for every t; this is checked on evaluation.
    pub fn from_fn(dim: usize, f: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static) -> Self {
        Self {
            dim,
            eval: Arc::new(f),
        }
    }

    /// A piecewise-constant signal: `values[k]` holds on `[times[k], times[k+1])`,
    /// clamped to the first/last value outside the grid.
    pub fn piecewise_constant(times: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidArgument(
                "piecewise-constant signal needs equally many times and values".into(),
            ));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "piecewise-constant signal times must be strictly increasing".into(),
            ));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::InvalidArgument(
                "piecewise-constant signal values must share one dimension".into(),
            ));
        }
        Ok(Self {
            dim,
            eval: Arc::new(move |t| {
                let k = times.partition_point(|&tk| tk <= t);
                values[k.saturating_sub(1)].clone()
            }),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let v = (self.eval)(t);
        assert_eq!(
            v.len(),
            self.dim,
            "input signal returned a vector of wrong dimension at t = {t}"
        );
        v
    }

    /// The signal t -> self(t) + scale * other(t). Used to form perturbed
    /// inputs mu + eps * v.
    pub fn add_scaled(&self, other: &InputSignal, scale: f64) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                context: "input signal sum",
                expected: self.dim,
                actual: other.dim,
            });
        }
        let a = self.clone();
        let b = other.clone();
        Ok(Self {
            dim: self.dim,
            eval: Arc::new(move |t| a.eval(t) + b.eval(t) * scale),
        })
    }
}

impl std::fmt::Debug for InputSignal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InputSignal")
            .field("dim", &self.dim)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_signal_evaluates_everywhere() {
        let s = InputSignal::constant(DVector::from_vec(vec![1.0, -2.0]));
        assert_eq!(s.dim(), 2);
        assert_eq!(s.eval(-3.0), DVector::from_vec(vec![1.0, -2.0]));
        assert_eq!(s.eval(7.5), DVector::from_vec(vec![1.0, -2.0]));
    }

    #[test]
    fn zero_signal_supports_empty_dimension() {
        let s = InputSignal::zero(0);
        assert_eq!(s.eval(1.0).len(), 0);
    }

    #[test]
    fn piecewise_constant_clamps_outside_grid() {
        let s = InputSignal::piecewise_constant(
            vec![0.0, 1.0, 2.0],
            vec![
                DVector::from_element(1, 10.0),
                DVector::from_element(1, 20.0),
                DVector::from_element(1, 30.0),
            ],
        )
        .unwrap();
        assert_eq!(s.eval(-1.0)[0], 10.0);
        assert_eq!(s.eval(0.5)[0], 10.0);
        assert_eq!(s.eval(1.0)[0], 20.0);
        assert_eq!(s.eval(1.99)[0], 20.0);
        assert_eq!(s.eval(5.0)[0], 30.0);
    }

    #[test]
    fn piecewise_constant_rejects_unsorted_times() {
        let r = InputSignal::piecewise_constant(
            vec![0.0, 0.0],
            vec![DVector::zeros(1), DVector::zeros(1)],
        );
        assert!(r.is_err());
    }

    #[test]
    fn add_scaled_combines_signals() {
        let a = InputSignal::constant(DVector::from_element(1, 1.0));
        let b = InputSignal::from_fn(1, |t| DVector::from_element(1, t));
        let c = a.add_scaled(&b, 0.5).unwrap();
        assert_eq!(c.eval(4.0)[0], 3.0);
    }

    #[test]
    fn add_scaled_rejects_dimension_mismatch() {
        let a = InputSignal::zero(1);
        let b = InputSignal::zero(2);
        assert!(a.add_scaled(&b, 1.0).is_err());
    }
}
