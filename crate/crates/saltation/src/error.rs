use thiserror::Error;

/// Failure modes of simulation, event location, and gain synthesis.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("integration produced a non-finite state at t = {time}")]
    IntegrationFailure { time: f64 },

    #[error("no sign change of the guard over [{left}, {right}]")]
    NoSignChange { left: f64, right: f64 },

    #[error(
        "event located at t = {time} with |guard| = {residual:.3e} above the tolerance {tolerance:.3e}"
    )]
    EventResidual {
        time: f64,
        residual: f64,
        tolerance: f64,
    },

    #[error(
        "grazing guard crossing at t = {time}: |dg/dt| = {rate:.3e} is below the transversality tolerance {tolerance:.3e}"
    )]
    GrazingEvent {
        time: f64,
        rate: f64,
        tolerance: f64,
    },

    #[error(
        "transversality violated at t = {time}: |dg/dt| = {rate:.3e} is below the tolerance {tolerance:.3e}"
    )]
    TransversalityViolated {
        time: f64,
        rate: f64,
        tolerance: f64,
    },

    #[error("Riccati solution norm {norm:.3e} exceeded {threshold:.3e} at t = {time}")]
    RiccatiBlowup {
        time: f64,
        norm: f64,
        threshold: f64,
    },

    #[error("Riccati symmetry drift {drift:.3e} above {tolerance:.3e} at t = {time}")]
    NonSymmetricDrift {
        time: f64,
        drift: f64,
        tolerance: f64,
    },

    #[error("perturbed run at eps = {eps:.3e} lost the guard crossing of the nominal trajectory")]
    EventLost { eps: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
