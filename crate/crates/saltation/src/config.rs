//! TOML run configuration for the command-line front end. A config names a
//! catalog model, the nominal run, and optional sensitivity, LQR, and
//! tracking sections; unknown keys are rejected so typos fail loudly.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::hybrid::IntegrationOptions;
use crate::models::{bouncing_ball, moving_wall_ball, switched_linear, CatalogEntry};
use crate::tracking::LqrWeights;

pub const DEFAULT_EPS_LADDER: [f64; 5] = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4];

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub run: RunSection,
    #[serde(default)]
    pub sensitivity: Option<SensitivitySection>,
    #[serde(default)]
    pub lqr: Option<LqrSection>,
    #[serde(default)]
    pub track: Option<TrackSection>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    BouncingBall {
        gravity: f64,
        restitution: f64,
    },
    SwitchedLinear {
        a_ante: Vec<Vec<f64>>,
        b_ante: Vec<Vec<f64>>,
        a_post: Vec<Vec<f64>>,
        b_post: Vec<Vec<f64>>,
        normal: Vec<f64>,
        offset: f64,
    },
    /// Wall position w(t) = offset + amplitude sin(frequency t + phase).
    MovingWallBall {
        gravity: f64,
        restitution: f64,
        wall_offset: f64,
        wall_amplitude: f64,
        wall_frequency: f64,
        #[serde(default)]
        wall_phase: f64,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub x0: Vec<f64>,
    pub span: [f64; 2],
    #[serde(default)]
    pub steps: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivitySection {
    /// Initial-state perturbation direction.
    pub z0: Vec<f64>,
    /// Constant input perturbation direction; defaults to zero.
    #[serde(default)]
    pub v: Option<Vec<f64>>,
    /// Scales for the convergence ladder, strictly decreasing.
    #[serde(default)]
    pub eps: Option<Vec<f64>>,
}

/// A scalar stands for that multiple of the identity; rows give the full
/// matrix.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn to_matrix(&self, dim: usize, name: &str) -> Result<DMatrix<f64>> {
        match self {
            MatrixSpec::Scalar(s) => Ok(DMatrix::identity(dim, dim) * *s),
            MatrixSpec::Rows(rows) => {
                let m = rows_to_matrix(rows, name)?;
                if m.nrows() != dim || m.ncols() != dim {
                    return Err(Error::InvalidArgument(format!(
                        "{name} must be {dim}x{dim}, got {}x{}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                Ok(m)
            }
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrSection {
    pub q: MatrixSpec,
    pub r: MatrixSpec,
    pub p_terminal: MatrixSpec,
    /// Defaults to the end of the run span.
    #[serde(default)]
    pub horizon: Option<f64>,
}

impl LqrSection {
    pub fn weights(&self, n_state: usize, n_input: usize, span_end: f64) -> Result<LqrWeights> {
        LqrWeights::constant(
            self.q.to_matrix(n_state, "lqr.q")?,
            self.r.to_matrix(n_input, "lqr.r")?,
            self.p_terminal.to_matrix(n_state, "lqr.p_terminal")?,
            self.horizon.unwrap_or(span_end),
        )
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSection {
    /// Initial-state offset applied to the nominal x0 for the tracking run.
    pub delta: Vec<f64>,
}

fn rows_to_matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} must not be empty")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidArgument(format!(
            "{name} rows must be non-empty and of equal length"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config parse error: {e}")))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidArgument(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    /// Builds the configured model with the run section's initial state and
    /// span.
    pub fn build(&self) -> Result<CatalogEntry> {
        let x0 = DVector::from_vec(self.run.x0.clone());
        let span = (self.run.span[0], self.run.span[1]);
        match &self.model {
            ModelConfig::BouncingBall {
                gravity,
                restitution,
            } => bouncing_ball(*gravity, *restitution, x0, span),
            ModelConfig::SwitchedLinear {
                a_ante,
                b_ante,
                a_post,
                b_post,
                normal,
                offset,
            } => switched_linear(
                rows_to_matrix(a_ante, "model.a_ante")?,
                rows_to_matrix(b_ante, "model.b_ante")?,
                rows_to_matrix(a_post, "model.a_post")?,
                rows_to_matrix(b_post, "model.b_post")?,
                DVector::from_vec(normal.clone()),
                *offset,
                x0,
                span,
            ),
            ModelConfig::MovingWallBall {
                gravity,
                restitution,
                wall_offset,
                wall_amplitude,
                wall_frequency,
                wall_phase,
            } => {
                let (o, a, w, p) = (*wall_offset, *wall_amplitude, *wall_frequency, *wall_phase);
                moving_wall_ball(
                    *gravity,
                    *restitution,
                    move |t| o + a * (w * t + p).sin(),
                    move |t| a * w * (w * t + p).cos(),
                    x0,
                    span,
                )
            }
        }
    }

    pub fn options(&self) -> IntegrationOptions {
        let mut opts = IntegrationOptions::default();
        if let Some(steps) = self.run.steps {
            opts.steps = steps.max(1);
        }
        opts
    }

    /// The perturbation direction pair (z0, v) and the eps ladder from the
    /// sensitivity section, validated against the model dimensions.
    pub fn perturbation(
        &self,
        n_state: usize,
        n_input: usize,
    ) -> Result<(DVector<f64>, DVector<f64>, Vec<f64>)> {
        let sect = self.sensitivity.as_ref().ok_or_else(|| {
            Error::InvalidArgument("config needs a [sensitivity] section for this command".into())
        })?;
        if sect.z0.len() != n_state {
            return Err(Error::DimensionMismatch {
                context: "sensitivity.z0",
                expected: n_state,
                actual: sect.z0.len(),
            });
        }
        let v = match &sect.v {
            Some(v) => {
                if v.len() != n_input {
                    return Err(Error::DimensionMismatch {
                        context: "sensitivity.v",
                        expected: n_input,
                        actual: v.len(),
                    });
                }
                DVector::from_vec(v.clone())
            }
            None => DVector::zeros(n_input),
        };
        let eps = sect
            .eps
            .clone()
            .unwrap_or_else(|| DEFAULT_EPS_LADDER.to_vec());
        Ok((DVector::from_vec(sect.z0.clone()), v, eps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BALL_TOML: &str = r#"
        [model]
        name = "bouncing_ball"
        gravity = 9.81
        restitution = 0.5

        [run]
        x0 = [1.0, 0.0]
        span = [0.0, 0.8]
        steps = 1500

        [sensitivity]
        z0 = [1.0, 0.0]
        eps = [1e-2, 1e-3]

        [lqr]
        q = 1.0
        r = [[2.0]]
        p_terminal = [[1.0, 0.0], [0.0, 3.0]]

        [track]
        delta = [0.01, 0.0]
    "#;

    #[test]
    fn full_config_parses_and_builds() {
        let cfg = RunConfig::from_toml_str(BALL_TOML).unwrap();
        let entry = cfg.build().unwrap();
        assert_eq!(entry.name, "bouncing_ball");
        assert_eq!(entry.span, (0.0, 0.8));
        assert_eq!(cfg.options().steps, 1500);

        let (z0, v, eps) = cfg.perturbation(2, 1).unwrap();
        assert_eq!(z0.as_slice(), &[1.0, 0.0]);
        assert_eq!(v.as_slice(), &[0.0], "input direction defaults to zero");
        assert_eq!(eps, vec![1e-2, 1e-3]);

        let weights = cfg.lqr.as_ref().unwrap().weights(2, 1, 0.8).unwrap();
        assert_eq!(weights.q(0.0), DMatrix::identity(2, 2));
        assert_eq!(weights.r(0.0)[(0, 0)], 2.0);
        assert_eq!(weights.p_terminal()[(1, 1)], 3.0);
        assert_eq!(weights.horizon(), 0.8, "horizon defaults to the span end");

        assert_eq!(cfg.track.as_ref().unwrap().delta, vec![0.01, 0.0]);
    }

    #[test]
    fn unknown_keys_fail_loudly() {
        let bad = BALL_TOML.replace("steps = 1500", "steps = 1500\n        stepz = 2");
        let err = RunConfig::from_toml_str(&bad).unwrap_err();
        assert!(err.to_string().contains("parse error"), "got {err}");
    }

    #[test]
    fn missing_sensitivity_section_is_reported() {
        let text = r#"
            [model]
            name = "bouncing_ball"
            gravity = 9.81
            restitution = 1.0

            [run]
            x0 = [1.0, 0.0]
            span = [0.0, 0.8]
        "#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert!(matches!(
            cfg.perturbation(2, 1).unwrap_err(),
            Error::InvalidArgument(_)
        ));
        // Defaults kick in when no sections are present.
        assert_eq!(cfg.options().steps, IntegrationOptions::default().steps);
    }

    #[test]
    fn perturbation_dimensions_are_checked() {
        let bad_z0 = BALL_TOML.replace("z0 = [1.0, 0.0]", "z0 = [1.0]");
        let cfg = RunConfig::from_toml_str(&bad_z0).unwrap();
        assert!(matches!(
            cfg.perturbation(2, 1).unwrap_err(),
            Error::DimensionMismatch { .. }
        ));

        let bad_v = BALL_TOML.replace("eps = [1e-2, 1e-3]", "v = [1.0, 2.0]");
        let cfg = RunConfig::from_toml_str(&bad_v).unwrap();
        assert!(matches!(
            cfg.perturbation(2, 1).unwrap_err(),
            Error::DimensionMismatch { .. }
        ));
    }

    #[test]
    fn eps_ladder_defaults_when_omitted() {
        let text = BALL_TOML.replace("eps = [1e-2, 1e-3]", "");
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        let (_, _, eps) = cfg.perturbation(2, 1).unwrap();
        assert_eq!(eps, DEFAULT_EPS_LADDER.to_vec());
    }

    #[test]
    fn matrix_specs_cover_scalar_and_rows() {
        let spec = MatrixSpec::Scalar(2.5);
        assert_eq!(
            spec.to_matrix(2, "q").unwrap(),
            DMatrix::identity(2, 2) * 2.5
        );

        let spec = MatrixSpec::Rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let m = spec.to_matrix(2, "q").unwrap();
        assert_eq!(m[(0, 1)], 2.0);
        assert_eq!(m[(1, 0)], 3.0);

        let wrong = MatrixSpec::Rows(vec![vec![1.0]]);
        assert!(wrong.to_matrix(2, "q").is_err());
        let ragged = MatrixSpec::Rows(vec![vec![1.0, 2.0], vec![3.0]]);
        assert!(ragged.to_matrix(2, "q").is_err());
    }

    #[test]
    fn other_model_variants_build() {
        let text = r#"
            [model]
            name = "switched_linear"
            a_ante = [[0.0, -1.0], [1.0, 0.0]]
            b_ante = [[0.0], [0.0]]
            a_post = [[0.0, -1.0], [1.0, -0.5]]
            b_post = [[0.0], [0.0]]
            normal = [1.0, 0.0]
            offset = 0.0

            [run]
            x0 = [-1.0, 0.0]
            span = [0.0, 2.5]
        "#;
        let entry = RunConfig::from_toml_str(text).unwrap().build().unwrap();
        assert_eq!(entry.name, "switched_linear");

        let text = r#"
            [model]
            name = "moving_wall_ball"
            gravity = 9.81
            restitution = 0.5
            wall_offset = 0.1
            wall_amplitude = 0.05
            wall_frequency = 3.0

            [run]
            x0 = [1.0, 0.0]
            span = [0.0, 0.8]
        "#;
        let entry = RunConfig::from_toml_str(text).unwrap().build().unwrap();
        assert_eq!(entry.name, "moving_wall_ball");
        // Default phase keeps the wall at the offset at t = 0.
        let g0 = entry.system.guard(&entry.x0, 0.0);
        assert!((g0 - (1.0 - 0.1)).abs() <= 1e-15);
    }
}
