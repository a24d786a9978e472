//! Output formatting: CSV emitters with fixed 17-significant-digit floats
//! (so repeated runs are byte-identical) and serializable JSON summaries.

use std::io::{self, Write};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::hybrid::{Branch, EventRecord, HybridTrajectory};
use crate::sensitivity::{ConvergenceStudy, JumpLinearization, LinearizedTrajectory};
use crate::tracking::{ClosedLoopTrace, RiccatiSolution, SwitchingPolicy};

/// Lowercase scientific notation with 16 fractional digits: 17 significant
/// digits, enough to round-trip any f64 bit pattern.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn branch_name(b: Branch) -> &'static str {
    match b {
        Branch::Ante => "ante",
        Branch::Post => "post",
    }
}

/// NaN and infinities are not representable in JSON; map them to null.
fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn write_row(w: &mut dyn Write, fields: &[String]) -> io::Result<()> {
    writeln!(w, "{}", fields.join(","))
}

/// Glued state samples over the simulation grid.
pub fn write_trajectory_csv(w: &mut dyn Write, traj: &HybridTrajectory) -> io::Result<()> {
    let n = traj.initial_state().len();
    let mut header = vec!["time".to_string(), "branch".to_string()];
    header.extend((0..n).map(|i| format!("x_{i}")));
    write_row(w, &header)?;
    for &t in traj.grid() {
        let x = traj.eval(t);
        let mut row = vec![fmt_float(t), branch_name(traj.branch_at(t)).to_string()];
        row.extend(x.iter().map(|v| fmt_float(*v)));
        write_row(w, &row)?;
    }
    Ok(())
}

/// Knots of both extended perturbation trajectories, labeled by branch.
pub fn write_sensitivity_csv(w: &mut dyn Write, lt: &LinearizedTrajectory) -> io::Result<()> {
    let n = lt.z0.len();
    let mut header = vec!["time".to_string(), "branch".to_string()];
    header.extend((0..n).map(|i| format!("z_{i}")));
    write_row(w, &header)?;
    let mut emit = |name: &str, seg: &crate::ode::DenseSegment| -> io::Result<()> {
        for (t, z) in seg.times().iter().zip(seg.states()) {
            let mut row = vec![fmt_float(*t), name.to_string()];
            row.extend(z.iter().map(|v| fmt_float(*v)));
            write_row(w, &row)?;
        }
        Ok(())
    };
    emit("ante", &lt.z_ante)?;
    if let Some(post) = &lt.z_post {
        emit("post", post)?;
    }
    Ok(())
}

/// One row per perturbation scale of the convergence ladder.
pub fn write_convergence_csv(w: &mut dyn Write, study: &ConvergenceStudy) -> io::Result<()> {
    write_row(
        w,
        &[
            "eps".into(),
            "state_error".into(),
            "event_time_error".into(),
            "true_event_time".into(),
            "predicted_event_time".into(),
        ],
    )?;
    let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
    for row in &study.rows {
        write_row(
            w,
            &[
                fmt_float(row.eps),
                fmt_float(row.state_error),
                opt(row.event_time_error),
                opt(row.true_event_time),
                opt(row.predicted_event_time),
            ],
        )?;
    }
    Ok(())
}

/// Gain schedule samples K(t), row-major entries.
pub fn write_gains_csv(w: &mut dyn Write, sol: &RiccatiSolution, times: &[f64]) -> io::Result<()> {
    if times.is_empty() {
        return Ok(());
    }
    let k0 = sol.gain(times[0]);
    let mut header = vec!["time".to_string()];
    for i in 0..k0.nrows() {
        for j in 0..k0.ncols() {
            header.push(format!("k_{i}_{j}"));
        }
    }
    write_row(w, &header)?;
    for &t in times {
        let k = sol.gain(t);
        let mut row = vec![fmt_float(t)];
        for i in 0..k.nrows() {
            for j in 0..k.ncols() {
                row.push(fmt_float(k[(i, j)]));
            }
        }
        write_row(w, &row)?;
    }
    Ok(())
}

/// Closed-loop tracking samples with both error measures.
pub fn write_tracking_csv(w: &mut dyn Write, trace: &ClosedLoopTrace) -> io::Result<()> {
    let n = trace.states.first().map(|x| x.len()).unwrap_or(0);
    let m = trace.applied_input.first().map(|u| u.len()).unwrap_or(0);
    let mut header = vec!["time".to_string(), "reference_branch".to_string()];
    header.extend((0..n).map(|i| format!("x_{i}")));
    header.extend((0..m).map(|i| format!("u_{i}")));
    header.push("error_min_norm".into());
    header.push("error_naive".into());
    write_row(w, &header)?;
    for (i, &t) in trace.times.iter().enumerate() {
        let mut row = vec![
            fmt_float(t),
            branch_name(trace.reference_branch[i]).to_string(),
        ];
        row.extend(trace.states[i].iter().map(|v| fmt_float(*v)));
        row.extend(trace.applied_input[i].iter().map(|v| fmt_float(*v)));
        row.push(fmt_float(trace.error_min_norm[i]));
        row.push(fmt_float(trace.error_naive[i]));
        write_row(w, &row)?;
    }
    Ok(())
}

#[derive(Serialize)]
pub struct EventJson {
    pub found: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guard_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guard_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pre_state: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub post_state: Option<Vec<f64>>,
}

impl EventJson {
    pub fn from_record(event: Option<&EventRecord>) -> Self {
        match event {
            Some(e) => EventJson {
                found: true,
                time: Some(e.time),
                guard_rate: Some(e.guard_rate),
                guard_residual: Some(e.guard_residual),
                pre_state: Some(e.pre_state.iter().copied().collect()),
                post_state: Some(e.post_state.iter().copied().collect()),
            },
            None => EventJson {
                found: false,
                time: None,
                guard_rate: None,
                guard_residual: None,
                pre_state: None,
                post_state: None,
            },
        }
    }
}

#[derive(Serialize)]
pub struct JumpJson {
    pub event: EventJson,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jump_gain: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transfer: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_prime: Option<f64>,
    pub state_slopes: Vec<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_fit_slope: Option<f64>,
    pub event_time_slopes: Vec<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event_time_fit_slope: Option<f64>,
}

impl JumpJson {
    pub fn new(
        traj: &HybridTrajectory,
        lin: &JumpLinearization,
        lt: &LinearizedTrajectory,
        study: &ConvergenceStudy,
    ) -> Self {
        JumpJson {
            event: EventJson::from_record(traj.event()),
            jump_gain: lin.jump.as_ref().map(|j| matrix_rows(&j.gain)),
            transfer: lin.jump.as_ref().map(|j| matrix_rows(&j.transfer())),
            tau_prime: lt.tau_prime,
            state_slopes: study.state_slopes.iter().map(|&s| finite(s)).collect(),
            state_fit_slope: study.state_fit_slope.and_then(finite),
            event_time_slopes: study.event_time_slopes.iter().map(|&s| finite(s)).collect(),
            event_time_fit_slope: study.event_time_fit_slope.and_then(finite),
        }
    }
}

#[derive(Serialize)]
pub struct ValueCheckJson {
    pub z0: Vec<f64>,
    pub predicted: f64,
    pub simulated: f64,
    pub relative_error: f64,
}

#[derive(Serialize)]
pub struct RiccatiJson {
    pub event_time: f64,
    pub horizon: f64,
    pub reset_residual: f64,
    pub max_symmetry_drift: f64,
    pub max_r_condition: f64,
    pub p_initial: Vec<Vec<f64>>,
    pub p_minus: Vec<Vec<f64>>,
    pub p_plus: Vec<Vec<f64>>,
    pub gain_before_event: Vec<Vec<f64>>,
    pub gain_after_event: Vec<Vec<f64>>,
    pub value_checks: Vec<ValueCheckJson>,
}

impl RiccatiJson {
    pub fn new(sol: &RiccatiSolution, value_checks: Vec<ValueCheckJson>) -> Self {
        let tau = sol.tau();
        let t0 = sol.ante_segment().start_time();
        let shift = 1e-9 * (1.0 + tau.abs());
        RiccatiJson {
            event_time: tau,
            horizon: sol.horizon(),
            reset_residual: sol.reset_residual(),
            max_symmetry_drift: sol.max_symmetry_drift(),
            max_r_condition: sol.max_r_condition(),
            p_initial: matrix_rows(&sol.p(t0)),
            p_minus: matrix_rows(sol.p_minus_at_tau()),
            p_plus: matrix_rows(sol.p_plus_at_tau()),
            gain_before_event: matrix_rows(&sol.gain(tau - shift)),
            gain_after_event: matrix_rows(&sol.gain(tau)),
            value_checks,
        }
    }
}

#[derive(Serialize)]
pub struct TrackingJson {
    pub policy: String,
    pub nominal_event_time: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_loop_event_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection_time: Option<f64>,
    pub sup_error_min_norm: f64,
    pub sup_error_naive: f64,
}

impl TrackingJson {
    pub fn new(trace: &ClosedLoopTrace) -> Self {
        TrackingJson {
            policy: match trace.policy {
                SwitchingPolicy::Detection => "detection".into(),
                SwitchingPolicy::MinNorm => "min_norm".into(),
            },
            nominal_event_time: trace.nominal_event_time(),
            closed_loop_event_time: trace.trajectory.event().map(|e| e.time),
            detection_time: trace.detection_time,
            sup_error_min_norm: trace.sup_error_min_norm(),
            sup_error_naive: trace.sup_error_naive(),
        }
    }
}
