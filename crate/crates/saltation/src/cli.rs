//! Command-line front end. Exit codes: 0 on success, 2 for configuration
//! or validation problems, 1 for numerical or I/O failures at run time.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::Error;
use crate::hybrid::simulate;
use crate::report::{
    write_convergence_csv, write_gains_csv, write_sensitivity_csv, write_tracking_csv,
    write_trajectory_csv, EventJson, JumpJson, RiccatiJson, TrackingJson, ValueCheckJson,
};
use crate::sensitivity::{convergence_study, linearize, propagate_linearization};
use crate::signal::InputSignal;
use crate::tracking::{lqr_cost, riccati_with_jumps, track, LinearPolicy, SwitchingPolicy};

#[derive(Parser)]
#[command(
    name = "saltation",
    version,
    about = "Sensitivity analysis and tracking control for hybrid systems with state-triggered jumps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Simulate the nominal trajectory and report the detected event.
    Simulate(CommonArgs),
    /// Linearize along the trajectory, propagate perturbations, and run
    /// the convergence ladder.
    Sensitize(CommonArgs),
    /// Solve the backward Riccati pass with the jump reset and export the
    /// gain schedule.
    Synthesize(SynthesizeArgs),
    /// Run the closed-loop tracking controller from a perturbed start.
    Track(TrackArgs),
}

#[derive(Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SynthesizeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Seed for the randomized value-function cross-checks.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct TrackArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// How the controller switches its reference branch.
    #[arg(long, value_enum, default_value_t = PolicyArg::Detection)]
    pub policy: PolicyArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum PolicyArg {
    Detection,
    MinNorm,
}

impl From<PolicyArg> for SwitchingPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Detection => SwitchingPolicy::Detection,
            PolicyArg::MinNorm => SwitchingPolicy::MinNorm,
        }
    }
}

enum CliError {
    /// Bad configuration or arguments: exit 2.
    Config(String),
    /// Numerical failure at run time: exit 1.
    Run(Error),
    /// Filesystem trouble: exit 1.
    Io(io::Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Run(other),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Sensitize(args) => cmd_sensitize(&args),
        Command::Synthesize(args) => cmd_synthesize(&args),
        Command::Track(args) => cmd_track(&args),
    };
    match outcome {
        Ok(()) => 0,
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            2
        }
        Err(CliError::Run(e)) => {
            eprintln!("run failed: {e}");
            1
        }
        Err(CliError::Io(e)) => {
            eprintln!("io error: {e}");
            1
        }
    }
}

fn prepare(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let cfg = RunConfig::from_path(&common.config)?;
    std::fs::create_dir_all(&common.out)?;
    Ok(cfg)
}

fn write_csv(
    path: &Path,
    emit: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), CliError> {
    let mut buf = Vec::new();
    emit(&mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut buf = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Io(io::Error::new(io::ErrorKind::InvalidData, e)))?;
    buf.push(b'\n');
    std::fs::write(path, buf)?;
    Ok(())
}

fn cmd_simulate(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = prepare(args)?;
    let entry = cfg.build()?;
    let opts = cfg.options();
    let traj = simulate(&entry.system, &entry.x0, &entry.input, entry.span, &opts)?;

    write_csv(&args.out.join("trajectory.csv"), |w| {
        write_trajectory_csv(w, &traj)
    })?;
    write_json(
        &args.out.join("event.json"),
        &EventJson::from_record(traj.event()),
    )?;

    match traj.event() {
        Some(e) => println!("event at t = {:.12}", e.time),
        None => println!("no event in span"),
    }
    Ok(())
}

fn cmd_sensitize(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = prepare(args)?;
    let entry = cfg.build()?;
    let opts = cfg.options();
    let traj = simulate(&entry.system, &entry.x0, &entry.input, entry.span, &opts)?;
    let lin = linearize(&entry.system, &traj, &entry.input, &opts)?;
    let (z0, v_dir, eps) = cfg.perturbation(entry.system.n_state(), entry.system.n_input())?;
    let v = InputSignal::constant(v_dir);
    let lt = propagate_linearization(&lin, &z0, &v, &opts)?;
    let study = convergence_study(&entry.system, &entry.input, &traj, &lt, &eps, &opts)?;

    write_csv(&args.out.join("sensitivity.csv"), |w| {
        write_sensitivity_csv(w, &lt)
    })?;
    write_csv(&args.out.join("convergence.csv"), |w| {
        write_convergence_csv(w, &study)
    })?;
    write_json(
        &args.out.join("jump.json"),
        &JumpJson::new(&traj, &lin, &lt, &study),
    )?;

    match study.state_fit_slope {
        Some(s) => println!("state error slope {s:.3}"),
        None => println!("state error at machine precision across the ladder"),
    }
    Ok(())
}

fn cmd_synthesize(args: &SynthesizeArgs) -> Result<(), CliError> {
    let cfg = prepare(&args.common)?;
    let entry = cfg.build()?;
    let opts = cfg.options();
    let traj = simulate(&entry.system, &entry.x0, &entry.input, entry.span, &opts)?;
    let lin = linearize(&entry.system, &traj, &entry.input, &opts)?;
    let lqr = cfg
        .lqr
        .as_ref()
        .ok_or_else(|| CliError::Config("config needs an [lqr] section".into()))?;
    let weights = lqr.weights(entry.system.n_state(), entry.system.n_input(), entry.span.1)?;
    let sol = riccati_with_jumps(&lin, &weights, &opts)?;

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let n = entry.system.n_state();
    let mut checks = Vec::new();
    for _ in 0..20 {
        let mut z0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
        let norm = z0.norm();
        if norm > 0.0 {
            z0 /= norm;
        }
        let predicted = sol.value(&z0);
        let simulated = lqr_cost(&lin, &weights, &z0, LinearPolicy::Feedback(&sol), &opts)?;
        let relative_error = (predicted - simulated).abs() / predicted.abs().max(1e-300);
        checks.push(ValueCheckJson {
            z0: z0.iter().copied().collect(),
            predicted,
            simulated,
            relative_error,
        });
    }

    let worst_check = checks.iter().map(|c| c.relative_error).fold(0.0, f64::max);

    let (t0, _) = lin.span();
    let t_end = weights.horizon();
    let samples: Vec<f64> = (0..=400)
        .map(|k| t0 + (t_end - t0) * k as f64 / 400.0)
        .collect();
    write_csv(&args.common.out.join("gains.csv"), |w| {
        write_gains_csv(w, &sol, &samples)
    })?;
    write_json(
        &args.common.out.join("riccati.json"),
        &RiccatiJson::new(&sol, checks),
    )?;

    println!(
        "reset residual {:.3e}, worst value-check error {:.3e}",
        sol.reset_residual(),
        worst_check
    );
    Ok(())
}

fn cmd_track(args: &TrackArgs) -> Result<(), CliError> {
    let cfg = prepare(&args.common)?;
    let entry = cfg.build()?;
    let opts = cfg.options();
    let traj = simulate(&entry.system, &entry.x0, &entry.input, entry.span, &opts)?;
    let lin = linearize(&entry.system, &traj, &entry.input, &opts)?;
    let lqr = cfg
        .lqr
        .as_ref()
        .ok_or_else(|| CliError::Config("config needs an [lqr] section".into()))?;
    let weights = lqr.weights(entry.system.n_state(), entry.system.n_input(), entry.span.1)?;
    let sol = riccati_with_jumps(&lin, &weights, &opts)?;

    let delta = cfg
        .track
        .as_ref()
        .ok_or_else(|| CliError::Config("config needs a [track] section".into()))?
        .delta
        .clone();
    if delta.len() != entry.system.n_state() {
        return Err(CliError::Config(format!(
            "track.delta must have {} entries, got {}",
            entry.system.n_state(),
            delta.len()
        )));
    }
    let x0 = &entry.x0 + DVector::from_vec(delta);
    let trace = track(
        &entry.system,
        &traj,
        &entry.input,
        sol.gain_fn(),
        &x0,
        args.policy.into(),
        &opts,
    )?;

    write_csv(&args.common.out.join("tracking.csv"), |w| {
        write_tracking_csv(w, &trace)
    })?;
    write_json(
        &args.common.out.join("tracking.json"),
        &TrackingJson::new(&trace),
    )?;

    println!(
        "sup min-norm error {:.3e}, sup naive error {:.3e}",
        trace.sup_error_min_norm(),
        trace.sup_error_naive()
    );
    Ok(())
}
