//! Command-line front end of the `ldqos` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{estimate, ser_f64, EstimateRequest};
use crate::io;
use crate::ldcore::{
    classify_region, mean_arrival_rate, theta_star, ArrivalModel, LdConfig, RegionLabel, ServiceModel, StateLaw,
};
use crate::markov::{compute_empirical_measure, mle_transition, stationary_distribution, EmpiricalMeasure};
use crate::optimizer::{algorithm_a, algorithm_b, objective_surface, ObjectiveParams, OptimizerConfig};
use crate::simkit::{generate_trace, simulate_queue, QueueSimConfig};

#[derive(Debug, Parser)]
#[command(
    name = "ldqos",
    version,
    about = "Large-deviations buffer-overflow estimates from Markov-modulated traces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pair frequencies and maximum-likelihood transition matrix of a trace.
    Fit(FitArgs),
    /// Decay rate of a given transition matrix.
    ThetaStar(ThetaStarArgs),
    /// All four overflow estimates from a trace, as JSON.
    Estimate(EstimateArgs),
    /// Run one minimization and print its iterates.
    Optimize(OptimizeArgs),
    /// Objective over a grid of two-state chains, as CSV.
    Surface(SurfaceArgs),
    /// Monte Carlo tail frequencies of the queue, as CSV.
    SimulateQueue(SimulateArgs),
    /// Sample a state trace from a transition matrix.
    GenerateTrace(GenerateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ArrivalLaw {
    Deterministic,
    Poisson,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Per-state arrival rates, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub rates: Vec<f64>,
    /// Interpret the rates as constant rates or Poisson means.
    #[arg(long, value_enum, default_value = "deterministic")]
    pub arrival_law: ArrivalLaw,
    /// Service rate per slot.
    #[arg(long)]
    pub service: f64,
    #[arg(long, default_value_t = LdConfig::default().theta_max)]
    pub theta_max: f64,
    #[arg(long, default_value_t = LdConfig::default().g_slack)]
    pub g_slack: f64,
    #[arg(long, default_value_t = LdConfig::default().root_tol)]
    pub root_tol: f64,
}

impl ModelArgs {
    fn arrivals(&self) -> Result<ArrivalModel> {
        match self.arrival_law {
            ArrivalLaw::Deterministic => ArrivalModel::deterministic(&self.rates),
            ArrivalLaw::Poisson => {
                ArrivalModel::new(self.rates.iter().map(|&mean| StateLaw::Poisson { mean }).collect())
            }
        }
    }

    fn service(&self) -> Result<ServiceModel> {
        ServiceModel::deterministic(self.service)
    }

    fn ld(&self) -> Result<LdConfig> {
        let ld = LdConfig {
            theta_max: self.theta_max,
            g_slack: self.g_slack,
            root_tol: self.root_tol,
        };
        ld.validate()?;
        Ok(ld)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = OptimizerConfig::default().beta)]
    pub beta: f64,
    #[arg(long, default_value_t = OptimizerConfig::default().sigma)]
    pub sigma: f64,
    #[arg(long, default_value_t = OptimizerConfig::default().epsilon)]
    pub epsilon: f64,
    #[arg(long, default_value_t = OptimizerConfig::default().max_outer)]
    pub max_outer: usize,
    #[arg(long, default_value_t = OptimizerConfig::default().max_armijo)]
    pub max_armijo: usize,
    #[arg(long, default_value_t = OptimizerConfig::default().w_tol)]
    pub w_tol: f64,
}

impl SolverArgs {
    fn config(&self) -> Result<OptimizerConfig> {
        let cfg = OptimizerConfig {
            beta: self.beta,
            sigma: self.sigma,
            epsilon: self.epsilon,
            max_outer: self.max_outer,
            max_armijo: self.max_armijo,
            w_tol: self.w_tol,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Number of states.
    #[arg(long)]
    pub states: usize,
    /// Write the maximum-likelihood matrix here.
    #[arg(long)]
    pub mle_out: Option<PathBuf>,
    /// Write the pair-frequency matrix here.
    #[arg(long)]
    pub freq_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ThetaStarArgs {
    /// Transition matrix file.
    #[arg(long)]
    pub matrix: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Buffer size U.
    #[arg(long)]
    pub buffer: f64,
    /// Weight of the standard-deviation term in the fourth estimate.
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    /// Observation count; defaults to the trace length.
    #[arg(long)]
    pub n: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Algorithm {
    A,
    B,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Buffer size U; gives s = U / n.
    #[arg(long, conflicts_with = "s", required_unless_present = "s")]
    pub buffer: Option<f64>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub ell: u32,
    #[arg(long, value_enum, default_value = "b")]
    pub algorithm: Algorithm,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SurfaceArgs {
    /// Observed conditionals; row weights are its stationary law.
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub s: f64,
    #[arg(long, default_value_t = 1)]
    pub ell: u32,
    /// Points per axis.
    #[arg(long, default_value_t = 101)]
    pub grid: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub rates: Vec<f64>,
    #[arg(long)]
    pub service: f64,
    /// Slots per replication.
    #[arg(long)]
    pub horizon: u64,
    /// Defaults to 1% of the horizon.
    #[arg(long)]
    pub warmup: Option<u64>,
    /// Buffer levels, comma separated; chosen from a pilot run if omitted.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub replications: usize,
    #[arg(long, default_value_t = 20)]
    pub batches: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors go to `err`.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match run(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if let Error::LineSearch { trace, .. } = &e {
                if let Ok(s) = serde_json::to_string(trace) {
                    let _ = writeln!(err, "{s}");
                }
            }
            e.exit_code()
        }
    }
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Input(format!("serialization: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn rows(a: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect()
}

fn trace_measure(path: &Path, m: usize) -> Result<(EmpiricalMeasure, usize)> {
    let trace = io::read_trace(path)?;
    let n = trace.len();
    Ok((compute_empirical_measure(&trace, m)?, n))
}

pub fn run(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Fit(a) => fit(a, out),
        Command::ThetaStar(a) => theta_star_cmd(a, out),
        Command::Estimate(a) => estimate_cmd(a, out),
        Command::Optimize(a) => optimize_cmd(a, out),
        Command::Surface(a) => surface_cmd(a, out),
        Command::SimulateQueue(a) => simulate_cmd(a, out),
        Command::GenerateTrace(a) => generate_cmd(a, out),
    }
}

#[derive(Serialize)]
struct FitReport {
    n: usize,
    states: usize,
    q: Vec<Vec<f64>>,
    q1: Vec<f64>,
    q2: Vec<f64>,
    qf: Vec<Vec<f64>>,
}

fn fit(a: FitArgs, out: &mut dyn Write) -> Result<()> {
    let (em, n) = trace_measure(&a.trace, a.states)?;
    let mle = mle_transition(&em)?;
    if let Some(p) = &a.freq_out {
        io::write_matrix(p, em.frequencies())?;
    }
    if let Some(p) = &a.mle_out {
        io::write_matrix(p, mle.matrix())?;
    }
    let report = FitReport {
        n,
        states: a.states,
        q: rows(em.frequencies()),
        q1: em.row_marginals().iter().copied().collect(),
        q2: em.column_marginals().iter().copied().collect(),
        qf: mle.to_rows(),
    };
    emit(out, None, &to_json(&report)?)
}

#[derive(Serialize)]
struct ThetaStarReport {
    #[serde(serialize_with = "ser_f64")]
    theta_star: f64,
    region: RegionLabel,
    mean_arrival: f64,
    service: f64,
    ld: LdConfig,
}

fn theta_star_cmd(a: ThetaStarArgs, out: &mut dyn Write) -> Result<()> {
    let pm = io::read_transition_matrix(&a.matrix)?;
    let (arr, svc, ld) = (a.model.arrivals()?, a.model.service()?, a.model.ld()?);
    if !pm.is_irreducible() {
        return Err(Error::Structural("transition matrix is reducible".into()));
    }
    let report = ThetaStarReport {
        theta_star: theta_star(&pm, &arr, &svc, &ld)?,
        region: classify_region(&pm, &arr, &svc)?,
        mean_arrival: mean_arrival_rate(&pm, &arr)?,
        service: svc.mean(),
        ld,
    };
    emit(out, None, &to_json(&report)?)
}

fn estimate_cmd(a: EstimateArgs, out: &mut dyn Write) -> Result<()> {
    let arr = a.model.arrivals()?;
    let (em, len) = trace_measure(&a.trace, arr.states())?;
    let req = EstimateRequest {
        em,
        n: a.n.unwrap_or(len),
        buffer: a.buffer,
        mu: a.mu,
        arr,
        svc: a.model.service()?,
        ld: a.model.ld()?,
        cfg: a.solver.config()?,
    };
    let report = estimate(&req)?;
    emit(out, a.out.as_deref(), &to_json(&report)?)
}

fn optimize_cmd(a: OptimizeArgs, out: &mut dyn Write) -> Result<()> {
    let arr = a.model.arrivals()?;
    let (em, n) = trace_measure(&a.trace, arr.states())?;
    let s = match (a.s, a.buffer) {
        (Some(s), _) => s,
        (None, Some(u)) => u / n as f64,
        (None, None) => return Err(Error::Input("one of --s or --buffer is required".into())),
    };
    let params = ObjectiveParams::new(a.ell, s, em, arr, a.model.service()?, a.model.ld()?)?;
    let cfg = a.solver.config()?;
    let trace = match a.algorithm {
        Algorithm::A => algorithm_a(&params, &cfg)?,
        Algorithm::B => algorithm_b(&params, &cfg)?,
    };
    emit(out, a.out.as_deref(), &to_json(&trace)?)
}

fn surface_cmd(a: SurfaceArgs, out: &mut dyn Write) -> Result<()> {
    let qf = io::read_transition_matrix(&a.matrix)?;
    let p1 = stationary_distribution(&qf)?;
    let em = EmpiricalMeasure::from_conditionals(p1.as_slice(), &qf)?;
    let pts = objective_surface(
        &em,
        a.ell,
        a.s,
        &a.model.arrivals()?,
        &a.model.service()?,
        &a.model.ld()?,
        a.grid,
    )?;
    let mut csv = String::from("p11,p22,region,theta_star,i3,objective\n");
    for p in pts {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.p11, p.p22, p.region, p.theta_star, p.i3, p.objective
        ));
    }
    emit(out, a.out.as_deref(), &csv)
}

fn simulate_cmd(a: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let pm = io::read_transition_matrix(&a.matrix)?;
    let mut cfg = QueueSimConfig::new(
        pm,
        ArrivalModel::deterministic(&a.rates)?,
        ServiceModel::deterministic(a.service)?,
        a.horizon,
        a.seed,
    );
    cfg.warmup = a.warmup;
    cfg.thresholds = a.thresholds;
    cfg.replications = a.replications;
    cfg.batches = a.batches;
    let est = simulate_queue(&cfg)?;
    emit(out, a.out.as_deref(), &est.to_csv())
}

fn generate_cmd(a: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let pm = io::read_transition_matrix(&a.matrix)?;
    let trace = generate_trace(&pm, a.length, a.seed)?;
    emit(out, a.out.as_deref(), &io::format_trace(&trace))
}
