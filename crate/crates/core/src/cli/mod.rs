//! Command-line frontend: `design`, `simulate`, `feasibility`, `montecarlo`
//! and `validate` over JSON problem configs, writing JSON designs, CSV
//! tables and static SVG plots.
//!
//! Exit codes: 0 ok, 1 usage or I/O, 2 design error, 3 infeasible at runtime.

pub mod artifact;
pub mod config;
pub mod svg;
#[cfg(test)]
mod tests;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::controller::{ControlError, Controller, LinearMpc, MultiInputMpc, NonlinearMpc};
use crate::design::{ControllerDesign, DesignError};
use crate::qp::{build_condensed, build_multi_input_condensed, check_feasible};
use crate::sim::{feasibility_scan, monte_carlo, simulate, Disturbance, Trajectory};

use artifact::{feasibility_csv, monte_carlo_csv, trajectory_csv, write_file, DesignArtifact, DesignPayload};
use config::{default_scan, Problem, ProblemConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DESIGN: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

const DEFAULT_STEPS: usize = 40;
const DEFAULT_RUNS: usize = 10;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("design error: {0}")]
    Design(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => EXIT_USAGE,
            CliError::Design(_) => EXIT_DESIGN,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
        }
    }
}

impl From<DesignError> for CliError {
    fn from(e: DesignError) -> Self {
        CliError::Design(e.to_string())
    }
}

impl From<ControlError> for CliError {
    fn from(e: ControlError) -> Self {
        match e {
            ControlError::InfeasibleAtState { .. } => CliError::Infeasible(e.to_string()),
            ControlError::DimensionMismatch { .. } => CliError::Usage(e.to_string()),
            other => CliError::Design(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ftmpc", version, about = "Finite-time receding-horizon control: design, simulation and feasibility maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Offline design: terminal gain, weight, level and deadbeat gain.
    Design(CommonArgs),
    /// Closed-loop simulation from one initial state.
    Simulate(CommonArgs),
    /// Feasible initial states of the configured horizon against `N = n`.
    Feasibility(CommonArgs),
    /// Seeded runs with bounded input-channel disturbances.
    Montecarlo(CommonArgs),
    /// Numerical certificates of a design.
    Validate(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Problem config (JSON), or a built-in name: si_linear, mi_linear, nonlinear.
    #[arg(long)]
    pub config: String,
    /// Design file produced by `design`; computed afresh when omitted.
    #[arg(long)]
    pub design: Option<PathBuf>,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long)]
    pub svg: bool,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match try_run(args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Like [`run`], returning the error instead of printing it. Help and
/// version requests print and succeed.
pub fn try_run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            return Err(CliError::Usage(msg.trim_start_matches("error: ").trim_end().to_owned()));
        }
    };
    execute(&cli.command)
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Design(a) => cmd_design(&Session::open(a)?),
        Command::Simulate(a) => cmd_simulate(&Session::open(a)?),
        Command::Feasibility(a) => cmd_feasibility(&Session::open(a)?),
        Command::Montecarlo(a) => cmd_montecarlo(&Session::open(a)?),
        Command::Validate(a) => cmd_validate(&Session::open(a)?),
    }
}

/// Config, resolved problem and flag overrides shared by every command.
struct Session {
    args: CommonArgs,
    config: ProblemConfig,
    problem: Problem,
}

impl Session {
    fn open(args: &CommonArgs) -> Result<Self, CliError> {
        let path = Path::new(&args.config);
        let config = if !path.exists() && matches!(args.config.as_str(), "si_linear" | "mi_linear" | "nonlinear") {
            ProblemConfig::builtin(&args.config)
        } else {
            ProblemConfig::load(path)?
        };
        let problem = config.resolve()?;
        Ok(Self { args: args.clone(), config, problem })
    }

    fn out_dir(&self) -> PathBuf {
        self.args.out.clone().or_else(|| self.config.output.clone()).unwrap_or_else(|| PathBuf::from("."))
    }

    fn seed(&self) -> u64 {
        self.args.seed.unwrap_or(self.config.seed)
    }

    fn steps(&self) -> usize {
        self.args.steps.or(self.config.steps).unwrap_or(DEFAULT_STEPS)
    }

    fn x0(&self) -> Result<Vec<f64>, CliError> {
        let x0 = self
            .args
            .x0
            .clone()
            .or_else(|| self.config.x0.clone())
            .ok_or_else(|| CliError::Usage("an initial state is required (--x0 or `x0`)".into()))?;
        if x0.len() != self.problem.state_dim() {
            return Err(CliError::Usage(format!("x0: expected {} entries, found {}", self.problem.state_dim(), x0.len())));
        }
        Ok(x0)
    }

    /// The design file when given (checked against the plant), otherwise a fresh design.
    fn design(&self) -> Result<DesignArtifact, CliError> {
        match &self.args.design {
            Some(path) => {
                let art = DesignArtifact::load(path)?;
                art.check_matches(&self.problem)?;
                Ok(art)
            }
            None => fresh_design(&self.problem),
        }
    }

    fn controller(&self, design: &DesignPayload) -> Result<Box<dyn Controller>, CliError> {
        Ok(match (&self.problem, design) {
            (Problem::SingleInput(p), DesignPayload::SingleInput(d)) => Box::new(LinearMpc::new(&p.sys, &p.bounds, d.clone())?),
            (Problem::MultiInput(p), DesignPayload::MultiInput(d)) => Box::new(MultiInputMpc::new(&p.sys, &p.bounds, d.clone())?),
            (Problem::Nonlinear(p), DesignPayload::Nonlinear(d)) => Box::new(NonlinearMpc::new(p.model.clone(), d.clone(), p.bounds.clone())),
            _ => return Err(CliError::Usage("design kind does not match the configured plant".into())),
        })
    }

    fn run_loop(&self, design: &DesignPayload, x0: &[f64], steps: usize, disturbance: Option<Disturbance>) -> Result<Trajectory, CliError> {
        let mut ctrl = self.controller(design)?;
        Ok(match &self.problem {
            Problem::SingleInput(p) | Problem::MultiInput(p) => simulate(ctrl.as_mut(), &p.sys, &p.bounds, x0, steps, disturbance),
            Problem::Nonlinear(p) => simulate(ctrl.as_mut(), &p.model, &p.bounds, x0, steps, disturbance),
        })
    }
}

fn fresh_design(problem: &Problem) -> Result<DesignArtifact, CliError> {
    let payload = match problem {
        Problem::SingleInput(p) => DesignPayload::SingleInput(p.design()?),
        Problem::MultiInput(p) => DesignPayload::MultiInput(p.multi_input_design()?),
        Problem::Nonlinear(p) => DesignPayload::Nonlinear(p.design()?),
    };
    DesignArtifact::new(problem, payload)
}

fn report_failures(art: &DesignArtifact) -> Result<(), CliError> {
    if art.passed() {
        Ok(())
    } else {
        let failures: Vec<&str> = art.validation.iter().flat_map(|r| r.failures.iter().map(String::as_str)).collect();
        Err(CliError::Design(failures.join("; ")))
    }
}

fn cmd_design(s: &Session) -> Result<(), CliError> {
    let art = fresh_design(&s.problem)?;
    let path = s.out_dir().join("design.json");
    art.save(&path)?;
    println!("wrote {}", path.display());
    report_failures(&art)
}

fn cmd_validate(s: &Session) -> Result<(), CliError> {
    let art = s.design()?;
    let text = serde_json::to_string_pretty(&art.validation).map_err(|e| CliError::Io(e.to_string()))?;
    println!("{text}");
    report_failures(&art)
}

fn cmd_simulate(s: &Session) -> Result<(), CliError> {
    let art = s.design()?;
    let x0 = s.x0()?;
    if let Some(verdict) = initial_feasibility(&s.problem, &art.design, &x0)? {
        if !verdict {
            return Err(CliError::Infeasible(format!("x0 = {x0:?} is outside the feasible region (check_feasible = false)")));
        }
    }
    let disturbance = s.config.disturbance.map(|d| Disturbance { bound: d.bound, seed: s.seed() });
    let traj = s.run_loop(&art.design, &x0, s.steps(), disturbance)?;
    let dir = s.out_dir();
    let csv = dir.join("trajectory.csv");
    write_file(&csv, &trajectory_csv(&traj))?;
    println!("wrote {}", csv.display());
    if s.args.svg {
        let path = dir.join("trajectory.svg");
        write_file(&path, &svg::trajectory_svg(&traj, s.problem.bounds()))?;
        println!("wrote {}", path.display());
    }
    match traj.settle_step {
        Some(t) => println!("settled at T={t}"),
        None => println!("did not settle within {} steps", traj.steps()),
    }
    match traj.halted {
        Some(reason) => Err(CliError::Infeasible(reason)),
        None => Ok(()),
    }
}

/// `check_feasible` verdict at `x0` for the linear programs; `None` when the
/// plant is nonlinear (the first SQP solve decides instead).
fn initial_feasibility(problem: &Problem, design: &DesignPayload, x0: &[f64]) -> Result<Option<bool>, CliError> {
    Ok(match (problem, design) {
        (Problem::SingleInput(p), DesignPayload::SingleInput(d)) => Some(check_feasible(&build_condensed(&p.sys, &p.bounds, d)?, x0)),
        (Problem::MultiInput(p), DesignPayload::MultiInput(d)) => {
            let prog = build_multi_input_condensed(&p.sys, &p.bounds, d)?;
            Some(check_feasible(&prog, &d.decoupled.m.mul_vec(x0)))
        }
        _ => None,
    })
}

fn cmd_feasibility(s: &Session) -> Result<(), CliError> {
    let Problem::SingleInput(p) = &s.problem else {
        return Err(CliError::Usage("feasibility maps compare horizons of a single-input linear plant".into()));
    };
    let art = s.design()?;
    let DesignPayload::SingleInput(design) = &art.design else {
        return Err(CliError::Usage("design kind does not match the configured plant".into()));
    };
    let baseline = ControllerDesign { horizon: p.sys.n(), ..design.clone() };
    let proposed_prog = build_condensed(&p.sys, &p.bounds, design)?;
    let baseline_prog = build_condensed(&p.sys, &p.bounds, &baseline)?;
    let grid = s.config.scan.clone().unwrap_or_else(|| default_scan(p.sys.n()));
    let map = feasibility_scan(&proposed_prog, &baseline_prog, &grid);
    let dir = s.out_dir();
    let csv = dir.join("feasibility.csv");
    write_file(&csv, &feasibility_csv(&map))?;
    println!("wrote {}", csv.display());
    if s.args.svg {
        if grid.resolution.len() == 2 {
            let path = dir.join("feasibility.svg");
            write_file(&path, &svg::feasibility_svg(&map))?;
            println!("wrote {}", path.display());
        } else {
            log::warn!("region outlines are only drawn for planar grids; skipping SVG");
        }
    }
    let c = &map.counts;
    println!(
        "proposed (N = {}) feasible cells: {}, baseline (N = {}) feasible cells: {}, baseline-only: {}",
        design.horizon,
        c.proposed(),
        baseline.horizon,
        c.baseline(),
        c.baseline_only
    );
    Ok(())
}

fn cmd_montecarlo(s: &Session) -> Result<(), CliError> {
    let art = s.design()?;
    let x0 = s.x0()?;
    let w_bound =
        s.config.disturbance.map(|d| d.bound).ok_or_else(|| CliError::Usage("montecarlo needs `disturbance.bound` in the config".into()))?;
    let runs = s.config.runs.unwrap_or(DEFAULT_RUNS);
    if runs == 0 {
        return Err(CliError::Usage("`runs` must be at least 1".into()));
    }
    let (steps, seed) = (s.steps(), s.seed());
    let summary = match (&s.problem, &art.design) {
        (Problem::SingleInput(p), DesignPayload::SingleInput(d)) => {
            let mpc = LinearMpc::new(&p.sys, &p.bounds, d.clone())?;
            monte_carlo(|| mpc.clone(), &p.sys, &p.bounds, &x0, steps, runs, seed, w_bound)
        }
        (Problem::MultiInput(p), DesignPayload::MultiInput(d)) => {
            let mpc = MultiInputMpc::new(&p.sys, &p.bounds, d.clone())?;
            monte_carlo(|| mpc.clone(), &p.sys, &p.bounds, &x0, steps, runs, seed, w_bound)
        }
        (Problem::Nonlinear(p), DesignPayload::Nonlinear(d)) => {
            let mpc = NonlinearMpc::new(p.model.clone(), d.clone(), p.bounds.clone());
            monte_carlo(|| mpc.clone(), &p.model, &p.bounds, &x0, steps, runs, seed, w_bound)
        }
        _ => return Err(CliError::Usage("design kind does not match the configured plant".into())),
    };
    let path = s.out_dir().join("montecarlo.csv");
    write_file(&path, &monte_carlo_csv(&summary))?;
    println!("wrote {}", path.display());
    println!(
        "{runs} runs, |w| <= {w_bound}: tail sup-norm {} from step {}, {} runs halted",
        summary.tail_bound, summary.tail_start, summary.infeasible_runs
    );
    Ok(())
}
