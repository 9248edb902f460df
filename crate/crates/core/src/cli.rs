//! The `agg` command line.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::decentralized::{run_decentralized, verify_against_centralized, write_jsonl, ProtocolOptions};
use crate::dual_solver::{write_trace_csv, SolverConfig, StepSchedule};
use crate::error::{Error, Result};
use crate::experiments::{compare_set, run_sweep, snapshot_name, write_csv, CompareOptions};
use crate::model::Scenario;
use crate::pipeline::{finish, solve_traced, WorkingProblem};
use crate::scenarios::{generate, GeneratorParams, SweepParams};
use crate::utility::MAX_MIN_ALPHA;

#[derive(Debug, Parser)]
#[command(name = "agg", version, about = "Alpha-fair multi-RAT traffic aggregation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one scenario and write the report as JSON.
    Solve(SolveArgs),
    /// Compare NUM with greedy and threshold association over a directory.
    Compare(CompareArgs),
    /// Generate load-level scenario sets and aggregate the comparison.
    Sweep(SweepArgs),
    /// Run the message-passing protocol on one scenario.
    Decentralized(DecentralizedArgs),
    /// Write one synthetic scenario.
    Generate(GenerateArgs),
}

/// Accepts a nonnegative number, or `inf` / `max-min` for the max-min proxy.
pub fn parse_alpha(s: &str) -> std::result::Result<f64, String> {
    match s {
        "inf" | "max-min" => Ok(MAX_MIN_ALPHA),
        _ => {
            let a: f64 = s.parse().map_err(|e| format!("{e}"))?;
            if a.is_finite() && a >= 0.0 {
                Ok(a)
            } else {
                Err(format!("alpha must be a nonnegative number, got {s}"))
            }
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Iteration cap (rounds, for the protocol).
    #[arg(long)]
    pub iters: Option<usize>,
    /// Step-size schedule: sqrt, harmonic or const.
    #[arg(long)]
    pub step: Option<StepSchedule>,
    #[arg(long)]
    pub eps0: Option<f64>,
    /// Relative tie tolerance on rate indicators.
    #[arg(long)]
    pub tie_tol: Option<f64>,
}

impl SolverArgs {
    pub fn config(&self) -> SolverConfig {
        let mut c = SolverConfig::default();
        if let Some(n) = self.iters {
            c.max_iterations = n;
        }
        if let Some(s) = self.step {
            c.step_schedule = s;
        }
        if let Some(e) = self.eps0 {
            c.epsilon0 = e;
        }
        if let Some(t) = self.tie_tol {
            c.tie_tolerance = t;
        }
        c
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the scenario's alpha.
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Per-iteration CSV trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Directory of scenario JSON files; the file stem names each scenario.
    #[arg(long)]
    pub scenario_dir: PathBuf,
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Anchor RAT of the threshold policy.
    #[arg(long, default_value_t = 0)]
    pub primary: usize,
    /// Quantile points per threshold axis when tuning.
    #[arg(long, default_value_t = 8)]
    pub grid: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Utilization levels; user counts scale with the level.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 2.0, 3.0])]
    pub levels: Vec<f64>,
    /// Snapshots per level.
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    /// User count at level 1.
    #[arg(long, default_value_t = 10)]
    pub users: usize,
    #[arg(long, default_value_t = 5)]
    pub rats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: Option<f64>,
    /// Generator parameters as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write every snapshot as `<dir>/level_<k>/<name>.json`.
    #[arg(long)]
    pub emit_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub primary: usize,
    #[arg(long, default_value_t = 8)]
    pub grid: usize,
}

#[derive(Debug, Args)]
pub struct DecentralizedArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: Option<f64>,
    /// Round cap; defaults to the solver's iteration cap.
    #[arg(long)]
    pub rounds: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// JSON-lines message log.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fail with exit code 3 unless the centralized run matches bit for bit.
    #[arg(long)]
    pub verify: bool,
    /// Leave the rate term out of the report payload size.
    #[arg(long)]
    pub assume_csi_at_rat: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub users: usize,
    #[arg(long, default_value_t = 5)]
    pub rats: usize,
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// 1 for bad input, 3 for a failed protocol verification, 2 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::VerifyMismatch(_) => 3,
        e if e.is_validation() => 1,
        _ => 2,
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

pub fn error_json(err: &Error) -> String {
    serde_json::to_string(&ErrorReport {
        error: err.kind(),
        message: err.to_string(),
    })
    .expect("error report serializes")
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Decentralized(a) => cmd_decentralized(a),
        Command::Generate(a) => cmd_generate(a),
    }
}

fn load_scenario(path: &Path, alpha: Option<f64>) -> Result<Scenario> {
    let s = Scenario::load(path)?;
    match alpha {
        Some(a) => s.with_alpha(a),
        None => Ok(s),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn generator_params(config: Option<&Path>, rats: usize, alpha: Option<f64>) -> Result<GeneratorParams> {
    let mut params = match config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => GeneratorParams::enterprise(rats),
    };
    if let Some(a) = alpha {
        params.alpha = a;
    }
    Ok(params)
}

fn cmd_solve(args: SolveArgs) -> Result<()> {
    let scenario = load_scenario(&args.scenario, args.alpha)?;
    let config = args.solver.config();
    let (report, rows) = solve_traced(&scenario, &config)?;
    info!(
        "solve: {} iterations, utility {}, kkt {:.3e}",
        report.iterations_used, report.primal_utility, report.kkt_residual
    );
    if let Some(p) = &args.trace {
        write_trace_csv(&rows, scenario.num_rats(), BufWriter::new(File::create(p)?))?;
    }
    write_json(&report, args.out.as_deref())
}

fn read_scenario_dir(dir: &Path, alpha: Option<f64>) -> Result<Vec<(String, Scenario)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no scenario files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, load_scenario(p, alpha)?))
        })
        .collect()
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let named = read_scenario_dir(&args.scenario_dir, args.alpha)?;
    let options = CompareOptions {
        solver: args.solver.config(),
        primary_rat: args.primary,
        grid_points: args.grid,
    };
    let (rows, thresholds) = compare_set(&named, &options)?;
    info!(
        "compare: {} scenarios, tuned thresholds offload={} snr_proxy={}",
        named.len(),
        thresholds.offload,
        thresholds.snr_proxy
    );
    write_csv(&rows, output(args.out.as_deref())?)
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let params = SweepParams {
        seed: args.seed,
        base_users: args.users,
        num_rats: args.rats,
        snapshots: args.seeds,
        generator: generator_params(args.config.as_deref(), args.rats, args.alpha)?,
    };
    let options = CompareOptions {
        primary_rat: args.primary,
        grid_points: args.grid,
        ..Default::default()
    };
    let (rows, sets) = run_sweep(&params, &args.levels, &options)?;
    if let Some(dir) = &args.emit_dir {
        for (k, set) in sets.iter().enumerate() {
            let level_dir = dir.join(format!("level_{k}"));
            fs::create_dir_all(&level_dir)?;
            for (seed, s) in &set.scenarios {
                fs::write(level_dir.join(format!("{}.json", snapshot_name(*seed))), s.to_json()?)?;
            }
        }
    }
    write_csv(&rows, output(args.out.as_deref())?)
}

fn cmd_decentralized(args: DecentralizedArgs) -> Result<()> {
    let scenario = load_scenario(&args.scenario, args.alpha)?;
    let mut config = args.solver.config();
    if let Some(r) = args.rounds {
        config.max_iterations = r;
    }
    config.validate()?;
    let work = WorkingProblem::new(&scenario, &config);
    let options = ProtocolOptions {
        record_messages: args.trace.is_some(),
        csi_at_rat: args.assume_csi_at_rat,
    };
    let run = run_decentralized(&work.scenario, &config, options)?;
    if args.verify {
        verify_against_centralized(&work.scenario, &config, &run)?;
        info!("decentralized run matches the centralized solver bit for bit");
    }
    let (state, trace) = run;
    if let Some(p) = &args.trace {
        write_jsonl(&trace.messages, BufWriter::new(File::create(p)?))?;
    }
    let mut report = finish(&scenario, &work, &state, &config)?;
    report.message_count = Some(trace.message_count);
    report.payload_bytes = Some(trace.payload_bytes);
    write_json(&report, args.out.as_deref())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let params = generator_params(args.config.as_deref(), args.rats, args.alpha)?;
    let s = generate(args.seed, args.users, args.rats, &params)?;
    let mut out = output(args.out.as_deref())?;
    out.write_all(s.to_json()?.as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}
