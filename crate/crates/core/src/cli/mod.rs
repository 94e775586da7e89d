//! `dptune` command line: `tune`, `simulate`, `sweep` and `account`.
//!
//! Exit codes: 0 on success, 1 on any configuration, input or runtime
//! error, 2 when `tune` ends without selecting a candidate.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::accountant::{budget_comparison, CompositionReport, PrivacyParams};
use crate::error::Error;
use crate::mechanisms::RandomStream;
use crate::simulation::{
    fig1_csv, log2_fit, simulate_traces, summarize, sweep_csv, sweep_iterations, worst_case_trace,
    SimulationSpec, SweepSpec,
};
use crate::tuner::{tune_and_train, write_trace_jsonl, Termination, TuningConfig, TuningOutcome};
use crate::utility::{
    Candidate, CentroidModel, Dataset, Record, SyntheticTrainer, TrainerError, TrainerSpec,
};

pub use config::{ConfigError, RunConfig, TrainerKind};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_NO_CANDIDATE: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "dptune",
    version,
    about = "Differentially private hyperparameter tuning with a doubling step"
)]
pub struct Cli {
    /// Run configuration (flat key = value file).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tune on a dataset and train the selected candidate.
    Tune,
    /// Simulate tuning runs on synthetic utility tables, one per seed.
    Simulate,
    /// Sweep the iteration count over (u* - u0)/g.
    Sweep,
    /// Compare privacy budgets against naive and random-stopping tuning.
    Account(AccountArgs),
}

#[derive(Debug, Args)]
pub struct AccountArgs {
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub eps0: Option<f64>,
    #[arg(long)]
    pub g: Option<f64>,
    #[arg(long)]
    pub u0: Option<f64>,
    /// Observed iteration count T.
    #[arg(long = "iterations", short = 't')]
    pub iterations: Option<u64>,
    /// Number of candidates |S| for the naive row.
    #[arg(long)]
    pub candidates: Option<usize>,
    #[arg(long = "delta-slack")]
    pub delta_slack: Option<f64>,
    /// Also write the table as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Parses `args` and runs the chosen subcommand.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    ExitCode::from(run(&cli))
}

pub fn run(cli: &Cli) -> u8 {
    let result = match &cli.command {
        Command::Tune => cmd_tune(cli),
        Command::Simulate => cmd_simulate(cli).map(|_| EXIT_OK),
        Command::Sweep => cmd_sweep(cli).map(|_| EXIT_OK),
        Command::Account(args) => cmd_account(cli, args).map(|_| EXIT_OK),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

fn load_config(cli: &Cli, required: bool) -> anyhow::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None if required => bail!("--config <path> is required for this subcommand"),
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

fn write_trace(path: &Path, outcome: &TuningOutcome) -> anyhow::Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_trace_jsonl(&outcome.trace, BufWriter::new(file))
        .with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

/// Outcome without the trace, which goes to its own JSONL file.
#[derive(Debug, Serialize)]
struct OutcomeSummary<'a> {
    selected: Option<usize>,
    selected_candidate: Option<&'a Candidate>,
    u_final: f64,
    step_final: u64,
    iterations: u64,
    termination: Termination,
    eps_total: f64,
    delta_total: f64,
    privacy: &'a CompositionReport,
}

impl<'a> From<&'a TuningOutcome> for OutcomeSummary<'a> {
    fn from(o: &'a TuningOutcome) -> Self {
        Self {
            selected: o.selected,
            selected_candidate: o.selected_candidate.as_ref(),
            u_final: o.u_final,
            step_final: o.step_final,
            iterations: o.iterations,
            termination: o.termination,
            eps_total: o.privacy.eps_total,
            delta_total: o.privacy.delta_total,
            privacy: &o.privacy,
        }
    }
}

fn write_outcome(dir: &Path, outcome: &TuningOutcome) -> anyhow::Result<()> {
    write_json(&dir.join("outcome.json"), &OutcomeSummary::from(outcome))?;
    write_trace(&dir.join("trace.jsonl"), outcome)?;
    write_json(&dir.join("privacy.json"), &outcome.privacy)
}

/// Stand-in for private final training: fits the reference nearest-centroid
/// model on the full training set. It adds no noise.
fn reference_final_train(
    data: &Dataset,
    _candidate: &Candidate,
    _eps: f64,
    _delta: f64,
    _stream: &mut RandomStream,
) -> Result<CentroidModel, TrainerError> {
    let records: Vec<&Record> = data.records().iter().collect();
    CentroidModel::fit(&records).ok_or_else(|| TrainerError("empty training set".into()))
}

pub fn cmd_tune(cli: &Cli) -> anyhow::Result<u8> {
    let config = load_config(cli, true)?;
    let train_path = config
        .train_path
        .as_ref()
        .context("field `train_path` is required for tune")?;
    let valid_path = config
        .valid_path
        .as_ref()
        .context("field `valid_path` is required for tune")?;
    let train = Dataset::from_csv_path(train_path)?;
    let valid = Dataset::from_csv_path(valid_path)?;
    let privacy = PrivacyParams::new(config.eps, config.delta, config.eps0)?;
    let tuning = TuningConfig::new(
        config.candidates.clone(),
        config.k,
        config.g,
        config.u0,
        privacy,
    )?
    .with_accounting(config.delta_slack, config.composition)?;
    let trainer = match config.trainer {
        TrainerKind::Reference => TrainerSpec::Reference,
        TrainerKind::Synthetic => TrainerSpec::Synthetic(SyntheticTrainer::default()),
    };
    let stream = RandomStream::new(config.seed, 0);
    let mut hook = reference_final_train;
    create_dir(&config.out_dir)?;
    match tune_and_train(&tuning, &train, &valid, &trainer, &mut hook, &stream) {
        Ok((outcome, model)) => {
            write_outcome(&config.out_dir, &outcome)?;
            write_json(&config.out_dir.join("model.json"), &model)?;
            println!(
                "selected candidate {} ({}) after {} iterations; eps_total = {:?}, delta_total = {:?}",
                outcome.selected.unwrap_or_default(),
                outcome.selected_candidate.as_ref().map(Candidate::as_str).unwrap_or(""),
                outcome.iterations,
                outcome.privacy.eps_total,
                outcome.privacy.delta_total
            );
            Ok(EXIT_OK)
        }
        Err(Error::NoCandidateSelected(outcome)) => {
            write_outcome(&config.out_dir, &outcome)?;
            eprintln!(
                "no candidate selected after {} iterations (eps_total = {:?}); try a lower u0 or a larger eps0",
                outcome.iterations, outcome.privacy.eps_total
            );
            Ok(EXIT_NO_CANDIDATE)
        }
        Err(e) => Err(e.into()),
    }
}

fn simulation_spec(config: &RunConfig) -> anyhow::Result<SimulationSpec> {
    let spec = SimulationSpec {
        n_candidates: config.n_candidates,
        distribution: config.utilities.clone(),
        k: config.k,
        g: config.g,
        u0: config.u0,
        privacy: PrivacyParams::new(config.eps, config.delta, config.eps0)?,
        delta_slack: config.delta_slack,
        n_seeds: config.n_seeds,
        base_seed: config.seed,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn cmd_simulate(cli: &Cli) -> anyhow::Result<()> {
    let config = load_config(cli, true)?;
    let spec = simulation_spec(&config)?;
    let runs = simulate_traces(&spec)?;
    let traces = config.out_dir.join("traces");
    create_dir(&traces)?;
    for run in &runs {
        write_trace(
            &traces.join(format!("trace_{}.jsonl", run.seed)),
            &run.outcome,
        )?;
    }
    write_file(&config.out_dir.join("fig1.csv"), fig1_csv(&runs, spec.u0))?;
    let worst = worst_case_trace(spec.g, spec.u0)?;
    let file = fs::File::create(config.out_dir.join("worst_case.jsonl"))?;
    write_trace_jsonl(&worst, BufWriter::new(file))?;
    let summary = summarize(&runs);
    write_json(&config.out_dir.join("summary.json"), &summary)?;
    println!(
        "{} runs: {} reached u >= 1 ({:.1}%), {} ran out of step; mean T = {:.3}, max T = {}",
        summary.runs,
        summary.utility_cap,
        100.0 * summary.utility_cap_fraction,
        summary.step_exhausted,
        summary.mean_iterations,
        summary.max_iterations
    );
    Ok(())
}

pub fn cmd_sweep(cli: &Cli) -> anyhow::Result<()> {
    let config = load_config(cli, true)?;
    // g and u0 are replaced per ratio; any valid placeholder will do.
    let base = simulation_spec(&RunConfig {
        g: 0.5,
        u0: 0.0,
        ..config.clone()
    })?;
    let spec = SweepSpec {
        ratios: config.ratios.clone(),
        base,
    };
    let rows = sweep_iterations(&spec)?;
    create_dir(&config.out_dir)?;
    write_file(&config.out_dir.join("sweep.csv"), sweep_csv(&rows))?;
    if let Some(fit) = log2_fit(&rows) {
        write_json(&config.out_dir.join("sweep_fit.json"), &fit)?;
        println!(
            "mean T ~ {:.3} * log2(ratio) + {:.3} (R^2 = {:.4})",
            fit.slope, fit.intercept, fit.r_squared
        );
    }
    print!("{}", sweep_csv(&rows));
    Ok(())
}

pub fn cmd_account(cli: &Cli, args: &AccountArgs) -> anyhow::Result<()> {
    let config = load_config(cli, false)?;
    let privacy = PrivacyParams::new(
        args.eps.unwrap_or(config.eps),
        args.delta.unwrap_or(config.delta),
        args.eps0.unwrap_or(config.eps0),
    )?;
    let candidates = args
        .candidates
        .or_else(|| (!config.candidates.is_empty()).then_some(config.candidates.len()));
    let table = budget_comparison(
        &privacy,
        candidates,
        args.iterations,
        args.g.unwrap_or(config.g),
        args.u0.unwrap_or(config.u0),
        args.delta_slack.unwrap_or(config.delta_slack),
    )?;
    println!("{table}");
    if let Some(path) = &args.csv {
        write_file(path, table.to_csv())?;
    }
    Ok(())
}
