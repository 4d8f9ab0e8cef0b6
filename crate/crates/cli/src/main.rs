use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lml_cli::config::ExperimentConfig;
use lml_cli::export::write_file;
use lml_cli::record::RunRecord;
use lml_cli::{compare_runs, run, CliError, Mode, RunOptions};

#[derive(Parser)]
#[command(
    name = "lml",
    version,
    about = "Barrier, Dirichlet and radial experiments for the Lagrangian mean curvature equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sub/supersolution profiles, barrier constants, decay rates and inequality checks.
    Barriers(RunArgs),
    /// Finite-difference Dirichlet problems on ellipsoids, with oracle and sandwich checks.
    Dirichlet(RunArgs),
    /// Growing-level study of the Dirichlet solutions and their far-field decay.
    #[command(name = "limit_study", alias = "limit-study")]
    LimitStudy(RunArgs),
    /// Radial counterexample families and their growth classification.
    Nonexistence(RunArgs),
    /// Closed-form identities; needs no config.
    Selfcheck(RunArgs),
    /// Numeric diff of two run directories (or run_record.json files).
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to LML_THREADS, then to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    /// Config whose `compare_tolerances` apply.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the diff as JSON and CSV into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn threads(requested: Option<usize>) -> Result<usize, CliError> {
    let from_env = match std::env::var("LML_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Schema(format!("LML_THREADS={v:?} is not a thread count")))?,
        ),
        Err(_) => None,
    };
    match requested.or(from_env) {
        Some(0) => Err(CliError::Schema("thread count must be positive".into())),
        Some(k) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build_global()
                .map_err(|e| CliError::Schema(format!("cannot start {k} threads: {e}")))?;
            Ok(k)
        }
        None => Ok(rayon::current_num_threads()),
    }
}

fn run_mode(mode: Mode, args: RunArgs) -> Result<bool, CliError> {
    let config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if mode == Mode::Selfcheck => ExperimentConfig::minimal(Mode::Selfcheck),
        None => return Err(CliError::Schema(format!("mode {mode} requires --config"))),
    };
    if config.mode != mode {
        return Err(CliError::Schema(format!("config is for mode {}, not {mode}", config.mode)));
    }
    let threads = threads(args.threads)?;
    let record = run(&config, &RunOptions { out: args.out, seed: args.seed, threads })?;
    for c in &record.checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        eprintln!("{status} {} {}", c.name, c.detail);
    }
    Ok(record.passed)
}

fn record_path(p: PathBuf) -> PathBuf {
    if p.is_dir() {
        p.join(lml_cli::record::RECORD_FILE)
    } else {
        p
    }
}

fn compare(args: CompareArgs) -> Result<bool, CliError> {
    let (pa, pb) = (record_path(args.a), record_path(args.b));
    let mut records = Vec::new();
    for p in [&pa, &pb] {
        let rec = RunRecord::read(p)?;
        rec.verify_manifest(p.parent().unwrap_or(std::path::Path::new(".")))?;
        records.push(rec);
    }
    let tolerances = match &args.config {
        Some(path) => ExperimentConfig::load(path)?.compare_tolerances,
        None => BTreeMap::new(),
    };
    let diff = compare_runs(&records[0], &records[1], &tolerances)?;
    let json = serde_json::to_string_pretty(&diff).expect("diff serializes") + "\n";
    match &args.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
            write_file(&dir.join("diff.json"), json.as_bytes())?;
            write_file(&dir.join("diff.csv"), diff.to_csv().as_bytes())?;
        }
        None => print!("{json}"),
    }
    Ok(diff.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Barriers(a) => run_mode(Mode::Barriers, a),
        Command::Dirichlet(a) => run_mode(Mode::Dirichlet, a),
        Command::LimitStudy(a) => run_mode(Mode::LimitStudy, a),
        Command::Nonexistence(a) => run_mode(Mode::Nonexistence, a),
        Command::Selfcheck(a) => run_mode(Mode::Selfcheck, a),
        Command::Compare(a) => compare(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("lml: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
