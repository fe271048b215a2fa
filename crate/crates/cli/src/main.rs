use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dlfuzz_core::campaign::{
    coverage_of, fuzz_loop, load_bug_records, replay_with, Budget, CampaignConfig, CampaignError,
};
use dlfuzz_core::fixtures::load_inputs;
use dlfuzz_core::oracle::{DEFAULT_EPSILON, DEFAULT_SIMILARITY};
use dlfuzz_core::seeds::seed_repository;
use std::io::{ErrorKind, Write};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dlfuzz",
    version,
    about = "Component-assembling differential fuzzer for inference engines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a fuzz campaign.
    Fuzz(FuzzArgs),
    /// Re-execute one bug record and print its verdict.
    Replay {
        #[arg(long)]
        record: PathBuf,
        /// 1-based line of the bug log; the first record by default.
        #[arg(long, default_value_t = 1)]
        line: usize,
        /// Campaign directory; defaults to the directory holding the record.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Tensor-exchange file with raw `image`/`pointcloud` inputs to use
        /// instead of the ones regenerated from the record's seed.
        #[arg(long)]
        inputs: Option<PathBuf>,
    },
    /// Print coverage of a finished campaign.
    Coverage {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the built-in seed repository to a directory.
    InitRepo {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct FuzzArgs {
    /// Component repository; built-in seeds when omitted.
    #[arg(long)]
    repo: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, conflicts_with = "duration")]
    iterations: Option<u64>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Restrict to these scenarios (repeatable).
    #[arg(long = "scenario")]
    scenarios: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_SIMILARITY)]
    sim_threshold: f64,
    /// JSON list of injected faults.
    #[arg(long)]
    faults: Option<PathBuf>,
    /// JSON list of {keyword, label} crash patterns.
    #[arg(long)]
    bug_patterns: Option<PathBuf>,
    #[arg(long)]
    no_fusion: bool,
    #[arg(long)]
    no_reduced_precision: bool,
    #[arg(long)]
    no_buffer_reuse: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Prints a line, treating a closed stdout as success.
fn emit(text: &str) -> Result<()> {
    match writeln!(std::io::stdout(), "{text}") {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn fuzz(a: FuzzArgs) -> Result<ExitCode> {
    let mut cfg = CampaignConfig::new(a.seed, 1, a.out);
    cfg.budget = match (a.iterations, a.duration) {
        (_, Some(s)) => Budget::Seconds(s),
        (Some(n), None) => Budget::Iterations(n),
        (None, None) => bail!("one of --iterations or --duration is required"),
    };
    cfg.scenarios = a.scenarios;
    cfg.epsilon = a.epsilon;
    cfg.sim_threshold = a.sim_threshold;
    cfg.faults_file = a.faults;
    cfg.bug_patterns_file = a.bug_patterns;
    cfg.repo = a.repo;
    cfg.optimizer.fuse_conv_bn = !a.no_fusion;
    cfg.optimizer.reduced_precision = !a.no_reduced_precision;
    cfg.optimizer.buffer_reuse = !a.no_buffer_reuse;
    let report = match fuzz_loop(&cfg) {
        Ok(r) => r,
        Err(e @ (CampaignError::Config(_) | CampaignError::Repo(_))) => return Err(e.into()),
        Err(e) => return Err(e).context("campaign aborted"),
    };
    emit(&serde_json::to_string_pretty(&report)?)?;
    Ok(if report.found_bugs() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Fuzz(a) => fuzz(a),
        Command::Replay {
            record,
            line,
            out,
            inputs,
        } => {
            let records = load_bug_records(&record).with_context(|| format!("reading {}", record.display()))?;
            let Some(rec) = line.checked_sub(1).and_then(|i| records.get(i)) else {
                bail!("{} has no record on line {line}", record.display());
            };
            let dir = match out {
                Some(d) => d,
                None => record.parent().map(PathBuf::from).unwrap_or_default(),
            };
            let raw = match &inputs {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    Some(load_inputs(&text).with_context(|| format!("parsing {}", p.display()))?)
                }
                None => None,
            };
            let verdict = replay_with(rec, &dir, raw.as_ref())?;
            emit(&serde_json::to_string_pretty(&verdict)?)?;
            if verdict.kind != rec.kind {
                bail!(
                    "replay gave {} but the record says {}",
                    verdict.kind.name(),
                    rec.kind.name()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Coverage { out } => {
            emit(&serde_json::to_string_pretty(&coverage_of(&out)?)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::InitRepo { dir } => {
            seed_repository().save(&dir)?;
            emit(&format!("wrote seed repository to {}", dir.display()))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
