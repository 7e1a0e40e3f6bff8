use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lossagent::harness::{compare_policies, emit_weight_curves, selftest, SelftestOptions};
use lossagent::orchestrator::{load, run, PolicyKind, RunConfig, RunOptions};

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "lossagent", version, about = "Stagewise loss re-weighting driven by a chat-model agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its trajectory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Trajectory JSONL output (default: trajectory.jsonl).
        #[arg(long, default_value = "trajectory.jsonl")]
        out: PathBuf,
    },
    /// Run every policy × seed pair and print a JSON comparison report.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated: agent, fixed, random, greedy_oracle.
        #[arg(long, value_delimiter = ',', required = true)]
        policies: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Parallel runs (default: available cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Directory for per-run trajectory files.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Export loss-weight and score curves from a trajectory as CSV.
    Curves {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Offline checks: gradients, reply parsing, and a 3-stage scripted run.
    Selftest {
        /// Corrupt one analytic gradient to prove the check can fail.
        #[arg(long)]
        inject_gradient_fault: bool,
    },
}

fn read_config(path: &Path) -> Result<RunConfig, ExitCode> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(EXIT_IO)
    })?;
    RunConfig::from_json(&text).map_err(|e| {
        eprintln!("error: invalid configuration {}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG)
    })
}

fn cmd_run(config: &Path, out: PathBuf) -> ExitCode {
    let cfg = match read_config(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let options = RunOptions {
        out: Some(out.clone()),
        backend: None,
    };
    match run(&cfg, options) {
        Ok(t) => {
            let last = t.last().expect("stages >= 1");
            let scores: Vec<String> = last
                .feedback
                .iter()
                .filter_map(|f| Some(format!("{}={:.4}", f.objective_name, f.score_aggregate()?)))
                .collect();
            println!(
                "{} stages written to {}; final {}",
                t.len(),
                out.display(),
                if scores.is_empty() { "-".into() } else { scores.join(", ") }
            );
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.error.exit_code() as u8)
        }
    }
}

fn cmd_compare(
    config: &Path,
    policies: &[String],
    seeds: &[u64],
    workers: Option<usize>,
    out_dir: Option<&Path>,
) -> ExitCode {
    let cfg = match read_config(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let mut kinds = Vec::new();
    for p in policies {
        match PolicyKind::parse(p) {
            Some(k) => kinds.push(k),
            None => {
                eprintln!("error: unknown policy `{p}` (expected agent, fixed, random, greedy_oracle)");
                return ExitCode::from(EXIT_CONFIG);
            }
        }
    }
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match compare_policies(&cfg, &kinds, seeds, workers, out_dir) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serialises"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn cmd_curves(input: &Path, out: &Path) -> ExitCode {
    let file = match load(input) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {}: {e}", input.display());
            return ExitCode::from(EXIT_IO);
        }
    };
    match emit_weight_curves(&file.entries, &file.header.loss_terms, out) {
        Ok(()) => {
            println!("{} rows written to {}", file.entries.len(), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_IO)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out } => cmd_run(&config, out),
        Command::Compare {
            config,
            policies,
            seeds,
            workers,
            out_dir,
        } => cmd_compare(&config, &policies, &seeds, workers, out_dir.as_deref()),
        Command::Curves { input, out } => cmd_curves(&input, &out),
        Command::Selftest { inject_gradient_fault } => {
            let options = SelftestOptions { inject_gradient_fault };
            if selftest(&options, &mut std::io::stdout()) {
                println!("selftest: all checks passed");
                ExitCode::SUCCESS
            } else {
                println!("selftest: FAILED");
                ExitCode::FAILURE
            }
        }
    }
}
