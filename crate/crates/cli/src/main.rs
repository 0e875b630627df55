use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use vlaj_cli::{
    cmd_analyze, cmd_bench, cmd_metrics, cmd_serve, cmd_synth, CliConfig, CliError, FileFailure, ServeOptions,
    DEFAULT_EV_SAMPLES,
};
use vlaj_core::report::OutputFormat;
use vlaj_core::synth::Profile;
use vlaj_core::trace::Task;

/// Uncertainty and quality metrics for recorded robot-policy runs.
///
/// Every flag can also be set through a VLAJ_* environment variable;
/// flags take precedence.
#[derive(Parser)]
#[command(name = "vlaj", version)]
struct Cli {
    /// Difference window length in steps (at least 4).
    #[arg(long, global = true, env = "VLAJ_WINDOW", default_value_t = 8)]
    window: usize,

    /// Inference samples per step expected for EV; other counts are warned about.
    #[arg(long, global = true, env = "VLAJ_EV_SAMPLES", default_value_t = DEFAULT_EV_SAMPLES)]
    ev_samples: usize,

    /// Report format: text, csv or json.
    #[arg(long, global = true, env = "VLAJ_FORMAT", default_value = "text")]
    format: OutputFormat,

    /// Directory for every file a command writes.
    #[arg(short, long, global = true, env = "VLAJ_OUTPUT_DIR", default_value = ".")]
    output_dir: PathBuf,

    /// Worker threads for `metrics` (0: one per core).
    #[arg(short, long, global = true, env = "VLAJ_JOBS", default_value_t = 0)]
    jobs: usize,

    /// Base seed for `synth`.
    #[arg(long, global = true, env = "VLAJ_SEED", default_value_t = 0)]
    seed: u64,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute per-step metrics for trace files or directories of *.jsonl traces.
    Metrics {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Build the quality breakdown, correlation and discrimination tables.
    Analyze {
        /// summaries.json written by `metrics`.
        summaries: PathBuf,
        /// Label log (.jsonl), label CSV or resolved CSV.
        #[arg(long, env = "VLAJ_LABELS")]
        labels: Option<PathBuf>,
    },
    /// Measure per-step cost of each metric group.
    Bench {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Timed passes per trace and group.
        #[arg(long, env = "VLAJ_REPETITIONS", default_value_t = 5)]
        repetitions: usize,
    },
    /// Run the HTTP label service over a directory of traces.
    Serve {
        trace_dir: PathBuf,
        /// Append-only label log; replayed on start.
        #[arg(long, env = "VLAJ_LABELS_LOG", default_value = "labels.jsonl")]
        labels_log: PathBuf,
        #[arg(long, env = "VLAJ_BIND", default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Runs offered per annotator session.
        #[arg(long, env = "VLAJ_BATCH_LIMIT", default_value_t = vlaj_server::DEFAULT_BATCH_LIMIT)]
        batch_limit: usize,
        /// Directory holding `<run_id>.mp4` renders.
        #[arg(long, env = "VLAJ_MEDIA_DIR")]
        media_dir: Option<PathBuf>,
    },
    /// Write synthetic traces, one file per run.
    Synth {
        /// Profiles to generate (comma separated); all when omitted.
        #[arg(long, value_delimiter = ',')]
        profile: Vec<Profile>,
        /// Tasks to generate (comma separated); all when omitted.
        #[arg(long, value_delimiter = ',')]
        task: Vec<Task>,
        /// Traces per profile and task.
        #[arg(long, default_value_t = 1)]
        count: u64,
    },
}

fn report_failures(failures: &[FileFailure]) -> ExitCode {
    if failures.is_empty() {
        return ExitCode::SUCCESS;
    }
    eprintln!("{} input(s) failed:", failures.len());
    for f in failures {
        eprintln!("  {}: {}", f.path.display(), f.error);
    }
    ExitCode::from(1)
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let cfg = CliConfig {
        window: cli.window,
        ev_samples_expected: cli.ev_samples,
        seed: cli.seed,
        output_dir: cli.output_dir,
        format: cli.format,
        jobs: cli.jobs,
    };
    match cli.command {
        Command::Metrics { traces } => {
            let report = cmd_metrics(&traces, &cfg)?;
            println!("{} run(s) -> {}", report.written.len(), report.summaries.display());
            Ok(report_failures(&report.failures))
        }
        Command::Analyze { summaries, labels } => {
            let report = cmd_analyze(&summaries, labels.as_deref(), &cfg)?;
            if !report.join.orphan_labels.is_empty() {
                eprintln!("warning: labels for unknown runs: {}", report.join.orphan_labels.join(", "));
            }
            if !report.join.labeled_failures.is_empty() {
                eprintln!(
                    "warning: labels on failed runs ignored: {}",
                    report.join.labeled_failures.join(", ")
                );
            }
            for path in &report.written {
                if cfg.format == OutputFormat::Text {
                    println!("{}", std::fs::read_to_string(path).unwrap_or_default());
                } else {
                    println!("{}", path.display());
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { traces, repetitions } => {
            let report = cmd_bench(&traces, repetitions, &cfg)?;
            if cfg.format == OutputFormat::Text {
                print!("{}", report.rendered);
            } else {
                println!("{}", report.path.display());
            }
            Ok(report_failures(&report.failures))
        }
        Command::Serve {
            trace_dir,
            labels_log,
            bind,
            batch_limit,
            media_dir,
        } => {
            cmd_serve(&ServeOptions {
                trace_dir,
                labels_log,
                bind,
                batch_limit,
                media_dir,
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth { profile, task, count } => {
            let profiles = if profile.is_empty() { Profile::ALL.to_vec() } else { profile };
            let tasks = if task.is_empty() { Task::ALL.to_vec() } else { task };
            let written = cmd_synth(&profiles, &tasks, count, &cfg)?;
            println!("wrote {} trace(s) to {}", written.len(), cfg.output_dir.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
