//! Command implementations behind the `vlaj` binary. Every command writes its
//! files under [`CliConfig::output_dir`] and returns what it wrote, so the
//! binary only has to parse flags, print and pick an exit code.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use vlaj_core::labels::{read_final_labels, LabelError};
use vlaj_core::report::{
    correlation_table, discrimination_table, overhead_bench, quality_breakdown, render_breakdown,
    render_correlation, render_discrimination, render_overhead, JoinReport, OutputFormat, ReportError,
    StudyDataset, SCHEMA_VERSION,
};
use vlaj_core::summary::{compute_metrics, run_success, summarize};
use vlaj_core::synth::{generate_synthetic, Profile};
use vlaj_core::trace::{RunTrace, Task, TraceError};
use vlaj_core::{MetricConfig, RunMetrics, RunSummary};
use vlaj_server::{LabelService, ServiceError};

pub const SUMMARIES_FILE: &str = "summaries.json";
pub const DEFAULT_EV_SAMPLES: usize = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Trace { path: PathBuf, source: TraceError },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Labels { path: PathBuf, source: LabelError },
    #[error("no label matches a run in the summaries ({0} labels read)")]
    EmptyJoin(usize),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("no usable trace among {0} input file(s)")]
    NoTraces(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliConfig {
    pub window: usize,
    /// Repeated-inference samples per step a trace is expected to carry.
    pub ev_samples_expected: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub format: OutputFormat,
    /// Worker threads for `metrics`; 0 uses every core.
    pub jobs: usize,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            window: MetricConfig::default().window,
            ev_samples_expected: DEFAULT_EV_SAMPLES,
            seed: 0,
            output_dir: PathBuf::from("."),
            format: OutputFormat::Text,
            jobs: 0,
        }
    }
}

impl CliConfig {
    pub fn metric_config(&self) -> Result<MetricConfig, CliError> {
        MetricConfig::with_window(self.window).map_err(|e| CliError::Usage(format!("--window: {e}")))
    }

    fn prepare_output(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.output_dir).map_err(io_err(&self.output_dir))
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.output_dir.join(name);
        fs::write(&path, contents).map_err(io_err(&path))?;
        Ok(path)
    }
}

/// An input that could not be processed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileFailure {
    pub path: PathBuf,
    pub error: String,
}

/// Expands directories to the `*.jsonl` files they contain (not recursive).
/// The result is sorted and free of duplicates.
pub fn collect_trace_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = BTreeSet::new();
    for input in inputs {
        if input.is_dir() {
            for entry in fs::read_dir(input).map_err(io_err(input))? {
                let path = entry.map_err(io_err(input))?.path();
                if path.is_file() && path.extension().is_some_and(|e| e == "jsonl") {
                    out.insert(path);
                }
            }
        } else {
            out.insert(input.clone());
        }
    }
    Ok(out.into_iter().collect())
}

/// Loads every path, keeping failures instead of stopping at the first one.
pub fn load_traces(paths: &[PathBuf]) -> (Vec<RunTrace>, Vec<FileFailure>) {
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for path in paths {
        match RunTrace::load(path) {
            Ok(t) => traces.push(t),
            Err(e) => failures.push(FileFailure {
                path: path.clone(),
                error: e.to_string(),
            }),
        }
    }
    (traces, failures)
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("metric output serializes");
    s.push('\n');
    s
}

fn valid_file_stem(run_id: &str) -> bool {
    !run_id.is_empty()
        && run_id != "."
        && run_id != ".."
        && !run_id.contains(['/', '\\', '\0'])
}

#[derive(Serialize, Deserialize)]
struct SummariesFile {
    schema_version: u32,
    table: String,
    window: usize,
    rows: Vec<RunSummary>,
}

#[derive(Debug)]
pub struct MetricsReport {
    /// Per-run metric files, ordered by run_id.
    pub written: Vec<PathBuf>,
    pub summaries: PathBuf,
    pub failures: Vec<FileFailure>,
}

/// Computes all metrics for every trace and writes `<run_id>.metrics.json`
/// per run plus the consolidated [`SUMMARIES_FILE`].
pub fn cmd_metrics(inputs: &[PathBuf], cfg: &CliConfig) -> Result<MetricsReport, CliError> {
    let metric_cfg = cfg.metric_config()?;
    let paths = collect_trace_paths(inputs)?;
    cfg.prepare_output()?;

    let process = |path: &PathBuf| -> Result<(RunMetrics, RunSummary), FileFailure> {
        let fail = |error: String| FileFailure {
            path: path.clone(),
            error,
        };
        let trace = RunTrace::load(path).map_err(|e| fail(e.to_string()))?;
        if !valid_file_stem(trace.run_id()) {
            return Err(fail(format!("run_id `{}` cannot be used as a file name", trace.run_id())));
        }
        check_ev_samples(&trace, cfg.ev_samples_expected);
        let metrics = compute_metrics(&trace, &metric_cfg);
        let (success, note) = run_success(&trace);
        let mut summary = summarize(&metrics, success, None);
        summary.notes.extend(note);
        Ok((metrics, summary))
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    let results: Vec<_> = pool.install(|| paths.par_iter().map(process).collect());

    let mut failures = Vec::new();
    let mut runs: BTreeMap<String, (RunMetrics, RunSummary)> = BTreeMap::new();
    for (path, result) in paths.iter().zip(results) {
        match result {
            Ok((m, s)) => {
                if runs.contains_key(&m.run_id) {
                    failures.push(FileFailure {
                        path: path.clone(),
                        error: format!("duplicate run_id `{}`", m.run_id),
                    });
                } else {
                    runs.insert(m.run_id.clone(), (m, s));
                }
            }
            Err(f) => failures.push(f),
        }
    }

    let mut written = Vec::with_capacity(runs.len());
    let mut rows = Vec::with_capacity(runs.len());
    for (run_id, (metrics, summary)) in runs {
        written.push(cfg.write(&format!("{run_id}.metrics.json"), &pretty(&metrics))?);
        rows.push(summary);
    }
    let summaries = cfg.write(
        SUMMARIES_FILE,
        &pretty(&SummariesFile {
            schema_version: SCHEMA_VERSION,
            table: "summaries".into(),
            window: metric_cfg.window,
            rows,
        }),
    )?;
    for f in &failures {
        log::error!("{}: {}", f.path.display(), f.error);
    }
    Ok(MetricsReport {
        written,
        summaries,
        failures,
    })
}

fn check_ev_samples(trace: &RunTrace, expected: usize) {
    let odd = trace
        .steps
        .iter()
        .filter_map(|s| s.ev_actions.as_ref())
        .find(|samples| samples.len() != expected);
    if let Some(samples) = odd {
        log::warn!(
            "{}: {} inference samples per step, expected {expected}",
            trace.run_id(),
            samples.len()
        );
    }
}

/// Reads run summaries from a [`SUMMARIES_FILE`] or a bare JSON array.
pub fn read_summaries(path: &Path) -> Result<Vec<RunSummary>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parse = |message: String| CliError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let value: Value = serde_json::from_str(&text).map_err(|e| parse(e.to_string()))?;
    let rows = match value {
        Value::Array(_) => value,
        Value::Object(mut map) => map
            .remove("rows")
            .ok_or_else(|| parse("expected a `rows` array".into()))?,
        _ => return Err(parse("expected a summaries object or array".into())),
    };
    serde_json::from_value(rows).map_err(|e| parse(e.to_string()))
}

#[derive(Debug)]
pub struct AnalyzeReport {
    pub written: Vec<PathBuf>,
    pub join: JoinReport,
    pub labeled_runs: usize,
}

/// Writes the quality breakdown and, when any run carries a label, the
/// correlation and discrimination tables.
pub fn cmd_analyze(summaries: &Path, labels: Option<&Path>, cfg: &CliConfig) -> Result<AnalyzeReport, CliError> {
    let runs = read_summaries(summaries)?;
    let (ds, join) = match labels {
        Some(path) => {
            let labels = read_final_labels(path).map_err(|source| CliError::Labels {
                path: path.to_path_buf(),
                source,
            })?;
            let (ds, join) = StudyDataset::new(runs, &labels)?;
            if !labels.is_empty() && !ds.has_labels() {
                return Err(CliError::EmptyJoin(labels.len()));
            }
            (ds, join)
        }
        None => (StudyDataset::from_summaries(runs)?, JoinReport::default()),
    };
    cfg.prepare_output()?;
    let ext = cfg.format.extension();
    let mut written = vec![cfg.write(
        &format!("quality_breakdown.{ext}"),
        &render_breakdown(&quality_breakdown(&ds), cfg.format)?,
    )?];
    if ds.has_labels() {
        written.push(cfg.write(
            &format!("correlation_table.{ext}"),
            &render_correlation(&correlation_table(&ds), cfg.format)?,
        )?);
        written.push(cfg.write(
            &format!("discrimination_table.{ext}"),
            &render_discrimination(&discrimination_table(&ds), cfg.format)?,
        )?);
    } else {
        log::warn!("no quality labels: writing the breakdown only");
    }
    Ok(AnalyzeReport {
        written,
        join,
        labeled_runs: ds.runs.iter().filter(|r| r.quality_label.is_some()).count(),
    })
}

/// Host description written at the top of bench output.
#[derive(Debug, Clone, Serialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub cpu_model: Option<String>,
    pub build: String,
    pub unix_time: u64,
}

impl MachineInfo {
    pub fn current() -> Self {
        let cpu_model = fs::read_to_string("/proc/cpuinfo").ok().and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        });
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            cpu_model,
            build: if cfg!(debug_assertions) { "debug" } else { "release" }.into(),
            unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    fn comment_lines(&self) -> String {
        format!(
            "# os: {} {}\n# cpus: {}\n# cpu: {}\n# build: {}\n# unix_time: {}\n",
            self.os,
            self.arch,
            self.cpus,
            self.cpu_model.as_deref().unwrap_or("unknown"),
            self.build,
            self.unix_time
        )
    }
}

#[derive(Debug)]
pub struct BenchReport {
    pub path: PathBuf,
    pub rendered: String,
    pub failures: Vec<FileFailure>,
}

/// Times each metric group per step and writes `overhead.<ext>`.
pub fn cmd_bench(inputs: &[PathBuf], repetitions: usize, cfg: &CliConfig) -> Result<BenchReport, CliError> {
    let metric_cfg = cfg.metric_config()?;
    if repetitions == 0 {
        return Err(CliError::Usage("--repetitions must be at least 1".into()));
    }
    let paths = collect_trace_paths(inputs)?;
    let (traces, failures) = load_traces(&paths);
    for f in &failures {
        log::error!("{}: {}", f.path.display(), f.error);
    }
    if traces.is_empty() {
        return Err(CliError::NoTraces(paths.len()));
    }
    let samples = overhead_bench(&traces, repetitions, &metric_cfg)?;
    let body = render_overhead(&samples, cfg.format)?;
    let machine = MachineInfo::current();
    let rendered = match cfg.format {
        OutputFormat::Json => {
            let mut v: Value = serde_json::from_str(&body).expect("rendered JSON parses");
            v["machine"] = serde_json::to_value(&machine).expect("machine info serializes");
            pretty(&v)
        }
        _ => format!("{}{body}", machine.comment_lines()),
    };
    cfg.prepare_output()?;
    let path = cfg.write(&format!("overhead.{}", cfg.format.extension()), &rendered)?;
    Ok(BenchReport {
        path,
        rendered,
        failures,
    })
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub trace_dir: PathBuf,
    pub labels_log: PathBuf,
    pub bind: SocketAddr,
    pub batch_limit: usize,
    pub media_dir: Option<PathBuf>,
}

/// Loads the traces under `opts.trace_dir` and opens the label log.
pub fn build_service(opts: &ServeOptions) -> Result<LabelService, CliError> {
    if !opts.trace_dir.is_dir() {
        return Err(CliError::Io {
            path: opts.trace_dir.clone(),
            source: io::Error::new(io::ErrorKind::NotFound, "not a readable directory"),
        });
    }
    let paths = collect_trace_paths(std::slice::from_ref(&opts.trace_dir))?;
    let (traces, failures) = load_traces(&paths);
    for f in &failures {
        log::warn!("skipping {}: {}", f.path.display(), f.error);
    }
    if traces.is_empty() {
        return Err(CliError::NoTraces(paths.len()));
    }
    Ok(LabelService::open(
        &traces,
        &opts.labels_log,
        opts.media_dir.clone(),
        opts.batch_limit,
    )?)
}

/// Serves the label service until `shutdown` resolves.
pub async fn serve_until(
    opts: &ServeOptions,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), CliError> {
    let service = build_service(opts)?;
    vlaj_server::serve(opts.bind, Arc::new(service), shutdown)
        .await
        .map_err(|source| CliError::Io {
            path: PathBuf::from(opts.bind.to_string()),
            source,
        })
}

/// Serves until Ctrl-C.
pub fn cmd_serve(opts: &ServeOptions) -> Result<(), CliError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(io_err(Path::new("tokio runtime")))?;
    runtime.block_on(serve_until(opts, async {
        if tokio::signal::ctrl_c().await.is_ok() {
            log::info!("shutting down");
        }
    }))
}

/// Writes `count` traces per (profile, task) with seeds `cfg.seed..cfg.seed + count`.
pub fn cmd_synth(profiles: &[Profile], tasks: &[Task], count: u64, cfg: &CliConfig) -> Result<Vec<PathBuf>, CliError> {
    cfg.prepare_output()?;
    let mut written = Vec::new();
    for &profile in profiles {
        for &task in tasks {
            for seed in cfg.seed..cfg.seed + count {
                let trace = generate_synthetic(profile, task, seed);
                written.push(cfg.write(&format!("{}.jsonl", trace.run_id()), &trace.to_jsonl())?);
            }
        }
    }
    written.sort();
    Ok(written)
}
