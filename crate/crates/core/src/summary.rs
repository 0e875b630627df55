//! Computes every metric for a run and reduces them to per-run means.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::labels::QualityLevel;
use crate::metric::{MetricConfig, MetricError, MetricId, MetricSeries};
use crate::oracle::success_oracle;
use crate::trace::{RunTrace, Task};
use crate::{quality, uncertainty};

/// All metric series of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run_id: String,
    pub model_id: String,
    pub task: Task,
    pub steps: usize,
    pub window: usize,
    pub series: BTreeMap<MetricId, MetricSeries>,
    pub ti: Option<f64>,
    /// Reasons for every metric that could not be computed.
    pub notes: Vec<String>,
}

/// Per-step series computed by [`compute_metrics`], in report order.
fn series_metric(
    id: MetricId,
    trace: &RunTrace,
    cfg: &MetricConfig,
) -> Result<MetricSeries, MetricError> {
    match id {
        MetricId::TbTp => uncertainty::tb_tp(trace),
        MetricId::TbPcs => uncertainty::tb_pcs(trace),
        MetricId::TbD => uncertainty::tb_d(trace),
        MetricId::TbE => uncertainty::tb_e(trace),
        MetricId::APi => uncertainty::a_pi(trace, cfg),
        MetricId::AVi => uncertainty::a_vi(trace, cfg),
        MetricId::AAi => uncertainty::a_ai(trace, cfg),
        MetricId::Ev => uncertainty::ev(trace),
        MetricId::TcpPi => quality::tcp_pi(trace, cfg),
        MetricId::TcpVi => quality::tcp_vi(trace, cfg),
        MetricId::TcpAi => quality::tcp_ai(trace, cfg),
        MetricId::Ot => quality::ot(trace),
        MetricId::Ti => unreachable!("TI is a run-level value"),
    }
}

pub fn compute_metrics(trace: &RunTrace, cfg: &MetricConfig) -> RunMetrics {
    let mut series = BTreeMap::new();
    let mut notes = Vec::new();
    for id in MetricId::ALL {
        if id == MetricId::Ti {
            continue;
        }
        match series_metric(id, trace, cfg) {
            Ok(s) => {
                series.insert(id, s);
            }
            Err(e) => notes.push(e.to_string()),
        }
    }
    let ti = match quality::ti(trace) {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(e.to_string());
            None
        }
    };
    RunMetrics {
        run_id: trace.run_id().to_string(),
        model_id: trace.header.model_or_unknown().to_string(),
        task: trace.header.task,
        steps: trace.len(),
        window: cfg.window,
        series,
        ti,
        notes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub model_id: String,
    pub task: Task,
    pub steps: usize,
    /// Mean of each available per-step series; TI is included as-is.
    pub per_metric_mean: BTreeMap<MetricId, f64>,
    pub ti: Option<f64>,
    pub success: bool,
    #[serde(default)]
    pub quality_label: Option<QualityLevel>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl RunSummary {
    pub fn metric(&self, id: MetricId) -> Option<f64> {
        self.per_metric_mean.get(&id).copied()
    }
}

/// The run's success verdict: the trace's recorded oracle outcome when present,
/// otherwise the geometric oracle. Returns a note when neither is available.
pub fn run_success(trace: &RunTrace) -> (bool, Option<String>) {
    if let Some(recorded) = trace.outcome.as_ref().and_then(|o| o.oracle_success) {
        return (recorded, None);
    }
    match success_oracle(trace) {
        Ok(s) => (s, None),
        Err(e) => (false, Some(format!("success oracle: {e}; counted as failure"))),
    }
}

/// Reduces computed metrics to a summary.
pub fn summarize(metrics: &RunMetrics, success: bool, quality_label: Option<QualityLevel>) -> RunSummary {
    let mut per_metric_mean: BTreeMap<MetricId, f64> =
        metrics.series.iter().map(|(&id, s)| (id, s.mean())).collect();
    if let Some(ti) = metrics.ti {
        per_metric_mean.insert(MetricId::Ti, ti);
    }
    RunSummary {
        run_id: metrics.run_id.clone(),
        model_id: metrics.model_id.clone(),
        task: metrics.task,
        steps: metrics.steps,
        per_metric_mean,
        ti: metrics.ti,
        success,
        quality_label,
        notes: metrics.notes.clone(),
    }
}

/// Computes all metrics and summarizes them, joining a label when one is known.
pub fn summarize_run(
    trace: &RunTrace,
    labels: Option<&BTreeMap<String, QualityLevel>>,
    cfg: &MetricConfig,
) -> RunSummary {
    let metrics = compute_metrics(trace, cfg);
    let (success, note) = run_success(trace);
    let label = labels.and_then(|l| l.get(trace.run_id()).copied());
    let mut summary = summarize(&metrics, success, label);
    summary.notes.extend(note);
    summary
}
