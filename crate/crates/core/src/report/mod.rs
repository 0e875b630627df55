//! Study-level aggregation: quality breakdown, metric/label correlation,
//! quality-versus-failure discrimination and metric overhead.

mod overhead;
mod render;
mod tables;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::QualityLevel;
use crate::summary::RunSummary;
use crate::trace::Task;

pub use overhead::{decode_replay, overhead_bench, time_per_step, MetricGroup, OverheadSample};
pub use render::{render_breakdown, render_correlation, render_discrimination, render_overhead, SCHEMA_VERSION};
pub use tables::{
    correlation_table, count_with_percent, discrimination_table, percent, quality_breakdown, BreakdownRow,
    CorrelationCell, DiscriminationCell, MIN_GROUP_SIZE,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("dataset has no runs")]
    EmptyDataset,
    #[error("run_id `{0}` appears more than once")]
    DuplicateRun(String),
    #[error("nothing to time: the trace set has no steps")]
    NothingToTime,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Text,
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Text => "txt",
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Text => "text",
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        })
    }
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(OutputFormat::Text),
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(format!("unknown format `{s}` (expected text, csv or json)")),
        }
    }
}

/// Labels that could not be joined onto a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinReport {
    /// Labeled run_ids with no summary.
    pub orphan_labels: Vec<String>,
    /// Labeled runs the oracle marked as failed; their labels are ignored.
    pub labeled_failures: Vec<String>,
}

/// Run summaries joined with final quality labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDataset {
    /// Sorted by run_id.
    pub runs: Vec<RunSummary>,
    pub metadata: BTreeMap<String, String>,
}

impl StudyDataset {
    /// Joins `labels` onto `runs`, replacing any label the summaries carry.
    pub fn new(
        mut runs: Vec<RunSummary>,
        labels: &BTreeMap<String, QualityLevel>,
    ) -> Result<(Self, JoinReport), ReportError> {
        if runs.is_empty() {
            return Err(ReportError::EmptyDataset);
        }
        runs.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        if let Some(w) = runs.windows(2).find(|w| w[0].run_id == w[1].run_id) {
            return Err(ReportError::DuplicateRun(w[0].run_id.clone()));
        }
        let known: BTreeSet<&str> = runs.iter().map(|r| r.run_id.as_str()).collect();
        let mut join = JoinReport {
            orphan_labels: labels
                .keys()
                .filter(|id| !known.contains(id.as_str()))
                .cloned()
                .collect(),
            ..JoinReport::default()
        };
        for run in &mut runs {
            run.quality_label = labels.get(&run.run_id).copied();
            if run.quality_label.is_some() && !run.success {
                join.labeled_failures.push(run.run_id.clone());
                run.quality_label = None;
            }
        }
        if !join.orphan_labels.is_empty() {
            log::warn!("{} label(s) reference unknown runs", join.orphan_labels.len());
        }
        if !join.labeled_failures.is_empty() {
            log::warn!("{} label(s) on failed runs ignored", join.labeled_failures.len());
        }
        Ok((
            Self {
                runs,
                metadata: BTreeMap::new(),
            },
            join,
        ))
    }

    /// Uses the labels already carried by the summaries.
    pub fn from_summaries(runs: Vec<RunSummary>) -> Result<Self, ReportError> {
        let labels = runs
            .iter()
            .filter_map(|r| r.quality_label.map(|l| (r.run_id.clone(), l)))
            .collect();
        Ok(Self::new(runs, &labels)?.0)
    }

    pub fn has_labels(&self) -> bool {
        self.runs.iter().any(|r| r.quality_label.is_some())
    }

    /// Runs grouped by (model, task), both in sorted order.
    pub fn groups(&self) -> BTreeMap<(&str, Task), Vec<&RunSummary>> {
        let mut groups: BTreeMap<(&str, Task), Vec<&RunSummary>> = BTreeMap::new();
        for run in &self.runs {
            groups.entry((run.model_id.as_str(), run.task)).or_default().push(run);
        }
        groups
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn summary(id: &str, success: bool) -> RunSummary {
        RunSummary {
            run_id: id.into(),
            model_id: "m".into(),
            task: Task::PickUp,
            steps: 10,
            per_metric_mean: BTreeMap::new(),
            ti: None,
            success,
            quality_label: None,
            notes: Vec::new(),
        }
    }

    #[test]
    fn join_reports_orphans_and_failures() {
        let labels = BTreeMap::from([
            ("a".to_string(), QualityLevel::High),
            ("b".to_string(), QualityLevel::Low),
            ("ghost".to_string(), QualityLevel::High),
        ]);
        let (ds, join) = StudyDataset::new(vec![summary("b", false), summary("a", true)], &labels).unwrap();
        assert_eq!(ds.runs[0].run_id, "a");
        assert_eq!(ds.runs[0].quality_label, Some(QualityLevel::High));
        assert_eq!(ds.runs[1].quality_label, None);
        assert_eq!(join.orphan_labels, vec!["ghost".to_string()]);
        assert_eq!(join.labeled_failures, vec!["b".to_string()]);
    }

    #[test]
    fn duplicate_and_empty_rejected() {
        let none = BTreeMap::new();
        assert!(matches!(StudyDataset::new(vec![], &none), Err(ReportError::EmptyDataset)));
        assert!(matches!(
            StudyDataset::new(vec![summary("a", true), summary("a", false)], &none),
            Err(ReportError::DuplicateRun(id)) if id == "a"
        ));
    }

    #[test]
    fn format_parsing() {
        assert_eq!("JSON".parse::<OutputFormat>().unwrap(), OutputFormat::Json);
        assert!("xml".parse::<OutputFormat>().is_err());
    }
}
