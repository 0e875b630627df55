//! Metric identifiers, per-step series and the shared differencing driver.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::OracleError;
use crate::trace::StepRecord;
use crate::window::{DifferenceWindow, DEFAULT_WINDOW, MAX_ORDER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricId {
    #[serde(rename = "A_PI")]
    APi,
    #[serde(rename = "A_VI")]
    AVi,
    #[serde(rename = "A_AI")]
    AAi,
    #[serde(rename = "TB_TP")]
    TbTp,
    #[serde(rename = "TB_PCS")]
    TbPcs,
    #[serde(rename = "TB_D")]
    TbD,
    #[serde(rename = "TB_E")]
    TbE,
    #[serde(rename = "EV")]
    Ev,
    #[serde(rename = "TCP_PI")]
    TcpPi,
    #[serde(rename = "TCP_VI")]
    TcpVi,
    #[serde(rename = "TCP_AI")]
    TcpAi,
    /// Run-level RMS jerk; has no per-step series.
    #[serde(rename = "TI")]
    Ti,
    #[serde(rename = "OT")]
    Ot,
}

impl MetricId {
    /// Every metric in report order: the eight uncertainty metrics, then the five quality metrics.
    pub const ALL: [MetricId; 13] = [
        MetricId::TbTp,
        MetricId::TbPcs,
        MetricId::TbD,
        MetricId::TbE,
        MetricId::APi,
        MetricId::AVi,
        MetricId::AAi,
        MetricId::Ev,
        MetricId::TcpPi,
        MetricId::TcpVi,
        MetricId::TcpAi,
        MetricId::Ti,
        MetricId::Ot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::APi => "A_PI",
            MetricId::AVi => "A_VI",
            MetricId::AAi => "A_AI",
            MetricId::TbTp => "TB_TP",
            MetricId::TbPcs => "TB_PCS",
            MetricId::TbD => "TB_D",
            MetricId::TbE => "TB_E",
            MetricId::Ev => "EV",
            MetricId::TcpPi => "TCP_PI",
            MetricId::TcpVi => "TCP_VI",
            MetricId::TcpAi => "TCP_AI",
            MetricId::Ti => "TI",
            MetricId::Ot => "OT",
        }
    }

    /// Display name with hyphens (`A-PI`).
    pub fn label(self) -> String {
        self.as_str().replace('_', "-")
    }

    pub fn is_uncertainty(self) -> bool {
        !matches!(
            self,
            MetricId::TcpPi | MetricId::TcpVi | MetricId::TcpAi | MetricId::Ti | MetricId::Ot
        )
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        MetricId::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

/// Per-step values of one metric over a run, keyed by step index `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub metric_id: MetricId,
    pub valid_from: u64,
    pub values: BTreeMap<u64, f64>,
}

impl MetricSeries {
    pub fn from_values(metric_id: MetricId, values: BTreeMap<u64, f64>) -> Option<Self> {
        let valid_from = *values.keys().next()?;
        Some(Self {
            metric_id,
            valid_from,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, t: u64) -> Option<f64> {
        self.values.get(&t).copied()
    }

    /// Mean over the defined steps.
    pub fn mean(&self) -> f64 {
        self.values.values().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("{metric}: needs at least {required} steps, trace has {steps}")]
    TooFewSteps {
        metric: MetricId,
        required: usize,
        steps: usize,
    },
    #[error("{metric}: unavailable ({reason})")]
    Unavailable { metric: MetricId, reason: String },
    #[error("window of {0} steps is too small; third-order differences need at least 4")]
    WindowTooSmall(usize),
    #[error("{metric}: {source}")]
    Oracle {
        metric: MetricId,
        #[source]
        source: OracleError,
    },
}

impl MetricError {
    pub fn unavailable(metric: MetricId, reason: impl Into<String>) -> Self {
        MetricError::Unavailable {
            metric,
            reason: reason.into(),
        }
    }

    /// Missing optional channel rather than a malformed trace.
    pub fn is_unavailable(&self) -> bool {
        matches!(self, MetricError::Unavailable { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Difference window length in steps.
    pub window: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
        }
    }
}

impl MetricConfig {
    pub fn with_window(window: usize) -> Result<Self, MetricError> {
        let cfg = Self { window };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if self.window <= MAX_ORDER {
            return Err(MetricError::WindowTooSmall(self.window));
        }
        Ok(())
    }
}

/// Streams `extract(step)` through a difference window and reduces each
/// `order`-th difference vector to a scalar.
pub(crate) fn difference_series<'a>(
    metric: MetricId,
    steps: &'a [StepRecord],
    dims: usize,
    order: usize,
    cfg: &MetricConfig,
    extract: impl Fn(&'a StepRecord) -> &'a [f64],
    reduce: impl Fn(&[f64]) -> f64,
) -> Result<MetricSeries, MetricError> {
    cfg.validate()?;
    if steps.len() <= order {
        return Err(MetricError::TooFewSteps {
            metric,
            required: order + 1,
            steps: steps.len(),
        });
    }
    let mut window = DifferenceWindow::new(cfg.window, dims);
    let mut values = BTreeMap::new();
    for step in steps {
        window.push(extract(step));
        if let Some(diff) = window.difference(order) {
            values.insert(step.t, reduce(diff));
        }
    }
    Ok(MetricSeries::from_values(metric, values).expect("at least one difference is defined"))
}

pub(crate) fn mean_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
}

pub(crate) fn euclidean(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_ids_round_trip_through_strings() {
        for m in MetricId::ALL {
            assert_eq!(m.as_str().parse::<MetricId>().unwrap(), m);
            assert_eq!(m.label().parse::<MetricId>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
    }

    #[test]
    fn window_below_four_rejected() {
        assert_eq!(MetricConfig::with_window(3).unwrap_err(), MetricError::WindowTooSmall(3));
        assert!(MetricConfig::with_window(4).is_ok());
    }
}
