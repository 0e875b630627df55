use serde::{Deserialize, Serialize};

use super::StudyDataset;
use crate::labels::QualityLevel;
use crate::metric::MetricId;
use crate::stats::{
    mann_whitney_u, spearman, CorrelationCategory, Direction, EffectMagnitude, StatsError,
};
use crate::summary::RunSummary;
use crate::trace::Task;

/// Groups smaller than this are reported as "-".
pub const MIN_GROUP_SIZE: usize = 4;

/// `100·count/base` rounded half-to-even to one decimal, `None` for a zero base.
pub fn percent(count: usize, base: usize) -> Option<String> {
    if base == 0 {
        return None;
    }
    let scaled = 1000 * count as u64;
    let base = base as u64;
    let (mut tenths, rem) = (scaled / base, scaled % base);
    if 2 * rem > base || (2 * rem == base && tenths % 2 == 1) {
        tenths += 1;
    }
    Some(format!("{}.{}", tenths / 10, tenths % 10))
}

/// `"count (pct%)"`, or `"count (n/a)"` when the base is zero.
pub fn count_with_percent(count: usize, base: usize) -> String {
    match percent(count, base) {
        Some(p) => format!("{count} ({p}%)"),
        None => format!("{count} (n/a)"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub model_id: String,
    pub task: Task,
    pub scenes: usize,
    /// Oracle successes that were not labeled false negatives.
    pub success: usize,
    pub high: usize,
    pub medium: usize,
    pub low: usize,
    /// Successes without a label yet.
    pub unlabeled: usize,
    pub false_negative: usize,
}

impl BreakdownRow {
    pub fn success_cell(&self) -> String {
        count_with_percent(self.success, self.scenes)
    }

    /// Quality levels are relative to successes, false negatives to all scenes.
    pub fn level_cell(&self, level: QualityLevel) -> String {
        match level {
            QualityLevel::High => count_with_percent(self.high, self.success),
            QualityLevel::Medium => count_with_percent(self.medium, self.success),
            QualityLevel::Low => count_with_percent(self.low, self.success),
            QualityLevel::FalseNegative => count_with_percent(self.false_negative, self.scenes),
        }
    }
}

pub fn quality_breakdown(ds: &StudyDataset) -> Vec<BreakdownRow> {
    ds.groups()
        .into_iter()
        .map(|((model, task), runs)| {
            let mut row = BreakdownRow {
                model_id: model.to_string(),
                task,
                scenes: runs.len(),
                success: 0,
                high: 0,
                medium: 0,
                low: 0,
                unlabeled: 0,
                false_negative: 0,
            };
            for run in runs.iter().filter(|r| r.success) {
                match run.quality_label {
                    Some(QualityLevel::FalseNegative) => {
                        row.false_negative += 1;
                        continue;
                    }
                    Some(QualityLevel::High) => row.high += 1,
                    Some(QualityLevel::Medium) => row.medium += 1,
                    Some(QualityLevel::Low) => row.low += 1,
                    None => row.unlabeled += 1,
                }
                row.success += 1;
            }
            row
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub model_id: String,
    pub task: Task,
    pub metric: MetricId,
    pub n: usize,
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
    pub category: Option<CorrelationCategory>,
    pub significant: Option<bool>,
    /// Why the cell is empty.
    pub note: Option<String>,
}

impl CorrelationCell {
    /// ρ to three decimals, or "-".
    pub fn rho_cell(&self) -> String {
        self.rho.map_or_else(|| "-".to_string(), |r| format!("{r:.3}"))
    }
}

fn empty_reason(err: &StatsError) -> String {
    match err {
        StatsError::TooFewSamples { .. } => "insufficient samples".to_string(),
        StatsError::ConstantSeries => "undefined (constant values)".to_string(),
        other => other.to_string(),
    }
}

/// Spearman ρ between each metric's run mean and the quality rank
/// (high = 1, medium = 2, low = 3) over labeled successes.
pub fn correlation_table(ds: &StudyDataset) -> Vec<CorrelationCell> {
    let mut cells = Vec::new();
    for ((model, task), runs) in ds.groups() {
        let graded: Vec<(&RunSummary, u8)> = runs
            .iter()
            .filter(|r| r.success)
            .filter_map(|r| r.quality_label.and_then(QualityLevel::rank).map(|k| (*r, k)))
            .collect();
        for metric in MetricId::ALL {
            let (values, ranks): (Vec<f64>, Vec<f64>) = graded
                .iter()
                .filter_map(|(r, k)| r.metric(metric).map(|v| (v, f64::from(*k))))
                .unzip();
            let mut cell = CorrelationCell {
                model_id: model.to_string(),
                task,
                metric,
                n: values.len(),
                rho: None,
                p_value: None,
                category: None,
                significant: None,
                note: None,
            };
            match spearman(&values, &ranks) {
                Ok(c) => {
                    cell.significant = Some(c.significant());
                    cell.rho = Some(c.rho);
                    cell.p_value = Some(c.p_value);
                    cell.category = Some(c.category);
                }
                Err(e) => cell.note = Some(empty_reason(&e)),
            }
            cells.push(cell);
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationCell {
    pub model_id: String,
    pub task: Task,
    pub metric: MetricId,
    pub level: QualityLevel,
    pub n_quality: usize,
    pub n_fail: usize,
    /// Â₁₂ of the quality group against the failing group.
    pub a12: Option<f64>,
    pub p_value: Option<f64>,
    pub magnitude: Option<EffectMagnitude>,
    pub direction: Option<Direction>,
    pub significant: Option<bool>,
    pub note: Option<String>,
}

impl DiscriminationCell {
    pub fn a12_cell(&self) -> String {
        self.a12.map_or_else(|| "-".to_string(), |a| format!("{a:.3}"))
    }
}

/// Â₁₂ and Mann-Whitney U of each quality level against oracle failures.
/// False negatives belong to neither group.
pub fn discrimination_table(ds: &StudyDataset) -> Vec<DiscriminationCell> {
    let mut cells = Vec::new();
    for ((model, task), runs) in ds.groups() {
        let failing: Vec<&RunSummary> = runs.iter().copied().filter(|r| !r.success).collect();
        for metric in MetricId::ALL {
            let fail_values: Vec<f64> = failing.iter().filter_map(|r| r.metric(metric)).collect();
            for level in QualityLevel::GRADES {
                let values: Vec<f64> = runs
                    .iter()
                    .filter(|r| r.success && r.quality_label == Some(level))
                    .filter_map(|r| r.metric(metric))
                    .collect();
                let mut cell = DiscriminationCell {
                    model_id: model.to_string(),
                    task,
                    metric,
                    level,
                    n_quality: values.len(),
                    n_fail: fail_values.len(),
                    a12: None,
                    p_value: None,
                    magnitude: None,
                    direction: None,
                    significant: None,
                    note: None,
                };
                if values.len() < MIN_GROUP_SIZE || fail_values.len() < MIN_GROUP_SIZE {
                    cell.note = Some("insufficient samples".to_string());
                } else {
                    match mann_whitney_u(&values, &fail_values) {
                        Ok(e) => {
                            cell.significant = Some(e.significant());
                            cell.a12 = Some(e.a12);
                            cell.p_value = Some(e.p_value);
                            cell.magnitude = Some(e.magnitude);
                            cell.direction = Some(e.direction);
                        }
                        Err(e) => cell.note = Some(empty_reason(&e)),
                    }
                }
                cells.push(cell);
            }
        }
    }
    cells
}
