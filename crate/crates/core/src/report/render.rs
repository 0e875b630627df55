use serde::Serialize;

use super::tables::percent;
use super::{BreakdownRow, CorrelationCell, DiscriminationCell, OutputFormat, OverheadSample, ReportError};
use crate::labels::QualityLevel;

/// Version of the JSON report envelope.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct Envelope<'a, T> {
    schema_version: u32,
    table: &'a str,
    rows: &'a [T],
}

fn json<T: Serialize>(table: &str, rows: &[T]) -> Result<String, ReportError> {
    let mut out = serde_json::to_string_pretty(&Envelope {
        schema_version: SCHEMA_VERSION,
        table,
        rows,
    })?;
    out.push('\n');
    Ok(out)
}

fn csv<R: AsRef<[String]>>(header: &[&str], rows: &[R]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.as_ref())?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
}

/// Left-aligned first columns, right-aligned numeric tail.
fn text(title: &str, header: &[&str], rows: &[Vec<String>], left_cols: usize) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| -> String {
        let parts: Vec<String> = cells
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                let pad = " ".repeat(w - c.chars().count());
                if i < left_cols {
                    format!("{c}{pad}")
                } else {
                    format!("{pad}{c}")
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = format!("{title}\n");
    out.push_str(&line(&mut header.iter().copied()));
    out.push('\n');
    let total: usize = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for row in rows {
        out.push_str(&line(&mut row.iter().map(String::as_str)));
        out.push('\n');
    }
    out
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn p_cell(p: Option<f64>) -> String {
    match p {
        None => "-".to_string(),
        Some(p) if p < 0.001 => "<0.001".to_string(),
        Some(p) => format!("{p:.3}"),
    }
}

pub fn render_breakdown(rows: &[BreakdownRow], format: OutputFormat) -> Result<String, ReportError> {
    match format {
        OutputFormat::Json => json("quality_breakdown", rows),
        OutputFormat::Csv => {
            let header = [
                "model_id", "task", "scenes", "success", "success_pct", "high", "high_pct", "medium",
                "medium_pct", "low", "low_pct", "unlabeled", "false_negative", "false_negative_pct",
            ];
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.model_id.clone(),
                        r.task.to_string(),
                        r.scenes.to_string(),
                        r.success.to_string(),
                        opt(percent(r.success, r.scenes)),
                        r.high.to_string(),
                        opt(percent(r.high, r.success)),
                        r.medium.to_string(),
                        opt(percent(r.medium, r.success)),
                        r.low.to_string(),
                        opt(percent(r.low, r.success)),
                        r.unlabeled.to_string(),
                        r.false_negative.to_string(),
                        opt(percent(r.false_negative, r.scenes)),
                    ]
                })
                .collect();
            csv(&header, &body)
        }
        OutputFormat::Text => {
            let header = ["task", "model", "scenes", "success", "high", "medium", "low", "false neg.", "unlabeled"];
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.task.to_string(),
                        r.model_id.clone(),
                        r.scenes.to_string(),
                        r.success_cell(),
                        r.level_cell(QualityLevel::High),
                        r.level_cell(QualityLevel::Medium),
                        r.level_cell(QualityLevel::Low),
                        r.level_cell(QualityLevel::FalseNegative),
                        r.unlabeled.to_string(),
                    ]
                })
                .collect();
            Ok(text("Quality breakdown", &header, &body, 2))
        }
    }
}

pub fn render_correlation(cells: &[CorrelationCell], format: OutputFormat) -> Result<String, ReportError> {
    match format {
        OutputFormat::Json => json("correlation", cells),
        OutputFormat::Csv => {
            let header = ["model_id", "task", "metric", "n", "rho", "p_value", "category", "significant", "note"];
            let body: Vec<Vec<String>> = cells
                .iter()
                .map(|c| {
                    vec![
                        c.model_id.clone(),
                        c.task.to_string(),
                        c.metric.to_string(),
                        c.n.to_string(),
                        opt(c.rho),
                        opt(c.p_value),
                        opt(c.category.map(|k| k.as_str())),
                        opt(c.significant),
                        c.note.clone().unwrap_or_default(),
                    ]
                })
                .collect();
            csv(&header, &body)
        }
        OutputFormat::Text => {
            let header = ["task", "model", "metric", "n", "rho", "p", "category", "sig"];
            let body: Vec<Vec<String>> = cells
                .iter()
                .map(|c| {
                    vec![
                        c.task.to_string(),
                        c.model_id.clone(),
                        c.metric.label(),
                        c.n.to_string(),
                        c.rho_cell(),
                        p_cell(c.p_value),
                        c.category.map_or("-", |k| k.as_str()).to_string(),
                        if c.significant == Some(true) { "*" } else { "" }.to_string(),
                    ]
                })
                .collect();
            Ok(text(
                "Spearman correlation with quality rank (high=1, medium=2, low=3; positive: lower metric, higher quality)",
                &header,
                &body,
                3,
            ))
        }
    }
}

pub fn render_discrimination(cells: &[DiscriminationCell], format: OutputFormat) -> Result<String, ReportError> {
    match format {
        OutputFormat::Json => json("discrimination", cells),
        OutputFormat::Csv => {
            let header = [
                "model_id", "task", "metric", "level", "n_quality", "n_fail", "a12", "p_value", "magnitude",
                "direction", "significant", "note",
            ];
            let body: Vec<Vec<String>> = cells
                .iter()
                .map(|c| {
                    vec![
                        c.model_id.clone(),
                        c.task.to_string(),
                        c.metric.to_string(),
                        c.level.to_string(),
                        c.n_quality.to_string(),
                        c.n_fail.to_string(),
                        opt(c.a12),
                        opt(c.p_value),
                        opt(c.magnitude.map(|m| m.as_str())),
                        opt(c.direction.map(|d| d.as_str())),
                        opt(c.significant),
                        c.note.clone().unwrap_or_default(),
                    ]
                })
                .collect();
            csv(&header, &body)
        }
        OutputFormat::Text => {
            let header = ["task", "model", "metric", "level", "n_q", "n_fail", "A12", "p", "magnitude", "sig"];
            let body: Vec<Vec<String>> = cells
                .iter()
                .map(|c| {
                    vec![
                        c.task.to_string(),
                        c.model_id.clone(),
                        c.metric.label(),
                        c.level.to_string(),
                        c.n_quality.to_string(),
                        c.n_fail.to_string(),
                        c.a12_cell(),
                        p_cell(c.p_value),
                        c.magnitude.map_or("-", |m| m.as_str()).to_string(),
                        if c.significant == Some(true) { "*" } else { "" }.to_string(),
                    ]
                })
                .collect();
            Ok(text(
                "Vargha-Delaney A12 of each quality level against failures (below 0.5: quality group lower)",
                &header,
                &body,
                4,
            ))
        }
    }
}

pub fn render_overhead(samples: &[OverheadSample], format: OutputFormat) -> Result<String, ReportError> {
    match format {
        OutputFormat::Json => json("overhead", samples),
        OutputFormat::Csv => {
            let body: Vec<Vec<String>> = samples
                .iter()
                .map(|s| {
                    vec![
                        s.metric_group.to_string(),
                        s.mean_seconds.to_string(),
                        s.std_seconds.to_string(),
                        s.n.to_string(),
                    ]
                })
                .collect();
            csv(&["metric_group", "mean_seconds", "std_seconds", "n"], &body)
        }
        OutputFormat::Text => {
            let body: Vec<Vec<String>> = samples
                .iter()
                .map(|s| {
                    vec![
                        s.metric_group.to_string(),
                        format!("{:.3e}", s.mean_seconds),
                        format!("{:.3e}", s.std_seconds),
                        s.n.to_string(),
                    ]
                })
                .collect();
            Ok(text(
                "Per-step overhead in seconds (EV includes one decode replay per inference sample)",
                &["group", "mean", "std", "n"],
                &body,
                1,
            ))
        }
    }
}
