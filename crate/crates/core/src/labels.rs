//! Human quality labels: the append-only label log, replay into a
//! [`LabelSet`], disagreement resolution and CSV export.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityLevel {
    High,
    Medium,
    Low,
    /// The oracle reported success but the run is not a valid success.
    FalseNegative,
}

impl QualityLevel {
    pub const ALL: [QualityLevel; 4] = [
        QualityLevel::High,
        QualityLevel::Medium,
        QualityLevel::Low,
        QualityLevel::FalseNegative,
    ];
    /// Levels that grade a genuine success.
    pub const GRADES: [QualityLevel; 3] = [QualityLevel::High, QualityLevel::Medium, QualityLevel::Low];

    pub fn as_str(self) -> &'static str {
        match self {
            QualityLevel::High => "high",
            QualityLevel::Medium => "medium",
            QualityLevel::Low => "low",
            QualityLevel::FalseNegative => "false_negative",
        }
    }

    /// Ordinal rank for correlation: high = 1, medium = 2, low = 3.
    pub fn rank(self) -> Option<u8> {
        match self {
            QualityLevel::High => Some(1),
            QualityLevel::Medium => Some(2),
            QualityLevel::Low => Some(3),
            QualityLevel::FalseNegative => None,
        }
    }
}

impl fmt::Display for QualityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QualityLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        let norm = match norm.as_str() {
            "med" => "medium",
            "false_neg" | "fn" => "false_negative",
            other => other,
        };
        QualityLevel::ALL
            .into_iter()
            .find(|l| l.as_str() == norm)
            .ok_or_else(|| format!("unknown quality label `{s}` (expected high, medium, low or false_negative)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityLabel {
    pub run_id: String,
    pub annotator_id: String,
    pub label: QualityLevel,
    /// RFC 3339 submission time.
    pub timestamp: String,
    pub session_id: String,
}

/// One line of the label log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub label: QualityLabel,
    /// Label this submission replaced for the same run and annotator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overwrites: Option<QualityLevel>,
}

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("label log line {line}: {source}")]
    Log {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("label log line {line}: sequence number {seq} is not increasing")]
    Sequence { line: usize, seq: u64 },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("label file {0}: unrecognized columns (need run_id and label)")]
    Columns(String),
    #[error("{0}")]
    Invalid(String),
}

/// How a run's final label was decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionBasis {
    /// Only one annotator has labeled the run.
    Single,
    /// The first two annotators agree.
    Agreement,
    /// A third annotator broke a disagreement.
    Resolver,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub run_id: String,
    pub label: QualityLevel,
    pub basis: ResolutionBasis,
    pub resolver_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolutions {
    pub resolved: BTreeMap<String, Resolution>,
    /// Runs whose first two annotators disagree and no third has labeled.
    pub unresolved: Vec<String>,
}

impl Resolutions {
    pub fn final_labels(&self) -> BTreeMap<String, QualityLevel> {
        self.resolved
            .iter()
            .map(|(run, r)| (run.clone(), r.label))
            .collect()
    }
}

/// Current labels, one per (run, annotator), with annotators kept in the order
/// they first labeled each run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSet {
    by_run: BTreeMap<String, Vec<QualityLabel>>,
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces the annotator's label for the run, returning the
    /// label it replaced.
    pub fn insert(&mut self, label: QualityLabel) -> Option<QualityLevel> {
        let labels = self.by_run.entry(label.run_id.clone()).or_default();
        match labels.iter_mut().find(|l| l.annotator_id == label.annotator_id) {
            Some(existing) => {
                let previous = existing.label;
                *existing = label;
                Some(previous)
            }
            None => {
                labels.push(label);
                None
            }
        }
    }

    pub fn len(&self) -> usize {
        self.by_run.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_run.is_empty()
    }

    /// Labels in run_id order, annotators in first-label order.
    pub fn labels(&self) -> impl Iterator<Item = &QualityLabel> {
        self.by_run.values().flatten()
    }

    pub fn for_run(&self, run_id: &str) -> &[QualityLabel] {
        self.by_run.get(run_id).map_or(&[], Vec::as_slice)
    }

    pub fn get(&self, run_id: &str, annotator_id: &str) -> Option<&QualityLabel> {
        self.for_run(run_id).iter().find(|l| l.annotator_id == annotator_id)
    }

    pub fn run_ids(&self) -> impl Iterator<Item = &str> {
        self.by_run.keys().map(String::as_str)
    }

    /// Labels of one annotator keyed by run.
    pub fn by_annotator(&self, annotator_id: &str) -> BTreeMap<&str, QualityLevel> {
        self.labels()
            .filter(|l| l.annotator_id == annotator_id)
            .map(|l| (l.run_id.as_str(), l.label))
            .collect()
    }

    pub fn annotators(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.labels().map(|l| l.annotator_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Applies the resolution rule to every labeled run.
    ///
    /// Agreeing first and second annotators decide the run. On disagreement
    /// the third annotator's label is final; without one the run is unresolved.
    pub fn resolve(&self) -> Resolutions {
        let mut out = Resolutions::default();
        for (run_id, labels) in &self.by_run {
            let resolution = |label: QualityLevel, basis, resolver_id| Resolution {
                run_id: run_id.clone(),
                label,
                basis,
                resolver_id,
            };
            let r = match labels.as_slice() {
                [] => continue,
                [only] => resolution(only.label, ResolutionBasis::Single, None),
                [a, b, ..] if a.label == b.label => resolution(a.label, ResolutionBasis::Agreement, None),
                [_, _, third, ..] => resolution(
                    third.label,
                    ResolutionBasis::Resolver,
                    Some(third.annotator_id.clone()),
                ),
                [_, _] => {
                    out.unresolved.push(run_id.clone());
                    continue;
                }
            };
            out.resolved.insert(run_id.clone(), r);
        }
        out
    }

    /// Reconstructs the set from log records in order.
    pub fn replay<'a>(records: impl IntoIterator<Item = &'a LogRecord>) -> Self {
        let mut set = Self::new();
        for r in records {
            set.insert(r.label.clone());
        }
        set
    }

    /// `run_id,annotator_id,label,timestamp,session_id`.
    pub fn write_labels_csv(&self, w: impl Write) -> Result<(), LabelError> {
        let mut out = csv::Writer::from_writer(w);
        for label in self.labels() {
            out.serialize(label)?;
        }
        if self.is_empty() {
            out.write_record(["run_id", "annotator_id", "label", "timestamp", "session_id"])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_labels_csv(r: impl Read) -> Result<Self, LabelError> {
        let mut set = Self::new();
        for row in csv::Reader::from_reader(r).deserialize::<QualityLabel>() {
            set.insert(row?);
        }
        Ok(set)
    }
}

#[derive(Serialize, Deserialize)]
struct ResolvedRow {
    run_id: String,
    label: QualityLevel,
    basis: ResolutionBasis,
    resolver_id: Option<String>,
}

/// `run_id,label,basis,resolver_id` for every resolved run.
pub fn write_resolved_csv(resolutions: &Resolutions, w: impl Write) -> Result<(), LabelError> {
    let mut out = csv::Writer::from_writer(w);
    for r in resolutions.resolved.values() {
        out.serialize(ResolvedRow {
            run_id: r.run_id.clone(),
            label: r.label,
            basis: r.basis,
            resolver_id: r.resolver_id.clone(),
        })?;
    }
    if resolutions.resolved.is_empty() {
        out.write_record(["run_id", "label", "basis", "resolver_id"])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads final labels from a label log (`.jsonl`), a per-annotator label CSV
/// (resolved on load), or a resolved CSV with `run_id` and `label` columns.
///
/// Runs left unresolved by a raw label file are skipped with a warning.
pub fn read_final_labels(path: &Path) -> Result<BTreeMap<String, QualityLevel>, LabelError> {
    let set = if path.extension().is_some_and(|e| e == "jsonl") {
        LabelSet::replay(&read_log(BufReader::new(File::open(path)?))?.0)
    } else {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let has = |c: &str| headers.iter().any(|h| h == c);
        if !has("run_id") || !has("label") {
            return Err(LabelError::Columns(path.display().to_string()));
        }
        if !has("annotator_id") {
            let mut out = BTreeMap::new();
            let (run_col, label_col) = (
                headers.iter().position(|h| h == "run_id").expect("checked"),
                headers.iter().position(|h| h == "label").expect("checked"),
            );
            for row in reader.records() {
                let row = row?;
                let label = row[label_col].parse().map_err(LabelError::Invalid)?;
                out.insert(row[run_col].to_string(), label);
            }
            return Ok(out);
        }
        LabelSet::read_labels_csv(File::open(path)?)?
    };
    let resolutions = set.resolve();
    if !resolutions.unresolved.is_empty() {
        log::warn!(
            "{}: {} run(s) with unresolved disagreements skipped: {}",
            path.display(),
            resolutions.unresolved.len(),
            resolutions.unresolved.join(", ")
        );
    }
    Ok(resolutions.final_labels())
}

/// Parses log records, returning them with the byte length of the valid prefix.
///
/// A final line without a trailing newline that fails to parse is treated as a
/// torn write and excluded from the prefix.
pub fn read_log(mut reader: impl BufRead) -> Result<(Vec<LogRecord>, u64), LabelError> {
    let mut records: Vec<LogRecord> = Vec::new();
    let mut valid_len = 0u64;
    let mut line_no = 0;
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        if buf.trim().is_empty() {
            if complete {
                valid_len += n as u64;
            }
            continue;
        }
        match serde_json::from_str::<LogRecord>(buf.trim_end()) {
            Ok(record) => {
                if records.last().is_some_and(|last| record.seq <= last.seq) {
                    return Err(LabelError::Sequence {
                        line: line_no,
                        seq: record.seq,
                    });
                }
                records.push(record);
                valid_len += n as u64;
            }
            Err(_) if !complete => {
                log::warn!("label log line {line_no}: ignoring incomplete trailing record");
            }
            Err(source) => return Err(LabelError::Log { line: line_no, source }),
        }
    }
    Ok((records, valid_len))
}

/// Append-only label log backed by a JSONL file. Every append is flushed and
/// synced before it is acknowledged.
#[derive(Debug)]
pub struct LabelLog {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

impl LabelLog {
    /// Opens (or creates) the log and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<LogRecord>), LabelError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let (records, valid_len) = read_log(BufReader::new(&mut file))?;
        if valid_len < file.metadata()?.len() {
            file.set_len(valid_len)?;
        }
        file.seek(SeekFrom::End(0))?;
        let next_seq = records.last().map_or(1, |r| r.seq + 1);
        Ok((Self { path, file, next_seq }, records))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, label: QualityLabel, overwrites: Option<QualityLevel>) -> Result<LogRecord, LabelError> {
        let record = LogRecord {
            seq: self.next_seq,
            label,
            overwrites,
        };
        let mut line = serde_json::to_string(&record).expect("label records serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.file.sync_data()?;
        self.next_seq += 1;
        Ok(record)
    }
}
