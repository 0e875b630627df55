//! Label service state: the run catalog, the append-only label log and the
//! per-session counters, behind one lock so submissions are serialized.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vlaj_core::labels::{write_resolved_csv, LabelError, LabelLog, Resolutions};
use vlaj_core::stats::{cohen_kappa, StatsError};
use vlaj_core::summary::run_success;
use vlaj_core::trace::{ObjectRole, RunTrace, Task};
use vlaj_core::{LabelSet, QualityLabel, QualityLevel};

/// Default cap on labels per annotator session.
pub const DEFAULT_BATCH_LIMIT: usize = 160;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("run `{0}` did not succeed; only successful runs can be labeled")]
    NotSuccessful(String),
    #[error("malformed label: {0}")]
    Malformed(String),
    #[error("annotators `{0}` and `{1}` have no run in common")]
    NoOverlap(String, String),
    #[error("agreement undefined: {0}")]
    Agreement(#[from] StatsError),
    #[error("{} run(s) have unresolved disagreements", .0.len())]
    Unresolved(Vec<String>),
    #[error("duplicate run_id `{0}` in trace set")]
    DuplicateRun(String),
    #[error(transparent)]
    Labels(#[from] LabelError),
}

/// What an annotator sees in a batch listing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDescriptor {
    pub run_id: String,
    pub task: Task,
    pub instruction: String,
    pub steps: usize,
    /// Where to fetch the full [`RunView`].
    pub view_url: String,
    pub video_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTrack {
    pub object_id: String,
    pub role: ObjectRole,
    /// One entry per step; `None` where the pose was not recorded.
    pub positions: Vec<Option<[f64; 3]>>,
}

/// Playback data for one run. The oracle verdict is deliberately absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunView {
    pub run_id: String,
    pub task: Task,
    pub instruction: String,
    pub steps: usize,
    pub dt: f64,
    pub tcp_path: Vec<[f64; 3]>,
    pub gripper_open: Vec<f64>,
    pub objects: Vec<ObjectTrack>,
    pub video_url: Option<String>,
}

struct CatalogEntry {
    success: bool,
    view: RunView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub run_id: String,
    pub annotator_id: String,
    pub label: String,
    pub session_id: String,
    /// RFC 3339; the server clock is used when absent.
    #[serde(default)]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub seq: u64,
    pub run_id: String,
    pub annotator_id: String,
    pub label: QualityLevel,
    pub overwrote: Option<QualityLevel>,
    pub session_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub run_id: String,
    pub label_a: QualityLevel,
    pub label_b: QualityLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementView {
    pub annotator_a: String,
    pub annotator_b: String,
    pub kappa: f64,
    pub observed_agreement: f64,
    pub n_items: usize,
    pub disagreements: Vec<Disagreement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Export {
    pub labels_csv: String,
    pub resolved_csv: String,
    pub unresolved: Vec<String>,
}

struct State {
    log: LabelLog,
    labels: LabelSet,
    /// Runs labeled in each (annotator, session).
    sessions: BTreeMap<(String, String), BTreeSet<String>>,
}

pub struct LabelService {
    catalog: BTreeMap<String, CatalogEntry>,
    media_dir: Option<PathBuf>,
    batch_limit: usize,
    state: Mutex<State>,
}

fn view_of(trace: &RunTrace, media_dir: Option<&Path>) -> RunView {
    let video = format!("{}.mp4", trace.run_id());
    let video_url = media_dir
        .filter(|dir| dir.join(&video).is_file())
        .map(|_| format!("/media/{video}"));
    RunView {
        run_id: trace.run_id().to_string(),
        task: trace.header.task,
        instruction: trace.header.instruction.clone(),
        steps: trace.len(),
        dt: trace.header.dt_or_default(),
        tcp_path: trace.steps.iter().map(|s| s.tcp).collect(),
        gripper_open: trace.steps.iter().map(|s| s.gripper_open).collect(),
        objects: trace
            .header
            .objects
            .iter()
            .map(|o| ObjectTrack {
                object_id: o.object_id.clone(),
                role: o.object_role,
                positions: trace.steps.iter().map(|s| s.position_of(&o.object_id)).collect(),
            })
            .collect(),
        video_url,
    }
}

impl LabelService {
    /// Builds the catalog and replays the label log at `log_path`.
    pub fn open(
        traces: &[RunTrace],
        log_path: impl AsRef<Path>,
        media_dir: Option<PathBuf>,
        batch_limit: usize,
    ) -> Result<Self, ServiceError> {
        let mut catalog = BTreeMap::new();
        for trace in traces {
            let (success, _) = run_success(trace);
            let entry = CatalogEntry {
                success,
                view: view_of(trace, media_dir.as_deref()),
            };
            if catalog.insert(trace.run_id().to_string(), entry).is_some() {
                return Err(ServiceError::DuplicateRun(trace.run_id().to_string()));
            }
        }
        let (log, records) = LabelLog::open(log_path)?;
        let labels = LabelSet::replay(&records);
        let mut sessions: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
        for r in &records {
            sessions
                .entry((r.label.annotator_id.clone(), r.label.session_id.clone()))
                .or_default()
                .insert(r.label.run_id.clone());
        }
        log::info!(
            "label service: {} runs ({} successful), {} labels replayed from {}",
            catalog.len(),
            catalog.values().filter(|e| e.success).count(),
            records.len(),
            log.path().display()
        );
        Ok(Self {
            catalog,
            media_dir,
            batch_limit,
            state: Mutex::new(State { log, labels, sessions }),
        })
    }

    fn state(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    pub fn batch_limit(&self) -> usize {
        self.batch_limit
    }

    pub fn run_count(&self) -> usize {
        self.catalog.len()
    }

    pub fn session_count(&self, annotator_id: &str, session_id: &str) -> usize {
        self.state()
            .sessions
            .get(&(annotator_id.to_string(), session_id.to_string()))
            .map_or(0, BTreeSet::len)
    }

    /// Successful runs this annotator has not labeled in any session, in
    /// run_id order, capped by what is left of the session's limit.
    pub fn next_batch(&self, annotator_id: &str, session_id: &str, limit: Option<usize>) -> Vec<RunDescriptor> {
        let limit = limit.unwrap_or(self.batch_limit);
        let state = self.state();
        let used = state
            .sessions
            .get(&(annotator_id.to_string(), session_id.to_string()))
            .map_or(0, BTreeSet::len);
        let remaining = limit.saturating_sub(used);
        self.catalog
            .iter()
            .filter(|(id, e)| e.success && state.labels.get(id, annotator_id).is_none())
            .take(remaining)
            .map(|(id, e)| RunDescriptor {
                run_id: id.clone(),
                task: e.view.task,
                instruction: e.view.instruction.clone(),
                steps: e.view.steps,
                view_url: format!("/runs/{id}"),
                video_url: e.view.video_url.clone(),
            })
            .collect()
    }

    pub fn run_view(&self, run_id: &str) -> Result<RunView, ServiceError> {
        self.catalog
            .get(run_id)
            .map(|e| e.view.clone())
            .ok_or_else(|| ServiceError::UnknownRun(run_id.to_string()))
    }

    /// Path of a sidecar video, if `file` names one for a known run.
    pub fn media_path(&self, file: &str) -> Option<PathBuf> {
        let run_id = file.strip_suffix(".mp4")?;
        if !self.catalog.contains_key(run_id) {
            return None;
        }
        let path = self.media_dir.as_ref()?.join(file);
        path.is_file().then_some(path)
    }

    /// Validates and persists a label. The log line is synced before the
    /// in-memory state changes.
    pub fn submit_label(&self, submission: LabelSubmission) -> Result<Ack, ServiceError> {
        let label: QualityLevel = submission.label.parse().map_err(ServiceError::Malformed)?;
        for (field, value) in [
            ("run_id", &submission.run_id),
            ("annotator_id", &submission.annotator_id),
            ("session_id", &submission.session_id),
        ] {
            if value.trim().is_empty() {
                return Err(ServiceError::Malformed(format!("{field} is empty")));
            }
        }
        let entry = self
            .catalog
            .get(&submission.run_id)
            .ok_or_else(|| ServiceError::UnknownRun(submission.run_id.clone()))?;
        if !entry.success {
            return Err(ServiceError::NotSuccessful(submission.run_id));
        }
        let timestamp = match submission.timestamp {
            Some(ts) => chrono::DateTime::parse_from_rfc3339(&ts)
                .map_err(|e| ServiceError::Malformed(format!("timestamp `{ts}`: {e}")))?
                .to_rfc3339(),
            None => chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        let label = QualityLabel {
            run_id: submission.run_id,
            annotator_id: submission.annotator_id,
            label,
            timestamp,
            session_id: submission.session_id,
        };

        let mut state = self.state();
        let previous = state.labels.get(&label.run_id, &label.annotator_id).map(|l| l.label);
        let record = state.log.append(label.clone(), previous)?;
        state.labels.insert(label.clone());
        let session = state
            .sessions
            .entry((label.annotator_id.clone(), label.session_id.clone()))
            .or_default();
        session.insert(label.run_id.clone());
        Ok(Ack {
            seq: record.seq,
            session_count: session.len(),
            run_id: label.run_id,
            annotator_id: label.annotator_id,
            label: label.label,
            overwrote: previous,
        })
    }

    /// Cohen's kappa over the runs both annotators labeled, with all four
    /// label values as categories.
    pub fn agreement(&self, a: &str, b: &str) -> Result<AgreementView, ServiceError> {
        let state = self.state();
        let la = state.labels.by_annotator(a);
        let lb = state.labels.by_annotator(b);
        let shared: Vec<(&str, QualityLevel, QualityLevel)> = la
            .iter()
            .filter_map(|(run, &x)| lb.get(run).map(|&y| (*run, x, y)))
            .collect();
        if shared.is_empty() {
            return Err(ServiceError::NoOverlap(a.to_string(), b.to_string()));
        }
        let xs: Vec<QualityLevel> = shared.iter().map(|s| s.1).collect();
        let ys: Vec<QualityLevel> = shared.iter().map(|s| s.2).collect();
        let result = cohen_kappa(&xs, &ys)?;
        Ok(AgreementView {
            annotator_a: a.to_string(),
            annotator_b: b.to_string(),
            kappa: result.kappa,
            observed_agreement: result.observed_agreement,
            n_items: result.n_items,
            disagreements: shared
                .iter()
                .filter(|s| s.1 != s.2)
                .map(|&(run, x, y)| Disagreement {
                    run_id: run.to_string(),
                    label_a: x,
                    label_b: y,
                })
                .collect(),
        })
    }

    pub fn labels(&self) -> LabelSet {
        self.state().labels.clone()
    }

    pub fn resolutions(&self) -> Resolutions {
        self.state().labels.resolve()
    }

    /// Label and resolution CSVs. A full export fails while any run has an
    /// unresolved disagreement; a partial export lists those runs instead.
    pub fn export(&self, partial: bool) -> Result<Export, ServiceError> {
        let labels = self.labels();
        let resolutions = labels.resolve();
        if !partial && !resolutions.unresolved.is_empty() {
            return Err(ServiceError::Unresolved(resolutions.unresolved));
        }
        let mut labels_csv = Vec::new();
        labels.write_labels_csv(&mut labels_csv)?;
        let mut resolved_csv = Vec::new();
        write_resolved_csv(&resolutions, &mut resolved_csv)?;
        Ok(Export {
            labels_csv: String::from_utf8(labels_csv).expect("UTF-8 csv"),
            resolved_csv: String::from_utf8(resolved_csv).expect("UTF-8 csv"),
            unresolved: resolutions.unresolved,
        })
    }

    /// Writes `labels.csv` and `resolved.csv` into `dir`.
    pub fn export_to_dir(&self, dir: &Path, partial: bool) -> Result<Export, ServiceError> {
        let export = self.export(partial)?;
        std::fs::write(dir.join("labels.csv"), &export.labels_csv).map_err(LabelError::from)?;
        std::fs::write(dir.join("resolved.csv"), &export.resolved_csv).map_err(LabelError::from)?;
        Ok(export)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vlaj_core::synth::{generate_synthetic, Profile};

    fn traces() -> Vec<RunTrace> {
        let mut out = Vec::new();
        for seed in 0..4 {
            out.push(generate_synthetic(Profile::Smooth, Task::PickUp, seed));
            out.push(generate_synthetic(Profile::Failing, Task::PickUp, seed));
        }
        out
    }

    fn submit(svc: &LabelService, run: &str, who: &str, label: &str) -> Result<Ack, ServiceError> {
        svc.submit_label(LabelSubmission {
            run_id: run.into(),
            annotator_id: who.into(),
            label: label.into(),
            session_id: "s1".into(),
            timestamp: Some("2026-03-01T10:00:00Z".into()),
        })
    }

    #[test]
    fn batches_skip_failures_and_labeled_runs() {
        let dir = tempfile::tempdir().unwrap();
        let svc = LabelService::open(&traces(), dir.path().join("l.jsonl"), None, DEFAULT_BATCH_LIMIT).unwrap();
        let batch = svc.next_batch("ann", "s1", None);
        assert_eq!(batch.len(), 4);
        assert!(batch.iter().all(|d| d.run_id.contains("smooth")));
        submit(&svc, &batch[0].run_id, "ann", "high").unwrap();
        let again = svc.next_batch("ann", "s2", None);
        assert_eq!(again.len(), 3);
        assert!(again.iter().all(|d| d.run_id != batch[0].run_id));
        assert_eq!(svc.next_batch("ann", "s1", Some(2)).len(), 1);
        assert_eq!(svc.next_batch("other", "s1", None).len(), 4);
    }

    #[test]
    fn rejects_bad_submissions() {
        let dir = tempfile::tempdir().unwrap();
        let svc = LabelService::open(&traces(), dir.path().join("l.jsonl"), None, 160).unwrap();
        let failing = "pick_up-failing-00000";
        let smooth = "pick_up-smooth-00000";
        assert!(matches!(submit(&svc, failing, "a", "high"), Err(ServiceError::NotSuccessful(_))));
        assert!(matches!(submit(&svc, "nope", "a", "high"), Err(ServiceError::UnknownRun(_))));
        assert!(matches!(submit(&svc, smooth, "a", "great"), Err(ServiceError::Malformed(_))));
        assert!(matches!(submit(&svc, smooth, " ", "high"), Err(ServiceError::Malformed(_))));
        assert!(svc.labels().is_empty());
    }

    #[test]
    fn overwrite_is_audited_and_replayed() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("l.jsonl");
        let run = "pick_up-smooth-00001";
        {
            let svc = LabelService::open(&traces(), &log, None, 160).unwrap();
            assert_eq!(submit(&svc, run, "a", "high").unwrap().overwrote, None);
            let ack = submit(&svc, run, "a", "low").unwrap();
            assert_eq!(ack.overwrote, Some(QualityLevel::High));
            assert_eq!(ack.session_count, 1);
        }
        let svc = LabelService::open(&traces(), &log, None, 160).unwrap();
        assert_eq!(svc.labels().get(run, "a").unwrap().label, QualityLevel::Low);
        assert_eq!(svc.session_count("a", "s1"), 1);
        let text = std::fs::read_to_string(&log).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().contains("\"overwrites\":\"high\""));
    }

    #[test]
    fn export_blocks_on_disagreement_until_resolved() {
        let dir = tempfile::tempdir().unwrap();
        let svc = LabelService::open(&traces(), dir.path().join("l.jsonl"), None, 160).unwrap();
        let run = "pick_up-smooth-00002";
        submit(&svc, run, "a", "high").unwrap();
        submit(&svc, run, "b", "medium").unwrap();
        match svc.export(false) {
            Err(ServiceError::Unresolved(runs)) => assert_eq!(runs, vec![run.to_string()]),
            other => panic!("expected unresolved, got {other:?}"),
        }
        assert_eq!(svc.export(true).unwrap().unresolved, vec![run.to_string()]);
        submit(&svc, run, "c", "medium").unwrap();
        let export = svc.export(false).unwrap();
        assert!(export.resolved_csv.contains(&format!("{run},medium,resolver,c")), "{}", export.resolved_csv);
        assert_eq!(export.labels_csv.lines().count(), 4);
    }

    #[test]
    fn agreement_needs_overlap() {
        let dir = tempfile::tempdir().unwrap();
        let svc = LabelService::open(&traces(), dir.path().join("l.jsonl"), None, 160).unwrap();
        assert!(matches!(svc.agreement("a", "b"), Err(ServiceError::NoOverlap(..))));
        submit(&svc, "pick_up-smooth-00000", "a", "high").unwrap();
        submit(&svc, "pick_up-smooth-00000", "b", "high").unwrap();
        submit(&svc, "pick_up-smooth-00001", "a", "low").unwrap();
        submit(&svc, "pick_up-smooth-00001", "b", "high").unwrap();
        let view = svc.agreement("a", "b").unwrap();
        assert_eq!(view.n_items, 2);
        assert_eq!(view.disagreements.len(), 1);
        // p_o = 1/2, p_e = (1·2 + 1·0)/4 = 1/2.
        assert_eq!(view.kappa, 0.0);
    }
}
