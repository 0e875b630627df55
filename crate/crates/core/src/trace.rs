//! Trace data model and the JSONL trace format.
//!
//! A trace file holds one record per line. The first line is the header
//! (`"type":"header"`), followed by one `"type":"step"` record per timestep and
//! an optional trailing `"type":"outcome"` record.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-6;
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;
/// Step duration assumed when the header omits `dt`.
pub const DEFAULT_DT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PickUp,
    MoveNear,
    PutIn,
    PutOn,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::PickUp, Task::MoveNear, Task::PutIn, Task::PutOn];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::PickUp => "pick_up",
            Task::MoveNear => "move_near",
            Task::PutIn => "put_in",
            Task::PutOn => "put_on",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task `{s}` (expected pick_up, move_near, put_in or put_on)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectRole {
    Target,
    SecondaryTarget,
    Destination,
    Confounder,
}

impl ObjectRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectRole::Target => "target",
            ObjectRole::SecondaryTarget => "secondary_target",
            ObjectRole::Destination => "destination",
            ObjectRole::Confounder => "confounder",
        }
    }

    /// Half extents used for AABB tests when the declaration carries none.
    pub fn default_half_extents(self) -> [f64; 3] {
        match self {
            ObjectRole::Destination => [0.08, 0.08, 0.04],
            _ => [0.025, 0.025, 0.025],
        }
    }
}

impl fmt::Display for ObjectRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDecl {
    pub object_id: String,
    pub object_role: ObjectRole,
    /// Axis-aligned half extents in meters, used by the put_in/put_on oracles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_extents: Option<[f64; 3]>,
}

impl ObjectDecl {
    pub fn new(object_id: impl Into<String>, object_role: ObjectRole) -> Self {
        Self {
            object_id: object_id.into(),
            object_role,
            half_extents: None,
        }
    }

    pub fn half_extents(&self) -> [f64; 3] {
        self.half_extents
            .unwrap_or_else(|| self.object_role.default_half_extents())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub run_id: String,
    /// Model that produced the run; used to group runs in reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    pub task: Task,
    pub instruction: String,
    pub robot: String,
    pub action_dims: usize,
    pub action_horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default)]
    pub token_count: usize,
    #[serde(default)]
    pub vocab_size: usize,
    #[serde(default)]
    pub ev_samples: usize,
    pub objects: Vec<ObjectDecl>,
}

impl TraceHeader {
    pub fn object_with_role(&self, role: ObjectRole) -> Option<&ObjectDecl> {
        self.objects.iter().find(|o| o.object_role == role)
    }

    pub fn object(&self, object_id: &str) -> Option<&ObjectDecl> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }

    /// Step duration in seconds, falling back to [`DEFAULT_DT`] with a warning.
    pub fn dt_or_default(&self) -> f64 {
        match self.dt {
            Some(dt) => dt,
            None => {
                log::warn!("run {}: header has no dt, assuming {DEFAULT_DT} s", self.run_id);
                DEFAULT_DT
            }
        }
    }

    pub fn model_or_unknown(&self) -> &str {
        self.model_id.as_deref().unwrap_or("unknown")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    /// Unit quaternion `(qx, qy, qz, qw)`.
    pub orientation: [f64; 4],
}

impl Pose {
    pub fn at(position: [f64; 3]) -> Self {
        Self {
            position,
            orientation: [0.0, 0.0, 0.0, 1.0],
        }
    }
}

/// Sparse per-token probability distribution.
///
/// Probability mass not listed in `entries` is carried by `tail_mass` and is
/// treated as spread uniformly over the `vocab_size - entries.len()` unlisted
/// tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    /// `(token_id, probability)` pairs sorted by token id. Serialized as a JSON
    /// object keyed by token id.
    #[serde(with = "entries_as_map")]
    pub entries: Vec<(u32, f64)>,
    #[serde(default)]
    pub tail_mass: f64,
    pub vocab_size: usize,
}

impl TokenDistribution {
    /// Builds a distribution from arbitrary `(token, p)` pairs.
    pub fn new(mut entries: Vec<(u32, f64)>, tail_mass: f64, vocab_size: usize) -> Self {
        entries.sort_by_key(|&(id, _)| id);
        Self {
            entries,
            tail_mass,
            vocab_size,
        }
    }

    /// Dense distribution over token ids `0..probs.len()`.
    pub fn dense(probs: &[f64]) -> Self {
        Self {
            entries: probs.iter().enumerate().map(|(i, &p)| (i as u32, p)).collect(),
            tail_mass: 0.0,
            vocab_size: probs.len(),
        }
    }

    pub fn unlisted(&self) -> usize {
        self.vocab_size.saturating_sub(self.entries.len())
    }

    /// Probability assigned to each unlisted token, if any mass is in the tail.
    pub fn tail_share(&self) -> Option<f64> {
        let unlisted = self.unlisted();
        (unlisted > 0 && self.tail_mass > 0.0).then(|| self.tail_mass / unlisted as f64)
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p).sum::<f64>() + self.tail_mass
    }
}

mod entries_as_map {
    use std::collections::BTreeMap;

    use serde::ser::SerializeMap;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(entries: &[(u32, f64)], s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(entries.len()))?;
        for (id, p) in entries {
            map.serialize_entry(id, p)?;
        }
        map.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(u32, f64)>, D::Error> {
        let map = BTreeMap::<u32, f64>::deserialize(d)?;
        Ok(map.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub action: Vec<f64>,
    pub tcp: [f64; 3],
    pub gripper_open: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grasped: Option<bool>,
    /// Repeated-inference action samples, `N` rows of `D` values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ev_actions: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_probs: Option<Vec<TokenDistribution>>,
    #[serde(default)]
    pub object_poses: BTreeMap<String, Pose>,
}

impl StepRecord {
    /// Minimal step with an action and TCP position and no optional channels.
    pub fn new(t: u64, action: Vec<f64>, tcp: [f64; 3]) -> Self {
        Self {
            t,
            action,
            tcp,
            gripper_open: 1.0,
            grasped: None,
            ev_actions: None,
            token_probs: None,
            object_poses: BTreeMap::new(),
        }
    }

    pub fn position_of(&self, object_id: &str) -> Option<[f64; 3]> {
        self.object_poses.get(object_id).map(|p| p.position)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_success: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub steps: Vec<StepRecord>,
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: unknown record type `{kind}`")]
    UnknownRecord { line: usize, kind: String },
    #[error("missing header record (the first line must carry \"type\":\"header\")")]
    MissingHeader,
    #[error("line {line}: unexpected {kind} record")]
    Misplaced { line: usize, kind: &'static str },
    #[error("invalid header: {0}")]
    Header(String),
    #[error("task {task} requires an object with role {role}")]
    MissingRole { task: Task, role: ObjectRole },
    #[error("step t={t}: expected t={expected} (step indices must increase by 1)")]
    NonMonotone { t: u64, expected: u64 },
    #[error("step t={t}: shape error: {detail}")]
    Shape { t: u64, detail: String },
    #[error("step t={t}, token {token}: probabilities sum to {sum} (must be 1 within 1e-6)")]
    Normalization { t: u64, token: usize, sum: f64 },
    #[error("step t={t}: {detail}")]
    Value { t: u64, detail: String },
}

#[derive(Deserialize)]
struct RecordKind {
    #[serde(rename = "type")]
    kind: String,
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    inner: &'a T,
}

impl RunTrace {
    pub fn new(header: TraceHeader, steps: Vec<StepRecord>) -> Self {
        Self {
            header,
            steps,
            outcome: None,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn run_id(&self) -> &str {
        &self.header.run_id
    }

    /// Loads and validates a JSONL trace file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let file = File::open(path)?;
        Self::read(BufReader::new(file))
    }

    pub fn read(reader: impl BufRead) -> Result<Self, TraceError> {
        let mut header: Option<TraceHeader> = None;
        let mut steps = Vec::new();
        let mut outcome = None;

        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let json_err = |source| TraceError::Json {
                line: line_no,
                source,
            };
            let kind = serde_json::from_str::<RecordKind>(&line).map_err(json_err)?.kind;
            if outcome.is_some() {
                return Err(TraceError::Misplaced {
                    line: line_no,
                    kind: "post-outcome",
                });
            }
            match kind.as_str() {
                "header" => {
                    if header.is_some() {
                        return Err(TraceError::Misplaced {
                            line: line_no,
                            kind: "second header",
                        });
                    }
                    header = Some(serde_json::from_str(&line).map_err(json_err)?);
                }
                "step" | "outcome" if header.is_none() => return Err(TraceError::MissingHeader),
                "step" => steps.push(serde_json::from_str(&line).map_err(json_err)?),
                "outcome" => outcome = Some(serde_json::from_str(&line).map_err(json_err)?),
                _ => {
                    return Err(TraceError::UnknownRecord {
                        line: line_no,
                        kind,
                    })
                }
            }
        }

        let header = header.ok_or(TraceError::MissingHeader)?;
        let trace = RunTrace {
            header,
            steps,
            outcome,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write(&self, mut w: impl Write) -> Result<(), TraceError> {
        write_record(&mut w, "header", &self.header)?;
        for step in &self.steps {
            write_record(&mut w, "step", step)?;
        }
        if let Some(outcome) = &self.outcome {
            write_record(&mut w, "outcome", outcome)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Checks every structural invariant of the trace format.
    pub fn validate(&self) -> Result<(), TraceError> {
        let h = &self.header;
        if h.run_id.is_empty() {
            return Err(TraceError::Header("run_id is empty".into()));
        }
        if h.action_dims < 1 {
            return Err(TraceError::Header("action_dims must be >= 1".into()));
        }
        if h.action_horizon < 1 {
            return Err(TraceError::Header("action_horizon must be >= 1".into()));
        }
        if let Some(dt) = h.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(TraceError::Header(format!("dt must be > 0, got {dt}")));
            }
        }
        if h.token_count > 0 && h.vocab_size < 2 {
            return Err(TraceError::Header(
                "vocab_size must be >= 2 when token_count > 0".into(),
            ));
        }
        let mut ids = BTreeSet::new();
        for obj in &h.objects {
            if !ids.insert(obj.object_id.as_str()) {
                return Err(TraceError::Header(format!(
                    "duplicate object_id `{}`",
                    obj.object_id
                )));
            }
            if let Some(he) = obj.half_extents {
                if he.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                    return Err(TraceError::Header(format!(
                        "object `{}` has invalid half_extents",
                        obj.object_id
                    )));
                }
            }
        }
        for role in required_roles(h.task) {
            if h.object_with_role(*role).is_none() {
                return Err(TraceError::MissingRole {
                    task: h.task,
                    role: *role,
                });
            }
        }

        let mut expected = None;
        for step in &self.steps {
            self.validate_step(step, expected)?;
            expected = Some(step.t + 1);
        }
        Ok(())
    }

    fn validate_step(&self, step: &StepRecord, expected: Option<u64>) -> Result<(), TraceError> {
        let h = &self.header;
        let t = step.t;
        if let Some(expected) = expected {
            if t != expected {
                return Err(TraceError::NonMonotone { t, expected });
            }
        }
        if step.action.len() != h.action_dims {
            return Err(TraceError::Shape {
                t,
                detail: format!(
                    "action has {} values, header declares action_dims = {}",
                    step.action.len(),
                    h.action_dims
                ),
            });
        }
        let value_err = |detail: String| TraceError::Value { t, detail };
        if step.action.iter().chain(&step.tcp).any(|x| !x.is_finite()) {
            return Err(value_err("non-finite action or tcp value".into()));
        }
        if !(0.0..=1.0).contains(&step.gripper_open) {
            return Err(value_err(format!(
                "gripper_open {} outside [0, 1]",
                step.gripper_open
            )));
        }
        if let Some(ev) = &step.ev_actions {
            if ev.len() != h.ev_samples || ev.iter().any(|row| row.len() != h.action_dims) {
                let cols = ev.first().map_or(0, Vec::len);
                return Err(TraceError::Shape {
                    t,
                    detail: format!(
                        "ev_actions is {}x{}, expected {}x{}",
                        ev.len(),
                        cols,
                        h.ev_samples,
                        h.action_dims
                    ),
                });
            }
            if ev.iter().flatten().any(|x| !x.is_finite()) {
                return Err(value_err("non-finite ev_actions value".into()));
            }
        }
        if let Some(tokens) = &step.token_probs {
            if tokens.len() != h.token_count {
                return Err(TraceError::Shape {
                    t,
                    detail: format!(
                        "token_probs has {} distributions, header declares token_count = {}",
                        tokens.len(),
                        h.token_count
                    ),
                });
            }
            for (i, dist) in tokens.iter().enumerate() {
                validate_distribution(t, i, dist)?;
            }
        }
        for (id, pose) in &step.object_poses {
            if h.object(id).is_none() {
                return Err(value_err(format!("pose for undeclared object `{id}`")));
            }
            if pose.position.iter().chain(&pose.orientation).any(|x| !x.is_finite()) {
                return Err(value_err(format!("non-finite pose for `{id}`")));
            }
            let norm = pose.orientation.iter().map(|q| q * q).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
                return Err(value_err(format!(
                    "orientation of `{id}` has norm {norm}, expected a unit quaternion"
                )));
            }
        }
        Ok(())
    }
}

fn validate_distribution(t: u64, token: usize, dist: &TokenDistribution) -> Result<(), TraceError> {
    let value_err = |detail: String| TraceError::Value { t, detail };
    if dist.entries.len() > dist.vocab_size {
        return Err(TraceError::Shape {
            t,
            detail: format!(
                "token {token} lists {} entries for a vocabulary of {}",
                dist.entries.len(),
                dist.vocab_size
            ),
        });
    }
    if dist.entries.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(value_err(format!("token {token} has unsorted or duplicate ids")));
    }
    if let Some(&(_, p)) = dist
        .entries
        .iter()
        .find(|&&(_, p)| !(0.0..=1.0).contains(&p))
    {
        return Err(value_err(format!("token {token} has probability {p} outside [0, 1]")));
    }
    if !(dist.tail_mass >= 0.0 && dist.tail_mass.is_finite()) {
        return Err(value_err(format!("token {token} has invalid tail_mass {}", dist.tail_mass)));
    }
    let sum = dist.total_mass();
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
        return Err(TraceError::Normalization { t, token, sum });
    }
    if dist.tail_mass > PROBABILITY_SUM_TOLERANCE && dist.unlisted() == 0 {
        return Err(value_err(format!(
            "token {token} carries tail_mass {} but lists the whole vocabulary",
            dist.tail_mass
        )));
    }
    Ok(())
}

/// Object roles a task's oracle and OT metric cannot do without.
pub fn required_roles(task: Task) -> &'static [ObjectRole] {
    match task {
        Task::PickUp | Task::MoveNear => &[ObjectRole::Target],
        Task::PutIn | Task::PutOn => &[ObjectRole::Target, ObjectRole::Destination],
    }
}

fn write_record<T: Serialize>(w: &mut impl Write, kind: &'static str, inner: &T) -> Result<(), TraceError> {
    serde_json::to_writer(&mut *w, &Tagged { kind, inner }).map_err(|e| TraceError::Io(e.into()))?;
    w.write_all(b"\n")?;
    Ok(())
}
