//! Deterministic synthetic traces for tests, fixtures and benchmarks.
//!
//! A scene (object placement) depends only on the task and seed, so the four
//! profiles generated from one seed share their geometry and differ only in
//! how the robot moves.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geom::{add, dist, norm, scale, sub, Vec3};
use crate::trace::{
    ObjectDecl, ObjectRole, Outcome, Pose, RunTrace, StepRecord, Task, TokenDistribution,
    TraceHeader,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Minimum-jerk motion that achieves the task.
    Smooth,
    /// The smooth plan with per-step TCP noise.
    Jittery,
    /// Robot never moves.
    Stalled,
    /// Grasp misses the object; noisier motion, object never moves.
    Failing,
}

impl Profile {
    pub const ALL: [Profile; 4] = [Profile::Smooth, Profile::Jittery, Profile::Stalled, Profile::Failing];

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Smooth => "smooth",
            Profile::Jittery => "jittery",
            Profile::Stalled => "stalled",
            Profile::Failing => "failing",
        }
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }

    /// Range of the top token probability.
    fn confidence(self) -> (f64, f64) {
        match self {
            Profile::Smooth | Profile::Stalled => (0.85, 0.98),
            Profile::Jittery => (0.6, 0.85),
            Profile::Failing => (0.3, 0.6),
        }
    }

    fn ev_sigma(self) -> f64 {
        match self {
            Profile::Smooth => 0.001,
            Profile::Jittery => 0.003,
            Profile::Failing => 0.006,
            Profile::Stalled => 0.0,
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Profile::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown profile `{s}` (expected smooth, jittery, stalled or failing)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Steps per trace, at least [`MIN_STEPS`].
    pub steps: usize,
    pub dt: f64,
    /// Standard deviation of the jittery TCP noise in meters (clipped at 3σ).
    pub jitter: f64,
    pub ev_samples: usize,
    pub token_count: usize,
    pub vocab_size: usize,
    /// Listed entries per token distribution; the rest is tail mass.
    pub top_k: usize,
    pub model_id: String,
}

pub const MIN_STEPS: usize = 20;

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            steps: 60,
            dt: 0.1,
            jitter: 0.004,
            ev_samples: 4,
            token_count: 7,
            vocab_size: 256,
            top_k: 8,
            model_id: "synthetic".to_string(),
        }
    }
}

const ACTION_DIMS: usize = 7;
const HOME: Vec3 = [0.25, 0.0, 0.30];
const CUBE_HALF: f64 = 0.025;
const HOVER: f64 = 0.08;
const CARRY: f64 = 0.12;
/// Center distance at which move_near drops object A next to B.
const NEAR_PLACEMENT: f64 = 0.03;
const MISS: f64 = 0.08;
const FAILING_NOISE_FACTOR: f64 = 2.5;
const ROTATION_NOISE: f64 = 0.01;

fn min_jerk(tau: f64) -> f64 {
    tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau)
}

/// Generates one trace with the default configuration.
pub fn generate_synthetic(profile: Profile, task: Task, seed: u64) -> RunTrace {
    generate_synthetic_with(profile, task, seed, &SynthConfig::default())
}

struct Scene {
    target: Vec3,
    other: Option<Vec3>,
}

impl Scene {
    fn sample(task: Task, rng: &mut ChaCha8Rng) -> Self {
        let spot = |rng: &mut ChaCha8Rng, z: f64| -> Vec3 {
            [rng.random_range(0.35..0.55), rng.random_range(-0.15..0.15), z]
        };
        let target = spot(rng, CUBE_HALF);
        let other = match task {
            Task::PickUp => None,
            Task::MoveNear => Some(CUBE_HALF),
            Task::PutIn | Task::PutOn => Some(ObjectRole::Destination.default_half_extents()[2]),
        }
        .map(|z| loop {
            let p = spot(rng, z);
            if dist([p[0], p[1], 0.0], [target[0], target[1], 0.0]) >= 0.18 {
                break p;
            }
        });
        Self { target, other }
    }

    /// Where the target should come to rest, and its resting height.
    fn placement(&self, task: Task) -> Option<Vec3> {
        let b = self.other?;
        Some(match task {
            Task::PickUp => return None,
            Task::MoveNear => {
                let dir = sub(self.target, b);
                let dir = scale([dir[0], dir[1], 0.0], 1.0 / norm([dir[0], dir[1], 0.0]));
                add([b[0], b[1], CUBE_HALF], scale(dir, NEAR_PLACEMENT))
            }
            Task::PutIn => [b[0], b[1], CUBE_HALF],
            Task::PutOn => [b[0], b[1], 2.0 * b[2] + CUBE_HALF],
        })
    }
}

struct Segment {
    to: Vec3,
    weight: usize,
    gripper: f64,
}

/// TCP waypoints of the nominal plan. Weights set each segment's share of steps.
fn plan(task: Task, grasp_at: Vec3, place_at: Option<Vec3>) -> Vec<Segment> {
    let above = |p: Vec3, h: f64| [p[0], p[1], p[2] + h];
    let seg = |to, weight, gripper| Segment { to, weight, gripper };
    let mut segments = vec![
        seg(above(grasp_at, HOVER), 12, 1.0),
        seg(grasp_at, 6, 1.0),
        seg(grasp_at, 3, 0.0),
        seg(above(grasp_at, CARRY), 6, 0.0),
    ];
    match (task, place_at) {
        (Task::PickUp, _) | (_, None) => segments.push(seg(above(grasp_at, CARRY), 32, 0.0)),
        (_, Some(place)) => segments.extend([
            seg(above(place, CARRY), 14, 0.0),
            seg(place, 6, 0.0),
            seg(place, 3, 1.0),
            seg(above(place, CARRY), 9, 1.0),
        ]),
    }
    segments
}

/// Splits `total` steps across segments in proportion to their weights.
fn allot(segments: &[Segment], total: usize) -> Vec<usize> {
    let sum: usize = segments.iter().map(|s| s.weight).sum();
    let mut counts: Vec<usize> = segments
        .iter()
        .map(|s| (s.weight * total / sum).max(1))
        .collect();
    let assigned: usize = counts.iter().sum();
    let last = counts.len() - 1;
    counts[last] = (counts[last] + total).saturating_sub(assigned).max(1);
    counts
}

/// Nominal TCP path and gripper command, `steps` long, starting at home.
fn nominal_path(segments: &[Segment], steps: usize) -> (Vec<Vec3>, Vec<f64>) {
    let mut tcp = vec![HOME];
    let mut gripper = vec![1.0];
    let mut from = HOME;
    for (segment, n) in segments.iter().zip(allot(segments, steps - 1)) {
        for k in 1..=n {
            let s = min_jerk(k as f64 / n as f64);
            tcp.push(add(from, scale(sub(segment.to, from), s)));
            gripper.push(segment.gripper);
        }
        from = segment.to;
    }
    tcp.truncate(steps);
    gripper.truncate(steps);
    (tcp, gripper)
}

fn clipped(noise: &Normal<f64>, sigma: f64, rng: &mut ChaCha8Rng) -> f64 {
    noise.sample(rng).clamp(-3.0 * sigma, 3.0 * sigma)
}

fn token_distribution(profile: Profile, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> TokenDistribution {
    let k = cfg.top_k.clamp(1, cfg.vocab_size);
    let (lo, hi) = profile.confidence();
    let top = rng.random_range(lo..hi);
    let rest = 1.0 - top;
    let tail_share = if k < cfg.vocab_size { rng.random_range(0.05..0.2) } else { 0.0 };
    let weights: Vec<f64> = (1..k)
        .map(|i| rng.random_range(0.2..1.0) * 0.6f64.powi(i as i32))
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    let ids = index::sample(rng, cfg.vocab_size, k);
    let mut entries = Vec::with_capacity(k);
    let mut listed = 0.0;
    for (i, id) in ids.iter().enumerate() {
        let p = if i == 0 {
            top
        } else if weight_sum > 0.0 {
            rest * (1.0 - tail_share) * weights[i - 1] / weight_sum
        } else {
            0.0
        };
        listed += p;
        entries.push((id as u32, p));
    }
    let tail = if k < cfg.vocab_size { (1.0 - listed).max(0.0) } else { 0.0 };
    TokenDistribution::new(entries, tail, cfg.vocab_size)
}

/// Generates one trace. Equal arguments give bit-identical traces.
///
/// # Panics
/// If `cfg.steps < MIN_STEPS`.
pub fn generate_synthetic_with(profile: Profile, task: Task, seed: u64, cfg: &SynthConfig) -> RunTrace {
    assert!(cfg.steps >= MIN_STEPS, "synthetic traces need at least {MIN_STEPS} steps");
    let mut scene_rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = Scene::sample(task, &mut scene_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(profile.stream());

    let place = scene.placement(task);
    let (grasp_at, noise_sigma) = match profile {
        Profile::Failing => {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let miss = [MISS * angle.cos(), MISS * angle.sin(), 0.0];
            (add(scene.target, miss), FAILING_NOISE_FACTOR * cfg.jitter)
        }
        Profile::Jittery => (scene.target, cfg.jitter),
        Profile::Smooth | Profile::Stalled => (scene.target, 0.0),
    };
    let (mut tcp, gripper) = if profile == Profile::Stalled {
        (vec![HOME; cfg.steps], vec![1.0; cfg.steps])
    } else {
        nominal_path(&plan(task, grasp_at, place), cfg.steps)
    };
    let noise = Normal::new(0.0, noise_sigma).expect("finite sigma");
    if noise_sigma > 0.0 {
        for p in tcp.iter_mut() {
            for c in p.iter_mut() {
                *c += clipped(&noise, noise_sigma, &mut rng);
            }
        }
    }

    let target_id = "target";
    let other_id = match task {
        Task::MoveNear => Some(("object_b", ObjectRole::SecondaryTarget)),
        Task::PutIn | Task::PutOn => Some(("destination", ObjectRole::Destination)),
        Task::PickUp => None,
    };
    let mut objects = vec![ObjectDecl::new(target_id, ObjectRole::Target)];
    if let Some((id, role)) = other_id {
        objects.push(ObjectDecl::new(id, role));
    }

    let rest_z = place.map_or(CUBE_HALF, |p| p[2]);
    let rotation_noise = Normal::new(0.0, ROTATION_NOISE).expect("finite sigma");
    let ev_noise = Normal::new(0.0, profile.ev_sigma()).expect("finite sigma");
    let mut target = scene.target;
    let mut held = false;
    let mut steps = Vec::with_capacity(cfg.steps);
    for t in 0..cfg.steps {
        let closed = gripper[t] < 0.5;
        if closed && !held && profile != Profile::Failing {
            held = dist(tcp[t], target) < 0.05;
        }
        if held && !closed {
            held = false;
            target = [tcp[t][0], tcp[t][1], rest_z];
        }
        if held {
            target = tcp[t];
        }

        let mut action = vec![0.0; ACTION_DIMS];
        if t > 0 {
            for (a, d) in action.iter_mut().zip(sub(tcp[t], tcp[t - 1])) {
                *a = d;
            }
        }
        if noise_sigma > 0.0 {
            for a in &mut action[3..6] {
                *a = clipped(&rotation_noise, ROTATION_NOISE, &mut rng);
            }
        }
        action[6] = gripper[t];

        let mut step = StepRecord::new(t as u64, action.clone(), tcp[t]);
        step.gripper_open = gripper[t];
        if cfg.ev_samples > 0 {
            step.ev_actions = Some(
                (0..cfg.ev_samples)
                    .map(|_| action.iter().map(|a| a + ev_noise.sample(&mut rng)).collect())
                    .collect(),
            );
        }
        if cfg.token_count > 0 {
            step.token_probs = Some(
                (0..cfg.token_count)
                    .map(|_| token_distribution(profile, cfg, &mut rng))
                    .collect(),
            );
        }
        step.object_poses.insert(target_id.to_string(), Pose::at(target));
        if let (Some((id, _)), Some(p)) = (other_id, scene.other) {
            step.object_poses.insert(id.to_string(), Pose::at(p));
        }
        steps.push(step);
    }

    let header = TraceHeader {
        run_id: format!("{}-{}-{:05}", task, profile, seed),
        model_id: Some(cfg.model_id.clone()),
        task,
        instruction: instruction(task),
        robot: "synthetic-7dof".to_string(),
        action_dims: ACTION_DIMS,
        action_horizon: 1,
        dt: Some(cfg.dt),
        token_count: cfg.token_count,
        vocab_size: if cfg.token_count > 0 { cfg.vocab_size } else { 0 },
        ev_samples: cfg.ev_samples,
        objects,
    };
    let mut trace = RunTrace::new(header, steps);
    trace.outcome = Some(Outcome {
        oracle_success: None,
        notes: Some(format!("synthetic {profile} profile")),
    });
    trace
}

fn instruction(task: Task) -> String {
    match task {
        Task::PickUp => "pick up the target",
        Task::MoveNear => "move the target near object b",
        Task::PutIn => "put the target in the destination",
        Task::PutOn => "put the target on the destination",
    }
    .to_string()
}
