//! The five quality metrics: TCP position/velocity/acceleration instability,
//! run-level trajectory instability (RMS jerk), and the task-adaptive optimal
//! trajectory difference.

use std::collections::BTreeMap;

use crate::geom::{add, dist, norm, scale, sub, Vec3};
use crate::metric::{difference_series, euclidean, MetricConfig, MetricError, MetricId, MetricSeries};
use crate::oracle::{self, derive_grasped, OracleError, NEAR_THRESHOLD_M};
use crate::trace::{RunTrace, Task};

fn tcp_instability(
    trace: &RunTrace,
    metric: MetricId,
    order: usize,
    cfg: &MetricConfig,
) -> Result<MetricSeries, MetricError> {
    difference_series(metric, &trace.steps, 3, order, cfg, |s| &s.tcp, euclidean)
}

/// TCP-PI: norm of the first difference of the TCP position.
pub fn tcp_pi(trace: &RunTrace, cfg: &MetricConfig) -> Result<MetricSeries, MetricError> {
    tcp_instability(trace, MetricId::TcpPi, 1, cfg)
}

/// TCP-VI: norm of the second difference of the TCP position.
pub fn tcp_vi(trace: &RunTrace, cfg: &MetricConfig) -> Result<MetricSeries, MetricError> {
    tcp_instability(trace, MetricId::TcpVi, 2, cfg)
}

/// TCP-AI: norm of the third difference of the TCP position.
pub fn tcp_ai(trace: &RunTrace, cfg: &MetricConfig) -> Result<MetricSeries, MetricError> {
    tcp_instability(trace, MetricId::TcpAi, 3, cfg)
}

/// TI: root-mean-square jerk of the TCP over the whole run.
///
/// Velocity, acceleration and jerk are successive first differences each
/// divided by the header's `dt`, giving `T − 3` jerk samples.
pub fn ti(trace: &RunTrace) -> Result<f64, MetricError> {
    let steps = trace.len();
    if steps < 4 {
        return Err(MetricError::TooFewSteps {
            metric: MetricId::Ti,
            required: 4,
            steps,
        });
    }
    let dt = trace.header.dt_or_default();
    let derive = |p: &[Vec3]| -> Vec<Vec3> {
        p.windows(2).map(|w| scale(sub(w[1], w[0]), 1.0 / dt)).collect()
    };
    let positions: Vec<Vec3> = trace.steps.iter().map(|s| s.tcp).collect();
    let jerk = derive(&derive(&derive(&positions)));
    let sum_sq: f64 = jerk.iter().map(|j| j[0] * j[0] + j[1] * j[1] + j[2] * j[2]).sum();
    Ok((sum_sq / jerk.len() as f64).sqrt())
}

/// Fixed goal point the robot should end at once the object is grasped.
///
/// put_in/put_on use the destination center at the first step. move_near uses
/// the point at the success radius from object B's center, on the line towards
/// object A's starting position.
pub fn goal_point(trace: &RunTrace) -> Result<Option<Vec3>, OracleError> {
    if trace.header.task == Task::PickUp {
        return Ok(None);
    }
    let reference = oracle::reference(trace)?;
    let first = trace.steps.first().ok_or(OracleError::TooShort {
        steps: 0,
        required: 2,
    })?;
    let missing = |id: &str| OracleError::MissingPose {
        t: first.t,
        object_id: id.to_string(),
    };
    let b = first
        .position_of(&reference.object_id)
        .ok_or_else(|| missing(&reference.object_id))?;
    if trace.header.task != Task::MoveNear {
        return Ok(Some(b));
    }
    let target = oracle::target(trace)?;
    let a = first
        .position_of(&target.object_id)
        .ok_or_else(|| missing(&target.object_id))?;
    let offset = sub(a, b);
    let len = norm(offset);
    if len == 0.0 {
        return Ok(Some(b));
    }
    Ok(Some(add(b, scale(offset, NEAR_THRESHOLD_M / len))))
}

/// Per-step goal distance `d_t`, aligned with `trace.steps`.
///
/// pick_up: distance from the TCP to the target. Other tasks: before the grasp,
/// distance to the target plus distance to the goal point; after the grasp,
/// distance to the goal point.
pub fn ot_distance(trace: &RunTrace) -> Result<Vec<f64>, MetricError> {
    let wrap = |source| MetricError::Oracle {
        metric: MetricId::Ot,
        source,
    };
    let target = oracle::target(trace).map_err(wrap)?;
    let target_path = oracle::positions(trace, target).map_err(wrap)?;
    let goal = goal_point(trace).map_err(wrap)?;

    let Some(end) = goal else {
        return Ok(trace
            .steps
            .iter()
            .zip(&target_path)
            .map(|(s, &p)| dist(s.tcp, p))
            .collect());
    };
    let grasped = derive_grasped(trace);
    Ok(trace
        .steps
        .iter()
        .zip(&target_path)
        .zip(grasped)
        .map(|((s, &p), held)| {
            if held {
                dist(s.tcp, end)
            } else {
                dist(s.tcp, p) + dist(s.tcp, end)
            }
        })
        .collect())
}

/// Maps a change in goal distance to `[0, 1]`; `0.5` means no change.
pub fn ot_score(delta: f64) -> f64 {
    0.5 * (1.0 + delta.clamp(-1.0, 1.0))
}

/// OT: normalized per-step change of the goal distance. Below 0.5 is progress.
pub fn ot(trace: &RunTrace) -> Result<MetricSeries, MetricError> {
    if trace.len() < 2 {
        return Err(MetricError::TooFewSteps {
            metric: MetricId::Ot,
            required: 2,
            steps: trace.len(),
        });
    }
    let d = ot_distance(trace)?;
    let values: BTreeMap<u64, f64> = trace
        .steps
        .iter()
        .skip(1)
        .zip(d.windows(2))
        .map(|(s, w)| (s.t, ot_score(w[1] - w[0])))
        .collect();
    Ok(MetricSeries::from_values(MetricId::Ot, values).expect("two or more steps"))
}
