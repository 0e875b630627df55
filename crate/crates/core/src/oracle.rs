//! Symbolic success oracles and grasp detection.

use thiserror::Error;

use crate::geom::{dist, Aabb, Vec3};
use crate::trace::{ObjectDecl, ObjectRole, RunTrace, Task};

/// Minimum lift above the initial height for pick_up.
pub const LIFT_THRESHOLD_M: f64 = 0.02;
/// Consecutive steps a goal predicate must hold (lift, and put_in/put_on stability).
pub const STABLE_STEPS: usize = 5;
/// Center distance for move_near success; also reused as the grasp proximity.
pub const NEAR_THRESHOLD_M: f64 = 0.05;
/// Vertical slack between a resting object's bottom face and its support.
pub const CONTACT_TOLERANCE_M: f64 = 0.01;
/// Gripper opening below which the gripper counts as closed.
pub const GRIPPER_CLOSED_BELOW: f64 = 0.5;
pub const GRASP_DISTANCE_M: f64 = 0.05;

// Absorbs floating-point noise at the exact thresholds.
const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("task {task} needs an object with role {role}")]
    MissingRole { task: Task, role: &'static str },
    #[error("step t={t}: no pose recorded for object `{object_id}`")]
    MissingPose { t: u64, object_id: String },
    #[error("trace has {steps} steps, the oracle needs at least {required}")]
    TooShort { steps: usize, required: usize },
}

/// Object manipulated by the robot.
pub fn target(trace: &RunTrace) -> Result<&ObjectDecl, OracleError> {
    trace
        .header
        .object_with_role(ObjectRole::Target)
        .ok_or(OracleError::MissingRole {
            task: trace.header.task,
            role: "target",
        })
}

/// Reference object B: the destination for put_in/put_on, the object to move
/// near for move_near (a secondary target, or a destination if none is declared).
pub fn reference(trace: &RunTrace) -> Result<&ObjectDecl, OracleError> {
    let h = &trace.header;
    let found = match h.task {
        Task::MoveNear => h
            .object_with_role(ObjectRole::SecondaryTarget)
            .or_else(|| h.object_with_role(ObjectRole::Destination)),
        Task::PutIn | Task::PutOn => h.object_with_role(ObjectRole::Destination),
        Task::PickUp => None,
    };
    found.ok_or(OracleError::MissingRole {
        task: h.task,
        role: match h.task {
            Task::MoveNear => "secondary_target",
            _ => "destination",
        },
    })
}

/// Position of `object` at every step, failing on the first gap.
pub fn positions(trace: &RunTrace, object: &ObjectDecl) -> Result<Vec<Vec3>, OracleError> {
    trace
        .steps
        .iter()
        .map(|s| {
            s.position_of(&object.object_id).ok_or_else(|| OracleError::MissingPose {
                t: s.t,
                object_id: object.object_id.clone(),
            })
        })
        .collect()
}

/// Decides whether the run achieved its task goal.
pub fn success_oracle(trace: &RunTrace) -> Result<bool, OracleError> {
    if trace.len() < STABLE_STEPS {
        return Err(OracleError::TooShort {
            steps: trace.len(),
            required: STABLE_STEPS,
        });
    }
    let target_decl = target(trace)?;
    let target_path = positions(trace, target_decl)?;

    match trace.header.task {
        Task::PickUp => {
            let z0 = target_path[0][2];
            let mut run = 0;
            for p in &target_path {
                if p[2] - z0 >= LIFT_THRESHOLD_M - GEOM_EPS {
                    run += 1;
                    if run >= STABLE_STEPS {
                        return Ok(true);
                    }
                } else {
                    run = 0;
                }
            }
            Ok(false)
        }
        Task::MoveNear => {
            let other = positions(trace, reference(trace)?)?;
            let last = trace.len() - 1;
            Ok(dist(target_path[last], other[last]) <= NEAR_THRESHOLD_M + GEOM_EPS)
        }
        Task::PutIn | Task::PutOn => {
            let dest_decl = reference(trace)?;
            let dest_path = positions(trace, dest_decl)?;
            let target_he = target_decl.half_extents();
            let dest_he = dest_decl.half_extents();
            let task = trace.header.task;
            let holds = |i: usize| {
                let inner = Aabb::around(target_path[i], target_he);
                let outer = Aabb::around(dest_path[i], dest_he);
                if task == Task::PutIn {
                    outer.contains(&inner, GEOM_EPS)
                } else {
                    inner.overlaps_xy(&outer)
                        && (inner.min[2] - outer.max[2]).abs() <= CONTACT_TOLERANCE_M + GEOM_EPS
                }
            };
            Ok((trace.len() - STABLE_STEPS..trace.len()).all(holds))
        }
    }
}

/// Per-step grasp state.
///
/// Explicit `grasped` flags are returned unchanged when every step carries one.
/// Otherwise the grasp latches on when the gripper is closed within
/// [`GRASP_DISTANCE_M`] of the target and stays latched until the gripper opens.
pub fn derive_grasped(trace: &RunTrace) -> Vec<bool> {
    if !trace.steps.is_empty() && trace.steps.iter().all(|s| s.grasped.is_some()) {
        return trace.steps.iter().map(|s| s.grasped.unwrap_or(false)).collect();
    }
    if trace.steps.iter().any(|s| s.grasped.is_some()) {
        log::warn!(
            "run {}: grasped flags only on some steps, deriving from gripper state",
            trace.run_id()
        );
    }
    let Some(target) = trace.header.object_with_role(ObjectRole::Target) else {
        log::warn!("run {}: no target object, grasp state is all false", trace.run_id());
        return vec![false; trace.len()];
    };

    let mut latched = false;
    trace
        .steps
        .iter()
        .map(|s| {
            if s.gripper_open >= GRIPPER_CLOSED_BELOW {
                latched = false;
            } else if !latched {
                latched = s
                    .position_of(&target.object_id)
                    .is_some_and(|p| dist(s.tcp, p) < GRASP_DISTANCE_M);
            }
            latched
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Pose, StepRecord, TraceHeader};

    fn header(task: Task) -> TraceHeader {
        let mut objects = vec![ObjectDecl::new("a", ObjectRole::Target)];
        match task {
            Task::MoveNear => objects.push(ObjectDecl::new("b", ObjectRole::SecondaryTarget)),
            Task::PutIn | Task::PutOn => objects.push(ObjectDecl::new("b", ObjectRole::Destination)),
            Task::PickUp => {}
        }
        TraceHeader {
            run_id: "oracle".into(),
            model_id: None,
            task,
            instruction: String::new(),
            robot: "test".into(),
            action_dims: 1,
            action_horizon: 1,
            dt: Some(0.1),
            token_count: 0,
            vocab_size: 0,
            ev_samples: 0,
            objects,
        }
    }

    /// Builds a trace from per-step (tcp, gripper, a position, optional b position).
    fn build(task: Task, frames: &[(Vec3, f64, Vec3, Option<Vec3>)]) -> RunTrace {
        let steps = frames
            .iter()
            .enumerate()
            .map(|(i, &(tcp, grip, a, b))| {
                let mut s = StepRecord::new(i as u64, vec![0.0], tcp);
                s.gripper_open = grip;
                s.object_poses.insert("a".into(), Pose::at(a));
                if let Some(b) = b {
                    s.object_poses.insert("b".into(), Pose::at(b));
                }
                s
            })
            .collect();
        RunTrace::new(header(task), steps)
    }

    fn pick_up(z_offsets: &[f64]) -> RunTrace {
        let frames: Vec<_> = z_offsets
            .iter()
            .map(|&dz| ([0.0, 0.0, 0.3], 1.0, [0.4, 0.0, 0.02 + dz], None))
            .collect();
        build(Task::PickUp, &frames)
    }

    #[test]
    fn pick_up_lift_of_three_cm_for_ten_steps() {
        let mut z = vec![0.0; 5];
        z.extend([0.03; 10]);
        assert!(success_oracle(&pick_up(&z)).unwrap());
    }

    #[test]
    fn pick_up_needs_five_consecutive_frames() {
        let z = [0.0, 0.03, 0.03, 0.03, 0.03, 0.0, 0.03, 0.03];
        assert!(!success_oracle(&pick_up(&z)).unwrap());
        let z = [0.0, 0.02, 0.02, 0.02, 0.02, 0.02];
        assert!(success_oracle(&pick_up(&z)).unwrap());
        let z = [0.0, 0.019, 0.019, 0.019, 0.019, 0.019];
        assert!(!success_oracle(&pick_up(&z)).unwrap());
    }

    fn move_near(final_dist: f64) -> RunTrace {
        let b = [0.5, 0.0, 0.02];
        let mut frames = vec![([0.0; 3], 1.0, [0.2, 0.0, 0.02], Some(b)); 5];
        frames.push(([0.0; 3], 1.0, [0.5 - final_dist, 0.0, 0.02], Some(b)));
        build(Task::MoveNear, &frames)
    }

    #[test]
    fn move_near_threshold() {
        assert!(success_oracle(&move_near(0.049)).unwrap());
        assert!(!success_oracle(&move_near(0.051)).unwrap());
    }

    #[test]
    fn static_target_never_succeeds() {
        for task in Task::ALL {
            let b = match task {
                Task::PickUp => None,
                _ => Some([0.6, 0.2, 0.04]),
            };
            let frames = vec![([0.0, 0.0, 0.3], 1.0, [0.3, 0.0, 0.025], b); 12];
            assert!(!success_oracle(&build(task, &frames)).unwrap(), "{task}");
        }
    }

    #[test]
    fn put_in_requires_containment_for_final_steps() {
        let dest = [0.5, 0.0, 0.04];
        let inside = [0.52, 0.01, 0.03];
        let outside = [0.62, 0.0, 0.03];
        let mut frames = vec![([0.0; 3], 1.0, outside, Some(dest)); 3];
        frames.extend(vec![([0.0; 3], 1.0, inside, Some(dest)); 5]);
        assert!(success_oracle(&build(Task::PutIn, &frames)).unwrap());

        // Only four stable steps at the end.
        let mut frames = vec![([0.0; 3], 1.0, outside, Some(dest)); 4];
        frames.extend(vec![([0.0; 3], 1.0, inside, Some(dest)); 4]);
        assert!(!success_oracle(&build(Task::PutIn, &frames)).unwrap());
    }

    #[test]
    fn put_on_rests_on_top_within_contact_tolerance() {
        let dest = [0.5, 0.0, 0.04];
        // Destination top at 0.08; target bottom at z - 0.025.
        let on_top = [0.55, 0.05, 0.08 + 0.025 + 0.005];
        let floating = [0.55, 0.05, 0.08 + 0.025 + 0.02];
        let beside = [0.7, 0.0, 0.105];
        for (pos, expect) in [(on_top, true), (floating, false), (beside, false)] {
            let frames = vec![([0.0; 3], 1.0, pos, Some(dest)); 6];
            assert_eq!(success_oracle(&build(Task::PutOn, &frames)).unwrap(), expect, "{pos:?}");
        }
    }

    #[test]
    fn oracle_errors() {
        let short = pick_up(&[0.0, 0.1, 0.1, 0.1]);
        assert_eq!(
            success_oracle(&short).unwrap_err(),
            OracleError::TooShort {
                steps: 4,
                required: 5
            }
        );

        let mut tr = move_near(0.01);
        tr.header.objects.truncate(1);
        assert!(matches!(
            success_oracle(&tr).unwrap_err(),
            OracleError::MissingRole { .. }
        ));

        let mut tr = move_near(0.01);
        tr.steps[2].object_poses.remove("b");
        assert_eq!(
            success_oracle(&tr).unwrap_err(),
            OracleError::MissingPose {
                t: 2,
                object_id: "b".into()
            }
        );
    }

    #[test]
    fn oracle_is_pure() {
        let tr = move_near(0.03);
        let first = success_oracle(&tr);
        for _ in 0..3 {
            assert_eq!(success_oracle(&tr), first);
        }
    }

    #[test]
    fn explicit_grasp_flags_pass_through() {
        let mut tr = pick_up(&[0.0; 6]);
        let flags = [false, true, true, false, true, false];
        for (s, &g) in tr.steps.iter_mut().zip(&flags) {
            s.grasped = Some(g);
        }
        assert_eq!(derive_grasped(&tr), flags);
    }

    #[test]
    fn grasp_latch_follows_gripper() {
        // Gripper closes at t=10 with the TCP 3 cm from the target and opens at t=40.
        let target = [0.4, 0.0, 0.02];
        let frames: Vec<_> = (0..50)
            .map(|t| {
                let grip = if (10..40).contains(&t) { 0.0 } else { 1.0 };
                // TCP 3 cm away until t=10, then drifts away while holding.
                let tcp = if t < 10 {
                    [0.4, 0.03, 0.02]
                } else {
                    [0.4, 0.03 + 0.01 * (t - 10) as f64, 0.02]
                };
                (tcp, grip, target, None)
            })
            .collect();
        let grasped = derive_grasped(&build(Task::PickUp, &frames));
        let expected: Vec<bool> = (0..50).map(|t| (10..40).contains(&t)).collect();
        assert_eq!(grasped, expected);
    }

    #[test]
    fn closing_far_from_target_does_not_grasp() {
        let frames: Vec<_> = (0..10)
            .map(|t| {
                let tcp = [0.4, 0.2 - 0.02 * t as f64, 0.02];
                (tcp, 0.0, [0.4, 0.0, 0.02], None)
            })
            .collect();
        // Gripper closed throughout; latch engages once the TCP comes within 5 cm (t=8).
        let grasped = derive_grasped(&build(Task::PickUp, &frames));
        let first = grasped.iter().position(|&g| g).unwrap();
        assert_eq!(first, 8);
        assert!(grasped[first..].iter().all(|&g| g));
    }

    #[test]
    fn open_gripper_never_grasps() {
        let frames = vec![([0.4, 0.0, 0.02], 1.0, [0.4, 0.0, 0.02], None); 8];
        assert!(derive_grasped(&build(Task::PickUp, &frames)).iter().all(|&g| !g));
    }
}
