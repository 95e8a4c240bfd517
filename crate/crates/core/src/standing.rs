//! Standing-pose inverse kinematics for legged trees.

use nalgebra::{DVector, Isometry3, Matrix3, Vector3};

use crate::model::KinematicTree;
use crate::rigidbody::{frame_kinematics_cached, GeneralizedState, KinematicsCache};

/// Joint configuration placing each listed point frame at its world target
/// while the base is held at `base_pose`. Each foot is solved by Newton
/// iteration on the joints of its own chain, starting from `guess`.
pub fn solve_standing(
    model: &KinematicTree,
    base_pose: &Isometry3<f64>,
    feet: &[(usize, Vector3<f64>)],
    guess: &DVector<f64>,
) -> Result<GeneralizedState, String> {
    if guess.len() != model.n_joints() {
        return Err(format!(
            "joint guess has {} entries, model has {} joints",
            guess.len(),
            model.n_joints()
        ));
    }
    let mut state = GeneralizedState::zeros(model);
    state.base_position = base_pose.translation.vector;
    state.base_orientation = base_pose.rotation;
    state.joint_positions = guess.clone();
    let off = model.joint_offset();

    for &(frame, target) in feet {
        let joints = model.joints_supporting_frame(frame);
        if joints.len() != 3 {
            return Err(format!(
                "frame '{}' is supported by {} joints, expected 3",
                model.frames[frame].name,
                joints.len()
            ));
        }
        let mut converged = false;
        for _ in 0..50 {
            let cache = KinematicsCache::new(model, &state);
            let fk = frame_kinematics_cached(model, &cache, frame);
            let err = target - fk.position();
            if err.amax() < 1e-12 {
                converged = true;
                break;
            }
            let jac = Matrix3::from_fn(|r, c| fk.jacobian[(r, off + joints[c])]);
            let step = jac
                .lu()
                .solve(&err)
                .ok_or_else(|| format!("singular leg Jacobian for '{}'", model.frames[frame].name))?;
            for (c, &j) in joints.iter().enumerate() {
                state.joint_positions[j] += step[c].clamp(-0.3, 0.3);
            }
        }
        if !converged {
            return Err(format!(
                "standing inverse kinematics did not converge for '{}'",
                model.frames[frame].name
            ));
        }
    }
    Ok(state)
}

/// Standing pose with the base level at `base_height` and every listed foot
/// directly below its position in the all-zero joint configuration, resting
/// on the plane `z = ground_height`.
pub fn standing_under_hips(
    model: &KinematicTree,
    base_height: f64,
    ground_height: f64,
    foot_frames: &[usize],
    guess: &DVector<f64>,
) -> Result<GeneralizedState, String> {
    let zero = GeneralizedState::zeros(model);
    let cache = KinematicsCache::new(model, &zero);
    let feet: Vec<(usize, Vector3<f64>)> = foot_frames
        .iter()
        .map(|&f| {
            let p = frame_kinematics_cached(model, &cache, f).position();
            (f, Vector3::new(p.x, p.y, ground_height))
        })
        .collect();
    let base = Isometry3::translation(0.0, 0.0, base_height);
    solve_standing(model, &base, &feet, guess)
}
