//! Floating-base rigid-body kinematics and dynamics.
//!
//! All spatial quantities are expressed in world coordinates, which keeps the
//! recursions free of per-link coordinate transforms. The generalized velocity
//! is `[v_base (world); ω_base (body); q̇_joints]`.

mod dynamics;
mod kinematics;
pub mod spatial;
mod state;

pub use dynamics::{
    bias_forces, gravity_forces, inverse_dynamics, kinetic_energy, mass_matrix, DynamicsTerms,
};
pub use kinematics::{
    frame_kinematics, frame_kinematics_cached, FrameKinematics, KinematicsCache, KinematicsError,
};
pub use state::GeneralizedState;

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};
use rand::Rng;

use crate::model::KinematicTree;

/// Draws a state with joint angles within `±joint_range` of `nominal` and
/// velocities uniformly in `±vel_scale`.
pub fn random_state<R: Rng>(
    model: &KinematicTree,
    nominal: &GeneralizedState,
    joint_range: f64,
    vel_scale: f64,
    rng: &mut R,
) -> GeneralizedState {
    let mut s = nominal.clone();
    if model.has_floating_base() {
        s.base_position += Vector3::from_fn(|_, _| rng.gen_range(-0.2..0.2));
        let axis = Vector3::from_fn(|_, _| rng.gen_range(-0.3..0.3));
        s.base_orientation = nominal.base_orientation * UnitQuaternion::from_scaled_axis(axis);
    }
    for q in s.joint_positions.iter_mut() {
        *q += rng.gen_range(-joint_range..=joint_range);
    }
    s.velocity = DVector::from_fn(model.nv(), |_, _| rng.gen_range(-vel_scale..=vel_scale));
    s
}

/// Stacked 3-row Jacobians of the given point frames.
pub fn stacked_point_jacobian(
    model: &KinematicTree,
    cache: &KinematicsCache,
    frames: &[usize],
) -> (DMatrix<f64>, DVector<f64>) {
    let nv = model.nv();
    let mut j = DMatrix::zeros(3 * frames.len(), nv);
    let mut drift = DVector::zeros(3 * frames.len());
    for (k, &f) in frames.iter().enumerate() {
        let fk = frame_kinematics_cached(model, cache, f);
        j.rows_mut(3 * k, 3).copy_from(&fk.jacobian.rows(0, 3));
        drift.rows_mut(3 * k, 3).copy_from(&fk.drift.rows(0, 3));
    }
    (j, drift)
}
