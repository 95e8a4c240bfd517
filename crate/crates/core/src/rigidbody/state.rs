use nalgebra::{DVector, UnitQuaternion, Vector3};

use crate::model::KinematicTree;

/// Configuration and generalized velocity of a floating-base tree.
///
/// Velocity layout: `[v_base (world, 3); ω_base (body, 3); q̇_joints]`.
/// Fixed-base trees (test mode only) ignore the base fields and carry only
/// joint velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedState {
    pub base_position: Vector3<f64>,
    pub base_orientation: UnitQuaternion<f64>,
    pub joint_positions: DVector<f64>,
    pub velocity: DVector<f64>,
}

impl GeneralizedState {
    pub fn zeros(model: &KinematicTree) -> Self {
        Self {
            base_position: Vector3::zeros(),
            base_orientation: UnitQuaternion::identity(),
            joint_positions: DVector::zeros(model.n_joints()),
            velocity: DVector::zeros(model.nv()),
        }
    }

    pub fn check(&self, model: &KinematicTree) -> Result<(), String> {
        if self.joint_positions.len() != model.n_joints() {
            return Err(format!(
                "joint position length {} != {}",
                self.joint_positions.len(),
                model.n_joints()
            ));
        }
        if self.velocity.len() != model.nv() {
            return Err(format!("velocity length {} != {}", self.velocity.len(), model.nv()));
        }
        let qn = self.base_orientation.quaternion().norm();
        if (qn - 1.0).abs() > 1e-9 {
            return Err(format!("base quaternion norm {qn} is not 1"));
        }
        Ok(())
    }

    pub fn base_linear_velocity(&self) -> Vector3<f64> {
        self.velocity.fixed_rows::<3>(0).into_owned()
    }

    /// Body-frame angular velocity of the base.
    pub fn base_angular_velocity(&self) -> Vector3<f64> {
        self.velocity.fixed_rows::<3>(3).into_owned()
    }

    pub fn joint_velocities(&self, model: &KinematicTree) -> DVector<f64> {
        self.velocity.rows(model.joint_offset(), model.n_joints()).into_owned()
    }

    /// Advances the configuration along `qdot` for `dt` seconds; the base
    /// orientation uses the exponential map of the body angular velocity.
    /// Velocity is left untouched.
    pub fn integrate_configuration(&self, model: &KinematicTree, qdot: &DVector<f64>, dt: f64) -> Self {
        let mut next = self.clone();
        let off = model.joint_offset();
        if model.has_floating_base() {
            let v = qdot.fixed_rows::<3>(0).into_owned();
            let w = qdot.fixed_rows::<3>(3).into_owned();
            next.base_position += v * dt;
            next.base_orientation = self.base_orientation * UnitQuaternion::from_scaled_axis(w * dt);
            next.base_orientation.renormalize();
        }
        next.joint_positions += qdot.rows(off, model.n_joints()) * dt;
        next
    }
}
