use nalgebra::{DMatrix, DVector, Isometry3, Matrix6, Translation3, UnitQuaternion, Vector3};
use thiserror::Error;

use super::spatial::{angular, cross_motion, from_parts, linear, SpatialVec};
use super::state::GeneralizedState;
use crate::model::{FrameKind, JointKind, KinematicTree};

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("unknown frame '{0}'")]
    UnknownFrame(String),
}

/// Per-body world poses, motion subspaces and velocity-product terms for one
/// state. Built once and shared by every Jacobian and dynamics query.
#[derive(Clone, Debug)]
pub struct KinematicsCache {
    pub poses: Vec<Isometry3<f64>>,
    /// World-frame motion subspace of each revolute joint (zero for the root).
    pub subspace: Vec<SpatialVec>,
    /// Base motion subspace mapping `[v_world; ω_body]` to a spatial velocity.
    pub base_subspace: Matrix6<f64>,
    /// `Ṡ_base q̇_base`.
    pub base_bias: SpatialVec,
    pub velocity: Vec<SpatialVec>,
    /// Spatial acceleration with `q̈ = 0` and gravity off.
    pub bias_accel: Vec<SpatialVec>,
}

impl KinematicsCache {
    pub fn new(model: &KinematicTree, state: &GeneralizedState) -> Self {
        let nb = model.bodies.len();
        let mut poses = Vec::with_capacity(nb);
        let mut subspace = vec![SpatialVec::zeros(); nb];
        let mut velocity = vec![SpatialVec::zeros(); nb];
        let mut bias_accel = vec![SpatialVec::zeros(); nb];
        let mut base_subspace = Matrix6::zeros();
        let mut base_bias = SpatialVec::zeros();
        let qd = &state.velocity;

        for (b, body) in model.bodies.iter().enumerate() {
            match body.joint_kind {
                JointKind::Floating => {
                    let pose = Isometry3::from_parts(
                        Translation3::from(state.base_position),
                        state.base_orientation,
                    );
                    let rot = state.base_orientation.to_rotation_matrix();
                    let p = state.base_position;
                    for k in 0..3 {
                        base_subspace[(3 + k, k)] = 1.0;
                        let axis = rot.matrix().column(k).into_owned();
                        let col = from_parts(&axis, &p.cross(&axis));
                        base_subspace.set_column(3 + k, &col);
                    }
                    let qb = qd.fixed_rows::<6>(0).into_owned();
                    let v = base_subspace * qb;
                    let v_lin = state.base_linear_velocity();
                    base_bias = from_parts(&Vector3::zeros(), &v_lin.cross(&angular(&v)));
                    poses.push(pose);
                    velocity[b] = v;
                    bias_accel[b] = base_bias;
                }
                JointKind::Revolute => {
                    let (parent_pose, parent_v, parent_a) = match body.parent {
                        Some(p) => (poses[p], velocity[p], bias_accel[p]),
                        None => (Isometry3::identity(), SpatialVec::zeros(), SpatialVec::zeros()),
                    };
                    let q = state.joint_positions[body.q_index];
                    let joint_frame = parent_pose * body.origin;
                    let axis_world = joint_frame.rotation * body.axis;
                    let origin_world = joint_frame.translation.vector;
                    let s = from_parts(&axis_world, &origin_world.cross(&axis_world));
                    let rot = UnitQuaternion::from_scaled_axis(body.axis * q);
                    let pose = joint_frame * Isometry3::from_parts(Translation3::identity(), rot);
                    let vj = s * qd[body.v_index];
                    let v = parent_v + vj;
                    poses.push(pose);
                    subspace[b] = s;
                    velocity[b] = v;
                    bias_accel[b] = parent_a + cross_motion(&v, &vj);
                }
            }
        }

        Self {
            poses,
            subspace,
            base_subspace,
            base_bias,
            velocity,
            bias_accel,
        }
    }

    /// 6×nv spatial Jacobian (angular; linear, world Plücker) of a body.
    pub fn body_jacobian(&self, model: &KinematicTree, body: usize) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(6, model.nv());
        for b in model.chain(body) {
            let bd = &model.bodies[b];
            match bd.joint_kind {
                JointKind::Floating => j.fixed_view_mut::<6, 6>(0, 0).copy_from(&self.base_subspace),
                JointKind::Revolute => j.set_column(bd.v_index, &self.subspace[b]),
            }
        }
        j
    }
}

/// Pose, Jacobian and drift `J̇q̇` of a named frame.
#[derive(Clone, Debug)]
pub struct FrameKinematics {
    pub pose: Isometry3<f64>,
    /// 3×nv for point frames, 6×nv (linear; angular) for pose frames.
    pub jacobian: DMatrix<f64>,
    pub drift: DVector<f64>,
}

impl FrameKinematics {
    pub fn position(&self) -> Vector3<f64> {
        self.pose.translation.vector
    }

    pub fn velocity(&self, qdot: &DVector<f64>) -> DVector<f64> {
        &self.jacobian * qdot
    }
}

pub fn frame_kinematics_cached(
    model: &KinematicTree,
    cache: &KinematicsCache,
    frame: usize,
) -> FrameKinematics {
    let f = &model.frames[frame];
    let body_pose = cache.poses[f.body];
    let pose = body_pose * Translation3::from(f.offset);
    let p = pose.translation.vector;
    let jb = cache.body_jacobian(model, f.body);
    let nv = model.nv();
    let px = p.cross_matrix();
    let j_ang = jb.rows(0, 3).into_owned();
    let lin = jb.rows(3, 3) - px * &j_ang;
    let j_lin = DMatrix::from_column_slice(3, nv, lin.as_slice());

    let v = cache.velocity[f.body];
    let a = cache.bias_accel[f.body];
    let w = angular(&v);
    let v_point = linear(&v) + w.cross(&p);
    let a_point = linear(&a) + angular(&a).cross(&p) + w.cross(&v_point);

    match f.kind {
        FrameKind::Point => FrameKinematics {
            pose,
            jacobian: j_lin,
            drift: DVector::from_column_slice(a_point.as_slice()),
        },
        FrameKind::Pose => {
            let mut jac = DMatrix::zeros(6, nv);
            jac.rows_mut(0, 3).copy_from(&j_lin);
            jac.rows_mut(3, 3).copy_from(&j_ang);
            let aa = angular(&a);
            FrameKinematics {
                pose,
                jacobian: jac,
                drift: DVector::from_column_slice(&[
                    a_point.x, a_point.y, a_point.z, aa.x, aa.y, aa.z,
                ]),
            }
        }
    }
}

/// Kinematics of the frame called `name` at `state`.
pub fn frame_kinematics(
    model: &KinematicTree,
    state: &GeneralizedState,
    name: &str,
) -> Result<FrameKinematics, KinematicsError> {
    let idx = model
        .frame_index(name)
        .ok_or_else(|| KinematicsError::UnknownFrame(name.to_string()))?;
    let cache = KinematicsCache::new(model, state);
    Ok(frame_kinematics_cached(model, &cache, idx))
}
