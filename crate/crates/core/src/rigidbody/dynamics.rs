use nalgebra::{DMatrix, DVector, Matrix6};

use super::kinematics::KinematicsCache;
use super::spatial::{cross_force, cross_motion, from_parts, spatial_inertia, SpatialVec};
use super::state::GeneralizedState;
use crate::model::{JointKind, KinematicTree};

fn world_inertias(model: &KinematicTree, cache: &KinematicsCache) -> Vec<Matrix6<f64>> {
    model
        .bodies
        .iter()
        .zip(&cache.poses)
        .map(|(b, pose)| {
            let r = pose.rotation.to_rotation_matrix();
            let c = pose * nalgebra::Point3::from(b.link.com);
            let ic = r.matrix() * b.link.inertia * r.matrix().transpose();
            spatial_inertia(b.link.mass, &c.coords, &ic)
        })
        .collect()
}

fn gravity_accel(model: &KinematicTree) -> SpatialVec {
    from_parts(&nalgebra::Vector3::zeros(), &(-model.gravity))
}

/// Recursive Newton–Euler inverse dynamics: generalized forces that produce
/// `qdd` at `state`, optionally including gravity.
pub fn inverse_dynamics(
    model: &KinematicTree,
    state: &GeneralizedState,
    qdd: &DVector<f64>,
    with_gravity: bool,
) -> DVector<f64> {
    let cache = KinematicsCache::new(model, state);
    rnea_cached(model, &cache, &world_inertias(model, &cache), state, qdd, with_gravity)
}

fn rnea_cached(
    model: &KinematicTree,
    cache: &KinematicsCache,
    inertias: &[Matrix6<f64>],
    state: &GeneralizedState,
    qdd: &DVector<f64>,
    with_gravity: bool,
) -> DVector<f64> {
    let nb = model.bodies.len();
    let a0 = if with_gravity {
        gravity_accel(model)
    } else {
        SpatialVec::zeros()
    };
    let mut accel = vec![SpatialVec::zeros(); nb];
    let mut force = vec![SpatialVec::zeros(); nb];
    for (b, body) in model.bodies.iter().enumerate() {
        let v = cache.velocity[b];
        accel[b] = match body.joint_kind {
            JointKind::Floating => {
                let qdd_b = qdd.fixed_rows::<6>(0).into_owned();
                a0 + cache.base_subspace * qdd_b + cache.base_bias
            }
            JointKind::Revolute => {
                let parent = body.parent.map_or(a0, |p| accel[p]);
                let s = cache.subspace[b];
                parent
                    + s * qdd[body.v_index]
                    + cross_motion(&v, &(s * state.velocity[body.v_index]))
            }
        };
        let iv = inertias[b] * v;
        force[b] = inertias[b] * accel[b] + cross_force(&v, &iv);
    }

    let mut tau = DVector::zeros(model.nv());
    for b in (0..nb).rev() {
        let body = &model.bodies[b];
        match body.joint_kind {
            JointKind::Floating => {
                tau.fixed_rows_mut::<6>(0)
                    .copy_from(&(cache.base_subspace.transpose() * force[b]));
            }
            JointKind::Revolute => tau[body.v_index] = cache.subspace[b].dot(&force[b]),
        }
        if let Some(p) = body.parent {
            let f = force[b];
            force[p] += f;
        }
    }
    tau
}

/// Composite-rigid-body assembly of the joint-space inertia matrix.
pub fn mass_matrix(model: &KinematicTree, state: &GeneralizedState) -> DMatrix<f64> {
    let cache = KinematicsCache::new(model, state);
    crba_cached(model, &cache, &world_inertias(model, &cache))
}

fn crba_cached(
    model: &KinematicTree,
    cache: &KinematicsCache,
    inertias: &[Matrix6<f64>],
) -> DMatrix<f64> {
    let nb = model.bodies.len();
    let mut composite = inertias.to_vec();
    for b in (0..nb).rev() {
        if let Some(p) = model.bodies[b].parent {
            let ic = composite[b];
            composite[p] += ic;
        }
    }

    let nv = model.nv();
    let mut m = DMatrix::zeros(nv, nv);
    for (b, body) in model.bodies.iter().enumerate() {
        match body.joint_kind {
            JointKind::Floating => {
                let blk = cache.base_subspace.transpose() * composite[b] * cache.base_subspace;
                m.fixed_view_mut::<6, 6>(0, 0).copy_from(&blk);
            }
            JointKind::Revolute => {
                let f = composite[b] * cache.subspace[b];
                let i = body.v_index;
                m[(i, i)] = cache.subspace[b].dot(&f);
                let mut anc = body.parent;
                while let Some(a) = anc {
                    let ab = &model.bodies[a];
                    match ab.joint_kind {
                        JointKind::Floating => {
                            let col = cache.base_subspace.transpose() * f;
                            for k in 0..6 {
                                m[(k, i)] = col[k];
                                m[(i, k)] = col[k];
                            }
                        }
                        JointKind::Revolute => {
                            let val = cache.subspace[a].dot(&f);
                            m[(ab.v_index, i)] = val;
                            m[(i, ab.v_index)] = val;
                        }
                    }
                    anc = ab.parent;
                }
            }
        }
    }
    m
}

/// Coriolis, centrifugal and gravity forces `h(q, q̇)`.
pub fn bias_forces(model: &KinematicTree, state: &GeneralizedState) -> DVector<f64> {
    inverse_dynamics(model, state, &DVector::zeros(model.nv()), true)
}

/// Gravity generalized force alone (`h` at zero velocity).
pub fn gravity_forces(model: &KinematicTree, state: &GeneralizedState) -> DVector<f64> {
    let mut still = state.clone();
    still.velocity.fill(0.0);
    bias_forces(model, &still)
}

/// `M`, `h` and the kinematics cache for one state, sharing a single
/// forward pass.
#[derive(Clone, Debug)]
pub struct DynamicsTerms {
    pub mass_matrix: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub cache: KinematicsCache,
}

impl DynamicsTerms {
    pub fn new(model: &KinematicTree, state: &GeneralizedState) -> Self {
        let cache = KinematicsCache::new(model, state);
        let inertias = world_inertias(model, &cache);
        let mass_matrix = crba_cached(model, &cache, &inertias);
        let bias = rnea_cached(
            model,
            &cache,
            &inertias,
            state,
            &DVector::zeros(model.nv()),
            true,
        );
        Self {
            mass_matrix,
            bias,
            cache,
        }
    }
}

/// Total kinetic energy `½ q̇ᵀ M q̇`.
pub fn kinetic_energy(model: &KinematicTree, state: &GeneralizedState) -> f64 {
    let m = mass_matrix(model, state);
    0.5 * state.velocity.dot(&(&m * &state.velocity))
}
