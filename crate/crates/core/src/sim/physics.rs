use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::TorqueLimits;
use crate::model::KinematicTree;
use crate::rigidbody::{frame_kinematics_cached, DynamicsTerms, GeneralizedState};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("mass matrix is not positive definite")]
    SingularMass,
    #[error("contact system is singular (eigenvalue ratio {0:.3e})")]
    SingularContact(f64),
    #[error("state diverged")]
    Diverged,
    #[error("invalid simulator configuration: {0}")]
    Config(String),
}

/// Simulator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub timestep_s: f64,
    pub duration_s: f64,
    pub baumgarte_alpha_per_s: f64,
    pub baumgarte_beta_per_s: f64,
    pub ground_height_m: f64,
    /// A contact is released once its normal force drops below the negative
    /// of this magnitude.
    pub release_threshold_n: f64,
    pub seed: u64,
    /// Half-width of a uniform random offset applied to the initial base
    /// position.
    #[serde(default)]
    pub initial_perturbation_m: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            timestep_s: 1e-3,
            duration_s: 30.0,
            baumgarte_alpha_per_s: 20.0,
            baumgarte_beta_per_s: 20.0,
            ground_height_m: 0.0,
            release_threshold_n: 1.0,
            seed: 0,
            initial_perturbation_m: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.timestep_s > 0.0 && self.timestep_s.is_finite()) {
            return bad("timestep_s must be positive");
        }
        if !(self.duration_s >= self.timestep_s && self.duration_s.is_finite()) {
            return bad("duration_s must be at least one timestep");
        }
        if !(self.baumgarte_alpha_per_s >= 0.0 && self.baumgarte_beta_per_s >= 0.0) {
            return bad("Baumgarte gains must be non-negative");
        }
        if !(self.release_threshold_n >= 0.0) {
            return bad("release_threshold_n must be non-negative");
        }
        if !(self.initial_perturbation_m >= 0.0) {
            return bad("initial_perturbation_m must be non-negative");
        }
        Ok(())
    }

    pub fn ticks(&self) -> usize {
        (self.duration_s / self.timestep_s).round() as usize
    }
}

/// Point contacts held at fixed anchors on the ground.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactState {
    pub frames: Vec<usize>,
    pub anchors: Vec<Vector3<f64>>,
    pub active: Vec<bool>,
    pub normal: Vector3<f64>,
}

impl ContactState {
    /// Anchors every frame at its current position.
    pub fn at_state(model: &KinematicTree, state: &GeneralizedState, frames: &[usize]) -> Self {
        let cache = crate::rigidbody::KinematicsCache::new(model, state);
        Self {
            frames: frames.to_vec(),
            anchors: frames
                .iter()
                .map(|&f| frame_kinematics_cached(model, &cache, f).position())
                .collect(),
            active: vec![true; frames.len()],
            normal: Vector3::z(),
        }
    }

    pub fn none() -> Self {
        Self {
            frames: vec![],
            anchors: vec![],
            active: vec![],
            normal: Vector3::z(),
        }
    }
}

/// External wrench `(force; moment)` applied at a frame's origin.
#[derive(Clone, Debug)]
pub struct ExternalWrench {
    pub frame: usize,
    pub wrench: DVector<f64>,
}

/// Accelerations and forces of the constrained dynamics at one instant.
#[derive(Clone, Debug)]
pub struct ContactSolution {
    pub accel: DVector<f64>,
    /// Force on the robot at each contact, `None` when inactive.
    pub forces: Vec<Option<Vector3<f64>>>,
    /// Largest contact-point speed `‖J_c q̇‖∞` over active contacts.
    pub constraint_velocity: f64,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub state: GeneralizedState,
    /// Measured force on the robot at each contact (zero when inactive).
    pub forces: Vec<Vector3<f64>>,
    pub accel: DVector<f64>,
    /// `‖J_c q̇‖∞` at the start of the step.
    pub constraint_velocity: f64,
    pub released: Vec<usize>,
    /// Torque entries changed by clamping.
    pub clamped: usize,
}

/// Contact forces and accelerations from the constrained dynamics
/// `M q̈ + h = B τ + J_cᵀ λ + J_xᵀ F`, `J_c q̈ = −J̇ q̇ − 2α J_c q̇ − β² φ`.
pub fn contact_dynamics(
    model: &KinematicTree,
    state: &GeneralizedState,
    terms: &DynamicsTerms,
    generalized_force: &DVector<f64>,
    contacts: &ContactState,
    config: &SimConfig,
) -> Result<ContactSolution, SimError> {
    let nv = model.nv();
    let idx: Vec<usize> = (0..contacts.frames.len()).filter(|&i| contacts.active[i]).collect();
    let k = idx.len();
    let rhs_dyn = generalized_force - &terms.bias;
    let chol = terms.mass_matrix.clone().cholesky().ok_or(SimError::SingularMass)?;
    let mut forces = vec![None; contacts.frames.len()];
    if k == 0 {
        return Ok(ContactSolution {
            accel: chol.solve(&rhs_dyn),
            forces,
            constraint_velocity: 0.0,
        });
    }
    let mut jc = DMatrix::zeros(3 * k, nv);
    let mut rhs_c = DVector::zeros(3 * k);
    let (a, b) = (config.baumgarte_alpha_per_s, config.baumgarte_beta_per_s);
    let mut constraint_velocity: f64 = 0.0;
    for (r, &i) in idx.iter().enumerate() {
        let fk = frame_kinematics_cached(model, &terms.cache, contacts.frames[i]);
        let phi = fk.position() - contacts.anchors[i];
        let vel = &fk.jacobian * &state.velocity;
        jc.rows_mut(3 * r, 3).copy_from(&fk.jacobian);
        constraint_velocity = constraint_velocity.max(vel.amax());
        for d in 0..3 {
            rhs_c[3 * r + d] = -fk.drift[d] - 2.0 * a * vel[d] - b * b * phi[d];
        }
    }
    // Schur complement on the contact forces.
    let minv_jt = chol.solve(&jc.transpose());
    let minv_f = chol.solve(&rhs_dyn);
    let delassus = &jc * &minv_jt;
    let delassus = (&delassus + delassus.transpose()) * 0.5;
    let lam = match delassus.clone().cholesky() {
        Some(c) => c.solve(&(&rhs_c - &jc * &minv_f)),
        None => {
            let ev = delassus.symmetric_eigenvalues();
            return Err(SimError::SingularContact(ev.min() / ev.max()));
        }
    };
    let qdd = minv_f + minv_jt * &lam;
    for (r, &i) in idx.iter().enumerate() {
        forces[i] = Some(Vector3::new(lam[3 * r], lam[3 * r + 1], lam[3 * r + 2]));
    }
    Ok(ContactSolution {
        accel: qdd,
        forces,
        constraint_velocity,
    })
}

/// Advances one timestep with semi-implicit Euler. Contacts pulling on the
/// ground harder than the release threshold are dropped and the step is
/// re-solved without them.
pub fn sim_step(
    model: &KinematicTree,
    state: &GeneralizedState,
    tau: &DVector<f64>,
    limits: Option<&TorqueLimits>,
    contacts: &mut ContactState,
    external: Option<&ExternalWrench>,
    config: &SimConfig,
) -> Result<StepResult, SimError> {
    let nv = model.nv();
    let off = model.joint_offset();
    let applied = match limits {
        Some(l) => l.clamp(tau),
        None => tau.clone(),
    };
    let clamped = (0..tau.len()).filter(|&i| applied[i] != tau[i]).count();
    let terms = DynamicsTerms::new(model, state);
    let mut gf = DVector::zeros(nv);
    gf.rows_mut(off, model.n_joints()).copy_from(&applied);
    if let Some(ext) = external {
        let fk = frame_kinematics_cached(model, &terms.cache, ext.frame);
        let rows = fk.jacobian.nrows();
        gf += fk.jacobian.transpose() * ext.wrench.rows(0, rows);
    }

    let mut released = Vec::new();
    let solution = loop {
        let solution = contact_dynamics(model, state, &terms, &gf, contacts, config)?;
        let worst = solution
            .forces
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.map(|f| (i, f.dot(&contacts.normal))))
            .filter(|&(_, n)| n < -config.release_threshold_n)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match worst {
            Some((i, _)) => {
                contacts.active[i] = false;
                released.push(i);
            }
            None => break solution,
        }
    };

    let dt = config.timestep_s;
    let velocity = &state.velocity + &solution.accel * dt;
    let mut next = state.integrate_configuration(model, &velocity, dt);
    next.velocity = velocity;
    if next.velocity.iter().any(|x| !x.is_finite()) || next.joint_positions.iter().any(|x| !x.is_finite()) {
        return Err(SimError::Diverged);
    }
    Ok(StepResult {
        state: next,
        forces: solution.forces.iter().map(|f| f.unwrap_or_else(Vector3::zeros)).collect(),
        accel: solution.accel,
        constraint_velocity: solution.constraint_velocity,
        released,
        clamped,
    })
}
