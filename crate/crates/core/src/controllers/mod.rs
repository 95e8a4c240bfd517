//! Whole-body torque controllers sharing one impedance/force pipeline:
//!
//! * `proposed`: motion-space QP on the motion legs, then constraint-space QP
//!   on the force legs with friction pyramids and torque limits.
//! * `howsm`: the same two QPs with every actuator available to both.
//! * `pidcwcu`: closed-form underactuated contact-wrench law.

mod contacts;
mod hierarchy;

pub use contacts::{
    friction_pyramid_rows, stack_cones, ConePyramid, ConeVariant, Contact, ContactError, ContactRole,
    ContactSet, SelectionMatrices,
};
pub use hierarchy::{
    assemble_qp1, assemble_qp2, contact_force_affine, pidcwcu_torque, AffineForce,
    TorqueLimits,
};

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::KinematicTree;
use crate::projection::{projector_derivative, ProjectionData, ProjectionError};
use crate::qp::{solve, QpProblem, QpSolution, QpStatus};
use crate::rigidbody::{frame_kinematics_cached, DynamicsTerms, GeneralizedState};
use crate::task_control::{
    constraint_torque_desired, external_force_estimate, impedance_terms, implicit_contact_force,
    ImpedanceTask,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Proposed,
    Howsm,
    Pidcwcu,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::Proposed, ControllerKind::Howsm, ControllerKind::Pidcwcu];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Proposed => "proposed",
            ControllerKind::Howsm => "howsm",
            ControllerKind::Pidcwcu => "pidcwcu",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(ControllerKind::Proposed),
            "howsm" => Ok(ControllerKind::Howsm),
            "pidcwcu" => Ok(ControllerKind::Pidcwcu),
            other => Err(format!("unknown controller '{other}' (expected proposed, howsm or pidcwcu)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Contact(#[from] ContactError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error("task frame '{0}' not found")]
    UnknownTaskFrame(String),
    #[error("invalid task: {0}")]
    Task(String),
    #[error("desired force has {got} entries, expected {expected}")]
    ForceDimension { got: usize, expected: usize },
    #[error("contact mask has {got} entries, expected {expected}")]
    MaskDimension { got: usize, expected: usize },
}

#[derive(Clone, Debug)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    pub limits: TorqueLimits,
    pub pinv_tol: f64,
    pub truncation_tol: f64,
    /// Feed the quasi-static external-force estimate into the laws.
    pub estimate_external_force: bool,
    /// Control period used for the projector derivative.
    pub dt: f64,
    pub embedding: ForceEmbedding,
}

/// What the desired-force vector holds at motion contacts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceEmbedding {
    /// Zero desired force.
    Zero,
    /// The contact's implicit force, so the constraint torque only acts
    /// through the force contacts.
    Implicit,
}

impl ControllerConfig {
    pub fn new(kind: ControllerKind, n_joints: usize) -> Self {
        Self {
            kind,
            limits: TorqueLimits::symmetric(n_joints, 80.0),
            pinv_tol: crate::projection::DEFAULT_PINV_TOL,
            truncation_tol: crate::projection::DEFAULT_TRUNCATION_TOL,
            estimate_external_force: false,
            dt: 1e-3,
            embedding: ForceEmbedding::Implicit,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpDiagnostics {
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub active: usize,
}

impl From<&QpSolution> for QpDiagnostics {
    fn from(s: &QpSolution) -> Self {
        Self {
            status: s.status,
            kkt_residual: s.kkt_residual,
            iterations: s.iterations,
            active: s.active.len(),
        }
    }
}

/// Joint torques for one tick and how they were obtained.
#[derive(Clone, Debug)]
pub struct TorqueCommand {
    pub tau: DVector<f64>,
    /// Joint-space share of the motion-space solution.
    pub motion_component: DVector<f64>,
    /// Joint-space share of the constraint-space solution.
    pub force_component: DVector<f64>,
    pub qp1: Option<QpDiagnostics>,
    pub qp2: Option<QpDiagnostics>,
    /// Set when a QP failed and the previous command was reused.
    pub held_previous: bool,
    /// Predicted motion-contact and force-contact forces at the QP optimum.
    pub predicted_motion_force: Option<DVector<f64>>,
    pub predicted_force_force: Option<DVector<f64>>,
    /// Largest pyramid violation of the predicted forces.
    pub predicted_cone_violation: f64,
    /// Contact force needed to hold the constraint with no constraint torque,
    /// over all active contacts.
    pub implicit_force: DVector<f64>,
    /// Desired force of each force contact as applied this tick.
    pub lambda_d: DVector<f64>,
    pub pose_error: DVector<f64>,
}

/// Problems posed on the most recent tick, kept for offline inspection.
#[derive(Clone, Debug, Default)]
pub struct TickProblems {
    pub qp1: Option<QpProblem>,
    pub qp2: Option<QpProblem>,
}

/// One controller instance driving one robot.
#[derive(Clone, Debug)]
pub struct Controller {
    model: KinematicTree,
    config: ControllerConfig,
    contacts: ContactSet,
    contact_frames: Vec<usize>,
    task_frame: usize,
    task: ImpedanceTask,
    selection: SelectionMatrices,
    history: Option<(Vec<bool>, DMatrix<f64>)>,
    previous: DVector<f64>,
    last_problems: TickProblems,
}

impl Controller {
    pub fn new(
        model: &KinematicTree,
        config: ControllerConfig,
        contacts: ContactSet,
        task: ImpedanceTask,
    ) -> Result<Self, ControllerError> {
        contacts.validate_for(model)?;
        task.validate().map_err(ControllerError::Task)?;
        let task_frame = model
            .frame_index(&task.frame)
            .ok_or_else(|| ControllerError::UnknownTaskFrame(task.frame.clone()))?;
        let contact_frames = contacts.frame_indices(model)?;
        let selection = SelectionMatrices::new(model, &contacts)?;
        Ok(Self {
            model: model.clone(),
            previous: DVector::zeros(model.n_joints()),
            config,
            contacts,
            contact_frames,
            task_frame,
            task,
            selection,
            history: None,
            last_problems: TickProblems::default(),
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn contacts(&self) -> &ContactSet {
        &self.contacts
    }

    pub fn selection(&self) -> &SelectionMatrices {
        &self.selection
    }

    pub fn last_problems(&self) -> &TickProblems {
        &self.last_problems
    }

    /// Computes joint torques at `state`. `active` flags which contacts of
    /// the set currently touch the ground; `lambda_d` stacks the desired
    /// force of each force contact in set order. Without `lambda_d` the force
    /// contacts track their implicit force.
    pub fn tick(
        &mut self,
        state: &GeneralizedState,
        active: &[bool],
        lambda_d: Option<&DVector<f64>>,
    ) -> Result<TorqueCommand, ControllerError> {
        let n_force = self.contacts.n_force();
        if let Some(l) = lambda_d {
            if l.len() != 3 * n_force {
                return Err(ControllerError::ForceDimension {
                    got: l.len(),
                    expected: 3 * n_force,
                });
            }
        }
        if active.len() != self.contacts.len() {
            return Err(ControllerError::MaskDimension {
                got: active.len(),
                expected: self.contacts.len(),
            });
        }
        let model = &self.model;
        let nv = model.nv();
        let nj = model.n_joints();
        let terms = DynamicsTerms::new(model, state);
        let h = &terms.bias;
        let qdot = &state.velocity;

        // Active contacts in set order, with their position among the force
        // contacts where relevant.
        let mut rows: Vec<(usize, ContactRole, Option<usize>)> = Vec::new();
        let mut force_slot = 0;
        for (i, c) in self.contacts.contacts.iter().enumerate() {
            let slot = if c.role == ContactRole::Force {
                force_slot += 1;
                Some(force_slot - 1)
            } else {
                None
            };
            if active[i] {
                rows.push((i, c.role, slot));
            }
        }
        let nc = rows.len();
        let mut jc = DMatrix::zeros(3 * nc, nv);
        for (k, &(i, _, _)) in rows.iter().enumerate() {
            let fk = frame_kinematics_cached(model, &terms.cache, self.contact_frames[i]);
            jc.rows_mut(3 * k, 3).copy_from(&fk.jacobian);
        }

        let pdot = match &self.history {
            Some((mask, prev)) if mask.as_slice() == active => {
                Some(projector_derivative(&jc, prev, self.config.dt, self.config.pinv_tol)?)
            }
            _ => None,
        };
        self.history = Some((active.to_vec(), jc.clone()));
        let proj = ProjectionData::new(&terms.mass_matrix, &jc, pdot, self.config.pinv_tol)?;

        let fk = frame_kinematics_cached(model, &terms.cache, self.task_frame);
        let imp = impedance_terms(
            &self.task,
            &proj,
            h,
            qdot,
            &fk.pose,
            &fk.jacobian,
            &fk.drift,
            self.config.truncation_tol,
        );
        let fx = external_force_estimate(
            &imp.error,
            &imp.error_rate,
            &self.task.kp,
            &self.task.kd,
            self.config.estimate_external_force,
        );
        let jx = &fk.jacobian;
        let tau_md = imp.motion_torque.clone();

        let implicit = implicit_contact_force(&proj, h, qdot, &tau_md, jx, &fx);
        let mut lambda_full = DVector::zeros(3 * nc);
        let mut lambda_used = DVector::zeros(3 * n_force);
        for (k, &(_, _, slot)) in rows.iter().enumerate() {
            if slot.is_none() && self.config.embedding == ForceEmbedding::Implicit {
                lambda_full.rows_mut(3 * k, 3).copy_from(&implicit.rows(3 * k, 3));
            }
            if let Some(s) = slot {
                let target = match lambda_d {
                    Some(l) => l.rows(3 * s, 3).into_owned(),
                    None => implicit.rows(3 * k, 3).into_owned(),
                };
                lambda_full.rows_mut(3 * k, 3).copy_from(&target);
                lambda_used.rows_mut(3 * s, 3).copy_from(&target);
            }
        }
        let tau_cd = constraint_torque_desired(&proj, h, qdot, &tau_md, jx, &fx, &lambda_full);
        let tau_d = &tau_md + &tau_cd;

        let mut cmd = TorqueCommand {
            tau: DVector::zeros(nj),
            motion_component: DVector::zeros(nj),
            force_component: DVector::zeros(nj),
            qp1: None,
            qp2: None,
            held_previous: false,
            predicted_motion_force: None,
            predicted_force_force: None,
            predicted_cone_violation: 0.0,
            implicit_force: implicit,
            lambda_d: lambda_used,
            pose_error: imp.error.clone(),
        };

        if self.config.kind == ControllerKind::Pidcwcu {
            let full = pidcwcu_torque(&proj.p, &self.selection.b, &tau_md, &tau_cd, self.config.pinv_tol);
            let tau = self.config.limits.clamp(&(self.selection.b.transpose() * full));
            cmd.motion_component = self.selection.b.transpose()
                * hierarchy::pidcwcu_torque(&proj.p, &self.selection.b, &tau_md, &DVector::zeros(nv), self.config.pinv_tol);
            cmd.force_component = &tau - &cmd.motion_component;
            cmd.tau = tau;
            self.last_problems = TickProblems::default();
            self.previous = cmd.tau.clone();
            return Ok(cmd);
        }

        let sel = if self.config.kind == ControllerKind::Howsm {
            self.selection.undivided()
        } else {
            self.selection.clone()
        };
        let limits = &self.config.limits;

        let qp1 = assemble_qp1(&tau_d, &proj.p, &sel.b, &sel.b_m, limits);
        let s1 = solve(&qp1);
        cmd.qp1 = Some(QpDiagnostics::from(&s1));
        self.last_problems = TickProblems {
            qp1: Some(qp1),
            qp2: None,
        };
        if s1.status == QpStatus::Infeasible {
            return Ok(self.hold(cmd));
        }
        let tau_1 = s1.tau;

        // Contact forces as an affine function of the constraint-space
        // decision, through the composed command.
        let bbt = &sel.b * sel.b.transpose();
        let ip = proj.complement();
        let g0 = &bbt * (&proj.p * (&sel.b_m * &tau_1));
        let g_map = &bbt * &ip * &sel.b_f;
        let all_forces = contact_force_affine(&proj, h, qdot, jx, &fx, &g0, &g_map);
        let group = |role: ContactRole| -> (Vec<&Contact>, Vec<usize>) {
            let idx: Vec<usize> = (0..nc).filter(|&k| rows[k].1 == role).collect();
            (idx.iter().map(|&k| &self.contacts.contacts[rows[k].0]).collect(), idx)
        };
        let (motion_contacts, motion_idx) = group(ContactRole::Motion);
        let (force_contacts, force_idx) = group(ContactRole::Force);

        let motion_cone = if motion_contacts.is_empty() {
            None
        } else {
            let cone = contacts::stack_selected(&motion_contacts, ConeVariant::Motion)?;
            Some((cone, all_forces.contact_rows(&motion_idx)))
        };
        let force_cone = if force_contacts.is_empty() {
            None
        } else {
            let cone = contacts::stack_selected(&force_contacts, ConeVariant::Force)?;
            Some((cone, all_forces.contact_rows(&force_idx)))
        };

        let qp2 = assemble_qp2(
            &tau_d,
            &tau_1,
            &proj.p,
            &sel.b,
            &sel.b_m,
            &sel.b_f,
            motion_cone.as_ref().map(|(c, m)| (c, m)),
            force_cone.as_ref().map(|(c, m)| (c, m)),
            limits,
        );
        let s2 = solve(&qp2);
        cmd.qp2 = Some(QpDiagnostics::from(&s2));
        self.last_problems.qp2 = Some(qp2);
        if s2.status == QpStatus::Infeasible {
            return Ok(self.hold(cmd));
        }
        let tau_2 = s2.tau;

        let mut violation: f64 = 0.0;
        if let Some((cone, map)) = &motion_cone {
            let lam = map.eval(&tau_2);
            violation = violation.max(cone.violation(&lam));
            cmd.predicted_motion_force = Some(lam);
        }
        if let Some((cone, map)) = &force_cone {
            let lam = map.eval(&tau_2);
            violation = violation.max(cone.violation(&lam));
            cmd.predicted_force_force = Some(lam);
        }
        cmd.predicted_cone_violation = violation;

        cmd.motion_component = sel.b.transpose() * (&proj.p * (&sel.b_m * &tau_1));
        cmd.force_component = sel.b.transpose() * (ip * (&sel.b_f * &tau_2));
        cmd.tau = limits.clamp(&(&cmd.motion_component + &cmd.force_component));
        self.previous = cmd.tau.clone();
        Ok(cmd)
    }

    fn hold(&self, mut cmd: TorqueCommand) -> TorqueCommand {
        cmd.tau = self.previous.clone();
        cmd.held_previous = true;
        cmd
    }
}
