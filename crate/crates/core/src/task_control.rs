//! Task-space control laws: Cartesian impedance in the motion space, the
//! desired constraint torque for contact-force regulation, and the
//! sensorless external-force estimate.

use nalgebra::{DMatrix, DVector, Isometry3, Vector3};

use crate::projection::{OperationalInertia, ProjectionData};

/// Impedance target for one frame.
#[derive(Clone, Debug)]
pub struct ImpedanceTask {
    pub frame: String,
    pub desired_pose: Isometry3<f64>,
    pub desired_velocity: DVector<f64>,
    pub desired_accel: DVector<f64>,
    pub kp: DMatrix<f64>,
    pub kd: DMatrix<f64>,
}

fn is_spd(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax())
        && m.clone().cholesky().is_some()
}

impl ImpedanceTask {
    /// Pose task with diagonal gains (translation then rotation) and zero
    /// feed-forward velocity and acceleration.
    pub fn pose(frame: &str, desired_pose: Isometry3<f64>, kp: [f64; 6], kd: [f64; 6]) -> Self {
        Self {
            frame: frame.to_string(),
            desired_pose,
            desired_velocity: DVector::zeros(6),
            desired_accel: DVector::zeros(6),
            kp: DMatrix::from_diagonal(&DVector::from_row_slice(&kp)),
            kd: DMatrix::from_diagonal(&DVector::from_row_slice(&kd)),
        }
    }

    pub fn dim(&self) -> usize {
        self.kp.nrows()
    }

    pub fn validate(&self) -> Result<(), String> {
        let d = self.dim();
        if self.kd.shape() != (d, d)
            || self.desired_velocity.len() != d
            || self.desired_accel.len() != d
        {
            return Err(format!("task '{}': inconsistent dimensions", self.frame));
        }
        if !is_spd(&self.kp) {
            return Err(format!("task '{}': stiffness is not symmetric positive definite", self.frame));
        }
        if !is_spd(&self.kd) {
            return Err(format!("task '{}': damping is not symmetric positive definite", self.frame));
        }
        Ok(())
    }
}

/// Desired contact forces at the force-controlled feet, world frame.
#[derive(Clone, Debug, PartialEq)]
pub struct DesiredForce {
    pub lambda: DVector<f64>,
}

impl DesiredForce {
    /// `lambda` stacks one 3-vector per force contact; `normals` gives each
    /// contact's surface normal.
    pub fn new(lambda: DVector<f64>, normals: &[Vector3<f64>]) -> Result<Self, String> {
        if lambda.len() != 3 * normals.len() {
            return Err(format!(
                "desired force has {} entries for {} contacts",
                lambda.len(),
                normals.len()
            ));
        }
        if lambda.iter().any(|x| !x.is_finite()) {
            return Err("desired force is not finite".into());
        }
        for (i, n) in normals.iter().enumerate() {
            let fi = lambda.fixed_rows::<3>(3 * i);
            if n.dot(&fi) < 0.0 {
                return Err(format!("desired force at contact {i} pulls on the surface"));
            }
        }
        Ok(Self { lambda })
    }
}

/// Translation error stacked over the world-aligned rotation vector of
/// `R_dᵀ R`.
pub fn pose_error(current: &Isometry3<f64>, desired: &Isometry3<f64>) -> DVector<f64> {
    let dp = current.translation.vector - desired.translation.vector;
    let rel = desired.rotation.inverse() * current.rotation;
    let dr = desired.rotation * rel.scaled_axis();
    DVector::from_column_slice(&[dp.x, dp.y, dp.z, dr.x, dr.y, dr.z])
}

/// `h_c = Λ_c J_x M_c⁻¹ (P h − Ṗ q̇) − Λ_c J̇_x q̇`.
#[allow(clippy::too_many_arguments)]
pub fn operational_bias(
    lambda: &DMatrix<f64>,
    jx: &DMatrix<f64>,
    mc_inv: &DMatrix<f64>,
    p: &DMatrix<f64>,
    h: &DVector<f64>,
    pdot: &DMatrix<f64>,
    qdot: &DVector<f64>,
    jdot_qdot: &DVector<f64>,
) -> DVector<f64> {
    lambda * (jx * (mc_inv * (p * h - pdot * qdot)) - jdot_qdot)
}

/// `F_d = h_c + Λ_c ẍ_d − K_d ė − K_p e`.
pub fn impedance_wrench(
    task: &ImpedanceTask,
    lambda: &DMatrix<f64>,
    hc: &DVector<f64>,
    e: &DVector<f64>,
    edot: &DVector<f64>,
) -> DVector<f64> {
    hc + lambda * &task.desired_accel - &task.kd * edot - &task.kp * e
}

/// `τ_m,d = P J_xᵀ F_d`.
pub fn motion_torque_desired(p: &DMatrix<f64>, jx: &DMatrix<f64>, fdx: &DVector<f64>) -> DVector<f64> {
    p * (jx.transpose() * fdx)
}

/// `(I−P)[M̄(τ_m,d − P h + Ṗ q̇ + P J_xᵀ F_x) + h] − (I−P) J_xᵀ F_x`, the part
/// shared by the constraint-torque law and the implicit contact force.
fn constraint_space_load(
    proj: &ProjectionData,
    h: &DVector<f64>,
    qdot: &DVector<f64>,
    tau_md: &DVector<f64>,
    jx: &DMatrix<f64>,
    fx: &DVector<f64>,
) -> DVector<f64> {
    let ip = proj.complement();
    let jxt_f = jx.transpose() * fx;
    let inner = &proj.mbar * (tau_md - &proj.p * h + &proj.pdot * qdot + &proj.p * &jxt_f) + h;
    &ip * (inner - jxt_f)
}

/// Desired constraint torque realizing contact force `λ_d`, given over all
/// rows of `J_c` (zeros at contacts that are not force controlled).
pub fn constraint_torque_desired(
    proj: &ProjectionData,
    h: &DVector<f64>,
    qdot: &DVector<f64>,
    tau_md: &DVector<f64>,
    jx: &DMatrix<f64>,
    fx: &DVector<f64>,
    lambda_d: &DVector<f64>,
) -> DVector<f64> {
    constraint_space_load(proj, h, qdot, tau_md, jx, fx) - proj.jc.transpose() * lambda_d
}

/// Contact force that keeps the constraint when no constraint torque is
/// applied.
pub fn implicit_contact_force(
    proj: &ProjectionData,
    h: &DVector<f64>,
    qdot: &DVector<f64>,
    tau_md: &DVector<f64>,
    jx: &DMatrix<f64>,
    fx: &DVector<f64>,
) -> DVector<f64> {
    proj.jc_transpose_pinv(&proj.jc) * constraint_space_load(proj, h, qdot, tau_md, jx, fx)
}

/// Quasi-static estimate `F̂_x = K_d ė + K_p e`; zero when disabled.
pub fn external_force_estimate(
    e: &DVector<f64>,
    edot: &DVector<f64>,
    kp: &DMatrix<f64>,
    kd: &DMatrix<f64>,
    enabled: bool,
) -> DVector<f64> {
    if enabled {
        kd * edot + kp * e
    } else {
        DVector::zeros(e.len())
    }
}

/// Everything the impedance law produces for one task at one tick.
#[derive(Clone, Debug)]
pub struct ImpedanceOutput {
    pub error: DVector<f64>,
    pub error_rate: DVector<f64>,
    pub inertia: OperationalInertia,
    pub bias: DVector<f64>,
    pub wrench: DVector<f64>,
    pub motion_torque: DVector<f64>,
}

/// Runs the impedance law for `task` given the frame's pose, Jacobian and
/// drift at the current state.
pub fn impedance_terms(
    task: &ImpedanceTask,
    proj: &ProjectionData,
    h: &DVector<f64>,
    qdot: &DVector<f64>,
    pose: &Isometry3<f64>,
    jx: &DMatrix<f64>,
    jdot_qdot: &DVector<f64>,
    trunc_tol: f64,
) -> ImpedanceOutput {
    let error = pose_error(pose, &task.desired_pose);
    let error_rate = jx * qdot - &task.desired_velocity;
    let inertia = crate::projection::operational_inertia(jx, &proj.mc_inv, &proj.p, trunc_tol);
    let bias = operational_bias(
        &inertia.lambda,
        jx,
        &proj.mc_inv,
        &proj.p,
        h,
        &proj.pdot,
        qdot,
        jdot_qdot,
    );
    let wrench = impedance_wrench(task, &inertia.lambda, &bias, &error, &error_rate);
    let motion_torque = motion_torque_desired(&proj.p, jx, &wrench);
    ImpedanceOutput {
        error,
        error_rate,
        inertia,
        bias,
        wrench,
        motion_torque,
    }
}
