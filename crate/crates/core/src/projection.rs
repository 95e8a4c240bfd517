//! Orthogonal decomposition of the constrained dynamics into motion space
//! `N(J_c)` and constraint space `N(J_c)^⊥`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub const DEFAULT_PINV_TOL: f64 = 1e-8;
pub const DEFAULT_TRUNCATION_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ProjectionError {
    #[error("constraint Jacobian shape changed: {now:?} vs {prev:?}")]
    ShapeMismatch {
        now: (usize, usize),
        prev: (usize, usize),
    },
    #[error("time step must be positive, got {0}")]
    BadTimestep(f64),
    #[error("constraint inertia is singular (condition number {0:e})")]
    SingularConstraintInertia(f64),
}

/// Moore–Penrose pseudoinverse; singular values below `rel_tol · σ_max` are
/// treated as zero.
pub fn pinv(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return DMatrix::zeros(n, m);
    }
    let svd = a.clone().svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let smax = svd.singular_values.max();
    let mut out = DMatrix::zeros(n, m);
    if smax <= 0.0 {
        return out;
    }
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_tol * smax {
            out += (vt.row(k).transpose() / s) * u.column(k).transpose();
        }
    }
    out
}

/// Orthonormal basis of the row space of `a` (columns), via SVD.
fn row_space_basis(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.unwrap();
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| smax > 0.0 && svd.singular_values[k] > rel_tol * smax)
        .collect();
    let mut basis = DMatrix::zeros(n, keep.len());
    for (c, &k) in keep.iter().enumerate() {
        basis.set_column(c, &vt.row(k).transpose());
    }
    basis
}

/// `P = I − J_c⁺ J_c`, formed as `I − V_r V_rᵀ` from the row-space basis so
/// that it is symmetric to the last bit.
pub fn constraint_projector(jc: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = jc.ncols();
    let v = row_space_basis(jc, rel_tol);
    DMatrix::identity(n, n) - &v * v.transpose()
}

/// Backward difference of the projector between two control ticks.
pub fn projector_derivative(
    jc_now: &DMatrix<f64>,
    jc_prev: &DMatrix<f64>,
    dt: f64,
    rel_tol: f64,
) -> Result<DMatrix<f64>, ProjectionError> {
    if jc_now.shape() != jc_prev.shape() {
        return Err(ProjectionError::ShapeMismatch {
            now: jc_now.shape(),
            prev: jc_prev.shape(),
        });
    }
    if !(dt > 0.0) {
        return Err(ProjectionError::BadTimestep(dt));
    }
    Ok((constraint_projector(jc_now, rel_tol) - constraint_projector(jc_prev, rel_tol)) / dt)
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Constraint inertia `M_c = P M + I − P`, its inverse and `M̄ = M M_c⁻¹`.
pub fn constraint_inertia(
    m: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, f64), ProjectionError> {
    let n = m.nrows();
    let mc = p * m + DMatrix::identity(n, n) - p;
    let inv = mc
        .clone()
        .lu()
        .try_inverse()
        .ok_or(ProjectionError::SingularConstraintInertia(f64::INFINITY))?;
    let cond = norm1(&mc) * norm1(&inv);
    if !cond.is_finite() || cond > 1e14 {
        return Err(ProjectionError::SingularConstraintInertia(cond));
    }
    let mbar = m * &inv;
    Ok((mc, inv, mbar, cond))
}

/// Projection quantities for the active contact set at one control tick.
#[derive(Clone, Debug)]
pub struct ProjectionData {
    pub p: DMatrix<f64>,
    pub pdot: DMatrix<f64>,
    pub mc: DMatrix<f64>,
    pub mc_inv: DMatrix<f64>,
    pub mbar: DMatrix<f64>,
    pub jc: DMatrix<f64>,
    pub rel_tol: f64,
    pub mc_condition: f64,
}

impl ProjectionData {
    pub fn new(
        m: &DMatrix<f64>,
        jc: &DMatrix<f64>,
        pdot: Option<DMatrix<f64>>,
        rel_tol: f64,
    ) -> Result<Self, ProjectionError> {
        let n = m.nrows();
        let p = constraint_projector(jc, rel_tol);
        let (mc, mc_inv, mbar, mc_condition) = constraint_inertia(m, &p)?;
        Ok(Self {
            p,
            pdot: pdot.unwrap_or_else(|| DMatrix::zeros(n, n)),
            mc,
            mc_inv,
            mbar,
            jc: jc.clone(),
            rel_tol,
            mc_condition,
        })
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    /// `I − P`.
    pub fn complement(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) - &self.p
    }

    /// `(J_cᵀ)⁺` for a subset of constraint rows (or all of them).
    pub fn jc_transpose_pinv(&self, jc_rows: &DMatrix<f64>) -> DMatrix<f64> {
        pinv(&jc_rows.transpose(), self.rel_tol)
    }
}

/// Task-space inertia with singular-value truncation.
#[derive(Clone, Debug)]
pub struct OperationalInertia {
    pub lambda: DMatrix<f64>,
    pub truncated: usize,
    pub threshold: f64,
}

/// `Λ_c = (J_x M_c⁻¹ P J_xᵀ)⁻¹`, inverting only the retained spectrum.
pub fn operational_inertia(
    jx: &DMatrix<f64>,
    mc_inv: &DMatrix<f64>,
    p: &DMatrix<f64>,
    trunc_tol: f64,
) -> OperationalInertia {
    let a = jx * mc_inv * p * jx.transpose();
    let sym = (&a + a.transpose()) * 0.5;
    let k = sym.nrows();
    // Scale reference: the same product without the projector, so a task
    // lying wholly in the constraint space truncates to zero.
    let free = jx * mc_inv * jx.transpose();
    let reference = ((&free + free.transpose()) * 0.5).singular_values().max();
    let svd = sym.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let smax = svd.singular_values.max();
    let threshold = trunc_tol * smax.max(reference);
    let mut lambda = DMatrix::zeros(k, k);
    let mut truncated = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if smax > 0.0 && s > threshold {
            lambda += (vt.row(i).transpose() / s) * u.column(i).transpose();
        } else {
            truncated += 1;
        }
    }
    let lambda = (&lambda + lambda.transpose()) * 0.5;
    OperationalInertia {
        lambda,
        truncated,
        threshold,
    }
}

/// Constrained forward dynamics `q̈ = M_c⁻¹(τ_m − P h + Ṗ q̇ + P J_xᵀ F_x)`.
#[allow(clippy::too_many_arguments)]
pub fn constrained_accel(
    mc_inv: &DMatrix<f64>,
    tau_m: &DVector<f64>,
    p: &DMatrix<f64>,
    h: &DVector<f64>,
    pdot: &DMatrix<f64>,
    qdot: &DVector<f64>,
    jx: &DMatrix<f64>,
    fx: &DVector<f64>,
) -> DVector<f64> {
    mc_inv * (tau_m - p * h + pdot * qdot + p * (jx.transpose() * fx))
}

/// Constraint forces produced by the motion torque `τ_m` and constraint
/// torque `τ_c`:
///
/// `λ = (J_cᵀ)⁺[(I−P)[M̄(τ_m − P h + Ṗ q̇) + h] − τ_c + (I−P)(M̄ P − I) J_xᵀ F_x]`
#[allow(clippy::too_many_arguments)]
pub fn constraint_force_map(
    proj: &ProjectionData,
    h: &DVector<f64>,
    qdot: &DVector<f64>,
    tau_m: &DVector<f64>,
    tau_c: &DVector<f64>,
    jx: &DMatrix<f64>,
    fx: &DVector<f64>,
) -> DVector<f64> {
    let n = proj.dim();
    let ip = proj.complement();
    let jxt_f = jx.transpose() * fx;
    let inner = &proj.mbar * (tau_m - &proj.p * h + &proj.pdot * qdot) + h;
    let rhs = &ip * inner - tau_c
        + &ip * ((&proj.mbar * &proj.p - DMatrix::identity(n, n)) * jxt_f);
    proj.jc_transpose_pinv(&proj.jc) * rhs
}

/// Splits `‖x‖²` into its motion-space and constraint-space parts.
pub fn seminorm_split(x: &DVector<f64>, p: &DMatrix<f64>) -> (f64, f64) {
    let px = p * x;
    let cx = x - &px;
    (px.norm_squared(), cx.norm_squared())
}
