use nalgebra::{DMatrix, DVector};

use super::contacts::ConePyramid;
use crate::projection::{constraint_force_map, pinv, ProjectionData};
use crate::qp::{is_infinite_bound, QpProblem, DEFAULT_REGULARIZATION, INFINITE_BOUND};

/// Joint torque bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct TorqueLimits {
    pub min: DVector<f64>,
    pub max: DVector<f64>,
}

impl TorqueLimits {
    pub fn symmetric(n: usize, limit: f64) -> Self {
        Self {
            min: DVector::from_element(n, -limit),
            max: DVector::from_element(n, limit),
        }
    }

    pub fn clamp(&self, tau: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(tau.len(), |i, _| tau[i].clamp(self.min[i], self.max[i]))
    }

    pub fn violation(&self, tau: &DVector<f64>) -> f64 {
        (0..tau.len())
            .map(|i| (self.min[i] - tau[i]).max(tau[i] - self.max[i]).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Affine prediction `λ = S τ + c` of a group of contact forces.
#[derive(Clone, Debug)]
pub struct AffineForce {
    pub s: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl AffineForce {
    pub fn eval(&self, tau: &DVector<f64>) -> DVector<f64> {
        &self.s * tau + &self.c
    }
}

/// Splits `lo ≤ G τ ≤ hi` into one-sided rows: all upper rows, then all
/// lower rows.
fn push_one_sided(qp: &mut QpProblem, g: &DMatrix<f64>, lo: &DVector<f64>, hi: &DVector<f64>) {
    let n = g.nrows();
    let neg = DVector::from_element(n, -INFINITE_BOUND);
    let pos = DVector::from_element(n, INFINITE_BOUND);
    qp.push_rows(g, &neg, hi);
    qp.push_rows(g, lo, &pos);
}

/// Motion-space problem: `min ‖B_m τ − τ_d‖²_P` with `τ_min ≤ BᵀP B_m τ ≤ τ_max`.
pub fn assemble_qp1(
    tau_d: &DVector<f64>,
    p: &DMatrix<f64>,
    b: &DMatrix<f64>,
    b_m: &DMatrix<f64>,
    limits: &TorqueLimits,
) -> QpProblem {
    let mut qp = QpProblem {
        a: b_m.clone(),
        b: tau_d.clone(),
        w: p.clone(),
        g: DMatrix::zeros(0, b_m.ncols()),
        lower: DVector::zeros(0),
        upper: DVector::zeros(0),
        regularization: DEFAULT_REGULARIZATION,
    };
    let g = b.transpose() * p * b_m;
    push_one_sided(&mut qp, &g, &limits.min, &limits.max);
    qp
}

impl AffineForce {
    /// The rows belonging to the given contacts (three rows each).
    pub fn contact_rows(&self, contacts: &[usize]) -> AffineForce {
        let n = self.s.ncols();
        let mut s = DMatrix::zeros(3 * contacts.len(), n);
        let mut c = DVector::zeros(3 * contacts.len());
        for (r, &k) in contacts.iter().enumerate() {
            s.rows_mut(3 * r, 3).copy_from(&self.s.rows(3 * k, 3));
            c.rows_mut(3 * r, 3).copy_from(&self.c.rows(3 * k, 3));
        }
        AffineForce { s, c }
    }
}

/// Forces at all active contacts when the applied generalized force is
/// `g₀ + G τ`: the constraint force map evaluated with motion part `P g`
/// and constraint part `(I−P) g`.
pub fn contact_force_affine(
    proj: &ProjectionData,
    h: &DVector<f64>,
    qdot: &DVector<f64>,
    jx: &DMatrix<f64>,
    fx: &DVector<f64>,
    g0: &DVector<f64>,
    g_map: &DMatrix<f64>,
) -> AffineForce {
    let n = proj.dim();
    let ip = proj.complement();
    let map = proj.jc_transpose_pinv(&proj.jc);
    let s = &map * &ip * (&proj.mbar * &proj.p - DMatrix::identity(n, n)) * g_map;
    let c = constraint_force_map(proj, h, qdot, &(&proj.p * g0), &(&ip * g0), jx, fx);
    AffineForce { s, c }
}

/// Adds `lower ≤ C (S τ + c) ≤ upper`.
fn push_cone(qp: &mut QpProblem, cone: &ConePyramid, force: &AffineForce) {
    let g = &cone.c * &force.s;
    let off = &cone.c * &force.c;
    let shift = |b: &DVector<f64>| {
        DVector::from_fn(b.len(), |i, _| if is_infinite_bound(b[i]) { b[i] } else { b[i] - off[i] })
    };
    qp.push_rows(&g, &shift(&cone.lower), &shift(&cone.upper));
}

/// Constraint-space problem:
/// `min ‖B_f τ − (τ_d − P B_m τ_I)‖²_{I−P}` subject to the motion and force
/// contact pyramids and the torque limits left over by `τ_I`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_qp2(
    tau_d: &DVector<f64>,
    tau_1: &DVector<f64>,
    p: &DMatrix<f64>,
    b: &DMatrix<f64>,
    b_m: &DMatrix<f64>,
    b_f: &DMatrix<f64>,
    motion: Option<(&ConePyramid, &AffineForce)>,
    force: Option<(&ConePyramid, &AffineForce)>,
    limits: &TorqueLimits,
) -> QpProblem {
    let n = p.nrows();
    let ip = DMatrix::identity(n, n) - p;
    let motion_torque = p * (b_m * tau_1);
    let mut qp = QpProblem {
        a: b_f.clone(),
        b: tau_d - &motion_torque,
        w: ip.clone(),
        g: DMatrix::zeros(0, b_f.ncols()),
        lower: DVector::zeros(0),
        upper: DVector::zeros(0),
        regularization: DEFAULT_REGULARIZATION,
    };
    if let Some((cone, map)) = motion {
        push_cone(&mut qp, cone, map);
    }
    if let Some((cone, map)) = force {
        push_cone(&mut qp, cone, map);
    }
    let used = b.transpose() * &motion_torque;
    let g = b.transpose() * ip * b_f;
    push_one_sided(&mut qp, &g, &(&limits.min - &used), &(&limits.max - &used));
    qp
}

/// Closed-form underactuated contact-wrench law with the square actuator
/// selection `B Bᵀ`:
/// `[P B_s]⁺ τ_m,d + [I − ((I − B_s)(I − P))⁺](I − P) τ_c,d`.
pub fn pidcwcu_torque(
    p: &DMatrix<f64>,
    b: &DMatrix<f64>,
    tau_md: &DVector<f64>,
    tau_cd: &DVector<f64>,
    rel_tol: f64,
) -> DVector<f64> {
    let n = p.nrows();
    let eye = DMatrix::identity(n, n);
    let bs = b * b.transpose();
    let ip = &eye - p;
    let first = pinv(&(p * &bs), rel_tol) * tau_md;
    let second = (&eye - pinv(&((&eye - &bs) * &ip), rel_tol)) * (&ip * tau_cd);
    first + second
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::contacts::{stack_cones, ConeVariant, Contact, ContactRole, ContactSet, SelectionMatrices};
    use crate::projection::DEFAULT_PINV_TOL;
    use crate::qp::{solve, QpStatus};
    use crate::rigidbody::{stacked_point_jacobian, DynamicsTerms};
    use crate::testing::{default_model, foot_indices, nominal_state};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        proj: ProjectionData,
        sel: SelectionMatrices,
        h: DVector<f64>,
        qdot: DVector<f64>,
    }

    fn fixture() -> Fixture {
        let model = default_model();
        let s = nominal_state(&model);
        let terms = DynamicsTerms::new(&model, &s);
        let (jc, _) = stacked_point_jacobian(&model, &terms.cache, &foot_indices(&model));
        let proj = ProjectionData::new(&terms.mass_matrix, &jc, None, DEFAULT_PINV_TOL).unwrap();
        let set = ContactSet::new(vec![
            Contact::flat("LF_foot", 0.7, ContactRole::Force),
            Contact::flat("RF_foot", 0.7, ContactRole::Motion),
            Contact::flat("LH_foot", 0.7, ContactRole::Motion),
            Contact::flat("RH_foot", 0.7, ContactRole::Motion),
        ])
        .unwrap();
        Fixture {
            proj,
            sel: SelectionMatrices::new(&model, &set).unwrap(),
            h: terms.bias,
            qdot: s.velocity,
        }
    }

    #[test]
    fn qp1_zero_target() {
        let f = fixture();
        let qp = assemble_qp1(&DVector::zeros(18), &f.proj.p, &f.sel.b, &f.sel.b_m, &TorqueLimits::symmetric(12, 80.0));
        let s = solve(&qp);
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(s.tau.amax() < 1e-12);
    }

    #[test]
    fn qp1_matches_weighted_least_squares() {
        let f = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tau_d = DVector::from_fn(18, |_, _| rng.gen_range(-20.0..20.0));
        let qp = assemble_qp1(&tau_d, &f.proj.p, &f.sel.b, &f.sel.b_m, &TorqueLimits::symmetric(12, 1e9));
        let s = solve(&qp);
        // Minimum-norm minimizer of ‖P B_m τ − P τ_d‖ (P is idempotent).
        let pb = &f.proj.p * &f.sel.b_m;
        let oracle = pinv(&pb, 1e-10) * (&f.proj.p * &tau_d);
        assert!((&pb * &s.tau - &pb * &oracle).amax() < 1e-7);
        assert!((s.tau - oracle).amax() < 1e-6);
    }

    #[test]
    fn qp1_zero_limits_clamp_everything() {
        let f = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tau_d = DVector::from_fn(18, |_, _| rng.gen_range(-20.0..20.0));
        let qp = assemble_qp1(&tau_d, &f.proj.p, &f.sel.b, &f.sel.b_m, &TorqueLimits::symmetric(12, 0.0));
        let s = solve(&qp);
        assert!(s.status == QpStatus::Optimal, "{:?}", s.status);
        let g = f.sel.b.transpose() * &f.proj.p * &f.sel.b_m;
        assert!((g * &s.tau).amax() < 1e-9);
        assert!(!s.active.is_empty());
    }

    #[test]
    fn contact_force_affine_matches_force_map() {
        let f = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let jx = DMatrix::from_fn(6, 18, |_, _| rng.gen_range(-1.0..1.0));
        let fx = DVector::from_fn(6, |_, _| rng.gen_range(-5.0..5.0));
        let g0 = DVector::from_fn(18, |_, _| rng.gen_range(-10.0..10.0));
        let g_map = &f.sel.b * f.sel.b.transpose() * f.proj.complement() * &f.sel.b_f;
        let map = contact_force_affine(&f.proj, &f.h, &f.qdot, &jx, &fx, &g0, &g_map);
        assert_eq!(map.eval(&DVector::zeros(12)), map.c);
        let tau = DVector::from_fn(12, |_, _| rng.gen_range(-10.0..10.0));
        let g = &g0 + &g_map * &tau;
        let direct = constraint_force_map(&f.proj, &f.h, &f.qdot, &(&f.proj.p * &g), &(f.proj.complement() * &g), &jx, &fx);
        assert!((map.eval(&tau) - direct).amax() < 1e-9);
        let rows = map.contact_rows(&[2, 0]);
        assert_eq!(rows.c.rows(0, 3), map.c.rows(6, 3));
        assert_eq!(rows.s.rows(3, 3), map.s.rows(0, 3));
    }

    #[test]
    fn qp2_row_count() {
        let f = fixture();
        let set = ContactSet::new(vec![
            Contact::flat("LF_foot", 0.7, ContactRole::Force),
            Contact::flat("RF_foot", 0.7, ContactRole::Motion),
            Contact::flat("LH_foot", 0.7, ContactRole::Motion),
            Contact::flat("RH_foot", 0.7, ContactRole::Motion),
        ])
        .unwrap();
        let cm = stack_cones(&set, ConeVariant::Motion).unwrap();
        let cf = stack_cones(&set, ConeVariant::Force).unwrap();
        let jx = DMatrix::zeros(6, 18);
        let fx = DVector::zeros(6);
        let tau_1 = DVector::zeros(12);
        let all = contact_force_affine(&f.proj, &f.h, &f.qdot, &jx, &fx, &DVector::zeros(18), &f.sel.b_f);
        let m = all.contact_rows(&[1, 2, 3]);
        let fm = all.contact_rows(&[0]);
        let qp = assemble_qp2(
            &DVector::zeros(18),
            &tau_1,
            &f.proj.p,
            &f.sel.b,
            &f.sel.b_m,
            &f.sel.b_f,
            Some((&cm, &m)),
            Some((&cf, &fm)),
            &TorqueLimits::symmetric(12, 80.0),
        );
        assert_eq!(qp.n_constraints(), 15 + 5 + 2 * 12);
    }

    #[test]
    fn pidcwcu_without_constraint_torque() {
        let f = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tau_md = &f.proj.p * DVector::from_fn(18, |_, _| rng.gen_range(-20.0..20.0));
        let t = pidcwcu_torque(&f.proj.p, &f.sel.b, &tau_md, &DVector::zeros(18), DEFAULT_PINV_TOL);
        let bs = &f.sel.b * f.sel.b.transpose();
        let expect = pinv(&(&f.proj.p * bs), DEFAULT_PINV_TOL) * &tau_md;
        assert!((t - expect).amax() < 1e-12);
    }

    #[test]
    fn limits_helpers() {
        let l = TorqueLimits::symmetric(2, 5.0);
        let t = DVector::from_row_slice(&[7.0, -6.0]);
        assert_eq!(l.clamp(&t), DVector::from_row_slice(&[5.0, -5.0]));
        assert_eq!(l.violation(&t), 2.0);
    }
}
