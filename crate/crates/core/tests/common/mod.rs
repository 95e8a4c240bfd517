//! Helpers shared by the integration tests: random draws and an
//! independent QP oracle.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use quadforce::model::{build_model, BuildOptions, KinematicTree, ModelDoc};
use quadforce::qp::{is_infinite_bound, QpProblem, DEFAULT_REGULARIZATION};
use rand::Rng;

pub const FEET: [&str; 4] = ["LF_foot", "RF_foot", "LH_foot", "RH_foot"];

/// The bundled quadruped with every link's mass, inertia and centre of mass
/// perturbed.
pub fn random_model<R: Rng>(rng: &mut R) -> KinematicTree {
    let mut doc = ModelDoc::from_json(quadforce::DEFAULT_MODEL_JSON).unwrap();
    for link in &mut doc.links {
        let s = rng.gen_range(0.5..2.0);
        link.mass_kg *= s;
        for row in &mut link.inertia_kg_m2 {
            for x in row.iter_mut() {
                *x *= s;
            }
        }
        for c in &mut link.com_m {
            *c += rng.gen_range(-0.02..0.02);
        }
    }
    build_model(&doc, BuildOptions::default()).unwrap()
}

/// A non-empty subset of the feet.
pub fn random_feet<R: Rng>(model: &KinematicTree, rng: &mut R) -> Vec<usize> {
    loop {
        let chosen: Vec<usize> = FEET
            .iter()
            .filter(|_| rng.gen_bool(0.6))
            .map(|f| model.frame_index(f).unwrap())
            .collect();
        if !chosen.is_empty() {
            return chosen;
        }
    }
}

/// A strongly convex problem with `n` variables and `p` two-sided rows
/// (some one-sided), feasible by construction.
pub fn random_qp<R: Rng>(n: usize, p: usize, rng: &mut R) -> QpProblem {
    let m = n + rng.gen_range(0..4);
    let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let r = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
    let w = DMatrix::identity(m, m) + &r * r.transpose() * 0.2;
    let b = DVector::from_fn(m, |_, _| rng.gen_range(-3.0..3.0));
    let mut qp = QpProblem::least_squares(a, b);
    qp.w = w;
    let g = DMatrix::from_fn(p, n, |_, _| rng.gen_range(-1.0..1.0));
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
    let gx = &g * &x0;
    let lower = DVector::from_fn(p, |i, _| {
        if rng.gen_bool(0.2) {
            f64::NEG_INFINITY
        } else {
            gx[i] - rng.gen_range(0.05..1.0)
        }
    });
    let upper = DVector::from_fn(p, |i, _| {
        if rng.gen_bool(0.2) {
            f64::INFINITY
        } else {
            gx[i] + rng.gen_range(0.05..1.0)
        }
    });
    qp.push_rows(&g, &lower, &upper);
    qp
}

/// Accelerated projected gradient on the dual of
/// `min ½τᵀHτ + fᵀτ` s.t. `Cτ ≤ d`, where `H = AᵀWA + εI`. The only
/// projection needed is onto the non-negative orthant.
pub fn dual_projected_gradient(qp: &QpProblem, max_iterations: usize) -> DVector<f64> {
    let n = qp.n();
    let h = qp.a.transpose() * &qp.w * &qp.a + DMatrix::identity(n, n) * qp.regularization.max(DEFAULT_REGULARIZATION);
    let f = -(qp.a.transpose() * &qp.w * &qp.b);
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..qp.n_constraints() {
        let gi = qp.g.row(i).transpose();
        if !is_infinite_bound(qp.upper[i]) {
            rows.push((gi.clone(), qp.upper[i]));
        }
        if !is_infinite_bound(qp.lower[i]) {
            rows.push((-gi, -qp.lower[i]));
        }
    }
    let k = rows.len();
    let c = DMatrix::from_fn(k, n, |r, col| rows[r].0[col]);
    let d = DVector::from_fn(k, |r, _| rows[r].1);
    let chol = h.cholesky().expect("strongly convex");
    if k == 0 {
        return -chol.solve(&f);
    }
    let primal = |y: &DVector<f64>| -> DVector<f64> { -chol.solve(&(&f + c.transpose() * y)) };
    let hinv_ct = chol.solve(&c.transpose());
    let lip = (&c * &hinv_ct).symmetric_eigenvalues().max().max(1e-12);

    let mut y = DVector::zeros(k);
    let mut z = y.clone();
    let mut t: f64 = 1.0;
    for _ in 0..max_iterations {
        let grad = &c * primal(&z) - &d;
        let y_next = (&z + grad / lip).map(|v| v.max(0.0));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        // Restart when the momentum points against progress.
        if (&y_next - &y).dot(&(&z - &y_next)) > 0.0 {
            t = 1.0;
            z = y_next.clone();
        } else {
            z = &y_next + (&y_next - &y) * momentum;
            t = t_next;
        }
        let done = (&y_next - &y).amax() < 1e-15 * (1.0 + y_next.amax());
        y = y_next;
        if done {
            break;
        }
    }
    primal(&y)
}

use nalgebra::Isometry3;
use quadforce::projection::{ProjectionData, DEFAULT_PINV_TOL, DEFAULT_TRUNCATION_TOL};
use quadforce::rigidbody::{frame_kinematics_cached, random_state, stacked_point_jacobian, DynamicsTerms, GeneralizedState};
use quadforce::task_control::{impedance_terms, ImpedanceOutput, ImpedanceTask};
use quadforce::testing::nominal_state;

/// One random robot, state and contact set with its projection and the
/// torso impedance terms.
pub struct Draw {
    pub model: KinematicTree,
    pub state: GeneralizedState,
    pub feet: Vec<usize>,
    pub terms: DynamicsTerms,
    pub jc: DMatrix<f64>,
    pub proj: ProjectionData,
    pub jx: DMatrix<f64>,
    pub imp: ImpedanceOutput,
}

pub fn torso_task() -> ImpedanceTask {
    ImpedanceTask::pose("torso", Isometry3::translation(0.0, 0.0, 0.57), [2000.0; 6], [100.0; 6])
}

/// `all_feet` keeps every foot in the contact set (a standing draw).
pub fn random_draw<R: Rng>(rng: &mut R, all_feet: bool) -> Draw {
    let model = random_model(rng);
    let nominal = nominal_state(&model);
    let state = random_state(&model, &nominal, 0.2, 0.5, rng);
    let feet = if all_feet {
        FEET.iter().map(|f| model.frame_index(f).unwrap()).collect()
    } else {
        random_feet(&model, rng)
    };
    let terms = DynamicsTerms::new(&model, &state);
    let (jc, _) = stacked_point_jacobian(&model, &terms.cache, &feet);
    let proj = ProjectionData::new(&terms.mass_matrix, &jc, None, DEFAULT_PINV_TOL).unwrap();
    let torso = model.frame_index("torso").unwrap();
    let fk = frame_kinematics_cached(&model, &terms.cache, torso);
    let imp = impedance_terms(
        &torso_task(),
        &proj,
        &terms.bias,
        &state.velocity,
        &fk.pose,
        &fk.jacobian,
        &fk.drift,
        DEFAULT_TRUNCATION_TOL,
    );
    Draw {
        model,
        state,
        feet,
        terms,
        jc,
        proj,
        jx: fk.jacobian,
        imp,
    }
}
