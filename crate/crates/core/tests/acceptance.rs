//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::collections::HashMap;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use quadforce::controllers::ControllerKind;
use quadforce::projection::seminorm_split;
use quadforce::qp::{kkt_residual, solve, QpStatus};
use quadforce::rigidbody::{frame_kinematics_cached, inverse_dynamics, mass_matrix, random_state, KinematicsCache};
use quadforce::sim::{log_metrics, run_comparison, run_experiment, write_csv, Metrics, Scenario, SimulationLog};
use quadforce::task_control::{constraint_torque_desired, implicit_contact_force};
use quadforce::testing::nominal_state;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn projection_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut idem, mut sym, mut annih, mut semi): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let mut pass = true;
    for _ in 0..200 {
        let d = common::random_draw(&mut rng, false);
        let p = &d.proj.p;
        let i = (p * p - p).amax();
        let s = (p - p.transpose()).amax();
        let a = (p * d.jc.transpose()).amax() / d.jc.amax();
        let x = DVector::from_fn(d.model.nv(), |_, _| rng.gen_range(-10.0..10.0));
        let (m, c) = seminorm_split(&x, p);
        let r = (m + c - x.norm_squared()).abs() / x.norm_squared();
        pass &= i < 1e-9 && s < 1e-10 && a < 1e-8 && r < 1e-9;
        idem = idem.max(i);
        sym = sym.max(s);
        annih = annih.max(a);
        semi = semi.max(r);
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "200 draws: |P²−P| {idem:.1e}, |P−Pᵀ| {sym:.1e}, |P J_cᵀ|/|J_c| {annih:.1e}, seminorm {semi:.1e}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn dynamics_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut m_err, mut drift_err, mut min_eig): (f64, f64, f64) = (0.0, 0.0, f64::INFINITY);
    let dt = 1e-6;
    for _ in 0..50 {
        let model = common::random_model(&mut rng);
        let nominal = nominal_state(&model);
        let state = random_state(&model, &nominal, 0.4, 1.0, &mut rng);
        let nv = model.nv();
        let m = mass_matrix(&model, &state);
        let mut at_rest = state.clone();
        at_rest.velocity = DVector::zeros(nv);
        let by_columns = DMatrix::from_fn(nv, nv, |_, _| 0.0);
        let mut by_columns = by_columns;
        for c in 0..nv {
            let mut e = DVector::zeros(nv);
            e[c] = 1.0;
            by_columns.set_column(c, &inverse_dynamics(&model, &at_rest, &e, false));
        }
        m_err = m_err.max((&m - &by_columns).amax());
        min_eig = min_eig.min(((&m + m.transpose()) * 0.5).symmetric_eigenvalues().min());

        let next = state.integrate_configuration(&model, &state.velocity, dt);
        let c0 = KinematicsCache::new(&model, &state);
        let c1 = KinematicsCache::new(&model, &next);
        for f in 0..model.frames.len() {
            let k0 = frame_kinematics_cached(&model, &c0, f);
            let k1 = frame_kinematics_cached(&model, &c1, f);
            let fd = (&k1.jacobian - &k0.jacobian) / dt * &state.velocity;
            drift_err = drift_err.max((fd - &k0.drift).amax());
        }
    }
    let elapsed = start.elapsed();
    let pass = m_err < 1e-9 && min_eig > 0.0 && drift_err < 1e-4 && elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "50 states: |M_crba − M_id| {m_err:.1e}, min eig {min_eig:.2e}, drift vs finite difference {drift_err:.1e}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn qp_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut diff, mut kkt): (f64, f64) = (0.0, 0.0);
    let mut optimal = true;
    for _ in 0..50 {
        let n = rng.gen_range(2..=15);
        let p = rng.gen_range(1..=30);
        let qp = common::random_qp(n, p, &mut rng);
        let s = solve(&qp);
        optimal &= s.status == QpStatus::Optimal;
        let oracle = common::dual_projected_gradient(&qp, 200_000);
        diff = diff.max((&s.tau - &oracle).amax());
        kkt = kkt.max(kkt_residual(&qp, &s.tau));
    }
    let elapsed = start.elapsed();
    let pass = optimal && diff < 1e-6 && kkt < 1e-8 && elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!("50 problems: |τ* − oracle| {diff:.1e}, KKT {kkt:.1e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn implicit_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = common::random_draw(&mut rng, true);
        let fx = DVector::zeros(6);
        let h = &d.terms.bias;
        let qd = &d.state.velocity;
        let lam = implicit_contact_force(&d.proj, h, qd, &d.imp.motion_torque, &d.jx, &fx);
        let tau_c = constraint_torque_desired(&d.proj, h, qd, &d.imp.motion_torque, &d.jx, &fx, &lam);
        worst = worst.max(tau_c.amax());
    }
    outcome(worst < 1e-8, format!("100 standing states: max |τ_c,d| {worst:.1e}"))
}

fn standing_regulation() -> Outcome {
    let mut s = Scenario::reference_sinewave();
    s.force_profile = quadforce::sim::ForceProfile::Implicit;
    s.sim.duration_s = 5.0;
    let model = s.load_model().unwrap();
    let log = run_experiment(&s, &model, ControllerKind::Proposed).unwrap();
    if let Some(f) = &log.failure {
        return outcome(false, format!("run failed: {f}"));
    }
    let target = s.desired_pose().translation.vector;
    let deviation = log
        .rows()
        .map(|r| (nalgebra::Vector3::from(r.base_position) - target).norm())
        .fold(0.0, f64::max);
    let weight = model.total_mass() * model.gravity.norm();
    let balance = log
        .records
        .iter()
        .map(|r| (r.foot_forces.iter().map(|f| f[2]).sum::<f64>() - weight).abs())
        .fold(0.0, f64::max);
    outcome(
        deviation < 1e-3 && balance < 0.5,
        format!("max base deviation {:.2} mm (< 1 mm), max |Σλ_z − weight| {balance:.3} N (< 0.5 N)", deviation * 1e3),
    )
}

struct Runs {
    logs: HashMap<(ControllerKind, &'static str), SimulationLog>,
    metrics: HashMap<(ControllerKind, &'static str), Option<Metrics>>,
    scenarios: HashMap<&'static str, Scenario>,
    elapsed: HashMap<&'static str, Duration>,
}

fn run_all() -> Runs {
    let mut runs = Runs {
        logs: HashMap::new(),
        metrics: HashMap::new(),
        scenarios: HashMap::new(),
        elapsed: HashMap::new(),
    };
    for (name, scenario) in [("sinewave", Scenario::reference_sinewave()), ("step", Scenario::reference_step())] {
        let model = scenario.load_model().unwrap();
        let start = Instant::now();
        let logs = run_comparison(&scenario, &model, &ControllerKind::ALL);
        runs.elapsed.insert(name, start.elapsed());
        for log in logs {
            let log = log.unwrap();
            let key = (log.controller, name);
            runs.metrics.insert(key, log_metrics(&log, &scenario, &model).ok());
            runs.logs.insert(key, log);
        }
        runs.scenarios.insert(name, scenario);
    }
    runs
}

fn amplitudes(s: &Scenario) -> [f64; 3] {
    match &s.force_profile {
        quadforce::sim::ForceProfile::Sinewave { axes } => axes.map(|a| a.amplitude_n.abs()),
        _ => unreachable!("sinewave scenario"),
    }
}

fn sinewave_reproduction(runs: &Runs) -> Outcome {
    let key = (ControllerKind::Proposed, "sinewave");
    let log = &runs.logs[&key];
    if let Some(f) = &log.failure {
        return outcome(false, format!("run failed: {f}"));
    }
    let m = runs.metrics[&key].as_ref().unwrap();
    let amp = amplitudes(&runs.scenarios["sinewave"]);
    let rel: Vec<f64> = (0..3).map(|i| m.rms_force_error_n[i] / amp[i]).collect();
    let elapsed = runs.elapsed["sinewave"];
    let pass = rel.iter().all(|r| *r < 0.1)
        && m.max_base_position_deviation_m < 0.03
        && elapsed < Duration::from_secs(120);
    outcome(
        pass,
        format!(
            "RMS/amplitude x {:.1}% y {:.1}% z {:.1}% (< 10%), max base deviation {:.1} mm (< 30 mm), {:.1} s for three controllers",
            rel[0] * 100.0,
            rel[1] * 100.0,
            rel[2] * 100.0,
            m.max_base_position_deviation_m * 1e3,
            elapsed.as_secs_f64()
        ),
    )
}

fn step_reproduction(runs: &Runs) -> Outcome {
    let log = &runs.logs[&(ControllerKind::Proposed, "step")];
    if let Some(f) = &log.failure {
        return outcome(false, format!("run failed: {f}"));
    }
    let s = &runs.scenarios["step"];
    let mut edges = s.force_profile.step_times();
    edges.push(s.sim.duration_s);
    let mut worst: f64 = 0.0;
    for w in edges.windows(2) {
        for r in log.rows().filter(|r| r.t >= w[0] + 0.5 && r.t < w[1]) {
            worst = worst.max((r.lambda[2] - r.lambda_d[2]).abs());
        }
    }
    let min_normal = log
        .records
        .iter()
        .flat_map(|r| r.foot_forces.iter().map(|f| f[2]))
        .fold(f64::INFINITY, f64::min);
    outcome(
        worst < 5.0 && min_normal >= 0.0,
        format!("max |λ_z − λ_d,z| from 0.5 s after each step {worst:.3} N (< 5 N), min measured normal force {min_normal:.1} N"),
    )
}

fn z_rms(runs: &Runs, kind: ControllerKind, profile: &'static str) -> (f64, String) {
    let log = &runs.logs[&(kind, profile)];
    let failed = log.failure.as_ref().map(|f| format!(" [{f}]")).unwrap_or_default();
    match &runs.metrics[&(kind, profile)] {
        Some(m) => (m.rms_force_error_n[2], format!("{kind} {:.2} N{failed}", m.rms_force_error_n[2])),
        // No post-transient samples: the controller did not stay up long
        // enough to track anything.
        None => (f64::INFINITY, format!("{kind} no samples{failed}")),
    }
}

fn ordering(runs: &Runs) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for profile in ["sinewave", "step"] {
        let (p, pd) = z_rms(runs, ControllerKind::Proposed, profile);
        let mut line = vec![pd];
        for other in [ControllerKind::Howsm, ControllerKind::Pidcwcu] {
            let (o, od) = z_rms(runs, other, profile);
            pass &= p <= 0.8 * o;
            line.push(od);
            let pm = runs.metrics[&(ControllerKind::Proposed, profile)].as_ref();
            let om = runs.metrics[&(other, profile)].as_ref();
            if let (Some(pm), Some(om)) = (pm, om) {
                pass &= (0..3).all(|i| pm.rms_force_error_n[i] < om.rms_force_error_n[i]);
            }
        }
        parts.push(format!("{profile}: z RMS {}", line.join(", ")));
    }
    outcome(pass, parts.join("; "))
}

fn runtime_constraints(runs: &Runs) -> Outcome {
    let mut torque: f64 = 0.0;
    let mut cone: f64 = 0.0;
    for (key, log) in &runs.logs {
        let limit = runs.scenarios[key.1].torque_limit_n_m;
        for r in log.rows() {
            for t in &r.tau {
                torque = torque.max(t.abs() - limit);
            }
        }
        for r in &log.records {
            if r.row.qp2_status == Some(QpStatus::Optimal) {
                cone = cone.max(r.predicted_cone_violation);
            }
        }
    }
    let measured: usize = ["sinewave", "step"]
        .iter()
        .map(|p| runs.metrics[&(ControllerKind::Proposed, *p)].as_ref().map_or(usize::MAX, |m| m.cone_violations))
        .sum();
    outcome(
        torque <= 1e-6 && cone <= 1e-6 && measured == 0,
        format!(
            "max torque excess {:.1e} N·m, max QP-optimal cone violation {cone:.1e}, proposed steady-state measured cone violations {measured}",
            torque.max(0.0)
        ),
    )
}

fn determinism() -> Outcome {
    let mut s = Scenario::reference_sinewave();
    s.sim.duration_s = 2.0;
    s.sim.seed = 11;
    s.sim.initial_perturbation_m = 0.005;
    let model = s.load_model().unwrap();
    let csv = || {
        let log = run_experiment(&s, &model, ControllerKind::Proposed).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, log.rows(), model.n_joints()).unwrap();
        buf
    };
    let (a, b) = (csv(), csv());
    outcome(a == b && !a.is_empty(), format!("two seeded 2 s runs, {} bytes each, identical: {}", a.len(), a == b))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 projection suite", projection_suite()),
        ("2 dynamics oracle", dynamics_oracle()),
        ("3 QP oracle", qp_oracle()),
        ("4 implicit force consistency", implicit_consistency()),
        ("5 standing regulation", standing_regulation()),
    ];
    let runs = run_all();
    results.push(("6 sinewave reproduction", sinewave_reproduction(&runs)));
    results.push(("7 step reproduction", step_reproduction(&runs)));
    results.push(("8 ordering", ordering(&runs)));
    results.push(("9 runtime constraints", runtime_constraints(&runs)));
    results.push(("10 determinism", determinism()));

    let mut failed = 0;
    for (name, o) in &results {
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
