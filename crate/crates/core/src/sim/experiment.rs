use std::io::{Read, Write};

use nalgebra::{DVector, Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{
    friction_pyramid_rows, Controller, ControllerError, ControllerKind, TorqueCommand, TorqueLimits,
};
use crate::model::KinematicTree;
use crate::qp::QpStatus;
use crate::rigidbody::{frame_kinematics_cached, GeneralizedState, KinematicsCache};
use crate::standing::solve_standing;

use super::physics::{sim_step, ContactState, ExternalWrench};
use super::scenario::Scenario;

/// Measured forces may leave their pyramid by this much before a tick is
/// counted as a cone violation.
pub const MEASURED_CONE_TOLERANCE_N: f64 = 1e-6;
/// Commanded torques may exceed their limits by this much.
pub const TORQUE_LIMIT_TOLERANCE_N_M: f64 = 1e-6;
/// Base excursion treated as a fall.
pub const DIVERGENCE_DISTANCE_M: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("initial standing pose: {0}")]
    InitialPose(String),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("log is empty after the transient window")]
    EmptyLog,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv row {row}: {message}")]
    CsvFormat { row: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The quantities written to the CSV export for one tick.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub t: f64,
    /// Measured force on the robot at the force foot.
    pub lambda: [f64; 3],
    pub lambda_d: [f64; 3],
    pub base_position: [f64; 3],
    pub base_rpy: [f64; 3],
    pub tau: Vec<f64>,
    pub qp1_status: Option<QpStatus>,
    pub qp2_status: Option<QpStatus>,
    /// Contacts whose measured force left its pyramid this tick.
    pub cone_violations: usize,
}

/// Everything recorded for one control tick.
#[derive(Clone, Debug, PartialEq)]
pub struct TickRecord {
    pub row: LogRow,
    /// Measured force at every contact of the set, in set order.
    pub foot_forces: Vec<[f64; 3]>,
    pub base_velocity: [f64; 6],
    pub held_previous: bool,
    pub predicted_cone_violation: f64,
    pub qp1_kkt_residual: Option<f64>,
    pub qp2_kkt_residual: Option<f64>,
    /// `‖J_c q̇‖∞` at the start of the tick.
    pub constraint_velocity: f64,
    /// Torque entries the simulator had to clamp.
    pub clamped_torques: usize,
    pub released: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationLog {
    pub controller: ControllerKind,
    pub profile: String,
    pub timestep_s: f64,
    pub records: Vec<TickRecord>,
    /// Set when the run stopped early.
    pub failure: Option<String>,
}

impl SimulationLog {
    pub fn rows(&self) -> impl Iterator<Item = &LogRow> {
        self.records.iter().map(|r| &r.row)
    }

    /// `<controller>_<profile>.csv`
    pub fn file_stem(&self) -> String {
        format!("{}_{}", self.controller.name(), self.profile)
    }
}

/// Summary statistics over the post-transient window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rms_force_error_n: [f64; 3],
    pub max_force_error_n: f64,
    pub max_base_position_deviation_m: f64,
    pub max_base_orientation_deviation_rad: f64,
    pub torque_limit_violations: usize,
    pub cone_violations: usize,
    pub samples: usize,
}

impl Metrics {
    /// Largest absolute difference over all fields.
    pub fn max_difference(&self, other: &Metrics) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..3 {
            d = d.max((self.rms_force_error_n[i] - other.rms_force_error_n[i]).abs());
        }
        d.max((self.max_force_error_n - other.max_force_error_n).abs())
            .max((self.max_base_position_deviation_m - other.max_base_position_deviation_m).abs())
            .max((self.max_base_orientation_deviation_rad - other.max_base_orientation_deviation_rad).abs())
            .max((self.torque_limit_violations as f64 - other.torque_limit_violations as f64).abs())
            .max((self.cone_violations as f64 - other.cone_violations as f64).abs())
            .max((self.samples as f64 - other.samples as f64).abs())
    }
}

/// Force-tracking and regulation errors of the rows after `skip_s`.
pub fn compute_metrics<'a>(
    rows: impl IntoIterator<Item = &'a LogRow>,
    desired: &Isometry3<f64>,
    limits: &TorqueLimits,
    skip_s: f64,
) -> Result<Metrics, ExperimentError> {
    let mut sq = [0.0; 3];
    let mut m = Metrics {
        rms_force_error_n: [0.0; 3],
        max_force_error_n: 0.0,
        max_base_position_deviation_m: 0.0,
        max_base_orientation_deviation_rad: 0.0,
        torque_limit_violations: 0,
        cone_violations: 0,
        samples: 0,
    };
    for row in rows {
        if row.t < skip_s - 1e-12 {
            continue;
        }
        m.samples += 1;
        for i in 0..3 {
            let e = row.lambda[i] - row.lambda_d[i];
            sq[i] += e * e;
            m.max_force_error_n = m.max_force_error_n.max(e.abs());
        }
        let p = Vector3::from(row.base_position) - desired.translation.vector;
        m.max_base_position_deviation_m = m.max_base_position_deviation_m.max(p.norm());
        let [r, pi, y] = row.base_rpy;
        let q = UnitQuaternion::from_euler_angles(r, pi, y);
        m.max_base_orientation_deviation_rad = m.max_base_orientation_deviation_rad.max(desired.rotation.angle_to(&q));
        let tau = DVector::from_column_slice(&row.tau);
        if limits.violation(&tau) > TORQUE_LIMIT_TOLERANCE_N_M {
            m.torque_limit_violations += 1;
        }
        m.cone_violations += row.cone_violations;
    }
    if m.samples == 0 {
        return Err(ExperimentError::EmptyLog);
    }
    for i in 0..3 {
        m.rms_force_error_n[i] = (sq[i] / m.samples as f64).sqrt();
    }
    Ok(m)
}

/// Metrics of a finished run against its scenario.
pub fn log_metrics(log: &SimulationLog, scenario: &Scenario, model: &KinematicTree) -> Result<Metrics, ExperimentError> {
    let limits = TorqueLimits::symmetric(model.n_joints(), scenario.torque_limit_n_m);
    compute_metrics(log.rows(), &scenario.desired_pose(), &limits, scenario.transient_skip_s)
}

/// Standing pose at the scenario's torso target, with every contact foot on
/// the ground below its zero-configuration position. The base is shifted by
/// a seeded uniform offset when the scenario asks for one.
pub fn initial_state(scenario: &Scenario, model: &KinematicTree) -> Result<GeneralizedState, ExperimentError> {
    let desired = scenario.desired_pose();
    let mut zero = GeneralizedState::zeros(model);
    zero.base_position = desired.translation.vector;
    zero.base_orientation = desired.rotation;
    let cache = KinematicsCache::new(model, &zero);
    let mut feet = Vec::new();
    for name in &scenario.contact_frames {
        let f = model
            .frame_index(name)
            .ok_or_else(|| ExperimentError::InitialPose(format!("unknown frame '{name}'")))?;
        let p = frame_kinematics_cached(model, &cache, f).position();
        feet.push((f, Vector3::new(p.x, p.y, scenario.sim.ground_height_m)));
    }
    let mut base = desired;
    let amp = scenario.sim.initial_perturbation_m;
    if amp > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.sim.seed);
        let offset = Vector3::from_fn(|_, _| rng.gen_range(-amp..=amp));
        base = Isometry3::from_parts(Translation3::from(desired.translation.vector + offset), desired.rotation);
    }
    let [a, b, c] = scenario.standing_joint_guess_rad;
    let guess = DVector::from_fn(model.n_joints(), |i, _| [a, b, c][i % 3]);
    solve_standing(model, &base, &feet, &guess).map_err(ExperimentError::InitialPose)
}

fn rpy(q: &UnitQuaternion<f64>) -> [f64; 3] {
    let (r, p, y) = q.euler_angles();
    [r, p, y]
}

fn measured_cone_violations(scenario: &Scenario, forces: &[Vector3<f64>], active: &[bool]) -> usize {
    let set = scenario.contact_set();
    set.contacts
        .iter()
        .zip(forces)
        .zip(active)
        .filter(|((c, f), &on)| {
            if !on {
                return false;
            }
            let (rows, lo, up) = friction_pyramid_rows(c).expect("validated contact");
            let v = rows * *f;
            (0..5).any(|i| v[i] < lo[i] - MEASURED_CONE_TOLERANCE_N || v[i] > up[i] + MEASURED_CONE_TOLERANCE_N)
        })
        .count()
}

/// Runs one controller in closed loop. `observe` sees the controller and its
/// command after every tick.
pub fn run_experiment_with(
    scenario: &Scenario,
    model: &KinematicTree,
    kind: ControllerKind,
    mut observe: impl FnMut(usize, &Controller, &TorqueCommand),
) -> Result<SimulationLog, ExperimentError> {
    let set = scenario.contact_set();
    let mut controller = Controller::new(
        model,
        scenario.controller_config(kind, model),
        set.clone(),
        scenario.task(),
    )?;
    let frames = set.frame_indices(model).map_err(ControllerError::from)?;
    let force_slot = set
        .contacts
        .iter()
        .position(|c| c.frame == scenario.force_leg)
        .expect("validated force leg");
    let mut state = initial_state(scenario, model)?;
    // Anchors sit where the feet would be without any base perturbation.
    let mut contacts = ContactState::at_state(model, &state, &frames);
    for a in contacts.anchors.iter_mut() {
        a.z = scenario.sim.ground_height_m;
    }
    let external = scenario.external_wrench.as_ref().map(|w| ExternalWrench {
        frame: model.frame_index(&w.frame).expect("validated frame"),
        wrench: DVector::from_column_slice(&w.wrench),
    });
    let limits = TorqueLimits::symmetric(model.n_joints(), scenario.torque_limit_n_m);
    let desired = scenario.desired_pose();
    let dt = scenario.sim.timestep_s;
    let ticks = scenario.sim.ticks();

    let mut log = SimulationLog {
        controller: kind,
        profile: scenario.force_profile.name().to_string(),
        timestep_s: dt,
        records: Vec::with_capacity(ticks),
        failure: None,
    };
    for k in 0..ticks {
        let t = k as f64 * dt;
        let lambda_d = scenario
            .force_profile
            .eval(t)
            .map(|v| DVector::from_column_slice(v.as_slice()));
        let active = contacts.active.clone();
        let cmd = match controller.tick(&state, &active, lambda_d.as_ref()) {
            Ok(c) => c,
            Err(e) => {
                log.failure = Some(format!("controller failed at t = {t} s: {e}"));
                break;
            }
        };
        observe(k, &controller, &cmd);
        let step = match sim_step(model, &state, &cmd.tau, Some(&limits), &mut contacts, external.as_ref(), &scenario.sim) {
            Ok(s) => s,
            Err(e) => {
                log.failure = Some(format!("simulation failed at t = {t} s: {e}"));
                break;
            }
        };
        let f = step.forces[force_slot];
        let lam_d = cmd.lambda_d.rows(0, 3);
        let v = &state.velocity;
        log.records.push(TickRecord {
            row: LogRow {
                t,
                lambda: [f.x, f.y, f.z],
                lambda_d: [lam_d[0], lam_d[1], lam_d[2]],
                base_position: state.base_position.into(),
                base_rpy: rpy(&state.base_orientation),
                tau: cmd.tau.iter().copied().collect(),
                qp1_status: cmd.qp1.as_ref().map(|d| d.status),
                qp2_status: cmd.qp2.as_ref().map(|d| d.status),
                cone_violations: measured_cone_violations(scenario, &step.forces, &active),
            },
            foot_forces: step.forces.iter().map(|f| [f.x, f.y, f.z]).collect(),
            base_velocity: [v[0], v[1], v[2], v[3], v[4], v[5]],
            held_previous: cmd.held_previous,
            predicted_cone_violation: cmd.predicted_cone_violation,
            qp1_kkt_residual: cmd.qp1.as_ref().map(|d| d.kkt_residual),
            qp2_kkt_residual: cmd.qp2.as_ref().map(|d| d.kkt_residual),
            constraint_velocity: step.constraint_velocity,
            clamped_torques: step.clamped,
            released: step.released.iter().map(|&i| set.contacts[i].frame.clone()).collect(),
        });
        state = step.state;
        if (state.base_position - desired.translation.vector).norm() > DIVERGENCE_DISTANCE_M {
            log.failure = Some(format!("base left the workspace at t = {} s", t + dt));
            break;
        }
    }
    Ok(log)
}

pub fn run_experiment(
    scenario: &Scenario,
    model: &KinematicTree,
    kind: ControllerKind,
) -> Result<SimulationLog, ExperimentError> {
    run_experiment_with(scenario, model, kind, |_, _, _| {})
}

/// Runs several controllers on the same scenario, one thread each.
pub fn run_comparison(
    scenario: &Scenario,
    model: &KinematicTree,
    kinds: &[ControllerKind],
) -> Vec<Result<SimulationLog, ExperimentError>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = kinds
            .iter()
            .map(|&k| s.spawn(move || run_experiment(scenario, model, k)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment thread panicked"))
            .collect()
    })
}

fn status_name(s: Option<QpStatus>) -> &'static str {
    match s {
        Some(QpStatus::Optimal) => "optimal",
        Some(QpStatus::MaxIterations) => "max_iterations",
        Some(QpStatus::Infeasible) => "infeasible",
        None => "none",
    }
}

fn parse_status(s: &str) -> Option<Option<QpStatus>> {
    match s {
        "optimal" => Some(Some(QpStatus::Optimal)),
        "max_iterations" => Some(Some(QpStatus::MaxIterations)),
        "infeasible" => Some(Some(QpStatus::Infeasible)),
        "none" => Some(None),
        _ => None,
    }
}

pub fn csv_header(n_joints: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "t", "lam_fx", "lam_fy", "lam_fz", "lam_d_x", "lam_d_y", "lam_d_z", "base_x", "base_y", "base_z", "base_roll",
        "base_pitch", "base_yaw",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((1..=n_joints).map(|i| format!("tau_{i}")));
    h.extend(["qp1_status", "qp2_status", "cone_violations"].map(String::from));
    h
}

/// Writes the per-tick rows with round-trip float formatting.
pub fn write_csv<'a, W: Write>(writer: W, rows: impl IntoIterator<Item = &'a LogRow>, n_joints: usize) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(csv_header(n_joints))?;
    for r in rows {
        let mut rec: Vec<String> = Vec::with_capacity(16 + n_joints);
        rec.push(r.t.to_string());
        for x in r.lambda.iter().chain(&r.lambda_d).chain(&r.base_position).chain(&r.base_rpy).chain(&r.tau) {
            rec.push(x.to_string());
        }
        rec.push(status_name(r.qp1_status).into());
        rec.push(status_name(r.qp2_status).into());
        rec.push(r.cone_violations.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<LogRow>, ExperimentError> {
    let mut rd = csv::Reader::from_reader(reader);
    let header = rd.headers()?.clone();
    let n_joints = header.iter().filter(|h| h.starts_with("tau_")).count();
    if header.iter().collect::<Vec<_>>() != csv_header(n_joints) {
        return Err(ExperimentError::CsvFormat {
            row: 0,
            message: "unexpected header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |message: String| ExperimentError::CsvFormat { row: i + 1, message };
        let num = |j: usize| -> Result<f64, ExperimentError> {
            rec[j].parse::<f64>().map_err(|e| bad(format!("column {}: {e}", &header[j])))
        };
        let triple = |j: usize| -> Result<[f64; 3], ExperimentError> { Ok([num(j)?, num(j + 1)?, num(j + 2)?]) };
        let tau = (0..n_joints).map(|j| num(13 + j)).collect::<Result<Vec<_>, _>>()?;
        let s1 = parse_status(&rec[13 + n_joints]).ok_or_else(|| bad("bad qp1_status".into()))?;
        let s2 = parse_status(&rec[14 + n_joints]).ok_or_else(|| bad("bad qp2_status".into()))?;
        let cones = rec[15 + n_joints]
            .parse::<usize>()
            .map_err(|e| bad(format!("cone_violations: {e}")))?;
        rows.push(LogRow {
            t: num(0)?,
            lambda: triple(1)?,
            lambda_d: triple(4)?,
            base_position: triple(7)?,
            base_rpy: triple(10)?,
            tau,
            qp1_status: s1,
            qp2_status: s2,
            cone_violations: cones,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn row(t: f64, lambda: [f64; 3], lambda_d: [f64; 3]) -> LogRow {
        LogRow {
            t,
            lambda,
            lambda_d,
            base_position: [0.0, 0.0, 0.57],
            base_rpy: [0.0; 3],
            tau: vec![1.5; 12],
            qp1_status: Some(QpStatus::Optimal),
            qp2_status: None,
            cone_violations: 0,
        }
    }

    fn target() -> Isometry3<f64> {
        Isometry3::translation(0.0, 0.0, 0.57)
    }

    #[test]
    fn perfect_tracking_has_zero_error() {
        let rows: Vec<_> = (0..100).map(|k| row(k as f64 * 0.1, [1.0, 2.0, 3.0], [1.0, 2.0, 3.0])).collect();
        let m = compute_metrics(&rows, &target(), &TorqueLimits::symmetric(12, 80.0), 1.0).unwrap();
        assert_eq!(m.rms_force_error_n, [0.0; 3]);
        assert_eq!(m.max_force_error_n, 0.0);
        assert_eq!(m.max_base_position_deviation_m, 0.0);
        assert_eq!(m.max_base_orientation_deviation_rad, 0.0);
        assert_eq!(m.samples, 90);
    }

    #[test]
    fn constant_offset_gives_that_rms() {
        let rows: Vec<_> = (0..50).map(|k| row(k as f64 * 0.1, [0.0, 0.0, 145.0], [0.0, 0.0, 140.0])).collect();
        let m = compute_metrics(&rows, &target(), &TorqueLimits::symmetric(12, 80.0), 0.0).unwrap();
        assert_relative_eq!(m.rms_force_error_n[2], 5.0, epsilon = 1e-12);
        assert_eq!(m.rms_force_error_n[0], 0.0);
    }

    #[test]
    fn violations_are_counted() {
        let mut r = row(2.0, [0.0; 3], [0.0; 3]);
        r.tau[3] = 81.0;
        r.cone_violations = 2;
        let m = compute_metrics([&r], &target(), &TorqueLimits::symmetric(12, 80.0), 1.0).unwrap();
        assert_eq!(m.torque_limit_violations, 1);
        assert_eq!(m.cone_violations, 2);
    }

    #[test]
    fn empty_window_is_an_error() {
        let rows = vec![row(0.5, [0.0; 3], [0.0; 3])];
        let e = compute_metrics(&rows, &target(), &TorqueLimits::symmetric(12, 80.0), 1.0);
        assert!(matches!(e, Err(ExperimentError::EmptyLog)));
    }

    #[test]
    fn csv_rejects_foreign_header() {
        let text = "a,b\n1,2\n";
        assert!(matches!(read_csv(text.as_bytes()), Err(ExperimentError::CsvFormat { row: 0, .. })));
    }

    #[test]
    fn short_run_logs_every_tick() {
        let mut s = Scenario::reference_sinewave();
        s.sim.duration_s = 0.05;
        let model = s.load_model().unwrap();
        let log = run_experiment(&s, &model, ControllerKind::Proposed).unwrap();
        assert!(log.failure.is_none());
        assert_eq!(log.records.len(), 50);
        for (k, r) in log.records.iter().enumerate() {
            assert_eq!(r.row.t, k as f64 * 1e-3);
        }
        assert_eq!(log.file_stem(), "proposed_sinewave");
    }

    proptest! {
        #[test]
        fn csv_round_trip(
            values in prop::collection::vec(-1e3..1e3f64, 25),
            cones in 0usize..4,
        ) {
            let r = LogRow {
                t: values[0].abs(),
                lambda: [values[1], values[2], values[3]],
                lambda_d: [values[4], values[5], values[6]],
                base_position: [values[7], values[8], values[9]],
                base_rpy: [values[10], values[11], values[12]],
                tau: values[13..25].to_vec(),
                qp1_status: Some(QpStatus::MaxIterations),
                qp2_status: Some(QpStatus::Infeasible),
                cone_violations: cones,
            };
            let mut buf = Vec::new();
            write_csv(&mut buf, [&r], 12).unwrap();
            let back = read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back, vec![r]);
        }

        #[test]
        fn metrics_are_non_negative(errs in prop::collection::vec(-50.0..50.0f64, 1..40)) {
            let rows: Vec<_> = errs.iter().enumerate().map(|(k, e)| row(k as f64, [*e, -*e, 2.0 * e], [0.0; 3])).collect();
            let m = compute_metrics(&rows, &target(), &TorqueLimits::symmetric(12, 80.0), 0.0).unwrap();
            prop_assert!(m.rms_force_error_n.iter().all(|x| *x >= 0.0));
            prop_assert!(m.max_force_error_n >= m.rms_force_error_n[0] - 1e-12);
        }
    }
}
