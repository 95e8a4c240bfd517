//! Contact simulation, reference force profiles and experiment running.

mod experiment;
mod physics;
mod profile;
mod scenario;

pub use experiment::{
    compute_metrics, csv_header, initial_state, log_metrics, read_csv, run_comparison, run_experiment,
    run_experiment_with, write_csv, ExperimentError, LogRow, Metrics, SimulationLog, TickRecord,
    DIVERGENCE_DISTANCE_M, MEASURED_CONE_TOLERANCE_N, TORQUE_LIMIT_TOLERANCE_N_M,
};
pub use physics::{
    contact_dynamics, sim_step, ContactSolution, ContactState, ExternalWrench, SimConfig, SimError, StepResult,
};
pub use profile::{ForceProfile, ProfileError, SineAxis, StepKnot};
pub use scenario::{Scenario, ScenarioError, WrenchSpec};
