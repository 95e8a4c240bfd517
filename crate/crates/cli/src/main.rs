use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use quadforce::controllers::ControllerKind;
use quadforce::qp::{solve, QpDump};
use quadforce::sim::{log_metrics, run_comparison, run_experiment_with, write_csv, Metrics, Scenario, SimulationLog};
use serde::{Deserialize, Serialize};

const EXIT_VALIDATION: u8 = 2;
const EXIT_SIMULATION: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "quadforce", version, about = "Interaction-force control experiments on a simulated quadruped")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write per-controller CSV logs plus metrics.json.
    Run(RunArgs),
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Run only this controller (proposed, howsm or pidcwcu).
    #[arg(long, conflicts_with = "compare")]
    controller: Option<ControllerKind>,
    /// Run all three controllers side by side.
    #[arg(long)]
    compare: bool,
    /// Output directory; defaults to the scenario's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the simulator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the simulated duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Write the QP problems posed at this tick instead of full logs.
    #[arg(long, value_name = "TICK")]
    dump_qp: Option<usize>,
}

/// One entry of metrics.json.
#[derive(Debug, Serialize, Deserialize)]
struct RunSummary {
    controller: ControllerKind,
    profile: String,
    csv: String,
    failure: Option<String>,
    metrics: Option<Metrics>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricsFile {
    scenario: String,
    runs: Vec<RunSummary>,
}

/// A QP posed at one tick, with the solution the controller used.
#[derive(Debug, Serialize, Deserialize)]
struct QpRecord {
    controller: ControllerKind,
    tick: usize,
    stage: String,
    problem: QpDump,
    solution: Vec<f64>,
}

enum Failure {
    Validation(String),
    Simulation(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Simulation(m)) => {
            eprintln!("simulation failed: {m}");
            ExitCode::from(EXIT_SIMULATION)
        }
    }
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let invalid = |e: &dyn std::fmt::Display| Failure::Validation(e.to_string());
    let mut scenario = Scenario::from_file(&args.scenario).map_err(|e| invalid(&e))?;
    if let Some(seed) = args.seed {
        scenario.sim.seed = seed;
    }
    if let Some(d) = args.duration {
        scenario.sim.duration_s = d;
    }
    if let Some(k) = args.controller {
        scenario.controllers = vec![k];
    } else if args.compare {
        scenario.controllers = ControllerKind::ALL.to_vec();
    }
    let model = scenario.load_model().map_err(|e| invalid(&e))?;
    let out = args.out.clone().unwrap_or_else(|| scenario.output_dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| invalid(&format!("cannot create '{}': {e}", out.display())))?;

    if let Some(tick) = args.dump_qp {
        return dump_qp(&scenario, &model, tick, &out);
    }

    let logs = run_comparison(&scenario, &model, &scenario.controllers);
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for (kind, log) in scenario.controllers.iter().zip(logs) {
        let log = log.map_err(|e| Failure::Simulation(format!("{kind}: {e}")))?;
        let csv = out.join(format!("{}.csv", log.file_stem()));
        write_log(&log, &csv, model.n_joints())?;
        if let Some(f) = &log.failure {
            failures.push(format!("{kind}: {f}"));
        }
        summaries.push(RunSummary {
            controller: log.controller,
            profile: log.profile.clone(),
            csv: csv.file_name().unwrap().to_string_lossy().into_owned(),
            failure: log.failure.clone(),
            metrics: log_metrics(&log, &scenario, &model).ok(),
        });
    }
    let file = MetricsFile {
        scenario: args.scenario.display().to_string(),
        runs: summaries,
    };
    let path = out.join("metrics.json");
    let text = serde_json::to_string_pretty(&file).expect("metrics serialize");
    std::fs::write(&path, text).map_err(|e| Failure::Simulation(format!("cannot write '{}': {e}", path.display())))?;
    print_table(&file.runs);
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Simulation(failures.join("; ")))
    }
}

fn write_log(log: &SimulationLog, path: &Path, n_joints: usize) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| Failure::Simulation(format!("cannot write '{}': {e}", path.display())))?;
    write_csv(BufWriter::new(file), log.rows(), n_joints).map_err(|e| Failure::Simulation(e.to_string()))
}

/// Ranked by z-axis RMS error; runs without metrics go last.
fn print_table(runs: &[RunSummary]) {
    let mut order: Vec<&RunSummary> = runs.iter().collect();
    let key = |r: &RunSummary| r.metrics.as_ref().map_or(f64::INFINITY, |m| m.rms_force_error_n[2]);
    order.sort_by(|a, b| key(a).total_cmp(&key(b)));
    println!(
        "{:<4} {:<10} {:<10} {:>10} {:>10} {:>10} {:>14}  {}",
        "rank", "controller", "profile", "rms_x_n", "rms_y_n", "rms_z_n", "max_base_dev_m", "status"
    );
    for (i, r) in order.iter().enumerate() {
        let status = r.failure.as_deref().unwrap_or("ok");
        match &r.metrics {
            Some(m) => println!(
                "{:<4} {:<10} {:<10} {:>10.4} {:>10.4} {:>10.4} {:>14.6}  {}",
                i + 1,
                r.controller.name(),
                r.profile,
                m.rms_force_error_n[0],
                m.rms_force_error_n[1],
                m.rms_force_error_n[2],
                m.max_base_position_deviation_m,
                status
            ),
            None => println!(
                "{:<4} {:<10} {:<10} {:>10} {:>10} {:>10} {:>14}  {}",
                i + 1,
                r.controller.name(),
                r.profile,
                "-",
                "-",
                "-",
                "-",
                status
            ),
        }
    }
}

fn dump_qp(scenario: &Scenario, model: &quadforce::model::KinematicTree, tick: usize, out: &Path) -> Result<(), Failure> {
    let ticks = scenario.sim.ticks();
    if tick >= ticks {
        return Err(Failure::Validation(format!(
            "field 'dump_qp': tick {tick} is outside the run (0..{ticks})"
        )));
    }
    let mut short = scenario.clone();
    short.sim.duration_s = (tick + 1) as f64 * scenario.sim.timestep_s;
    for &kind in &scenario.controllers {
        if kind == ControllerKind::Pidcwcu {
            return Err(Failure::Validation("field 'controller': pidcwcu solves no QP".into()));
        }
        let mut records = Vec::new();
        let log = run_experiment_with(&short, model, kind, |k, controller, _| {
            if k != tick {
                return;
            }
            let problems = controller.last_problems();
            for (stage, qp) in [("qp1", &problems.qp1), ("qp2", &problems.qp2)] {
                if let Some(qp) = qp {
                    records.push(QpRecord {
                        controller: kind,
                        tick,
                        stage: stage.into(),
                        problem: QpDump::from(qp),
                        solution: solve(qp).tau.iter().copied().collect(),
                    });
                }
            }
        })
        .map_err(|e| Failure::Simulation(e.to_string()))?;
        if records.is_empty() {
            let why = log.failure.unwrap_or_else(|| "no QP was posed".into());
            return Err(Failure::Simulation(format!("{kind}: tick {tick} not reached: {why}")));
        }
        for r in &records {
            let path = out.join(format!("{}_tick{}_{}.json", kind.name(), tick, r.stage));
            let text = serde_json::to_string_pretty(r).expect("dump serializes");
            std::fs::write(&path, text).map_err(|e| Failure::Simulation(format!("cannot write '{}': {e}", path.display())))?;
            println!(
                "{}: {} x {} variables, {} constraint rows",
                path.display(),
                r.problem.a.len(),
                r.problem.a.first().map_or(0, Vec::len),
                r.problem.g.len()
            );
        }
    }
    Ok(())
}
