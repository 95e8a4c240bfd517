//! Whole-body interaction-force control for underactuated quadrupeds using
//! projected inverse dynamics, with a constraint-based contact simulator for
//! closed-loop experiments.

pub mod controllers;
pub mod model;
pub mod projection;
pub mod qp;
pub mod rigidbody;
pub mod sim;
pub mod standing;
pub mod task_control;
pub mod testing;

/// The bundled 12-joint quadruped description.
pub const DEFAULT_MODEL_JSON: &str = include_str!("../../../models/quadruped.json");
