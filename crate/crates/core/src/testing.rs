//! Shared fixtures for unit and integration tests.

use nalgebra::DVector;

use crate::model::{build_model, BuildOptions, KinematicTree, ModelDoc};
use crate::rigidbody::GeneralizedState;
use crate::standing::standing_under_hips;

pub const FOOT_FRAMES: [&str; 4] = ["LF_foot", "RF_foot", "LH_foot", "RH_foot"];
pub const STANDING_HEIGHT: f64 = 0.57;

/// The shipped quadruped.
pub fn default_model() -> KinematicTree {
    let doc = ModelDoc::from_json(crate::DEFAULT_MODEL_JSON).expect("shipped model parses");
    build_model(&doc, BuildOptions::default()).expect("shipped model validates")
}

pub fn foot_indices(model: &KinematicTree) -> Vec<usize> {
    FOOT_FRAMES
        .iter()
        .map(|n| model.frame_index(n).expect("foot frame"))
        .collect()
}

/// Standing guess: hip abduction 0, hip flexion 0.6 rad, knee −1.2 rad.
pub fn standing_guess(model: &KinematicTree) -> DVector<f64> {
    DVector::from_fn(model.n_joints(), |i, _| match i % 3 {
        0 => 0.0,
        1 => 0.6,
        _ => -1.2,
    })
}

/// All four feet on the ground, torso level at the standing height, at rest.
pub fn nominal_state(model: &KinematicTree) -> GeneralizedState {
    standing_under_hips(
        model,
        STANDING_HEIGHT,
        0.0,
        &foot_indices(model),
        &standing_guess(model),
    )
    .expect("standing pose")
}
