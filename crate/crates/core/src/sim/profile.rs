use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("step profile needs at least one knot")]
    EmptySchedule,
    #[error("step knot times must be strictly increasing (knot {0})")]
    UnorderedKnots(usize),
    #[error("profile parameters must be finite")]
    NonFinite,
}

/// One axis of `offset + amplitude·sin(ω t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineAxis {
    pub amplitude_n: f64,
    pub omega_rad_per_s: f64,
    pub offset_n: f64,
}

impl SineAxis {
    pub fn eval(&self, t: f64) -> f64 {
        self.offset_n + self.amplitude_n * (self.omega_rad_per_s * t).sin()
    }
}

/// Value held from `time_s` until the next knot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepKnot {
    pub time_s: f64,
    pub value_n: [f64; 3],
}

/// Desired contact force at the force foot over time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForceProfile {
    Constant { value_n: [f64; 3] },
    Sinewave { axes: [SineAxis; 3] },
    Step { knots: Vec<StepKnot> },
    /// Track whatever force the contact carries with no constraint torque.
    Implicit,
}

impl ForceProfile {
    /// `(30 sin 0.2t, 20 sin t, 140 − 50 sin 2t)` N.
    pub fn reference_sinewave() -> Self {
        let axis = |amplitude_n, omega_rad_per_s, offset_n| SineAxis {
            amplitude_n,
            omega_rad_per_s,
            offset_n,
        };
        ForceProfile::Sinewave {
            axes: [axis(30.0, 0.2, 0.0), axis(20.0, 1.0, 0.0), axis(-50.0, 2.0, 140.0)],
        }
    }

    /// Normal force stepping 100 → 130 → 160 → 130 → 100 N every 6 s.
    pub fn reference_step() -> Self {
        let knot = |time_s, z| StepKnot {
            time_s,
            value_n: [0.0, 0.0, z],
        };
        ForceProfile::Step {
            knots: vec![
                knot(0.0, 100.0),
                knot(6.0, 130.0),
                knot(12.0, 160.0),
                knot(18.0, 130.0),
                knot(24.0, 100.0),
            ],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ForceProfile::Constant { .. } => "constant",
            ForceProfile::Sinewave { .. } => "sinewave",
            ForceProfile::Step { .. } => "step",
            ForceProfile::Implicit => "implicit",
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        match self {
            ForceProfile::Constant { value_n } => {
                if value_n.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(ProfileError::NonFinite)
                }
            }
            ForceProfile::Sinewave { axes } => {
                let finite = axes
                    .iter()
                    .all(|a| a.amplitude_n.is_finite() && a.omega_rad_per_s.is_finite() && a.offset_n.is_finite());
                if finite {
                    Ok(())
                } else {
                    Err(ProfileError::NonFinite)
                }
            }
            ForceProfile::Step { knots } => {
                if knots.is_empty() {
                    return Err(ProfileError::EmptySchedule);
                }
                for (i, k) in knots.iter().enumerate() {
                    if !k.time_s.is_finite() || k.value_n.iter().any(|v| !v.is_finite()) {
                        return Err(ProfileError::NonFinite);
                    }
                    if i > 0 && k.time_s <= knots[i - 1].time_s {
                        return Err(ProfileError::UnorderedKnots(i));
                    }
                }
                Ok(())
            }
            ForceProfile::Implicit => Ok(()),
        }
    }

    /// Reference at time `t`, or `None` for the implicit profile. Step
    /// profiles hold each knot's value; before the first knot they hold the
    /// first value.
    pub fn eval(&self, t: f64) -> Option<Vector3<f64>> {
        match self {
            ForceProfile::Constant { value_n } => Some(Vector3::from(*value_n)),
            ForceProfile::Sinewave { axes } => {
                Some(Vector3::new(axes[0].eval(t), axes[1].eval(t), axes[2].eval(t)))
            }
            ForceProfile::Step { knots } => {
                let k = knots.iter().rev().find(|k| k.time_s <= t).unwrap_or(&knots[0]);
                Some(Vector3::from(k.value_n))
            }
            ForceProfile::Implicit => None,
        }
    }

    /// Times after the first knot at which a step profile changes value.
    pub fn step_times(&self) -> Vec<f64> {
        match self {
            ForceProfile::Step { knots } => knots.iter().skip(1).map(|k| k.time_s).collect(),
            _ => vec![],
        }
    }
}
