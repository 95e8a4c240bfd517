use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{Contact, ContactRole, ContactSet, ControllerConfig, ControllerKind, ForceEmbedding, TorqueLimits};
use crate::model::{build_model, BuildOptions, KinematicTree, ModelDoc, ModelError};
use crate::task_control::ImpedanceTask;

use super::physics::SimConfig;
use super::profile::ForceProfile;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario '{path}': {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("field '{field}': {message}")]
    Field { field: &'static str, message: String },
    #[error("field 'model_path': {0}")]
    Model(#[from] ModelError),
}

fn field(field: &'static str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Field {
        field,
        message: message.into(),
    }
}

/// External wrench `(force N; moment N·m)` pushing on a frame for the whole run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WrenchSpec {
    pub frame: String,
    pub wrench: [f64; 6],
}

fn default_embedding() -> ForceEmbedding {
    ForceEmbedding::Implicit
}

fn default_skip() -> f64 {
    1.0
}

fn default_pinv_tol() -> f64 {
    crate::projection::DEFAULT_PINV_TOL
}

fn default_truncation_tol() -> f64 {
    crate::projection::DEFAULT_TRUNCATION_TOL
}

/// A complete closed-loop experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Robot description, relative to the scenario file. The bundled model
    /// is used when absent.
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    pub controllers: Vec<ControllerKind>,
    pub force_profile: ForceProfile,
    pub force_leg: String,
    pub contact_frames: Vec<String>,
    pub friction_coefficient: f64,
    pub task_frame: String,
    pub desired_position_m: [f64; 3],
    pub desired_rpy_rad: [f64; 3],
    pub kp_linear_n_per_m: f64,
    pub kp_angular_n_m_per_rad: f64,
    pub kd_linear_n_s_per_m: f64,
    pub kd_angular_n_m_s_per_rad: f64,
    pub torque_limit_n_m: f64,
    #[serde(default)]
    pub estimate_external_force: bool,
    #[serde(default = "default_embedding")]
    pub force_embedding: ForceEmbedding,
    #[serde(default = "default_pinv_tol")]
    pub pinv_tolerance: f64,
    #[serde(default = "default_truncation_tol")]
    pub truncation_tolerance: f64,
    #[serde(default = "default_skip")]
    pub transient_skip_s: f64,
    /// Hip abduction, hip flexion and knee angles seeding the standing pose.
    pub standing_joint_guess_rad: [f64; 3],
    #[serde(default)]
    pub external_wrench: Option<WrenchSpec>,
    pub sim: SimConfig,
    pub output_dir: PathBuf,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Scenario {
    /// Sinewave force tracking on the front-left foot.
    pub fn reference_sinewave() -> Self {
        Self {
            model_path: None,
            controllers: ControllerKind::ALL.to_vec(),
            force_profile: ForceProfile::reference_sinewave(),
            force_leg: "LF_foot".into(),
            contact_frames: ["LF_foot", "RF_foot", "LH_foot", "RH_foot"].map(String::from).to_vec(),
            friction_coefficient: 0.7,
            task_frame: "torso".into(),
            desired_position_m: [0.0, 0.0, 0.57],
            desired_rpy_rad: [0.0; 3],
            kp_linear_n_per_m: 2000.0,
            kp_angular_n_m_per_rad: 2000.0,
            kd_linear_n_s_per_m: 100.0,
            kd_angular_n_m_s_per_rad: 100.0,
            torque_limit_n_m: 80.0,
            estimate_external_force: false,
            force_embedding: default_embedding(),
            pinv_tolerance: default_pinv_tol(),
            truncation_tolerance: default_truncation_tol(),
            transient_skip_s: 1.0,
            standing_joint_guess_rad: [0.0, 0.6, -1.2],
            external_wrench: None,
            sim: SimConfig::default(),
            output_dir: PathBuf::from("out"),
            base_dir: PathBuf::new(),
        }
    }

    /// Step force tracking on the front-left foot.
    pub fn reference_step() -> Self {
        Self {
            force_profile: ForceProfile::reference_step(),
            ..Self::reference_sinewave()
        }
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let mut s: Scenario = serde_json::from_str(text)?;
        s.base_dir = base_dir.to_path_buf();
        Ok(s)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &dir)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Loads the robot model and checks every field against it.
    pub fn load_model(&self) -> Result<KinematicTree, ScenarioError> {
        let doc = match &self.model_path {
            Some(p) => {
                let path = self.base_dir.join(p);
                if !path.is_file() {
                    return Err(field("model_path", format!("'{}' does not exist", path.display())));
                }
                ModelDoc::from_file(&path)?
            }
            None => ModelDoc::from_json(crate::DEFAULT_MODEL_JSON)?,
        };
        let model = build_model(&doc, BuildOptions::default())?;
        self.validate(&model)?;
        Ok(model)
    }

    pub fn validate(&self, model: &KinematicTree) -> Result<(), ScenarioError> {
        if self.controllers.is_empty() {
            return Err(field("controllers", "at least one controller is required"));
        }
        self.force_profile
            .validate()
            .map_err(|e| field("force_profile", e.to_string()))?;
        self.sim.validate().map_err(|e| field("sim", e.to_string()))?;
        for f in &self.contact_frames {
            if model.frame_index(f).is_none() {
                return Err(field("contact_frames", format!("unknown frame '{f}'")));
            }
        }
        if !self.contact_frames.contains(&self.force_leg) {
            return Err(field("force_leg", format!("'{}' is not among contact_frames", self.force_leg)));
        }
        if self.contact_frames.len() < 2 {
            return Err(field("contact_frames", "need the force leg and at least one motion contact"));
        }
        if model.frame_index(&self.task_frame).is_none() {
            return Err(field("task_frame", format!("unknown frame '{}'", self.task_frame)));
        }
        if !(self.friction_coefficient.is_finite() && self.friction_coefficient >= 0.0) {
            return Err(field("friction_coefficient", "must be finite and non-negative"));
        }
        let gains = [
            ("kp_linear_n_per_m", self.kp_linear_n_per_m),
            ("kp_angular_n_m_per_rad", self.kp_angular_n_m_per_rad),
            ("kd_linear_n_s_per_m", self.kd_linear_n_s_per_m),
            ("kd_angular_n_m_s_per_rad", self.kd_angular_n_m_s_per_rad),
        ];
        for (name, g) in gains {
            if !(g > 0.0 && g.is_finite()) {
                return Err(field(name, "gain must be positive"));
            }
        }
        if !(self.torque_limit_n_m > 0.0) {
            return Err(field("torque_limit_n_m", "must be positive"));
        }
        if !(self.transient_skip_s >= 0.0) {
            return Err(field("transient_skip_s", "must be non-negative"));
        }
        if self.desired_position_m.iter().chain(&self.desired_rpy_rad).any(|x| !x.is_finite()) {
            return Err(field("desired_position_m", "pose must be finite"));
        }
        if let Some(w) = &self.external_wrench {
            if model.frame_index(&w.frame).is_none() {
                return Err(field("external_wrench", format!("unknown frame '{}'", w.frame)));
            }
        }
        Ok(())
    }

    pub fn desired_pose(&self) -> Isometry3<f64> {
        let [r, p, y] = self.desired_rpy_rad;
        Isometry3::from_parts(
            Translation3::from(Vector3::from(self.desired_position_m)),
            UnitQuaternion::from_euler_angles(r, p, y),
        )
    }

    pub fn task(&self) -> ImpedanceTask {
        let (kp, ka) = (self.kp_linear_n_per_m, self.kp_angular_n_m_per_rad);
        let (dp, da) = (self.kd_linear_n_s_per_m, self.kd_angular_n_m_s_per_rad);
        ImpedanceTask::pose(
            &self.task_frame,
            self.desired_pose(),
            [kp, kp, kp, ka, ka, ka],
            [dp, dp, dp, da, da, da],
        )
    }

    pub fn contact_set(&self) -> ContactSet {
        let contacts = self
            .contact_frames
            .iter()
            .map(|f| {
                let role = if *f == self.force_leg {
                    ContactRole::Force
                } else {
                    ContactRole::Motion
                };
                Contact::flat(f, self.friction_coefficient, role)
            })
            .collect();
        ContactSet::new(contacts).expect("validated contact frames")
    }

    pub fn controller_config(&self, kind: ControllerKind, model: &KinematicTree) -> ControllerConfig {
        ControllerConfig {
            kind,
            limits: TorqueLimits::symmetric(model.n_joints(), self.torque_limit_n_m),
            pinv_tol: self.pinv_tolerance,
            truncation_tol: self.truncation_tolerance,
            estimate_external_force: self.estimate_external_force,
            dt: self.sim.timestep_s,
            embedding: self.force_embedding,
        }
    }
}
