//! Robot model description and the validated kinematic tree built from it.
//!
//! The on-disk format is JSON:
//!
//! ```json
//! {
//!   "name": "quadruped",
//!   "gravity": [0.0, 0.0, -9.81],                  // m/s^2, world frame
//!   "links": [
//!     { "name": "torso",
//!       "mass_kg": 20.0,
//!       "com_m": [0.0, 0.0, 0.0],                  // in the link frame
//!       "inertia_kg_m2": [[..], [..], [..]] }      // about the COM, link axes
//!   ],
//!   "joints": [
//!     { "name": "base", "type": "floating", "child": "torso" },
//!     { "name": "LF_HAA", "type": "revolute",
//!       "parent": "torso", "child": "LF_hip",
//!       "axis": [1.0, 0.0, 0.0],                   // unit vector, joint frame
//!       "origin_xyz_m": [0.3, 0.2, 0.0],           // parent link -> joint frame
//!       "origin_rpy_rad": [0.0, 0.0, 0.0] }
//!   ],
//!   "frames": [
//!     { "name": "LF_foot", "link": "LF_shank", "offset_m": [0, 0, -0.3], "kind": "point" },
//!     { "name": "torso", "link": "torso", "offset_m": [0, 0, 0], "kind": "pose" }
//!   ]
//! }
//! ```
//!
//! Revolute joints are numbered in file order; that order fixes the layout of
//! joint positions, velocities and torques everywhere else in the crate.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid model: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ModelError {
    ModelError::Invalid(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Floating,
    Revolute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    /// Position-only frame; 3-row Jacobian (point contacts, swing feet).
    Point,
    /// Full pose frame; 6-row Jacobian ordered (linear, angular).
    Pose,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinkDoc {
    pub name: String,
    pub mass_kg: f64,
    #[serde(default)]
    pub com_m: [f64; 3],
    pub inertia_kg_m2: [[f64; 3]; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointDoc {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: JointKind,
    #[serde(default)]
    pub parent: Option<String>,
    pub child: String,
    #[serde(default)]
    pub axis: Option<[f64; 3]>,
    #[serde(default)]
    pub origin_xyz_m: [f64; 3],
    #[serde(default)]
    pub origin_rpy_rad: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameDoc {
    pub name: String,
    pub link: String,
    #[serde(default)]
    pub offset_m: [f64; 3],
    pub kind: FrameKind,
}

/// Serialized robot description, exactly as stored on disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelDoc {
    #[serde(default)]
    pub name: String,
    pub gravity: [f64; 3],
    pub links: Vec<LinkDoc>,
    pub joints: Vec<JointDoc>,
    #[serde(default)]
    pub frames: Vec<FrameDoc>,
}

impl ModelDoc {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Relaxations used only by unit tests and analytic examples.
#[derive(Clone, Copy, Debug, Default)]
pub struct BuildOptions {
    /// Permit a tree rooted at a revolute joint attached to the world.
    pub allow_fixed_base: bool,
    /// Permit positive semi-definite (e.g. point-mass) inertia tensors.
    pub allow_point_masses: bool,
}

impl BuildOptions {
    pub fn test_mode() -> Self {
        Self {
            allow_fixed_base: true,
            allow_point_masses: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Link {
    pub name: String,
    pub mass: f64,
    pub com: Vector3<f64>,
    pub inertia: Matrix3<f64>,
}

#[derive(Clone, Debug)]
pub struct Body {
    pub link: Link,
    /// Index of the parent body, `None` for the root.
    pub parent: Option<usize>,
    pub joint_name: String,
    pub joint_kind: JointKind,
    /// Fixed transform parent link frame -> joint frame.
    pub origin: Isometry3<f64>,
    /// Rotation axis in the joint frame (revolute only).
    pub axis: Vector3<f64>,
    /// Offset into the generalized velocity vector.
    pub v_index: usize,
    /// Offset into the joint position vector (revolute only).
    pub q_index: usize,
}

#[derive(Clone, Debug)]
pub struct Frame {
    pub name: String,
    pub body: usize,
    pub offset: Vector3<f64>,
    pub kind: FrameKind,
}

/// Validated, immutable kinematic tree. Bodies are stored in topological
/// order (every parent precedes its children).
#[derive(Clone, Debug)]
pub struct KinematicTree {
    pub name: String,
    pub bodies: Vec<Body>,
    pub frames: Vec<Frame>,
    pub gravity: Vector3<f64>,
    floating_base: bool,
    n_joints: usize,
    joint_names: Vec<String>,
    /// For each revolute joint (file order) the body it drives.
    joint_bodies: Vec<usize>,
}

impl KinematicTree {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        build_model(&ModelDoc::from_file(path)?, BuildOptions::default())
    }

    pub fn has_floating_base(&self) -> bool {
        self.floating_base
    }

    /// Number of actuated (revolute) joints.
    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    /// Dimension of the generalized velocity.
    pub fn nv(&self) -> usize {
        self.n_joints + if self.floating_base { 6 } else { 0 }
    }

    /// Offset of the first joint coordinate inside the generalized velocity.
    pub fn joint_offset(&self) -> usize {
        if self.floating_base {
            6
        } else {
            0
        }
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn total_mass(&self) -> f64 {
        self.bodies.iter().map(|b| b.link.mass).sum()
    }

    pub fn frame_index(&self, name: &str) -> Option<usize> {
        self.frames.iter().position(|f| f.name == name)
    }

    pub fn frame(&self, name: &str) -> Option<&Frame> {
        self.frames.iter().find(|f| f.name == name)
    }

    /// Ancestors of `body` including itself, root last.
    pub fn chain(&self, body: usize) -> Vec<usize> {
        let mut out = vec![body];
        let mut cur = body;
        while let Some(p) = self.bodies[cur].parent {
            out.push(p);
            cur = p;
        }
        out
    }

    /// Joint indices (0..n_joints) of the revolute joints that move `frame`.
    pub fn joints_supporting_frame(&self, frame: usize) -> Vec<usize> {
        let mut joints: Vec<usize> = self
            .chain(self.frames[frame].body)
            .into_iter()
            .filter(|&b| self.bodies[b].joint_kind == JointKind::Revolute)
            .map(|b| self.bodies[b].q_index)
            .collect();
        joints.sort_unstable();
        joints
    }

    pub fn joint_body(&self, joint: usize) -> usize {
        self.joint_bodies[joint]
    }
}

fn is_spd(m: &Matrix3<f64>, allow_semidefinite: bool) -> bool {
    if (m - m.transpose()).amax() > 1e-9 * (1.0 + m.amax()) {
        return false;
    }
    let eig = m.symmetric_eigenvalues();
    let min = eig.min();
    if allow_semidefinite {
        min >= -1e-12
    } else {
        min > 0.0
    }
}

fn rpy_rotation(rpy: [f64; 3]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2])
}

/// Validates a model document and builds the kinematic tree.
pub fn build_model(doc: &ModelDoc, opts: BuildOptions) -> Result<KinematicTree, ModelError> {
    if doc.links.is_empty() {
        return Err(invalid("model has no links"));
    }
    let gravity = Vector3::from(doc.gravity);
    if !gravity.iter().all(|g| g.is_finite()) {
        return Err(invalid("gravity must be finite"));
    }

    let mut link_ids: HashMap<&str, usize> = HashMap::new();
    for (i, l) in doc.links.iter().enumerate() {
        if link_ids.insert(l.name.as_str(), i).is_some() {
            return Err(invalid(format!("duplicate link name '{}'", l.name)));
        }
        if !(l.mass_kg > 0.0) || !l.mass_kg.is_finite() {
            return Err(invalid(format!(
                "link '{}' has non-positive mass {}",
                l.name, l.mass_kg
            )));
        }
        let inertia = Matrix3::from_fn(|r, c| l.inertia_kg_m2[r][c]);
        if !is_spd(&inertia, opts.allow_point_masses) {
            return Err(invalid(format!(
                "link '{}' inertia tensor is not symmetric positive definite",
                l.name
            )));
        }
    }

    // Each link is the child of exactly one joint.
    let mut joint_of_link: Vec<Option<usize>> = vec![None; doc.links.len()];
    let mut floating = 0usize;
    for (j, jd) in doc.joints.iter().enumerate() {
        let child = *link_ids.get(jd.child.as_str()).ok_or_else(|| {
            invalid(format!("joint '{}' references unknown child link '{}'", jd.name, jd.child))
        })?;
        if joint_of_link[child].replace(j).is_some() {
            return Err(invalid(format!("link '{}' is the child of more than one joint", jd.child)));
        }
        match jd.kind {
            JointKind::Floating => {
                floating += 1;
                if jd.parent.is_some() {
                    return Err(invalid(format!(
                        "floating joint '{}' must attach to the world (no parent)",
                        jd.name
                    )));
                }
            }
            JointKind::Revolute => {
                let axis = jd.axis.ok_or_else(|| {
                    invalid(format!("revolute joint '{}' has no axis", jd.name))
                })?;
                let n = Vector3::from(axis).norm();
                if (n - 1.0).abs() > 1e-9 {
                    return Err(invalid(format!(
                        "joint '{}' axis is not unit norm (|a| = {n})",
                        jd.name
                    )));
                }
                if let Some(p) = &jd.parent {
                    if !link_ids.contains_key(p.as_str()) {
                        return Err(invalid(format!(
                            "joint '{}' references unknown parent link '{p}'",
                            jd.name
                        )));
                    }
                } else if !opts.allow_fixed_base {
                    return Err(invalid(format!(
                        "revolute joint '{}' has no parent; a floating-base root is required",
                        jd.name
                    )));
                }
            }
        }
    }
    if floating > 1 {
        return Err(invalid("more than one floating-base joint"));
    }
    if floating == 0 && !opts.allow_fixed_base {
        return Err(invalid("missing floating-base joint"));
    }
    for (i, j) in joint_of_link.iter().enumerate() {
        if j.is_none() {
            return Err(invalid(format!("link '{}' is not attached by any joint", doc.links[i].name)));
        }
    }
    let roots: Vec<usize> = (0..doc.links.len())
        .filter(|&l| doc.joints[joint_of_link[l].unwrap()].parent.is_none())
        .collect();
    if roots.len() != 1 {
        return Err(invalid(format!("expected exactly one root link, found {}", roots.len())));
    }

    // Topological order from the root; anything unreachable sits on a cycle.
    let parent_link = |l: usize| -> Option<usize> {
        doc.joints[joint_of_link[l].unwrap()]
            .parent
            .as_ref()
            .map(|p| link_ids[p.as_str()])
    };
    let mut order: Vec<usize> = vec![roots[0]];
    let mut placed = vec![false; doc.links.len()];
    placed[roots[0]] = true;
    let mut head = 0;
    while head < order.len() {
        let cur = order[head];
        head += 1;
        for l in 0..doc.links.len() {
            if !placed[l] && parent_link(l) == Some(cur) {
                placed[l] = true;
                order.push(l);
            }
        }
    }
    if order.len() != doc.links.len() {
        let stuck: Vec<&str> = (0..doc.links.len())
            .filter(|&l| !placed[l])
            .map(|l| doc.links[l].name.as_str())
            .collect();
        return Err(invalid(format!("cycle in kinematic tree involving links {stuck:?}")));
    }
    let mut body_of_link = vec![0usize; doc.links.len()];
    for (b, &l) in order.iter().enumerate() {
        body_of_link[l] = b;
    }

    // Joint coordinates follow file order of the revolute joints.
    let floating_base = floating == 1;
    let mut q_index_of_joint = vec![usize::MAX; doc.joints.len()];
    let mut joint_names = Vec::new();
    for (j, jd) in doc.joints.iter().enumerate() {
        if jd.kind == JointKind::Revolute {
            q_index_of_joint[j] = joint_names.len();
            joint_names.push(jd.name.clone());
        }
    }
    let base_dofs = if floating_base { 6 } else { 0 };

    let mut joint_bodies = vec![0usize; joint_names.len()];
    let bodies: Vec<Body> = order
        .iter()
        .enumerate()
        .map(|(b, &l)| {
            let j = joint_of_link[l].unwrap();
            let jd = &doc.joints[j];
            let ld = &doc.links[l];
            let (v_index, q_index) = match jd.kind {
                JointKind::Floating => (0, 0),
                JointKind::Revolute => {
                    joint_bodies[q_index_of_joint[j]] = b;
                    (base_dofs + q_index_of_joint[j], q_index_of_joint[j])
                }
            };
            Body {
                link: Link {
                    name: ld.name.clone(),
                    mass: ld.mass_kg,
                    com: Vector3::from(ld.com_m),
                    inertia: Matrix3::from_fn(|r, c| ld.inertia_kg_m2[r][c]),
                },
                parent: parent_link(l).map(|p| body_of_link[p]),
                joint_name: jd.name.clone(),
                joint_kind: jd.kind,
                origin: Isometry3::from_parts(
                    Translation3::from(Vector3::from(jd.origin_xyz_m)),
                    rpy_rotation(jd.origin_rpy_rad),
                ),
                axis: jd.axis.map(Vector3::from).unwrap_or_else(Vector3::zeros),
                v_index,
                q_index,
            }
        })
        .collect();

    let mut frames = Vec::with_capacity(doc.frames.len());
    for fd in &doc.frames {
        let l = *link_ids.get(fd.link.as_str()).ok_or_else(|| {
            invalid(format!("frame '{}' references unknown link '{}'", fd.name, fd.link))
        })?;
        if frames.iter().any(|f: &Frame| f.name == fd.name) {
            return Err(invalid(format!("duplicate frame name '{}'", fd.name)));
        }
        frames.push(Frame {
            name: fd.name.clone(),
            body: body_of_link[l],
            offset: Vector3::from(fd.offset_m),
            kind: fd.kind,
        });
    }

    Ok(KinematicTree {
        name: doc.name.clone(),
        n_joints: joint_names.len(),
        bodies,
        frames,
        gravity,
        floating_base,
        joint_names,
        joint_bodies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn pendulum_doc() -> ModelDoc {
        ModelDoc::from_json(
            r#"{
            "gravity": [0, 0, -9.81],
            "links": [{ "name": "bob", "mass_kg": 1.0, "com_m": [0, 0, -1.0],
                        "inertia_kg_m2": [[0,0,0],[0,0,0],[0,0,0]] }],
            "joints": [{ "name": "pivot", "type": "revolute", "child": "bob", "axis": [0, 1, 0] }],
            "frames": [{ "name": "tip", "link": "bob", "offset_m": [0, 0, -1.0], "kind": "point" }]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn pendulum_in_test_mode() {
        let tree = build_model(&pendulum_doc(), BuildOptions::test_mode()).unwrap();
        assert_eq!(tree.n_joints(), 1);
        assert_eq!(tree.nv(), 1);
        assert!(!tree.has_floating_base());
    }

    #[test]
    fn pendulum_rejected_outside_test_mode() {
        let mut doc = pendulum_doc();
        doc.links[0].inertia_kg_m2 = [[1e-3, 0.0, 0.0], [0.0, 1e-3, 0.0], [0.0, 0.0, 1e-3]];
        let err = build_model(&doc, BuildOptions::default()).unwrap_err();
        assert!(err.to_string().contains("floating-base"), "{err}");
    }

    #[test]
    fn zero_mass_rejected() {
        let mut doc = pendulum_doc();
        doc.links[0].mass_kg = 0.0;
        let err = build_model(&doc, BuildOptions::test_mode()).unwrap_err();
        assert!(err.to_string().contains("non-positive mass"), "{err}");
    }

    #[test]
    fn non_spd_inertia_rejected() {
        let mut doc = pendulum_doc();
        doc.links[0].inertia_kg_m2 = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
        let err = build_model(&doc, BuildOptions::test_mode()).unwrap_err();
        assert!(err.to_string().contains("positive definite"), "{err}");
    }

    #[test]
    fn cycle_rejected() {
        let doc = ModelDoc::from_json(
            r#"{
            "gravity": [0, 0, -9.81],
            "links": [
                { "name": "base", "mass_kg": 1, "inertia_kg_m2": [[1,0,0],[0,1,0],[0,0,1]] },
                { "name": "a", "mass_kg": 1, "inertia_kg_m2": [[1,0,0],[0,1,0],[0,0,1]] },
                { "name": "b", "mass_kg": 1, "inertia_kg_m2": [[1,0,0],[0,1,0],[0,0,1]] }
            ],
            "joints": [
                { "name": "root", "type": "floating", "child": "base" },
                { "name": "ja", "type": "revolute", "parent": "b", "child": "a", "axis": [0,0,1] },
                { "name": "jb", "type": "revolute", "parent": "a", "child": "b", "axis": [0,0,1] }
            ]
        }"#,
        )
        .unwrap();
        let err = build_model(&doc, BuildOptions::default()).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn non_unit_axis_rejected() {
        let mut doc = pendulum_doc();
        doc.joints[0].axis = Some([0.0, 2.0, 0.0]);
        assert!(build_model(&doc, BuildOptions::test_mode()).is_err());
    }
}
