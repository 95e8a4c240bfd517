use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::KinematicTree;
use crate::qp::INFINITE_BOUND;

#[derive(Debug, Error, PartialEq)]
pub enum ContactError {
    #[error("contact '{0}': surface triad is not orthonormal")]
    NotOrthonormal(String),
    #[error("contact '{0}': friction coefficient must be finite and non-negative")]
    BadFriction(String),
    #[error("contact '{0}': unknown frame")]
    UnknownFrame(String),
    #[error("no contacts selected for the requested cone stack")]
    EmptySelection,
    #[error("contact set has no motion contact")]
    NoMotionContact,
    #[error("contact '{0}' listed twice")]
    Duplicate(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactRole {
    Motion,
    Force,
}

/// A point contact between a foot frame and a flat surface.
#[derive(Clone, Debug, PartialEq)]
pub struct Contact {
    pub frame: String,
    /// Heading, lateral and normal directions of the surface.
    pub nx: Vector3<f64>,
    pub ny: Vector3<f64>,
    pub nz: Vector3<f64>,
    pub mu: f64,
    pub role: ContactRole,
}

impl Contact {
    /// Contact on level ground with world-aligned triad.
    pub fn flat(frame: &str, mu: f64, role: ContactRole) -> Self {
        Self {
            frame: frame.to_string(),
            nx: Vector3::x(),
            ny: Vector3::y(),
            nz: Vector3::z(),
            mu,
            role,
        }
    }

    pub fn validate(&self) -> Result<(), ContactError> {
        let t = [self.nx, self.ny, self.nz];
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (t[i].dot(&t[j]) - expect).abs() > 1e-9 {
                    return Err(ContactError::NotOrthonormal(self.frame.clone()));
                }
            }
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(ContactError::BadFriction(self.frame.clone()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContactSet {
    pub contacts: Vec<Contact>,
}

impl ContactSet {
    pub fn new(contacts: Vec<Contact>) -> Result<Self, ContactError> {
        for (i, c) in contacts.iter().enumerate() {
            c.validate()?;
            if contacts[..i].iter().any(|o| o.frame == c.frame) {
                return Err(ContactError::Duplicate(c.frame.clone()));
            }
        }
        Ok(Self { contacts })
    }

    pub fn len(&self) -> usize {
        self.contacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contacts.is_empty()
    }

    pub fn n_motion(&self) -> usize {
        self.contacts.iter().filter(|c| c.role == ContactRole::Motion).count()
    }

    pub fn n_force(&self) -> usize {
        self.len() - self.n_motion()
    }

    pub fn frame_indices(&self, model: &KinematicTree) -> Result<Vec<usize>, ContactError> {
        self.contacts
            .iter()
            .map(|c| model.frame_index(&c.frame).ok_or_else(|| ContactError::UnknownFrame(c.frame.clone())))
            .collect()
    }

    /// Checks frames against the model and that a motion contact exists.
    pub fn validate_for(&self, model: &KinematicTree) -> Result<(), ContactError> {
        self.frame_indices(model)?;
        if self.n_motion() == 0 {
            return Err(ContactError::NoMotionContact);
        }
        Ok(())
    }
}

/// Actuator selection `B` and its split into motion and force columns.
#[derive(Clone, Debug)]
pub struct SelectionMatrices {
    pub b: DMatrix<f64>,
    pub b_m: DMatrix<f64>,
    pub b_f: DMatrix<f64>,
    /// Joints driven by the force task.
    pub force_joints: Vec<usize>,
}

impl SelectionMatrices {
    /// Force columns are the joints on the chains of force contacts.
    pub fn new(model: &KinematicTree, contacts: &ContactSet) -> Result<Self, ContactError> {
        let nj = model.n_joints();
        let nv = model.nv();
        let off = model.joint_offset();
        let frames = contacts.frame_indices(model)?;
        let mut force_joints: Vec<usize> = contacts
            .contacts
            .iter()
            .zip(&frames)
            .filter(|(c, _)| c.role == ContactRole::Force)
            .flat_map(|(_, &f)| model.joints_supporting_frame(f))
            .collect();
        force_joints.sort_unstable();
        force_joints.dedup();
        let mut b = DMatrix::zeros(nv, nj);
        let mut b_m = DMatrix::zeros(nv, nj);
        let mut b_f = DMatrix::zeros(nv, nj);
        for j in 0..nj {
            b[(off + j, j)] = 1.0;
            if force_joints.contains(&j) {
                b_f[(off + j, j)] = 1.0;
            } else {
                b_m[(off + j, j)] = 1.0;
            }
        }
        Ok(Self {
            b,
            b_m,
            b_f,
            force_joints,
        })
    }

    /// `B` in place of both halves, removing the split.
    pub fn undivided(&self) -> Self {
        Self {
            b: self.b.clone(),
            b_m: self.b.clone(),
            b_f: self.b.clone(),
            force_joints: (0..self.b.ncols()).collect(),
        }
    }
}

/// Stacked friction pyramids: `lower ≤ C λ ≤ upper`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConePyramid {
    pub c: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub variant: ConeVariant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConeVariant {
    Full,
    Motion,
    Force,
}

/// Four friction facets and the unilateral row of one contact.
pub fn friction_pyramid_rows(contact: &Contact) -> Result<(DMatrix<f64>, [f64; 5], [f64; 5]), ContactError> {
    contact.validate()?;
    let (nx, ny, nz, mu) = (contact.nx, contact.ny, contact.nz, contact.mu);
    let rows = [nx - nz * mu, ny - nz * mu, nx + nz * mu, ny + nz * mu, nz];
    let c = DMatrix::from_fn(5, 3, |r, k| rows[r][k]);
    let inf = INFINITE_BOUND;
    Ok((c, [-inf, -inf, 0.0, 0.0, 0.0], [0.0, 0.0, inf, inf, inf]))
}

/// Block-diagonal pyramid over the contacts selected by `variant`, in
/// contact-set order.
pub fn stack_cones(contacts: &ContactSet, variant: ConeVariant) -> Result<ConePyramid, ContactError> {
    let chosen: Vec<&Contact> = contacts
        .contacts
        .iter()
        .filter(|c| match variant {
            ConeVariant::Full => true,
            ConeVariant::Motion => c.role == ContactRole::Motion,
            ConeVariant::Force => c.role == ContactRole::Force,
        })
        .collect();
    stack_selected(&chosen, variant)
}

pub(crate) fn stack_selected(chosen: &[&Contact], variant: ConeVariant) -> Result<ConePyramid, ContactError> {
    if chosen.is_empty() {
        return Err(ContactError::EmptySelection);
    }
    let k = chosen.len();
    let mut c = DMatrix::zeros(5 * k, 3 * k);
    let mut lower = DVector::zeros(5 * k);
    let mut upper = DVector::zeros(5 * k);
    for (i, contact) in chosen.iter().enumerate() {
        let (ci, lo, up) = friction_pyramid_rows(contact)?;
        c.view_mut((5 * i, 3 * i), (5, 3)).copy_from(&ci);
        for r in 0..5 {
            lower[5 * i + r] = lo[r];
            upper[5 * i + r] = up[r];
        }
    }
    Ok(ConePyramid {
        c,
        lower,
        upper,
        variant,
    })
}

impl ConePyramid {
    /// Largest violation of the pyramid by `lambda` (zero when inside).
    pub fn violation(&self, lambda: &DVector<f64>) -> f64 {
        let v = &self.c * lambda;
        (0..v.len())
            .map(|i| {
                let lo = if self.lower[i] <= -INFINITE_BOUND { 0.0 } else { self.lower[i] - v[i] };
                let up = if self.upper[i] >= INFINITE_BOUND { 0.0 } else { v[i] - self.upper[i] };
                lo.max(up).max(0.0)
            })
            .fold(0.0, f64::max)
    }
}
