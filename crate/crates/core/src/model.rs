//! Serial-chain robot description and kinematics.
//!
//! Every joint is revolute. Link frame `i` is the frame of link `i - 1`
//! rotated about the joint axis (expressed in that predecessor frame) by
//! `q[i]`; the next joint origin sits at `length * direction` in link frame
//! `i`. The base frame is the world frame and the chain starts at its origin.

use std::path::Path;

use nalgebra::{DVector, Matrix3, Matrix3xX, Rotation3, Unit, Vector3};
use serde::Deserialize;

use crate::error::{check_dim, check_finite, Error, Result};

/// Dimension of the positional task space.
pub const TASK_DIM: usize = 3;

const AXIS_NORM_TOL: f64 = 1e-12;

const PAPER7DOF: &str = include_str!("../fixtures/paper7dof.toml");

/// Names accepted by [`RobotModel::preset`].
pub const PRESETS: &[&str] = &["paper7dof"];

#[derive(Debug, Clone, PartialEq)]
pub struct LinkParams {
    /// Joint-to-joint distance, m.
    pub length: f64,
    /// kg.
    pub mass: f64,
    /// Principal inertias (Ixx, Iyy, Izz) about the COM in the link frame, kg m^2.
    pub inertia_diag: Vector3<f64>,
    /// COM location as a fraction of `length` along the link direction.
    pub com_offset: f64,
}

impl LinkParams {
    pub fn new(length: f64, mass: f64, inertia_diag: Vector3<f64>, com_offset: f64) -> Result<Self> {
        let link = Self {
            length,
            mass,
            inertia_diag,
            com_offset,
        };
        link.validate()?;
        Ok(link)
    }

    fn validate(&self) -> Result<()> {
        let values = [self.length, self.mass, self.com_offset];
        check_finite("link parameters", values.iter().chain(self.inertia_diag.iter()))?;
        if self.mass < 0.0 {
            return Err(Error::InvalidParameter(format!("negative mass {}", self.mass)));
        }
        if self.length < 0.0 {
            return Err(Error::InvalidParameter(format!("negative length {}", self.length)));
        }
        if self.inertia_diag.iter().any(|&i| i < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "negative inertia {:?}",
                self.inertia_diag.as_slice()
            )));
        }
        if !(0.0..=1.0).contains(&self.com_offset) {
            return Err(Error::InvalidParameter(format!(
                "com_offset {} outside [0, 1]",
                self.com_offset
            )));
        }
        Ok(())
    }
}

/// Immutable description of an N-link revolute serial chain.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    links: Vec<LinkParams>,
    joint_axes: Vec<Unit<Vector3<f64>>>,
    link_directions: Vec<Unit<Vector3<f64>>>,
    gravity: Vector3<f64>,
}

fn unit_axis(v: Vector3<f64>, what: &str) -> Result<Unit<Vector3<f64>>> {
    check_finite("axis", v.iter())?;
    let norm = v.norm();
    if (norm - 1.0).abs() > AXIS_NORM_TOL {
        return Err(Error::InvalidParameter(format!(
            "{what} {:?} is not unit norm (|a| = {norm})",
            v.as_slice()
        )));
    }
    Ok(Unit::new_unchecked(v))
}

/// Default joint axis: z for even indices, y for odd ones.
pub fn default_axis(index: usize) -> Vector3<f64> {
    if index.is_multiple_of(2) {
        Vector3::z()
    } else {
        Vector3::y()
    }
}

impl RobotModel {
    pub fn new(
        name: impl Into<String>,
        links: Vec<LinkParams>,
        joint_axes: Vec<Vector3<f64>>,
        link_directions: Vec<Vector3<f64>>,
        gravity: Vector3<f64>,
    ) -> Result<Self> {
        check_dim("joint axes", links.len(), joint_axes.len())?;
        check_dim("link directions", links.len(), link_directions.len())?;
        check_finite("gravity", gravity.iter())?;
        for link in &links {
            link.validate()?;
        }
        let joint_axes = joint_axes
            .into_iter()
            .map(|a| unit_axis(a, "joint axis"))
            .collect::<Result<Vec<_>>>()?;
        let link_directions = link_directions
            .into_iter()
            .map(|d| unit_axis(d, "link direction"))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: name.into(),
            links,
            joint_axes,
            link_directions,
            gravity,
        })
    }

    /// Looks up a bundled model by name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper7dof" => Self::from_toml_str(PAPER7DOF, "preset paper7dof"),
            other => Err(Error::InvalidParameter(format!(
                "unknown model preset '{other}' (known: {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path.display().to_string())
    }

    /// Resolves `reference` as a preset name first, then as a file path
    /// relative to `base_dir`.
    pub fn resolve(reference: &str, base_dir: Option<&Path>) -> Result<Self> {
        if PRESETS.contains(&reference) {
            return Self::preset(reference);
        }
        let path = match base_dir {
            Some(dir) => dir.join(reference),
            None => reference.into(),
        };
        Self::load(path)
    }

    pub fn from_toml_str(text: &str, origin: impl Into<String>) -> Result<Self> {
        let origin = origin.into();
        let doc: ModelDocument = toml::from_str(text).map_err(|e| Error::parse(origin.clone(), e))?;
        if doc.link.is_empty() {
            return Err(Error::parse(origin, "model has no [[link]] blocks"));
        }
        let mut links = Vec::with_capacity(doc.link.len());
        let mut axes = Vec::with_capacity(doc.link.len());
        let mut dirs = Vec::with_capacity(doc.link.len());
        for (i, block) in doc.link.into_iter().enumerate() {
            links.push(LinkParams {
                length: block.length_m,
                mass: block.mass_kg,
                inertia_diag: Vector3::new(block.ixx_kgm2, block.iyy_kgm2, block.izz_kgm2),
                com_offset: block.com_offset.unwrap_or(0.5),
            });
            axes.push(block.axis.map(Vector3::from).unwrap_or_else(|| default_axis(i)));
            dirs.push(block.direction.map(Vector3::from).unwrap_or_else(Vector3::z));
        }
        let gravity = doc
            .gravity_mps2
            .map(Vector3::from)
            .unwrap_or_else(|| Vector3::new(0.0, 0.0, -9.81));
        let name = doc.name.unwrap_or_else(|| origin.clone());
        Self::new(name, links, axes, dirs, gravity).map_err(|e| match e {
            Error::InvalidParameter(msg) => Error::parse(origin, msg),
            other => other,
        })
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    /// `dof - 3`; negative for chains too short to position a point in space.
    pub fn redundancy_degree(&self) -> isize {
        self.dof() as isize - TASK_DIM as isize
    }

    pub fn links(&self) -> &[LinkParams] {
        &self.links
    }

    pub fn joint_axes(&self) -> &[Unit<Vector3<f64>>] {
        &self.joint_axes
    }

    pub fn link_directions(&self) -> &[Unit<Vector3<f64>>] {
        &self.link_directions
    }

    pub fn gravity(&self) -> Vector3<f64> {
        self.gravity
    }

    pub fn with_gravity(mut self, gravity: Vector3<f64>) -> Self {
        self.gravity = gravity;
        self
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    /// Rejects chains that cannot host the positional task.
    pub fn require_task_capable(&self) -> Result<()> {
        if self.dof() < TASK_DIM {
            Err(Error::InsufficientDof {
                dof: self.dof(),
                task: TASK_DIM,
            })
        } else {
            Ok(())
        }
    }

    pub(crate) fn check_joint_vector(&self, what: &'static str, v: &DVector<f64>) -> Result<()> {
        check_dim(what, self.dof(), v.len())?;
        check_finite(what, v.iter())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    name: Option<String>,
    gravity_mps2: Option<[f64; 3]>,
    #[serde(default)]
    link: Vec<LinkBlock>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkBlock {
    length_m: f64,
    mass_kg: f64,
    ixx_kgm2: f64,
    iyy_kgm2: f64,
    izz_kgm2: f64,
    com_offset: Option<f64>,
    axis: Option<[f64; 3]>,
    direction: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub qdd: Option<DVector<f64>>,
}

impl JointState {
    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qd: DVector::zeros(n),
            qdd: None,
        }
    }

    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        model.check_joint_vector("q", &self.q)?;
        model.check_joint_vector("qd", &self.qd)?;
        if let Some(qdd) = &self.qdd {
            model.check_joint_vector("qdd", qdd)?;
        }
        Ok(())
    }
}

/// End-effector position, velocity and acceleration in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskState {
    pub x: Vector3<f64>,
    pub xd: Vector3<f64>,
    pub xdd: Vector3<f64>,
}

impl TaskState {
    pub fn at(x: Vector3<f64>) -> Self {
        Self {
            x,
            xd: Vector3::zeros(),
            xdd: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x
            .iter()
            .chain(self.xd.iter())
            .chain(self.xdd.iter())
            .all(|v| v.is_finite())
    }
}

/// World-frame geometry of the chain at one configuration.
#[derive(Debug, Clone)]
pub struct ChainKinematics {
    /// Orientation of each link frame (after its joint rotation).
    pub rotations: Vec<Matrix3<f64>>,
    /// Position of each joint.
    pub joint_origins: Vec<Vector3<f64>>,
    /// World-frame direction of each joint axis.
    pub joint_axes: Vec<Vector3<f64>>,
    /// World-frame COM of each link.
    pub com: Vec<Vector3<f64>>,
    pub end_effector: Vector3<f64>,
}

pub fn forward_kinematics(model: &RobotModel, q: &DVector<f64>) -> Result<ChainKinematics> {
    model.check_joint_vector("q", q)?;
    let n = model.dof();
    let mut rotations = Vec::with_capacity(n);
    let mut joint_origins = Vec::with_capacity(n);
    let mut joint_axes = Vec::with_capacity(n);
    let mut com = Vec::with_capacity(n);

    let mut parent = Matrix3::identity();
    let mut origin = Vector3::zeros();
    for i in 0..n {
        let local_axis = model.joint_axes[i];
        let rot = parent * Rotation3::from_axis_angle(&local_axis, q[i]).into_inner();
        let link = &model.links[i];
        let along = rot * model.link_directions[i].into_inner();
        joint_axes.push(parent * local_axis.into_inner());
        joint_origins.push(origin);
        com.push(origin + along * (link.com_offset * link.length));
        rotations.push(rot);
        origin += along * link.length;
        parent = rot;
    }
    Ok(ChainKinematics {
        rotations,
        joint_origins,
        joint_axes,
        com,
        end_effector: origin,
    })
}

pub fn jacobian(model: &RobotModel, q: &DVector<f64>) -> Result<Matrix3xX<f64>> {
    Ok(forward_kinematics(model, q)?.jacobian())
}

pub fn jacobian_dot(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> Result<Matrix3xX<f64>> {
    model.check_joint_vector("qd", qd)?;
    Ok(forward_kinematics(model, q)?.jacobian_dot(qd))
}

pub fn com_positions(model: &RobotModel, q: &DVector<f64>) -> Result<Vec<Vector3<f64>>> {
    Ok(forward_kinematics(model, q)?.com)
}

impl ChainKinematics {
    pub fn dof(&self) -> usize {
        self.joint_origins.len()
    }

    /// Translational Jacobian of the end-effector.
    pub fn jacobian(&self) -> Matrix3xX<f64> {
        self.point_jacobian(self.dof() - 1, &self.end_effector)
    }

    /// Translational Jacobian of a world point rigidly attached to `link`.
    /// Columns of joints distal to `link` are zero.
    pub fn point_jacobian(&self, link: usize, point: &Vector3<f64>) -> Matrix3xX<f64> {
        let mut jac = Matrix3xX::zeros(self.dof());
        for j in 0..=link {
            let col = self.joint_axes[j].cross(&(point - self.joint_origins[j]));
            jac.set_column(j, &col);
        }
        jac
    }

    /// Time derivative of the end-effector Jacobian along `qd`.
    pub fn jacobian_dot(&self, qd: &DVector<f64>) -> Matrix3xX<f64> {
        let n = self.dof();
        // angular velocity of each link and linear velocity of each joint origin
        let mut omega = Vec::with_capacity(n);
        let mut v_origin = Vec::with_capacity(n);
        let mut w = Vector3::zeros();
        let mut v = Vector3::zeros();
        for i in 0..n {
            if i > 0 {
                v += w.cross(&(self.joint_origins[i] - self.joint_origins[i - 1]));
            }
            v_origin.push(v);
            w += self.joint_axes[i] * qd[i];
            omega.push(w);
        }
        let v_ee = v + w.cross(&(self.end_effector - self.joint_origins[n - 1]));

        let mut jd = Matrix3xX::zeros(n);
        for i in 0..n {
            let axis_rate = omega[i].cross(&self.joint_axes[i]);
            let lever = self.end_effector - self.joint_origins[i];
            let lever_rate = v_ee - v_origin[i];
            let col = axis_rate.cross(&lever) + self.joint_axes[i].cross(&lever_rate);
            jd.set_column(i, &col);
        }
        jd
    }

    /// World-frame position of a point given in link coordinates.
    pub fn link_point(&self, link: usize, local: &Vector3<f64>) -> Vector3<f64> {
        self.joint_origins[link] + self.rotations[link] * local
    }
}
