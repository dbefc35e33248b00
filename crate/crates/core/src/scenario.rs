//! Scenario files: everything that determines a run, including the seed.
//!
//! Scenarios are TOML documents; see `fixtures/*.toml` for annotated
//! examples. Units are carried in field names.

use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::PdGains;
use crate::dynamics::FrictionParams;
use crate::error::{Error, Result};
use crate::model::RobotModel;
use crate::observer::{qfilter_from_cutoff, NominalModel, QFilterSpec};

pub const REGULATION_FIXTURE: &str = include_str!("../fixtures/regulation.toml");
pub const REACHING_FIXTURE: &str = include_str!("../fixtures/reaching.toml");

/// Rectangular external force pulse on one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationEvent {
    /// Zero-based link index.
    pub link: usize,
    /// Application point in link coordinates, m.
    pub point_m: [f64; 3],
    /// World-frame force, N.
    pub force_n: [f64; 3],
    pub start_s: f64,
    pub duration_s: f64,
}

impl PerturbationEvent {
    /// Half-open window `[start, start + duration)`, with a 1 ns guard so
    /// sample times that land on an edge are not split by rounding.
    pub fn is_active(&self, t: f64) -> bool {
        const EDGE: f64 = 1e-9;
        t >= self.start_s - EDGE && t < self.start_s + self.duration_s - EDGE
    }

    pub fn validate(&self, dof: usize) -> Result<()> {
        if self.link >= dof {
            return Err(Error::InvalidParameter(format!(
                "perturbation link {} out of range for {dof} links",
                self.link
            )));
        }
        if !(self.duration_s > 0.0) || !(self.start_s >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "perturbation needs start >= 0 and duration > 0 (start {}, duration {})",
                self.start_s, self.duration_s
            )));
        }
        let all = self.point_m.iter().chain(self.force_n.iter());
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("perturbation"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObserverVariant {
    None,
    MassDamper,
    Nonlinear,
}

impl std::str::FromStr for ObserverVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "mass_damper" | "mass-damper" => Ok(Self::MassDamper),
            "nonlinear" => Ok(Self::Nonlinear),
            other => Err(Error::InvalidParameter(format!("unknown observer variant '{other}'"))),
        }
    }
}

impl std::fmt::Display for ObserverVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::MassDamper => "mass_damper",
            Self::Nonlinear => "nonlinear",
        })
    }
}

/// Where the observer's end-effector acceleration comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccelerationSource {
    /// `J qdd + Jdot qd` from the plant integration.
    Plant,
    /// Backward difference of the measured velocity through a first-order lag.
    Differentiated,
}

/// Initial observer memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObserverStart {
    /// Filters at rest.
    Zero,
    /// Filters settled on the static load at the initial pose, so the arm
    /// starts in equilibrium.
    Settled,
}

/// Secondary torque fed through the null-space projector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullTorque {
    Zero,
    /// `tau0 = g(q)`; holds the self-motion against gravity.
    Gravity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerJoint {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerJoint {
    pub fn expand(&self, dof: usize, what: &str) -> Result<DVector<f64>> {
        match self {
            Self::Uniform(v) => Ok(DVector::from_element(dof, *v)),
            Self::Each(v) if v.len() == dof => Ok(DVector::from_column_slice(v)),
            Self::Each(v) => Err(Error::InvalidParameter(format!(
                "{what} has {} entries for {dof} joints",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionDoc {
    pub coulomb_nm: PerJoint,
    pub viscous_nms_per_rad: PerJoint,
    #[serde(default = "default_smoothing")]
    pub smoothing_velocity_radps: f64,
}

fn default_smoothing() -> f64 {
    0.01
}

impl Default for FrictionDoc {
    fn default() -> Self {
        Self {
            coulomb_nm: PerJoint::Uniform(1.0),
            viscous_nms_per_rad: PerJoint::Uniform(1.0),
            smoothing_velocity_radps: default_smoothing(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerDoc {
    PdRegulation {
        #[serde(default = "default_k")]
        k_n_per_m: [f64; 3],
        #[serde(default = "default_b")]
        b_ns_per_m: [f64; 3],
    },
    Reaching {
        target_m: [f64; 3],
        c_nms_per_rad: PerJoint,
        f_muscle: PerJoint,
        k_spring_n_per_m: f64,
        tau_muscle_s: PerJoint,
    },
}

fn default_k() -> [f64; 3] {
    [4.0; 3]
}

fn default_b() -> [f64; 3] {
    [0.001; 3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverDoc {
    pub variant: ObserverVariant,
    #[serde(default = "default_cutoff")]
    pub cutoff_hz: f64,
    #[serde(default = "default_ms")]
    pub ms_kg: [f64; 3],
    #[serde(default = "default_bs")]
    pub bs_kg_per_s: [f64; 3],
    #[serde(default = "default_accel")]
    pub acceleration: AccelerationSource,
    #[serde(default = "default_accel_filter")]
    pub acceleration_filter_hz: f64,
    #[serde(default = "default_start")]
    pub start: ObserverStart,
}

fn default_cutoff() -> f64 {
    20.0
}
fn default_ms() -> [f64; 3] {
    [2.5, 2.2, 2.2]
}
fn default_bs() -> [f64; 3] {
    [1.0, 1e-5, 1e-5]
}
fn default_accel() -> AccelerationSource {
    AccelerationSource::Plant
}
fn default_accel_filter() -> f64 {
    100.0
}
fn default_start() -> ObserverStart {
    ObserverStart::Settled
}

impl Default for ObserverDoc {
    fn default() -> Self {
        Self {
            variant: ObserverVariant::Nonlinear,
            cutoff_hz: default_cutoff(),
            ms_kg: default_ms(),
            bs_kg_per_s: default_bs(),
            acceleration: default_accel(),
            acceleration_filter_hz: default_accel_filter(),
            start: default_start(),
        }
    }
}

/// On-disk scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub name: String,
    /// Preset name or model file path relative to the scenario file.
    pub model: String,
    /// Overrides the model's gravity vector, m/s^2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravity_mps2: Option<[f64; 3]>,
    pub duration_s: f64,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    pub q0_deg: Vec<f64>,
    #[serde(default)]
    pub qd0_deg_per_s: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise_std_m: f64,
    #[serde(default = "default_null")]
    pub null_torque: NullTorque,
    #[serde(default)]
    pub friction: FrictionDoc,
    pub controller: ControllerDoc,
    #[serde(default)]
    pub observer: ObserverDoc,
    #[serde(default, rename = "perturbation")]
    pub perturbations: Vec<PerturbationEvent>,
}

fn default_dt() -> f64 {
    1e-3
}
fn default_null() -> NullTorque {
    NullTorque::Gravity
}

impl ScenarioDoc {
    pub fn from_toml_str(text: &str, origin: impl Into<String>) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse(origin, e))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerConfig {
    PdRegulation(PdGains),
    Reaching {
        target: Vector3<f64>,
        c_base: DVector<f64>,
        f_base: DVector<f64>,
        k_spring: f64,
        tau_muscle: DVector<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverConfig {
    pub variant: ObserverVariant,
    pub qfilter: QFilterSpec,
    pub mass_damper: NominalModel,
    pub acceleration: AccelerationSource,
    pub acceleration_filter_hz: f64,
    pub start: ObserverStart,
}

impl ObserverConfig {
    pub fn nominal(&self) -> Option<NominalModel> {
        match self.variant {
            ObserverVariant::None => None,
            ObserverVariant::MassDamper => Some(self.mass_damper.clone()),
            ObserverVariant::Nonlinear => Some(NominalModel::Nonlinear),
        }
    }
}

/// Fully resolved, validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub doc: ScenarioDoc,
    pub model: RobotModel,
    pub q0: DVector<f64>,
    pub qd0: DVector<f64>,
    pub friction: FrictionParams,
    pub controller: ControllerConfig,
    pub observer: ObserverConfig,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc = ScenarioDoc::from_toml_str(&text, path.display().to_string())?;
        Self::from_doc(doc, path.parent())
    }

    pub fn from_toml_str(text: &str, origin: &str, base_dir: Option<&Path>) -> Result<Self> {
        Self::from_doc(ScenarioDoc::from_toml_str(text, origin)?, base_dir)
    }

    /// The bundled 0.8 s regulation scenario.
    pub fn regulation_fixture() -> Self {
        Self::from_toml_str(REGULATION_FIXTURE, "fixture regulation", None).expect("bundled fixture is valid")
    }

    /// The bundled reaching scenario.
    pub fn reaching_fixture() -> Self {
        Self::from_toml_str(REACHING_FIXTURE, "fixture reaching", None).expect("bundled fixture is valid")
    }

    pub fn from_doc(doc: ScenarioDoc, base_dir: Option<&Path>) -> Result<Self> {
        let model = RobotModel::resolve(&doc.model, base_dir)?;
        Self::with_model(doc, model)
    }

    pub fn with_model(doc: ScenarioDoc, model: RobotModel) -> Result<Self> {
        let model = match doc.gravity_mps2 {
            Some(g) => model.with_gravity(Vector3::from(g)),
            None => model,
        };
        let n = model.dof();
        model.require_task_capable()?;
        if !(doc.dt_s > 0.0) || !doc.dt_s.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive, got {}",
                doc.dt_s
            )));
        }
        if !(doc.duration_s >= 0.0) || !doc.duration_s.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "duration must be >= 0, got {}",
                doc.duration_s
            )));
        }
        if doc.duration_s > 0.0 && doc.duration_s < doc.dt_s {
            return Err(Error::InvalidParameter("duration shorter than one step".into()));
        }
        if !(doc.noise_std_m >= 0.0) {
            return Err(Error::InvalidParameter("noise standard deviation must be >= 0".into()));
        }
        let deg = std::f64::consts::PI / 180.0;
        if doc.q0_deg.len() != n {
            return Err(Error::DimensionMismatch {
                what: "q0_deg",
                expected: n,
                got: doc.q0_deg.len(),
            });
        }
        let q0 = DVector::from_iterator(n, doc.q0_deg.iter().map(|v| v * deg));
        let qd0 = match &doc.qd0_deg_per_s {
            Some(v) if v.len() == n => DVector::from_iterator(n, v.iter().map(|x| x * deg)),
            Some(v) => {
                return Err(Error::DimensionMismatch {
                    what: "qd0_deg_per_s",
                    expected: n,
                    got: v.len(),
                })
            }
            None => DVector::zeros(n),
        };
        let friction = FrictionParams::new(
            doc.friction.coulomb_nm.expand(n, "coulomb_nm")?,
            doc.friction.viscous_nms_per_rad.expand(n, "viscous_nms_per_rad")?,
            doc.friction.smoothing_velocity_radps,
        )?;
        let controller = match &doc.controller {
            ControllerDoc::PdRegulation { k_n_per_m, b_ns_per_m } => {
                ControllerConfig::PdRegulation(PdGains::new(Vector3::from(*k_n_per_m), Vector3::from(*b_ns_per_m))?)
            }
            ControllerDoc::Reaching {
                target_m,
                c_nms_per_rad,
                f_muscle,
                k_spring_n_per_m,
                tau_muscle_s,
            } => ControllerConfig::Reaching {
                target: Vector3::from(*target_m),
                c_base: c_nms_per_rad.expand(n, "c_nms_per_rad")?,
                f_base: f_muscle.expand(n, "f_muscle")?,
                k_spring: *k_spring_n_per_m,
                tau_muscle: tau_muscle_s.expand(n, "tau_muscle_s")?,
            },
        };
        let o = &doc.observer;
        if !(o.acceleration_filter_hz > 0.0) {
            return Err(Error::InvalidParameter(
                "acceleration filter cutoff must be positive".into(),
            ));
        }
        let observer = ObserverConfig {
            variant: o.variant,
            qfilter: qfilter_from_cutoff(o.cutoff_hz)?,
            mass_damper: NominalModel::mass_damper(Vector3::from(o.ms_kg), Vector3::from(o.bs_kg_per_s))?,
            acceleration: o.acceleration,
            acceleration_filter_hz: o.acceleration_filter_hz,
            start: o.start,
        };
        for p in &doc.perturbations {
            p.validate(n)?;
        }
        Ok(Self {
            doc,
            model,
            q0,
            qd0,
            friction,
            controller,
            observer,
        })
    }

    pub fn name(&self) -> &str {
        &self.doc.name
    }

    pub fn dt(&self) -> f64 {
        self.doc.dt_s
    }

    pub fn duration(&self) -> f64 {
        self.doc.duration_s
    }

    /// Number of integration steps; the trace has one more row.
    pub fn steps(&self) -> usize {
        (self.doc.duration_s / self.doc.dt_s).round() as usize
    }

    pub fn perturbations(&self) -> &[PerturbationEvent] {
        &self.doc.perturbations
    }

    /// Same scenario with another observer variant.
    pub fn with_variant(&self, variant: ObserverVariant) -> Self {
        let mut out = self.clone();
        out.doc.observer.variant = variant;
        out.observer.variant = variant;
        out
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.doc.seed = seed;
        out
    }

    /// Same scenario with the perturbation schedule removed.
    pub fn without_perturbations(&self) -> Self {
        let mut out = self.clone();
        out.doc.perturbations.clear();
        out
    }

    /// SHA-256 over the resolved scenario and model parameters.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_string(&self.doc).unwrap_or_default().as_bytes());
        hasher.update(format!("{:?}", self.model).as_bytes());
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Resolves a scenario argument: a path on disk, or one of the bundled
/// fixture names `regulation` / `reaching`.
pub fn resolve_scenario(arg: &str) -> Result<Scenario> {
    let path = PathBuf::from(arg);
    if path.exists() {
        return Scenario::load(&path);
    }
    match arg {
        "regulation" => Ok(Scenario::regulation_fixture()),
        "reaching" => Ok(Scenario::reaching_fixture()),
        _ => Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "scenario file not found"),
        )),
    }
}
