//! Task-space disturbance observer.
//!
//! The estimate is realized in loop form. Each axis runs the discretized
//! third-order Q-filter on `r_N - f_cmd + f_hat_prev`, where `r_N` is the
//! nominal model evaluated on the measured end-effector motion and `f_cmd`
//! the uncompensated task force of the previous step. Since the applied force
//! was `f_cmd - f_hat_prev`, the filter input is the force the plant felt
//! beyond actuation, and `f_hat` is subtracted from the next command.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;

use crate::dynamics::{friction_torque, joint_space_dynamics, FrictionParams, TaskSpaceDynamics};
use crate::error::{check_dim, Error, Result};
use crate::filter::{ContinuousTf, DiscreteTf, IirFilter};
use crate::model::{RobotModel, TaskState};

/// Q-filter `(3 tau s + 1) / (tau s + 1)^3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QFilterSpec {
    pub tau: f64,
}

impl QFilterSpec {
    pub const ORDER: usize = 3;

    pub fn from_tau(tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Q-filter time constant must be positive, got {tau}"
            )));
        }
        Ok(Self { tau })
    }

    pub fn cutoff_hz(&self) -> f64 {
        1.0 / (2.0 * std::f64::consts::PI * self.tau)
    }

    pub fn transfer_function(&self) -> ContinuousTf {
        let t = self.tau;
        ContinuousTf {
            num: vec![1.0, 3.0 * t],
            den: vec![1.0, 3.0 * t, 3.0 * t * t, t * t * t],
        }
    }

    pub fn discretize(&self, dt: f64) -> Result<DiscreteTf> {
        self.transfer_function().bilinear(dt)
    }
}

/// `tau = 1 / (2 pi f_c)`.
pub fn qfilter_from_cutoff(cutoff_hz: f64) -> Result<QFilterSpec> {
    if !(cutoff_hz > 0.0) || !cutoff_hz.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "cutoff must be positive, got {cutoff_hz} Hz"
        )));
    }
    QFilterSpec::from_tau(1.0 / (2.0 * std::f64::consts::PI * cutoff_hz))
}

/// `Q(j omega)`.
pub fn qfilter_eval(spec: &QFilterSpec, omega: f64) -> Complex64 {
    spec.transfer_function().eval(Complex64::new(0.0, omega))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivity {
    /// Complementary sensitivity `Q R / (Q (R - R_N) + R_N)`.
    pub t: Complex64,
    /// Sensitivity `R_N (1 - Q) / (Q (R - R_N) + R_N)`.
    pub s: Complex64,
}

/// Observer sensitivity pair at `omega` for plant and nominal responses
/// `plant = R(j omega)` and `nominal = R_N(j omega)`.
pub fn sensitivity_functions(
    spec: &QFilterSpec,
    plant: Complex64,
    nominal: Complex64,
    omega: f64,
) -> Result<Sensitivity> {
    let q = qfilter_eval(spec, omega);
    let denom = q * (plant - nominal) + nominal;
    if denom.norm() <= f64::EPSILON * (plant.norm() + nominal.norm()).max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateDenominator(omega));
    }
    Ok(Sensitivity {
        t: q * plant / denom,
        s: nominal * (1.0 - q) / denom,
    })
}

/// Plant model inverted inside the observer.
#[derive(Debug, Clone, PartialEq)]
pub enum NominalModel {
    /// Decoupled per-axis `M_s' xdd + B_s' xd`.
    MassDamper { mass: Vector3<f64>, damping: Vector3<f64> },
    /// `Lambda(q) xdd + Gamma(q, qd) xd`, evaluated at the current state.
    Nonlinear,
}

impl NominalModel {
    pub fn mass_damper(mass: Vector3<f64>, damping: Vector3<f64>) -> Result<Self> {
        if mass.iter().any(|&m| !(m > 0.0)) || damping.iter().any(|&b| !(b >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "mass-damper nominal needs positive masses and nonnegative damping, got {:?} / {:?}",
                mass.as_slice(),
                damping.as_slice()
            )));
        }
        Ok(Self::MassDamper { mass, damping })
    }

    /// Mass-damper values used for the lumped-model comparison runs.
    pub fn default_mass_damper() -> Self {
        Self::MassDamper {
            mass: Vector3::new(2.5, 2.2, 2.2),
            damping: Vector3::new(1.0, 1e-5, 1e-5),
        }
    }

    pub fn needs_task_dynamics(&self) -> bool {
        matches!(self, Self::Nonlinear)
    }

    /// `r_N` evaluated on measured motion.
    pub fn force(&self, task: &TaskState, dynamics: Option<&TaskSpaceDynamics>) -> Result<Vector3<f64>> {
        match self {
            Self::MassDamper { mass, damping } => Ok(mass.component_mul(&task.xdd) + damping.component_mul(&task.xd)),
            Self::Nonlinear => {
                let d = dynamics.ok_or_else(|| {
                    Error::InvalidParameter("nonlinear nominal model needs task-space dynamics".into())
                })?;
                Ok(d.lambda * task.xdd + d.gamma * task.xd)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    filters: [IirFilter; 3],
    pub f_hat_d: Vector3<f64>,
    last_time: Option<f64>,
}

impl ObserverState {
    fn new(tf: DiscreteTf) -> Self {
        let f = IirFilter::new(tf);
        Self {
            filters: [f.clone(), f.clone(), f],
            f_hat_d: Vector3::zeros(),
            last_time: None,
        }
    }

    pub fn reset(&mut self) {
        self.filters.iter_mut().for_each(IirFilter::reset);
        self.f_hat_d = Vector3::zeros();
        self.last_time = None;
    }

    pub fn filter_states(&self) -> [&[f64]; 3] {
        [
            self.filters[0].state(),
            self.filters[1].state(),
            self.filters[2].state(),
        ]
    }
}

/// One observer per arm; three decoupled Q-filter channels.
#[derive(Debug, Clone)]
pub struct TaskSpaceObserver {
    spec: QFilterSpec,
    nominal: NominalModel,
    dt: f64,
    state: ObserverState,
}

impl TaskSpaceObserver {
    pub fn new(spec: QFilterSpec, nominal: NominalModel, dt: f64) -> Result<Self> {
        let tf = spec.discretize(dt)?;
        Ok(Self {
            spec,
            nominal,
            dt,
            state: ObserverState::new(tf),
        })
    }

    pub fn spec(&self) -> &QFilterSpec {
        &self.spec
    }

    pub fn nominal(&self) -> &NominalModel {
        &self.nominal
    }

    pub fn state(&self) -> &ObserverState {
        &self.state
    }

    pub fn estimate(&self) -> Vector3<f64> {
        self.state.f_hat_d
    }

    pub fn reset(&mut self) {
        self.state.reset();
    }

    /// Changes the Q-filter; coefficients are recomputed only when `tau`
    /// differs, and the new channels start settled at the current estimate.
    pub fn set_spec(&mut self, spec: QFilterSpec) -> Result<()> {
        if spec.tau != self.spec.tau {
            let tf = spec.discretize(self.dt)?;
            for (f, &e) in self.state.filters.iter_mut().zip(self.state.f_hat_d.iter()) {
                let mut next = IirFilter::new(tf.clone());
                next.settle(e);
                *f = next;
            }
            self.spec = spec;
        }
        Ok(())
    }

    /// Puts every channel at the steady state that reproduces `estimate`.
    pub fn settle(&mut self, estimate: Vector3<f64>) {
        for (f, &e) in self.state.filters.iter_mut().zip(estimate.iter()) {
            f.settle(e);
        }
        self.state.f_hat_d = estimate;
    }

    /// Advances the estimate with the measured motion produced by the
    /// previous command `f_cmd` (uncompensated task force).
    pub fn step(
        &mut self,
        time: f64,
        f_cmd: &Vector3<f64>,
        task: &TaskState,
        dynamics: Option<&TaskSpaceDynamics>,
    ) -> Result<Vector3<f64>> {
        if let Some(last) = self.state.last_time {
            if !(time > last) {
                return Err(Error::StaleObserverState { time, last });
            }
        }
        if !task.is_finite() || f_cmd.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observer input"));
        }
        let r_n = self.nominal.force(task, dynamics)?;
        let input = r_n - f_cmd + self.state.f_hat_d;
        let mut next = Vector3::zeros();
        for axis in 0..3 {
            next[axis] = self.state.filters[axis].step(input[axis]);
        }
        self.state.f_hat_d = next;
        self.state.last_time = Some(time);
        Ok(next)
    }
}

/// Joint-space lumped-model parameters `M_s`, `B_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct MassDamperJointModel {
    pub ms: DVector<f64>,
    pub bs: DVector<f64>,
}

impl MassDamperJointModel {
    pub fn new(ms: DVector<f64>, bs: DVector<f64>) -> Result<Self> {
        check_dim("joint damping", ms.len(), bs.len())?;
        if ms.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::InvalidParameter("joint nominal masses must be positive".into()));
        }
        Ok(Self { ms, bs })
    }
}

/// Torque a joint-space observer with a mass-damper nominal model would
/// treat as disturbance:
/// `(M - M_s) qdd + (C - B_s) qd + g + f + tau_e`.
pub fn joint_space_disturbance(
    model: &RobotModel,
    joint_model: &MassDamperJointModel,
    friction: &FrictionParams,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    qdd: &DVector<f64>,
    tau_e: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = model.dof();
    check_dim("joint nominal model", n, joint_model.ms.len())?;
    model.check_joint_vector("qdd", qdd)?;
    model.check_joint_vector("tau_e", tau_e)?;
    let js = joint_space_dynamics(model, q, qd)?;
    let ms = DMatrix::from_diagonal(&joint_model.ms);
    let bs = DMatrix::from_diagonal(&joint_model.bs);
    Ok((&js.mass - ms) * qdd + (&js.coriolis - bs) * qd + js.gravity + friction_torque(friction, qd)? + tau_e)
}
