//! Task-space PD regulation with disturbance compensation, null-space
//! composition, and the human-like reaching law.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector, Matrix3xX, Vector3};

use crate::dynamics::{projector_pinv_svd, RANK_TOL_REL};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::filter::FirstOrderLag;
use crate::model::{JointState, TaskState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdGains {
    /// N/m per axis.
    pub k: Vector3<f64>,
    /// N s/m per axis.
    pub b: Vector3<f64>,
}

impl PdGains {
    pub fn new(k: Vector3<f64>, b: Vector3<f64>) -> Result<Self> {
        if k.iter().chain(b.iter()).any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "PD gains must be finite and non-negative, got {:?} / {:?}",
                k.as_slice(),
                b.as_slice()
            )));
        }
        Ok(Self { k, b })
    }

    /// K = 4 N/m, B = 0.001 N s/m on every axis.
    pub fn regulation_default() -> Self {
        Self {
            k: Vector3::repeat(4.0),
            b: Vector3::repeat(0.001),
        }
    }
}

/// `K (x_ref - x) - B xd`.
pub fn pd_task_command(gains: &PdGains, x_ref: &Vector3<f64>, task: &TaskState) -> Vector3<f64> {
    gains.k.component_mul(&(x_ref - task.x)) - gains.b.component_mul(&task.xd)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub joint_torque: DVector<f64>,
    pub task_force_cmd: Vector3<f64>,
    pub null_torque: DVector<f64>,
}

/// `J^T (f_cmd - f_hat_d) + P tau0`.
pub fn compose_torque(
    jac: &Matrix3xX<f64>,
    f_cmd: &Vector3<f64>,
    f_hat_d: &Vector3<f64>,
    projector: &DMatrix<f64>,
    tau0: &DVector<f64>,
) -> Result<ControlOutput> {
    let n = jac.ncols();
    check_dim("projector rows", n, projector.nrows())?;
    check_dim("projector columns", n, projector.ncols())?;
    check_dim("tau0", n, tau0.len())?;
    let task = jac.transpose() * (f_cmd - f_hat_d);
    let null_torque = projector * tau0;
    let joint_torque = DVector::from_iterator(n, task.iter().copied()) + &null_torque;
    check_finite("joint torque", joint_torque.iter())?;
    Ok(ControlOutput {
        joint_torque,
        task_force_cmd: *f_cmd,
        null_torque,
    })
}

/// Least-squares null command `P^+ [tau - J^T f_model]` through the SVD
/// pseudo-inverse of the (rank-deficient) projector.
pub fn recover_null_command(
    projector: &DMatrix<f64>,
    tau: &DVector<f64>,
    jac: &Matrix3xX<f64>,
    model_force: &Vector3<f64>,
) -> Result<DVector<f64>> {
    let n = jac.ncols();
    check_dim("projector", n, projector.nrows())?;
    check_dim("tau", n, tau.len())?;
    let task = jac.transpose() * model_force;
    let residual = tau - DVector::from_iterator(n, task.iter().copied());
    Ok(projector_pinv_svd(projector, RANK_TOL_REL) * residual)
}

/// `pi (|dx0| - |dx|) / (2 |dx0|)` with `|dx|` clamped to `[0, |dx0|]`, so
/// the result always lies in `[0, pi/2]`.
pub fn phase_argument(x0_norm: f64, x_norm: f64) -> Result<f64> {
    if !(x0_norm > 0.0) || !x0_norm.is_finite() {
        return Err(Error::DegenerateStart(x0_norm));
    }
    let x = x_norm.clamp(0.0, x0_norm);
    Ok((FRAC_PI_2 * (x0_norm - x) / x0_norm).clamp(0.0, FRAC_PI_2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachingParams {
    /// Joint damping ceilings `C_i`, N m s/rad.
    pub c_base: DVector<f64>,
    /// Muscle stiffness coefficients `f_i`.
    pub f_base: DVector<f64>,
    /// Virtual spring `k`, N/m.
    pub k_spring: f64,
    /// Muscle lag time constants, s.
    pub tau_muscle: DVector<f64>,
    pub target: Vector3<f64>,
    /// Initial task error norm, m; captured when the motion starts.
    pub x0_error_norm: f64,
}

impl ReachingParams {
    pub fn validate(&self, dof: usize) -> Result<()> {
        check_dim("c_base", dof, self.c_base.len())?;
        check_dim("f_base", dof, self.f_base.len())?;
        check_dim("tau_muscle", dof, self.tau_muscle.len())?;
        if self.c_base.iter().chain(self.f_base.iter()).any(|&v| !(v >= 0.0)) || !(self.k_spring >= 0.0) {
            return Err(Error::InvalidParameter(
                "reaching coefficients must be nonnegative".into(),
            ));
        }
        if self.tau_muscle.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::InvalidParameter("muscle time constants must be positive".into()));
        }
        if !(self.x0_error_norm > 0.0) {
            return Err(Error::DegenerateStart(self.x0_error_norm));
        }
        Ok(())
    }

    /// Diagonals of the damping-shaping and muscle-mapping matrices at the
    /// current task error norm.
    pub fn shaping(&self, error_norm: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let phase = phase_argument(self.x0_error_norm, error_norm)?;
        Ok((&self.c_base * phase.sin(), &self.f_base * phase.cos()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachingCommand {
    pub joint_torque: DVector<f64>,
    /// Muscle-filtered part, before compensation.
    pub filtered: DVector<f64>,
    pub damping: DVector<f64>,
    pub muscle: DVector<f64>,
}

/// `u = -W_f [K_V qd + k F_mus J^T dx] - J^T f_hat_d`, with `dx = x - target`
/// and `W_f` a per-joint first-order lag.
#[derive(Debug, Clone)]
pub struct ReachingController {
    params: ReachingParams,
    lags: Vec<FirstOrderLag>,
}

impl ReachingController {
    pub fn new(params: ReachingParams, dt: f64) -> Result<Self> {
        params.validate(params.c_base.len())?;
        let lags = params
            .tau_muscle
            .iter()
            .map(|&tau| FirstOrderLag::new(tau, dt))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { params, lags })
    }

    pub fn params(&self) -> &ReachingParams {
        &self.params
    }

    pub fn filter_outputs(&self) -> DVector<f64> {
        DVector::from_iterator(self.lags.len(), self.lags.iter().map(|l| l.output))
    }

    pub fn reset(&mut self) {
        self.lags.iter_mut().for_each(FirstOrderLag::reset);
    }

    pub fn command(
        &mut self,
        state: &JointState,
        task: &TaskState,
        jac: &Matrix3xX<f64>,
        f_hat_d: &Vector3<f64>,
    ) -> Result<ReachingCommand> {
        let n = self.lags.len();
        check_dim("qd", n, state.qd.len())?;
        check_dim("jacobian columns", n, jac.ncols())?;
        let dx = task.x - self.params.target;
        let (damping, muscle) = self.params.shaping(dx.norm())?;
        let pull = jac.transpose() * dx * self.params.k_spring;
        let bracket = DVector::from_iterator(n, (0..n).map(|i| damping[i] * state.qd[i] + muscle[i] * pull[i]));
        let filtered = DVector::from_iterator(n, self.lags.iter_mut().zip(bracket.iter()).map(|(lag, &u)| lag.step(u)));
        let compensation = jac.transpose() * f_hat_d;
        let joint_torque = -&filtered - DVector::from_iterator(n, compensation.iter().copied());
        check_finite("reaching torque", joint_torque.iter())?;
        Ok(ReachingCommand {
            joint_torque,
            filtered,
            damping,
            muscle,
        })
    }
}
