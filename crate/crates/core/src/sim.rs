//! Fixed-step arm simulation.
//!
//! Each step runs sense, observe, control, actuate, integrate. The observer
//! at step `k` consumes the sample recorded at step `k - 1` (motion, model
//! terms and the command that produced it), so it never sees the motion of
//! a command before that command has acted.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::control::{compose_torque, pd_task_command, ReachingController, ReachingParams};
use crate::dynamics::{
    friction_slope, friction_torque, joint_space_dynamics_at, kinetic_energy, potential_energy, projector_from_pinv,
    task_space_from_joint, FrictionParams, JointSpaceDynamics, TaskSpaceDynamics,
};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::filter::FirstOrderLag;
use crate::model::{forward_kinematics, ChainKinematics, JointState, RobotModel, TaskState};
use crate::observer::TaskSpaceObserver;
use crate::scenario::{AccelerationSource, ControllerConfig, NullTorque, ObserverStart, PerturbationEvent, Scenario};

/// Joint speed beyond which a run is declared divergent, rad/s.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

/// Generalized force `sum J_p^T F` of the pulses active at `t`.
pub fn perturbation_torque(
    model: &RobotModel,
    kin: &ChainKinematics,
    events: &[PerturbationEvent],
    t: f64,
) -> Result<DVector<f64>> {
    let n = model.dof();
    let mut tau = DVector::zeros(n);
    for e in events.iter().filter(|e| e.is_active(t)) {
        e.validate(n)?;
        let jp = kin.point_jacobian(e.link, &Vector3::from(e.point_m));
        tau += jp.transpose() * Vector3::from(e.force_n);
    }
    Ok(tau)
}

/// `M^-1 (tau + tau_ext - C qd - g - f(qd))`.
pub fn forward_dynamics(
    model: &RobotModel,
    friction: &FrictionParams,
    state: &JointState,
    tau_applied: &DVector<f64>,
    tau_external: &DVector<f64>,
) -> Result<DVector<f64>> {
    state.validate(model)?;
    model.check_joint_vector("tau_applied", tau_applied)?;
    model.check_joint_vector("tau_external", tau_external)?;
    let kin = forward_kinematics(model, &state.q)?;
    let js = joint_space_dynamics_at(model, &kin, &state.qd);
    accelerate(&js, friction, &state.qd, tau_applied, tau_external)
}

fn accelerate(
    js: &JointSpaceDynamics,
    friction: &FrictionParams,
    qd: &DVector<f64>,
    tau_applied: &DVector<f64>,
    tau_external: &DVector<f64>,
) -> Result<DVector<f64>> {
    let damping = DVector::zeros(qd.len());
    Ok(accelerate_with_damping(js, friction, qd, tau_applied, tau_external, &damping)?.0)
}

/// Solves `(M + D) qdd = tau + tau_ext - C qd - g - f(qd)` and returns
/// `qdd` with the friction torque actually applied, `f(qd) + D qdd`.
/// With `D = dt df/dqd` this is a linearly implicit friction step: the
/// smoothed Coulomb slope is far too stiff for an explicit 1 ms step on
/// the light distal links.
fn accelerate_with_damping(
    js: &JointSpaceDynamics,
    friction: &FrictionParams,
    qd: &DVector<f64>,
    tau_applied: &DVector<f64>,
    tau_external: &DVector<f64>,
    damping: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let fric = friction_torque(friction, qd)?;
    let rhs = tau_applied + tau_external - &js.coriolis * qd - &js.gravity - &fric;
    let lhs = &js.mass + DMatrix::from_diagonal(damping);
    let chol = lhs
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("mass matrix is not positive definite".into()))?;
    let qdd = chol.solve(&rhs);
    check_finite("joint acceleration", qdd.iter())?;
    let applied = fric + damping.component_mul(&qdd);
    Ok((qdd, applied))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub x: Vector3<f64>,
    pub xd: Vector3<f64>,
    pub f_hat_d: Vector3<f64>,
    /// Controller torque applied over the following step.
    pub tau: DVector<f64>,
    pub perturbation_active: Vec<bool>,
    /// Kinetic plus potential energy, J.
    pub mechanical_energy: f64,
    /// Cumulative work of controller and external forces up to `t`, J.
    pub work_in: f64,
    /// Cumulative friction dissipation up to `t`, J.
    pub friction_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub scenario: String,
    pub scenario_hash: String,
    pub dt: f64,
    pub dof: usize,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.rows.last().map(|r| r.t).unwrap_or(0.0)
    }

    /// Largest `|W_in - dE - W_fric|` over the run divided by the peak
    /// mechanical energy excursion (kinetic plus potential change).
    pub fn energy_residual(&self) -> Result<f64> {
        let first = self.rows.first().ok_or(Error::EmptyTrace)?;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for r in &self.rows {
            let de = r.mechanical_energy - first.mechanical_energy;
            worst = worst.max((r.work_in - de - r.friction_loss).abs());
            scale = scale.max(de.abs()).max(r.work_in.abs());
        }
        if scale == 0.0 {
            return Ok(0.0);
        }
        Ok(worst / scale)
    }
}

struct Pending {
    t: f64,
    task: TaskState,
    dynamics: TaskSpaceDynamics,
    f_cmd: Vector3<f64>,
}

struct Sensed {
    kin: ChainKinematics,
    js: JointSpaceDynamics,
    ts: TaskSpaceDynamics,
    task: TaskState,
    measured_x: Vector3<f64>,
}

/// Stepwise runner; [`run`] drives it to completion.
pub struct Simulator<'a> {
    scenario: &'a Scenario,
    q: DVector<f64>,
    qd: DVector<f64>,
    step: usize,
    x_ref: Vector3<f64>,
    observer: Option<TaskSpaceObserver>,
    reaching: Option<ReachingController>,
    pending: Option<Pending>,
    accel_lag: Vec<FirstOrderLag>,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    work_in: f64,
    friction_loss: f64,
}

impl<'a> Simulator<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self> {
        let model = &scenario.model;
        let dt = scenario.dt();
        let kin = forward_kinematics(model, &scenario.q0)?;
        let x0 = kin.end_effector;
        let observer = match scenario.observer.nominal() {
            Some(nominal) => {
                let mut obs = TaskSpaceObserver::new(scenario.observer.qfilter, nominal, dt)?;
                if scenario.observer.start == ObserverStart::Settled {
                    // at rest the estimate that balances the arm is the
                    // static load seen at the end effector
                    let js = joint_space_dynamics_at(model, &kin, &DVector::zeros(model.dof()));
                    let ts = task_space_from_joint(&js, &kin.jacobian(), &kin.jacobian_dot(&scenario.qd0))?;
                    obs.settle(-ts.eta);
                }
                Some(obs)
            }
            None => None,
        };
        let reaching = match &scenario.controller {
            ControllerConfig::Reaching {
                target,
                c_base,
                f_base,
                k_spring,
                tau_muscle,
            } => Some(ReachingController::new(
                ReachingParams {
                    c_base: c_base.clone(),
                    f_base: f_base.clone(),
                    k_spring: *k_spring,
                    tau_muscle: tau_muscle.clone(),
                    target: *target,
                    x0_error_norm: (x0 - target).norm(),
                },
                dt,
            )?),
            ControllerConfig::PdRegulation(_) => None,
        };
        let accel_tau = 1.0 / (2.0 * std::f64::consts::PI * scenario.observer.acceleration_filter_hz);
        let accel_lag = (0..3)
            .map(|_| FirstOrderLag::new(accel_tau, dt))
            .collect::<Result<Vec<_>>>()?;
        let noise = if scenario.doc.noise_std_m > 0.0 {
            Some(Normal::new(0.0, scenario.doc.noise_std_m).map_err(|e| Error::InvalidParameter(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            scenario,
            q: scenario.q0.clone(),
            qd: scenario.qd0.clone(),
            step: 0,
            x_ref: x0,
            observer,
            reaching,
            pending: None,
            accel_lag,
            rng: ChaCha8Rng::seed_from_u64(scenario.doc.seed),
            noise,
            work_in: 0.0,
            friction_loss: 0.0,
        })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.scenario.dt()
    }

    pub fn joint_state(&self) -> JointState {
        JointState {
            q: self.q.clone(),
            qd: self.qd.clone(),
            qdd: None,
        }
    }

    pub fn estimate(&self) -> Vector3<f64> {
        self.observer
            .as_ref()
            .map(|o| o.estimate())
            .unwrap_or_else(Vector3::zeros)
    }

    fn sense(&mut self) -> Result<Sensed> {
        let model = &self.scenario.model;
        let kin = forward_kinematics(model, &self.q)?;
        let jac = kin.jacobian();
        let jac_dot = kin.jacobian_dot(&self.qd);
        let js = joint_space_dynamics_at(model, &kin, &self.qd);
        let ts = task_space_from_joint(&js, &jac, &jac_dot)?;
        let xd = &jac * &self.qd;
        let mut measured_x = kin.end_effector;
        if let Some(noise) = &self.noise {
            for v in measured_x.iter_mut() {
                *v += noise.sample(&mut self.rng);
            }
        }
        let task = TaskState {
            x: kin.end_effector,
            xd,
            xdd: Vector3::zeros(),
        };
        Ok(Sensed {
            kin,
            js,
            ts,
            task,
            measured_x,
        })
    }

    /// Runs sense, observe and control at the current time, records the
    /// row, then (unless `last`) integrates one step.
    fn advance(&mut self, last: bool) -> Result<TraceRow> {
        let t = self.time();
        let dt = self.scenario.dt();
        let model = &self.scenario.model;
        let n = model.dof();
        let sensed = self.sense()?;

        if let Some(p) = self.pending.as_mut() {
            if self.scenario.observer.acceleration == AccelerationSource::Differentiated {
                for axis in 0..3 {
                    let raw = (sensed.task.xd[axis] - p.task.xd[axis]) / dt;
                    p.task.xdd[axis] = self.accel_lag[axis].step(raw);
                }
            }
        }
        if let (Some(obs), Some(p)) = (self.observer.as_mut(), self.pending.take()) {
            debug_assert!(p.t < t);
            let dynamics = obs.nominal().needs_task_dynamics().then_some(&p.dynamics);
            obs.step(t, &p.f_cmd, &p.task, dynamics)?;
        }
        let f_hat_d = self.estimate();

        let jac = sensed.kin.jacobian();
        let projector = projector_from_pinv(&jac, &sensed.ts.jm_pinv);
        let tau0 = match self.scenario.doc.null_torque {
            NullTorque::Zero => DVector::zeros(n),
            NullTorque::Gravity => sensed.js.gravity.clone(),
        };
        let state = self.joint_state();
        let measured = TaskState {
            x: sensed.measured_x,
            ..sensed.task
        };
        let (tau, f_cmd) = match &self.scenario.controller {
            ControllerConfig::PdRegulation(gains) => {
                let f_cmd = pd_task_command(gains, &self.x_ref, &measured);
                let out = compose_torque(&jac, &f_cmd, &f_hat_d, &projector, &tau0)?;
                (out.joint_torque, f_cmd)
            }
            ControllerConfig::Reaching { .. } => {
                let ctrl = self.reaching.as_mut().expect("reaching controller present");
                let cmd = ctrl.command(&state, &measured, &jac, &f_hat_d)?;
                let f_cmd = sensed.ts.jm_pinv.transpose() * (-&cmd.filtered);
                (cmd.joint_torque + &projector * &tau0, f_cmd)
            }
        };

        let events = self.scenario.perturbations();
        let row = TraceRow {
            t,
            q: self.q.clone(),
            qd: self.qd.clone(),
            x: sensed.task.x,
            xd: sensed.task.xd,
            f_hat_d,
            tau: tau.clone(),
            perturbation_active: events.iter().map(|e| e.is_active(t)).collect(),
            mechanical_energy: kinetic_energy(&sensed.js.mass, &self.qd) + potential_energy(model, &sensed.kin),
            work_in: self.work_in,
            friction_loss: self.friction_loss,
        };
        if last {
            return Ok(row);
        }

        let tau_ext = perturbation_torque(model, &sensed.kin, events, t)?;
        let damping = friction_slope(&self.scenario.friction, &self.qd)? * dt;
        let (qdd, fric) =
            accelerate_with_damping(&sensed.js, &self.scenario.friction, &self.qd, &tau, &tau_ext, &damping)?;
        let qd_next = &self.qd + &qdd * dt;
        if let Some((joint, &v)) = qd_next.iter().enumerate().find(|(_, v)| !(v.abs() <= DIVERGENCE_LIMIT)) {
            return Err(Error::Diverged {
                time: t + dt,
                joint,
                velocity: v,
                limit: DIVERGENCE_LIMIT,
            });
        }
        let dq = &qd_next * dt;
        // power booked at the mid-step velocity, which makes the kinetic
        // energy update exact for a frozen inertia
        let qd_mid = (&self.qd + &qd_next) * (0.5 * dt);
        self.work_in += (&tau + &tau_ext).dot(&qd_mid);
        self.friction_loss += fric.dot(&qd_mid);

        let xdd = &jac * &qdd + sensed.kin.jacobian_dot(&self.qd) * &self.qd;
        self.pending = Some(Pending {
            t,
            task: TaskState { xdd, ..sensed.task },
            dynamics: sensed.ts,
            f_cmd,
        });
        self.q += dq;
        self.qd = qd_next;
        self.step += 1;
        Ok(row)
    }
}

/// Runs a scenario to completion: `duration / dt + 1` rows.
pub fn run(scenario: &Scenario) -> Result<Trace> {
    let mut sim = Simulator::new(scenario)?;
    let steps = scenario.steps();
    let mut rows = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = sim.time();
        let row = sim.advance(k == steps).map_err(|e| match e {
            Error::Diverged { .. } => e,
            other => Error::StepFailed {
                time: t,
                source: Box::new(other),
            },
        })?;
        rows.push(row);
    }
    Ok(Trace {
        scenario: scenario.name().to_string(),
        scenario_hash: scenario.content_hash(),
        dt: scenario.dt(),
        dof: scenario.model.dof(),
        rows,
    })
}

/// Joint-space snapshot helper for callers that want the matrices at a
/// trace row.
pub fn dynamics_at(model: &RobotModel, row: &TraceRow) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_dim("trace row", model.dof(), row.q.len())?;
    let kin = forward_kinematics(model, &row.q)?;
    let js = joint_space_dynamics_at(model, &kin, &row.qd);
    Ok((js.mass, js.gravity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::FrictionParams;
    use crate::model::LinkParams;

    #[test]
    fn trace_length_and_start() {
        let mut sc = Scenario::regulation_fixture();
        sc.doc.duration_s = 0.05;
        let trace = run(&sc).unwrap();
        assert_eq!(trace.len(), 51);
        assert_eq!(trace.rows[0].q, sc.q0);
        assert!((trace.duration() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn zero_duration_gives_one_row() {
        let mut sc = Scenario::regulation_fixture();
        sc.doc.duration_s = 0.0;
        assert_eq!(run(&sc).unwrap().len(), 1);
    }

    #[test]
    fn free_fall_of_single_link_matches_gravity_torque() {
        let link = LinkParams::new(0.4, 2.0, Vector3::new(0.01, 0.01, 0.002), 0.5).unwrap();
        let model = RobotModel::new(
            "bar",
            vec![link],
            vec![Vector3::new(0.0, -1.0, 0.0)],
            vec![Vector3::x()],
            Vector3::new(0.0, 0.0, -9.81),
        )
        .unwrap();
        let state = JointState::at_rest(DVector::zeros(1));
        let z = DVector::zeros(1);
        let qdd = forward_dynamics(&model, &FrictionParams::none(1), &state, &z, &z).unwrap();
        // horizontal link falling about its base: qdd = -m g l/2 / (I + m l^2/4)
        let expected = -2.0 * 9.81 * 0.2 / (0.01 + 2.0 * 0.04);
        assert!((qdd[0] - expected).abs() < 1e-10, "{} vs {expected}", qdd[0]);
    }

    #[test]
    fn pulses_are_half_open() {
        let e = PerturbationEvent {
            link: 0,
            point_m: [0.0; 3],
            force_n: [1.0, 0.0, 0.0],
            start_s: 0.1,
            duration_s: 0.05,
        };
        assert!(!e.is_active(0.0999));
        assert!(e.is_active(0.1));
        assert!(e.is_active(0.1499));
        assert!(!e.is_active(0.15));
    }
}
