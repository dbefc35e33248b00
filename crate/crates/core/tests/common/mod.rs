//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskdob::dynamics::{mass_matrix, weighted_pinv};
use taskdob::filter::IirFilter;
use taskdob::model::{com_positions, forward_kinematics, RobotModel};

pub fn arm() -> RobotModel {
    RobotModel::preset("paper7dof").unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Random configuration away from kinematic singularities.
pub fn random_regular_q(model: &RobotModel, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let q = random_vec(rng, model.dof(), PI);
        let kin = forward_kinematics(model, &q).unwrap();
        let m = mass_matrix(model, &q).unwrap();
        if weighted_pinv(&kin.jacobian(), &m).unwrap().condition < 1e4 {
            return q;
        }
    }
}

/// `sum m J_v^T J_v + J_w^T R I R^T J_w` with geometric COM Jacobians.
pub fn lagrangian_mass(model: &RobotModel, q: &DVector<f64>) -> DMatrix<f64> {
    let n = model.dof();
    let kin = forward_kinematics(model, q).unwrap();
    let mut m = DMatrix::zeros(n, n);
    for (i, link) in model.links().iter().enumerate() {
        let mut jv = DMatrix::zeros(3, n);
        let mut jw = DMatrix::zeros(3, n);
        for j in 0..=i {
            let a = kin.joint_axes[j];
            jv.set_column(j, &a.cross(&(kin.com[i] - kin.joint_origins[j])));
            jw.set_column(j, &a);
        }
        let r = kin.rotations[i];
        let inertia = r * Matrix3::from_diagonal(&link.inertia_diag) * r.transpose();
        let inertia = DMatrix::from_iterator(3, 3, inertia.iter().copied());
        m += jv.transpose() * &jv * link.mass + jw.transpose() * inertia * jw;
    }
    m
}

pub fn potential(model: &RobotModel, q: &DVector<f64>) -> f64 {
    let g = model.gravity();
    model
        .links()
        .iter()
        .zip(com_positions(model, q).unwrap())
        .map(|(l, c)| -l.mass * g.dot(&c))
        .sum()
}

pub fn potential_gradient(model: &RobotModel, q: &DVector<f64>) -> DVector<f64> {
    let h = 1e-6;
    DVector::from_fn(model.dof(), |i, _| {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[i] += h;
        qm[i] -= h;
        (potential(model, &qp) - potential(model, &qm)) / (2.0 * h)
    })
}

/// Partial derivatives of M, one matrix per joint.
pub fn mass_partials(model: &RobotModel, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
    let h = 1e-6;
    (0..model.dof())
        .map(|k| {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            (mass_matrix(model, &qp).unwrap() - mass_matrix(model, &qm).unwrap()) / (2.0 * h)
        })
        .collect()
}

pub fn mass_dot(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
    let h = 1e-6;
    (mass_matrix(model, &(q + qd * h)).unwrap() - mass_matrix(model, &(q - qd * h)).unwrap()) / (2.0 * h)
}

/// Coriolis matrix from Christoffel symbols of the first kind.
pub fn christoffel_coriolis(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
    let n = model.dof();
    let dm = mass_partials(model, q);
    DMatrix::from_fn(n, n, |i, j| {
        (0..n)
            .map(|k| 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]) * qd[k])
            .sum()
    })
}

pub fn fd_jacobian(model: &RobotModel, q: &DVector<f64>) -> Matrix3xX<f64> {
    let h = 1e-6;
    let mut j = Matrix3xX::zeros(model.dof());
    for i in 0..model.dof() {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[i] += h;
        qm[i] -= h;
        let d = (forward_kinematics(model, &qp).unwrap().end_effector
            - forward_kinematics(model, &qm).unwrap().end_effector)
            / (2.0 * h);
        j.set_column(i, &d);
    }
    j
}

pub fn fd_jacobian_dot(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> Matrix3xX<f64> {
    let h = 1e-6;
    let jp = forward_kinematics(model, &(q + qd * h)).unwrap().jacobian();
    let jm = forward_kinematics(model, &(q - qd * h)).unwrap().jacobian();
    (jp - jm) / (2.0 * h)
}

/// `(3 tau s + 1) / (tau s + 1)^3` at `s = j omega`.
pub fn analytic_q(tau: f64, omega: f64) -> Complex64 {
    let s = Complex64::new(0.0, omega);
    (3.0 * tau * s + 1.0) / (tau * s + 1.0).powi(3)
}

/// Steady-state gain of `filter` under a unit sinusoid at `omega`,
/// measured by correlation over whole periods after a long transient.
pub fn swept_sine_gain(filter: &mut IirFilter, omega: f64, dt: f64) -> f64 {
    filter.reset();
    let period_steps = (2.0 * PI / omega / dt).round().max(1.0) as usize;
    let warmup = 20 * period_steps.max(200);
    let periods = 10;
    // Use the exact sample count of whole periods for the measured frequency.
    let count = periods * period_steps;
    let w = 2.0 * PI * periods as f64 / (count as f64 * dt);
    let mut c = 0.0;
    let mut s = 0.0;
    for k in 0..warmup + count {
        let t = k as f64 * dt;
        let y = filter.step((w * t).sin());
        if k >= warmup {
            c += y * (w * t).cos();
            s += y * (w * t).sin();
        }
    }
    2.0 * (c * c + s * s).sqrt() / count as f64
}

/// Frequency actually used by [`swept_sine_gain`] for a requested `omega`.
pub fn swept_sine_frequency(omega: f64, dt: f64) -> f64 {
    let period_steps = (2.0 * PI / omega / dt).round().max(1.0) as usize;
    2.0 * PI / (period_steps as f64 * dt)
}
