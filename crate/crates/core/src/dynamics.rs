//! Joint-space rigid-body dynamics and their task-space projections.
//!
//! All joint-space quantities come from one Newton-Euler recursion that takes
//! two velocity arguments. With both set to `qd` it is ordinary inverse
//! dynamics. With different arguments every velocity product is replaced by
//! its symmetrized bilinear form, so the recursion returns
//! `M qdd + C(q, a) b + g` where `C(q, a) b = C(q, b) a` and `C(q, qd) qd` is
//! the Coriolis/centrifugal torque. That symmetric factorization is the one
//! built from Christoffel symbols of the second kind, so `Mdot - 2C` is skew.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, MatrixXx3, SymmetricEigen, Vector3};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::model::{forward_kinematics, ChainKinematics, RobotModel};

/// Condition number of `J M^-1 J^T` above which the inversion is damped.
pub const SINGULAR_CONDITION: f64 = 1e8;
/// Tikhonov term added to `J M^-1 J^T` past [`SINGULAR_CONDITION`].
pub const SINGULAR_DAMPING: f64 = 1e-6;
/// Relative singular-value cutoff for projector pseudo-inverses.
pub const RANK_TOL_REL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct JointSpaceDynamics {
    pub mass: DMatrix<f64>,
    pub coriolis: DMatrix<f64>,
    pub gravity: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct TaskSpaceDynamics {
    /// Operational-space inertia, kg.
    pub lambda: Matrix3<f64>,
    /// Operational-space Coriolis/centrifugal matrix, kg/s.
    pub gamma: Matrix3<f64>,
    /// Operational-space gravity force, N.
    pub eta: Vector3<f64>,
    /// Inertia-weighted pseudo-inverse of the Jacobian.
    pub jm_pinv: MatrixXx3<f64>,
    /// Set when the damped fallback was used.
    pub damped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrictionParams {
    /// N m.
    pub coulomb: DVector<f64>,
    /// N m s / rad.
    pub viscous: DVector<f64>,
    /// rad/s.
    pub smoothing_velocity: f64,
}

impl FrictionParams {
    pub fn new(coulomb: DVector<f64>, viscous: DVector<f64>, smoothing_velocity: f64) -> Result<Self> {
        check_dim("viscous friction", coulomb.len(), viscous.len())?;
        check_finite("friction", coulomb.iter().chain(viscous.iter()))?;
        if coulomb.iter().chain(viscous.iter()).any(|&c| c < 0.0) {
            return Err(Error::InvalidParameter(
                "friction coefficients must be nonnegative".into(),
            ));
        }
        if !(smoothing_velocity > 0.0) || !smoothing_velocity.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "smoothing velocity must be positive, got {smoothing_velocity}"
            )));
        }
        Ok(Self {
            coulomb,
            viscous,
            smoothing_velocity,
        })
    }

    /// Unit Coulomb and viscous coefficients on every joint.
    pub fn unity(dof: usize) -> Self {
        Self {
            coulomb: DVector::from_element(dof, 1.0),
            viscous: DVector::from_element(dof, 1.0),
            smoothing_velocity: 0.01,
        }
    }

    pub fn none(dof: usize) -> Self {
        Self {
            coulomb: DVector::zeros(dof),
            viscous: DVector::zeros(dof),
            smoothing_velocity: 0.01,
        }
    }
}

/// Bilinear Newton-Euler pass: `M qdd + C(q, va) vb + [g]` on precomputed
/// kinematics.
pub(crate) fn newton_euler(
    model: &RobotModel,
    kin: &ChainKinematics,
    va: &DVector<f64>,
    vb: &DVector<f64>,
    qdd: &DVector<f64>,
    gravity_on: bool,
) -> DVector<f64> {
    let n = model.dof();
    let links = model.links();

    let mut w_a = vec![Vector3::zeros(); n];
    let mut w_b = vec![Vector3::zeros(); n];
    let mut w_dot = vec![Vector3::zeros(); n];
    let mut a_com = vec![Vector3::zeros(); n];

    let sym_cross = |wa: &Vector3<f64>, wb: &Vector3<f64>, r: &Vector3<f64>| {
        0.5 * (wa.cross(&wb.cross(r)) + wb.cross(&wa.cross(r)))
    };

    let mut prev_wa = Vector3::zeros();
    let mut prev_wb = Vector3::zeros();
    let mut prev_wdot = Vector3::zeros();
    // base acceleration stands in for gravity
    let mut a_origin = if gravity_on { -model.gravity() } else { Vector3::zeros() };
    for i in 0..n {
        let z = kin.joint_axes[i];
        if i > 0 {
            let r = kin.joint_origins[i] - kin.joint_origins[i - 1];
            a_origin += prev_wdot.cross(&r) + sym_cross(&prev_wa, &prev_wb, &r);
        }
        w_a[i] = prev_wa + z * va[i];
        w_b[i] = prev_wb + z * vb[i];
        w_dot[i] = prev_wdot + z * qdd[i] + 0.5 * (prev_wa.cross(&z) * vb[i] + prev_wb.cross(&z) * va[i]);
        let rc = kin.com[i] - kin.joint_origins[i];
        a_com[i] = a_origin + w_dot[i].cross(&rc) + sym_cross(&w_a[i], &w_b[i], &rc);
        prev_wa = w_a[i];
        prev_wb = w_b[i];
        prev_wdot = w_dot[i];
    }

    let mut tau = DVector::zeros(n);
    let mut f_next = Vector3::zeros();
    let mut n_next = Vector3::zeros();
    for i in (0..n).rev() {
        let link = &links[i];
        let rot = kin.rotations[i];
        let inertia = rot * Matrix3::from_diagonal(&link.inertia_diag) * rot.transpose();
        let force = a_com[i] * link.mass;
        let moment = inertia * w_dot[i] + 0.5 * (w_a[i].cross(&(inertia * w_b[i])) + w_b[i].cross(&(inertia * w_a[i])));
        let rc = kin.com[i] - kin.joint_origins[i];
        let to_next = if i + 1 < n {
            kin.joint_origins[i + 1] - kin.joint_origins[i]
        } else {
            Vector3::zeros()
        };
        let f = force + f_next;
        let m = moment + n_next + rc.cross(&force) + to_next.cross(&f_next);
        tau[i] = kin.joint_axes[i].dot(&m);
        f_next = f;
        n_next = m;
    }
    tau
}

/// `M(q) qdd + C(q, qd) qd + g(q)` (gravity only when `gravity_on`).
pub fn inverse_dynamics(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    qdd: &DVector<f64>,
    gravity_on: bool,
) -> Result<DVector<f64>> {
    model.check_joint_vector("qd", qd)?;
    model.check_joint_vector("qdd", qdd)?;
    let kin = forward_kinematics(model, q)?;
    Ok(newton_euler(model, &kin, qd, qd, qdd, gravity_on))
}

pub fn mass_matrix(model: &RobotModel, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    let kin = forward_kinematics(model, q)?;
    Ok(mass_matrix_at(model, &kin))
}

pub(crate) fn mass_matrix_at(model: &RobotModel, kin: &ChainKinematics) -> DMatrix<f64> {
    let n = model.dof();
    let zero = DVector::zeros(n);
    let mut m = DMatrix::zeros(n, n);
    let mut unit = DVector::zeros(n);
    for j in 0..n {
        unit[j] = 1.0;
        m.set_column(j, &newton_euler(model, kin, &zero, &zero, &unit, false));
        unit[j] = 0.0;
    }
    // columns are exact up to rounding; remove the asymmetric residue
    (&m + m.transpose()) * 0.5
}

pub fn coriolis_matrix(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DMatrix<f64>> {
    model.check_joint_vector("qd", qd)?;
    let kin = forward_kinematics(model, q)?;
    Ok(coriolis_matrix_at(model, &kin, qd))
}

pub(crate) fn coriolis_matrix_at(model: &RobotModel, kin: &ChainKinematics, qd: &DVector<f64>) -> DMatrix<f64> {
    let n = model.dof();
    let zero = DVector::zeros(n);
    let mut c = DMatrix::zeros(n, n);
    let mut unit = DVector::zeros(n);
    for j in 0..n {
        unit[j] = 1.0;
        c.set_column(j, &newton_euler(model, kin, qd, &unit, &zero, false));
        unit[j] = 0.0;
    }
    c
}

pub fn gravity_vector(model: &RobotModel, q: &DVector<f64>) -> Result<DVector<f64>> {
    let kin = forward_kinematics(model, q)?;
    Ok(gravity_vector_at(model, &kin))
}

pub(crate) fn gravity_vector_at(model: &RobotModel, kin: &ChainKinematics) -> DVector<f64> {
    let zero = DVector::zeros(model.dof());
    newton_euler(model, kin, &zero, &zero, &zero, true)
}

pub fn joint_space_dynamics(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> Result<JointSpaceDynamics> {
    model.check_joint_vector("qd", qd)?;
    let kin = forward_kinematics(model, q)?;
    Ok(joint_space_dynamics_at(model, &kin, qd))
}

pub(crate) fn joint_space_dynamics_at(
    model: &RobotModel,
    kin: &ChainKinematics,
    qd: &DVector<f64>,
) -> JointSpaceDynamics {
    JointSpaceDynamics {
        mass: mass_matrix_at(model, kin),
        coriolis: coriolis_matrix_at(model, kin, qd),
        gravity: gravity_vector_at(model, kin),
    }
}

/// Smoothed Coulomb plus viscous friction; the returned torque is what the
/// actuators must supply to overcome it (same sign as `qd`).
pub fn friction_torque(params: &FrictionParams, qd: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("qd", params.coulomb.len(), qd.len())?;
    Ok(DVector::from_iterator(
        qd.len(),
        qd.iter()
            .enumerate()
            .map(|(i, &v)| params.viscous[i] * v + params.coulomb[i] * (v / params.smoothing_velocity).tanh()),
    ))
}

/// `d f_i / d qd_i`, the diagonal friction slope.
pub fn friction_slope(params: &FrictionParams, qd: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("qd", params.coulomb.len(), qd.len())?;
    let v0 = params.smoothing_velocity;
    Ok(DVector::from_iterator(
        qd.len(),
        qd.iter().enumerate().map(|(i, &v)| {
            let th = (v / v0).tanh();
            params.viscous[i] + params.coulomb[i] * (1.0 - th * th) / v0
        }),
    ))
}

/// Kinetic-energy weighted right inverse of a 3-row Jacobian.
#[derive(Debug, Clone)]
pub struct WeightedPinv {
    pub pinv: MatrixXx3<f64>,
    /// `(J M^-1 J^T)^-1` as inverted (damped when `damped`).
    pub lambda: Matrix3<f64>,
    pub condition: f64,
    pub damped: bool,
}

/// `J_M+ = M^-1 J^T (J M^-1 J^T)^-1`, falling back to a damped inverse when
/// `J M^-1 J^T` is ill conditioned.
pub fn weighted_pinv(jac: &Matrix3xX<f64>, mass: &DMatrix<f64>) -> Result<WeightedPinv> {
    check_dim("mass matrix rows", jac.ncols(), mass.nrows())?;
    check_dim("mass matrix columns", jac.ncols(), mass.ncols())?;
    check_finite("jacobian", jac.iter())?;
    check_finite("mass matrix", mass.iter())?;
    let chol = mass
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("mass matrix is not positive definite".into()))?;
    let minv_jt: DMatrix<f64> = chol.solve(&DMatrix::from_iterator(jac.ncols(), 3, jac.transpose().iter().copied()));
    let minv_jt = MatrixXx3::from_iterator(jac.ncols(), minv_jt.iter().copied());
    let inv_lambda: Matrix3<f64> = jac * &minv_jt;
    let inv_lambda = (inv_lambda + inv_lambda.transpose()) * 0.5;

    let eig = SymmetricEigen::new(inv_lambda);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    let damped = !(condition <= SINGULAR_CONDITION);
    let to_invert = if damped {
        inv_lambda + Matrix3::identity() * SINGULAR_DAMPING
    } else {
        inv_lambda
    };
    let lambda = to_invert
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::InvalidParameter("task inertia could not be inverted".into()))?;
    Ok(WeightedPinv {
        pinv: minv_jt * lambda,
        lambda,
        condition,
        damped,
    })
}

pub fn task_space_dynamics(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> Result<TaskSpaceDynamics> {
    model.require_task_capable()?;
    model.check_joint_vector("qd", qd)?;
    let kin = forward_kinematics(model, q)?;
    let js = joint_space_dynamics_at(model, &kin, qd);
    task_space_from_joint(&js, &kin.jacobian(), &kin.jacobian_dot(qd))
}

/// Projects joint-space dynamics into the task space:
/// `Lambda = J_M+^T M J_M+`, `Gamma = J_M+^T [C - M J_M+ Jdot] J_M+`,
/// `eta = J_M+^T g`.
pub fn task_space_from_joint(
    js: &JointSpaceDynamics,
    jac: &Matrix3xX<f64>,
    jac_dot: &Matrix3xX<f64>,
) -> Result<TaskSpaceDynamics> {
    let wp = weighted_pinv(jac, &js.mass)?;
    let jp = &wp.pinv;
    let jpt = jp.transpose();
    let lambda = &jpt * &js.mass * jp;
    let inner = &js.coriolis - &js.mass * jp * jac_dot;
    let gamma = &jpt * inner * jp;
    let eta = &jpt * &js.gravity;
    Ok(TaskSpaceDynamics {
        lambda: (lambda + lambda.transpose()) * 0.5,
        gamma,
        eta,
        jm_pinv: wp.pinv,
        damped: wp.damped,
    })
}

/// `P = I - J^T J_M+^T`: torques through `P` produce no end-effector force.
pub fn nullspace_projector(jac: &Matrix3xX<f64>, mass: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let wp = weighted_pinv(jac, mass)?;
    Ok(projector_from_pinv(jac, &wp.pinv))
}

pub(crate) fn projector_from_pinv(jac: &Matrix3xX<f64>, pinv: &MatrixXx3<f64>) -> DMatrix<f64> {
    let n = jac.ncols();
    let jt_jpt = jac.transpose() * pinv.transpose();
    DMatrix::identity(n, n) - DMatrix::from_iterator(n, n, jt_jpt.iter().copied())
}

/// Moore-Penrose pseudo-inverse by SVD; singular values below
/// `rel_tol * sigma_max` are treated as zero.
pub fn projector_pinv_svd(p: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = p.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = rel_tol * sigma_max;
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => unreachable!("svd computed with both factors"),
    };
    let mut out = DMatrix::zeros(p.ncols(), p.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += v_t.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    out
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = m.clone().singular_values();
    let cutoff = rel_tol * sv.max();
    sv.iter().filter(|&&s| s > cutoff && s > 0.0).count()
}

/// Mechanical energy bookkeeping: kinetic `0.5 qd^T M qd` and potential
/// `-sum m_i g^T p_i`.
pub fn kinetic_energy(mass: &DMatrix<f64>, qd: &DVector<f64>) -> f64 {
    0.5 * qd.dot(&(mass * qd))
}

pub fn potential_energy(model: &RobotModel, kin: &ChainKinematics) -> f64 {
    let g = model.gravity();
    model
        .links()
        .iter()
        .zip(&kin.com)
        .map(|(link, p)| -link.mass * g.dot(p))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinkParams;

    fn horizontal_link() -> RobotModel {
        let link = LinkParams::new(1.0, 1.0, Vector3::zeros(), 0.5).unwrap();
        RobotModel::new(
            "h",
            vec![link],
            vec![-Vector3::y()],
            vec![Vector3::x()],
            Vector3::new(0.0, 0.0, -9.81),
        )
        .unwrap()
    }

    #[test]
    fn rest_without_gravity_needs_no_torque() {
        let m = RobotModel::preset("paper7dof").unwrap();
        let q = DVector::from_vec(vec![0.2, 1.0, 0.3, -1.2, 0.5, 0.1, 0.7]);
        let z = DVector::zeros(7);
        assert_eq!(inverse_dynamics(&m, &q, &z, &z, false).unwrap().norm(), 0.0);
    }

    #[test]
    fn horizontal_link_static_torque() {
        let m = horizontal_link();
        let q = DVector::zeros(1);
        let tau = inverse_dynamics(&m, &q, &q, &q, true).unwrap();
        assert!((tau[0] - 9.81 * 0.5).abs() < 1e-12);
        let g = gravity_vector(&m, &q).unwrap();
        assert!((g[0] - 1.0 * 9.81 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_z_link_inertia() {
        let izz = 0.02;
        let link = LinkParams::new(0.8, 1.5, Vector3::new(0.1, 0.2, izz), 0.25).unwrap();
        let m = RobotModel::new(
            "z",
            vec![link],
            vec![Vector3::z()],
            vec![Vector3::x()],
            Vector3::zeros(),
        )
        .unwrap();
        let mm = mass_matrix(&m, &DVector::from_element(1, 0.4)).unwrap();
        assert!((mm[(0, 0)] - (izz + 1.5 * (0.25f64 * 0.8).powi(2))).abs() < 1e-14);
    }

    #[test]
    fn hanging_chain_has_no_gravity_torque() {
        let m = RobotModel::preset("paper7dof").unwrap();
        let g = gravity_vector(&m, &DVector::zeros(7)).unwrap();
        assert!(g.norm() < 1e-14);
    }

    #[test]
    fn coriolis_vanishes_at_rest() {
        let m = RobotModel::preset("paper7dof").unwrap();
        let q = DVector::from_vec(vec![0.2, 1.0, 0.3, -1.2, 0.5, 0.1, 0.7]);
        assert_eq!(coriolis_matrix(&m, &q, &DVector::zeros(7)).unwrap().norm(), 0.0);
    }

    #[test]
    fn friction_regimes() {
        let p = FrictionParams::unity(3);
        assert_eq!(friction_torque(&p, &DVector::zeros(3)).unwrap().norm(), 0.0);
        let f = friction_torque(&p, &DVector::from_vec(vec![10.0, -10.0, 0.0])).unwrap();
        assert!((f[0] - 11.0).abs() < 1e-12);
        assert!((f[1] + 11.0).abs() < 1e-12);
        assert!(friction_torque(&p, &DVector::zeros(2)).is_err());
        assert!(FrictionParams::new(DVector::zeros(2), DVector::zeros(2), 0.0).is_err());
        assert!(FrictionParams::new(DVector::from_element(2, -1.0), DVector::zeros(2), 0.01).is_err());
    }

    #[test]
    fn identity_weighting_reduces_to_transpose() {
        let jac = Matrix3xX::from_row_slice(&[
            1.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ]);
        let wp = weighted_pinv(&jac, &DMatrix::identity(4, 4)).unwrap();
        assert!(!wp.damped);
        assert!((wp.pinv - jac.transpose()).norm() < 1e-15);
    }

    #[test]
    fn rank_deficient_jacobian_triggers_damping() {
        let jac = Matrix3xX::from_row_slice(&[
            1.0, 0.0, 0.0, 0.0, //
            1.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ]);
        let wp = weighted_pinv(&jac, &DMatrix::identity(4, 4)).unwrap();
        assert!(wp.damped);
        assert!(wp.pinv.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn square_jacobian_has_empty_nullspace() {
        let jac = Matrix3xX::from_row_slice(&[1.0, 0.2, 0.0, 0.0, 1.0, 0.3, 0.1, 0.0, 1.0]);
        let mass = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.5, 0.2, 0.0, 0.2, 1.0]);
        let p = nullspace_projector(&jac, &mass).unwrap();
        assert!(p.norm() < 1e-12);
    }

    #[test]
    fn pinv_of_zero_is_zero() {
        let p = DMatrix::zeros(5, 5);
        assert_eq!(projector_pinv_svd(&p, RANK_TOL_REL).norm(), 0.0);
        assert_eq!(numerical_rank(&p, RANK_TOL_REL), 0);
    }
}
