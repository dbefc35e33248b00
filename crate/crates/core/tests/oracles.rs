mod common;

use common::*;
use nalgebra::{DMatrix, DVector, Vector3};
use proptest::prelude::*;
use taskdob::control::{compose_torque, recover_null_command};
use taskdob::dynamics::{
    coriolis_matrix, friction_torque, gravity_vector, inverse_dynamics, joint_space_dynamics, mass_matrix,
    nullspace_projector, numerical_rank, task_space_dynamics, weighted_pinv, FrictionParams, RANK_TOL_REL,
};
use taskdob::model::{forward_kinematics, jacobian_dot, JointState, TaskState};
use taskdob::observer::{qfilter_from_cutoff, NominalModel, TaskSpaceObserver};
use taskdob::scenario::{PerturbationEvent, Scenario};
use taskdob::sim::{forward_dynamics, perturbation_torque, run};

#[test]
fn jacobian_matches_finite_differences() {
    let model = arm();
    let mut r = rng(1);
    for _ in 0..20 {
        let q = random_vec(&mut r, 7, 3.0);
        let qd = random_vec(&mut r, 7, 2.0);
        let kin = forward_kinematics(&model, &q).unwrap();
        assert!((kin.jacobian() - fd_jacobian(&model, &q)).amax() < 1e-8);
        let jd = jacobian_dot(&model, &q, &qd).unwrap();
        assert!((jd - fd_jacobian_dot(&model, &q, &qd)).amax() < 1e-7);
    }
}

#[test]
fn mass_matrix_matches_lagrangian_form() {
    let model = arm();
    let mut r = rng(2);
    for _ in 0..20 {
        let q = random_vec(&mut r, 7, 3.0);
        let m = mass_matrix(&model, &q).unwrap();
        let reference = lagrangian_mass(&model, &q);
        assert!((&m - &reference).norm() <= 1e-10 * reference.norm());
        assert!((&m - m.transpose()).amax() < 1e-14);
        assert!(m.clone().cholesky().is_some());
    }
}

#[test]
fn coriolis_matches_christoffel_symbols() {
    let model = arm();
    let mut r = rng(3);
    for _ in 0..10 {
        let q = random_vec(&mut r, 7, 3.0);
        let qd = random_vec(&mut r, 7, 2.0);
        let c = coriolis_matrix(&model, &q, &qd).unwrap();
        assert!((c - christoffel_coriolis(&model, &q, &qd)).amax() < 1e-7);
    }
}

#[test]
fn gravity_is_potential_gradient() {
    let model = arm();
    let mut r = rng(4);
    for _ in 0..20 {
        let q = random_vec(&mut r, 7, 3.0);
        let g = gravity_vector(&model, &q).unwrap();
        assert!((g - potential_gradient(&model, &q)).amax() < 1e-6);
    }
}

#[test]
fn inverse_dynamics_is_the_assembled_equation() {
    let model = arm();
    let mut r = rng(5);
    for _ in 0..10 {
        let q = random_vec(&mut r, 7, 3.0);
        let qd = random_vec(&mut r, 7, 2.0);
        let qdd = random_vec(&mut r, 7, 5.0);
        let js = joint_space_dynamics(&model, &q, &qd).unwrap();
        let tau = inverse_dynamics(&model, &q, &qd, &qdd, true).unwrap();
        let expect = &js.mass * &qdd + &js.coriolis * &qd + &js.gravity;
        assert!((tau - expect).amax() < 1e-10);
    }
}

#[test]
fn forward_inverts_inverse_dynamics() {
    let model = arm();
    let none = FrictionParams::none(7);
    let mut r = rng(6);
    for _ in 0..20 {
        let q = random_vec(&mut r, 7, 3.0);
        let qd = random_vec(&mut r, 7, 2.0);
        let qdd = random_vec(&mut r, 7, 5.0);
        let tau = inverse_dynamics(&model, &q, &qd, &qdd, true).unwrap();
        let state = JointState { q, qd, qdd: None };
        let back = forward_dynamics(&model, &none, &state, &tau, &DVector::zeros(7)).unwrap();
        assert!((back - qdd).amax() < 1e-9);
    }
}

#[test]
fn weighted_pinv_satisfies_penrose_conditions() {
    let model = arm();
    let mut r = rng(7);
    for _ in 0..20 {
        let q = random_regular_q(&model, &mut r);
        let kin = forward_kinematics(&model, &q).unwrap();
        let j = kin.jacobian();
        let m = mass_matrix(&model, &q).unwrap();
        let jp = weighted_pinv(&j, &m).unwrap().pinv;
        assert!((&j * &jp - nalgebra::Matrix3::identity()).amax() < 1e-10);
        assert!((&j * &jp * &j - &j).amax() < 1e-10);
        assert!((&jp * &j * &jp - &jp).amax() < 1e-8);
        // Weighted symmetry: M J_M+ J is symmetric.
        let mjj = &m * (&jp * &j);
        assert!((&mjj - mjj.transpose()).amax() < 1e-9);
    }
}

#[test]
fn task_space_dynamics_reproduce_joint_motion() {
    let model = arm();
    let mut r = rng(8);
    for _ in 0..20 {
        let q = random_regular_q(&model, &mut r);
        let kin = forward_kinematics(&model, &q).unwrap();
        let j = kin.jacobian();
        let m = mass_matrix(&model, &q).unwrap();
        let jp = weighted_pinv(&j, &m).unwrap().pinv;
        let xd = Vector3::from_fn(|_, _| rand::Rng::random_range(&mut r, -0.5..0.5));
        let qd = &jp * xd;
        let f = Vector3::from_fn(|_, _| rand::Rng::random_range(&mut r, -5.0..5.0));
        let js = joint_space_dynamics(&model, &q, &qd).unwrap();
        let ts = task_space_dynamics(&model, &q, &qd).unwrap();
        // Joint-space integration of tau = J^T f, then mapped to the task.
        let tau = j.transpose() * f;
        let rhs = DVector::from_iterator(7, tau.iter().copied()) - &js.coriolis * &qd - &js.gravity;
        let qdd = m.clone().try_inverse().unwrap() * rhs;
        let xdd = &j * &qdd + kin.jacobian_dot(&qd) * &qd;
        let f_back = ts.lambda * xdd + ts.gamma * xd + ts.eta;
        assert!(
            (f_back - f).amax() < 1e-8 * f.amax().max(1.0),
            "{}",
            (f_back - f).amax()
        );
        // Operational inertia is the inverse of J M^-1 J^T.
        let inv = &j * m.clone().try_inverse().unwrap() * j.transpose();
        assert!((ts.lambda * inv - nalgebra::Matrix3::identity()).amax() < 1e-9);
    }
}

#[test]
fn projector_properties() {
    let model = arm();
    let mut r = rng(9);
    for _ in 0..20 {
        let q = random_regular_q(&model, &mut r);
        let j = forward_kinematics(&model, &q).unwrap().jacobian();
        let m = mass_matrix(&model, &q).unwrap();
        let p = nullspace_projector(&j, &m).unwrap();
        let jp = weighted_pinv(&j, &m).unwrap().pinv;
        assert!((&p * &p - &p).amax() < 1e-9);
        assert!((jp.transpose() * &p).amax() < 1e-9);
        assert_eq!(numerical_rank(&p, RANK_TOL_REL), 4);
    }
}

#[test]
fn null_command_round_trip() {
    let model = arm();
    let mut r = rng(10);
    let q = random_regular_q(&model, &mut r);
    let j = forward_kinematics(&model, &q).unwrap().jacobian();
    let m = mass_matrix(&model, &q).unwrap();
    let p = nullspace_projector(&j, &m).unwrap();
    for _ in 0..20 {
        let tau0 = random_vec(&mut r, 7, 10.0);
        let f = Vector3::new(1.0, -2.0, 0.5);
        let out = compose_torque(&j, &f, &Vector3::zeros(), &p, &tau0).unwrap();
        let rec = recover_null_command(&p, &out.joint_torque, &j, &f).unwrap();
        assert!((&p * rec - &p * &tau0).amax() < 1e-8);
    }
}

#[test]
fn qfilter_swept_sine_matches_analytic_magnitude() {
    let spec = qfilter_from_cutoff(20.0).unwrap();
    let dt = 1e-3;
    let mut f = taskdob::filter::IirFilter::new(spec.discretize(dt).unwrap());
    for omega in [1.0, 10.0, 50.0, 100.0] {
        let w = swept_sine_frequency(omega, dt);
        let measured = swept_sine_gain(&mut f, omega, dt);
        let expected = analytic_q(spec.tau, w).norm();
        assert!(
            (measured / expected - 1.0).abs() < 0.01,
            "omega {omega}: {measured} vs {expected}"
        );
    }
}

#[test]
fn exact_nominal_observer_converges_to_step() {
    let dt = 1e-3;
    let spec = qfilter_from_cutoff(20.0).unwrap();
    let mass = Vector3::new(2.5, 2.2, 2.2);
    let damping = Vector3::new(1.0, 1e-5, 1e-5);
    let mut obs = TaskSpaceObserver::new(spec, NominalModel::mass_damper(mass, damping).unwrap(), dt).unwrap();
    let d = Vector3::new(1.0, 0.0, 0.0);
    let mut xd = Vector3::zeros();
    let mut estimate = Vector3::zeros();
    let steps = (15.0 * spec.tau / dt).ceil() as usize;
    for k in 1..=steps {
        let u = -estimate;
        let xdd = (u + d - damping.component_mul(&xd)).component_div(&mass);
        let task = TaskState {
            x: Vector3::zeros(),
            xd,
            xdd,
        };
        estimate = obs.step(k as f64 * dt, &Vector3::zeros(), &task, None).unwrap();
        xd += xdd * dt;
    }
    assert!((estimate[0] - 1.0).abs() < 0.02);
    assert!(estimate[1].abs() < 0.01 && estimate[2].abs() < 0.01);
}

#[test]
fn unperturbed_regulation_holds_position() {
    let s = Scenario::regulation_fixture().without_perturbations();
    let trace = run(&s).unwrap();
    let x0 = trace.rows[0].x;
    let worst = trace.rows.iter().map(|r| (r.x - x0).norm()).fold(0.0, f64::max);
    assert!(worst <= 1e-6, "drift {worst}");
}

#[test]
fn replay_is_bit_identical() {
    let mut doc = Scenario::reaching_fixture().doc;
    doc.duration_s = 0.2;
    doc.noise_std_m = 1e-5;
    let s = Scenario::from_doc(doc, None).unwrap();
    let a = taskdob::export::trace_to_json(&run(&s).unwrap()).unwrap();
    let b = taskdob::export::trace_to_json(&run(&s).unwrap()).unwrap();
    assert_eq!(a, b);
    let c = taskdob::export::trace_to_json(&run(&s.with_seed(1234)).unwrap()).unwrap();
    assert_ne!(a, c);
}

#[test]
fn trace_rows_are_evenly_spaced() {
    let mut doc = Scenario::regulation_fixture().doc;
    doc.duration_s = 0.3;
    let trace = run(&Scenario::from_doc(doc, None).unwrap()).unwrap();
    assert_eq!(trace.len(), 301);
    for (k, r) in trace.rows.iter().enumerate() {
        assert_eq!(r.t, k as f64 * 1e-3);
    }
}

fn arb_state() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-3.0..3.0f64, 7),
        prop::collection::vec(-2.0..2.0f64, 7),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn skew_symmetry_of_mdot_minus_2c((q, qd) in arb_state(), x in prop::collection::vec(-1.0..1.0f64, 7)) {
        let model = arm();
        let (q, qd, x) = (DVector::from_vec(q), DVector::from_vec(qd), DVector::from_vec(x));
        let n = mass_dot(&model, &q, &qd) - coriolis_matrix(&model, &q, &qd).unwrap() * 2.0;
        prop_assert!(x.dot(&(&n * &x)).abs() <= 1e-6);
    }

    #[test]
    fn perturbations_do_not_reach_outer_joints(
        q in prop::collection::vec(-3.0..3.0f64, 7),
        link in 0usize..7,
        f in prop::array::uniform3(-50.0..50.0f64),
        p in prop::array::uniform3(-0.1..0.1f64),
    ) {
        let model = arm();
        let kin = forward_kinematics(&model, &DVector::from_vec(q)).unwrap();
        let e = PerturbationEvent { link, point_m: p, force_n: f, start_s: 0.0, duration_s: 1.0 };
        let tau = perturbation_torque(&model, &kin, &[e], 0.5).unwrap();
        for j in link + 1..7 {
            prop_assert_eq!(tau[j], 0.0);
        }
    }

    #[test]
    fn friction_dissipates(qd in prop::collection::vec(-5.0..5.0f64, 7)) {
        let qd = DVector::from_vec(qd);
        let f = friction_torque(&FrictionParams::unity(7), &qd).unwrap();
        prop_assert!(f.dot(&qd) >= 0.0);
        let back = friction_torque(&FrictionParams::unity(7), &(-&qd)).unwrap();
        prop_assert!((f + back).amax() < 1e-14);
    }

    #[test]
    fn qfilter_unit_dc_gain(cutoff in 1.0..200.0f64) {
        let spec = qfilter_from_cutoff(cutoff).unwrap();
        prop_assert!((spec.discretize(1e-3).unwrap().dc_gain() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mass_matrix_is_positive_definite(q in prop::collection::vec(-3.0..3.0f64, 7)) {
        let m: DMatrix<f64> = mass_matrix(&arm(), &DVector::from_vec(q)).unwrap();
        prop_assert!(m.symmetric_eigenvalues().min() > 0.0);
    }
}
