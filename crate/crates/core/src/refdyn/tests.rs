use super::*;
use crate::dataset::TrajectoryDataset;
use crate::lagrangian::{potential_energy, transform_inertia, GeneralizedState};

use crate::topology::Branch;
use alloc::vec;
use alloc::vec::Vec;

fn quadruped() -> RobotTopology {
    RobotTopology::chains(&[3, 3, 3, 3]).unwrap()
}

fn tree() -> RobotTopology {
    RobotTopology::new(vec![
        Branch::chain(2),
        Branch { segments: vec![crate::topology::Segment::root(2), crate::topology::Segment::child_of(0, 1), crate::topology::Segment::child_of(0, 2)] },
    ])
    .unwrap()
}

fn random_state(n: usize, seed: u64) -> GeneralizedState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = |s: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-s..s)).collect() };
    let mut nu = v(1.0);
    nu[4] = nu[4].clamp(-1.0, 1.0);
    let (a, b) = (v(1.0), v(2.0));
    GeneralizedState::new(nu, a, b).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

#[test]
fn mass_matrix_matches_body_kinetic_energy() {
    for (k, topo) in [quadruped(), tree()].iter().enumerate() {
        let model = random_model(topo, 10 + k as u64);
        for s in 0..5 {
            let st = random_state(model.dim(), s);
            let (h, _) = composite_inertia(&model, st.q()).unwrap();
            let hw = transform_inertia(&h, st.euler()).unwrap();
            let ke = 0.5 * st.nu_dot.iter().zip(hw.mul_vec(&st.nu_dot)).map(|(a, b)| a * b).sum::<f64>();
            let oracle = kinetic_energy_bodies(&model, &st).unwrap();
            assert!((ke - oracle).abs() < 1e-10 * oracle.max(1.0), "{ke} vs {oracle}");
        }
    }
}

#[test]
fn base_block_is_composite_body() {
    let model = random_model(&quadruped(), 3);
    let st = random_state(model.dim(), 1);
    let (h, comp) = composite_inertia(&model, st.q()).unwrap();
    let total = model.total_mass();
    assert!((comp.mass - total).abs() < 1e-12);
    let m = comp.to_matrix();
    for i in 0..6 {
        for j in 0..6 {
            assert!((m[(i, j)] - h[(i, j)]).abs() < 1e-12);
        }
    }
    for i in 0..3 {
        assert!((h[(i, i)] - total).abs() < 1e-12);
    }
}

#[test]
fn mass_matrix_is_spd_and_obeys_sparsity() {
    let topo = tree();
    let model = random_model(&topo, 4);
    let mask = crate::topology::sparsity_pattern(&topo);
    let st = random_state(model.dim(), 9);
    let (h, _) = composite_inertia(&model, st.q()).unwrap();
    assert!(h.min_eigenvalue() > 0.0);
    for i in 0..h.rows() {
        for j in 0..h.cols() {
            assert!((h[(i, j)] - h[(j, i)]).abs() < 1e-12);
            if !mask.allows_symmetric(i, j) {
                assert_eq!(h[(i, j)], 0.0, "({i},{j})");
            }
        }
    }
}

#[test]
fn inverse_dynamics_matches_crba() {
    let model = random_model(&quadruped(), 5);
    for s in 0..4 {
        let st = random_state(model.dim(), 20 + s);
        let n = model.dim();
        let (h, _) = composite_inertia(&model, st.q()).unwrap();
        let hw = transform_inertia(&h, st.euler()).unwrap();
        let from_rnea = rnea::world_mass_matrix(&model, &st.nu).unwrap();
        assert!(from_rnea.max_abs_diff(&hw) < 1e-10 * hw.max_abs());
        let d = decompose(&model, &st).unwrap();
        assert!(close(&d.inertial, &hw.mul_vec(&st.nu_ddot), 1e-10));
        let sum: Vec<f64> = (0..n).map(|i| d.inertial[i] + d.coriolis[i] + d.gravity[i]).collect();
        assert!(close(&sum, &d.total, 1e-12));
    }
}

#[test]
fn gravity_term_is_potential_gradient() {
    let model = random_model(&tree(), 6);
    let st = random_state(model.dim(), 3);
    let d = decompose(&model, &st).unwrap();
    let eps = 1e-6;
    for i in 0..model.dim() {
        let mut p = st.nu.clone();
        let mut m = st.nu.clone();
        p[i] += eps;
        m[i] -= eps;
        let fd = (potential_energy_bodies(&model, &p).unwrap() - potential_energy_bodies(&model, &m).unwrap()) / (2.0 * eps);
        assert!((fd - d.gravity[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", d.gravity[i]);
    }
}

#[test]
fn composite_potential_matches_bodies() {
    let model = random_model(&quadruped(), 8);
    let st = random_state(model.dim(), 4);
    let (_, comp) = composite_inertia(&model, st.q()).unwrap();
    let p = potential_energy(comp.mass, comp.first_moment, st.base_position(), st.euler(), model.gravity());
    let oracle = potential_energy_bodies(&model, &st.nu).unwrap();
    assert!((p - oracle).abs() < 1e-10 * (1.0 + oracle.abs()));
}

#[test]
fn coriolis_is_quadratic_in_velocity() {
    let model = random_model(&tree(), 7);
    let st = random_state(model.dim(), 5);
    let c1 = decompose(&model, &st).unwrap().coriolis;
    let scaled = GeneralizedState { nu_dot: st.nu_dot.iter().map(|v| 3.0 * v).collect(), ..st.clone() };
    let c3 = decompose(&model, &scaled).unwrap().coriolis;
    let expect: Vec<f64> = c1.iter().map(|c| 9.0 * c).collect();
    assert!(close(&c3, &expect, 1e-10));
}

#[test]
fn torque_is_affine_in_acceleration() {
    let model = random_model(&quadruped(), 11);
    let st = random_state(model.dim(), 6);
    let other = random_state(model.dim(), 7).nu_ddot;
    let t = |acc: Vec<f64>| inverse_dynamics(&model, &GeneralizedState { nu_ddot: acc, ..st.clone() }).unwrap();
    let (a, b) = (st.nu_ddot.clone(), other);
    let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.25 * x + 0.75 * y).collect();
    let ta = t(a);
    let tb = t(b);
    let expect: Vec<f64> = ta.iter().zip(&tb).map(|(x, y)| 0.25 * x + 0.75 * y).collect();
    assert!(close(&t(mid), &expect, 1e-11));
}

#[test]
fn regressor_reproduces_inverse_dynamics() {
    let model = random_model(&tree(), 12);
    let st = random_state(model.dim(), 8);
    let y = regressor(&model, &st).unwrap();
    let pi: Vec<f64> = model.bodies().iter().flat_map(body_params_to_vector).collect();
    assert!(close(&y.mul_vec(&pi), &inverse_dynamics(&model, &st).unwrap(), 1e-11));
}

#[test]
fn inertia_derivative_matches_finite_difference() {
    let model = random_model(&tree(), 13);
    let q: Vec<f64> = random_state(model.dim(), 2).q().to_vec();
    let eps = 1e-6;
    for i in 0..q.len() {
        let (dh, dfm) = composite_inertia_derivative(&model, &q, i).unwrap();
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[i] += eps;
        qm[i] -= eps;
        let (hp, cp) = composite_inertia(&model, &qp).unwrap();
        let (hm, cm) = composite_inertia(&model, &qm).unwrap();
        let fd = hp.sub(&hm).scale(0.5 / eps);
        assert!(fd.max_abs_diff(&dh) < 1e-6);
        let fdh = (cp.first_moment - cm.first_moment).scale(0.5 / eps);
        assert!((fdh - dfm).norm() < 1e-6);
    }
}

#[test]
fn free_motion_conserves_energy() {
    let topo = RobotTopology::chains(&[2, 1]).unwrap();
    let model = random_model(&topo, 14);
    let n = model.dim();
    let st = random_state(n, 10);
    let mut nu = st.nu.clone();
    let mut vel: Vec<f64> = st.nu_dot.iter().map(|v| 0.5 * v).collect();
    let tau = vec![0.0; n];
    let e0 = total_energy(&model, &nu, &vel).unwrap();
    let dt = 1e-4;
    for _ in 0..10_000 {
        let (a, b) = rk4_step(&model, &nu, &vel, &tau, dt).unwrap();
        nu = a;
        vel = b;
    }
    let e1 = total_energy(&model, &nu, &vel).unwrap();
    assert!(((e1 - e0) / e0.abs()).abs() <= 1e-6, "{e0} -> {e1}");
}

#[test]
fn potential_sign_examples() {
    let topo = RobotTopology::chains(&[1]).unwrap();
    let base = random_model(&topo, 1);
    let mut bodies = base.bodies().to_vec();
    bodies[0] = BodyParams { mass: 2.0, com: Vec3::ZERO, rot_inertia: SymMat3::IDENTITY };
    bodies[1] = BodyParams { mass: 0.0, com: Vec3::ZERO, rot_inertia: SymMat3::ZERO };
    let model = base.with_bodies(bodies).unwrap();
    let mut nu = vec![0.0; model.dim()];
    nu[2] = 1.0;
    let p = potential_energy_bodies(&model, &nu).unwrap();
    assert!((p - 2.0 * 9.81).abs() < 1e-4);
}

#[test]
fn massless_link_stays_finite() {
    let topo = RobotTopology::chains(&[2]).unwrap();
    let base = random_model(&topo, 2);
    let mut bodies = base.bodies().to_vec();
    bodies[2] = BodyParams { mass: 0.0, com: Vec3::new(0.1, 0.0, 0.0), rot_inertia: SymMat3::ZERO };
    let model = base.with_bodies(bodies).unwrap();
    let st = random_state(model.dim(), 3);
    let tau = inverse_dynamics(&model, &st).unwrap();
    assert!(tau.iter().all(|t| t.is_finite()));
    let (h, _) = composite_inertia(&model, st.q()).unwrap();
    assert!(h.min_eigenvalue() > 0.0);
    let acc = forward_dynamics(&model, &st.nu, &st.nu_dot, &tau).unwrap();
    assert!(close(&acc, &st.nu_ddot, 1e-5));
}

#[test]
fn scheme_maps() {
    let raw = [2.0, 0.2, -0.1, 0.4, 0.5, 0.1, 0.6, -0.2, 0.3, 0.7];
    let ns = body_params_from(&raw, InertialParamScheme::Ns).unwrap();
    assert_eq!(ns.rot_inertia.upper(), [0.5, 0.1, 0.6, -0.2, 0.3, 0.7]);
    assert_eq!(body_params_to_vector(&ns)[1..4], [0.2, -0.1, 0.4]);
    let pd = body_params_from(&raw, InertialParamScheme::Pd).unwrap();
    assert!(pd.rot_inertia.lambda_min() >= 0.0);
    let cov = body_params_from(&raw, InertialParamScheme::Cov).unwrap();
    assert!(cov.rot_inertia.lambda_min() >= 0.0);
    assert!(crate::spatial::triangle_inequality_satisfied(&cov.rot_inertia, 1e-12));
    assert!(body_params_from(&raw[..9], InertialParamScheme::Ns).is_err());
}

#[test]
fn random_models_are_deterministic_and_consistent() {
    let topo = quadruped();
    assert_eq!(random_model(&topo, 42), random_model(&topo, 42));
    assert_ne!(random_model(&topo, 42), random_model(&topo, 43));
    for b in random_model(&topo, 42).bodies() {
        assert!(b.mass >= 0.1 && b.mass <= 10.0);
        assert!(b.com_inertia().lambda_min() > 0.0);
        assert!(crate::spatial::triangle_inequality_satisfied(&b.com_inertia(), 1e-12));
    }
}

fn excitation(model: &GroundTruthModel, seed: u64) -> TrajectoryDataset {
    let spec = ExcitationSpec { duration: 2.0, seed, ..ExcitationSpec::default() };
    generate_excitation(model, &spec).unwrap()
}

#[test]
fn excitation_is_deterministic_and_labelled() {
    let model = random_model(&tree(), 15);
    let a = excitation(&model, 3);
    assert_eq!(a, excitation(&model, 3));
    assert_ne!(a, excitation(&model, 4));
    assert_eq!(a.len(), 200);
    for i in (0..a.len()).step_by(37) {
        assert!(close(a.tau(i), &inverse_dynamics(&model, &a.state(i)).unwrap(), 0.0));
        assert!(a.nu(i)[4].abs() <= 0.4 + 1e-12);
    }
}

#[test]
fn excitation_derivatives_are_consistent() {
    let model = random_model(&RobotTopology::chains(&[2]).unwrap(), 16);
    let spec = ExcitationSpec { duration: 1.0, rate: 1000.0, ..ExcitationSpec::default() };
    let d = generate_excitation(&model, &spec).unwrap();
    let dt = 1.0 / spec.rate;
    for i in 1..d.len() - 1 {
        for c in 0..model.dim() {
            let v = (d.nu(i + 1)[c] - d.nu(i - 1)[c]) / (2.0 * dt);
            let a = (d.nu_dot(i + 1)[c] - d.nu_dot(i - 1)[c]) / (2.0 * dt);
            assert!((v - d.nu_dot(i)[c]).abs() < 1e-3 * (1.0 + v.abs()));
            assert!((a - d.nu_ddot(i)[c]).abs() < 1e-3 * (1.0 + a.abs()));
        }
    }
}

#[test]
fn excitation_rejects_bad_specs() {
    let model = random_model(&tree(), 1);
    for spec in [
        ExcitationSpec { duration: 0.0, ..ExcitationSpec::default() },
        ExcitationSpec { rate: f64::NAN, ..ExcitationSpec::default() },
        ExcitationSpec { harmonics: 0, ..ExcitationSpec::default() },
        ExcitationSpec { joint_frequency: (1.0, 0.5), ..ExcitationSpec::default() },
    ] {
        assert!(matches!(generate_excitation(&model, &spec), Err(Error::InvalidSpec(_))));
    }
}

