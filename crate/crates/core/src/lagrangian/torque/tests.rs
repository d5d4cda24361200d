use super::*;
use crate::inertia_param::{assemble_felan, assemble_felan_bs, FactorLayout, Offsets};
use crate::lagrangian::{rotation, GRAVITY};
use crate::net::ModelBundle;
use crate::refdyn::{inverse_dynamics, kinetic_energy_bodies, potential_energy_bodies, random_model};
use crate::topology::{Branch, RobotTopology, Segment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn topo() -> RobotTopology {
    RobotTopology::new(vec![
        Branch::chain(3),
        Branch { segments: vec![Segment::root(1), Segment::child_of(0, 2), Segment::child_of(0, 1)] },
    ])
    .unwrap()
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> GeneralizedState {
    let mut v = |a: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-a..a)).collect() };
    let mut nu = v(1.5);
    nu[4] = nu[4].clamp(-1.2, 1.2);
    GeneralizedState::new(nu, v(1.0), v(2.0)).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

#[test]
fn oracle_fed_torque_matches_newton_euler() {
    let t = topo();
    let model = random_model(&t, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let s = random_state(&mut rng, t.dim());
        let tau = euler_lagrange_torque(&model, &s, model.gravity()).unwrap();
        let rnea = inverse_dynamics(&model, &s).unwrap();
        assert!(rel_err(&tau, &rnea) <= 1e-6, "{}", rel_err(&tau, &rnea));
    }
}

#[test]
fn statics_and_decomposition() {
    let t = topo();
    let model = random_model(&t, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let mut s = random_state(&mut rng, t.dim());
        let d = decompose_torque(&model, &s, GRAVITY).unwrap();
        let total = euler_lagrange_torque(&model, &s, GRAVITY).unwrap();
        assert_eq!(d.total(), total);
        s.nu_dot.iter_mut().for_each(|x| *x = 0.0);
        let d = decompose_torque(&model, &s, GRAVITY).unwrap();
        assert!(d.coriolis.iter().all(|&c| c == 0.0));
        s.nu_ddot.iter_mut().for_each(|x| *x = 0.0);
        let tau = euler_lagrange_torque(&model, &s, GRAVITY).unwrap();
        assert_eq!(tau, d.gravity);
        let weight = model.total_mass() * 9.81;
        assert!(tau[0].abs() < 1e-12 && tau[1].abs() < 1e-12 && (tau[2] - weight).abs() < 1e-10 * weight);
    }
}

#[test]
fn coriolis_scales_quadratically() {
    let t = topo();
    let model = random_model(&t, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let mut s = random_state(&mut rng, t.dim());
        s.nu_ddot.iter_mut().for_each(|x| *x = 0.0);
        let tau1 = euler_lagrange_torque(&model, &s, GRAVITY).unwrap();
        let mut s2 = s.clone();
        s2.nu_dot.iter_mut().for_each(|x| *x *= 2.0);
        let tau2 = euler_lagrange_torque(&model, &s2, GRAVITY).unwrap();
        let mut s0 = s.clone();
        s0.nu_dot.iter_mut().for_each(|x| *x = 0.0);
        let tau0 = euler_lagrange_torque(&model, &s0, GRAVITY).unwrap();
        let lhs: Vec<f64> = tau2.iter().zip(&tau0).map(|(a, b)| a - b).collect();
        let rhs: Vec<f64> = tau1.iter().zip(&tau0).map(|(a, b)| 4.0 * (a - b)).collect();
        assert!(rel_err(&lhs, &rhs) <= 1e-9);
    }
}

#[test]
fn translation_invariance_is_exact() {
    let t = topo();
    let model = random_model(&t, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let s = random_state(&mut rng, t.dim());
        let mut moved = s.clone();
        for i in 0..3 {
            moved.nu[i] += rng.gen_range(-10.0..10.0);
        }
        assert_eq!(
            euler_lagrange_torque(&model, &s, GRAVITY).unwrap(),
            euler_lagrange_torque(&model, &moved, GRAVITY).unwrap()
        );
    }
}

#[test]
fn yaw_rotation_leaves_joint_torques_unchanged() {
    let t = topo();
    let model = random_model(&t, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let s = random_state(&mut rng, t.dim());
        let alpha = rng.gen_range(-3.0..3.0);
        let rz = rotation(Vec3::new(0.0, 0.0, alpha));
        let mut rot = s.clone();
        for v in [&mut rot.nu, &mut rot.nu_dot, &mut rot.nu_ddot] {
            let r = rz.mul_vec(vec3_at(v, 0));
            v[0..3].copy_from_slice(&r.0);
        }
        rot.nu[5] += alpha;
        let a = euler_lagrange_torque(&model, &s, GRAVITY).unwrap();
        let b = euler_lagrange_torque(&model, &rot, GRAVITY).unwrap();
        let scale = a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for i in 3..a.len() {
            assert!((a[i] - b[i]).abs() <= 1e-10 * scale, "coordinate {i}");
        }
        let f = rz.mul_vec(vec3_at(&a, 0));
        assert!((f - vec3_at(&b, 0)).norm() <= 1e-10 * scale);
    }
}

/// Along `ν(t) = ν + tν̇ + ½t²ν̈`, `d(K + P)/dt = ν̇ᵀτ` at `t = 0`.
#[test]
fn power_balance() {
    let t = topo();
    let model = random_model(&t, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let energy = |s: &GeneralizedState, dt: f64| {
        let nu: Vec<f64> = (0..s.dim()).map(|i| s.nu[i] + dt * s.nu_dot[i] + 0.5 * dt * dt * s.nu_ddot[i]).collect();
        let nu_dot: Vec<f64> = (0..s.dim()).map(|i| s.nu_dot[i] + dt * s.nu_ddot[i]).collect();
        let st = GeneralizedState::new(nu.clone(), nu_dot, vec![0.0; s.dim()]).unwrap();
        kinetic_energy_bodies(&model, &st).unwrap() + potential_energy_bodies(&model, &nu).unwrap()
    };
    for _ in 0..20 {
        let s = random_state(&mut rng, t.dim());
        let tau = euler_lagrange_torque(&model, &s, model.gravity()).unwrap();
        let power: f64 = tau.iter().zip(&s.nu_dot).map(|(a, b)| a * b).sum();
        let h = 1e-5;
        let de = (energy(&s, h) - energy(&s, -h)) / (2.0 * h);
        assert!((de - power).abs() <= 1e-6 * (1.0 + power.abs()), "{de} vs {power}");
    }
}

#[test]
fn feature_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let nu: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let j = potential_feature_jacobian_t(&nu);
    assert_eq!(potential_features(&nu).len(), potential_feature_count(4));
    for i in 0..nu.len() {
        let mut p = nu.clone();
        let mut m = nu.clone();
        p[i] += 1e-6;
        m[i] -= 1e-6;
        let fp = potential_features(&p);
        let fm = potential_features(&m);
        for k in 0..fp.len() {
            assert!(((fp[k] - fm[k]) / 2e-6 - j[(i, k)]).abs() < 1e-8);
        }
    }
}

/// Inertia model with central-difference derivatives of an `f64` assembly.
fn fd_model<'a>(f: impl Fn(&[f64]) -> (f64, Vec3, DMat) + 'a) -> impl Fn(&[f64]) -> Result<InertiaSample> + 'a {
    move |q: &[f64]| {
        let (mass, first_moment, h_mat) = f(q);
        let eps = 1e-6;
        let mut d = InertiaSample { mass, first_moment, h_mat, d_mass: vec![], d_first_moment: vec![], d_h_mat: vec![] };
        for i in 0..q.len() {
            let mut p = q.to_vec();
            let mut m = q.to_vec();
            p[i] += eps;
            m[i] -= eps;
            let (a, b) = (f(&p), f(&m));
            d.d_mass.push((a.0 - b.0) / (2.0 * eps));
            d.d_first_moment.push((a.1 - b.1).scale(0.5 / eps));
            d.d_h_mat.push(a.2.sub(&b.2).scale(0.5 / eps));
        }
        Ok(d)
    }
}

fn tape_batch(rng: &mut ChaCha8Rng, n: usize, b: usize) -> (Vec<GeneralizedState>, KinematicBatch) {
    let states: Vec<GeneralizedState> = (0..b).map(|_| random_state(rng, n)).collect();
    let k = KinematicBatch::new(&states, GRAVITY).unwrap();
    (states, k)
}

fn compare(tape: &Tape, tv: &TorqueVars, states: &[GeneralizedState], model: &impl InertiaModel) {
    for (s, st) in states.iter().enumerate() {
        let d = decompose_torque(model, st, GRAVITY).unwrap();
        for (var, want, tol) in [(tv.inertial, &d.inertial, 1e-10), (tv.coriolis, &d.coriolis, 1e-6), (tv.gravity, &d.gravity, 1e-6)] {
            let got = tape.value(var).sample(s);
            assert!(rel_err(got, want) <= tol, "{} > {tol}", rel_err(got, want));
        }
    }
}

#[test]
fn structured_tape_torque_matches_f64_pipeline() {
    let t = topo();
    let layout = FactorLayout::new(&t);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bundle =
        ModelBundle::init(&t, layout.felan_root_outputs, &layout.branch_outputs(), &[16, 16], Some(12.0), &mut rng).unwrap();
    let offsets = Offsets::default();
    let (states, kin) = tape_batch(&mut rng, t.dim(), 4);
    let mut tape = Tape::new();
    let vars = bundle.bind(&mut tape);
    let qs: Vec<&[f64]> = states.iter().map(|s| s.q()).collect();
    let (root, branches) = vars.forward(&mut tape, &t, &qs);
    let out = layout.felan_tape(&mut tape, vars.theta_m, &root, &branches, &offsets).unwrap();
    let kv = kin.bind(&mut tape);
    let (inertial, coriolis) = kv.inertial_coriolis(&mut tape, &out.factor);
    let mass = Jet::constant(out.mass, t.n_q());
    let gravity = kv.composite_gravity(&mut tape, &mass, &out.h);
    let tv = kv.combine(&mut tape, inertial, coriolis, gravity);

    let f = |q: &[f64]| {
        let (r, b) = bundle.evaluate(&t, q).unwrap();
        let raw = layout.decode_felan(bundle.theta_m, &r, &b, offsets.eps_l).unwrap();
        let a = assemble_felan(&raw, &t, &offsets).unwrap();
        (bundle.theta_m * bundle.theta_m, a.h, a.h_mat)
    };
    compare(&tape, &tv, &states, &fd_model(f));

    // the world-z gravity entry depends only on θ_m
    let g = tape.value(tv.gravity);
    let z0 = g.get(0, 2, 0);
    assert!((0..4).all(|s| g.get(s, 2, 0) == z0));
    assert!((z0 - 12.0 * 9.81).abs() < 1e-12);
}

#[test]
fn sparse_and_dense_tape_torques_match_f64_pipeline() {
    let t = topo();
    let layout = FactorLayout::new(&t);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (states, kin) = tape_batch(&mut rng, t.dim(), 3);
    let qs: Vec<&[f64]> = states.iter().map(|s| s.q()).collect();
    let maps = BaseMomentMaps::new(t.dim());

    let bundle = ModelBundle::init(&t, layout.bs_root_outputs, &layout.branch_outputs(), &[16], None, &mut rng).unwrap();
    let mut tape = Tape::new();
    let vars = bundle.bind(&mut tape);
    let (root, branches) = vars.forward(&mut tape, &t, &qs);
    let f = layout.bs_tape(&mut tape, &root, &branches, 0.01);
    let kv = kin.bind(&mut tape);
    let (i, c) = kv.inertial_coriolis(&mut tape, &f);
    let (m, h) = maps.apply(&mut tape, &f);
    let g = kv.composite_gravity(&mut tape, &m, &h);
    let tv = kv.combine(&mut tape, i, c, g);
    let eval = |q: &[f64]| {
        let (r, b) = bundle.evaluate(&t, q).unwrap();
        let a = assemble_felan_bs(&layout.decode_bs(&r, &b, 0.01).unwrap(), &t).unwrap();
        (a.mass, a.h, a.h_mat)
    };
    compare(&tape, &tv, &states, &fd_model(eval));

    let dense = crate::net::Mlp::init(&[2 * t.n_q(), 16, layout.dense_outputs], &mut rng).unwrap();
    let mut tape = Tape::new();
    let dv = dense.bind(&mut tape);
    let all: Vec<usize> = (0..t.n_q()).collect();
    let x = crate::net::feature_jet(&mut tape, &qs, &all, t.n_q());
    let out = dv.forward(&mut tape, &x);
    let c = layout.dense_tape(&mut tape, &out, 0.01);
    let f = tape.j_transpose(&c);
    let kv = kin.bind(&mut tape);
    let (i, co) = kv.inertial_coriolis(&mut tape, &f);
    let (m, h) = maps.apply(&mut tape, &f);
    let g = kv.composite_gravity(&mut tape, &m, &h);
    let tv = kv.combine(&mut tape, i, co, g);
    let eval = |q: &[f64]| {
        let c = layout.decode_dense(&dense.forward(&crate::net::feature_map(q)).unwrap(), 0.01).unwrap();
        let h = crate::inertia_param::assemble_delan_dense(&c).unwrap();
        let (m, fm) = crate::inertia_param::mass_and_moment(&h);
        (m, fm, h)
    };
    compare(&tape, &tv, &states, &fd_model(eval));
}

#[test]
fn learned_potential_gradient_maps_through_features() {
    let t = topo();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (states, kin) = tape_batch(&mut rng, t.dim(), 3);
    let net = crate::net::Mlp::init(&[potential_feature_count(t.n_q()), 8, 1], &mut rng).unwrap();
    let mut tape = Tape::new();
    let pv = net.bind(&mut tape);
    let kv = kin.bind(&mut tape);
    let (_, grad) = pv.scalar_with_input_gradient(&mut tape, kv.features);
    let g = kv.feature_gravity(&mut tape, grad);
    let p = |nu: &[f64]| net.forward(&potential_features(nu)).unwrap()[0];
    for (s, st) in states.iter().enumerate() {
        let got = tape.value(g).sample(s);
        for i in 0..t.dim() {
            let mut a = st.nu.clone();
            let mut b = st.nu.clone();
            a[i] += 1e-6;
            b[i] -= 1e-6;
            assert!(((p(&a) - p(&b)) / 2e-6 - got[i]).abs() < 1e-7);
        }
    }
}
