use fbid_core::inertia_param::{assemble_felan, positive_diagonal, Offsets, RawFactorOutputs};
use fbid_core::lagrangian::{euler_lagrange_torque, GeneralizedState};
use fbid_core::refdyn::{composite_inertia, inverse_dynamics, random_model};
use fbid_core::spatial::{branch_sparse_factor, reverse_cholesky, skew, BranchBlocks};
use fbid_core::topology::{Branch, RobotTopology, Segment};
use fbid_core::{DMat, Mat3, SymMat3, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn topology_from(rng: &mut ChaCha8Rng) -> RobotTopology {
    let branches = (0..rng.gen_range(1..=3))
        .map(|_| {
            let mut segs = vec![Segment::root(rng.gen_range(1..=3))];
            if rng.gen_bool(0.3) {
                segs.push(Segment::child_of(0, rng.gen_range(1..=2)));
            }
            Branch { segments: segs }
        })
        .collect();
    RobotTopology::new(branches).unwrap()
}

fn state_from(rng: &mut ChaCha8Rng, n: usize) -> GeneralizedState {
    let mut v = |a: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-a..a)).collect() };
    let mut nu = v(1.5);
    nu[4] = nu[4].clamp(-1.2, 1.2);
    GeneralizedState::new(nu, v(1.0), v(2.0)).unwrap()
}

fn raw_from(rng: &mut ChaCha8Rng, topo: &RobotTopology, scale: f64) -> RawFactorOutputs {
    let mut v = || scale * rng.gen_range(-1.0..1.0);
    let h = Vec3::new(v(), v(), v());
    let theta_m = v();
    let mut l_sigma = Mat3::ZERO;
    for i in 0..3 {
        for j in 0..=i {
            l_sigma.0[i][j] = if i == j { positive_diagonal(rng.gen_range(-3.0..3.0), 0.01) } else { scale * rng.gen_range(-1.0..1.0) };
        }
    }
    let branches = (0..topo.n_branches())
        .map(|k| {
            let n = topo.branch_joints(k).len();
            let mut l = DMat::zeros(n, n);
            for (i, j) in topo.branch_pattern(k) {
                l[(i, j)] = if i == j { positive_diagonal(rng.gen_range(-3.0..3.0), 0.01) } else { scale * rng.gen_range(-1.0..1.0) };
            }
            BranchBlocks {
                k: DMat::from_fn(n, 3, |_, _| scale * rng.gen_range(-1.0..1.0)),
                w: DMat::from_fn(n, 3, |_, _| scale * rng.gen_range(-1.0..1.0)),
                l,
            }
        })
        .collect();
    RawFactorOutputs { theta_m, h, l_sigma, branches }
}

fn triangle_margin(inertia: &SymMat3) -> f64 {
    let ev = inertia.eigen().values;
    0.5 * (ev[0] + ev[1] + ev[2]) - ev.iter().copied().fold(f64::MIN, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reverse_cholesky_reconstructs(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = b.transpose().matmul(&b).add(&DMat::identity(n).scale(0.1));
        let l = reverse_cholesky(&h).unwrap();
        prop_assert!(l.gram().sub(&h).frobenius() <= 1e-10 * h.frobenius());
    }

    #[test]
    fn structured_factor_of_reference_inertia(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = topology_from(&mut rng);
        let model = random_model(&topo, seed);
        let st = state_from(&mut rng, model.dim());
        let (h, _) = composite_inertia(&model, st.q()).unwrap();
        let l = branch_sparse_factor(&h, &topo).unwrap();
        prop_assert!(l.respects(&topo));
        prop_assert!(l.gram().sub(&h).frobenius() <= 1e-10 * h.frobenius());
    }

    #[test]
    fn assembled_inertia_is_consistent(seed in any::<u64>(), scale in 0.05f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = topology_from(&mut rng);
        let raw = raw_from(&mut rng, &topo, scale);
        let a = assemble_felan(&raw, &topo, &Offsets::default()).unwrap();
        let h = &a.h_mat;
        prop_assert!(h.min_eigenvalue() > 0.0);
        let s = skew(a.h);
        for i in 0..3 {
            for j in 0..3 {
                let mass = if i == j { a.m_hat } else { 0.0 };
                prop_assert!((h[(i, j)] - mass).abs() <= 1e-12 * a.m_hat.max(1.0));
                prop_assert!((h[(3 + i, j)] - s.0[i][j]).abs() <= 1e-12 * (1.0 + a.h.norm()));
            }
        }
        prop_assert!(triangle_margin(&SymMat3::new(h.block3(3, 3))) >= -1e-9);
    }

    #[test]
    fn composite_rotational_inertia_obeys_triangle_inequality(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = topology_from(&mut rng);
        let model = random_model(&topo, seed);
        let q: Vec<f64> = (0..topo.n_q()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (h, _) = composite_inertia(&model, &q).unwrap();
        prop_assert!(triangle_margin(&SymMat3::new(h.block3(3, 3))) >= -1e-9);
    }

    #[test]
    fn lagrangian_torque_matches_recursive_dynamics(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = topology_from(&mut rng);
        let model = random_model(&topo, seed);
        let st = state_from(&mut rng, model.dim());
        let tau = euler_lagrange_torque(&model, &st, model.gravity()).unwrap();
        let oracle = inverse_dynamics(&model, &st).unwrap();
        let err: f64 = tau.iter().zip(&oracle).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = oracle.iter().map(|b| b * b).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-6 * norm.max(1e-12));
    }

    #[test]
    fn reference_torque_ignores_base_position(seed in any::<u64>(), dx in -20.0f64..20.0, dy in -20.0f64..20.0, dz in -20.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = topology_from(&mut rng);
        let model = random_model(&topo, seed);
        let st = state_from(&mut rng, model.dim());
        let mut nu = st.nu.clone();
        nu[0] += dx;
        nu[1] += dy;
        nu[2] += dz;
        let moved = GeneralizedState::new(nu, st.nu_dot.clone(), st.nu_ddot.clone()).unwrap();
        let a = inverse_dynamics(&model, &st).unwrap();
        let b = inverse_dynamics(&model, &moved).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }
}
