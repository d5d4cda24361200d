//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any criterion fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use fbid::threads::Threads;
use fbid_core::autodiff::Tape;
use fbid_core::dataset::TrajectoryDataset;
use fbid_core::inertia_param::{assemble_felan, positive_diagonal, Offsets, RawFactorOutputs};
use fbid_core::lagrangian::{euler_lagrange_torque, potential_energy, rotation, GeneralizedState};
use fbid_core::refdyn::{
    composite_inertia, generate_excitation, inverse_dynamics, potential_energy_bodies, random_model, ExcitationSpec,
    GroundTruthModel,
};
use fbid_core::spatial::{branch_sparse_factor, reverse_cholesky, skew, BranchBlocks, LowerTriangular};
use fbid_core::topology::{sparsity_pattern, Branch, RobotTopology, Segment};
use fbid_core::training::{
    batch_gradient, evaluate, mass_from_vertical_force, nmse, rnmse, split_and_weigh, train, Control, LearnedModel, Method,
    ModelParams, Serial, TorqueWeights, TrainConfig,
};
use fbid_core::{DMat, Mat3, SymMat3, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(1e-300)
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMat {
    let b = DMat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    b.transpose().matmul(&b).add(&DMat::identity(n).scale(0.1))
}

fn random_topology(rng: &mut ChaCha8Rng) -> RobotTopology {
    let branches = (0..rng.gen_range(1..=4))
        .map(|_| {
            let mut segs = vec![Segment::root(rng.gen_range(1..=3))];
            if rng.gen_bool(0.3) {
                let parent = rng.gen_range(0..segs.len());
                segs.push(Segment::child_of(parent, rng.gen_range(1..=2)));
            }
            Branch { segments: segs }
        })
        .collect();
    RobotTopology::new(branches).expect("valid random topology")
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> GeneralizedState {
    let mut v = |a: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-a..a)).collect() };
    let mut nu = v(1.5);
    nu[4] = nu[4].clamp(-1.2, 1.2);
    GeneralizedState::new(nu, v(1.0), v(2.0)).expect("state")
}

fn count_params() -> Check {
    let assets = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets");
    let mut lines = Vec::new();
    for (file, want) in [("go2.json", "324 / 171 / 117 / 106 / 208"), ("spot_arm.json", "529 / 276 / 162 / 151 / 288")] {
        let out = Command::new(env!("CARGO_BIN_EXE_fbid"))
            .args(["count-params", "--topology"])
            .arg(assets.join(file))
            .output()
            .map_err(fail)?;
        let text = String::from_utf8_lossy(&out.stdout);
        let last = text.lines().last().unwrap_or("").to_string();
        ensure(out.status.success() && last == want, || format!("{file}: got {last:?}"))?;
        lines.push(last);
    }
    Ok(lines.join(", "))
}

fn factorization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(3..=14);
        let h = random_spd(&mut rng, n);
        let l = reverse_cholesky(&h).map_err(fail)?;
        worst = worst.max(l.gram().sub(&h).frobenius() / h.frobenius());
    }
    let topos = [
        RobotTopology::chains(&[3, 3, 3, 3]).map_err(fail)?,
        RobotTopology::chains(&[3, 3, 3, 3, 5]).map_err(fail)?,
        RobotTopology::new(vec![
            Branch { segments: vec![Segment::root(2), Segment::child_of(0, 1), Segment::child_of(0, 2)] },
            Branch::chain(2),
        ])
        .map_err(fail)?,
    ];
    for k in 0..100 {
        let topo = &topos[k % topos.len()];
        let model = random_model(topo, 1000 + k as u64);
        let st = random_state(&mut rng, model.dim());
        let (h, _) = composite_inertia(&model, st.q()).map_err(fail)?;
        let mask = sparsity_pattern(topo);
        let dense = reverse_cholesky(&h).map_err(fail)?;
        let sparse = branch_sparse_factor(&h, topo).map_err(fail)?;
        worst = worst.max(dense.gram().sub(&h).frobenius() / h.frobenius());
        worst = worst.max(sparse.gram().sub(&h).frobenius() / h.frobenius());
        ensure(sparse.respects(topo), || format!("draw {k}: structured factor leaves the mask"))?;
        // the unstructured factor of a branch-sparse matrix has the same zeros
        let l = dense.to_dense();
        let outside = (0..l.rows()).flat_map(|i| (0..=i).map(move |j| (i, j))).filter(|&(i, j)| !mask.get(i, j) && l[(i, j)] != 0.0).count();
        ensure(outside == 0, || format!("draw {k}: {outside} fill-in entries outside the mask"))?;
        let nnz = LowerTriangular::from_dense_lower(&sparse.to_dense()).nnz();
        ensure(nnz == mask.nnz(), || format!("draw {k}: nnz {nnz} vs mask {}", mask.nnz()))?;
    }
    ensure(worst <= 1e-10, || format!("reconstruction error {worst:.3e}"))?;
    Ok(format!("max relative reconstruction error {worst:.2e}"))
}

fn random_raw(rng: &mut ChaCha8Rng, topo: &RobotTopology, scale: f64) -> RawFactorOutputs {
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

fn consistency_sweep() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let offsets = Offsets::default();
    let (mut min_eig, mut min_margin) = (f64::INFINITY, f64::INFINITY);
    for k in 0..1000 {
        let topo = random_topology(&mut rng);
        let scale = rng.gen_range(0.05..3.0);
        let raw = random_raw(&mut rng, &topo, scale);
        let a = assemble_felan(&raw, &topo, &offsets).map_err(|e| format!("draw {k}: {e}"))?;
        let h = &a.h_mat;
        let eig = h.min_eigenvalue();
        min_eig = min_eig.min(eig);
        ensure(eig > 0.0, || format!("draw {k}: min eigenvalue {eig:.3e}"))?;
        let tol = 1e-12 * a.m_hat.max(1.0);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { a.m_hat } else { 0.0 };
                ensure((h[(i, j)] - want).abs() <= tol, || format!("draw {k}: mass block ({i},{j})"))?;
                ensure((h[(3 + i, j)] - skew(a.h).0[i][j]).abs() <= 1e-12 * (1.0 + a.h.norm()), || format!("draw {k}: coupling ({i},{j})"))?;
            }
        }
        let inertia = SymMat3::new(h.block3(3, 3));
        let ev = inertia.eigen().values;
        let margin = 0.5 * (ev[0] + ev[1] + ev[2]) - ev.iter().copied().fold(f64::MIN, f64::max);
        min_margin = min_margin.min(margin);
        ensure(margin >= -1e-9, || format!("draw {k}: triangle margin {margin:.3e}"))?;
    }
    Ok(format!("1000 draws, min eigenvalue {min_eig:.2e}, min triangle margin {min_margin:.2e}"))
}

fn composite_bound() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut min_gap = f64::INFINITY;
    for k in 0..100 {
        let topo = random_topology(&mut rng);
        let model = random_model(&topo, 3000 + k);
        for _ in 0..10 {
            let q: Vec<f64> = (0..topo.n_q()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (h, _) = composite_inertia(&model, &q).map_err(fail)?;
            let ev = SymMat3::new(h.block3(3, 3)).eigen().values;
            let gap = 0.5 * (ev[0] + ev[1] + ev[2]) - ev.iter().copied().fold(f64::MIN, f64::max);
            min_gap = min_gap.min(gap);
            ensure(gap >= -1e-9, || format!("model {k}: half trace below largest eigenvalue by {:.3e}", -gap))?;
        }
    }
    Ok(format!("1000 cases, min margin {min_gap:.2e}"))
}

fn pipeline_equivalence() -> Check {
    let topo = RobotTopology::chains(&[2, 2]).map_err(fail)?;
    let model = random_model(&topo, 55);
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut worst_tau, mut worst_p): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let st = random_state(&mut rng, model.dim());
        let tau = euler_lagrange_torque(&model, &st, model.gravity()).map_err(fail)?;
        let oracle = inverse_dynamics(&model, &st).map_err(fail)?;
        worst_tau = worst_tau.max(rel(&tau, &oracle));
        let (_, comp) = composite_inertia(&model, st.q()).map_err(fail)?;
        let p = potential_energy(comp.mass, comp.first_moment, st.base_position(), st.euler(), model.gravity());
        let bodies = potential_energy_bodies(&model, &st.nu).map_err(fail)?;
        worst_p = worst_p.max((p - bodies).abs() / bodies.abs().max(1e-300));
    }
    ensure(worst_tau <= 1e-6, || format!("torque relative error {worst_tau:.3e}"))?;
    ensure(worst_p <= 1e-10, || format!("potential relative error {worst_p:.3e}"))?;
    Ok(format!("torque rel err {worst_tau:.2e}, potential rel err {worst_p:.2e}"))
}

fn derivatives() -> Check {
    let topo = RobotTopology::chains(&[2, 1]).map_err(fail)?;
    let truth = random_model(&topo, 3);
    let spec = ExcitationSpec { duration: 0.4, rate: 50.0, seed: 1, ..ExcitationSpec::default() };
    let data = generate_excitation(&truth, &spec).map_err(fail)?;
    let (tr, _, w) = split_and_weigh(&data, 0.9).map_err(fail)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model =
        LearnedModel::init(Method::Felan, &topo, &[5], Offsets::default(), Some(truth.total_mass()), None, &tr, &mut rng).map_err(fail)?;
    let ModelParams::Bundle(bundle) = &model.params else { return Err("structured model expected".into()) };
    let q: Vec<f64> = (0..topo.n_q()).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let eps = 1e-6;
    let moved = |j: usize, e: f64| -> Vec<f64> {
        let mut p = q.clone();
        p[j] += e;
        p
    };

    // network outputs and assembled inertia along each joint
    let mut tape = Tape::new();
    let vars = bundle.bind(&mut tape);
    let (root, branches) = vars.forward(&mut tape, &topo, &[&q]);
    let assembled = model.layout().felan_tape(&mut tape, vars.theta_m, &root, &branches, &model.offsets).map_err(fail)?;
    let n = topo.dim();
    let f = tape.value(assembled.factor.val).clone();
    let (mut worst_net, mut worst_h): (f64, f64) = (0.0, 0.0);
    for j in 0..topo.n_q() {
        let (rp, bp) = bundle.evaluate(&topo, &moved(j, eps)).map_err(fail)?;
        let (rm, bm) = bundle.evaluate(&topo, &moved(j, -eps)).map_err(fail)?;
        let outs = std::iter::once((&root, rp, rm)).chain(branches.iter().zip(bp).zip(bm).map(|((jet, p), m)| (jet, p, m)));
        for (jet, p, m) in outs {
            let fd: Vec<f64> = p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
            let an = jet.tan[j].map_or(vec![0.0; fd.len()], |t| tape.value(t).data().to_vec());
            if fd.iter().any(|x| *x != 0.0) || an.iter().any(|x| *x != 0.0) {
                worst_net = worst_net.max(rel(&an, &fd));
            }
        }
        let hp = model.inertia_at(&moved(j, eps)).map_err(fail)?.h_mat;
        let hm = model.inertia_at(&moved(j, -eps)).map_err(fail)?.h_mat;
        let fd = hp.sub(&hm).scale(0.5 / eps);
        let df = assembled.factor.tan[j].map(|t| tape.value(t).clone());
        let an = DMat::from_fn(n, n, |a, b| {
            df.as_ref().map_or(0.0, |df| (0..n).map(|k| df.get(0, k, a) * f.get(0, k, b) + f.get(0, k, a) * df.get(0, k, b)).sum())
        });
        worst_h = worst_h.max(an.sub(&fd).frobenius() / fd.frobenius().max(1e-300));
    }
    ensure(worst_net <= 1e-5, || format!("network input Jacobian rel err {worst_net:.3e}"))?;
    ensure(worst_h <= 1e-5, || format!("inertia tangent rel err {worst_h:.3e}"))?;

    // parameter gradient of the full loss, which reaches the parameters through
    // the inertia tangents of the velocity terms
    let split = model.prepare(&tr).map_err(fail)?;
    let cfg = TrainConfig { chunk_size: split.len, ..TrainConfig::new(Method::Felan) };
    let g = batch_gradient(&model, &split, &w, &cfg, &Serial).map_err(fail)?.grad;
    let p0 = model.flat_params();
    let mut fd = vec![0.0; p0.len()];
    for i in 0..p0.len() {
        let h = 1e-6 * p0[i].abs().max(1.0);
        let mut loss_at = |x: f64| -> Result<f64, String> {
            let mut p = p0.clone();
            p[i] = x;
            model.set_flat_params(&p).map_err(fail)?;
            Ok(batch_gradient(&model, &split, &w, &cfg, &Serial).map_err(fail)?.loss)
        };
        fd[i] = (loss_at(p0[i] + h)? - loss_at(p0[i] - h)?) / (2.0 * h);
    }
    model.set_flat_params(&p0).map_err(fail)?;
    let worst_g = rel(&g, &fd);
    ensure(worst_g <= 1e-4, || format!("parameter gradient rel err {worst_g:.3e}"))?;
    Ok(format!(
        "network Jacobians {worst_net:.2e}, inertia tangents {worst_h:.2e}, loss gradient ({} params) {worst_g:.2e}",
        p0.len()
    ))
}

struct Benchmark {
    topology: RobotTopology,
    model: GroundTruthModel,
    data: TrajectoryDataset,
}

fn benchmark() -> Benchmark {
    let topology = RobotTopology::chains(&[2, 2]).expect("topology");
    let model = random_model(&topology, 7);
    let spec = ExcitationSpec { duration: 200.0, rate: 100.0, seed: 7, ..ExcitationSpec::default() };
    let data = generate_excitation(&model, &spec).expect("benchmark data");
    Benchmark { topology, model, data }
}

fn moving_average_decreases(losses: &[f64], window: usize) -> bool {
    let avg: Vec<f64> = losses.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect();
    avg.windows(2).all(|p| p[1] <= p[0])
}

fn learning(b: &Benchmark, trends: &mut Vec<(Method, bool, usize)>) -> Check {
    ensure(b.data.len() == 20_000, || format!("{} samples", b.data.len()))?;
    let par = Threads::new(0);
    let prior = mass_from_vertical_force(&b.data, b.model.gravity());
    let truth = b.model.total_mass();
    let mut notes = Vec::new();
    for method in [Method::Felan, Method::FelanBs] {
        let cfg = TrainConfig { epochs: 2000, learning_rate: 1e-3, mass_prior: prior, target_nmse: Some(0.1), ..TrainConfig::new(method) };
        let out = train(&b.data, &b.topology, None, &cfg, &par, |_, _| Control::Continue).map_err(fail)?;
        let best = out.best_metrics();
        let losses: Vec<f64> = out.history.iter().map(|m| m.loss).collect();
        trends.push((method, moving_average_decreases(&losses, 20), losses.len()));
        ensure(out.reached_target && best.test_nmse <= 0.1, || {
            format!("{method}: best test NMSE {:.4} after {} epochs", best.test_nmse, out.history.len())
        })?;
        notes.push(format!("{method} {:.4} at epoch {}", best.test_nmse, out.best_epoch));
        if method == Method::Felan {
            let (_, test) = b.data.split_chronological(cfg.split_fraction).map_err(fail)?;
            let e = evaluate(&out.best, &test, &out.weights, &par).map_err(fail)?;
            let m_hat = e.m_hat_mean.ok_or("no m_hat")?;
            ensure((m_hat - truth).abs() <= 0.2 * truth, || format!("m_hat {m_hat:.4} vs mass {truth:.4}"))?;
            let parts = e.parts.ok_or("no decomposition")?;
            let n = test.dim();
            let first = parts[2][2];
            let constant = (0..test.len()).all(|i| parts[2][i * n + 2].to_bits() == first.to_bits());
            ensure(constant, || "linear-z gravity varies across test samples".into())?;
            notes.push(format!("m_hat {m_hat:.3} (mass {truth:.3}), z gravity {first:.6} on every test sample"));
        }
    }
    Ok(notes.join("; "))
}

fn calibration(b: &Benchmark) -> Check {
    let (train, _, w) = split_and_weigh(&b.data, 0.9).map_err(fail)?;
    let flat: Vec<f64> = (0..train.len()).flat_map(|i| train.tau(i).to_vec()).collect();
    let pred: Vec<f64> = (0..train.len()).flat_map(|_| w.mean.clone()).collect();
    let v = nmse(&pred, &flat, &w).map_err(fail)?;
    ensure((v - 1.0).abs() <= 0.05, || format!("constant-mean NMSE {v}"))?;
    let r = rnmse(&[2.0, 4.0, 8.0]).map_err(fail)?;
    ensure(r == [0.0, 0.25, 0.75], || format!("rnmse {r:?}"))?;
    Ok(format!("constant-mean NMSE {v:.6}, rnmse {r:?}"))
}

fn transformed(data: &TrajectoryDataset, f: impl Fn(usize, &mut [f64])) -> TrajectoryDataset {
    let n = data.dim();
    let mut rows = data.raw().to_vec();
    for (i, row) in rows.chunks_mut(4 * n).enumerate() {
        f(i, row);
    }
    TrajectoryDataset::from_rows(data.n_q(), data.rate(), rows).expect("same width")
}

fn invariance(b: &Benchmark) -> Check {
    let par = Serial;
    let n = b.data.dim();
    let data = b.data.subset(0..300);
    let flat: Vec<f64> = (0..data.len()).flat_map(|i| data.tau(i).to_vec()).collect();
    let w = TorqueWeights::from_targets(&flat, n).map_err(fail)?;
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let shifts: Vec<[f64; 3]> = (0..data.len()).map(|_| [0; 3].map(|_| rng.gen_range(-20.0..20.0))).collect();
    let yaw = 0.83;
    let rz = rotation(Vec3::new(0.0, 0.0, yaw));
    let translated = transformed(&data, |i, row| (0..3).for_each(|c| row[c] += shifts[i][c]));
    let rotated = transformed(&data, |_, row| {
        for block in 0..3 {
            let at = block * n;
            let r = rz.mul_vec(Vec3::new(row[at], row[at + 1], row[at + 2]));
            row[at..at + 3].copy_from_slice(&r.0);
        }
        row[5] += yaw;
    });
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for (k, method) in Method::ALL.into_iter().enumerate() {
        let mut mrng = ChaCha8Rng::seed_from_u64(50 + k as u64);
        let kin = method.needs_kinematics().then_some(&b.model);
        let model = LearnedModel::init(method, &b.topology, &[16, 16], Offsets::default(), Some(6.0), kin, &data, &mut mrng)
            .map_err(fail)?;
        let base = evaluate(&model, &data, &w, &par).map_err(fail)?.predictions;
        let moved = evaluate(&model, &translated, &w, &par).map_err(fail)?.predictions;
        let turned = evaluate(&model, &rotated, &w, &par).map_err(fail)?.predictions;
        let trans_diff = base.iter().zip(&moved).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let expected: Vec<f64> = base
            .chunks(n)
            .flat_map(|t| {
                let f = rz.mul_vec(Vec3::new(t[0], t[1], t[2]));
                f.0.into_iter().chain(t[3..].iter().copied()).collect::<Vec<_>>()
            })
            .collect();
        let yaw_err = rel(&turned, &expected);
        let equivariant = trans_diff == 0.0 && yaw_err <= 1e-9;
        if method == Method::Ffnn {
            if trans_diff == 0.0 || yaw_err <= 1e-9 {
                failures.push(format!("{method}: violation not detected (translation diff {trans_diff:.1e}, yaw err {yaw_err:.1e})"));
            }
        } else if !equivariant {
            failures.push(format!("{method}: translation diff {trans_diff:.1e}, yaw err {yaw_err:.1e}"));
        }
        notes.push(format!("{method} {trans_diff:.0e}/{yaw_err:.0e}"));
    }
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(notes.join(", "))
}

fn report(id: usize, name: &str, budget: Duration, run: &mut dyn FnMut() -> Check) -> bool {
    let t = Instant::now();
    let result = run();
    let elapsed = t.elapsed();
    let (ok, detail) = match result {
        Ok(d) if elapsed <= budget => (true, d),
        Ok(d) => (false, format!("{d}; took {elapsed:.1?}, budget {budget:?}")),
        Err(e) => (false, e),
    };
    println!("criterion {id} [{}] {name} ({elapsed:.2?}): {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn main() -> ExitCode {
    // Optional criterion numbers on the command line select a subset.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: usize| only.is_empty() || only.contains(&id);
    let secs = Duration::from_secs;
    let mut ok = true;
    let mut run = |id: usize, name: &str, budget: Duration, f: &mut dyn FnMut() -> Check| {
        if wanted(id) {
            ok &= report(id, name, budget, f);
        }
    };
    run(1, "parameter counts", secs(1), &mut count_params);
    run(2, "factorization suite", secs(10), &mut factorization);
    run(3, "physical-consistency sweep", secs(30), &mut consistency_sweep);
    run(4, "composite rotational inertia bound", secs(30), &mut composite_bound);
    run(5, "dynamics pipeline equivalence", secs(30), &mut pipeline_equivalence);
    run(6, "derivative correctness", secs(60), &mut derivatives);
    let mut trends = Vec::new();
    let mut generation = Duration::ZERO;
    if (7..=9).any(wanted) {
        let started = Instant::now();
        let bench = benchmark();
        generation = started.elapsed();
        run(7, "learning benchmark", secs(30 * 60).saturating_sub(generation), &mut || learning(&bench, &mut trends));
        run(8, "metric calibration", secs(1), &mut || calibration(&bench));
        run(9, "invariance suite", secs(30), &mut || invariance(&bench));
    }
    for (method, decreasing, epochs) in trends {
        println!(
            "invariant [{}] {method}: 20-epoch moving average of training loss decreases over {epochs} epochs",
            if decreasing { "PASS" } else { "FAIL" }
        );
        ok &= decreasing;
    }
    if wanted(7) {
        println!("benchmark data generation took {generation:.2?}; {} worker thread(s)", Threads::new(0).0);
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
