//! Implementations of the subcommands. Reports go to `out`; progress to stderr.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use fbid_core::dataset::TrajectoryDataset;
use fbid_core::inertia_param::Offsets;
use fbid_core::refdyn::{generate_excitation, random_model, ExcitationSpec, GroundTruthModel};
use fbid_core::spatial::triangle_margin;
use fbid_core::topology::{count_parameters, sparsity_pattern, ParamScheme, RobotTopology, BASE_DOF};
use fbid_core::training::{
    evaluate, mass_from_vertical_force, rnmse, train, Control, EpochMetrics, Method, OptimizerKind,
    TrainConfig,
};
use fbid_core::SymMat3;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::contacts::{assemble_generalized_torque, read_contacts};
use crate::error::{CliError, CliResult};
use crate::formats::{
    check_dataset_topology, load_model, load_topology, model_hash, read_dataset, topology_hash, write_atomic,
    write_dataset, write_json_atomic, DatasetMeta, ModelFile, TopologyFile,
};
use crate::threads::Threads;

/// Flags shared by every command.
#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Seed for data generation and training.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file (gen-data, ingest) or directory (train).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
}

fn out_path(g: &Global, what: &str) -> CliResult<PathBuf> {
    g.out.clone().ok_or_else(|| CliError::config(format!("--out is required for {what}")))
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    /// Model file with kinematics and inertial parameters.
    #[arg(long, conflicts_with = "topology")]
    pub model: Option<PathBuf>,
    /// Topology file; a random consistent model is drawn from `--model-seed`.
    #[arg(long, requires = "model_seed")]
    pub topology: Option<PathBuf>,
    #[arg(long)]
    pub model_seed: Option<u64>,
    /// Also write the drawn model to this file.
    #[arg(long)]
    pub save_model: Option<PathBuf>,
    /// Seconds of trajectory.
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    /// Samples per second.
    #[arg(long, default_value_t = 100.0)]
    pub rate: f64,
    /// Sinusoids per coordinate.
    #[arg(long, default_value_t = 3)]
    pub harmonics: usize,
}

fn mean_std(data: &TrajectoryDataset, c: usize) -> (f64, f64) {
    let n = data.len().max(1) as f64;
    let mean = (0..data.len()).map(|i| data.tau(i)[c]).sum::<f64>() / n;
    let var = (0..data.len()).map(|i| (data.tau(i)[c] - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn gen_data(g: &Global, a: &GenDataArgs, out: &mut dyn Write) -> CliResult<()> {
    let path = out_path(g, "gen-data")?;
    let model = match (&a.model, &a.topology, a.model_seed) {
        (Some(m), _, _) => load_model(m)?,
        (None, Some(t), Some(seed)) => random_model(&load_topology(t)?, seed),
        _ => return Err(CliError::config("give --model, or --topology with --model-seed")),
    };
    if let Some(p) = &a.save_model {
        write_json_atomic(p, &ModelFile::from_model(&model))?;
    }
    let spec = ExcitationSpec { duration: a.duration, rate: a.rate, harmonics: a.harmonics, seed: g.seed, ..ExcitationSpec::default() };
    spec.validate()?;
    let data = generate_excitation(&model, &spec)?;
    let meta = DatasetMeta {
        n_q: data.n_q(),
        rate: data.rate(),
        samples: data.len(),
        seed: Some(g.seed),
        model_hash: Some(model_hash(&model)),
        topology_hash: Some(topology_hash(model.topology())),
        topology: Some(TopologyFile::from_topology(model.topology())),
        source: "gen-data".into(),
        settings: serde_json::json!({ "duration": a.duration, "harmonics": a.harmonics }),
    };
    write_dataset(&path, &data, &meta)?;
    let names = fbid_core::dataset::column_names(data.n_q());
    let w = |e: std::io::Error| CliError::write(Path::new("<stdout>"), e);
    writeln!(out, "samples: {}", data.len()).map_err(w)?;
    writeln!(out, "{:<12} {:>14} {:>14}", "coordinate", "mean", "std").map_err(w)?;
    for c in 0..data.dim() {
        let (m, s) = mean_std(&data, c);
        writeln!(out, "{:<12} {m:>14.6} {s:>14.6}", names[3 * data.dim() + c]).map_err(w)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Topology file (or model file).
    #[arg(long)]
    pub topology: Option<PathBuf>,
    /// Model file; its kinematics are required by the white-box methods.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1024)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub clip: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    /// Comma-separated hidden widths, e.g. `16,16`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Initial total-mass guess in kg, or `auto` for the mean vertical base
    /// force over g on the training split.
    #[arg(long)]
    pub mass_prior: Option<String>,
    /// Stop once the test NMSE reaches this value.
    #[arg(long)]
    pub target_nmse: Option<f64>,
    #[arg(long, default_value_t = 0.9)]
    pub split: f64,
    #[arg(long, default_value_t = 256)]
    pub chunk_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub w_mass: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub w_rotational: f64,
    #[arg(long, default_value_t = 0.01)]
    pub eps_l: f64,
    #[arg(long, default_value_t = 0.1)]
    pub eps_m: f64,
    #[arg(long, default_value_t = 0.01)]
    pub eps_d: f64,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

pub fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

fn opt_num(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v}"))
}

fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,train_nmse,test_nmse,loss,beta_mean,m_hat\n");
    for h in history {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            h.epoch,
            h.train_nmse,
            h.test_nmse,
            h.loss,
            opt_num(h.beta_mean),
            opt_num(h.m_hat)
        ));
    }
    s
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    method: String,
    parameters: usize,
    topology_hash: String,
    seed: u64,
    epochs_run: usize,
    best_epoch: usize,
    best_test_nmse: f64,
    final_train_nmse: f64,
    final_test_nmse: f64,
    reached_target: bool,
    mass: Option<f64>,
    m_hat: Option<f64>,
    excluded_coordinates: Vec<usize>,
    elapsed_seconds: f64,
}

fn resolve_topology(topology: Option<&Path>, model: Option<&GroundTruthModel>) -> CliResult<RobotTopology> {
    match (topology, model) {
        (Some(t), Some(m)) => {
            let t = load_topology(t)?;
            if &t != m.topology() {
                return Err(CliError::config("topology and model files disagree"));
            }
            Ok(t)
        }
        (Some(t), None) => load_topology(t),
        (None, Some(m)) => Ok(m.topology().clone()),
        (None, None) => Err(CliError::config("give --topology or --model")),
    }
}

pub fn train_cmd(g: &Global, a: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let started = Instant::now();
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    let model = a.model.as_deref().map(load_model).transpose()?;
    let topology = resolve_topology(a.topology.as_deref(), model.as_ref())?;
    let (data, meta) = read_dataset(&a.data)?;
    check_dataset_topology(meta.as_ref(), &topology)?;
    if data.n_q() != topology.n_q() {
        return Err(CliError::data(format!("dataset has {} joints, topology has {}", data.n_q(), topology.n_q())));
    }
    if a.method.needs_kinematics() && model.is_none() {
        return Err(CliError::config(format!("{} needs --model for its kinematics", a.method)));
    }
    let gravity = model.as_ref().map_or(fbid_core::lagrangian::GRAVITY, GroundTruthModel::gravity);
    let mass_prior = match a.mass_prior.as_deref() {
        None => None,
        Some("auto") => {
            let (train_split, _) = data.split_chronological(a.split)?;
            Some(mass_from_vertical_force(&train_split, gravity).ok_or_else(|| CliError::data("mean vertical force is not positive"))?)
        }
        Some(v) => Some(v.parse::<f64>().map_err(|_| CliError::config(format!("--mass-prior `{v}` is not a number")))?),
    };
    let config = TrainConfig {
        method: a.method,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        grad_clip_norm: a.clip,
        optimizer: match a.optimizer {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        },
        hidden: a.hidden.clone(),
        offsets: Offsets { eps_l: a.eps_l, eps_m: a.eps_m, eps_d: a.eps_d },
        w_mass: a.w_mass,
        w_rotational: a.w_rotational,
        seed: g.seed,
        split_fraction: a.split,
        chunk_size: a.chunk_size,
        target_nmse: a.target_nmse,
        mass_prior,
    };
    config.validate()?;
    let par = Threads::new(g.threads);
    let quiet = a.quiet;
    let outcome = train(&data, &topology, model.as_ref(), &config, &par, |m, _| {
        if !quiet {
            eprintln!("epoch {:>5}  train {:.6e}  test {:.6e}  loss {:.6e}", m.epoch, m.train_nmse, m.test_nmse, m.loss);
        }
        Control::Continue
    })?;
    let best = Checkpoint { model: outcome.best.clone(), weights: outcome.weights.clone(), config: config.clone(), epoch: outcome.best_epoch };
    let last_epoch = outcome.history.len();
    let last = Checkpoint { model: outcome.last.clone(), weights: outcome.weights.clone(), config: config.clone(), epoch: last_epoch };
    best.save(&dir.join("model.ckpt"))?;
    last.save(&dir.join("last.ckpt"))?;
    let csv = metrics_csv(&outcome.history);
    write_atomic(&dir.join("metrics.csv"), |w| w.write_all(csv.as_bytes()))?;
    let fin = outcome.history.last().expect("one epoch");
    let summary = TrainSummary {
        method: a.method.name().into(),
        parameters: outcome.last.param_count(),
        topology_hash: topology_hash(&topology),
        seed: g.seed,
        epochs_run: last_epoch,
        best_epoch: outcome.best_epoch,
        best_test_nmse: outcome.best_metrics().test_nmse,
        final_train_nmse: fin.train_nmse,
        final_test_nmse: fin.test_nmse,
        reached_target: outcome.reached_target,
        mass: fin.mass,
        m_hat: fin.m_hat,
        excluded_coordinates: outcome.weights.excluded.clone(),
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    write_json_atomic(&dir.join("summary.json"), &summary)?;
    for c in &outcome.weights.excluded {
        eprintln!("warning: torque coordinate {c} has degenerate variance and is excluded");
    }
    writeln!(
        out,
        "{}: best test NMSE {:.6e} at epoch {} of {}; checkpoint {}",
        a.method,
        summary.best_test_nmse,
        summary.best_epoch,
        last_epoch,
        dir.join("model.ckpt").display()
    )
    .map_err(|e| CliError::write(Path::new("<stdout>"), e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
    Test,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// One or more checkpoints; with several, an rNMSE column is added.
    #[arg(long = "checkpoint", visible_alias = "methods", num_args = 1.., required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Rows to evaluate; train/test use the checkpoint's split fraction.
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
    /// Per-sample (target, total, inertial, coriolis, gravity) CSV of the first checkpoint.
    #[arg(long)]
    pub decompose: Option<PathBuf>,
}

pub fn eval_cmd(g: &Global, a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let (data, meta) = read_dataset(&a.data)?;
    let par = Threads::new(g.threads);
    let mut rows = Vec::new();
    for (k, path) in a.checkpoints.iter().enumerate() {
        let ck = Checkpoint::load(path)?;
        check_dataset_topology(meta.as_ref(), &ck.model.topology)?;
        if data.n_q() != ck.model.topology.n_q() {
            return Err(CliError::data(format!("{}: checkpoint topology does not match the dataset", path.display())));
        }
        let subset = match a.split {
            SplitArg::All => data.clone(),
            SplitArg::Train => data.split_chronological(ck.config.split_fraction)?.0,
            SplitArg::Test => data.split_chronological(ck.config.split_fraction)?.1,
        };
        let e = evaluate(&ck.model, &subset, &ck.weights, &par)?;
        if k == 0 {
            if let Some(p) = &a.decompose {
                write_decomposition(p, &subset, &e)?;
            }
        }
        rows.push((ck.model.method, path.clone(), e.nmse));
    }
    let values: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let rel = if rows.len() > 1 { Some(rnmse(&values)?) } else { None };
    let w = |e: std::io::Error| CliError::write(Path::new("<stdout>"), e);
    write!(out, "{:<14} {:>14}", "method", "nmse").map_err(w)?;
    if rel.is_some() {
        write!(out, " {:>10}", "rnmse").map_err(w)?;
    }
    writeln!(out, "  checkpoint").map_err(w)?;
    for (i, (m, p, v)) in rows.iter().enumerate() {
        write!(out, "{:<14} {v:>14.6e}", m.name()).map_err(w)?;
        if let Some(r) = &rel {
            write!(out, " {:>10.6}", r[i]).map_err(w)?;
        }
        writeln!(out, "  {}", p.display()).map_err(w)?;
    }
    Ok(())
}

fn write_decomposition(path: &Path, data: &TrajectoryDataset, e: &fbid_core::training::Evaluation) -> CliResult<()> {
    let parts = e.parts.as_ref().ok_or_else(|| CliError::config("this method has no torque decomposition"))?;
    let n = data.dim();
    let names = fbid_core::dataset::column_names(data.n_q());
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["sample".to_string()];
        for c in 0..n {
            let base = &names[c];
            for kind in ["target", "total", "inertial", "coriolis", "gravity"] {
                header.push(format!("{kind}_{base}"));
            }
        }
        out.write_record(&header)?;
        for i in 0..data.len() {
            let mut rec = vec![i.to_string()];
            for c in 0..n {
                let k = i * n + c;
                for v in [data.tau(i)[c], e.predictions[k], parts[0][k], parts[1][k], parts[2][k]] {
                    rec.push(format!("{v}"));
                }
            }
            out.write_record(&rec)?;
        }
        out.flush()
    })
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Joint positions, comma separated; zeros when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub q: Option<Vec<f64>>,
}

pub fn inspect_cmd(_g: &Global, a: &InspectArgs, out: &mut dyn Write) -> CliResult<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = &ck.model;
    let topo = &model.topology;
    let q = a.q.clone().unwrap_or_else(|| vec![0.0; topo.n_q()]);
    if q.len() != topo.n_q() {
        return Err(CliError::data(format!("{} joint values given, model has {}", q.len(), topo.n_q())));
    }
    let r = model.inertia_at(&q)?;
    let w = |e: std::io::Error| CliError::write(Path::new("<stdout>"), e);
    let h = &r.h_mat;
    let rot = SymMat3::new(h.block3(3, 3));
    let eig = rot.eigen().values;
    let margin = triangle_margin(&rot);
    writeln!(out, "method: {}", model.method).map_err(w)?;
    writeln!(out, "q: {q:?}").map_err(w)?;
    writeln!(out, "mass (potential): {:.9}", r.mass).map_err(w)?;
    if let Some(m_hat) = r.m_hat {
        writeln!(out, "m_hat: {m_hat:.9}").map_err(w)?;
    }
    writeln!(out, "first moment h: [{:.9}, {:.9}, {:.9}]", r.first_moment.0[0], r.first_moment.0[1], r.first_moment.0[2]).map_err(w)?;
    writeln!(out, "rotational block eigenvalues: [{:.9}, {:.9}, {:.9}]", eig[0], eig[1], eig[2]).map_err(w)?;
    let verdict = if margin >= 0.0 { "PASS (margin ≥ 0)" } else { "FAIL (margin < 0)" };
    writeln!(out, "triangle inequality: {verdict}, margin {margin:.3e}").map_err(w)?;
    writeln!(out, "inertia matrix min eigenvalue: {:.6e}", h.min_eigenvalue()).map_err(w)?;
    if model.method == Method::Felan {
        let m_hat = r.m_hat.expect("structured mass");
        let iso = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).all(|(i, j)| h[(i, j)] == if i == j { m_hat } else { 0.0 });
        writeln!(out, "mass block isotropy (guaranteed): {}", if iso { "PASS" } else { "FAIL" }).map_err(w)?;
    }
    if let Some(f) = &r.factor {
        let mask = sparsity_pattern(topo);
        let outside = (0..f.rows()).flat_map(|i| (0..f.cols()).map(move |j| (i, j))).filter(|&(i, j)| !mask.get(i, j) && f[(i, j)] != 0.0).count();
        let expected = count_parameters(topo, ParamScheme::ReorderedL);
        let status = if outside == 0 && mask.nnz() == expected { "PASS" } else { "FAIL" };
        writeln!(out, "sparsity mask: {status}, nnz {} (reordered factor count {expected}), entries outside {outside}", mask.nnz()).map_err(w)?;
    }
    if let Some(d) = r.diagnostics {
        writeln!(out, "beta: {:.6e}", d.beta).map_err(w)?;
        writeln!(out, "lambda_U: {:.6e}", d.lambda_u).map_err(w)?;
        writeln!(out, "mu_D: {:.6e}", d.mu_d).map_err(w)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct CountArgs {
    /// Topology file (or model file).
    #[arg(long)]
    pub topology: PathBuf,
}

pub fn count_params_cmd(_g: &Global, a: &CountArgs, out: &mut dyn Write) -> CliResult<()> {
    let topo = load_topology(&a.topology)?;
    let counts: Vec<usize> = ParamScheme::ALL.iter().map(|&s| count_parameters(&topo, s)).collect();
    let w = |e: std::io::Error| CliError::write(Path::new("<stdout>"), e);
    writeln!(out, "joints: {} in {} branches, dimension {}", topo.n_q(), topo.n_branches(), topo.dim()).map_err(w)?;
    for (s, c) in ParamScheme::ALL.iter().zip(&counts) {
        writeln!(out, "{:<18} {c}", s.name()).map_err(w)?;
    }
    let joined: Vec<String> = counts.iter().map(usize::to_string).collect();
    writeln!(out, "{}", joined.join(" / ")).map_err(w)
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    /// Log in the dataset CSV schema; the joint torque columns hold τ_q and the
    /// base torque columns are ignored.
    #[arg(long)]
    pub data: PathBuf,
    /// Binary contacts file with per-row Jacobians and forces.
    #[arg(long)]
    pub contacts: Option<PathBuf>,
    /// Topology the log belongs to.
    #[arg(long)]
    pub topology: Option<PathBuf>,
}

pub fn ingest_cmd(g: &Global, a: &IngestArgs, out: &mut dyn Write) -> CliResult<()> {
    let path = out_path(g, "ingest")?;
    let (data, meta) = read_dataset(&a.data)?;
    let topology = a.topology.as_deref().map(load_topology).transpose()?;
    if let Some(t) = &topology {
        check_dataset_topology(meta.as_ref(), t)?;
        if t.n_q() != data.n_q() {
            return Err(CliError::data("log joint count does not match the topology"));
        }
    }
    let n = data.dim();
    let contacts = match &a.contacts {
        Some(p) => {
            let c = read_contacts(p, n)?;
            if c.len() != data.len() {
                return Err(CliError::data(format!("contacts file has {} rows, log has {}", c.len(), data.len())));
            }
            c
        }
        None => vec![Vec::new(); data.len()],
    };
    let tau = (0..data.len())
        .map(|i| assemble_generalized_torque(&data.tau(i)[BASE_DOF..], &contacts[i]))
        .collect::<fbid_core::Result<Vec<_>>>()?;
    let result = data.with_torques(&tau)?;
    let topo_meta = topology.as_ref();
    let new_meta = DatasetMeta {
        n_q: result.n_q(),
        rate: result.rate(),
        samples: result.len(),
        seed: meta.as_ref().and_then(|m| m.seed),
        model_hash: meta.as_ref().and_then(|m| m.model_hash.clone()),
        topology_hash: topo_meta.map(topology_hash).or_else(|| meta.as_ref().and_then(|m| m.topology_hash.clone())),
        topology: topo_meta.map(TopologyFile::from_topology).or_else(|| meta.as_ref().and_then(|m| m.topology.clone())),
        source: "ingest".into(),
        settings: serde_json::json!({ "contacts": a.contacts.is_some() }),
    };
    write_dataset(&path, &result, &new_meta)?;
    writeln!(out, "samples: {}", result.len()).map_err(|e| CliError::write(Path::new("<stdout>"), e))
}
