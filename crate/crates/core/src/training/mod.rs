//! Loss, optimizer loop and metrics for the learned and white-box methods.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::dataset::TrajectoryDataset;
use crate::inertia_param::Offsets;
use crate::refdyn::GroundTruthModel;
use crate::topology::RobotTopology;
use crate::{Error, Result};

mod metrics;
mod model;
mod optim;

pub use metrics::{nmse, nmse_from_mse, per_coordinate_mse, rnmse, TorqueWeights, MIN_VARIANCE};
pub use model::{
    ffnn_input_dim, whitebox_bodies, whitebox_params_from_bodies, GraphOutputs, InertiaReport, LearnedModel, Method,
    ModelParams, ModelVars, PreparedSplit, ShiftVars,
};
pub use optim::{clip_global_norm, Optimizer, OptimizerKind};

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub optimizer: OptimizerKind,
    /// Hidden widths; `None` picks [`TrainConfig::default_hidden`].
    pub hidden: Option<Vec<usize>>,
    pub offsets: Offsets,
    /// Weight of the mass-shift penalty `(m̂ − m)²`.
    pub w_mass: f64,
    /// Weight of the rotational-shift penalty `softplus(−μ_D)²`.
    pub w_rotational: f64,
    pub seed: u64,
    pub split_fraction: f64,
    /// Samples per differentiation tape; batch gradients are summed over chunks in order.
    pub chunk_size: usize,
    /// Stop once the test NMSE is at or below this value.
    pub target_nmse: Option<f64>,
    /// Initial total-mass guess.
    pub mass_prior: Option<f64>,
}

impl TrainConfig {
    pub fn new(method: Method) -> TrainConfig {
        TrainConfig {
            method,
            epochs: 100,
            batch_size: 1024,
            learning_rate: 5e-4,
            weight_decay: 1e-5,
            grad_clip_norm: 1000.0,
            optimizer: OptimizerKind::Adam,
            hidden: None,
            offsets: Offsets::default(),
            w_mass: 1e-3,
            w_rotational: 1e-3,
            seed: 0,
            split_fraction: 0.9,
            chunk_size: 256,
            target_nmse: None,
            mass_prior: None,
        }
    }

    pub fn default_hidden(method: Method) -> Vec<usize> {
        match method {
            Method::Ffnn => vec![32, 32],
            _ => vec![16, 16],
        }
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.hidden.clone().unwrap_or_else(|| TrainConfig::default_hidden(self.method))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("{what} is out of range")));
        if self.epochs == 0 {
            return bad("epochs");
        }
        if self.batch_size == 0 {
            return bad("batch size");
        }
        if self.chunk_size == 0 {
            return bad("chunk size");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("gradient clip norm");
        }
        if !(self.w_mass >= 0.0 && self.w_rotational >= 0.0) {
            return bad("auxiliary weight");
        }
        let o = &self.offsets;
        if !(o.eps_l > 0.0 && o.eps_m > 0.0 && o.eps_d > 0.0) {
            return bad("offset");
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad("split fraction");
        }
        if self.hidden.as_ref().is_some_and(|h| h.contains(&0)) {
            return bad("hidden width");
        }
        Ok(())
    }
}

/// Runs independent jobs and returns their results in index order.
pub trait Parallel: Sync {
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, jobs: usize, f: F) -> Vec<T>;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Parallel for Serial {
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, jobs: usize, f: F) -> Vec<T> {
        (0..jobs).map(f).collect()
    }
}

/// Loss and gradient of one chunk, both already divided by the batch size.
#[derive(Debug, Clone)]
pub struct ChunkGradient {
    pub loss: f64,
    pub residual: f64,
    pub grad: Vec<f64>,
    pub degenerate: usize,
}

fn ranges(len: usize, step: usize) -> Vec<(usize, usize)> {
    (0..len).step_by(step).map(|s| (s, (s + step).min(len))).collect()
}

/// Loss of `chunk` scaled by `1 / batch` and its parameter gradient.
pub fn chunk_gradient(
    model: &LearnedModel,
    chunk: &PreparedSplit,
    weights: &TorqueWeights,
    config: &TrainConfig,
    batch: usize,
) -> Result<ChunkGradient> {
    crate::error::dim_check(chunk.dim, weights.dim())?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let out = model.build_graph(&mut tape, &vars, chunk)?;
    let target = tape.constant(chunk.tau.clone());
    let w = tape.constant(Tensor::new(1, chunk.dim, 1, weights.weights.clone()));
    let r = tape.sub(out.total, target);
    let r2 = tape.mul(r, r);
    let wr = tape.mul(r2, w);
    let sum = tape.sum_all(wr);
    let residual = tape.scale(sum, 1.0 / batch as f64);
    let mut loss = residual;
    if let Some(s) = out.shifts {
        let dm = tape.sub(s.m_hat, s.theta_mass);
        let dm2 = tape.mul(dm, dm);
        let dm2 = tape.sum_all(dm2);
        let pm = tape.scale(dm2, config.w_mass / batch as f64);
        let neg = tape.neg(s.mu_d);
        let sp = tape.softplus(neg);
        let sp2 = tape.mul(sp, sp);
        let sp2 = tape.sum_all(sp2);
        let pd = tape.scale(sp2, config.w_rotational / batch as f64);
        loss = tape.add(loss, pm);
        loss = tape.add(loss, pd);
    }
    let grads = tape.backward(loss);
    let mut grad = Vec::with_capacity(model.param_count());
    vars.collect_grads(&tape, &grads, &mut grad);
    Ok(ChunkGradient {
        loss: tape.value(loss).data()[0],
        residual: tape.value(residual).data()[0],
        grad,
        degenerate: tape.degenerate_events(),
    })
}

/// Full mini-batch loss and gradient, with chunks evaluated through `par` and
/// reduced in chunk order.
pub fn batch_gradient(
    model: &LearnedModel,
    batch: &PreparedSplit,
    weights: &TorqueWeights,
    config: &TrainConfig,
    par: &impl Parallel,
) -> Result<ChunkGradient> {
    let parts = ranges(batch.len, config.chunk_size);
    let results = par.map(parts.len(), |k| {
        let (a, b) = parts[k];
        let idx: Vec<usize> = (a..b).collect();
        chunk_gradient(model, &batch.gather(&idx), weights, config, batch.len)
    });
    let mut total = ChunkGradient { loss: 0.0, residual: 0.0, grad: vec![0.0; model.param_count()], degenerate: 0 };
    for r in results {
        let r = r?;
        total.loss += r.loss;
        total.residual += r.residual;
        total.degenerate += r.degenerate;
        total.grad.iter_mut().zip(&r.grad).for_each(|(t, g)| *t += g);
    }
    Ok(total)
}

/// Predictions of a model on a prepared split.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub nmse: f64,
    pub per_coordinate_mse: Vec<f64>,
    /// Row-major `[N, n]`.
    pub predictions: Vec<f64>,
    /// Inertial, velocity-dependent and gravity torques, each `[N, n]`.
    pub parts: Option<[Vec<f64>; 3]>,
    /// Mean of the shifted mass over the samples.
    pub m_hat_mean: Option<f64>,
    pub beta_mean: Option<f64>,
    /// Mass used by the potential energy.
    pub mass: Option<f64>,
}

/// Forward pass over `split` in chunks.
pub fn evaluate_prepared(
    model: &LearnedModel,
    split: &PreparedSplit,
    weights: &TorqueWeights,
    chunk_size: usize,
    par: &impl Parallel,
) -> Result<Evaluation> {
    crate::error::dim_check(split.dim, weights.dim())?;
    if split.len == 0 {
        return Err(Error::InvalidData("cannot evaluate an empty split".into()));
    }
    let parts = ranges(split.len, chunk_size.max(1));
    type ChunkOut = (Vec<f64>, Option<[Vec<f64>; 3]>, Option<(f64, f64)>, Option<f64>);
    let results: Vec<Result<ChunkOut>> = par.map(parts.len(), |k| {
        let (a, b) = parts[k];
        let idx: Vec<usize> = (a..b).collect();
        let chunk = split.gather(&idx);
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let out = model.build_graph(&mut tape, &vars, &chunk)?;
        let vals = |v| tape.value(v).data().to_vec();
        let parts = out.parts.map(|p| p.map(vals));
        let shifts = out.shifts.map(|s| {
            (tape.value(s.m_hat).data().iter().sum::<f64>(), tape.value(s.beta).data().iter().sum::<f64>())
        });
        let mass = out.mass.map(|m| tape.value(m).data()[0]);
        Ok((vals(out.total), parts, shifts, mass))
    });
    let n = split.dim;
    let mut predictions = Vec::with_capacity(split.len * n);
    let mut acc_parts: Option<[Vec<f64>; 3]> = None;
    let mut shift_sum: Option<(f64, f64)> = None;
    let mut mass = None;
    for r in results {
        let (pred, parts, shifts, m) = r?;
        predictions.extend(pred);
        if let Some(p) = parts {
            let acc = acc_parts.get_or_insert_with(|| [Vec::new(), Vec::new(), Vec::new()]);
            for (a, x) in acc.iter_mut().zip(p) {
                a.extend(x);
            }
        }
        if let Some((m_hat, beta)) = shifts {
            let s = shift_sum.get_or_insert((0.0, 0.0));
            s.0 += m_hat;
            s.1 += beta;
        }
        mass = mass.or(m);
    }
    if let Some(bad) = predictions.iter().find(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure(format!("non-finite torque prediction {bad}")));
    }
    let per_coordinate_mse = per_coordinate_mse(&predictions, split.tau.data(), n)?;
    let len = split.len as f64;
    Ok(Evaluation {
        nmse: nmse_from_mse(&per_coordinate_mse, weights),
        per_coordinate_mse,
        predictions,
        parts: acc_parts,
        m_hat_mean: shift_sum.map(|s| s.0 / len),
        beta_mean: shift_sum.map(|s| s.1 / len),
        mass,
    })
}

/// Evaluates `model` on a dataset with weights from the training split.
pub fn evaluate(
    model: &LearnedModel,
    data: &TrajectoryDataset,
    weights: &TorqueWeights,
    par: &impl Parallel,
) -> Result<Evaluation> {
    let split = model.prepare(data)?;
    evaluate_prepared(model, &split, weights, 256, par)
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_nmse: f64,
    pub test_nmse: f64,
    /// Mean mini-batch loss over the epoch.
    pub loss: f64,
    pub beta_mean: Option<f64>,
    pub m_hat: Option<f64>,
    pub mass: Option<f64>,
    /// Largest pre-clip gradient norm of the epoch.
    pub max_grad_norm: f64,
    /// Repeated-eigenvalue events met while differentiating.
    pub degenerate: usize,
}

/// Whether training continues after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest test NMSE.
    pub best: LearnedModel,
    pub best_epoch: usize,
    /// Parameters after the final epoch.
    pub last: LearnedModel,
    pub history: Vec<EpochMetrics>,
    pub weights: TorqueWeights,
    pub reached_target: bool,
}

impl TrainOutcome {
    pub fn best_metrics(&self) -> &EpochMetrics {
        &self.history[self.best_epoch - 1]
    }
}

/// Train/test split and torque weights exactly as [`train`] computes them.
pub fn split_and_weigh(data: &TrajectoryDataset, fraction: f64) -> Result<(TrajectoryDataset, TrajectoryDataset, TorqueWeights)> {
    let (train, test) = data.split_chronological(fraction)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidData(format!("{} samples are too few to split", data.len())));
    }
    let mut flat = Vec::with_capacity(train.len() * train.dim());
    for i in 0..train.len() {
        flat.extend_from_slice(train.tau(i));
    }
    let weights = TorqueWeights::from_targets(&flat, train.dim())?;
    Ok((train, test, weights))
}

/// Total-mass guess from the mean vertical base force of `data`, or `None`
/// when it is not positive.
pub fn mass_from_vertical_force(data: &TrajectoryDataset, gravity: crate::Vec3) -> Option<f64> {
    let g = gravity.norm();
    if data.is_empty() || !(g > 0.0) {
        return None;
    }
    let up = gravity.scale(-1.0 / g);
    let mean = (0..data.len()).map(|i| up.dot(crate::Vec3::new(data.tau(i)[0], data.tau(i)[1], data.tau(i)[2]))).sum::<f64>()
        / data.len() as f64;
    let m = mean / g;
    (m > 0.0 && m.is_finite()).then_some(m)
}

/// Trains `config.method` on `data`. `kinematics` is required by the
/// white-box methods only; `on_epoch` sees each epoch and may stop early.
pub fn train(
    data: &TrajectoryDataset,
    topology: &RobotTopology,
    kinematics: Option<&GroundTruthModel>,
    config: &TrainConfig,
    par: &impl Parallel,
    mut on_epoch: impl FnMut(&EpochMetrics, &LearnedModel) -> Control,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.n_q() != topology.n_q() {
        return Err(Error::TopologyMismatch(format!(
            "dataset has {} joints, topology has {}",
            data.n_q(),
            topology.n_q()
        )));
    }
    let (train_set, test_set, weights) = split_and_weigh(data, config.split_fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = LearnedModel::init(
        config.method,
        topology,
        &config.hidden_widths(),
        config.offsets,
        config.mass_prior,
        kinematics,
        &train_set,
        &mut rng,
    )?;
    let train_split = model.prepare(&train_set)?;
    let test_split = model.prepare(&test_set)?;

    let mut params = model.flat_params();
    let mut optimizer = Optimizer::new(config.optimizer, params.len(), config.learning_rate, config.weight_decay);
    let mut order: Vec<usize> = (0..train_split.len).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, LearnedModel)> = None;
    let mut reached_target = false;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        let mut max_grad_norm: f64 = 0.0;
        let mut degenerate = 0;
        for idx in order.chunks(config.batch_size) {
            let batch = train_split.gather(idx);
            let mut g = batch_gradient(&model, &batch, &weights, config, par)?;
            if !g.loss.is_finite() || g.grad.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericalFailure(format!("non-finite loss {} at epoch {epoch}", g.loss)));
            }
            max_grad_norm = max_grad_norm.max(clip_global_norm(&mut g.grad, config.grad_clip_norm));
            optimizer.step(&mut params, &g.grad);
            model.set_flat_params(&params)?;
            loss_sum += g.loss;
            batches += 1;
            degenerate += g.degenerate;
        }
        let on_train = evaluate_prepared(&model, &train_split, &weights, config.chunk_size, par)?;
        let on_test = evaluate_prepared(&model, &test_split, &weights, config.chunk_size, par)?;
        let metrics = EpochMetrics {
            epoch,
            train_nmse: on_train.nmse,
            test_nmse: on_test.nmse,
            loss: loss_sum / batches as f64,
            beta_mean: on_train.beta_mean,
            m_hat: on_train.m_hat_mean,
            mass: on_train.mass,
            max_grad_norm,
            degenerate,
        };
        if best.as_ref().map_or(true, |b| metrics.test_nmse < b.0) {
            best = Some((metrics.test_nmse, epoch, model.clone()));
        }
        let control = on_epoch(&metrics, &model);
        let hit = config.target_nmse.is_some_and(|t| metrics.test_nmse <= t);
        history.push(metrics);
        if hit {
            reached_target = true;
            break;
        }
        if control == Control::Stop {
            break;
        }
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome { best: best_model, best_epoch, last: model, history, weights, reached_target })
}
