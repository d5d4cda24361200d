//! Checkpoints: a magic tag, a JSON manifest and the named arrays as raw
//! little-endian `f64`, so values round-trip bit for bit.

use std::path::Path;

use fbid_core::inertia_param::Offsets;
use fbid_core::net::NamedArray;
use fbid_core::refdyn::{BodyParams, GroundTruthModel, Joint};
use fbid_core::training::{LearnedModel, Method, OptimizerKind, TorqueWeights, TrainConfig};
use fbid_core::{Mat3, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::formats::{topology_hash, write_atomic, TopologyFile};

pub const MAGIC: &[u8; 8] = b"FBIDCKPT";
const FORMAT: &str = "fbid-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointEntry {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub axis: [f64; 3],
}

/// Joint placements kept for the white-box regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicsEntry {
    pub gravity: [f64; 3],
    pub joints: Vec<JointEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub optimizer: String,
    pub eps_l: f64,
    pub eps_m: f64,
    pub eps_d: f64,
    pub w_mass: f64,
    pub w_rotational: f64,
    pub split_fraction: f64,
    pub chunk_size: usize,
    pub target_nmse: Option<f64>,
    pub mass_prior: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub method: String,
    pub topology: TopologyFile,
    pub topology_hash: String,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub epoch: usize,
    pub hyperparameters: Hyperparameters,
    pub kinematics: Option<KinematicsEntry>,
    pub arrays: Vec<ArrayEntry>,
}

/// A model with the torque statistics of its training split.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: LearnedModel,
    pub weights: TorqueWeights,
    pub config: TrainConfig,
    pub epoch: usize,
}

fn torque_arrays(w: &TorqueWeights) -> Vec<NamedArray> {
    let n = w.dim();
    [("torque.mean", &w.mean), ("torque.variance", &w.variance), ("torque.weights", &w.weights)]
        .into_iter()
        .map(|(name, d)| NamedArray { name: name.into(), shape: vec![n], data: d.clone() })
        .collect()
}

impl Checkpoint {
    pub fn manifest(&self, arrays: &[NamedArray]) -> Manifest {
        let c = &self.config;
        Manifest {
            format: FORMAT.into(),
            method: self.model.method.name().into(),
            topology: TopologyFile::from_topology(&self.model.topology),
            topology_hash: topology_hash(&self.model.topology),
            hidden: self.model.hidden.clone(),
            seed: c.seed,
            epoch: self.epoch,
            hyperparameters: Hyperparameters {
                epochs: c.epochs,
                batch_size: c.batch_size,
                learning_rate: c.learning_rate,
                weight_decay: c.weight_decay,
                grad_clip_norm: c.grad_clip_norm,
                optimizer: c.optimizer.name().into(),
                eps_l: c.offsets.eps_l,
                eps_m: c.offsets.eps_m,
                eps_d: c.offsets.eps_d,
                w_mass: c.w_mass,
                w_rotational: c.w_rotational,
                split_fraction: c.split_fraction,
                chunk_size: c.chunk_size,
                target_nmse: c.target_nmse,
                mass_prior: c.mass_prior,
            },
            kinematics: self.model.kinematics.as_ref().map(|k| KinematicsEntry {
                gravity: k.gravity().0,
                joints: k
                    .joints()
                    .iter()
                    .map(|j| JointEntry { rotation: j.rotation.0, translation: j.translation.0, axis: j.axis.0 })
                    .collect(),
            }),
            arrays: arrays.iter().map(|a| ArrayEntry { name: a.name.clone(), shape: a.shape.clone() }).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut arrays = self.model.named_arrays();
        arrays.extend(torque_arrays(&self.weights));
        let manifest = serde_json::to_vec(&self.manifest(&arrays)).expect("serializable manifest");
        let mut out = Vec::with_capacity(16 + manifest.len() + 8 * arrays.iter().map(|a| a.data.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for a in &arrays {
            for x in &a.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let bytes = self.to_bytes();
        write_atomic(path, |w| w.write_all(&bytes))
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Checkpoint> {
        let bad = |m: &str| CliError::data(format!("checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic tag"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16usize.checked_add(len).ok_or_else(|| bad("bad manifest length"))?).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body).map_err(|e| CliError::data(format!("checkpoint manifest: {e}")))?;
        if manifest.format != FORMAT {
            return Err(bad("unknown format"));
        }
        let mut rest = &bytes[16 + len..];
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        for a in &manifest.arrays {
            let n: usize = a.shape.iter().product();
            if rest.len() < 8 * n {
                return Err(bad("truncated array data"));
            }
            let data = rest[..8 * n].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            rest = &rest[8 * n..];
            arrays.push(NamedArray { name: a.name.clone(), shape: a.shape.clone(), data });
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Checkpoint::from_parts(&manifest, &arrays)
    }

    fn from_parts(m: &Manifest, arrays: &[NamedArray]) -> CliResult<Checkpoint> {
        let method = Method::parse(&m.method).map_err(|e| CliError::data(format!("checkpoint: {e}")))?;
        let topology = m.topology.to_topology()?;
        if topology_hash(&topology) != m.topology_hash {
            return Err(CliError::data("checkpoint: topology hash does not match its topology"));
        }
        let find = |name: &str| -> CliResult<Vec<f64>> {
            arrays.iter().find(|a| a.name == name).map(|a| a.data.clone()).ok_or_else(|| CliError::data(format!("checkpoint: missing {name}")))
        };
        let weights_v = find("torque.weights")?;
        let weights = TorqueWeights {
            mean: find("torque.mean")?,
            variance: find("torque.variance")?,
            excluded: weights_v.iter().enumerate().filter(|(_, w)| **w == 0.0).map(|(i, _)| i).collect(),
            weights: weights_v,
        };
        let h = &m.hyperparameters;
        let offsets = Offsets { eps_l: h.eps_l, eps_m: h.eps_m, eps_d: h.eps_d };
        let kinematics = match &m.kinematics {
            Some(k) => {
                let joints = k
                    .joints
                    .iter()
                    .map(|j| Joint { rotation: Mat3(j.rotation), translation: Vec3(j.translation), axis: Vec3(j.axis) })
                    .collect();
                // Bodies are placeholders; the regressor reads kinematics only.
                let unit = BodyParams { mass: 1.0, com: Vec3::ZERO, rot_inertia: fbid_core::SymMat3::diag([1.0; 3]) };
                let bodies = vec![unit; topology.n_q() + 1];
                Some(GroundTruthModel::new(topology.clone(), joints, bodies, Vec3(k.gravity))?)
            }
            None => None,
        };
        let params = LearnedModel::params_from_named_arrays(method, &topology, arrays)?;
        let model = LearnedModel::from_params(method, topology, offsets, m.hidden.clone(), params, kinematics)?;
        let optimizer = match h.optimizer.as_str() {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            o => return Err(CliError::data(format!("checkpoint: unknown optimizer {o}"))),
        };
        let config = TrainConfig {
            method,
            epochs: h.epochs,
            batch_size: h.batch_size,
            learning_rate: h.learning_rate,
            weight_decay: h.weight_decay,
            grad_clip_norm: h.grad_clip_norm,
            optimizer,
            hidden: Some(m.hidden.clone()),
            offsets,
            w_mass: h.w_mass,
            w_rotational: h.w_rotational,
            seed: m.seed,
            split_fraction: h.split_fraction,
            chunk_size: h.chunk_size,
            target_nmse: h.target_nmse,
            mass_prior: h.mass_prior,
        };
        Ok(Checkpoint { model, weights, config, epoch: m.epoch })
    }

    pub fn load(path: &Path) -> CliResult<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| CliError::read(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}
