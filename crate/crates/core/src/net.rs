//! Small tanh perceptrons with exact input Jacobians, plus their tape bindings.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Jet, LinearMap, Tape, Tensor, Var};
use crate::linalg::DMat;
use crate::math::{cos, sin, sqrt, tanh};
use crate::topology::RobotTopology;
use crate::{Error, Result};

/// Scale applied to the last layer at initialization.
pub const OUTPUT_INIT_SCALE: f64 = 0.1;

/// `[cos q, sin q]`.
pub fn feature_map(q: &[f64]) -> Vec<f64> {
    q.iter().map(|&x| cos(x)).chain(q.iter().map(|&x| sin(x))).collect()
}

/// `∂ feature_map / ∂q`, of size `2n × n`.
pub fn feature_jacobian(q: &[f64]) -> DMat {
    let n = q.len();
    let mut j = DMat::zeros(2 * n, n);
    for (i, &x) in q.iter().enumerate() {
        j[(i, i)] = -sin(x);
        j[(n + i, i)] = cos(x);
    }
    j
}

/// A named flat array used by checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weight: DMat,
    pub bias: Vec<f64>,
}

/// Affine layers with tanh between them and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Mlp> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("a network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            crate::error::dim_check(l.weight.rows(), l.bias.len())?;
            if k > 0 {
                crate::error::dim_check(layers[k - 1].weight.rows(), l.weight.cols())?;
            }
            if l.weight.data().iter().chain(&l.bias).any(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig(format!("layer {k} has non-finite parameters")));
            }
        }
        Ok(Mlp { layers })
    }

    /// Widths `[in, hidden.., out]`. Weights are uniform with variance
    /// `1/fan_in`; the last layer is scaled by [`OUTPUT_INIT_SCALE`].
    pub fn init(widths: &[usize], rng: &mut ChaCha8Rng) -> Result<Mlp> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig(format!("invalid layer widths {widths:?}")));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let scale = if k == last { OUTPUT_INIT_SCALE } else { 1.0 };
                let a = scale * sqrt(3.0 / w[0] as f64);
                let weight = DMat::from_fn(w[1], w[0], |_, _| rng.gen_range(-a..a));
                let bias = (0..w[1]).map(|_| scale * rng.gen_range(-0.1..0.1)).collect();
                Layer { weight, bias }
            })
            .collect();
        Mlp::new(layers)
    }

    pub fn init_seeded(widths: &[usize], seed: u64) -> Result<Mlp> {
        Mlp::init(widths, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    pub fn widths(&self) -> Vec<usize> {
        core::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.weight.rows())).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data().len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        crate::error::dim_check(self.input_dim(), x.len())?;
        let mut a = x.to_vec();
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = l.weight.mul_vec(&a);
            z.iter_mut().zip(&l.bias).for_each(|(z, b)| *z += b);
            if k + 1 < self.layers.len() {
                z.iter_mut().for_each(|z| *z = tanh(*z));
            }
            a = z;
        }
        Ok(a)
    }

    /// Exact `∂y/∂x` by the chain rule through each layer.
    pub fn jacobian_wrt_inputs(&self, x: &[f64]) -> Result<DMat> {
        crate::error::dim_check(self.input_dim(), x.len())?;
        let mut a = x.to_vec();
        let mut jac = DMat::identity(x.len());
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = l.weight.mul_vec(&a);
            z.iter_mut().zip(&l.bias).for_each(|(z, b)| *z += b);
            jac = l.weight.matmul(&jac);
            if k + 1 < self.layers.len() {
                z.iter_mut().for_each(|z| *z = tanh(*z));
                for (i, y) in z.iter().enumerate() {
                    let d = 1.0 - y * y;
                    for j in 0..jac.cols() {
                        jac[(i, j)] *= d;
                    }
                }
            }
            a = z;
        }
        Ok(jac)
    }

    /// Flat parameters: per layer, the weight row-major then the bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        crate::error::dim_check(self.param_count(), p.len())?;
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weight.data().len();
            l.weight.data_mut().copy_from_slice(&p[at..at + n]);
            at += n;
            let m = l.bias.len();
            l.bias.copy_from_slice(&p[at..at + m]);
            at += m;
        }
        Ok(())
    }

    pub fn named_arrays(&self, prefix: &str) -> Vec<NamedArray> {
        let mut out = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            out.push(NamedArray {
                name: format!("{prefix}.{k}.weight"),
                shape: vec![l.weight.rows(), l.weight.cols()],
                data: l.weight.data().to_vec(),
            });
            out.push(NamedArray { name: format!("{prefix}.{k}.bias"), shape: vec![l.bias.len()], data: l.bias.clone() });
        }
        out
    }

    /// Rebuilds a network from arrays written by [`Mlp::named_arrays`].
    pub fn from_named_arrays(prefix: &str, arrays: &[NamedArray]) -> Result<Mlp> {
        let find = |name: &str| arrays.iter().find(|a| a.name == name);
        let mut layers = Vec::new();
        for k in 0.. {
            let Some(w) = find(&format!("{prefix}.{k}.weight")) else { break };
            let b = find(&format!("{prefix}.{k}.bias"))
                .ok_or_else(|| Error::InvalidConfig(format!("missing array {prefix}.{k}.bias")))?;
            if w.shape.len() != 2 {
                return Err(Error::InvalidConfig(format!("array {} is not a matrix", w.name)));
            }
            let weight = DMat::from_vec(w.shape[0], w.shape[1], w.data.clone())?;
            layers.push(Layer { weight, bias: b.data.clone() });
        }
        Mlp::new(layers)
    }

    /// Parameters as tape leaves.
    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let w = tape.param(Tensor::new(1, l.weight.rows(), l.weight.cols(), l.weight.data().to_vec()));
                let b = tape.param(Tensor::new(1, l.bias.len(), 1, l.bias.clone()));
                (w, b)
            })
            .collect();
        MlpVars { layers }
    }
}

/// Tape leaves of an [`Mlp`], in [`Mlp::params`] order.
#[derive(Debug, Clone)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
}

impl MlpVars {
    /// Forward pass on `[B, in, 1]` columns carrying input tangents.
    pub fn forward(&self, tape: &mut Tape, x: &Jet) -> Jet {
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let z = tape.j_matmul_left(w, &a);
            let z = tape.j_add_const(&z, b);
            a = if k < last { tape.j_tanh(&z) } else { z };
        }
        a
    }

    /// Scalar-output network evaluated on `[B, in, 1]`: the output and its
    /// input gradient `[B, in, 1]`, both differentiable on the tape.
    pub fn scalar_with_input_gradient(&self, tape: &mut Tape, x: Var) -> (Var, Var) {
        let last = self.layers.len() - 1;
        let mut a = x;
        let mut derivs = Vec::with_capacity(last);
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let z = tape.matmul(w, a);
            let z = tape.add(z, b);
            if k < last {
                a = tape.tanh(z);
                let sq = tape.mul(a, a);
                let one = tape.scalar(1.0);
                derivs.push(tape.sub(one, sq));
            } else {
                a = z;
            }
        }
        let mut g = tape.transpose(self.layers[last].0);
        for k in (0..last).rev() {
            let gd = tape.mul(g, derivs[k]);
            let wt = tape.transpose(self.layers[k].0);
            g = tape.matmul(wt, gd);
        }
        (a, g)
    }

    /// Gradient entries appended in [`Mlp::params`] order.
    pub fn collect_grads(&self, tape: &Tape, grads: &Gradients, out: &mut Vec<f64>) {
        for &(w, b) in &self.layers {
            out.extend(grads.data_or_zero(w, tape.value(w).data().len()));
            out.extend(grads.data_or_zero(b, tape.value(b).data().len()));
        }
    }
}

/// Feature columns `[B, 2n, 1]` for the joints in `joints`, with one tangent
/// per generalized joint coordinate (`None` for joints not read).
pub fn feature_jet(tape: &mut Tape, qs: &[&[f64]], joints: &[usize], n_q: usize) -> Jet {
    let n = joints.len();
    let mut vals = Vec::with_capacity(qs.len() * 2 * n);
    for q in qs {
        let sel: Vec<f64> = joints.iter().map(|&j| q[j]).collect();
        vals.extend(feature_map(&sel));
    }
    let val = tape.constant(Tensor::new(qs.len(), 2 * n, 1, vals));
    let mut tan = vec![None; n_q];
    for (local, &j) in joints.iter().enumerate() {
        let mut d = vec![0.0; qs.len() * 2 * n];
        for (s, q) in qs.iter().enumerate() {
            d[s * 2 * n + local] = -sin(q[j]);
            d[s * 2 * n + n + local] = cos(q[j]);
        }
        tan[j] = Some(tape.constant(Tensor::new(qs.len(), 2 * n, 1, d)));
    }
    Jet { val, tan }
}

/// Network set of the structured parameterization: one network on all joint
/// features and one per branch reading only that branch's joints, plus the
/// unconstrained mass parameter `θ_m` (`m = θ_m²`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub root: Mlp,
    pub branches: Vec<Mlp>,
    pub theta_m: f64,
}

impl ModelBundle {
    /// `hidden` widths are shared; `θ_m = √prior` when a mass guess is given,
    /// else 1.
    pub fn init(
        topology: &RobotTopology,
        root_outputs: usize,
        branch_outputs: &[usize],
        hidden: &[usize],
        mass_prior: Option<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<ModelBundle> {
        crate::error::dim_check(topology.n_branches(), branch_outputs.len())?;
        let widths = |inp: usize, out: usize| -> Vec<usize> {
            core::iter::once(inp).chain(hidden.iter().copied()).chain(core::iter::once(out)).collect()
        };
        let root = Mlp::init(&widths(2 * topology.n_q(), root_outputs), rng)?;
        let branches = (0..topology.n_branches())
            .map(|k| Mlp::init(&widths(2 * topology.branch_joints(k).len(), branch_outputs[k]), rng))
            .collect::<Result<Vec<_>>>()?;
        let theta_m = match mass_prior {
            Some(m) if m > 0.0 && m.is_finite() => sqrt(m),
            Some(m) => return Err(Error::InvalidConfig(format!("mass prior {m} must be positive"))),
            None => 1.0,
        };
        Ok(ModelBundle { root, branches, theta_m })
    }

    pub fn param_count(&self) -> usize {
        1 + self.root.param_count() + self.branches.iter().map(Mlp::param_count).sum::<usize>()
    }

    /// `[θ_m, root params, branch params...]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = vec![self.theta_m];
        p.extend(self.root.params());
        self.branches.iter().for_each(|b| p.extend(b.params()));
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        crate::error::dim_check(self.param_count(), p.len())?;
        self.theta_m = p[0];
        let mut at = 1;
        let n = self.root.param_count();
        self.root.set_params(&p[at..at + n])?;
        at += n;
        for b in &mut self.branches {
            let n = b.param_count();
            b.set_params(&p[at..at + n])?;
            at += n;
        }
        Ok(())
    }

    /// Root outputs and per-branch outputs at a single configuration.
    pub fn evaluate(&self, topology: &RobotTopology, q: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        crate::error::dim_check(topology.n_q(), q.len())?;
        let root = self.root.forward(&feature_map(q))?;
        let branches = self
            .branches
            .iter()
            .enumerate()
            .map(|(k, net)| net.forward(&feature_map(&q[topology.branch_joints(k)])))
            .collect::<Result<Vec<_>>>()?;
        Ok((root, branches))
    }

    pub fn named_arrays(&self) -> Vec<NamedArray> {
        let mut out = vec![NamedArray { name: "theta_m".into(), shape: vec![1], data: vec![self.theta_m] }];
        out.extend(self.root.named_arrays("root"));
        for (k, b) in self.branches.iter().enumerate() {
            out.extend(b.named_arrays(&format!("branch{k}")));
        }
        out
    }

    pub fn from_named_arrays(arrays: &[NamedArray], n_branches: usize) -> Result<ModelBundle> {
        let theta_m = arrays
            .iter()
            .find(|a| a.name == "theta_m")
            .and_then(|a| a.data.first().copied())
            .ok_or_else(|| Error::InvalidConfig("missing array theta_m".into()))?;
        let root = Mlp::from_named_arrays("root", arrays)?;
        let branches =
            (0..n_branches).map(|k| Mlp::from_named_arrays(&format!("branch{k}"), arrays)).collect::<Result<Vec<_>>>()?;
        Ok(ModelBundle { root, branches, theta_m })
    }

    pub fn bind(&self, tape: &mut Tape) -> BundleVars {
        let theta_m = tape.param(Tensor::scalar(self.theta_m));
        BundleVars { theta_m, root: self.root.bind(tape), branches: self.branches.iter().map(|b| b.bind(tape)).collect() }
    }
}

#[derive(Debug, Clone)]
pub struct BundleVars {
    pub theta_m: Var,
    pub root: MlpVars,
    pub branches: Vec<MlpVars>,
}

impl BundleVars {
    /// Outputs `[B, out, 1]` of the root network and of each branch network.
    pub fn forward(&self, tape: &mut Tape, topology: &RobotTopology, qs: &[&[f64]]) -> (Jet, Vec<Jet>) {
        let n_q = topology.n_q();
        let all: Vec<usize> = (0..n_q).collect();
        let x = feature_jet(tape, qs, &all, n_q);
        let root = self.root.forward(tape, &x);
        let branches = self
            .branches
            .iter()
            .enumerate()
            .map(|(k, net)| {
                let joints: Vec<usize> = topology.branch_joints(k).collect();
                let x = feature_jet(tape, qs, &joints, n_q);
                net.forward(tape, &x)
            })
            .collect();
        (root, branches)
    }

    pub fn collect_grads(&self, tape: &Tape, grads: &Gradients, out: &mut Vec<f64>) {
        out.extend(grads.data_or_zero(self.theta_m, 1));
        self.root.collect_grads(tape, grads, out);
        self.branches.iter().for_each(|b| b.collect_grads(tape, grads, out));
    }
}

/// Slices rows `[at, at + len)` of `[B, n, 1]` columns.
pub fn rows_map(n: usize, at: usize, len: usize) -> Arc<LinearMap> {
    Arc::new(LinearMap::block((n, 1), (at, 0), (len, 1)))
}
