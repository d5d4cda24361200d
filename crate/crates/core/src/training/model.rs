use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Jet, LinearMap, Tape, Tensor, Var};
use crate::dataset::TrajectoryDataset;
use crate::inertia_param::{
    assemble_delan_dense, assemble_felan, assemble_felan_bs, mass_and_moment, Diagnostics, FactorLayout, Offsets,
};
use crate::lagrangian::{BaseMomentMaps, KinematicBatch, KinematicVars, GRAVITY};
use crate::linalg::{DMat, Mat3, SymMat3, Vec3};
use crate::net::{feature_jet, feature_map, BundleVars, Mlp, MlpVars, ModelBundle, NamedArray};
use crate::refdyn::{
    body_params_from, composite_inertia, regressor, BodyParams, GroundTruthModel, InertialParamScheme, PARAMS_PER_BODY,
};
use crate::topology::{RobotTopology, BASE_DOF};
use crate::{Error, Result};

/// A learnable inverse-dynamics model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Black-box network on `(Θ, q, ν̇, ν̈)`.
    Ffnn,
    /// Dense Cholesky factor plus a potential network on the full `ν`.
    Delan,
    /// Dense Cholesky factor with the potential computed from its mass and first moment.
    DelanPp,
    /// Branch-sparse factor with directly predicted base blocks.
    FelanBs,
    /// Branch-sparse, fully physically consistent factor.
    Felan,
    /// Per-body inertial parameters through the rigid-body regressor.
    WhiteBox(InertialParamScheme),
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Ffnn,
        Method::Delan,
        Method::DelanPp,
        Method::FelanBs,
        Method::Felan,
        Method::WhiteBox(InertialParamScheme::Ns),
        Method::WhiteBox(InertialParamScheme::Pd),
        Method::WhiteBox(InertialParamScheme::Cov),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ffnn => "ffnn",
            Method::Delan => "delan",
            Method::DelanPp => "delan_pp",
            Method::FelanBs => "felan_bs",
            Method::Felan => "felan",
            Method::WhiteBox(InertialParamScheme::Ns) => "whitebox_ns",
            Method::WhiteBox(InertialParamScheme::Pd) => "whitebox_pd",
            Method::WhiteBox(InertialParamScheme::Cov) => "whitebox_cov",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }

    /// Whether torques come from the Euler-Lagrange pipeline.
    pub fn is_lagrangian(self) -> bool {
        matches!(self, Method::Delan | Method::DelanPp | Method::FelanBs | Method::Felan)
    }

    /// Whether the method needs joint kinematics (the white-box regressor).
    pub fn needs_kinematics(self) -> bool {
        matches!(self, Method::WhiteBox(_))
    }

    /// Whether the base block is guaranteed to be fully physically consistent.
    pub fn guarantees_consistency(self) -> bool {
        matches!(self, Method::Felan | Method::WhiteBox(InertialParamScheme::Cov))
    }

    /// Whether the inertia factor respects the branch sparsity pattern.
    pub fn branch_sparse(self) -> bool {
        matches!(self, Method::Felan | Method::FelanBs)
    }
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Trainable state of each method family.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Ffnn { net: Mlp, input_mean: Vec<f64>, input_scale: Vec<f64> },
    Dense { factor: Mlp, potential: Option<Mlp> },
    Bundle(ModelBundle),
    /// Raw per-body values `[m, h, six scheme values]`, base first.
    WhiteBox { theta: Vec<f64> },
}

/// Number of raw inputs of the black-box network: `(Θ, q, ν̇, ν̈)`.
pub fn ffnn_input_dim(n_q: usize) -> usize {
    3 + n_q + 2 * (BASE_DOF + n_q)
}

fn ffnn_inputs(data: &TrajectoryDataset, i: usize) -> Vec<f64> {
    let mut x = data.nu(i)[3..].to_vec();
    x.extend_from_slice(data.nu_dot(i));
    x.extend_from_slice(data.nu_ddot(i));
    x
}

/// Raw white-box values that reproduce `bodies` exactly under `scheme`.
pub fn whitebox_params_from_bodies(bodies: &[BodyParams], scheme: InertialParamScheme) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(bodies.len() * PARAMS_PER_BODY);
    for b in bodies {
        out.push(b.mass);
        out.extend_from_slice(&b.first_moment().0);
        let i = b.rot_inertia;
        let packed_chol = |m: &Mat3| -> Result<[f64; 6]> {
            let c = m.to_dmat().cholesky()?;
            Ok([c[(0, 0)], c[(1, 0)], c[(1, 1)], c[(2, 0)], c[(2, 1)], c[(2, 2)]])
        };
        let six = match scheme {
            InertialParamScheme::Ns => i.upper(),
            InertialParamScheme::Pd => packed_chol(i.mat())?,
            InertialParamScheme::Cov => packed_chol(&(Mat3::IDENTITY.scale(0.5 * i.trace()) - *i.mat()))?,
        };
        out.extend_from_slice(&six);
    }
    Ok(out)
}

/// Body parameters decoded from raw white-box values.
pub fn whitebox_bodies(theta: &[f64], scheme: InertialParamScheme) -> Result<Vec<BodyParams>> {
    if theta.len() % PARAMS_PER_BODY != 0 {
        return Err(Error::DimensionMismatch { expected: PARAMS_PER_BODY, got: theta.len() % PARAMS_PER_BODY });
    }
    theta.chunks(PARAMS_PER_BODY).map(|c| body_params_from(c, scheme)).collect()
}

/// Composite inertia of a learned model at one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct InertiaReport {
    /// Mass used by the potential energy.
    pub mass: f64,
    /// Shifted mass of the structured parameterization.
    pub m_hat: Option<f64>,
    pub first_moment: Vec3,
    pub h_mat: DMat,
    /// `L` with `H = LᵀL` for the branch-sparse methods.
    pub factor: Option<DMat>,
    pub diagnostics: Option<Diagnostics>,
}

/// Tape handles of [`ModelParams`].
#[derive(Debug, Clone)]
pub enum ModelVars {
    Ffnn(MlpVars),
    Dense { factor: MlpVars, potential: Option<MlpVars> },
    Bundle(BundleVars),
    WhiteBox(Var),
}

impl ModelVars {
    pub fn collect_grads(&self, tape: &Tape, grads: &Gradients, out: &mut Vec<f64>) {
        match self {
            ModelVars::Ffnn(v) => v.collect_grads(tape, grads, out),
            ModelVars::Dense { factor, potential } => {
                factor.collect_grads(tape, grads, out);
                if let Some(p) = potential {
                    p.collect_grads(tape, grads, out);
                }
            }
            ModelVars::Bundle(b) => b.collect_grads(tape, grads, out),
            ModelVars::WhiteBox(t) => out.extend(grads.data_or_zero(*t, tape.value(*t).data().len())),
        }
    }
}

/// Tape outputs for one chunk of samples.
#[derive(Debug, Clone, Copy)]
pub struct GraphOutputs {
    /// `[B, n, 1]`.
    pub total: Var,
    /// Inertial, velocity-dependent and gravity torques when the method has them.
    pub parts: Option<[Var; 3]>,
    /// Mass used in the potential (or the summed body masses), broadcastable `[B|1, 1, 1]`.
    pub mass: Option<Var>,
    /// Shifted mass and rotational-shift diagnostics of the structured method.
    pub shifts: Option<ShiftVars>,
}

#[derive(Debug, Clone, Copy)]
pub struct ShiftVars {
    pub m_hat: Var,
    pub theta_mass: Var,
    pub mu_d: Var,
    pub beta: Var,
}

/// Constant maps of the white-box parameter transform.
#[derive(Debug)]
struct WhiteBoxMaps {
    keep: Arc<LinearMap>,
    pack: Arc<LinearMap>,
    trace_minus: Arc<LinearMap>,
    place: Arc<LinearMap>,
}

impl WhiteBoxMaps {
    fn new(scheme: InertialParamScheme) -> WhiteBoxMaps {
        let p = (PARAMS_PER_BODY, 1);
        let kept = if scheme == InertialParamScheme::Ns { PARAMS_PER_BODY } else { 4 };
        let mut keep = LinearMap::new(p, p);
        (0..kept).for_each(|i| keep.push((i, 0), (i, 0), 1.0));
        let mut pack = LinearMap::new(p, (3, 3));
        for (e, (i, j)) in crate::inertia_param::LOWER3.into_iter().enumerate() {
            pack.push((i, j), (4 + e, 0), 1.0);
        }
        let mut trace_minus = LinearMap::new((3, 3), (3, 3));
        for i in 0..3 {
            for j in 0..3 {
                trace_minus.push((i, j), (i, j), -1.0);
            }
            for k in 0..3 {
                trace_minus.push((i, i), (k, k), 1.0);
            }
        }
        let mut place = LinearMap::new((3, 3), p);
        for (e, (i, j)) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)].into_iter().enumerate() {
            place.push((4 + e, 0), (i, j), 1.0);
        }
        WhiteBoxMaps { keep: Arc::new(keep), pack: Arc::new(pack), trace_minus: Arc::new(trace_minus), place: Arc::new(place) }
    }
}

/// A trained or freshly initialized model together with everything needed to
/// evaluate it.
#[derive(Debug, Clone)]
pub struct LearnedModel {
    pub method: Method,
    pub topology: RobotTopology,
    pub offsets: Offsets,
    pub hidden: Vec<usize>,
    pub params: ModelParams,
    /// Joint kinematics for the white-box regressor.
    pub kinematics: Option<GroundTruthModel>,
    layout: FactorLayout,
    moments: BaseMomentMaps,
    whitebox: Option<Arc<WhiteBoxMaps>>,
}

impl PartialEq for LearnedModel {
    fn eq(&self, o: &LearnedModel) -> bool {
        self.method == o.method
            && self.topology == o.topology
            && self.offsets == o.offsets
            && self.hidden == o.hidden
            && self.params == o.params
    }
}

impl LearnedModel {
    pub fn from_params(
        method: Method,
        topology: RobotTopology,
        offsets: Offsets,
        hidden: Vec<usize>,
        params: ModelParams,
        kinematics: Option<GroundTruthModel>,
    ) -> Result<LearnedModel> {
        if method.needs_kinematics() {
            let k = kinematics.as_ref().ok_or_else(|| Error::InvalidConfig(format!("{method} needs joint kinematics")))?;
            if k.topology() != &topology {
                return Err(Error::TopologyMismatch("kinematic model and topology differ".into()));
            }
        }
        let consistent = matches!(
            (method, &params),
            (Method::Ffnn, ModelParams::Ffnn { .. })
                | (Method::Delan | Method::DelanPp, ModelParams::Dense { .. })
                | (Method::Felan | Method::FelanBs, ModelParams::Bundle(_))
                | (Method::WhiteBox(_), ModelParams::WhiteBox { .. })
        );
        if !consistent {
            return Err(Error::InvalidConfig(format!("parameters do not belong to {method}")));
        }
        let whitebox = match method {
            Method::WhiteBox(s) => Some(Arc::new(WhiteBoxMaps::new(s))),
            _ => None,
        };
        Ok(LearnedModel {
            method,
            layout: FactorLayout::new(&topology),
            moments: BaseMomentMaps::new(topology.dim()),
            topology,
            offsets,
            hidden,
            params,
            kinematics,
            whitebox,
        })
    }

    /// Fresh parameters. `train` supplies standardization statistics for the
    /// black-box inputs.
    pub fn init(
        method: Method,
        topology: &RobotTopology,
        hidden: &[usize],
        offsets: Offsets,
        mass_prior: Option<f64>,
        kinematics: Option<&GroundTruthModel>,
        train: &TrajectoryDataset,
        rng: &mut ChaCha8Rng,
    ) -> Result<LearnedModel> {
        let n_q = topology.n_q();
        let n = topology.dim();
        let widths = |inp: usize, out: usize| -> Vec<usize> {
            core::iter::once(inp).chain(hidden.iter().copied()).chain(core::iter::once(out)).collect()
        };
        let layout = FactorLayout::new(topology);
        let params = match method {
            Method::Ffnn => {
                let d = ffnn_input_dim(n_q);
                let rows = train.len().max(1) as f64;
                let mut mean = vec![0.0; d];
                let mut sq = vec![0.0; d];
                for i in 0..train.len() {
                    for (k, x) in ffnn_inputs(train, i).into_iter().enumerate() {
                        mean[k] += x;
                        sq[k] += x * x;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows);
                let scale = (0..d)
                    .map(|k| {
                        let var = sq[k] / rows - mean[k] * mean[k];
                        if var > 1e-12 {
                            crate::math::sqrt(var)
                        } else {
                            1.0
                        }
                    })
                    .collect();
                ModelParams::Ffnn { net: Mlp::init(&widths(d, n), rng)?, input_mean: mean, input_scale: scale }
            }
            Method::Delan | Method::DelanPp => {
                let factor = Mlp::init(&widths(2 * n_q, layout.dense_outputs), rng)?;
                let potential = if method == Method::Delan {
                    Some(Mlp::init(&widths(crate::lagrangian::potential_feature_count(n_q), 1), rng)?)
                } else {
                    None
                };
                ModelParams::Dense { factor, potential }
            }
            Method::FelanBs => ModelParams::Bundle(ModelBundle::init(
                topology,
                layout.bs_root_outputs,
                &layout.branch_outputs(),
                hidden,
                mass_prior,
                rng,
            )?),
            Method::Felan => ModelParams::Bundle(ModelBundle::init(
                topology,
                layout.felan_root_outputs,
                &layout.branch_outputs(),
                hidden,
                mass_prior,
                rng,
            )?),
            Method::WhiteBox(scheme) => {
                let nb = n_q + 1;
                let mass = match mass_prior {
                    Some(m) if m > 0.0 && m.is_finite() => m / nb as f64,
                    Some(m) => return Err(Error::InvalidConfig(format!("mass prior {m} must be positive"))),
                    None => 1.0,
                };
                let inertia = SymMat3::new(Mat3::IDENTITY.scale(0.01 * mass));
                let body = BodyParams { mass, com: Vec3::ZERO, rot_inertia: inertia };
                let mut theta = whitebox_params_from_bodies(&vec![body; nb], scheme)?;
                theta.iter_mut().for_each(|t| *t += 1e-3 * rng.gen_range(-1.0..1.0));
                ModelParams::WhiteBox { theta }
            }
        };
        LearnedModel::from_params(method, topology.clone(), offsets, hidden.to_vec(), params, kinematics.cloned())
    }

    pub fn layout(&self) -> &FactorLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.flat_params().len()
    }

    /// Trainable values in a fixed order.
    pub fn flat_params(&self) -> Vec<f64> {
        match &self.params {
            ModelParams::Ffnn { net, .. } => net.params(),
            ModelParams::Dense { factor, potential } => {
                let mut p = factor.params();
                if let Some(pn) = potential {
                    p.extend(pn.params());
                }
                p
            }
            ModelParams::Bundle(b) => b.params(),
            ModelParams::WhiteBox { theta } => theta.clone(),
        }
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        crate::error::dim_check(self.param_count(), p.len())?;
        match &mut self.params {
            ModelParams::Ffnn { net, .. } => net.set_params(p),
            ModelParams::Dense { factor, potential } => {
                let k = factor.param_count();
                factor.set_params(&p[..k])?;
                if let Some(pn) = potential {
                    pn.set_params(&p[k..])?;
                }
                Ok(())
            }
            ModelParams::Bundle(b) => b.set_params(p),
            ModelParams::WhiteBox { theta } => {
                theta.copy_from_slice(p);
                Ok(())
            }
        }
    }

    pub fn named_arrays(&self) -> Vec<NamedArray> {
        match &self.params {
            ModelParams::Ffnn { net, input_mean, input_scale } => {
                let mut out = net.named_arrays("ffnn");
                out.push(NamedArray { name: "input_mean".into(), shape: vec![input_mean.len()], data: input_mean.clone() });
                out.push(NamedArray { name: "input_scale".into(), shape: vec![input_scale.len()], data: input_scale.clone() });
                out
            }
            ModelParams::Dense { factor, potential } => {
                let mut out = factor.named_arrays("factor");
                if let Some(p) = potential {
                    out.extend(p.named_arrays("potential"));
                }
                out
            }
            ModelParams::Bundle(b) => b.named_arrays(),
            ModelParams::WhiteBox { theta } => vec![NamedArray {
                name: "bodies".into(),
                shape: vec![theta.len() / PARAMS_PER_BODY, PARAMS_PER_BODY],
                data: theta.clone(),
            }],
        }
    }

    pub fn params_from_named_arrays(method: Method, topology: &RobotTopology, arrays: &[NamedArray]) -> Result<ModelParams> {
        let find = |name: &str| -> Result<Vec<f64>> {
            arrays
                .iter()
                .find(|a| a.name == name)
                .map(|a| a.data.clone())
                .ok_or_else(|| Error::InvalidConfig(format!("missing array {name}")))
        };
        Ok(match method {
            Method::Ffnn => ModelParams::Ffnn {
                net: Mlp::from_named_arrays("ffnn", arrays)?,
                input_mean: find("input_mean")?,
                input_scale: find("input_scale")?,
            },
            Method::Delan => ModelParams::Dense {
                factor: Mlp::from_named_arrays("factor", arrays)?,
                potential: Some(Mlp::from_named_arrays("potential", arrays)?),
            },
            Method::DelanPp => ModelParams::Dense { factor: Mlp::from_named_arrays("factor", arrays)?, potential: None },
            Method::Felan | Method::FelanBs => {
                ModelParams::Bundle(ModelBundle::from_named_arrays(arrays, topology.n_branches())?)
            }
            Method::WhiteBox(_) => ModelParams::WhiteBox { theta: find("bodies")? },
        })
    }

    /// Current white-box bodies.
    pub fn bodies(&self) -> Option<Result<Vec<BodyParams>>> {
        match (&self.params, self.method) {
            (ModelParams::WhiteBox { theta }, Method::WhiteBox(s)) => Some(whitebox_bodies(theta, s)),
            _ => None,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        match &self.params {
            ModelParams::Ffnn { net, .. } => ModelVars::Ffnn(net.bind(tape)),
            ModelParams::Dense { factor, potential } => {
                ModelVars::Dense { factor: factor.bind(tape), potential: potential.as_ref().map(|p| p.bind(tape)) }
            }
            ModelParams::Bundle(b) => ModelVars::Bundle(b.bind(tape)),
            ModelParams::WhiteBox { theta } => {
                let nb = theta.len() / PARAMS_PER_BODY;
                ModelVars::WhiteBox(tape.param(Tensor::new(nb, PARAMS_PER_BODY, 1, theta.clone())))
            }
        }
    }

    fn check_compatible(&self, data: &TrajectoryDataset) -> Result<()> {
        if data.n_q() != self.topology.n_q() {
            return Err(Error::TopologyMismatch(format!(
                "dataset has {} joints, model has {}",
                data.n_q(),
                self.topology.n_q()
            )));
        }
        Ok(())
    }

    /// Per-sample constants for every sample of `data`.
    pub fn prepare(&self, data: &TrajectoryDataset) -> Result<PreparedSplit> {
        self.check_compatible(data)?;
        let n = data.dim();
        let len = data.len();
        let mut tau = Vec::with_capacity(len * n);
        let mut q = Vec::with_capacity(len * self.topology.n_q());
        for i in 0..len {
            tau.extend_from_slice(data.tau(i));
            q.extend_from_slice(&data.nu(i)[BASE_DOF..]);
        }
        let states: Vec<_> = (0..len).map(|i| data.state(i)).collect();
        let gravity = self.kinematics.as_ref().map_or(GRAVITY, GroundTruthModel::gravity);
        let kin = if self.method.is_lagrangian() && len > 0 { Some(KinematicBatch::new(&states, gravity)?) } else { None };
        let ffnn = match &self.params {
            ModelParams::Ffnn { input_mean, input_scale, .. } => {
                let d = input_mean.len();
                let mut x = Vec::with_capacity(len * d);
                for i in 0..len {
                    let raw = ffnn_inputs(data, i);
                    x.extend(raw.iter().zip(input_mean).zip(input_scale).map(|((v, m), s)| (v - m) / s));
                }
                Some(Tensor::new(len, d, 1, x))
            }
            _ => None,
        };
        let regressor = match (&self.kinematics, self.method) {
            (Some(model), Method::WhiteBox(_)) => {
                let p = PARAMS_PER_BODY * (self.topology.n_q() + 1);
                let mut y = Vec::with_capacity(len * n * p);
                for s in &states {
                    y.extend(regressor(model, s)?.into_vec());
                }
                Some(Tensor::new(len, n, p, y))
            }
            _ => None,
        };
        Ok(PreparedSplit {
            len,
            dim: n,
            tau: Tensor::new(len, n, 1, tau),
            q: Tensor::new(len, self.topology.n_q(), 1, q),
            kin,
            ffnn,
            regressor,
        })
    }

    /// Builds the torque graph for the samples of `chunk`.
    pub fn build_graph(&self, tape: &mut Tape, vars: &ModelVars, chunk: &PreparedSplit) -> Result<GraphOutputs> {
        let qs: Vec<&[f64]> = (0..chunk.len).map(|i| chunk.q.sample(i)).collect();
        let n_q = self.topology.n_q();
        let kin_vars = |tape: &mut Tape| -> Result<KinematicVars> {
            let kin = chunk.kin.as_ref().ok_or_else(|| Error::InvalidData("missing kinematic constants".into()))?;
            Ok(kin.bind(tape))
        };
        let lagrangian = |tape: &mut Tape, f: &Jet, potential: Option<&MlpVars>| -> Result<GraphOutputs> {
            let kv = kin_vars(tape)?;
            let (inertial, coriolis) = kv.inertial_coriolis(tape, f);
            let (m, h) = self.moments.apply(tape, f);
            let g = match potential {
                Some(p) => {
                    let (_, grad) = p.scalar_with_input_gradient(tape, kv.features);
                    kv.feature_gravity(tape, grad)
                }
                // The potential takes the mass as configuration independent, so
                // its joint tangents stay out of the gravity torque.
                None => kv.composite_gravity(tape, &Jet::constant(m.val, n_q), &h),
            };
            let t = kv.combine(tape, inertial, coriolis, g);
            Ok(GraphOutputs { total: t.total, parts: Some([inertial, coriolis, g]), mass: Some(m.val), shifts: None })
        };
        match (vars, self.method) {
            (ModelVars::Ffnn(net), _) => {
                let x = chunk.ffnn.as_ref().ok_or_else(|| Error::InvalidData("missing network inputs".into()))?;
                let x = tape.constant(x.clone());
                let y = net.forward(tape, &Jet::constant(x, 0));
                Ok(GraphOutputs { total: y.val, parts: None, mass: None, shifts: None })
            }
            (ModelVars::WhiteBox(theta), Method::WhiteBox(scheme)) => {
                let maps = self.whitebox.as_ref().expect("white-box maps");
                let y = chunk.regressor.as_ref().ok_or_else(|| Error::InvalidData("missing regressor".into()))?;
                let mut pi = tape.linear(*theta, &maps.keep);
                if scheme != InertialParamScheme::Ns {
                    let c = tape.linear(*theta, &maps.pack);
                    let ct = tape.transpose(c);
                    let mut inertia = tape.matmul(c, ct);
                    if scheme == InertialParamScheme::Cov {
                        inertia = tape.linear(inertia, &maps.trace_minus);
                    }
                    let placed = tape.linear(inertia, &maps.place);
                    pi = tape.add(pi, placed);
                }
                let nb = n_q + 1;
                let pi = tape.reshape(pi, 1, nb * PARAMS_PER_BODY, 1);
                let y = tape.constant(y.clone());
                let total = tape.matmul(y, pi);
                let mut pick = LinearMap::new((PARAMS_PER_BODY, 1), (1, 1));
                pick.push((0, 0), (0, 0), 1.0);
                let masses = tape.linear(*theta, &Arc::new(pick));
                let mass = tape.sum_batch(masses);
                Ok(GraphOutputs { total, parts: None, mass: Some(mass), shifts: None })
            }
            (ModelVars::Dense { factor, potential }, _) => {
                let all: Vec<usize> = (0..n_q).collect();
                let x = feature_jet(tape, &qs, &all, n_q);
                let out = factor.forward(tape, &x);
                let c = self.layout.dense_tape(tape, &out, self.offsets.eps_l);
                let f = tape.j_transpose(&c);
                lagrangian(tape, &f, potential.as_ref())
            }
            (ModelVars::Bundle(b), Method::FelanBs) => {
                let (root, branches) = b.forward(tape, &self.topology, &qs);
                let f = self.layout.bs_tape(tape, &root, &branches, self.offsets.eps_l);
                lagrangian(tape, &f, None)
            }
            (ModelVars::Bundle(b), _) => {
                let (root, branches) = b.forward(tape, &self.topology, &qs);
                let out = self.layout.felan_tape(tape, b.theta_m, &root, &branches, &self.offsets)?;
                let kv = kin_vars(tape)?;
                let (inertial, coriolis) = kv.inertial_coriolis(tape, &out.factor);
                let mass = Jet::constant(out.mass, n_q);
                let g = kv.composite_gravity(tape, &mass, &out.h);
                let t = kv.combine(tape, inertial, coriolis, g);
                Ok(GraphOutputs {
                    total: t.total,
                    parts: Some([inertial, coriolis, g]),
                    mass: Some(out.mass),
                    shifts: Some(ShiftVars { m_hat: out.m_hat.val, theta_mass: out.mass, mu_d: out.mu_d, beta: out.beta }),
                })
            }
            _ => Err(Error::InvalidConfig("parameters do not match the method".into())),
        }
    }

    /// Mass, first moment and inertia matrix at `q`, with the structured
    /// factor and shift diagnostics where the method has them.
    pub fn inertia_at(&self, q: &[f64]) -> Result<InertiaReport> {
        crate::error::dim_check(self.topology.n_q(), q.len())?;
        match &self.params {
            ModelParams::Ffnn { .. } => Err(Error::InvalidConfig("the black-box network has no inertia model".into())),
            ModelParams::Dense { factor, .. } => {
                let c = self.layout.decode_dense(&factor.forward(&feature_map(q))?, self.offsets.eps_l)?;
                let h = assemble_delan_dense(&c)?;
                let (mass, first_moment) = mass_and_moment(&h);
                Ok(InertiaReport { mass, m_hat: None, first_moment, h_mat: h, factor: None, diagnostics: None })
            }
            ModelParams::Bundle(b) => {
                let (root, branches) = b.evaluate(&self.topology, q)?;
                if self.method == Method::FelanBs {
                    let raw = self.layout.decode_bs(&root, &branches, self.offsets.eps_l)?;
                    let a = assemble_felan_bs(&raw, &self.topology)?;
                    Ok(InertiaReport {
                        mass: a.mass,
                        m_hat: None,
                        first_moment: a.h,
                        factor: Some(a.factor.to_dense()),
                        h_mat: a.h_mat,
                        diagnostics: None,
                    })
                } else {
                    let raw = self.layout.decode_felan(b.theta_m, &root, &branches, self.offsets.eps_l)?;
                    let a = assemble_felan(&raw, &self.topology, &self.offsets)?;
                    Ok(InertiaReport {
                        mass: b.theta_m * b.theta_m,
                        m_hat: Some(a.m_hat),
                        first_moment: a.h,
                        factor: Some(a.factor.to_dense()),
                        h_mat: a.h_mat,
                        diagnostics: Some(a.diagnostics),
                    })
                }
            }
            ModelParams::WhiteBox { theta } => {
                let Method::WhiteBox(scheme) = self.method else { unreachable!() };
                let k = self.kinematics.as_ref().ok_or_else(|| Error::InvalidConfig("missing kinematics".into()))?;
                let model = k.with_bodies(whitebox_bodies(theta, scheme)?)?;
                let (h, body) = composite_inertia(&model, q)?;
                Ok(InertiaReport {
                    mass: body.mass,
                    m_hat: None,
                    first_moment: body.first_moment,
                    h_mat: h,
                    factor: None,
                    diagnostics: None,
                })
            }
        }
    }

    pub fn describe(&self) -> String {
        format!("{} with {} parameters", self.method, self.param_count())
    }
}

/// Per-sample constants of a dataset split, in sample order.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub len: usize,
    pub dim: usize,
    /// Targets `[N, n, 1]`.
    pub tau: Tensor,
    /// Joint positions `[N, n_q, 1]`.
    pub q: Tensor,
    pub kin: Option<KinematicBatch>,
    /// Standardized black-box inputs `[N, d, 1]`.
    pub ffnn: Option<Tensor>,
    /// White-box regressor `[N, n, p]`.
    pub regressor: Option<Tensor>,
}

impl PreparedSplit {
    pub fn gather(&self, idx: &[usize]) -> PreparedSplit {
        PreparedSplit {
            len: idx.len(),
            dim: self.dim,
            tau: self.tau.gather(idx),
            q: self.q.gather(idx),
            kin: self.kin.as_ref().map(|k| k.gather(idx)),
            ffnn: self.ffnn.as_ref().map(|t| t.gather(idx)),
            regressor: self.regressor.as_ref().map(|t| t.gather(idx)),
        }
    }
}
