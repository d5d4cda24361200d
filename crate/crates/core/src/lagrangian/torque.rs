use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::coords::{
    body_rate_matrix, check_gimbal, rotation, rotation_derivative, transform_derivative, vec3_at, CoordinateTransforms,
    GeneralizedState,
};
use crate::autodiff::{Jet, LinearMap, Tape, Tensor, Var};
use crate::linalg::{DMat, Vec3};
use crate::refdyn::{composite_inertia, composite_inertia_derivative, GroundTruthModel};
use crate::topology::BASE_DOF;
use crate::{Error, Result};

/// Composite inertia terms at one joint configuration together with their
/// exact derivatives along each joint.
#[derive(Debug, Clone, PartialEq)]
pub struct InertiaSample {
    pub mass: f64,
    pub first_moment: Vec3,
    /// Base-frame inertia matrix ordered `[v_B, ω_B, q̇]`.
    pub h_mat: DMat,
    pub d_mass: Vec<f64>,
    pub d_first_moment: Vec<Vec3>,
    pub d_h_mat: Vec<DMat>,
}

/// Anything that yields mass, first moment and inertia matrix as functions of `q`.
pub trait InertiaModel {
    fn inertia(&self, q: &[f64]) -> Result<InertiaSample>;
}

impl InertiaModel for GroundTruthModel {
    fn inertia(&self, q: &[f64]) -> Result<InertiaSample> {
        let (h_mat, body) = composite_inertia(self, q)?;
        let mut d_h_mat = Vec::with_capacity(q.len());
        let mut d_first_moment = Vec::with_capacity(q.len());
        for i in 0..q.len() {
            let (dh, dc) = composite_inertia_derivative(self, q, i)?;
            d_h_mat.push(dh);
            d_first_moment.push(dc);
        }
        Ok(InertiaSample {
            mass: body.mass,
            first_moment: body.first_moment,
            h_mat,
            d_mass: vec![0.0; q.len()],
            d_first_moment,
            d_h_mat,
        })
    }
}

impl<F: Fn(&[f64]) -> Result<InertiaSample>> InertiaModel for F {
    fn inertia(&self, q: &[f64]) -> Result<InertiaSample> {
        self(q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TorqueDecomposition {
    pub inertial: Vec<f64>,
    pub coriolis: Vec<f64>,
    pub gravity: Vec<f64>,
}

impl TorqueDecomposition {
    pub fn total(&self) -> Vec<f64> {
        self.inertial.iter().zip(&self.coriolis).zip(&self.gravity).map(|((a, b), c)| a + b + c).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(acc: &mut [f64], k: f64, x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += k * b);
}

/// `∂P/∂ν` for `P = −gᵀ(m·r + R·h)` with `m` and `h` depending on `q`.
pub fn potential_gradient(sample: &InertiaSample, nu: &[f64], gravity: Vec3) -> Vec<f64> {
    let r = vec3_at(nu, 0);
    let theta = vec3_at(nu, 3);
    let rot = rotation(theta);
    let mut g = vec![0.0; nu.len()];
    g[0..3].copy_from_slice(&gravity.scale(-sample.mass).0);
    for j in 0..3 {
        g[3 + j] = -gravity.dot(rotation_derivative(theta, j).mul_vec(sample.first_moment));
    }
    let gr = gravity.dot(r);
    for (i, out) in g[BASE_DOF..].iter_mut().enumerate() {
        *out = -gravity.dot(rot.mul_vec(sample.d_first_moment[i])) - gr * sample.d_mass[i];
    }
    g
}

/// Euler-Lagrange torque split into `H^W ν̈`, the velocity-dependent part and `∂P/∂ν`.
pub fn decompose_torque(model: &impl InertiaModel, state: &GeneralizedState, gravity: Vec3) -> Result<TorqueDecomposition> {
    state.check_gimbal()?;
    let n = state.dim();
    let n_q = state.n_q();
    let theta = state.euler();
    let sample = model.inertia(state.q())?;
    crate::error::dim_check(n, sample.h_mat.rows())?;
    crate::error::dim_check(n_q, sample.d_h_mat.len())?;
    let t = CoordinateTransforms::new(theta, n_q)?.t_h;
    let tt = t.transpose();
    let dts: Vec<DMat> = (0..3).map(|j| transform_derivative(theta, j, n_q)).collect();
    let mut t_dot = DMat::zeros(n, n);
    for (j, dt) in dts.iter().enumerate() {
        t_dot = t_dot.add(&dt.scale(state.nu_dot[3 + j]));
    }
    let h = &sample.h_mat;
    let u = t.mul_vec(&state.nu_dot);
    let w = h.mul_vec(&u);

    let inertial = tt.mul_vec(&h.mul_vec(&t.mul_vec(&state.nu_ddot)));

    let mut h_dot_u = vec![0.0; n];
    for (i, dh) in sample.d_h_mat.iter().enumerate() {
        axpy(&mut h_dot_u, state.nu_dot[BASE_DOF + i], &dh.mul_vec(&u));
    }
    let mut inner = h.mul_vec(&t_dot.mul_vec(&state.nu_dot));
    axpy(&mut inner, 1.0, &h_dot_u);
    let mut coriolis = tt.mul_vec(&inner);
    axpy(&mut coriolis, 1.0, &t_dot.tr_mul_vec(&w));
    for (j, dt) in dts.iter().enumerate() {
        coriolis[3 + j] -= dot(&dt.mul_vec(&state.nu_dot), &w);
    }
    for (i, dh) in sample.d_h_mat.iter().enumerate() {
        coriolis[BASE_DOF + i] -= 0.5 * dot(&u, &dh.mul_vec(&u));
    }

    let gravity = potential_gradient(&sample, &state.nu, gravity);
    Ok(TorqueDecomposition { inertial, coriolis, gravity })
}

/// Generalized torque `τ_ν` from the Euler-Lagrange equations in `ν`.
pub fn euler_lagrange_torque(model: &impl InertiaModel, state: &GeneralizedState, gravity: Vec3) -> Result<Vec<f64>> {
    Ok(decompose_torque(model, state, gravity)?.total())
}

/// Inputs of a learned potential: `[r, cos Θ, sin Θ, cos q, sin q]`.
pub fn potential_features(nu: &[f64]) -> Vec<f64> {
    let mut f = nu[0..3].to_vec();
    let angles = &nu[3..];
    f.extend(angles.iter().map(|a| crate::math::cos(*a)));
    f.extend(angles.iter().map(|a| crate::math::sin(*a)));
    reorder_trig(f, angles.len())
}

// cos/sin grouped as [cos Θ, sin Θ, cos q, sin q]
fn reorder_trig(f: Vec<f64>, k: usize) -> Vec<f64> {
    let (cos, sin) = f[3..].split_at(k);
    let mut out = f[0..3].to_vec();
    out.extend_from_slice(&cos[..3]);
    out.extend_from_slice(&sin[..3]);
    out.extend_from_slice(&cos[3..]);
    out.extend_from_slice(&sin[3..]);
    out
}

pub fn potential_feature_count(n_q: usize) -> usize {
    3 + 2 * (3 + n_q)
}

/// `∂ features / ∂ν`, stored transposed as `n × n_features` so that
/// `∂P/∂ν = Jᵀ ∇_f P` becomes a single product.
pub fn potential_feature_jacobian_t(nu: &[f64]) -> DMat {
    let n = nu.len();
    let n_q = n - BASE_DOF;
    let mut j = DMat::zeros(n, potential_feature_count(n_q));
    for i in 0..3 {
        j[(i, i)] = 1.0;
    }
    let col = |a: usize| -> (usize, usize) {
        if a < 3 {
            (3 + a, 6 + a)
        } else {
            (9 + a - 3, 9 + n_q + a - 3)
        }
    };
    for a in 0..3 + n_q {
        let x = nu[3 + a];
        let (c, s) = col(a);
        j[(3 + a, c)] = -crate::math::sin(x);
        j[(3 + a, s)] = crate::math::cos(x);
    }
    j
}

/// Per-sample constants of the tape torque pipeline for a fixed batch of states.
#[derive(Debug, Clone)]
pub struct KinematicBatch {
    pub batch: usize,
    pub dim: usize,
    /// `T_H ν̇`, `T_H ν̈`, `Ṫ_H ν̇`, each `[B, n, 1]`.
    pub u: Tensor,
    pub a: Tensor,
    pub b: Tensor,
    /// `T_Hᵀ` and `Ṫ_Hᵀ`, `[B, n, n]`.
    pub t_t: Tensor,
    pub t_dot_t: Tensor,
    /// Rows `(∂_j T_H ν̇)ᵀ`, `[B, 3, n]`.
    pub c_theta_t: Tensor,
    /// Rows `(∂_j Rᵀ g)ᵀ`, `[B, 3, 3]`.
    pub g_theta: Tensor,
    /// `(Rᵀ g)ᵀ`, `[B, 1, 3]`.
    pub rt_g: Tensor,
    /// `gᵀ r`, `[B, 1, 1]`.
    pub g_r: Tensor,
    /// `q̇_i` per joint, `[B, 1, 1]` each.
    pub q_dot: Vec<Tensor>,
    /// Learned-potential features `[B, f, 1]` and the transposed feature Jacobian `[B, n, f]`.
    pub features: Tensor,
    pub feature_jac_t: Tensor,
    pub gravity: Vec3,
}

impl KinematicBatch {
    pub fn new(states: &[GeneralizedState], gravity: Vec3) -> Result<KinematicBatch> {
        let first = states.first().ok_or_else(|| Error::InvalidData("empty batch".into()))?;
        let n = first.dim();
        let n_q = first.n_q();
        let nf = potential_feature_count(n_q);
        let bsz = states.len();
        let mut k = KinematicBatch {
            batch: bsz,
            dim: n,
            u: Tensor::zeros(bsz, n, 1),
            a: Tensor::zeros(bsz, n, 1),
            b: Tensor::zeros(bsz, n, 1),
            t_t: Tensor::zeros(bsz, n, n),
            t_dot_t: Tensor::zeros(bsz, n, n),
            c_theta_t: Tensor::zeros(bsz, 3, n),
            g_theta: Tensor::zeros(bsz, 3, 3),
            rt_g: Tensor::zeros(bsz, 1, 3),
            g_r: Tensor::zeros(bsz, 1, 1),
            q_dot: vec![Tensor::zeros(bsz, 1, 1); n_q],
            features: Tensor::zeros(bsz, nf, 1),
            feature_jac_t: Tensor::zeros(bsz, n, nf),
            gravity,
        };
        let mut data: [Vec<f64>; 11] = Default::default();
        for s in states {
            crate::error::dim_check(n, s.dim())?;
            let theta = s.euler();
            check_gimbal(theta)?;
            let t = super::coords::block_transform(&rotation(theta).transpose(), &body_rate_matrix(theta), n_q);
            let dts: Vec<DMat> = (0..3).map(|j| transform_derivative(theta, j, n_q)).collect();
            let mut t_dot = DMat::zeros(n, n);
            for (j, dt) in dts.iter().enumerate() {
                t_dot = t_dot.add(&dt.scale(s.nu_dot[3 + j]));
            }
            data[0].extend(t.mul_vec(&s.nu_dot));
            data[1].extend(t.mul_vec(&s.nu_ddot));
            data[2].extend(t_dot.mul_vec(&s.nu_dot));
            data[3].extend(t.transpose().into_vec());
            data[4].extend(t_dot.transpose().into_vec());
            for dt in &dts {
                data[5].extend(dt.mul_vec(&s.nu_dot));
            }
            for j in 0..3 {
                data[6].extend(rotation_derivative(theta, j).transpose().mul_vec(gravity).0);
            }
            data[7].extend(rotation(theta).transpose().mul_vec(gravity).0);
            data[8].push(gravity.dot(s.base_position()));
            data[9].extend(potential_features(&s.nu));
            data[10].extend(potential_feature_jacobian_t(&s.nu).into_vec());
        }
        let [u, a, b, t_t, t_dot_t, c, g_theta, rt_g, g_r, feat, jac] = data;
        k.u = Tensor::new(bsz, n, 1, u);
        k.a = Tensor::new(bsz, n, 1, a);
        k.b = Tensor::new(bsz, n, 1, b);
        k.t_t = Tensor::new(bsz, n, n, t_t);
        k.t_dot_t = Tensor::new(bsz, n, n, t_dot_t);
        k.c_theta_t = Tensor::new(bsz, 3, n, c);
        k.g_theta = Tensor::new(bsz, 3, 3, g_theta);
        k.rt_g = Tensor::new(bsz, 1, 3, rt_g);
        k.g_r = Tensor::new(bsz, 1, 1, g_r);
        k.features = Tensor::new(bsz, nf, 1, feat);
        k.feature_jac_t = Tensor::new(bsz, n, nf, jac);
        for (i, qd) in k.q_dot.iter_mut().enumerate() {
            *qd = Tensor::new(bsz, 1, 1, states.iter().map(|s| s.nu_dot[BASE_DOF + i]).collect());
        }
        Ok(k)
    }

    pub fn n_q(&self) -> usize {
        self.dim - BASE_DOF
    }

    /// The samples `idx` in order.
    pub fn gather(&self, idx: &[usize]) -> KinematicBatch {
        KinematicBatch {
            batch: idx.len(),
            dim: self.dim,
            u: self.u.gather(idx),
            a: self.a.gather(idx),
            b: self.b.gather(idx),
            t_t: self.t_t.gather(idx),
            t_dot_t: self.t_dot_t.gather(idx),
            c_theta_t: self.c_theta_t.gather(idx),
            g_theta: self.g_theta.gather(idx),
            rt_g: self.rt_g.gather(idx),
            g_r: self.g_r.gather(idx),
            q_dot: self.q_dot.iter().map(|t| t.gather(idx)).collect(),
            features: self.features.gather(idx),
            feature_jac_t: self.feature_jac_t.gather(idx),
            gravity: self.gravity,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> KinematicVars {
        KinematicVars {
            dim: self.dim,
            u: tape.constant(self.u.clone()),
            a: tape.constant(self.a.clone()),
            b: tape.constant(self.b.clone()),
            t_t: tape.constant(self.t_t.clone()),
            t_dot_t: tape.constant(self.t_dot_t.clone()),
            c_theta_t: tape.constant(self.c_theta_t.clone()),
            g_theta: tape.constant(self.g_theta.clone()),
            rt_g: tape.constant(self.rt_g.clone()),
            g_r: tape.constant(self.g_r.clone()),
            q_dot: self.q_dot.iter().map(|t| tape.constant(t.clone())).collect(),
            features: tape.constant(self.features.clone()),
            feature_jac_t: tape.constant(self.feature_jac_t.clone()),
            gravity: tape.constant(Tensor::new(1, 3, 1, self.gravity.0.to_vec())),
            rows: Arc::new(RowMaps::new(self.dim)),
        }
    }
}

/// Embeddings into `[n, 1]` columns.
#[derive(Debug)]
struct RowMaps {
    linear: Arc<LinearMap>,
    angular: Arc<LinearMap>,
    joints: Vec<Arc<LinearMap>>,
}

impl RowMaps {
    fn new(n: usize) -> RowMaps {
        RowMaps {
            linear: Arc::new(LinearMap::embed((3, 1), (n, 1), (0, 0))),
            angular: Arc::new(LinearMap::embed((3, 1), (n, 1), (3, 0))),
            joints: (BASE_DOF..n).map(|i| Arc::new(LinearMap::embed((1, 1), (n, 1), (i, 0)))).collect(),
        }
    }
}

/// Tape handles of a [`KinematicBatch`].
#[derive(Debug, Clone)]
pub struct KinematicVars {
    dim: usize,
    pub u: Var,
    pub a: Var,
    pub b: Var,
    pub t_t: Var,
    pub t_dot_t: Var,
    pub c_theta_t: Var,
    pub g_theta: Var,
    pub rt_g: Var,
    pub g_r: Var,
    pub q_dot: Vec<Var>,
    pub features: Var,
    pub feature_jac_t: Var,
    pub gravity: Var,
    rows: Arc<RowMaps>,
}

/// Torque components on the tape, each `[B, n, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct TorqueVars {
    pub inertial: Var,
    pub coriolis: Var,
    pub gravity: Var,
    pub total: Var,
}

impl KinematicVars {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Inertial and velocity-dependent torques for `H = FᵀF` in base
    /// coordinates, where `F` carries tangents along each joint.
    pub fn inertial_coriolis(&self, tape: &mut Tape, f: &Jet) -> (Var, Var) {
        let fv = f.val;
        let ft = tape.transpose(fv);
        let hm = |tape: &mut Tape, x: Var| {
            let y = tape.matmul(fv, x);
            tape.matmul(ft, y)
        };
        let ha = hm(tape, self.a);
        let inertial = tape.matmul(self.t_t, ha);

        let fu = tape.matmul(fv, self.u);
        let w = tape.matmul(ft, fu);
        let mut inner = hm(tape, self.b);
        let mut half_s: Vec<Option<Var>> = vec![None; f.dims()];
        let fut = tape.transpose(fu);
        for (i, tan) in f.tan.iter().enumerate() {
            let Some(fi) = *tan else { continue };
            // Ḣu gets q̇_i (F_iᵀ F u + Fᵀ F_i u); the partial ½ uᵀ∂_iH u is (F_i u)ᵀ(F u)
            let fiu = tape.matmul(fi, self.u);
            let fit = tape.transpose(fi);
            let x = tape.matmul(fit, fu);
            let y = tape.matmul(ft, fiu);
            let xy = tape.add(x, y);
            let scaled = tape.mul(xy, self.q_dot[i]);
            inner = tape.add(inner, scaled);
            half_s[i] = Some(tape.matmul(fut, fiu));
        }
        let mut coriolis = tape.matmul(self.t_t, inner);
        let tw = tape.matmul(self.t_dot_t, w);
        coriolis = tape.add(coriolis, tw);
        let cw = tape.matmul(self.c_theta_t, w);
        let cw = tape.linear(cw, &self.rows.angular);
        coriolis = tape.sub(coriolis, cw);
        for (i, s) in half_s.into_iter().enumerate() {
            if let Some(s) = s {
                let e = tape.linear(s, &self.rows.joints[i]);
                coriolis = tape.sub(coriolis, e);
            }
        }
        (inertial, coriolis)
    }

    /// `∂P/∂ν` for `P = −gᵀ(m·r + R·h)`; `mass` is `[B|1, 1, 1]`, `h` is `[B, 3, 1]`.
    pub fn composite_gravity(&self, tape: &mut Tape, mass: &Jet, h: &Jet) -> Var {
        let mg = tape.mul(mass.val, self.gravity);
        let lin = tape.scale(mg, -1.0);
        let mut g = tape.linear(lin, &self.rows.linear);
        let gh = tape.matmul(self.g_theta, h.val);
        let gh = tape.scale(gh, -1.0);
        let ang = tape.linear(gh, &self.rows.angular);
        g = tape.add(g, ang);
        for i in 0..self.dim - BASE_DOF {
            let mut term: Option<Var> = None;
            if let Some(dh) = h.tan[i] {
                term = Some(tape.matmul(self.rt_g, dh));
            }
            if let Some(dm) = mass.tan[i] {
                let x = tape.mul(self.g_r, dm);
                term = Some(match term {
                    Some(t) => tape.add(t, x),
                    None => x,
                });
            }
            if let Some(t) = term {
                let e = tape.linear(t, &self.rows.joints[i]);
                g = tape.sub(g, e);
            }
        }
        g
    }

    /// `∂P/∂ν` from the gradient of a learned potential with respect to its features.
    pub fn feature_gravity(&self, tape: &mut Tape, feature_grad: Var) -> Var {
        tape.matmul(self.feature_jac_t, feature_grad)
    }

    pub fn combine(&self, tape: &mut Tape, inertial: Var, coriolis: Var, gravity: Var) -> TorqueVars {
        let ic = tape.add(inertial, coriolis);
        let total = tape.add(ic, gravity);
        TorqueVars { inertial, coriolis, gravity, total }
    }
}

/// Mass `Tr(H_lin)/3` and first moment `vee(½(B − Bᵀ))` read from the base
/// columns of a factor `F` with `H = FᵀF`.
#[derive(Debug, Clone)]
pub struct BaseMomentMaps {
    base_cols: Arc<LinearMap>,
    trace: Arc<LinearMap>,
    vee: Arc<LinearMap>,
}

impl BaseMomentMaps {
    pub fn new(n: usize) -> BaseMomentMaps {
        let mut trace = LinearMap::new((6, 6), (1, 1));
        for i in 0..3 {
            trace.push((0, 0), (i, i), 1.0 / 3.0);
        }
        // h = vee(½(B − Bᵀ)) with B = H[3:6, 0:3]
        let mut vee = LinearMap::new((6, 6), (3, 1));
        for (k, (i, j)) in [(2, 1), (0, 2), (1, 0)].into_iter().enumerate() {
            vee.push((k, 0), (3 + i, j), 0.5);
            vee.push((k, 0), (3 + j, i), -0.5);
        }
        BaseMomentMaps {
            base_cols: Arc::new(LinearMap::block((n, n), (0, 0), (n, 6))),
            trace: Arc::new(trace),
            vee: Arc::new(vee),
        }
    }

    pub fn apply(&self, tape: &mut Tape, f: &Jet) -> (Jet, Jet) {
        let f6 = tape.j_linear(f, &self.base_cols);
        let f6t = tape.j_transpose(&f6);
        let top = tape.j_matmul(&f6t, &f6);
        (tape.j_linear(&top, &self.trace), tape.j_linear(&top, &self.vee))
    }
}

#[cfg(test)]
mod tests;
