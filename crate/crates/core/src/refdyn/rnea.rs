//! Recursive Newton-Euler inverse dynamics in body coordinates.
//!
//! Spatial vectors here use the `[angular, linear]` ordering and every body
//! quantity is expressed in its own frame.

use alloc::vec;
use alloc::vec::Vec;

use super::{BodyParams, GroundTruthModel, PARAMS_PER_BODY};
use crate::lagrangian::{body_rate_derivative, body_rate_matrix, check_gimbal, rotation, vec3_at, GeneralizedState};
use crate::linalg::{DMat, Mat3, Vec3};
use crate::topology::BASE_DOF;
use crate::Result;

#[derive(Debug, Clone, Copy, Default)]
struct Sv {
    ang: Vec3,
    lin: Vec3,
}

impl Sv {
    fn add(self, o: Sv) -> Sv {
        Sv { ang: self.ang + o.ang, lin: self.lin + o.lin }
    }

    /// Motion cross product `self ×ₘ m`.
    fn crm(self, m: Sv) -> Sv {
        Sv { ang: self.ang.cross(m.ang), lin: self.ang.cross(m.lin) + self.lin.cross(m.ang) }
    }

    /// Force cross product `self ×𝒻 f`.
    fn crf(self, f: Sv) -> Sv {
        Sv { ang: self.ang.cross(f.ang) + self.lin.cross(f.lin), lin: self.ang.cross(f.lin) }
    }
}

/// Rigid transform from a parent frame to a child frame: `e` rotates parent
/// coordinates into child coordinates, `r` is the child origin in the parent.
#[derive(Debug, Clone, Copy)]
struct Xform {
    e: Mat3,
    r: Vec3,
}

impl Xform {
    fn motion(&self, m: Sv) -> Sv {
        Sv { ang: self.e.mul_vec(m.ang), lin: self.e.mul_vec(m.lin - self.r.cross(m.ang)) }
    }

    /// Transpose map taking a child force to the parent.
    fn force_to_parent(&self, f: Sv) -> Sv {
        let et = self.e.transpose();
        let lin = et.mul_vec(f.lin);
        Sv { ang: et.mul_vec(f.ang) + self.r.cross(lin), lin }
    }
}

/// Inertial parameters `[m, h, I_xx, I_xy, I_xz, I_yy, I_yz, I_zz]` applied to a
/// motion vector.
fn inertia_apply(p: &[f64], m: Sv) -> Sv {
    let h = Vec3::new(p[1], p[2], p[3]);
    let i = Mat3([[p[4], p[5], p[6]], [p[5], p[7], p[8]], [p[6], p[8], p[9]]]);
    Sv { ang: i.mul_vec(m.ang) + h.cross(m.lin), lin: m.lin.scale(p[0]) - h.cross(m.ang) }
}

fn body_vector(b: &BodyParams) -> [f64; PARAMS_PER_BODY] {
    super::body_params_to_vector(b)
}

struct Kinematics {
    links: Vec<Xform>,
    axes: Vec<Vec3>,
    v: Vec<Sv>,
    a: Vec<Sv>,
    r: Mat3,
    e: Mat3,
}

fn kinematics(model: &GroundTruthModel, state: &GeneralizedState, gravity: bool) -> Result<Kinematics> {
    crate::error::dim_check(model.dim(), state.dim())?;
    let theta = state.euler();
    check_gimbal(theta)?;
    let r = rotation(theta);
    let e = body_rate_matrix(theta);
    let theta_dot = vec3_at(&state.nu_dot, 3);
    let mut e_dot = Mat3::ZERO;
    for j in 0..3 {
        e_dot = e_dot + body_rate_derivative(theta, j).scale(theta_dot[j]);
    }
    let v_lin = r.transpose().mul_vec(vec3_at(&state.nu_dot, 0));
    let w = e.mul_vec(theta_dot);
    let w_dot = e_dot.mul_vec(theta_dot) + e.mul_vec(vec3_at(&state.nu_ddot, 3));
    let mut a_lin = r.transpose().mul_vec(vec3_at(&state.nu_ddot, 0)) - w.cross(v_lin);
    if gravity {
        a_lin -= r.transpose().mul_vec(model.gravity());
    }
    let n = model.n_q();
    let mut v = Vec::with_capacity(n + 1);
    let mut a = Vec::with_capacity(n + 1);
    v.push(Sv { ang: w, lin: v_lin });
    a.push(Sv { ang: w_dot, lin: a_lin });
    let mut links = Vec::with_capacity(n);
    let mut axes = Vec::with_capacity(n);
    let q = state.q();
    for (j, joint) in model.joints().iter().enumerate() {
        let local = joint.rotation * axis_rotation(joint.axis, q[j]);
        let x = Xform { e: local.transpose(), r: joint.translation };
        let parent = model.topology().joint_parent(j).map_or(0, |p| p + 1);
        let s = Sv { ang: joint.axis, lin: Vec3::ZERO };
        let qd = state.nu_dot[BASE_DOF + j];
        let qdd = state.nu_ddot[BASE_DOF + j];
        let vj = x.motion(v[parent]).add(Sv { ang: s.ang.scale(qd), lin: Vec3::ZERO });
        let aj = x.motion(a[parent]).add(Sv { ang: s.ang.scale(qdd), lin: Vec3::ZERO }).add(vj.crm(Sv {
            ang: s.ang.scale(qd),
            lin: Vec3::ZERO,
        }));
        v.push(vj);
        a.push(aj);
        links.push(x);
        axes.push(joint.axis);
    }
    Ok(Kinematics { links, axes, v, a, r, e })
}

fn axis_rotation(axis: Vec3, angle: f64) -> Mat3 {
    let k = crate::spatial::skew(axis);
    Mat3::IDENTITY + k.scale(crate::math::sin(angle)) + (k * k).scale(1.0 - crate::math::cos(angle))
}

/// Accumulates body forces toward the base and maps the result to generalized
/// forces `[R·f_B, Eᵀ·n_B, τ_q]`.
fn backward(model: &GroundTruthModel, kin: &Kinematics, mut f: Vec<Sv>) -> Vec<f64> {
    let n = model.n_q();
    let mut tau = vec![0.0; BASE_DOF + n];
    for j in (0..n).rev() {
        tau[BASE_DOF + j] = kin.axes[j].dot(f[j + 1].ang);
        let parent = model.topology().joint_parent(j).map_or(0, |p| p + 1);
        let up = kin.links[j].force_to_parent(f[j + 1]);
        f[parent] = f[parent].add(up);
    }
    let lin = kin.r.mul_vec(f[0].lin);
    let ang = kin.e.transpose().mul_vec(f[0].ang);
    tau[0..3].copy_from_slice(&lin.0);
    tau[3..6].copy_from_slice(&ang.0);
    tau
}

fn body_force(p: &[f64], v: Sv, a: Sv) -> Sv {
    inertia_apply(p, a).add(v.crf(inertia_apply(p, v)))
}

fn rnea(model: &GroundTruthModel, state: &GeneralizedState, gravity: bool) -> Result<Vec<f64>> {
    let kin = kinematics(model, state, gravity)?;
    let params: Vec<_> = model.guarded_bodies().iter().map(body_vector).collect();
    let f = (0..params.len()).map(|b| body_force(&params[b], kin.v[b], kin.a[b])).collect();
    Ok(backward(model, &kin, f))
}

/// Generalized forces `τ_ν = H^W ν̈ + c(ν, ν̇) + g(ν)`.
pub fn inverse_dynamics(model: &GroundTruthModel, state: &GeneralizedState) -> Result<Vec<f64>> {
    rnea(model, state, true)
}

/// Regressor `Y` with `τ_ν = Y·π`, where `π` stacks
/// `[m, h, I_xx, I_xy, I_xz, I_yy, I_yz, I_zz]` per body (base first) without
/// the massless guard.
pub fn regressor(model: &GroundTruthModel, state: &GeneralizedState) -> Result<DMat> {
    let kin = kinematics(model, state, true)?;
    let nb = model.n_q() + 1;
    let n = model.dim();
    let mut y = DMat::zeros(n, PARAMS_PER_BODY * nb);
    for b in 0..nb {
        for k in 0..PARAMS_PER_BODY {
            let mut unit = [0.0; PARAMS_PER_BODY];
            unit[k] = 1.0;
            let mut f = vec![Sv::default(); nb];
            f[b] = body_force(&unit, kin.v[b], kin.a[b]);
            let col = backward(model, &kin, f);
            for (i, c) in col.into_iter().enumerate() {
                y[(i, b * PARAMS_PER_BODY + k)] = c;
            }
        }
    }
    Ok(y)
}

/// Inertial, velocity-product and gravity parts of the oracle torque.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub total: Vec<f64>,
    pub inertial: Vec<f64>,
    pub coriolis: Vec<f64>,
    pub gravity: Vec<f64>,
}

pub fn decompose(model: &GroundTruthModel, state: &GeneralizedState) -> Result<Decomposition> {
    let n = state.dim();
    let at_rest = GeneralizedState { nu: state.nu.clone(), nu_dot: vec![0.0; n], nu_ddot: vec![0.0; n] };
    let accel_only = GeneralizedState { nu_ddot: state.nu_ddot.clone(), ..at_rest.clone() };
    let gravity = rnea(model, &at_rest, true)?;
    let inertial = rnea(model, &accel_only, false)?;
    let total = rnea(model, state, true)?;
    let coriolis = (0..n).map(|i| total[i] - inertial[i] - gravity[i]).collect();
    Ok(Decomposition { total, inertial, coriolis, gravity })
}

/// `H^W(ν)` assembled column by column from unit accelerations.
pub(crate) fn world_mass_matrix(model: &GroundTruthModel, nu: &[f64]) -> Result<DMat> {
    let n = model.dim();
    let mut h = DMat::zeros(n, n);
    for i in 0..n {
        let mut acc = vec![0.0; n];
        acc[i] = 1.0;
        let s = GeneralizedState { nu: nu.to_vec(), nu_dot: vec![0.0; n], nu_ddot: acc };
        for (r, v) in rnea(model, &s, false)?.into_iter().enumerate() {
            h[(r, i)] = v;
        }
    }
    Ok(h.symmetrized())
}

/// `ν̈ = H^W⁻¹ (τ − c − g)`.
pub fn forward_dynamics(model: &GroundTruthModel, nu: &[f64], nu_dot: &[f64], tau: &[f64]) -> Result<Vec<f64>> {
    let n = model.dim();
    crate::error::dim_check(n, tau.len())?;
    let bias = rnea(model, &GeneralizedState::new(nu.to_vec(), nu_dot.to_vec(), vec![0.0; n])?, true)?;
    let rhs: Vec<f64> = tau.iter().zip(&bias).map(|(t, b)| t - b).collect();
    world_mass_matrix(model, nu)?.solve_spd(&rhs)
}

/// One classical Runge-Kutta step of the state `(ν, ν̇)` under constant `τ_ν`.
pub fn rk4_step(model: &GroundTruthModel, nu: &[f64], nu_dot: &[f64], tau: &[f64], dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let axpy = |x: &[f64], k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    let k1v = nu_dot.to_vec();
    let k1a = forward_dynamics(model, nu, nu_dot, tau)?;
    let (p2, v2) = (axpy(nu, &k1v, 0.5 * dt), axpy(nu_dot, &k1a, 0.5 * dt));
    let k2a = forward_dynamics(model, &p2, &v2, tau)?;
    let (p3, v3) = (axpy(nu, &v2, 0.5 * dt), axpy(nu_dot, &k2a, 0.5 * dt));
    let k3a = forward_dynamics(model, &p3, &v3, tau)?;
    let (p4, v4) = (axpy(nu, &v3, dt), axpy(nu_dot, &k3a, dt));
    let k4a = forward_dynamics(model, &p4, &v4, tau)?;
    let n = nu.len();
    let mut nu_next = vec![0.0; n];
    let mut vel_next = vec![0.0; n];
    for i in 0..n {
        nu_next[i] = nu[i] + dt / 6.0 * (k1v[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]);
        vel_next[i] = nu_dot[i] + dt / 6.0 * (k1a[i] + 2.0 * k2a[i] + 2.0 * k3a[i] + k4a[i]);
    }
    Ok((nu_next, vel_next))
}

/// `K + P` with `K = ½ ν̇ᵀ H^W ν̇`.
pub fn total_energy(model: &GroundTruthModel, nu: &[f64], nu_dot: &[f64]) -> Result<f64> {
    let h = world_mass_matrix(model, nu)?;
    let k: f64 = 0.5 * nu_dot.iter().zip(h.mul_vec(nu_dot)).map(|(a, b)| a * b).sum::<f64>();
    Ok(k + super::potential_energy_bodies(model, nu)?)
}
