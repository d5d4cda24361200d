//! Forward kinematics and the composite-rigid-body algorithm, generic over the
//! scalar so that dual numbers give exact derivatives for verification.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Mul, Neg, Sub};

use super::{BodyParams, GroundTruthModel};
use crate::lagrangian::GeneralizedState;
use crate::linalg::{DMat, Mat3, SymMat3, Vec3};
use crate::spatial::SpatialInertia;
use crate::topology::BASE_DOF;
use crate::Result;

pub trait Scalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> {
    fn cst(x: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn value(self) -> f64;
}

impl Scalar for f64 {
    fn cst(x: f64) -> f64 {
        x
    }
    fn sin(self) -> f64 {
        crate::math::sin(self)
    }
    fn cos(self) -> f64 {
        crate::math::cos(self)
    }
    fn value(self) -> f64 {
        self
    }
}

/// First-order dual number `v + d·ε`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn new(v: f64, d: f64) -> Dual {
        Dual { v, d }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, d: self.d + o.d }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { v: self.v - o.v, d: self.d - o.d }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual { v: self.v * o.v, d: self.d * o.v + self.v * o.d }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual { v: -self.v, d: -self.d }
    }
}

impl Scalar for Dual {
    fn cst(x: f64) -> Dual {
        Dual { v: x, d: 0.0 }
    }
    fn sin(self) -> Dual {
        Dual { v: crate::math::sin(self.v), d: self.d * crate::math::cos(self.v) }
    }
    fn cos(self) -> Dual {
        Dual { v: crate::math::cos(self.v), d: -self.d * crate::math::sin(self.v) }
    }
    fn value(self) -> f64 {
        self.v
    }
}

type V3<S> = [S; 3];
type M3<S> = [[S; 3]; 3];
type M6<S> = [[S; 6]; 6];

fn zero<S: Scalar>() -> S {
    S::cst(0.0)
}

fn lift_v<S: Scalar>(v: Vec3) -> V3<S> {
    v.0.map(S::cst)
}

fn lift_m<S: Scalar>(m: &Mat3) -> M3<S> {
    m.0.map(|r| r.map(S::cst))
}

fn mm<S: Scalar>(a: &M3<S>, b: &M3<S>) -> M3<S> {
    let mut out = [[zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn mv<S: Scalar>(a: &M3<S>, v: &V3<S>) -> V3<S> {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

fn mt<S: Scalar>(a: &M3<S>) -> M3<S> {
    [0, 1, 2].map(|i| [a[0][i], a[1][i], a[2][i]])
}

fn vadd<S: Scalar>(a: &V3<S>, b: &V3<S>) -> V3<S> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn vscale<S: Scalar>(a: &V3<S>, k: S) -> V3<S> {
    [a[0] * k, a[1] * k, a[2] * k]
}

fn cross<S: Scalar>(a: &V3<S>, b: &V3<S>) -> V3<S> {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn skew3<S: Scalar>(v: &V3<S>) -> M3<S> {
    let z = zero();
    [[z, -v[2], v[1]], [v[2], z, -v[0]], [-v[1], v[0], z]]
}

/// Rotation by `angle` about the constant unit `axis` (Rodrigues).
fn axis_rotation<S: Scalar>(axis: Vec3, angle: S) -> M3<S> {
    let k = lift_m::<S>(&crate::spatial::skew(axis));
    let k2 = mm(&k, &k);
    let (s, c) = (angle.sin(), S::cst(1.0) - angle.cos());
    let mut out = [[zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { S::cst(1.0) } else { zero() };
            out[i][j] = id + s * k[i][j] + c * k2[i][j];
        }
    }
    out
}

struct Pose<S> {
    rot: M3<S>,
    pos: V3<S>,
}

/// Pose of every joint body in the base frame.
fn joint_poses<S: Scalar>(model: &GroundTruthModel, q: &[S]) -> Vec<Pose<S>> {
    let topo = model.topology();
    let mut poses: Vec<Pose<S>> = Vec::with_capacity(q.len());
    for (j, joint) in model.joints().iter().enumerate() {
        let local = mm(&lift_m(&joint.rotation), &axis_rotation(joint.axis, q[j]));
        let t = lift_v::<S>(joint.translation);
        let pose = match topo.joint_parent(j) {
            None => Pose { rot: local, pos: t },
            Some(p) => {
                let parent = &poses[p];
                Pose { rot: mm(&parent.rot, &local), pos: vadd(&parent.pos, &mv(&parent.rot, &t)) }
            }
        };
        poses.push(pose);
    }
    poses
}

/// Spatial inertia about the base origin in base coordinates, `[linear, angular]`
/// ordering, together with the first moment.
fn inertia_in_base<S: Scalar>(body: &BodyParams, pose: Option<&Pose<S>>) -> (M6<S>, V3<S>) {
    let m = S::cst(body.mass);
    let (c, i_c) = match pose {
        None => (lift_v::<S>(body.com), lift_m::<S>(body.com_inertia().mat())),
        Some(p) => {
            let c = vadd(&p.pos, &mv(&p.rot, &lift_v(body.com)));
            (c, mm(&mm(&p.rot, &lift_m(body.com_inertia().mat())), &mt(&p.rot)))
        }
    };
    let h = vscale(&c, m);
    let sc = skew3(&c);
    let sh = skew3(&h);
    let par = mm(&mt(&sc), &sc);
    let mut out = [[zero(); 6]; 6];
    for i in 0..3 {
        out[i][i] = m;
        for j in 0..3 {
            out[i][3 + j] = sh[j][i];
            out[3 + i][j] = sh[i][j];
            out[3 + i][3 + j] = i_c[i][j] + m * par[i][j];
        }
    }
    (out, h)
}

fn m6_add<S: Scalar>(a: &mut M6<S>, b: &M6<S>) {
    for i in 0..6 {
        for j in 0..6 {
            a[i][j] = a[i][j] + b[i][j];
        }
    }
}

fn m6_vec<S: Scalar>(a: &M6<S>, v: &[S; 6]) -> [S; 6] {
    [0, 1, 2, 3, 4, 5].map(|i| (0..6).fold(zero(), |acc, k| acc + a[i][k] * v[k]))
}

/// Returns `H` (row-major), the composite first moment and total mass.
fn crba<S: Scalar>(model: &GroundTruthModel, q: &[S]) -> (Vec<S>, V3<S>, S) {
    let topo = model.topology();
    let bodies = model.guarded_bodies();
    let n = topo.dim();
    let poses = joint_poses(model, q);
    let (mut base_c, mut h_total) = inertia_in_base::<S>(&bodies[0], None);
    let mut comp: Vec<M6<S>> = Vec::with_capacity(poses.len());
    for (j, pose) in poses.iter().enumerate() {
        let (m6, h) = inertia_in_base(&bodies[j + 1], Some(pose));
        h_total = vadd(&h_total, &h);
        comp.push(m6);
    }
    for j in (0..poses.len()).rev() {
        let cj = comp[j];
        match topo.joint_parent(j) {
            Some(p) => m6_add(&mut comp[p], &cj),
            None => m6_add(&mut base_c, &cj),
        }
    }
    let subspace: Vec<[S; 6]> = poses
        .iter()
        .zip(model.joints())
        .map(|(p, joint)| {
            let a = mv(&p.rot, &lift_v(joint.axis));
            let l = cross(&p.pos, &a);
            [l[0], l[1], l[2], a[0], a[1], a[2]]
        })
        .collect();
    let mut h = vec![zero::<S>(); n * n];
    for i in 0..6 {
        for k in 0..6 {
            h[i * n + k] = base_c[i][k];
        }
    }
    for j in 0..poses.len() {
        let f = m6_vec(&comp[j], &subspace[j]);
        for k in 0..6 {
            h[k * n + BASE_DOF + j] = f[k];
            h[(BASE_DOF + j) * n + k] = f[k];
        }
        for i in topo.joint_chain(j) {
            let v = (0..6).fold(zero(), |acc, k| acc + subspace[i][k] * f[k]);
            h[(BASE_DOF + i) * n + BASE_DOF + j] = v;
            h[(BASE_DOF + j) * n + BASE_DOF + i] = v;
        }
    }
    let mass = base_c[0][0];
    (h, h_total, mass)
}

/// Whole-body inertia matrix in base coordinates (ordering `[v_B, ω_B, q̇]`) and
/// the composite spatial inertia of its top-left block.
pub fn composite_inertia(model: &GroundTruthModel, q: &[f64]) -> Result<(DMat, SpatialInertia)> {
    crate::error::dim_check(model.n_q(), q.len())?;
    let n = model.dim();
    let (h, first_moment, mass) = crba::<f64>(model, q);
    let h = DMat::from_vec(n, n, h)?;
    let rot_inertia = SymMat3::new(h.block3(3, 3));
    Ok((h, SpatialInertia { mass, first_moment: Vec3(first_moment), rot_inertia }))
}

/// `∂H/∂q_i` and `∂h/∂q_i`, exact through dual numbers.
pub fn composite_inertia_derivative(model: &GroundTruthModel, q: &[f64], i: usize) -> Result<(DMat, Vec3)> {
    crate::error::dim_check(model.n_q(), q.len())?;
    let n = model.dim();
    let qd: Vec<Dual> = q.iter().enumerate().map(|(j, &v)| Dual::new(v, if j == i { 1.0 } else { 0.0 })).collect();
    let (h, first_moment, _) = crba::<Dual>(model, &qd);
    let dh = DMat::from_vec(n, n, h.iter().map(|x| x.d).collect())?;
    Ok((dh, Vec3(first_moment.map(|x| x.d))))
}

fn world_rotation<S: Scalar>(theta: &V3<S>) -> M3<S> {
    let rz = axis_rotation(Vec3::unit(2), theta[2]);
    let ry = axis_rotation(Vec3::unit(1), theta[1]);
    let rx = axis_rotation(Vec3::unit(0), theta[0]);
    mm(&mm(&rz, &ry), &rx)
}

/// World position and orientation of every body's COM frame (base first).
fn world_bodies<S: Scalar>(model: &GroundTruthModel, nu: &[S]) -> Vec<(V3<S>, M3<S>)> {
    let r = [nu[0], nu[1], nu[2]];
    let rot = world_rotation(&[nu[3], nu[4], nu[5]]);
    let bodies = model.guarded_bodies();
    let mut out = Vec::with_capacity(bodies.len());
    out.push((vadd(&r, &mv(&rot, &lift_v(bodies[0].com))), rot));
    for (j, pose) in joint_poses(model, &nu[BASE_DOF..]).iter().enumerate() {
        let c = vadd(&pose.pos, &mv(&pose.rot, &lift_v(bodies[j + 1].com)));
        out.push((vadd(&r, &mv(&rot, &c)), mm(&rot, &pose.rot)));
    }
    out
}

/// World COM position of every body, base first.
pub fn body_com_positions(model: &GroundTruthModel, nu: &[f64]) -> Result<Vec<Vec3>> {
    crate::error::dim_check(model.dim(), nu.len())?;
    Ok(world_bodies::<f64>(model, nu).into_iter().map(|(c, _)| Vec3(c)).collect())
}

/// `Σ_i m_i·(−g)ᵀ r_i^W` summed body by body.
pub fn potential_energy_bodies(model: &GroundTruthModel, nu: &[f64]) -> Result<f64> {
    let g = model.gravity();
    let positions = body_com_positions(model, nu)?;
    Ok(model.guarded_bodies().iter().zip(positions).map(|(b, c)| -b.mass * g.dot(c)).sum())
}

/// Kinetic energy summed over bodies, with velocities obtained by propagating
/// time derivatives through the world-frame kinematics.
pub fn kinetic_energy_bodies(model: &GroundTruthModel, state: &GeneralizedState) -> Result<f64> {
    crate::error::dim_check(model.dim(), state.dim())?;
    let nu: Vec<Dual> = state.nu.iter().zip(&state.nu_dot).map(|(&v, &d)| Dual::new(v, d)).collect();
    let mut k = 0.0;
    for (body, (c, rot)) in model.guarded_bodies().iter().zip(world_bodies(model, &nu)) {
        let v = Vec3(c.map(|x| x.d));
        let r = Mat3(rot.map(|row| row.map(|x| x.v)));
        let r_dot = Mat3(rot.map(|row| row.map(|x| x.d)));
        let w = crate::spatial::vee(&(r_dot * r.transpose()));
        let i_world = r * *body.com_inertia().mat() * r.transpose();
        k += 0.5 * body.mass * v.dot(v) + 0.5 * w.dot(i_world.mul_vec(w));
    }
    Ok(k)
}
