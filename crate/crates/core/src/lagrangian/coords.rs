use alloc::vec::Vec;

use crate::linalg::{DMat, Mat3, Vec3};
use crate::math::{cos, sin};
use crate::topology::BASE_DOF;
use crate::{Error, Result};

/// Gravitational acceleration in the world frame (m/s²).
pub const GRAVITY: Vec3 = Vec3::new(0.0, 0.0, -9.81);

/// Smallest admissible `|cos(pitch)|`.
pub const GIMBAL_GUARD: f64 = 0.05;

/// Generalized position, velocity and acceleration `ν = [r_U^W, Θ, q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedState {
    pub nu: Vec<f64>,
    pub nu_dot: Vec<f64>,
    pub nu_ddot: Vec<f64>,
}

impl GeneralizedState {
    pub fn new(nu: Vec<f64>, nu_dot: Vec<f64>, nu_ddot: Vec<f64>) -> Result<GeneralizedState> {
        if nu.len() < BASE_DOF + 1 {
            return Err(Error::DimensionMismatch { expected: BASE_DOF + 1, got: nu.len() });
        }
        crate::error::dim_check(nu.len(), nu_dot.len())?;
        crate::error::dim_check(nu.len(), nu_ddot.len())?;
        Ok(GeneralizedState { nu, nu_dot, nu_ddot })
    }

    pub fn dim(&self) -> usize {
        self.nu.len()
    }

    pub fn n_q(&self) -> usize {
        self.nu.len() - BASE_DOF
    }

    pub fn base_position(&self) -> Vec3 {
        vec3_at(&self.nu, 0)
    }

    pub fn euler(&self) -> Vec3 {
        vec3_at(&self.nu, 3)
    }

    pub fn q(&self) -> &[f64] {
        &self.nu[BASE_DOF..]
    }

    pub fn q_dot(&self) -> &[f64] {
        &self.nu_dot[BASE_DOF..]
    }

    pub fn check_gimbal(&self) -> Result<()> {
        check_gimbal(self.euler())
    }
}

pub(crate) fn vec3_at(v: &[f64], at: usize) -> Vec3 {
    Vec3::new(v[at], v[at + 1], v[at + 2])
}

pub fn check_gimbal(theta: Vec3) -> Result<()> {
    let c = cos(theta[1]).abs();
    if c < GIMBAL_GUARD {
        Err(Error::GimbalLock(c))
    } else {
        Ok(())
    }
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = (sin(a), cos(a));
    Mat3([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = (sin(a), cos(a));
    Mat3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = (sin(a), cos(a));
    Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
}

/// Base-to-world rotation.
pub fn rotation(theta: Vec3) -> Mat3 {
    rot_z(theta[2]) * rot_y(theta[1]) * rot_x(theta[0])
}

/// `∂R/∂Θ_j`.
pub fn rotation_derivative(theta: Vec3, j: usize) -> Mat3 {
    let e = crate::spatial::skew(Vec3::unit(j));
    match j {
        0 => rotation(theta) * e,
        1 => rot_z(theta[2]) * rot_y(theta[1]) * e * rot_x(theta[0]),
        _ => e * rotation(theta),
    }
}

/// Map from Euler rates to body angular velocity, `ω = E(Θ)·Θ̇`; the inverse
/// of [`euler_rate_matrix`]. Defined everywhere.
pub fn body_rate_matrix(theta: Vec3) -> Mat3 {
    let (sr, cr) = (sin(theta[0]), cos(theta[0]));
    let (sp, cp) = (sin(theta[1]), cos(theta[1]));
    Mat3([[1.0, 0.0, -sp], [0.0, cr, sr * cp], [0.0, -sr, cr * cp]])
}

/// `∂E/∂Θ_j`.
pub fn body_rate_derivative(theta: Vec3, j: usize) -> Mat3 {
    let (sr, cr) = (sin(theta[0]), cos(theta[0]));
    let (sp, cp) = (sin(theta[1]), cos(theta[1]));
    match j {
        0 => Mat3([[0.0, 0.0, 0.0], [0.0, -sr, cr * cp], [0.0, -cr, -sr * cp]]),
        1 => Mat3([[0.0, 0.0, -cp], [0.0, 0.0, -sr * sp], [0.0, 0.0, -cr * sp]]),
        _ => Mat3::ZERO,
    }
}

/// `W_η` with `Θ̇ = W_η·ω`.
pub fn euler_rate_matrix(theta: Vec3) -> Result<Mat3> {
    check_gimbal(theta)?;
    let (sr, cr) = (sin(theta[0]), cos(theta[0]));
    let (sp, cp) = (sin(theta[1]), cos(theta[1]));
    let k = 1.0 / cp;
    Ok(Mat3([[1.0, sr * sp * k, cr * sp * k], [0.0, cr, -sr], [0.0, sr * k, cr * k]]))
}

/// Orientation-dependent transforms between base-frame and generalized velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateTransforms {
    pub w_eta: Mat3,
    pub r: Mat3,
    /// `T_H = diag(Rᵀ, W_η⁻¹, 1)`, mapping `ν̇` to `[v_B, ω_B, q̇]`.
    pub t_h: DMat,
}

impl CoordinateTransforms {
    pub fn new(theta: Vec3, n_q: usize) -> Result<CoordinateTransforms> {
        let w_eta = euler_rate_matrix(theta)?;
        let r = rotation(theta);
        Ok(CoordinateTransforms { w_eta, r, t_h: block_transform(&r.transpose(), &body_rate_matrix(theta), n_q) })
    }
}

/// `diag(a, b, 1)` of size `6 + n_q`.
pub(crate) fn block_transform(a: &Mat3, b: &Mat3, n_q: usize) -> DMat {
    let mut t = DMat::identity(BASE_DOF + n_q);
    t.set_block3(0, 0, a);
    t.set_block3(3, 3, b);
    t
}

/// `∂T_H/∂Θ_j`.
pub fn transform_derivative(theta: Vec3, j: usize, n_q: usize) -> DMat {
    let mut t = block_transform(&rotation_derivative(theta, j).transpose(), &body_rate_derivative(theta, j), n_q);
    for i in BASE_DOF..BASE_DOF + n_q {
        t[(i, i)] = 0.0;
    }
    t
}

/// Maps `[world force, base-frame torque, joint torques]` to generalized
/// forces: the angular part is premultiplied by `W_η⁻ᵀ`, which keeps power
/// invariant.
pub fn transform_torque(tau_raw: &[f64], theta: Vec3) -> Result<Vec<f64>> {
    check_gimbal(theta)?;
    if tau_raw.len() < BASE_DOF {
        return Err(Error::DimensionMismatch { expected: BASE_DOF, got: tau_raw.len() });
    }
    let mut out = tau_raw.to_vec();
    let n = body_rate_matrix(theta).transpose().mul_vec(vec3_at(tau_raw, 3));
    out[3..6].copy_from_slice(&n.0);
    Ok(out)
}

/// `H^W = T_Hᵀ H T_H`.
pub fn transform_inertia(h_base: &DMat, theta: Vec3) -> Result<DMat> {
    if h_base.rows() < BASE_DOF || !h_base.is_square() {
        return Err(Error::DimensionMismatch { expected: BASE_DOF, got: h_base.rows() });
    }
    let t = CoordinateTransforms::new(theta, h_base.rows() - BASE_DOF)?;
    Ok(t.t_h.transpose().matmul(h_base).matmul(&t.t_h))
}

/// Potential energy from composite mass and first moment:
/// `P = −gᵀ(m·r_U^W + R·h)`, which is the physical height energy for `g`
/// pointing down.
pub fn potential_energy(mass: f64, h: Vec3, base_position: Vec3, theta: Vec3, gravity: Vec3) -> f64 {
    -gravity.dot(base_position.scale(mass) + rotation(theta).mul_vec(h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::skew;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_theta(rng: &mut ChaCha8Rng) -> Vec3 {
        Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-1.3..1.3), rng.gen_range(-3.0..3.0))
    }

    fn rand_vec(rng: &mut ChaCha8Rng) -> Vec3 {
        Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    /// Rodrigues formula for `exp(skew(w))`.
    fn expm(w: Vec3) -> Mat3 {
        let a = w.norm();
        let k = skew(w.scale(1.0 / a));
        Mat3::IDENTITY + k.scale(a.sin()) + (k * k).scale(1.0 - a.cos())
    }

    #[test]
    fn zero_angles() {
        assert_eq!(euler_rate_matrix(Vec3::ZERO).unwrap(), Mat3::IDENTITY);
        assert_eq!(rotation(Vec3::ZERO), Mat3::IDENTITY);
        let h = DMat::from_fn(8, 8, |i, j| (i * 8 + j) as f64);
        let h = h.add(&h.transpose());
        assert_eq!(transform_inertia(&h, Vec3::ZERO).unwrap(), h);
        let tau = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        assert_eq!(transform_torque(&tau, Vec3::ZERO).unwrap(), tau.to_vec());
    }

    #[test]
    fn gimbal_guard() {
        let th = Vec3::new(0.0, core::f64::consts::FRAC_PI_2 - 0.01, 0.0);
        assert!(matches!(euler_rate_matrix(th), Err(Error::GimbalLock(_))));
    }

    #[test]
    fn rate_matrices_are_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let th = rand_theta(&mut rng);
            let p = euler_rate_matrix(th).unwrap() * body_rate_matrix(th);
            assert!(p.max_abs_diff(&Mat3::IDENTITY) < 1e-12);
        }
    }

    #[test]
    fn euler_integration_tracks_body_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dt = 1e-6;
        for _ in 0..50 {
            let th = rand_theta(&mut rng);
            let w = rand_vec(&mut rng);
            let th_next = th + euler_rate_matrix(th).unwrap().mul_vec(w).scale(dt);
            let expected = rotation(th) * expm(w.scale(dt));
            assert!(rotation(th_next).max_abs_diff(&expected) < 1e-10);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let eps = 1e-6;
        for _ in 0..30 {
            let th = rand_theta(&mut rng);
            for j in 0..3 {
                let mut p = th;
                p[j] += eps;
                let mut m = th;
                m[j] -= eps;
                let fd_r = (rotation(p) - rotation(m)).scale(0.5 / eps);
                assert!(fd_r.max_abs_diff(&rotation_derivative(th, j)) < 1e-8);
                let fd_e = (body_rate_matrix(p) - body_rate_matrix(m)).scale(0.5 / eps);
                assert!(fd_e.max_abs_diff(&body_rate_derivative(th, j)) < 1e-8);
            }
        }
    }

    #[test]
    fn torque_transform_preserves_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let th = rand_theta(&mut rng);
            let tau: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let vel: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let w = vec3_at(&vel, 3);
            let theta_dot = euler_rate_matrix(th).unwrap().mul_vec(w);
            let mut gen_vel = vel.clone();
            gen_vel[3..6].copy_from_slice(&theta_dot.0);
            let out = transform_torque(&tau, th).unwrap();
            let p_raw: f64 = tau.iter().zip(&vel).map(|(a, b)| a * b).sum();
            let p_gen: f64 = out.iter().zip(&gen_vel).map(|(a, b)| a * b).sum();
            assert!((p_raw - p_gen).abs() < 1e-10 * (1.0 + p_raw.abs()));
            assert_eq!(out[6..], tau[6..]);
        }
    }

    #[test]
    fn inertia_transform_preserves_kinetic_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..50 {
            let th = rand_theta(&mut rng);
            let a = DMat::from_fn(8, 8, |_, _| rng.gen_range(-1.0..1.0));
            let h = a.matmul(&a.transpose()).add(&DMat::identity(8).scale(0.1));
            let hw = transform_inertia(&h, th).unwrap();
            assert!(hw.min_eigenvalue() > 0.0);
            let nu_dot: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = rotation(th);
            let v_b = r.transpose().mul_vec(vec3_at(&nu_dot, 0));
            let w_b = body_rate_matrix(th).mul_vec(vec3_at(&nu_dot, 3));
            let mut u = nu_dot.clone();
            u[0..3].copy_from_slice(&v_b.0);
            u[3..6].copy_from_slice(&w_b.0);
            let k_w: f64 = nu_dot.iter().zip(hw.mul_vec(&nu_dot)).map(|(a, b)| a * b).sum();
            let k_b: f64 = u.iter().zip(h.mul_vec(&u)).map(|(a, b)| a * b).sum();
            assert!((k_w - k_b).abs() < 1e-10 * k_b.abs());
        }
    }

    #[test]
    fn potential_examples() {
        assert_eq!(potential_energy(3.0, Vec3::ZERO, Vec3::ZERO, Vec3::new(0.3, 0.2, 0.1), GRAVITY), 0.0);
        let p0 = potential_energy(2.0, Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.3, 0.2, 0.1), GRAVITY);
        let p1 = potential_energy(2.0, Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.5, 2.0, 3.25), Vec3::new(0.3, 0.2, 0.1), GRAVITY);
        // dP/dr = −m·g: raising the base by 0.25 m costs m·9.81·0.25
        assert!((p1 - p0 - 2.0 * 9.81 * 0.25).abs() < 1e-12);
    }
}
