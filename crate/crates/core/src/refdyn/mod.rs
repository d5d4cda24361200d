//! Rigid-body reference model: composite inertia, inverse dynamics, potential
//! energy, excitation data and white-box inertial-parameter schemes.
//!
//! Every joint is revolute. A joint frame sits at a fixed placement in its
//! parent body frame and rotates about a unit axis; the child body frame is the
//! rotated joint frame.

mod excitation;
mod kinematics;
mod rnea;
mod schemes;

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::lagrangian::GRAVITY;
use crate::linalg::{Mat3, SymMat3, Vec3};
use crate::spatial::{skew, SpatialInertia};
use crate::topology::RobotTopology;
use crate::{Error, Result};

pub use excitation::{generate_excitation, ExcitationSpec};
pub use kinematics::{
    body_com_positions, composite_inertia, composite_inertia_derivative, kinetic_energy_bodies, potential_energy_bodies,
    Dual, Scalar,
};
pub use rnea::{decompose, forward_dynamics, inverse_dynamics, regressor, rk4_step, total_energy, Decomposition};
pub use schemes::{body_params_from, body_params_to_vector, InertialParamScheme, PARAMS_PER_BODY};

/// Bodies lighter than this are clamped before any dynamics evaluation.
pub const MIN_BODY_MASS: f64 = 1e-6;

/// Inertial parameters of one body; `rot_inertia` is about the body-frame origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyParams {
    pub mass: f64,
    pub com: Vec3,
    pub rot_inertia: SymMat3,
}

impl BodyParams {
    pub fn first_moment(&self) -> Vec3 {
        self.com.scale(self.mass)
    }

    pub fn spatial(&self) -> SpatialInertia {
        SpatialInertia { mass: self.mass, first_moment: self.first_moment(), rot_inertia: self.rot_inertia }
    }

    /// Rotational inertia about the center of mass.
    pub fn com_inertia(&self) -> SymMat3 {
        let s = skew(self.com);
        SymMat3::new(*self.rot_inertia.mat() - (s.transpose() * s).scale(self.mass))
    }

    /// From mass, COM and inertia about the COM.
    pub fn from_com_inertia(mass: f64, com: Vec3, com_inertia: SymMat3) -> BodyParams {
        let s = skew(com);
        BodyParams { mass, com, rot_inertia: SymMat3::new(*com_inertia.mat() + (s.transpose() * s).scale(mass)) }
    }

    /// Massless-link guard: light bodies become `MIN_BODY_MASS` with their
    /// inertia scaled by the same ratio (or a small isotropic one if massless).
    pub fn guarded(&self) -> BodyParams {
        if self.mass >= MIN_BODY_MASS {
            return *self;
        }
        let scaled = if self.mass > 0.0 {
            SymMat3::new(self.com_inertia().mat().scale(MIN_BODY_MASS / self.mass))
        } else {
            SymMat3::ZERO
        };
        let com_inertia =
            if scaled.lambda_min() > 0.0 { scaled } else { SymMat3::new(Mat3::IDENTITY.scale(1e-2 * MIN_BODY_MASS)) };
        BodyParams::from_com_inertia(MIN_BODY_MASS, self.com, com_inertia)
    }
}

/// Fixed placement and axis of a revolute joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joint {
    /// Orientation of the joint frame in the parent body frame.
    pub rotation: Mat3,
    /// Joint origin in the parent body frame (m).
    pub translation: Vec3,
    /// Unit rotation axis in the joint frame.
    pub axis: Vec3,
}

/// Full kinodynamic description used by the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthModel {
    topology: RobotTopology,
    joints: Vec<Joint>,
    /// Base body first, then one body per joint in canonical order.
    bodies: Vec<BodyParams>,
    gravity: Vec3,
}

impl GroundTruthModel {
    pub fn new(topology: RobotTopology, joints: Vec<Joint>, bodies: Vec<BodyParams>, gravity: Vec3) -> Result<GroundTruthModel> {
        crate::error::dim_check(topology.n_q(), joints.len())?;
        crate::error::dim_check(topology.n_q() + 1, bodies.len())?;
        for (j, joint) in joints.iter().enumerate() {
            let orth = joint.rotation.transpose() * joint.rotation;
            if orth.max_abs_diff(&Mat3::IDENTITY) > 1e-12 || joint.rotation.det() < 0.0 {
                return Err(Error::InvalidConfig(format!("joint {j}: placement rotation is not a proper rotation")));
            }
            if (joint.axis.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidConfig(format!("joint {j}: axis is not unit norm")));
            }
        }
        for (b, body) in bodies.iter().enumerate() {
            if !(body.mass >= 0.0) {
                return Err(Error::InvalidConfig(format!("body {b}: negative mass")));
            }
        }
        Ok(GroundTruthModel { topology, joints, bodies, gravity })
    }

    pub fn topology(&self) -> &RobotTopology {
        &self.topology
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn bodies(&self) -> &[BodyParams] {
        &self.bodies
    }

    pub fn gravity(&self) -> Vec3 {
        self.gravity
    }

    pub fn n_q(&self) -> usize {
        self.topology.n_q()
    }

    pub fn dim(&self) -> usize {
        self.topology.dim()
    }

    pub fn total_mass(&self) -> f64 {
        self.bodies.iter().map(|b| b.guarded().mass).sum()
    }

    /// Same kinematics with different inertial parameters.
    pub fn with_bodies(&self, bodies: Vec<BodyParams>) -> Result<GroundTruthModel> {
        GroundTruthModel::new(self.topology.clone(), self.joints.clone(), bodies, self.gravity)
    }

    pub(crate) fn guarded_bodies(&self) -> Vec<BodyParams> {
        self.bodies.iter().map(BodyParams::guarded).collect()
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    crate::math::exp(rng.gen_range(crate::math::ln(lo)..crate::math::ln(hi)))
}

/// Random consistent body: log-uniform mass, uniform COM and a second moment
/// about the COM drawn through a random lower-triangular factor.
pub fn random_body(rng: &mut ChaCha8Rng) -> BodyParams {
    let mass = log_uniform(rng, 0.1, 10.0);
    let com = Vec3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
    let mut c = Mat3::ZERO;
    for i in 0..3 {
        c.0[i][i] = rng.gen_range(0.03..0.2);
        for j in 0..i {
            c.0[i][j] = rng.gen_range(-0.05..0.05);
        }
    }
    let sigma = (c * c.transpose()).scale(mass);
    let com_inertia = SymMat3::new(Mat3::IDENTITY.scale(sigma.trace()) - sigma);
    BodyParams::from_com_inertia(mass, com, com_inertia)
}

/// Random kinematics and consistent inertial parameters for a topology.
pub fn random_model(topology: &RobotTopology, seed: u64) -> GroundTruthModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = topology.n_branches() as f64;
    let mut joints = Vec::with_capacity(topology.n_q());
    for j in 0..topology.n_q() {
        let translation = match topology.joint_parent(j) {
            None => {
                let k = topology.joint_branch(j) as f64;
                let phi = 2.0 * crate::math::PI * (k + 0.5) / nb + rng.gen_range(-0.2..0.2);
                Vec3::new(0.3 * crate::math::cos(phi), 0.2 * crate::math::sin(phi), rng.gen_range(-0.05..0.05))
            }
            Some(_) => Vec3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), -rng.gen_range(0.15..0.3)),
        };
        let tilt = Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
        let rotation = crate::lagrangian::rotation(tilt);
        let principal = rng.gen_range(0..3usize);
        let axis = (Vec3::unit(principal)
            + Vec3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)))
        .normalized();
        joints.push(Joint { rotation, translation, axis });
    }
    let bodies = (0..=topology.n_q()).map(|_| random_body(&mut rng)).collect();
    GroundTruthModel::new(topology.clone(), joints, bodies, GRAVITY).expect("generated model is valid")
}

#[cfg(test)]
mod tests;
