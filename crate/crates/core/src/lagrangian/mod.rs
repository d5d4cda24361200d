//! Generalized coordinates, coordinate transforms, potential energy and the
//! Euler-Lagrange torque pipeline.
//!
//! Orientation uses ZYX Euler angles `Θ = (roll, pitch, yaw)` with
//! `R = Rz(yaw)·Ry(pitch)·Rx(roll)` mapping base to world.

mod coords;
mod torque;

pub use coords::*;
pub use torque::*;
