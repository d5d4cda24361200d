//! Physically consistent inertia parameterization for floating-base robots.
//!
//! The crate covers the structured factorization of the whole-body inertia
//! matrix, a rigid-body reference model for data generation, a small batched
//! reverse-mode differentiation engine, the Lagrangian inverse-dynamics
//! pipeline and the training loop for the learned and white-box methods.
//!
//! Everything here is `no_std` with `alloc`; file formats and the command-line
//! front end live in the companion `fbid` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod dataset;
mod error;
pub mod inertia_param;
pub mod lagrangian;
pub mod linalg;
pub mod math;
pub mod net;
pub mod refdyn;
pub mod spatial;
pub mod topology;
pub mod training;

pub use error::{Error, Result};
pub use linalg::{DMat, Mat3, SymMat3, Vec3};
