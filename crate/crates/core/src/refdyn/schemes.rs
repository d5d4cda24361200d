//! White-box inertial-parameter schemes: raw per-body vectors to body parameters.

use super::BodyParams;
use crate::linalg::{Mat3, SymMat3, Vec3};
use crate::Result;

/// Raw values per body: mass, first moment (3), and six inertia entries.
pub const PARAMS_PER_BODY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InertialParamScheme {
    /// Inertia entries used as given; may be physically inconsistent.
    Ns,
    /// Inertia `C Cᵀ` from a lower-triangular `C`.
    Pd,
    /// Second moment `Σ = C Cᵀ`, inertia `Tr(Σ)·1 − Σ`.
    Cov,
}

impl InertialParamScheme {
    pub fn name(self) -> &'static str {
        match self {
            InertialParamScheme::Ns => "ns",
            InertialParamScheme::Pd => "pd",
            InertialParamScheme::Cov => "cov",
        }
    }
}

/// Lower-triangular matrix from `[c00, c10, c11, c20, c21, c22]`.
pub fn lower_from_packed(p: &[f64]) -> Mat3 {
    Mat3([[p[0], 0.0, 0.0], [p[1], p[2], 0.0], [p[3], p[4], p[5]]])
}

/// Rotational inertia about the body origin encoded by the six trailing values.
pub fn scheme_inertia(raw: &[f64], scheme: InertialParamScheme) -> SymMat3 {
    match scheme {
        InertialParamScheme::Ns => SymMat3::from_upper([raw[0], raw[1], raw[2], raw[3], raw[4], raw[5]]),
        InertialParamScheme::Pd => {
            let c = lower_from_packed(raw);
            SymMat3::new(c * c.transpose())
        }
        InertialParamScheme::Cov => {
            let c = lower_from_packed(raw);
            let sigma = c * c.transpose();
            SymMat3::new(Mat3::IDENTITY.scale(sigma.trace()) - sigma)
        }
    }
}

/// Body parameters from one raw 10-vector `[m, h, six inertia values]`.
pub fn body_params_from(theta: &[f64], scheme: InertialParamScheme) -> Result<BodyParams> {
    crate::error::dim_check(PARAMS_PER_BODY, theta.len())?;
    let mass = theta[0];
    let h = Vec3::new(theta[1], theta[2], theta[3]);
    let com = if mass != 0.0 { h.scale(1.0 / mass) } else { Vec3::ZERO };
    Ok(BodyParams { mass, com, rot_inertia: scheme_inertia(&theta[4..], scheme) })
}

/// Regressor parameter vector `[m, h, I_xx, I_xy, I_xz, I_yy, I_yz, I_zz]`.
pub fn body_params_to_vector(b: &BodyParams) -> [f64; PARAMS_PER_BODY] {
    let h = b.first_moment();
    let i = b.rot_inertia.upper();
    [b.mass, h[0], h[1], h[2], i[0], i[1], i[2], i[3], i[4], i[5]]
}
