//! Generalized torques from joint torques and contact wrenches, and the binary
//! contacts file read by `ingest`.
//!
//! File layout, all little-endian: the tag `FBCONT01`, `u64` row count, `u64`
//! generalized dimension `n`, then per row a `u64` contact count and per
//! contact a `u64` contact dimension `k`, the `k × n` Jacobian row-major and
//! the `k` force values.

use std::path::Path;

use fbid_core::topology::BASE_DOF;
use fbid_core::{DMat, Error, Result};

use crate::error::{CliError, CliResult};

pub const CONTACTS_MAGIC: &[u8; 8] = b"FBCONT01";

/// One contact: Jacobian `k × (6 + n_q)` and force `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Contact {
    pub jacobian: DMat,
    pub force: Vec<f64>,
}

/// `[0; τ_q] + Σ J_iᵀ f_i`.
pub fn assemble_generalized_torque(joint_torques: &[f64], contacts: &[Contact]) -> Result<Vec<f64>> {
    let n = BASE_DOF + joint_torques.len();
    let mut tau = vec![0.0; BASE_DOF];
    tau.extend_from_slice(joint_torques);
    for c in contacts {
        if c.jacobian.cols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: c.jacobian.cols() });
        }
        if c.jacobian.rows() != c.force.len() {
            return Err(Error::DimensionMismatch { expected: c.jacobian.rows(), got: c.force.len() });
        }
        for (t, x) in tau.iter_mut().zip(c.jacobian.tr_mul_vec(&c.force)) {
            *t += x;
        }
    }
    Ok(tau)
}

/// Serializes per-row contact lists.
pub fn encode_contacts(n: usize, rows: &[Vec<Contact>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CONTACTS_MAGIC);
    out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for row in rows {
        out.extend_from_slice(&(row.len() as u64).to_le_bytes());
        for c in row {
            out.extend_from_slice(&(c.force.len() as u64).to_le_bytes());
            for x in c.jacobian.data().iter().chain(&c.force) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> CliResult<&[u8]> {
        if self.bytes.len() < n {
            return Err(CliError::data("contacts file is truncated"));
        }
        let (a, b) = self.bytes.split_at(n);
        self.bytes = b;
        Ok(a)
    }

    fn u64(&mut self) -> CliResult<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> CliResult<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| CliError::data("contacts file sizes overflow"))?;
        Ok(self.take(len)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

/// Parses a contacts file for `n`-dimensional generalized coordinates.
pub fn decode_contacts(bytes: &[u8], n: usize) -> CliResult<Vec<Vec<Contact>>> {
    let mut c = Cursor { bytes };
    if c.take(8)? != CONTACTS_MAGIC {
        return Err(CliError::data("contacts file lacks its tag"));
    }
    let rows = c.u64()?;
    let dim = c.u64()?;
    if dim != n {
        return Err(CliError::data(format!("contacts file is for dimension {dim}, dataset has {n}")));
    }
    let mut out = Vec::with_capacity(rows.min(1 << 20));
    for _ in 0..rows {
        let count = c.u64()?;
        let mut row = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let k = c.u64()?;
            let jac = c.f64s(k.checked_mul(n).ok_or_else(|| CliError::data("contacts file sizes overflow"))?)?;
            let force = c.f64s(k)?;
            row.push(Contact { jacobian: DMat::from_vec(k, n, jac)?, force });
        }
        out.push(row);
    }
    if !c.bytes.is_empty() {
        return Err(CliError::data("contacts file has trailing bytes"));
    }
    Ok(out)
}

pub fn read_contacts(path: &Path, n: usize) -> CliResult<Vec<Vec<Contact>>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::read(path, e))?;
    decode_contacts(&bytes, n)
}
