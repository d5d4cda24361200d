//! Trajectory samples stored row-wise in the canonical column order.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::lagrangian::GeneralizedState;
use crate::topology::BASE_DOF;
use crate::{Error, Result};

/// One time step: state and generalized torque `τ_ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub state: GeneralizedState,
    pub tau: Vec<f64>,
}

/// Dense table of samples; each row is `[ν, ν̇, ν̈, τ_ν]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    n_q: usize,
    rate: f64,
    rows: Vec<f64>,
}

impl TrajectoryDataset {
    pub fn new(n_q: usize, rate: f64) -> TrajectoryDataset {
        TrajectoryDataset { n_q, rate, rows: Vec::new() }
    }

    pub fn from_rows(n_q: usize, rate: f64, rows: Vec<f64>) -> Result<TrajectoryDataset> {
        let width = 4 * (BASE_DOF + n_q);
        if rows.len() % width != 0 {
            return Err(Error::DimensionMismatch { expected: width, got: rows.len() % width });
        }
        Ok(TrajectoryDataset { n_q, rate, rows })
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn dim(&self) -> usize {
        BASE_DOF + self.n_q
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn width(&self) -> usize {
        4 * self.dim()
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn raw(&self) -> &[f64] {
        &self.rows
    }

    pub fn push(&mut self, sample: &TrajectorySample) -> Result<()> {
        let n = self.dim();
        crate::error::dim_check(n, sample.state.dim())?;
        crate::error::dim_check(n, sample.tau.len())?;
        self.rows.extend_from_slice(&sample.state.nu);
        self.rows.extend_from_slice(&sample.state.nu_dot);
        self.rows.extend_from_slice(&sample.state.nu_ddot);
        self.rows.extend_from_slice(&sample.tau);
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.rows[i * w..(i + 1) * w]
    }

    fn part(&self, i: usize, k: usize) -> &[f64] {
        let n = self.dim();
        &self.row(i)[k * n..(k + 1) * n]
    }

    pub fn nu(&self, i: usize) -> &[f64] {
        self.part(i, 0)
    }

    pub fn nu_dot(&self, i: usize) -> &[f64] {
        self.part(i, 1)
    }

    pub fn nu_ddot(&self, i: usize) -> &[f64] {
        self.part(i, 2)
    }

    pub fn tau(&self, i: usize) -> &[f64] {
        self.part(i, 3)
    }

    pub fn state(&self, i: usize) -> GeneralizedState {
        GeneralizedState { nu: self.nu(i).to_vec(), nu_dot: self.nu_dot(i).to_vec(), nu_ddot: self.nu_ddot(i).to_vec() }
    }

    pub fn sample(&self, i: usize) -> TrajectorySample {
        TrajectorySample { state: self.state(i), tau: self.tau(i).to_vec() }
    }

    pub fn subset(&self, indices: impl IntoIterator<Item = usize>) -> TrajectoryDataset {
        let mut rows = Vec::new();
        for i in indices {
            rows.extend_from_slice(self.row(i));
        }
        TrajectoryDataset { n_q: self.n_q, rate: self.rate, rows }
    }

    /// First `⌊fraction·len⌋` rows for training, the rest for testing.
    pub fn split_chronological(&self, fraction: f64) -> Result<(TrajectoryDataset, TrajectoryDataset)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidConfig(format!("split fraction {fraction} must lie in (0, 1)")));
        }
        let n_train = (fraction * self.len() as f64) as usize;
        if n_train == 0 || n_train == self.len() {
            return Err(Error::InvalidConfig(format!("{} samples cannot be split {fraction}", self.len())));
        }
        Ok((self.subset(0..n_train), self.subset(n_train..self.len())))
    }

    /// Copy with the torque columns replaced.
    pub fn with_torques(&self, tau: &[Vec<f64>]) -> Result<TrajectoryDataset> {
        crate::error::dim_check(self.len(), tau.len())?;
        let mut out = self.clone();
        let (n, w) = (self.dim(), self.width());
        for (i, t) in tau.iter().enumerate() {
            crate::error::dim_check(n, t.len())?;
            out.rows[i * w + 3 * n..(i + 1) * w].copy_from_slice(t);
        }
        Ok(out)
    }
}

/// Header names in canonical column order.
pub fn column_names(n_q: usize) -> Vec<String> {
    let mut base: Vec<String> = ["r_x", "r_y", "r_z", "roll", "pitch", "yaw"].iter().map(|s| String::from(*s)).collect();
    base.extend((0..n_q).map(|j| format!("q{j}")));
    let mut out = base.clone();
    out.extend(base.iter().map(|c| format!("d_{c}")));
    out.extend(base.iter().map(|c| format!("dd_{c}")));
    out.extend(base.iter().map(|c| format!("tau_{c}")));
    out
}
