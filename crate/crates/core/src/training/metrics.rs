use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Smallest per-coordinate torque variance admitted into loss and metric.
pub const MIN_VARIANCE: f64 = 1e-12;

/// Inverse-variance weights of the torque coordinates from the training split.
/// Coordinates with (near) constant torque get weight zero and are listed in
/// `excluded`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorqueWeights {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub weights: Vec<f64>,
    pub excluded: Vec<usize>,
}

impl TorqueWeights {
    /// `targets` holds `n`-wide rows.
    pub fn from_targets(targets: &[f64], n: usize) -> Result<TorqueWeights> {
        if n == 0 || targets.is_empty() || targets.len() % n != 0 {
            return Err(Error::InvalidData(format!("{} torque values do not form rows of {n}", targets.len())));
        }
        let rows = (targets.len() / n) as f64;
        let mut mean = vec![0.0; n];
        for row in targets.chunks(n) {
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= rows);
        let mut variance = vec![0.0; n];
        for row in targets.chunks(n) {
            for c in 0..n {
                variance[c] += { let d = row[c] - mean[c]; d * d };
            }
        }
        variance.iter_mut().for_each(|v| *v /= rows);
        let excluded: Vec<usize> = (0..n).filter(|&c| !(variance[c] >= MIN_VARIANCE)).collect();
        if excluded.len() == n {
            return Err(Error::DegenerateVariance(0));
        }
        let weights = (0..n).map(|c| if excluded.contains(&c) { 0.0 } else { 1.0 / variance[c] }).collect();
        Ok(TorqueWeights { mean, variance, weights, excluded })
    }

    /// Like [`TorqueWeights::from_targets`] but refuses degenerate coordinates.
    pub fn strict(targets: &[f64], n: usize) -> Result<TorqueWeights> {
        let w = TorqueWeights::from_targets(targets, n)?;
        match w.excluded.first() {
            Some(&c) => Err(Error::DegenerateVariance(c)),
            None => Ok(w),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn included(&self) -> usize {
        self.dim() - self.excluded.len()
    }
}

/// Mean squared residual per coordinate.
pub fn per_coordinate_mse(pred: &[f64], target: &[f64], n: usize) -> Result<Vec<f64>> {
    crate::error::dim_check(target.len(), pred.len())?;
    if n == 0 || pred.len() % n != 0 {
        return Err(Error::DimensionMismatch { expected: n, got: pred.len() });
    }
    let rows = (pred.len() / n).max(1) as f64;
    let mut out = vec![0.0; n];
    for (p, t) in pred.chunks(n).zip(target.chunks(n)) {
        for c in 0..n {
            out[c] += { let d = p[c] - t[c]; d * d };
        }
    }
    out.iter_mut().for_each(|x| *x /= rows);
    Ok(out)
}

/// Squared residual normalized by the training variance of each coordinate,
/// averaged over samples and the included coordinates.
pub fn nmse(pred: &[f64], target: &[f64], weights: &TorqueWeights) -> Result<f64> {
    let mse = per_coordinate_mse(pred, target, weights.dim())?;
    Ok(nmse_from_mse(&mse, weights))
}

pub fn nmse_from_mse(mse: &[f64], weights: &TorqueWeights) -> f64 {
    mse.iter().zip(&weights.weights).map(|(m, w)| m * w).sum::<f64>() / weights.included() as f64
}

/// `(NMSE_i − min) / max` across a set of methods.
pub fn rnmse(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidData("no NMSE values".into()));
    }
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidData(format!("NMSE {v} is not a finite nonnegative number")));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::AllZero);
    }
    Ok(values.iter().map(|v| (v - min) / max).collect())
}
