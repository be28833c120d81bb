//! Per-voxel noise ceilings from repeated presentations of one story.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensorio::{FmriRun, Matrix};

pub const DEFAULT_THRESHOLD: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCeilingMap {
    /// Ceiling correlation per voxel, in `[0, 1]`.
    pub nc: Vec<f64>,
    pub threshold: f64,
    pub keep_mask: Vec<bool>,
}

impl NoiseCeilingMap {
    pub fn new(nc: Vec<f64>, threshold: f64) -> Result<Self> {
        if let Some(i) = nc.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data {
                index: (i, 0),
                msg: "non-finite noise ceiling".into(),
            });
        }
        let nc: Vec<f64> = nc.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let keep_mask = nc.iter().map(|&v| v > threshold).collect();
        Ok(Self {
            nc,
            threshold,
            keep_mask,
        })
    }

    pub fn n_kept(&self) -> usize {
        self.keep_mask.iter().filter(|&&k| k).count()
    }

    /// Fails unless at least one voxel passes the threshold.
    pub fn require_kept(&self) -> Result<()> {
        if self.n_kept() == 0 {
            return Err(Error::Degenerate(format!(
                "no voxel has a noise ceiling above {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Strategy seam for ceiling estimators.
pub trait CeilingEstimator {
    /// Ceiling correlation per voxel from `R` equally shaped repeats.
    fn estimate(&self, repeats: &[&Matrix]) -> Vec<f64>;
}

/// Signal-power / total-power ceiling, `NC = sqrt(SP / TP)`.
///
/// With `R` repeats `y_1..y_R` of one voxel:
/// `SP = (Var(Σ y_r) − Σ Var(y_r)) / (R(R−1))` and `TP = mean Var(y_r)`.
/// Negative SP is clipped to zero; a constant voxel (`TP = 0`) gets 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct SignalPowerCeiling;

fn variance(values: impl Iterator<Item = f64> + Clone, n: usize) -> f64 {
    let mean = values.clone().sum::<f64>() / n as f64;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

impl CeilingEstimator for SignalPowerCeiling {
    fn estimate(&self, repeats: &[&Matrix]) -> Vec<f64> {
        let r = repeats.len() as f64;
        let (n, v) = repeats[0].shape();
        (0..v)
            .into_par_iter()
            .map(|voxel| {
                let sum_var: f64 = repeats
                    .iter()
                    .map(|y| variance(y.column(voxel).iter().copied(), n))
                    .sum();
                let total = (0..n).map(|t| repeats.iter().map(|y| y[(t, voxel)]).sum::<f64>());
                let var_total = variance(total, n);
                let tp = sum_var / r;
                if tp <= 0.0 {
                    return 0.0;
                }
                let sp = (var_total - sum_var) / (r * (r - 1.0));
                (sp.clamp(0.0, tp) / tp).sqrt()
            })
            .collect()
    }
}

fn check_repeats(repeats: &[&Matrix]) -> Result<()> {
    if repeats.len() < 2 {
        return Err(Error::input(format!(
            "noise ceiling needs at least 2 repeats, got {}",
            repeats.len()
        )));
    }
    let shape = repeats[0].shape();
    if let Some(bad) = repeats.iter().find(|m| m.shape() != shape) {
        return Err(Error::input(format!(
            "repeat shape {:?} differs from {:?}",
            bad.shape(),
            shape
        )));
    }
    Ok(())
}

pub fn estimate_noise_ceiling_matrices(
    repeats: &[&Matrix],
    threshold: f64,
) -> Result<NoiseCeilingMap> {
    check_repeats(repeats)?;
    NoiseCeilingMap::new(SignalPowerCeiling.estimate(repeats), threshold)
}

pub fn estimate_noise_ceiling(repeats: &[FmriRun], threshold: f64) -> Result<NoiseCeilingMap> {
    if let Some(first) = repeats.first() {
        if let Some(other) = repeats
            .iter()
            .find(|r| r.participant_id != first.participant_id || r.story_id != first.story_id)
        {
            return Err(Error::input(format!(
                "repeats mix {}/{} with {}/{}",
                first.participant_id, first.story_id, other.participant_id, other.story_id
            )));
        }
    }
    let mats: Vec<&Matrix> = repeats.iter().map(|r| &r.data).collect();
    estimate_noise_ceiling_matrices(&mats, threshold)
}

/// Selects the masked columns in their original order. Returns the gathered
/// matrix and, for each output column, its original voxel index.
pub fn apply_mask(data: &Matrix, mask: &[bool]) -> Result<(Matrix, Vec<usize>)> {
    if mask.len() != data.ncols() {
        return Err(Error::input(format!(
            "mask has {} entries for {} voxels",
            mask.len(),
            data.ncols()
        )));
    }
    let index: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &k)| k.then_some(i))
        .collect();
    if index.is_empty() {
        return Err(Error::input("mask selects no voxels"));
    }
    Ok((data.select_columns(index.iter()), index))
}
