use std::collections::BTreeMap;

use serde::Serialize;

use crate::ceiling::NoiseCeilingMap;
use crate::error::{Error, Result};
use crate::tensorio::RoiMask;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoiAlignment {
    pub label: String,
    /// Mean of `rho_v / NC_v` over the kept ROI voxels.
    pub b: f64,
    pub voxels: Vec<usize>,
}

/// Noise-ceiling normalized alignment of one ROI:
/// `B = (1/|V|) Σ_{v∈V} rho_v / NC_v`, where `V` is the ROI restricted to
/// voxels passing the ceiling threshold. `rho` is not clipped at `NC`, so
/// `B` may exceed 1.
pub fn normalized_alignment(
    rho: &[f64],
    nc_map: &NoiseCeilingMap,
    roi: &RoiMask,
) -> Result<RoiAlignment> {
    if rho.len() != nc_map.nc.len() {
        return Err(Error::input(format!(
            "{} correlations for {} ceilings",
            rho.len(),
            nc_map.nc.len()
        )));
    }
    roi.validate_for(rho.len())?;
    let voxels: Vec<usize> = roi
        .voxel_indices
        .iter()
        .copied()
        .filter(|&v| nc_map.keep_mask[v])
        .collect();
    if voxels.is_empty() {
        return Err(Error::Roi(format!(
            "roi {:?} has no voxel above the ceiling threshold",
            roi.label
        )));
    }
    let b = voxels.iter().map(|&v| rho[v] / nc_map.nc[v]).sum::<f64>() / voxels.len() as f64;
    Ok(RoiAlignment {
        label: roi.label.clone(),
        b,
        voxels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub per_roi: BTreeMap<String, f64>,
    pub n_voxels_per_roi: BTreeMap<String, usize>,
    pub per_voxel_rho: Vec<f64>,
    pub nc_used: Vec<f64>,
}

/// Alignment for every ROI that keeps at least one voxel; empty ROIs are
/// skipped with a warning.
pub fn alignment_report(
    rho: &[f64],
    nc_map: &NoiseCeilingMap,
    rois: &[RoiMask],
) -> Result<AlignmentReport> {
    let mut per_roi = BTreeMap::new();
    let mut n_voxels_per_roi = BTreeMap::new();
    for roi in rois {
        match normalized_alignment(rho, nc_map, roi) {
            Ok(a) => {
                per_roi.insert(a.label.clone(), a.b);
                n_voxels_per_roi.insert(a.label, a.voxels.len());
            }
            Err(Error::Roi(msg)) => log::warn!("{msg}; roi not reported"),
            Err(e) => return Err(e),
        }
    }
    Ok(AlignmentReport {
        per_roi,
        n_voxels_per_roi,
        per_voxel_rho: rho.to_vec(),
        nc_used: nc_map.nc.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_voxel_example() {
        let nc = NoiseCeilingMap::new(vec![0.4, 0.6], 0.0).unwrap();
        let roi = RoiMask::new("r", vec![0, 1]).unwrap();
        let a = normalized_alignment(&[0.2, 0.3], &nc, &roi).unwrap();
        assert!((a.b - 0.5).abs() < 1e-15);
        assert_eq!(a.voxels, vec![0, 1]);
    }

    #[test]
    fn rho_equal_to_ceiling() {
        let ceil = vec![0.5, 0.7, 0.9, 0.45];
        let nc = NoiseCeilingMap::new(ceil.clone(), 0.4).unwrap();
        let roi = RoiMask::new("all", vec![0, 1, 2, 3]).unwrap();
        assert!((normalized_alignment(&ceil, &nc, &roi).unwrap().b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_intersection() {
        let nc = NoiseCeilingMap::new(vec![0.1, 0.9], 0.4).unwrap();
        let roi = RoiMask::new("low", vec![0]).unwrap();
        assert!(matches!(
            normalized_alignment(&[0.1, 0.2], &nc, &roi),
            Err(Error::Roi(_))
        ));
        let report = alignment_report(
            &[0.1, 0.2],
            &nc,
            &[roi, RoiMask::new("hi", vec![1]).unwrap()],
        )
        .unwrap();
        assert_eq!(report.per_roi.len(), 1);
        assert!((report.per_roi["hi"] - 0.2 / 0.9).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_roi() {
        let nc = NoiseCeilingMap::new(vec![0.9, 0.9], 0.4).unwrap();
        let roi = RoiMask::new("r", vec![0, 2]).unwrap();
        assert!(normalized_alignment(&[0.1, 0.2], &nc, &roi).is_err());
    }
}
