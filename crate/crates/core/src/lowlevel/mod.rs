//! Low-level speech features, their linear removal from model
//! representations, and the resulting drop in brain alignment.

mod features;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::encoding::{logspace, RidgeSolver};
use crate::error::{Error, Result};
use crate::tensorio::Matrix;
pub use features::*;

/// Magnitude below which the original alignment is treated as zero.
pub const IMPACT_EPS: f64 = 1e-9;

/// Default penalty grid for predicting representations from features. It
/// reaches far below typical feature energies so that exactly predictable
/// columns are removed almost completely.
pub fn default_residual_alphas() -> Vec<f64> {
    logspace(1e-8, 1e4, 13)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub train: Matrix,
    pub test: Matrix,
    /// Selected penalty per representation column; `None` when the features
    /// carry no variance and only the intercept was removed.
    pub alphas: Option<Vec<f64>>,
}

fn column_means(m: &Matrix) -> Vec<f64> {
    let n = m.nrows() as f64;
    m.column_iter().map(|c| c.sum() / n).collect()
}

fn subtract_means(m: &Matrix, means: &[f64]) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)] - means[c])
}

/// Held-out squared error, `n_alphas × n_columns`, over `k` contiguous folds.
fn cv_errors(low: &Matrix, reps: &Matrix, grid: &[f64], k: usize) -> Result<Matrix> {
    let n = low.nrows();
    let mut errs = Matrix::zeros(grid.len(), reps.ncols());
    for f in 0..k {
        let held = (f * n / k)..((f + 1) * n / k);
        let keep: Vec<usize> = (0..n).filter(|r| !held.contains(r)).collect();
        let (lf, rf) = (low.select_rows(keep.iter()), reps.select_rows(keep.iter()));
        let (lm, rm) = (column_means(&lf), column_means(&rf));
        let lf = subtract_means(&lf, &lm);
        let rf = subtract_means(&rf, &rm);
        let lh = subtract_means(&low.rows(held.start, held.len()).into_owned(), &lm);
        let rh = subtract_means(&reps.rows(held.start, held.len()).into_owned(), &rm);
        let solver = match RidgeSolver::new(&lf) {
            Ok(s) => s,
            // this fold's features are constant; every penalty predicts 0
            Err(Error::Degenerate(_)) => {
                for (c, col) in rh.column_iter().enumerate() {
                    let e = col.norm_squared();
                    errs.column_mut(c).add_scalar_mut(e);
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        let uty = solver.project_targets(&rf)?;
        let xv = &lh * solver.right_vectors();
        for (i, &a) in grid.iter().enumerate() {
            let diff = solver.predict_projected(&xv, &uty, a) - &rh;
            for (c, col) in diff.column_iter().enumerate() {
                errs[(i, c)] += col.norm_squared();
            }
        }
    }
    Ok(errs)
}

/// Removes the part of the representations that is linearly predictable
/// from low-level features.
///
/// A ridge map `F` (with intercept) from features to representations is fit
/// on the training rows. Each representation column gets its own penalty,
/// chosen by 5-fold contiguous cross-validation on the training rows only
/// (ties go to the larger penalty). Both splits are then residualized with
/// the training fit: `res = reps − mean − (low − low_mean) · F`.
pub fn residualize(
    reps_train: &Matrix,
    reps_test: &Matrix,
    low_train: &Matrix,
    low_test: &Matrix,
    alpha_grid: &[f64],
) -> Result<Residuals> {
    if reps_train.ncols() != reps_test.ncols() {
        return Err(Error::input(format!(
            "representation columns differ: {} train vs {} test",
            reps_train.ncols(),
            reps_test.ncols()
        )));
    }
    if low_train.ncols() != low_test.ncols() {
        return Err(Error::input(format!(
            "feature columns differ: {} train vs {} test",
            low_train.ncols(),
            low_test.ncols()
        )));
    }
    if reps_train.nrows() != low_train.nrows() || reps_test.nrows() != low_test.nrows() {
        return Err(Error::input(
            "representations and features are not row-aligned",
        ));
    }
    if alpha_grid.is_empty() || alpha_grid.iter().any(|a| a.is_nan() || *a <= 0.0) {
        return Err(Error::input("penalty grid must be non-empty and positive"));
    }
    if reps_train.nrows() < 4 {
        return Err(Error::input("need at least 4 training rows to residualize"));
    }
    let (lm, rm) = (column_means(low_train), column_means(reps_train));
    let lc = subtract_means(low_train, &lm);
    let rc = subtract_means(reps_train, &rm);
    let rt = subtract_means(reps_test, &rm);

    let solver = match RidgeSolver::new(&lc) {
        Ok(s) => s,
        Err(Error::Degenerate(_)) => {
            log::warn!("low-level features are constant on the training split; removing the intercept only");
            return Ok(Residuals {
                train: rc,
                test: rt,
                alphas: None,
            });
        }
        Err(e) => return Err(e),
    };

    let k = 5.min(low_train.nrows() / 2);
    let errs = cv_errors(low_train, reps_train, alpha_grid, k)?;
    let alphas: Vec<f64> = errs
        .column_iter()
        .map(|col| {
            let mut best = 0;
            for i in 1..alpha_grid.len() {
                if col[i] <= col[best] {
                    best = i;
                }
            }
            alpha_grid[best]
        })
        .collect();
    let f = solver.weights_per_target(&rc, &alphas)?;
    let lt = subtract_means(low_test, &lm);
    Ok(Residuals {
        train: rc - &lc * &f,
        test: rt - lt * &f,
        alphas: Some(alphas),
    })
}

/// Percentage drop in alignment, `100 · (B_o − B_r) / B_o`. `None` when
/// the original alignment is (numerically) zero.
pub fn low_level_impact(b_o: f64, b_r: f64) -> Option<f64> {
    if b_o.abs() < IMPACT_EPS {
        None
    } else {
        Some(100.0 * (b_o - b_r) / b_o)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpactEntry {
    pub b_o: f64,
    pub b_r: f64,
    pub r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpactReport {
    pub per_roi: BTreeMap<String, ImpactEntry>,
    pub feature_kind: String,
    pub model_id: String,
}

/// Pairs original and residual per-ROI alignments; ROIs missing from either
/// side are left out.
pub fn impact_report(
    original: &BTreeMap<String, f64>,
    residual: &BTreeMap<String, f64>,
    feature_kind: &str,
    model_id: &str,
) -> ImpactReport {
    let per_roi = original
        .iter()
        .filter_map(|(roi, &b_o)| {
            residual.get(roi).map(|&b_r| {
                (
                    roi.clone(),
                    ImpactEntry {
                        b_o,
                        b_r,
                        r: low_level_impact(b_o, b_r),
                    },
                )
            })
        })
        .collect();
    ImpactReport {
        per_roi,
        feature_kind: feature_kind.to_string(),
        model_id: model_id.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impact_arithmetic() {
        assert!((low_level_impact(0.5, 0.35).unwrap() - 30.0).abs() < 1e-12);
        assert_eq!(low_level_impact(0.3, 0.3), Some(0.0));
        assert!((low_level_impact(0.4, 0.44).unwrap() + 10.0).abs() < 1e-12);
        assert_eq!(low_level_impact(1e-12, 0.2), None);
    }

    #[test]
    fn zero_features_remove_means_only() {
        let reps = Matrix::from_fn(20, 3, |r, c| (r * (c + 1)) as f64 + c as f64);
        let low = Matrix::zeros(20, 4);
        let res = residualize(&reps, &reps, &low, &low, &[1.0]).unwrap();
        assert!(res.alphas.is_none());
        let means = column_means(&reps);
        let expected = subtract_means(&reps, &means);
        assert!((res.train - &expected).norm() < 1e-12);
        assert!((res.test - expected).norm() < 1e-12);
    }

    #[test]
    fn mismatched_columns() {
        let a = Matrix::zeros(10, 3);
        let b = Matrix::zeros(10, 2);
        assert!(matches!(
            residualize(&a, &b, &a, &a, &[1.0]),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            residualize(&a, &a, &a, &b, &[1.0]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn report_pairs_rois() {
        let o: BTreeMap<String, f64> = [("a".to_string(), 0.5), ("b".to_string(), 0.0)].into();
        let r: BTreeMap<String, f64> = [("a".to_string(), 0.25), ("b".to_string(), 0.1)].into();
        let rep = impact_report(&o, &r, "diphone", "m");
        assert_eq!(rep.per_roi["a"].r, Some(50.0));
        assert_eq!(rep.per_roi["b"].r, None);
    }
}
