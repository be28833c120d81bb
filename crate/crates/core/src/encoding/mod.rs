//! Voxel-wise ridge encoding models.
//!
//! Features are z-scored and targets mean-centered with training
//! statistics. Each voxel gets its own penalty, chosen by cross-validated
//! Pearson correlation over leave-one-story-out folds, and models are scored
//! by held-out Pearson correlation.

mod alignment;
mod ridge;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::Matrix;
pub use alignment::{alignment_report, normalized_alignment, AlignmentReport, RoiAlignment};
pub use ridge::{ridge_fit, RidgeSolver};

/// `n` values log-spaced between `lo` and `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldScheme {
    /// One fold per training story.
    LeaveOneStoryOut,
    /// Contiguous row blocks.
    Blocks(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RidgeConfig {
    pub alpha_grid: Vec<f64>,
    pub folds: FoldScheme,
    /// Block count used when only one training story is available.
    pub fallback_folds: usize,
    pub standardize: bool,
    pub seed: u64,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            alpha_grid: logspace(1.0, 1e4, 10),
            folds: FoldScheme::LeaveOneStoryOut,
            fallback_folds: 5,
            standardize: true,
            seed: 0,
        }
    }
}

impl RidgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_grid.is_empty() {
            return Err(Error::input("alpha grid is empty"));
        }
        if self.alpha_grid.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::input("alphas must be positive and finite"));
        }
        if self.alpha_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("alpha grid must be strictly increasing"));
        }
        if let FoldScheme::Blocks(k) = self.folds {
            if k < 2 {
                return Err(Error::input("need at least 2 folds"));
            }
        }
        if self.fallback_folds < 2 {
            return Err(Error::input("need at least 2 fallback folds"));
        }
        Ok(())
    }
}

/// Column means and scales. Zero-variance columns keep scale 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix, scale: bool) -> Self {
        let n = x.nrows() as f64;
        let mean: Vec<f64> = x.column_iter().map(|c| c.sum() / n).collect();
        let scale = x
            .column_iter()
            .zip(&mean)
            .map(|(c, &m)| {
                if !scale {
                    return 1.0;
                }
                let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
                if sd > 1e-12 * (1.0 + m.abs()) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.mean.len() {
            return Err(Error::input(format!(
                "expected {} columns, got {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        Ok(Matrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            (x[(r, c)] - self.mean[c]) / self.scale[c]
        }))
    }
}

fn pearson_unchecked(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Sample Pearson correlation. A constant argument yields 0.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::input(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 3 {
        return Err(Error::input("pearson_r needs at least 3 samples"));
    }
    Ok(pearson_unchecked(a, b).unwrap_or_else(|| {
        log::debug!("constant series in pearson_r; reporting 0");
        0.0
    }))
}

/// Column-wise correlation between predictions and targets. Returns the
/// correlations and the number of columns that were constant.
pub fn columnwise_pearson(pred: &Matrix, target: &Matrix) -> Result<(Vec<f64>, usize)> {
    if pred.shape() != target.shape() {
        return Err(Error::input(format!(
            "prediction shape {:?} vs target shape {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.nrows() < 3 {
        return Err(Error::input("need at least 3 rows to correlate"));
    }
    let out: Vec<Option<f64>> = (0..pred.ncols())
        .into_par_iter()
        .map(|j| pearson_unchecked(pred.column(j).as_slice(), target.column(j).as_slice()))
        .collect();
    let constant = out.iter().filter(|r| r.is_none()).count();
    Ok((
        out.into_iter().map(|r| r.unwrap_or(0.0)).collect(),
        constant,
    ))
}

fn fold_ranges(
    n_rows: usize,
    story_lengths: &[usize],
    cfg: &RidgeConfig,
) -> Result<Vec<std::ops::Range<usize>>> {
    if story_lengths.iter().sum::<usize>() != n_rows {
        return Err(Error::input(format!(
            "story lengths sum to {}, design has {n_rows} rows",
            story_lengths.iter().sum::<usize>()
        )));
    }
    let blocks = |k: usize| -> Vec<std::ops::Range<usize>> {
        (0..k)
            .map(|i| (i * n_rows / k)..((i + 1) * n_rows / k))
            .collect()
    };
    let folds = match cfg.folds {
        FoldScheme::LeaveOneStoryOut if story_lengths.len() >= 2 => {
            let mut start = 0;
            story_lengths
                .iter()
                .map(|&len| {
                    let r = start..start + len;
                    start += len;
                    r
                })
                .collect()
        }
        FoldScheme::LeaveOneStoryOut => {
            log::warn!(
                "single training story; falling back to {} contiguous folds",
                cfg.fallback_folds
            );
            blocks(cfg.fallback_folds)
        }
        FoldScheme::Blocks(k) => blocks(k),
    };
    if folds.iter().any(|r| r.len() < 3 || n_rows - r.len() < 2) {
        return Err(Error::input(
            "every fold needs at least 3 held-out and 2 training rows",
        ));
    }
    Ok(folds)
}

fn rows_excluding(m: &Matrix, held: &std::ops::Range<usize>) -> Matrix {
    let idx: Vec<usize> = (0..m.nrows()).filter(|r| !held.contains(r)).collect();
    m.select_rows(idx.iter())
}

fn center_columns(y: &Matrix) -> (Matrix, Vec<f64>) {
    let n = y.nrows() as f64;
    let means: Vec<f64> = y.column_iter().map(|c| c.sum() / n).collect();
    let centered = Matrix::from_fn(y.nrows(), y.ncols(), |r, c| y[(r, c)] - means[c]);
    (centered, means)
}

/// Penalty choice per voxel with the cross-validation curves behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSelection {
    pub alpha_per_voxel: Vec<f64>,
    /// `n_alphas × n_voxels` mean held-out correlation.
    pub cv_scores: Matrix,
}

/// Picks, for every voxel, the grid penalty with the best mean held-out
/// Pearson correlation. Ties go to the larger penalty.
pub fn select_alphas(
    x_train: &Matrix,
    y_train: &Matrix,
    story_lengths: &[usize],
    cfg: &RidgeConfig,
) -> Result<AlphaSelection> {
    cfg.validate()?;
    if x_train.nrows() != y_train.nrows() {
        return Err(Error::input("design and targets have different row counts"));
    }
    let folds = fold_ranges(x_train.nrows(), story_lengths, cfg)?;
    let grid = &cfg.alpha_grid;
    let n_vox = y_train.ncols();
    let mut scores = Matrix::zeros(grid.len(), n_vox);

    for held in &folds {
        let x_fit = rows_excluding(x_train, held);
        let std = Standardizer::fit(&x_fit, cfg.standardize);
        let x_fit = std.apply(&x_fit)?;
        let x_held = std.apply(&x_train.rows(held.start, held.len()).into_owned())?;
        let (y_fit, _) = center_columns(&rows_excluding(y_train, held));
        let y_held = y_train.rows(held.start, held.len()).into_owned();

        let solver = RidgeSolver::new(&x_fit)?;
        let uty = solver.project_targets(&y_fit)?;
        let xv = &x_held * solver.right_vectors();
        for (ai, &alpha) in grid.iter().enumerate() {
            let pred = solver.predict_projected(&xv, &uty, alpha);
            let (r, _) = columnwise_pearson(&pred, &y_held)?;
            for (v, rv) in r.into_iter().enumerate() {
                scores[(ai, v)] += rv;
            }
        }
    }
    scores /= folds.len() as f64;

    let alpha_per_voxel = (0..n_vox)
        .map(|v| {
            let mut best = 0;
            for ai in 1..grid.len() {
                if scores[(ai, v)] >= scores[(best, v)] {
                    best = ai;
                }
            }
            grid[best]
        })
        .collect();
    Ok(AlphaSelection {
        alpha_per_voxel,
        cv_scores: scores,
    })
}

/// A fitted encoding model.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingModel {
    /// `n_features × n_voxels`, acting on standardized features.
    pub weights: Matrix,
    pub alpha_per_voxel: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub cv_scores: Matrix,
}

impl EncodingModel {
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let std = Standardizer {
            mean: self.feature_mean.clone(),
            scale: self.feature_std.clone(),
        };
        let mut pred = std.apply(x)? * &self.weights;
        for (mut col, m) in pred.column_iter_mut().zip(&self.target_mean) {
            col.add_scalar_mut(*m);
        }
        Ok(pred)
    }
}

/// Model plus held-out scores.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingResult {
    pub model: EncodingModel,
    /// Held-out Pearson correlation per voxel.
    pub rho: Vec<f64>,
}

pub fn fit_encoding(
    x_train: &Matrix,
    y_train: &Matrix,
    story_lengths: &[usize],
    cfg: &RidgeConfig,
) -> Result<EncodingModel> {
    let selection = select_alphas(x_train, y_train, story_lengths, cfg)?;
    let std = Standardizer::fit(x_train, cfg.standardize);
    let xs = std.apply(x_train)?;
    let (yc, target_mean) = center_columns(y_train);
    let solver = RidgeSolver::new(&xs)?;
    let weights = solver.weights_per_target(&yc, &selection.alpha_per_voxel)?;
    Ok(EncodingModel {
        weights,
        alpha_per_voxel: selection.alpha_per_voxel,
        feature_mean: std.mean,
        feature_std: std.scale,
        target_mean,
        cv_scores: selection.cv_scores,
    })
}

pub fn evaluate_encoding(
    model: &EncodingModel,
    x_test: &Matrix,
    y_test: &Matrix,
) -> Result<Vec<f64>> {
    if x_test.nrows() != y_test.nrows() {
        return Err(Error::input(format!(
            "test design has {} rows, targets have {}",
            x_test.nrows(),
            y_test.nrows()
        )));
    }
    if y_test.ncols() != model.weights.ncols() {
        return Err(Error::input(format!(
            "model predicts {} voxels, test targets have {}",
            model.weights.ncols(),
            y_test.ncols()
        )));
    }
    let pred = model.predict(x_test)?;
    let (rho, constant) = columnwise_pearson(&pred, y_test)?;
    if constant > 0 {
        log::warn!("{constant} voxel(s) had constant predictions or responses; rho set to 0");
    }
    Ok(rho)
}

pub fn fit_and_evaluate(
    x_train: &Matrix,
    y_train: &Matrix,
    story_lengths: &[usize],
    x_test: &Matrix,
    y_test: &Matrix,
    cfg: &RidgeConfig,
) -> Result<EncodingResult> {
    let model = fit_encoding(x_train, y_train, story_lengths, cfg)?;
    let rho = evaluate_encoding(&model, x_test, y_test)?;
    Ok(EncodingResult { model, rho })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_basic_cases() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson_r(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson_r(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson_r(&a, &[2.0; 4]).unwrap(), 0.0);
        assert!(matches!(
            pearson_r(&a, &[1.0, 2.0, 3.0]),
            Err(Error::Input(_))
        ));
        assert!(pearson_r(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pearson_hand_value() {
        // means 2.5 and 2.75; Sxy = 6.5, Sxx = 5, Syy = 8.75
        let expected = 6.5 / (5.0f64 * 8.75).sqrt();
        let r = pearson_r(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 5.0]).unwrap();
        assert!((r - expected).abs() < 1e-14);
        assert!((r - 0.982_707_63).abs() < 1e-8);
    }

    #[test]
    fn logspace_grid() {
        let g = logspace(1.0, 1e4, 10);
        assert_eq!(g.len(), 10);
        assert!((g[0] - 1.0).abs() < 1e-12);
        assert!((g[9] - 1e4).abs() < 1e-8);
        assert!(RidgeConfig::default().validate().is_ok());
    }

    #[test]
    fn config_rejects_bad_grids() {
        let mut c = RidgeConfig {
            alpha_grid: vec![],
            ..RidgeConfig::default()
        };
        assert!(c.validate().is_err());
        c.alpha_grid = vec![10.0, 1.0];
        assert!(c.validate().is_err());
        c.alpha_grid = vec![0.0, 1.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let x = Matrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        let s = Standardizer::fit(&x, true);
        assert_eq!(s.scale[1], 1.0);
        let z = s.apply(&x).unwrap();
        assert!(z.column(1).iter().all(|&v| v == 0.0));
        assert!(z.column(0).sum().abs() < 1e-12);
    }

    #[test]
    fn fold_construction() {
        let cfg = RidgeConfig::default();
        let f = fold_ranges(30, &[10, 12, 8], &cfg).unwrap();
        assert_eq!(f, vec![0..10, 10..22, 22..30]);
        let f = fold_ranges(30, &[30], &cfg).unwrap();
        assert_eq!(f.len(), 5);
        assert!(fold_ranges(30, &[10, 10], &cfg).is_err());
    }

    #[test]
    fn shape_mismatch_in_evaluation() {
        let x = Matrix::from_fn(40, 2, |r, c| ((r * 3 + c * 7) % 11) as f64);
        let y = Matrix::from_fn(40, 3, |r, c| {
            x[(r, 0)] * (c as f64 + 1.0) + ((r * 5) % 3) as f64
        });
        let model = fit_encoding(&x, &y, &[20, 20], &RidgeConfig::default()).unwrap();
        assert!(evaluate_encoding(&model, &x, &y.columns(0, 2).into_owned()).is_err());
        assert!(evaluate_encoding(&model, &x.rows(0, 30).into_owned(), &y).is_err());
    }
}
