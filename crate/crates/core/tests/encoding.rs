mod common;

use braintools::ceiling::NoiseCeilingMap;
use braintools::encoding::{
    columnwise_pearson, fit_and_evaluate, logspace, normalized_alignment, pearson_r, ridge_fit,
    select_alphas, FoldScheme, RidgeConfig, RidgeSolver,
};
use braintools::lowlevel::low_level_impact;
use braintools::tensorio::RoiMask;
use braintools::Matrix;
use rand::Rng;

fn normal_equation_residual(x: &Matrix, y: &Matrix, w: &Matrix, alpha: f64) -> f64 {
    let xty = x.transpose() * y;
    let lhs = (x.transpose() * x + Matrix::identity(x.ncols(), x.ncols()) * alpha) * w;
    (lhs - &xty).norm() / xty.norm()
}

fn dense_solve(x: &Matrix, y: &Matrix, alpha: f64) -> Matrix {
    let a = x.transpose() * x + Matrix::identity(x.ncols(), x.ncols()) * alpha;
    a.cholesky().unwrap().solve(&(x.transpose() * y))
}

#[test]
fn ridge_satisfies_normal_equations() {
    for seed in 0..20 {
        let mut r = common::rng(seed, "ridge");
        let x = common::randn(&mut r, 200, 50);
        let y = common::randn(&mut r, 200, 7);
        for alpha in [1e-3, 1.0, 1e3] {
            let w = ridge_fit(&x, &y, alpha).unwrap();
            assert!(normal_equation_residual(&x, &y, &w, alpha) < 1e-8);
        }
    }
}

#[test]
fn shared_factorization_matches_dense_solves() {
    let mut r = common::rng(1, "shared");
    let x = common::randn(&mut r, 200, 50);
    let y = common::randn(&mut r, 200, 6);
    let solver = RidgeSolver::new(&x).unwrap();
    let alphas = logspace(1e-2, 1e4, 7);
    for &a in &alphas {
        let w = solver.weights(&y, a).unwrap();
        let d = dense_solve(&x, &y, a);
        assert!(common::max_abs_diff(&w, &d) < 1e-8 * d.norm().max(1.0));
    }
    let per: Vec<f64> = (0..6).map(|j| alphas[j]).collect();
    let w = solver.weights_per_target(&y, &per).unwrap();
    for (j, &a) in per.iter().enumerate() {
        let d = dense_solve(&x, &y.columns(j, 1).into_owned(), a);
        assert!((w.column(j) - d.column(0)).norm() < 1e-8 * d.norm().max(1.0));
    }
}

#[test]
fn weight_norm_shrinks_with_alpha() {
    for seed in 0..100 {
        let mut r = common::rng(seed, "mono");
        let x = common::randn(&mut r, 60, 20);
        let y = common::randn(&mut r, 60, 1);
        let solver = RidgeSolver::new(&x).unwrap();
        let norms: Vec<f64> = logspace(1e-3, 1e5, 17)
            .into_iter()
            .map(|a| solver.weights(&y, a).unwrap().norm())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{norms:?}");
    }
}

#[test]
fn rank_deficient_design_is_handled() {
    let mut r = common::rng(2, "rank");
    let a = common::randn(&mut r, 40, 3);
    let x = Matrix::from_fn(40, 6, |i, j| a[(i, j % 3)]);
    let y = common::randn(&mut r, 40, 2);
    let w = ridge_fit(&x, &y, 0.5).unwrap();
    assert!(normal_equation_residual(&x, &y, &w, 0.5) < 1e-8);
    assert!(ridge_fit(&Matrix::zeros(5, 2), &y.rows(0, 5).into_owned(), 1.0).is_err());
}

#[test]
fn pearson_invariances() {
    let mut r = common::rng(3, "pearson");
    let a = common::randn_vec(&mut r, 50);
    let b: Vec<f64> = a.iter().map(|v| v + 0.5 * r.random::<f64>()).collect();
    let base = pearson_r(&a, &b).unwrap();
    let affine: Vec<f64> = a.iter().map(|v| 3.0 * v - 7.0).collect();
    assert!((pearson_r(&affine, &b).unwrap() - base).abs() < 1e-12);
    let flipped: Vec<f64> = a.iter().map(|v| -v).collect();
    assert!((pearson_r(&flipped, &b).unwrap() + base).abs() < 1e-12);
    assert!((pearson_r(&b, &a).unwrap() - base).abs() < 1e-15);
    assert!((pearson_r(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert!(base.abs() <= 1.0);
}

#[test]
fn constant_columns_score_zero() {
    let pred = Matrix::from_row_slice(4, 2, &[1.0, 2.0, 1.0, 3.0, 1.0, 1.0, 1.0, 5.0]);
    let target = Matrix::from_row_slice(4, 2, &[0.0, 1.0, 1.0, 2.0, 2.0, 0.0, 3.0, 4.0]);
    let (r, constant) = columnwise_pearson(&pred, &target).unwrap();
    assert_eq!(constant, 1);
    assert_eq!(r[0], 0.0);
    assert!(r[1] > 0.0);
}

#[test]
fn alignment_and_impact_match_loops() {
    for seed in 0..1000u64 {
        let mut r = common::rng(seed, "eq");
        let v = r.random_range(2..40);
        let rho: Vec<f64> = (0..v).map(|_| r.random_range(-0.2..0.9)).collect();
        let nc: Vec<f64> = (0..v).map(|_| r.random_range(0.0..1.0)).collect();
        let map = NoiseCeilingMap::new(nc.clone(), 0.4).unwrap();
        let idx: Vec<usize> = (0..v).filter(|_| r.random_bool(0.6)).collect();
        if idx.is_empty() {
            continue;
        }
        let roi = RoiMask::new("roi", idx.clone()).unwrap();
        let (mut sum, mut count) = (0.0, 0);
        for &i in &idx {
            if nc[i] > 0.4 {
                sum += rho[i] / nc[i];
                count += 1;
            }
        }
        match normalized_alignment(&rho, &map, &roi) {
            Ok(a) => {
                let want = sum / count as f64;
                assert!((a.b - want).abs() < 1e-12);
                let b_r = a.b * r.random_range(0.0..1.2);
                let got = low_level_impact(a.b, b_r).unwrap();
                assert!((got - 100.0 * (a.b - b_r) / a.b).abs() < 1e-12 * got.abs().max(1.0));
            }
            Err(_) => assert_eq!(count, 0),
        }
    }
}

/// Linear voxels `y = x·w + e` with known per-voxel noise.
fn linear_voxels(seed: u64, n: usize, p: usize, noise: &[f64]) -> (Matrix, Matrix) {
    let mut r = common::rng(seed, "voxels");
    let x = common::randn(&mut r, n, p);
    let w = common::randn(&mut r, p, noise.len()) / (p as f64).sqrt();
    let e = common::randn(&mut r, n, noise.len());
    let y = &x * &w + Matrix::from_fn(n, noise.len(), |i, j| e[(i, j)] * noise[j]);
    (x, y)
}

#[test]
fn noisier_voxels_get_larger_alphas() {
    let noise: Vec<f64> = [0.1; 10].into_iter().chain([10.0; 10]).collect();
    let (x, y) = linear_voxels(4, 300, 40, &noise);
    let cfg = RidgeConfig {
        alpha_grid: logspace(1e-2, 1e5, 15),
        folds: FoldScheme::Blocks(5),
        ..RidgeConfig::default()
    };
    let sel = select_alphas(&x, &y, &[300], &cfg).unwrap();
    let geo = |s: &[f64]| (s.iter().map(|a| a.ln()).sum::<f64>() / s.len() as f64).exp();
    let clean = geo(&sel.alpha_per_voxel[..10]);
    let noisy = geo(&sel.alpha_per_voxel[10..]);
    assert!(noisy > 10.0 * clean, "clean {clean} noisy {noisy}");
}

#[test]
fn leave_one_story_out_uses_story_boundaries() {
    let (x, y) = linear_voxels(5, 120, 5, &[0.5; 3]);
    let sel = select_alphas(&x, &y, &[40, 40, 40], &RidgeConfig::default()).unwrap();
    assert_eq!(sel.cv_scores.shape(), (10, 3));
    assert!(select_alphas(&x, &y, &[40, 40], &RidgeConfig::default()).is_err());
}

#[test]
fn null_targets_give_zero_correlation() {
    let mut r = common::rng(6, "null");
    let x = common::randn(&mut r, 800, 20);
    let y = common::randn(&mut r, 800, 200);
    let res = fit_and_evaluate(
        &x.rows(0, 600).into_owned(),
        &y.rows(0, 600).into_owned(),
        &[200, 200, 200],
        &x.rows(600, 200).into_owned(),
        &y.rows(600, 200).into_owned(),
        &RidgeConfig::default(),
    )
    .unwrap();
    assert!(
        common::mean(&res.rho).abs() < 0.02,
        "{}",
        common::mean(&res.rho)
    );
}

#[test]
fn held_out_correlation_matches_attenuation() {
    for snr in [0.5f64, 1.0, 2.0] {
        let (x, y) = linear_voxels(7, 2000, 10, &vec![(1.0 / snr).sqrt(); 100]);
        let res = fit_and_evaluate(
            &x.rows(0, 1600).into_owned(),
            &y.rows(0, 1600).into_owned(),
            &[400; 4],
            &x.rows(1600, 400).into_owned(),
            &y.rows(1600, 400).into_owned(),
            &RidgeConfig::default(),
        )
        .unwrap();
        // signal variance per voxel is |w|² ≈ 1 on average
        let want = (snr / (1.0 + snr)).sqrt();
        let got = common::mean(&res.rho);
        assert!((got - want).abs() < 0.06, "snr {snr}: {got} vs {want}");
    }
}
