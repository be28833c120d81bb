mod common;

use braintools::ceiling::{
    apply_mask, estimate_noise_ceiling, estimate_noise_ceiling_matrices, NoiseCeilingMap,
};
use braintools::tensorio::FmriRun;
use braintools::Matrix;
use rand::Rng;

/// `R` repeats of `signal + noise` with per-voxel signal fraction `f`; the
/// analytic ceiling is `sqrt(f)`.
fn repeats(seed: u64, n: usize, fractions: &[f64], r: usize) -> (Vec<Matrix>, Vec<f64>) {
    let mut rng = common::rng(seed, "signal");
    let sig = common::randn(&mut rng, n, fractions.len());
    let reps = (0..r)
        .map(|k| {
            let mut rng = common::rng(seed, &format!("noise/{k}"));
            let e = common::randn(&mut rng, n, fractions.len());
            Matrix::from_fn(n, fractions.len(), |t, v| {
                fractions[v].sqrt() * sig[(t, v)] + (1.0 - fractions[v]).sqrt() * e[(t, v)]
            })
        })
        .collect();
    (reps, fractions.iter().map(|f| f.sqrt()).collect())
}

#[test]
fn monte_carlo_recovers_analytic_ceiling() {
    let mut rng = common::rng(0, "fractions");
    let fractions: Vec<f64> = (0..200).map(|_| rng.random_range(0.05..0.95)).collect();
    let (reps, truth) = repeats(1, 2000, &fractions, 10);
    let refs: Vec<&Matrix> = reps.iter().collect();
    let map = estimate_noise_ceiling_matrices(&refs, 0.4).unwrap();
    let mae = map
        .nc
        .iter()
        .zip(&truth)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / truth.len() as f64;
    assert!(mae < 0.05, "MAE {mae}");
}

#[test]
fn pure_noise_has_low_ceiling() {
    let (reps, _) = repeats(2, 2000, &[0.0; 100], 10);
    let refs: Vec<&Matrix> = reps.iter().collect();
    let map = estimate_noise_ceiling_matrices(&refs, 0.4).unwrap();
    assert!(common::mean(&map.nc) < 0.05);
    assert_eq!(map.n_kept(), 0);
    assert!(map.require_kept().is_err());
}

#[test]
fn bounded_and_constant_voxels_are_zero() {
    let (mut reps, _) = repeats(3, 100, &[0.5, 0.5, 0.99], 4);
    for m in &mut reps {
        m.column_mut(0).fill(2.0);
    }
    let refs: Vec<&Matrix> = reps.iter().collect();
    let map = estimate_noise_ceiling_matrices(&refs, 0.4).unwrap();
    assert_eq!(map.nc[0], 0.0);
    assert!(map.nc.iter().all(|v| (0.0..=1.0).contains(v)));
    // identical repeats give a ceiling of exactly 1
    let same = vec![&reps[0], &reps[0], &reps[0]];
    let map = estimate_noise_ceiling_matrices(&same, 0.4).unwrap();
    assert!((map.nc[1] - 1.0).abs() < 1e-12);
}

#[test]
fn invalid_inputs() {
    let a = Matrix::zeros(10, 3);
    assert!(estimate_noise_ceiling_matrices(&[&a], 0.4).is_err());
    let b = Matrix::zeros(9, 3);
    assert!(estimate_noise_ceiling_matrices(&[&a, &b], 0.4).is_err());
    let r1 = FmriRun::new(a.clone(), 2.0, "s1", "p", 0).unwrap();
    let r2 = FmriRun::new(a.clone(), 2.0, "s2", "p", 1).unwrap();
    assert!(estimate_noise_ceiling(&[r1, r2], 0.4).is_err());
}

#[test]
fn threshold_and_mask() {
    let map = NoiseCeilingMap::new(vec![0.1, 0.41, 0.7, 0.4], 0.4).unwrap();
    assert_eq!(map.keep_mask, vec![false, true, true, false]);
    let data = Matrix::from_fn(2, 4, |r, c| (10 * r + c) as f64);
    let (kept, idx) = apply_mask(&data, &map.keep_mask).unwrap();
    assert_eq!(idx, vec![1, 2]);
    assert_eq!(kept, Matrix::from_row_slice(2, 2, &[1.0, 2.0, 11.0, 12.0]));
}
