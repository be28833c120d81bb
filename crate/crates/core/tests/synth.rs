mod common;

use braintools::ceiling::estimate_noise_ceiling;
use braintools::pairing::{fir_expand, lanczos_downsample, tr_centers, PairingConfig};
use braintools::synth::{generate, write_dataset, SynthSpec};
use braintools::tensorio::{load_manifest, Split};
use braintools::Matrix;

fn variance(m: &Matrix) -> f64 {
    let n = m.len() as f64;
    let mean = m.sum() / n;
    m.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

#[test]
fn variance_shares_match() {
    for share in [0.0, 0.3, 1.0] {
        let spec = SynthSpec {
            n_trs: 2000,
            n_voxels: 100,
            snr: 2.0,
            lowlevel_share: share,
            n_repeats: 2,
            seed: 11,
            ..SynthSpec::default()
        };
        let ds = generate(&spec).unwrap();
        let cfg = PairingConfig {
            tr_s: spec.tr_s,
            stride_s: 1.0 / spec.stim_rate_hz,
            ..PairingConfig::default()
        };
        let (mut low_var, mut sem_var, mut noise_var, mut n) = (0.0, 0.0, 0.0, 0.0);
        for s in &ds.stories {
            let t = tr_centers(s.runs[0].n_trs(), spec.tr_s);
            let design = |f| {
                fir_expand(
                    &lanczos_downsample(f, &t, &cfg).unwrap(),
                    &cfg.fir_delays_trs,
                )
                .unwrap()
            };
            let sig_low = design(&s.lowlevel) * &ds.w_lowlevel;
            let sig_sem = design(&s.semantic) * &ds.w_semantic;
            let noise = &s.runs[0].data - &sig_low - &sig_sem;
            let k = s.runs[0].n_trs() as f64;
            low_var += k * variance(&sig_low);
            sem_var += k * variance(&sig_sem);
            noise_var += k * variance(&noise);
            n += k;
        }
        let (low_var, sem_var, noise_var) = (low_var / n, sem_var / n, noise_var / n);
        assert!(
            (low_var - share).abs() <= 0.05 * share.max(0.01),
            "share {share}: {low_var}"
        );
        assert!(
            (sem_var - (1.0 - share)).abs() <= 0.05 * (1.0 - share).max(0.01),
            "{sem_var}"
        );
        assert!((noise_var - 0.5).abs() < 0.05 * 0.5, "{noise_var}");
    }
}

#[test]
fn repeats_recover_true_ceiling() {
    let spec = SynthSpec {
        n_trs: 5000,
        n_voxels: 200,
        n_stories: 1,
        snr: 0.8,
        n_repeats: 10,
        seed: 3,
        ..SynthSpec::default()
    };
    let ds = generate(&spec).unwrap();
    assert_eq!(ds.repeats().len(), 10);
    let map = estimate_noise_ceiling(ds.repeats(), 0.4).unwrap();
    let mae = map
        .nc
        .iter()
        .zip(&ds.true_nc)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / map.nc.len() as f64;
    assert!(mae <= 0.05, "{mae}");

    let clean = SynthSpec {
        snr: 1e6,
        n_trs: 1000,
        n_voxels: 20,
        ..spec
    };
    let map = estimate_noise_ceiling(generate(&clean).unwrap().repeats(), 0.4).unwrap();
    assert!(map.nc.iter().all(|v| (v - 1.0).abs() < 0.01));
}

#[test]
fn splits_and_shapes() {
    let spec = SynthSpec {
        n_trs: 503,
        n_voxels: 7,
        n_repeats: 3,
        ..SynthSpec::default()
    };
    let ds = generate(&spec).unwrap();
    let splits: Vec<Split> = ds.stories.iter().map(|s| s.split).collect();
    assert_eq!(
        splits,
        vec![
            Split::Train,
            Split::Train,
            Split::Train,
            Split::Val,
            Split::Test
        ]
    );
    assert_eq!(
        ds.stories.iter().map(|s| s.runs[0].n_trs()).sum::<usize>(),
        503
    );
    assert_eq!(ds.test_story().runs.len(), 3);
    assert_eq!(
        ds.stories[0].features.n_dims(),
        spec.n_feature_dims + spec.n_lowlevel_dims
    );
    assert!(generate(&SynthSpec {
        lowlevel_share: 1.5,
        ..spec.clone()
    })
    .is_err());
    assert!(generate(&SynthSpec { n_trs: 20, ..spec }).is_err());
}

fn tree_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn fixed_seed_is_byte_identical() {
    let spec = SynthSpec {
        n_trs: 300,
        n_voxels: 12,
        n_repeats: 3,
        seed: 99,
        ..SynthSpec::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = write_dataset(&generate(&spec).unwrap(), a.path()).unwrap();
    write_dataset(&generate(&spec).unwrap(), b.path()).unwrap();
    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
    assert!(load_manifest(m).is_ok());
    let other = generate(&SynthSpec {
        seed: 100,
        ..spec.clone()
    })
    .unwrap();
    assert_ne!(
        other.stories[0].runs[0].data,
        generate(&spec).unwrap().stories[0].runs[0].data
    );
}
