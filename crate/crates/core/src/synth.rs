//! Synthetic fMRI-like datasets with known signal composition.
//!
//! Semantic and low-level feature streams are white Gaussian at the stimulus
//! rate. Each voxel's response is
//! `Y_r = D_sem · W_sem + D_low · W_low + ε_r`, where `D_*` are the
//! Lanczos-downsampled, FIR-expanded streams. Weights are rescaled per voxel
//! so the two signal parts have empirical variance `1 − share` and `share`;
//! noise has variance `1 / snr`, so the ceiling is `sqrt(snr / (1 + snr))`.
//!
//! The model representation handed to the pipeline is `[sem | low · A]` for
//! a random square mixing matrix `A`, so the low-level part of the
//! representation is recoverable from the low-level features alone.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairing::{fir_expand, lanczos_downsample, tr_centers, PairingConfig};
use crate::rng::substream;
use crate::tensorio::{
    save_feature_series, save_tensor, save_vector, vstack, write_json, DatasetManifest,
    FeatureSeries, FmriRun, Matrix, RoiMask, Split, StoryEntry, DEFAULT_TR_S,
};

pub const LOWLEVEL_NAME: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Total TRs across all stories.
    pub n_trs: usize,
    pub n_voxels: usize,
    /// Semantic feature dimensions.
    pub n_feature_dims: usize,
    pub n_lowlevel_dims: usize,
    pub snr: f64,
    pub lowlevel_share: f64,
    /// Presentations of the test story.
    pub n_repeats: usize,
    pub n_stories: usize,
    pub stim_rate_hz: f64,
    pub tr_s: f64,
    pub participant_id: String,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_trs: 2000,
            n_voxels: 500,
            n_feature_dims: 8,
            n_lowlevel_dims: 4,
            snr: 1.0,
            lowlevel_share: 0.0,
            n_repeats: 10,
            n_stories: 5,
            stim_rate_hz: 10.0,
            tr_s: DEFAULT_TR_S,
            participant_id: "synth".into(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_trs", self.n_trs),
            ("n_voxels", self.n_voxels),
            ("n_feature_dims", self.n_feature_dims),
            ("n_lowlevel_dims", self.n_lowlevel_dims),
            ("n_repeats", self.n_repeats),
            ("n_stories", self.n_stories),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::input(format!("{name} must be positive")));
        }
        if self.n_trs / self.n_stories < 10 {
            return Err(Error::input(format!(
                "{} TRs over {} stories leaves fewer than 10 TRs per story",
                self.n_trs, self.n_stories
            )));
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(Error::input(format!(
                "snr must be positive, got {}",
                self.snr
            )));
        }
        if !(0.0..=1.0).contains(&self.lowlevel_share) {
            return Err(Error::input(format!(
                "lowlevel_share must lie in [0, 1], got {}",
                self.lowlevel_share
            )));
        }
        if !(self.stim_rate_hz > 0.0 && self.tr_s > 0.0) {
            return Err(Error::input("stimulus rate and TR must be positive"));
        }
        Ok(())
    }

    pub fn true_nc(&self) -> f64 {
        (self.snr / (1.0 + self.snr)).sqrt()
    }

    pub fn story_lengths(&self) -> Vec<usize> {
        let base = self.n_trs / self.n_stories;
        let mut lens = vec![base; self.n_stories];
        lens[self.n_stories - 1] += self.n_trs - base * self.n_stories;
        lens
    }

    fn splits(&self) -> Vec<Split> {
        let n = self.n_stories;
        (0..n)
            .map(|i| match (n, i) {
                (_, i) if i == n - 1 => Split::Test,
                (n, i) if n >= 3 && i == n - 2 => Split::Val,
                _ => Split::Train,
            })
            .collect()
    }

    fn pairing(&self) -> PairingConfig {
        PairingConfig {
            tr_s: self.tr_s,
            stride_s: 1.0 / self.stim_rate_hz,
            ..PairingConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthStory {
    pub story_id: String,
    pub split: Split,
    /// Model representation `[sem | low · A]` at the stimulus rate.
    pub features: FeatureSeries,
    pub semantic: FeatureSeries,
    pub lowlevel: FeatureSeries,
    /// One run for training stories, `n_repeats` for the test story.
    pub runs: Vec<FmriRun>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub stories: Vec<SynthStory>,
    pub w_semantic: Matrix,
    pub w_lowlevel: Matrix,
    pub mixing: Matrix,
    pub true_nc: Vec<f64>,
}

impl SynthDataset {
    pub fn test_story(&self) -> &SynthStory {
        self.stories.last().expect("validated spec has stories")
    }

    pub fn repeats(&self) -> &[FmriRun] {
        &self.test_story().runs
    }
}

fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize, sd: f64) -> Matrix {
    let v: Vec<f64> = (0..rows * cols)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_row_slice(rows, cols, &v)
}

fn column_variances(m: &Matrix) -> Vec<f64> {
    let n = m.nrows() as f64;
    m.column_iter()
        .map(|c| {
            let mean = c.sum() / n;
            c.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
        })
        .collect()
}

/// Scales each column of `w` so `design · w` has variance `target`.
fn rescale(w: &mut Matrix, design: &Matrix, target: f64) {
    let var = column_variances(&(design * &*w));
    for (mut col, v) in w.column_iter_mut().zip(var) {
        let k = if target > 0.0 && v > 0.0 {
            (target / v).sqrt()
        } else {
            0.0
        };
        col *= k;
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let cfg = spec.pairing();
    let seed = spec.seed;
    let lens = spec.story_lengths();
    let ids: Vec<String> = (0..spec.n_stories)
        .map(|i| format!("story_{i:02}"))
        .collect();

    let mut sem_series = Vec::new();
    let mut low_series = Vec::new();
    let mut sem_design = Vec::new();
    let mut low_design = Vec::new();
    for (id, &len) in ids.iter().zip(&lens) {
        let n_samples = (len as f64 * spec.tr_s * spec.stim_rate_hz).ceil() as usize;
        let sem = gaussian(
            &mut substream(seed, &format!("semantic/{id}")),
            n_samples,
            spec.n_feature_dims,
            1.0,
        );
        let low = gaussian(
            &mut substream(seed, &format!("lowlevel/{id}")),
            n_samples,
            spec.n_lowlevel_dims,
            1.0,
        );
        let sem = FeatureSeries::new(sem, spec.stim_rate_hz, 0.0, "semantic")?;
        let low = FeatureSeries::new(low, spec.stim_rate_hz, 0.0, "lowlevel")?;
        let centers = tr_centers(len, spec.tr_s);
        sem_design.push(fir_expand(
            &lanczos_downsample(&sem, &centers, &cfg)?,
            &cfg.fir_delays_trs,
        )?);
        low_design.push(fir_expand(
            &lanczos_downsample(&low, &centers, &cfg)?,
            &cfg.fir_delays_trs,
        )?);
        sem_series.push(sem);
        low_series.push(low);
    }

    let n_delays = cfg.fir_delays_trs.len();
    let mut w_sem = gaussian(
        &mut substream(seed, "weights/semantic"),
        spec.n_feature_dims * n_delays,
        spec.n_voxels,
        1.0,
    );
    let mut w_low = gaussian(
        &mut substream(seed, "weights/lowlevel"),
        spec.n_lowlevel_dims * n_delays,
        spec.n_voxels,
        1.0,
    );
    let all_sem = vstack(&sem_design.iter().collect::<Vec<_>>())?;
    let all_low = vstack(&low_design.iter().collect::<Vec<_>>())?;
    rescale(&mut w_sem, &all_sem, 1.0 - spec.lowlevel_share);
    rescale(&mut w_low, &all_low, spec.lowlevel_share);

    let mixing = gaussian(
        &mut substream(seed, "mixing"),
        spec.n_lowlevel_dims,
        spec.n_lowlevel_dims,
        1.0 / (spec.n_lowlevel_dims as f64).sqrt(),
    );
    let noise_sd = (1.0 / spec.snr).sqrt();
    let splits = spec.splits();

    let mut stories = Vec::with_capacity(spec.n_stories);
    for (i, id) in ids.iter().enumerate() {
        let signal = &sem_design[i] * &w_sem + &low_design[i] * &w_low;
        let n_runs = if splits[i] == Split::Test {
            spec.n_repeats
        } else {
            1
        };
        let runs = (0..n_runs)
            .into_par_iter()
            .map(|r| {
                let mut rng = substream(seed, &format!("noise/{id}/{r}"));
                let data = &signal + gaussian(&mut rng, signal.nrows(), signal.ncols(), noise_sd);
                FmriRun::new(data, spec.tr_s, id.clone(), spec.participant_id.clone(), r)
            })
            .collect::<Result<Vec<_>>>()?;

        let (sem, low) = (&sem_series[i], &low_series[i]);
        let mixed = &low.data * &mixing;
        let mut reps = Matrix::zeros(sem.n_samples(), spec.n_feature_dims + spec.n_lowlevel_dims);
        reps.columns_mut(0, spec.n_feature_dims)
            .copy_from(&sem.data);
        reps.columns_mut(spec.n_feature_dims, spec.n_lowlevel_dims)
            .copy_from(&mixed);
        stories.push(SynthStory {
            story_id: id.clone(),
            split: splits[i],
            features: FeatureSeries::new(reps, spec.stim_rate_hz, 0.0, "features")?,
            semantic: sem.clone(),
            lowlevel: low.clone(),
            runs,
        });
    }

    Ok(SynthDataset {
        spec: spec.clone(),
        stories,
        w_semantic: w_sem,
        w_lowlevel: w_low,
        mixing,
        true_nc: vec![spec.true_nc(); spec.n_voxels],
    })
}

/// Writes the dataset as a manifest tree under `out` and returns the
/// manifest path. Ground truth goes to `out/truth`, ROI masks to
/// `out/rois` (`all`, `first_half`, `second_half`).
pub fn write_dataset(ds: &SynthDataset, out: impl AsRef<Path>) -> Result<PathBuf> {
    let out = out.as_ref();
    let mk = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    for sub in ["stories", "repeats", "truth", "rois"] {
        mk(&out.join(sub))?;
    }

    let mut entries = Vec::new();
    let mut repeats = Vec::new();
    for s in &ds.stories {
        let rel = PathBuf::from("stories").join(&s.story_id);
        mk(&out.join(&rel))?;
        save_feature_series(out.join(rel.join("features.npy")), &s.features, false)?;
        save_feature_series(out.join(rel.join("lowlevel.npy")), &s.lowlevel, false)?;
        save_tensor(out.join(rel.join("fmri.npy")), &s.runs[0].data)?;
        if s.split == Split::Test {
            for run in &s.runs {
                let p = PathBuf::from("repeats")
                    .join(format!("{}_rep{:02}.npy", s.story_id, run.repeat_index));
                save_tensor(out.join(&p), &run.data)?;
                repeats.push(p);
            }
        }
        entries.push(StoryEntry {
            story_id: s.story_id.clone(),
            features: rel.join("features.npy"),
            fmri: rel.join("fmri.npy"),
            split: s.split,
            lowlevel: [(LOWLEVEL_NAME.to_string(), rel.join("lowlevel.npy"))].into(),
        });
    }

    let truth = out.join("truth");
    save_tensor(truth.join("w_semantic.npy"), &ds.w_semantic)?;
    save_tensor(truth.join("w_lowlevel.npy"), &ds.w_lowlevel)?;
    save_tensor(truth.join("mixing.npy"), &ds.mixing)?;
    save_vector(truth.join("true_nc.npy"), &ds.true_nc)?;
    write_json(&truth.join("spec.json"), &ds.spec)?;

    let v = ds.spec.n_voxels;
    let half = v / 2;
    let rois = [
        ("all", (0..v).collect::<Vec<_>>()),
        ("first_half", (0..half).collect()),
        ("second_half", (half..v).collect()),
    ];
    for (label, idx) in rois {
        if !idx.is_empty() {
            RoiMask::new(label, idx)?.save(out.join("rois").join(format!("{label}.json")))?;
        }
    }

    let manifest = DatasetManifest {
        participant_id: ds.spec.participant_id.clone(),
        tr_s: ds.spec.tr_s,
        stories: entries,
        repeats,
    };
    let path = out.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}
