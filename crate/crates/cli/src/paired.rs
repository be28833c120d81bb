//! On-disk paired datasets: one directory per participant holding TR-level
//! features, low-level features and responses for every story.
//!
//! ```text
//! index.json
//! <story>/Y.npy
//! <story>/tr_times.npy
//! <story>/features/<layer>.npy
//! <story>/lowlevel/<name>.npy
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use braintools::pairing::{lanczos_downsample, tr_centers, PairingConfig};
use braintools::tensorio::{
    load_feature_series, load_tensor, save_tensor, save_vector, vstack, DatasetManifest,
    FeatureMeta, FeatureSeries, FmriRun, Matrix, Split, StoryEntry,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result, StageContext};
use crate::util::{read_json, write_json};

pub const INDEX: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedStory {
    pub story_id: String,
    pub split: Split,
    pub n_trs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedIndex {
    pub participant_id: String,
    pub tr_s: f64,
    pub fir_delays_trs: Vec<usize>,
    /// Features were already scaled with training statistics and must only
    /// be centered before fitting.
    #[serde(default)]
    pub prescaled: bool,
    pub layers: Vec<String>,
    #[serde(default)]
    pub lowlevel: Vec<String>,
    pub stories: Vec<PairedStory>,
}

impl PairedIndex {
    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join(INDEX))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(INDEX), self)
    }

    pub fn stories_in<'a>(
        &'a self,
        splits: &'a [Split],
    ) -> impl Iterator<Item = &'a PairedStory> + 'a {
        self.stories
            .iter()
            .filter(move |s| splits.contains(&s.split))
    }
}

pub fn y_path(dir: &Path, story: &str) -> PathBuf {
    dir.join(story).join("Y.npy")
}

pub fn layer_path(dir: &Path, story: &str, layer: &str) -> PathBuf {
    dir.join(story)
        .join("features")
        .join(format!("{layer}.npy"))
}

pub fn lowlevel_path(dir: &Path, story: &str, name: &str) -> PathBuf {
    dir.join(story).join("lowlevel").join(format!("{name}.npy"))
}

pub(crate) fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| CliError::io(p, e))
}

/// Layer name → tensor path for a story's feature entry (a file, or a
/// directory of `.npy` files).
fn layer_files(features: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let stem = |p: &Path| {
        p.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    if features.is_dir() {
        let mut out = BTreeMap::new();
        let entries = std::fs::read_dir(features).map_err(|e| CliError::io(features, e))?;
        for e in entries {
            let p = e.map_err(|e| CliError::io(features, e))?.path();
            if p.extension().is_some_and(|x| x == "npy") {
                out.insert(stem(&p), p);
            }
        }
        if out.is_empty() {
            return Err(CliError::Config(format!(
                "feature directory {} holds no .npy files",
                features.display()
            )));
        }
        Ok(out)
    } else {
        Ok([(stem(features), features.to_path_buf())].into())
    }
}

/// Resamples a stimulus-rate series (or passes through a TR-aligned one)
/// to one row per TR center.
pub fn to_tr_rate(
    series: &FeatureSeries,
    meta: &FeatureMeta,
    n_trs: usize,
    cfg: &PairingConfig,
) -> braintools::Result<Matrix> {
    if meta.tr_aligned {
        if series.n_samples() != n_trs {
            return Err(braintools::Error::Input(format!(
                "TR-aligned features {:?} have {} rows for {n_trs} TRs",
                series.name,
                series.n_samples()
            )));
        }
        return Ok(series.data.clone());
    }
    let needed = n_trs as f64 * cfg.tr_s - cfg.tr_s;
    if series.end_time() < needed {
        return Err(braintools::Error::Input(format!(
            "features {:?} end at {:.3} s but the run needs {:.3} s",
            series.name,
            series.end_time(),
            needed
        )));
    }
    lanczos_downsample(series, &tr_centers(n_trs, cfg.tr_s), cfg)
}

/// Timing assumed for feature files without a sidecar: one row per stride,
/// row `k` ending at `T + k·W`.
pub fn default_meta(cfg: &PairingConfig) -> FeatureMeta {
    FeatureMeta {
        sample_rate_hz: 1.0 / cfg.stride_s,
        t0_s: cfg.window_len_s,
        name: String::new(),
        tr_aligned: false,
    }
}

/// Pairs one story and writes it under `out/<story>`. Returns its layer and
/// low-level feature names.
pub fn pair_story(
    story_id: &str,
    features: &Path,
    lowlevel: &BTreeMap<String, PathBuf>,
    run: &FmriRun,
    cfg: &PairingConfig,
    out: &Path,
) -> Result<(Vec<String>, Vec<String>)> {
    const STAGE: &str = "pair";
    let n_trs = run.n_trs();
    let fallback = default_meta(cfg);
    let dir = out.join(story_id);
    create_dir(&dir.join("features"))?;
    let mut layers = Vec::new();
    for (layer, path) in layer_files(features)? {
        let (series, meta) = load_feature_series(&path, &fallback).stage(STAGE)?;
        let x = to_tr_rate(&series, &meta, n_trs, cfg).stage(STAGE)?;
        save_tensor(layer_path(out, story_id, &layer), &x).stage(STAGE)?;
        layers.push(layer);
    }
    if !lowlevel.is_empty() {
        create_dir(&dir.join("lowlevel"))?;
    }
    for (name, path) in lowlevel {
        let (series, meta) = load_feature_series(path, &fallback).stage(STAGE)?;
        let x = to_tr_rate(&series, &meta, n_trs, cfg).stage(STAGE)?;
        save_tensor(lowlevel_path(out, story_id, name), &x).stage(STAGE)?;
    }
    save_tensor(y_path(out, story_id), &run.data).stage(STAGE)?;
    save_vector(dir.join("tr_times.npy"), &tr_centers(n_trs, cfg.tr_s)).stage(STAGE)?;
    Ok((layers, lowlevel.keys().cloned().collect()))
}

/// Pairs every story of a manifest into `out`.
pub fn pair_manifest(m: &DatasetManifest, cfg: &PairingConfig, out: &Path) -> Result<PairedIndex> {
    create_dir(out)?;
    let mut stories = Vec::new();
    let mut layers: Option<Vec<String>> = None;
    let mut lowlevel: Option<Vec<String>> = None;
    let mut n_voxels = None;
    for s in &m.stories {
        let run =
            FmriRun::load(&s.fmri, m.tr_s, &s.story_id, &m.participant_id, 0).stage("pair")?;
        if *n_voxels.get_or_insert(run.n_voxels()) != run.n_voxels() {
            return Err(CliError::Core {
                stage: "pair",
                source: braintools::Error::Input(format!(
                    "story {:?} has {} voxels, earlier stories have {}",
                    s.story_id,
                    run.n_voxels(),
                    n_voxels.unwrap_or_default()
                )),
            });
        }
        let (l, ll) = pair_story(&s.story_id, &s.features, &s.lowlevel, &run, cfg, out)?;
        for (have, got, what) in [
            (&mut layers, l, "layers"),
            (&mut lowlevel, ll, "low-level features"),
        ] {
            if have.get_or_insert_with(|| got.clone()) != &got {
                return Err(CliError::Config(format!(
                    "story {:?} lists different {what} than earlier stories",
                    s.story_id
                )));
            }
        }
        stories.push(PairedStory {
            story_id: s.story_id.clone(),
            split: s.split,
            n_trs: run.n_trs(),
        });
    }
    let index = PairedIndex {
        participant_id: m.participant_id.clone(),
        tr_s: m.tr_s,
        fir_delays_trs: cfg.fir_delays_trs.clone(),
        prescaled: false,
        layers: layers.unwrap_or_default(),
        lowlevel: lowlevel.unwrap_or_default(),
        stories,
    };
    index.save(out)?;
    Ok(index)
}

/// Row-stacked matrices for a set of stories, with each story's length.
pub struct Stacked {
    pub data: Matrix,
    pub lengths: Vec<usize>,
}

pub fn stack_stories(
    stories: &[&PairedStory],
    path_of: impl Fn(&str) -> PathBuf,
    stage: &'static str,
) -> Result<Stacked> {
    let mut parts = Vec::with_capacity(stories.len());
    for s in stories {
        let p = path_of(&s.story_id);
        if !p.exists() {
            return Err(CliError::missing(stage, "pair", &p));
        }
        let m = load_tensor(&p).stage(stage)?;
        if m.nrows() != s.n_trs {
            return Err(CliError::Core {
                stage,
                source: braintools::Error::Input(format!(
                    "{} has {} rows, story {:?} has {} TRs",
                    p.display(),
                    m.nrows(),
                    s.story_id,
                    s.n_trs
                )),
            });
        }
        parts.push(m);
    }
    let refs: Vec<&Matrix> = parts.iter().collect();
    Ok(Stacked {
        data: vstack(&refs).stage(stage)?,
        lengths: stories.iter().map(|s| s.n_trs).collect(),
    })
}

/// Pairs a single story into `out`, creating or extending its index. A story
/// with the same id is replaced.
pub fn append_story(
    participant: &str,
    story: &StoryEntry,
    cfg: &PairingConfig,
    out: &Path,
) -> Result<PairedIndex> {
    create_dir(out)?;
    let run =
        FmriRun::load(&story.fmri, cfg.tr_s, &story.story_id, participant, 0).stage("pair")?;
    let (layers, low) = pair_story(
        &story.story_id,
        &story.features,
        &story.lowlevel,
        &run,
        cfg,
        out,
    )?;
    let mut index = if out.join(INDEX).exists() {
        let index = PairedIndex::load(out)?;
        let same = index.participant_id == participant
            && (index.tr_s - cfg.tr_s).abs() < 1e-9
            && index.fir_delays_trs == cfg.fir_delays_trs
            && index.layers == layers
            && index.lowlevel == low;
        if !same {
            return Err(CliError::Config(format!(
                "{} holds a different participant, TR, delay set or feature set",
                out.join(INDEX).display()
            )));
        }
        index
    } else {
        PairedIndex {
            participant_id: participant.to_string(),
            tr_s: cfg.tr_s,
            fir_delays_trs: cfg.fir_delays_trs.clone(),
            prescaled: false,
            layers,
            lowlevel: low,
            stories: vec![],
        }
    };
    let entry = PairedStory {
        story_id: story.story_id.clone(),
        split: story.split,
        n_trs: run.n_trs(),
    };
    match index
        .stories
        .iter_mut()
        .find(|s| s.story_id == story.story_id)
    {
        Some(s) => *s = entry,
        None => index.stories.push(entry),
    }
    index.save(out)?;
    Ok(index)
}
