use std::collections::HashSet;
use std::path::{Path, PathBuf};

use braintools::ceiling::DEFAULT_THRESHOLD;
use braintools::encoding::RidgeConfig;
use braintools::lowlevel::default_residual_alphas;
use braintools::pairing::PairingConfig;
use braintools::semphon::Metric;
use braintools::stats::WilcoxonMode;
use braintools::tensorio::{load_manifest, DatasetManifest};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemphonConfig {
    /// Triple index JSON (see `semphon` stage).
    pub index: PathBuf,
    #[serde(default)]
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// One manifest per participant.
    pub manifests: Vec<PathBuf>,
    #[serde(default)]
    pub pairing: PairingConfig,
    #[serde(default)]
    pub ridge: RidgeConfig,
    #[serde(default = "default_threshold")]
    pub ceiling_threshold: f64,
    /// Glob patterns for ROI files; `{participant}` is replaced by the
    /// participant id.
    #[serde(default)]
    pub rois: Vec<String>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_residual_alphas")]
    pub residual_alphas: Vec<f64>,
    /// Low-level features to residualize; all features in the manifests
    /// when absent.
    #[serde(default)]
    pub lowlevel: Option<Vec<String>>,
    #[serde(default = "default_mode")]
    pub wilcoxon_mode: WilcoxonMode,
    /// Alignment CSV of another run to test this run against.
    #[serde(default)]
    pub baseline_alignment: Option<PathBuf>,
    #[serde(default)]
    pub semphon: Option<SemphonConfig>,
    #[serde(default = "default_model_id")]
    pub model_id: String,
    /// Directory relative paths were resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_mode() -> WilcoxonMode {
    WilcoxonMode::Auto
}

fn default_model_id() -> String {
    "model".into()
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Reads, resolves relative paths against the config's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        cfg.manifests.iter_mut().for_each(|p| resolve(&base, p));
        resolve(&base, &mut cfg.output_dir);
        if let Some(b) = cfg.baseline_alignment.as_mut() {
            resolve(&base, b);
        }
        if let Some(s) = cfg.semphon.as_mut() {
            resolve(&base, &mut s.index);
        }
        for pattern in &mut cfg.rois {
            if Path::new(pattern.as_str()).is_relative() {
                *pattern = base.join(pattern.as_str()).to_string_lossy().into_owned();
            }
        }
        cfg.ridge.seed = cfg.seed;
        cfg.base_dir = base;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.manifests.is_empty() {
            return bad("no manifests listed".into());
        }
        self.pairing
            .validate()
            .map_err(|e| CliError::Config(format!("pairing: {e}")))?;
        self.ridge
            .validate()
            .map_err(|e| CliError::Config(format!("ridge: {e}")))?;
        if !(0.0..1.0).contains(&self.ceiling_threshold) {
            return bad(format!(
                "ceiling_threshold must lie in [0, 1), got {}",
                self.ceiling_threshold
            ));
        }
        if self.residual_alphas.is_empty()
            || self.residual_alphas.iter().any(|a| a.is_nan() || *a <= 0.0)
        {
            return bad("residual_alphas must be non-empty and positive".into());
        }
        if self.model_id.is_empty() {
            return bad("model_id is empty".into());
        }
        Ok(())
    }

    /// Loads every manifest; participant ids must be unique.
    pub fn manifests(&self) -> Result<Vec<DatasetManifest>> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for p in &self.manifests {
            let m = load_manifest(p).map_err(|e| CliError::Config(e.to_string()))?;
            if !seen.insert(m.participant_id.clone()) {
                return Err(CliError::Config(format!(
                    "participant {:?} appears in more than one manifest",
                    m.participant_id
                )));
            }
            if (m.tr_s - self.pairing.tr_s).abs() > 1e-9 {
                return Err(CliError::Config(format!(
                    "manifest {} has TR {} s but pairing uses {} s",
                    p.display(),
                    m.tr_s,
                    self.pairing.tr_s
                )));
            }
            out.push(m);
        }
        Ok(out)
    }

    /// SHA-256 of the configuration with paths taken relative to
    /// `base_dir`, so a copied project hashes the same.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        let rel = |p: &mut PathBuf| {
            if let Ok(r) = p.strip_prefix(&self.base_dir) {
                *p = r.to_path_buf();
            }
        };
        c.manifests.iter_mut().for_each(rel);
        rel(&mut c.output_dir);
        if let Some(b) = c.baseline_alignment.as_mut() {
            rel(b);
        }
        if let Some(s) = c.semphon.as_mut() {
            rel(&mut s.index);
        }
        for pattern in &mut c.rois {
            let mut p = PathBuf::from(pattern.as_str());
            rel(&mut p);
            *pattern = p.to_string_lossy().into_owned();
        }
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// ROI files for one participant, sorted by path.
    pub fn roi_files(&self, participant: &str) -> Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        for pattern in &self.rois {
            let pattern = pattern.replace("{participant}", participant);
            let paths = glob::glob(&pattern)
                .map_err(|e| CliError::Config(format!("bad roi pattern {pattern:?}: {e}")))?;
            for p in paths {
                files.push(p.map_err(|e| CliError::io(e.path().to_path_buf(), e.into()))?);
            }
        }
        files.sort();
        files.dedup();
        Ok(files)
    }
}
