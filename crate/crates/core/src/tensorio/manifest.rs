use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_json, write_json, DEFAULT_TR_S};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryEntry {
    pub story_id: String,
    /// A feature tensor, or a directory holding one tensor per layer.
    pub features: PathBuf,
    pub fmri: PathBuf,
    pub split: Split,
    /// Optional low-level feature tensors keyed by feature name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub lowlevel: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub participant_id: String,
    #[serde(default = "default_tr")]
    pub tr_s: f64,
    pub stories: Vec<StoryEntry>,
    #[serde(default)]
    pub repeats: Vec<PathBuf>,
}

fn default_tr() -> f64 {
    DEFAULT_TR_S
}

impl DatasetManifest {
    pub fn stories_in(&self, split: Split) -> impl Iterator<Item = &StoryEntry> {
        self.stories.iter().filter(move |s| s.split == split)
    }

    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let count = |s| self.stories_in(s).count();
        (count(Split::Train), count(Split::Val), count(Split::Test))
    }

    /// Checks structure only: ids, splits and numeric fields.
    pub fn validate_structure(&self) -> Result<()> {
        if self.stories.is_empty() {
            return Err(Error::Manifest("manifest lists no stories".into()));
        }
        if !(self.tr_s > 0.0 && self.tr_s.is_finite()) {
            return Err(Error::Manifest(format!(
                "tr_s must be positive, got {}",
                self.tr_s
            )));
        }
        let mut seen = HashSet::new();
        for s in &self.stories {
            if !seen.insert(s.story_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "story {:?} listed more than once",
                    s.story_id
                )));
            }
        }
        Ok(())
    }

    pub fn require_test(&self) -> Result<()> {
        if self.stories_in(Split::Test).next().is_none() {
            return Err(Error::Manifest(
                "evaluation requires a non-empty test split".into(),
            ));
        }
        Ok(())
    }

    fn referenced_files(&self) -> impl Iterator<Item = &PathBuf> {
        self.stories
            .iter()
            .flat_map(|s| {
                [&s.features, &s.fmri]
                    .into_iter()
                    .chain(s.lowlevel.values())
            })
            .chain(self.repeats.iter())
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for s in &mut self.stories {
            fix(&mut s.features);
            fix(&mut s.fmri);
            s.lowlevel.values_mut().for_each(fix);
        }
        self.repeats.iter_mut().for_each(fix);
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

/// Reads and validates a manifest. Relative paths are resolved against the
/// manifest's directory and every referenced file must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let mut m: DatasetManifest = read_json(path).map_err(|e| match e {
        Error::Json { source, .. } => Error::Manifest(format!("{}: {source}", path.display())),
        other => other,
    })?;
    m.validate_structure()?;
    m.resolve(path.parent().unwrap_or(Path::new(".")));
    if let Some(missing) = m.referenced_files().find(|p| !p.exists()) {
        return Err(Error::Manifest(format!(
            "referenced file {} does not exist",
            missing.display()
        )));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_manifest(dir: &Path, stories: &[(&str, &str)]) -> PathBuf {
        for (id, _) in stories {
            fs::write(dir.join(format!("{id}_f.npy")), b"").unwrap();
            fs::write(dir.join(format!("{id}_r.npy")), b"").unwrap();
        }
        let entries: Vec<String> = stories
            .iter()
            .map(|(id, split)| {
                format!(
                    r#"{{"story_id": "{id}", "features": "{id}_f.npy", "fmri": "{id}_r.npy", "split": "{split}"}}"#
                )
            })
            .collect();
        let text = format!(
            r#"{{"participant_id": "UTS01", "tr_s": 2.0045, "stories": [{}], "repeats": []}}"#,
            entries.join(",")
        );
        let p = dir.join("manifest.json");
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn split_24_2_1() {
        let dir = tempfile::tempdir().unwrap();
        let mut stories = Vec::new();
        let names: Vec<String> = (0..27).map(|i| format!("s{i:02}")).collect();
        for (i, n) in names.iter().enumerate() {
            let split = match i {
                0..=23 => "train",
                24 | 25 => "val",
                _ => "test",
            };
            stories.push((n.as_str(), split));
        }
        let m = load_manifest(write_manifest(dir.path(), &stories)).unwrap();
        assert_eq!(m.split_sizes(), (24, 2, 1));
        assert!(m.require_test().is_ok());
        assert!(m.stories[0].fmri.is_absolute() || m.stories[0].fmri.starts_with(dir.path()));
    }

    #[test]
    fn empty_stories_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(dir.path(), &[]);
        assert!(matches!(load_manifest(p), Err(Error::Manifest(_))));
    }

    #[test]
    fn duplicate_story_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(dir.path(), &[("a", "train"), ("a", "test")]);
        assert!(matches!(load_manifest(p), Err(Error::Manifest(_))));
    }

    #[test]
    fn missing_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(dir.path(), &[("a", "train"), ("b", "test")]);
        fs::remove_file(dir.path().join("b_r.npy")).unwrap();
        assert!(matches!(load_manifest(p), Err(Error::Manifest(_))));
    }
}
