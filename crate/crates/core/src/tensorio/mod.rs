//! On-disk interchange: NPY tensors, feature sidecars, ROI masks and
//! dataset manifests.
//!
//! All computation happens in `f64`; `f32`, `i64` and `bool` tensors are
//! up-cast on load. Row and column order is preserved exactly as stored.

mod manifest;
pub mod npy;

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use manifest::{load_manifest, DatasetManifest, Split, StoryEntry};
pub use npy::{DType, NpyArray, NpyData};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default repetition time of the reference dataset, in seconds.
pub const DEFAULT_TR_S: f64 = 2.0045;

/// Loads a 1-D or 2-D tensor as a matrix. A 1-D tensor of length `n`
/// becomes an `n × 1` column.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let arr = NpyArray::read(path)?;
    array_to_matrix(&arr).map_err(|e| match e {
        Error::Format { msg, .. } => Error::Format {
            path: Some(path.to_path_buf()),
            msg,
        },
        other => other,
    })
}

pub fn array_to_matrix(arr: &NpyArray) -> Result<Matrix> {
    let (rows, cols) = match arr.shape.as_slice() {
        [n] => (*n, 1),
        [r, c] => (*r, *c),
        s => {
            return Err(Error::Format {
                path: None,
                msg: format!("expected a 1-D or 2-D tensor, got shape {s:?}"),
            })
        }
    };
    let values = arr.data.to_f64();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data {
            index: (pos / cols.max(1), pos % cols.max(1)),
            msg: format!("non-finite value {}", values[pos]),
        });
    }
    Ok(Matrix::from_row_slice(rows, cols, &values))
}

pub fn matrix_to_array(m: &Matrix) -> NpyArray {
    let mut data = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        data.extend(m.row(r).iter().copied());
    }
    NpyArray {
        shape: vec![m.nrows(), m.ncols()],
        data: NpyData::F64(data),
    }
}

/// Writes a matrix as a little-endian `f64` C-order tensor.
pub fn save_tensor(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    matrix_to_array(m).write(path)
}

pub fn load_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let m = load_tensor(path.as_ref())?;
    if m.ncols() != 1 && m.nrows() != 1 {
        return Err(Error::Format {
            path: Some(path.as_ref().to_path_buf()),
            msg: format!("expected a vector, got {}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(m.iter().copied().collect())
}

pub fn save_vector(path: impl AsRef<Path>, v: &[f64]) -> Result<()> {
    NpyArray {
        shape: vec![v.len()],
        data: NpyData::F64(v.to_vec()),
    }
    .write(path)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Vec<bool>> {
    let path = path.as_ref();
    let arr = NpyArray::read(path)?;
    if arr.shape.len() != 1 {
        return Err(Error::Format {
            path: Some(path.to_path_buf()),
            msg: format!("mask must be 1-D, got shape {:?}", arr.shape),
        });
    }
    Ok(match arr.data {
        NpyData::Bool(v) => v,
        other => other.to_f64().into_iter().map(|x| x != 0.0).collect(),
    })
}

pub fn save_mask(path: impl AsRef<Path>, mask: &[bool]) -> Result<()> {
    NpyArray {
        shape: vec![mask.len()],
        data: NpyData::Bool(mask.to_vec()),
    }
    .write(path)
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Concatenates matrices with equal column counts top to bottom.
pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
    let cols = parts.first().map_or(0, |m| m.ncols());
    if let Some(bad) = parts.iter().find(|m| m.ncols() != cols) {
        return Err(Error::input(format!(
            "cannot stack {} columns onto {cols}",
            bad.ncols()
        )));
    }
    let rows = parts.iter().map(|m| m.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r = 0;
    for m in parts {
        out.rows_mut(r, m.nrows()).copy_from(*m);
        r += m.nrows();
    }
    Ok(out)
}

fn check_finite(m: &Matrix) -> Result<()> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if !m[(r, c)].is_finite() {
                return Err(Error::Data {
                    index: (r, c),
                    msg: format!("non-finite value {}", m[(r, c)]),
                });
            }
        }
    }
    Ok(())
}

/// A stimulus-locked stream of representations or low-level features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    pub data: Matrix,
    pub sample_rate_hz: f64,
    /// Time of the first sample, in seconds.
    pub t0_s: f64,
    pub name: String,
}

impl FeatureSeries {
    pub fn new(
        data: Matrix,
        sample_rate_hz: f64,
        t0_s: f64,
        name: impl Into<String>,
    ) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::input(
                "feature series must have at least one sample and one dimension",
            ));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::input(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if !t0_s.is_finite() {
            return Err(Error::input("t0 must be finite"));
        }
        check_finite(&data)?;
        Ok(Self {
            data,
            sample_rate_hz,
            t0_s,
            name: name.into(),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_dims(&self) -> usize {
        self.data.ncols()
    }

    pub fn sample_time(&self, i: usize) -> f64 {
        self.t0_s + i as f64 / self.sample_rate_hz
    }

    /// End of the covered interval: one sample period past the last sample.
    pub fn end_time(&self) -> f64 {
        self.t0_s + self.n_samples() as f64 / self.sample_rate_hz
    }
}

/// JSON sidecar stored next to a feature tensor (`feats.npy` → `feats.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub t0_s: f64,
    #[serde(default)]
    pub name: String,
    /// Rows are already one per TR and bypass resampling.
    #[serde(default)]
    pub tr_aligned: bool,
}

/// Sidecar as found on disk; other writers may omit fields or add their own.
#[derive(Deserialize)]
struct PartialMeta {
    sample_rate_hz: Option<f64>,
    t0_s: Option<f64>,
    name: Option<String>,
    tr_aligned: Option<bool>,
}

pub fn sidecar_path(tensor: &Path) -> PathBuf {
    tensor.with_extension("json")
}

/// Loads a feature tensor together with its sidecar; `fallback` supplies
/// whatever the sidecar does not (or the sidecar is absent).
pub fn load_feature_series(
    path: impl AsRef<Path>,
    fallback: &FeatureMeta,
) -> Result<(FeatureSeries, FeatureMeta)> {
    let path = path.as_ref();
    let data = load_tensor(path)?;
    let side = sidecar_path(path);
    let mut meta = fallback.clone();
    if side.exists() {
        let partial: PartialMeta = read_json(&side)?;
        meta.sample_rate_hz = partial.sample_rate_hz.unwrap_or(meta.sample_rate_hz);
        meta.t0_s = partial.t0_s.unwrap_or(meta.t0_s);
        meta.name = partial.name.unwrap_or(meta.name);
        meta.tr_aligned = partial.tr_aligned.unwrap_or(meta.tr_aligned);
    }
    if meta.name.is_empty() {
        meta.name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    let series = FeatureSeries::new(data, meta.sample_rate_hz, meta.t0_s, meta.name.clone())?;
    Ok((series, meta))
}

pub fn save_feature_series(
    path: impl AsRef<Path>,
    series: &FeatureSeries,
    tr_aligned: bool,
) -> Result<()> {
    let path = path.as_ref();
    save_tensor(path, &series.data)?;
    write_json(
        &sidecar_path(path),
        &FeatureMeta {
            sample_rate_hz: series.sample_rate_hz,
            t0_s: series.t0_s,
            name: series.name.clone(),
            tr_aligned,
        },
    )
}

/// One fMRI run: TR × voxel responses.
#[derive(Debug, Clone, PartialEq)]
pub struct FmriRun {
    pub data: Matrix,
    pub tr_s: f64,
    pub story_id: String,
    pub participant_id: String,
    pub repeat_index: usize,
}

impl FmriRun {
    pub fn new(
        data: Matrix,
        tr_s: f64,
        story_id: impl Into<String>,
        participant_id: impl Into<String>,
        repeat_index: usize,
    ) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::input(
                "fMRI run must have at least one TR and one voxel",
            ));
        }
        if !(tr_s > 0.0 && tr_s.is_finite()) {
            return Err(Error::input(format!("TR must be positive, got {tr_s}")));
        }
        check_finite(&data)?;
        Ok(Self {
            data,
            tr_s,
            story_id: story_id.into(),
            participant_id: participant_id.into(),
            repeat_index,
        })
    }

    pub fn load(
        path: impl AsRef<Path>,
        tr_s: f64,
        story_id: &str,
        participant_id: &str,
        repeat_index: usize,
    ) -> Result<Self> {
        Self::new(
            load_tensor(path)?,
            tr_s,
            story_id,
            participant_id,
            repeat_index,
        )
    }

    pub fn n_trs(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_voxels(&self) -> usize {
        self.data.ncols()
    }
}

/// A region of interest given as sorted voxel indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiMask {
    pub label: String,
    #[serde(rename = "voxels")]
    pub voxel_indices: Vec<usize>,
}

impl RoiMask {
    pub fn new(label: impl Into<String>, voxel_indices: Vec<usize>) -> Result<Self> {
        let roi = Self {
            label: label.into(),
            voxel_indices,
        };
        roi.check_sorted()?;
        Ok(roi)
    }

    fn check_sorted(&self) -> Result<()> {
        if let Some(w) = self.voxel_indices.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Roi(format!(
                "roi {:?}: indices must be strictly increasing ({} then {})",
                self.label, w[0], w[1]
            )));
        }
        Ok(())
    }

    pub fn validate_for(&self, n_voxels: usize) -> Result<()> {
        self.check_sorted()?;
        if let Some(&last) = self.voxel_indices.last() {
            if last >= n_voxels {
                return Err(Error::Roi(format!(
                    "roi {:?}: voxel {last} out of range for {n_voxels} voxels",
                    self.label
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let roi: RoiMask = read_json(path.as_ref())?;
        roi.check_sorted()?;
        Ok(roi)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}
