//! Measurement toolkit for comparing speech-model representations with fMRI
//! responses: stimulus/TR pairing, noise ceilings, voxel-wise ridge encoding,
//! normalized alignment, low-level feature impact, significance tests and
//! synthetic ground-truth datasets.

pub mod ceiling;
pub mod encoding;
pub mod error;
pub mod lowlevel;
pub mod pairing;
pub mod permute;
pub mod rng;
pub mod semphon;
pub mod stats;
pub mod synth;
pub mod tensorio;

pub use error::{Error, Result};
pub use tensorio::{FeatureSeries, FmriRun, Matrix, RoiMask};
