//! Dataset assembly: conditioning preprocessing, spatially disjoint splits,
//! training-split statistics and the binary file format.

mod build;
mod format;
mod fourier;
mod preprocess;
mod split;
mod stats;

pub use build::{build_dataset, BuildReport, DatasetConfig};
pub use format::{
    read_dataset, read_dataset_expecting, write_dataset, Dataset, DatasetHeader, DatasetRecord,
    FORMAT_VERSION, MAGIC,
};
pub use fourier::{band_frequencies, fourier_encode, fourier_encode_into, COORD_SCALE_M, FOURIER_DIM, N_BANDS};
pub use preprocess::{
    preprocess_height, preprocess_heightmap, preprocess_pov, preprocess_value, DEPTH_MAX_M,
    EPS_R_MAX, HEIGHT_MAX_M, SIGMA_MAX,
};
pub use split::{assign_splits, Split, SplitPlan, SPLIT_TARGETS, SPLIT_TOLERANCE};
pub use stats::compute_stats;

use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("header checksum mismatch")]
    HeaderChecksum,
    #[error("file is truncated")]
    Truncated,
    #[error("file stores {found} path slots per link, expected {expected}")]
    IncompatiblePathCount { expected: usize, found: usize },
    #[error("record {link_id} is invalid: {reason}")]
    InvalidRecord { link_id: u64, reason: String },
    #[error("value {value} out of range in channel {channel}")]
    OutOfRange { channel: &'static str, value: f64 },
    #[error("split assignment failed: {0}")]
    Split(String),
    #[error("statistics: {0}")]
    Stats(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        DatasetError::Io(e.to_string())
    }
}

impl From<crate::channel::ChannelError> for DatasetError {
    fn from(e: crate::channel::ChannelError) -> Self {
        DatasetError::Invalid(e.to_string())
    }
}

/// Human-readable summary written next to a dataset file.
#[derive(Debug, Clone, Serialize)]
pub struct StatsSidecar<'a> {
    pub stats: &'a crate::channel::NormStats,
    pub records: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub max_paths: usize,
    pub pov_resolution: usize,
    pub heightmap_resolution: usize,
    pub scene_seed: u64,
}

pub fn sidecar_path(dataset: &Path) -> PathBuf {
    let mut p = dataset.as_os_str().to_owned();
    p.push(".stats.json");
    PathBuf::from(p)
}

pub fn write_stats_sidecar(ds: &Dataset, dataset_path: &Path) -> Result<PathBuf, DatasetError> {
    let side = StatsSidecar {
        stats: &ds.header.stats,
        records: ds.records.len(),
        train: ds.count(Split::Train),
        val: ds.count(Split::Val),
        test: ds.count(Split::Test),
        max_paths: ds.header.max_paths,
        pov_resolution: ds.header.pov_resolution,
        heightmap_resolution: ds.header.heightmap_resolution,
        scene_seed: ds.header.scene_seed,
    };
    let path = sidecar_path(dataset_path);
    let json = serde_json::to_string_pretty(&side).map_err(|e| DatasetError::Io(e.to_string()))?;
    std::fs::write(&path, json)?;
    Ok(path)
}
