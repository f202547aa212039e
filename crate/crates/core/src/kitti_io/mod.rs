//! Readers and writers for the on-disk formats: velodyne scans, calibration
//! text, label/result text, NPY tensors and binary PPM images.
//!
//! Every reader has a `parse_*` twin working on an in-memory buffer; the
//! file-level functions only add the I/O.

mod calib;
mod labels;
mod npy;
mod ppm;
mod results;
mod velodyne;

use std::path::PathBuf;

use thiserror::Error;

pub use calib::{parse_calibration, read_calibration, Calibration, DEFAULT_IMAGE_SIZE};
pub use labels::{parse_labels, read_labels, GroundTruthObject, DONT_CARE};
pub use npy::{
    parse_npy, parse_tensor, read_npy, read_stride_sidecar, read_tensor, write_npy, write_tensor,
    FeatureMap, NpyArray, NpyData,
};
pub use ppm::{parse_image, read_image, write_image, Image};
pub use results::{detections_to_labels, format_detections, write_detections, Detection};
pub use velodyne::{parse_point_cloud, read_point_cloud, write_point_cloud, Frame, PointCloud, RawPoint};

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("truncated file: {len} bytes is not a multiple of {record}")]
    TruncatedFile { len: usize, record: usize },
    #[error("non-finite value in record {index}")]
    NonFiniteValue { index: usize },
    #[error("reflectance {value} of point {index} is outside [0, 1]")]
    ReflectanceOutOfRange { index: usize, value: f32 },
    #[error("missing calibration key `{0}`")]
    MissingKey(String),
    #[error("matrix `{key}` needs {expected} values, found {found}")]
    MalformedMatrix {
        key: String,
        expected: usize,
        found: usize,
    },
    #[error("matrix `{key}` is not orthonormal (deviation {deviation:.2e})")]
    NotOrthonormal { key: String, deviation: f64 },
    #[error("line {line}: expected 15 or 16 fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: cannot parse `{text}` as a number")]
    NumericParse { line: usize, text: String },
    #[error("line {line}: {reason}")]
    InvalidValue { line: usize, reason: String },
    #[error("unsupported dtype `{0}` (only little-endian f32 is accepted)")]
    UnsupportedDtype(String),
    #[error("unsupported rank {0}")]
    UnsupportedRank(usize),
    #[error("bad magic number")]
    BadMagic,
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("pixel data truncated: expected {expected} bytes, found {found}")]
    TruncatedPixelData { expected: usize, found: usize },
    #[error("tensor payload truncated: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("detection {index} has a non-finite score")]
    NonFiniteScore { index: usize },
    #[error("detection {index} has a non-finite box")]
    NonFiniteBox { index: usize },
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

pub type Result<T, E = KittiError> = std::result::Result<T, E>;

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| KittiError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| KittiError::Io {
        path: path.to_path_buf(),
        source,
    })
}
