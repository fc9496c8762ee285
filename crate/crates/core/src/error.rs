use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("unsupported PGM maxval {0} (only 255 is accepted)")]
    UnsupportedMaxval(u32),

    #[error("unsupported PNG layout: {0}")]
    UnsupportedPng(String),

    #[error("malformed image data: {0}")]
    MalformedImage(String),

    #[error("invalid dimensions {width}x{height}: {reason}")]
    InvalidDimensions {
        width: usize,
        height: usize,
        reason: &'static str,
    },

    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("empty gallery")]
    EmptyGallery,

    #[error("unknown method `{0}` (expected one of fdfi, tt, he, gic, log, ssr, none)")]
    UnknownMethod(String),

    #[error("invalid feature descriptor `{0}`")]
    InvalidFeature(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("filename `{0}` does not follow the yaleBNN_P00A±AAAE±EE convention")]
    YaleName(String),

    #[error("experiment: {0}")]
    Experiment(String),
}
