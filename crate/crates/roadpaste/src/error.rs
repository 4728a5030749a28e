use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("manifest error at {path}: {reason}")]
    ManifestError { path: PathBuf, reason: String },
    #[error("annotation for image `{image_id}` has no matching image")]
    DanglingAnnotation { image_id: String },
    #[error("unknown damage class `{label}` in {path}")]
    UnknownClass { label: String, path: PathBuf },
    #[error("duplicate image id `{image_id}` ({first} and {second})")]
    DuplicateImageId { image_id: String, first: PathBuf, second: PathBuf },
    #[error("mask {path} is {found:?}, image is {expected:?}")]
    MaskDimMismatch { path: PathBuf, expected: (usize, usize), found: (usize, usize) },
    #[error("cannot read mask {path}: {reason}")]
    MaskReadError { path: PathBuf, reason: String },
    #[error("cannot read image {path}: {reason}")]
    ImageReadError { path: PathBuf, reason: String },
    #[error("malformed annotation file {path}: {reason}")]
    AnnotationParse { path: PathBuf, reason: String },
    #[error("cannot write {path}: {reason}")]
    WriteError { path: PathBuf, reason: String },
    #[error("malformed artifact {path}: {reason}")]
    Artifact { path: PathBuf, reason: String },
    #[error(transparent)]
    Core(#[from] roadpaste_core::Error),
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

pub(crate) fn write_err(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> IoError {
    IoError::WriteError { path: path.into(), reason: e.to_string() }
}

pub(crate) fn artifact_err(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> IoError {
    IoError::Artifact { path: path.into(), reason: e.to_string() }
}
