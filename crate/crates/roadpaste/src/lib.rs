//! Filesystem side of the road-damage augmentation toolkit: dataset
//! formats, persisted stage artifacts, the parallel dataset driver and the
//! command-line interface.

pub mod artifacts;
pub mod augment;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fixtures;
pub mod inspect;

pub use augment::{augment_dataset, AugmentationReport, RunOptions};
pub use dataset::{load_dataset, load_mask, write_augmented, DatasetIndex, ImageRecord, LoadReport};
pub use error::{IoError, Result};
