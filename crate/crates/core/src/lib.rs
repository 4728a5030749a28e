//! Algorithmic core of the road-damage cut-and-paste augmenter.
//!
//! Everything here is pure computation over in-memory buffers: perspective
//! estimation from road masks, pitch binning, the damage bank, placement
//! heatmaps, homography warping and Poisson compositing, plus the per-image
//! augmentation step that ties them together. File formats, persistence and
//! the command line live in the `roadpaste` crate.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

mod math;

pub mod annotation;
pub mod bank;
pub mod blend;
pub mod error;
pub mod geom;
pub mod perspective;
pub mod pipeline;
pub mod placement;
pub mod raster;
pub mod solver;
pub mod synth;
pub mod warp;

pub use annotation::{Annotation, DamageClass, Provenance};
pub use bank::{BankParams, BankReport, DamageBank, DamageInstance, Draw, DrawProvenance};
pub use blend::{BlendMode, BlendRegion};
pub use error::{Error, Result};
pub use geom::BoundingBox;
pub use perspective::{Confidence, PerspectiveMap, PitchBinning, VanishingEstimate};
pub use pipeline::{AugmentationConfig, ImageOutcome, InjectionRecord, RejectReason};
pub use placement::{PlacementHeatmap, PlacementSample, PlacementSource};
pub use raster::{RgbImage, RoadMask};
pub use warp::{Homography, Quad, WarpedPatch};
