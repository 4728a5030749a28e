//! Per-image injection step and the configuration that selects between the
//! ablation variants (no injection, plain paste, road-constrained paste,
//! road-constrained and perspective-matched paste).

use alloc::vec::Vec;

use rand::Rng;

use crate::annotation::{Annotation, DamageClass};
use crate::bank::{DamageBank, DrawProvenance};
use crate::blend::{clip_to_road, composite_into, BlendMode};
use crate::error::{Error, Result};
use crate::geom::BoundingBox;
use crate::math;
use crate::perspective::{PerspectiveMap, PitchBinning, DEFAULT_BINS, DEFAULT_MIN_ROAD_PIXELS};
use crate::placement::{PlacementHeatmap, PlacementSampler, PlacementSource, DEFAULT_GRID, DEFAULT_SIGMA};
use crate::raster::{RgbImage, RoadMask};
use crate::solver::CgParams;
use crate::warp::{solve_homography, target_quad, warp_patch, Homography, Quad, ScaleBounds};

/// The four ablation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Baseline,
    Paste,
    Content,
    Ours,
}

impl Ablation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "baseline" => Some(Ablation::Baseline),
            "paste" => Some(Ablation::Paste),
            "content" => Some(Ablation::Content),
            "ours" => Some(Ablation::Ours),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::Paste => "paste",
            Ablation::Content => "content",
            Ablation::Ours => "ours",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationConfig {
    pub seed: u64,
    pub inject: bool,
    pub content_aware: bool,
    pub perspective_aware: bool,
    pub injections_per_image: usize,
    pub max_attempts_per_injection: usize,
    pub blend_mode: BlendMode,
    pub overlap_iou_max: f64,
    pub min_injected_area_px: f64,
    pub scale_bounds: ScaleBounds,
    /// Heatmap weight in the placement law (1 = heatmap only).
    pub heatmap_weight: f64,
    pub bins: usize,
    pub sigma: f64,
    pub grid: usize,
    pub min_scale: f64,
    pub min_road_pixels: usize,
    pub class_filter: Option<DamageClass>,
    pub cg_tolerance: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self::preset(Ablation::Ours, 0)
    }
}

impl AugmentationConfig {
    pub fn preset(ablation: Ablation, seed: u64) -> Self {
        let (inject, content_aware, perspective_aware, blend_mode) = match ablation {
            Ablation::Baseline => (false, false, false, BlendMode::Alpha),
            Ablation::Paste => (true, false, false, BlendMode::Alpha),
            Ablation::Content => (true, true, false, BlendMode::Alpha),
            Ablation::Ours => (true, true, true, BlendMode::PoissonImport),
        };
        Self {
            seed,
            inject,
            content_aware,
            perspective_aware,
            injections_per_image: 1,
            max_attempts_per_injection: 10,
            blend_mode,
            overlap_iou_max: 0.3,
            min_injected_area_px: 64.0,
            scale_bounds: ScaleBounds::default(),
            heatmap_weight: 1.0,
            bins: DEFAULT_BINS,
            sigma: DEFAULT_SIGMA,
            grid: DEFAULT_GRID,
            min_scale: 0.05,
            min_road_pixels: DEFAULT_MIN_ROAD_PIXELS,
            class_filter: None,
            cg_tolerance: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key, reason| Err(Error::InvalidConfig { key, reason });
        if self.perspective_aware && !self.inject {
            return bad("perspective_aware", "requires inject");
        }
        if self.content_aware && !self.inject {
            return bad("content_aware", "requires inject");
        }
        if self.max_attempts_per_injection == 0 {
            return bad("max_attempts_per_injection", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.overlap_iou_max) {
            return bad("overlap_iou_max", "must lie in [0, 1]");
        }
        if !(self.min_injected_area_px >= 0.0) {
            return bad("min_injected_area_px", "must be nonnegative");
        }
        let b = self.scale_bounds;
        if !(b.min > 0.0 && b.min <= b.max && b.max.is_finite()) {
            return bad("scale_bounds", "need 0 < min <= max");
        }
        if !(0.0..=1.0).contains(&self.heatmap_weight) {
            return bad("heatmap_weight", "must lie in [0, 1]");
        }
        if self.bins == 0 {
            return bad("bins", "must be at least 1");
        }
        if self.grid == 0 {
            return bad("grid", "must be at least 1");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma", "must be finite and nonnegative");
        }
        if !(self.min_scale >= 0.0) {
            return bad("min_scale", "must be nonnegative");
        }
        if !(self.cg_tolerance > 0.0) {
            return bad("cg_tolerance", "must be positive");
        }
        Ok(())
    }

    /// Effective bin count: only perspective-aware runs bin by pitch.
    pub fn effective_bins(&self) -> usize {
        if self.perspective_aware {
            self.bins
        } else {
            1
        }
    }

    /// Whether the run needs target road masks at all.
    pub fn needs_masks(&self) -> bool {
        self.inject && self.content_aware
    }
}

/// 64-bit avalanche finalizer (SplitMix64).
pub const fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the bytes of an identifier.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Per-image stream seed: `splitmix64(seed ^ splitmix64(fnv1a64(image_id)))`.
pub fn stream_seed(seed: u64, image_id: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a64(image_id.as_bytes())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RejectReason {
    NothingOnRoad,
    DegenerateQuad,
    ScaleOutOfRange,
    SingularSystem,
    Overlap,
    MinArea,
    SolverDiverged,
}

impl RejectReason {
    pub const ALL: [RejectReason; 7] = [
        RejectReason::NothingOnRoad,
        RejectReason::DegenerateQuad,
        RejectReason::ScaleOutOfRange,
        RejectReason::SingularSystem,
        RejectReason::Overlap,
        RejectReason::MinArea,
        RejectReason::SolverDiverged,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::NothingOnRoad => "nothing_on_road",
            RejectReason::DegenerateQuad => "degenerate_quad",
            RejectReason::ScaleOutOfRange => "scale_out_of_range",
            RejectReason::SingularSystem => "singular_system",
            RejectReason::Overlap => "overlap",
            RejectReason::MinArea => "min_area",
            RejectReason::SolverDiverged => "solver_diverged",
        }
    }

    fn from_error(e: &Error) -> Option<Self> {
        Some(match e {
            Error::NothingOnRoad | Error::EmptyRegion => RejectReason::NothingOnRoad,
            Error::DegenerateQuad => RejectReason::DegenerateQuad,
            Error::ScaleOutOfRange { .. } => RejectReason::ScaleOutOfRange,
            Error::SingularSystem => RejectReason::SingularSystem,
            Error::SolverDiverged { .. } => RejectReason::SolverDiverged,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassthroughReason {
    InjectionDisabled,
    EmptyRoadMask,
    NoPerspective,
}

impl PassthroughReason {
    pub fn as_str(self) -> &'static str {
        match self {
            PassthroughReason::InjectionDisabled => "injection_disabled",
            PassthroughReason::EmptyRoadMask => "empty_road_mask",
            PassthroughReason::NoPerspective => "no_perspective",
        }
    }
}

/// One accepted paste.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionRecord {
    pub instance_id: u32,
    pub class: DamageClass,
    pub source_bin: usize,
    pub target_bin: Option<usize>,
    pub draw: DrawProvenance,
    pub placement: (usize, usize),
    pub placement_source: PlacementSource,
    pub quad: Quad,
    pub warped: bool,
    pub bbox: BoundingBox,
    pub region_pixels: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageReport {
    pub attempted: usize,
    pub accepted: usize,
    /// Rejections indexed like `RejectReason::ALL`.
    pub rejected: [usize; 7],
    pub bin_fallbacks: usize,
    pub uniform_fallbacks: usize,
    pub target_bin: Option<usize>,
    pub passthrough: Option<PassthroughReason>,
    pub injections: Vec<InjectionRecord>,
}

impl ImageReport {
    pub fn rejected_total(&self) -> usize {
        self.rejected.iter().sum()
    }

    pub fn rejected_for(&self, reason: RejectReason) -> usize {
        self.rejected[reason as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageOutcome {
    pub image: RgbImage,
    /// Original annotations followed by the injected ones.
    pub annotations: Vec<Annotation>,
    pub report: ImageReport,
}

/// Target image and everything known about it.
#[derive(Debug, Clone, Copy)]
pub struct TargetImage<'a> {
    pub image: &'a RgbImage,
    pub annotations: &'a [Annotation],
    pub mask: Option<&'a RoadMask>,
    pub map: Option<&'a PerspectiveMap>,
}

/// Dataset-level artifacts shared by every image.
#[derive(Debug, Clone, Copy)]
pub struct Artifacts<'a> {
    pub bank: &'a DamageBank,
    /// One heatmap per bin; missing bins use the uniform grid.
    pub heatmaps: &'a [PlacementHeatmap],
    pub binning: &'a PitchBinning,
}

fn passthrough(target: &TargetImage<'_>, reason: PassthroughReason) -> ImageOutcome {
    ImageOutcome {
        image: target.image.clone(),
        annotations: target.annotations.to_vec(),
        report: ImageReport { passthrough: Some(reason), ..ImageReport::default() },
    }
}

/// Inject damages into one image following the configured ablation row.
///
/// Only `EmptyBank` and configuration/dimension errors escape; per-attempt
/// failures are counted as rejections and retried.
pub fn augment_image<R: Rng + ?Sized>(
    target: TargetImage<'_>,
    artifacts: Artifacts<'_>,
    config: &AugmentationConfig,
    rng: &mut R,
) -> Result<ImageOutcome> {
    if !config.inject {
        return Ok(passthrough(&target, PassthroughReason::InjectionDisabled));
    }
    let (w, h) = target.image.dims();
    let mask = if config.content_aware {
        match target.mask {
            Some(m) if m.road_pixel_count() > 0 => {
                if m.dims() != (w, h) {
                    return Err(Error::DimensionMismatch { expected: (w, h), found: m.dims() });
                }
                Some(m)
            }
            _ => return Ok(passthrough(&target, PassthroughReason::EmptyRoadMask)),
        }
    } else {
        None
    };
    let (map, target_bin) = if config.perspective_aware {
        match target.map {
            Some(m) => (Some(m), Some(artifacts.binning.assign(m.horizon_ratio()))),
            None => return Ok(passthrough(&target, PassthroughReason::NoPerspective)),
        }
    } else {
        (None, None)
    };

    let uniform;
    let heatmap = if !config.content_aware && !config.perspective_aware {
        uniform = PlacementHeatmap::uniform(0, config.grid, config.sigma);
        &uniform
    } else {
        let bin = target_bin.unwrap_or(0);
        match artifacts.heatmaps.get(bin) {
            Some(hm) => hm,
            None => {
                uniform = PlacementHeatmap::uniform(bin, config.grid, config.sigma);
                &uniform
            }
        }
    };
    let sampler = PlacementSampler::new(heatmap, w, h, mask, config.heatmap_weight)?;
    let cg = CgParams { tolerance: config.cg_tolerance, max_iterations: None };

    let mut image = target.image.clone();
    let mut annotations = target.annotations.to_vec();
    let mut report = ImageReport { target_bin, ..ImageReport::default() };

    for _ in 0..config.injections_per_image {
        for _ in 0..config.max_attempts_per_injection {
            report.attempted += 1;
            let draw = match target_bin {
                Some(bin) => artifacts.bank.sample(bin, rng, config.class_filter)?,
                None => artifacts.bank.sample_pooled(rng, config.class_filter)?,
            };
            let inst = draw.instance;
            let placement = sampler.sample(rng);
            let (pw, ph) = inst.patch.dims();
            let anchor = (placement.x as f64 + 0.5, placement.y as f64 + 1.0);

            let geometry = match map {
                Some(m) => target_quad(anchor, pw as f64, ph as f64, inst.s_src, m, config.scale_bounds)
                    .and_then(|q| Ok((q, solve_homography(&Quad::from_rect(pw as f64, ph as f64), &q)?))),
                None => {
                    let left = math::round(anchor.0 - pw as f64 / 2.0);
                    let top = anchor.1 - ph as f64;
                    Ok((Quad::axis_aligned(left, top, pw as f64, ph as f64), Homography::translation(left, top)))
                }
            };
            let attempt = geometry.and_then(|(quad, hom)| {
                let window = quad.pixel_window(1, w, h);
                if window.2 == 0 || window.3 == 0 {
                    return Err(Error::NothingOnRoad);
                }
                let warped = warp_patch(&inst.patch, &hom, window)?;
                let region = clip_to_road(&warped, mask, (w, h))?;
                Ok((quad, warped, region))
            });
            let (quad, warped, region) = match attempt {
                Ok(v) => v,
                Err(e) => match RejectReason::from_error(&e) {
                    Some(reason) => {
                        report.rejected[reason as usize] += 1;
                        continue;
                    }
                    None => return Err(e),
                },
            };
            let bbox = region.bounds().expect("nonempty region");
            if bbox.area() < config.min_injected_area_px {
                report.rejected[RejectReason::MinArea as usize] += 1;
                continue;
            }
            if annotations.iter().any(|a| a.bbox.iou(&bbox) > config.overlap_iou_max) {
                report.rejected[RejectReason::Overlap as usize] += 1;
                continue;
            }
            if let Err(e) = composite_into(&mut image, &warped, &region, config.blend_mode, cg) {
                match RejectReason::from_error(&e) {
                    Some(reason) => {
                        report.rejected[reason as usize] += 1;
                        continue;
                    }
                    None => return Err(e),
                }
            }

            if matches!(draw.provenance, DrawProvenance::Fallback(_)) {
                report.bin_fallbacks += 1;
            }
            if placement.source == PlacementSource::UniformFallback {
                report.uniform_fallbacks += 1;
            }
            annotations.push(Annotation::injected(inst.class, bbox));
            report.accepted += 1;
            report.injections.push(InjectionRecord {
                instance_id: inst.id,
                class: inst.class,
                source_bin: inst.bin,
                target_bin,
                draw: draw.provenance,
                placement: (placement.x, placement.y),
                placement_source: placement.source,
                quad,
                warped: map.is_some(),
                bbox,
                region_pixels: region.len(),
            });
            break;
        }
    }
    Ok(ImageOutcome { image, annotations, report })
}
