//! Dataset-level augmentation: artifact preparation, the parallel per-image
//! loop and the run report.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use roadpaste_core::pipeline::{augment_image, stream_seed, Artifacts, ImageReport, TargetImage};
use roadpaste_core::{
    Annotation, AugmentationConfig, BankParams, BankReport, DamageBank, DrawProvenance, Error as CoreError,
    PitchBinning, Provenance, RejectReason,
};
use serde::Serialize;

use crate::artifacts::{build_dataset_heatmaps, build_perspective_table, extract_dataset_bank, PreparedArtifacts};
use crate::dataset::{finish_output, read_rgb, write_augmented, DatasetIndex, ImageRecord, LoadReport, MaskSource, WrittenImage};
use crate::error::{write_err, IoError, Result};

pub const REPORT_FILE: &str = "report.json";
pub const IO_REPORT_FILE: &str = "io_report.txt";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; 0 lets the pool pick.
    pub jobs: usize,
    pub min_patch: usize,
    /// Persisted artifacts to use instead of building them. Only consulted
    /// for perspective-aware runs.
    pub prebuilt: Option<PreparedArtifacts>,
}

fn bank_params(config: &AugmentationConfig, min_patch: usize) -> BankParams {
    BankParams { min_scale: config.min_scale, min_patch: min_patch.max(2) }
}

/// Build the table, bank and heatmaps a run needs. Masks are read only
/// when the configuration is perspective-aware.
pub fn prepare_artifacts(
    index: &DatasetIndex,
    masks: &dyn MaskSource,
    config: &AugmentationConfig,
    min_patch: usize,
) -> Result<PreparedArtifacts> {
    let params = bank_params(config, min_patch);
    if !config.inject || config.injections_per_image == 0 {
        let bank = DamageBank::from_instances(Vec::new(), PitchBinning::single(), params)?;
        return Ok(PreparedArtifacts { table: None, bank, bank_report: BankReport::default(), heatmaps: Vec::new() });
    }
    let table = if config.perspective_aware {
        Some(build_perspective_table(index, masks, config.bins, config.min_road_pixels)?)
    } else {
        None
    };
    let (bank, bank_report) = extract_dataset_bank(index, table.as_ref(), params)?;
    let heatmaps = build_dataset_heatmaps(index, table.as_ref(), config.sigma, config.grid);
    Ok(PreparedArtifacts { table, bank, bank_report, heatmaps })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigSnapshot {
    pub seed: u64,
    pub inject: bool,
    pub content_aware: bool,
    pub perspective_aware: bool,
    pub injections_per_image: usize,
    pub max_attempts_per_injection: usize,
    pub blend_mode: &'static str,
    pub overlap_iou_max: f64,
    pub min_injected_area_px: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub heatmap_weight: f64,
    pub bins: usize,
    pub sigma: f64,
    pub grid: usize,
    pub min_scale: f64,
    pub min_patch: usize,
    pub min_road_pixels: usize,
    pub class_filter: Option<String>,
    pub cg_tolerance: f64,
}

impl ConfigSnapshot {
    pub fn new(c: &AugmentationConfig, min_patch: usize) -> Self {
        Self {
            seed: c.seed,
            inject: c.inject,
            content_aware: c.content_aware,
            perspective_aware: c.perspective_aware,
            injections_per_image: c.injections_per_image,
            max_attempts_per_injection: c.max_attempts_per_injection,
            blend_mode: c.blend_mode.as_str(),
            overlap_iou_max: c.overlap_iou_max,
            min_injected_area_px: c.min_injected_area_px,
            scale_min: c.scale_bounds.min,
            scale_max: c.scale_bounds.max,
            heatmap_weight: c.heatmap_weight,
            bins: c.bins,
            sigma: c.sigma,
            grid: c.grid,
            min_scale: c.min_scale,
            min_patch,
            min_road_pixels: c.min_road_pixels,
            class_filter: c.class_filter.map(|c| c.to_string()),
            cg_tolerance: c.cg_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InjectionSummary {
    pub instance_id: u32,
    pub class: String,
    pub source_bin: usize,
    pub target_bin: Option<usize>,
    /// `direct`, `fallback:<bin>` or `pooled`.
    pub draw: String,
    pub placement: [usize; 2],
    pub placement_source: &'static str,
    pub warped: bool,
    /// Target quad corners, bottom-left first, counter-clockwise on screen.
    pub quad: [[f64; 2]; 4],
    pub bbox: [f64; 4],
    pub region_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageSummary {
    pub image_id: String,
    pub attempted: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<&'static str, usize>,
    pub bin_fallbacks: usize,
    pub uniform_fallbacks: usize,
    pub target_bin: Option<usize>,
    pub passthrough: Option<&'static str>,
    pub injections: Vec<InjectionSummary>,
    pub original_annotations: usize,
    pub output_annotations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Totals {
    pub images: usize,
    pub written: usize,
    pub attempted: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<&'static str, usize>,
    pub bin_fallbacks: usize,
    pub uniform_fallbacks: usize,
    pub injected_by_class: BTreeMap<String, usize>,
    pub injected_by_bin: BTreeMap<usize, usize>,
    pub passthrough: BTreeMap<&'static str, usize>,
    pub errors: usize,
    pub annotations_in: usize,
    pub annotations_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BankSummary {
    pub instances: usize,
    pub too_small: usize,
    pub near_horizon: usize,
    pub per_bin: Vec<usize>,
    pub edges: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentationReport {
    pub config: ConfigSnapshot,
    pub load: LoadReport,
    pub bank: BankSummary,
    pub totals: Totals,
    pub images: Vec<ImageSummary>,
}

fn summarize(rec: &ImageRecord, original: usize, report: &ImageReport, output: usize) -> ImageSummary {
    let rejected = RejectReason::ALL.iter().map(|&r| (r.as_str(), report.rejected_for(r))).collect();
    let injections = report
        .injections
        .iter()
        .map(|i| InjectionSummary {
            instance_id: i.instance_id,
            class: i.class.to_string(),
            source_bin: i.source_bin,
            target_bin: i.target_bin,
            draw: match i.draw {
                DrawProvenance::Direct => "direct".into(),
                DrawProvenance::Fallback(b) => format!("fallback:{b}"),
                DrawProvenance::Pooled => "pooled".into(),
            },
            placement: [i.placement.0, i.placement.1],
            placement_source: match i.placement_source {
                roadpaste_core::PlacementSource::Heatmap => "heatmap",
                roadpaste_core::PlacementSource::UniformFallback => "uniform_fallback",
            },
            warped: i.warped,
            quad: i.quad.corners.map(|p| [p.0, p.1]),
            bbox: [i.bbox.x_min, i.bbox.y_min, i.bbox.x_max, i.bbox.y_max],
            region_pixels: i.region_pixels,
        })
        .collect();
    ImageSummary {
        image_id: rec.image_id.clone(),
        attempted: report.attempted,
        accepted: report.accepted,
        rejected,
        bin_fallbacks: report.bin_fallbacks,
        uniform_fallbacks: report.uniform_fallbacks,
        target_bin: report.target_bin,
        passthrough: report.passthrough.map(|p| p.as_str()),
        injections,
        original_annotations: original,
        output_annotations: output,
        error: None,
    }
}

fn failed(rec: &ImageRecord, original: usize, error: String) -> ImageSummary {
    let mut s = summarize(rec, original, &ImageReport::default(), original);
    s.error = Some(error);
    s
}

struct Processed {
    summary: ImageSummary,
    written: Option<WrittenImage>,
}

fn process_image(
    rec: &ImageRecord,
    anns: &[Annotation],
    masks: &dyn MaskSource,
    prepared: &PreparedArtifacts,
    config: &AugmentationConfig,
    out_dir: &Path,
) -> Result<Processed> {
    let image = match read_rgb(&rec.path) {
        Ok(img) => img,
        Err(e) => {
            log::warn!("{}: {e}", rec.image_id);
            return Ok(Processed { summary: failed(rec, anns.len(), e.to_string()), written: None });
        }
    };
    // Per-image data problems pass the image through unchanged.
    let passthrough = |e: String| -> Result<Processed> {
        log::warn!("{}: {e}", rec.image_id);
        let written = write_augmented(&rec.image_id, &image, anns, out_dir)?;
        Ok(Processed { summary: failed(rec, anns.len(), e), written: Some(written) })
    };
    let mask = if config.needs_masks() {
        match masks.load(rec) {
            Ok(m) => m,
            Err(e) => return passthrough(e.to_string()),
        }
    } else {
        None
    };
    let map = if config.perspective_aware { prepared.table.as_ref().and_then(|t| t.map_for(rec)) } else { None };
    let binning = prepared.table.as_ref().map_or_else(|| prepared.bank.binning().clone(), |t| t.binning.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, &rec.image_id));
    let target = TargetImage { image: &image, annotations: anns, mask: mask.as_ref(), map: map.as_ref() };
    let artifacts = Artifacts { bank: &prepared.bank, heatmaps: &prepared.heatmaps, binning: &binning };
    let outcome = match augment_image(target, artifacts, config, &mut rng) {
        Ok(o) => o,
        Err(e @ CoreError::EmptyBank) => return Err(e.into()),
        Err(e) => return passthrough(e.to_string()),
    };
    let written = write_augmented(&rec.image_id, &outcome.image, &outcome.annotations, out_dir)?;
    let summary = summarize(rec, anns.len(), &outcome.report, outcome.annotations.len());
    Ok(Processed { summary, written: Some(written) })
}

/// Augment every image of `index` into `out_dir`.
///
/// Each image draws from its own generator seeded by
/// `stream_seed(config.seed, image_id)`, so the output tree does not depend
/// on the worker count. Build-step failures abort; per-image failures are
/// recorded in the report and the image is passed through.
pub fn augment_dataset(
    index: &DatasetIndex,
    masks: &dyn MaskSource,
    config: &AugmentationConfig,
    out_dir: &Path,
    options: RunOptions,
) -> Result<AugmentationReport> {
    config.validate()?;
    // Every parallel step, artifact building included, runs on this pool so
    // `jobs` caps the whole run.
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| IoError::Artifact { path: PathBuf::new(), reason: e.to_string() })?;
    pool.install(|| run_on_pool(index, masks, config, out_dir, options))
}

fn run_on_pool(
    index: &DatasetIndex,
    masks: &dyn MaskSource,
    config: &AugmentationConfig,
    out_dir: &Path,
    options: RunOptions,
) -> Result<AugmentationReport> {
    let prepared = match options.prebuilt {
        Some(p) if config.perspective_aware && config.inject => {
            if p.bank.bins() != config.bins {
                return Err(IoError::Artifact {
                    path: out_dir.into(),
                    reason: format!("persisted artifacts have {} bins, configuration asks for {}", p.bank.bins(), config.bins),
                });
            }
            p
        }
        _ => prepare_artifacts(index, masks, config, options.min_patch)?,
    };
    if config.inject && config.injections_per_image > 0 && prepared.bank.is_empty() {
        return Err(CoreError::EmptyBank.into());
    }
    fs::create_dir_all(out_dir).map_err(|e| write_err(out_dir, e))?;

    let processed: Vec<Processed> = index
        .records
        .par_iter()
        .zip(index.annotations.par_iter())
        .map(|(rec, anns)| process_image(rec, anns, masks, &prepared, config, out_dir))
        .collect::<Result<_>>()?;

    let written: Vec<WrittenImage> = processed.iter().filter_map(|p| p.written.clone()).collect();
    finish_output(out_dir, &written, index.manifest.masks.as_deref())?;

    let images: Vec<ImageSummary> = processed.into_iter().map(|p| p.summary).collect();
    let mut totals = Totals { images: images.len(), written: written.len(), ..Totals::default() };
    for r in RejectReason::ALL {
        totals.rejected.insert(r.as_str(), 0);
    }
    for s in &images {
        totals.attempted += s.attempted;
        totals.accepted += s.accepted;
        for (k, v) in &s.rejected {
            *totals.rejected.entry(k).or_default() += v;
        }
        totals.bin_fallbacks += s.bin_fallbacks;
        totals.uniform_fallbacks += s.uniform_fallbacks;
        for i in &s.injections {
            *totals.injected_by_class.entry(i.class.clone()).or_default() += 1;
            *totals.injected_by_bin.entry(i.source_bin).or_default() += 1;
        }
        if let Some(p) = s.passthrough {
            *totals.passthrough.entry(p).or_default() += 1;
        }
        totals.errors += usize::from(s.error.is_some());
        totals.annotations_in += s.original_annotations;
        totals.annotations_out += s.output_annotations;
    }
    let bank = BankSummary {
        instances: prepared.bank.len(),
        too_small: prepared.bank_report.too_small,
        near_horizon: prepared.bank_report.near_horizon,
        per_bin: roadpaste_core::bank::bin_histogram(&prepared.bank),
        edges: prepared.bank.binning().edges().to_vec(),
    };
    let report = AugmentationReport {
        config: ConfigSnapshot::new(config, bank_params(config, options.min_patch).min_patch),
        load: index.report.clone(),
        bank,
        totals,
        images,
    };
    write_reports(out_dir, &report, &written)?;
    Ok(report)
}

fn write_reports(out_dir: &Path, report: &AugmentationReport, written: &[WrittenImage]) -> Result<()> {
    let path = out_dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(report).map_err(|e| write_err(&path, e))?;
    fs::write(&path, json + "\n").map_err(|e| write_err(&path, e))?;

    let injected: usize =
        written.iter().flat_map(|w| &w.annotations).filter(|a| a.provenance == Provenance::Injected).count();
    let total: usize = written.iter().map(|w| w.annotations.len()).sum();
    let mut text = String::from("[load]\n");
    text.push_str(&report.load.to_string());
    text.push_str("[write]\n");
    text.push_str(&format!("images_written\t{}\n", written.len()));
    text.push_str(&format!("annotations_written\t{total}\n"));
    text.push_str(&format!("injected_annotations\t{injected}\n"));
    text.push_str(&format!("image_errors\t{}\n", report.totals.errors));
    let path = out_dir.join(IO_REPORT_FILE);
    fs::write(&path, text).map_err(|e| write_err(&path, e))
}
