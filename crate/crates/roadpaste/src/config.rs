//! Layered run configuration: TOML file sections, then command-line flags.
//!
//! Precedence, lowest first: built-in defaults, the file's ablation preset,
//! the file's individual keys, the flag ablation preset, individual flags.
//! A preset only sets the three toggles and the blend mode.

use std::fs;
use std::path::{Path, PathBuf};

use roadpaste_core::pipeline::Ablation;
use roadpaste_core::{AugmentationConfig, BlendMode, DamageClass, Error as CoreError};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("invalid config {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), reason: reason.into() }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub ablation: Option<String>,
    pub seed: Option<u64>,
    pub inject: Option<bool>,
    pub content_aware: Option<bool>,
    pub perspective_aware: Option<bool>,
    pub injections_per_image: Option<usize>,
    pub max_attempts_per_injection: Option<usize>,
    pub overlap_iou_max: Option<f64>,
    pub min_injected_area_px: Option<f64>,
    pub class_filter: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerspectiveSection {
    pub bins: Option<usize>,
    pub min_road_pixels: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankSection {
    pub min_scale: Option<f64>,
    pub min_patch: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementSection {
    pub sigma: Option<f64>,
    pub grid: Option<usize>,
    pub heatmap_weight: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarpSection {
    pub scale_min: Option<f64>,
    pub scale_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlendSection {
    pub mode: Option<String>,
    pub cg_tolerance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub artifacts: Option<PathBuf>,
}

/// On-disk config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub perspective: PerspectiveSection,
    #[serde(default)]
    pub bank: BankSection,
    #[serde(default)]
    pub placement: PlacementSection,
    #[serde(default)]
    pub warp: WarpSection,
    #[serde(default)]
    pub blend: BlendSection,
    #[serde(default)]
    pub run: RunSection,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read { path: path.into(), reason: e.to_string() })?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.into(), reason: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let abs = |p: &mut Option<PathBuf>| {
            if let Some(v) = p.as_mut().filter(|v| v.is_relative()) {
                *v = base.join(&*v);
            }
        };
        abs(&mut cfg.dataset.manifest);
        abs(&mut cfg.run.out);
        abs(&mut cfg.run.artifacts);
        Ok(cfg)
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub ablation: Option<Ablation>,
    pub seed: Option<u64>,
    pub bins: Option<usize>,
    pub sigma: Option<f64>,
    pub grid: Option<usize>,
    pub blend_mode: Option<BlendMode>,
    pub injections: Option<usize>,
    pub jobs: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub artifacts: Option<PathBuf>,
}

/// Fully merged configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub artifacts: Option<PathBuf>,
    /// 0 means one worker per core.
    pub jobs: usize,
    pub min_patch: usize,
    pub augmentation: AugmentationConfig,
}

fn apply_preset(cfg: &mut AugmentationConfig, ablation: Ablation) {
    let p = AugmentationConfig::preset(ablation, cfg.seed);
    cfg.inject = p.inject;
    cfg.content_aware = p.content_aware;
    cfg.perspective_aware = p.perspective_aware;
    cfg.blend_mode = p.blend_mode;
}

pub fn parse_ablation(key: &str, s: &str) -> Result<Ablation, ConfigError> {
    Ablation::parse(s).ok_or_else(|| invalid(key, format!("`{s}` is not one of baseline, paste, content, ours")))
}

pub fn parse_blend(key: &str, s: &str) -> Result<BlendMode, ConfigError> {
    BlendMode::parse(s).ok_or_else(|| invalid(key, format!("`{s}` is not one of poisson_import, poisson_mixed, alpha")))
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

pub fn resolve(file: Option<&FileConfig>, flags: &Overrides) -> Result<CliConfig, ConfigError> {
    let mut cfg = AugmentationConfig::default();
    let mut out = CliConfig { dataset: None, out: None, artifacts: None, jobs: 0, min_patch: 2, augmentation: cfg.clone() };
    if let Some(f) = file {
        let p = &f.pipeline;
        if let Some(a) = &p.ablation {
            apply_preset(&mut cfg, parse_ablation("pipeline.ablation", a)?);
        }
        set(&mut cfg.seed, p.seed);
        set(&mut cfg.inject, p.inject);
        set(&mut cfg.content_aware, p.content_aware);
        set(&mut cfg.perspective_aware, p.perspective_aware);
        set(&mut cfg.injections_per_image, p.injections_per_image);
        set(&mut cfg.max_attempts_per_injection, p.max_attempts_per_injection);
        set(&mut cfg.overlap_iou_max, p.overlap_iou_max);
        set(&mut cfg.min_injected_area_px, p.min_injected_area_px);
        if let Some(c) = &p.class_filter {
            let class = c.parse::<DamageClass>().map_err(|_| invalid("pipeline.class_filter", format!("unknown class `{c}`")))?;
            cfg.class_filter = Some(class);
        }
        set(&mut cfg.bins, f.perspective.bins);
        set(&mut cfg.min_road_pixels, f.perspective.min_road_pixels);
        set(&mut cfg.min_scale, f.bank.min_scale);
        set(&mut out.min_patch, f.bank.min_patch);
        set(&mut cfg.sigma, f.placement.sigma);
        set(&mut cfg.grid, f.placement.grid);
        set(&mut cfg.heatmap_weight, f.placement.heatmap_weight);
        set(&mut cfg.scale_bounds.min, f.warp.scale_min);
        set(&mut cfg.scale_bounds.max, f.warp.scale_max);
        if let Some(m) = &f.blend.mode {
            cfg.blend_mode = parse_blend("blend.mode", m)?;
        }
        set(&mut cfg.cg_tolerance, f.blend.cg_tolerance);
        out.dataset = f.dataset.manifest.clone();
        out.out = f.run.out.clone();
        out.artifacts = f.run.artifacts.clone();
        set(&mut out.jobs, f.run.jobs);
    }
    if let Some(a) = flags.ablation {
        apply_preset(&mut cfg, a);
    }
    set(&mut cfg.seed, flags.seed);
    set(&mut cfg.bins, flags.bins);
    set(&mut cfg.sigma, flags.sigma);
    set(&mut cfg.grid, flags.grid);
    set(&mut cfg.blend_mode, flags.blend_mode);
    set(&mut cfg.injections_per_image, flags.injections);
    set(&mut out.jobs, flags.jobs);
    if flags.dataset.is_some() {
        out.dataset = flags.dataset.clone();
    }
    if flags.out.is_some() {
        out.out = flags.out.clone();
    }
    if flags.artifacts.is_some() {
        out.artifacts = flags.artifacts.clone();
    }
    if out.min_patch < 2 {
        return Err(invalid("bank.min_patch", "must be at least 2"));
    }
    cfg.validate().map_err(|e| match e {
        CoreError::InvalidConfig { key, reason } => invalid(key, reason),
        other => invalid("config", other.to_string()),
    })?;
    out.augmentation = cfg;
    Ok(out)
}
