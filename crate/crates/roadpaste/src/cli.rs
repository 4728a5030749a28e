//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 1 on runtime failure, 2 on usage or configuration errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use roadpaste_core::pipeline::Ablation;
use roadpaste_core::BlendMode;

use crate::artifacts::{self, PerspectiveTable, BANK_DIR, HEATMAP_FILE, HEATMAP_RENDER_DIR, PERSPECTIVE_FILE};
use crate::augment::{augment_dataset, RunOptions};
use crate::config::{resolve, CliConfig, ConfigError, FileConfig, Overrides};
use crate::dataset::{load_dataset, DatasetIndex, FsMasks};
use crate::error::IoError;
use crate::fixtures::{write_fixture, AnnotationFormat, FixtureSpec};
use crate::inspect::{dataset_stats, run_inspect};

pub const LOG_ENV: &str = "ROADPASTE_LOG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationArg {
    Baseline,
    Paste,
    Content,
    Ours,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Baseline => Ablation::Baseline,
            AblationArg::Paste => Ablation::Paste,
            AblationArg::Content => Ablation::Content,
            AblationArg::Ours => Ablation::Ours,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum BlendArg {
    PoissonImport,
    PoissonMixed,
    Alpha,
}

impl From<BlendArg> for BlendMode {
    fn from(b: BlendArg) -> Self {
        match b {
            BlendArg::PoissonImport => BlendMode::PoissonImport,
            BlendArg::PoissonMixed => BlendMode::PoissonMixed,
            BlendArg::Alpha => BlendMode::Alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Voc,
    Coco,
}

#[derive(Debug, Parser)]
#[command(name = "roadpaste", version, about = "Road-damage cut-and-paste augmentation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of pitch bins.
    #[arg(long, global = true)]
    pub bins: Option<usize>,
    /// Heatmap smoothing width in grid cells.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Heatmap grid size per side.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub blend_mode: Option<BlendArg>,
    #[arg(long, global = true, value_enum)]
    pub ablation: Option<AblationArg>,
    /// Injections per image.
    #[arg(long, global = true)]
    pub injections: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Dataset manifest file or directory.
    #[arg(long, global = true, value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Artifact directory shared by index, bank and heatmap stages.
    #[arg(long, global = true, value_name = "DIR")]
    pub artifacts: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate per-image perspective and pitch bins.
    Index,
    /// Damage bank stages.
    Bank {
        #[command(subcommand)]
        action: BankAction,
    },
    #[command(name = "bank-extract", hide = true)]
    BankExtract,
    /// Placement heatmap stages.
    Heatmap {
        #[command(subcommand)]
        action: HeatmapAction,
    },
    #[command(name = "heatmap-build", hide = true)]
    HeatmapBuild,
    /// Augment a dataset into --out.
    Augment,
    /// Render audit overlays and heatmaps into --out.
    Inspect {
        /// Restrict to these image ids (repeatable).
        #[arg(long = "image", value_name = "ID")]
        images: Vec<String>,
    },
    /// Print dataset and artifact statistics.
    Stats,
    /// Write a synthetic dataset into --out.
    Synth {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 640)]
        width: usize,
        #[arg(long, default_value_t = 640)]
        height: usize,
        #[arg(long, default_value_t = 3)]
        damages: usize,
        #[arg(long, value_enum, default_value_t = FormatArg::Coco)]
        format: FormatArg,
    },
}

#[derive(Debug, Subcommand)]
pub enum BankAction {
    /// Extract damage patches into <artifacts>/bank.
    Extract,
}

#[derive(Debug, Subcommand)]
pub enum HeatmapAction {
    /// Build per-bin heatmaps into <artifacts>.
    Build,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            ablation: self.ablation.map(Into::into),
            seed: self.seed,
            bins: self.bins,
            sigma: self.sigma,
            grid: self.grid,
            blend_mode: self.blend_mode.map(Into::into),
            injections: self.injections,
            jobs: self.jobs,
            dataset: self.dataset.clone(),
            out: self.out.clone(),
            artifacts: self.artifacts.clone(),
        }
    }
}

/// Merge the config file (if any) with the flags.
pub fn load_config(global: &GlobalArgs) -> Result<CliConfig, ConfigError> {
    let file = global.config.as_deref().map(FileConfig::read).transpose()?;
    resolve(file.as_ref(), &global.overrides())
}

fn require<'a>(v: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, Failure> {
    v.as_deref().ok_or_else(|| Failure::Usage(format!("missing required value `{key}` (flag --{key} or config file)")))
}

fn dataset(cfg: &CliConfig) -> Result<DatasetIndex, Failure> {
    let index = load_dataset(require(&cfg.dataset, "dataset")?)?;
    log::info!("loaded {} images, {} annotations", index.len(), index.annotation_count());
    Ok(index)
}

/// Reuse the persisted table when its bin count matches, else rebuild it.
fn perspective_table(cfg: &CliConfig, index: &DatasetIndex, dir: &Path) -> Result<PerspectiveTable, Failure> {
    let path = dir.join(PERSPECTIVE_FILE);
    if path.is_file() {
        let t = PerspectiveTable::read(&path)?;
        if t.binning.bins() == cfg.augmentation.bins && t.entries.len() == index.len() {
            return Ok(t);
        }
        log::warn!("{} does not match the configuration; rebuilding", path.display());
    }
    let a = &cfg.augmentation;
    let t = artifacts::build_perspective_table(index, &FsMasks, a.bins, a.min_road_pixels)?;
    t.write(&path)?;
    Ok(t)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.global)?;
    let a = &cfg.augmentation;
    match cli.command {
        Command::Index => {
            let index = dataset(&cfg)?;
            let dir = require(&cfg.artifacts, "artifacts")?;
            let t = artifacts::build_perspective_table(&index, &FsMasks, a.bins, a.min_road_pixels)?;
            let path = dir.join(PERSPECTIVE_FILE);
            t.write(&path)?;
            let estimated = t.entries.iter().filter(|e| e.y_v.is_some()).count();
            println!("{}: {estimated}/{} images estimated, {} bins", path.display(), t.entries.len(), t.binning.bins());
        }
        Command::Bank { action: BankAction::Extract } | Command::BankExtract => {
            let index = dataset(&cfg)?;
            let dir = require(&cfg.artifacts, "artifacts")?;
            let t = perspective_table(&cfg, &index, dir)?;
            let params = roadpaste_core::BankParams { min_scale: a.min_scale, min_patch: cfg.min_patch };
            let (bank, report) = artifacts::extract_dataset_bank(&index, Some(&t), params)?;
            artifacts::write_bank(&dir.join(BANK_DIR), &bank)?;
            println!(
                "{}: {} instances ({} too small, {} near horizon), per bin {:?}",
                dir.join(BANK_DIR).display(),
                report.extracted,
                report.too_small,
                report.near_horizon,
                roadpaste_core::bank::bin_histogram(&bank)
            );
        }
        Command::Heatmap { action: HeatmapAction::Build } | Command::HeatmapBuild => {
            let index = dataset(&cfg)?;
            let dir = require(&cfg.artifacts, "artifacts")?;
            let t = perspective_table(&cfg, &index, dir)?;
            let maps = artifacts::build_dataset_heatmaps(&index, Some(&t), a.sigma, a.grid);
            artifacts::write_heatmaps(&dir.join(HEATMAP_FILE), &maps)?;
            let renders = artifacts::write_heatmap_renders(&dir.join(HEATMAP_RENDER_DIR), &maps)?;
            println!("{}: {} bins, {} renders", dir.join(HEATMAP_FILE).display(), maps.len(), renders.len());
        }
        Command::Augment => {
            let index = dataset(&cfg)?;
            let out = require(&cfg.out, "out")?;
            let prebuilt = match (&cfg.artifacts, a.perspective_aware) {
                (Some(dir), true) => artifacts::load_artifacts(dir)?,
                _ => None,
            };
            let options = RunOptions { jobs: cfg.jobs, min_patch: cfg.min_patch, prebuilt };
            let report = augment_dataset(&index, &FsMasks, a, out, options)?;
            let t = &report.totals;
            println!(
                "{}: {} images, {} attempted, {} accepted, {} rejected, {} errors",
                out.display(),
                t.images,
                t.attempted,
                t.accepted,
                t.rejected.values().sum::<usize>(),
                t.errors
            );
        }
        Command::Inspect { images } => {
            let index = dataset(&cfg)?;
            let out = require(&cfg.out, "out")?;
            let summary = run_inspect(&index, cfg.artifacts.as_deref(), &images, out)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}: {} overlays, {} heatmap renders", out.display(), summary.overlays.len(), summary.heatmap_renders.len());
        }
        Command::Stats => {
            let index = dataset(&cfg)?;
            print!("{}", dataset_stats(&index, cfg.artifacts.as_deref())?);
        }
        Command::Synth { count, width, height, damages, format } => {
            let out = require(&cfg.out, "out")?;
            if width < 16 || height < 16 {
                return Err(Failure::Usage("invalid value for `width`/`height`: must be at least 16".into()));
            }
            let spec = FixtureSpec {
                images: count,
                width,
                height,
                damages_per_image: damages,
                seed: a.seed,
                format: match format {
                    FormatArg::Voc => AnnotationFormat::Voc,
                    FormatArg::Coco => AnnotationFormat::Coco,
                },
                with_masks: true,
            };
            write_fixture(out, &spec)?;
            println!("{}: {count} synthetic images", out.display());
        }
    }
    Ok(())
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}
