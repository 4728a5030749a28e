//! Stage artifacts persisted between CLI runs: the per-image perspective
//! table, the damage bank directory, and the placement heatmaps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use roadpaste_core::bank::{extract_bank, BankSource};
use roadpaste_core::perspective::{build_pitch_bins, estimate_vanishing_row};
use roadpaste_core::placement::{build_heatmaps, location_of};
use roadpaste_core::{
    BankParams, BankReport, BoundingBox, Confidence, DamageBank, DamageClass, DamageInstance, PerspectiveMap, PitchBinning, PlacementHeatmap, RgbImage,
};

use crate::dataset::{read_rgb, write_png, DatasetIndex, ImageRecord, MaskSource};
use crate::error::{artifact_err, write_err, IoError, Result};

pub const PERSPECTIVE_FILE: &str = "perspective.tsv";
pub const BANK_DIR: &str = "bank";
pub const BANK_MANIFEST: &str = "manifest.tsv";
pub const HEATMAP_FILE: &str = "heatmaps.bin";
pub const HEATMAP_RENDER_DIR: &str = "heatmaps";

const HEATMAP_MAGIC: &[u8; 4] = b"RDHM";
const HEATMAP_VERSION: u32 = 1;

/// Outcome of the vanishing-row estimate for one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryStatus {
    Fitted,
    Fallback,
    NoMask,
    NoRoad,
    MaskError,
}

impl EntryStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryStatus::Fitted => "fitted",
            EntryStatus::Fallback => "fallback",
            EntryStatus::NoMask => "no_mask",
            EntryStatus::NoRoad => "no_road",
            EntryStatus::MaskError => "mask_error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Fitted, Self::Fallback, Self::NoMask, Self::NoRoad, Self::MaskError].into_iter().find(|v| v.as_str() == s)
    }
}

impl From<Confidence> for EntryStatus {
    fn from(c: Confidence) -> Self {
        match c {
            Confidence::Fitted => EntryStatus::Fitted,
            Confidence::Fallback => EntryStatus::Fallback,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerspectiveEntry {
    pub image_id: String,
    pub status: EntryStatus,
    pub y_v: Option<f64>,
    /// Normalized horizon row `y_v / H`.
    pub h: Option<f64>,
    pub bin: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerspectiveTable {
    pub binning: PitchBinning,
    /// Sorted by image id.
    pub entries: Vec<PerspectiveEntry>,
}

impl PerspectiveTable {
    pub fn get(&self, image_id: &str) -> Option<&PerspectiveEntry> {
        self.entries.binary_search_by(|e| e.image_id.as_str().cmp(image_id)).ok().map(|i| &self.entries[i])
    }

    pub fn map_for(&self, record: &ImageRecord) -> Option<PerspectiveMap> {
        let y_v = self.get(&record.image_id)?.y_v?;
        PerspectiveMap::new(y_v, record.width, record.height).ok()
    }

    pub fn bin_for(&self, image_id: &str) -> Option<usize> {
        self.get(image_id)?.bin
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "# k={}", self.binning.bins());
        let edges: Vec<String> = self.binning.edges().iter().map(f64::to_string).collect();
        let _ = writeln!(out, "# edges={}", edges.join(","));
        out.push_str("image_id\ty_v\tconfidence\th\tbin\n");
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                e.image_id,
                opt(e.y_v.map(|v| v.to_string())),
                e.status.as_str(),
                opt(e.h.map(|v| v.to_string())),
                opt(e.bin.map(|v| v.to_string())),
            );
        }
        write_text(path, &out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| artifact_err(path, e))?;
        let bad = |what: &str| artifact_err(path, what);
        let mut edges = None;
        let mut entries = Vec::new();
        for line in text.lines() {
            if let Some(meta) = line.strip_prefix("# ") {
                if let Some(v) = meta.strip_prefix("edges=") {
                    edges = Some(parse_list(v).ok_or_else(|| bad("bad edges"))?);
                }
                continue;
            }
            if line.starts_with("image_id\t") || line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, y_v, status, h, bin] = cols[..] else { return Err(bad("expected 5 columns")) };
            let status = EntryStatus::parse(status).ok_or_else(|| bad("unknown confidence"))?;
            entries.push(PerspectiveEntry {
                image_id: id.to_owned(),
                status,
                y_v: parse_opt(y_v).ok_or_else(|| bad("bad y_v"))?,
                h: parse_opt(h).ok_or_else(|| bad("bad h"))?,
                bin: parse_opt(bin).ok_or_else(|| bad("bad bin"))?,
            });
        }
        let binning = PitchBinning::from_edges(edges.ok_or_else(|| bad("missing edges line"))?)?;
        entries.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        Ok(Self { binning, entries })
    }
}

fn parse_list(v: &str) -> Option<Vec<f64>> {
    if v.is_empty() {
        return Some(Vec::new());
    }
    v.split(',').map(|s| s.parse().ok()).collect()
}

fn parse_opt<T: std::str::FromStr>(s: &str) -> Option<Option<T>> {
    if s == "-" {
        Some(None)
    } else {
        s.parse().ok().map(Some)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| write_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| write_err(path, e))
}

/// Estimate the vanishing row of every image that has a mask. Mask problems
/// are logged and recorded in the entry, not raised.
pub fn estimate_perspectives(index: &DatasetIndex, masks: &dyn MaskSource, min_road_pixels: usize) -> Vec<PerspectiveEntry> {
    index
        .records
        .par_iter()
        .map(|rec| {
            let entry = |status, y_v: Option<f64>| PerspectiveEntry {
                image_id: rec.image_id.clone(),
                status,
                y_v,
                h: y_v.map(|y| roadpaste_core::perspective::horizon_ratio(y, rec.height)),
                bin: None,
            };
            match masks.load(rec) {
                Ok(None) => entry(EntryStatus::NoMask, None),
                Err(e) => {
                    log::warn!("{}: {e}", rec.image_id);
                    entry(EntryStatus::MaskError, None)
                }
                Ok(Some(mask)) => match estimate_vanishing_row(&mask, min_road_pixels) {
                    Ok(est) => entry(est.confidence.into(), Some(est.y_v)),
                    Err(e) => {
                        log::debug!("{}: {e}", rec.image_id);
                        entry(EntryStatus::NoRoad, None)
                    }
                },
            }
        })
        .collect()
}

/// Estimate every image, fit `bins` quantile bins over the horizon ratios
/// and assign each estimated image its bin.
pub fn build_perspective_table(
    index: &DatasetIndex,
    masks: &dyn MaskSource,
    bins: usize,
    min_road_pixels: usize,
) -> Result<PerspectiveTable> {
    let mut entries = estimate_perspectives(index, masks, min_road_pixels);
    let ratios: Vec<f64> = entries.iter().filter_map(|e| e.h).collect();
    let binning = build_pitch_bins(&ratios, bins)?;
    for e in &mut entries {
        e.bin = e.h.map(|h| binning.assign(h));
    }
    Ok(PerspectiveTable { binning, entries })
}

/// Extract bank instances from every annotated image. With a table, only
/// images that have a perspective estimate contribute, binned by the table;
/// without one, everything lands in a single bin with unit source scale.
pub fn extract_dataset_bank(
    index: &DatasetIndex,
    table: Option<&PerspectiveTable>,
    params: BankParams,
) -> Result<(DamageBank, BankReport)> {
    let binning = table.map_or_else(PitchBinning::single, |t| t.binning.clone());
    let parts: Vec<(Vec<DamageInstance>, BankReport)> = index
        .records
        .par_iter()
        .zip(index.annotations.par_iter())
        .filter(|(_, anns)| !anns.is_empty())
        .map(|(rec, anns)| {
            let map = match table {
                Some(t) => match t.map_for(rec) {
                    Some(m) => Some(m),
                    None => return Ok((Vec::new(), BankReport::default())),
                },
                None => None,
            };
            let image = read_rgb(&rec.path)?;
            let source = BankSource { image_id: &rec.image_id, image: &image, annotations: anns, map: map.as_ref() };
            let (bank, report) = extract_bank([source], &binning, params);
            Ok((bank.into_instances(), report))
        })
        .collect::<Result<_>>()?;
    let mut report = BankReport::default();
    let mut instances = Vec::new();
    for (part, r) in parts {
        report.too_small += r.too_small;
        report.near_horizon += r.near_horizon;
        for mut inst in part {
            inst.id = instances.len() as u32;
            instances.push(inst);
        }
    }
    report.extracted = instances.len();
    Ok((DamageBank::from_instances(instances, binning, params)?, report))
}

fn patch_path(dir: &Path, id: u32) -> PathBuf {
    dir.join("patches").join(format!("{id:06}.png"))
}

/// Persist a bank as one PNG per patch plus a tab-separated manifest.
pub fn write_bank(dir: &Path, bank: &DamageBank) -> Result<()> {
    let patches = dir.join("patches");
    fs::create_dir_all(&patches).map_err(|e| write_err(&patches, e))?;
    bank.instances().par_iter().try_for_each(|inst| write_png(&patch_path(dir, inst.id), &inst.patch))?;
    let mut out = String::new();
    let edges: Vec<String> = bank.binning().edges().iter().map(f64::to_string).collect();
    let _ = writeln!(out, "# k={}", bank.bins());
    let _ = writeln!(out, "# edges={}", edges.join(","));
    let _ = writeln!(out, "# min_scale={}", bank.params().min_scale);
    let _ = writeln!(out, "# min_patch={}", bank.params().min_patch);
    out.push_str("instance_id\tclass\tbin\ts_src\timage_id\tx_min\ty_min\tx_max\ty_max\n");
    for i in bank.instances() {
        let b = i.bbox;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            i.id, i.class, i.bin, i.s_src, i.image_id, b.x_min, b.y_min, b.x_max, b.y_max
        );
    }
    write_text(&dir.join(BANK_MANIFEST), &out)
}

pub fn read_bank(dir: &Path) -> Result<DamageBank> {
    let path = dir.join(BANK_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| artifact_err(&path, e))?;
    let bad = |what: &str| artifact_err(&path, what);
    let mut edges = None;
    let mut params = BankParams::default();
    let mut rows = Vec::new();
    for line in text.lines() {
        if let Some(meta) = line.strip_prefix("# ") {
            if let Some(v) = meta.strip_prefix("edges=") {
                edges = Some(parse_list(v).ok_or_else(|| bad("bad edges"))?);
            } else if let Some(v) = meta.strip_prefix("min_scale=") {
                params.min_scale = v.parse().map_err(|_| bad("bad min_scale"))?;
            } else if let Some(v) = meta.strip_prefix("min_patch=") {
                params.min_patch = v.parse().map_err(|_| bad("bad min_patch"))?;
            }
            continue;
        }
        if line.starts_with("instance_id\t") || line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [id, class, bin, s_src, image_id, x0, y0, x1, y1] = cols[..] else { return Err(bad("expected 9 columns")) };
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        rows.push((
            id.parse::<u32>().map_err(|_| bad("bad instance_id"))?,
            class.parse::<DamageClass>().map_err(|_| bad("bad class"))?,
            bin.parse::<usize>().map_err(|_| bad("bad bin"))?,
            num(s_src)?,
            image_id.to_owned(),
            BoundingBox::new(num(x0)?, num(y0)?, num(x1)?, num(y1)?),
        ));
    }
    let binning = PitchBinning::from_edges(edges.ok_or_else(|| bad("missing edges line"))?)?;
    let instances: Vec<DamageInstance> = rows
        .into_par_iter()
        .map(|(id, class, bin, s_src, image_id, bbox)| {
            let patch = read_rgb(&patch_path(dir, id))?;
            Ok(DamageInstance { id, class, image_id, bbox, patch, s_src, bin })
        })
        .collect::<Result<_>>()?;
    Ok(DamageBank::from_instances(instances, binning, params)?)
}

/// Per-bin heatmaps from the bottom-center of every original annotation.
pub fn build_dataset_heatmaps(
    index: &DatasetIndex,
    table: Option<&PerspectiveTable>,
    sigma: f64,
    grid: usize,
) -> Vec<PlacementHeatmap> {
    let bins = table.map_or(1, |t| t.binning.bins());
    let points = index.iter().flat_map(|(rec, anns)| {
        let bin = match table {
            Some(t) => t.bin_for(&rec.image_id),
            None => Some(0),
        };
        anns.iter().filter_map(move |a| {
            let bin = bin?;
            let (x, y) = location_of(&a.bbox, rec.width, rec.height);
            Some((bin, x, y))
        })
    });
    build_heatmaps(points, bins, sigma, grid)
}

/// Little-endian binary table: magic, version, bin count, grid, sigma, then
/// per bin its index, sample count and row-major cell values.
pub fn write_heatmaps(path: &Path, heatmaps: &[PlacementHeatmap]) -> Result<()> {
    let grid = heatmaps.first().map_or(0, |h| h.grid);
    let sigma = heatmaps.first().map_or(0.0, |h| h.sigma);
    let mut buf = Vec::with_capacity(24 + heatmaps.len() * (12 + grid * grid * 8));
    buf.extend_from_slice(HEATMAP_MAGIC);
    buf.extend_from_slice(&HEATMAP_VERSION.to_le_bytes());
    buf.extend_from_slice(&(heatmaps.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(grid as u32).to_le_bytes());
    buf.extend_from_slice(&sigma.to_le_bytes());
    for h in heatmaps {
        buf.extend_from_slice(&(h.bin as u32).to_le_bytes());
        buf.extend_from_slice(&h.sample_count.to_le_bytes());
        for v in h.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| write_err(dir, e))?;
    }
    fs::write(path, buf).map_err(|e| write_err(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    path: &'a Path,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.buf.len() < N {
            return Err(artifact_err(self.path, "truncated heatmap file"));
        }
        let (head, rest) = self.buf.split_at(N);
        self.buf = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.take().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.take().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.take().map(f64::from_le_bytes)
    }
}

pub fn read_heatmaps(path: &Path) -> Result<Vec<PlacementHeatmap>> {
    let data = fs::read(path).map_err(|e| artifact_err(path, e))?;
    let mut r = Reader { buf: &data, path };
    if &r.take::<4>()? != HEATMAP_MAGIC {
        return Err(artifact_err(path, "bad magic"));
    }
    let version = r.u32()?;
    if version != HEATMAP_VERSION {
        return Err(artifact_err(path, format!("unsupported version {version}")));
    }
    let bins = r.u32()? as usize;
    let grid = r.u32()? as usize;
    let sigma = r.f64()?;
    let mut out = Vec::with_capacity(bins);
    for _ in 0..bins {
        let bin = r.u32()? as usize;
        let samples = r.u64()?;
        let values = (0..grid * grid).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        out.push(PlacementHeatmap::from_values(bin, grid, sigma, samples, values)?);
    }
    if !r.buf.is_empty() {
        return Err(artifact_err(path, "trailing bytes"));
    }
    Ok(out)
}

const RAMP: [[f64; 3]; 5] =
    [[0.0, 0.0, 4.0], [87.0, 16.0, 110.0], [188.0, 55.0, 84.0], [249.0, 142.0, 9.0], [252.0, 255.0, 164.0]];

/// Map `t` in [0, 1] onto a dark-to-bright color ramp.
pub fn false_color(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (RAMP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(RAMP.len() - 2);
    let f = pos - i as f64;
    let c = |k: usize| (RAMP[i][k] + f * (RAMP[i + 1][k] - RAMP[i][k])).round() as u8;
    [c(0), c(1), c(2)]
}

/// Render a heatmap with each cell drawn as a `cell_px` square, scaled so
/// the largest cell gets the brightest color.
pub fn render_heatmap(heatmap: &PlacementHeatmap, cell_px: usize) -> RgbImage {
    let g = heatmap.grid;
    let max = heatmap.values().iter().copied().fold(0.0, f64::max);
    let mut img = RgbImage::new(g * cell_px, g * cell_px);
    for gy in 0..g {
        for gx in 0..g {
            let t = if max > 0.0 { heatmap.at(gx, gy) / max } else { 0.0 };
            let rgb = false_color(t);
            for y in gy * cell_px..(gy + 1) * cell_px {
                for x in gx * cell_px..(gx + 1) * cell_px {
                    img.put_pixel(x, y, rgb);
                }
            }
        }
    }
    img
}

pub fn write_heatmap_renders(dir: &Path, heatmaps: &[PlacementHeatmap]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| write_err(dir, e))?;
    heatmaps
        .iter()
        .map(|h| {
            let cell = (512 / h.grid.max(1)).max(1);
            let path = dir.join(format!("bin_{}.png", h.bin));
            write_png(&path, &render_heatmap(h, cell))?;
            Ok(path)
        })
        .collect()
}

/// Everything an augmentation run consumes besides the images themselves.
#[derive(Debug, Clone)]
pub struct PreparedArtifacts {
    pub table: Option<PerspectiveTable>,
    pub bank: DamageBank,
    pub bank_report: BankReport,
    pub heatmaps: Vec<PlacementHeatmap>,
}

/// Load persisted artifacts from `dir`; `Ok(None)` when any piece is absent.
pub fn load_artifacts(dir: &Path) -> Result<Option<PreparedArtifacts>> {
    let table = dir.join(PERSPECTIVE_FILE);
    let bank = dir.join(BANK_DIR);
    let heat = dir.join(HEATMAP_FILE);
    if !(table.is_file() && bank.join(BANK_MANIFEST).is_file() && heat.is_file()) {
        return Ok(None);
    }
    let table = PerspectiveTable::read(&table)?;
    let bank = read_bank(&bank)?;
    let heatmaps = read_heatmaps(&heat)?;
    if bank.bins() != table.binning.bins() || heatmaps.len() != table.binning.bins() {
        return Err(IoError::Artifact { path: dir.into(), reason: "bin counts of table, bank and heatmaps disagree".into() });
    }
    let bank_report = BankReport { extracted: bank.len(), ..BankReport::default() };
    Ok(Some(PreparedArtifacts { table: Some(table), bank, bank_report, heatmaps }))
}
