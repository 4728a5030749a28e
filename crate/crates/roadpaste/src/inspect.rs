//! Overlay renders for auditing a dataset or an augmentation run, and
//! plain-text dataset statistics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use roadpaste_core::perspective::estimate_vanishing_row;
use roadpaste_core::{BoundingBox, DamageClass, Provenance, RgbImage, RoadMask};

use crate::artifacts::{self, PerspectiveTable, HEATMAP_FILE, PERSPECTIVE_FILE};
use crate::augment::REPORT_FILE;
use crate::dataset::{load_mask, write_png, DatasetIndex};
use crate::error::{IoError, Result};

const CONTOUR: [u8; 3] = [255, 230, 0];
const HORIZON: [u8; 3] = [255, 0, 0];
const INJECTED: [u8; 3] = [0, 255, 0];
const ORIGINAL: [u8; 3] = [0, 120, 255];
const QUAD: [u8; 3] = [0, 255, 255];
const POINT: [u8; 3] = [255, 0, 255];

#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub image_id: String,
    pub path: PathBuf,
    pub injected_boxes: usize,
    pub original_boxes: usize,
    pub placement_points: usize,
    pub horizon: Option<f64>,
    pub contour_pixels: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InspectSummary {
    pub overlays: Vec<Overlay>,
    pub heatmap_renders: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

impl InspectSummary {
    pub fn rendered(&self) -> usize {
        self.overlays.len() + self.heatmap_renders.len()
    }
}

/// Placement points and target quads per image, taken from a run report.
#[derive(Debug, Clone, Default)]
struct RunMarks {
    points: Vec<(usize, usize)>,
    quads: Vec<[(f64, f64); 4]>,
}

fn run_marks(report: &serde_json::Value, image_id: &str) -> RunMarks {
    let mut marks = RunMarks::default();
    let Some(images) = report["images"].as_array() else { return marks };
    let Some(entry) = images.iter().find(|i| i["image_id"].as_str() == Some(image_id)) else { return marks };
    for inj in entry["injections"].as_array().into_iter().flatten() {
        if let (Some(x), Some(y)) = (inj["placement"][0].as_u64(), inj["placement"][1].as_u64()) {
            marks.points.push((x as usize, y as usize));
        }
        let corner = |k: usize| Some((inj["quad"][k][0].as_f64()?, inj["quad"][k][1].as_f64()?));
        if let (Some(a), Some(b), Some(c), Some(d)) = (corner(0), corner(1), corner(2), corner(3)) {
            marks.quads.push([a, b, c, d]);
        }
    }
    marks
}

fn plot(img: &mut RgbImage, x: i64, y: i64, rgb: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
        img.put_pixel(x as usize, y as usize, rgb);
    }
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), rgb: [u8; 3]) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        plot(img, (a.0 + t * (b.0 - a.0)).floor() as i64, (a.1 + t * (b.1 - a.1)).floor() as i64, rgb);
    }
}

fn rectangle(img: &mut RgbImage, b: &BoundingBox, rgb: [u8; 3]) {
    let (x0, y0, x1, y1) = (b.x_min, b.y_min, b.x_max - 1.0, b.y_max - 1.0);
    line(img, (x0, y0), (x1, y0), rgb);
    line(img, (x1, y0), (x1, y1), rgb);
    line(img, (x1, y1), (x0, y1), rgb);
    line(img, (x0, y1), (x0, y0), rgb);
}

fn cross(img: &mut RgbImage, (x, y): (usize, usize), rgb: [u8; 3]) {
    let (x, y) = (x as i64, y as i64);
    for d in -3..=3 {
        plot(img, x + d, y, rgb);
        plot(img, x, y + d, rgb);
    }
}

/// Paint road pixels that touch a non-road 4-neighbour. Returns how many.
fn contour(img: &mut RgbImage, mask: &RoadMask) -> usize {
    let (w, h) = mask.dims();
    let mut n = 0;
    for y in 0..h {
        for x in 0..w {
            if !mask.is_road(x, y) {
                continue;
            }
            let edge = (x > 0 && !mask.is_road(x - 1, y))
                || (x + 1 < w && !mask.is_road(x + 1, y))
                || (y > 0 && !mask.is_road(x, y - 1))
                || (y + 1 < h && !mask.is_road(x, y + 1));
            if edge {
                img.put_pixel(x, y, CONTOUR);
                n += 1;
            }
        }
    }
    n
}

/// Render overlays for `requested` images (all when empty) into `out_dir`,
/// plus false-color heatmaps when `artifacts_dir` holds them. Problems with
/// individual items become warnings; the call fails only if nothing at all
/// was rendered.
pub fn run_inspect(
    index: &DatasetIndex,
    artifacts_dir: Option<&Path>,
    requested: &[String],
    out_dir: &Path,
) -> Result<InspectSummary> {
    let mut summary = InspectSummary::default();
    let table = artifacts_dir.map(|d| d.join(PERSPECTIVE_FILE)).filter(|p| p.is_file()).map(|p| PerspectiveTable::read(&p));
    let table = match table {
        Some(Ok(t)) => Some(t),
        Some(Err(e)) => {
            summary.warnings.push(e.to_string());
            None
        }
        None => None,
    };
    // An augmentation output directory carries its own run report.
    let report_path = index.manifest.images.parent().map(|p| p.join(REPORT_FILE));
    let report: Option<serde_json::Value> = report_path
        .filter(|p| p.is_file())
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|t| serde_json::from_str(&t).ok());

    let mut ids: Vec<String> = requested.to_vec();
    if ids.is_empty() {
        ids = index.records.iter().map(|r| r.image_id.clone()).collect();
    }
    let overlay_dir = out_dir.join("overlays");
    for id in &ids {
        let Some(pos) = index.position(id) else {
            let msg = format!("unknown image id `{id}`");
            log::warn!("{msg}");
            summary.warnings.push(msg);
            continue;
        };
        let rec = &index.records[pos];
        let mut img = match rec.read_pixels() {
            Ok(i) => i,
            Err(e) => {
                summary.warnings.push(e.to_string());
                continue;
            }
        };
        let mask = match rec.mask_path.as_deref().map(|p| load_mask(p, rec.dims())).transpose() {
            Ok(m) => m,
            Err(e) => {
                summary.warnings.push(e.to_string());
                None
            }
        };
        let contour_pixels = mask.as_ref().map_or(0, |m| contour(&mut img, m));
        let horizon = table
            .as_ref()
            .and_then(|t| t.get(id))
            .and_then(|e| e.y_v)
            .or_else(|| mask.as_ref().and_then(|m| estimate_vanishing_row(m, 1).ok()).map(|e| e.y_v));
        if let Some(y) = horizon.filter(|y| *y >= 0.0) {
            line(&mut img, (0.0, y), (rec.width as f64 - 1.0, y), HORIZON);
        }
        let marks = report.as_ref().map(|r| run_marks(r, id)).unwrap_or_default();
        for q in &marks.quads {
            for k in 0..4 {
                line(&mut img, q[k], q[(k + 1) % 4], QUAD);
            }
        }
        let (mut injected, mut original) = (0, 0);
        for a in &index.annotations[pos] {
            match a.provenance {
                Provenance::Injected => {
                    rectangle(&mut img, &a.bbox, INJECTED);
                    injected += 1;
                }
                Provenance::Original => {
                    rectangle(&mut img, &a.bbox, ORIGINAL);
                    original += 1;
                }
            }
        }
        for &p in &marks.points {
            cross(&mut img, p, POINT);
        }
        fs::create_dir_all(&overlay_dir).map_err(|e| crate::error::write_err(&overlay_dir, e))?;
        let path = overlay_dir.join(format!("{id}.png"));
        write_png(&path, &img)?;
        summary.overlays.push(Overlay {
            image_id: id.clone(),
            path,
            injected_boxes: injected,
            original_boxes: original,
            placement_points: marks.points.len(),
            horizon,
            contour_pixels,
        });
    }

    if let Some(dir) = artifacts_dir {
        let heat = dir.join(HEATMAP_FILE);
        if heat.is_file() {
            match artifacts::read_heatmaps(&heat) {
                Ok(h) => summary.heatmap_renders = artifacts::write_heatmap_renders(&out_dir.join("heatmaps"), &h)?,
                Err(e) => summary.warnings.push(e.to_string()),
            }
        } else {
            summary.warnings.push(format!("no heatmaps at {}", heat.display()));
        }
    }
    if summary.rendered() == 0 {
        return Err(IoError::Artifact { path: out_dir.into(), reason: "nothing rendered".into() });
    }
    Ok(summary)
}

/// Plain-text statistics for a dataset and, if present, its artifacts.
pub fn dataset_stats(index: &DatasetIndex, artifacts_dir: Option<&Path>) -> Result<String> {
    let mut out = String::new();
    out.push_str(&index.report.to_string());
    for class in DamageClass::ALL {
        let n = index.annotations.iter().flatten().filter(|a| a.class == class).count();
        let _ = writeln!(out, "class_{class}\t{n}");
    }
    let injected = index.annotations.iter().flatten().filter(|a| a.provenance == Provenance::Injected).count();
    let _ = writeln!(out, "injected\t{injected}");
    if let Some(dir) = artifacts_dir {
        let table = dir.join(PERSPECTIVE_FILE);
        if table.is_file() {
            let t = PerspectiveTable::read(&table)?;
            let mut per_bin = vec![0usize; t.binning.bins()];
            for b in t.entries.iter().filter_map(|e| e.bin) {
                per_bin[b] += 1;
            }
            let _ = writeln!(out, "pitch_bins\t{}", t.binning.bins());
            for (b, n) in per_bin.iter().enumerate() {
                let _ = writeln!(out, "images_in_bin_{b}\t{n}");
            }
        }
        let bank = dir.join(artifacts::BANK_DIR);
        if bank.join(artifacts::BANK_MANIFEST).is_file() {
            let bank = artifacts::read_bank(&bank)?;
            for (b, n) in roadpaste_core::bank::bin_histogram(&bank).iter().enumerate() {
                let _ = writeln!(out, "instances_in_bin_{b}\t{n}");
            }
        }
    }
    Ok(out)
}
