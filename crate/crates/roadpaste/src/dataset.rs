//! Dataset loading (VOC-XML per image or one COCO-style document), road
//! masks, and the COCO-style output writer.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use roadpaste_core::geom::Clipped;
use roadpaste_core::{Annotation, BoundingBox, DamageClass, Provenance, RgbImage, RoadMask};
use serde::{Deserialize, Serialize};

use crate::error::{write_err, IoError, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const COCO_FILE: &str = "annotations.json";
pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";

/// Where a dataset's pieces live. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub images: PathBuf,
    /// Directory of VOC-XML files or a COCO-style `.json` document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<PathBuf>,
    /// Skip objects with labels outside the four classes instead of failing.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skip_unknown_classes: bool,
}

impl Manifest {
    fn resolve(mut self, base: &Path) -> Self {
        let abs = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        self.images = abs(self.images);
        self.annotations = self.annotations.map(abs);
        self.masks = self.masks.map(abs);
        self
    }
}

fn manifest_err(path: &Path, reason: impl Into<String>) -> IoError {
    IoError::ManifestError { path: path.to_path_buf(), reason: reason.into() }
}

/// Read a manifest file, or infer one from a dataset directory laid out as
/// `images/`, `annotations.json` or `annotations/`, and optional `masks/`.
pub fn resolve_manifest(path: &Path) -> Result<Manifest> {
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| manifest_err(path, e.to_string()))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| manifest_err(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        return Ok(manifest.resolve(base));
    }
    if !path.is_dir() {
        return Err(manifest_err(path, "no such file or directory"));
    }
    let explicit = path.join(MANIFEST_FILE);
    if explicit.is_file() {
        return resolve_manifest(&explicit);
    }
    let images = path.join(IMAGES_DIR);
    if !images.is_dir() {
        return Err(manifest_err(path, "no manifest.toml and no images/ directory"));
    }
    let annotations = [path.join(COCO_FILE), path.join("annotations"), path.join("Annotations")]
        .into_iter()
        .find(|p| p.exists());
    let masks = Some(path.join(MASKS_DIR)).filter(|p| p.is_dir());
    Ok(Manifest { images, annotations, masks, skip_unknown_classes: false })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    /// File stem of the image.
    pub image_id: String,
    pub path: PathBuf,
    pub width: usize,
    pub height: usize,
    pub mask_path: Option<PathBuf>,
}

impl ImageRecord {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn read_pixels(&self) -> Result<RgbImage> {
        read_rgb(&self.path)
    }
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| IoError::ImageReadError { path: path.into(), reason: e.to_string() })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(RgbImage::from_raw(w, h, rgb.into_raw())?)
}

/// Counts gathered while loading.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub images: usize,
    pub annotations: usize,
    pub clipped: usize,
    pub dropped_outside: usize,
    pub dropped_invalid: usize,
    pub dangling: usize,
    pub unknown_class_skipped: usize,
    pub masks_found: usize,
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "images\t{}", self.images)?;
        writeln!(f, "annotations\t{}", self.annotations)?;
        writeln!(f, "clipped\t{}", self.clipped)?;
        writeln!(f, "dropped_outside\t{}", self.dropped_outside)?;
        writeln!(f, "dropped_invalid\t{}", self.dropped_invalid)?;
        writeln!(f, "dangling\t{}", self.dangling)?;
        writeln!(f, "unknown_class_skipped\t{}", self.unknown_class_skipped)?;
        writeln!(f, "masks_found\t{}", self.masks_found)
    }
}

/// Validated dataset: records sorted by image id, annotations parallel to
/// the records. Pixels are read on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub manifest: Manifest,
    pub records: Vec<ImageRecord>,
    pub annotations: Vec<Vec<Annotation>>,
    pub report: LoadReport,
}

impl DatasetIndex {
    pub fn position(&self, image_id: &str) -> Option<usize> {
        self.records.binary_search_by(|r| r.image_id.as_str().cmp(image_id)).ok()
    }

    pub fn annotations_for(&self, image_id: &str) -> Option<&[Annotation]> {
        self.position(image_id).map(|i| self.annotations[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ImageRecord, &[Annotation])> {
        self.records.iter().zip(self.annotations.iter().map(Vec::as_slice))
    }

    pub fn annotation_count(&self) -> usize {
        self.annotations.iter().map(Vec::len).sum()
    }
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

fn stem(p: &Path) -> Option<String> {
    p.file_stem().and_then(|s| s.to_str()).map(str::to_owned)
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| manifest_err(dir, e.to_string()))?;
    let mut out: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
    out.sort();
    Ok(out)
}

/// Stem-keyed file map; a repeated stem is an error.
fn by_stem(files: Vec<PathBuf>) -> Result<BTreeMap<String, PathBuf>> {
    let mut map: BTreeMap<String, PathBuf> = BTreeMap::new();
    for p in files {
        let Some(id) = stem(&p) else { continue };
        if let Some(first) = map.get(&id) {
            return Err(IoError::DuplicateImageId { image_id: id, first: first.clone(), second: p });
        }
        map.insert(id, p);
    }
    Ok(map)
}

/// Raw object before validation.
#[derive(Debug, Clone, PartialEq)]
struct RawObject {
    label: String,
    bbox: BoundingBox,
    provenance: Provenance,
}

fn parse_voc(path: &Path) -> Result<(Option<String>, Vec<RawObject>)> {
    let err = |reason: String| IoError::AnnotationParse { path: path.into(), reason };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let doc = roxmltree::Document::parse(&text).map_err(|e| err(e.to_string()))?;
    let child_text = |node: roxmltree::Node, name: &str| {
        node.children().find(|c| c.has_tag_name(name)).and_then(|c| c.text()).map(str::trim).map(str::to_owned)
    };
    let root = doc.root_element();
    let filename = child_text(root, "filename").and_then(|f| stem(Path::new(&f)));
    let mut objects = Vec::new();
    for obj in root.children().filter(|c| c.has_tag_name("object")) {
        let label = child_text(obj, "name").ok_or_else(|| err("object without <name>".into()))?;
        let bnd = obj.children().find(|c| c.has_tag_name("bndbox")).ok_or_else(|| err("object without <bndbox>".into()))?;
        let coord = |name: &str| -> Result<f64> {
            child_text(bnd, name)
                .ok_or_else(|| err(format!("missing <{name}>")))?
                .parse::<f64>()
                .map_err(|e| err(format!("<{name}>: {e}")))
        };
        let bbox = BoundingBox::new(coord("xmin")?, coord("ymin")?, coord("xmax")?, coord("ymax")?);
        objects.push(RawObject { label, bbox, provenance: Provenance::Original });
    }
    Ok((filename, objects))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    /// `[x, y, width, height]`.
    pub bbox: [f64; 4],
    #[serde(default)]
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
    /// Exact corners, so boxes survive a write/read cycle bit for bit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox_xyxy: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDocument {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

fn parse_coco(path: &Path) -> Result<BTreeMap<String, Vec<RawObject>>> {
    let err = |reason: String| IoError::AnnotationParse { path: path.into(), reason };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let doc: CocoDocument = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    let names: BTreeMap<u32, &str> = doc.categories.iter().map(|c| (c.id, c.name.as_str())).collect();
    let images: BTreeMap<u64, String> =
        doc.images.iter().map(|i| (i.id, stem(Path::new(&i.file_name)).unwrap_or_else(|| i.file_name.clone()))).collect();
    let mut out: BTreeMap<String, Vec<RawObject>> = BTreeMap::new();
    for ann in &doc.annotations {
        let image_id = images.get(&ann.image_id).cloned().unwrap_or_else(|| format!("#{}", ann.image_id));
        let label = names.get(&ann.category_id).map_or_else(|| format!("category {}", ann.category_id), |n| n.to_string());
        let bbox = match ann.bbox_xyxy {
            Some([a, b, c, d]) => BoundingBox::new(a, b, c, d),
            None => {
                let [x, y, w, h] = ann.bbox;
                BoundingBox::new(x, y, x + w, y + h)
            }
        };
        let provenance = match ann.provenance.as_deref() {
            Some("injected") => Provenance::Injected,
            _ => Provenance::Original,
        };
        out.entry(image_id).or_default().push(RawObject { label, bbox, provenance });
    }
    Ok(out)
}

fn read_annotation_source(manifest: &Manifest) -> Result<BTreeMap<String, (PathBuf, Vec<RawObject>)>> {
    let Some(src) = &manifest.annotations else { return Ok(BTreeMap::new()) };
    if src.is_file() {
        let parsed = parse_coco(src)?;
        return Ok(parsed.into_iter().map(|(k, v)| (k, (src.clone(), v))).collect());
    }
    if !src.is_dir() {
        return Err(manifest_err(src, "annotation source does not exist"));
    }
    let files: Vec<PathBuf> = list_dir(src)?
        .into_iter()
        .filter(|p| p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("xml")))
        .collect();
    let parsed: Vec<(PathBuf, Option<String>, Vec<RawObject>)> = files
        .par_iter()
        .map(|p| parse_voc(p).map(|(name, objs)| (p.clone(), name, objs)))
        .collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    for (path, name, objects) in parsed {
        let id = stem(&path).or(name).unwrap_or_default();
        if let Some((first, _)) = out.insert(id.clone(), (path.clone(), objects)) {
            return Err(IoError::DuplicateImageId { image_id: id, first, second: path });
        }
    }
    Ok(out)
}

/// Load and validate a dataset. Boxes partially outside the frame are
/// clipped, boxes entirely outside are dropped; both are counted in the
/// load report. Annotations for missing images are collected as dangling
/// and only fail the load when every annotated image is missing.
pub fn load_dataset(manifest_path: &Path) -> Result<DatasetIndex> {
    let manifest = resolve_manifest(manifest_path)?;
    let image_files: Vec<PathBuf> = list_dir(&manifest.images)?.into_iter().filter(|p| is_image_file(p)).collect();
    if image_files.is_empty() {
        return Err(manifest_err(&manifest.images, "no PNG/JPEG images found"));
    }
    let images = by_stem(image_files)?;
    let masks = match &manifest.masks {
        Some(dir) if dir.is_dir() => by_stem(list_dir(dir)?.into_iter().filter(|p| is_image_file(p)).collect())?,
        Some(dir) => return Err(manifest_err(dir, "mask directory does not exist")),
        None => BTreeMap::new(),
    };

    let mut report = LoadReport::default();
    let dims: Vec<(String, PathBuf, (u32, u32))> = images
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(id, path)| {
            let d = image::image_dimensions(&path)
                .map_err(|e| IoError::ImageReadError { path: path.clone(), reason: e.to_string() })?;
            Ok((id, path, d))
        })
        .collect::<Result<_>>()?;
    let records: Vec<ImageRecord> = dims
        .into_iter()
        .map(|(image_id, path, (w, h))| {
            let mask_path = masks.get(&image_id).cloned();
            ImageRecord { image_id, path, width: w as usize, height: h as usize, mask_path }
        })
        .collect();
    report.images = records.len();
    report.masks_found = records.iter().filter(|r| r.mask_path.is_some()).count();

    let mut raw = read_annotation_source(&manifest)?;
    let mut annotations = Vec::with_capacity(records.len());
    for rec in &records {
        let mut anns = Vec::new();
        if let Some((path, objects)) = raw.remove(&rec.image_id) {
            for obj in objects {
                let class = match obj.label.parse::<DamageClass>() {
                    Ok(c) => c,
                    Err(_) if manifest.skip_unknown_classes => {
                        report.unknown_class_skipped += 1;
                        continue;
                    }
                    Err(_) => return Err(IoError::UnknownClass { label: obj.label, path }),
                };
                if !obj.bbox.is_valid() {
                    report.dropped_invalid += 1;
                    continue;
                }
                let bbox = match obj.bbox.clip_to(rec.width as f64, rec.height as f64) {
                    Clipped::Inside(b) => b,
                    Clipped::Clipped(b) => {
                        report.clipped += 1;
                        b
                    }
                    Clipped::Outside => {
                        report.dropped_outside += 1;
                        continue;
                    }
                };
                anns.push(Annotation { class, bbox, provenance: obj.provenance });
            }
        }
        report.annotations += anns.len();
        annotations.push(anns);
    }
    // Whatever is left refers to images that do not exist.
    let dangling_images: Vec<String> = raw.keys().cloned().collect();
    report.dangling = raw.values().map(|(_, objs)| objs.len()).sum();
    if !dangling_images.is_empty() {
        let annotated = annotations.iter().filter(|a| !a.is_empty()).count();
        if annotated == 0 && report.dangling > 0 {
            return Err(IoError::DanglingAnnotation { image_id: dangling_images[0].clone() });
        }
        for id in &dangling_images {
            log::warn!("{}", IoError::DanglingAnnotation { image_id: id.clone() });
        }
    }
    Ok(DatasetIndex { manifest, records, annotations, report })
}

/// Read a grayscale mask (`value > 127` is road) and check its size.
pub fn load_mask(path: &Path, expected: (usize, usize)) -> Result<RoadMask> {
    let img = image::open(path).map_err(|e| IoError::MaskReadError { path: path.into(), reason: e.to_string() })?;
    let gray = img.to_luma8();
    let found = (gray.width() as usize, gray.height() as usize);
    if found != expected {
        return Err(IoError::MaskDimMismatch { path: path.into(), expected, found });
    }
    Ok(RoadMask::from_gray(found.0, found.1, gray.as_raw())?)
}

/// Supplies road masks for records. The pipeline asks for masks only when
/// the configuration needs them, so a counting source can prove a run never
/// touched the mask files.
pub trait MaskSource: Sync {
    /// `Ok(None)` when the record has no mask.
    fn load(&self, record: &ImageRecord) -> Result<Option<RoadMask>>;
}

/// Reads masks from the paths recorded in the index.
#[derive(Debug, Clone, Copy, Default)]
pub struct FsMasks;

impl MaskSource for FsMasks {
    fn load(&self, record: &ImageRecord) -> Result<Option<RoadMask>> {
        record.mask_path.as_deref().map(|p| load_mask(p, record.dims())).transpose()
    }
}

/// Wraps another source and counts calls.
#[derive(Debug, Default)]
pub struct CountingMasks<M> {
    pub inner: M,
    calls: std::sync::atomic::AtomicUsize,
}

impl<M> CountingMasks<M> {
    pub fn new(inner: M) -> Self {
        Self { inner, calls: Default::default() }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl<M: MaskSource> MaskSource for CountingMasks<M> {
    fn load(&self, record: &ImageRecord) -> Result<Option<RoadMask>> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.inner.load(record)
    }
}

pub fn write_png(path: &Path, image: &RgbImage) -> Result<()> {
    let buf = image::RgbImage::from_raw(image.width() as u32, image.height() as u32, image.as_raw().to_vec())
        .ok_or_else(|| write_err(path, "buffer size mismatch"))?;
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| write_err(path, e))
}

pub fn write_mask_png(path: &Path, mask: &RoadMask) -> Result<()> {
    let data = mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, data)
        .ok_or_else(|| write_err(path, "buffer size mismatch"))?;
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| write_err(path, e))
}

/// One image written to an output tree, ready for the annotation document.
#[derive(Debug, Clone, PartialEq)]
pub struct WrittenImage {
    pub image_id: String,
    pub path: PathBuf,
    pub width: usize,
    pub height: usize,
    pub annotations: Vec<Annotation>,
}

/// Write one image as PNG under `out_dir/images/`.
pub fn write_augmented(image_id: &str, image: &RgbImage, annotations: &[Annotation], out_dir: &Path) -> Result<WrittenImage> {
    let dir = out_dir.join(IMAGES_DIR);
    fs::create_dir_all(&dir).map_err(|e| write_err(&dir, e))?;
    let path = dir.join(format!("{image_id}.png"));
    write_png(&path, image)?;
    Ok(WrittenImage {
        image_id: image_id.to_owned(),
        path,
        width: image.width(),
        height: image.height(),
        annotations: annotations.to_vec(),
    })
}

pub fn coco_categories() -> Vec<CocoCategory> {
    DamageClass::ALL.iter().map(|c| CocoCategory { id: c.category_id(), name: c.label().to_owned() }).collect()
}

/// Assemble the annotation document from written images, in image id order.
pub fn coco_document(written: &[WrittenImage]) -> CocoDocument {
    let mut sorted: Vec<&WrittenImage> = written.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    for (i, w) in sorted.iter().enumerate() {
        let id = i as u64 + 1;
        images.push(CocoImage { id, file_name: format!("{}.png", w.image_id), width: w.width as u32, height: w.height as u32 });
        for a in &w.annotations {
            let b = a.bbox;
            annotations.push(CocoAnnotation {
                id: annotations.len() as u64 + 1,
                image_id: id,
                category_id: a.class.category_id(),
                bbox: [b.x_min, b.y_min, b.width(), b.height()],
                area: b.area(),
                iscrowd: 0,
                bbox_xyxy: Some([b.x_min, b.y_min, b.x_max, b.y_max]),
                provenance: Some(a.provenance.as_str().to_owned()),
            });
        }
    }
    CocoDocument { images, annotations, categories: coco_categories() }
}

/// Write `annotations.json` plus a manifest so the output tree loads back
/// as a dataset.
pub fn finish_output(out_dir: &Path, written: &[WrittenImage], masks: Option<&Path>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| write_err(out_dir, e))?;
    let doc = coco_document(written);
    let coco_path = out_dir.join(COCO_FILE);
    let text = serde_json::to_string_pretty(&doc).map_err(|e| write_err(&coco_path, e))?;
    fs::write(&coco_path, text + "\n").map_err(|e| write_err(&coco_path, e))?;
    let manifest = Manifest {
        images: PathBuf::from(IMAGES_DIR),
        annotations: Some(PathBuf::from(COCO_FILE)),
        masks: masks.map(Path::to_path_buf),
        skip_unknown_classes: false,
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let text = toml::to_string(&manifest).map_err(|e| write_err(&manifest_path, e))?;
    fs::write(&manifest_path, text).map_err(|e| write_err(&manifest_path, e))?;
    Ok(vec![coco_path, manifest_path])
}
