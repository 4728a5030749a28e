//! Synthetic on-disk datasets: road scenes with trapezoid masks and drawn
//! damages, in either annotation format.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roadpaste_core::pipeline::stream_seed;
use roadpaste_core::synth;

use crate::dataset::{coco_document, write_mask_png, write_png, WrittenImage, COCO_FILE, IMAGES_DIR, MASKS_DIR};
use crate::error::{write_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationFormat {
    Voc,
    Coco,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureSpec {
    pub images: usize,
    pub width: usize,
    pub height: usize,
    pub damages_per_image: usize,
    pub seed: u64,
    pub format: AnnotationFormat,
    pub with_masks: bool,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self { images: 10, width: 320, height: 240, damages_per_image: 3, seed: 7, format: AnnotationFormat::Coco, with_masks: true }
    }
}

pub fn fixture_id(i: usize) -> String {
    format!("img_{i:03}")
}

fn voc_xml(id: &str, w: usize, h: usize, anns: &[roadpaste_core::Annotation]) -> String {
    let mut s = format!(
        "<annotation>\n  <filename>{id}.png</filename>\n  <size><width>{w}</width><height>{h}</height><depth>3</depth></size>\n"
    );
    for a in anns {
        let b = a.bbox;
        let _ = write!(
            s,
            "  <object>\n    <name>{}</name>\n    <bndbox><xmin>{}</xmin><ymin>{}</ymin><xmax>{}</xmax><ymax>{}</ymax></bndbox>\n  </object>\n",
            a.class, b.x_min, b.y_min, b.x_max, b.y_max
        );
    }
    s.push_str("</annotation>\n");
    s
}

/// Write a synthetic dataset under `dir` in the conventional layout and
/// return `dir`.
pub fn write_fixture(dir: &Path, spec: &FixtureSpec) -> Result<PathBuf> {
    let images = dir.join(IMAGES_DIR);
    let masks = dir.join(MASKS_DIR);
    let voc = dir.join("annotations");
    for d in [Some(&images), spec.with_masks.then_some(&masks), (spec.format == AnnotationFormat::Voc).then_some(&voc)]
        .into_iter()
        .flatten()
    {
        fs::create_dir_all(d).map_err(|e| write_err(d, e))?;
    }
    let mut written = Vec::with_capacity(spec.images);
    for i in 0..spec.images {
        let id = fixture_id(i);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, &id));
        let scene = synth::scene(&mut rng, spec.width, spec.height, spec.damages_per_image);
        let path = images.join(format!("{id}.png"));
        write_png(&path, &scene.image)?;
        if spec.with_masks {
            write_mask_png(&masks.join(format!("{id}.png")), &scene.mask)?;
        }
        if spec.format == AnnotationFormat::Voc {
            let p = voc.join(format!("{id}.xml"));
            fs::write(&p, voc_xml(&id, spec.width, spec.height, &scene.annotations)).map_err(|e| write_err(&p, e))?;
        }
        written.push(WrittenImage { image_id: id, path, width: spec.width, height: spec.height, annotations: scene.annotations });
    }
    if spec.format == AnnotationFormat::Coco {
        let p = dir.join(COCO_FILE);
        let text = serde_json::to_string_pretty(&coco_document(&written)).map_err(|e| write_err(&p, e))?;
        fs::write(&p, text).map_err(|e| write_err(&p, e))?;
    }
    Ok(dir.to_path_buf())
}
