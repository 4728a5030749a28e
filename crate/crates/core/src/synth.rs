//! Synthetic street scenes with known geometry, for fixtures and tests.
//!
//! A scene is a flat road whose straight boundaries meet at a chosen
//! vanishing point, textured asphalt, and a handful of drawn damages with
//! their boxes.

use alloc::vec::Vec;

use rand::Rng;

use crate::annotation::{Annotation, DamageClass};
use crate::geom::BoundingBox;
use crate::math;
use crate::perspective::perspective_scale;
use crate::raster::{RgbImage, RoadMask};

/// Road region bounded by the lines from `vanishing` to `(bottom_left, H)`
/// and `(bottom_right, H)`, starting at row `top_row`. A pixel is road when
/// its center lies between the two lines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trapezoid {
    pub vanishing: (f64, f64),
    pub bottom_left: f64,
    pub bottom_right: f64,
    pub top_row: usize,
}

impl Trapezoid {
    fn edge_x(&self, bottom_x: f64, y: f64, height: usize) -> f64 {
        let (vx, vy) = self.vanishing;
        vx + (bottom_x - vx) * (y - vy) / (height as f64 - vy)
    }

    pub fn contains(&self, x: usize, y: usize, height: usize) -> bool {
        if y < self.top_row {
            return false;
        }
        let (xc, yc) = (x as f64 + 0.5, y as f64 + 0.5);
        if yc <= self.vanishing.1 {
            return false;
        }
        xc >= self.edge_x(self.bottom_left, yc, height) && xc <= self.edge_x(self.bottom_right, yc, height)
    }

    pub fn mask(&self, width: usize, height: usize) -> RoadMask {
        RoadMask::from_fn(width, height, |x, y| self.contains(x, y, height))
    }

    /// Random trapezoid whose boundaries stay inside the frame.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, width: usize, height: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        let vx = rng.random_range(0.35 * w..0.65 * w);
        let vy = rng.random_range(0.1 * h..0.45 * h);
        let bottom_left = rng.random_range(0.02 * w..0.3 * w);
        let bottom_right = rng.random_range(0.7 * w..0.98 * w);
        let top_row = math::ceil(vy + rng.random_range(0.04 * h..0.1 * h)) as usize;
        Self { vanishing: (vx, vy), bottom_left, bottom_right, top_row }
    }
}

/// One generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: RgbImage,
    pub mask: RoadMask,
    pub road: Trapezoid,
    pub annotations: Vec<Annotation>,
}

fn noise<R: Rng + ?Sized>(rng: &mut R, amplitude: i32) -> i32 {
    rng.random_range(-amplitude..=amplitude)
}

fn shade(base: [u8; 3], delta: i32) -> [u8; 3] {
    base.map(|c| (c as i32 + delta).clamp(0, 255) as u8)
}

/// Draw a damage of `class` inside `bbox` (dark strokes or a blob).
pub fn draw_damage<R: Rng + ?Sized>(image: &mut RgbImage, bbox: &BoundingBox, class: DamageClass, rng: &mut R) {
    let (x0, y0, w, h) = image.pixel_rect(bbox);
    if w == 0 || h == 0 {
        return;
    }
    let dark = [38u8, 36, 34];
    let mut put = |x: usize, y: usize, rng: &mut R| {
        if x < x0 + w && y < y0 + h {
            image.put_pixel(x, y, shade(dark, noise(rng, 8)));
        }
    };
    match class {
        DamageClass::D00 => {
            // Wandering vertical crack.
            let mut x = (x0 + w / 2) as isize;
            for y in y0..y0 + h {
                x = (x + rng.random_range(-1i32..=1) as isize).clamp(x0 as isize, (x0 + w - 1) as isize);
                put(x as usize, y, rng);
            }
        }
        DamageClass::D10 => {
            let mut y = (y0 + h / 2) as isize;
            for x in x0..x0 + w {
                y = (y + rng.random_range(-1i32..=1) as isize).clamp(y0 as isize, (y0 + h - 1) as isize);
                put(x, y as usize, rng);
            }
        }
        DamageClass::D20 => {
            // Grid of short strokes.
            let step = 4usize;
            for y in (y0..y0 + h).step_by(step) {
                for x in x0..x0 + w {
                    if rng.random_bool(0.7) {
                        put(x, y, rng);
                    }
                }
            }
            for x in (x0..x0 + w).step_by(step) {
                for y in y0..y0 + h {
                    if rng.random_bool(0.7) {
                        put(x, y, rng);
                    }
                }
            }
        }
        DamageClass::D40 => {
            let (cx, cy) = (x0 as f64 + w as f64 / 2.0, y0 as f64 + h as f64 / 2.0);
            let (rx, ry) = (w as f64 / 2.0, h as f64 / 2.0);
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    let dx = (x as f64 + 0.5 - cx) / rx;
                    let dy = (y as f64 + 0.5 - cy) / ry;
                    if dx * dx + dy * dy <= 1.0 {
                        put(x, y, rng);
                    }
                }
            }
        }
    }
}

/// Random road scene with `damages` drawn instances. Box sizes follow the
/// scene's own linear perspective so near-horizon damages are small.
pub fn scene<R: Rng + ?Sized>(rng: &mut R, width: usize, height: usize, damages: usize) -> Scene {
    let road = Trapezoid::random(rng, width, height);
    let mask = road.mask(width, height);
    let sky = [150u8, 180, 215];
    let verge = [90u8, 120, 70];
    let asphalt = [110u8, 108, 105];
    let mut image = RgbImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let base = if mask.is_road(x, y) {
                asphalt
            } else if (y as f64) < road.vanishing.1 {
                sky
            } else {
                verge
            };
            image.put_pixel(x, y, shade(base, noise(rng, 12)));
        }
    }

    let y_ref = height as f64 - 1.0;
    let mut annotations = Vec::new();
    let mut tries = 0;
    while annotations.len() < damages && tries < 200 * damages.max(1) {
        tries += 1;
        let y = rng.random_range(road.top_row as f64 + 8.0..height as f64);
        let s = perspective_scale(road.vanishing.1, y_ref, y);
        if s < 0.15 {
            continue;
        }
        let class = DamageClass::ALL[rng.random_range(0..4)];
        let (bw, bh) = match class {
            DamageClass::D00 => (24.0, 80.0),
            DamageClass::D10 => (90.0, 20.0),
            DamageClass::D20 => (80.0, 60.0),
            DamageClass::D40 => (40.0, 30.0),
        };
        let (bw, bh) = (math::round(bw * s).max(4.0), math::round(bh * s).max(4.0));
        let yi = math::floor(y) as usize;
        let row = mask.row(yi.min(height - 1));
        let Some(l) = row.iter().position(|&b| b) else { continue };
        let r = row.iter().rposition(|&b| b).unwrap_or(l);
        if (r - l) as f64 <= bw + 2.0 {
            continue;
        }
        let x = math::floor(rng.random_range(l as f64..(r as f64 - bw)));
        let bbox = BoundingBox::new(x, math::floor(y) - bh, x + bw, math::floor(y));
        if bbox.y_min < 0.0 || annotations.iter().any(|a: &Annotation| a.bbox.iou(&bbox) > 0.0) {
            continue;
        }
        draw_damage(&mut image, &bbox, class, rng);
        annotations.push(Annotation::original(class, bbox));
    }
    Scene { image, mask, road, annotations }
}
