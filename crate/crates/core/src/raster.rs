use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::BoundingBox;

/// Interleaved 8-bit RGB buffer, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: (data.len() / 3 / height.max(1), height),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copy of the integer pixel rectangle `[x0, x0+w) x [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> RgbImage {
        let mut out = RgbImage::new(w, h);
        for y in 0..h {
            let src = ((y0 + y) * self.width + x0) * 3;
            let dst = y * w * 3;
            out.data[dst..dst + w * 3].copy_from_slice(&self.data[src..src + w * 3]);
        }
        out
    }

    /// Integer pixel rectangle covered by `bbox`, rounded to the nearest
    /// pixel edges and clamped to the frame.
    pub fn pixel_rect(&self, bbox: &BoundingBox) -> (usize, usize, usize, usize) {
        let clamp = |v: f64, hi: usize| -> usize {
            let r = crate::math::round(v);
            if r <= 0.0 {
                0
            } else if r >= hi as f64 {
                hi
            } else {
                r as usize
            }
        };
        let x0 = clamp(bbox.x_min, self.width);
        let y0 = clamp(bbox.y_min, self.height);
        let x1 = clamp(bbox.x_max, self.width);
        let y1 = clamp(bbox.y_max, self.height);
        (x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0))
    }
}

/// Binary road mask, `true` marks a road pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoadMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

/// Gray levels strictly above this are road.
pub const MASK_THRESHOLD: u8 = 127;

impl RoadMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![true; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    /// Binarize an 8-bit single-channel buffer (`value > 127` is road).
    pub fn from_gray(width: usize, height: usize, gray: &[u8]) -> Result<Self> {
        if gray.len() != width * height {
            return Err(Error::DimensionMismatch { expected: (width, height), found: (gray.len(), 1) });
        }
        let bits = gray.iter().map(|&v| v > MASK_THRESHOLD).collect();
        Ok(Self { width, height, bits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn is_road(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, road: bool) {
        self.bits[y * self.width + x] = road;
    }

    pub fn road_pixel_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Topmost row containing a road pixel.
    pub fn top_road_row(&self) -> Option<usize> {
        (0..self.height).find(|&y| self.row(y).iter().any(|&b| b))
    }

    pub fn row(&self, y: usize) -> &[bool] {
        &self.bits[y * self.width..(y + 1) * self.width]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_threshold() {
        let gray = [0u8, 127, 128, 255];
        let mask = RoadMask::from_gray(2, 2, &gray).unwrap();
        assert_eq!(mask.bits(), &[false, false, true, true]);
        assert_eq!(mask.road_pixel_count(), 2);
    }

    #[test]
    fn all_white_and_all_black() {
        assert_eq!(RoadMask::from_gray(4, 4, &[255; 16]).unwrap().road_pixel_count(), 16);
        assert_eq!(RoadMask::from_gray(4, 4, &[0; 16]).unwrap().road_pixel_count(), 0);
    }

    #[test]
    fn crop_copies_rectangle() {
        let mut img = RgbImage::new(4, 3);
        img.put_pixel(2, 1, [1, 2, 3]);
        let c = img.crop(1, 1, 2, 2);
        assert_eq!(c.pixel(1, 0), [1, 2, 3]);
        assert_eq!(c.pixel(0, 0), [0, 0, 0]);
    }
}
