//! Per-bin heatmaps of damage ground-contact locations and the placement
//! sampler that combines them with the road mask.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::BoundingBox;
use crate::math;
use crate::raster::RoadMask;

pub const DEFAULT_GRID: usize = 64;
pub const DEFAULT_SIGMA: f64 = 2.0;

/// Normalized `G x G` location density over `[0,1]^2`, row-major
/// (`values[gy * G + gx]`).
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementHeatmap {
    pub bin: usize,
    pub grid: usize,
    pub sigma: f64,
    pub sample_count: u64,
    values: Vec<f64>,
}

impl PlacementHeatmap {
    pub fn uniform(bin: usize, grid: usize, sigma: f64) -> Self {
        let g2 = (grid * grid) as f64;
        Self { bin, grid, sigma, sample_count: 0, values: vec![1.0 / g2; grid * grid] }
    }

    /// Wrap raw cell values; they are renormalized to sum 1.
    pub fn from_values(bin: usize, grid: usize, sigma: f64, sample_count: u64, values: Vec<f64>) -> Result<Self> {
        if grid == 0 || values.len() != grid * grid {
            return Err(Error::InvalidConfig { key: "grid", reason: "value count must equal grid^2" });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig { key: "heatmap", reason: "cells must be finite and nonnegative" });
        }
        let total: f64 = values.iter().sum();
        if total <= 0.0 {
            return Ok(Self::uniform(bin, grid, sigma));
        }
        let values = values.into_iter().map(|v| v / total).collect();
        Ok(Self { bin, grid, sigma, sample_count, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, gx: usize, gy: usize) -> f64 {
        self.values[gy * self.grid + gx]
    }

    /// Cell `(gx, gy)` with the largest mass; first in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best % self.grid, best / self.grid)
    }
}

/// Normalized bottom-center location of a box.
pub fn location_of(bbox: &BoundingBox, width: usize, height: usize) -> (f64, f64) {
    let (x, y) = bbox.bottom_center();
    ((x / width as f64).clamp(0.0, 1.0), (y / height as f64).clamp(0.0, 1.0))
}

fn cell_of(v: f64, grid: usize) -> usize {
    let c = math::floor(v.clamp(0.0, 1.0) * grid as f64) as usize;
    c.min(grid - 1)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = math::ceil(3.0 * sigma) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|d| math::exp(-((d * d) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

/// Mirror an out-of-range index back into `[0, n)` (edge sample repeated).
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

fn smooth(values: &[f64], grid: usize, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; grid * grid];
    for gy in 0..grid {
        for gx in 0..grid {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let sx = reflect(gx as isize + k as isize - radius, grid);
                acc += w * values[gy * grid + sx];
            }
            tmp[gy * grid + gx] = acc;
        }
    }
    let mut out = vec![0.0; grid * grid];
    for gy in 0..grid {
        for gx in 0..grid {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let sy = reflect(gy as isize + k as isize - radius, grid);
                acc += w * tmp[sy * grid + gx];
            }
            out[gy * grid + gx] = acc;
        }
    }
    out
}

/// Accumulate normalized `(bin, x, y)` locations into one smoothed,
/// normalized grid per bin. Bins without points get the uniform grid.
pub fn build_heatmaps(
    points: impl IntoIterator<Item = (usize, f64, f64)>,
    bins: usize,
    sigma: f64,
    grid: usize,
) -> Vec<PlacementHeatmap> {
    let mut counts: Vec<Vec<f64>> = vec![vec![0.0; grid * grid]; bins];
    let mut samples = vec![0u64; bins];
    for (bin, x, y) in points {
        if bin >= bins {
            continue;
        }
        counts[bin][cell_of(y, grid) * grid + cell_of(x, grid)] += 1.0;
        samples[bin] += 1;
    }
    counts
        .into_iter()
        .zip(samples)
        .enumerate()
        .map(|(bin, (raw, n))| {
            if n == 0 {
                return PlacementHeatmap::uniform(bin, grid, sigma);
            }
            let smoothed = smooth(&raw, grid, sigma);
            PlacementHeatmap::from_values(bin, grid, sigma, n, smoothed).expect("smoothed counts are finite")
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlacementSource {
    Heatmap,
    UniformFallback,
}

/// Sampled paste anchor: the pixel that receives the patch's bottom-center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlacementSample {
    pub x: usize,
    pub y: usize,
    pub source: PlacementSource,
}

/// Precomputed two-stage sampler (grid cell, then pixel in cell) for one
/// heatmap over one target frame.
#[derive(Debug, Clone)]
pub struct PlacementSampler<'a> {
    grid: usize,
    width: usize,
    height: usize,
    mask: Option<&'a RoadMask>,
    /// Per-cell eligible pixel count (road pixels, or all pixels).
    eligible: Vec<usize>,
    cumulative: Vec<f64>,
    source: PlacementSource,
}

impl<'a> PlacementSampler<'a> {
    /// `lambda` mixes the heatmap law with the uniform law over eligible
    /// pixels (`1.0` = heatmap only). With a mask the law is
    /// `H(cell) * road_fraction(cell)`, renormalized.
    pub fn new(
        heatmap: &PlacementHeatmap,
        width: usize,
        height: usize,
        mask: Option<&'a RoadMask>,
        lambda: f64,
    ) -> Result<Self> {
        let grid = heatmap.grid;
        if let Some(m) = mask {
            if m.dims() != (width, height) {
                return Err(Error::DimensionMismatch { expected: (width, height), found: m.dims() });
            }
        }
        let mut eligible = vec![0usize; grid * grid];
        let mut area = vec![0usize; grid * grid];
        for gy in 0..grid {
            let (y0, y1) = span(gy, grid, height);
            for gx in 0..grid {
                let (x0, x1) = span(gx, grid, width);
                let c = gy * grid + gx;
                area[c] = (x1 - x0) * (y1 - y0);
                eligible[c] = match mask {
                    Some(m) => (y0..y1).map(|y| m.row(y)[x0..x1].iter().filter(|&&b| b).count()).sum(),
                    None => area[c],
                };
            }
        }
        let total_eligible: usize = eligible.iter().sum();
        if total_eligible == 0 {
            return Err(if mask.is_some() { Error::EmptyRoadMask } else { Error::EmptyRegion });
        }

        let biased: Vec<f64> = (0..grid * grid)
            .map(|c| {
                if area[c] == 0 {
                    0.0
                } else {
                    heatmap.values[c] * eligible[c] as f64 / area[c] as f64
                }
            })
            .collect();
        let biased_total: f64 = biased.iter().sum();
        let (weights, source): (Vec<f64>, _) = if biased_total > 0.0 {
            let lambda = lambda.clamp(0.0, 1.0);
            let w = biased
                .iter()
                .zip(&eligible)
                .map(|(b, &e)| lambda * b / biased_total + (1.0 - lambda) * e as f64 / total_eligible as f64)
                .collect();
            (w, PlacementSource::Heatmap)
        } else {
            let w = eligible.iter().map(|&e| e as f64 / total_eligible as f64).collect();
            (w, PlacementSource::UniformFallback)
        };
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(Self { grid, width, height, mask, eligible, cumulative, source })
    }

    pub fn source(&self) -> PlacementSource {
        self.source
    }

    /// Probability of each grid cell under the sampling law.
    pub fn cell_law(&self) -> Vec<f64> {
        let total = *self.cumulative.last().unwrap_or(&1.0);
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|c| {
                let p = (c - prev) / total;
                prev = *c;
                p
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PlacementSample {
        let total = *self.cumulative.last().expect("nonempty grid");
        let u = rng.random::<f64>() * total;
        let mut cell = self.cumulative.partition_point(|&c| c <= u);
        if cell >= self.cumulative.len() || self.eligible[cell] == 0 {
            // Rounding at the top end: take the last cell with mass.
            cell = (0..self.cumulative.len())
                .rev()
                .find(|&c| self.eligible[c] > 0 && (c == 0 || self.cumulative[c] > self.cumulative[c - 1]))
                .unwrap_or(0);
        }
        let (gx, gy) = (cell % self.grid, cell / self.grid);
        let (x0, x1) = span(gx, self.grid, self.width);
        let (y0, y1) = span(gy, self.grid, self.height);
        let mut k = rng.random_range(0..self.eligible[cell]);
        for y in y0..y1 {
            for x in x0..x1 {
                if self.mask.is_none_or(|m| m.is_road(x, y)) {
                    if k == 0 {
                        return PlacementSample { x, y, source: self.source };
                    }
                    k -= 1;
                }
            }
        }
        unreachable!("eligible count matches cell contents")
    }
}

/// Pixel range `[lo, hi)` covered by grid cell `g` along an axis of `n` pixels.
pub fn span(g: usize, grid: usize, n: usize) -> (usize, usize) {
    (g * n / grid, (g + 1) * n / grid)
}

/// One-shot placement draw. With `content_aware` the mask constrains the
/// law; otherwise the heatmap alone drives it over the whole frame.
pub fn sample_placement<R: Rng + ?Sized>(
    heatmap: &PlacementHeatmap,
    mask: &RoadMask,
    rng: &mut R,
    content_aware: bool,
) -> Result<PlacementSample> {
    let (w, h) = mask.dims();
    let sampler = PlacementSampler::new(heatmap, w, h, content_aware.then_some(mask), 1.0)?;
    Ok(sampler.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_point_peak() {
        let maps = build_heatmaps([(0, 0.5, 0.5)], 1, 2.0, 64);
        let hm = &maps[0];
        assert_eq!(hm.argmax(), (32, 32));
        assert!((hm.values().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(hm.sample_count, 1);
    }

    #[test]
    fn mirror_points_give_mirror_grid() {
        let maps = build_heatmaps([(0, 0.3, 0.7), (0, 0.7, 0.7)], 1, 2.0, 64);
        let hm = &maps[0];
        for gy in 0..64 {
            for gx in 0..64 {
                assert!((hm.at(gx, gy) - hm.at(63 - gx, gy)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_bin_is_uniform() {
        let maps = build_heatmaps([(1, 0.2, 0.2)], 2, 2.0, 64);
        assert_eq!(maps[0].sample_count, 0);
        assert!(maps[0].values().iter().all(|&v| v == 1.0 / 4096.0));
        assert_eq!(maps[1].bin, 1);
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 4), 0);
        assert_eq!(reflect(-2, 4), 1);
        assert_eq!(reflect(4, 4), 3);
        assert_eq!(reflect(5, 4), 2);
        assert_eq!(reflect(-9, 2), 0);
    }

    #[test]
    fn empty_mask_rejected() {
        let hm = PlacementHeatmap::uniform(0, 8, 2.0);
        let mask = RoadMask::empty(32, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_placement(&hm, &mask, &mut rng, true), Err(Error::EmptyRoadMask));
        assert!(sample_placement(&hm, &mask, &mut rng, false).is_ok());
    }

    #[test]
    fn off_road_heat_falls_back_to_road() {
        // All heat in the top half, road only in the bottom half.
        let maps = build_heatmaps([(0, 0.5, 0.1)], 1, 0.5, 8);
        let mask = RoadMask::from_fn(64, 64, |_, y| y >= 32);
        let sampler = PlacementSampler::new(&maps[0], 64, 64, Some(&mask), 1.0).unwrap();
        // Smoothing leaks a little mass, so force an exactly off-road heatmap.
        let mut values = vec![0.0; 64];
        values[1 * 8 + 4] = 1.0;
        let hm = PlacementHeatmap::from_values(0, 8, 0.0, 1, values).unwrap();
        let fallback = PlacementSampler::new(&hm, 64, 64, Some(&mask), 1.0).unwrap();
        assert_eq!(fallback.source(), PlacementSource::UniformFallback);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let s = fallback.sample(&mut rng);
            assert!(mask.is_road(s.x, s.y));
            assert_eq!(s.source, PlacementSource::UniformFallback);
            let s = sampler.sample(&mut rng);
            assert!(mask.is_road(s.x, s.y));
        }
    }
}
