//! Per-image perspective model estimated from the road mask, and pitch
//! binning over the normalized horizon row.
//!
//! The road boundaries are assumed to be straight lines on a flat ground
//! plane, so they meet at the vanishing point and the apparent size of a
//! ground patch grows linearly with its distance below the horizon row.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::raster::RoadMask;

pub const DEFAULT_MIN_ROAD_PIXELS: usize = 500;
pub const DEFAULT_BINS: usize = 4;

const TRIM_ROUNDS: usize = 3;
const TRIM_MAD_FACTOR: f64 = 2.5;
const PARALLEL_SLOPE_EPS: f64 = 1e-3;
const FALLBACK_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Confidence {
    Fitted,
    Fallback,
}

impl Confidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Confidence::Fitted => "fitted",
            Confidence::Fallback => "fallback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VanishingEstimate {
    /// Horizon row in continuous pixel units; negative when above the frame.
    pub y_v: f64,
    pub confidence: Confidence,
    pub left_inliers: usize,
    pub right_inliers: usize,
}

/// Line `x = intercept + slope * y`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct BoundaryLine {
    intercept: f64,
    slope: f64,
}

fn least_squares(points: &[(f64, f64)]) -> Option<BoundaryLine> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let (sy, sx) = points.iter().fold((0.0, 0.0), |(sy, sx), &(x, y)| (sy + y, sx + x));
    let (my, mx) = (sy / nf, sx / nf);
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in points {
        syy += (y - my) * (y - my);
        sxy += (y - my) * (x - mx);
    }
    if syy <= 0.0 {
        return None;
    }
    let slope = sxy / syy;
    Some(BoundaryLine { intercept: mx - slope * my, slope })
}

/// Least squares with iterative trimming of points whose residual deviates
/// from the median residual by more than 2.5 MAD.
fn trimmed_fit(mut points: Vec<(f64, f64)>) -> Option<(BoundaryLine, usize)> {
    let mut line = least_squares(&points)?;
    for _ in 0..TRIM_ROUNDS {
        let residuals: Vec<f64> =
            points.iter().map(|&(x, y)| x - (line.intercept + line.slope * y)).collect();
        let center = math::median(&mut residuals.clone());
        let mut deviations: Vec<f64> = residuals.iter().map(|r| (r - center).abs()).collect();
        let mad = math::median(&mut deviations);
        if mad <= f64::EPSILON {
            break;
        }
        let cutoff = TRIM_MAD_FACTOR * mad;
        let kept: Vec<(f64, f64)> = points
            .iter()
            .zip(&residuals)
            .filter(|(_, r)| (**r - center).abs() <= cutoff)
            .map(|(p, _)| *p)
            .collect();
        if kept.len() == points.len() || kept.len() < 2 {
            break;
        }
        points = kept;
        line = least_squares(&points)?;
    }
    Some((line, points.len()))
}

/// Estimate the horizon row from the left and right road boundaries.
///
/// Boundary points are the outer edges of the leftmost and rightmost road
/// pixel of every row, sampled at the row center. Points lying on the frame
/// edge are not boundary observations and are skipped.
pub fn estimate_vanishing_row(mask: &RoadMask, min_road_pixels: usize) -> Result<VanishingEstimate> {
    let road_pixels = mask.road_pixel_count();
    if road_pixels < min_road_pixels.max(1) {
        return Err(Error::NoRoad { road_pixels, required: min_road_pixels });
    }
    let (w, h) = mask.dims();
    let top = mask.top_road_row().ok_or(Error::NoRoad { road_pixels, required: min_road_pixels })?;

    let mut left = Vec::new();
    let mut right = Vec::new();
    for y in top..h {
        let row = mask.row(y);
        let Some(l) = row.iter().position(|&b| b) else { continue };
        let r = row.iter().rposition(|&b| b).unwrap_or(l);
        let yc = y as f64 + 0.5;
        if l > 0 {
            left.push((l as f64, yc));
        }
        if r + 1 < w {
            right.push(((r + 1) as f64, yc));
        }
    }

    let fallback = |left_inliers, right_inliers| VanishingEstimate {
        y_v: top as f64 - FALLBACK_MARGIN * h as f64,
        confidence: Confidence::Fallback,
        left_inliers,
        right_inliers,
    };

    let (Some((lf, ln)), Some((rf, rn))) = (trimmed_fit(left), trimmed_fit(right)) else {
        return Ok(fallback(0, 0));
    };
    let slope_gap = lf.slope - rf.slope;
    if slope_gap.abs() < PARALLEL_SLOPE_EPS {
        return Ok(fallback(ln, rn));
    }
    let y_v = (rf.intercept - lf.intercept) / slope_gap;
    // An intersection below the topmost road row cannot be the horizon.
    if !y_v.is_finite() || y_v > (top + 1) as f64 || y_v >= (h - 1) as f64 {
        return Ok(fallback(ln, rn));
    }
    Ok(VanishingEstimate { y_v, confidence: Confidence::Fitted, left_inliers: ln, right_inliers: rn })
}

/// Linear ground-plane scale: 0 at the horizon row, 1 at the bottom row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerspectiveMap {
    pub y_v: f64,
    pub y_ref: f64,
    pub width: usize,
    pub height: usize,
}

impl PerspectiveMap {
    /// Map with the reference row at the image bottom (`H - 1`).
    pub fn new(y_v: f64, width: usize, height: usize) -> Result<Self> {
        let y_ref = height as f64 - 1.0;
        if !y_v.is_finite() || y_v >= y_ref {
            return Err(Error::InvalidConfig { key: "y_v", reason: "horizon must lie above the reference row" });
        }
        Ok(Self { y_v, y_ref, width, height })
    }

    pub fn from_estimate(estimate: &VanishingEstimate, width: usize, height: usize) -> Result<Self> {
        Self::new(estimate.y_v, width, height)
    }

    pub fn scale(&self, y: f64) -> f64 {
        perspective_scale(self.y_v, self.y_ref, y)
    }

    /// Horizon row normalized by the image height, clamped to `[0, 1]`.
    pub fn horizon_ratio(&self) -> f64 {
        horizon_ratio(self.y_v, self.height)
    }
}

pub fn perspective_scale(y_v: f64, y_ref: f64, y: f64) -> f64 {
    ((y - y_v) / (y_ref - y_v)).max(0.0)
}

pub fn horizon_ratio(y_v: f64, height: usize) -> f64 {
    (y_v / height as f64).clamp(0.0, 1.0)
}

/// Quantile bins over the horizon ratio. Bin `i` holds `e_i <= h < e_{i+1}`
/// with implicit outer edges 0 and 1; the last bin is closed above.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchBinning {
    edges: Vec<f64>,
}

impl PitchBinning {
    /// Single bin covering every ratio.
    pub fn single() -> Self {
        Self { edges: Vec::new() }
    }

    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig { key: "edges", reason: "edges must be finite and nondecreasing" });
        }
        Ok(Self { edges })
    }

    pub fn bins(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn assign(&self, h: f64) -> usize {
        assign_bin(h, self)
    }
}

/// Empirical quantiles at `i/K` with linear interpolation between order
/// statistics.
pub fn build_pitch_bins(ratios: &[f64], bins: usize) -> Result<PitchBinning> {
    if bins == 0 {
        return Err(Error::InvalidConfig { key: "bins", reason: "must be at least 1" });
    }
    if ratios.len() < bins {
        return Err(Error::TooFewImages { have: ratios.len(), bins });
    }
    let mut sorted: Vec<f64> = ratios.iter().map(|h| h.clamp(0.0, 1.0)).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let edges = (1..bins)
        .map(|i| {
            let pos = (n - 1) as f64 * i as f64 / bins as f64;
            let lo = math::floor(pos) as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            sorted[lo] + frac * (sorted[hi] - sorted[lo])
        })
        .collect();
    Ok(PitchBinning { edges })
}

pub fn assign_bin(h: f64, binning: &PitchBinning) -> usize {
    let h = if h.is_nan() { 0.0 } else { h.clamp(0.0, 1.0) };
    let idx = binning.edges.partition_point(|&e| e <= h);
    idx.min(binning.bins() - 1)
}
