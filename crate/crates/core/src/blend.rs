//! Road clipping of the warped footprint and gradient-domain compositing.
//!
//! For every pixel `p` of the region the blended value `f_p` satisfies
//!
//! ```text
//! |N_p| f_p - sum_{q in N_p ∩ Ω} f_q = sum_{q in N_p ∩ ∂Ω} t_q + sum_{q in N_p} v_pq
//! ```
//!
//! where `t` is the target image and `v_pq` the guidance gradient along the
//! edge `p -> q`. Each channel is an independent SPD system.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::BoundingBox;
use crate::raster::{RgbImage, RoadMask};
use crate::solver::{conjugate_gradient, CgOutcome, CgParams, CsrMatrix};
use crate::warp::WarpedPatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlendMode {
    /// Guidance is the gradient of the pasted source.
    #[default]
    PoissonImport,
    /// Per edge, the larger-magnitude gradient of source or target.
    PoissonMixed,
    /// Plain copy of the source over the region.
    Alpha,
}

impl BlendMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BlendMode::PoissonImport => "poisson_import",
            BlendMode::PoissonMixed => "poisson_mixed",
            BlendMode::Alpha => "alpha",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "poisson_import" | "poisson" | "import" => Some(BlendMode::PoissonImport),
            "poisson_mixed" | "mixed" => Some(BlendMode::PoissonMixed),
            "alpha" => Some(BlendMode::Alpha),
            _ => None,
        }
    }
}

const NEIGHBORS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Destination pixels receiving pasted content, stored as a bitmap over a
/// window of the image, plus their outer 4-neighbour boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendRegion {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    inside: Vec<bool>,
    /// Image coordinates of `Ω`, row-major order.
    pixels: Vec<(usize, usize)>,
    boundary: Vec<(usize, usize)>,
}

impl BlendRegion {
    /// Region from a window bitmap. Pixels on the image frame are dropped so
    /// the boundary always exists inside the image.
    pub fn from_window(
        x0: usize,
        y0: usize,
        width: usize,
        height: usize,
        mut inside: Vec<bool>,
        image_dims: (usize, usize),
    ) -> Self {
        let (iw, ih) = image_dims;
        let mut pixels = Vec::new();
        for v in 0..height {
            for u in 0..width {
                let (x, y) = (x0 + u, y0 + v);
                let i = v * width + u;
                if inside[i] && (x == 0 || y == 0 || x + 1 >= iw || y + 1 >= ih) {
                    inside[i] = false;
                }
                if inside[i] {
                    pixels.push((x, y));
                }
            }
        }
        let mut region = Self { x0, y0, width, height, inside, pixels, boundary: Vec::new() };
        let mut seen = vec![false; (width + 2) * (height + 2)];
        let mut boundary = Vec::new();
        for &(x, y) in &region.pixels {
            for (dx, dy) in NEIGHBORS {
                let (qx, qy) = ((x as isize + dx) as usize, (y as isize + dy) as usize);
                if region.contains(qx, qy) {
                    continue;
                }
                // Padded window index; neighbours are at most one pixel outside.
                let pu = qx + 1 - x0;
                let pv = qy + 1 - y0;
                let k = pv * (width + 2) + pu;
                if !seen[k] {
                    seen[k] = true;
                    boundary.push((qx, qy));
                }
            }
        }
        boundary.sort_by_key(|&(x, y)| (y, x));
        region.boundary = boundary;
        region
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0
            && y >= self.y0
            && x < self.x0 + self.width
            && y < self.y0 + self.height
            && self.inside[(y - self.y0) * self.width + (x - self.x0)]
    }

    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    pub fn boundary(&self) -> &[(usize, usize)] {
        &self.boundary
    }

    /// Tight continuous-coordinate bounds of the region's pixels.
    pub fn bounds(&self) -> Option<BoundingBox> {
        let first = self.pixels.first()?;
        let (mut lx, mut ly, mut hx, mut hy) = (first.0, first.1, first.0, first.1);
        for &(x, y) in &self.pixels {
            lx = lx.min(x);
            ly = ly.min(y);
            hx = hx.max(x);
            hy = hy.max(y);
        }
        Some(BoundingBox::new(lx as f64, ly as f64, (hx + 1) as f64, (hy + 1) as f64))
    }
}

/// Region = warped validity ∧ road ∧ frame interior. Without a road mask
/// only the frame clips.
pub fn clip_to_road(warped: &WarpedPatch, road: Option<&RoadMask>, image_dims: (usize, usize)) -> Result<BlendRegion> {
    if let Some(r) = road {
        if r.dims() != image_dims {
            return Err(Error::DimensionMismatch { expected: image_dims, found: r.dims() });
        }
    }
    let (iw, ih) = image_dims;
    let inside: Vec<bool> = (0..warped.height)
        .flat_map(|v| (0..warped.width).map(move |u| (u, v)))
        .map(|(u, v)| {
            let (x, y) = (warped.x0 + u, warped.y0 + v);
            x < iw && y < ih && warped.valid[v * warped.width + u] && road.is_none_or(|m| m.is_road(x, y))
        })
        .collect();
    let region = BlendRegion::from_window(warped.x0, warped.y0, warped.width, warped.height, inside, image_dims);
    if region.is_empty() {
        return Err(Error::NothingOnRoad);
    }
    Ok(region)
}

fn source_at(source: &WarpedPatch, x: usize, y: usize) -> [f64; 3] {
    // Outside the warped window, repeat the nearest window pixel.
    let cx = x.clamp(source.x0, source.x0 + source.width - 1);
    let cy = y.clamp(source.y0, source.y0 + source.height - 1);
    source.value(cx, cy)
}

fn target_at(target: &RgbImage, x: usize, y: usize) -> [f64; 3] {
    let p = target.pixel(x, y);
    [p[0] as f64, p[1] as f64, p[2] as f64]
}

/// Pre-rounding solution of the Poisson system, one RGB triple per pixel of
/// the region in `region.pixels()` order.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution {
    pub values: Vec<[f64; 3]>,
    pub outcomes: [CgOutcome; 3],
}

/// Sparse Laplacian and per-channel right-hand sides of the blend system.
pub fn assemble_system(
    target: &RgbImage,
    source: &WarpedPatch,
    region: &BlendRegion,
    mode: BlendMode,
) -> Result<(CsrMatrix, [Vec<f64>; 3])> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let n = region.len();
    let index_of = |x: usize, y: usize| -> Option<usize> {
        if !region.contains(x, y) {
            return None;
        }
        region.pixels.binary_search_by_key(&(y, x), |&(px, py)| (py, px)).ok()
    };
    let mut rows = Vec::with_capacity(n);
    let mut rhs = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (i, &(x, y)) in region.pixels.iter().enumerate() {
        let mut row = Vec::with_capacity(5);
        let sp = source_at(source, x, y);
        let tp = target_at(target, x, y);
        let mut degree = 0.0;
        for (dx, dy) in NEIGHBORS {
            let (qx, qy) = ((x as isize + dx) as usize, (y as isize + dy) as usize);
            degree += 1.0;
            let tq = target_at(target, qx, qy);
            match index_of(qx, qy) {
                Some(j) => row.push((j, -1.0)),
                None => {
                    for c in 0..3 {
                        rhs[c][i] += tq[c];
                    }
                }
            }
            let sq = source_at(source, qx, qy);
            for c in 0..3 {
                let gs = sp[c] - sq[c];
                let v = match mode {
                    BlendMode::PoissonMixed => {
                        let gt = tp[c] - tq[c];
                        if gs.abs() > gt.abs() {
                            gs
                        } else {
                            gt
                        }
                    }
                    _ => gs,
                };
                rhs[c][i] += v;
            }
        }
        row.push((i, degree));
        row.sort_by_key(|e| e.0);
        rows.push(row);
    }
    Ok((CsrMatrix::from_rows(rows), rhs))
}

/// Solve the blend system per channel with Jacobi-preconditioned CG,
/// starting from the source values.
pub fn solve_poisson(
    target: &RgbImage,
    source: &WarpedPatch,
    region: &BlendRegion,
    mode: BlendMode,
    params: CgParams,
) -> Result<PoissonSolution> {
    let (a, rhs) = assemble_system(target, source, region, mode)?;
    let n = region.len();
    let mut values = vec![[0.0; 3]; n];
    let mut outcomes = [CgOutcome { iterations: 0, relative_residual: 0.0 }; 3];
    for c in 0..3 {
        let mut x: Vec<f64> = region.pixels.iter().map(|&(px, py)| source_at(source, px, py)[c]).collect();
        outcomes[c] = conjugate_gradient(&a, &rhs[c], &mut x, params)?;
        for (v, xi) in values.iter_mut().zip(x) {
            v[c] = xi;
        }
    }
    Ok(PoissonSolution { values, outcomes })
}

fn quantize(v: f64) -> u8 {
    crate::math::round(v).clamp(0.0, 255.0) as u8
}

/// Poisson-composite `source` into `target` over `region`, in place.
pub fn poisson_blend_into(
    target: &mut RgbImage,
    source: &WarpedPatch,
    region: &BlendRegion,
    mode: BlendMode,
    params: CgParams,
) -> Result<PoissonSolution> {
    let solution = solve_poisson(target, source, region, mode, params)?;
    for (&(x, y), v) in region.pixels.iter().zip(&solution.values) {
        target.put_pixel(x, y, [quantize(v[0]), quantize(v[1]), quantize(v[2])]);
    }
    Ok(solution)
}

pub fn poisson_blend(
    target: &RgbImage,
    source: &WarpedPatch,
    region: &BlendRegion,
    mode: BlendMode,
) -> Result<RgbImage> {
    let mut out = target.clone();
    poisson_blend_into(&mut out, source, region, mode, CgParams::default())?;
    Ok(out)
}

pub fn alpha_paste_into(target: &mut RgbImage, source: &WarpedPatch, region: &BlendRegion) -> Result<()> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    for &(x, y) in &region.pixels {
        let v = source_at(source, x, y);
        target.put_pixel(x, y, [quantize(v[0]), quantize(v[1]), quantize(v[2])]);
    }
    Ok(())
}

pub fn alpha_paste(target: &RgbImage, source: &WarpedPatch, region: &BlendRegion) -> Result<RgbImage> {
    let mut out = target.clone();
    alpha_paste_into(&mut out, source, region)?;
    Ok(out)
}

/// Composite with the requested mode.
pub fn composite_into(
    target: &mut RgbImage,
    source: &WarpedPatch,
    region: &BlendRegion,
    mode: BlendMode,
    params: CgParams,
) -> Result<()> {
    match mode {
        BlendMode::Alpha => alpha_paste_into(target, source, region),
        _ => poisson_blend_into(target, source, region, mode, params).map(|_| ()),
    }
}
