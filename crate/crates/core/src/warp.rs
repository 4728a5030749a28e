//! Perspective-consistent target quadrilaterals, four-point homographies and
//! inverse-mapped bilinear warping.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::perspective::PerspectiveMap;
use crate::raster::RgbImage;

/// Corner residual a solved homography must meet, in pixels.
pub const CORNER_TOLERANCE: f64 = 1e-6;

const VALIDITY_EPS: f64 = 1e-9;

pub type Point = (f64, f64);

/// Quadrilateral with corners ordered bottom-left, bottom-right, top-right,
/// top-left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub corners: [Point; 4],
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) && d1 != 0.0 && d2 != 0.0 && d3 != 0.0 && d4 != 0.0
}

impl Quad {
    pub fn new(bl: Point, br: Point, tr: Point, tl: Point) -> Self {
        Self { corners: [bl, br, tr, tl] }
    }

    /// Corners of a `w x h` patch in its own pixel frame.
    pub fn from_rect(w: f64, h: f64) -> Self {
        Self::new((0.0, h), (w, h), (w, 0.0), (0.0, 0.0))
    }

    pub fn axis_aligned(left: f64, top: f64, w: f64, h: f64) -> Self {
        Self::new((left, top + h), (left + w, top + h), (left + w, top), (left, top))
    }

    /// Shoelace area (positive for either orientation).
    pub fn area(&self) -> f64 {
        let c = &self.corners;
        let mut s = 0.0;
        for i in 0..4 {
            let (a, b) = (c[i], c[(i + 1) % 4]);
            s += a.0 * b.1 - b.0 * a.1;
        }
        0.5 * s.abs()
    }

    pub fn is_simple(&self) -> bool {
        let [bl, br, tr, tl] = self.corners;
        !segments_cross(bl, br, tr, tl) && !segments_cross(br, tr, tl, bl)
    }

    pub fn is_valid(&self) -> bool {
        let [bl, br, tr, tl] = self.corners;
        self.corners.iter().all(|p| p.0.is_finite() && p.1.is_finite())
            && self.area() > 0.0
            && self.is_simple()
            && bl.1.min(br.1) >= tr.1.max(tl.1)
    }

    /// Integer pixel window `(x0, y0, w, h)` covering the quad plus `pad`
    /// pixels, clipped to a `width x height` frame.
    pub fn pixel_window(&self, pad: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let (mut lx, mut ly, mut hx, mut hy) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &self.corners {
            lx = lx.min(x);
            ly = ly.min(y);
            hx = hx.max(x);
            hy = hy.max(y);
        }
        let pad = pad as f64;
        let clamp = |v: f64, hi: usize| v.clamp(0.0, hi as f64) as usize;
        let x0 = clamp(math::floor(lx) - pad, width);
        let y0 = clamp(math::floor(ly) - pad, height);
        let x1 = clamp(math::ceil(hx) + pad, width);
        let y1 = clamp(math::ceil(hy) + pad, height);
        (x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0))
    }
}

/// Bounds on the bottom-edge scale ratio between target and source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for ScaleBounds {
    fn default() -> Self {
        Self { min: 0.2, max: 5.0 }
    }
}

/// Isosceles trapezoid for a patch whose bottom-center sits at `anchor`.
///
/// The bottom edge is scaled by `scale(y) / s_src`, the height by the same
/// bottom ratio, and the top edge by the ratio at the resulting top row.
pub fn target_quad_with(
    anchor: Point,
    patch_w: f64,
    patch_h: f64,
    s_src: f64,
    scale: impl Fn(f64) -> f64,
    bounds: ScaleBounds,
) -> Result<Quad> {
    if !(s_src > 0.0) {
        return Err(Error::ScaleOutOfRange { ratio: f64::INFINITY });
    }
    let (x, y) = anchor;
    let r_b = scale(y) / s_src;
    if !(r_b >= bounds.min && r_b <= bounds.max) {
        return Err(Error::ScaleOutOfRange { ratio: r_b });
    }
    let w_b = patch_w * r_b;
    let h = patch_h * r_b;
    let y_t = y - h;
    let r_t = scale(y_t) / s_src;
    let w_t = patch_w * r_t;
    if w_t <= 1.0 || h <= 1.0 || w_b <= 1.0 {
        return Err(Error::DegenerateQuad);
    }
    let quad = Quad::new((x - w_b / 2.0, y), (x + w_b / 2.0, y), (x + w_t / 2.0, y_t), (x - w_t / 2.0, y_t));
    if !quad.is_valid() {
        return Err(Error::DegenerateQuad);
    }
    Ok(quad)
}

pub fn target_quad(
    anchor: Point,
    patch_w: f64,
    patch_h: f64,
    s_src: f64,
    map: &PerspectiveMap,
    bounds: ScaleBounds,
) -> Result<Quad> {
    target_quad_with(anchor, patch_w, patch_h, s_src, |y| map.scale(y), bounds)
}

/// Projective transform, row-major, normalized so `m[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub const IDENTITY: Homography = Homography { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] };

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self { m: [[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]] }
    }

    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        let h = Self { m };
        let d = h.det();
        if !d.is_finite() || d == 0.0 || m[2][2] == 0.0 {
            return Err(Error::SingularSystem);
        }
        Ok(h.normalized())
    }

    fn normalized(mut self) -> Self {
        let s = self.m[2][2];
        for row in &mut self.m {
            for v in row {
                *v /= s;
            }
        }
        self
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.m
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Forward map; `None` when the point goes to infinity.
    pub fn apply(&self, p: Point) -> Option<Point> {
        let m = &self.m;
        let w = m[2][0] * p.0 + m[2][1] * p.1 + m[2][2];
        if w.abs() < 1e-300 {
            return None;
        }
        Some(((m[0][0] * p.0 + m[0][1] * p.1 + m[0][2]) / w, (m[1][0] * p.0 + m[1][1] * p.1 + m[1][2]) / w))
    }

    pub fn inverse(&self) -> Result<Homography> {
        let m = &self.m;
        let d = self.det();
        if !d.is_finite() || d.abs() < 1e-300 {
            return Err(Error::SingularSystem);
        }
        let adj = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        if adj[2][2] == 0.0 {
            // Inverse exists but cannot be normalized with a unit corner entry.
            return Err(Error::SingularSystem);
        }
        Ok(Homography { m: adj }.normalized())
    }

    pub fn compose(&self, other: &Homography) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        out
    }

    /// Largest distance between mapped `src` corners and `dst` corners.
    pub fn corner_residual(&self, src: &Quad, dst: &Quad) -> f64 {
        src.corners
            .iter()
            .zip(&dst.corners)
            .map(|(s, d)| match self.apply(*s) {
                Some(p) => math::sqrt((p.0 - d.0) * (p.0 - d.0) + (p.1 - d.1) * (p.1 - d.1)),
                None => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }
}

/// Similarity that moves the centroid to the origin and the mean distance
/// to sqrt(2).
fn conditioning(points: &[Point; 4]) -> Option<[[f64; 3]; 3]> {
    let cx = points.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let cy = points.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let mean = points.iter().map(|p| math::sqrt((p.0 - cx) * (p.0 - cx) + (p.1 - cy) * (p.1 - cy))).sum::<f64>() / 4.0;
    if !(mean > 0.0) || !mean.is_finite() {
        return None;
    }
    let s = core::f64::consts::SQRT_2 / mean;
    Some([[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]])
}

fn apply_raw(m: &[[f64; 3]; 3], p: Point) -> Point {
    let w = m[2][0] * p.0 + m[2][1] * p.1 + m[2][2];
    ((m[0][0] * p.0 + m[0][1] * p.1 + m[0][2]) / w, (m[1][0] * p.0 + m[1][1] * p.1 + m[1][2]) / w)
}

/// Gaussian elimination with partial pivoting on an `n x n` system stored
/// row-major in `a`; the solution overwrites `b`.
pub(crate) fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<()> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[pivot * n + col].abs() <= 1e-12 * scale {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col * n + k] * b[k];
        }
        b[col] = acc / a[col * n + col];
    }
    Some(())
}

/// Four-point direct linear transform with the bottom-right entry fixed to 1.
/// Points are conditioned before the 8x8 solve and the result is checked
/// against the corner tolerance.
pub fn solve_homography(src: &Quad, dst: &Quad) -> Result<Homography> {
    let ts = conditioning(&src.corners).ok_or(Error::SingularSystem)?;
    let td = conditioning(&dst.corners).ok_or(Error::SingularSystem)?;
    let mut a = [0.0; 64];
    let mut b = [0.0; 8];
    for i in 0..4 {
        let (x, y) = apply_raw(&ts, src.corners[i]);
        let (u, v) = apply_raw(&td, dst.corners[i]);
        let r = 2 * i;
        a[r * 8..r * 8 + 8].copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        b[r] = u;
        a[(r + 1) * 8..(r + 1) * 8 + 8].copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r + 1] = v;
    }
    solve_dense(&mut a, &mut b, 8).ok_or(Error::SingularSystem)?;
    let hn = Homography::from_matrix([[b[0], b[1], b[2]], [b[3], b[4], b[5]], [b[6], b[7], 1.0]])?;
    let td_inv = Homography::from_matrix(td)?.inverse()?;
    let full = td_inv.compose(&hn);
    let full = Homography { m: full };
    let full = Homography::from_matrix(Homography { m: full.compose(&Homography { m: ts }) }.m)?;
    if !(full.corner_residual(src, dst) < CORNER_TOLERANCE) {
        return Err(Error::SingularSystem);
    }
    Ok(full)
}

/// Warped patch over an integer window of the destination image.
///
/// `values` are filled for every window pixel (edge-clamped outside the
/// patch) so gradients next to the footprint are defined; `valid` marks the
/// pixels whose preimage falls inside the patch.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedPatch {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub values: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

impl WarpedPatch {
    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && y >= self.y0 && x < self.x0 + self.width && y < self.y0 + self.height
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize) -> [f64; 3] {
        self.values[(y - self.y0) * self.width + (x - self.x0)]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.contains(x, y) && self.valid[(y - self.y0) * self.width + (x - self.x0)]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

fn bilinear(patch: &RgbImage, fx: f64, fy: f64) -> [f64; 3] {
    let (w, h) = patch.dims();
    let fx = fx.clamp(0.0, (w - 1) as f64);
    let fy = fy.clamp(0.0, (h - 1) as f64);
    let x0 = math::floor(fx) as usize;
    let y0 = math::floor(fy) as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let ax = fx - x0 as f64;
    let ay = fy - y0 as f64;
    let (p00, p10, p01, p11) = (patch.pixel(x0, y0), patch.pixel(x1, y0), patch.pixel(x0, y1), patch.pixel(x1, y1));
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] as f64 + ax * (p10[c] as f64 - p00[c] as f64);
        let bottom = p01[c] as f64 + ax * (p11[c] as f64 - p01[c] as f64);
        out[c] = top + ay * (bottom - top);
    }
    out
}

/// Inverse-map every pixel center of the window through `H^-1` and sample
/// the patch bilinearly. A pixel is valid when its preimage lies within the
/// hull of the patch's pixel centers.
pub fn warp_patch(patch: &RgbImage, h: &Homography, window: (usize, usize, usize, usize)) -> Result<WarpedPatch> {
    let inv = h.inverse()?;
    let (x0, y0, ww, wh) = window;
    let (pw, ph) = patch.dims();
    let mut values = vec![[0.0; 3]; ww * wh];
    let mut valid = vec![false; ww * wh];
    if pw == 0 || ph == 0 {
        return Ok(WarpedPatch { x0, y0, width: ww, height: wh, values, valid });
    }
    let (max_x, max_y) = ((pw - 1) as f64, (ph - 1) as f64);
    for v in 0..wh {
        for u in 0..ww {
            let i = v * ww + u;
            let center = ((x0 + u) as f64 + 0.5, (y0 + v) as f64 + 0.5);
            let Some((sx, sy)) = inv.apply(center) else {
                values[i] = bilinear(patch, 0.0, 0.0);
                continue;
            };
            let (fx, fy) = (sx - 0.5, sy - 0.5);
            valid[i] = fx >= -VALIDITY_EPS && fy >= -VALIDITY_EPS && fx <= max_x + VALIDITY_EPS && fy <= max_y + VALIDITY_EPS;
            values[i] = bilinear(patch, fx, fy);
        }
    }
    Ok(WarpedPatch { x0, y0, width: ww, height: wh, values, valid })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn identity_scale_keeps_rectangle() {
        let q = target_quad_with((100.0, 200.0), 40.0, 20.0, 0.6, |_| 0.6, ScaleBounds::default()).unwrap();
        assert_eq!(q, Quad::axis_aligned(80.0, 180.0, 40.0, 20.0));
    }

    #[test]
    fn trapezoid_from_linear_map() {
        let map = PerspectiveMap::new(100.0, 640, 501).unwrap();
        let q = target_quad((200.0, 400.0), 40.0, 20.0, 1.0, &map, ScaleBounds::default()).unwrap();
        let [bl, br, tr, tl] = q.corners;
        assert!(close(br.0 - bl.0, 30.0));
        assert!(close(bl.1 - tl.1, 15.0));
        assert!(close(tl.1, 385.0));
        assert!(close(tr.0 - tl.0, 28.5));
        assert!(close(0.5 * (tr.0 + tl.0), 200.0));
    }

    #[test]
    fn tiny_scale_rejected() {
        let map = PerspectiveMap::new(100.0, 640, 501).unwrap();
        // scale(140) = 0.1
        let err = target_quad((200.0, 140.0), 40.0, 20.0, 1.0, &map, ScaleBounds::default()).unwrap_err();
        assert!(matches!(err, Error::ScaleOutOfRange { .. }));
    }

    #[test]
    fn flat_patch_is_degenerate() {
        let err = target_quad_with((50.0, 50.0), 40.0, 1.0, 1.0, |_| 1.0, ScaleBounds::default()).unwrap_err();
        assert_eq!(err, Error::DegenerateQuad);
    }

    #[test]
    fn identity_and_scaling_homographies() {
        let unit = Quad::from_rect(1.0, 1.0);
        let h = solve_homography(&unit, &unit).unwrap();
        for (i, row) in h.matrix().iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        let h = solve_homography(&unit, &Quad::from_rect(2.0, 2.0)).unwrap();
        let expected = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((h.matrix()[i][j] - expected[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn collinear_corners_are_singular() {
        let line = Quad::new((0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0));
        assert_eq!(solve_homography(&Quad::from_rect(1.0, 1.0), &line), Err(Error::SingularSystem));
    }

    #[test]
    fn identity_warp_reproduces_patch() {
        let mut patch = RgbImage::new(5, 4);
        for y in 0..4 {
            for x in 0..5 {
                patch.put_pixel(x, y, [(x * 40) as u8, (y * 50) as u8, 7]);
            }
        }
        let w = warp_patch(&patch, &Homography::IDENTITY, (0, 0, 5, 4)).unwrap();
        assert!(w.valid.iter().all(|&v| v));
        for y in 0..4 {
            for x in 0..5 {
                let p = patch.pixel(x, y);
                assert_eq!(w.value(x, y), [p[0] as f64, p[1] as f64, p[2] as f64]);
            }
        }
    }

    #[test]
    fn quad_validity() {
        assert!(Quad::from_rect(3.0, 2.0).is_valid());
        let bowtie = Quad::new((0.0, 2.0), (2.0, 0.0), (2.0, 2.0), (0.0, 0.0));
        assert!(!bowtie.is_valid());
    }
}
