//! Poisson compositing checked against an independently assembled dense
//! system solved by Gaussian elimination.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadpaste_core::blend::{clip_to_road, solve_poisson, BlendMode, BlendRegion};
use roadpaste_core::solver::{conjugate_gradient_observed, CgParams};
use roadpaste_core::{RgbImage, WarpedPatch};

/// Dense oracle: assemble the 4-neighbour system straight from the pixel
/// definition and solve by elimination with partial pivoting.
fn dense_oracle(target: &RgbImage, source: &WarpedPatch, region: &BlendRegion, channel: usize) -> Vec<f64> {
    let omega = region.pixels().to_vec();
    let n = omega.len();
    let pos = |x: usize, y: usize| omega.iter().position(|&p| p == (x, y));
    // Outside its window the source repeats the nearest window pixel.
    let s = |x: usize, y: usize| {
        let cx = x.clamp(source.x0, source.x0 + source.width - 1);
        let cy = y.clamp(source.y0, source.y0 + source.height - 1);
        source.value(cx, cy)[channel]
    };
    let t = |x: usize, y: usize| target.pixel(x, y)[channel] as f64;
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for (i, &(x, y)) in omega.iter().enumerate() {
        let nbrs = [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)];
        a[i][i] = nbrs.len() as f64;
        for (qx, qy) in nbrs {
            match pos(qx, qy) {
                Some(j) => a[i][j] -= 1.0,
                None => b[i] += t(qx, qy),
            }
            b[i] += s(x, y) - s(qx, qy);
        }
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = b[i];
        for k in i + 1..n {
            acc -= a[i][k] * x[k];
        }
        x[i] = acc / a[i][i];
    }
    x
}

fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> RgbImage {
    let data = (0..w * h * 3).map(|_| rng.random::<u8>()).collect();
    RgbImage::from_raw(w, h, data).unwrap()
}

fn random_source(rng: &mut impl Rng, x0: usize, y0: usize, w: usize, h: usize, p_valid: f64) -> WarpedPatch {
    WarpedPatch {
        x0,
        y0,
        width: w,
        height: h,
        values: (0..w * h).map(|_| [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)]).collect(),
        valid: (0..w * h).map(|_| rng.random_bool(p_valid)).collect(),
    }
}

#[test]
fn interior_four_by_four_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let target = random_image(&mut rng, 6, 6);
    let mut source = random_source(&mut rng, 0, 0, 6, 6, 1.0);
    source.valid = (0..36).map(|i| (1..5).contains(&(i % 6)) && (1..5).contains(&(i / 6))).collect();
    let region = clip_to_road(&source, None, (6, 6)).unwrap();
    assert_eq!(region.len(), 16);
    let sol = solve_poisson(&target, &source, &region, BlendMode::PoissonImport, CgParams::default()).unwrap();
    for c in 0..3 {
        let oracle = dense_oracle(&target, &source, &region, c);
        for (v, o) in sol.values.iter().zip(&oracle) {
            assert!((v[c] - o).abs() < 1e-6, "{} vs {}", v[c], o);
        }
    }
}

#[test]
fn randomized_regions_match_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 60 {
        let (w, h) = (rng.random_range(4..22), rng.random_range(4..22));
        let target = random_image(&mut rng, w + 4, h + 4);
        let p_valid = rng.random_range(0.3..1.0);
        let source = random_source(&mut rng, 1, 1, w, h, p_valid);
        let Ok(region) = clip_to_road(&source, None, (w + 4, h + 4)) else { continue };
        if region.len() > 150 {
            continue;
        }
        let sol = solve_poisson(&target, &source, &region, BlendMode::PoissonImport, CgParams::default()).unwrap();
        for c in 0..3 {
            let oracle = dense_oracle(&target, &source, &region, c);
            let err = sol.values.iter().zip(&oracle).map(|(v, o)| (v[c] - o).abs()).fold(0.0, f64::max);
            assert!(err < 1e-6, "case {checked}: max error {err}");
        }
        checked += 1;
    }
}

#[test]
fn target_gradients_reproduce_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let target = random_image(&mut rng, 24, 20);
        let mut source = random_source(&mut rng, 0, 0, 24, 20, 0.7);
        for y in 0..20 {
            for x in 0..24 {
                let p = target.pixel(x, y);
                source.values[y * 24 + x] = [p[0] as f64, p[1] as f64, p[2] as f64];
            }
        }
        let region = clip_to_road(&source, None, (24, 20)).unwrap();
        let sol = solve_poisson(&target, &source, &region, BlendMode::PoissonImport, CgParams::default()).unwrap();
        for (&(x, y), v) in region.pixels().iter().zip(&sol.values) {
            let p = target.pixel(x, y);
            for c in 0..3 {
                assert!((v[c] - p[c] as f64).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn zero_guidance_obeys_maximum_principle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..30 {
        let target = random_image(&mut rng, 20, 20);
        let mut source = random_source(&mut rng, 2, 2, 16, 16, 0.8);
        let flat = [rng.random_range(0.0..255.0); 3];
        source.values.iter_mut().for_each(|v| *v = flat);
        let Ok(region) = clip_to_road(&source, None, (20, 20)) else { continue };
        let sol = solve_poisson(&target, &source, &region, BlendMode::PoissonImport, CgParams::default()).unwrap();
        for c in 0..3 {
            let bvals: Vec<f64> = region.boundary().iter().map(|&(x, y)| target.pixel(x, y)[c] as f64).collect();
            let lo = bvals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = bvals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in &sol.values {
                assert!(v[c] >= lo - 1e-9 && v[c] <= hi + 1e-9);
            }
        }
    }
}

#[test]
fn energy_norm_error_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let target = random_image(&mut rng, 14, 14);
    let source = random_source(&mut rng, 1, 1, 12, 12, 0.9);
    let region = clip_to_road(&source, None, (14, 14)).unwrap();
    let (a, rhs) = roadpaste_core::blend::assemble_system(&target, &source, &region, BlendMode::PoissonImport).unwrap();
    let exact = dense_oracle(&target, &source, &region, 0);
    let n = a.dim();
    let energy = |x: &[f64]| {
        let e: Vec<f64> = x.iter().zip(&exact).map(|(a, b)| a - b).collect();
        let mut ae = vec![0.0; n];
        a.mul_into(&e, &mut ae);
        e.iter().zip(&ae).map(|(a, b)| a * b).sum::<f64>().sqrt()
    };
    let mut x = vec![0.0; n];
    let mut history = vec![energy(&x)];
    let out = conjugate_gradient_observed(&a, &rhs[0], &mut x, CgParams { tolerance: 1e-10, max_iterations: None }, |xi| {
        history.push(energy(xi))
    })
    .unwrap();
    assert!(out.relative_residual <= 1e-10);
    for w in history.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn mixed_mode_keeps_stronger_gradient() {
    // Flat source over a textured target: mixed guidance falls back to the
    // target's own gradients, so the target is reproduced.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let target = random_image(&mut rng, 12, 12);
    let mut source = random_source(&mut rng, 0, 0, 12, 12, 1.0);
    source.values.iter_mut().for_each(|v| *v = [128.0; 3]);
    let region = clip_to_road(&source, None, (12, 12)).unwrap();
    let sol = solve_poisson(&target, &source, &region, BlendMode::PoissonMixed, CgParams::default()).unwrap();
    for (&(x, y), v) in region.pixels().iter().zip(&sol.values) {
        assert!((v[0] - target.pixel(x, y)[0] as f64).abs() < 1e-6, "{} {}", v[0], target.pixel(x, y)[0]);
    }
}

#[test]
fn pixels_outside_region_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let target = random_image(&mut rng, 16, 16);
    let source = random_source(&mut rng, 2, 3, 10, 9, 0.6);
    let region = clip_to_road(&source, None, (16, 16)).unwrap();
    let out = roadpaste_core::blend::poisson_blend(&target, &source, &region, BlendMode::PoissonImport).unwrap();
    for y in 0..16 {
        for x in 0..16 {
            if !region.contains(x, y) {
                assert_eq!(out.pixel(x, y), target.pixel(x, y));
            }
        }
    }
}
