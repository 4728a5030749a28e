//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any failed.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadpaste::augment::{augment_dataset, AugmentationReport, RunOptions};
use roadpaste::dataset::{finish_output, load_dataset, write_augmented, CountingMasks, FsMasks};
use roadpaste::fixtures::{write_fixture, FixtureSpec};
use roadpaste_core::blend::{clip_to_road, solve_poisson, BlendMode, BlendRegion};
use roadpaste_core::perspective::estimate_vanishing_row;
use roadpaste_core::pipeline::Ablation;
use roadpaste_core::placement::{build_heatmaps, PlacementSampler};
use roadpaste_core::solver::CgParams;
use roadpaste_core::synth::Trapezoid;
use roadpaste_core::warp::solve_homography;
use roadpaste_core::{
    AugmentationConfig, BankParams, BoundingBox, DamageBank, DamageClass, DamageInstance, PitchBinning,
    PlacementHeatmap, Provenance, Quad, RgbImage, RoadMask, WarpedPatch,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

// Tolerances and sizes fixed by the acceptance criteria.
const POISSON_TOL: f64 = 1e-6;
const POISSON_MIN_CASES: usize = 50;
const POISSON_MAX_REGION: usize = 150;
const POISSON_BUDGET: Duration = Duration::from_secs(10);
const REPRODUCTION_CASES: usize = 20;
const HOMOGRAPHY_CASES: usize = 1_000;
const CORNER_TOL: f64 = 1e-6;
const PLACEMENT_DRAWS: usize = 10_000;
const GROUP_DRAWS: usize = 10_000;
const CHI_SQUARE_P: f64 = 0.01;
const TV_DRAWS: usize = 100_000;
const TV_MAX: f64 = 0.05;
const TV_GRID: usize = 8;
const VANISHING_CASES: usize = 100;
const VANISHING_TOL_PX: f64 = 2.0;
const THROUGHPUT_IMAGES: usize = 100;
const THROUGHPUT_SIDE: usize = 640;
const THROUGHPUT_BUDGET: Duration = Duration::from_secs(120);
const IOU_MAX: f64 = 0.3;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------- Poisson

/// Dense reference: the 4-neighbour system assembled from its pixel
/// definition and solved by elimination with partial pivoting.
fn dense_poisson(target: &RgbImage, source: &WarpedPatch, region: &BlendRegion, channel: usize) -> Vec<f64> {
    let omega = region.pixels().to_vec();
    let n = omega.len();
    let index: BTreeMap<(usize, usize), usize> = omega.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let s = |x: usize, y: usize| {
        let cx = x.clamp(source.x0, source.x0 + source.width - 1);
        let cy = y.clamp(source.y0, source.y0 + source.height - 1);
        source.value(cx, cy)[channel]
    };
    let mut a = vec![vec![0.0f64; n]; n];
    let mut b = vec![0.0f64; n];
    for (i, &(x, y)) in omega.iter().enumerate() {
        for (qx, qy) in [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)] {
            a[i][i] += 1.0;
            match index.get(&(qx, qy)) {
                Some(&j) => a[i][j] -= 1.0,
                None => b[i] += target.pixel(qx, qy)[channel] as f64,
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
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let acc = b[i] - (i + 1..n).map(|k| a[i][k] * x[k]).sum::<f64>();
        x[i] = acc / a[i][i];
    }
    x
}

fn noise_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RgbImage {
    RgbImage::from_raw(w, h, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap()
}

fn random_source(rng: &mut ChaCha8Rng, x0: usize, y0: usize, w: usize, h: usize, p_valid: f64) -> WarpedPatch {
    let values = (0..w * h).map(|_| [0; 3].map(|_: u8| rng.random_range(0.0..255.0))).collect();
    let valid = (0..w * h).map(|_| rng.random_bool(p_valid)).collect();
    WarpedPatch { x0, y0, width: w, height: h, values, valid }
}

fn c1_poisson_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut cases, mut worst) = (0, 0.0f64);
    while cases < POISSON_MIN_CASES + 10 {
        let (w, h) = (rng.random_range(3..20), rng.random_range(3..20));
        let target = noise_image(&mut rng, w + 4, h + 4);
        let p = rng.random_range(0.3..1.0);
        let source = random_source(&mut rng, 1, 2, w, h, p);
        let Ok(region) = clip_to_road(&source, None, (w + 4, h + 4)) else { continue };
        if region.len() > POISSON_MAX_REGION {
            continue;
        }
        let sol = solve_poisson(&target, &source, &region, BlendMode::PoissonImport, CgParams::default())
            .map_err(|e| e.to_string())?;
        for c in 0..3 {
            let reference = dense_poisson(&target, &source, &region, c);
            for (v, r) in sol.values.iter().zip(&reference) {
                worst = worst.max((v[c] - r).abs());
            }
        }
        cases += 1;
    }
    let elapsed = start.elapsed();
    ensure!(worst < POISSON_TOL, "max abs error {worst:e} over {cases} regions");
    ensure!(elapsed < POISSON_BUDGET, "took {elapsed:?}");
    Ok(format!("{cases} regions, max abs error {worst:.1e}, {:.2} s", elapsed.as_secs_f64()))
}

fn c2_poisson_reproduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..REPRODUCTION_CASES {
        let (w, h) = (rng.random_range(8..30), rng.random_range(8..30));
        let target = noise_image(&mut rng, w, h);
        let p = rng.random_range(0.4..0.95);
        let mut source = random_source(&mut rng, 0, 0, w, h, p);
        for y in 0..h {
            for x in 0..w {
                source.values[y * w + x] = target.pixel(x, y).map(f64::from);
            }
        }
        let region = clip_to_road(&source, None, (w, h)).map_err(|e| e.to_string())?;
        let sol = solve_poisson(&target, &source, &region, BlendMode::PoissonImport, CgParams::default())
            .map_err(|e| e.to_string())?;
        for (&(x, y), v) in region.pixels().iter().zip(&sol.values) {
            let t = target.pixel(x, y);
            for c in 0..3 {
                worst = worst.max((v[c] - t[c] as f64).abs());
            }
        }
    }
    ensure!(worst < POISSON_TOL, "max deviation from target {worst:e}");
    Ok(format!("{REPRODUCTION_CASES} cases, max deviation {worst:.1e}"))
}

fn c3_maximum_principle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut cases = 0;
    while cases < 40 {
        let (w, h) = (rng.random_range(6..28), rng.random_range(6..28));
        let target = noise_image(&mut rng, w + 2, h + 2);
        let p = rng.random_range(0.5..1.0);
        let mut source = random_source(&mut rng, 1, 1, w, h, p);
        let flat = rng.random_range(0.0..255.0);
        source.values.iter_mut().for_each(|v| *v = [flat; 3]);
        let Ok(region) = clip_to_road(&source, None, (w + 2, h + 2)) else { continue };
        let sol = solve_poisson(&target, &source, &region, BlendMode::PoissonImport, CgParams::default())
            .map_err(|e| e.to_string())?;
        for c in 0..3 {
            let bvals: Vec<f64> = region.boundary().iter().map(|&(x, y)| target.pixel(x, y)[c] as f64).collect();
            let lo = bvals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = bvals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for v in &sol.values {
                ensure!(v[c] >= lo - 1e-9 && v[c] <= hi + 1e-9, "value {} outside [{lo}, {hi}]", v[c]);
            }
        }
        cases += 1;
    }
    Ok(format!("{cases} zero-guidance cases within boundary range"))
}

// ------------------------------------------------------------- Homography

/// Closed-form unit-square-to-quad projective map, corners taken in the
/// order (0,0), (1,0), (1,1), (0,1).
fn square_to_quad(q: [(f64, f64); 4]) -> [[f64; 3]; 3] {
    let [(x0, y0), (x1, y1), (x2, y2), (x3, y3)] = q;
    let (dx1, dx2, dx3) = (x1 - x2, x3 - x2, x0 - x1 + x2 - x3);
    let (dy1, dy2, dy3) = (y1 - y2, y3 - y2, y0 - y1 + y2 - y3);
    let den = dx1 * dy2 - dx2 * dy1;
    let g = (dx3 * dy2 - dx2 * dy3) / den;
    let h = (dx1 * dy3 - dx3 * dy1) / den;
    [[x1 - x0 + g * x1, x3 - x0 + h * x3, x0], [y1 - y0 + g * y1, y3 - y0 + h * y3, y0], [g, h, 1.0]]
}

fn project(m: &[[f64; 3]; 3], (x, y): (f64, f64)) -> (f64, f64) {
    let w = m[2][0] * x + m[2][1] * y + m[2][2];
    ((m[0][0] * x + m[0][1] * y + m[0][2]) / w, (m[1][0] * x + m[1][1] * y + m[1][2]) / w)
}

fn convex(q: &[(f64, f64); 4]) -> bool {
    let cross = |i: usize| {
        let (a, b, c) = (q[i], q[(i + 1) % 4], q[(i + 2) % 4]);
        (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0)
    };
    let c: Vec<f64> = (0..4).map(cross).collect();
    c.iter().all(|&v| v > 1.0) || c.iter().all(|&v| v < -1.0)
}

fn c4_homography() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut done, mut worst_corner, mut worst_point) = (0, 0.0f64, 0.0f64);
    while done < HOMOGRAPHY_CASES {
        let (pw, ph) = (rng.random_range(2.0..120.0), rng.random_range(2.0..120.0));
        let (cx, cy, s) = (rng.random_range(50.0..600.0), rng.random_range(50.0..600.0), rng.random_range(5.0..200.0));
        let mut j = || rng.random_range(-0.35..0.35) * s;
        // Image coordinates, y down: top-left, top-right, bottom-right, bottom-left.
        let tl = (cx - s + j(), cy - s + j());
        let tr = (cx + s + j(), cy - s + j());
        let br = (cx + s + j(), cy + s + j());
        let bl = (cx - s + j(), cy + s + j());
        let ring = [tl, tr, br, bl];
        if !convex(&ring) {
            continue;
        }
        let unit = square_to_quad(ring);
        let truth = [
            [unit[0][0] / pw, unit[0][1] / ph, unit[0][2]],
            [unit[1][0] / pw, unit[1][1] / ph, unit[1][2]],
            [unit[2][0] / pw, unit[2][1] / ph, unit[2][2]],
        ];
        let src = Quad::from_rect(pw, ph);
        let dst = Quad::new(bl, br, tr, tl);
        let hom = solve_homography(&src, &dst).map_err(|e| format!("case {done}: {e}"))?;
        for (s, d) in src.corners.iter().zip(&dst.corners) {
            let p = hom.apply(*s).ok_or("corner mapped to infinity")?;
            worst_corner = worst_corner.max((p.0 - d.0).hypot(p.1 - d.1));
        }
        for _ in 0..4 {
            let u = (rng.random_range(0.0..pw), rng.random_range(0.0..ph));
            let (a, b) = (hom.apply(u).ok_or("interior point at infinity")?, project(&truth, u));
            worst_point = worst_point.max((a.0 - b.0).hypot(a.1 - b.1));
        }
        done += 1;
    }
    ensure!(worst_corner < CORNER_TOL, "corner residual {worst_corner:e}");
    ensure!(worst_point < 1e-6, "interior disagreement with ground truth {worst_point:e}");
    Ok(format!("{done} homographies, corner residual {worst_corner:.1e} px, interior {worst_point:.1e} px"))
}

// -------------------------------------------------------------- Sampling

fn fixture_masks(rng: &mut ChaCha8Rng) -> Vec<RoadMask> {
    let mut masks: Vec<RoadMask> = (0..16).map(|_| Trapezoid::random(rng, 160, 120).mask(160, 120)).collect();
    masks.push(RoadMask::from_fn(160, 120, |_, y| y >= 60));
    masks.push(RoadMask::from_fn(97, 61, |x, y| (x / 7 + y / 5) % 3 == 0));
    masks.push(RoadMask::from_fn(64, 64, |x, y| x == 40 && y == 9));
    masks.push(RoadMask::from_fn(200, 90, |x, y| (x as f64 - 100.0).hypot(2.0 * (y as f64 - 45.0)) < 30.0));
    masks
}

fn c5_content_awareness(dir: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let masks = fixture_masks(&mut rng);
    let per_mask = PLACEMENT_DRAWS.div_ceil(masks.len());
    let mut draws = 0;
    for (i, mask) in masks.iter().enumerate() {
        let points: Vec<(usize, f64, f64)> = (0..rng.random_range(0..30)).map(|_| (0, rng.random(), rng.random())).collect();
        let heat = &build_heatmaps(points, 1, 2.0, 64)[0];
        let lambda = [1.0, 0.5, 0.0][i % 3];
        let sampler = PlacementSampler::new(heat, mask.width(), mask.height(), Some(mask), lambda).map_err(|e| e.to_string())?;
        for _ in 0..per_mask {
            let p = sampler.sample(&mut rng);
            ensure!(mask.is_road(p.x, p.y), "mask {i}: placement ({}, {}) off road", p.x, p.y);
            draws += 1;
        }
    }
    let spec = FixtureSpec { images: 6, width: 160, height: 120, ..FixtureSpec::default() };
    write_fixture(&dir.join("ds"), &spec).map_err(|e| e.to_string())?;
    let index = load_dataset(&dir.join("ds")).map_err(|e| e.to_string())?;
    let mut reads = BTreeMap::new();
    for ablation in [Ablation::Baseline, Ablation::Paste, Ablation::Content] {
        let loader = CountingMasks::new(FsMasks);
        let cfg = AugmentationConfig::preset(ablation, 5);
        augment_dataset(&index, &loader, &cfg, &dir.join(ablation.as_str()), RunOptions::default())
            .map_err(|e| e.to_string())?;
        reads.insert(ablation.as_str(), loader.calls());
    }
    ensure!(reads["baseline"] == 0 && reads["paste"] == 0, "mask loader invoked with content off: {reads:?}");
    ensure!(reads["content"] > 0, "instrumented loader saw no reads with content on");
    Ok(format!("{draws} placements on road, 0 mask reads with content off ({} with it on)", reads["content"]))
}

fn chi_square_p(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

fn c6_uniform_sampling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let binning = PitchBinning::from_edges(vec![0.3, 0.4]).unwrap();
    let mut instances = Vec::new();
    for bin in 0..3 {
        for class in DamageClass::ALL {
            for _ in 0..rng.random_range(2..9) {
                instances.push(DamageInstance {
                    id: instances.len() as u32,
                    class,
                    image_id: format!("src{bin}"),
                    bbox: BoundingBox::new(0.0, 0.0, 4.0, 4.0),
                    patch: RgbImage::filled(4, 4, [0, 0, 0]),
                    s_src: 1.0,
                    bin,
                });
            }
        }
    }
    let bank = DamageBank::from_instances(instances, binning, BankParams::default()).map_err(|e| e.to_string())?;
    let mut min_p = 1.0f64;
    let mut groups = 0;
    for bin in 0..3 {
        for class in DamageClass::ALL {
            let members = bank.group(bin, class).to_vec();
            let mut counts = vec![0u64; members.len()];
            for _ in 0..GROUP_DRAWS {
                let d = bank.sample(bin, &mut rng, Some(class)).map_err(|e| e.to_string())?;
                ensure!(d.instance.bin == bin && d.instance.class == class, "draw left its group");
                let k = members.iter().position(|&m| bank.instances()[m].id == d.instance.id).ok_or("unknown instance")?;
                counts[k] += 1;
            }
            let p = chi_square_p(&counts);
            ensure!(p > CHI_SQUARE_P, "bin {bin} class {class}: p = {p:.4}");
            min_p = min_p.min(p);
            groups += 1;
        }
    }

    // Placement law against an independently computed H * road fraction.
    let (w, h) = (64, 48);
    let mask = Trapezoid::random(&mut rng, w, h).mask(w, h);
    let values: Vec<f64> = (0..TV_GRID * TV_GRID).map(|_| rng.random_range(0.0..1.0f64).powi(3)).collect();
    let heat = PlacementHeatmap::from_values(0, TV_GRID, 2.0, 1, values.clone()).map_err(|e| e.to_string())?;
    let (cw, ch) = (w / TV_GRID, h / TV_GRID);
    let mut law = vec![0.0; TV_GRID * TV_GRID];
    for y in 0..h {
        for x in 0..w {
            if mask.is_road(x, y) {
                let c = (y / ch) * TV_GRID + x / cw;
                law[c] += values[c] / (cw * ch) as f64;
            }
        }
    }
    let total: f64 = law.iter().sum();
    law.iter_mut().for_each(|v| *v /= total);
    let sampler = PlacementSampler::new(&heat, w, h, Some(&mask), 1.0).map_err(|e| e.to_string())?;
    let mut counts = vec![0.0; TV_GRID * TV_GRID];
    for _ in 0..TV_DRAWS {
        let p = sampler.sample(&mut rng);
        counts[(p.y / ch) * TV_GRID + p.x / cw] += 1.0;
    }
    let tv = 0.5 * counts.iter().zip(&law).map(|(c, l)| (c / TV_DRAWS as f64 - l).abs()).sum::<f64>();
    ensure!(tv < TV_MAX, "total variation {tv:.4}");
    Ok(format!("{groups} groups, min chi-square p {min_p:.3}; placement TV {tv:.4}"))
}

// ------------------------------------------------------------ Perspective

fn c7_vanishing_row() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst = 0.0f64;
    for i in 0..VANISHING_CASES {
        let (w, h) = [(640, 480), (320, 240), (640, 640), (480, 360)][i % 4];
        let t = Trapezoid::random(&mut rng, w, h);
        let est = estimate_vanishing_row(&t.mask(w, h), 500).map_err(|e| format!("case {i}: {e}"))?;
        let err = (est.y_v - t.vanishing.1).abs();
        ensure!(err <= VANISHING_TOL_PX, "case {i}: estimated {} for true {}", est.y_v, t.vanishing.1);
        worst = worst.max(err);
    }
    Ok(format!("{VANISHING_CASES} trapezoids, worst error {worst:.3} px"))
}

// ------------------------------------------------------------ End to end

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c8_determinism(dir: &Path, runs: &mut Vec<PathBuf>) -> Outcome {
    let ds = dir.join("ds");
    let spec = FixtureSpec { images: 10, width: 320, height: 240, ..FixtureSpec::default() };
    write_fixture(&ds, &spec).map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for (name, jobs) in [("run_a", "1"), ("run_b", "1"), ("run_c", "8")] {
        let out = dir.join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_roadpaste"))
            .args(["augment", "--seed", "42", "--jobs", jobs, "--dataset"])
            .arg(&ds)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(status.status.success(), "augment failed: {}", String::from_utf8_lossy(&status.stderr));
        trees.push(tree(&out));
        runs.push(out);
    }
    ensure!(trees[0].len() > 10, "output tree has only {} files", trees[0].len());
    ensure!(trees[0] == trees[1], "two runs with --jobs 1 differ");
    ensure!(trees[0] == trees[2], "--jobs 1 and --jobs 8 differ");
    Ok(format!("{} files byte-identical across 2 runs and --jobs 1/8", trees[0].len()))
}

fn changed_pixels(a: &RgbImage, b: &RgbImage) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..a.height() {
        for x in 0..a.width() {
            if a.pixel(x, y) != b.pixel(x, y) {
                out.push((x, y));
            }
        }
    }
    out
}

fn axis_aligned(q: &[[f64; 2]; 4]) -> bool {
    let [bl, br, tr, tl] = q;
    bl[1] == br[1] && tl[1] == tr[1] && bl[0] == tl[0] && br[0] == tr[0]
}

struct AblationRun {
    report: AugmentationReport,
    changed: usize,
    off_road: usize,
    reads: usize,
}

fn run_ablation(dir: &Path, ablation: Ablation, runs: &mut Vec<PathBuf>) -> Result<AblationRun, String> {
    let ds = dir.join("ds");
    let index = load_dataset(&ds).map_err(|e| e.to_string())?;
    let out = dir.join(ablation.as_str());
    let loader = CountingMasks::new(FsMasks);
    let mut cfg = AugmentationConfig::preset(ablation, 9);
    cfg.injections_per_image = 2;
    let report = augment_dataset(&index, &loader, &cfg, &out, RunOptions::default()).map_err(|e| e.to_string())?;
    runs.push(out.clone());
    let result = load_dataset(&out).map_err(|e| e.to_string())?;
    let (mut changed, mut off_road) = (0, 0);
    for (rec, new) in index.records.iter().zip(&result.records) {
        let before = rec.read_pixels().map_err(|e| e.to_string())?;
        let after = new.read_pixels().map_err(|e| e.to_string())?;
        let mask = roadpaste::load_mask(rec.mask_path.as_ref().unwrap(), rec.dims()).map_err(|e| e.to_string())?;
        for (x, y) in changed_pixels(&before, &after) {
            changed += 1;
            off_road += usize::from(!mask.is_road(x, y));
        }
    }
    ensure!(result.annotations.len() == index.annotations.len(), "record count changed");
    for (orig, new) in index.annotations.iter().zip(&result.annotations) {
        ensure!(new[..orig.len()] == orig[..], "original annotations altered");
    }
    Ok(AblationRun { report, changed, off_road, reads: loader.calls() })
}

fn c9_ablation(dir: &Path, runs: &mut Vec<PathBuf>) -> Outcome {
    let spec = FixtureSpec { images: 12, width: 256, height: 192, damages_per_image: 3, seed: 19, ..FixtureSpec::default() };
    write_fixture(&dir.join("ds"), &spec).map_err(|e| e.to_string())?;

    let base = run_ablation(dir, Ablation::Baseline, runs)?;
    ensure!(base.changed == 0 && base.report.totals.attempted == 0, "baseline changed {} pixels", base.changed);
    ensure!(base.report.totals.annotations_out == base.report.totals.annotations_in, "baseline changed annotations");

    let paste = run_ablation(dir, Ablation::Paste, runs)?;
    let inj = |r: &AblationRun| r.report.images.iter().flat_map(|i| i.injections.clone()).collect::<Vec<_>>();
    let paste_inj = inj(&paste);
    ensure!(!paste_inj.is_empty(), "paste made no injections");
    ensure!(paste_inj.iter().all(|i| !i.warped && axis_aligned(&i.quad) && i.draw == "pooled"), "paste warped or binned");
    ensure!(paste.reads == 0, "paste read masks");
    ensure!(paste.off_road > 0, "paste never touched off-road pixels");
    ensure!(paste.report.config.blend_mode == "alpha", "paste blend {}", paste.report.config.blend_mode);

    let content = run_ablation(dir, Ablation::Content, runs)?;
    let content_inj = inj(&content);
    ensure!(!content_inj.is_empty(), "content made no injections");
    ensure!(content_inj.iter().all(|i| !i.warped && axis_aligned(&i.quad) && i.draw == "pooled"), "content warped or binned");
    ensure!(content.off_road == 0, "content changed {} off-road pixels", content.off_road);

    let ours = run_ablation(dir, Ablation::Ours, runs)?;
    let ours_inj = inj(&ours);
    ensure!(!ours_inj.is_empty(), "ours made no injections");
    ensure!(ours.off_road == 0, "ours changed {} off-road pixels", ours.off_road);
    ensure!(ours.report.config.blend_mode == "poisson_import", "ours blend {}", ours.report.config.blend_mode);
    let mut direct = 0;
    for i in &ours_inj {
        ensure!(i.warped, "ours injection not warped");
        let target = i.target_bin.ok_or("ours injection without target bin")?;
        match i.draw.as_str() {
            "direct" => {
                ensure!(i.source_bin == target, "direct draw from bin {} into bin {target}", i.source_bin);
                direct += 1;
            }
            d => ensure!(d == format!("fallback:{}", i.source_bin), "unexpected draw {d}"),
        }
    }
    let foreshortened = ours_inj
        .iter()
        .filter(|i| {
            let [bl, br, tr, tl] = i.quad;
            (tr[0] - tl[0]) < (br[0] - bl[0]) - 1e-9
        })
        .count();
    ensure!(direct > 0 && foreshortened > 0, "direct {direct}, foreshortened {foreshortened}");
    Ok(format!(
        "baseline 0 px changed; paste {} inj ({} px off road); content {} inj, 0 off road; ours {} inj, {direct} bin-matched, warped",
        paste_inj.len(),
        paste.off_road,
        content_inj.len(),
        ours_inj.len()
    ))
}

fn c10_throughput(dir: &Path, runs: &mut Vec<PathBuf>) -> Outcome {
    let ds = dir.join("ds");
    let spec = FixtureSpec {
        images: THROUGHPUT_IMAGES,
        width: THROUGHPUT_SIDE,
        height: THROUGHPUT_SIDE,
        damages_per_image: 3,
        seed: 23,
        ..FixtureSpec::default()
    };
    write_fixture(&ds, &spec).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let index = load_dataset(&ds).map_err(|e| e.to_string())?;
    let cfg = AugmentationConfig::preset(Ablation::Ours, 42);
    let out = dir.join("out");
    let report = augment_dataset(&index, &FsMasks, &cfg, &out, RunOptions { jobs: 1, ..RunOptions::default() })
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    runs.push(out);
    ensure!(report.config.blend_mode == "poisson_import", "blend mode {}", report.config.blend_mode);
    ensure!(report.totals.images == THROUGHPUT_IMAGES, "{} images", report.totals.images);
    ensure!(elapsed < THROUGHPUT_BUDGET, "took {elapsed:?}");
    Ok(format!(
        "{THROUGHPUT_IMAGES} images {THROUGHPUT_SIDE}x{THROUGHPUT_SIDE}, {} injections, {:.1} s on 1 worker",
        report.totals.accepted,
        elapsed.as_secs_f64()
    ))
}

fn c11_annotation_soundness(runs: &[PathBuf], scratch: &Path) -> Outcome {
    let mut checked = 0;
    for (k, out) in runs.iter().enumerate() {
        let idx = load_dataset(out).map_err(|e| format!("{}: {e}", out.display()))?;
        let r = &idx.report;
        ensure!(r.clipped + r.dropped_outside + r.dropped_invalid + r.dangling == 0, "{}: load report {r:?}", out.display());
        let doc: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("annotations.json")).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        let names: Vec<&str> = doc["categories"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
        ensure!(names == ["D00", "D10", "D20", "D40"], "categories {names:?}");
        for a in doc["annotations"].as_array().unwrap() {
            let id = a["category_id"].as_u64().unwrap_or(0);
            ensure!((1..=4).contains(&id), "category id {id}");
        }
        let mut written = Vec::new();
        for (rec, anns) in idx.iter() {
            let (w, h) = (rec.width as f64, rec.height as f64);
            for (i, a) in anns.iter().enumerate() {
                let b = a.bbox;
                ensure!(
                    0.0 <= b.x_min && b.x_min < b.x_max && b.x_max <= w && 0.0 <= b.y_min && b.y_min < b.y_max && b.y_max <= h,
                    "{}: box {b:?} outside {w}x{h}",
                    rec.image_id
                );
                if a.provenance == Provenance::Injected {
                    for earlier in &anns[..i] {
                        let iou = b.iou(&earlier.bbox);
                        ensure!(iou <= IOU_MAX, "{}: injected box IoU {iou:.3}", rec.image_id);
                    }
                }
                checked += 1;
            }
            let img = RgbImage::filled(rec.width, rec.height, [0, 0, 0]);
            written.push(write_augmented(&rec.image_id, &img, anns, &scratch.join(k.to_string())).map_err(|e| e.to_string())?);
        }
        finish_output(&scratch.join(k.to_string()), &written, None).map_err(|e| e.to_string())?;
        let again = load_dataset(&scratch.join(k.to_string())).map_err(|e| e.to_string())?;
        ensure!(again.annotations == idx.annotations, "{}: round trip changed annotations", out.display());
        let dims = |i: &roadpaste::DatasetIndex| i.records.iter().map(|r| (r.image_id.clone(), r.dims())).collect::<Vec<_>>();
        ensure!(dims(&again) == dims(&idx), "round trip changed image dims");
    }
    ensure!(runs.len() >= 7, "only {} end-to-end runs collected", runs.len());
    Ok(format!("{} runs, {checked} annotations valid, round-trip stable, IoU <= {IOU_MAX}", runs.len()))
}

fn guarded(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let out = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    (out, start.elapsed())
}

fn main() {
    let scratch = tempfile::tempdir().expect("temp dir");
    let sub = |name: &str| {
        let p = scratch.path().join(name);
        fs::create_dir_all(&p).unwrap();
        p
    };
    let mut runs = Vec::new();
    let mut results: Vec<(u32, &str, (Outcome, Duration))> = Vec::new();
    results.push((1, "Poisson oracle equivalence", guarded(c1_poisson_oracle)));
    results.push((2, "Poisson reproduction", guarded(c2_poisson_reproduction)));
    results.push((3, "maximum principle", guarded(c3_maximum_principle)));
    results.push((4, "homography recovery", guarded(c4_homography)));
    let d5 = sub("c5");
    results.push((5, "content-awareness guarantee", guarded(|| c5_content_awareness(&d5))));
    results.push((6, "within-bin uniform sampling and placement law", guarded(c6_uniform_sampling)));
    results.push((7, "vanishing-row recovery", guarded(c7_vanishing_row)));
    let d8 = sub("c8");
    results.push((8, "determinism", guarded(|| c8_determinism(&d8, &mut runs))));
    let d9 = sub("c9");
    results.push((9, "ablation fidelity", guarded(|| c9_ablation(&d9, &mut runs))));
    let d10 = sub("c10");
    results.push((10, "end-to-end throughput", guarded(|| c10_throughput(&d10, &mut runs))));
    let d11 = sub("c11");
    results.push((11, "annotation soundness", guarded(|| c11_annotation_soundness(&runs, &d11))));

    let mut failed = 0;
    for (n, name, (outcome, took)) in &results {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(e) => {
                failed += 1;
                ("FAIL", e)
            }
        };
        println!("criterion {n:>2} [{tag}] {name}: {detail} ({:.2} s)", took.as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
