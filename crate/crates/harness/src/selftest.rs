//! Quick oracle checks runnable from the CLI (`fusetrack selftest`).
//!
//! Each check compares a library routine against an independent computation
//! written out here. The full suites live in the test targets; these are the
//! fast subset useful for checking a build on a new machine.

use std::time::Instant;

use fusetrack::fusion::{fusion_loss, solve_fusion_qp};
use fusetrack::grid::{convolve, dft, idft, Grid};
use fusetrack::quality::{curvature_bound, quality, ScoreMap, State, StateDistance};
use fusetrack::training::{channel_dropout, flip, gaussian_label, zero_channels, LabelConfig};
use fusetrack::features::FeatureMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::metrics::{iou, success_metrics, BBox};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Check = fn() -> Result<String, String>;

const CHECKS: [(&str, Check); 7] = [
    ("gaussian tightness", gaussian_tightness),
    ("fusion qp vs grid search", qp_grid_search),
    ("fusion symmetry", fusion_symmetry),
    ("transform identities", transform_identities),
    ("augmentation", augmentation),
    ("labels", labels),
    ("metrics", metrics),
];

pub fn run_all() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|&(name, check)| {
            let start = Instant::now();
            let outcome = check();
            let seconds = start.elapsed().as_secs_f64();
            match outcome {
                Ok(detail) => CheckResult { name, passed: true, detail, seconds },
                Err(detail) => CheckResult { name, passed: false, detail, seconds },
            }
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gaussian_tightness() -> Result<String, String> {
    let cell = 0.05;
    let g = Grid::from_fn(201, 201, |i, j| {
        let (y, x) = ((i as f64 - 100.0) * cell, (j as f64 - 100.0) * cell);
        (-(x * x + y * y)).exp()
    });
    let m = ScoreMap::single(g, cell).map_err(|e| e.to_string())?;
    let d = StateDistance::new(4.0, 0.0).map_err(|e| e.to_string())?;
    let star = State::new(0, 100, 100);
    let xi = quality(&m, star, &d).map_err(|e| e.to_string())?;
    let bound = curvature_bound(&m, star, &d).map_err(|e| e.to_string())?.bound;
    ensure((xi - 0.5).abs() <= 5e-3 && (bound - 0.5).abs() <= 5e-3, || {
        format!("xi {xi}, bound {bound}, expected 0.5")
    })?;
    Ok(format!("xi {xi:.5}, bound {bound:.5}"))
}

fn random_map(rng: &mut ChaCha8Rng, n: usize) -> ScoreMap<f64> {
    let g = Grid::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    ScoreMap::single(g, 1.0).expect("finite values")
}

/// Quality of `β_d·a + (1−β_d)·b` at `star` by direct enumeration.
fn direct_quality(a: &Grid<f64>, b: &Grid<f64>, beta_d: f64, kappa: f64, star: (usize, usize)) -> f64 {
    let (h, w) = a.shape();
    let wrap = |d: isize, n: usize| {
        let n = n as isize;
        let d = d.rem_euclid(n);
        (if d >= (n + 1) / 2 { d - n } else { d }) as f64
    };
    let y = |i: usize, j: usize| beta_d * a.get(i, j) + (1.0 - beta_d) * b.get(i, j);
    let ys = y(star.0, star.1);
    let mut best = f64::INFINITY;
    for i in 0..h {
        for j in 0..w {
            if (i, j) != star {
                let dy = wrap(i as isize - star.0 as isize, h);
                let dx = wrap(j as isize - star.1 as isize, w);
                let delta = 1.0 - (-kappa / 2.0 * (dx * dx + dy * dy)).exp();
                best = best.min((ys - y(i, j)) / delta);
            }
        }
    }
    best
}

fn qp_grid_search() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (kappa, mu) = (0.3, 0.15);
    let d = StateDistance::new(kappa, 0.0).map_err(|e| e.to_string())?;
    let mut worst = f64::NEG_INFINITY;
    for trial in 0..20 {
        let (yd, ys) = (random_map(&mut rng, 10), random_map(&mut rng, 10));
        let star = yd.argmax();
        let r = solve_fusion_qp(star, &yd, &ys, &d, mu).map_err(|e| e.to_string())?;
        let (a, b) = (&yd.levels()[0], &ys.levels()[0]);
        let grid_best = (0..=1000)
            .map(|k| {
                let bd = k as f64 / 1000.0;
                fusion_loss(direct_quality(a, b, bd, kappa, (star.row, star.col)), bd, mu)
            })
            .fold(f64::INFINITY, f64::min);
        let gap = r.loss - grid_best;
        worst = worst.max(gap);
        ensure(gap <= 1e-6, || format!("trial {trial}: qp loss {} above grid search {grid_best}", r.loss))?;
    }
    Ok(format!("20 instances, worst gap {worst:.2e}"))
}

fn fusion_symmetry() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = StateDistance::new(0.3, 0.0).map_err(|e| e.to_string())?;
    for _ in 0..10 {
        let (yd, ys) = (random_map(&mut rng, 8), random_map(&mut rng, 8));
        let star = yd.argmax();
        let same = solve_fusion_qp(star, &yd, &yd, &d, 0.15).map_err(|e| e.to_string())?;
        ensure((same.beta_d, same.beta_s) == (0.5, 0.5), || format!("equal maps gave {same:?}"))?;
        let r = solve_fusion_qp(star, &yd, &ys, &d, 0.15).map_err(|e| e.to_string())?;
        let s = solve_fusion_qp(star, &ys, &yd, &d, 0.15).map_err(|e| e.to_string())?;
        ensure((r.beta_d - s.beta_s).abs() <= 1e-12 && (r.loss - s.loss).abs() <= 1e-12, || {
            format!("swap mismatch: {r:?} vs {s:?}")
        })?;
    }
    Ok("10 instances".into())
}

fn transform_identities() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a: Grid<f64> = Grid::from_fn(6, 5, |_, _| rng.gen_range(-1.0..1.0));
    let b: Grid<f64> = Grid::from_fn(6, 5, |_, _| rng.gen_range(-1.0..1.0));
    let round = idft(&dft(&a)).max_abs_diff(&a).map_err(|e| e.to_string())?;
    ensure(round <= 1e-12, || format!("round trip error {round}"))?;
    let parseval = (dft(&a).norm_sq() / 30.0 - a.norm_sq()).abs();
    ensure(parseval <= 1e-12, || format!("parseval error {parseval}"))?;
    let fast = convolve(&a, &b).map_err(|e| e.to_string())?;
    let direct = Grid::from_fn(6, 5, |i, j| {
        let mut acc = 0.0;
        for p in 0..6 {
            for q in 0..5 {
                acc += a.get(p, q) * b.get((i + 6 - p) % 6, (j + 5 - q) % 5);
            }
        }
        acc
    });
    let conv = fast.max_abs_diff(&direct).map_err(|e| e.to_string())?;
    ensure(conv <= 1e-12, || format!("convolution error {conv}"))?;
    Ok(format!("round trip {round:.1e}, convolution {conv:.1e}"))
}

fn augmentation() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let img = fusetrack::image::Image::from_fn(9, 7, 3, |_, _, px: &mut [f64]| {
        for v in px {
            *v = rng.gen();
        }
    });
    ensure(flip(&flip(&img)) == img, || "flip is not an involution".into())?;
    let channels: Vec<Grid<f64>> = (0..10)
        .map(|_| Grid::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let fm: FeatureMap<f64> = FeatureMap::new(channels, 4.0, "selftest").map_err(|e| e.to_string())?;
    let out = channel_dropout(&fm, 0.2, 5).map_err(|e| e.to_string())?;
    let zeroed = zero_channels(&out).len();
    ensure(zeroed == 2, || format!("{zeroed} channels zeroed, expected 2"))?;
    let gap = (out.energy() - fm.energy()).abs();
    ensure(gap <= 1e-9, || format!("energy changed by {gap}"))?;
    Ok(format!("2 of 10 channels zeroed, energy gap {gap:.1e}"))
}

fn labels() -> Result<String, String> {
    let cfg = LabelConfig::new(0.25f64, (4.0, 4.0)).with_center((8.0, 8.0));
    let y = gaussian_label(32, 32, &cfg).map_err(|e| e.to_string())?;
    let centre = y.get(8, 8);
    let one_sigma = y.get(9, 8);
    ensure((centre - 1.0).abs() <= 1e-12, || format!("centre value {centre}"))?;
    ensure((one_sigma - (-0.5f64).exp()).abs() <= 1e-12, || format!("one-sigma value {one_sigma}"))?;
    Ok("centre 1, one sigma e^-1/2".into())
}

fn metrics() -> Result<String, String> {
    let v = iou(&BBox::new(0.0, 0.0, 2.0, 2.0), &BBox::new(1.0, 0.0, 2.0, 2.0));
    ensure((v - 2.0 / 6.0).abs() <= 1e-15, || format!("iou {v}"))?;
    let gt = vec![BBox::new(0.0, 0.0, 10.0, 10.0); 4];
    let r = success_metrics(&gt, &gt).map_err(|e| e.to_string())?;
    ensure((r.auc - 100.0 / 101.0).abs() <= 1e-12, || format!("perfect auc {}", r.auc))?;
    Ok(format!("perfect auc {:.4}", r.auc))
}
