use std::f64::consts::TAU;

use fusetrack::fusion::FusionMode;
use fusetrack::image::Image;
use fusetrack::quality::State;
use fusetrack::tracker::{parse_mode, AugmentSet, TargetState, Tracker, TrackerConfig, TrackerError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIDE: usize = 200;
const BOX: f64 = 40.0;

/// Sum of sinusoids with whole periods across a `SIDE × SIDE` frame, so
/// cyclic shifts of the frame are again exact renderings of the texture.
fn periodic_texture(seed: u64, dx: isize, dy: isize) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<[f64; 6]> = (0..12)
        .map(|_| {
            [
                rng.gen_range(-9i32..=9) as f64,
                rng.gen_range(-9i32..=9) as f64,
                rng.gen_range(0.0..TAU),
                rng.gen_range(0.0..0.08),
                rng.gen_range(0.0..0.08),
                rng.gen_range(0.0..0.08),
            ]
        })
        .collect();
    let n = SIDE as f64;
    Image::from_fn(SIDE, SIDE, 3, |x, y, px| {
        let u = (x as isize - dx) as f64 / n;
        let v = (y as isize - dy) as f64 / n;
        px.copy_from_slice(&[0.5, 0.45, 0.4]);
        for w in &waves {
            let s = (TAU * (w[0] * u + w[1] * v) + w[2]).sin();
            px[0] += w[3] * s;
            px[1] += w[4] * s;
            px[2] += w[5] * s;
        }
    })
}

/// Search region covering the whole frame; the shallow grid then has one
/// cell per 4 image pixels.
fn full_frame_config() -> TrackerConfig {
    TrackerConfig {
        search_region_scale: SIDE as f64 / (BOX * 2f64.sqrt()),
        subcell_refine: false,
        feature_window: false,
        ..TrackerConfig::default()
    }
}

fn init_state() -> TargetState<f64> {
    TargetState::from_box(0.5 * SIDE as f64 - 0.5 * BOX, 0.5 * SIDE as f64 - 0.5 * BOX, BOX, BOX)
}

#[test]
fn default_memory_counts() {
    let frame = periodic_texture(1, 0, 0);
    let t = Tracker::initialize(&frame, init_state(), &TrackerConfig::default()).unwrap();
    assert_eq!(t.deep_model().memory_len(), 23);
    assert_eq!(t.shallow_model().memory_len(), 1);

    let cfg = TrackerConfig {
        augmentation_deep: AugmentSet::NONE,
        ..TrackerConfig::default()
    };
    let t = Tracker::initialize(&frame, init_state(), &cfg).unwrap();
    assert_eq!(t.deep_model().memory_len(), 1);
    assert_eq!(t.shallow_model().memory_len(), 1);
}

#[test]
fn reinitialization_is_bit_identical() {
    let frame = periodic_texture(2, 0, 0);
    let cfg = TrackerConfig {
        seed: 99,
        ..TrackerConfig::default()
    };
    let a = Tracker::initialize(&frame, init_state(), &cfg).unwrap();
    let b = Tracker::initialize(&frame, init_state(), &cfg).unwrap();
    assert_eq!(a.deep_model(), b.deep_model());
    assert_eq!(a.shallow_model(), b.shallow_model());
}

#[test]
fn static_scene_stays_put() {
    let frame = periodic_texture(3, 0, 0);
    let mut t = Tracker::initialize(&frame, init_state(), &TrackerConfig::default()).unwrap();
    let cell = t.config().search_region_scale * BOX * 2f64.sqrt() / t.resolution().0 as f64;
    let init = init_state();
    for _ in 0..3 {
        let out = t.process_frame(&frame).unwrap();
        assert!((out.state.center.0 - init.center.0).abs() <= 0.5 * cell);
        assert!((out.state.center.1 - init.center.1).abs() <= 0.5 * cell);
        assert_eq!(out.state.scale, 1.0);
        assert!(!out.diagnostics.clamped);
    }
}

#[test]
fn whole_cell_shift_is_recovered_exactly() {
    let cfg = full_frame_config();
    let frame = periodic_texture(4, 0, 0);
    for (kx, ky) in [(2isize, 0isize), (0, -4), (4, 2), (-2, -2)] {
        let mut t = Tracker::initialize(&frame, init_state(), &cfg).unwrap();
        let (rows, cols) = t.resolution();
        let cell = SIDE as f64 / rows as f64;
        assert_eq!(cell, 4.0);
        let shifted = periodic_texture(4, 4 * kx, 4 * ky);
        let out = t.process_frame(&shifted).unwrap();
        let expected = State {
            level: cfg.scale_levels / 2,
            row: ky.rem_euclid(rows as isize) as usize,
            col: kx.rem_euclid(cols as isize) as usize,
        };
        assert_eq!(out.fusion.state, expected, "shift ({kx}, {ky}) cells");
        let c0 = init_state().center;
        assert!((out.state.center.0 - c0.0 - 4.0 * kx as f64).abs() < 1e-9);
        assert!((out.state.center.1 - c0.1 - 4.0 * ky as f64).abs() < 1e-9);
    }
}

/// Moving texture for multi-frame runs: the target drifts across a static background.
fn drifting_frames(n: usize) -> Vec<Image<f64>> {
    let bg = periodic_texture(5, 0, 0);
    let fg = periodic_texture(6, 0, 0);
    (0..n)
        .map(|t| {
            let ox = 80.0 + 1.5 * t as f64;
            let oy = 80.0 + 0.5 * t as f64;
            Image::from_fn(SIDE, SIDE, 3, |x, y, px| {
                let (xf, yf) = (x as f64, y as f64);
                let inside = xf >= ox && xf < ox + BOX && yf >= oy && yf < oy + BOX;
                let src = if inside { &fg } else { &bg };
                px.copy_from_slice(src.pixel(x, y));
            })
        })
        .collect()
}

fn run(frames: &[Image<f64>], cfg: &TrackerConfig) -> Vec<(TargetState<f64>, f64, f64, f64)> {
    let init = TargetState::from_box(80.0, 80.0, BOX, BOX);
    let mut t = Tracker::initialize(&frames[0], init, cfg).unwrap();
    frames[1..]
        .iter()
        .map(|f| {
            let o = t.process_frame(f).unwrap();
            (o.state, o.fusion.beta_d, o.fusion.beta_s, o.fusion.xi)
        })
        .collect()
}

#[test]
fn adaptive_weights_sum_to_one_and_runs_repeat() {
    let frames = drifting_frames(12);
    let cfg = TrackerConfig::default();
    let a = run(&frames, &cfg);
    for &(_, bd, bs, xi) in &a {
        assert!((bd + bs - 1.0).abs() <= 1e-12, "{bd} + {bs}");
        assert!((0.0..=1.0).contains(&bd));
        assert!(xi.is_finite());
    }
    let b = run(&frames, &cfg);
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

/// Reference single-model tracker: the argmax of the shallow map alone,
/// first maximum in (level, row, col) order.
fn shallow_argmax(map: &fusetrack::quality::ScoreMap<f64>) -> State {
    let mut best = (f64::NEG_INFINITY, State { level: 0, row: 0, col: 0 });
    for (level, g) in map.levels().iter().enumerate() {
        let (rows, cols) = g.shape();
        for row in 0..rows {
            for col in 0..cols {
                if g.get(row, col) > best.0 {
                    best = (g.get(row, col), State { level, row, col });
                }
            }
        }
    }
    best.1
}

#[test]
fn fixed_shallow_weight_is_the_shallow_tracker() {
    let frames = drifting_frames(8);
    let fixed = TrackerConfig {
        fusion: parse_mode("fixed:1").unwrap(),
        ..TrackerConfig::default()
    };
    let shallow = TrackerConfig {
        fusion: parse_mode("shallow").unwrap(),
        ..TrackerConfig::default()
    };
    assert_eq!(fixed.fusion, FusionMode::Fixed { beta_s: 1.0 });
    assert_eq!(format!("{:?}", run(&frames, &fixed)), format!("{:?}", run(&frames, &shallow)));

    let init = TargetState::from_box(80.0, 80.0, BOX, BOX);
    let mut t = Tracker::initialize(&frames[0], init, &fixed).unwrap();
    for (i, f) in frames.iter().enumerate().skip(1) {
        let (_, y_s) = t.score_maps(f, i).unwrap();
        let expected = shallow_argmax(&y_s);
        let out = t.process_frame(f).unwrap();
        assert_eq!(out.fusion.state, expected, "frame {i}");
        assert_eq!((out.fusion.beta_d, out.fusion.beta_s), (0.0, 1.0));
    }
}

#[test]
fn config_text_round_trip() {
    let mut cfg = TrackerConfig::default();
    cfg.set("fusion", "fixed:0.25").unwrap();
    cfg.set("augmentation_deep", "flip,blur").unwrap();
    cfg.set("provider_deep", "file:8:feat/%04d.fmap").unwrap();
    cfg.set("seed", "17").unwrap();
    let text = cfg.to_text();
    assert_eq!(TrackerConfig::parse(&text).unwrap(), cfg);
    assert_eq!(TrackerConfig::parse(&TrackerConfig::default().to_text()).unwrap(), TrackerConfig::default());
}

#[test]
fn config_rejects_bad_input() {
    assert!(TrackerConfig::parse("scale_levels = 4\n").is_err());
    assert!(TrackerConfig::parse("no_such_key = 1\n").is_err());
    assert!(TrackerConfig::parse("mu = -1\n").is_err());
    assert!(TrackerConfig::parse("just text\n").is_err());
    assert!(TrackerConfig::parse("# comment\n\nmu = 0.2\n").is_ok());
}

#[test]
fn errors_on_bad_init_and_frame_size() {
    let frame = periodic_texture(7, 0, 0);
    let cfg = TrackerConfig::default();
    let degenerate = TargetState::from_box(10.0, 10.0, 0.0, 5.0);
    assert!(matches!(Tracker::initialize(&frame, degenerate, &cfg), Err(TrackerError::InvalidInit(_))));
    let outside = TargetState::from_box(500.0, 10.0, 10.0, 10.0);
    assert!(matches!(Tracker::initialize(&frame, outside, &cfg), Err(TrackerError::InvalidInit(_))));

    let mut t = Tracker::initialize(&frame, init_state(), &cfg).unwrap();
    let small = Image::filled(100, 100, 3, 0.5);
    assert!(matches!(t.process_frame(&small), Err(TrackerError::FrameSize { .. })));
}

#[test]
fn defaults_match_published_settings() {
    let cfg = TrackerConfig::default();
    assert_eq!(cfg.sigma_d, 0.25);
    assert_eq!(cfg.sigma_s, 1.0 / 16.0);
    assert_eq!(cfg.mu, 0.15);
    assert_eq!(cfg.kappa_factor, 8.0);
    assert_eq!(cfg.dropout_rate, 0.2);
    assert_eq!(cfg.fusion, FusionMode::Adaptive);
    assert_eq!(cfg.augmentation_deep, AugmentSet::ALL);
    assert_eq!(cfg.augmentation_shallow, AugmentSet::NONE);
    let angles = fusetrack::training::rotation_angles();
    assert_eq!((angles.len(), angles[0], angles[11]), (12, -60.0, 60.0));
}
