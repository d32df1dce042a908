//! Synthetic sequences: a textured rectangle moving over a textured
//! background, with optional scale drift, a look-alike distractor, blur
//! episodes, occluders and pixel noise. Ground truth is exact by construction
//! (boxes are quantized to 1/256 pixel and rendered from the quantized values).

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use fusetrack::image::Image;
use fusetrack::tracker::stream_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::metrics::BBox;
use crate::sequence::Sequence;

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown synth key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("invalid synth spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    /// Constant velocity `(vx, vy)` in pixels per frame.
    Linear { vx: f64, vy: f64 },
    /// `c(t) = c0 + A sin(2π t / period)` per axis.
    Sinusoidal { ax: f64, ay: f64, period: f64 },
}

impl fmt::Display for Motion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Motion::Linear { vx, vy } => write!(f, "linear:{vx}:{vy}"),
            Motion::Sinusoidal { ax, ay, period } => write!(f, "sinusoidal:{ax}:{ay}:{period}"),
        }
    }
}

fn floats(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} ':'-separated numbers, got {}", v.len()));
    }
    Ok(v)
}

impl FromStr for Motion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "none" {
            return Ok(Motion::Linear { vx: 0.0, vy: 0.0 });
        }
        if let Some(rest) = s.strip_prefix("linear:") {
            let v = floats(rest, 2)?;
            return Ok(Motion::Linear { vx: v[0], vy: v[1] });
        }
        if let Some(rest) = s.strip_prefix("sinusoidal:") {
            let v = floats(rest, 3)?;
            if !(v[2] > 0.0) {
                return Err("period must be positive".into());
            }
            return Ok(Motion::Sinusoidal {
                ax: v[0],
                ay: v[1],
                period: v[2],
            });
        }
        Err(format!("unknown motion {s:?}"))
    }
}

/// Frames `[start, end)` and a strength parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Episode {
    pub start: usize,
    pub end: usize,
    pub value: f64,
}

impl Episode {
    pub fn contains(&self, frame: usize) -> bool {
        frame >= self.start && frame < self.end
    }
}

fn episodes_to_string(e: &[Episode]) -> String {
    if e.is_empty() {
        return "none".into();
    }
    e.iter()
        .map(|e| format!("{}:{}:{}", e.start, e.end, e.value))
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_episodes(s: &str) -> Result<Vec<Episode>, String> {
    let s = s.trim();
    if s == "none" || s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|part| {
            let v = floats(part, 3)?;
            if v[0] < 0.0 || v[1] < v[0] || v[0].fract() != 0.0 || v[1].fract() != 0.0 {
                return Err(format!("bad frame range in {part:?}"));
            }
            Ok(Episode {
                start: v[0] as usize,
                end: v[1] as usize,
                value: v[2],
            })
        })
        .collect()
}

/// A look-alike copy of the target following its own linear path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distractor {
    pub start: usize,
    pub end: usize,
    /// Centre offset from the target centre at `start`.
    pub offset: (f64, f64),
    pub velocity: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Initial target centre.
    pub start: (f64, f64),
    pub target_size: (f64, f64),
    pub motion: Motion,
    /// Per-frame relative size change: size(t) = size(0)·(1 + drift)^t.
    pub scale_drift: f64,
    pub distractor: Option<Distractor>,
    /// Gaussian blur of the whole frame, value = σ in pixels.
    pub blur: Vec<Episode>,
    /// Grey occluder covering the given fraction of the target's width from the left.
    pub occlusion: Vec<Episode>,
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "synth".into(),
            width: 352,
            height: 256,
            frames: 100,
            start: (80.0, 128.0),
            target_size: (40.0, 40.0),
            motion: Motion::Linear { vx: 2.0, vy: 0.0 },
            scale_drift: 0.0,
            distractor: None,
            blur: Vec::new(),
            occlusion: Vec::new(),
            noise: 0.01,
        }
    }
}

impl SynthSpec {
    /// Linear motion at 2 px/frame, 1 %/frame growth and a blur episode.
    pub fn smoke() -> Self {
        Self {
            name: "smoke".into(),
            width: 352,
            height: 256,
            start: (70.0, 128.0),
            target_size: (36.0, 30.0),
            scale_drift: 0.01,
            blur: vec![Episode {
                start: 40,
                end: 50,
                value: 1.5,
            }],
            ..Self::default()
        }
    }

    /// Slow target with a look-alike (same luminance pattern, different hue)
    /// passing one target height below it.
    pub fn distractor() -> Self {
        Self {
            name: "distractor".into(),
            frames: 80,
            start: (100.0, 110.0),
            target_size: (36.0, 36.0),
            motion: Motion::Linear { vx: 1.0, vy: 0.0 },
            distractor: Some(Distractor {
                start: 10,
                end: 70,
                offset: (100.0, 40.0),
                velocity: (-1.0, 0.0),
            }),
            ..Self::default()
        }
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let d = self.distractor;
        vec![
            ("name", self.name.clone()),
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("frames", self.frames.to_string()),
            ("start_x", self.start.0.to_string()),
            ("start_y", self.start.1.to_string()),
            ("target_w", self.target_size.0.to_string()),
            ("target_h", self.target_size.1.to_string()),
            ("motion", self.motion.to_string()),
            ("scale_drift", self.scale_drift.to_string()),
            (
                "distractor",
                match d {
                    None => "none".into(),
                    Some(d) => format!(
                        "{}:{}:{}:{}:{}:{}",
                        d.start, d.end, d.offset.0, d.offset.1, d.velocity.0, d.velocity.1
                    ),
                },
            ),
            ("blur", episodes_to_string(&self.blur)),
            ("occlusion", episodes_to_string(&self.occlusion)),
            ("noise", self.noise.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SpecError> {
        let err = |reason: String| SpecError::Value {
            key: key.into(),
            value: value.into(),
            reason,
        };
        let num = |v: &str| v.trim().parse::<f64>().map_err(|e| err(e.to_string()));
        let int = |v: &str| v.trim().parse::<usize>().map_err(|e| err(e.to_string()));
        match key {
            "name" => self.name = value.trim().to_string(),
            "width" => self.width = int(value)?,
            "height" => self.height = int(value)?,
            "frames" => self.frames = int(value)?,
            "start_x" => self.start.0 = num(value)?,
            "start_y" => self.start.1 = num(value)?,
            "target_w" => self.target_size.0 = num(value)?,
            "target_h" => self.target_size.1 = num(value)?,
            "motion" => self.motion = value.parse().map_err(err)?,
            "scale_drift" => self.scale_drift = num(value)?,
            "distractor" => {
                self.distractor = if value.trim() == "none" {
                    None
                } else {
                    let v = floats(value, 6).map_err(err)?;
                    if v[0] < 0.0 || v[1] < v[0] {
                        return Err(err("bad frame range".into()));
                    }
                    Some(Distractor {
                        start: v[0] as usize,
                        end: v[1] as usize,
                        offset: (v[2], v[3]),
                        velocity: (v[4], v[5]),
                    })
                }
            }
            "blur" => self.blur = parse_episodes(value).map_err(err)?,
            "occlusion" => self.occlusion = parse_episodes(value).map_err(err)?,
            "noise" => self.noise = num(value)?,
            other => return Err(SpecError::UnknownKey(other.into())),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, SpecError> {
        let mut spec = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| SpecError::Syntax {
                line: n + 1,
                text: raw.into(),
            })?;
            spec.set(k.trim(), v.trim())?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.width < 16 || self.height < 16 {
            return Err(SpecError::Invalid("frames must be at least 16x16".into()));
        }
        if !(self.target_size.0 > 0.0 && self.target_size.1 > 0.0) {
            return Err(SpecError::Invalid("target size must be positive".into()));
        }
        if !(self.scale_drift > -1.0) || !(self.noise >= 0.0) {
            return Err(SpecError::Invalid("scale_drift must exceed -1 and noise must be >= 0".into()));
        }
        if self.blur.iter().any(|e| !(e.value > 0.0)) {
            return Err(SpecError::Invalid("blur sigma must be positive".into()));
        }
        if self.occlusion.iter().any(|e| !(e.value > 0.0 && e.value <= 1.0)) {
            return Err(SpecError::Invalid("occlusion fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Unquantized centre at frame `t`.
    fn center(&self, t: usize) -> (f64, f64) {
        let tf = t as f64;
        match self.motion {
            Motion::Linear { vx, vy } => (self.start.0 + vx * tf, self.start.1 + vy * tf),
            Motion::Sinusoidal { ax, ay, period } => {
                let s = (TAU * tf / period).sin();
                (self.start.0 + ax * s, self.start.1 + ay * s)
            }
        }
    }

    /// Ground-truth box at frame `t`, quantized to 1/256 pixel.
    pub fn box_at(&self, t: usize) -> BBox {
        let g = (1.0 + self.scale_drift).powi(t as i32);
        let (w, h) = (quantize(self.target_size.0 * g), quantize(self.target_size.1 * g));
        let (cx, cy) = self.center(t);
        BBox::new(quantize(cx - 0.5 * w), quantize(cy - 0.5 * h), w, h)
    }

    fn distractor_box(&self, t: usize) -> Option<BBox> {
        let d = self.distractor?;
        if t < d.start || t >= d.end {
            return None;
        }
        let b0 = self.box_at(d.start);
        let bt = self.box_at(t);
        let k = (t - d.start) as f64;
        let (cx, cy) = b0.center();
        let cx = cx + d.offset.0 + d.velocity.0 * k;
        let cy = cy + d.offset.1 + d.velocity.1 * k;
        Some(BBox::new(cx - 0.5 * bt.w, cy - 0.5 * bt.h, bt.w, bt.h))
    }
}

pub fn quantize(v: f64) -> f64 {
    (v * 256.0).round() / 256.0
}

const BACKGROUND_STREAM: u64 = 2;
const TARGET_STREAM: u64 = 3;
const NOISE_STREAM: u64 = 4;

/// Sum of random sinusoids per colour channel over the unit square.
struct Texture {
    waves: Vec<[f64; 6]>,
    base: [f64; 3],
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, count: usize, max_freq: f64, amplitude: f64, base: [f64; 3]) -> Self {
        let waves = (0..count)
            .map(|_| {
                [
                    rng.gen_range(-max_freq..max_freq),
                    rng.gen_range(-max_freq..max_freq),
                    rng.gen_range(0.0..TAU),
                    rng.gen_range(0.0..amplitude),
                    rng.gen_range(0.0..amplitude),
                    rng.gen_range(0.0..amplitude),
                ]
            })
            .collect();
        Self { waves, base }
    }

    fn eval(&self, u: f64, v: f64) -> [f64; 3] {
        let mut out = self.base;
        for w in &self.waves {
            let s = (TAU * (w[0] * u + w[1] * v) + w[2]).sin();
            out[0] += w[3] * s;
            out[1] += w[4] * s;
            out[2] += w[5] * s;
        }
        out
    }
}

fn coverage(p: usize, lo: f64, len: f64) -> f64 {
    let p = p as f64;
    ((p + 1.0).min(lo + len) - p.max(lo)).clamp(0.0, 1.0)
}

fn paint(img: &mut Image<f64>, b: &BBox, mut color: impl FnMut(f64, f64) -> [f64; 3]) {
    let (w, h) = (img.width(), img.height());
    let x0 = b.x.floor().max(0.0) as usize;
    let y0 = b.y.floor().max(0.0) as usize;
    let x1 = ((b.x + b.w).ceil().max(0.0) as usize).min(w);
    let y1 = ((b.y + b.h).ceil().max(0.0) as usize).min(h);
    for y in y0..y1 {
        let cy = coverage(y, b.y, b.h);
        for x in x0..x1 {
            let a = coverage(x, b.x, b.w) * cy;
            if a <= 0.0 {
                continue;
            }
            let u = (x as f64 + 0.5 - b.x) / b.w;
            let v = (y as f64 + 0.5 - b.y) / b.h;
            let col = color(u, v);
            for (ch, cv) in col.iter().enumerate() {
                let old = img.get(x, y, ch);
                img.set(x, y, ch, old + a * (cv - old));
            }
        }
    }
}

fn gaussian_blur(img: &Image<f64>, sigma: f64) -> Image<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let (w, h, chs) = (img.width(), img.height(), img.channels());
    let pass = |src: &Image<f64>, horizontal: bool| {
        Image::from_fn(w, h, chs, |x, y, px| {
            for (ch, o) in px.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    let d = i as isize - r;
                    let (sx, sy) = if horizontal { (x as isize + d, y as isize) } else { (x as isize, y as isize + d) };
                    acc += k * src.get_clamped(sx, sy, ch);
                }
                *o = acc / norm;
            }
        })
    };
    pass(&pass(img, true), false)
}

/// Renders the sequence described by `spec`; all randomness derives from `seed`.
pub fn synth_sequence(spec: &SynthSpec, seed: u64) -> Result<Sequence, SpecError> {
    spec.validate()?;
    let mut bg_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, BACKGROUND_STREAM));
    let mut tg_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, TARGET_STREAM));
    let background = Texture::random(&mut bg_rng, 24, 14.0, 0.06, [0.45, 0.47, 0.5]);
    let target = Texture::random(&mut tg_rng, 10, 3.0, 0.14, [0.55, 0.35, 0.3]);
    let (w, h) = (spec.width, spec.height);
    let bg = Image::from_fn(w, h, 3, |x, y, px| {
        px.copy_from_slice(&background.eval(x as f64 / w as f64, y as f64 / h as f64));
    });
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("finite std");

    let mut frames = Vec::with_capacity(spec.frames);
    let mut gt = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let b = spec.box_at(t);
        let mut img = bg.clone();
        if let Some(d) = spec.distractor_box(t) {
            // Same luminance pattern as the target with red and blue swapped.
            paint(&mut img, &d, |u, v| {
                let c = target.eval(u, v);
                [c[2], c[1], c[0]]
            });
        }
        paint(&mut img, &b, |u, v| target.eval(u, v));
        for e in spec.occlusion.iter().filter(|e| e.contains(t)) {
            let occ = BBox::new(b.x - 0.1 * b.w, b.y - 0.1 * b.h, e.value * b.w + 0.1 * b.w, 1.2 * b.h);
            paint(&mut img, &occ, |_, _| [0.3, 0.3, 0.3]);
        }
        for e in spec.blur.iter().filter(|e| e.contains(t)) {
            img = gaussian_blur(&img, e.value);
        }
        if spec.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, NOISE_STREAM));
            rng.set_word_pos((t as u128) << 40);
            for v in img.as_mut_slice() {
                *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        frames.push(img);
        gt.push(b);
    }
    Sequence::new(spec.name.clone(), frames, gt).map_err(|e| SpecError::Invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_motion_constant_gt() {
        let spec = SynthSpec {
            motion: Motion::Linear { vx: 0.0, vy: 0.0 },
            frames: 5,
            ..SynthSpec::default()
        };
        let seq = synth_sequence(&spec, 3).unwrap();
        assert!(seq.ground_truth.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn scale_drift_closed_form() {
        let spec = SynthSpec {
            scale_drift: 0.01,
            ..SynthSpec::default()
        };
        let b = spec.box_at(50);
        assert!((b.w - 40.0 * 1.01f64.powi(50)).abs() <= 1.0 / 512.0);
        assert!((b.h - 40.0 * 1.01f64.powi(50)).abs() <= 1.0 / 512.0);
    }

    #[test]
    fn spec_text_round_trip() {
        for spec in [SynthSpec::default(), SynthSpec::smoke(), SynthSpec::distractor()] {
            assert_eq!(SynthSpec::parse(&spec.to_text()).unwrap(), spec);
        }
        assert!(matches!(SynthSpec::parse("colour = red"), Err(SpecError::UnknownKey(_))));
    }

    #[test]
    fn deterministic_render() {
        let spec = SynthSpec {
            frames: 3,
            ..SynthSpec::smoke()
        };
        assert_eq!(synth_sequence(&spec, 9).unwrap(), synth_sequence(&spec, 9).unwrap());
        assert_ne!(synth_sequence(&spec, 9).unwrap().frames, synth_sequence(&spec, 10).unwrap().frames);
    }
}
