//! Training data: periodic Gaussian labels, sample weighting, and the
//! pixel/feature augmentations used to enlarge first-frame training sets.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::FeatureMap;
use crate::grid::{dft, idft, phase_shift, Grid};
use crate::image::Image;
use crate::scalar::{c, ci, cu, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainingError {
    #[error("invalid label config: {0}")]
    InvalidLabel(String),
    #[error("dropout rate must lie in (0, 1), got {0}")]
    InvalidRate(f64),
    #[error("dropout would zero all {channels} channels")]
    DropoutAll { channels: usize },
    #[error("dropout needs at least 2 channels, got {0}")]
    TooFewChannels(usize),
    #[error("sample memory is empty")]
    EmptyMemory,
}

/// Desired-score configuration, in score-grid cells.
///
/// `target_size.0` and `center.0` refer to the row axis, `.1` to columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelConfig<S> {
    pub sigma: S,
    pub target_size: (S, S),
    pub center: (S, S),
}

impl<S: Scalar> LabelConfig<S> {
    pub fn new(sigma: S, target_size: (S, S)) -> Self {
        Self {
            sigma,
            target_size,
            center: (S::zero(), S::zero()),
        }
    }

    pub fn with_center(mut self, center: (S, S)) -> Self {
        self.center = center;
        self
    }

    fn validate(&self) -> Result<(), TrainingError> {
        if !(self.sigma > S::zero()) {
            return Err(TrainingError::InvalidLabel(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.target_size.0 > S::zero() && self.target_size.1 > S::zero()) {
            return Err(TrainingError::InvalidLabel(format!(
                "target size must be positive, got ({}, {})",
                self.target_size.0, self.target_size.1
            )));
        }
        Ok(())
    }
}

const WRAP_CUTOFF: f64 = 1e-12;

/// Periodic sum of a 1-D Gaussian with standard deviation `std` centred at `center`.
fn periodic_gaussian_axis<S: Scalar>(n: usize, center: S, std: S) -> Vec<S> {
    let period = cu::<S>(n);
    let denom = c::<S>(2.0) * std * std;
    let cutoff = c::<S>(WRAP_CUTOFF);
    (0..n)
        .map(|i| {
            let d = cu::<S>(i) - center;
            let d = d - (d / period).round() * period;
            let mut acc = (-(d * d) / denom).exp();
            let mut p = S::one();
            loop {
                let lo = d - p * period;
                let hi = d + p * period;
                let tl = (-(lo * lo) / denom).exp();
                let th = (-(hi * hi) / denom).exp();
                acc = acc + tl + th;
                if tl < cutoff && th < cutoff {
                    break;
                }
                p = p + S::one();
            }
            acc
        })
        .collect()
}

/// Separable Gaussian label `exp(-(t1-u1)²/(2(aσ)²)) · exp(-(t2-u2)²/(2(bσ)²))`,
/// periodically repeated over the grid.
pub fn gaussian_label<S: Scalar>(
    height: usize,
    width: usize,
    cfg: &LabelConfig<S>,
) -> Result<Grid<S>, TrainingError> {
    cfg.validate()?;
    if height < 2 || width < 2 {
        return Err(TrainingError::InvalidLabel(format!(
            "label grid must be at least 2x2, got {height}x{width}"
        )));
    }
    let rows = periodic_gaussian_axis(height, cfg.center.0, cfg.target_size.0 * cfg.sigma);
    let cols = periodic_gaussian_axis(width, cfg.center.1, cfg.target_size.1 * cfg.sigma);
    Ok(Grid::from_fn(height, width, |i, j| rows[i] * cols[j]))
}

/// Exponentially decaying sample weights `α_j ∝ (1 - γ)^age_j`, normalized to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights<S> {
    ages: Vec<u32>,
    learning_rate: S,
    weights: Vec<S>,
}

impl<S: Scalar> SampleWeights<S> {
    pub fn new(learning_rate: S) -> Self {
        Self {
            ages: Vec::new(),
            learning_rate,
            weights: Vec::new(),
        }
    }

    /// Weights for slots of the given ages (oldest first by convention).
    pub fn from_ages(ages: Vec<u32>, learning_rate: S) -> Self {
        let mut w = Self {
            ages,
            learning_rate,
            weights: Vec::new(),
        };
        w.renormalize();
        w
    }

    pub fn ages(&self) -> &[u32] {
        &self.ages
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn learning_rate(&self) -> S {
        self.learning_rate
    }

    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }

    fn renormalize(&mut self) {
        let decay = S::one() - self.learning_rate;
        let raw: Vec<S> = self.ages.iter().map(|&a| decay.powi(a as i32)).collect();
        let total: S = raw.iter().copied().sum();
        self.weights = raw.into_iter().map(|v| v / total).collect();
    }

    /// Recomputes the normalized weights from the slot ages.
    pub fn update_weights(&self) -> Result<Self, TrainingError> {
        if self.ages.is_empty() {
            return Err(TrainingError::EmptyMemory);
        }
        let mut out = self.clone();
        out.renormalize();
        Ok(out)
    }

    /// Ages every existing slot by one step and appends `count` new slots of age 0.
    pub fn push_newest(&mut self, count: usize) {
        for a in &mut self.ages {
            *a += 1;
        }
        self.ages.extend(std::iter::repeat_n(0, count));
        self.renormalize();
    }

    /// Drops the oldest slot (index 0).
    pub fn evict_oldest(&mut self) {
        if !self.ages.is_empty() {
            self.ages.remove(0);
            self.renormalize();
        }
    }
}

/// The 12 rotation angles, in degrees, uniformly spaced over `[-60, 60]`.
pub fn rotation_angles() -> [f64; 12] {
    let mut out = [0.0; 12];
    for (k, a) in out.iter_mut().enumerate() {
        *a = -60.0 + 120.0 * k as f64 / 11.0;
    }
    out
}

/// A single augmentation applied to a first-frame training sample.
#[derive(Debug, Clone, PartialEq)]
pub enum AugmentationSpec {
    Flip,
    Rotation { degrees: f64 },
    /// Pixel shift `(dx, dy)`; features are shifted back by `-(dy, dx) / stride` cells.
    Shift { dx: isize, dy: isize },
    Blur { radius: f64 },
    Dropout { rate: f64, seed: u64 },
}

impl AugmentationSpec {
    /// Feature-space shift (rows, cols) that undoes a pixel shift at `stride`.
    pub fn shift_back_cells(&self, stride: f64) -> (f64, f64) {
        match self {
            AugmentationSpec::Shift { dx, dy } => (-(*dy as f64) / stride, -(*dx as f64) / stride),
            _ => (0.0, 0.0),
        }
    }
}

/// Which augmentations a model's first-frame training set receives.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPolicy {
    pub flip: bool,
    pub rotations: bool,
    /// Shift magnitude in pixels; `None` means `⌊stride/2⌋`. Applied as the four
    /// diagonal combinations `(±n, ±n)`.
    pub shift_pixels: Option<usize>,
    pub shifts: bool,
    pub blur_radii: Vec<f64>,
    pub dropout_draws: usize,
    pub dropout_rate: f64,
}

impl AugmentationPolicy {
    pub fn none() -> Self {
        Self {
            flip: false,
            rotations: false,
            shift_pixels: None,
            shifts: false,
            blur_radii: Vec::new(),
            dropout_draws: 0,
            dropout_rate: 0.2,
        }
    }

    pub fn full() -> Self {
        Self {
            flip: true,
            rotations: true,
            shift_pixels: None,
            shifts: true,
            blur_radii: vec![1.0, 2.0, 4.0],
            dropout_draws: 2,
            dropout_rate: 0.2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.specs(8.0, 0).is_empty()
    }

    /// Deterministic list of augmentations (not including the original sample).
    pub fn specs(&self, stride: f64, seed: u64) -> Vec<AugmentationSpec> {
        let mut out = Vec::new();
        if self.flip {
            out.push(AugmentationSpec::Flip);
        }
        if self.rotations {
            out.extend(
                rotation_angles()
                    .iter()
                    .map(|&degrees| AugmentationSpec::Rotation { degrees }),
            );
        }
        if self.shifts {
            let n = self
                .shift_pixels
                .unwrap_or((stride / 2.0).floor().max(0.0) as usize) as isize;
            if n > 0 {
                for (sx, sy) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
                    out.push(AugmentationSpec::Shift {
                        dx: sx * n,
                        dy: sy * n,
                    });
                }
            }
        }
        out.extend(
            self.blur_radii
                .iter()
                .map(|&radius| AugmentationSpec::Blur { radius }),
        );
        for k in 0..self.dropout_draws {
            out.push(AugmentationSpec::Dropout {
                rate: self.dropout_rate,
                seed: seed.wrapping_add(k as u64),
            });
        }
        out
    }
}

/// Horizontal mirror of an image.
pub fn flip<S: Scalar>(patch: &Image<S>) -> Image<S> {
    let w = patch.width();
    Image::from_fn(w, patch.height(), patch.channels(), |x, y, dst| {
        dst.copy_from_slice(patch.pixel(w - 1 - x, y));
    })
}

/// Rotation about the patch centre with bilinear resampling and replicate-edge fill.
pub fn rotate<S: Scalar>(patch: &Image<S>, degrees: S) -> Image<S> {
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let half = c::<S>(0.5);
    let cx = (cu::<S>(patch.width()) - S::one()) * half;
    let cy = (cu::<S>(patch.height()) - S::one()) * half;
    let mut px = vec![S::zero(); patch.channels()];
    Image::from_fn(patch.width(), patch.height(), patch.channels(), |x, y, dst| {
        let dx = cu::<S>(x) - cx;
        let dy = cu::<S>(y) - cy;
        // Inverse rotation maps output pixels back to the source.
        let sx = cos * dx + sin * dy + cx;
        let sy = -sin * dx + cos * dy + cy;
        patch.sample_bilinear(sx, sy, &mut px);
        dst.copy_from_slice(&px);
    })
}

pub(crate) fn gaussian_kernel<S: Scalar>(sigma: S) -> Vec<S> {
    let half = (sigma * c::<S>(3.0)).ceil().to_usize().unwrap_or(0).max(1);
    let denom = c::<S>(2.0) * sigma * sigma;
    let raw: Vec<S> = (0..=2 * half)
        .map(|k| {
            let d = cu::<S>(k) - cu::<S>(half);
            (-(d * d) / denom).exp()
        })
        .collect();
    let total: S = raw.iter().copied().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with standard deviation `radius` pixels, replicate edges.
pub fn blur<S: Scalar>(patch: &Image<S>, radius: S) -> Image<S> {
    if !(radius > S::zero()) {
        return patch.clone();
    }
    let kernel = gaussian_kernel(radius);
    let half = (kernel.len() / 2) as isize;
    let (w, h, ch) = (patch.width(), patch.height(), patch.channels());
    let horiz = Image::from_fn(w, h, ch, |x, y, dst| {
        for (c_idx, d) in dst.iter_mut().enumerate() {
            let mut acc = S::zero();
            for (k, &wk) in kernel.iter().enumerate() {
                acc = acc + wk * patch.get_clamped(x as isize + k as isize - half, y as isize, c_idx);
            }
            *d = acc;
        }
    });
    Image::from_fn(w, h, ch, |x, y, dst| {
        for (c_idx, d) in dst.iter_mut().enumerate() {
            let mut acc = S::zero();
            for (k, &wk) in kernel.iter().enumerate() {
                acc = acc + wk * horiz.get_clamped(x as isize, y as isize + k as isize - half, c_idx);
            }
            *d = acc;
        }
    })
}

/// Cyclic pixel shift: the pixel at `(x, y)` moves to `(x + dx, y + dy)`.
pub fn shift_patch<S: Scalar>(patch: &Image<S>, dx: isize, dy: isize) -> Image<S> {
    Image::from_fn(patch.width(), patch.height(), patch.channels(), |x, y, dst| {
        for (ch, d) in dst.iter_mut().enumerate() {
            *d = patch.get_wrapped(x as isize - dx, y as isize - dy, ch);
        }
    })
}

/// Undoes a pixel shift `(dx, dy)` in feature space: every channel is
/// cyclically shifted by `-(dy, dx) / stride` cells (fractional amounts by
/// Fourier phase shift).
pub fn shift_back<S: Scalar>(features: &FeatureMap<S>, dx: isize, dy: isize) -> FeatureMap<S> {
    let stride = features.stride();
    let di = -ci::<S>(dy) / stride;
    let dj = -ci::<S>(dx) / stride;
    if di == S::zero() && dj == S::zero() {
        return features.clone();
    }
    let integral = di == di.round() && dj == dj.round();
    let channels = features
        .channels()
        .iter()
        .map(|g| {
            if integral {
                g.roll(di.to_isize().unwrap_or(0), dj.to_isize().unwrap_or(0))
            } else {
                idft(&phase_shift(&dft(g), di, dj))
            }
        })
        .collect();
    features.with_channels(channels)
}

/// Zeros `round(rate · D)` channels chosen by a seeded generator and rescales
/// the survivors by `sqrt(E_total / E_kept)` so the squared energy is unchanged.
pub fn channel_dropout<S: Scalar>(
    features: &FeatureMap<S>,
    rate: f64,
    seed: u64,
) -> Result<FeatureMap<S>, TrainingError> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(TrainingError::InvalidRate(rate));
    }
    let d = features.num_channels();
    if d < 2 {
        return Err(TrainingError::TooFewChannels(d));
    }
    let k = (rate * d as f64).round() as usize;
    if k >= d {
        return Err(TrainingError::DropoutAll { channels: d });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dropped = vec![false; d];
    for idx in sample_indices(&mut rng, d, k).into_iter() {
        dropped[idx] = true;
    }
    let total: S = features.channels().iter().map(|g| g.norm_sq()).sum();
    let kept: S = features
        .channels()
        .iter()
        .zip(&dropped)
        .filter(|(_, &z)| !z)
        .map(|(g, _)| g.norm_sq())
        .sum();
    let gain = if kept > S::zero() {
        (total / kept).sqrt()
    } else {
        S::one()
    };
    let channels = features
        .channels()
        .iter()
        .zip(&dropped)
        .map(|(g, &z)| if z { Grid::zeros(g.height(), g.width()) } else { g.scale(gain) })
        .collect();
    Ok(features.with_channels(channels))
}

/// Indices of channels that are identically zero.
pub fn zero_channels<S: Scalar>(features: &FeatureMap<S>) -> Vec<usize> {
    features
        .channels()
        .iter()
        .enumerate()
        .filter(|(_, g)| g.as_slice().iter().all(|v| *v == S::zero()))
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn label_center_and_one_sigma() {
        let cfg = LabelConfig::new(0.25, (4.0f64, 4.0)).with_center((8.0, 8.0));
        let y = gaussian_label(32, 32, &cfg).unwrap();
        assert!((y.get(8, 8) - 1.0).abs() < 1e-12);
        // one σ·a = 1 cell away along rows
        assert!((y.get(9, 8) - (-0.5f64).exp()).abs() < 1e-12);
        assert_eq!(y.argmax(), (8, 8));
    }

    #[test]
    fn label_matches_periodic_sum_oracle() {
        let (a, b, sigma) = (4.0f64, 4.0f64, 0.25f64);
        let cfg = LabelConfig::new(sigma, (a, b));
        let y = gaussian_label(16, 16, &cfg).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let mut acc = 0.0;
                for p in -3i32..=3 {
                    for q in -3i32..=3 {
                        let t1 = i as f64 + 16.0 * p as f64;
                        let t2 = j as f64 + 16.0 * q as f64;
                        acc += (-(t1 * t1) / (2.0 * (a * sigma).powi(2))
                            - (t2 * t2) / (2.0 * (b * sigma).powi(2)))
                        .exp();
                    }
                }
                assert!((y.get(i, j) - acc).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn wide_label_wraps_around() {
        let cfg = LabelConfig::new(1.0, (6.0f64, 6.0));
        let y = gaussian_label(8, 8, &cfg).unwrap();
        assert!(y.get(0, 0) > 1.0);
        assert!((y.get(1, 0) - y.get(7, 0)).abs() < 1e-12);
    }

    #[test]
    fn label_axis_swap_symmetry() {
        let cfg = LabelConfig::new(0.3, (3.0f64, 5.0)).with_center((2.5, 7.25));
        let swapped = LabelConfig::new(0.3, (5.0f64, 3.0)).with_center((7.25, 2.5));
        let y = gaussian_label(12, 16, &cfg).unwrap();
        let z = gaussian_label(16, 12, &swapped).unwrap();
        for i in 0..12 {
            for j in 0..16 {
                assert!((y.get(i, j) - z.get(j, i)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn label_rejects_bad_sigma() {
        let cfg = LabelConfig::new(0.0, (3.0f64, 3.0));
        assert!(matches!(
            gaussian_label(8, 8, &cfg),
            Err(TrainingError::InvalidLabel(_))
        ));
    }

    #[test]
    fn sample_weights() {
        let w = SampleWeights::from_ages(vec![0], 0.01f64);
        assert_eq!(w.weights(), &[1.0]);
        let w = SampleWeights::from_ages(vec![1, 0], 0.5f64);
        assert!((w.weights()[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w.weights()[0] - 1.0 / 3.0).abs() < 1e-15);

        let gamma = 0.01f64;
        let mut w = SampleWeights::new(gamma);
        for _ in 0..5 {
            w.push_newest(1);
        }
        let norm = gamma / (1.0 - (1.0 - gamma).powi(5));
        for (slot, &age) in w.ages().iter().enumerate() {
            let expected = (1.0 - gamma).powi(age as i32) * norm;
            assert!((w.weights()[slot] - expected).abs() < 1e-12);
        }
        assert!(SampleWeights::new(0.1f64).update_weights().is_err());
    }

    #[test]
    fn sample_weights_stay_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut w = SampleWeights::new(0.07f64);
        for _ in 0..200 {
            match rng.gen_range(0..3) {
                0 | 1 => w.push_newest(rng.gen_range(1..4)),
                _ => w.evict_oldest(),
            }
            if !w.is_empty() {
                let s: f64 = w.weights().iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(w.weights().windows(2).all(|p| p[0] <= p[1] + 1e-15));
            }
        }
    }

    #[test]
    fn rotation_set() {
        let a = rotation_angles();
        assert_eq!(a.len(), 12);
        assert_eq!(a[0], -60.0);
        assert!((a[11] - 60.0).abs() < 1e-12);
        for p in a.windows(2) {
            assert!((p[1] - p[0] - 120.0 / 11.0).abs() < 1e-12);
        }
    }

    fn test_image(seed: u64) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(13, 9, 3, |_, _, px| {
            for v in px {
                *v = rng.gen();
            }
        })
    }

    #[test]
    fn pixel_augmentations() {
        let img = test_image(1);
        assert_eq!(flip(&flip(&img)), img);
        let flat = Image::filled(10, 10, 3, 0.4f64);
        let b = blur(&flat, 2.0);
        assert!(b.as_slice().iter().all(|v| (v - 0.4).abs() < 1e-12));
        for &deg in &rotation_angles() {
            let r = rotate(&img, deg);
            assert_eq!((r.width(), r.height(), r.channels()), (13, 9, 3));
        }
        let zero_rot = rotate(&img, 0.0);
        for (a, b) in zero_rot.as_slice().iter().zip(img.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        let s = shift_patch(&img, 3, -2);
        assert_eq!(s.get(3, 7, 1), img.get(0, 0, 1));
        assert_eq!(shift_patch(&s, -3, 2), img);
    }

    #[test]
    fn policy_counts() {
        assert_eq!(AugmentationPolicy::full().specs(8.0, 0).len(), 22);
        assert!(AugmentationPolicy::none().is_empty());
    }
}
