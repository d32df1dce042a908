//! Feature providers turning an image patch into a multi-channel [`FeatureMap`].
//!
//! * [`ShallowExtractor`]: 9-bin unsigned gradient-orientation histograms with
//!   3×3 block normalization plus 10 soft colour-prototype channels.
//! * [`DeepProxyExtractor`]: coarse, smooth multi-octave gradient energy and
//!   chromaticity pooling. It is a stand-in for CNN activations with two
//!   contractual properties only: coarse stride and small-shift stability.
//! * [`ExternalFeatures`]: maps precomputed offline, stored in the `FMAP`
//!   binary format.
//!
//! All spatial filtering is periodic so that extraction commutes with cyclic
//! shifts by whole cells.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::grid::Grid;
use crate::image::Image;
use crate::scalar::{c, cu, to_f64, Scalar};
use crate::training::gaussian_kernel;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("patch {width}x{height} is not divisible by cell size {cell}")]
    NotDivisible {
        width: usize,
        height: usize,
        cell: usize,
    },
    #[error("deep-proxy stride must be at least 8, got {0}")]
    StrideTooSmall(usize),
    #[error("feature file not found: {0}")]
    MissingFile(PathBuf),
    #[error("bad magic in feature file {path}: {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("unsupported feature file version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid feature header: {0}")]
    InvalidHeader(String),
    #[error("feature dimensions overflow: {channels}x{height}x{width}")]
    DimensionOverflow {
        channels: u32,
        height: u32,
        width: u32,
    },
    #[error("feature file truncated: {0}")]
    Truncated(String),
    #[error("channel shapes differ within one feature map")]
    RaggedChannels,
    #[error("provider produced {actual} channels, declared {declared}")]
    ChannelCount { declared: usize, actual: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Multi-channel feature map; every channel shares one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<S> {
    channels: Vec<Grid<S>>,
    stride: S,
    provider: String,
}

impl<S: Scalar> FeatureMap<S> {
    pub fn new(channels: Vec<Grid<S>>, stride: S, provider: impl Into<String>) -> Result<Self, FeatureError> {
        if channels.is_empty() {
            return Err(FeatureError::InvalidHeader("feature map has no channels".into()));
        }
        let shape = channels[0].shape();
        if channels.iter().any(|g| g.shape() != shape) {
            return Err(FeatureError::RaggedChannels);
        }
        if !(stride > S::zero()) {
            return Err(FeatureError::InvalidHeader(format!("stride must be positive, got {stride}")));
        }
        Ok(Self {
            channels,
            stride,
            provider: provider.into(),
        })
    }

    pub fn channels(&self) -> &[Grid<S>] {
        &self.channels
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.channels[0].shape()
    }

    pub fn stride(&self) -> S {
        self.stride
    }

    pub fn provider(&self) -> &str {
        &self.provider
    }

    /// Same metadata, new channel data (shapes must match the original).
    pub fn with_channels(&self, channels: Vec<Grid<S>>) -> Self {
        debug_assert!(channels.iter().all(|g| g.shape() == self.shape()));
        Self {
            channels,
            stride: self.stride,
            provider: self.provider.clone(),
        }
    }

    /// Total squared energy over all channels.
    pub fn energy(&self) -> S {
        self.channels.iter().map(|g| g.norm_sq()).sum()
    }
}

/// Anything that turns a patch into features.
pub trait FeatureProvider<S: Scalar>: Send + Sync {
    fn extract(&self, patch: &Image<S>, frame_index: usize) -> Result<FeatureMap<S>, FeatureError>;
    /// Pixel stride of produced cells.
    fn stride(&self) -> usize;
    fn id(&self) -> String;
}

/// Declarative description of a provider, as read from configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderSpec {
    Shallow { cell: usize },
    DeepProxy { octaves: usize, stride: usize },
    ExternalFile { template: String, stride: usize },
}

impl ProviderSpec {
    pub fn build<S: Scalar>(&self) -> Box<dyn FeatureProvider<S>> {
        match self {
            ProviderSpec::Shallow { cell } => Box::new(ShallowExtractor { cell: *cell }),
            ProviderSpec::DeepProxy { octaves, stride } => Box::new(DeepProxyExtractor {
                octaves: *octaves,
                stride: *stride,
                normalize: true,
            }),
            ProviderSpec::ExternalFile { template, stride } => Box::new(ExternalFeatures {
                template: template.clone(),
                stride: *stride,
            }),
        }
    }

    /// Number of channels the provider is declared to produce, when fixed.
    pub fn declared_channels(&self) -> Option<usize> {
        match self {
            ProviderSpec::Shallow { .. } => Some(HOG_BINS + COLOR_PROTOTYPES.len()),
            ProviderSpec::DeepProxy { octaves, .. } => Some(4 * octaves + CHROMA_PROTOTYPES.len()),
            ProviderSpec::ExternalFile { .. } => None,
        }
    }
}

pub const HOG_BINS: usize = 9;

/// Per-pixel gradient magnitude that sets the block-normalization floor.
/// Blocks weaker than this are not stretched to full strength, so flat
/// background and sensor noise stay weak relative to textured targets.
pub const HOG_CONTRAST_FLOOR: f64 = 0.05;

/// Colour prototypes (RGB in [0,1]) standing in for a colour-names table.
pub const COLOR_PROTOTYPES: [[f64; 3]; 10] = [
    [0.0, 0.0, 0.0],   // black
    [1.0, 1.0, 1.0],   // white
    [0.5, 0.5, 0.5],   // grey
    [0.85, 0.1, 0.1],  // red
    [0.1, 0.7, 0.15],  // green
    [0.1, 0.2, 0.85],  // blue
    [0.95, 0.9, 0.1],  // yellow
    [1.0, 0.55, 0.0],  // orange
    [0.55, 0.15, 0.65], // purple
    [0.5, 0.3, 0.1],   // brown
];
const COLOR_BANDWIDTH: f64 = 0.2;

/// Chromaticity prototypes `(r, g)` with `r = R/(R+G+B)`, `g = G/(R+G+B)`.
const CHROMA_PROTOTYPES: [[f64; 2]; 6] = [
    [1.0 / 3.0, 1.0 / 3.0],
    [0.6, 0.2],
    [0.2, 0.6],
    [0.2, 0.2],
    [0.45, 0.45],
    [0.45, 0.1],
];
const CHROMA_BANDWIDTH: f64 = 0.1;

fn rgb<S: Scalar>(patch: &Image<S>, x: usize, y: usize) -> [S; 3] {
    let px = patch.pixel(x, y);
    if px.len() >= 3 {
        [px[0], px[1], px[2]]
    } else {
        [px[0], px[0], px[0]]
    }
}

fn check_divisible<S: Scalar>(patch: &Image<S>, cell: usize) -> Result<(usize, usize), FeatureError> {
    if cell == 0 || patch.width() % cell != 0 || patch.height() % cell != 0 {
        return Err(FeatureError::NotDivisible {
            width: patch.width(),
            height: patch.height(),
            cell,
        });
    }
    Ok((patch.height() / cell, patch.width() / cell))
}

/// Periodic central-difference gradients of a row-major plane.
fn gradients<S: Scalar>(plane: &[S], w: usize, h: usize) -> (Vec<S>, Vec<S>) {
    let half = c::<S>(0.5);
    let mut gx = vec![S::zero(); w * h];
    let mut gy = vec![S::zero(); w * h];
    for y in 0..h {
        let yu = (y + h - 1) % h;
        let yd = (y + 1) % h;
        for x in 0..w {
            let xl = (x + w - 1) % w;
            let xr = (x + 1) % w;
            gx[y * w + x] = (plane[y * w + xr] - plane[y * w + xl]) * half;
            gy[y * w + x] = (plane[yd * w + x] - plane[yu * w + x]) * half;
        }
    }
    (gx, gy)
}

/// Shallow handcrafted features: HOG-style orientation histograms and colour prototypes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShallowExtractor {
    pub cell: usize,
}

impl Default for ShallowExtractor {
    fn default() -> Self {
        Self { cell: 4 }
    }
}

/// Orientation histograms (9 unsigned bins centred at 0°, 20°, …, 160°) and
/// colour-prototype occupancy per `cell × cell` block.
pub fn extract_shallow<S: Scalar>(patch: &Image<S>, cell: usize) -> Result<FeatureMap<S>, FeatureError> {
    let (rows, cols) = check_divisible(patch, cell)?;
    let (w, h) = (patch.width(), patch.height());
    let lum = patch.luminance();
    let (gx, gy) = gradients(&lum, w, h);

    let pi = S::PI();
    let bin_width = pi / cu::<S>(HOG_BINS);
    let mut hist = vec![S::zero(); rows * cols * HOG_BINS];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (gx[y * w + x], gy[y * w + x]);
            let mag = (dx * dx + dy * dy).sqrt();
            if mag == S::zero() {
                continue;
            }
            let mut theta = dy.atan2(dx);
            if theta < S::zero() {
                theta = theta + pi;
            }
            if theta >= pi {
                theta = theta - pi;
            }
            let pos = theta / bin_width;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = lo.to_usize().unwrap_or(0) % HOG_BINS;
            let b1 = (b0 + 1) % HOG_BINS;
            let cidx = (y / cell) * cols + x / cell;
            hist[cidx * HOG_BINS + b0] = hist[cidx * HOG_BINS + b0] + mag * (S::one() - frac);
            hist[cidx * HOG_BINS + b1] = hist[cidx * HOG_BINS + b1] + mag * frac;
        }
    }

    // 3x3 periodic block normalization.
    let energy: Vec<S> = (0..rows * cols)
        .map(|k| hist[k * HOG_BINS..(k + 1) * HOG_BINS].iter().map(|&v| v * v).sum())
        .collect();
    let eps = c::<S>(((cell * cell) as f64 * HOG_CONTRAST_FLOOR).powi(2) + 1e-12);
    let mut channels: Vec<Grid<S>> = (0..HOG_BINS + COLOR_PROTOTYPES.len())
        .map(|_| Grid::zeros(rows, cols))
        .collect();
    for r in 0..rows {
        for q in 0..cols {
            let mut block = S::zero();
            for dr in [rows - 1, 0, 1] {
                for dq in [cols - 1, 0, 1] {
                    block = block + energy[((r + dr) % rows) * cols + (q + dq) % cols];
                }
            }
            let norm = (block / cu::<S>(9) + eps).sqrt();
            for b in 0..HOG_BINS {
                channels[b].set(r, q, hist[(r * cols + q) * HOG_BINS + b] / norm);
            }
        }
    }

    let denom = c::<S>(2.0 * COLOR_BANDWIDTH * COLOR_BANDWIDTH);
    let protos: Vec<[S; 3]> = COLOR_PROTOTYPES
        .iter()
        .map(|p| [c(p[0]), c(p[1]), c(p[2])])
        .collect();
    let area = cu::<S>(cell * cell);
    let mut weights = vec![S::zero(); protos.len()];
    for y in 0..h {
        for x in 0..w {
            let px = rgb(patch, x, y);
            let mut total = S::zero();
            for (k, p) in protos.iter().enumerate() {
                let d2 = (px[0] - p[0]).powi(2) + (px[1] - p[1]).powi(2) + (px[2] - p[2]).powi(2);
                weights[k] = (-d2 / denom).exp();
                total = total + weights[k];
            }
            let (r, q) = (y / cell, x / cell);
            for (k, &wk) in weights.iter().enumerate() {
                let g = &mut channels[HOG_BINS + k];
                let share = if total > S::zero() { wk / total } else { S::zero() };
                g.set(r, q, g.get(r, q) + share / area);
            }
        }
    }
    FeatureMap::new(channels, cu(cell), "shallow")
}

impl<S: Scalar> FeatureProvider<S> for ShallowExtractor {
    fn extract(&self, patch: &Image<S>, _frame_index: usize) -> Result<FeatureMap<S>, FeatureError> {
        extract_shallow(patch, self.cell)
    }

    fn stride(&self) -> usize {
        self.cell
    }

    fn id(&self) -> String {
        format!("shallow(cell={})", self.cell)
    }
}

/// Copies a periodic line into `ext` padded by `half` wrapped samples on each
/// side, so `ext[j] = line[(j - half) mod n]`.
fn fill_wrapped<S: Scalar>(ext: &mut Vec<S>, n: usize, half: usize, get: impl Fn(usize) -> S) {
    ext.clear();
    ext.extend((0..n + 2 * half).map(|j| get((j + n * (half / n + 1) - half) % n)));
}

#[inline]
fn dot_at<S: Scalar>(k: &[S], ext: &[S], x: usize) -> S {
    let mut acc = S::zero();
    for (&wk, &v) in k.iter().zip(&ext[x..x + k.len()]) {
        acc = acc + wk * v;
    }
    acc
}

/// Periodic separable Gaussian smoothing of a full-resolution plane.
fn smooth_periodic<S: Scalar>(plane: &[S], w: usize, h: usize, sigma: S) -> Vec<S> {
    let k = gaussian_kernel(sigma);
    let half = k.len() / 2;
    let mut ext = Vec::new();
    let mut tmp = vec![S::zero(); w * h];
    for y in 0..h {
        fill_wrapped(&mut ext, w, half, |x| plane[y * w + x]);
        for x in 0..w {
            tmp[y * w + x] = dot_at(&k, &ext, x);
        }
    }
    let mut out = vec![S::zero(); w * h];
    for x in 0..w {
        fill_wrapped(&mut ext, h, half, |y| tmp[y * w + x]);
        for y in 0..h {
            out[y * w + x] = dot_at(&k, &ext, y);
        }
    }
    out
}

/// Periodic Gaussian pooling evaluated only at the cell sample positions
/// `stride · c + stride / 2`.
fn pool_at_stride<S: Scalar>(plane: &[S], w: usize, h: usize, stride: usize, sigma: S) -> Grid<S> {
    let k = gaussian_kernel(sigma);
    let half = k.len() / 2;
    let (rows, cols) = (h / stride, w / stride);
    let off = stride / 2;
    let mut ext = Vec::new();
    // Horizontal pass at sampled columns only.
    let mut tmp = vec![S::zero(); h * cols];
    for y in 0..h {
        fill_wrapped(&mut ext, w, half, |x| plane[y * w + x]);
        for q in 0..cols {
            tmp[y * cols + q] = dot_at(&k, &ext, q * stride + off);
        }
    }
    let mut out = Grid::zeros(rows, cols);
    for q in 0..cols {
        fill_wrapped(&mut ext, h, half, |y| tmp[y * cols + q]);
        for r in 0..rows {
            out.set(r, q, dot_at(&k, &ext, r * stride + off));
        }
    }
    out
}

/// Smooth coarse-stride features standing in for deep activations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeepProxyExtractor {
    pub octaves: usize,
    pub stride: usize,
    /// Divide gradient channels by their global RMS (brightness invariance).
    pub normalize: bool,
}

impl Default for DeepProxyExtractor {
    fn default() -> Self {
        Self {
            octaves: 3,
            stride: 8,
            normalize: true,
        }
    }
}

/// Multi-octave oriented gradient energy plus chromaticity occupancy, pooled
/// with a Gaussian of standard deviation `0.75 · stride` and sampled at `stride`.
pub fn extract_deep_proxy<S: Scalar>(
    patch: &Image<S>,
    octaves: usize,
    stride: usize,
    normalize: bool,
) -> Result<FeatureMap<S>, FeatureError> {
    if stride < 8 {
        return Err(FeatureError::StrideTooSmall(stride));
    }
    let (rows, cols) = check_divisible(patch, stride)?;
    let (w, h) = (patch.width(), patch.height());
    let pool_sigma = c::<S>(0.75) * cu::<S>(stride);
    let lum = patch.luminance();
    let inv_sqrt2 = c::<S>(std::f64::consts::FRAC_1_SQRT_2);

    let mut grad_channels = Vec::with_capacity(4 * octaves);
    for o in 0..octaves {
        let sigma = c::<S>((1u64 << o) as f64);
        let smoothed = smooth_periodic(&lum, w, h, sigma);
        let (gx, gy) = gradients(&smoothed, w, h);
        let mut planes: [Vec<S>; 4] = std::array::from_fn(|_| vec![S::zero(); w * h]);
        for i in 0..w * h {
            let (a, b) = (gx[i], gy[i]);
            let d1 = (a + b) * inv_sqrt2;
            let d2 = (a - b) * inv_sqrt2;
            planes[0][i] = a * a;
            planes[1][i] = b * b;
            planes[2][i] = d1 * d1;
            planes[3][i] = d2 * d2;
        }
        for p in &planes {
            let pooled = pool_at_stride(p, w, h, stride, pool_sigma);
            grad_channels.push(pooled.map(|v| v.max(S::zero()).sqrt()));
        }
    }
    if normalize {
        let total: S = grad_channels.iter().map(|g| g.norm_sq()).sum();
        let rms = (total / cu::<S>(rows * cols)).sqrt();
        if rms > c::<S>(1e-12) {
            grad_channels = grad_channels.into_iter().map(|g| g.scale(S::one() / rms)).collect();
        }
    }

    let denom = c::<S>(2.0 * CHROMA_BANDWIDTH * CHROMA_BANDWIDTH);
    let tiny = c::<S>(1e-12);
    let mut chroma: Vec<Vec<S>> = vec![vec![S::zero(); w * h]; CHROMA_PROTOTYPES.len()];
    for y in 0..h {
        for x in 0..w {
            let px = rgb(patch, x, y);
            let sum = px[0] + px[1] + px[2];
            let (r, g) = if sum > tiny {
                (px[0] / sum, px[1] / sum)
            } else {
                (c(1.0 / 3.0), c(1.0 / 3.0))
            };
            let mut total = S::zero();
            let mut ws = [S::zero(); CHROMA_PROTOTYPES.len()];
            for (k, p) in CHROMA_PROTOTYPES.iter().enumerate() {
                let d2 = (r - c(p[0])).powi(2) + (g - c(p[1])).powi(2);
                ws[k] = (-d2 / denom).exp();
                total = total + ws[k];
            }
            for k in 0..ws.len() {
                chroma[k][y * w + x] = ws[k] / total;
            }
        }
    }
    let mut channels = grad_channels;
    for plane in &chroma {
        channels.push(pool_at_stride(plane, w, h, stride, pool_sigma));
    }
    FeatureMap::new(channels, cu(stride), "deep_proxy")
}

impl<S: Scalar> FeatureProvider<S> for DeepProxyExtractor {
    fn extract(&self, patch: &Image<S>, _frame_index: usize) -> Result<FeatureMap<S>, FeatureError> {
        extract_deep_proxy(patch, self.octaves, self.stride, self.normalize)
    }

    fn stride(&self) -> usize {
        self.stride
    }

    fn id(&self) -> String {
        format!("deep_proxy(octaves={},stride={})", self.octaves, self.stride)
    }
}

pub const FMAP_MAGIC: [u8; 4] = *b"FMAP";
pub const FMAP_VERSION: u32 = 1;
const FMAP_MAX_VALUES: u64 = 1 << 32;

/// `<template>_<frame:06d>.fmap`
pub fn frame_path(template: &str, frame_index: usize) -> PathBuf {
    PathBuf::from(format!("{template}_{frame_index:06}.fmap"))
}

/// Writes a feature map in the little-endian `FMAP` v1 layout.
pub fn save_external_features<S: Scalar>(path: &Path, features: &FeatureMap<S>) -> Result<(), FeatureError> {
    let mut w = BufWriter::new(File::create(path)?);
    let (h, wd) = features.shape();
    w.write_all(&FMAP_MAGIC)?;
    w.write_u32::<LittleEndian>(FMAP_VERSION)?;
    w.write_u32::<LittleEndian>(features.num_channels() as u32)?;
    w.write_u32::<LittleEndian>(h as u32)?;
    w.write_u32::<LittleEndian>(wd as u32)?;
    w.write_f64::<LittleEndian>(to_f64(features.stride()))?;
    for g in features.channels() {
        for &v in g.as_slice() {
            w.write_f64::<LittleEndian>(to_f64(v))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn truncated(what: &str) -> impl Fn(std::io::Error) -> FeatureError + '_ {
    move |e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            FeatureError::Truncated(what.to_string())
        } else {
            FeatureError::Io(e)
        }
    }
}

/// Reads an `FMAP` file written by [`save_external_features`].
pub fn read_fmap<S: Scalar>(path: &Path) -> Result<FeatureMap<S>, FeatureError> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            FeatureError::MissingFile(path.to_path_buf())
        } else {
            FeatureError::Io(e)
        }
    })?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated("magic"))?;
    if magic != FMAP_MAGIC {
        return Err(FeatureError::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated("version"))?;
    if version != FMAP_VERSION {
        return Err(FeatureError::UnsupportedVersion(version));
    }
    let channels = r.read_u32::<LittleEndian>().map_err(truncated("channels"))?;
    let height = r.read_u32::<LittleEndian>().map_err(truncated("height"))?;
    let width = r.read_u32::<LittleEndian>().map_err(truncated("width"))?;
    let stride = r.read_f64::<LittleEndian>().map_err(truncated("stride"))?;
    if channels == 0 || height == 0 || width == 0 {
        return Err(FeatureError::InvalidHeader(format!(
            "zero dimension: {channels} channels, {height}x{width}"
        )));
    }
    if !(stride.is_finite() && stride > 0.0) {
        return Err(FeatureError::InvalidHeader(format!("stride {stride}")));
    }
    let total = (channels as u64)
        .checked_mul(height as u64)
        .and_then(|v| v.checked_mul(width as u64))
        .filter(|&v| v <= FMAP_MAX_VALUES)
        .ok_or(FeatureError::DimensionOverflow {
            channels,
            height,
            width,
        })?;
    let plane = (height as usize) * (width as usize);
    let mut grids = Vec::with_capacity(channels as usize);
    let mut buf = vec![0f64; plane];
    for _ in 0..total / plane as u64 {
        r.read_f64_into::<LittleEndian>(&mut buf).map_err(truncated("values"))?;
        let data: Vec<S> = buf.iter().map(|&v| c(v)).collect();
        let g = Grid::new(height as usize, width as usize, data)
            .map_err(|e| FeatureError::InvalidHeader(e.to_string()))?;
        grids.push(g);
    }
    FeatureMap::new(grids, c(stride), "external_file")
}

/// Loads the precomputed map for `frame_index` from `<template>_<frame:06d>.fmap`.
pub fn load_external_features<S: Scalar>(template: &str, frame_index: usize) -> Result<FeatureMap<S>, FeatureError> {
    read_fmap(&frame_path(template, frame_index))
}

/// Provider serving precomputed per-frame maps. The patch is ignored; the same
/// map is returned for every scale level and augmentation of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalFeatures {
    pub template: String,
    pub stride: usize,
}

impl<S: Scalar> FeatureProvider<S> for ExternalFeatures {
    fn extract(&self, _patch: &Image<S>, frame_index: usize) -> Result<FeatureMap<S>, FeatureError> {
        load_external_features(&self.template, frame_index)
    }

    fn stride(&self) -> usize {
        self.stride
    }

    fn id(&self) -> String {
        format!("external_file({})", self.template)
    }
}
