//! Periodic 2-D grids and their discrete Fourier transforms.
//!
//! Conventions used throughout the crate:
//!
//! * Indices are `(row, col)`; every grid is periodic, so `(i + height, j)`
//!   addresses the same cell as `(i, j)`.
//! * The forward transform is unnormalized,
//!   `X[k, l] = Σ_{i,j} x[i, j] · exp(-2πi (k·i/H + l·j/W))`, and the inverse
//!   carries the `1/(H·W)` factor. Parseval therefore reads
//!   `Σ |x|² = c · Σ |X|²` with `c = 1/(H·W)` (see [`parseval_constant`]).
//! * Frequency bins are interpreted as signed integers in
//!   `[-⌊n/2⌋, ⌈n/2⌉)`, see [`signed_index`].
//! * The product of two spectra is circular **convolution** in the spatial
//!   domain, `(a ⊛ b)[t] = Σ_s a[s] · b[t - s]`; the conjugate product
//!   `conj(x̂) ⊙ f̂` is circular correlation `Σ_s x[s] · f[s + t]`.

use std::any::{Any, TypeId};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::scalar::{c, ci, cu, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid dimensions must be positive, got {height}x{width}")]
    EmptyShape { height: usize, width: usize },
    #[error("expected {expected} values for the grid, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("grid value at index {index} is not finite")]
    NonFinite { index: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("resample target must be at least 2x2, got {height}x{width}")]
    ResampleTooSmall { height: usize, width: usize },
}

/// Maps a bin index in `0..n` to its signed frequency.
#[inline]
pub fn signed_index(k: usize, n: usize) -> isize {
    if k < n.div_ceil(2) {
        k as isize
    } else {
        k as isize - n as isize
    }
}

/// Maps a signed (possibly out-of-range) index onto `0..n`.
#[inline]
pub fn wrap_index(k: isize, n: usize) -> usize {
    k.rem_euclid(n as isize) as usize
}

/// Scale between spatial and spectral squared norms for an `h × w` grid.
pub fn parseval_constant<S: Scalar>(height: usize, width: usize) -> S {
    S::one() / cu(height * width)
}

/// Real-valued periodic grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<S> {
    height: usize,
    width: usize,
    data: Vec<S>,
}

impl<S: Scalar> Grid<S> {
    pub fn new(height: usize, width: usize, data: Vec<S>) -> Result<Self, GridError> {
        if height == 0 || width == 0 {
            return Err(GridError::EmptyShape { height, width });
        }
        if data.len() != height * width {
            return Err(GridError::LengthMismatch {
                expected: height * width,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, S::zero())
    }

    pub fn filled(height: usize, width: usize, value: S) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.width + j]
    }

    /// Periodic access with arbitrary signed indices.
    #[inline]
    pub fn get_wrapped(&self, i: isize, j: isize) -> S {
        self.get(wrap_index(i, self.height), wrap_index(j, self.width))
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.width + j] = v;
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self, GridError> {
        self.check_shape(other.shape())?;
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, k: S) -> Self {
        self.map(|v| v * k)
    }

    pub fn add(&self, other: &Self) -> Result<Self, GridError> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, GridError> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<S, GridError> {
        self.check_shape(other.shape())?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> S {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<S, GridError> {
        self.check_shape(other.shape())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max))
    }

    /// Position of the maximum; ties resolve to the first cell in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (idx, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = idx;
            }
        }
        (best / self.width, best % self.width)
    }

    pub fn max(&self) -> S {
        self.data.iter().copied().fold(S::neg_infinity(), S::max)
    }

    pub fn min(&self) -> S {
        self.data.iter().copied().fold(S::infinity(), S::min)
    }

    /// Cyclic rotation by whole cells: the value at `(i, j)` moves to `(i + di, j + dj)`.
    pub fn roll(&self, di: isize, dj: isize) -> Self {
        let mut out = Self::zeros(self.height, self.width);
        for i in 0..self.height {
            let ti = wrap_index(i as isize + di, self.height);
            for j in 0..self.width {
                let tj = wrap_index(j as isize + dj, self.width);
                out.data[ti * self.width + tj] = self.data[i * self.width + j];
            }
        }
        out
    }

    /// Horizontal mirror, `out[i][j] = in[i][W - 1 - j]`.
    pub fn flip_cols(&self) -> Self {
        Self::from_fn(self.height, self.width, |i, j| {
            self.get(i, self.width - 1 - j)
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_shape(&self, other: (usize, usize)) -> Result<(), GridError> {
        if self.shape() != other {
            return Err(GridError::ShapeMismatch {
                left: self.shape(),
                right: other,
            });
        }
        Ok(())
    }
}

/// Complex coefficient grid; the transform of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<S> {
    height: usize,
    width: usize,
    data: Vec<Complex<S>>,
}

impl<S: Scalar> Spectrum<S> {
    pub fn new(height: usize, width: usize, data: Vec<Complex<S>>) -> Result<Self, GridError> {
        if height == 0 || width == 0 {
            return Err(GridError::EmptyShape { height, width });
        }
        if data.len() != height * width {
            return Err(GridError::LengthMismatch {
                expected: height * width,
                actual: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "spectrum dimensions must be positive");
        Self {
            height,
            width,
            data: vec![Complex::new(S::zero(), S::zero()); height * width],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> Complex<S>,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for k in 0..height {
            for l in 0..width {
                data.push(f(k, l));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn as_slice(&self) -> &[Complex<S>] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [Complex<S>] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize) -> Complex<S> {
        self.data[k * self.width + l]
    }

    #[inline]
    pub fn get_wrapped(&self, k: isize, l: isize) -> Complex<S> {
        self.get(wrap_index(k, self.height), wrap_index(l, self.width))
    }

    #[inline]
    pub fn set(&mut self, k: usize, l: usize, v: Complex<S>) {
        self.data[k * self.width + l] = v;
    }

    pub fn scale(&self, k: S) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    /// Elementwise product `self ⊙ other`.
    pub fn mul(&self, other: &Self) -> Result<Self, GridError> {
        self.zip_with(other, |a, b| a * b)
    }

    /// Elementwise `conj(self) ⊙ other`.
    pub fn conj_mul(&self, other: &Self) -> Result<Self, GridError> {
        self.zip_with(other, |a, b| a.conj() * b)
    }

    pub fn add(&self, other: &Self) -> Result<Self, GridError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, GridError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn norm_sq(&self) -> S {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Real inner product `Re Σ conj(self) · other`.
    pub fn inner(&self, other: &Self) -> Result<S, GridError> {
        self.check_shape(other.shape())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum())
    }

    /// Largest `|X[k] - conj(X[-k])|`; zero for transforms of real grids.
    pub fn conjugate_asymmetry(&self) -> S {
        let mut worst = S::zero();
        for k in 0..self.height {
            let nk = (self.height - k) % self.height;
            for l in 0..self.width {
                let nl = (self.width - l) % self.width;
                let d = (self.get(k, l) - self.get(nk, nl).conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// Projects onto the Hermitian-symmetric subspace (spectra of real grids).
    pub fn symmetrize(&mut self) {
        let half = c::<S>(0.5);
        let orig = self.data.clone();
        for k in 0..self.height {
            let nk = (self.height - k) % self.height;
            for l in 0..self.width {
                let nl = (self.width - l) % self.width;
                let a = orig[k * self.width + l];
                let b = orig[nk * self.width + nl].conj();
                self.data[k * self.width + l] = (a + b) * half;
            }
        }
    }

    fn zip_with(
        &self,
        other: &Self,
        f: impl Fn(Complex<S>, Complex<S>) -> Complex<S>,
    ) -> Result<Self, GridError> {
        self.check_shape(other.shape())?;
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    fn check_shape(&self, other: (usize, usize)) -> Result<(), GridError> {
        if self.shape() != other {
            return Err(GridError::ShapeMismatch {
                left: self.shape(),
                right: other,
            });
        }
        Ok(())
    }
}

type PlanCache = Mutex<HashMap<(TypeId, usize, bool), Box<dyn Any + Send + Sync>>>;

fn plan<S: Scalar>(len: usize, inverse: bool) -> Arc<dyn Fft<S>> {
    static CACHE: OnceLock<PlanCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    let entry = guard
        .entry((TypeId::of::<S>(), len, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::<S>::new();
            let fft = if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            };
            Box::new(fft)
        });
    entry
        .downcast_ref::<Arc<dyn Fft<S>>>()
        .expect("plan cache keyed by scalar type")
        .clone()
}

fn fft2_in_place<S: Scalar>(data: &mut [Complex<S>], height: usize, width: usize, inverse: bool) {
    plan::<S>(width, inverse).process(data);
    let mut t = vec![Complex::new(S::zero(), S::zero()); data.len()];
    for i in 0..height {
        for j in 0..width {
            t[j * height + i] = data[i * width + j];
        }
    }
    plan::<S>(height, inverse).process(&mut t);
    for i in 0..height {
        for j in 0..width {
            data[i * width + j] = t[j * height + i];
        }
    }
}

/// Forward 2-D DFT (unnormalized).
pub fn dft<S: Scalar>(g: &Grid<S>) -> Spectrum<S> {
    let mut data: Vec<Complex<S>> = g.data.iter().map(|&v| Complex::new(v, S::zero())).collect();
    fft2_in_place(&mut data, g.height, g.width, false);
    Spectrum {
        height: g.height,
        width: g.width,
        data,
    }
}

/// Inverse 2-D DFT returning the full complex result (with the `1/(H·W)` factor).
pub fn idft_complex<S: Scalar>(s: &Spectrum<S>) -> Vec<Complex<S>> {
    let mut data = s.data.clone();
    fft2_in_place(&mut data, s.height, s.width, true);
    let norm = parseval_constant::<S>(s.height, s.width);
    for v in &mut data {
        *v = *v * norm;
    }
    data
}

/// Inverse transform, keeping the real part, plus the largest discarded
/// imaginary magnitude.
pub fn idft_with_residue<S: Scalar>(s: &Spectrum<S>) -> (Grid<S>, S) {
    let data = idft_complex(s);
    let residue = data.iter().map(|v| v.im.abs()).fold(S::zero(), S::max);
    let grid = Grid {
        height: s.height,
        width: s.width,
        data: data.into_iter().map(|v| v.re).collect(),
    };
    (grid, residue)
}

/// Inverse 2-D DFT (real part).
pub fn idft<S: Scalar>(s: &Spectrum<S>) -> Grid<S> {
    idft_with_residue(s).0
}

/// Circular convolution via the transform.
pub fn convolve<S: Scalar>(a: &Grid<S>, b: &Grid<S>) -> Result<Grid<S>, GridError> {
    Ok(idft(&dft(a).mul(&dft(b))?))
}

/// Circular cross-correlation `out[t] = Σ_s x[s] · f[s + t]` via the transform.
pub fn correlate<S: Scalar>(x: &Grid<S>, f: &Grid<S>) -> Result<Grid<S>, GridError> {
    Ok(idft(&dft(x).conj_mul(&dft(f))?))
}

/// Per-axis coefficient transfer used by [`resample_spectrum`]: returns
/// `(source bin, destination bin, weight)` triples.
fn axis_transfer(old: usize, new: usize) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    if new >= old {
        for k in 0..old {
            let s = signed_index(k, old);
            if old % 2 == 0 && s == -(old as isize / 2) && new > old {
                out.push((k, wrap_index(s, new), 0.5));
                out.push((k, wrap_index(-s, new), 0.5));
            } else {
                out.push((k, wrap_index(s, new), 1.0));
            }
        }
    } else {
        for k in 0..old {
            let s = signed_index(k, old);
            let half = new as isize / 2;
            let keep = if new % 2 == 0 {
                s > -half && s < half
            } else {
                s.abs() <= half
            };
            if keep {
                out.push((k, wrap_index(s, new), 1.0));
            } else if new % 2 == 0 && s.abs() == half {
                out.push((k, wrap_index(-half, new), 1.0));
            }
        }
    }
    out
}

/// Changes the size of a spectrum by zero-padding or truncating frequencies.
///
/// Coefficients are rescaled so the spatial amplitude is preserved. For even
/// sizes the Nyquist bin is split (upsampling) or folded (downsampling) so
/// that real grids stay real and band-limited grids round-trip.
pub fn resample_spectrum<S: Scalar>(s: &Spectrum<S>, new_h: usize, new_w: usize) -> Spectrum<S> {
    let rows = axis_transfer(s.height, new_h);
    let cols = axis_transfer(s.width, new_w);
    let gain: S = cu::<S>(new_h * new_w) / cu::<S>(s.height * s.width);
    let mut out = Spectrum::zeros(new_h, new_w);
    for &(ks, kd, wk) in &rows {
        for &(ls, ld, wl) in &cols {
            let v = s.get(ks, ls) * (c::<S>(wk * wl) * gain);
            let idx = kd * new_w + ld;
            out.data[idx] = out.data[idx] + v;
        }
    }
    out
}

/// Fourier-domain resampling of a periodic grid to `new_h × new_w`.
pub fn resample<S: Scalar>(g: &Grid<S>, new_h: usize, new_w: usize) -> Result<Grid<S>, GridError> {
    if new_h < 2 || new_w < 2 {
        return Err(GridError::ResampleTooSmall {
            height: new_h,
            width: new_w,
        });
    }
    if g.shape() == (new_h, new_w) {
        return Ok(g.clone());
    }
    Ok(idft(&resample_spectrum(&dft(g), new_h, new_w)))
}

/// Multiplies a spectrum by the phase ramp of a spatial shift by `(di, dj)` cells.
///
/// Even-length Nyquist bins receive the real part of their phase factor,
/// which keeps spectra of real grids Hermitian.
pub fn phase_shift<S: Scalar>(s: &Spectrum<S>, di: S, dj: S) -> Spectrum<S> {
    let (h, w) = s.shape();
    let two_pi = S::TAU();
    let ramp = |n: usize, d: S| -> Vec<Complex<S>> {
        (0..n)
            .map(|k| {
                let f = signed_index(k, n);
                let angle = -two_pi * ci::<S>(f) * d / cu::<S>(n);
                if n % 2 == 0 && f == -(n as isize / 2) {
                    Complex::new(angle.cos(), S::zero())
                } else {
                    Complex::new(angle.cos(), angle.sin())
                }
            })
            .collect()
    };
    let rk = ramp(h, di);
    let rl = ramp(w, dj);
    Spectrum::from_fn(h, w, |k, l| s.get(k, l) * rk[k] * rl[l])
}

/// Cyclic shift by `(di, dj)` cells: the value at `t` moves to `t + d`.
///
/// Integer shifts are exact index rotations; fractional shifts use the
/// Fourier phase ramp (see [`phase_shift`] for the Nyquist treatment).
pub fn cyclic_shift<S: Scalar>(g: &Grid<S>, di: S, dj: S) -> Grid<S> {
    if di == di.round() && dj == dj.round() {
        let ri = di.to_isize().unwrap_or(0);
        let rj = dj.to_isize().unwrap_or(0);
        return g.roll(ri, rj);
    }
    idft(&phase_shift(&dft(g), di, dj))
}

/// Periodic (Hann) window of the given size, peaking at the grid centre
/// `(h/2, w/2)` with value 1.
pub fn hann_window<S: Scalar>(height: usize, width: usize) -> Grid<S> {
    let axis = |n: usize| -> Vec<S> {
        (0..n)
            .map(|i| {
                c::<S>(0.5) * (S::one() - (S::TAU() * cu::<S>(i) / cu::<S>(n)).cos())
            })
            .collect()
    };
    let wr = axis(height);
    let wc = axis(width);
    Grid::from_fn(height, width, |i, j| wr[i] * wc[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(h: usize, w: usize, seed: u64) -> Grid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Direct O(N⁴) transform, independent of the FFT path.
    fn naive_dft(g: &Grid<f64>) -> Vec<Complex<f64>> {
        let (h, w) = g.shape();
        let mut out = Vec::with_capacity(h * w);
        for k in 0..h {
            for l in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for i in 0..h {
                    for j in 0..w {
                        let ang = -std::f64::consts::TAU
                            * ((k * i) as f64 / h as f64 + (l * j) as f64 / w as f64);
                        acc += Complex::new(ang.cos(), ang.sin()) * g.get(i, j);
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn constant_grid_has_only_dc() {
        let g = Grid::filled(8, 8, 1.0f64);
        let s = dft(&g);
        assert!((s.get(0, 0).re - 64.0).abs() < 1e-12);
        for k in 0..8 {
            for l in 0..8 {
                if (k, l) != (0, 0) {
                    assert!(s.get(k, l).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut g = Grid::zeros(8, 8);
        g.set(0, 0, 1.0f64);
        let s = dft(&g);
        for v in s.as_slice() {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_matches_direct_summation() {
        let g = random_grid(6, 10, 3);
        let s = dft(&g);
        for (a, b) in s.as_slice().iter().zip(naive_dft(&g)) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        let g = random_grid(16, 16, 7);
        let s = dft(&g);
        let back = idft(&s);
        let rel = g.max_abs_diff(&back).unwrap() / g.max();
        assert!(rel < 1e-10);
        // Both sides by direct summation.
        let spatial: f64 = g.as_slice().iter().map(|v| v * v).sum();
        let spectral: f64 = naive_dft(&g).iter().map(|v| v.norm_sqr()).sum();
        let cst: f64 = parseval_constant(16, 16);
        assert!((spatial - cst * spectral).abs() / spatial < 1e-10);
        assert!(s.conjugate_asymmetry() / s.norm_sq().sqrt() < 1e-10);
    }

    #[test]
    fn parseval_inner_products() {
        let a = random_grid(12, 9, 1);
        let b = random_grid(12, 9, 2);
        let lhs = a.dot(&b).unwrap();
        let rhs = parseval_constant::<f64>(12, 9) * dft(&a).inner(&dft(&b)).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn convolution_and_correlation_theorems() {
        let x = random_grid(8, 8, 11);
        let f = random_grid(8, 8, 12);
        let conv = convolve(&x, &f).unwrap();
        let corr = correlate(&x, &f).unwrap();
        for ti in 0..8isize {
            for tj in 0..8isize {
                let mut cv = 0.0;
                let mut cr = 0.0;
                for si in 0..8isize {
                    for sj in 0..8isize {
                        cv += x.get_wrapped(si, sj) * f.get_wrapped(ti - si, tj - sj);
                        cr += x.get_wrapped(si, sj) * f.get_wrapped(si + ti, sj + tj);
                    }
                }
                assert!((conv.get(ti as usize, tj as usize) - cv).abs() < 1e-9);
                assert!((corr.get(ti as usize, tj as usize) - cr).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn resample_constant_and_round_trip() {
        let g = Grid::filled(8, 8, 2.5f64);
        let up = resample(&g, 16, 16).unwrap();
        for v in up.as_slice() {
            assert!((v - 2.5).abs() < 1e-12);
        }
        let r = random_grid(8, 8, 5);
        let back = resample(&resample(&r, 32, 32).unwrap(), 8, 8).unwrap();
        assert!(r.max_abs_diff(&back).unwrap() < 1e-9);
        // Odd intermediate size also round-trips for grids without Nyquist content.
        let odd = resample(&resample(&random_grid(8, 8, 6), 7, 7).unwrap(), 7, 7).unwrap();
        let back = resample(&resample(&odd, 21, 15).unwrap(), 7, 7).unwrap();
        assert!(odd.max_abs_diff(&back).unwrap() < 1e-9);
    }

    #[test]
    fn resample_cosine_matches_analytic_values() {
        for (fk, fl) in [(1usize, 2usize), (3, 0), (4, 1)] {
            let g = Grid::from_fn(8, 8, |i, j| {
                (std::f64::consts::TAU * (fk as f64 * i as f64 / 8.0 + fl as f64 * j as f64 / 8.0))
                    .cos()
            });
            let up = resample(&g, 16, 16).unwrap();
            for i in 0..16 {
                for j in 0..16 {
                    // At the row Nyquist (fk = 4) the sine component is invisible on
                    // the coarse grid, so only the separable cosine product survives.
                    let a = std::f64::consts::TAU * fk as f64 * i as f64 / 16.0;
                    let b = std::f64::consts::TAU * fl as f64 * j as f64 / 16.0;
                    let sin_part = if fk == 4 { 0.0 } else { a.sin() * b.sin() };
                    let expected = a.cos() * b.cos() - sin_part;
                    assert!((up.get(i, j) - expected).abs() < 1e-9, "({fk},{fl}) at ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn resample_rejects_tiny_targets() {
        let g = Grid::filled(4, 4, 1.0f64);
        assert!(matches!(
            resample(&g, 1, 4),
            Err(GridError::ResampleTooSmall { .. })
        ));
    }

    #[test]
    fn shifts() {
        let g = random_grid(8, 8, 9);
        assert_eq!(cyclic_shift(&g, 0.0, 0.0), g);
        let mut imp = Grid::zeros(8, 8);
        imp.set(0, 0, 1.0f64);
        let moved = cyclic_shift(&imp, 3.0, 5.0);
        assert_eq!(moved.get(3, 5), 1.0);
        assert!((moved.sum() - 1.0).abs() < 1e-12);
        // Fractional phase shift of an integer amount agrees with rotation.
        let via_phase = idft(&phase_shift(&dft(&imp), 3.0, 5.0));
        assert!(via_phase.max_abs_diff(&moved).unwrap() < 1e-10);
        // Half-cell shifts compose to the identity on grids without Nyquist bins.
        let odd = random_grid(9, 7, 10);
        let there = cyclic_shift(&odd, 0.5, 0.0);
        let back = cyclic_shift(&there, -0.5, 0.0);
        assert!(odd.max_abs_diff(&back).unwrap() < 1e-9);
    }

    #[test]
    fn linearity() {
        let a = random_grid(8, 6, 21);
        let b = random_grid(8, 6, 22);
        let (ka, kb) = (0.7, -1.9);
        let comb = a.scale(ka).add(&b.scale(kb)).unwrap();
        let lhs = dft(&comb);
        let rhs = dft(&a).scale(ka).add(&dft(&b).scale(kb)).unwrap();
        assert!(lhs.sub(&rhs).unwrap().norm_sq().sqrt() < 1e-10);
        let lhs = resample(&comb, 12, 10).unwrap();
        let rhs = resample(&a, 12, 10)
            .unwrap()
            .scale(ka)
            .add(&resample(&b, 12, 10).unwrap().scale(kb))
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
        let lhs = cyclic_shift(&comb, 0.3, -1.2);
        let rhs = cyclic_shift(&a, 0.3, -1.2)
            .scale(ka)
            .add(&cyclic_shift(&b, 0.3, -1.2).scale(kb))
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn rejects_non_finite_values() {
        assert!(matches!(
            Grid::new(1, 2, vec![0.0f64, f64::NAN]),
            Err(GridError::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn works_in_single_precision() {
        let g = Grid::from_fn(8, 8, |i, j| (i as f32 * 0.3 - j as f32 * 0.1).sin());
        let back = idft(&dft(&g));
        assert!(g.max_abs_diff(&back).unwrap() < 1e-5);
    }
}
