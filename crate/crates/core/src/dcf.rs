//! Discrete multi-channel discriminative correlation filter.
//!
//! The score of a (projected, resampled) sample `x` is
//! `y = idft(Σ_d f̂^d ⊙ x̂^d)`, i.e. the circular convolution `Σ_d f^d ⊛ x^d`.
//! Training minimizes, in spatial units,
//!
//! ```text
//! E(f) = Σ_j α_j ‖Σ_d f^d ⊛ x_j^d − y_j‖² + Σ_d ‖w ⊙ f^d‖² + λ_proj ‖P‖²_F
//! ```
//!
//! which in the Fourier domain reads `c · (Σ_j α_j ‖Σ_d x̂ f̂ − ŷ‖² + Σ_d ‖ŵ ⊛ f̂^d‖²)`
//! with `c = 1/(H·W)` and `ŵ` the normalized, truncated coefficients of `w`.
//! The projection term is constant because `P` is fixed after initialization.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rustfft::num_complex::Complex;
use thiserror::Error;

use crate::features::FeatureMap;
use crate::grid::{dft, idft, idft_with_residue, parseval_constant, resample, wrap_index, Grid, GridError, Spectrum};
use crate::scalar::{c, cu, to_f64, Scalar};
use crate::training::{gaussian_label, LabelConfig, SampleWeights, TrainingError};

#[derive(Debug, Error)]
pub enum DcfError {
    #[error(transparent)]
    Shape(#[from] GridError),
    #[error("sample has {actual} channels, projection expects {expected}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("projection needs 1 <= out_dims <= {raw}, got {out}")]
    InvalidProjection { raw: usize, out: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sample memory is empty")]
    EmptyMemory,
    #[error("non-finite loss at CG iteration {iteration}")]
    NumericalFailure { iteration: usize },
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error("not a DCFM model file")]
    BadMagic,
    #[error("unsupported DCFM version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Symmetric eigensolver
// ---------------------------------------------------------------------------

/// Eigen-decomposition of a symmetric `n × n` row-major matrix by cyclic
/// Jacobi rotations. Returns eigenvalues in descending order and the
/// matching eigenvectors as columns of a row-major `n × n` matrix.
pub fn symmetric_eigen<S: Scalar>(matrix: &[S], n: usize) -> (Vec<S>, Vec<S>) {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut v = vec![S::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = S::one();
    }
    let fro: S = a.iter().map(|&x| x * x).sum::<S>().sqrt();
    let eps = S::epsilon() * fro;
    for _sweep in 0..100 {
        let mut off = S::zero();
        for p in 0..n {
            for q in p + 1..n {
                off = off + a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= eps {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == S::zero() {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (c::<S>(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                let cs = S::one() / (t * t + S::one()).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = cs * akp - sn * akq;
                    a[k * n + q] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = cs * apk - sn * aqk;
                    a[q * n + k] = sn * apk + cs * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = cs * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + cs * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[j * n + j]
            .partial_cmp(&a[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values: Vec<S> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![S::zero(); n * n];
    for (col, &src) in order.iter().enumerate() {
        // Sign convention: largest-magnitude component positive.
        let mut pivot = S::zero();
        for k in 0..n {
            if v[k * n + src].abs() > pivot.abs() {
                pivot = v[k * n + src];
            }
        }
        let sign = if pivot < S::zero() { -S::one() } else { S::one() };
        for k in 0..n {
            vectors[k * n + col] = sign * v[k * n + src];
        }
    }
    (values, vectors)
}

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

/// Orthonormal channel projection `P` (raw × out), applied as
/// `x_out[k] = Σ_r P[r, k] · x_raw[r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection<S> {
    raw_dims: usize,
    out_dims: usize,
    matrix: Vec<S>,
    degenerate: bool,
    retained_energy: S,
}

impl<S: Scalar> Projection<S> {
    /// Identity projection on `dims` channels.
    pub fn identity(dims: usize) -> Self {
        let mut matrix = vec![S::zero(); dims * dims];
        for i in 0..dims {
            matrix[i * dims + i] = S::one();
        }
        Self {
            raw_dims: dims,
            out_dims: dims,
            matrix,
            degenerate: false,
            retained_energy: S::one(),
        }
    }

    pub fn raw_dims(&self) -> usize {
        self.raw_dims
    }

    pub fn out_dims(&self) -> usize {
        self.out_dims
    }

    /// Row-major `raw × out` matrix.
    pub fn matrix(&self) -> &[S] {
        &self.matrix
    }

    pub fn get(&self, raw: usize, out: usize) -> S {
        self.matrix[raw * self.out_dims + out]
    }

    /// True when the covariance had rank below `out_dims`; the trailing
    /// columns are then an arbitrary orthonormal completion.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Fraction of (mean-centred) channel variance captured by the columns.
    pub fn retained_energy(&self) -> S {
        self.retained_energy
    }

    pub fn frobenius_sq(&self) -> S {
        self.matrix.iter().map(|&v| v * v).sum()
    }

    pub fn apply(&self, sample: &FeatureMap<S>) -> Result<Vec<Grid<S>>, DcfError> {
        if sample.num_channels() != self.raw_dims {
            return Err(DcfError::ChannelMismatch {
                expected: self.raw_dims,
                actual: sample.num_channels(),
            });
        }
        let (h, w) = sample.shape();
        let mut out: Vec<Vec<S>> = vec![vec![S::zero(); h * w]; self.out_dims];
        for (r, ch) in sample.channels().iter().enumerate() {
            for (k, dst) in out.iter_mut().enumerate() {
                let p = self.get(r, k);
                if p == S::zero() {
                    continue;
                }
                for (d, &x) in dst.iter_mut().zip(ch.as_slice()) {
                    *d = *d + p * x;
                }
            }
        }
        out.into_iter()
            .map(|data| Grid::new(h, w, data).map_err(DcfError::from))
            .collect()
    }
}

/// Principal-component projection from the channel covariance of `sample`.
pub fn init_projection<S: Scalar>(sample: &FeatureMap<S>, out_dims: usize) -> Result<Projection<S>, DcfError> {
    let d = sample.num_channels();
    if out_dims == 0 || out_dims > d {
        return Err(DcfError::InvalidProjection { raw: d, out: out_dims });
    }
    let n = cu::<S>(sample.shape().0 * sample.shape().1);
    let means: Vec<S> = sample.channels().iter().map(|g| g.sum() / n).collect();
    let centred: Vec<Vec<S>> = sample
        .channels()
        .iter()
        .zip(&means)
        .map(|(g, &m)| g.as_slice().iter().map(|&v| v - m).collect())
        .collect();
    let mut cov = vec![S::zero(); d * d];
    for a in 0..d {
        for b in a..d {
            let v: S = centred[a].iter().zip(&centred[b]).map(|(&x, &y)| x * y).sum::<S>() / n;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    let (values, vectors) = symmetric_eigen(&cov, d);
    let trace: S = values.iter().map(|&v| v.max(S::zero())).sum();
    let top = values[0].max(S::zero());
    let rank = values
        .iter()
        .filter(|&&v| v > c::<S>(1e-12) * top && v > S::zero())
        .count();
    let kept: S = values[..out_dims].iter().map(|&v| v.max(S::zero())).sum();
    let retained_energy = if trace > S::zero() { kept / trace } else { S::one() };
    let mut matrix = vec![S::zero(); d * out_dims];
    for r in 0..d {
        for k in 0..out_dims {
            matrix[r * out_dims + k] = vectors[r * d + k];
        }
    }
    Ok(Projection {
        raw_dims: d,
        out_dims,
        matrix,
        degenerate: rank < out_dims,
        retained_energy,
    })
}

// ---------------------------------------------------------------------------
// Spatial regularizer
// ---------------------------------------------------------------------------

/// Fourier coefficients `ŵ` of the spatial weight, on a `(2r+1)²` support
/// around the zero frequency. The coefficients are normalized so that
/// `ŵ ⊛ f̂ = dft(w ⊙ f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialRegularizer<S> {
    radius: usize,
    coeffs: Vec<Complex<S>>,
}

/// Parameters of the quadratic-bowl weight `w(t) = c0 + c1·((t1/a)² + (t2/b)²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerConfig<S> {
    /// Weight `c0` at the target centre.
    pub base: S,
    /// Ratio of the weight at the patch edge to the centre weight.
    pub edge_ratio: S,
    /// Support radius of `ŵ`; the support is `(2r+1) × (2r+1)`, at most 5×5.
    pub radius: usize,
}

impl<S: Scalar> Default for RegularizerConfig<S> {
    fn default() -> Self {
        Self {
            base: c(0.1),
            edge_ratio: c(10.0),
            radius: 2,
        }
    }
}

impl<S: Scalar> SpatialRegularizer<S> {
    /// `ŵ = √λ · δ`: plain ridge penalty `λ ‖f‖²`.
    pub fn ridge(lambda: S) -> Self {
        Self {
            radius: 0,
            coeffs: vec![Complex::new(lambda.sqrt(), S::zero())],
        }
    }

    /// Builds from explicit coefficients on a `(2r+1)²` support, indexed
    /// `[(k + r)·(2r+1) + (l + r)]` for signed frequencies `k, l ∈ [-r, r]`.
    /// The coefficients are projected onto Hermitian symmetry so `w` is real.
    pub fn from_coeffs(radius: usize, coeffs: Vec<Complex<S>>) -> Result<Self, DcfError> {
        let side = 2 * radius + 1;
        if radius > 2 {
            return Err(DcfError::InvalidConfig(format!("regularizer support radius {radius} exceeds 2")));
        }
        if coeffs.len() != side * side {
            return Err(DcfError::InvalidConfig(format!(
                "expected {} regularizer coefficients, got {}",
                side * side,
                coeffs.len()
            )));
        }
        let half = c::<S>(0.5);
        let sym = (0..side * side)
            .map(|idx| {
                let mirror = side * side - 1 - idx;
                (coeffs[idx] + coeffs[mirror].conj()) * half
            })
            .collect();
        Ok(Self { radius, coeffs: sym })
    }

    /// Truncated, normalized transform of a spatial weight grid.
    pub fn from_weight(weight: &Grid<S>, radius: usize) -> Result<Self, DcfError> {
        let (h, w) = weight.shape();
        if 2 * radius + 1 > h || 2 * radius + 1 > w {
            return Err(DcfError::InvalidConfig(format!(
                "regularizer support {0}x{0} larger than the {h}x{w} grid",
                2 * radius + 1
            )));
        }
        let spec = dft(weight);
        let norm = parseval_constant::<S>(h, w);
        let r = radius as isize;
        let mut coeffs = Vec::with_capacity((2 * radius + 1).pow(2));
        for k in -r..=r {
            for l in -r..=r {
                coeffs.push(spec.get(wrap_index(k, h), wrap_index(l, w)) * norm);
            }
        }
        Self::from_coeffs(radius, coeffs)
    }

    /// Quadratic bowl centred on the patch centre (where the filter support of
    /// a centred target lives), with target size `(a, b)` in cells.
    pub fn bowl(resolution: (usize, usize), target_cells: (S, S), cfg: &RegularizerConfig<S>) -> Result<Self, DcfError> {
        let (h, w) = resolution;
        let (a, b) = target_cells;
        if !(a > S::zero() && b > S::zero() && cfg.base > S::zero() && cfg.edge_ratio >= S::one()) {
            return Err(DcfError::InvalidConfig("bowl regularizer needs positive size, base and edge_ratio >= 1".into()));
        }
        let half = c::<S>(0.5);
        let edge = (cu::<S>(h) * half / a).powi(2);
        let c1 = (cfg.edge_ratio - S::one()) * cfg.base / edge;
        let centred = |i: usize, n: usize| -> S {
            let t = cu::<S>(i) - cu::<S>(n) * half;
            let p = cu::<S>(n);
            t - (t / p).round() * p
        };
        let grid = Grid::from_fn(h, w, |i, j| {
            let t1 = centred(i, h) / a;
            let t2 = centred(j, w) / b;
            cfg.base + c1 * (t1 * t1 + t2 * t2)
        });
        Self::from_weight(&grid, cfg.radius)
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn coeffs(&self) -> &[Complex<S>] {
        &self.coeffs
    }

    fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// `ŵ ⊛ f̂` (periodic).
    pub fn apply(&self, f: &Spectrum<S>) -> Spectrum<S> {
        let (h, w) = f.shape();
        let r = self.radius as isize;
        let side = self.side();
        Spectrum::from_fn(h, w, |k, l| {
            let mut acc = Complex::new(S::zero(), S::zero());
            for m in -r..=r {
                for n in -r..=r {
                    let coef = self.coeffs[((m + r) as usize) * side + (n + r) as usize];
                    acc = acc + coef * f.get_wrapped(k as isize - m, l as isize - n);
                }
            }
            acc
        })
    }

    /// Adjoint of [`apply`](Self::apply): `Σ_m conj(ŵ_m) · g[k + m]`.
    pub fn apply_adjoint(&self, g: &Spectrum<S>) -> Spectrum<S> {
        let (h, w) = g.shape();
        let r = self.radius as isize;
        let side = self.side();
        Spectrum::from_fn(h, w, |k, l| {
            let mut acc = Complex::new(S::zero(), S::zero());
            for m in -r..=r {
                for n in -r..=r {
                    let coef = self.coeffs[((m + r) as usize) * side + (n + r) as usize];
                    acc = acc + coef.conj() * g.get_wrapped(k as isize + m, l as isize + n);
                }
            }
            acc
        })
    }

    /// Diagonal of `WᴴW`, identical for every frequency.
    fn gram_diagonal(&self) -> S {
        self.coeffs.iter().map(|v| v.norm_sqr()).sum()
    }

    /// The spatial weight `w` represented by the truncated coefficients.
    pub fn spatial_weight(&self, height: usize, width: usize) -> Grid<S> {
        let mut spec = Spectrum::zeros(height, width);
        let r = self.radius as isize;
        let side = self.side();
        let scale = cu::<S>(height * width);
        for m in -r..=r {
            for n in -r..=r {
                let (k, l) = (wrap_index(m, height), wrap_index(n, width));
                let coef = self.coeffs[((m + r) as usize) * side + (n + r) as usize] * scale;
                spec.set(k, l, spec.get(k, l) + coef);
            }
        }
        idft(&spec)
    }
}

/// `‖ŵ ⊛ f̂‖²` scaled to spatial units; equals `‖w ⊙ f‖²`.
pub fn spatial_reg_term<S: Scalar>(filter: &Spectrum<S>, reg: &SpatialRegularizer<S>) -> S {
    let (h, w) = filter.shape();
    reg.apply(filter).norm_sq() * parseval_constant::<S>(h, w)
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// CG iterations for the initial (first-frame) training.
    pub cg_iterations: usize,
    /// CG iterations for each warm-started update.
    pub update_iterations: usize,
    /// Stop once `‖r‖ / ‖b‖` falls to this value.
    pub cg_tolerance: f64,
    /// Sample memory capacity `M`.
    pub memory_size: usize,
    /// Jacobi (diagonal) preconditioning of the normal equations.
    pub precondition: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            cg_iterations: 60,
            update_iterations: 5,
            cg_tolerance: 1e-6,
            memory_size: 30,
            precondition: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DcfError> {
        if self.cg_iterations == 0 || self.update_iterations == 0 {
            return Err(DcfError::InvalidConfig("CG iteration counts must be positive".into()));
        }
        if !(self.cg_tolerance > 0.0) {
            return Err(DcfError::InvalidConfig(format!("cg_tolerance must be > 0, got {}", self.cg_tolerance)));
        }
        if self.memory_size == 0 {
            return Err(DcfError::InvalidConfig("memory_size must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one CG run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport<S> {
    /// Loss before the first iteration followed by the loss after each accepted iteration.
    pub losses: Vec<S>,
    pub iterations: usize,
    pub relative_residual: S,
    pub converged: bool,
    /// An iteration would have increased the loss (rounding at convergence);
    /// it was rejected and CG stopped.
    pub stagnated: bool,
}

/// Where CG starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarmStart {
    Zero,
    Current,
}

/// A training sample in the model's working form: projected, resampled to the
/// common resolution and transformed.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorySample<S> {
    pub features: Vec<Spectrum<S>>,
    pub label: Spectrum<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterModel<S> {
    filters: Vec<Spectrum<S>>,
    projection: Projection<S>,
    regularizer: SpatialRegularizer<S>,
    label_cfg: LabelConfig<S>,
    resolution: (usize, usize),
    memory: Vec<MemorySample<S>>,
    ages: SampleWeights<S>,
    alphas: Vec<S>,
    proj_penalty: S,
}

impl<S: Scalar> FilterModel<S> {
    pub fn new(
        projection: Projection<S>,
        regularizer: SpatialRegularizer<S>,
        label_cfg: LabelConfig<S>,
        resolution: (usize, usize),
        learning_rate: S,
        proj_penalty: S,
    ) -> Result<Self, DcfError> {
        let (h, w) = resolution;
        if h < 2 || w < 2 {
            return Err(DcfError::Shape(GridError::ResampleTooSmall { height: h, width: w }));
        }
        if !(learning_rate > S::zero() && learning_rate < S::one()) {
            return Err(DcfError::InvalidConfig(format!("learning rate must lie in (0,1), got {learning_rate}")));
        }
        if !(proj_penalty >= S::zero()) {
            return Err(DcfError::InvalidConfig("projection penalty must be nonnegative".into()));
        }
        let filters = (0..projection.out_dims()).map(|_| Spectrum::zeros(h, w)).collect();
        Ok(Self {
            filters,
            projection,
            regularizer,
            label_cfg,
            resolution,
            memory: Vec::new(),
            ages: SampleWeights::new(learning_rate),
            alphas: Vec::new(),
            proj_penalty,
        })
    }

    pub fn filters(&self) -> &[Spectrum<S>] {
        &self.filters
    }

    pub fn set_filters(&mut self, filters: Vec<Spectrum<S>>) -> Result<(), DcfError> {
        if filters.len() != self.projection.out_dims() {
            return Err(DcfError::ChannelMismatch {
                expected: self.projection.out_dims(),
                actual: filters.len(),
            });
        }
        for f in &filters {
            if f.shape() != self.resolution {
                return Err(GridError::ShapeMismatch {
                    left: self.resolution,
                    right: f.shape(),
                }
                .into());
            }
        }
        self.filters = filters;
        Ok(())
    }

    pub fn projection(&self) -> &Projection<S> {
        &self.projection
    }

    pub fn regularizer(&self) -> &SpatialRegularizer<S> {
        &self.regularizer
    }

    pub fn label_config(&self) -> &LabelConfig<S> {
        &self.label_cfg
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    pub fn memory(&self) -> &[MemorySample<S>] {
        &self.memory
    }

    pub fn memory_len(&self) -> usize {
        self.memory.len()
    }

    /// Normalized sample weights `α_j`, oldest first.
    pub fn sample_weights(&self) -> &[S] {
        &self.alphas
    }

    /// Overrides the weights with `raw / Σ raw`.
    pub fn set_sample_weights(&mut self, raw: &[S]) -> Result<(), DcfError> {
        if raw.len() != self.memory.len() {
            return Err(DcfError::InvalidConfig(format!(
                "{} weights for {} samples",
                raw.len(),
                self.memory.len()
            )));
        }
        let total: S = raw.iter().copied().sum();
        if raw.iter().any(|&v| !(v >= S::zero())) || !(total > S::zero()) {
            return Err(DcfError::InvalidConfig("weights must be nonnegative with positive sum".into()));
        }
        self.alphas = raw.iter().map(|&v| v / total).collect();
        Ok(())
    }

    /// Projects, resamples and transforms a raw feature map.
    pub fn prepare(&self, sample: &FeatureMap<S>) -> Result<Vec<Spectrum<S>>, DcfError> {
        let (h, w) = self.resolution;
        self.projection
            .apply(sample)?
            .iter()
            .map(|g| Ok(dft(&resample(g, h, w)?)))
            .collect()
    }

    /// Default label from the model's label configuration.
    pub fn default_label(&self) -> Result<Grid<S>, DcfError> {
        Ok(gaussian_label(self.resolution.0, self.resolution.1, &self.label_cfg)?)
    }

    /// Appends samples (sharing one label, or the default label) as the newest
    /// memory entries, all of age 0.
    pub fn add_samples(&mut self, samples: &[FeatureMap<S>], label: Option<&Grid<S>>) -> Result<(), DcfError> {
        let label = match label {
            Some(l) => {
                if l.shape() != self.resolution {
                    return Err(GridError::ShapeMismatch {
                        left: self.resolution,
                        right: l.shape(),
                    }
                    .into());
                }
                l.clone()
            }
            None => self.default_label()?,
        };
        let label_hat = dft(&label);
        let mut prepared = Vec::with_capacity(samples.len());
        for s in samples {
            prepared.push(MemorySample {
                features: self.prepare(s)?,
                label: label_hat.clone(),
            });
        }
        self.memory.extend(prepared);
        self.ages.push_newest(samples.len());
        self.alphas = self.ages.weights().to_vec();
        Ok(())
    }

    fn evict_to(&mut self, capacity: usize) {
        while self.memory.len() > capacity {
            self.memory.remove(0);
            self.ages.evict_oldest();
        }
        self.alphas = self.ages.weights().to_vec();
    }

    /// Score map `idft(Σ_d f̂^d ⊙ x̂^d)` for a raw feature map.
    pub fn predict_score(&self, sample: &FeatureMap<S>) -> Result<Grid<S>, DcfError> {
        let x = self.prepare(sample)?;
        Ok(self.predict_prepared(&x).0)
    }

    /// Score for an already prepared sample plus the discarded imaginary residue.
    pub fn predict_prepared(&self, x: &[Spectrum<S>]) -> (Grid<S>, S) {
        let (h, w) = self.resolution;
        let mut acc = Spectrum::zeros(h, w);
        for (f, xd) in self.filters.iter().zip(x) {
            for ((a, &fv), &xv) in acc.as_mut_slice().iter_mut().zip(f.as_slice()).zip(xd.as_slice()) {
                *a = *a + fv * xv;
            }
        }
        idft_with_residue(&acc)
    }

    fn normal_equations(&self) -> NormalEquations<'_, S> {
        NormalEquations {
            memory: &self.memory,
            alphas: &self.alphas,
            reg: &self.regularizer,
            resolution: self.resolution,
            dims: self.projection.out_dims(),
        }
    }

    /// The assembled normal-equation operator `A` and right-hand side `b` of
    /// the current memory, exposed for verification.
    pub fn normal_operator(&self) -> NormalEquations<'_, S> {
        self.normal_equations()
    }

    /// Training loss in spatial units, evaluated in the Fourier domain.
    pub fn fourier_loss(&self) -> S {
        self.normal_equations().loss(&self.filters) + self.proj_penalty * self.projection.frobenius_sq()
    }

    /// Training loss evaluated directly in the spatial domain.
    pub fn spatial_loss(&self) -> S {
        let (h, w) = self.resolution;
        let filters: Vec<Grid<S>> = self.filters.iter().map(idft).collect();
        let weight = self.regularizer.spatial_weight(h, w);
        let mut data = S::zero();
        for (sample, &alpha) in self.memory.iter().zip(&self.alphas) {
            let mut score = Grid::zeros(h, w);
            for (f, x) in filters.iter().zip(&sample.features) {
                let xs = idft(x);
                // Direct circular convolution would be O(N²); use the
                // transform of the spatial filter instead.
                let conv = idft(&dft(f).mul(&dft(&xs)).expect("shapes"));
                score = score.add(&conv).expect("shapes");
            }
            let label = idft(&sample.label);
            data = data + alpha * score.sub(&label).expect("shapes").norm_sq();
        }
        let reg: S = filters
            .iter()
            .map(|f| f.zip_map(&weight, |a, b| a * b).expect("shapes").norm_sq())
            .sum();
        data + reg + self.proj_penalty * self.projection.frobenius_sq()
    }

    /// Minimizes the loss over the filters by (preconditioned) conjugate
    /// gradients on the normal equations.
    pub fn train(&mut self, iterations: usize, tolerance: f64, start: WarmStart, precondition: bool) -> Result<TrainReport<S>, DcfError> {
        if self.memory.is_empty() {
            return Err(DcfError::EmptyMemory);
        }
        if iterations == 0 || !(tolerance > 0.0) {
            return Err(DcfError::InvalidConfig("iterations and tolerance must be positive".into()));
        }
        let (h, w) = self.resolution;
        let dims = self.projection.out_dims();
        let constant = self.proj_penalty * self.projection.frobenius_sq();
        let ne = self.normal_equations();
        let mut b = ne.rhs();
        for s in &mut b {
            s.symmetrize();
        }
        let mut x: Vec<Spectrum<S>> = match start {
            WarmStart::Zero => (0..dims).map(|_| Spectrum::zeros(h, w)).collect(),
            WarmStart::Current => self.filters.clone(),
        };
        for s in &mut x {
            s.symmetrize();
        }
        let diag = if precondition { Some(ne.diagonal()) } else { None };
        let b_norm = inner(&b, &b).sqrt();
        let mut losses = vec![ne.loss(&x) + constant];
        if !losses[0].is_finite() {
            return Err(DcfError::NumericalFailure { iteration: 0 });
        }
        if b_norm == S::zero() {
            // Zero right-hand side: the minimizer is f = 0.
            let zero: Vec<Spectrum<S>> = (0..dims).map(|_| Spectrum::zeros(h, w)).collect();
            let loss = ne.loss(&zero) + constant;
            if loss <= losses[0] {
                losses.push(loss);
                self.filters = zero;
            }
            return Ok(TrainReport {
                iterations: losses.len() - 1,
                losses,
                relative_residual: S::zero(),
                converged: true,
                stagnated: false,
            });
        }
        let ax = ne.apply(&x);
        let mut r: Vec<Spectrum<S>> = b.iter().zip(&ax).map(|(bb, a)| bb.sub(a).expect("shapes")).collect();
        let precond = |r: &[Spectrum<S>]| -> Vec<Spectrum<S>> {
            match &diag {
                Some(d) => r
                    .iter()
                    .zip(d)
                    .map(|(rr, dd)| {
                        let mut out = rr.clone();
                        for (o, &dv) in out.as_mut_slice().iter_mut().zip(dd.as_slice()) {
                            *o = *o / dv;
                        }
                        out
                    })
                    .collect(),
                None => r.to_vec(),
            }
        };
        let mut z = precond(&r);
        let mut p = z.clone();
        let mut rz = inner(&r, &z);
        let mut rel = inner(&r, &r).sqrt() / b_norm;
        let tol = c::<S>(tolerance);
        let mut converged = rel <= tol;
        let mut stagnated = false;
        let mut done = 0;
        while !converged && done < iterations {
            let ap = ne.apply(&p);
            let pap = inner(&p, &ap);
            if !(pap > S::zero()) {
                if !pap.is_finite() {
                    return Err(DcfError::NumericalFailure { iteration: done + 1 });
                }
                stagnated = true;
                break;
            }
            let alpha = rz / pap;
            let x_next: Vec<Spectrum<S>> = x.iter().zip(&p).map(|(xx, pp)| axpy(xx, alpha, pp)).collect();
            let loss = ne.loss(&x_next) + constant;
            if !loss.is_finite() {
                return Err(DcfError::NumericalFailure { iteration: done + 1 });
            }
            if loss > *losses.last().expect("nonempty") {
                stagnated = true;
                break;
            }
            x = x_next;
            losses.push(loss);
            done += 1;
            r = r.iter().zip(&ap).map(|(rr, a)| axpy(rr, -alpha, a)).collect();
            rel = inner(&r, &r).sqrt() / b_norm;
            if rel <= tol {
                converged = true;
                break;
            }
            z = precond(&r);
            let rz_next = inner(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            p = z.iter().zip(&p).map(|(zz, pp)| axpy(zz, beta, pp)).collect();
        }
        for s in &mut x {
            s.symmetrize();
        }
        self.filters = x;
        Ok(TrainReport {
            losses,
            iterations: done,
            relative_residual: rel,
            converged,
            stagnated,
        })
    }

    /// Initial training from a cold start.
    pub fn train_initial(&mut self, cfg: &TrainConfig) -> Result<TrainReport<S>, DcfError> {
        cfg.validate()?;
        self.train(cfg.cg_iterations, cfg.cg_tolerance, WarmStart::Zero, cfg.precondition)
    }

    /// Appends a sample (evicting the oldest beyond `memory_size`) and retrains
    /// warm-started from the current filter.
    pub fn update(&mut self, sample: &FeatureMap<S>, label: Option<&Grid<S>>, cfg: &TrainConfig) -> Result<TrainReport<S>, DcfError> {
        cfg.validate()?;
        self.add_samples(std::slice::from_ref(sample), label)?;
        self.evict_to(cfg.memory_size);
        self.train(cfg.update_iterations, cfg.cg_tolerance, WarmStart::Current, cfg.precondition)
    }
}

fn inner<S: Scalar>(a: &[Spectrum<S>], b: &[Spectrum<S>]) -> S {
    a.iter().zip(b).map(|(x, y)| x.inner(y).expect("shapes")).sum()
}

fn axpy<S: Scalar>(x: &Spectrum<S>, alpha: S, y: &Spectrum<S>) -> Spectrum<S> {
    let mut out = x.clone();
    for (o, &v) in out.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *o = *o + v * alpha;
    }
    out
}

/// Normal equations `A f = b` of the Fourier-domain loss, where
/// `A f = Σ_j α_j conj(x̂_j) (Σ_e x̂_j^e f̂^e) + Wᴴ W f̂` and `b = Σ_j α_j conj(x̂_j) ŷ_j`.
pub struct NormalEquations<'a, S> {
    memory: &'a [MemorySample<S>],
    alphas: &'a [S],
    reg: &'a SpatialRegularizer<S>,
    resolution: (usize, usize),
    dims: usize,
}

impl<S: Scalar> NormalEquations<'_, S> {
    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    pub fn apply(&self, f: &[Spectrum<S>]) -> Vec<Spectrum<S>> {
        let (h, w) = self.resolution;
        let n = h * w;
        let mut out: Vec<Spectrum<S>> = f.iter().map(|fd| self.reg.apply_adjoint(&self.reg.apply(fd))).collect();
        let mut pred = vec![Complex::new(S::zero(), S::zero()); n];
        for (sample, &alpha) in self.memory.iter().zip(self.alphas) {
            if alpha == S::zero() {
                continue;
            }
            pred.iter_mut().for_each(|v| *v = Complex::new(S::zero(), S::zero()));
            for (x, fd) in sample.features.iter().zip(f) {
                for ((p, &xv), &fv) in pred.iter_mut().zip(x.as_slice()).zip(fd.as_slice()) {
                    *p = *p + xv * fv;
                }
            }
            for (x, o) in sample.features.iter().zip(out.iter_mut()) {
                for ((ov, &xv), &pv) in o.as_mut_slice().iter_mut().zip(x.as_slice()).zip(&pred) {
                    *ov = *ov + xv.conj() * pv * alpha;
                }
            }
        }
        out
    }

    pub fn rhs(&self) -> Vec<Spectrum<S>> {
        let (h, w) = self.resolution;
        let mut out: Vec<Spectrum<S>> = (0..self.dims).map(|_| Spectrum::zeros(h, w)).collect();
        for (sample, &alpha) in self.memory.iter().zip(self.alphas) {
            for (x, o) in sample.features.iter().zip(out.iter_mut()) {
                for ((ov, &xv), &yv) in o.as_mut_slice().iter_mut().zip(x.as_slice()).zip(sample.label.as_slice()) {
                    *ov = *ov + xv.conj() * yv * alpha;
                }
            }
        }
        out
    }

    /// Diagonal of `A` (real, positive), used as preconditioner.
    fn diagonal(&self) -> Vec<Grid<S>> {
        let (h, w) = self.resolution;
        let reg = self.reg.gram_diagonal();
        let mut out: Vec<Grid<S>> = (0..self.dims).map(|_| Grid::filled(h, w, reg)).collect();
        for (sample, &alpha) in self.memory.iter().zip(self.alphas) {
            for (x, o) in sample.features.iter().zip(out.iter_mut()) {
                for (ov, &xv) in o.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    *ov = *ov + xv.norm_sqr() * alpha;
                }
            }
        }
        let floor = c::<S>(1e-300).max(S::min_positive_value());
        for o in &mut out {
            for v in o.as_mut_slice() {
                if *v < floor {
                    *v = S::one();
                }
            }
        }
        out
    }

    /// Data plus regularization loss, in spatial units.
    pub fn loss(&self, f: &[Spectrum<S>]) -> S {
        let (h, w) = self.resolution;
        let mut total = S::zero();
        let mut resid = vec![Complex::new(S::zero(), S::zero()); h * w];
        for (sample, &alpha) in self.memory.iter().zip(self.alphas) {
            if alpha == S::zero() {
                continue;
            }
            resid.copy_from_slice(sample.label.as_slice());
            resid.iter_mut().for_each(|v| *v = -*v);
            for (x, fd) in sample.features.iter().zip(f) {
                for ((r, &xv), &fv) in resid.iter_mut().zip(x.as_slice()).zip(fd.as_slice()) {
                    *r = *r + xv * fv;
                }
            }
            total = total + alpha * resid.iter().map(|v| v.norm_sqr()).sum::<S>();
        }
        let reg: S = f.iter().map(|fd| self.reg.apply(fd).norm_sq()).sum();
        (total + reg) * parseval_constant::<S>(h, w)
    }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

pub const DCFM_MAGIC: [u8; 4] = *b"DCFM";
pub const DCFM_VERSION: u32 = 1;

const TAG_PROJ: [u8; 4] = *b"PROJ";
const TAG_REGW: [u8; 4] = *b"REGW";
const TAG_FILT: [u8; 4] = *b"FILT";
const TAG_META: [u8; 4] = *b"META";
const TAG_MEMS: [u8; 4] = *b"MEMS";

struct Section(Vec<u8>);

impl Section {
    fn new() -> Self {
        Section(Vec::new())
    }
    fn u32(&mut self, v: usize) {
        self.0.write_u32::<LittleEndian>(v as u32).expect("vec write");
    }
    fn f64<S: Scalar>(&mut self, v: S) {
        self.0.write_f64::<LittleEndian>(to_f64(v)).expect("vec write");
    }
    fn spectrum<S: Scalar>(&mut self, s: &Spectrum<S>) {
        for v in s.as_slice() {
            self.f64(v.re);
            self.f64(v.im);
        }
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    tag: &'static str,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self) -> Result<usize, DcfError> {
        self.data
            .read_u32::<LittleEndian>()
            .map(|v| v as usize)
            .map_err(|_| DcfError::Corrupt(format!("section {} truncated", self.tag)))
    }
    fn f64<S: Scalar>(&mut self) -> Result<S, DcfError> {
        let v = self
            .data
            .read_f64::<LittleEndian>()
            .map_err(|_| DcfError::Corrupt(format!("section {} truncated", self.tag)))?;
        S::from_f64(v).ok_or_else(|| DcfError::Corrupt("value not representable".into()))
    }
    fn spectrum<S: Scalar>(&mut self, h: usize, w: usize) -> Result<Spectrum<S>, DcfError> {
        let needed = h.checked_mul(w).and_then(|n| n.checked_mul(16));
        if needed.is_none_or(|n| n > self.data.len()) {
            return Err(DcfError::Corrupt(format!("section {} truncated", self.tag)));
        }
        let mut data = Vec::with_capacity(h * w);
        for _ in 0..h * w {
            let re = self.f64()?;
            let im = self.f64()?;
            data.push(Complex::new(re, im));
        }
        Ok(Spectrum::new(h, w, data)?)
    }
    fn finish(&self) -> Result<(), DcfError> {
        if self.data.is_empty() {
            Ok(())
        } else {
            Err(DcfError::Corrupt(format!("trailing bytes in section {}", self.tag)))
        }
    }
}

impl<S: Scalar> FilterModel<S> {
    /// Writes the versioned `DCFM` container.
    pub fn save<W: Write>(&self, mut out: W) -> Result<(), DcfError> {
        out.write_all(&DCFM_MAGIC)?;
        out.write_u32::<LittleEndian>(DCFM_VERSION)?;

        let mut proj = Section::new();
        proj.u32(self.projection.raw_dims);
        proj.u32(self.projection.out_dims);
        proj.u32(self.projection.degenerate as usize);
        proj.f64(self.projection.retained_energy);
        for &v in &self.projection.matrix {
            proj.f64(v);
        }

        let mut regw = Section::new();
        regw.u32(self.regularizer.radius);
        for v in &self.regularizer.coeffs {
            regw.f64(v.re);
            regw.f64(v.im);
        }

        let (h, w) = self.resolution;
        let mut filt = Section::new();
        filt.u32(h);
        filt.u32(w);
        filt.u32(self.filters.len());
        for f in &self.filters {
            filt.spectrum(f);
        }

        let mut meta = Section::new();
        meta.f64(self.label_cfg.sigma);
        meta.f64(self.label_cfg.target_size.0);
        meta.f64(self.label_cfg.target_size.1);
        meta.f64(self.label_cfg.center.0);
        meta.f64(self.label_cfg.center.1);
        meta.f64(self.proj_penalty);
        meta.f64(self.ages.learning_rate());
        meta.u32(self.memory.len());
        for &a in self.ages.ages() {
            meta.u32(a as usize);
        }
        for &a in &self.alphas {
            meta.f64(a);
        }

        let mut mems = Section::new();
        for m in &self.memory {
            for f in &m.features {
                mems.spectrum(f);
            }
            mems.spectrum(&m.label);
        }

        for (tag, sec) in [(TAG_PROJ, proj), (TAG_REGW, regw), (TAG_FILT, filt), (TAG_META, meta), (TAG_MEMS, mems)] {
            out.write_all(&tag)?;
            out.write_u64::<LittleEndian>(sec.0.len() as u64)?;
            out.write_all(&sec.0)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a model written by [`save`](Self::save); the round trip is bit-exact for `f64`.
    pub fn load<R: Read>(mut input: R) -> Result<Self, DcfError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(|_| DcfError::BadMagic)?;
        if magic != DCFM_MAGIC {
            return Err(DcfError::BadMagic);
        }
        let version = input
            .read_u32::<LittleEndian>()
            .map_err(|_| DcfError::Corrupt("missing version".into()))?;
        if version != DCFM_VERSION {
            return Err(DcfError::UnsupportedVersion(version));
        }
        let mut sections: Vec<([u8; 4], Vec<u8>)> = Vec::new();
        loop {
            let mut tag = [0u8; 4];
            match input.read_exact(&mut tag) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            let len = input
                .read_u64::<LittleEndian>()
                .map_err(|_| DcfError::Corrupt("truncated section header".into()))?;
            let mut body = Vec::new();
            input.by_ref().take(len).read_to_end(&mut body)?;
            if body.len() as u64 != len {
                return Err(DcfError::Corrupt("truncated section body".into()));
            }
            sections.push((tag, body));
        }
        let find = |tag: [u8; 4], name: &'static str| -> Result<Cursor<'_>, DcfError> {
            sections
                .iter()
                .find(|(t, _)| *t == tag)
                .map(|(_, b)| Cursor { data: b, tag: name })
                .ok_or_else(|| DcfError::Corrupt(format!("missing section {name}")))
        };

        let mut cur = find(TAG_PROJ, "PROJ")?;
        let raw_dims = cur.u32()?;
        let out_dims = cur.u32()?;
        let degenerate = cur.u32()? != 0;
        let retained_energy = cur.f64()?;
        if out_dims == 0 || out_dims > raw_dims || raw_dims > (cur.data.len() / 8) {
            return Err(DcfError::Corrupt("bad projection dimensions".into()));
        }
        let matrix = (0..raw_dims * out_dims).map(|_| cur.f64()).collect::<Result<Vec<S>, _>>()?;
        cur.finish()?;
        let projection = Projection {
            raw_dims,
            out_dims,
            matrix,
            degenerate,
            retained_energy,
        };

        let mut cur = find(TAG_REGW, "REGW")?;
        let radius = cur.u32()?;
        if radius > 2 {
            return Err(DcfError::Corrupt(format!("regularizer radius {radius}")));
        }
        let side = 2 * radius + 1;
        let mut coeffs = Vec::with_capacity(side * side);
        for _ in 0..side * side {
            let re = cur.f64()?;
            let im = cur.f64()?;
            coeffs.push(Complex::new(re, im));
        }
        cur.finish()?;
        let regularizer = SpatialRegularizer { radius, coeffs };

        let mut cur = find(TAG_FILT, "FILT")?;
        let h = cur.u32()?;
        let w = cur.u32()?;
        let count = cur.u32()?;
        if count != out_dims {
            return Err(DcfError::Corrupt("filter count differs from projection".into()));
        }
        let filters = (0..count).map(|_| cur.spectrum(h, w)).collect::<Result<Vec<_>, _>>()?;
        cur.finish()?;

        let mut cur = find(TAG_META, "META")?;
        let sigma = cur.f64()?;
        let ts = (cur.f64()?, cur.f64()?);
        let center = (cur.f64()?, cur.f64()?);
        let proj_penalty = cur.f64()?;
        let learning_rate = cur.f64()?;
        let mem_len = cur.u32()?;
        if mem_len > cur.data.len() / 4 {
            return Err(DcfError::Corrupt("bad memory length".into()));
        }
        let ages = (0..mem_len).map(|_| cur.u32().map(|a| a as u32)).collect::<Result<Vec<_>, _>>()?;
        let alphas = (0..mem_len).map(|_| cur.f64()).collect::<Result<Vec<S>, _>>()?;
        cur.finish()?;

        let mut cur = find(TAG_MEMS, "MEMS")?;
        let mut memory = Vec::with_capacity(mem_len);
        for _ in 0..mem_len {
            let features = (0..out_dims).map(|_| cur.spectrum(h, w)).collect::<Result<Vec<_>, _>>()?;
            let label = cur.spectrum(h, w)?;
            memory.push(MemorySample { features, label });
        }
        cur.finish()?;

        Ok(Self {
            filters,
            projection,
            regularizer,
            label_cfg: LabelConfig {
                sigma,
                target_size: ts,
                center,
            },
            resolution: (h, w),
            memory,
            ages: SampleWeights::from_ages(ages, learning_rate),
            alphas,
            proj_penalty,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(channels: usize, h: usize, w: usize, seed: u64) -> FeatureMap<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = (0..channels)
            .map(|_| Grid::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        FeatureMap::new(ch, 4.0, "test").unwrap()
    }

    fn label_cfg() -> LabelConfig<f64> {
        LabelConfig::new(0.25, (3.0, 3.0))
    }

    #[test]
    fn jacobi_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 6;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.gen_range(-1.0..1.0);
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        let (vals, vecs) = symmetric_eigen(&m, n);
        for k in 0..n {
            for i in 0..n {
                let av: f64 = (0..n).map(|j| m[i * n + j] * vecs[j * n + k]).sum();
                assert!((av - vals[k] * vecs[i * n + k]).abs() < 1e-12);
            }
        }
        assert!(vals.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn full_rank_projection_is_a_rotation() {
        let s = random_map(5, 8, 8, 2);
        let p = init_projection(&s, 5).unwrap();
        let y = p.apply(&s).unwrap();
        // Reconstruct x = P y.
        for r in 0..5 {
            let mut rec = Grid::zeros(8, 8);
            for (k, yk) in y.iter().enumerate() {
                rec = rec.add(&yk.scale(p.get(r, k))).unwrap();
            }
            assert!(rec.max_abs_diff(&s.channels()[r]).unwrap() < 1e-9);
        }
        assert!((p.retained_energy() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlated_channels_rank_one() {
        let base = random_map(1, 8, 8, 3).channels()[0].clone();
        let s = FeatureMap::new(vec![base.clone(), base.scale(-2.0)], 4.0, "t").unwrap();
        let p = init_projection(&s, 1).unwrap();
        assert!((p.retained_energy() - 1.0).abs() < 1e-9);
        let p2 = init_projection(&s, 2).unwrap();
        assert!(p2.is_degenerate());
        assert!(matches!(init_projection(&s, 3), Err(DcfError::InvalidProjection { .. })));
    }

    #[test]
    fn regularizer_identity_and_zero() {
        let reg = SpatialRegularizer::ridge(1.0);
        let f = dft(&random_map(1, 6, 5, 4).channels()[0]);
        let spatial = idft(&f).norm_sq();
        assert!((spatial_reg_term(&f, &reg) - spatial).abs() < 1e-12);
        assert_eq!(spatial_reg_term(&Spectrum::<f64>::zeros(6, 5), &reg), 0.0);
    }

    #[test]
    fn bowl_weight_shape() {
        let cfg = RegularizerConfig {
            base: 0.1,
            edge_ratio: 10.0,
            radius: 2,
        };
        let reg = SpatialRegularizer::bowl((32, 32), (6.0, 6.0), &cfg).unwrap();
        let w = reg.spatial_weight(32, 32);
        assert!(w.min() > 0.0);
        // The truncated series is flat to rounding around the centre.
        assert!(w.get(16, 16) - w.min() < 1e-12);
        assert!(w.get(0, 0) > 5.0 * w.get(16, 16));
    }

    #[test]
    fn zero_filter_scores_zero_and_prediction_is_linear() {
        let proj = Projection::identity(2);
        let mut model = FilterModel::new(proj, SpatialRegularizer::ridge(0.1), label_cfg(), (8, 8), 0.01, 0.0).unwrap();
        let x = random_map(2, 8, 8, 5);
        assert!(model.predict_score(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
        let f1: Vec<_> = random_map(2, 8, 8, 6).channels().iter().map(dft).collect();
        let f2: Vec<_> = random_map(2, 8, 8, 7).channels().iter().map(dft).collect();
        let sum: Vec<_> = f1.iter().zip(&f2).map(|(a, b)| a.add(b).unwrap()).collect();
        model.set_filters(f1).unwrap();
        let s1 = model.predict_score(&x).unwrap();
        model.set_filters(f2).unwrap();
        let s2 = model.predict_score(&x).unwrap();
        model.set_filters(sum).unwrap();
        let s12 = model.predict_score(&x).unwrap();
        assert!(s12.max_abs_diff(&s1.add(&s2).unwrap()).unwrap() < 1e-10);
        let (_, residue) = model.predict_prepared(&model.prepare(&x).unwrap());
        assert!(residue < 1e-10);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let model = FilterModel::new(Projection::identity(2), SpatialRegularizer::ridge(0.1), label_cfg(), (8, 8), 0.01, 0.0).unwrap();
        assert!(matches!(
            model.predict_score(&random_map(3, 8, 8, 1)),
            Err(DcfError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn zero_weight_sample_is_irrelevant() {
        let a = random_map(2, 8, 8, 10);
        let b = random_map(2, 8, 8, 11);
        let mk = || FilterModel::new(Projection::identity(2), SpatialRegularizer::ridge(0.05), label_cfg(), (8, 8), 0.01, 0.0).unwrap();
        let mut alone = mk();
        alone.add_samples(std::slice::from_ref(&a), None).unwrap();
        alone.train(300, 1e-14, WarmStart::Zero, true).unwrap();
        let mut both = mk();
        both.add_samples(&[a.clone(), b], None).unwrap();
        both.set_sample_weights(&[1.0, 0.0]).unwrap();
        both.train(300, 1e-14, WarmStart::Zero, true).unwrap();
        for (x, y) in alone.filters().iter().zip(both.filters()) {
            assert!(x.sub(y).unwrap().norm_sq().sqrt() < 1e-10);
        }
    }

    #[test]
    fn serialization_round_trip_is_bit_exact() {
        let x = random_map(3, 8, 8, 12);
        let proj = init_projection(&x, 2).unwrap();
        let reg = SpatialRegularizer::bowl((8, 8), (3.0, 3.0), &RegularizerConfig::default()).unwrap();
        let mut model = FilterModel::new(proj, reg, label_cfg(), (8, 8), 0.01, 0.5).unwrap();
        model.add_samples(&[x.clone(), random_map(3, 8, 8, 13)], None).unwrap();
        model.train(20, 1e-10, WarmStart::Zero, true).unwrap();
        let mut buf = Vec::new();
        model.save(&mut buf).unwrap();
        let back = FilterModel::<f64>::load(&buf[..]).unwrap();
        assert_eq!(back, model);
        let mut buf2 = Vec::new();
        back.save(&mut buf2).unwrap();
        assert_eq!(buf, buf2);

        assert!(matches!(FilterModel::<f64>::load(&b"NOPE"[..]), Err(DcfError::BadMagic)));
        assert!(FilterModel::<f64>::load(&buf[..buf.len() - 3]).is_err());
    }
}
