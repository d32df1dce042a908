//! Frame-by-frame tracking with a deep-featured and a shallow-featured model.
//!
//! Each frame, the search region is cropped at several scales around the
//! previous estimate, both models score every scale, and the two score maps
//! are fused (adaptively or with fixed weights). Every `update_interval`
//! frames both models receive an unaugmented sample at the new estimate and
//! are retrained warm.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dcf::{init_projection, DcfError, FilterModel, RegularizerConfig, SpatialRegularizer, TrainConfig, TrainReport};
use crate::features::{FeatureError, FeatureMap, FeatureProvider, ProviderSpec};
use crate::fusion::{fuse, CandidateConfig, FusionMode, FusionResult};
use crate::grid::{hann_window, GridError};
use crate::image::Image;
use crate::quality::{QualityError, ScoreGeometry, ScoreMap, State, StateDistance};
use crate::scalar::{c, cu, to_f64, Scalar};
use crate::training::{blur, channel_dropout, flip, rotate, shift_back, shift_patch, AugmentationPolicy, AugmentationSpec, LabelConfig, TrainingError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid initial state: {0}")]
    InvalidInit(String),
    #[error("frame is {actual:?} (w, h) but the tracker was initialized on {expected:?}")]
    FrameSize { expected: (usize, usize), actual: (usize, usize) },
    #[error("{model} features: {source}")]
    Features { model: &'static str, source: FeatureError },
    #[error(transparent)]
    Dcf(#[from] DcfError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Which augmentations a model's first-frame set receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentSet {
    pub flip: bool,
    pub rotation: bool,
    pub shift: bool,
    pub blur: bool,
    pub dropout: bool,
}

impl AugmentSet {
    pub const NONE: Self = Self {
        flip: false,
        rotation: false,
        shift: false,
        blur: false,
        dropout: false,
    };
    pub const ALL: Self = Self {
        flip: true,
        rotation: true,
        shift: true,
        blur: true,
        dropout: true,
    };
}

impl fmt::Display for AugmentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Self::ALL {
            return f.write_str("full");
        }
        if *self == Self::NONE {
            return f.write_str("none");
        }
        let names: Vec<&str> = [
            (self.flip, "flip"),
            (self.rotation, "rotation"),
            (self.shift, "shift"),
            (self.blur, "blur"),
            (self.dropout, "dropout"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for AugmentSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "full" | "all" => return Ok(Self::ALL),
            "none" | "" => return Ok(Self::NONE),
            _ => {}
        }
        let mut out = Self::NONE;
        for part in s.split(',').map(str::trim) {
            match part {
                "flip" => out.flip = true,
                "rotation" => out.rotation = true,
                "shift" => out.shift = true,
                "blur" => out.blur = true,
                "dropout" => out.dropout = true,
                other => return Err(format!("unknown augmentation {other:?}")),
            }
        }
        Ok(out)
    }
}

fn provider_to_string(p: &ProviderSpec) -> String {
    match p {
        ProviderSpec::Shallow { cell } => format!("hog:{cell}"),
        ProviderSpec::DeepProxy { octaves, stride } => format!("proxy:{octaves}:{stride}"),
        ProviderSpec::ExternalFile { template, stride } => format!("file:{stride}:{template}"),
    }
}

/// Parses `hog[:cell]`, `proxy[:octaves:stride]` or `file:[stride:]template`.
pub fn parse_provider(s: &str) -> Result<ProviderSpec, String> {
    let s = s.trim();
    let num = |v: &str| v.parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    if s == "hog" {
        return Ok(ProviderSpec::Shallow { cell: 4 });
    }
    if s == "proxy" {
        return Ok(ProviderSpec::DeepProxy { octaves: 3, stride: 8 });
    }
    if let Some(rest) = s.strip_prefix("hog:") {
        return Ok(ProviderSpec::Shallow { cell: num(rest)? });
    }
    if let Some(rest) = s.strip_prefix("proxy:") {
        let (o, st) = rest.split_once(':').ok_or("expected proxy:<octaves>:<stride>")?;
        return Ok(ProviderSpec::DeepProxy {
            octaves: num(o)?,
            stride: num(st)?,
        });
    }
    if let Some(rest) = s.strip_prefix("file:") {
        if let Some((st, tpl)) = rest.split_once(':') {
            if let Ok(stride) = st.parse::<usize>() {
                return Ok(ProviderSpec::ExternalFile {
                    template: tpl.to_string(),
                    stride,
                });
            }
        }
        if rest.is_empty() {
            return Err("empty feature file template".into());
        }
        return Ok(ProviderSpec::ExternalFile {
            template: rest.to_string(),
            stride: 8,
        });
    }
    Err(format!("unknown feature provider {s:?}"))
}

fn mode_to_string(m: &FusionMode<f64>) -> String {
    match m {
        FusionMode::Adaptive => "adaptive".into(),
        FusionMode::Fixed { beta_s } if *beta_s == 0.0 => "deep".into(),
        FusionMode::Fixed { beta_s } if *beta_s == 1.0 => "shallow".into(),
        FusionMode::Fixed { beta_s } => format!("fixed:{beta_s}"),
    }
}

/// Parses `adaptive`, `fixed:<β_s>`, `deep` (β_s = 0) or `shallow` (β_s = 1).
pub fn parse_mode(s: &str) -> Result<FusionMode<f64>, String> {
    match s.trim() {
        "adaptive" => Ok(FusionMode::Adaptive),
        "deep" => Ok(FusionMode::Fixed { beta_s: 0.0 }),
        "shallow" => Ok(FusionMode::Fixed { beta_s: 1.0 }),
        other => {
            let v = other
                .strip_prefix("fixed:")
                .ok_or_else(|| format!("unknown fusion mode {other:?}"))?;
            let beta_s: f64 = v.parse().map_err(|e| format!("{v:?}: {e}"))?;
            if !(0.0..=1.0).contains(&beta_s) {
                return Err(format!("beta_s must lie in [0,1], got {beta_s}"));
            }
            Ok(FusionMode::Fixed { beta_s })
        }
    }
}

/// Tracker parameters. Every field is a config key of the same name.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Label width factor of the deep model.
    pub sigma_d: f64,
    /// Label width factor of the shallow model.
    pub sigma_s: f64,
    /// Fusion regularization weight.
    pub mu: f64,
    /// `κ = kappa_factor / (w·h)` with the current target size in pixels.
    pub kappa_factor: f64,
    /// Search side = `search_region_scale` × target diagonal.
    pub search_region_scale: f64,
    /// Pixel resolution the square search patch is resampled to.
    pub patch_size: usize,
    pub scale_levels: usize,
    pub scale_step: f64,
    pub update_interval: usize,
    pub learning_rate: f64,
    pub memory_size: usize,
    pub cg_iterations: usize,
    pub update_iterations: usize,
    pub cg_tolerance: f64,
    pub precondition: bool,
    pub proj_dims_deep: usize,
    pub proj_dims_shallow: usize,
    pub proj_penalty: f64,
    pub reg_base: f64,
    pub reg_edge_ratio: f64,
    pub reg_radius: usize,
    pub augmentation_deep: AugmentSet,
    pub augmentation_shallow: AugmentSet,
    /// Also augment update-time samples (otherwise only the first frame).
    pub augment_updates: bool,
    /// Pixel shift of the shift augmentation; 0 means half the model stride.
    pub shift_pixels: usize,
    pub blur_radii: Vec<f64>,
    pub dropout_draws: usize,
    pub dropout_rate: f64,
    pub provider_deep: ProviderSpec,
    pub provider_shallow: ProviderSpec,
    pub fusion: FusionMode<f64>,
    pub candidates_per_source: usize,
    /// NMS radius as a fraction of the target diagonal.
    pub nms_factor: f64,
    /// Quadratic sub-cell refinement of the selected translation.
    pub subcell_refine: bool,
    /// Cosine window on feature maps.
    pub feature_window: bool,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            sigma_d: 0.25,
            sigma_s: 1.0 / 16.0,
            mu: 0.15,
            kappa_factor: 8.0,
            search_region_scale: 4.5,
            patch_size: 200,
            scale_levels: 5,
            scale_step: 1.02,
            update_interval: 5,
            learning_rate: 0.01,
            memory_size: 30,
            cg_iterations: 60,
            update_iterations: 5,
            cg_tolerance: 1e-6,
            precondition: true,
            proj_dims_deep: 12,
            proj_dims_shallow: 12,
            proj_penalty: 0.0,
            reg_base: 0.1,
            reg_edge_ratio: 300.0,
            reg_radius: 2,
            augmentation_deep: AugmentSet::ALL,
            augmentation_shallow: AugmentSet::NONE,
            augment_updates: false,
            shift_pixels: 0,
            blur_radii: vec![1.0, 2.0, 4.0],
            dropout_draws: 2,
            dropout_rate: 0.2,
            provider_deep: ProviderSpec::DeepProxy { octaves: 3, stride: 8 },
            provider_shallow: ProviderSpec::Shallow { cell: 4 },
            fusion: FusionMode::Adaptive,
            candidates_per_source: 5,
            nms_factor: 0.25,
            subcell_refine: true,
            feature_window: true,
            seed: 0,
        }
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl TrackerConfig {
    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("sigma_d", self.sigma_d.to_string()),
            ("sigma_s", self.sigma_s.to_string()),
            ("mu", self.mu.to_string()),
            ("kappa_factor", self.kappa_factor.to_string()),
            ("search_region_scale", self.search_region_scale.to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("scale_levels", self.scale_levels.to_string()),
            ("scale_step", self.scale_step.to_string()),
            ("update_interval", self.update_interval.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("memory_size", self.memory_size.to_string()),
            ("cg_iterations", self.cg_iterations.to_string()),
            ("update_iterations", self.update_iterations.to_string()),
            ("cg_tolerance", self.cg_tolerance.to_string()),
            ("precondition", self.precondition.to_string()),
            ("proj_dims_deep", self.proj_dims_deep.to_string()),
            ("proj_dims_shallow", self.proj_dims_shallow.to_string()),
            ("proj_penalty", self.proj_penalty.to_string()),
            ("reg_base", self.reg_base.to_string()),
            ("reg_edge_ratio", self.reg_edge_ratio.to_string()),
            ("reg_radius", self.reg_radius.to_string()),
            ("augmentation_deep", self.augmentation_deep.to_string()),
            ("augmentation_shallow", self.augmentation_shallow.to_string()),
            ("augment_updates", self.augment_updates.to_string()),
            ("shift_pixels", self.shift_pixels.to_string()),
            ("blur_radii", fmt_list(&self.blur_radii)),
            ("dropout_draws", self.dropout_draws.to_string()),
            ("dropout_rate", self.dropout_rate.to_string()),
            ("provider_deep", provider_to_string(&self.provider_deep)),
            ("provider_shallow", provider_to_string(&self.provider_shallow)),
            ("fusion", mode_to_string(&self.fusion)),
            ("candidates_per_source", self.candidates_per_source.to_string()),
            ("nms_factor", self.nms_factor.to_string()),
            ("subcell_refine", self.subcell_refine.to_string()),
            ("feature_window", self.feature_window.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// `key = value` lines for every field.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn p<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            value.trim().parse::<T>().map_err(|e| ConfigError::Value {
                key: key.into(),
                value: value.into(),
                reason: e.to_string(),
            })
        }
        fn q<T>(key: &str, value: &str, r: Result<T, String>) -> Result<T, ConfigError> {
            r.map_err(|reason| ConfigError::Value {
                key: key.into(),
                value: value.into(),
                reason,
            })
        }
        match key {
            "sigma_d" => self.sigma_d = p(key, value)?,
            "sigma_s" => self.sigma_s = p(key, value)?,
            "mu" => self.mu = p(key, value)?,
            "kappa_factor" => self.kappa_factor = p(key, value)?,
            "search_region_scale" => self.search_region_scale = p(key, value)?,
            "patch_size" => self.patch_size = p(key, value)?,
            "scale_levels" => self.scale_levels = p(key, value)?,
            "scale_step" => self.scale_step = p(key, value)?,
            "update_interval" => self.update_interval = p(key, value)?,
            "learning_rate" => self.learning_rate = p(key, value)?,
            "memory_size" => self.memory_size = p(key, value)?,
            "cg_iterations" => self.cg_iterations = p(key, value)?,
            "update_iterations" => self.update_iterations = p(key, value)?,
            "cg_tolerance" => self.cg_tolerance = p(key, value)?,
            "precondition" => self.precondition = p(key, value)?,
            "proj_dims_deep" => self.proj_dims_deep = p(key, value)?,
            "proj_dims_shallow" => self.proj_dims_shallow = p(key, value)?,
            "proj_penalty" => self.proj_penalty = p(key, value)?,
            "reg_base" => self.reg_base = p(key, value)?,
            "reg_edge_ratio" => self.reg_edge_ratio = p(key, value)?,
            "reg_radius" => self.reg_radius = p(key, value)?,
            "augmentation_deep" => self.augmentation_deep = q(key, value, value.parse())?,
            "augmentation_shallow" => self.augmentation_shallow = q(key, value, value.parse())?,
            "augment_updates" => self.augment_updates = p(key, value)?,
            "shift_pixels" => self.shift_pixels = p(key, value)?,
            "blur_radii" => {
                self.blur_radii = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| p::<f64>(key, s))
                    .collect::<Result<_, _>>()?
            }
            "dropout_draws" => self.dropout_draws = p(key, value)?,
            "dropout_rate" => self.dropout_rate = p(key, value)?,
            "provider_deep" => self.provider_deep = q(key, value, parse_provider(value))?,
            "provider_shallow" => self.provider_shallow = q(key, value, parse_provider(value))?,
            "fusion" => self.fusion = q(key, value, parse_mode(value))?,
            "candidates_per_source" => self.candidates_per_source = p(key, value)?,
            "nms_factor" => self.nms_factor = p(key, value)?,
            "subcell_refine" => self.subcell_refine = p(key, value)?,
            "feature_window" => self.feature_window = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the defaults. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: n + 1,
                text: raw.into(),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let positive = [
            ("sigma_d", self.sigma_d),
            ("sigma_s", self.sigma_s),
            ("mu", self.mu),
            ("kappa_factor", self.kappa_factor),
            ("search_region_scale", self.search_region_scale),
            ("cg_tolerance", self.cg_tolerance),
            ("reg_base", self.reg_base),
            ("nms_factor", self.nms_factor),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{k} must be positive, got {v}"));
            }
        }
        if self.scale_levels == 0 || self.scale_levels % 2 == 0 {
            return bad(format!("scale_levels must be odd, got {}", self.scale_levels));
        }
        if !(self.scale_step > 1.0) {
            return bad(format!("scale_step must exceed 1, got {}", self.scale_step));
        }
        if self.update_interval == 0 || self.patch_size < 16 || self.candidates_per_source == 0 {
            return bad("update_interval, candidates_per_source must be positive and patch_size >= 16".into());
        }
        if self.proj_dims_deep == 0 || self.proj_dims_shallow == 0 {
            return bad("projection dimensions must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return bad(format!("learning_rate must lie in (0,1), got {}", self.learning_rate));
        }
        if !(self.dropout_rate > 0.0 && self.dropout_rate < 1.0) {
            return bad(format!("dropout_rate must lie in (0,1), got {}", self.dropout_rate));
        }
        if !(self.reg_edge_ratio >= 1.0) || self.reg_radius > 2 || self.proj_penalty < 0.0 {
            return bad("reg_edge_ratio must be >= 1, reg_radius <= 2, proj_penalty >= 0".into());
        }
        if self.blur_radii.iter().any(|r| !(*r > 0.0)) {
            return bad("blur radii must be positive".into());
        }
        self.train_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            cg_iterations: self.cg_iterations,
            update_iterations: self.update_iterations,
            cg_tolerance: self.cg_tolerance,
            memory_size: self.memory_size,
            precondition: self.precondition,
        }
    }

    fn policy(&self, set: AugmentSet) -> AugmentationPolicy {
        AugmentationPolicy {
            flip: set.flip,
            rotations: set.rotation,
            shift_pixels: (self.shift_pixels > 0).then_some(self.shift_pixels),
            shifts: set.shift,
            blur_radii: if set.blur { self.blur_radii.clone() } else { Vec::new() },
            dropout_draws: if set.dropout { self.dropout_draws } else { 0 },
            dropout_rate: self.dropout_rate,
        }
    }
}

/// Derives an independent seed for one purpose from the master seed.
pub fn stream_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Seed stream used for channel dropout draws.
pub const DROPOUT_STREAM: u64 = 1;

/// Target estimate in image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetState<S> {
    /// Centre `(x, y)`.
    pub center: (S, S),
    /// Size `(width, height)`.
    pub size: (S, S),
    /// Size relative to the initial box.
    pub scale: S,
}

impl<S: Scalar> TargetState<S> {
    /// From a top-left `(x, y, w, h)` box.
    pub fn from_box(x: S, y: S, w: S, h: S) -> Self {
        let half = c::<S>(0.5);
        Self {
            center: (x + w * half, y + h * half),
            size: (w, h),
            scale: S::one(),
        }
    }

    /// Top-left `(x, y, w, h)` box.
    pub fn to_box(&self) -> (S, S, S, S) {
        let half = c::<S>(0.5);
        (
            self.center.0 - self.size.0 * half,
            self.center.1 - self.size.1 * half,
            self.size.0,
            self.size.1,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDiagnostics<S> {
    pub frame_index: usize,
    pub candidates: usize,
    /// A score map was constant and contributed no real candidate.
    pub constant_map: bool,
    /// The predicted centre left the image and was clamped.
    pub clamped: bool,
    /// Both models were updated on this frame.
    pub updated: bool,
    /// Sub-cell offset `(dx, dy)` in cells added to the selected state.
    pub subcell: (S, S),
    pub deep_peak: S,
    pub shallow_peak: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput<S> {
    pub state: TargetState<S>,
    pub fusion: FusionResult<S>,
    pub diagnostics: FrameDiagnostics<S>,
}

/// One of the two models with its feature provider.
struct Branch<S: Scalar> {
    name: &'static str,
    provider: Box<dyn FeatureProvider<S>>,
    model: FilterModel<S>,
    policy: AugmentationPolicy,
}

impl<S: Scalar> Branch<S> {
    fn features(&self, patch: &Image<S>, frame: usize, window: bool) -> Result<FeatureMap<S>, TrackerError> {
        let fm = self.provider.extract(patch, frame).map_err(|source| TrackerError::Features {
            model: self.name,
            source,
        })?;
        Ok(apply_window(&fm, window))
    }

    /// The sample plus its augmentations (flip, rotations, shifts, blurs,
    /// dropout draws), in the policy's fixed order.
    fn augmented(
        &self,
        patch: &Image<S>,
        frame: usize,
        window: bool,
        seed: u64,
    ) -> Result<Vec<FeatureMap<S>>, TrackerError> {
        let base = self.features(patch, frame, window)?;
        let specs = self.policy.specs(self.provider.stride() as f64, seed);
        let mut out = Vec::with_capacity(specs.len() + 1);
        out.push(base.clone());
        for spec in specs {
            let sample = match spec {
                AugmentationSpec::Flip => self.features(&flip(patch), frame, window)?,
                AugmentationSpec::Rotation { degrees } => self.features(&rotate(patch, c::<S>(degrees)), frame, window)?,
                AugmentationSpec::Shift { dx, dy } => {
                    let f = self.features(&shift_patch(patch, dx, dy), frame, window)?;
                    shift_back(&f, dx, dy)
                }
                AugmentationSpec::Blur { radius } => self.features(&blur(patch, c::<S>(radius)), frame, window)?,
                AugmentationSpec::Dropout { rate, seed } => channel_dropout(&base, rate, seed)?,
            };
            out.push(sample);
        }
        Ok(out)
    }
}

fn apply_window<S: Scalar>(fm: &FeatureMap<S>, window: bool) -> FeatureMap<S> {
    if !window {
        return fm.clone();
    }
    let (h, w) = fm.shape();
    let win = hann_window::<S>(h, w);
    let channels = fm
        .channels()
        .iter()
        .map(|g| g.zip_map(&win, |a, b| a * b).expect("same shape"))
        .collect();
    fm.with_channels(channels)
}

/// The two-model tracker.
pub struct Tracker<S: Scalar> {
    cfg: TrackerConfig,
    deep: Branch<S>,
    shallow: Branch<S>,
    frame_size: (usize, usize),
    initial_size: (S, S),
    /// Search side at scale 1, in image pixels.
    base_side: S,
    resolution: (usize, usize),
    state: TargetState<S>,
    frame_index: usize,
    train_cfg: TrainConfig,
    dropout_seed: u64,
    update_count: u64,
    reports: (TrainReport<S>, TrainReport<S>),
}

impl<S: Scalar> fmt::Debug for Tracker<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tracker")
            .field("frame_index", &self.frame_index)
            .field("state", &self.state)
            .field("resolution", &self.resolution)
            .finish()
    }
}

impl<S: Scalar> Tracker<S> {
    /// Trains both models on the first frame.
    pub fn initialize(frame: &Image<S>, initial: TargetState<S>, cfg: &TrackerConfig) -> Result<Self, TrackerError> {
        cfg.validate()?;
        let (w, h) = initial.size;
        let (cx, cy) = initial.center;
        let (fw, fh) = (cu::<S>(frame.width()), cu::<S>(frame.height()));
        if !(w > S::zero() && h > S::zero() && w.is_finite() && h.is_finite()) {
            return Err(TrackerError::InvalidInit(format!("box size must be positive, got ({w}, {h})")));
        }
        if !(cx >= S::zero() && cy >= S::zero() && cx <= fw && cy <= fh) {
            return Err(TrackerError::InvalidInit(format!(
                "box centre ({cx}, {cy}) lies outside the {}x{} frame",
                frame.width(),
                frame.height()
            )));
        }
        let base_side = c::<S>(cfg.search_region_scale) * (w * w + h * h).sqrt();
        let state = TargetState {
            scale: S::one(),
            ..initial
        };
        let patch = frame.extract_patch(cx, cy, base_side, base_side, cfg.patch_size, cfg.patch_size);

        let deep_provider = cfg.provider_deep.build::<S>();
        let shallow_provider = cfg.provider_shallow.build::<S>();
        let raw_deep = apply_window(
            &deep_provider.extract(&patch, 0).map_err(|source| TrackerError::Features {
                model: "deep",
                source,
            })?,
            cfg.feature_window,
        );
        let raw_shallow = apply_window(
            &shallow_provider.extract(&patch, 0).map_err(|source| TrackerError::Features {
                model: "shallow",
                source,
            })?,
            cfg.feature_window,
        );
        let (dh, dw) = raw_deep.shape();
        let (sh, sw) = raw_shallow.shape();
        let resolution = (dh.max(sh), dw.max(sw));

        // Target size in score cells.
        let cells_per_px = cu::<S>(resolution.0) / base_side;
        let target_cells = (h * cells_per_px, w * cells_per_px);
        let reg_cfg = RegularizerConfig {
            base: c::<S>(cfg.reg_base),
            edge_ratio: c::<S>(cfg.reg_edge_ratio),
            radius: cfg.reg_radius,
        };
        let regularizer = SpatialRegularizer::bowl(resolution, target_cells, &reg_cfg)?;
        let make_model = |raw: &FeatureMap<S>, dims: usize, sigma: f64| -> Result<FilterModel<S>, TrackerError> {
            let projection = init_projection(raw, dims.min(raw.num_channels()))?;
            Ok(FilterModel::new(
                projection,
                regularizer.clone(),
                LabelConfig::new(c::<S>(sigma), target_cells),
                resolution,
                c::<S>(cfg.learning_rate),
                c::<S>(cfg.proj_penalty),
            )?)
        };
        let deep_model = make_model(&raw_deep, cfg.proj_dims_deep, cfg.sigma_d)?;
        let shallow_model = make_model(&raw_shallow, cfg.proj_dims_shallow, cfg.sigma_s)?;

        let mut deep = Branch {
            name: "deep",
            provider: deep_provider,
            model: deep_model,
            policy: cfg.policy(cfg.augmentation_deep),
        };
        let mut shallow = Branch {
            name: "shallow",
            provider: shallow_provider,
            model: shallow_model,
            policy: cfg.policy(cfg.augmentation_shallow),
        };
        let dropout_seed = stream_seed(cfg.seed, DROPOUT_STREAM);
        let train_cfg = cfg.train_config();
        let mut reports = Vec::with_capacity(2);
        for branch in [&mut deep, &mut shallow] {
            let samples = branch.augmented(&patch, 0, cfg.feature_window, dropout_seed)?;
            branch.model.add_samples(&samples, None)?;
            reports.push(branch.model.train_initial(&train_cfg)?);
        }
        let shallow_report = reports.pop().expect("two reports");
        let deep_report = reports.pop().expect("two reports");

        Ok(Self {
            cfg: cfg.clone(),
            deep,
            shallow,
            frame_size: (frame.width(), frame.height()),
            initial_size: (w, h),
            base_side,
            resolution,
            state,
            frame_index: 0,
            train_cfg,
            dropout_seed,
            update_count: 0,
            reports: (deep_report, shallow_report),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn state(&self) -> TargetState<S> {
        self.state
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn deep_model(&self) -> &FilterModel<S> {
        &self.deep.model
    }

    pub fn shallow_model(&self) -> &FilterModel<S> {
        &self.shallow.model
    }

    /// Score resolution shared by both models.
    pub fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    /// Latest training reports `(deep, shallow)`.
    pub fn last_reports(&self) -> (&TrainReport<S>, &TrainReport<S>) {
        (&self.reports.0, &self.reports.1)
    }

    fn search_side(&self) -> S {
        self.base_side * self.state.scale
    }

    fn geometry(&self) -> Result<ScoreGeometry<S>, TrackerError> {
        Ok(ScoreGeometry::new(
            self.resolution.0,
            self.resolution.1,
            self.cfg.scale_levels,
            self.search_side() / cu::<S>(self.resolution.0),
            c::<S>(self.cfg.scale_step),
        )?)
    }

    /// Score maps `(deep, shallow)` over all scale levels around the current estimate.
    pub fn score_maps(&self, frame: &Image<S>, frame_index: usize) -> Result<(ScoreMap<S>, ScoreMap<S>), TrackerError> {
        let geometry = self.geometry()?;
        let (cx, cy) = self.state.center;
        let side = self.search_side();
        let p = self.cfg.patch_size;
        let mut deep_levels = Vec::with_capacity(geometry.levels);
        let mut shallow_levels = Vec::with_capacity(geometry.levels);
        for level in 0..geometry.levels {
            let s = side * geometry.level_scale(level);
            let patch = frame.extract_patch(cx, cy, s, s, p, p);
            let window = self.cfg.feature_window;
            deep_levels.push(self.deep.model.predict_score(&self.deep.features(&patch, frame_index, window)?)?);
            shallow_levels.push(
                self.shallow
                    .model
                    .predict_score(&self.shallow.features(&patch, frame_index, window)?)?,
            );
        }
        Ok((
            ScoreMap::with_geometry(deep_levels, geometry)?,
            ScoreMap::with_geometry(shallow_levels, geometry)?,
        ))
    }

    /// Locates the target in the next frame and updates the models on schedule.
    pub fn process_frame(&mut self, frame: &Image<S>) -> Result<FrameOutput<S>, TrackerError> {
        if (frame.width(), frame.height()) != self.frame_size {
            return Err(TrackerError::FrameSize {
                expected: self.frame_size,
                actual: (frame.width(), frame.height()),
            });
        }
        let frame_index = self.frame_index + 1;
        let (y_d, y_s) = self.score_maps(frame, frame_index)?;
        let geometry = *y_d.geometry();
        let (w, h) = self.state.size;
        let distance = StateDistance::for_target(w, h, c::<S>(self.cfg.kappa_factor))?;
        let cand_cfg = CandidateConfig {
            per_source: self.cfg.candidates_per_source,
            nms_radius: c::<S>(self.cfg.nms_factor) * (w * w + h * h).sqrt(),
        };
        let mode = match self.cfg.fusion {
            FusionMode::Adaptive => FusionMode::Adaptive,
            FusionMode::Fixed { beta_s } => FusionMode::Fixed { beta_s: c::<S>(beta_s) },
        };
        let outcome = fuse(mode, &y_d, &y_s, &distance, c::<S>(self.cfg.mu), &cand_cfg)?;
        let result = outcome.result;

        let subcell = if self.cfg.subcell_refine {
            subcell_offset(&y_d, &y_s, result.state, result.beta_d, result.beta_s)
        } else {
            (S::zero(), S::zero())
        };
        let cell = geometry.cell_size * geometry.level_scale(result.state.level);
        let (ox, oy) = geometry.pixel_offset(result.state);
        let mut cx = self.state.center.0 + ox + subcell.0 * cell;
        let mut cy = self.state.center.1 + oy + subcell.1 * cell;
        let (fw, fh) = (cu::<S>(self.frame_size.0), cu::<S>(self.frame_size.1));
        let clamped = !(cx >= S::zero() && cx <= fw && cy >= S::zero() && cy <= fh);
        cx = cx.max(S::zero()).min(fw);
        cy = cy.max(S::zero()).min(fh);
        let scale = self.state.scale * geometry.level_scale(result.state.level);
        self.state = TargetState {
            center: (cx, cy),
            size: (self.initial_size.0 * scale, self.initial_size.1 * scale),
            scale,
        };
        self.frame_index = frame_index;

        let updated = frame_index % self.cfg.update_interval == 0;
        if updated {
            self.update_models(frame, frame_index)?;
        }

        Ok(FrameOutput {
            state: self.state,
            fusion: result,
            diagnostics: FrameDiagnostics {
                frame_index,
                candidates: outcome.candidates.len(),
                constant_map: outcome.warning,
                clamped,
                updated,
                subcell,
                deep_peak: y_d.values().fold(S::neg_infinity(), S::max),
                shallow_peak: y_s.values().fold(S::neg_infinity(), S::max),
            },
        })
    }

    fn update_models(&mut self, frame: &Image<S>, frame_index: usize) -> Result<(), TrackerError> {
        let side = self.search_side();
        let (cx, cy) = self.state.center;
        let p = self.cfg.patch_size;
        let patch = frame.extract_patch(cx, cy, side, side, p, p);
        let window = self.cfg.feature_window;
        self.update_count += 1;
        let seed = self.dropout_seed.wrapping_add(self.update_count.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let augment = self.cfg.augment_updates;
        let train_cfg = self.train_cfg;
        let mut reports = Vec::with_capacity(2);
        for branch in [&mut self.deep, &mut self.shallow] {
            let samples = if augment {
                branch.augmented(&patch, frame_index, window, seed)?
            } else {
                vec![branch.features(&patch, frame_index, window)?]
            };
            let (last, rest) = samples.split_last().expect("at least one sample");
            if !rest.is_empty() {
                branch.model.add_samples(rest, None)?;
            }
            reports.push(branch.model.update(last, None, &train_cfg)?);
        }
        self.reports.1 = reports.pop().expect("two reports");
        self.reports.0 = reports.pop().expect("two reports");
        Ok(())
    }
}

/// Parabolic peak interpolation along rows and columns of the fused map at
/// the selected level, in cells, each clipped to `[-0.5, 0.5]`. Returns `(dx, dy)`.
fn subcell_offset<S: Scalar>(y_d: &ScoreMap<S>, y_s: &ScoreMap<S>, t: State, beta_d: S, beta_s: S) -> (S, S) {
    let gd = &y_d.levels()[t.level];
    let gs = &y_s.levels()[t.level];
    let fused = |i: isize, j: isize| -> S {
        let a = if beta_d == S::zero() { S::zero() } else { beta_d * gd.get_wrapped(i, j) };
        let b = if beta_s == S::zero() { S::zero() } else { beta_s * gs.get_wrapped(i, j) };
        a + b
    };
    let (r, col) = (t.row as isize, t.col as isize);
    let half = c::<S>(0.5);
    let fit = |m: S, z: S, p: S| -> S {
        let curv = m - z - z + p;
        if curv < S::zero() {
            (half * (m - p) / curv).max(-half).min(half)
        } else {
            S::zero()
        }
    };
    let dx = fit(fused(r, col - 1), fused(r, col), fused(r, col + 1));
    let dy = fit(fused(r - 1, col), fused(r, col), fused(r + 1, col));
    (dx, dy)
}

/// Converts a generic state to `f64` for reporting.
pub fn state_to_f64<S: Scalar>(s: &TargetState<S>) -> TargetState<f64> {
    TargetState {
        center: (to_f64(s.center.0), to_f64(s.center.1)),
        size: (to_f64(s.size.0), to_f64(s.size.1)),
        scale: to_f64(s.scale),
    }
}
