//! Dual-model correlation-filter tracking with adaptive score fusion.
//!
//! Two discriminative correlation filters (one on coarse, robust features and
//! one on fine, handcrafted features) are trained independently with their
//! own label widths and augmentation policies. At prediction time their score
//! maps are combined with weights chosen per frame by a small quadratic
//! program that maximizes a confidence-margin quality measure.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`.

pub mod dcf;
pub mod features;
pub mod fusion;
pub mod grid;
pub mod image;
pub mod quality;
pub mod scalar;
pub mod tracker;
pub mod training;

pub use scalar::Scalar;

pub type RealGrid = grid::Grid<f64>;
pub type ComplexGrid = grid::Spectrum<f64>;
pub type FeatureSample = features::FeatureMap<f64>;
pub type RgbImage = image::Image<f64>;
pub type FilterModel = dcf::FilterModel<f64>;
pub type ScoreMap = quality::ScoreMap<f64>;
pub type FusionResult = fusion::FusionResult<f64>;
pub type Tracker = tracker::Tracker<f64>;
pub type TargetState = tracker::TargetState<f64>;
