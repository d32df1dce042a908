//! Prediction quality: the minimal weighted confidence margin of a score map
//! at a chosen state, and checks of its two limiting bounds.

use thiserror::Error;

use crate::grid::{signed_index, Grid};
use crate::scalar::{c, ci, cu, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QualityError {
    #[error("invalid score map: {0}")]
    InvalidInput(String),
    #[error("state {0:?} is outside the score grid")]
    StateOutOfRange(State),
    #[error("state {state:?} is not a peak: {reason}")]
    NotAPeak { state: State, reason: String },
}

/// A search state: scale level plus translation cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State {
    pub level: usize,
    pub row: usize,
    pub col: usize,
}

impl State {
    pub fn new(level: usize, row: usize, col: usize) -> Self {
        Self { level, row, col }
    }
}

/// Geometry shared by score maps over the same search space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreGeometry<S> {
    pub height: usize,
    pub width: usize,
    pub levels: usize,
    /// Image pixels per cell at the reference level.
    pub cell_size: S,
    /// Multiplicative scale factor between adjacent levels.
    pub scale_step: S,
    /// Level whose scale factor is 1.
    pub center_level: usize,
}

impl<S: Scalar> ScoreGeometry<S> {
    pub fn new(height: usize, width: usize, levels: usize, cell_size: S, scale_step: S) -> Result<Self, QualityError> {
        let g = Self {
            height,
            width,
            levels,
            cell_size,
            scale_step,
            center_level: levels.saturating_sub(1) / 2,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<(), QualityError> {
        if self.height == 0 || self.width == 0 || self.levels == 0 {
            return Err(QualityError::InvalidInput("empty score grid".into()));
        }
        if !(self.cell_size > S::zero()) {
            return Err(QualityError::InvalidInput("cell_size must be positive".into()));
        }
        if !(self.scale_step > S::one()) {
            return Err(QualityError::InvalidInput("scale_step must exceed 1".into()));
        }
        if self.center_level >= self.levels {
            return Err(QualityError::InvalidInput("center level out of range".into()));
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.levels * self.height * self.width
    }

    /// Flat index in grid order `(level, row, col)`.
    pub fn index(&self, s: State) -> usize {
        (s.level * self.height + s.row) * self.width + s.col
    }

    pub fn state(&self, index: usize) -> State {
        let col = index % self.width;
        let row = (index / self.width) % self.height;
        let level = index / (self.width * self.height);
        State { level, row, col }
    }

    pub fn contains(&self, s: State) -> bool {
        s.level < self.levels && s.row < self.height && s.col < self.width
    }

    /// Scale factor of a level relative to the centre level.
    pub fn level_scale(&self, level: usize) -> S {
        self.scale_step.powi(level as i32 - self.center_level as i32)
    }

    /// Log-scale of a level.
    pub fn log_scale(&self, level: usize) -> S {
        ci::<S>(level as isize - self.center_level as isize) * self.scale_step.ln()
    }

    /// Image-pixel offset `(dx, dy)` of a state's cell from the search centre.
    pub fn pixel_offset(&self, s: State) -> (S, S) {
        let cell = self.cell_size * self.level_scale(s.level);
        (
            ci::<S>(signed_index(s.col, self.width)) * cell,
            ci::<S>(signed_index(s.row, self.height)) * cell,
        )
    }

    /// Displacement `(dx, dy, Δlog-scale)` from `a` to `b`. Within one level
    /// the translation is the wrapped cell difference; across levels it is
    /// the difference of the physical offsets.
    pub fn displacement(&self, a: State, b: State) -> (S, S, S) {
        let dlog = self.log_scale(b.level) - self.log_scale(a.level);
        if a.level == b.level {
            let cell = self.cell_size * self.level_scale(a.level);
            let dr = signed_index((b.row + self.height - a.row) % self.height, self.height);
            let dc = signed_index((b.col + self.width - a.col) % self.width, self.width);
            (ci::<S>(dc) * cell, ci::<S>(dr) * cell, dlog)
        } else {
            let (ax, ay) = self.pixel_offset(a);
            let (bx, by) = self.pixel_offset(b);
            (bx - ax, by - ay, dlog)
        }
    }

    /// `Δ(t − t*)` for every state in grid order.
    pub fn delta_table(&self, t_star: State, d: &StateDistance<S>) -> Vec<S> {
        (0..self.num_states())
            .map(|i| {
                let (dx, dy, dl) = self.displacement(t_star, self.state(i));
                d.delta_components(dx, dy, dl)
            })
            .collect()
    }
}

/// Detection scores over translation × scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap<S> {
    levels: Vec<Grid<S>>,
    geometry: ScoreGeometry<S>,
}

impl<S: Scalar> ScoreMap<S> {
    pub fn new(levels: Vec<Grid<S>>, cell_size: S, scale_step: S) -> Result<Self, QualityError> {
        let first = levels
            .first()
            .ok_or_else(|| QualityError::InvalidInput("no scale levels".into()))?;
        let (h, w) = first.shape();
        if levels.iter().any(|g| g.shape() != (h, w)) {
            return Err(QualityError::InvalidInput("scale levels differ in shape".into()));
        }
        let geometry = ScoreGeometry::new(h, w, levels.len(), cell_size, scale_step)?;
        Ok(Self { levels, geometry })
    }

    /// Single-level map.
    pub fn single(values: Grid<S>, cell_size: S) -> Result<Self, QualityError> {
        Self::new(vec![values], cell_size, c(1.02))
    }

    pub fn with_geometry(levels: Vec<Grid<S>>, geometry: ScoreGeometry<S>) -> Result<Self, QualityError> {
        geometry.validate()?;
        if levels.len() != geometry.levels || levels.iter().any(|g| g.shape() != (geometry.height, geometry.width)) {
            return Err(QualityError::InvalidInput("levels do not match geometry".into()));
        }
        Ok(Self { levels, geometry })
    }

    pub fn geometry(&self) -> &ScoreGeometry<S> {
        &self.geometry
    }

    pub fn levels(&self) -> &[Grid<S>] {
        &self.levels
    }

    pub fn value(&self, s: State) -> S {
        self.levels[s.level].get(s.row, s.col)
    }

    pub fn value_at(&self, index: usize) -> S {
        let hw = self.geometry.height * self.geometry.width;
        self.levels[index / hw].as_slice()[index % hw]
    }

    /// Values in grid order.
    pub fn values(&self) -> impl Iterator<Item = S> + '_ {
        self.levels.iter().flat_map(|g| g.as_slice().iter().copied())
    }

    /// First state attaining the maximum, in grid order.
    pub fn argmax(&self) -> State {
        let mut best = 0;
        let mut best_v = S::neg_infinity();
        for (i, v) in self.values().enumerate() {
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        self.geometry.state(best)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            levels: self.levels.iter().map(|g| g.map(&f)).collect(),
            geometry: self.geometry,
        }
    }

    /// `a·self + b·other` over matching geometry.
    pub fn combine(&self, a: S, other: &Self, b: S) -> Result<Self, QualityError> {
        if self.geometry != other.geometry {
            return Err(QualityError::InvalidInput("score maps differ in geometry".into()));
        }
        let levels = self
            .levels
            .iter()
            .zip(&other.levels)
            .map(|(x, y)| x.zip_map(y, |u, v| a * u + b * v).expect("same shape"))
            .collect();
        Ok(Self {
            levels,
            geometry: self.geometry,
        })
    }

    fn check_state(&self, s: State) -> Result<(), QualityError> {
        if self.geometry.contains(s) {
            Ok(())
        } else {
            Err(QualityError::StateOutOfRange(s))
        }
    }
}

/// Parameters of the distance weighting `Δ(τ) = 1 − exp(−κ/2 ‖τ‖²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDistance<S> {
    /// Curvature parameter, 1/pixel².
    pub kappa: S,
    /// Pixel² per squared log-scale unit.
    pub scale_weight: S,
}

impl<S: Scalar> StateDistance<S> {
    pub fn new(kappa: S, scale_weight: S) -> Result<Self, QualityError> {
        if !(kappa > S::zero()) || !(scale_weight >= S::zero()) {
            return Err(QualityError::InvalidInput(format!(
                "need kappa > 0 and scale_weight >= 0, got {kappa}, {scale_weight}"
            )));
        }
        Ok(Self { kappa, scale_weight })
    }

    /// `κ = factor / (a·b)` and `γ_s = a² + b²` for a target of size `(a, b)` pixels.
    pub fn for_target(width: S, height: S, kappa_factor: S) -> Result<Self, QualityError> {
        Self::new(kappa_factor / (width * height), width * width + height * height)
    }

    pub fn delta_components(&self, dx: S, dy: S, dlog: S) -> S {
        let norm_sq = dx * dx + dy * dy + self.scale_weight * dlog * dlog;
        delta(norm_sq, self.kappa)
    }
}

/// `1 − exp(−κ/2 · ‖τ‖²)` given `‖τ‖²`.
pub fn delta<S: Scalar>(norm_sq: S, kappa: S) -> S {
    -(-kappa * c::<S>(0.5) * norm_sq).exp_m1()
}

/// Minimal weighted confidence margin `min_{t≠t*} (y(t*) − y(t)) / Δ(t − t*)`.
pub fn quality<S: Scalar>(score: &ScoreMap<S>, t_star: State, d: &StateDistance<S>) -> Result<S, QualityError> {
    score.check_state(t_star)?;
    let g = score.geometry();
    if g.num_states() < 2 {
        return Err(QualityError::InvalidInput("score grid has a single state".into()));
    }
    let deltas = g.delta_table(t_star, d);
    Ok(quality_with_deltas(score, t_star, &deltas))
}

pub(crate) fn quality_with_deltas<S: Scalar>(score: &ScoreMap<S>, t_star: State, deltas: &[S]) -> S {
    let star = score.geometry().index(t_star);
    let y_star = score.value(t_star);
    let mut best = S::infinity();
    for (i, (y, &dl)) in score.values().zip(deltas).enumerate() {
        if i == star {
            continue;
        }
        let num = y_star - y;
        if dl == S::zero() {
            if num < S::zero() {
                return S::neg_infinity();
            }
            continue;
        }
        let r = num / dl;
        if r < best {
            best = r;
        }
    }
    best
}

/// Finite-difference curvature bound at a peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureReport<S> {
    /// Translation Hessian `[[∂xx, ∂xy], [∂xy, ∂yy]]` in score per pixel².
    pub hessian: [[S; 2]; 2],
    /// Eigenvalues, ascending.
    pub eigenvalues: [S; 2],
    /// `|λ₁| / κ` with `λ₁` the eigenvalue of smallest magnitude.
    pub bound: S,
    /// Allowance for discretization: `1e-2 · bound + 1e-6`.
    pub epsilon_fd: S,
}

/// Central-difference Hessian at `t_star` (same scale level) and the bound
/// `ξ ≤ |λ₁| / κ` it implies.
pub fn curvature_bound<S: Scalar>(score: &ScoreMap<S>, t_star: State, d: &StateDistance<S>) -> Result<CurvatureReport<S>, QualityError> {
    score.check_state(t_star)?;
    let g = score.geometry();
    let grid = &score.levels()[t_star.level];
    let (i, j) = (t_star.row as isize, t_star.col as isize);
    let y0 = grid.get(t_star.row, t_star.col);
    for di in -1..=1 {
        for dj in -1..=1 {
            if (di, dj) != (0, 0) && grid.get_wrapped(i + di, j + dj) > y0 {
                return Err(QualityError::NotAPeak {
                    state: t_star,
                    reason: format!("neighbour ({di},{dj}) is higher"),
                });
            }
        }
    }
    let h = g.cell_size * g.level_scale(t_star.level);
    let h2 = h * h;
    let two = c::<S>(2.0);
    let yy = (grid.get_wrapped(i + 1, j) - two * y0 + grid.get_wrapped(i - 1, j)) / h2;
    let xx = (grid.get_wrapped(i, j + 1) - two * y0 + grid.get_wrapped(i, j - 1)) / h2;
    let xy = (grid.get_wrapped(i + 1, j + 1) - grid.get_wrapped(i + 1, j - 1) - grid.get_wrapped(i - 1, j + 1)
        + grid.get_wrapped(i - 1, j - 1))
        / (c::<S>(4.0) * h2);
    let mean = (xx + yy) * c::<S>(0.5);
    let rad = (((xx - yy) * c::<S>(0.5)).powi(2) + xy * xy).sqrt();
    let (l_lo, l_hi) = (mean - rad, mean + rad);
    let scale = xx.abs().max(yy.abs()).max(xy.abs());
    if l_hi > c::<S>(1e-9) * scale {
        return Err(QualityError::NotAPeak {
            state: t_star,
            reason: format!("Hessian has positive eigenvalue {l_hi}"),
        });
    }
    let smallest = if l_lo.abs() < l_hi.abs() { l_lo } else { l_hi };
    let bound = smallest.abs() / d.kappa;
    Ok(CurvatureReport {
        hessian: [[xx, xy], [xy, yy]],
        eigenvalues: [l_lo, l_hi],
        bound,
        epsilon_fd: c::<S>(1e-2) * bound + c::<S>(1e-6),
    })
}

/// Outcome of the far-distractor check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FarMarginReport<S> {
    /// Radius actually used (raised so that `Δ ≥ 0.99` outside it).
    pub radius: S,
    /// `min (y(t*) − y(t))` over states at least `radius` away; `+∞` if none.
    pub margin: S,
    pub xi: S,
    /// Upper bound on `ξ` implied by the margin.
    pub bound: S,
    pub holds: bool,
}

/// Smallest radius (pixels) beyond which `Δ ≥ 0.99`.
pub fn far_radius<S: Scalar>(kappa: S) -> S {
    (c::<S>(-2.0) * c::<S>(0.01).ln() / kappa).sqrt()
}

pub fn far_margin_check<S: Scalar>(score: &ScoreMap<S>, t_star: State, d: &StateDistance<S>, radius: S) -> Result<FarMarginReport<S>, QualityError> {
    let xi = quality(score, t_star, d)?;
    let g = score.geometry();
    let radius = radius.max(far_radius(d.kappa));
    let y_star = score.value(t_star);
    let mut margin = S::infinity();
    for i in 0..g.num_states() {
        let s = g.state(i);
        let (dx, dy, dl) = g.displacement(t_star, s);
        let dist = (dx * dx + dy * dy + d.scale_weight * dl * dl).sqrt();
        if dist >= radius {
            margin = margin.min(y_star - score.value_at(i));
        }
    }
    let bound = if margin >= S::zero() { margin / c::<S>(0.99) } else { margin };
    let slack = c::<S>(1e-12) * (S::one() + bound.abs());
    Ok(FarMarginReport {
        radius,
        margin,
        xi,
        bound,
        holds: !(margin.is_finite()) || xi <= bound + slack,
    })
}

/// Helper for building Gaussian-bump score maps in tests and demos: value of
/// `Σ_k h_k · exp(−‖t − p_k‖² / (2 s_k²))` at cell `(row, col)` with centred,
/// physical coordinates.
pub fn gaussian_bumps<S: Scalar>(height: usize, width: usize, cell: S, bumps: &[(S, S, S, S)]) -> Grid<S> {
    let half_h = cu::<S>(height / 2);
    let half_w = cu::<S>(width / 2);
    Grid::from_fn(height, width, |i, j| {
        let y = (cu::<S>(i) - half_h) * cell;
        let x = (cu::<S>(j) - half_w) * cell;
        bumps
            .iter()
            .map(|&(px, py, s, h)| {
                let r2 = (x - px).powi(2) + (y - py).powi(2);
                h * (-r2 / (c::<S>(2.0) * s * s)).exp()
            })
            .sum()
    })
}
