//! Adaptive fusion of a deep and a shallow score map.
//!
//! For a candidate state `t*`, the fused map `y_β = β_d y_d + β_s y_s` has
//! quality `ξ(β_d) = min_t (a_t + b_t β_d)` with `β_s = 1 − β_d`, where
//! `a_t = (y_s(t*) − y_s(t)) / Δ_t` and
//! `b_t = ((y_d(t*) − y_d(t)) − (y_s(t*) − y_s(t))) / Δ_t`.
//! `ξ` is concave and piecewise linear, so the loss
//! `L(β_d) = −ξ(β_d) + μ(β_d² + β_s²)` is convex and is minimized exactly by
//! walking the lower envelope of the lines and solving the quadratic on each piece.

use crate::quality::{quality_with_deltas, QualityError, ScoreMap, State, StateDistance};
use crate::scalar::{c, Scalar};

/// Which map a candidate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Deep,
    Shallow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate<S> {
    pub state: State,
    pub value: S,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet<S> {
    pub candidates: Vec<Candidate<S>>,
    /// Set when a source map was constant and contributed only a placeholder.
    pub warning: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateConfig<S> {
    /// Maximum number of candidates per source map (`K`).
    pub per_source: usize,
    /// Non-maximum suppression radius in image pixels.
    pub nms_radius: S,
}

impl<S: Scalar> CandidateConfig<S> {
    /// `K = 5` and a radius of a quarter of the target diagonal.
    pub fn for_target(width: S, height: S) -> Self {
        Self {
            per_source: 5,
            nms_radius: c::<S>(0.25) * (width * width + height * height).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionResult<S> {
    pub state: State,
    pub beta_d: S,
    pub beta_s: S,
    pub xi: S,
    pub loss: S,
}

/// Strict local maxima of one map (ties broken by grid order) after greedy
/// non-maximum suppression, highest first. A constant map yields the single
/// state `(center level, 0, 0)` and `true` as the warning flag.
pub fn local_maxima<S: Scalar>(map: &ScoreMap<S>, cfg: &CandidateConfig<S>) -> (Vec<(State, S)>, bool) {
    let g = *map.geometry();
    let (lo, hi) = map
        .values()
        .fold((S::infinity(), S::neg_infinity()), |(a, b), v| (a.min(v), b.max(v)));
    if lo == hi {
        return (vec![(State::new(g.center_level, 0, 0), hi)], true);
    }
    let n = g.num_states();
    // `a` beats `b` when higher, or equal and earlier in grid order.
    let beats = |a: usize, va: S, b: usize, vb: S| va > vb || (va == vb && a < b);
    let mut peaks = Vec::new();
    for idx in 0..n {
        let s = g.state(idx);
        let v = map.value_at(idx);
        let mut is_max = true;
        'scan: for dl in -1isize..=1 {
            let l = s.level as isize + dl;
            if l < 0 || l >= g.levels as isize {
                continue;
            }
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if (dl, dr, dc) == (0, 0, 0) {
                        continue;
                    }
                    let r = (s.row as isize + dr).rem_euclid(g.height as isize) as usize;
                    let cc = (s.col as isize + dc).rem_euclid(g.width as isize) as usize;
                    let other = g.index(State::new(l as usize, r, cc));
                    if other == idx {
                        continue;
                    }
                    if !beats(idx, v, other, map.value_at(other)) {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
        }
        if is_max {
            peaks.push((idx, v));
        }
    }
    peaks.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    let mut kept: Vec<(State, S)> = Vec::new();
    for (idx, v) in peaks {
        if kept.len() >= cfg.per_source {
            break;
        }
        let s = g.state(idx);
        let far = kept.iter().all(|(k, _)| {
            let (dx, dy, _) = g.displacement(*k, s);
            (dx * dx + dy * dy).sqrt() >= cfg.nms_radius
        });
        if far {
            kept.push((s, v));
        }
    }
    (kept, false)
}

/// Candidates from both maps; a state found in both is kept once (deep tag).
pub fn extract_candidates<S: Scalar>(
    y_d: &ScoreMap<S>,
    y_s: &ScoreMap<S>,
    cfg: &CandidateConfig<S>,
) -> Result<CandidateSet<S>, QualityError> {
    check_geometry(y_d, y_s)?;
    let (deep, wd) = local_maxima(y_d, cfg);
    let (shallow, ws) = local_maxima(y_s, cfg);
    let mut candidates: Vec<Candidate<S>> = deep
        .into_iter()
        .map(|(state, value)| Candidate {
            state,
            value,
            source: Source::Deep,
        })
        .collect();
    for (state, value) in shallow {
        if !candidates.iter().any(|c| c.state == state) {
            candidates.push(Candidate {
                state,
                value,
                source: Source::Shallow,
            });
        }
    }
    Ok(CandidateSet {
        candidates,
        warning: wd || ws,
    })
}

fn check_geometry<S: Scalar>(y_d: &ScoreMap<S>, y_s: &ScoreMap<S>) -> Result<(), QualityError> {
    if y_d.geometry() != y_s.geometry() {
        return Err(QualityError::InvalidInput("deep and shallow maps differ in geometry".into()));
    }
    Ok(())
}

/// Loss `−ξ + μ(β_d² + β_s²)`.
pub fn fusion_loss<S: Scalar>(xi: S, beta_d: S, mu: S) -> S {
    let beta_s = S::one() - beta_d;
    -xi + mu * (beta_d * beta_d + beta_s * beta_s)
}

struct Lines<S> {
    a: Vec<S>,
    b: Vec<S>,
}

impl<S: Scalar> Lines<S> {
    fn eval(&self, beta: S) -> S {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(&a, &b)| a + b * beta)
            .fold(S::infinity(), S::min)
    }

    /// Line attaining the minimum at `beta`; ties go to the smallest slope
    /// (the one that stays minimal to the right).
    fn argmin_at(&self, beta: S) -> Option<usize> {
        let mut best: Option<(usize, S)> = None;
        for (i, (&a, &b)) in self.a.iter().zip(&self.b).enumerate() {
            let v = a + b * beta;
            match best {
                None => best = Some((i, v)),
                Some((j, bv)) => {
                    if v < bv || (v == bv && b < self.b[j]) {
                        best = Some((i, v));
                    }
                }
            }
        }
        best.map(|(i, _)| i)
    }

    /// Breakpoints of the lower envelope on `[lo, hi]`, with the active line
    /// on each piece.
    fn envelope(&self, lo: S, hi: S) -> Vec<(S, S, usize)> {
        let mut pieces = Vec::new();
        let Some(mut cur) = self.argmin_at(lo) else {
            return pieces;
        };
        let mut start = lo;
        loop {
            let (ac, bc) = (self.a[cur], self.b[cur]);
            let mut next: Option<(S, usize)> = None;
            for (j, (&aj, &bj)) in self.a.iter().zip(&self.b).enumerate() {
                if bj >= bc {
                    continue;
                }
                let x = (aj - ac) / (bc - bj);
                if x <= start {
                    continue;
                }
                match next {
                    None => next = Some((x, j)),
                    Some((nx, nj)) => {
                        if x < nx || (x == nx && bj < self.b[nj]) {
                            next = Some((x, j));
                        }
                    }
                }
            }
            match next {
                Some((x, j)) if x < hi => {
                    pieces.push((start, x, cur));
                    start = x;
                    cur = j;
                }
                _ => {
                    pieces.push((start, hi, cur));
                    break;
                }
            }
        }
        pieces
    }
}

/// Solves the fusion QP for a fixed candidate `t*`, enforcing the margin
/// constraint at every state of the score grid.
pub fn solve_fusion_qp<S: Scalar>(
    t_star: State,
    y_d: &ScoreMap<S>,
    y_s: &ScoreMap<S>,
    d: &StateDistance<S>,
    mu: S,
) -> Result<FusionResult<S>, QualityError> {
    check_geometry(y_d, y_s)?;
    let g = y_d.geometry();
    if !g.contains(t_star) {
        return Err(QualityError::StateOutOfRange(t_star));
    }
    if g.num_states() < 2 {
        return Err(QualityError::InvalidInput("score grid has a single state".into()));
    }
    if !(mu >= S::zero()) {
        return Err(QualityError::InvalidInput(format!("mu must be nonnegative, got {mu}")));
    }
    let deltas = g.delta_table(t_star, d);
    let star = g.index(t_star);
    let (yd0, ys0) = (y_d.value(t_star), y_s.value(t_star));
    let mut lines = Lines {
        a: Vec::with_capacity(deltas.len()),
        b: Vec::with_capacity(deltas.len()),
    };
    // States at zero distance impose `a + b·β ≥ 0` directly on β.
    let (mut lo, mut hi) = (S::zero(), S::one());
    for (i, &dl) in deltas.iter().enumerate() {
        if i == star {
            continue;
        }
        let md = yd0 - y_d.value_at(i);
        let ms = ys0 - y_s.value_at(i);
        if dl == S::zero() {
            // ms + (md - ms)·β ≥ 0
            let slope = md - ms;
            if slope > S::zero() {
                lo = lo.max(-ms / slope);
            } else if slope < S::zero() {
                hi = hi.min(-ms / slope);
            } else if ms < S::zero() {
                lo = S::one();
                hi = S::zero();
            }
            continue;
        }
        lines.a.push(ms / dl);
        lines.b.push((md - ms) / dl);
    }
    if lo > hi {
        return Ok(FusionResult {
            state: t_star,
            beta_d: c(0.5),
            beta_s: c(0.5),
            xi: S::neg_infinity(),
            loss: S::infinity(),
        });
    }

    let mut candidates: Vec<S> = vec![lo, hi];
    let two = c::<S>(2.0);
    let four = c::<S>(4.0);
    for (p0, p1, k) in lines.envelope(lo, hi) {
        candidates.push(p0);
        candidates.push(p1);
        if mu > S::zero() {
            // dL/dβ = −b + μ(4β − 2) = 0
            let beta = (lines.b[k] + two * mu) / (four * mu);
            candidates.push(beta.max(p0).min(p1));
        }
    }
    if mu > S::zero() {
        let unconstrained = c::<S>(0.5);
        if unconstrained >= lo && unconstrained <= hi && lines.a.is_empty() {
            candidates.push(unconstrained);
        }
    }

    let mut best: Option<(S, S)> = None;
    for beta in candidates {
        let xi = if lines.a.is_empty() { S::infinity() } else { lines.eval(beta) };
        let loss = fusion_loss(xi, beta, mu);
        let better = match best {
            None => true,
            Some((bb, bl)) => loss < bl || (loss == bl && (beta - c(0.5)).abs() < (bb - c(0.5)).abs()),
        };
        if better {
            best = Some((beta, loss));
        }
    }
    let (beta_d, _) = best.expect("at least two candidates");
    let beta_s = S::one() - beta_d;
    // Report the exact quality of the fused map at the chosen weights.
    let fused = y_d.combine(beta_d, y_s, beta_s)?;
    let xi = quality_with_deltas(&fused, t_star, &deltas);
    Ok(FusionResult {
        state: t_star,
        beta_d,
        beta_s,
        xi,
        loss: fusion_loss(xi, beta_d, mu),
    })
}

/// How the two maps are weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionMode<S> {
    /// Per-frame QP over candidate states.
    Adaptive,
    /// Fixed shallow weight `β_s`; the state is the fused map's argmax.
    Fixed { beta_s: S },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutcome<S> {
    pub result: FusionResult<S>,
    pub candidates: Vec<Candidate<S>>,
    pub warning: bool,
}

/// Runs the QP for every candidate and returns the minimum-loss result. Ties
/// go to higher `ξ`, then smaller `|β_d − 0.5|`, then grid order.
pub fn fuse_and_select<S: Scalar>(
    y_d: &ScoreMap<S>,
    y_s: &ScoreMap<S>,
    d: &StateDistance<S>,
    mu: S,
    cfg: &CandidateConfig<S>,
) -> Result<FusionOutcome<S>, QualityError> {
    let set = extract_candidates(y_d, y_s, cfg)?;
    let g = *y_d.geometry();
    let mut best: Option<FusionResult<S>> = None;
    for cand in &set.candidates {
        let r = solve_fusion_qp(cand.state, y_d, y_s, d, mu)?;
        best = Some(match best {
            None => r,
            Some(b) => {
                if prefer(&r, &b, &g) {
                    r
                } else {
                    b
                }
            }
        });
    }
    Ok(FusionOutcome {
        result: best.expect("candidate set is never empty"),
        candidates: set.candidates,
        warning: set.warning,
    })
}

fn prefer<S: Scalar>(r: &FusionResult<S>, b: &FusionResult<S>, g: &crate::quality::ScoreGeometry<S>) -> bool {
    if r.loss != b.loss {
        return r.loss < b.loss;
    }
    if r.xi != b.xi {
        return r.xi > b.xi;
    }
    let half = c::<S>(0.5);
    let (dr, db) = ((r.beta_d - half).abs(), (b.beta_d - half).abs());
    if dr != db {
        return dr < db;
    }
    g.index(r.state) < g.index(b.state)
}

/// Fixed-weight fusion: `y = (1 − β_s) y_d + β_s y_s`, state = first argmax.
/// A zero-weight map contributes exact zeros, so `β_s = 1` reproduces the
/// shallow map bit for bit.
pub fn fuse_fixed<S: Scalar>(
    y_d: &ScoreMap<S>,
    y_s: &ScoreMap<S>,
    beta_s: S,
    d: &StateDistance<S>,
    mu: S,
) -> Result<FusionOutcome<S>, QualityError> {
    check_geometry(y_d, y_s)?;
    if !(beta_s >= S::zero() && beta_s <= S::one()) {
        return Err(QualityError::InvalidInput(format!("beta_s must lie in [0,1], got {beta_s}")));
    }
    let beta_d = S::one() - beta_s;
    let fused = if beta_s == S::one() {
        y_s.clone()
    } else if beta_s == S::zero() {
        y_d.clone()
    } else {
        y_d.combine(beta_d, y_s, beta_s)?
    };
    let state = fused.argmax();
    let deltas = fused.geometry().delta_table(state, d);
    let xi = quality_with_deltas(&fused, state, &deltas);
    Ok(FusionOutcome {
        result: FusionResult {
            state,
            beta_d,
            beta_s,
            xi,
            loss: fusion_loss(xi, beta_d, mu),
        },
        candidates: vec![Candidate {
            state,
            value: fused.value(state),
            source: if beta_s >= c(0.5) { Source::Shallow } else { Source::Deep },
        }],
        warning: false,
    })
}

/// Dispatches on the fusion mode.
pub fn fuse<S: Scalar>(
    mode: FusionMode<S>,
    y_d: &ScoreMap<S>,
    y_s: &ScoreMap<S>,
    d: &StateDistance<S>,
    mu: S,
    cfg: &CandidateConfig<S>,
) -> Result<FusionOutcome<S>, QualityError> {
    match mode {
        FusionMode::Adaptive => fuse_and_select(y_d, y_s, d, mu, cfg),
        FusionMode::Fixed { beta_s } => fuse_fixed(y_d, y_s, beta_s, d, mu),
    }
}
