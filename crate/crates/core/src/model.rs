//! Problem definition: coefficients, the conservative Q-matrix, and the
//! interval layout that turns a Poisson mark into a regime displacement.
//!
//! For every state `x` the half-line `[0, inf)` is cut into consecutive rows,
//! one per regime. Row `i` starts at the anchor `q_1(x) + ... + q_{i-1}(x)` and
//! is split into half-open segments of width `q_ij(x)`, `j = 1, 2, ...`, `j != i`.
//! A mark `z` landing in segment `(i, j)` while the process sits in regime `i`
//! moves it to `j`; any other mark is inert.

use std::fmt;
use std::sync::Arc;

use crate::error::{Result, SimError};

/// Default number of row terms a classification may materialize.
pub const DEFAULT_MAX_TERMS: usize = 1_000_000;

/// Relative slack for conservativeness checks.
pub const RATE_TOL: f64 = 1e-12;

/// `b(x, i, t)` written into `out` (length `d`).
pub type DriftFn = dyn Fn(&[f64], usize, f64, &mut [f64]) + Send + Sync;
/// `sigma(x, i, t)` written row-major into `out` (length `d * d`).
pub type DispersionFn = dyn Fn(&[f64], usize, f64, &mut [f64]) + Send + Sync;

/// Transition rates `q_ij(x)` over the regime set `{1, 2, 3, ...}`.
///
/// Implementations must be pure. Rows may be infinite; the tail bounds are
/// what make classification and series evaluation terminate.
pub trait RateMatrix: Send + Sync {
    /// `q_ij(x)` for `i != j`. Never called with `i == j`.
    fn rate(&self, i: usize, j: usize, x: &[f64]) -> f64;

    /// `q_i(x) = sum_{j != i} q_ij(x)`, exact or an upper bound.
    fn row_sum(&self, i: usize, x: &[f64]) -> f64;

    /// Upper bound on `sum_{j >= n, j != i} q_ij(x)`; nonincreasing in `n`, tends to 0.
    fn row_tail(&self, i: usize, x: &[f64], n: usize) -> f64;

    /// Upper bound on `sup_{|y| <= m} sum_{k=1}^{m+1} q_k(y)`, if one is known.
    fn ball_row_block_sup(&self, m: u32) -> Option<f64>;

    /// Bracket `(lo, hi)` for `sum_{k >= n, k != i} |k^beta - i^beta| q_ik(x)`.
    /// Only requested for `n > i`. The default handles rows with finite support.
    fn beta_tail(&self, i: usize, x: &[f64], n: usize, _beta: f64) -> Option<(f64, f64)> {
        (self.row_tail(i, x, n) == 0.0).then_some((0.0, 0.0))
    }

    /// Whether the weighted series `sum_k |k^beta - i^beta| q_ik` has controllable tails.
    fn beta_admissible(&self, _beta: f64) -> bool {
        true
    }
}

/// State-independent rates on finitely many regimes; rows and columns beyond
/// the matrix are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantRates {
    q: Vec<Vec<f64>>,
    sums: Vec<f64>,
    // suffix[i][n] = sum_{j >= n+1, j != i+1} q[i][j]  (0-based storage)
    suffix: Vec<Vec<f64>>,
}

impl ConstantRates {
    /// Builds from a square matrix; the diagonal is ignored.
    pub fn new(q: Vec<Vec<f64>>) -> Result<Self> {
        let n = q.len();
        let mut q = q;
        for (i, row) in q.iter_mut().enumerate() {
            if row.len() != n {
                return Err(SimError::Domain(format!("rate matrix row {} has length {}, expected {n}", i + 1, row.len())));
            }
            row[i] = 0.0;
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(SimError::Domain(format!("rate {v} in row {} is not a finite nonnegative number", i + 1)));
            }
        }
        let sums = q.iter().map(|row| row.iter().fold(0.0, |acc, v| acc + v)).collect();
        let suffix = q
            .iter()
            .map(|row| {
                let mut s = vec![0.0; n + 1];
                for j in (0..n).rev() {
                    s[j] = s[j + 1] + row[j];
                }
                s
            })
            .collect();
        Ok(Self { q, sums, suffix })
    }

    /// No switching at all.
    pub fn zero() -> Self {
        Self { q: Vec::new(), sums: Vec::new(), suffix: Vec::new() }
    }

    pub fn two_state(q12: f64, q21: f64) -> Result<Self> {
        Self::new(vec![vec![0.0, q12], vec![q21, 0.0]])
    }

    pub fn states(&self) -> usize {
        self.q.len()
    }
}

impl RateMatrix for ConstantRates {
    fn rate(&self, i: usize, j: usize, _x: &[f64]) -> f64 {
        match self.q.get(i.wrapping_sub(1)).and_then(|row| row.get(j.wrapping_sub(1))) {
            Some(v) if i != j => *v,
            _ => 0.0,
        }
    }

    fn row_sum(&self, i: usize, _x: &[f64]) -> f64 {
        self.sums.get(i.wrapping_sub(1)).copied().unwrap_or(0.0)
    }

    fn row_tail(&self, i: usize, _x: &[f64], n: usize) -> f64 {
        match self.suffix.get(i.wrapping_sub(1)) {
            Some(s) => s[n.saturating_sub(1).min(self.q.len())],
            None => 0.0,
        }
    }

    fn ball_row_block_sup(&self, m: u32) -> Option<f64> {
        let upto = (m as usize + 1).min(self.sums.len());
        Some(self.sums[..upto].iter().sum())
    }
}

/// `(X, Lambda)` dynamics: drift, dispersion, and rates on `R^d x {1, 2, ...}`.
#[derive(Clone)]
pub struct RegimeModel {
    dim: usize,
    horizon: f64,
    drift: Arc<DriftFn>,
    dispersion: Arc<DispersionFn>,
    rates: Arc<dyn RateMatrix>,
}

impl fmt::Debug for RegimeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegimeModel").field("dim", &self.dim).field("horizon", &self.horizon).finish_non_exhaustive()
    }
}

impl RegimeModel {
    pub fn new<B, S>(dim: usize, horizon: f64, drift: B, dispersion: S, rates: Arc<dyn RateMatrix>) -> Result<Self>
    where
        B: Fn(&[f64], usize, f64, &mut [f64]) + Send + Sync + 'static,
        S: Fn(&[f64], usize, f64, &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(SimError::Domain("state dimension must be positive".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(SimError::Domain(format!("horizon must be positive and finite, got {horizon}")));
        }
        Ok(Self { dim, horizon, drift: Arc::new(drift), dispersion: Arc::new(dispersion), rates })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn rates(&self) -> &dyn RateMatrix {
        self.rates.as_ref()
    }

    pub fn rates_arc(&self) -> Arc<dyn RateMatrix> {
        Arc::clone(&self.rates)
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], i: usize, t: f64, out: &mut [f64]) {
        (self.drift)(x, i, t, out)
    }

    #[inline]
    pub fn dispersion_into(&self, x: &[f64], i: usize, t: f64, out: &mut [f64]) {
        (self.dispersion)(x, i, t, out)
    }

    pub fn drift(&self, x: &[f64], i: usize, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, i, t, &mut out);
        out
    }

    /// Row-major `d x d` dispersion matrix.
    pub fn dispersion(&self, x: &[f64], i: usize, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.dispersion_into(x, i, t, &mut out);
        out
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(SimError::Domain(format!("horizon must be positive and finite, got {horizon}")));
        }
        Ok(Self { horizon, ..self.clone() })
    }
}

/// Coefficients multiplied by the indicator of `{|x| <= m, t <= m}`; rates unchanged.
pub fn truncate_coefficients(model: &RegimeModel, m: f64) -> Result<RegimeModel> {
    if !(m > 0.0) {
        return Err(SimError::Domain(format!("truncation level must be positive, got {m}")));
    }
    let inside = move |x: &[f64], t: f64| norm(x) <= m && t <= m;
    let drift = Arc::clone(&model.drift);
    let dispersion = Arc::clone(&model.dispersion);
    Ok(RegimeModel {
        dim: model.dim,
        horizon: model.horizon,
        drift: Arc::new(move |x: &[f64], i: usize, t: f64, out: &mut [f64]| {
            if inside(x, t) {
                drift(x, i, t, out)
            } else {
                out.fill(0.0)
            }
        }),
        dispersion: Arc::new(move |x: &[f64], i: usize, t: f64, out: &mut [f64]| {
            if inside(x, t) {
                dispersion(x, i, t, out)
            } else {
                out.fill(0.0)
            }
        }),
        rates: Arc::clone(&model.rates),
    })
}

#[inline]
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// One segment `[lo, hi)` of a row; a mark inside moves the regime to `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub target: usize,
    pub lo: f64,
    pub hi: f64,
}

/// Row `regime` of the interval layout, materialized only as far as needed.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaRow {
    pub regime: usize,
    pub anchor: f64,
    pub segments: Vec<Segment>,
    /// True when the row tail certified that no segment follows the last one.
    pub complete: bool,
}

impl GammaRow {
    pub fn classify(&self, z: f64) -> Option<usize> {
        let idx = self.segments.partition_point(|s| s.hi <= z);
        self.segments.get(idx).filter(|s| s.lo <= z).map(|s| s.target)
    }

    pub fn width(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.hi - self.anchor)
    }
}

fn anchor(rates: &dyn RateMatrix, i: usize, x: &[f64]) -> f64 {
    (1..i).fold(0.0, |acc, k| acc + rates.row_sum(k, x))
}

struct Walk {
    hit: Option<usize>,
    complete: bool,
}

// Materializes segments of row `i` left to right until `z` is classified.
fn walk_row(
    rates: &dyn RateMatrix,
    i: usize,
    x: &[f64],
    anchor: f64,
    z: f64,
    max_terms: usize,
    mut on_segment: impl FnMut(Segment),
) -> Result<Walk> {
    if z < anchor {
        return Ok(Walk { hit: None, complete: false });
    }
    let mut cum = 0.0;
    let mut j = 1;
    let mut terms = 0;
    loop {
        if j != i {
            let w = rates.rate(i, j, x);
            if w > 0.0 {
                let lo = anchor + cum;
                cum += w;
                let hi = anchor + cum;
                on_segment(Segment { target: j, lo, hi });
                if z < hi {
                    return Ok(Walk { hit: (z >= lo).then_some(j), complete: false });
                }
            }
        }
        terms += 1;
        let tail = rates.row_tail(i, x, j + 1);
        if tail <= 0.0 {
            return Ok(Walk { hit: None, complete: true });
        }
        if anchor + cum + tail <= z {
            return Ok(Walk { hit: None, complete: false });
        }
        if terms >= max_terms {
            return Err(SimError::TailUnresolvable { regime: i, terms });
        }
        j += 1;
    }
}

/// Row `i` of the layout at `x`, materialized far enough to classify `z_needed`.
pub fn gamma_row(rates: &dyn RateMatrix, i: usize, x: &[f64], z_needed: f64) -> Result<GammaRow> {
    gamma_row_with_budget(rates, i, x, z_needed, DEFAULT_MAX_TERMS)
}

pub fn gamma_row_with_budget(rates: &dyn RateMatrix, i: usize, x: &[f64], z_needed: f64, max_terms: usize) -> Result<GammaRow> {
    check_regime_and_mark(i, z_needed)?;
    let anchor = anchor(rates, i, x);
    let mut segments = Vec::new();
    let walk = walk_row(rates, i, x, anchor, z_needed, max_terms, |s| segments.push(s))?;
    Ok(GammaRow { regime: i, anchor, segments, complete: walk.complete })
}

/// `h(x, i, z)`: the displacement `j - i` if `z` lies in segment `(i, j)`, else 0.
pub fn mark_jump(rates: &dyn RateMatrix, i: usize, x: &[f64], z: f64) -> Result<i64> {
    mark_jump_with_budget(rates, i, x, z, DEFAULT_MAX_TERMS)
}

pub fn mark_jump_with_budget(rates: &dyn RateMatrix, i: usize, x: &[f64], z: f64, max_terms: usize) -> Result<i64> {
    check_regime_and_mark(i, z)?;
    let anchor = anchor(rates, i, x);
    // row_sum bounds the row mass from above, so marks past it are inert.
    if z < anchor || z >= anchor + rates.row_sum(i, x) {
        return Ok(0);
    }
    let walk = walk_row(rates, i, x, anchor, z, max_terms, |_| {})?;
    Ok(walk.hit.map_or(0, |j| j as i64 - i as i64))
}

fn check_regime_and_mark(i: usize, z: f64) -> Result<()> {
    if i == 0 {
        return Err(SimError::Domain("regimes are numbered from 1".into()));
    }
    if !(z.is_finite() && z >= 0.0) {
        return Err(SimError::Domain(format!("mark must be finite and nonnegative, got {z}")));
    }
    Ok(())
}

/// Samples the rate-matrix contract at the given `(regime, x)` points: nonnegative
/// rates, prefix sums below `row_sum`, and `row_tail` covering the remainder.
pub fn validate_rates(rates: &dyn RateMatrix, points: &[(usize, Vec<f64>)], prefix: usize) -> Result<()> {
    for (i, x) in points {
        let (i, x) = (*i, x.as_slice());
        let total = rates.row_sum(i, x);
        let slack = RATE_TOL * (1.0 + total.abs());
        let mut partial = 0.0;
        for n in 1..=prefix {
            if n != i {
                let q = rates.rate(i, n, x);
                if !(q >= 0.0) {
                    return Err(SimError::Domain(format!("q_{i},{n} = {q} is negative")));
                }
                partial += q;
            }
            if partial > total + slack {
                return Err(SimError::Domain(format!("row {i}: prefix sum {partial} exceeds row_sum {total}")));
            }
            let tail = rates.row_tail(i, x, n + 1);
            if partial + tail < total - slack {
                return Err(SimError::Domain(format!("row {i}: prefix {partial} + tail {tail} falls short of row_sum {total}")));
            }
        }
    }
    Ok(())
}
