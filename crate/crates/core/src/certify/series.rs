//! Series with certified tails.
//!
//! Every infinite sum here is returned as a bracket `[lo, hi]` that contains
//! the exact value, built from finitely many terms plus a rigorous bound on
//! what was left out.

use crate::error::{Result, SimError};
use crate::model::RateMatrix;

/// Relative width at which a bracketed series counts as evaluated.
pub const SERIES_RTOL: f64 = 1e-10;

/// Terms summed exactly before the tail bracket takes over in [`zeta_bracket`].
const ZETA_TERMS: usize = 10_000;

/// Bracket for `sum_{m >= m0} m^{-s}`, `s > 1`, `m0 >= 1`.
///
/// Uses convexity of `m^{-s}`: the trapezoid rule overestimates the integral,
/// the midpoint rule underestimates it.
pub fn zeta_tail(s: f64, m0: f64) -> (f64, f64) {
    debug_assert!(s > 1.0 && m0 >= 1.0);
    let lo = m0.powf(1.0 - s) / (s - 1.0) + 0.5 * m0.powf(-s);
    let hi = (m0 - 0.5).powf(1.0 - s) / (s - 1.0);
    (lo, hi)
}

/// Bracket for `zeta(s) = sum_{m >= 1} m^{-s}`, `s > 1`.
pub fn zeta_bracket(s: f64) -> (f64, f64) {
    // smallest terms first
    let head: f64 = (1..=ZETA_TERMS).rev().map(|m| (m as f64).powf(-s)).sum();
    let (lo, hi) = zeta_tail(s, (ZETA_TERMS + 1) as f64);
    (head + lo, head + hi)
}

/// Generalized binomial coefficient `C(beta, r)`.
fn binom(beta: f64, r: u32) -> f64 {
    (0..r).fold(1.0, |acc, k| acc * (beta - f64::from(k)) / f64::from(k + 1))
}

/// Bracket for `sum_{m >= m0} ((j + m)^beta - j^beta) m^{-gamma}`.
///
/// Expands `(j + m)^beta = m^beta sum_r C(beta, r) (j/m)^r`, which converges
/// geometrically once `m0 >= 2j`, and bounds each resulting zeta tail.
/// Returns `None` when `m0 < 2j` or `gamma - beta <= 1`.
pub fn shifted_power_tail(beta: f64, gamma: f64, j: f64, m0: f64) -> Option<(f64, f64)> {
    if m0 < 2.0 * j || gamma - beta <= 1.0 || beta <= 0.0 {
        return None;
    }
    let (mut lo, mut hi) = (0.0, 0.0);
    let add = |lo: &mut f64, hi: &mut f64, c: f64, s: f64| {
        let (zl, zh) = zeta_tail(s, m0);
        if c >= 0.0 {
            *lo += c * zl;
            *hi += c * zh;
        } else {
            *lo += c * zh;
            *hi += c * zl;
        }
    };
    add(&mut lo, &mut hi, -j.powf(beta), gamma);
    let ratio = j / m0;
    let mut r = 0;
    loop {
        add(&mut lo, &mut hi, binom(beta, r) * j.powi(r as i32), gamma - beta + f64::from(r));
        r += 1;
        let next = binom(beta, r);
        if next == 0.0 {
            // integer beta: the expansion terminated
            break;
        }
        if f64::from(r) >= beta.ceil() {
            let (_, z) = zeta_tail(gamma - beta + f64::from(r), m0);
            let rem = next.abs() * j.powi(r as i32) * z / (1.0 - ratio);
            if rem <= 1e-17 * (1.0 + hi.abs()) || r >= 400 {
                lo -= rem;
                hi += rem;
                break;
            }
        }
    }
    Some((lo, hi))
}

/// `sum_{k != j} (k^beta - j^beta) q_jk(y)`, split at `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaSeries {
    /// `sum_{k < j}`, a finite sum, nonpositive.
    pub down: f64,
    /// Bracket for `sum_{k > j}`, nonnegative.
    pub up: (f64, f64),
    /// Rate evaluations used.
    pub terms: usize,
}

impl BetaSeries {
    /// Bracket for the signed series.
    pub fn signed(&self) -> (f64, f64) {
        (self.down + self.up.0, self.down + self.up.1)
    }

    /// Bracket for `sum_k |k^beta - j^beta| q_jk(y)`.
    pub fn absolute(&self) -> (f64, f64) {
        (self.up.0 - self.down, self.up.1 - self.down)
    }
}

/// Evaluates the weighted row series at `(y, j)` until the bracket is narrower
/// than `SERIES_RTOL * (1 + |partial sum|)`.
pub fn beta_series(rates: &dyn RateMatrix, j: usize, y: &[f64], beta: f64, max_terms: usize) -> Result<BetaSeries> {
    if j == 0 {
        return Err(SimError::Domain("regimes are numbered from 1".into()));
    }
    if !(beta > 0.0) || !rates.beta_admissible(beta) {
        return Err(SimError::TailUnresolvable { regime: j, terms: 0 });
    }
    let jb = (j as f64).powf(beta);
    let mut down = 0.0;
    for k in 1..j {
        down += ((k as f64).powf(beta) - jb) * rates.rate(j, k, y);
    }
    let mut terms = j - 1;
    let mut up = 0.0;
    let mut k = j + 1;
    let mut next_check = 1;
    loop {
        // bracket for sum over k' >= k
        if k - j >= next_check {
            next_check = (next_check * 2).min(next_check + 4096);
            if let Some((tl, th)) = rates.beta_tail(j, y, k, beta) {
                let width = th - tl;
                if width <= SERIES_RTOL * (1.0 + (up + down).abs()) {
                    return Ok(BetaSeries { down, up: (up + tl, up + th), terms });
                }
            }
        }
        if terms >= max_terms {
            return Err(SimError::TailUnresolvable { regime: j, terms });
        }
        up += ((k as f64).powf(beta) - jb) * rates.rate(j, k, y);
        terms += 1;
        k += 1;
    }
}
