use crate::error::{Result, SimError};
use crate::model::{norm, RateMatrix};

use super::series::{shifted_power_tail, zeta_bracket, zeta_tail};

// Partial sums of m^{-gamma} kept in memory; beyond this `row_sum` and
// `row_tail` fall back to the full zeta bound, which is still an upper bound.
const TABLE: usize = 1 << 16;

/// `q_jk(x) = (j + |x|^p) / |k - j|^gamma` on `{1, 2, ...}`.
#[derive(Debug, Clone)]
pub struct PowerLawQ {
    p: f64,
    gamma: f64,
    zeta: (f64, f64),
    // partial[n] = sum_{m=1}^{n} m^{-gamma}
    partial: Vec<f64>,
}

impl PowerLawQ {
    pub fn new(p: f64, gamma: f64) -> Result<Self> {
        if !(p.is_finite() && p >= 1.0) {
            return Err(SimError::Domain(format!("growth exponent must be >= 1, got {p}")));
        }
        if !(gamma.is_finite() && gamma > 2.0) {
            return Err(SimError::Domain(format!("tail exponent must be > 2, got {gamma}")));
        }
        let mut partial = Vec::with_capacity(TABLE + 1);
        partial.push(0.0);
        let mut acc = 0.0;
        for m in 1..=TABLE {
            acc += (m as f64).powf(-gamma);
            partial.push(acc);
        }
        Ok(Self { p, gamma, zeta: zeta_bracket(gamma), partial })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Certified bracket for `C = sum_{k >= 1} k^{-gamma}`.
    pub fn zeta(&self) -> (f64, f64) {
        self.zeta
    }

    fn level(&self, j: usize, x: &[f64]) -> f64 {
        j as f64 + norm(x).powf(self.p)
    }

    // sum_{m=1}^{n} m^{-gamma}, or an upper bound for it
    fn head(&self, n: usize) -> f64 {
        self.partial.get(n).copied().unwrap_or(self.zeta.1)
    }
}

impl RateMatrix for PowerLawQ {
    fn rate(&self, i: usize, j: usize, x: &[f64]) -> f64 {
        let gap = i.abs_diff(j);
        if gap == 0 {
            return 0.0;
        }
        self.level(i, x) * (gap as f64).powf(-self.gamma)
    }

    fn row_sum(&self, i: usize, x: &[f64]) -> f64 {
        self.level(i, x) * (self.zeta.1 + self.head(i.saturating_sub(1)))
    }

    fn row_tail(&self, i: usize, x: &[f64], n: usize) -> f64 {
        let n = n.max(1);
        let level = self.level(i, x);
        if n <= i {
            level * (self.head(i - n) + self.zeta.1)
        } else {
            let m0 = n - i;
            let integral = zeta_tail(self.gamma, m0 as f64).1;
            let bound = match self.partial.get(m0 - 1) {
                Some(head) => integral.min(self.zeta.1 - head),
                None => integral,
            };
            level * bound
        }
    }

    fn ball_row_block_sup(&self, m: u32) -> Option<f64> {
        let radius = f64::from(m).powf(self.p);
        let total = (1..=m as usize + 1).map(|k| (k as f64 + radius) * (self.zeta.1 + self.head(k - 1))).sum();
        Some(total)
    }

    fn beta_tail(&self, i: usize, x: &[f64], n: usize, beta: f64) -> Option<(f64, f64)> {
        if n <= i {
            return None;
        }
        let (lo, hi) = shifted_power_tail(beta, self.gamma, i as f64, (n - i) as f64)?;
        let level = self.level(i, x);
        Some((level * lo.max(0.0), level * hi))
    }

    fn beta_admissible(&self, beta: f64) -> bool {
        beta > 0.0 && beta < self.gamma - 1.0
    }
}
