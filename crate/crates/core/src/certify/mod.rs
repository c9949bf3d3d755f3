//! Grid checkers for Lyapunov-type non-explosion certificates.
//!
//! The conditions quantify over all of `R^d x S`; these checkers evaluate them
//! on a finite grid of states, regimes and times only. A nonnegative margin is
//! evidence, not a proof.

mod powerlaw;
pub mod series;

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Result, SimError};
use crate::model::{norm, RegimeModel, DEFAULT_MAX_TERMS};

pub use powerlaw::PowerLawQ;
pub use series::{beta_series, zeta_bracket, BetaSeries};

/// Simpson intervals used for `int_0^t C(s) ds`.
const SIMPSON_INTERVALS: usize = 1000;

/// Violations kept in a report, worst first.
const MAX_VIOLATIONS: usize = 10;

pub type RateBound = dyn Fn(f64) -> f64 + Send + Sync;

/// Polynomial certificate: `V = (1 + |y|^2)^p + p j^beta` with growth `C(t)`.
#[derive(Clone)]
pub struct PolynomialCert {
    pub p: f64,
    pub beta: f64,
    pub c: Arc<RateBound>,
}

impl PolynomialCert {
    pub fn new(p: f64, beta: f64, c: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        if !(p >= 1.0 && p.is_finite()) {
            return Err(SimError::Domain(format!("p must be >= 1, got {p}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(SimError::Domain(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { p, beta, c: Arc::new(c) })
    }

    pub fn constant(p: f64, beta: f64, c: f64) -> Result<Self> {
        if !(c >= 0.0) {
            return Err(SimError::Domain(format!("C must be nonnegative, got {c}")));
        }
        Self::new(p, beta, move |_| c)
    }

    /// `(1 + |y|^2)^p + p j^beta`.
    pub fn lyapunov(&self, y: &[f64], j: usize) -> f64 {
        (1.0 + norm(y).powi(2)).powf(self.p) + self.p * (j as f64).powf(self.beta)
    }

    /// `inf { V(y, j) : |y| + j >= m }`, over integer `j` and `|y| = max(m - j, 0)`.
    pub fn lyapunov_inf_outside(&self, m: f64) -> f64 {
        let top = m.ceil().max(1.0) as usize;
        (1..=top)
            .map(|j| {
                let r = (m - j as f64).max(0.0);
                (1.0 + r * r).powf(self.p) + self.p * (j as f64).powf(self.beta)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

impl fmt::Debug for PolynomialCert {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PolynomialCert").field("p", &self.p).field("beta", &self.beta).finish_non_exhaustive()
    }
}

/// Exponential certificate with `lambda = alpha c` over `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialCert {
    pub alpha: f64,
    pub c: f64,
    pub beta: f64,
    pub horizon: f64,
}

impl ExponentialCert {
    pub fn new(alpha: f64, c: f64, beta: f64, horizon: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(SimError::Domain(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        if !(c > 0.0 && c.is_finite()) || !(beta > 0.0 && beta.is_finite()) || !(horizon > 0.0 && horizon.is_finite()) {
            return Err(SimError::Domain(format!("need c, beta, T > 0, got c = {c}, beta = {beta}, T = {horizon}")));
        }
        Ok(Self { alpha, c, beta, horizon })
    }
}

/// Finite set of `(y, j, t)` at which a condition is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct CertGrid {
    pub points: Vec<Vec<f64>>,
    pub j_max: usize,
    pub times: Vec<f64>,
}

impl CertGrid {
    pub fn new(points: Vec<Vec<f64>>, j_max: usize, times: Vec<f64>) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if dim == 0 || points.iter().any(|p| p.len() != dim) || j_max == 0 || times.is_empty() {
            return Err(SimError::Domain("grid needs points of one positive dimension, j_max >= 1 and a time node".into()));
        }
        Ok(Self { points, j_max, times })
    }

    /// Radii `0, 0.25, ..., r_max`; points `+-r e_i`, plus `+-r (1, ..., 1)/sqrt(d)` when `d > 1`.
    pub fn radial(dim: usize, r_max: f64, j_max: usize, horizon: f64, time_nodes: usize) -> Result<Self> {
        if dim == 0 || !(r_max >= 0.0) || time_nodes == 0 {
            return Err(SimError::Domain("radial grid needs dim >= 1, r_max >= 0 and a time node".into()));
        }
        let steps = (r_max / 0.25).round() as usize;
        let mut points = vec![vec![0.0; dim]];
        for s in 1..=steps {
            let r = 0.25 * s as f64;
            for axis in 0..dim {
                for sign in [1.0, -1.0] {
                    let mut y = vec![0.0; dim];
                    y[axis] = sign * r;
                    points.push(y);
                }
            }
            if dim > 1 {
                let c = r / (dim as f64).sqrt();
                points.push(vec![c; dim]);
                points.push(vec![-c; dim]);
            }
        }
        let times = if time_nodes == 1 {
            vec![0.0]
        } else {
            (0..time_nodes).map(|k| horizon * k as f64 / (time_nodes - 1) as f64).collect()
        };
        Self::new(points, j_max, times)
    }

    /// `|y| <= 10` in steps of 0.25, `j <= 20`, 11 time nodes on `[0, T]`.
    pub fn default_for(dim: usize, horizon: f64) -> Result<Self> {
        Self::radial(dim, 10.0, 20, horizon, 11)
    }

    /// A single state at every regime up to `j_max` and `t = 0`.
    pub fn single(y: Vec<f64>, j_max: usize) -> Result<Self> {
        Self::new(vec![y], j_max, vec![0.0])
    }

    pub fn len(&self) -> usize {
        self.points.len() * self.j_max * self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn states(&self) -> Vec<(&[f64], usize)> {
        self.points.iter().flat_map(|y| (1..=self.j_max).map(move |j| (y.as_slice(), j))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeEval {
    pub y: Vec<f64>,
    pub j: usize,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl NodeEval {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// Outcome of a grid check of a certificate inequality.
#[derive(Debug, Clone, PartialEq)]
pub struct CertReport {
    pub condition: &'static str,
    /// `min(RHS - LHS)` over the grid; negative means violated.
    pub margin: f64,
    pub worst: NodeEval,
    pub violations: Vec<NodeEval>,
    pub nodes: usize,
    /// Trapezoid estimate of `int_0^T sup_grid |sigma|_HS^2 dt`.
    pub sigma_integral: f64,
    /// Largest number of rate evaluations a series needed.
    pub series_terms: usize,
}

impl CertReport {
    pub fn certified(&self) -> bool {
        self.margin >= 0.0
    }
}

impl fmt::Display for CertReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.certified() { "certified on grid" } else { "violated on grid" };
        writeln!(f, "{} condition: {verdict} ({} nodes; finite grid only, not a proof on all states)", self.condition, self.nodes)?;
        writeln!(f, "margin: {:.6e}", self.margin)?;
        writeln!(
            f,
            "worst node: y = {:?}, j = {}, t = {}, lhs = {:.6e}, rhs = {:.6e}",
            self.worst.y, self.worst.j, self.worst.t, self.worst.lhs, self.worst.rhs
        )?;
        writeln!(f, "sigma integral: {:.6e}; max series terms: {}", self.sigma_integral, self.series_terms)?;
        for v in &self.violations {
            writeln!(f, "violation: y = {:?}, j = {}, t = {}, slack = {:.6e}", v.y, v.j, v.t, v.slack())?;
        }
        Ok(())
    }
}

/// Supremum of `sum_k |k^beta - j^beta| q_jk(y)` over the grid states.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesReport {
    /// Upper end of the bracket at the maximizing state.
    pub sup: f64,
    pub bracket: (f64, f64),
    pub argmax: (Vec<f64>, usize),
    /// States whose series did not converge within the term budget.
    pub unresolved: Vec<(Vec<f64>, usize)>,
}

/// Evaluates the weighted jump series at every grid state.
pub fn check_local_bounded_beta_sum(model: &RegimeModel, beta: f64, grid: &CertGrid) -> Result<SeriesReport> {
    let rates = model.rates();
    if !(beta > 0.0) || !rates.beta_admissible(beta) {
        return Err(SimError::TailUnresolvable { regime: 0, terms: 0 });
    }
    let states = grid.states();
    let evals: Vec<Result<BetaSeries>> = states.par_iter().map(|(y, j)| beta_series(rates, *j, y, beta, DEFAULT_MAX_TERMS)).collect();
    let mut best: Option<((f64, f64), usize)> = None;
    let mut unresolved = Vec::new();
    for (n, eval) in evals.into_iter().enumerate() {
        match eval {
            Ok(s) => {
                let b = s.absolute();
                if best.is_none_or(|(cur, _)| b.1 > cur.1) {
                    best = Some((b, n));
                }
            }
            Err(SimError::TailUnresolvable { .. }) => unresolved.push((states[n].0.to_vec(), states[n].1)),
            Err(e) => return Err(e),
        }
    }
    let (bracket, n) = best.ok_or(SimError::TailUnresolvable { regime: states[0].1, terms: DEFAULT_MAX_TERMS })?;
    Ok(SeriesReport { sup: bracket.1, bracket, argmax: (states[n].0.to_vec(), states[n].1), unresolved })
}

// sup over grid states of |sigma|_HS^2 at each time node, integrated by the trapezoid rule.
fn sigma_integral(model: &RegimeModel, grid: &CertGrid) -> Result<f64> {
    let d = model.dim();
    let mut buf = vec![0.0; d * d];
    let sups: Vec<f64> = grid
        .times
        .iter()
        .map(|&t| {
            let mut sup: f64 = 0.0;
            for y in &grid.points {
                for j in 1..=grid.j_max {
                    model.dispersion_into(y, j, t, &mut buf);
                    let hs = buf.iter().map(|v| v * v).sum::<f64>();
                    sup = if hs.is_nan() { f64::NAN } else { sup.max(hs) };
                }
            }
            sup
        })
        .collect();
    let integral = if grid.times.len() == 1 {
        sups[0]
    } else {
        grid.times.windows(2).zip(sups.windows(2)).map(|(t, s)| 0.5 * (t[1] - t[0]) * (s[0] + s[1])).sum()
    };
    if !integral.is_finite() {
        return Err(SimError::Domain(format!("dispersion is not square-integrable on the grid (integral {integral})")));
    }
    Ok(integral)
}

fn check_dims(model: &RegimeModel, grid: &CertGrid) -> Result<()> {
    if grid.points[0].len() != model.dim() {
        return Err(SimError::Domain(format!("grid dimension {} differs from model dimension {}", grid.points[0].len(), model.dim())));
    }
    Ok(())
}

// Evaluates lhs/rhs at every node given the series at each state.
fn assemble(
    condition: &'static str,
    model: &RegimeModel,
    grid: &CertGrid,
    beta: f64,
    node: impl Fn(&[f64], usize, f64, &BetaSeries, f64, f64) -> (f64, f64) + Sync,
) -> Result<CertReport> {
    check_dims(model, grid)?;
    let sigma_integral = sigma_integral(model, grid)?;
    let rates = model.rates();
    if !(beta > 0.0) || !rates.beta_admissible(beta) {
        return Err(SimError::TailUnresolvable { regime: 0, terms: 0 });
    }
    let states = grid.states();
    let d = model.dim();
    let evals: Vec<Result<(Vec<NodeEval>, usize)>> = states
        .par_iter()
        .map(|&(y, j)| {
            let series = beta_series(rates, j, y, beta, DEFAULT_MAX_TERMS)?;
            let mut b = vec![0.0; d];
            let mut s = vec![0.0; d * d];
            let nodes = grid
                .times
                .iter()
                .map(|&t| {
                    model.drift_into(y, j, t, &mut b);
                    model.dispersion_into(y, j, t, &mut s);
                    let inner: f64 = y.iter().zip(&b).map(|(u, v)| u * v).sum();
                    let hs: f64 = s.iter().map(|v| v * v).sum();
                    let (lhs, rhs) = node(y, j, t, &series, inner, hs);
                    NodeEval { y: y.to_vec(), j, t, lhs, rhs }
                })
                .collect();
            Ok((nodes, series.terms))
        })
        .collect();

    let mut worst: Option<NodeEval> = None;
    let mut violations: Vec<NodeEval> = Vec::new();
    let mut series_terms = 0;
    let mut nodes = 0;
    for eval in evals {
        let (evals, terms) = eval?;
        series_terms = series_terms.max(terms);
        for e in evals {
            nodes += 1;
            let slack = e.slack();
            if slack.is_nan() {
                return Err(SimError::Domain(format!("condition undefined at y = {:?}, j = {}, t = {}", e.y, e.j, e.t)));
            }
            if slack < 0.0 {
                violations.push(e.clone());
            }
            if worst.as_ref().is_none_or(|w| slack < w.slack()) {
                worst = Some(e);
            }
        }
    }
    violations.sort_by(|a, b| a.slack().total_cmp(&b.slack()));
    violations.truncate(MAX_VIOLATIONS);
    let worst = worst.expect("grid is nonempty");
    Ok(CertReport { condition, margin: worst.slack(), worst, violations, nodes, sigma_integral, series_terms })
}

/// Polynomial condition at every grid node, using the upper end of each series bracket.
pub fn check_condition_poly(model: &RegimeModel, cert: &PolynomialCert, grid: &CertGrid) -> Result<CertReport> {
    let (p, beta) = (cert.p, cert.beta);
    assemble("polynomial", model, grid, beta, |y, j, t, series, inner, hs| {
        let r2 = 1.0 + norm(y).powi(2);
        let weight = r2.powf(p);
        let lhs = series.signed().1 / weight + (2.0 * inner + (2.0 * p - 1.0) * hs) / r2;
        let rhs = (cert.c)(t) * (1.0 + (j as f64).powf(beta) / weight);
        (lhs, rhs)
    })
}

/// Exponential condition; downward and upward jumps carry different weights.
pub fn check_condition_exp(model: &RegimeModel, cert: &ExponentialCert, grid: &CertGrid) -> Result<CertReport> {
    let ExponentialCert { alpha, c, beta, horizon } = *cert;
    let damp = (-alpha * c * horizon).exp();
    assemble("exponential", model, grid, beta, |y, j, _t, series, inner, hs| {
        let r2 = 1.0 + norm(y).powi(2);
        let ra = r2.powf(alpha);
        let down_weight = ra * ra.exp();
        let up_weight = ra * (damp * ra).exp();
        let lhs = (2.0 * inner + (1.0 + 2.0 * alpha * ra) * hs) / r2 + series.down / down_weight + series.up.1 / up_weight;
        let rhs = c * (1.0 + (j as f64).powf(beta) / up_weight);
        (lhs, rhs)
    })
}

/// `exp(int_0^t C(s) ds) ((1 + |x0|^2)^p + p i0^beta)`, composite Simpson for the integral.
pub fn gronwall_bound_poly(cert: &PolynomialCert, x0: &[f64], i0: usize, t: f64) -> f64 {
    let v0 = cert.lyapunov(x0, i0);
    if t == 0.0 {
        return v0;
    }
    let h = t / SIMPSON_INTERVALS as f64;
    let c = &cert.c;
    let mut sum = c(0.0) + c(t);
    for k in 1..SIMPSON_INTERVALS {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * c(k as f64 * h);
    }
    (sum * h / 3.0).exp() * v0
}
