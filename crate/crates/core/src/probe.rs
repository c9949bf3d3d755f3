//! Monte Carlo estimators built on `hybrid` trajectories.
//!
//! Trajectory `r` of a probe always uses the stream key `(cfg.seed, r)`, so
//! probes sharing a seed share noise. Per-trajectory values are produced in
//! parallel, collected in index order and reduced sequentially, which makes
//! every estimate independent of the worker count.

use std::fmt::Write as _;
use std::io::{self, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::certify::{gronwall_bound_poly, PolynomialCert};
use crate::error::{Result, SimError};
use crate::hybrid::{simulate_ladder, simulate_truncated, HybridPath, PathStatus, SimConfig};
use crate::jumps::JumpStream;
use crate::model::{norm, RegimeModel};
use crate::rng::{Purpose, StreamKey};

/// Largest empirical mass allowed above the oracle's regime cutoff.
pub const LEAK_TOLERANCE: f64 = 1e-3;

/// Normal quantile for the 95% intervals.
const Z95: f64 = 1.96;

pub const CSV_HEADER: &str = "probe,params,label,estimate,half_width,n,diagnostics";

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub label: String,
    pub value: f64,
    /// `1.96 * sd / sqrt(n)`; zero for exact quantities.
    pub half_width: f64,
    pub n: usize,
    /// Empty when nothing unusual happened.
    pub diagnostics: String,
}

impl Estimate {
    fn exact(label: impl Into<String>, value: f64) -> Self {
        Self { label: label.into(), value, half_width: 0.0, n: 0, diagnostics: String::new() }
    }

    fn sampled(label: impl Into<String>, values: &[f64], diagnostics: String) -> Self {
        let (value, half_width) = mean_ci(values);
        Self { label: label.into(), value, half_width, n: values.len(), diagnostics }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub probe: &'static str,
    /// `key=value` pairs joined by `;`.
    pub params: String,
    pub estimates: Vec<Estimate>,
}

impl ProbeReport {
    pub fn get(&self, label: &str) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.label == label)
    }

    /// Rows without the header line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.estimates {
            writeln!(w, "{},{},{},{},{},{},{}", self.probe, self.params, e.label, e.value, e.half_width, e.n, e.diagnostics)?;
        }
        Ok(())
    }
}

/// Sample mean and 95% half-width, two-pass so constant samples give exactly zero width.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    (mean, Z95 * sd / (n as f64).sqrt())
}

fn run_paths<T: Send>(n: usize, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    if n == 0 {
        return Err(SimError::Config("sample count must be positive".into()));
    }
    (0..n as u64).into_par_iter().map(f).collect()
}

fn horizon_cfg(cfg: &SimConfig, t: f64) -> Result<SimConfig> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(SimError::Domain(format!("time must be finite and nonnegative, got {t}")));
    }
    Ok(SimConfig { horizon: t, record_path: false, ..cfg.clone() })
}

fn params(pairs: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        if !out.is_empty() {
            out.push(';');
        }
        let _ = write!(out, "{k}={v}");
    }
    out
}

fn fmt_vec(x: &[f64]) -> String {
    x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn exploded(paths: &[HybridPath]) -> usize {
    paths.iter().filter(|p| matches!(p.status, PathStatus::Exploded { .. })).count()
}

/// `E[(1 + |X_{t ^ tau_M}|^2)^p + p Lambda^beta]` with `M = cfg.m_max`,
/// reached by escalation from `cfg.m`, next to the Gronwall bound.
pub fn estimate_moment(
    model: &RegimeModel,
    cert: &PolynomialCert,
    x0: &[f64],
    i0: usize,
    t: f64,
    n: usize,
    cfg: &SimConfig,
) -> Result<ProbeReport> {
    let run_cfg = horizon_cfg(cfg, t)?;
    let params = params(&[
        ("t", t.to_string()),
        ("x0", fmt_vec(x0)),
        ("i0", i0.to_string()),
        ("p", cert.p.to_string()),
        ("beta", cert.beta.to_string()),
        ("M", cfg.m_max.to_string()),
        ("dt", cfg.dt.to_string()),
        ("seed", cfg.seed.to_string()),
    ]);
    let bound = gronwall_bound_poly(cert, x0, i0, t);
    let (values, diagnostics) = if t == 0.0 {
        (vec![cert.lyapunov(x0, i0); n.max(1)], String::new())
    } else {
        let levels = run_cfg.ladder()?;
        let paths = run_paths(n, |r| simulate_ladder(model, x0, i0, &run_cfg, &levels, StreamKey::new(cfg.seed, r)))?;
        let values: Vec<f64> = paths.iter().map(|p| cert.lyapunov(&p.terminal.x, p.terminal.regime)).collect();
        let stopped = exploded(&paths);
        (values, if stopped > 0 { format!("stopped_at_tau_M={stopped}") } else { String::new() })
    };
    Ok(ProbeReport {
        probe: "moment",
        params,
        estimates: vec![Estimate::sampled("moment", &values, diagnostics), Estimate::exact("gronwall_bound", bound)],
    })
}

/// Starting points: `x0` and `count - 1` uniform draws from the closed `delta`-ball.
pub fn ball_starts(x0: &[f64], delta: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = StreamKey::new(seed, 0).rng(Purpose::StartPoints);
    let d = x0.len();
    let mut starts = vec![x0.to_vec()];
    while starts.len() < count {
        let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let len = norm(&dir);
        if len == 0.0 {
            continue;
        }
        let r = delta * rng.random::<f64>().powf(1.0 / d as f64);
        starts.push(x0.iter().zip(&dir).map(|(x, u)| x + r * u / len).collect());
    }
    starts
}

/// `sup_y P(tau_M^{y, i0} <= t)` for each `M`, over `starts` points within `delta` of `x0`.
///
/// All starts share trajectory keys. With a certificate, also reports the
/// Chebyshev bound `exp(int C) V(y, i0) / inf_{|z| + j >= M} V(z, j)`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_tau_tail(
    model: &RegimeModel,
    cert: Option<&PolynomialCert>,
    x0: &[f64],
    i0: usize,
    t: f64,
    m_list: &[u32],
    delta: f64,
    starts: usize,
    n: usize,
    cfg: &SimConfig,
) -> Result<ProbeReport> {
    if m_list.is_empty() || m_list.windows(2).any(|w| w[0] >= w[1]) || m_list[0] == 0 {
        return Err(SimError::Config(format!("M list must be positive and increasing, got {m_list:?}")));
    }
    if !(delta >= 0.0) || starts == 0 {
        return Err(SimError::Config("need delta >= 0 and at least one start".into()));
    }
    let run_cfg = horizon_cfg(cfg, t)?;
    let points = ball_starts(x0, delta, starts, cfg.seed);
    let params = params(&[
        ("t", t.to_string()),
        ("x0", fmt_vec(x0)),
        ("i0", i0.to_string()),
        ("delta", delta.to_string()),
        ("starts", starts.to_string()),
        ("dt", cfg.dt.to_string()),
        ("seed", cfg.seed.to_string()),
    ]);

    // hits[s][r][level]
    let mut hits: Vec<Vec<Vec<f64>>> = Vec::with_capacity(points.len());
    for y in &points {
        let rows = if t == 0.0 {
            vec![m_list.iter().map(|&m| f64::from(u8::from(norm(y) + i0 as f64 >= f64::from(m)))).collect(); n.max(1)]
        } else {
            let paths = run_paths(n, |r| simulate_ladder(model, y, i0, &run_cfg, m_list, StreamKey::new(cfg.seed, r)))?;
            paths.iter().map(|p| m_list.iter().map(|&m| f64::from(u8::from(p.exit_time(m).is_some()))).collect()).collect()
        };
        hits.push(rows);
    }

    let mut estimates = Vec::new();
    for (level, &m) in m_list.iter().enumerate() {
        let mut best: Option<Estimate> = None;
        for (s, rows) in hits.iter().enumerate() {
            let column: Vec<f64> = rows.iter().map(|r| r[level]).collect();
            let est = Estimate::sampled(format!("tail:M={m}"), &column, format!("argmax_start={s}"));
            if best.as_ref().is_none_or(|b| est.value > b.value) {
                best = Some(est);
            }
        }
        estimates.push(best.expect("at least one start"));
    }
    if let Some(cert) = cert {
        for &m in m_list {
            let worst = points.iter().map(|y| gronwall_bound_poly(cert, y, i0, t)).fold(0.0, f64::max);
            estimates.push(Estimate::exact(format!("bound:M={m}"), worst / cert.lyapunov_inf_outside(f64::from(m))));
        }
    }
    Ok(ProbeReport { probe: "tau_tail", params, estimates })
}

/// Bounded test function `f(y, j)`.
pub type TestFn = dyn Fn(&[f64], usize) -> f64 + Send + Sync;

/// `P_t f(x + delta, i)` for `delta` in `{0} + offsets`, and the paired
/// differences against `delta = 0`.
///
/// With `couple`, every starting point reuses trajectory keys `0..n`, so the
/// Poisson stream and Brownian path are shared; otherwise each point gets its
/// own block of keys.
#[allow(clippy::too_many_arguments)]
pub fn feller_probe(
    model: &RegimeModel,
    f: &TestFn,
    t: f64,
    x: &[f64],
    i: usize,
    offsets: &[Vec<f64>],
    n: usize,
    cfg: &SimConfig,
    couple: bool,
) -> Result<ProbeReport> {
    if offsets.iter().any(|d| d.len() != x.len()) {
        return Err(SimError::Domain("offsets must match the state dimension".into()));
    }
    let run_cfg = horizon_cfg(cfg, t)?;
    let levels = run_cfg.ladder()?;
    let mut deltas = vec![vec![0.0; x.len()]];
    deltas.extend(offsets.iter().cloned());
    let params = params(&[
        ("t", t.to_string()),
        ("x", fmt_vec(x)),
        ("i", i.to_string()),
        ("couple", couple.to_string()),
        ("dt", cfg.dt.to_string()),
        ("seed", cfg.seed.to_string()),
    ]);

    let mut samples: Vec<Vec<f64>> = Vec::with_capacity(deltas.len());
    let mut flags = Vec::with_capacity(deltas.len());
    for (s, delta) in deltas.iter().enumerate() {
        let y: Vec<f64> = x.iter().zip(delta).map(|(a, b)| a + b).collect();
        let block = if couple { 0 } else { (s * n) as u64 };
        let (values, blown) = if t == 0.0 {
            (vec![f(&y, i); n.max(1)], 0)
        } else {
            let paths = run_paths(n, |r| simulate_ladder(model, &y, i, &run_cfg, &levels, StreamKey::new(cfg.seed, block + r)))?;
            (paths.iter().map(|p| f(&p.terminal.x, p.terminal.regime)).collect(), exploded(&paths))
        };
        samples.push(values);
        flags.push(if blown > 0 { format!("exploded={blown}") } else { String::new() });
    }

    let mut estimates = Vec::new();
    for (s, delta) in deltas.iter().enumerate() {
        estimates.push(Estimate::sampled(format!("value:delta={}", norm(delta)), &samples[s], flags[s].clone()));
    }
    for (s, delta) in deltas.iter().enumerate().skip(1) {
        let diffs: Vec<f64> = samples[s].iter().zip(&samples[0]).map(|(a, b)| a - b).collect();
        let mut est = Estimate::sampled(format!("diff:delta={}", norm(delta)), &diffs, flags[s].clone());
        est.value = est.value.abs();
        estimates.push(est);
    }
    Ok(ProbeReport { probe: "feller", params, estimates })
}

/// `exp(t G)` for the generator restricted to regimes `1..=j_trunc` at the
/// frozen state `x`. Rows lose the mass that would leave the truncated set.
pub fn ctmc_transition_matrix(model: &RegimeModel, x: &[f64], t: f64, j_trunc: usize) -> DMatrix<f64> {
    let rates = model.rates();
    let g = DMatrix::from_fn(j_trunc, j_trunc, |a, b| if a == b { -rates.row_sum(a + 1, x) } else { rates.rate(a + 1, b + 1, x) });
    (g * t).exp()
}

/// Law of `Lambda_t` from `simulate_truncated` against the matrix exponential.
///
/// Meant for models whose rates do not move with `x` along the run (frozen
/// dynamics or state-independent rates); `x0` is where the rates are read.
pub fn ctmc_oracle(model: &RegimeModel, x0: &[f64], i0: usize, t: f64, j_trunc: usize, n: usize, cfg: &SimConfig) -> Result<ProbeReport> {
    if j_trunc == 0 || i0 == 0 || i0 > j_trunc {
        return Err(SimError::Config(format!("need 1 <= i0 <= J, got i0 = {i0}, J = {j_trunc}")));
    }
    let run_cfg = horizon_cfg(cfg, t)?;
    let exact: Vec<f64> = if t == 0.0 {
        (1..=j_trunc).map(|j| f64::from(u8::from(j == i0))).collect()
    } else {
        let p = ctmc_transition_matrix(model, x0, t, j_trunc);
        // expm round-off can leave tiny negative entries
        (0..j_trunc).map(|j| if p[(i0 - 1, j)] > 0.0 { p[(i0 - 1, j)] } else { 0.0 }).collect()
    };
    let leak_exact = (1.0 - exact.iter().sum::<f64>()).max(0.0);

    let regimes: Vec<usize> = if t == 0.0 {
        vec![i0; n.max(1)]
    } else {
        let k = run_cfg.k_at(model, run_cfg.m)?;
        let k_max = run_cfg.k_max.unwrap_or(k).max(f64::MIN_POSITIVE);
        run_paths(n, |r| {
            let stream = JumpStream::sample(k_max, t, StreamKey::new(cfg.seed, r))?;
            Ok(simulate_truncated(model, x0, i0, &run_cfg, &stream)?.terminal.regime)
        })?
    };
    let total = regimes.len();
    let mut counts = vec![0usize; j_trunc + 1];
    for &j in &regimes {
        counts[j.min(j_trunc + 1) - 1] += 1;
    }
    let above = counts[j_trunc] as f64 / total as f64;
    if above > LEAK_TOLERANCE {
        return Err(SimError::TruncationLeak { mass: above, cutoff: j_trunc });
    }

    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let tv = 0.5 * (exact.iter().zip(&freq).map(|(p, q)| (p - q).abs()).sum::<f64>() + (above - leak_exact).abs());
    let mut chi2 = 0.0;
    let mut bins = 0usize;
    for (j, &p) in exact.iter().enumerate() {
        let expected = p * total as f64;
        if expected > 0.0 {
            chi2 += (counts[j] as f64 - expected).powi(2) / expected;
            bins += 1;
        } else if counts[j] > 0 {
            chi2 = f64::INFINITY;
        }
    }
    let p_value = match bins {
        0 | 1 => f64::from(u8::from(chi2 == 0.0)),
        _ => ChiSquared::new((bins - 1) as f64).map(|d| d.sf(chi2)).unwrap_or(f64::NAN),
    };

    let mut estimates = Vec::new();
    for j in 0..j_trunc {
        let f = freq[j];
        let hw = Z95 * (f * (1.0 - f) / total as f64).sqrt();
        estimates.push(Estimate { label: format!("p:{}", j + 1), value: f, half_width: hw, n: total, diagnostics: String::new() });
        estimates.push(Estimate::exact(format!("exact:{}", j + 1), exact[j]));
    }
    estimates.push(Estimate { label: "above_J".into(), value: above, half_width: 0.0, n: total, diagnostics: format!("exact={leak_exact}") });
    estimates.push(Estimate { label: "tv".into(), value: tv, half_width: 0.0, n: total, diagnostics: String::new() });
    estimates.push(Estimate {
        label: "chi2".into(),
        value: chi2,
        half_width: 0.0,
        n: total,
        diagnostics: format!("df={};p_value={p_value}", bins.saturating_sub(1)),
    });
    let params = params(&[
        ("t", t.to_string()),
        ("x0", fmt_vec(x0)),
        ("i0", i0.to_string()),
        ("J", j_trunc.to_string()),
        ("seed", cfg.seed.to_string()),
    ]);
    Ok(ProbeReport { probe: "ctmc_oracle", params, estimates })
}
