//! Per-environment diffusion paths on a jump-aligned Brownian grid.
//!
//! The grid is a uniform base grid of step `dt_target` plus breakpoints
//! (jump-candidate times), each of which is a node. Brownian values at base
//! nodes come from a sequential stream; values at breakpoints are filled in by
//! Brownian-bridge sampling conditioned on the neighbouring nodes already
//! present. Refining the grid therefore never moves a value that already
//! exists, and all truncation levels driven by the same master stream step
//! through identical nodes and increments.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SimError};
use crate::model::RegimeModel;
use crate::rng::{Purpose, StreamKey};

#[derive(Debug, Clone, PartialEq)]
pub struct BrownianGrid {
    dim: usize,
    dt_target: f64,
    horizon: f64,
    key: StreamKey,
    times: Vec<f64>,
    // W(t_k) row-major: values[k * dim + c]
    values: Vec<f64>,
    // index on the uniform base grid, None for breakpoints
    base_index: Vec<Option<u32>>,
    generations: u32,
}

impl BrownianGrid {
    pub fn new(key: StreamKey, dim: usize, dt_target: f64, horizon: f64, breakpoints: &[f64]) -> Result<Self> {
        if dim == 0 {
            return Err(SimError::Domain("dimension must be positive".into()));
        }
        if !(dt_target.is_finite() && dt_target > 0.0) {
            return Err(SimError::Domain(format!("dt must be positive and finite, got {dt_target}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(SimError::Domain(format!("horizon must be positive and finite, got {horizon}")));
        }
        let steps = ((horizon / dt_target) - 1e-9).ceil().max(1.0);
        if steps > u32::MAX as f64 {
            return Err(SimError::Domain(format!("dt {dt_target} too small for horizon {horizon}")));
        }
        let mut times: Vec<f64> = (0..steps as u32).map(|k| f64::from(k) * dt_target).filter(|t| *t < horizon).collect();
        times.push(horizon);
        let base_index = (0..times.len() as u32).map(Some).collect();

        let mut rng = key.rng(Purpose::BrownianBase);
        let mut values = vec![0.0; times.len() * dim];
        for k in 1..times.len() {
            let sd = (times[k] - times[k - 1]).sqrt();
            for c in 0..dim {
                let z: f64 = rng.sample(StandardNormal);
                values[k * dim + c] = values[(k - 1) * dim + c] + sd * z;
            }
        }
        let mut grid = Self { dim, dt_target, horizon, key, times, values, base_index, generations: 0 };
        grid.insert(breakpoints, 0);
        Ok(grid)
    }

    /// Adds breakpoints as a new generation; existing nodes keep their values.
    pub fn refine(&mut self, breakpoints: &[f64]) {
        self.generations += 1;
        self.insert(breakpoints, self.generations);
    }

    fn insert(&mut self, breakpoints: &[f64], generation: u32) {
        let mut fresh: Vec<f64> = breakpoints.iter().copied().filter(|t| *t > 0.0 && *t < self.horizon).collect();
        if fresh.is_empty() {
            return;
        }
        fresh.sort_by(f64::total_cmp);
        fresh.dedup();

        let d = self.dim;
        let mut rng = self.key.rng(Purpose::BrownianBridge(generation));
        let cap = self.times.len() + fresh.len();
        let mut times = Vec::with_capacity(cap);
        let mut values = Vec::with_capacity(cap * d);
        let mut base_index = Vec::with_capacity(cap);
        let mut p = 0;

        times.push(self.times[0]);
        values.extend_from_slice(&self.values[..d]);
        base_index.push(self.base_index[0]);
        for k in 1..self.times.len() {
            let v = self.times[k];
            while p < fresh.len() && fresh[p] < v {
                let s = fresh[p];
                p += 1;
                let u = *times.last().unwrap();
                if s <= u {
                    continue;
                }
                let w = (s - u) / (v - u);
                let sd = ((s - u) * (v - s) / (v - u)).sqrt();
                let left = values.len() - d;
                for c in 0..d {
                    let (wu, wv) = (values[left + c], self.values[k * d + c]);
                    let z: f64 = rng.sample(StandardNormal);
                    values.push(wu + w * (wv - wu) + sd * z);
                }
                times.push(s);
                base_index.push(None);
            }
            if p < fresh.len() && fresh[p] == v {
                p += 1;
            }
            times.push(v);
            values.extend_from_slice(&self.values[k * d..(k + 1) * d]);
            base_index.push(self.base_index[k]);
        }
        self.times = times;
        self.values = values;
        self.base_index = base_index;
    }

    /// Same Brownian path on a coarser base grid: keeps base nodes whose index
    /// is a multiple of `factor`, the final node, and every breakpoint.
    pub fn coarsen(&self, factor: u32) -> Result<Self> {
        if factor == 0 {
            return Err(SimError::Domain("coarsening factor must be positive".into()));
        }
        let last = self.times.len() - 1;
        let keep: Vec<usize> = (0..self.times.len())
            .filter(|&k| k == last || self.base_index[k].is_none_or(|b| b % factor == 0))
            .collect();
        let d = self.dim;
        Ok(Self {
            dt_target: self.dt_target * f64::from(factor),
            times: keep.iter().map(|&k| self.times[k]).collect(),
            values: keep.iter().flat_map(|&k| self.values[k * d..(k + 1) * d].iter().copied()).collect(),
            base_index: keep.iter().map(|&k| self.base_index[k].map(|b| b / factor)).collect(),
            ..self.clone()
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt_target(&self) -> f64 {
        self.dt_target
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `W(t_k)`.
    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// `W(t_{k+1}) - W(t_k)` written into `out`.
    #[inline]
    pub fn increment_into(&self, k: usize, out: &mut [f64]) {
        let d = self.dim;
        let (now, next) = (&self.values[k * d..(k + 1) * d], &self.values[(k + 1) * d..(k + 2) * d]);
        for ((o, a), b) in out.iter_mut().zip(next).zip(now) {
            *o = a - b;
        }
    }

    /// Index of the node at exactly time `t`.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let k = self.times.partition_point(|s| *s < t);
        (self.times.get(k) == Some(&t)).then_some(k)
    }

    pub fn is_breakpoint(&self, k: usize) -> bool {
        self.base_index[k].is_none()
    }
}

/// Outcome of a run over a range of grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StepEnd {
    Reached,
    /// Stop predicate fired at this node index.
    Stopped(usize),
}

pub(crate) struct Scratch {
    drift: Vec<f64>,
    disp: Vec<f64>,
    dw: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(dim: usize) -> Self {
        Self { drift: vec![0.0; dim], disp: vec![0.0; dim * dim], dw: vec![0.0; dim] }
    }
}

/// Euler-Maruyama from node `from` to node `to` in a fixed regime, updating `x`
/// in place. `record` sees every new node; `stop` is checked after each step.
#[allow(clippy::too_many_arguments)]
pub(crate) fn step_nodes(
    model: &RegimeModel,
    x: &mut [f64],
    regime: usize,
    grid: &BrownianGrid,
    from: usize,
    to: usize,
    scratch: &mut Scratch,
    mut stop: impl FnMut(&[f64]) -> bool,
    mut record: impl FnMut(f64, &[f64]),
) -> Result<StepEnd> {
    let d = x.len();
    let times = grid.times();
    for k in from..to {
        let t = times[k];
        let h = times[k + 1] - t;
        model.drift_into(x, regime, t, &mut scratch.drift);
        model.dispersion_into(x, regime, t, &mut scratch.disp);
        grid.increment_into(k, &mut scratch.dw);
        for ((xr, row), b) in x.iter_mut().zip(scratch.disp.chunks_exact(d)).zip(&scratch.drift) {
            let noise: f64 = row.iter().zip(&scratch.dw).map(|(s, w)| s * w).sum();
            *xr += b * h + noise;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { time: times[k + 1] });
        }
        record(times[k + 1], x);
        if stop(x) {
            return Ok(StepEnd::Stopped(k + 1));
        }
    }
    Ok(StepEnd::Reached)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPath {
    pub x_end: Vec<f64>,
    /// `(t, x)` at every node after `t0`, when requested.
    pub samples: Vec<(f64, Vec<f64>)>,
}

/// Integrates `dx = b(x, i, t) dt + sigma(x, i, t) dW` from `t0` to `t1`, both grid nodes.
pub fn integrate_segment(
    model: &RegimeModel,
    x0: &[f64],
    regime: usize,
    t0: f64,
    t1: f64,
    grid: &BrownianGrid,
    record: bool,
) -> Result<SegmentPath> {
    if x0.len() != model.dim() || grid.dim() != model.dim() {
        return Err(SimError::Domain(format!(
            "dimension mismatch: model {}, state {}, grid {}",
            model.dim(),
            x0.len(),
            grid.dim()
        )));
    }
    if !(t0 < t1) {
        return Err(SimError::Domain(format!("segment [{t0}, {t1}] is empty")));
    }
    let from = grid.node_index(t0).ok_or(SimError::GridMismatch { time: t0 })?;
    let to = grid.node_index(t1).ok_or(SimError::GridMismatch { time: t1 })?;
    let mut x = x0.to_vec();
    let mut samples = Vec::new();
    let mut scratch = Scratch::new(model.dim());
    step_nodes(model, &mut x, regime, grid, from, to, &mut scratch, |_| false, |t, x| {
        if record {
            samples.push((t, x.to_vec()))
        }
    })?;
    Ok(SegmentPath { x_end: x, samples })
}
