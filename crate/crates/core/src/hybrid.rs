//! Coupled simulation of `(X, Lambda)`.
//!
//! The master Poisson stream fixes every candidate switching time before any
//! integration happens, and all of those times become grid nodes. Between
//! candidates `X` follows Euler-Maruyama in the current regime; at a candidate
//! whose mark is below the truncation level `K`, the mark is classified
//! against the interval layout at the current state. Marks at or above `K`
//! are skipped but keep their nodes, so the grid never depends on `K`.
//!
//! Localization stops a run at the first grid time with `|X| + Lambda >= M`.
//! `simulate` climbs a ladder of levels from that point on the same noise,
//! which makes the path up to `tau_M` identical for every level above `M`.

use std::io::{self, Write};

use crate::error::{Result, SimError};
use crate::integrate::{step_nodes, BrownianGrid, Scratch, StepEnd};
use crate::jumps::JumpStream;
use crate::model::{mark_jump, norm, truncate_coefficients, RegimeModel};
use crate::rng::StreamKey;

/// How the mark cutoff `K` is chosen at each localization level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    /// `K = sup_{|y| <= M} sum_{k <= M+1} q_k(y)` from the rate matrix.
    Auto,
    /// The same `K` at every level.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// First localization level.
    pub m: u32,
    /// Highest level; crossing it means explosion.
    pub m_max: u32,
    pub k: Truncation,
    /// Rate of the master stream. Defaults to the `K` of the first level.
    pub k_max: Option<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Superpose extra marks when a level needs `K` above the stream rate.
    pub extend_stream: bool,
    pub record_path: bool,
}

impl SimConfig {
    pub fn for_model(model: &RegimeModel) -> Self {
        Self {
            m: 8,
            m_max: 1 << 16,
            k: Truncation::Auto,
            k_max: None,
            dt: 1e-3,
            horizon: model.horizon(),
            seed: 0,
            extend_stream: true,
            record_path: true,
        }
    }

    /// `m, 2m, 4m, ...` up to `m_max`, always ending at `m_max`.
    pub fn ladder(&self) -> Result<Vec<u32>> {
        if self.m == 0 || self.m > self.m_max {
            return Err(SimError::Config(format!("need 0 < m <= m_max, got m = {}, m_max = {}", self.m, self.m_max)));
        }
        let mut levels = vec![self.m];
        while let Some(next) = levels.last().unwrap().checked_mul(2).filter(|n| *n <= self.m_max) {
            levels.push(next);
        }
        if *levels.last().unwrap() != self.m_max {
            levels.push(self.m_max);
        }
        Ok(levels)
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SimError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(SimError::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if let Truncation::Fixed(k) = self.k {
            if !(k.is_finite() && k > 0.0) {
                return Err(SimError::Config(format!("fixed K must be positive, got {k}")));
            }
        }
        if let Some(k) = self.k_max {
            if !(k.is_finite() && k > 0.0) {
                return Err(SimError::Config(format!("k_max must be positive, got {k}")));
            }
        }
        Ok(())
    }

    pub(crate) fn k_at(&self, model: &RegimeModel, m: u32) -> Result<f64> {
        match self.k {
            Truncation::Auto => auto_truncation(model, m),
            Truncation::Fixed(k) => Ok(k),
        }
    }
}

/// `K(M) = sup_{|y| <= M} sum_{k=1}^{M+1} q_k(y)`, as bounded by the rate matrix.
pub fn auto_truncation(model: &RegimeModel, m: u32) -> Result<f64> {
    match model.rates().ball_row_block_sup(m) {
        Some(k) if k.is_finite() && k >= 0.0 => Ok(k),
        Some(k) => Err(SimError::Config(format!("rate bound on the ball of radius {m} is {k}"))),
        None => Err(SimError::Config("rate matrix has no ball bound; set K explicitly".into())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub regime: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Switch {
    pub time: f64,
    pub from: usize,
    pub to: usize,
    pub mark: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathStatus {
    ReachedHorizon,
    /// Single-level run stopped at `tau_M`.
    StoppedAtTauM { tau: f64, level: u32 },
    /// The top level of the ladder was crossed at `tau`.
    Exploded { tau: f64 },
}

/// Time the run first satisfied `|X| + Lambda >= level`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelExit {
    pub level: u32,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridPath {
    /// Every grid node, plus a post-switch sample at each switching time.
    /// Empty unless `record_path` is set.
    pub samples: Vec<PathSample>,
    pub switches: Vec<Switch>,
    pub status: PathStatus,
    pub terminal: PathSample,
    pub exits: Vec<LevelExit>,
}

impl HybridPath {
    /// First `t` with `|X| + Lambda >= level`, if the run crossed it.
    pub fn exit_time(&self, level: u32) -> Option<f64> {
        self.exits.iter().find(|e| e.level == level).map(|e| e.tau)
    }

    pub fn write_path_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.terminal.x.len();
        write!(w, "t")?;
        for c in 1..=d {
            write!(w, ",x_{c}")?;
        }
        writeln!(w, ",lambda")?;
        for s in &self.samples {
            write!(w, "{}", s.t)?;
            for v in &s.x {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{}", s.regime)?;
        }
        Ok(())
    }

    pub fn write_switches_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,from,to,z")?;
        for s in &self.switches {
            writeln!(w, "{},{},{},{}", s.time, s.from, s.to, s.mark)?;
        }
        Ok(())
    }
}

fn crossed(x: &[f64], regime: usize, m: f64) -> bool {
    norm(x) + regime as f64 >= m
}

// One trajectory's state, carried across localization levels.
struct Runner<'a> {
    model: &'a RegimeModel,
    stream: JumpStream,
    grid: BrownianGrid,
    extend: bool,
    record: bool,
    x: Vec<f64>,
    regime: usize,
    node: usize,
    cursor: usize,
    samples: Vec<PathSample>,
    switches: Vec<Switch>,
    scratch: Scratch,
}

impl<'a> Runner<'a> {
    fn new(model: &'a RegimeModel, x0: &[f64], i0: usize, cfg: &SimConfig, stream: JumpStream) -> Result<Self> {
        cfg.validate()?;
        if x0.len() != model.dim() {
            return Err(SimError::Domain(format!("initial state has dimension {}, model has {}", x0.len(), model.dim())));
        }
        if i0 == 0 {
            return Err(SimError::Domain("regimes are numbered from 1".into()));
        }
        if stream.horizon() != cfg.horizon {
            return Err(SimError::Config(format!("stream horizon {} differs from {}", stream.horizon(), cfg.horizon)));
        }
        let times: Vec<f64> = stream.events().iter().map(|e| e.time).collect();
        let grid = BrownianGrid::new(stream.key(), model.dim(), cfg.dt, cfg.horizon, &times)?;
        let mut runner = Self {
            model,
            stream,
            grid,
            extend: cfg.extend_stream,
            record: cfg.record_path,
            x: x0.to_vec(),
            regime: i0,
            node: 0,
            cursor: 0,
            samples: Vec::new(),
            switches: Vec::new(),
            scratch: Scratch::new(model.dim()),
        };
        runner.push_sample(0.0);
        Ok(runner)
    }

    fn now(&self) -> f64 {
        self.grid.times()[self.node]
    }

    fn push_sample(&mut self, t: f64) {
        if self.record {
            self.samples.push(PathSample { t, x: self.x.clone(), regime: self.regime });
        }
    }

    fn ensure_rate(&mut self, k: f64) -> Result<()> {
        if k <= self.stream.k_max() {
            return Ok(());
        }
        if !self.extend {
            return Err(SimError::Config(format!("K = {k} exceeds the stream rate {}", self.stream.k_max())));
        }
        let now = self.now();
        let applied_now = self.stream.events()[..self.cursor].iter().rev().take_while(|e| e.time == now).count();
        let added = self.stream.extend(k)?;
        let future: Vec<f64> = added.iter().map(|e| e.time).filter(|t| *t > now).collect();
        self.grid.refine(&future);
        self.node = self.grid.node_index(now).ok_or(SimError::GridMismatch { time: now })?;
        self.cursor = self.stream.events().partition_point(|e| e.time < now) + applied_now;
        Ok(())
    }

    /// Advances until the horizon or until `|X| + Lambda >= m`; returns the stop time.
    fn run(&mut self, k: f64, m: Option<f64>) -> Result<Option<f64>> {
        self.ensure_rate(k)?;
        if m.is_some_and(|m| crossed(&self.x, self.regime, m)) {
            return Ok(Some(self.now()));
        }
        let last = self.grid.len() - 1;
        loop {
            let pending = self.stream.events().get(self.cursor).copied();
            let target = match pending {
                Some(e) => self.grid.node_index(e.time).ok_or(SimError::GridMismatch { time: e.time })?,
                None => last,
            };
            let regime = self.regime;
            let record = self.record;
            let samples = &mut self.samples;
            let end = step_nodes(
                self.model,
                &mut self.x,
                regime,
                &self.grid,
                self.node,
                target,
                &mut self.scratch,
                |x| m.is_some_and(|m| crossed(x, regime, m)),
                |t, x| {
                    if record {
                        samples.push(PathSample { t, x: x.to_vec(), regime })
                    }
                },
            )?;
            if let StepEnd::Stopped(k) = end {
                self.node = k;
                return Ok(Some(self.now()));
            }
            self.node = target;
            if pending.is_none() {
                return Ok(None);
            }
            let now = self.now();
            while let Some(e) = self.stream.events().get(self.cursor).copied().filter(|e| e.time == now) {
                self.cursor += 1;
                if e.mark >= k {
                    continue;
                }
                let h = mark_jump(self.model.rates(), self.regime, &self.x, e.mark)?;
                if h != 0 {
                    let to = (self.regime as i64 + h) as usize;
                    self.switches.push(Switch { time: now, from: self.regime, to, mark: e.mark });
                    self.regime = to;
                    self.push_sample(now);
                }
            }
            if m.is_some_and(|m| crossed(&self.x, self.regime, m)) {
                return Ok(Some(now));
            }
        }
    }

    fn finish(self, status: PathStatus, exits: Vec<LevelExit>) -> HybridPath {
        let terminal = PathSample { t: self.grid.times()[self.node], x: self.x, regime: self.regime };
        HybridPath { samples: self.samples, switches: self.switches, status, terminal, exits }
    }
}

/// One localization level `cfg.m` on a given master stream; stops at `tau_M`.
pub fn simulate_truncated(model: &RegimeModel, x0: &[f64], i0: usize, cfg: &SimConfig, stream: &JumpStream) -> Result<HybridPath> {
    let k = cfg.k_at(model, cfg.m)?;
    let mut runner = Runner::new(model, x0, i0, &SimConfig { extend_stream: false, ..cfg.clone() }, stream.clone())?;
    match runner.run(k, Some(f64::from(cfg.m)))? {
        Some(tau) => {
            let exits = vec![LevelExit { level: cfg.m, tau }];
            Ok(runner.finish(PathStatus::StoppedAtTauM { tau, level: cfg.m }, exits))
        }
        None => Ok(runner.finish(PathStatus::ReachedHorizon, Vec::new())),
    }
}

/// Coefficients cut off outside `{|x| <= M, t <= M}` and no stopping; agrees
/// with `simulate_truncated` up to `tau_M`.
pub fn simulate_with_truncated_coefficients(
    model: &RegimeModel,
    x0: &[f64],
    i0: usize,
    cfg: &SimConfig,
    stream: &JumpStream,
) -> Result<HybridPath> {
    let cut = truncate_coefficients(model, f64::from(cfg.m))?;
    let k = cfg.k_at(model, cfg.m)?;
    let mut runner = Runner::new(&cut, x0, i0, &SimConfig { extend_stream: false, ..cfg.clone() }, stream.clone())?;
    runner.run(k, None)?;
    Ok(runner.finish(PathStatus::ReachedHorizon, Vec::new()))
}

/// Escalating run over the given increasing levels, on the stream of `key`.
pub fn simulate_ladder(model: &RegimeModel, x0: &[f64], i0: usize, cfg: &SimConfig, levels: &[u32], key: StreamKey) -> Result<HybridPath> {
    if levels.is_empty() || levels.contains(&0) || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SimError::Config(format!("levels must be positive and increasing, got {levels:?}")));
    }
    let k0 = cfg.k_at(model, levels[0])?;
    let k_max = cfg.k_max.unwrap_or(k0).max(f64::MIN_POSITIVE);
    let stream = JumpStream::sample(k_max, cfg.horizon, key)?;
    let mut runner = Runner::new(model, x0, i0, cfg, stream)?;
    let mut exits = Vec::new();
    let mut level = 0;
    loop {
        let m = levels[level];
        match runner.run(cfg.k_at(model, m)?, Some(f64::from(m)))? {
            None => return Ok(runner.finish(PathStatus::ReachedHorizon, exits)),
            Some(tau) => {
                exits.push(LevelExit { level: m, tau });
                level += 1;
                if level == levels.len() {
                    return Ok(runner.finish(PathStatus::Exploded { tau }, exits));
                }
            }
        }
    }
}

/// `simulate` for an explicit trajectory key.
pub fn simulate_path(model: &RegimeModel, x0: &[f64], i0: usize, cfg: &SimConfig, key: StreamKey) -> Result<HybridPath> {
    simulate_ladder(model, x0, i0, cfg, &cfg.ladder()?, key)
}

/// Full pipeline with localization escalation, trajectory 0 of `cfg.seed`.
pub fn simulate(model: &RegimeModel, x0: &[f64], i0: usize, cfg: &SimConfig) -> Result<HybridPath> {
    simulate_path(model, x0, i0, cfg, StreamKey::new(cfg.seed, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::integrate_segment;
    use crate::model::ConstantRates;
    use std::sync::Arc;

    fn ou(rates: ConstantRates) -> RegimeModel {
        RegimeModel::new(
            1,
            2.0,
            |x, i, _, out: &mut [f64]| out[0] = -(i as f64) * x[0],
            |_, i, _, out: &mut [f64]| out[0] = if i == 1 { 1.0 } else { 0.5 },
            Arc::new(rates),
        )
        .unwrap()
    }

    fn three_state() -> ConstantRates {
        ConstantRates::new(vec![vec![0.0, 1.0, 2.0], vec![3.0, 0.0, 4.0], vec![5.0, 0.0, 0.0]]).unwrap()
    }

    fn cfg(model: &RegimeModel) -> SimConfig {
        SimConfig { dt: 0.01, ..SimConfig::for_model(model) }
    }

    #[test]
    fn ladder_levels() {
        let m = ou(ConstantRates::zero());
        let c = SimConfig { m: 8, m_max: 100, ..cfg(&m) };
        assert_eq!(c.ladder().unwrap(), vec![8, 16, 32, 64, 100]);
        assert_eq!(SimConfig { m: 8, m_max: 64, ..c.clone() }.ladder().unwrap(), vec![8, 16, 32, 64]);
        assert!(SimConfig { m: 9, m_max: 8, ..c }.ladder().is_err());
    }

    #[test]
    fn k_stability_above_auto() {
        let model = ou(three_state());
        let auto = auto_truncation(&model, 8).unwrap();
        assert_eq!(auto, 15.0);
        let base = SimConfig { m: 8, ..cfg(&model) };
        let mut differs = false;
        for seed in 0..20 {
            let stream = JumpStream::sample(4.0 * auto, 2.0, StreamKey::new(seed, 0)).unwrap();
            let run = |k| simulate_truncated(&model, &[0.5], 2, &SimConfig { k: Truncation::Fixed(k), ..base.clone() }, &stream).unwrap();
            let a = run(auto);
            assert_eq!(a, run(2.0 * auto));
            assert_eq!(a, run(4.0 * auto));
            differs |= a != run(auto / 4.0);
        }
        assert!(differs, "K below the bound never changed a path");
    }

    #[test]
    fn localization_prefix() {
        let model = ou(three_state());
        let stream = JumpStream::sample(100.0, 2.0, StreamKey::new(3, 0)).unwrap();
        let base = SimConfig { k: Truncation::Fixed(15.0), ..cfg(&model) };
        let lo = simulate_truncated(&model, &[0.0], 1, &SimConfig { m: 3, ..base.clone() }, &stream).unwrap();
        let hi = simulate_truncated(&model, &[0.0], 1, &SimConfig { m: 50, ..base }, &stream).unwrap();
        let PathStatus::StoppedAtTauM { tau, level: 3 } = lo.status else { panic!("{:?}", lo.status) };
        assert!(tau > 0.0);
        let prefix = hi.samples.iter().take_while(|s| s.t < tau).count();
        assert_eq!(lo.samples[..prefix], hi.samples[..prefix]);
        assert_eq!(hi.status, PathStatus::ReachedHorizon);
    }

    #[test]
    fn start_outside_level() {
        let model = ou(three_state());
        let stream = JumpStream::sample(15.0, 2.0, StreamKey::new(0, 0)).unwrap();
        let c = SimConfig { m: 3, ..cfg(&model) };
        let p = simulate_truncated(&model, &[1.0], 2, &c, &stream).unwrap();
        assert_eq!(p.status, PathStatus::StoppedAtTauM { tau: 0.0, level: 3 });
    }

    #[test]
    fn no_switching_is_pure_diffusion() {
        let model = ou(ConstantRates::zero());
        let c = SimConfig { m: 1000, m_max: 1000, ..cfg(&model) };
        let p = simulate(&model, &[0.7], 2, &c).unwrap();
        assert!(p.switches.is_empty());
        assert_eq!(p.status, PathStatus::ReachedHorizon);
        let grid = BrownianGrid::new(StreamKey::new(c.seed, 0), 1, c.dt, 2.0, &[]).unwrap();
        let direct = integrate_segment(&model, &[0.7], 2, 0.0, 2.0, &grid, false).unwrap();
        assert_eq!(p.terminal.x, direct.x_end);
        assert_eq!(p.samples.len(), grid.len());
    }

    #[test]
    fn blowup_time() {
        let model = RegimeModel::new(
            1,
            1.0,
            |x, _, _, out: &mut [f64]| out[0] = x[0] * x[0],
            |_, _, _, out: &mut [f64]| out[0] = 0.0,
            Arc::new(ConstantRates::zero()),
        )
        .unwrap();
        let c = SimConfig { dt: 1e-4, m: 8, m_max: 1 << 20, record_path: false, ..SimConfig::for_model(&model) };
        let p = simulate(&model, &[2.0], 1, &c).unwrap();
        let PathStatus::Exploded { tau } = p.status else { panic!("{:?}", p.status) };
        assert!((tau - 0.5).abs() < 0.01, "tau {tau}");
        let taus: Vec<f64> = p.exits.iter().map(|e| e.tau).collect();
        assert!(taus.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(p.exits.last().unwrap().level, 1 << 20);
    }

    #[test]
    fn single_level_ladder_explodes() {
        let model = ou(three_state());
        let c = SimConfig { m: 2, m_max: 2, ..cfg(&model) };
        let p = simulate(&model, &[1.5], 1, &c).unwrap();
        assert_eq!(p.status, PathStatus::Exploded { tau: 0.0 });
    }

    #[test]
    fn stream_extension() {
        let model = ou(three_state());
        let fixed = SimConfig { m: 1, m_max: 64, k: Truncation::Fixed(15.0), ..cfg(&model) };
        // auto K grows from 10 to 15 across the ladder
        let auto = SimConfig { k: Truncation::Auto, ..fixed.clone() };
        assert_eq!(auto_truncation(&model, 1).unwrap(), 10.0);
        let p = simulate(&model, &[0.0], 1, &auto).unwrap();
        assert!(p.exits.iter().any(|e| e.level == 1));
        assert!(p.switches.iter().all(|s| s.from != s.to));
        assert!(p.samples.windows(2).all(|w| w[0].t <= w[1].t));
        let strict = SimConfig { extend_stream: false, ..auto };
        assert!(matches!(simulate(&model, &[0.0], 1, &strict), Err(SimError::Config(_))));
        simulate(&model, &[0.0], 1, &fixed).unwrap();
    }

    #[test]
    fn truncated_coefficients_agree_before_exit() {
        let model = ou(three_state());
        let stream = JumpStream::sample(15.0, 2.0, StreamKey::new(12, 0)).unwrap();
        let c = SimConfig { m: 3, ..cfg(&model) };
        let stopped = simulate_truncated(&model, &[0.2], 1, &c, &stream).unwrap();
        let cut = simulate_with_truncated_coefficients(&model, &[0.2], 1, &c, &stream).unwrap();
        let tau = match stopped.status {
            PathStatus::StoppedAtTauM { tau, .. } => tau,
            _ => 2.0,
        };
        let n = stopped.samples.iter().take_while(|s| s.t < tau).count();
        assert!(n > 10);
        assert_eq!(stopped.samples[..n], cut.samples[..n]);
    }

    #[test]
    fn csv_export() {
        let model = ou(three_state());
        let p = simulate(&model, &[0.1], 1, &SimConfig { horizon: 0.5, ..cfg(&model) }).unwrap();
        let mut path = Vec::new();
        p.write_path_csv(&mut path).unwrap();
        let path = String::from_utf8(path).unwrap();
        assert!(path.starts_with("t,x_1,lambda\n0,0.1,1\n"));
        assert_eq!(path.lines().count(), p.samples.len() + 1);
        let mut sw = Vec::new();
        p.write_switches_csv(&mut sw).unwrap();
        assert_eq!(String::from_utf8(sw).unwrap().lines().count(), p.switches.len() + 1);
    }

    #[test]
    fn switch_samples_follow_switches() {
        let model = ou(three_state());
        let p = simulate(&model, &[0.0], 1, &cfg(&model)).unwrap();
        assert!(!p.switches.is_empty());
        for s in &p.switches {
            let at: Vec<_> = p.samples.iter().filter(|x| x.t == s.time).collect();
            assert!(at.iter().any(|x| x.regime == s.from));
            assert!(at.iter().any(|x| x.regime == s.to));
        }
        assert_eq!(p.terminal.regime, p.switches.last().unwrap().to);
    }
}
