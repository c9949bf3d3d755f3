//! Realizations of the Poisson random measure `N(dz, dt)` with intensity
//! `dt dz`, restricted to marks in `[0, k_max)` and times in `(0, T)`.
//!
//! One master stream is sampled per trajectory; lower truncation levels are
//! obtained by dropping marks, never by resampling, so every level sees the
//! same underlying measure.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Result, SimError};
use crate::rng::{Purpose, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpStream {
    k_max: f64,
    horizon: f64,
    events: Vec<JumpEvent>,
    key: StreamKey,
    generations: u32,
}

impl JumpStream {
    /// Homogeneous rate-`k_max` arrivals on `(0, horizon)` with i.i.d. uniform marks.
    pub fn sample(k_max: f64, horizon: f64, key: StreamKey) -> Result<Self> {
        check_rate_and_horizon(k_max, horizon)?;
        let events = poisson_band(0.0, k_max, horizon, &mut key.rng(Purpose::Jumps));
        Ok(Self { k_max, horizon, events, key, generations: 0 })
    }

    pub fn k_max(&self) -> f64 {
        self.k_max
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn events(&self) -> &[JumpEvent] {
        &self.events
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    /// Number of superposition extensions applied so far.
    pub fn generations(&self) -> u32 {
        self.generations
    }

    /// Keeps exactly the events with mark `< k`.
    pub fn thin(&self, k: f64) -> Result<Self> {
        if !(k > 0.0) || k > self.k_max {
            return Err(SimError::Domain(format!("thinning level {k} outside (0, {}]", self.k_max)));
        }
        Ok(Self { k_max: k, events: self.thinned(k).copied().collect(), ..self.clone() })
    }

    pub fn thinned(&self, k: f64) -> impl Iterator<Item = &JumpEvent> {
        self.events.iter().filter(move |e| e.mark < k)
    }

    /// Raises `k_max` by superposing an independent band of marks in
    /// `[k_max, new_k_max)`. Existing events are untouched. Returns the new
    /// events in time order.
    pub fn extend(&mut self, new_k_max: f64) -> Result<Vec<JumpEvent>> {
        if !(new_k_max.is_finite() && new_k_max > self.k_max) {
            return Err(SimError::Domain(format!("cannot extend stream from {} to {new_k_max}", self.k_max)));
        }
        self.generations += 1;
        let mut rng = self.key.rng(Purpose::JumpExtension(self.generations));
        let added = poisson_band(self.k_max, new_k_max, self.horizon, &mut rng);
        let mut merged = Vec::with_capacity(self.events.len() + added.len());
        let (mut a, mut b) = (self.events.iter().peekable(), added.iter().peekable());
        while let (Some(x), Some(y)) = (a.peek(), b.peek()) {
            if x.time <= y.time {
                merged.push(*a.next().unwrap());
            } else {
                merged.push(*b.next().unwrap());
            }
        }
        merged.extend(a.copied());
        merged.extend(b.copied());
        self.events = merged;
        self.k_max = new_k_max;
        Ok(added)
    }

    /// Debug dump: `time,mark` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,mark")?;
        for e in &self.events {
            writeln!(w, "{},{}", e.time, e.mark)?;
        }
        Ok(())
    }
}

/// `sample_stream(k_max, T, seed)` for trajectory 0.
pub fn sample_stream(k_max: f64, horizon: f64, seed: u64) -> Result<JumpStream> {
    JumpStream::sample(k_max, horizon, StreamKey::new(seed, 0))
}

fn check_rate_and_horizon(k_max: f64, horizon: f64) -> Result<()> {
    if !(k_max.is_finite() && k_max > 0.0) {
        return Err(SimError::Domain(format!("stream rate must be positive and finite, got {k_max}")));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(SimError::Domain(format!("horizon must be positive and finite, got {horizon}")));
    }
    Ok(())
}

fn poisson_band<R: Rng>(lo: f64, hi: f64, horizon: f64, rng: &mut R) -> Vec<JumpEvent> {
    let rate = hi - lo;
    let mut events = Vec::with_capacity((rate * horizon * 1.1 + 8.0) as usize);
    let mut t = 0.0;
    loop {
        let gap: f64 = Exp1.sample(rng);
        t += gap / rate;
        if t >= horizon {
            break;
        }
        let mark = lo + rate * rng.random::<f64>();
        // guard the half-open band against rounding up to `hi`
        events.push(JumpEvent { time: t, mark: if mark < hi { mark } else { lo } });
    }
    events
}
