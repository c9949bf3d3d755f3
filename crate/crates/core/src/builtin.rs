//! Named model families with numeric parameters.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::certify::PowerLawQ;
use crate::error::{Result, SimError};
use crate::model::{ConstantRates, RegimeModel};

pub struct ParamSpec {
    pub name: &'static str,
    pub default: f64,
    pub help: &'static str,
}

pub struct ModelSpec {
    pub name: &'static str,
    pub summary: &'static str,
    pub params: &'static [ParamSpec],
    pub x0: &'static [f64],
    pub i0: usize,
}

const fn param(name: &'static str, default: f64, help: &'static str) -> ParamSpec {
    ParamSpec { name, default, help }
}

pub const CATALOG: &[ModelSpec] = &[
    ModelSpec {
        name: "ou2",
        summary: "d=1 Ornstein-Uhlenbeck in 2 regimes, dX = -theta_i X dt + sigma_i dW, constant rates",
        params: &[
            param("theta1", 1.0, "mean reversion in regime 1"),
            param("theta2", 2.0, "mean reversion in regime 2"),
            param("sigma1", std::f64::consts::SQRT_2, "noise in regime 1"),
            param("sigma2", 1.0, "noise in regime 2"),
            param("q12", 1.0, "rate 1 -> 2"),
            param("q21", 2.0, "rate 2 -> 1"),
            param("T", 1.0, "horizon"),
        ],
        x0: &[0.0],
        i0: 1,
    },
    ModelSpec {
        name: "ctmc2",
        summary: "pure jump, 2 regimes, b = sigma = 0",
        params: &[param("q12", 1.0, "rate 1 -> 2"), param("q21", 2.0, "rate 2 -> 1"), param("T", 1.0, "horizon")],
        x0: &[0.0],
        i0: 1,
    },
    ModelSpec {
        name: "ctmcN",
        summary: "pure jump birth-death chain on 1..N with resets to 1, b = sigma = 0",
        params: &[
            param("N", 5.0, "number of regimes"),
            param("up", 1.0, "rate i -> i+1"),
            param("down", 0.5, "rate i -> i-1"),
            param("reset", 0.3, "rate i -> 1 for i > 2"),
            param("T", 2.0, "horizon"),
        ],
        x0: &[0.0],
        i0: 1,
    },
    ModelSpec {
        name: "powerlaw",
        summary: "d=1 OU environments dX = -theta X dt + sigma dW with q_jk(x) = (j + |x|^p)/|k - j|^gamma",
        params: &[
            param("p", 1.0, "growth exponent of the rates, >= 1"),
            param("gamma", 3.0, "tail exponent of the rates, > 2"),
            param("theta", 1.0, "mean reversion"),
            param("sigma", 1.0, "noise"),
            param("T", 1.0, "horizon"),
        ],
        x0: &[0.0],
        i0: 1,
    },
    ModelSpec {
        name: "blowup",
        summary: "d=1 dX = X^2 dt, no noise, no switching; explodes at 1/x0",
        params: &[param("T", 1.0, "horizon")],
        x0: &[2.0],
        i0: 1,
    },
    ModelSpec {
        name: "degenerate",
        summary: "d=1 OU with sigma = 0 in regime 2, constant rates",
        params: &[
            param("theta", 1.0, "mean reversion"),
            param("sigma", 1.0, "noise in regime 1"),
            param("q12", 1.0, "rate 1 -> 2"),
            param("q21", 1.0, "rate 2 -> 1"),
            param("T", 1.0, "horizon"),
        ],
        x0: &[1.0],
        i0: 1,
    },
];

pub fn spec(name: &str) -> Option<&'static ModelSpec> {
    CATALOG.iter().find(|m| m.name == name)
}

/// Text listing of every model with its parameters and defaults.
pub fn list_models() -> String {
    let mut out = String::new();
    for m in CATALOG {
        let _ = writeln!(out, "{}: {}", m.name, m.summary);
        let _ = writeln!(out, "  default start: x0 = {:?}, i0 = {}", m.x0, m.i0);
        for p in m.params {
            let _ = writeln!(out, "  {} = {} ({})", p.name, p.default, p.help);
        }
    }
    out
}

/// A built model plus its defaults and the fully resolved parameters.
#[derive(Debug, Clone)]
pub struct Builtin {
    pub name: &'static str,
    pub model: RegimeModel,
    pub x0: Vec<f64>,
    pub i0: usize,
    pub params: BTreeMap<String, f64>,
}

/// Builds a named model; `overrides` must only name parameters of that model.
pub fn build(name: &str, overrides: &BTreeMap<String, f64>) -> Result<Builtin> {
    let spec = spec(name).ok_or_else(|| SimError::Config(format!("unknown model '{name}'")))?;
    let mut params: BTreeMap<String, f64> = spec.params.iter().map(|p| (p.name.to_string(), p.default)).collect();
    for (k, v) in overrides {
        match params.get_mut(k) {
            Some(slot) => *slot = *v,
            None => return Err(SimError::Config(format!("model '{name}' has no parameter '{k}'"))),
        }
    }
    let get = |k: &str| params[k];
    let horizon = get("T");
    let zero = |_: &[f64], _: usize, _: f64, out: &mut [f64]| out.fill(0.0);
    let model = match spec.name {
        "ou2" => {
            let (theta, sigma) = ([get("theta1"), get("theta2")], [get("sigma1"), get("sigma2")]);
            RegimeModel::new(
                1,
                horizon,
                move |x, i, _, out: &mut [f64]| out[0] = -theta[(i - 1).min(1)] * x[0],
                move |_, i, _, out: &mut [f64]| out[0] = sigma[(i - 1).min(1)],
                Arc::new(ConstantRates::two_state(get("q12"), get("q21"))?),
            )?
        }
        "ctmc2" => RegimeModel::new(1, horizon, zero, zero, Arc::new(ConstantRates::two_state(get("q12"), get("q21"))?))?,
        "ctmcN" => {
            let n = get("N");
            if !((2.0..=50.0).contains(&n) && n.fract() == 0.0) {
                return Err(SimError::Config(format!("N must be an integer in [2, 50], got {n}")));
            }
            RegimeModel::new(1, horizon, zero, zero, Arc::new(birth_death(n as usize, get("up"), get("down"), get("reset"))?))?
        }
        "powerlaw" => {
            let (theta, sigma) = (get("theta"), get("sigma"));
            RegimeModel::new(
                1,
                horizon,
                move |x, _, _, out: &mut [f64]| out[0] = -theta * x[0],
                move |_, _, _, out: &mut [f64]| out[0] = sigma,
                Arc::new(PowerLawQ::new(get("p"), get("gamma"))?),
            )?
        }
        "blowup" => RegimeModel::new(1, horizon, |x, _, _, out: &mut [f64]| out[0] = x[0] * x[0], zero, Arc::new(ConstantRates::zero()))?,
        "degenerate" => {
            let (theta, sigma) = (get("theta"), get("sigma"));
            RegimeModel::new(
                1,
                horizon,
                move |x, _, _, out: &mut [f64]| out[0] = -theta * x[0],
                move |_, i, _, out: &mut [f64]| out[0] = if i == 1 { sigma } else { 0.0 },
                Arc::new(ConstantRates::two_state(get("q12"), get("q21"))?),
            )?
        }
        other => unreachable!("catalog entry {other} has no constructor"),
    };
    Ok(Builtin { name: spec.name, model, x0: spec.x0.to_vec(), i0: spec.i0, params })
}

/// Builds a model with all defaults.
pub fn default_model(name: &str) -> Result<Builtin> {
    build(name, &BTreeMap::new())
}

fn birth_death(n: usize, up: f64, down: f64, reset: f64) -> Result<ConstantRates> {
    let mut q = vec![vec![0.0; n]; n];
    for i in 0..n {
        if i + 1 < n {
            q[i][i + 1] += up;
        }
        if i >= 1 {
            q[i][i - 1] += down;
        }
        if i >= 2 {
            q[i][0] += reset;
        }
    }
    ConstantRates::new(q)
}
