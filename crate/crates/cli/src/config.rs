//! Flat `key = value` run configuration.
//!
//! Only the keys in [`KEYS`] and `model.<param>` are accepted. Values are kept
//! as strings until a command asks for them, so the resolved table can be
//! written back verbatim as run metadata and fed in again as a config file.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

/// Empty defaults mean "take it from the model" or "required".
pub const KEYS: &[Key] = &[
    key("command", "simulate", "simulate | ensemble | certify | moments | tau-tail | feller | oracle"),
    key("model", "ou2", "built-in model name"),
    key("seed", "", "u64 master seed, required"),
    key("out", "hybridsim", "output path prefix"),
    key("threads", "0", "worker threads, 0 = available cores"),
    key("x0", "", "initial state, comma separated; default from the model"),
    key("i0", "", "initial regime; default from the model"),
    key("m", "8", "first localization level"),
    key("m_max", "1024", "top localization level"),
    key("k", "auto", "mark truncation: auto or a number"),
    key("k_max", "auto", "master stream rate: auto or a number"),
    key("dt", "0.001", "base step"),
    key("horizon", "", "simulation horizon; default the model's T"),
    key("extend_stream", "true", "superpose marks when K outgrows the stream"),
    key("record_path", "true", "keep every grid node of a simulated path"),
    key("dump_stream", "false", "also write the master Poisson stream (simulate)"),
    key("n", "1000", "trajectories per estimate"),
    key("t", "", "probe time; default the horizon"),
    key("offsets", "0.05;0.5", "feller offsets: vectors separated by ';', coordinates by ','"),
    key("couple", "true", "feller: common random numbers across offsets"),
    key("f", "bump", "feller test function: bump | one | regime1 | step"),
    key("m_list", "8,16,32,64", "tau-tail levels"),
    key("delta", "0.1", "tau-tail start ball radius"),
    key("starts", "5", "tau-tail number of starts"),
    key("j_trunc", "20", "oracle regime cutoff"),
    key("cert", "poly", "certificate form: poly | exp"),
    key("cert_p", "1", "polynomial exponent p"),
    key("cert_beta", "1", "regime exponent beta"),
    key("cert_c", "6", "constant C (poly) or c (exp)"),
    key("cert_alpha", "1", "exp certificate alpha"),
    key("grid_r_max", "10", "certification grid radius"),
    key("grid_j_max", "20", "certification grid regime cutoff"),
    key("grid_times", "11", "certification grid time nodes"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError(pub String);

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ParseError {}

fn known(name: &str) -> bool {
    KEYS.iter().any(|k| k.name == name) || name.strip_prefix("model.").is_some_and(|p| !p.is_empty())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn defaults() -> Self {
        Self { values: KEYS.iter().map(|k| (k.name.to_string(), k.default.to_string())).collect() }
    }

    /// Applies a config file body. Duplicate and unknown keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ParseError> {
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ParseError(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if seen.insert(k.to_string(), n + 1).is_some() {
                return Err(ParseError(format!("line {}: duplicate key '{k}'", n + 1)));
            }
            self.set(k, v.trim()).map_err(|e| ParseError(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ParseError> {
        if !known(key) {
            return Err(ParseError(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ParseError> {
        let v = self.raw(key);
        v.parse().map_err(|_| ParseError(format!("key '{key}': cannot parse '{v}'")))
    }

    /// `None` for an empty value.
    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, ParseError> {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    /// `None` for `auto`.
    pub fn auto<T: FromStr>(&self, key: &str) -> Result<Option<T>, ParseError> {
        if self.raw(key) == "auto" {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, ParseError> {
        parse_list(self.raw(key), ',').map_err(|v| ParseError(format!("key '{key}': cannot parse '{v}'")))
    }

    pub fn vectors(&self, key: &str) -> Result<Vec<Vec<f64>>, ParseError> {
        let raw = self.raw(key);
        if raw.trim().is_empty() {
            return Ok(Vec::new());
        }
        raw.split(';')
            .map(|part| parse_list(part, ',').map_err(|v| ParseError(format!("key '{key}': cannot parse '{v}'"))))
            .collect()
    }

    /// `model.<name>` entries with the prefix stripped.
    pub fn model_params(&self) -> Result<BTreeMap<String, f64>, ParseError> {
        self.values
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("model.").map(|p| (p, v)))
            .map(|(p, v)| v.parse().map(|x| (p.to_string(), x)).map_err(|_| ParseError(format!("key 'model.{p}': cannot parse '{v}'"))))
            .collect()
    }

    /// Resolved table in config-file syntax.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn parse_list<T: FromStr>(raw: &str, sep: char) -> Result<Vec<T>, String> {
    raw.split(sep).map(str::trim).filter(|s| !s.is_empty()).map(|s| s.parse().map_err(|_| s.to_string())).collect()
}

pub fn describe_keys() -> String {
    let mut out = String::new();
    for k in KEYS {
        let default = if k.default.is_empty() { "-" } else { k.default };
        out.push_str(&format!("  {:<14} {:<12} {}\n", k.name, default, k.help));
    }
    out.push_str("  model.<param>  -            override a parameter of the chosen model\n");
    out
}
