//! Turns a resolved [`RunConfig`] into library calls and output files.

use std::fmt;
use std::io::Write;

use hybridsim::builtin::{self, Builtin};
use hybridsim::probe::{self, TestFn, CSV_HEADER};
use hybridsim::{
    check_condition_exp, check_condition_poly, check_local_bounded_beta_sum, CertGrid, Estimate, ExponentialCert, HybridPath, JumpStream,
    PathStatus, PolynomialCert, ProbeReport, SimConfig, SimError, StreamKey, Truncation,
};
use rayon::prelude::*;

use crate::config::{ParseError, RunConfig};

pub const CSV_VERSION: &str = "# hybridsim-csv v1";

#[derive(Debug)]
pub enum Failure {
    Parse(ParseError),
    Model(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Parse(_) => 2,
            Failure::Model(_) => 3,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Parse(e) => write!(f, "config error: {e}"),
            Failure::Model(e) => write!(f, "model error: {e}"),
            Failure::Runtime(e) => write!(f, "runtime error: {e}"),
        }
    }
}

impl From<ParseError> for Failure {
    fn from(e: ParseError) -> Self {
        Failure::Parse(e)
    }
}

fn model_err(e: SimError) -> Failure {
    Failure::Model(e.to_string())
}

fn runtime_err(e: SimError) -> Failure {
    Failure::Runtime(e.to_string())
}

const COMMANDS: &[&str] = &["simulate", "ensemble", "certify", "moments", "tau-tail", "feller", "oracle"];

/// Everything a command needs, with model defaults filled in.
struct Plan {
    command: String,
    built: Builtin,
    x0: Vec<f64>,
    i0: usize,
    sim: SimConfig,
    t: f64,
    threads: usize,
    out: String,
}

fn plan(cfg: &mut RunConfig) -> Result<Plan, Failure> {
    let command = cfg.raw("command").to_string();
    if !COMMANDS.contains(&command.as_str()) {
        return Err(ParseError(format!("unknown command '{command}'")).into());
    }
    let seed: u64 = cfg.opt("seed")?.ok_or_else(|| ParseError("seed is required (config key 'seed' or --seed)".into()))?;
    let overrides = cfg.model_params()?;
    let x0: Option<Vec<f64>> = if cfg.raw("x0").is_empty() { None } else { Some(cfg.list("x0")?) };
    let i0: Option<usize> = cfg.opt("i0")?;
    let horizon: Option<f64> = cfg.opt("horizon")?;
    let t: Option<f64> = cfg.opt("t")?;
    let k = match cfg.auto::<f64>("k")? {
        None => Truncation::Auto,
        Some(k) => Truncation::Fixed(k),
    };
    let mut sim = SimConfig {
        m: cfg.get("m")?,
        m_max: cfg.get("m_max")?,
        k,
        k_max: cfg.auto("k_max")?,
        dt: cfg.get("dt")?,
        horizon: 0.0,
        seed,
        extend_stream: cfg.get("extend_stream")?,
        record_path: cfg.get("record_path")?,
    };
    let threads: usize = cfg.get("threads")?;

    let built = builtin::build(cfg.raw("model"), &overrides).map_err(model_err)?;
    let x0 = x0.unwrap_or_else(|| built.x0.clone());
    let i0 = i0.unwrap_or(built.i0);
    if x0.len() != built.model.dim() {
        return Err(Failure::Model(format!("x0 has {} coordinates, model '{}' has dimension {}", x0.len(), built.name, built.model.dim())));
    }
    if i0 == 0 {
        return Err(Failure::Model("regimes are numbered from 1".into()));
    }
    sim.horizon = horizon.unwrap_or(built.model.horizon());
    let t = t.unwrap_or(sim.horizon);
    sim.ladder().map_err(model_err)?;

    // Pin the defaults so the metadata replays without the model catalog.
    cfg.set("x0", &join(&x0))?;
    cfg.set("i0", &i0.to_string())?;
    cfg.set("horizon", &sim.horizon.to_string())?;
    cfg.set("t", &t.to_string())?;
    Ok(Plan { command, built, x0, i0, sim, t, threads, out: cfg.raw("out").to_string() })
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

pub fn execute(cfg: &RunConfig) -> Result<(), Failure> {
    let mut cfg = cfg.clone();
    let plan = plan(&mut cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.threads)
        .build()
        .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    let files = pool.install(|| dispatch(&cfg, &plan))?;

    let mut meta = format!("# hybridsim {}\n# seed {}\n", hybridsim::VERSION, plan.sim.seed);
    meta.push_str(&cfg.to_text());
    write_file(&plan.out, "meta.txt", meta.as_bytes())?;
    for (suffix, body) in files {
        write_file(&plan.out, &suffix, &body)?;
    }
    Ok(())
}

fn write_file(prefix: &str, suffix: &str, body: &[u8]) -> Result<(), Failure> {
    let path = format!("{prefix}_{suffix}");
    std::fs::write(&path, body).map_err(|e| Failure::Runtime(format!("{path}: {e}")))
}

type Files = Vec<(String, Vec<u8>)>;

fn csv(fill: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    writeln!(buf, "{CSV_VERSION}").expect("write to memory");
    fill(&mut buf).expect("write to memory");
    buf
}

fn report_csv(reports: &[ProbeReport]) -> Vec<u8> {
    csv(|w| {
        writeln!(w, "{CSV_HEADER}")?;
        for r in reports {
            r.write_csv(&mut *w)?;
        }
        Ok(())
    })
}

fn dispatch(cfg: &RunConfig, plan: &Plan) -> Result<Files, Failure> {
    match plan.command.as_str() {
        "simulate" => simulate(cfg, plan),
        "ensemble" => ensemble(cfg, plan),
        "certify" => certify(cfg, plan),
        "moments" => moments(cfg, plan),
        "tau-tail" => tau_tail(cfg, plan),
        "feller" => feller(cfg, plan),
        "oracle" => oracle(cfg, plan),
        other => unreachable!("command {other} passed validation"),
    }
}

fn exact(label: &str, value: f64, diagnostics: String) -> Estimate {
    Estimate { label: label.into(), value, half_width: 0.0, n: 0, diagnostics }
}

fn status_text(s: &PathStatus) -> (&'static str, f64) {
    match *s {
        PathStatus::ReachedHorizon => ("reached_horizon", f64::NAN),
        PathStatus::StoppedAtTauM { tau, .. } => ("stopped_at_tau_M", tau),
        PathStatus::Exploded { tau } => ("exploded", tau),
    }
}

fn sim_params(plan: &Plan) -> String {
    let s = &plan.sim;
    let k = match s.k {
        Truncation::Auto => "auto".to_string(),
        Truncation::Fixed(k) => k.to_string(),
    };
    format!(
        "model={};x0={};i0={};T={};dt={};m={};m_max={};k={};seed={}",
        plan.built.name,
        join(&plan.x0),
        plan.i0,
        s.horizon,
        s.dt,
        s.m,
        s.m_max,
        k,
        s.seed
    )
}

fn simulate(cfg: &RunConfig, plan: &Plan) -> Result<Files, Failure> {
    let key = StreamKey::new(plan.sim.seed, 0);
    let path = hybridsim::simulate_path(&plan.built.model, &plan.x0, plan.i0, &plan.sim, key).map_err(runtime_err)?;
    let (status, tau) = status_text(&path.status);
    let mut estimates = vec![
        exact("terminal_t", path.terminal.t, status.to_string()),
        exact("tau", tau, String::new()),
        exact("switches", path.switches.len() as f64, String::new()),
        exact("lambda", path.terminal.regime as f64, String::new()),
    ];
    for (c, v) in path.terminal.x.iter().enumerate() {
        estimates.push(exact(&format!("x_{}", c + 1), *v, String::new()));
    }
    let report = ProbeReport { probe: "simulate", params: sim_params(plan), estimates };
    let mut files = vec![
        ("path.csv".to_string(), csv(|w| path.write_path_csv(w))),
        ("switches.csv".to_string(), csv(|w| path.write_switches_csv(w))),
        ("report.csv".to_string(), report_csv(&[report])),
    ];
    if cfg.get::<bool>("dump_stream")? {
        // The master stream before any extension, as the run first sampled it.
        let k_max = match plan.sim.k_max {
            Some(k) => k,
            None => match plan.sim.k {
                Truncation::Fixed(k) => k,
                Truncation::Auto => hybridsim::auto_truncation(&plan.built.model, plan.sim.m).map_err(model_err)?,
            },
        };
        let stream = JumpStream::sample(k_max.max(f64::MIN_POSITIVE), plan.sim.horizon, key).map_err(runtime_err)?;
        files.push(("stream.csv".to_string(), csv(|w| stream.write_csv(w))));
    }
    Ok(files)
}

fn ensemble(cfg: &RunConfig, plan: &Plan) -> Result<Files, Failure> {
    let n: usize = cfg.get("n")?;
    let sim = SimConfig { record_path: false, ..plan.sim.clone() };
    let levels = sim.ladder().map_err(model_err)?;
    let paths: Vec<HybridPath> = (0..n as u64)
        .into_par_iter()
        .map(|r| hybridsim::simulate_ladder(&plan.built.model, &plan.x0, plan.i0, &sim, &levels, StreamKey::new(sim.seed, r)))
        .collect::<Result<_, _>>()
        .map_err(runtime_err)?;

    let d = plan.x0.len();
    let table = csv(|w| {
        write!(w, "trajectory,status,tau")?;
        for c in 1..=d {
            write!(w, ",x_{c}")?;
        }
        writeln!(w, ",lambda,switches")?;
        for (r, p) in paths.iter().enumerate() {
            let (status, tau) = status_text(&p.status);
            write!(w, "{r},{status},{tau}")?;
            for v in &p.terminal.x {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{},{}", p.terminal.regime, p.switches.len())?;
        }
        Ok(())
    });

    let exploded = paths.iter().filter(|p| matches!(p.status, PathStatus::Exploded { .. })).count();
    let column = |f: &dyn Fn(&HybridPath) -> f64| -> Vec<f64> { paths.iter().map(f).collect() };
    let sampled = |label: &str, values: Vec<f64>| {
        let (value, half_width) = probe::mean_ci(&values);
        Estimate { label: label.into(), value, half_width, n: values.len(), diagnostics: String::new() }
    };
    let mut estimates = vec![
        sampled("exploded", column(&|p| f64::from(u8::from(matches!(p.status, PathStatus::Exploded { .. }))))),
        sampled("lambda", column(&|p| p.terminal.regime as f64)),
        sampled("switches", column(&|p| p.switches.len() as f64)),
    ];
    for c in 0..d {
        estimates.push(sampled(&format!("x_{}", c + 1), column(&|p| p.terminal.x[c])));
    }
    estimates.push(sampled("norm_sq", column(&|p| p.terminal.x.iter().map(|v| v * v).sum())));
    if exploded > 0 {
        estimates[0].diagnostics = format!("count={exploded}");
    }
    let report = ProbeReport { probe: "ensemble", params: sim_params(plan), estimates };
    Ok(vec![("ensemble.csv".to_string(), table), ("report.csv".to_string(), report_csv(&[report]))])
}

fn poly_cert(cfg: &RunConfig) -> Result<PolynomialCert, Failure> {
    PolynomialCert::constant(cfg.get("cert_p")?, cfg.get("cert_beta")?, cfg.get("cert_c")?).map_err(model_err)
}

fn certify(cfg: &RunConfig, plan: &Plan) -> Result<Files, Failure> {
    let model = &plan.built.model;
    let beta: f64 = cfg.get("cert_beta")?;
    let times: usize = cfg.get("grid_times")?;
    let grid = CertGrid::radial(model.dim(), cfg.get("grid_r_max")?, cfg.get("grid_j_max")?, plan.sim.horizon, times).map_err(model_err)?;
    let (report, form) = match cfg.raw("cert") {
        "poly" => {
            let cert = poly_cert(cfg)?;
            (check_condition_poly(model, &cert, &grid).map_err(runtime_err)?, format!("poly;p={};C={}", cert.p, cfg.raw("cert_c")))
        }
        "exp" => {
            let alpha: f64 = cfg.get("cert_alpha")?;
            let c: f64 = cfg.get("cert_c")?;
            let cert = ExponentialCert::new(alpha, c, beta, plan.sim.horizon).map_err(model_err)?;
            (check_condition_exp(model, &cert, &grid).map_err(runtime_err)?, format!("exp;alpha={alpha};c={c}"))
        }
        other => return Err(ParseError(format!("cert must be poly or exp, got '{other}'")).into()),
    };
    let series = check_local_bounded_beta_sum(model, beta, &grid).map_err(runtime_err)?;
    print!("{report}");
    println!("beta series sup: {:.6e} at y = {:?}, j = {}", series.sup, series.argmax.0, series.argmax.1);

    let verdict = if report.certified() { "certified_on_grid" } else { "violated_on_grid" };
    let w = &report.worst;
    let estimates = vec![
        exact("margin", report.margin, verdict.into()),
        exact("worst_lhs", w.lhs, format!("y={};j={};t={}", join(&w.y), w.j, w.t)),
        exact("worst_rhs", w.rhs, String::new()),
        exact("violations", report.violations.len() as f64, String::new()),
        exact("nodes", report.nodes as f64, String::new()),
        exact("sigma_integral", report.sigma_integral, String::new()),
        exact("series_terms", report.series_terms as f64, String::new()),
        exact("beta_sum_sup", series.sup, format!("unresolved={}", series.unresolved.len())),
    ];
    let params = format!("model={};condition={};{form};beta={beta};grid={}", plan.built.name, report.condition, grid.len());
    Ok(vec![("report.csv".to_string(), report_csv(&[ProbeReport { probe: "certify", params, estimates }]))])
}

fn moments(cfg: &RunConfig, plan: &Plan) -> Result<Files, Failure> {
    let cert = poly_cert(cfg)?;
    let n: usize = cfg.get("n")?;
    let r = probe::estimate_moment(&plan.built.model, &cert, &plan.x0, plan.i0, plan.t, n, &plan.sim).map_err(runtime_err)?;
    Ok(vec![("report.csv".to_string(), report_csv(&[r]))])
}

fn tau_tail(cfg: &RunConfig, plan: &Plan) -> Result<Files, Failure> {
    let cert = poly_cert(cfg)?;
    let m_list: Vec<u32> = cfg.list("m_list")?;
    let r = probe::estimate_tau_tail(
        &plan.built.model,
        Some(&cert),
        &plan.x0,
        plan.i0,
        plan.t,
        &m_list,
        cfg.get("delta")?,
        cfg.get("starts")?,
        cfg.get("n")?,
        &plan.sim,
    )
    .map_err(runtime_err)?;
    Ok(vec![("report.csv".to_string(), report_csv(&[r]))])
}

fn test_function(name: &str) -> Result<Box<TestFn>, ParseError> {
    Ok(match name {
        "bump" => Box::new(|y: &[f64], _| 1.0 / (1.0 + y.iter().map(|v| v * v).sum::<f64>())),
        "one" => Box::new(|_: &[f64], _| 1.0),
        "regime1" => Box::new(|_: &[f64], j| f64::from(u8::from(j == 1))),
        "step" => Box::new(|y: &[f64], _| f64::from(u8::from(y[0] > 0.0))),
        other => return Err(ParseError(format!("unknown test function '{other}'"))),
    })
}

fn feller(cfg: &RunConfig, plan: &Plan) -> Result<Files, Failure> {
    let f = test_function(cfg.raw("f"))?;
    let offsets = cfg.vectors("offsets")?;
    let r = probe::feller_probe(&plan.built.model, &*f, plan.t, &plan.x0, plan.i0, &offsets, cfg.get("n")?, &plan.sim, cfg.get("couple")?)
        .map_err(runtime_err)?;
    Ok(vec![("report.csv".to_string(), report_csv(&[r]))])
}

fn oracle(cfg: &RunConfig, plan: &Plan) -> Result<Files, Failure> {
    let r = probe::ctmc_oracle(&plan.built.model, &plan.x0, plan.i0, plan.t, cfg.get("j_trunc")?, cfg.get("n")?, &plan.sim)
        .map_err(runtime_err)?;
    Ok(vec![("report.csv".to_string(), report_csv(&[r]))])
}
