//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test -p hybridsim --test acceptance`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;
use std::time::{Duration, Instant};

use hybridsim::builtin::{self, Builtin};
use hybridsim::probe::TestFn;
use hybridsim::{
    auto_truncation, check_condition_poly, check_local_bounded_beta_sum, ctmc_oracle, estimate_moment, estimate_tau_tail, feller_probe,
    integrate_segment, simulate_path, simulate_truncated, BrownianGrid, CertGrid, ConstantRates, JumpStream, PathStatus, PolynomialCert,
    PowerLawQ, RateMatrix, RegimeModel, SimConfig, StreamKey, Truncation,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

/// Name, check, time budget in seconds.
type Criterion = (&'static str, fn() -> Outcome, u64);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn model(name: &str) -> Builtin {
    builtin::default_model(name).expect("catalog model")
}

fn powerlaw() -> Builtin {
    let mut p = BTreeMap::new();
    p.insert("gamma".to_string(), 3.0);
    p.insert("p".to_string(), 1.0);
    builtin::build("powerlaw", &p).expect("powerlaw")
}

/// Sum of `k^{-s}` for `k >= 1`: partial sum to `n` plus integral bounds on the rest.
fn zeta_oracle(s: f64, n: u32) -> (f64, f64) {
    let head: f64 = (1..=n).rev().map(|k| f64::from(k).powf(-s)).sum();
    let n = f64::from(n);
    (head + (n + 1.0).powf(1.0 - s) / (s - 1.0), head + n.powf(1.0 - s) / (s - 1.0))
}

/// `exp(tG)` row by uniformization, independent of the library's matrix exponential.
fn uniformized_row(q: &[Vec<f64>], from: usize, t: f64) -> Vec<f64> {
    let n = q.len();
    let exit: Vec<f64> = q.iter().map(|r| r.iter().sum()).collect();
    let lambda = exit.iter().copied().fold(0.0, f64::max).max(1e-12);
    let mut v = vec![0.0; n];
    v[from] = 1.0;
    let mut out = vec![0.0; n];
    let mut weight = (-lambda * t).exp();
    for k in 0..400 {
        for (o, x) in out.iter_mut().zip(&v) {
            *o += weight * x;
        }
        let mut next = vec![0.0; n];
        for a in 0..n {
            next[a] += v[a] * (1.0 - exit[a] / lambda);
            for b in 0..n {
                next[b] += v[a] * q[a][b] / lambda;
            }
        }
        v = next;
        weight *= lambda * t / f64::from(k + 1);
    }
    out
}

fn k_stability() -> Outcome {
    let mut lines = Vec::new();
    for b in [model("ou2"), powerlaw()] {
        let m = 8;
        let auto = auto_truncation(&b.model, m).map_err(|e| e.to_string())?;
        let base = SimConfig { m, dt: 1e-3, ..SimConfig::for_model(&b.model) };
        let mut switches = 0;
        let mut stopped = 0;
        for r in 0..100 {
            let stream = JumpStream::sample(1.5 * auto, base.horizon, StreamKey::new(101, r)).map_err(|e| e.to_string())?;
            let run = |k| simulate_truncated(&b.model, &b.x0, b.i0, &SimConfig { k: Truncation::Fixed(k), ..base.clone() }, &stream);
            let (a, c) = (run(auto).map_err(|e| e.to_string())?, run(1.5 * auto).map_err(|e| e.to_string())?);
            if a != c {
                return Err(format!("{}: trajectory {r} differs between K = {auto} and K = {}", b.name, 1.5 * auto));
            }
            switches += a.switches.len();
            stopped += usize::from(matches!(a.status, PathStatus::StoppedAtTauM { .. }));
        }
        if switches == 0 {
            return Err(format!("{}: no switches, comparison is vacuous", b.name));
        }
        lines.push(format!("{}: K={auto:.4} 100/100 identical ({switches} switches, {stopped} stopped)", b.name));
    }
    Ok(lines.join("; "))
}

fn thinning_law() -> Outcome {
    let b = model("ctmc2");
    let n = 100_000;
    let cfg = SimConfig { dt: 1.0, seed: 202, ..SimConfig::for_model(&b.model) };
    let r = ctmc_oracle(&b.model, &b.x0, 1, 1.0, 2, n, &cfg).map_err(|e| e.to_string())?;
    let p_hat = r.get("p:2").ok_or("no p:2 row")?.value;
    let p = (1.0 - (-3.0f64).exp()) / 3.0;
    let tol = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
    ensure((p_hat - p).abs() <= tol, format!("P(L_1=2) = {p_hat:.6} vs {p:.6}, |diff| = {:.2e}, tol {tol:.2e}", (p_hat - p).abs()))
}

fn ctmc_expm() -> Outcome {
    let b = model("ctmcN");
    let states = 5;
    let q: Vec<Vec<f64>> =
        (1..=states).map(|i| (1..=states).map(|j| if i == j { 0.0 } else { b.model.rates().rate(i, j, &b.x0) }).collect()).collect();
    let mut lines = Vec::new();
    let mut ok = true;
    for (k, t) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        let cfg = SimConfig { dt: t, seed: 303 + k as u64, ..SimConfig::for_model(&b.model) };
        let r = ctmc_oracle(&b.model, &b.x0, 1, t, states, 100_000, &cfg).map_err(|e| e.to_string())?;
        let exact = uniformized_row(&q, 0, t);
        let mut tv = 0.0;
        for j in 1..=states {
            let lib = r.get(&format!("exact:{j}")).ok_or("missing exact row")?.value;
            if (lib - exact[j - 1]).abs() > 1e-10 {
                return Err(format!("t={t}: library exp(tG)[1,{j}] = {lib} vs uniformization {}", exact[j - 1]));
            }
            tv += (r.get(&format!("p:{j}")).ok_or("missing p row")?.value - exact[j - 1]).abs();
        }
        tv *= 0.5;
        ok &= tv < 0.01;
        lines.push(format!("t={t}: TV={tv:.4}"));
    }
    ensure(ok, lines.join(", "))
}

fn certified_powerlaw() -> Result<(Builtin, PolynomialCert), String> {
    let b = powerlaw();
    let cert = PolynomialCert::constant(1.0, 1.0, 6.0).map_err(|e| e.to_string())?;
    let grid = CertGrid::default_for(1, b.model.horizon()).map_err(|e| e.to_string())?;
    let report = check_condition_poly(&b.model, &cert, &grid).map_err(|e| e.to_string())?;
    if !report.certified() {
        return Err(format!("C = 6 not certified: margin {}", report.margin));
    }
    Ok((b, cert))
}

fn gronwall_moment() -> Outcome {
    let (b, cert) = certified_powerlaw()?;
    let cfg = SimConfig { m: 8, m_max: 64, seed: 404, ..SimConfig::for_model(&b.model) };
    let mut lines = Vec::new();
    let mut ok = true;
    for t in [0.5, 1.0] {
        let r = estimate_moment(&b.model, &cert, &b.x0, b.i0, t, 10_000, &cfg).map_err(|e| e.to_string())?;
        let m = r.get("moment").ok_or("no moment row")?;
        let bound = r.get("gronwall_bound").ok_or("no bound row")?.value;
        ok &= m.value <= bound + 3.0 * m.half_width;
        lines.push(format!("t={t}: E[V]={:.4}±{:.4} <= bound {bound:.4}", m.value, m.half_width));
    }
    ensure(ok, format!("C=6 certified; {}", lines.join(", ")))
}

fn tau_tail() -> Outcome {
    let (b, cert) = certified_powerlaw()?;
    let cfg = SimConfig { seed: 505, ..SimConfig::for_model(&b.model) };
    let levels = [8, 16, 32, 64];
    let r = estimate_tau_tail(&b.model, Some(&cert), &b.x0, b.i0, 1.0, &levels, 0.1, 5, 10_000, &cfg).map_err(|e| e.to_string())?;
    let tails: Vec<_> = levels.iter().map(|m| r.get(&format!("tail:M={m}")).expect("tail row")).collect();
    let monotone = tails.windows(2).all(|w| w[1].value <= w[0].value + w[0].half_width + w[1].half_width);
    let last = tails[3].value;
    let shown: Vec<String> = levels.iter().zip(&tails).map(|(m, e)| format!("M={m}: {:.4}", e.value)).collect();
    ensure(monotone && last < 1e-2, format!("{}; nonincreasing={monotone}", shown.join(", ")))
}

fn explosion() -> Outcome {
    let b = model("blowup");
    let mut taus = Vec::new();
    for dt in [1e-2, 1e-3, 1e-4] {
        let cfg = SimConfig { dt, m_max: 1 << 16, record_path: false, seed: 606, ..SimConfig::for_model(&b.model) };
        let p = simulate_path(&b.model, &b.x0, b.i0, &cfg, StreamKey::new(606, 0)).map_err(|e| e.to_string())?;
        match p.status {
            PathStatus::Exploded { tau } => taus.push(tau),
            other => return Err(format!("dt={dt}: expected explosion, got {other:?}")),
        }
    }
    let exact = 1.0 / b.x0[0];
    let errs: Vec<f64> = taus.iter().map(|t| (t - exact).abs()).collect();
    let converging = errs.windows(2).all(|w| w[1] < w[0]);
    let fine = taus[2];
    ensure(
        (0.45..=0.55).contains(&fine) && converging,
        format!("tau at dt=1e-2,1e-3,1e-4: {:.5}, {:.5}, {:.5}; exact {exact}", taus[0], taus[1], taus[2]),
    )
}

fn weak_order() -> Outcome {
    let theta = 1.0;
    let ou = RegimeModel::new(
        1,
        1.0,
        move |x: &[f64], _, _, out: &mut [f64]| out[0] = -theta * x[0],
        |_: &[f64], _, _, out: &mut [f64]| out[0] = 1.0,
        Arc::new(ConstantRates::zero()),
    )
    .map_err(|e| e.to_string())?;
    let x0 = 1.0;
    let fine = 12;
    let coarse = [6, 7, 8];
    let n = 100_000u64;
    // Each coarse path shares its Brownian path with the dt = 2^-12 reference.
    let diffs: Vec<[f64; 3]> = (0..n)
        .into_par_iter()
        .map(|r| {
            let grid = BrownianGrid::new(StreamKey::new(707, r), 1, 2f64.powi(-fine), 1.0, &[]).expect("grid");
            let reference = integrate_segment(&ou, &[x0], 1, 0.0, 1.0, &grid, false).expect("reference").x_end[0];
            coarse.map(|c| {
                let g = grid.coarsen(1 << (fine - c)).expect("coarsen");
                integrate_segment(&ou, &[x0], 1, 0.0, 1.0, &g, false).expect("coarse").x_end[0] - reference
            })
        })
        .collect();
    let bias: Vec<f64> = (0..3).map(|k| diffs.iter().map(|d| d[k]).sum::<f64>() / n as f64).collect();
    // Euler mean is x0 (1 - theta h)^(1/h); its gap to the reference level is the target.
    let euler_mean = |e: i32| x0 * (1.0 - theta * 2f64.powi(-e)).powf(2f64.powi(e));
    let predicted: Vec<f64> = coarse.iter().map(|&c| euler_mean(c) - euler_mean(fine)).collect();
    let xs: Vec<f64> = coarse.iter().map(|&c| -f64::from(c) * 2f64.ln()).collect();
    let ys: Vec<f64> = bias.iter().map(|b| b.abs().ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    ensure(
        (0.7..=1.3).contains(&slope),
        format!(
            "slope {slope:.3}; bias vs dt=2^-12 at 2^-6,-7,-8: {:.3e}, {:.3e}, {:.3e} (closed form {:.3e}, {:.3e}, {:.3e})",
            bias[0], bias[1], bias[2], predicted[0], predicted[1], predicted[2]
        ),
    )
}

fn feller() -> Outcome {
    let b = model("ou2");
    let step: &TestFn = &|y: &[f64], _| f64::from(u8::from(y[0] > 0.0));
    let cfg = SimConfig { seed: 808, ..SimConfig::for_model(&b.model) };
    let offsets = [vec![0.0], vec![0.05], vec![0.5]];
    let r = feller_probe(&b.model, step, 1.0, &[0.0], 1, &offsets, 10_000, &cfg, true).map_err(|e| e.to_string())?;
    let diffs: Vec<_> = r.estimates.iter().filter(|e| e.label.starts_with("diff:")).collect();
    let (zero, small, large) = (diffs[0].value, diffs[1].value, diffs[2].value);
    ensure(
        zero == 0.0 && diffs[0].half_width == 0.0 && small <= 0.2 * large,
        format!("diff(0) = {zero}, diff(0.05) = {small:.4}, diff(0.5) = {large:.4}, ratio {:.3}", small / large),
    )
}

fn sandwich() -> Outcome {
    let q = PowerLawQ::new(1.0, 3.0).map_err(|e| e.to_string())?;
    let (c_lo, c_hi) = zeta_oracle(3.0, 100_000);
    if c_hi - c_lo > 1e-10 {
        return Err(format!("zeta(3) oracle bracket too wide: {}", c_hi - c_lo));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        let j = rng.random_range(1..=50usize);
        let x = rng.random_range(-10.0..=10.0f64);
        let level = j as f64 + x.abs();
        let s = q.row_sum(j, &[x]);
        if !(c_lo * level <= s && s <= 2.0 * c_hi * level) {
            return Err(format!("j={j}, x={x}: {} <= {s} <= {} fails", c_lo * level, 2.0 * c_hi * level));
        }
        worst = worst.min((2.0 * c_hi * level - s).min(s - c_lo * level) / level);
    }
    Ok(format!("1000/1000 hold; zeta(3) in [{c_lo:.12}, {c_hi:.12}]; min normalized slack {worst:.3e}"))
}

fn series_soundness() -> Outcome {
    let b = powerlaw();
    let grid = CertGrid::single(vec![0.0], 1).map_err(|e| e.to_string())?;
    let r = check_local_bounded_beta_sum(&b.model, 1.0, &grid).map_err(|e| e.to_string())?;
    let exact = PI * PI / 6.0;
    ensure((r.sup - exact).abs() < 1e-8, format!("sum = {:.12} vs pi^2/6 = {exact:.12}, bracket {:?}", r.sup, r.bracket))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 K-stability", k_stability, 60),
        ("2 thinning law", thinning_law, 60),
        ("3 CTMC matrix exponential", ctmc_expm, 120),
        ("4 Gronwall moment bound", gronwall_moment, 300),
        ("5 non-explosion tail", tau_tail, 300),
        ("6 explosion detection", explosion, 60),
        ("7 weak order", weak_order, 180),
        ("8 strong Feller profile", feller, 120),
        ("9 sandwich", sandwich, 10),
        ("10 series soundness", series_soundness, 1),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let over = took > Duration::from_secs(budget);
        let (verdict, detail) = match outcome {
            Ok(d) if !over => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; over the {budget}s budget")),
            Err(d) => ("FAIL", d),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!("{verdict} {name}: {detail} [{:.1}s]", took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
