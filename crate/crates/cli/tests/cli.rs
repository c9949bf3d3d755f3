use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use hybridsim::builtin;
use hybridsim::{ctmc_oracle, SimConfig};

fn hybridsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybridsim")).current_dir(dir).args(args).output().expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// `(label, estimate)` pairs from a report file.
fn report(dir: &Path, prefix: &str) -> BTreeMap<String, String> {
    let body = read(dir, &format!("{prefix}_report.csv"));
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("# hybridsim-csv v1"));
    assert_eq!(lines.next(), Some("probe,params,label,estimate,half_width,n,diagnostics"));
    lines
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            (cols[2].to_string(), cols[3].to_string())
        })
        .collect()
}

#[test]
fn simulate_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = hybridsim(dir.path(), &["simulate", "--seed", "11", "--out", out, "--threads", "1"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for suffix in ["path.csv", "switches.csv", "report.csv"] {
        assert_eq!(read(dir.path(), &format!("a_{suffix}")), read(dir.path(), &format!("b_{suffix}")), "{suffix}");
    }
    let path = read(dir.path(), "a_path.csv");
    assert!(path.starts_with("# hybridsim-csv v1\nt,x_1,lambda\n0,0,1\n"));
    assert!(read(dir.path(), "a_switches.csv").starts_with("# hybridsim-csv v1\nt,from,to,z\n"));
}

#[test]
fn meta_replays_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = hybridsim(dir.path(), &["simulate", "--seed", "5", "--out", "first", "--set", "model.theta1=0.5", "--set", "dump_stream=true"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let meta = read(dir.path(), "first_meta.txt");
    assert!(meta.contains(&format!("# hybridsim {}", hybridsim::VERSION)));
    assert!(meta.contains("seed = 5") && meta.contains("model.theta1 = 0.5"));

    let o = hybridsim(dir.path(), &["--config", "first_meta.txt", "--out", "second"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for suffix in ["path.csv", "switches.csv", "report.csv", "stream.csv"] {
        assert_eq!(read(dir.path(), &format!("first_{suffix}")), read(dir.path(), &format!("second_{suffix}")), "{suffix}");
    }
    assert!(read(dir.path(), "first_stream.csv").contains("time,mark"));
}

#[test]
fn thread_count_does_not_change_estimates() {
    let dir = tempfile::tempdir().unwrap();
    for (out, threads) in [("one", "1"), ("two", "2")] {
        let args = ["ensemble", "--seed", "2", "--out", out, "--threads", threads, "--set", "n=40", "--set", "model=degenerate"];
        assert!(hybridsim(dir.path(), &args).status.success());
    }
    assert_eq!(read(dir.path(), "one_report.csv"), read(dir.path(), "two_report.csv"));
    assert_eq!(read(dir.path(), "one_ensemble.csv"), read(dir.path(), "two_ensemble.csv"));
}

#[test]
fn oracle_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["oracle", "--seed", "9", "--out", "o", "--set", "model=ctmc2", "--set", "n=2000", "--set", "j_trunc=4", "--set", "dt=0.5"];
    let o = hybridsim(dir.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = report(dir.path(), "o");

    let b = builtin::default_model("ctmc2").unwrap();
    let cfg = SimConfig { seed: 9, dt: 0.5, m_max: 1024, ..SimConfig::for_model(&b.model) };
    let lib = ctmc_oracle(&b.model, &b.x0, b.i0, 1.0, 4, 2000, &cfg).unwrap();
    assert_eq!(rows["tv"], lib.get("tv").unwrap().value.to_string());
    assert_eq!(rows["p:2"], lib.get("p:2").unwrap().value.to_string());
}

#[test]
fn certify_powerlaw_has_nonnegative_margin() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["certify", "--seed", "0", "--out", "c", "--set", "model=powerlaw", "--set", "cert_c=6"];
    let o = hybridsim(dir.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let margin: f64 = report(dir.path(), "c")["margin"].parse().unwrap();
    assert!(margin >= 0.0, "margin {margin}");
    assert!(String::from_utf8_lossy(&o.stdout).contains("certified on grid"));
}

#[test]
fn probes_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str], &str); 3] = [
        ("moments", &["--set", "n=20", "--set", "m_max=64"], "gronwall_bound"),
        ("tau-tail", &["--set", "n=20", "--set", "starts=2", "--set", "m_list=2,4"], "tail:M=4"),
        ("feller", &["--set", "n=20", "--set", "f=step"], "diff:delta=0.5"),
    ];
    for (command, extra, label) in cases {
        let mut args = vec![command, "--seed", "3", "--out", command];
        args.extend_from_slice(extra);
        let o = hybridsim(dir.path(), &args);
        assert!(o.status.success(), "{command}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(report(dir.path(), command).contains_key(label), "{command} lacks {label}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&[&str], i32); 7] = [
        (&["simulate"], 2),
        (&["bogus", "--seed", "1"], 2),
        (&["simulate", "--seed", "1", "--set", "nonsense=1"], 2),
        (&["simulate", "--seed", "1", "--set", "dt=fast"], 2),
        (&["simulate", "--seed", "1", "--set", "model=nope"], 3),
        (&["simulate", "--seed", "1", "--set", "model.gamma=3"], 3),
        (&["oracle", "--seed", "1", "--set", "model=ctmcN", "--set", "j_trunc=2", "--set", "n=50"], 1),
    ];
    for (args, code) in cases {
        let o = hybridsim(dir.path(), args);
        assert_eq!(o.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(err.lines().count(), 1, "one-line diagnostic, got {err:?}");
    }

    std::fs::write(dir.path().join("dup.txt"), "seed = 1\nseed = 2\n").unwrap();
    assert_eq!(hybridsim(dir.path(), &["--config", "dup.txt"]).status.code(), Some(2));
}

#[test]
fn list_models() {
    let dir = tempfile::tempdir().unwrap();
    let o = hybridsim(dir.path(), &["list-models"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for name in ["ou2", "ctmc2", "ctmcN", "powerlaw", "blowup", "degenerate"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{name}:"))), "{name} missing");
    }
    assert!(text.contains("gamma = 3"));
    let keys = hybridsim(dir.path(), &["keys"]);
    assert!(String::from_utf8_lossy(&keys.stdout).contains("j_trunc"));
}
