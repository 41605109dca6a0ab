//! End-to-end tests of the `conobs` binary: exit codes, determinism under
//! a fixed seed, and golden-file comparison of the cubic benchmark
//! outputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_conobs")
}

fn bench_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

#[test]
fn usage_errors_exit_3() {
    assert_eq!(code(&run(&["synth", "--bogus"])), 3);
    assert_eq!(code(&run(&["synth"])), 3); // missing --config
    assert_eq!(code(&run(&["frobnicate"])), 3);
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn unknown_benchmark_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "format_version = 1\n[model]\nbuiltin = \"pendulum\"\n").unwrap();
    let out = run(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

/// An unstable state that never reaches the output admits no certificate;
/// the search must report infeasibility, print the bisection outcome and
/// still write the run manifest.
#[test]
fn infeasible_config_exits_2_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.toml");
    std::fs::write(
        &cfg,
        "format_version = 1\n\
         [model]\nx = [\"x1\"]\ny = [\"y\"]\nf_x = [\"x1\"]\nf_y = [\"y\"]\n\
         [synth]\nlambda = 0.5\ndeg_phi = 1\ndeg_fz = 1\n",
    )
    .unwrap();
    let out_dir = dir.path().join("o");
    let out = run(&["synth", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("infeasible"), "missing summary: {stdout}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["format_version"], 1);
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["exit_code"], 2);
}

/// Certificate search on the cubic benchmark: feasible, deterministic, and
/// matching the checked-in golden spec up to floating tolerance.
#[test]
fn synth_cubic_benchmark_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bench_config("poly19.toml");
    let o1 = dir.path().join("a");
    let o2 = dir.path().join("b");
    for o in [&o1, &o2] {
        let out = run(&["synth", "--config", cfg.to_str().unwrap(), "--out", o.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(o1.join("spec.json")).unwrap();
    let b = std::fs::read(o2.join("spec.json")).unwrap();
    assert_eq!(a, b, "rerun is not bit-identical");

    let got: serde_json::Value = serde_json::from_slice(&a).unwrap();
    let want: serde_json::Value = serde_json::from_str(include_str!("golden/poly19_spec.json")).unwrap();
    assert_json_close(&got, &want, "spec");
}

/// Structural equality with numeric slack: solver output is deterministic
/// per platform but libm differences across platforms shift last digits.
fn assert_json_close(got: &serde_json::Value, want: &serde_json::Value, path: &str) {
    use serde_json::Value::*;
    match (got, want) {
        (Number(a), Number(b)) => {
            let (a, b) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            assert!(
                (a - b).abs() <= 1e-6 * (1.0 + b.abs()),
                "{path}: {a} vs {b}"
            );
        }
        (Object(a), Object(b)) => {
            let ka: Vec<_> = a.keys().collect();
            let kb: Vec<_> = b.keys().collect();
            assert_eq!(ka, kb, "{path}: key mismatch");
            for (k, v) in a {
                assert_json_close(v, &b[k], &format!("{path}.{k}"));
            }
        }
        (Array(a), Array(b)) => {
            assert_eq!(a.len(), b.len(), "{path}: length mismatch");
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                assert_json_close(x, y, &format!("{path}[{i}]"));
            }
        }
        (String(a), String(b)) => {
            // polynomial strings carry solver floats; compare term by term
            if a != b {
                let (pa, pb) = (split_terms(a), split_terms(b));
                assert_eq!(pa.len(), pb.len(), "{path}: {a} vs {b}");
                for ((ca, ma), (cb, mb)) in pa.iter().zip(&pb) {
                    assert_eq!(ma, mb, "{path}: {a} vs {b}");
                    assert!(
                        (ca - cb).abs() <= 1e-6 * (1.0 + cb.abs()),
                        "{path}: {a} vs {b}"
                    );
                }
            }
        }
        _ => assert_eq!(got, want, "{path}"),
    }
}

/// `"a*x - 0.5*y"` -> `[(a, "x"), (-0.5, "y")]`.
fn split_terms(s: &str) -> Vec<(f64, String)> {
    let normalized = s.replace(" - ", " + -");
    normalized
        .split(" + ")
        .map(|t| {
            let t = t.trim();
            if let Some((c, m)) = t.split_once('*') {
                if let Ok(c) = c.parse::<f64>() {
                    return (c, m.to_string());
                }
            }
            if let Ok(c) = t.parse::<f64>() {
                return (c, String::new());
            }
            match t.strip_prefix('-') {
                Some(rest) => (-1.0, rest.to_string()),
                None => (1.0, t.to_string()),
            }
        })
        .collect()
}

#[test]
fn simulate_deterministic_under_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bench_config("poly19.toml");
    let o1 = dir.path().join("a");
    let o2 = dir.path().join("b");
    for o in [&o1, &o2] {
        let out = run(&[
            "simulate", "--config", cfg.to_str().unwrap(), "--seed", "7", "--out",
            o.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(o1.join("trajectory.csv")).unwrap();
    let b = std::fs::read(o2.join("trajectory.csv")).unwrap();
    assert_eq!(a, b, "trajectories differ under the same seed");
    let text = String::from_utf8(a).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "t,x1,x2,y1,y_noisy1,xi1,xi2,xhat1,xhat2,err_norm");
    assert_eq!(text.lines().count(), 10002, "header plus fixed-step rows");
}

/// The reference certificate of the cubic benchmark has an exact zero
/// eigenvalue direction: the verifier reports boundary-pass, warns, and
/// still exits 0.
#[test]
fn verify_boundary_pass_exits_0_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bench_config("poly19.toml");
    let out = run(&[
        "verify", "--config", cfg.to_str().unwrap(), "--samples", "200", "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("boundary-pass"), "{stdout}");
    assert!(stdout.contains("warning"), "{stdout}");
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("o/verify.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["format_version"], 1);
    assert_eq!(report["checks"].as_array().unwrap().len(), 4);
}

/// A spec file written by `synth` drives `simulate` and `verify`
/// unchanged.
#[test]
fn spec_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bench_config("poly19.toml");
    let synth_out = dir.path().join("s");
    let out = run(&["synth", "--config", cfg.to_str().unwrap(), "--out", synth_out.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let spec = synth_out.join("spec.json");
    let out = run(&[
        "simulate", "--config", cfg.to_str().unwrap(), "--spec", spec.to_str().unwrap(), "--out",
        dir.path().join("sim").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&[
        "verify", "--config", cfg.to_str().unwrap(), "--spec", spec.to_str().unwrap(),
        "--samples", "200", "--out", dir.path().join("v").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}
