//! `conobs`: synthesize, simulate and verify reduced-order contracting
//! observers from configuration files.
//!
//! Exit codes: 0 success (boundary-pass counts as success, with a
//! warning), 2 infeasible synthesis or failed verification, 3 usage error,
//! 4 numeric failure.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde_json::json;

use conobs_core::model::{OutputMap, SystemModel, Transformation};
use conobs_core::observer::Observer;
use conobs_core::poly::Polynomial;
use conobs_core::sim::simulate;
use conobs_core::synth::{
    synthesize, LeftInverseStrategy, ObserverSpec, SynthError, SynthMode,
};
use conobs_core::verify::{
    check_contraction, check_correctness, check_metric_psd, check_monotonicity, CheckReport,
    CheckStatus,
};

const EXIT_FAIL: u8 = 2;
const EXIT_USAGE: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "conobs", version, about = "Contracting reduced-order observer toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for a coordinate change and contraction certificate.
    Synth(SynthArgs),
    /// Integrate a plant together with an observer and write the
    /// trajectory as CSV.
    Simulate(SimulateArgs),
    /// Sample-check every certificate condition and write a JSON report.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Noise seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker cap for sampled checks (this build evaluates serially; the
    /// flag is recorded in the manifest).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Contraction rate override.
    #[arg(long)]
    lambda: Option<f64>,
    /// Certificate search set: direct, block, direct-immersed,
    /// block-immersed.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Observer description produced by `synth`; defaults to the built-in
    /// reference observer when the model is a benchmark.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Observer description produced by `synth`; defaults to the built-in
    /// reference observer when the model is a benchmark.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Sample count override.
    #[arg(long)]
    samples: Option<usize>,
    /// Contraction rate override for the check.
    #[arg(long)]
    lambda: Option<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let started = Instant::now();
    let (name, common) = match &cli.command {
        Command::Synth(a) => ("synth", &a.common),
        Command::Simulate(a) => ("simulate", &a.common),
        Command::Verify(a) => ("verify", &a.common),
    };
    if let Err(e) = std::fs::create_dir_all(&common.out) {
        eprintln!("error: cannot create {}: {e}", common.out.display());
        return ExitCode::from(EXIT_USAGE);
    }
    let outcome = run(&cli.command);
    let code = match &outcome {
        Ok(code) => *code,
        Err(RunError { code, message }) => {
            eprintln!("error: {message}");
            *code
        }
    };
    let manifest = json!({
        "format_version": 1,
        "command": name,
        "config": common.config.display().to_string(),
        "seed": common.seed,
        "out": common.out.display().to_string(),
        "jobs": common.jobs,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "exit_code": code,
        "timing_ms": started.elapsed().as_millis() as u64,
    });
    if let Err(e) = write_json(&common.out.join("manifest.json"), &manifest) {
        eprintln!("error: cannot write manifest: {e}");
        return ExitCode::from(EXIT_NUMERIC);
    }
    ExitCode::from(code)
}

struct RunError {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> RunError {
    RunError { code: EXIT_USAGE, message: message.into() }
}

fn numeric(message: impl Into<String>) -> RunError {
    RunError { code: EXIT_NUMERIC, message: message.into() }
}

fn run(cmd: &Command) -> Result<u8, RunError> {
    match cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Verify(a) => cmd_verify(a),
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<u8, RunError> {
    let cfg = config::load(&args.common.config).map_err(usage)?;
    let resolved = config::resolve_model(&cfg.model).map_err(usage)?;
    let mut synth_cfg = config::synthesis_config(cfg.synth.as_ref()).map_err(usage)?;
    if let Some(l) = args.lambda {
        synth_cfg.lambda = l;
    }
    if let Some(m) = &args.mode {
        synth_cfg.form = config::certificate_form(m).map_err(usage)?;
    }
    let t0 = Instant::now();
    match synthesize(&resolved.model, &synth_cfg) {
        Ok(spec) => {
            let wall = t0.elapsed().as_secs_f64();
            write_json(&args.common.out.join("spec.json"), &spec.report())
                .map_err(|e| numeric(format!("cannot write spec: {e}")))?;
            println!(
                "feasible: rate {} slack {:.3e} iterations {} wall {:.2}s",
                spec.lambda, spec.slack, spec.iterations, wall
            );
            Ok(0)
        }
        Err(SynthError::Infeasible { lambda_requested, best_feasible_lambda, slack }) => {
            println!("infeasible at rate {lambda_requested}: final slack {slack:.3e}");
            match best_feasible_lambda {
                Some(l) => println!("largest feasible rate found: {l}"),
                None => println!("no feasible rate found down to 0"),
            }
            Ok(EXIT_FAIL)
        }
        Err(e @ (SynthError::NotPolynomial | SynthError::BadConfig(_))) => {
            Err(usage(e.to_string()))
        }
        Err(e) => Err(numeric(e.to_string())),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8, RunError> {
    let cfg = config::load(&args.common.config).map_err(usage)?;
    let resolved = config::resolve_model(&cfg.model).map_err(usage)?;
    let observer = load_observer(args.spec.as_deref(), &resolved)?;
    let base = resolved
        .benchmark
        .as_ref()
        .map(|b| b.sim.clone())
        .unwrap_or_default();
    let mut sim_cfg = config::sim_config(cfg.sim.as_ref(), base).map_err(usage)?;
    if let Some(s) = args.common.seed {
        sim_cfg.seed = s;
    }
    let pick = |explicit: Option<&Vec<f64>>, fallback: Option<&Vec<f64>>, what: &str| {
        explicit
            .or(fallback)
            .cloned()
            .ok_or_else(|| usage(format!("simulate: no {what} in config or benchmark")))
    };
    let b = resolved.benchmark.as_ref();
    let x0 = pick(cfg.sim.as_ref().and_then(|s| s.x0.as_ref()), b.map(|b| &b.x0), "x0")?;
    let y0 = pick(cfg.sim.as_ref().and_then(|s| s.y0.as_ref()), b.map(|b| &b.y0), "y0")?;
    let xi0 = pick(cfg.sim.as_ref().and_then(|s| s.xi0.as_ref()), b.map(|b| &b.xi0), "xi0")?;
    let traj = simulate(&resolved.model, Some(&observer), &x0, &y0, &xi0, &sim_cfg)
        .map_err(|e| numeric(e.to_string()))?;
    let csv_path = args.common.out.join("trajectory.csv");
    let mut f = std::fs::File::create(&csv_path)
        .map_err(|e| numeric(format!("cannot write trajectory: {e}")))?;
    traj.write_csv(&mut f).map_err(|e| numeric(e.to_string()))?;
    let last = traj.len() - 1;
    let meta = json!({
        "format_version": 1,
        "samples": traj.len(),
        "t_final": traj.times[last],
        "truncated": traj.truncated,
        "final_error": traj.err_norm[last],
        "rms_error_last_half": traj.rms_error_from(traj.times[last] / 2.0),
        "seed": sim_cfg.seed,
    });
    write_json(&args.common.out.join("simulation.json"), &meta)
        .map_err(|e| numeric(e.to_string()))?;
    println!(
        "simulated {} steps to t = {}: final error {:.3e}{}",
        last,
        traj.times[last],
        traj.err_norm[last],
        if traj.truncated { " (left the declared region)" } else { "" }
    );
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs) -> Result<u8, RunError> {
    let cfg = config::load(&args.common.config).map_err(usage)?;
    let resolved = config::resolve_model(&cfg.model).map_err(usage)?;
    let observer = load_observer(args.spec.as_deref(), &resolved)?;
    let (metric, cert_lambda) = certificate_of(args.spec.as_deref(), &resolved)?;
    let (domain, u_box) =
        config::verify_domain(cfg.verify.as_ref(), &resolved.model, resolved.benchmark.as_ref())
            .map_err(usage)?;
    let v = cfg.verify.as_ref();
    let samples = args.samples.or(v.and_then(|v| v.samples)).unwrap_or(1000);
    let lambda = args.lambda.or(v.and_then(|v| v.lambda)).unwrap_or(cert_lambda);
    let k = v.and_then(|v| v.k).unwrap_or(0.1);

    let reports = vec![
        check_monotonicity(&observer.transformation, &resolved.model, &domain, k, samples),
        check_correctness(
            &resolved.model, &observer.transformation, &observer, &domain, &u_box, samples, 1e-6,
        ),
        check_metric_psd(&metric),
        check_contraction(
            &resolved.model, &observer.transformation, &observer, &domain, &u_box, &metric,
            lambda, samples,
        ),
    ];
    let all_pass = reports.iter().all(CheckReport::passed);
    for r in &reports {
        let tag = match r.status {
            CheckStatus::Pass => "pass",
            CheckStatus::BoundaryPass => "boundary-pass",
            CheckStatus::Fail => "FAIL",
        };
        println!("{:<14} {tag:<13} worst {:+.3e}  {}", r.name, r.worst_value, r.detail);
        if r.status == CheckStatus::BoundaryPass {
            println!("warning: {} margin is on the boundary (exact zero direction)", r.name);
        }
    }
    let report = json!({
        "format_version": 1,
        "samples": samples,
        "rate": lambda,
        "checks": reports.iter().map(|r| json!({
            "name": r.name,
            "status": match r.status {
                CheckStatus::Pass => "pass",
                CheckStatus::BoundaryPass => "boundary-pass",
                CheckStatus::Fail => "fail",
            },
            "worst_value": r.worst_value,
            "worst_point": r.worst_point,
            "samples": r.samples,
            "detail": r.detail,
        })).collect::<Vec<_>>(),
    });
    write_json(&args.common.out.join("verify.json"), &report)
        .map_err(|e| numeric(e.to_string()))?;
    Ok(if all_pass { 0 } else { EXIT_FAIL })
}

/// Observer to run: an explicit spec file wins, otherwise the built-in
/// reference observer of the benchmark named in the config.
fn load_observer(
    spec_path: Option<&Path>,
    resolved: &config::ResolvedModel,
) -> Result<Observer, RunError> {
    if let Some(path) = spec_path {
        let spec = read_spec(path, &resolved.model)?;
        return Ok(spec.observer());
    }
    match &resolved.benchmark {
        Some(b) => Ok(b.observer.clone()),
        None => Err(usage("inline models need --spec (no built-in reference observer)")),
    }
}

/// Metric and rate of the certificate being checked.
fn certificate_of(
    spec_path: Option<&Path>,
    resolved: &config::ResolvedModel,
) -> Result<(DMatrix<f64>, f64), RunError> {
    if let Some(path) = spec_path {
        let spec = read_spec(path, &resolved.model)?;
        return Ok((spec.metric, spec.lambda));
    }
    let b = resolved.benchmark.as_ref().unwrap();
    Ok((b.metric.clone(), b.lambda))
}

/// Rebuild an observer description from the JSON report written by
/// `synth`. Variable names come from the model in the run config, which
/// must match the one the spec was synthesized for.
fn read_spec(path: &Path, model: &SystemModel) -> Result<ObserverSpec, RunError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if v["format_version"].as_u64() != Some(1) {
        return Err(usage(format!("{}: unsupported format_version", path.display())));
    }
    let matrix = |key: &str| matrix_from(&v[key]).map_err(usage);
    let polys = |val: &serde_json::Value, what: &str| -> Result<Vec<Polynomial>, RunError> {
        val.as_array()
            .ok_or_else(|| usage(format!("spec: `{what}` missing")))?
            .iter()
            .map(|s| {
                let s = s.as_str().ok_or_else(|| usage(format!("spec: `{what}` not strings")))?;
                Polynomial::parse(s).map_err(|e| usage(format!("spec `{what}`: {e}")))
            })
            .collect()
    };
    let transformation = match v["transformation"]["kind"].as_str() {
        Some("affine") => Transformation::Affine {
            p: matrix_from(&v["transformation"]["p"]).map_err(usage)?,
            phi_y: OutputMap::Poly(polys(&v["transformation"]["offset"], "offset")?),
        },
        Some("polynomial") => {
            Transformation::Poly(polys(&v["transformation"]["components"], "components")?)
        }
        _ => return Err(usage("spec: unknown transformation kind")),
    };
    let mode = match v["mode"].as_str() {
        Some("Direct") => SynthMode::Direct,
        Some("Block") => SynthMode::Block,
        Some("DirectImmersed") => SynthMode::DirectImmersed,
        Some("BlockImmersed") => SynthMode::BlockImmersed,
        _ => return Err(usage("spec: unknown mode")),
    };
    let left_inverse = match v["left_inverse"].as_str() {
        Some("AffineClosedForm") => LeftInverseStrategy::AffineClosedForm,
        Some("NewtonMonotone") => LeftInverseStrategy::NewtonMonotone,
        _ => return Err(usage("spec: unknown left inverse strategy")),
    };
    Ok(ObserverSpec {
        transformation,
        f_z: polys(&v["f_z"], "f_z")?,
        p: matrix("p")?,
        metric: matrix("metric")?,
        lambda: v["rate"].as_f64().ok_or_else(|| usage("spec: `rate` missing"))?,
        mode,
        r: v["r"].as_f64(),
        left_inverse,
        slack: v["slack"].as_f64().unwrap_or(f64::NAN),
        iterations: v["iterations"].as_u64().unwrap_or(0) as usize,
        x_names: model.x_names.clone(),
        y_names: model.y_names.clone(),
        u_names: model.u_names.clone(),
        augmentation: None,
    })
}

fn matrix_from(val: &serde_json::Value) -> Result<DMatrix<f64>, String> {
    let rows = val.as_array().ok_or("spec: matrix missing")?;
    let n = rows.len();
    let m = rows.first().and_then(|r| r.as_array()).map_or(0, |r| r.len());
    let mut out = DMatrix::zeros(n, m);
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_array().ok_or("spec: matrix row not an array")?;
        for (j, x) in row.iter().enumerate() {
            out[(i, j)] = x.as_f64().ok_or("spec: non-numeric matrix entry")?;
        }
    }
    Ok(out)
}

fn write_json(path: &Path, value: &serde_json::Value) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)
}
