//! Run configuration files: a versioned TOML document with a model section
//! (inline polynomial dynamics or a built-in benchmark by name) and
//! optional synthesis, simulation and verification sections.

use serde::Deserialize;

use conobs_core::benchmarks::{benchmark, Benchmark};
use conobs_core::model::{Domain, InputSignal, SystemModel};
use conobs_core::poly::Polynomial;
use conobs_core::sim::SimConfig;
use conobs_core::synth::{CertificateForm, SynthesisConfig};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub model: ModelSection,
    pub synth: Option<SynthSection>,
    pub sim: Option<SimSection>,
    pub verify: Option<VerifySection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Name of a built-in benchmark; exclusive with the inline fields.
    pub builtin: Option<String>,
    pub x: Option<Vec<String>>,
    pub y: Option<Vec<String>>,
    #[serde(default)]
    pub u: Vec<String>,
    pub f_x: Option<Vec<String>>,
    pub f_y: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub lambda: Option<f64>,
    pub deg_phi: Option<u32>,
    pub deg_fz: Option<u32>,
    pub deg_metric_y: Option<u32>,
    pub k: Option<f64>,
    pub mode: Option<String>,
    pub bisect: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub t_final: Option<f64>,
    pub dt: Option<f64>,
    pub noise_amplitude: Option<f64>,
    pub noise_dt: Option<f64>,
    pub seed: Option<u64>,
    pub x0: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
    pub xi0: Option<Vec<f64>>,
    pub input: Option<InputSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    /// `zero`, `constant` or `cosine`.
    pub kind: String,
    pub values: Option<Vec<f64>>,
    pub amplitude: Option<Vec<f64>>,
    pub frequency: Option<Vec<f64>>,
    pub phase: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Bounding box over the stacked `(x, y)` state; defaults to the
    /// benchmark region for built-ins.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub u_lower: Option<Vec<f64>>,
    pub u_upper: Option<Vec<f64>>,
    pub samples: Option<usize>,
    /// Rate to check contraction at; defaults to the certificate rate.
    pub lambda: Option<f64>,
    /// Monotonicity margin.
    pub k: Option<f64>,
}

pub fn load(path: &std::path::Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let cfg: RunConfig =
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if cfg.format_version != 1 {
        return Err(format!("unsupported format_version {}", cfg.format_version));
    }
    let inline = [
        cfg.model.x.is_some(),
        cfg.model.y.is_some(),
        cfg.model.f_x.is_some(),
        cfg.model.f_y.is_some(),
    ];
    match (&cfg.model.builtin, inline.iter().any(|b| *b)) {
        (Some(_), true) => return Err("model: `builtin` excludes inline fields".into()),
        (None, _) if inline.iter().any(|b| !*b) => {
            return Err("model: need `builtin` or all of x, y, f_x, f_y".into())
        }
        _ => {}
    }
    Ok(cfg)
}

/// The model plus, for built-ins, the packaged reference material.
pub struct ResolvedModel {
    pub model: SystemModel,
    pub benchmark: Option<Benchmark>,
}

pub fn resolve_model(section: &ModelSection) -> Result<ResolvedModel, String> {
    if let Some(name) = &section.builtin {
        let b = benchmark(name).map_err(|e| e.to_string())?;
        return Ok(ResolvedModel { model: b.model.clone(), benchmark: Some(b) });
    }
    let parse_all = |src: &[String]| -> Result<Vec<Polynomial>, String> {
        src.iter().map(|s| Polynomial::parse(s).map_err(|e| format!("`{s}`: {e}"))).collect()
    };
    let x: Vec<&str> = section.x.as_ref().unwrap().iter().map(|s| s.as_str()).collect();
    let y: Vec<&str> = section.y.as_ref().unwrap().iter().map(|s| s.as_str()).collect();
    let u: Vec<&str> = section.u.iter().map(|s| s.as_str()).collect();
    let f_x = parse_all(section.f_x.as_ref().unwrap())?;
    let f_y = parse_all(section.f_y.as_ref().unwrap())?;
    let model = SystemModel::polynomial(&x, &y, &u, f_x, f_y).map_err(|e| e.to_string())?;
    Ok(ResolvedModel { model, benchmark: None })
}

pub fn synthesis_config(section: Option<&SynthSection>) -> Result<SynthesisConfig, String> {
    let mut cfg = SynthesisConfig::default();
    let Some(s) = section else { return Ok(cfg) };
    if let Some(v) = s.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = s.deg_phi {
        cfg.deg_phi = v;
    }
    if let Some(v) = s.deg_fz {
        cfg.deg_fz = v;
    }
    if let Some(v) = s.deg_metric_y {
        cfg.deg_metric_y = v;
    }
    if let Some(v) = s.k {
        cfg.k = v;
    }
    if let Some(v) = s.bisect {
        cfg.bisect = v;
    }
    if let Some(m) = &s.mode {
        cfg.form = certificate_form(m)?;
    }
    Ok(cfg)
}

pub fn certificate_form(mode: &str) -> Result<CertificateForm, String> {
    match mode {
        "direct" | "direct-immersed" => Ok(CertificateForm::Direct),
        "block" | "block-immersed" => Ok(CertificateForm::Block),
        other => Err(format!(
            "unknown mode `{other}` (known: direct, block, direct-immersed, block-immersed)"
        )),
    }
}

pub fn sim_config(section: Option<&SimSection>, base: SimConfig) -> Result<SimConfig, String> {
    let mut cfg = base;
    let Some(s) = section else { return Ok(cfg) };
    if let Some(v) = s.t_final {
        cfg.t_final = v;
    }
    if let Some(v) = s.dt {
        cfg.dt = v;
    }
    if let Some(v) = s.noise_amplitude {
        cfg.noise_amplitude = v;
    }
    if let Some(v) = s.noise_dt {
        cfg.noise_dt = v;
    }
    if let Some(v) = s.seed {
        cfg.seed = v;
    }
    if let Some(i) = &s.input {
        cfg.input = match i.kind.as_str() {
            "zero" => InputSignal::Zero,
            "constant" => InputSignal::Constant(
                i.values.clone().ok_or("input: `constant` needs `values`")?,
            ),
            "cosine" => InputSignal::Cosine {
                amplitude: i.amplitude.clone().ok_or("input: `cosine` needs `amplitude`")?,
                frequency: i.frequency.clone().ok_or("input: `cosine` needs `frequency`")?,
                phase: i
                    .phase
                    .clone()
                    .unwrap_or_else(|| vec![0.0; i.amplitude.as_ref().map_or(0, |a| a.len())]),
            },
            other => return Err(format!("unknown input kind `{other}`")),
        };
    }
    Ok(cfg)
}

/// Verification region: config box when given, benchmark region otherwise.
pub fn verify_domain(
    section: Option<&VerifySection>,
    model: &SystemModel,
    bench: Option<&Benchmark>,
) -> Result<(Domain, Vec<(f64, f64)>), String> {
    let names: Vec<&str> = model
        .x_names
        .iter()
        .chain(model.y_names.iter())
        .map(|s| s.as_str())
        .collect();
    if let Some(s) = section {
        if let (Some(lo), Some(hi)) = (&s.lower, &s.upper) {
            if lo.len() != names.len() || hi.len() != names.len() {
                return Err(format!("verify: bounds must have {} entries", names.len()));
            }
            let u_lo = s.u_lower.clone().unwrap_or_else(|| vec![-1.0; model.n_u()]);
            let u_hi = s.u_upper.clone().unwrap_or_else(|| vec![1.0; model.n_u()]);
            let u_box = u_lo.into_iter().zip(u_hi).collect();
            return Ok((Domain::bounding_box(&names, lo, hi), u_box));
        }
        if s.lower.is_some() != s.upper.is_some() {
            return Err("verify: `lower` and `upper` come together".into());
        }
    }
    if let Some(b) = bench {
        return Ok((b.domain.clone(), b.u_box.clone()));
    }
    Err("verify: inline models need an explicit `lower`/`upper` box".into())
}
