//! Built-in benchmark systems with reference observers.
//!
//! Four plants: a marginal cubic polynomial system, a magnetic levitation
//! model, a cart-pendulum, and a reactor with logarithmic immersion. Each
//! comes packaged with its reference observer, the region over which the
//! certificate holds, default initial conditions and a simulation setup,
//! plus the thresholds its runs are expected to meet.

use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::model::{Domain, InputSignal, OutputMap, SystemModel, Transformation};
use crate::observer::{integrate_adaptive_simpson, EstimateMap, Observer, ObserverDynamics};
use crate::poly::Polynomial;
use crate::sim::SimConfig;
use crate::synth::{LeftInverseStrategy, ObserverSpec, SynthMode, SynthesisConfig};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("unknown benchmark `{0}` (known: poly19, maglev, cartpend, reactor)")]
    Unknown(String),
}

/// Thresholds a default run of the benchmark is expected to meet.
#[derive(Debug, Clone, Copy)]
pub struct Expected {
    /// The estimation error settles below this value...
    pub settle_threshold: f64,
    /// ...no later than this time.
    pub settle_by: f64,
    /// RMS error from this time onward...
    pub rms_from: f64,
    /// ...stays below this bound.
    pub rms_bound: f64,
}

/// A plant, its reference observer, and everything needed to run and check
/// it.
pub struct Benchmark {
    pub name: String,
    /// Plant model; for the reactor this is the immersion-extended plant
    /// with the auxiliary filter states appended to the unmeasured block.
    pub model: SystemModel,
    /// Runnable reference observer.
    pub observer: Observer,
    /// Full synthesis-style record, available when the observer field is
    /// polynomial.
    pub spec: Option<ObserverSpec>,
    /// Coordinate change certified by the reference observer.
    pub transformation: Transformation,
    /// Contraction metric in observer coordinates.
    pub metric: DMatrix<f64>,
    /// Certified contraction rate over `domain`.
    pub lambda: f64,
    /// Region of the stacked `(x, y)` state where the certificate holds.
    pub domain: Domain,
    /// Input box for sampled checks.
    pub u_box: Vec<(f64, f64)>,
    /// Number of auxiliary filter states inside `model` (zero when the
    /// plant was not extended).
    pub n_w: usize,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub xi0: Vec<f64>,
    pub sim: SimConfig,
    pub expected: Expected,
    /// Synthesis configuration reproducing the reference certificate, for
    /// plants where the convex search applies directly.
    pub synth: Option<SynthesisConfig>,
}

impl Benchmark {
    /// Observer initial condition consistent with the plant: the image of
    /// the plant initial condition under the coordinate change.
    pub fn xi_consistent(&self) -> Vec<f64> {
        self.transformation.eval(&self.x0, &self.y0, &self.model.x_names, &self.model.y_names)
    }
}

/// Look up a built-in benchmark by name.
pub fn benchmark(name: &str) -> Result<Benchmark, BenchmarkError> {
    match name {
        "poly19" => Ok(poly19()),
        "maglev" => Ok(maglev_with(&MaglevParams::default())),
        "cartpend" => Ok(cartpend_with(1.0)),
        "reactor" => Ok(reactor()),
        other => Err(BenchmarkError::Unknown(other.to_string())),
    }
}

// --- cubic polynomial system ---------------------------------------------

/// Cubic two-state plant with an integrated output. The reference
/// certificate is marginal: its contraction inequality has an exact zero
/// eigenvalue direction, at rate 1.
pub fn poly19() -> Benchmark {
    let model = poly19_model();
    let p = DMatrix::from_partial_diagonal(2, 2, &[0.6370, 0.6369]);
    let phi = OutputMap::Poly(vec![
        Polynomial::parse("-2.1872*y").unwrap(),
        Polynomial::parse("-0.6368*y").unwrap(),
    ]);
    // pushforward of the plant through z = P x + phi(y)
    let f_z = vec![
        Polynomial::parse("x1 - 1/3*x1^3 - x1*x2^2")
            .unwrap()
            .scale(0.6370)
            .sub(&Polynomial::parse("2.1872*x1").unwrap()),
        Polynomial::parse("x1 - x2 - 1/3*x2^3 - x2*x1^2")
            .unwrap()
            .scale(0.6369)
            .sub(&Polynomial::parse("0.6368*x1").unwrap()),
    ];
    let transformation = Transformation::Affine { p: p.clone(), phi_y: phi };
    let metric = DMatrix::from_partial_diagonal(2, 2, &[1.0 / 0.6370, 1.0 / 0.6369]);
    let spec = ObserverSpec {
        transformation: transformation.clone(),
        f_z,
        p,
        metric: metric.clone(),
        lambda: 1.0,
        mode: SynthMode::Direct,
        r: None,
        left_inverse: LeftInverseStrategy::AffineClosedForm,
        slack: 0.0,
        iterations: 0,
        x_names: model.x_names.clone(),
        y_names: model.y_names.clone(),
        u_names: vec![],
        augmentation: None,
    };
    let observer = spec.observer();
    Benchmark {
        name: "poly19".into(),
        model,
        observer,
        transformation: spec.transformation.clone(),
        metric,
        lambda: 1.0,
        domain: Domain::bounding_box(&["x1", "x2", "y"], &[-3.0, -3.0, -3.0], &[3.0, 3.0, 3.0]),
        u_box: vec![],
        n_w: 0,
        x0: vec![3.0, 5.0],
        y0: vec![-4.0],
        xi0: vec![0.0, 0.0],
        sim: SimConfig {
            t_final: 10.0,
            dt: 1e-3,
            noise_amplitude: 0.02,
            noise_dt: 1e-3,
            seed: 1,
            ..Default::default()
        },
        expected: Expected {
            settle_threshold: 0.05,
            settle_by: 10.0,
            rms_from: 5.0,
            rms_bound: 0.1,
        },
        synth: Some(SynthesisConfig { lambda: 1.0, deg_phi: 2, deg_fz: 3, ..Default::default() }),
        spec: Some(spec),
    }
}

pub fn poly19_model() -> SystemModel {
    SystemModel::polynomial(
        &["x1", "x2"],
        &["y"],
        &[],
        vec![
            Polynomial::parse("x1 - 1/3*x1^3 - x1*x2^2").unwrap(),
            Polynomial::parse("x1 - x2 - 1/3*x2^3 - x2*x1^2").unwrap(),
        ],
        vec![Polynomial::parse("x1").unwrap()],
    )
    .unwrap()
}

// --- magnetic levitation --------------------------------------------------

/// Physical constants of the levitation model plus the observer gain. The
/// plant is only defined for positions below the pole face `c`.
#[derive(Debug, Clone, Copy)]
pub struct MaglevParams {
    pub m: f64,
    pub r: f64,
    pub k: f64,
    pub c: f64,
    pub g: f64,
    pub ell: f64,
}

impl Default for MaglevParams {
    fn default() -> Self {
        MaglevParams { m: 0.1, r: 2.5, k: 0.65, c: 0.005, g: 9.81, ell: 0.5 }
    }
}

/// Levitation model: unmeasured flux linkage and momentum, measured
/// position. The flux error contracts through the plant itself (position
/// stays below `c`), the momentum error through the gain `ell`; the
/// certificate rate is the worst of the two over the declared region.
pub fn maglev_with(pr: &MaglevParams) -> Benchmark {
    let MaglevParams { m, r, k, c, g, ell } = *pr;
    let model = SystemModel::polynomial(
        &["x1", "x2"],
        &["y"],
        &["u"],
        vec![
            // flux: (R/k)(y - c) x1 + u
            Polynomial::parse(&format!("{}*y*x1 - {}*x1 + u", r / k, r * c / k)).unwrap(),
            // momentum: x1^2/(2k) - m g
            Polynomial::parse(&format!("{}*x1^2 - {}", 0.5 / k, m * g)).unwrap(),
        ],
        vec![Polynomial::parse(&format!("{}*x2", 1.0 / m)).unwrap()],
    )
    .unwrap();
    let p = DMatrix::identity(2, 2);
    let phi = OutputMap::Poly(vec![
        Polynomial::zero(),
        Polynomial::parse(&format!("-{ell}*y")).unwrap(),
    ]);
    let f_z = vec![
        Polynomial::parse(&format!("{}*y*x1 - {}*x1 + u", r / k, r * c / k)).unwrap(),
        Polynomial::parse(&format!("{}*x1^2 - {} - {}*x2", 0.5 / k, m * g, ell / m)).unwrap(),
    ];
    let transformation = Transformation::Affine { p: p.clone(), phi_y: phi };
    let metric = DMatrix::identity(2, 2);
    let spec = ObserverSpec {
        transformation: transformation.clone(),
        f_z,
        p,
        metric: metric.clone(),
        lambda: 0.03,
        mode: SynthMode::Direct,
        r: None,
        left_inverse: LeftInverseStrategy::AffineClosedForm,
        slack: f64::NAN,
        iterations: 0,
        x_names: model.x_names.clone(),
        y_names: model.y_names.clone(),
        u_names: model.u_names.clone(),
        augmentation: None,
    };
    let observer = spec.observer();
    Benchmark {
        name: "maglev".into(),
        model,
        observer,
        transformation: spec.transformation.clone(),
        metric,
        lambda: 0.03,
        // positions at least 15 mm below the pole face keep the flux
        // channel strictly contracting; small flux keeps the coupling term
        // dominated
        domain: Domain::bounding_box(
            &["x1", "x2", "y"],
            &[-0.05, -3.0, -1.0],
            &[0.05, 3.0, -0.01],
        ),
        u_box: vec![(-1.0, 1.0)],
        n_w: 0,
        x0: vec![0.003, 0.0],
        y0: vec![0.0],
        xi0: vec![0.010, 0.010],
        sim: SimConfig { t_final: 2.0, dt: 1e-3, seed: 2, ..Default::default() },
        expected: Expected {
            settle_threshold: 1e-3,
            settle_by: 2.0,
            rms_from: 1.5,
            rms_bound: 1e-3,
        },
        synth: None,
        spec: Some(spec),
    }
}

// --- cart-pendulum --------------------------------------------------------

const CARTPEND_M: f64 = 1.0;
const CARTPEND_A: f64 = 1.0;
const CARTPEND_B: f64 = 0.1;

fn pendulum_w(y1: f64) -> f64 {
    (CARTPEND_M - CARTPEND_B * CARTPEND_B * y1.cos() * y1.cos()).sqrt()
}

/// Kinematic matrix mapping momenta to generalized velocities.
pub fn pendulum_psi(y1: f64) -> DMatrix<f64> {
    let (m, b) = (CARTPEND_M, CARTPEND_B);
    let w = pendulum_w(y1);
    DMatrix::from_row_slice(2, 2, &[
        m.sqrt() / w,
        0.0,
        -b * y1.cos() / (m.sqrt() * w),
        1.0 / m.sqrt(),
    ])
}

/// Measured-state offset solving `(d phi / d y) Psi(y) = -lambda I`. The
/// first component is an incomplete elliptic integral, evaluated by
/// adaptive quadrature.
pub fn pendulum_offset(lambda: f64, y: &[f64]) -> Vec<f64> {
    let (m, b) = (CARTPEND_M, CARTPEND_B);
    let integrand = move |s: f64| (1.0 - b * b / m * s.cos() * s.cos()).sqrt();
    let i1 = integrate_adaptive_simpson(&integrand, 0.0, y[0], 1e-12);
    vec![-lambda * i1, -lambda * (b / m.sqrt() * y[0].sin() + m.sqrt() * y[1])]
}

/// Jacobian of the offset; exact by the fundamental theorem of calculus.
pub fn pendulum_offset_jacobian(lambda: f64, y1: f64) -> DMatrix<f64> {
    let (m, b) = (CARTPEND_M, CARTPEND_B);
    DMatrix::from_row_slice(2, 2, &[
        -lambda * (1.0 - b * b / m * y1.cos() * y1.cos()).sqrt(),
        0.0,
        -lambda * b / m.sqrt() * y1.cos(),
        -lambda * m.sqrt(),
    ])
}

/// Worst entry of `(d phi / d y) Psi(y) + lambda I` at the given angle;
/// zero when the offset solves its defining identity exactly.
pub fn pendulum_pde_residual(lambda: f64, y1: f64) -> f64 {
    let j = pendulum_offset_jacobian(lambda, y1);
    let s = j * pendulum_psi(y1) + DMatrix::identity(2, 2) * lambda;
    s.amax()
}

fn pendulum_drift(y: &[f64], u: &[f64]) -> Vec<f64> {
    // Psi'(y) [grad V(y) - G u] with V = a cos(y1), G = (0, 1)
    let a = CARTPEND_A;
    let psi = pendulum_psi(y[0]);
    let v = [-a * y[0].sin(), -u[0]];
    vec![
        psi[(0, 0)] * v[0] + psi[(1, 0)] * v[1],
        psi[(0, 1)] * v[0] + psi[(1, 1)] * v[1],
    ]
}

/// Cart-pendulum: measured position and angle, unmeasured momenta. The
/// offset solves a PDE making the error dynamics exactly linear at the
/// requested rate; the transformation keeps the identity state block.
pub fn cartpend_with(lambda: f64) -> Benchmark {
    let (m, b) = (CARTPEND_M, CARTPEND_B);
    let f = move |x: &[f64], y: &[f64], u: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let psi = pendulum_psi(y[0]);
        let dy = vec![
            psi[(0, 0)] * x[0] + psi[(0, 1)] * x[1],
            psi[(1, 0)] * x[0] + psi[(1, 1)] * x[1],
        ];
        (pendulum_drift(y, u), dy)
    };
    let jac = move |x: &[f64], y: &[f64], u: &[f64]| -> DMatrix<f64> {
        let (s1, c1) = y[0].sin_cos();
        let w = pendulum_w(y[0]);
        let a = CARTPEND_A;
        // d/dy1 of the Psi entries; w' = b^2 s1 c1 / w
        let dw = b * b * s1 * c1 / w;
        let dpsi11 = -m.sqrt() * dw / (w * w);
        // uses w^2 + b^2 c1^2 = m
        let dpsi21 = b * s1 * m.sqrt() / (w * w * w);
        let mut j = DMatrix::zeros(4, 4);
        // dx rows: depend on y1 and u only
        let num = -a * m * s1 + b * c1 * u[0];
        let dnum = -a * m * c1 - b * s1 * u[0];
        j[(0, 2)] = (dnum * w - num * dw) / (m.sqrt() * w * w);
        // dx2 = -u / sqrt(m): no state dependence
        // dy rows: Psi x, derivative in x is Psi, in y1 through Psi
        let psi = pendulum_psi(y[0]);
        j[(2, 0)] = psi[(0, 0)];
        j[(2, 1)] = psi[(0, 1)];
        j[(3, 0)] = psi[(1, 0)];
        j[(3, 1)] = psi[(1, 1)];
        j[(2, 2)] = dpsi11 * x[0];
        j[(3, 2)] = dpsi21 * x[0];
        j
    };
    let check: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = vec![
        (vec![0.4, 0.3], vec![0.7, -0.1], vec![0.2]),
        (vec![-1.0, 2.0], vec![-2.1, 0.5], vec![-0.3]),
    ];
    let model = SystemModel::closed_form(
        &["x1", "x2"],
        &["y1", "y2"],
        &["u"],
        Arc::new(f),
        Arc::new(jac),
        &check,
    )
    .unwrap();

    let phi_map = move |y: &[f64]| pendulum_offset(lambda, y);
    let phi_jac = move |y: &[f64]| pendulum_offset_jacobian(lambda, y[0]);
    let transformation = Transformation::Affine {
        p: DMatrix::identity(2, 2),
        phi_y: OutputMap::ClosedForm { f: Arc::new(phi_map), jacobian: Arc::new(phi_jac) },
    };
    // dxi = Psi'(y)[grad V - G u] - lambda (xi - phi(y)) = -lambda xi + ...
    let rhs = move |xi: &[f64], y: &[f64], u: &[f64]| -> Vec<f64> {
        let drift = pendulum_drift(y, u);
        let phi = pendulum_offset(lambda, y);
        vec![
            drift[0] - lambda * (xi[0] - phi[0]),
            drift[1] - lambda * (xi[1] - phi[1]),
        ]
    };
    let observer = Observer {
        dynamics: ObserverDynamics::ClosedForm(Arc::new(rhs)),
        transformation: transformation.clone(),
        estimate_map: EstimateMap::LeftInverse,
        x_names: model.x_names.clone(),
        y_names: model.y_names.clone(),
        u_names: model.u_names.clone(),
    };
    Benchmark {
        name: "cartpend".into(),
        model,
        observer,
        spec: None,
        transformation,
        metric: DMatrix::identity(2, 2),
        lambda,
        domain: Domain::bounding_box(
            &["x1", "x2", "y1", "y2"],
            &[-3.0, -3.0, -3.2, -3.0],
            &[3.0, 3.0, 3.2, 3.0],
        ),
        u_box: vec![(-0.2, 0.2)],
        n_w: 0,
        x0: vec![0.4, 0.3],
        y0: vec![std::f64::consts::FRAC_PI_2 - 0.1, -0.1],
        xi0: vec![0.0, 0.0],
        sim: SimConfig {
            t_final: 12.0,
            dt: 1e-3,
            seed: 3,
            input: InputSignal::Cosine {
                amplitude: vec![0.2],
                frequency: vec![1.0],
                phase: vec![0.0],
            },
            ..Default::default()
        },
        expected: Expected {
            settle_threshold: 1e-3,
            settle_by: 7.0 / lambda.max(0.1) + 2.0,
            rms_from: 10.0,
            rms_bound: 1e-3,
        },
        synth: None,
    }
}

// --- reactor with logarithmic immersion ----------------------------------

/// The plain reactor: substrate and biomass with a non-monotone growth
/// law (all rate constants one).
pub fn reactor_plain() -> SystemModel {
    SystemModel::polynomial(
        &["x"],
        &["y"],
        &[],
        vec![Polynomial::parse("-x*y + x^2*y").unwrap()],
        vec![Polynomial::parse("x*y - x^2*y").unwrap()],
    )
    .unwrap()
}

fn reactor_sqrt_d(z2: f64, z3: f64, z4: f64, ln_y: f64) -> f64 {
    // discriminant clamped at zero: exact trajectories keep it at
    // (z3 - 2 z1)^2, roundoff can push it slightly negative
    (z3 * z3 - 4.0 * (z4 - z2 + ln_y)).max(0.0).sqrt()
}

/// Reactor extended with three stable filter states driven by functions of
/// the output. The transformed state leads with the conserved total
/// `x + y`, recovered from the filters through a quadratic root identity;
/// the remaining coordinates are the filters themselves.
pub fn reactor() -> Benchmark {
    let f = |x: &[f64], y: &[f64], _u: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mu = x[0] * (1.0 - x[0]);
        let dx = vec![
            -mu * y[0],
            -x[1] + y[0].ln(),
            -x[2] + 2.0 * y[0] + 1.0,
            -x[3] + y[0] + y[0] * y[0],
        ];
        (dx, vec![mu * y[0]])
    };
    let jac = |x: &[f64], y: &[f64], _u: &[f64]| -> DMatrix<f64> {
        let mut j = DMatrix::zeros(5, 5);
        let dmu = 1.0 - 2.0 * x[0];
        j[(0, 0)] = -dmu * y[0];
        j[(0, 4)] = -x[0] * (1.0 - x[0]);
        j[(1, 1)] = -1.0;
        j[(1, 4)] = 1.0 / y[0];
        j[(2, 2)] = -1.0;
        j[(2, 4)] = 2.0;
        j[(3, 3)] = -1.0;
        j[(3, 4)] = 1.0 + 2.0 * y[0];
        j[(4, 0)] = dmu * y[0];
        j[(4, 4)] = x[0] * (1.0 - x[0]);
        j
    };
    let check: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = vec![
        (vec![0.4, -3.3, 3.8, 0.0], vec![0.5], vec![]),
        (vec![0.1, -2.0, 2.8, 0.2], vec![0.9], vec![]),
    ];
    let model = SystemModel::closed_form(
        &["x", "w1", "w2", "w3"],
        &["y"],
        &[],
        Arc::new(f),
        Arc::new(jac),
        &check,
    )
    .unwrap();

    // z = (x + y, w1, w2, w3)
    let transformation = Transformation::Affine {
        p: DMatrix::identity(4, 4),
        phi_y: OutputMap::Poly(vec![
            Polynomial::parse("y").unwrap(),
            Polynomial::zero(),
            Polynomial::zero(),
            Polynomial::zero(),
        ]),
    };
    let rhs = |xi: &[f64], y: &[f64], _u: &[f64]| -> Vec<f64> {
        let ln_y = y[0].max(1e-12).ln();
        let s = reactor_sqrt_d(xi[1], xi[2], xi[3], ln_y);
        vec![
            -xi[0] + 0.5 * xi[2] - 0.5 * s,
            -xi[1] + ln_y,
            -xi[2] + 2.0 * y[0] + 1.0,
            -xi[3] + y[0] + y[0] * y[0],
        ]
    };
    let observer = Observer {
        dynamics: ObserverDynamics::ClosedForm(Arc::new(rhs)),
        transformation: transformation.clone(),
        estimate_map: EstimateMap::LeftInverse,
        x_names: model.x_names.clone(),
        y_names: model.y_names.clone(),
        u_names: vec![],
    };

    // certificate region: points on the root-consistent manifold with the
    // discriminant bounded away from zero, around the attractor
    let sampler = Arc::new(|rng: &mut dyn rand::RngCore| -> Vec<f64> {
        use rand::Rng;
        let mut r = rand::rngs::StdRng::from_rng(&mut *rng).unwrap();
        let w2 = r.gen_range(2.75..3.0);
        let s = r.gen_range(0.95..1.25);
        let y: f64 = r.gen_range(0.5..0.95);
        let w3 = r.gen_range(-0.3..0.3);
        let z1 = 0.5 * (w2 - s);
        let w1 = w3 + y.ln() - (w2 * w2 - s * s) / 4.0;
        vec![z1 - y, w1, w2, w3, y]
    });
    let domain = Domain::bounding_box(
        &["x", "w1", "w2", "w3", "y"],
        &[-0.5, -3.5, 2.7, -0.5, 0.4],
        &[1.0, -1.0, 3.1, 0.5, 1.0],
    )
    .with_sampler(sampler);

    // plant filter initial conditions on the root-consistent branch:
    // w2 - 2(x + y) stays positive, so the square root resolves to the
    // conserved total
    let z1 = 0.4 + 0.5;
    let w2 = 2.0 * z1 + 2.0;
    let w1 = z1 * z1 - w2 * z1 + 0.5f64.ln();
    Benchmark {
        name: "reactor".into(),
        model,
        observer,
        spec: None,
        transformation,
        metric: DMatrix::identity(4, 4),
        lambda: 0.05,
        domain,
        u_box: vec![],
        n_w: 3,
        x0: vec![0.4, w1, w2, 0.0],
        y0: vec![0.5],
        xi0: vec![0.5, 0.0, 0.0, 0.0],
        sim: SimConfig { t_final: 20.0, dt: 1e-3, seed: 4, ..Default::default() },
        expected: Expected {
            settle_threshold: 1e-3,
            settle_by: 20.0,
            rms_from: 15.0,
            rms_bound: 1e-2,
        },
        synth: None,
    }
}

/// Root-consistency residual of the reactor immersion at a trajectory
/// point: zero whenever the filters and the conserved total satisfy the
/// quadratic identity they were initialized on.
pub fn reactor_invariant(x: &[f64], y: &[f64]) -> f64 {
    let z1 = x[0] + y[0];
    z1 * z1 - x[2] * z1 + x[3] - x[1] + y[0].ln()
}

// --- high-gain observer baseline for the reactor --------------------------

/// Tuning of the high-gain baseline. The saturation bounds and the clamp
/// level are not dictated by the plant; defaults bound the invariant
/// region of the default reactor run with slack.
#[derive(Debug, Clone, Copy)]
pub struct HgoParams {
    pub ell: f64,
    /// Clamp on the exponentiated first coordinate.
    pub xi1_bar: f64,
    /// Saturation bounds on the third derivative estimate.
    pub sat_lo: f64,
    pub sat_hi: f64,
    /// Knee of the piecewise slope extension.
    pub xi2_star: f64,
}

impl Default for HgoParams {
    fn default() -> Self {
        HgoParams { ell: 3.0, xi1_bar: 1.5, sat_lo: -5.0, sat_hi: 5.0, xi2_star: 0.3 }
    }
}

/// Which arm of the piecewise slope extension fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgoBranch {
    /// Large second coordinate with a steep negative third: slope pinned
    /// at -1.
    Pinned,
    /// Small positive second coordinate below the cubic envelope:
    /// polynomial extension.
    Extension,
    /// Plain ratio of the estimated derivatives.
    Ratio,
}

fn hgo_phi_tilde(xi: &[f64], p: &HgoParams) -> (f64, HgoBranch) {
    let q = xi[1] / p.xi2_star;
    let envelope = xi[1] * (q * q - 3.0 * q + 1.0);
    if xi[1] > p.xi2_star && xi[2] < -xi[1] {
        (-1.0, HgoBranch::Pinned)
    } else if xi[1] > 0.0 && xi[1] <= p.xi2_star && xi[2] < envelope {
        (q * q - 3.0 * q + 1.0, HgoBranch::Extension)
    } else {
        let v = xi[2] / xi[1];
        (if v.is_nan() { 0.0 } else { v }, HgoBranch::Ratio)
    }
}

/// One evaluation of the high-gain baseline: derivative of its state,
/// estimate of the unmeasured reactor substrate, and the slope-extension
/// branch that fired. Saturations make the map total.
pub fn hgo_reactor_rhs(xi: &[f64], y: f64, p: &HgoParams) -> (Vec<f64>, f64, HgoBranch) {
    let e_y = xi[0] - y.max(1e-12).ln();
    let (phi, branch) = hgo_phi_tilde(xi, p);
    let third = (xi[0].exp() * (2.0 * xi[1] * xi[1] - xi[2] * phi))
        .clamp(p.sat_lo, p.sat_hi);
    let indicator = if xi[0] <= p.xi1_bar.ln() { 1.0 } else { 0.0 };
    let dxi = vec![
        xi[1] - 3.0 * p.ell * e_y,
        -xi[2] * xi[0].exp().min(p.xi1_bar) - 3.0 * p.ell * p.ell * e_y,
        third + (3.0 * p.ell * xi[2] * indicator + p.ell.powi(3) * (-xi[0]).exp().max(1.0 / p.xi1_bar)) * e_y,
    ];
    let xhat = 0.5 * (1.0 - phi);
    (dxi, xhat, branch)
}

/// The high-gain baseline wrapped as a runnable observer over the plain
/// reactor model, estimating the substrate only.
pub fn hgo_observer(p: HgoParams) -> Observer {
    let rhs = move |xi: &[f64], y: &[f64], _u: &[f64]| hgo_reactor_rhs(xi, y[0], &p).0;
    let est = move |xi: &[f64], _y: &[f64]| {
        let (phi, _) = hgo_phi_tilde(xi, &p);
        vec![0.5 * (1.0 - phi)]
    };
    Observer {
        dynamics: ObserverDynamics::ClosedForm(Arc::new(rhs)),
        // placeholder coordinates: the baseline has no certified
        // transformation; the estimate map is explicit
        transformation: Transformation::Poly(vec![Polynomial::zero(); 3]),
        estimate_map: EstimateMap::Custom(Arc::new(est)),
        x_names: vec!["x".into()],
        y_names: vec!["y".into()],
        u_names: vec![],
    }
}

use rand::SeedableRng;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::simulate;
    use crate::verify::{
        check_contraction, check_correctness, check_monotonicity, paired_contraction_rate,
    };
    use approx::assert_relative_eq;

    #[test]
    fn lookup_known_and_unknown() {
        for name in ["poly19", "maglev", "cartpend", "reactor"] {
            assert_eq!(benchmark(name).unwrap().name, name);
        }
        assert!(matches!(benchmark("pendulum"), Err(BenchmarkError::Unknown(_))));
    }

    /// The reference certificates hold on their declared regions.
    #[test]
    fn reference_certificates_verify() {
        for name in ["poly19", "maglev", "cartpend", "reactor"] {
            let b = benchmark(name).unwrap();
            let r = check_monotonicity(&b.transformation, &b.model, &b.domain, 0.1, 100);
            assert!(r.passed(), "{name} monotonicity: {}", r.detail);
            let r = check_correctness(
                &b.model, &b.transformation, &b.observer, &b.domain, &b.u_box, 100, 1e-6,
            );
            assert!(r.passed(), "{name} correctness: {}", r.detail);
            let r = check_contraction(
                &b.model, &b.transformation, &b.observer, &b.domain, &b.u_box, &b.metric,
                b.lambda, 100,
            );
            assert!(r.passed(), "{name} contraction: {}", r.detail);
        }
    }

    /// Exact-image observer initialization keeps the estimate glued to the
    /// state.
    #[test]
    fn consistent_initialization_is_invariant() {
        for name in ["poly19", "maglev", "cartpend", "reactor"] {
            let b = benchmark(name).unwrap();
            let mut cfg = b.sim.clone();
            cfg.noise_amplitude = 0.0;
            cfg.t_final = 2.0;
            let xi0 = b.xi_consistent();
            let traj = simulate(&b.model, Some(&b.observer), &b.x0, &b.y0, &xi0, &cfg).unwrap();
            let worst = traj.err_norm.iter().cloned().fold(0.0, f64::max);
            assert!(worst <= 1e-6, "{name} drifted to {worst:.3e}");
        }
    }

    #[test]
    fn pendulum_pde_solution_is_exact() {
        for lambda in [0.5, 1.0, 2.0] {
            for i in 0..50 {
                let y1 = -3.0 + 6.0 * i as f64 / 49.0;
                let r = pendulum_pde_residual(lambda, y1);
                assert!(r < 1e-9, "residual {r:.3e} at angle {y1}");
            }
        }
    }

    #[test]
    fn pendulum_error_decays_at_requested_rate() {
        let b = cartpend_with(1.0);
        let mut cfg = b.sim.clone();
        cfg.t_final = 6.0;
        let (rate, r2) = paired_contraction_rate(
            &b.model, &b.observer, &b.x0, &b.y0, &[1.0, -1.0], &[0.0, 0.5], &cfg, 0.5, 5.5,
        )
        .unwrap();
        assert_relative_eq!(rate, -1.0, epsilon = 1e-6);
        assert!(r2 > 0.99999);
    }

    /// Momentum error slope is set by the gain over the mass once the flux
    /// is initialized exactly.
    #[test]
    fn maglev_momentum_rate() {
        let p = MaglevParams::default();
        let b = maglev_with(&p);
        let mut cfg = b.sim.clone();
        cfg.t_final = 1.5;
        let xi0 = {
            let mut v = b.xi_consistent();
            v[1] += 0.02; // momentum offset only
            v
        };
        let traj = simulate(&b.model, Some(&b.observer), &b.x0, &b.y0, &xi0, &cfg).unwrap();
        let errs: Vec<f64> = traj
            .xhat
            .iter()
            .zip(&traj.x)
            .map(|(xh, x)| (xh[1] - x[1]).abs())
            .collect();
        let (rate, r2) = crate::sim::fit_rate(&traj.times, &errs).unwrap();
        assert_relative_eq!(rate, -p.ell / p.m, epsilon = 0.05 * p.ell / p.m);
        assert!(r2 > 0.999);
    }

    /// The quadratic root identity is conserved along exact-IC runs and
    /// the observer substrate estimate converges.
    #[test]
    fn reactor_invariant_and_convergence() {
        let b = reactor();
        let traj = simulate(&b.model, Some(&b.observer), &b.x0, &b.y0, &b.xi0, &b.sim).unwrap();
        for (x, y) in traj.x.iter().zip(&traj.y).step_by(500) {
            let q = reactor_invariant(x, y);
            assert!(q.abs() < 1e-6, "identity residual {q:.3e}");
        }
        let last = traj.len() - 1;
        let e = (traj.xhat[last][0] - traj.x[last][0]).abs();
        assert!(e < 1e-3, "substrate error {e:.3e} at t = 20");
    }

    #[test]
    fn hgo_branches_follow_guards() {
        let p = HgoParams::default();
        let (_, _, b) = hgo_reactor_rhs(&[0.0, 0.5, -1.0], 1.0, &p);
        assert_eq!(b, HgoBranch::Pinned);
        let (_, _, b) = hgo_reactor_rhs(&[0.0, 0.2, -5.0], 1.0, &p);
        assert_eq!(b, HgoBranch::Extension);
        let (_, _, b) = hgo_reactor_rhs(&[0.0, 0.5, 0.4], 1.0, &p);
        assert_eq!(b, HgoBranch::Ratio);
        // zero second coordinate stays finite through the saturation
        let (d, _, _) = hgo_reactor_rhs(&[0.0, 0.0, 1.0], 1.0, &p);
        assert!(d.iter().all(|v| v.is_finite()));
    }

    /// Under the same measurement noise, the high-gain baseline is the
    /// noisier estimator.
    #[test]
    fn hgo_noisier_than_contracting_observer() {
        let b = reactor();
        let mut cfg = b.sim.clone();
        cfg.noise_amplitude = 0.01;
        cfg.noise_dt = 1e-3;
        cfg.t_final = 20.0;
        let ours = simulate(&b.model, Some(&b.observer), &b.x0, &b.y0, &b.xi0, &cfg).unwrap();
        let ours_rms = {
            let errs: Vec<f64> = ours
                .times
                .iter()
                .zip(ours.xhat.iter().zip(&ours.x))
                .filter(|(t, _)| **t >= 10.0)
                .map(|(_, (xh, x))| (xh[0] - x[0]).powi(2))
                .collect();
            (errs.iter().sum::<f64>() / errs.len() as f64).sqrt()
        };
        let plain = reactor_plain();
        let hgo = hgo_observer(HgoParams::default());
        let hg = simulate(&plain, Some(&hgo), &[0.4], &[0.5], &[1.0, 0.1, 0.0], &cfg).unwrap();
        let hgo_rms = hg.rms_error_from(10.0);
        assert!(
            hgo_rms > ours_rms,
            "high-gain rms {hgo_rms:.3e} vs contracting rms {ours_rms:.3e}"
        );
    }
}
