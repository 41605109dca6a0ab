//! Convex observer synthesis.
//!
//! Searches for a coordinate change `z = P x + varphi(y)` (optionally
//! `P(y) x + varphi(y)`), an observer vector field `f_z` and a contraction
//! certificate simultaneously. The correctness identity
//! `Phi_x f_x + Phi_y f_y = f_z` is eliminated exactly by coefficient
//! matching, leaving a reduced parameter vector; monotonicity and the
//! contraction inequality then compile to one semidefinite feasibility
//! problem through [`crate::sos`].

use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

use crate::model::{AugmentedModel, Dynamics, OutputMap, SystemModel, Transformation};
use crate::observer::{EstimateMap, Observer, ObserverDynamics};
use crate::poly::{PolyError, Polynomial};
use crate::sdp::SolveOptions;
use crate::sos::{embed_exponents, MonomialBasis, ParamPoly, SosError, SosProgram, SosStatus};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("synthesis requires polynomial dynamics")]
    NotPolynomial,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("correctness residual monomials outside the observer field basis: {}", .0.join(", "))]
    UncoverableMonomials(Vec<String>),
    #[error("no certificate at rate {lambda_requested}; best feasible rate {best_feasible_lambda:?}, final slack {slack:.3e}")]
    Infeasible { lambda_requested: f64, best_feasible_lambda: Option<f64>, slack: f64 },
    #[error("gain polynomial has a root with real part {0:.3e}")]
    NotHurwitz(f64),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Sos(#[from] SosError),
}

/// Which convex sufficient condition certifies contraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateForm {
    /// Direct inequality `F + F' + Q <= 0` on the observer field Jacobian,
    /// tied to the affine transformation `P x + varphi(y)`.
    Direct,
    /// Schur-complement block inequality with a scalar scaling `r`,
    /// line-searched over a grid.
    Block,
}

/// Search-set record carried by a synthesized observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthMode {
    Direct,
    Block,
    DirectImmersed,
    BlockImmersed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeftInverseStrategy {
    AffineClosedForm,
    NewtonMonotone,
}

#[derive(Debug, Clone)]
pub struct SynthesisConfig {
    /// Degree of the measured-state offset `varphi(y)`.
    pub deg_phi: u32,
    /// Degree of the observer vector field over the plant coordinates.
    pub deg_fz: u32,
    /// Degree in `y` of the transformation matrix `P(y)`; 0 keeps it
    /// constant, which is the usual search set.
    pub deg_metric_y: u32,
    /// Exponential convergence rate; 0 asks only for asymptotic
    /// convergence with a fixed positive-definite floor.
    pub lambda: f64,
    /// Monotonicity margin: `Phi_x + Phi_x' >= k I`.
    pub k: f64,
    pub form: CertificateForm,
    /// Scaling grid for the block certificate; feasibility is not known to
    /// be monotone in `r`, so every value is tried in order.
    pub r_grid: Vec<f64>,
    /// `Q = q_floor * I` in asymptotic mode.
    pub q_floor: f64,
    /// On infeasibility, bisect for the largest feasible rate.
    pub bisect: bool,
    pub solve: SolveOptions,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            deg_phi: 2,
            deg_fz: 3,
            deg_metric_y: 0,
            lambda: 1.0,
            k: 0.1,
            form: CertificateForm::Direct,
            r_grid: (-4..=4).map(|e| (2.0f64).powi(e)).collect(),
            q_floor: 1e-3,
            bisect: true,
            solve: SolveOptions::default(),
        }
    }
}

/// Index layout of the stacked decision vector: entries of the symmetric
/// `P(y)` first, then `varphi` coefficients, then `f_z` coefficients.
#[derive(Debug, Clone)]
pub struct ThetaLayout {
    pub x_names: Vec<String>,
    pub y_names: Vec<String>,
    pub u_names: Vec<String>,
    /// `y`-exponents parameterizing each entry of `P(y)`.
    pub p_monos: Vec<Vec<u32>>,
    /// `y`-exponents for `varphi` components (degree >= 1).
    pub phi_monos: Vec<Vec<u32>>,
    /// Exponents over `(x, y, u)` for `f_z` components.
    pub fz_monos: Vec<Vec<u32>>,
}

impl ThetaLayout {
    fn n(&self) -> usize {
        self.x_names.len()
    }

    fn n_pairs(&self) -> usize {
        self.n() * (self.n() + 1) / 2
    }

    fn pair_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = (i.min(j), i.max(j));
        i * self.n() - i * (i + 1) / 2 + j
    }

    fn phi_base(&self) -> usize {
        self.n_pairs() * self.p_monos.len()
    }

    fn fz_base(&self) -> usize {
        self.phi_base() + self.n() * self.phi_monos.len()
    }

    pub fn n_theta(&self) -> usize {
        self.fz_base() + self.n() * self.fz_monos.len()
    }

    pub fn theta_p(&self, i: usize, j: usize, m: usize) -> usize {
        self.pair_index(i, j) * self.p_monos.len() + m
    }

    pub fn theta_phi(&self, i: usize, m: usize) -> usize {
        self.phi_base() + i * self.phi_monos.len() + m
    }

    pub fn theta_fz(&self, i: usize, m: usize) -> usize {
        self.fz_base() + i * self.fz_monos.len() + m
    }

    fn all_names(&self) -> Vec<String> {
        let mut v = self.x_names.clone();
        v.extend(self.y_names.iter().cloned());
        v.extend(self.u_names.iter().cloned());
        v
    }

    fn mono(names: &[String], e: &[u32]) -> Polynomial {
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        Polynomial::from_terms(&refs, &[(e, 1.0)])
    }

    /// `P(y)` entry `(i, j)` as a parameterized polynomial in `y`.
    pub fn p_entry(&self, i: usize, j: usize) -> ParamPoly {
        let mut out = ParamPoly::zero();
        for (m, e) in self.p_monos.iter().enumerate() {
            out = out.add(&ParamPoly::theta_times(self.theta_p(i, j, m), Self::mono(&self.y_names, e)));
        }
        out
    }

    /// `varphi` component `i` as a parameterized polynomial in `y`.
    pub fn phi_entry(&self, i: usize) -> ParamPoly {
        let mut out = ParamPoly::zero();
        for (m, e) in self.phi_monos.iter().enumerate() {
            out = out.add(&ParamPoly::theta_times(self.theta_phi(i, m), Self::mono(&self.y_names, e)));
        }
        out
    }

    /// `f_z` component `i` as a parameterized polynomial over `(x, y, u)`.
    pub fn fz_entry(&self, i: usize) -> ParamPoly {
        let names = self.all_names();
        let mut out = ParamPoly::zero();
        for (m, e) in self.fz_monos.iter().enumerate() {
            out = out.add(&ParamPoly::theta_times(self.theta_fz(i, m), Self::mono(&names, e)));
        }
        out
    }

    /// Constant part of `P` at the given parameter values.
    pub fn p_matrix(&self, theta: &[f64]) -> DMatrix<f64> {
        let const_idx = self.p_monos.iter().position(|e| e.iter().all(|&k| k == 0));
        DMatrix::from_fn(self.n(), self.n(), |i, j| match const_idx {
            Some(m) => theta[self.theta_p(i, j, m)],
            None => 0.0,
        })
    }

    pub fn phi_polys(&self, theta: &[f64]) -> Vec<Polynomial> {
        (0..self.n())
            .map(|i| prune(&self.phi_entry(i).instantiate(theta), 1e-12))
            .collect()
    }

    pub fn fz_polys(&self, theta: &[f64]) -> Vec<Polynomial> {
        (0..self.n())
            .map(|i| prune(&self.fz_entry(i).instantiate(theta), 1e-12))
            .collect()
    }

    /// Full transformation components `sum_j P_ij(y) x_j + varphi_i(y)`.
    pub fn transform_polys(&self, theta: &[f64]) -> Vec<Polynomial> {
        (0..self.n())
            .map(|i| {
                let mut p = self.phi_entry(i).instantiate(theta);
                for j in 0..self.n() {
                    let pij = self.p_entry(i, j).instantiate(theta);
                    p = p.add(&pij.mul(&Polynomial::variable(&self.x_names[j])));
                }
                prune(&p, 1e-12)
            })
            .collect()
    }
}

fn prune(p: &Polynomial, tol: f64) -> Polynomial {
    let vars: Vec<&str> = p.vars().iter().map(|s| s.as_str()).collect();
    let terms: Vec<(&[u32], f64)> = p.terms().filter(|(_, c)| c.abs() > tol).collect();
    Polynomial::from_terms(&vars, &terms)
}

/// The correctness identity reduced to a parameter subspace: every
/// `theta = N psi` makes `Phi_x f_x + Phi_y f_y - f_z` vanish identically.
#[derive(Debug, Clone)]
pub struct CorrectnessSystem {
    pub layout: ThetaLayout,
    /// Orthonormal nullspace basis, `n_theta` x `n_psi`.
    pub nullspace: DMatrix<f64>,
    pub n_equations: usize,
}

impl CorrectnessSystem {
    /// Residual components as parameterized polynomials (all terms linear
    /// in theta; the identity is homogeneous).
    pub fn residual(&self, f_x: &[Polynomial], f_y: &[Polynomial]) -> Vec<ParamPoly> {
        residual_components(&self.layout, f_x, f_y)
    }
}

fn residual_components(layout: &ThetaLayout, f_x: &[Polynomial], f_y: &[Polynomial]) -> Vec<ParamPoly> {
    let n = layout.n();
    (0..n)
        .map(|i| {
            let mut r = ParamPoly::zero();
            for (j, fx) in f_x.iter().enumerate() {
                r = r.add(&layout.p_entry(i, j).mul_poly(fx));
            }
            for (l, fy) in f_y.iter().enumerate() {
                let yl = &layout.y_names[l];
                let mut row = layout.phi_entry(i).differentiate(yl);
                for j in 0..n {
                    let dp = layout.p_entry(i, j).differentiate(yl);
                    row = row.add(&dp.mul_poly(&Polynomial::variable(&layout.x_names[j])));
                }
                r = r.add(&row.mul_poly(fy));
            }
            r.sub(&layout.fz_entry(i))
        })
        .collect()
}

/// Match coefficients of the pushforward identity and return the exact
/// solution subspace. Errors when some pushforward monomial falls outside
/// the span of the `f_z` basis, which would silently pin the
/// transformation instead of the field.
pub fn build_correctness(
    m: &SystemModel,
    deg_phi: u32,
    deg_fz: u32,
    deg_metric_y: u32,
) -> Result<CorrectnessSystem, SynthError> {
    let Dynamics::Polynomial { f_x, f_y } = &m.dynamics else {
        return Err(SynthError::NotPolynomial);
    };
    let n_y = m.n_y();
    let layout = ThetaLayout {
        x_names: m.x_names.clone(),
        y_names: m.y_names.clone(),
        u_names: m.u_names.clone(),
        p_monos: MonomialBasis::bounded(&m.y_names, &vec![deg_metric_y; n_y], 0, deg_metric_y).exponents,
        phi_monos: MonomialBasis::bounded(&m.y_names, &vec![deg_phi; n_y], 1, deg_phi).exponents,
        fz_monos: {
            let mut names = m.x_names.clone();
            names.extend(m.y_names.iter().cloned());
            names.extend(m.u_names.iter().cloned());
            MonomialBasis::bounded(&names, &vec![deg_fz; names.len()], 0, deg_fz).exponents
        },
    };
    let names = layout.all_names();
    let fz_base = layout.fz_base();

    // one linear equation per (component, monomial)
    let mut rows: BTreeMap<(usize, Vec<u32>), Vec<(usize, f64)>> = BTreeMap::new();
    for (i, r) in residual_components(&layout, f_x, f_y).iter().enumerate() {
        debug_assert!(r.base.is_zero());
        for (k, poly) in r.linear_terms() {
            for (e, c) in poly.terms() {
                let mono = embed_exponents(poly.vars(), e, &names);
                rows.entry((i, mono)).or_default().push((*k, c));
            }
        }
    }

    let mut uncovered = Vec::new();
    for ((i, mono), support) in &rows {
        let has_field = support.iter().any(|(k, _)| *k >= fz_base);
        if !has_field {
            uncovered.push(format!("{} (component {})", mono_label(mono, &names), i + 1));
        }
    }
    if !uncovered.is_empty() {
        return Err(SynthError::UncoverableMonomials(uncovered));
    }

    let n_theta = layout.n_theta();
    let n_rows = rows.len().max(n_theta);
    let mut e = DMatrix::zeros(n_rows, n_theta);
    for (row, (_, support)) in rows.iter().enumerate() {
        for (k, c) in support {
            e[(row, *k)] += c;
        }
    }
    let n_equations = rows.len();
    let svd = e.svd(false, true);
    let v_t = svd.v_t.expect("svd requested v_t");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = 1e-10 * smax.max(1.0);
    let null_cols: Vec<usize> = (0..n_theta)
        .filter(|&c| svd.singular_values.get(c).map_or(true, |&s| s < tol))
        .collect();
    let mut nullspace = DMatrix::zeros(n_theta, null_cols.len());
    for (out_c, &c) in null_cols.iter().enumerate() {
        for k in 0..n_theta {
            nullspace[(k, out_c)] = v_t[(c, k)];
        }
    }
    Ok(CorrectnessSystem { layout, nullspace, n_equations })
}

fn mono_label(mono: &[u32], names: &[String]) -> String {
    let mut label = String::new();
    for (i, &k) in mono.iter().enumerate() {
        if k > 0 {
            if !label.is_empty() {
                label.push('*');
            }
            label.push_str(&names[i]);
            if k > 1 {
                label.push_str(&format!("^{k}"));
            }
        }
    }
    if label.is_empty() {
        label = "1".into();
    }
    label
}

/// Rewrite a theta-parameterized polynomial over the reduced coordinates
/// `theta = N psi`.
fn reparam(pp: &ParamPoly, n: &DMatrix<f64>) -> ParamPoly {
    let mut out = ParamPoly::from_poly(pp.base.clone());
    for (k, poly) in pp.linear_terms() {
        for c in 0..n.ncols() {
            let w = n[(*k, c)];
            if w.abs() > 1e-14 {
                out = out.add(&ParamPoly::theta_times(c, poly.scale(w)));
            }
        }
    }
    out
}

/// Filter-augmentation record attached to observers synthesized over an
/// extended state.
#[derive(Debug, Clone)]
pub struct AugmentationRecord {
    pub n_w: usize,
    pub a: DMatrix<f64>,
    pub f_a: Vec<Polynomial>,
}

/// A synthesized observer: the coordinate change, the observer vector
/// field over the plant coordinates, and the contraction certificate.
#[derive(Debug, Clone)]
pub struct ObserverSpec {
    pub transformation: Transformation,
    /// Observer field over `(x, y, u)`; the runtime evaluates it at the
    /// pulled-back estimate.
    pub f_z: Vec<Polynomial>,
    /// Certificate matrix (constant part of `P(y)`).
    pub p: DMatrix<f64>,
    /// Contraction metric in observer coordinates, `P^{-1}`.
    pub metric: DMatrix<f64>,
    pub lambda: f64,
    pub mode: SynthMode,
    /// Block-certificate scaling, when that form was used.
    pub r: Option<f64>,
    pub left_inverse: LeftInverseStrategy,
    /// Eigenvalue headroom of the semidefinite certificate; near zero for
    /// marginal problems.
    pub slack: f64,
    pub iterations: usize,
    pub x_names: Vec<String>,
    pub y_names: Vec<String>,
    pub u_names: Vec<String>,
    pub augmentation: Option<AugmentationRecord>,
}

impl ObserverSpec {
    /// Runnable observer `dxi = f_z(xhat, y, u)`, `xhat = phi^L(xi, y)`.
    pub fn observer(&self) -> Observer {
        let t = self.transformation.clone();
        let f_z = self.f_z.clone();
        let xn = self.x_names.clone();
        let yn = self.y_names.clone();
        let un = self.u_names.clone();
        let n_x = xn.len();
        let rhs = move |xi: &[f64], y: &[f64], u: &[f64]| -> Vec<f64> {
            let guess = vec![0.0; n_x];
            let xhat = crate::observer::left_inverse(&t, xi, y, &guess, &xn, &yn).unwrap_or(guess);
            let mut b: Vec<(&str, f64)> =
                xn.iter().map(|s| s.as_str()).zip(xhat.iter().copied()).collect();
            b.extend(yn.iter().map(|s| s.as_str()).zip(y.iter().copied()));
            b.extend(un.iter().map(|s| s.as_str()).zip(u.iter().copied()));
            f_z.iter().map(|p| p.evaluate(&b).expect("observer bindings cover all variables")).collect()
        };
        Observer {
            dynamics: ObserverDynamics::ClosedForm(Arc::new(rhs)),
            transformation: self.transformation.clone(),
            estimate_map: EstimateMap::LeftInverse,
            x_names: self.x_names.clone(),
            y_names: self.y_names.clone(),
            u_names: self.u_names.clone(),
        }
    }

    /// Structured synthesis report for files and logs.
    pub fn report(&self) -> serde_json::Value {
        let mat = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
        };
        let transform = match &self.transformation {
            Transformation::Affine { p, phi_y } => serde_json::json!({
                "kind": "affine",
                "p": mat(p),
                "offset": match phi_y {
                    OutputMap::Poly(ps) => ps.iter().map(|p| p.to_string()).collect::<Vec<_>>(),
                    OutputMap::ClosedForm { .. } => vec!["<closed form>".to_string()],
                },
            }),
            Transformation::Poly(ps) => serde_json::json!({
                "kind": "polynomial",
                "components": ps.iter().map(|p| p.to_string()).collect::<Vec<_>>(),
            }),
        };
        serde_json::json!({
            "format_version": 1,
            "mode": format!("{:?}", self.mode),
            "rate": self.lambda,
            "r": self.r,
            "transformation": transform,
            "f_z": self.f_z.iter().map(|p| p.to_string()).collect::<Vec<_>>(),
            "p": mat(&self.p),
            "metric": mat(&self.metric),
            "left_inverse": format!("{:?}", self.left_inverse),
            "slack": self.slack,
            "iterations": self.iterations,
            "augmented_states": self.augmentation.as_ref().map(|a| a.n_w),
        })
    }
}

struct Attempt {
    theta: Vec<f64>,
    slack: f64,
    iterations: usize,
    r: Option<f64>,
}

enum Outcome {
    Feasible(Attempt),
    Infeasible { slack: f64 },
}

fn validate(cfg: &SynthesisConfig) -> Result<(), SynthError> {
    if !(cfg.k > 0.0) {
        return Err(SynthError::BadConfig("monotonicity margin k must be positive".into()));
    }
    if !(cfg.lambda >= 0.0) || !cfg.lambda.is_finite() {
        return Err(SynthError::BadConfig("rate lambda must be finite and nonnegative".into()));
    }
    if !(cfg.q_floor > 0.0) {
        return Err(SynthError::BadConfig("asymptotic floor must be positive".into()));
    }
    if cfg.form == CertificateForm::Block {
        if cfg.r_grid.is_empty() || cfg.r_grid.iter().any(|&r| !(r > 0.0)) {
            return Err(SynthError::BadConfig("scaling grid must be nonempty and positive".into()));
        }
        if cfg.deg_metric_y > 0 {
            return Err(SynthError::BadConfig(
                "block certificate supports constant transformation matrices only".into(),
            ));
        }
    }
    Ok(())
}

fn build_program(
    cs: &CorrectnessSystem,
    f_y: &[Polynomial],
    cfg: &SynthesisConfig,
    lambda: f64,
    r: Option<f64>,
) -> Result<SosProgram, SynthError> {
    let layout = &cs.layout;
    let n = layout.n();
    let nullspace = &cs.nullspace;
    let mut prog = SosProgram::new(nullspace.ncols());
    let names = layout.all_names();

    // monotonicity: P(y) + P(y)' - k I >= 0
    let mut h1 = vec![vec![ParamPoly::zero(); n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut e = reparam(&layout.p_entry(i, j).scale(2.0), nullspace);
            if i == j {
                e = e.add(&ParamPoly::constant(-cfg.k));
            }
            h1[i][j] = e;
        }
    }
    prog.require_matrix_sos(&h1, &layout.y_names)?;

    // scale normalization: trace of the constant part of P stays <= n
    if let Some(cm) = layout.p_monos.iter().position(|e| e.iter().all(|&k| k == 0)) {
        let mut l = vec![0.0; layout.n_theta()];
        for i in 0..n {
            l[layout.theta_p(i, i, cm)] = 1.0;
        }
        let coeffs: Vec<(usize, f64)> = (0..nullspace.ncols())
            .map(|c| (c, (0..layout.n_theta()).map(|k| l[k] * nullspace[(k, c)]).sum::<f64>()))
            .filter(|(_, v)| v.abs() > 1e-12)
            .collect();
        prog.add_theta_inequality(&coeffs, n as f64);
    }

    let f_entry = |i: usize, j: usize| -> ParamPoly {
        reparam(&layout.fz_entry(i).differentiate(&layout.x_names[j]), nullspace)
    };
    let q_entry = |i: usize, j: usize| -> ParamPoly {
        if lambda > 0.0 {
            reparam(&layout.p_entry(i, j).scale(2.0 * lambda), nullspace)
        } else if i == j {
            ParamPoly::constant(cfg.q_floor)
        } else {
            ParamPoly::zero()
        }
    };
    let p_psi = |i: usize, j: usize| -> ParamPoly { reparam(&layout.p_entry(i, j), nullspace) };

    match r {
        None => {
            // direct form: -(F + F' + Pdot + Q) >= 0
            let mut s = vec![vec![ParamPoly::zero(); n]; n];
            for i in 0..n {
                for j in 0..n {
                    let mut e = f_entry(i, j).add(&f_entry(j, i)).add(&q_entry(i, j));
                    if cs.layout.p_monos.len() > 1 || cs.layout.p_monos[0].iter().any(|&k| k > 0) {
                        let mut pdot = ParamPoly::zero();
                        for (l, fy) in f_y.iter().enumerate() {
                            let dp = layout.p_entry(i, j).differentiate(&layout.y_names[l]);
                            pdot = pdot.add(&dp.mul_poly(fy));
                        }
                        e = e.add(&reparam(&pdot, nullspace));
                    }
                    s[i][j] = e.scale(-1.0);
                }
            }
            prog.require_matrix_sos(&s, &names)?;
        }
        Some(r) => {
            // block form with scaling r:
            // [ P - (r/2)(F + F') - r Q,  P + (r/2) F ]
            // [ (P + (r/2) F)',           P           ]  >= 0
            let mut blk = vec![vec![ParamPoly::zero(); 2 * n]; 2 * n];
            for i in 0..n {
                for j in 0..n {
                    blk[i][j] = p_psi(i, j)
                        .add(&f_entry(i, j).add(&f_entry(j, i)).scale(-r / 2.0))
                        .add(&q_entry(i, j).scale(-r));
                    blk[i][n + j] = p_psi(i, j).add(&f_entry(i, j).scale(r / 2.0));
                    blk[n + i][j] = p_psi(i, j).add(&f_entry(j, i).scale(r / 2.0));
                    blk[n + i][n + j] = p_psi(i, j);
                }
            }
            prog.require_matrix_sos(&blk, &names)?;
        }
    }
    Ok(prog)
}

fn attempt_rate(
    cs: &CorrectnessSystem,
    f_y: &[Polynomial],
    cfg: &SynthesisConfig,
    lambda: f64,
) -> Result<Outcome, SynthError> {
    if cs.nullspace.ncols() == 0 {
        return Ok(Outcome::Infeasible { slack: f64::NEG_INFINITY });
    }
    let r_values: Vec<Option<f64>> = match cfg.form {
        CertificateForm::Direct => vec![None],
        CertificateForm::Block => cfg.r_grid.iter().map(|&r| Some(r)).collect(),
    };
    let mut worst_slack = f64::NEG_INFINITY;
    for r in r_values {
        let prog = build_program(cs, f_y, cfg, lambda, r)?;
        let sol = prog.solve(&cfg.solve)?;
        if sol.status == SosStatus::Feasible {
            let psi = DVector::from_vec(sol.theta.clone());
            let theta = &cs.nullspace * psi;
            return Ok(Outcome::Feasible(Attempt {
                theta: theta.iter().copied().collect(),
                slack: sol.slack,
                iterations: sol.iterations,
                r,
            }));
        }
        worst_slack = worst_slack.max(sol.slack);
    }
    Ok(Outcome::Infeasible { slack: worst_slack })
}

fn build_spec(
    cs: &CorrectnessSystem,
    cfg: &SynthesisConfig,
    lambda: f64,
    attempt: Attempt,
    immersed: bool,
) -> ObserverSpec {
    let layout = &cs.layout;
    let theta = &attempt.theta;
    let p = layout.p_matrix(theta);
    let metric = p.clone().try_inverse().unwrap_or_else(|| DMatrix::identity(p.nrows(), p.ncols()));
    let constant_p = layout.p_monos.len() == 1 && layout.p_monos[0].iter().all(|&k| k == 0);
    let (transformation, left_inverse) = if constant_p {
        (
            Transformation::Affine { p: p.clone(), phi_y: OutputMap::Poly(layout.phi_polys(theta)) },
            LeftInverseStrategy::AffineClosedForm,
        )
    } else {
        (Transformation::Poly(layout.transform_polys(theta)), LeftInverseStrategy::NewtonMonotone)
    };
    let mode = match (cfg.form, immersed) {
        (CertificateForm::Direct, false) => SynthMode::Direct,
        (CertificateForm::Block, false) => SynthMode::Block,
        (CertificateForm::Direct, true) => SynthMode::DirectImmersed,
        (CertificateForm::Block, true) => SynthMode::BlockImmersed,
    };
    ObserverSpec {
        transformation,
        f_z: layout.fz_polys(theta),
        p,
        metric,
        lambda,
        mode,
        r: attempt.r,
        left_inverse,
        slack: attempt.slack,
        iterations: attempt.iterations,
        x_names: layout.x_names.clone(),
        y_names: layout.y_names.clone(),
        u_names: layout.u_names.clone(),
        augmentation: None,
    }
}

fn synthesize_inner(
    m: &SystemModel,
    cfg: &SynthesisConfig,
    immersed: bool,
) -> Result<ObserverSpec, SynthError> {
    validate(cfg)?;
    let Dynamics::Polynomial { f_y, .. } = &m.dynamics else {
        return Err(SynthError::NotPolynomial);
    };
    let f_y = f_y.clone();
    let cs = build_correctness(m, cfg.deg_phi, cfg.deg_fz, cfg.deg_metric_y)?;
    match attempt_rate(&cs, &f_y, cfg, cfg.lambda)? {
        Outcome::Feasible(a) => Ok(build_spec(&cs, cfg, cfg.lambda, a, immersed)),
        Outcome::Infeasible { slack } => {
            let mut best: Option<f64> = None;
            if cfg.bisect && cfg.lambda > 0.0 {
                let (mut lo, mut hi) = (0.0, cfg.lambda);
                for _ in 0..8 {
                    let mid = 0.5 * (lo + hi);
                    match attempt_rate(&cs, &f_y, cfg, mid)? {
                        Outcome::Feasible(_) => {
                            best = Some(mid);
                            lo = mid;
                        }
                        Outcome::Infeasible { .. } => hi = mid,
                    }
                }
            }
            Err(SynthError::Infeasible {
                lambda_requested: cfg.lambda,
                best_feasible_lambda: best,
                slack,
            })
        }
    }
}

/// Search for a transformation, observer field and contraction certificate
/// over the plant state. Infeasibility at the requested rate triggers a
/// bisection for the largest achievable rate (the search set shrinks
/// monotonically in the rate).
pub fn synthesize(m: &SystemModel, cfg: &SynthesisConfig) -> Result<ObserverSpec, SynthError> {
    synthesize_inner(m, cfg, false)
}

/// Synthesis over a filter-extended state, for plants with no admissible
/// transformation of their own. Degenerates to [`synthesize`] when the
/// filter is empty.
pub fn synthesize_immersed(
    am: &AugmentedModel,
    cfg: &SynthesisConfig,
) -> Result<ObserverSpec, SynthError> {
    let mut spec = synthesize_inner(&am.extended, cfg, am.n_w > 0)?;
    if am.n_w > 0 {
        spec.augmentation =
            Some(AugmentationRecord { n_w: am.n_w, a: am.a.clone(), f_a: am.f_a.clone() });
    }
    Ok(spec)
}

/// Transformation built from the observability Lie chain of a
/// single-output system, plus its companion/remainder decomposition.
#[derive(Debug, Clone)]
pub struct SdoTransform {
    pub transformation: Transformation,
    /// Pushforward of the plant through the transformation.
    pub f_z: Vec<Polynomial>,
    /// Companion matrix of the gain polynomial.
    pub companion: DMatrix<f64>,
    /// Remainder `b(x, y)`: zero except the highest-order Lie derivative
    /// in the last component.
    pub remainder: Vec<Polynomial>,
    /// The Lie chain itself: output derivative orders 0..n_x - 1.
    pub chain: Vec<Polynomial>,
}

/// `phi(x, y) = H(x, y) - ell * gains * y` where `H` stacks iterated Lie
/// derivatives of the output. Valid when the chain is an injective
/// immersion; the gain polynomial `s^n + g_1 s^{n-1} + ... + g_n` must
/// have all roots in the open left half plane.
pub fn sdo_transform(m: &SystemModel, ell: f64, gains: &[f64]) -> Result<SdoTransform, SynthError> {
    let Dynamics::Polynomial { f_x, f_y } = &m.dynamics else {
        return Err(SynthError::NotPolynomial);
    };
    if m.n_y() != 1 {
        return Err(SynthError::BadConfig("Lie-chain transformation needs a single output".into()));
    }
    let n = m.n_x();
    if gains.len() != n {
        return Err(SynthError::BadConfig(format!("{} gains for {} states", gains.len(), n)));
    }
    if !(ell > 0.0) {
        return Err(SynthError::BadConfig("gain scale must be positive".into()));
    }
    let mut companion = DMatrix::zeros(n, n);
    for i in 0..n {
        companion[(i, 0)] = -gains[i];
        if i + 1 < n {
            companion[(i, i + 1)] = 1.0;
        }
    }
    let max_re = companion
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_re >= -1e-9 {
        return Err(SynthError::NotHurwitz(max_re));
    }

    let mut vars = m.x_names.clone();
    vars.extend(m.y_names.iter().cloned());
    let mut field = f_x.clone();
    field.extend(f_y.iter().cloned());

    let mut chain = vec![f_y[0].clone()];
    for _ in 1..n {
        let next = chain.last().unwrap().lie_derivative(&field, &vars)?;
        chain.push(next);
    }
    let top = chain.last().unwrap().lie_derivative(&field, &vars)?;

    let y = Polynomial::variable(&m.y_names[0]);
    let components: Vec<Polynomial> = chain
        .iter()
        .zip(gains)
        .map(|(h, &g)| h.sub(&y.scale(ell * g)))
        .collect();
    let f_z: Vec<Polynomial> = (0..n)
        .map(|i| {
            let dh = if i + 1 < n { chain[i + 1].clone() } else { top.clone() };
            dh.sub(&f_y[0].scale(ell * gains[i]))
        })
        .collect();
    let mut remainder = vec![Polynomial::zero(); n];
    remainder[n - 1] = top;
    Ok(SdoTransform {
        transformation: Transformation::Poly(components),
        f_z,
        companion,
        remainder,
        chain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Domain;
    use crate::verify::{check_contraction, check_correctness, check_monotonicity, halton_points};
    use approx::assert_relative_eq;

    fn poly_benchmark() -> SystemModel {
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

    /// Stable LTI pair: dx = x, dy = -x. The affine search set contains
    /// z = p x + l y with l >= p (1 + rate), so synthesis must succeed with
    /// a linear field.
    #[test]
    fn lti_synthesis_linear_field() {
        let m = SystemModel::polynomial(
            &["x1"],
            &["y"],
            &[],
            vec![Polynomial::parse("x1").unwrap()],
            vec![Polynomial::parse("-x1").unwrap()],
        )
        .unwrap();
        let cfg = SynthesisConfig { deg_phi: 1, deg_fz: 1, lambda: 0.5, ..Default::default() };
        let spec = synthesize(&m, &cfg).unwrap();
        assert!(spec.f_z[0].degree() <= 1);
        let slope = spec.f_z[0].coefficient(&[("x1", 1)]);
        assert!(slope < 0.0, "field slope {slope} must contract");
        let domain = Domain::bounding_box(&["x1", "y"], &[-2.0, -2.0], &[2.0, 2.0]);
        let r = check_correctness(&m, &spec.transformation, &spec.observer(), &domain, &[], 50, 1e-8);
        assert!(r.passed(), "{}", r.detail);
    }

    /// The known marginal certificate values lie inside the correctness
    /// nullspace, and completing the field from the transformation leaves
    /// a residual at rounding level.
    #[test]
    fn known_certificate_satisfies_correctness() {
        let m = poly_benchmark();
        let cs = build_correctness(&m, 2, 3, 0).unwrap();
        let layout = &cs.layout;
        let mut theta = vec![0.0; layout.n_theta()];
        theta[layout.theta_p(0, 0, 0)] = 0.6370;
        theta[layout.theta_p(1, 1, 0)] = 0.6369;
        let y1 = layout.phi_monos.iter().position(|e| e == &vec![1u32]).unwrap();
        theta[layout.theta_phi(0, y1)] = -2.1872;
        theta[layout.theta_phi(1, y1)] = -0.6368;
        // complete the field from the transformation
        let Dynamics::Polynomial { f_x, f_y } = &m.dynamics else { unreachable!() };
        let names = {
            let mut v = m.x_names.clone();
            v.extend(m.y_names.iter().cloned());
            v
        };
        for i in 0..2 {
            let scale = if i == 0 { 0.6370 } else { 0.6369 };
            let inj = if i == 0 { -2.1872 } else { -0.6368 };
            let fz = f_x[i].scale(scale).add(&f_y[0].scale(inj));
            for (e, c) in fz.terms() {
                let mono = embed_exponents(fz.vars(), e, &names);
                let mut full = mono.clone();
                full.extend(std::iter::repeat(0).take(layout.fz_monos[0].len() - mono.len()));
                let m_idx = layout.fz_monos.iter().position(|x| *x == full).unwrap();
                theta[layout.theta_fz(i, m_idx)] = c;
            }
        }
        for r in cs.residual(f_x, f_y) {
            let res = r.instantiate(&theta);
            let worst = res.terms().map(|(_, c)| c.abs()).fold(0.0, f64::max);
            assert!(worst < 1e-9, "residual coefficient {worst}");
        }
        // theta is fixed by the nullspace projection
        let t = DVector::from_vec(theta.clone());
        let proj = &cs.nullspace * (cs.nullspace.transpose() * &t);
        assert!((proj - &t).norm() < 1e-8 * t.norm());
    }

    /// With no dynamics at all, correctness forces the observer field to
    /// vanish on the whole solution subspace.
    #[test]
    fn zero_dynamics_force_zero_field() {
        let m = SystemModel::polynomial(
            &["x1"],
            &["y"],
            &[],
            vec![Polynomial::zero()],
            vec![Polynomial::zero()],
        )
        .unwrap();
        let cs = build_correctness(&m, 1, 2, 0).unwrap();
        let base = cs.layout.fz_base();
        for c in 0..cs.nullspace.ncols() {
            for k in base..cs.layout.n_theta() {
                assert!(cs.nullspace[(k, c)].abs() < 1e-9);
            }
        }
    }

    /// Full synthesis on the cubic benchmark at the marginal rate; the
    /// returned certificate must pass the independent numerical checks,
    /// and smaller rates stay feasible.
    #[test]
    fn cubic_benchmark_certificate_verifies() {
        let m = poly_benchmark();
        let cfg = SynthesisConfig { lambda: 1.0, ..Default::default() };
        let spec = synthesize(&m, &cfg).unwrap();
        let domain =
            Domain::bounding_box(&["x1", "x2", "y"], &[-3.0, -3.0, -3.0], &[3.0, 3.0, 3.0]);
        let r = check_monotonicity(&spec.transformation, &m, &domain, 0.1, 200);
        assert!(r.passed(), "{}: {}", r.name, r.detail);
        let obs = spec.observer();
        let r = check_correctness(&m, &spec.transformation, &obs, &domain, &[], 200, 1e-6);
        assert!(r.passed(), "{}: {}", r.name, r.detail);
        let r = check_contraction(&m, &spec.transformation, &obs, &domain, &[], &spec.metric, 1.0, 200);
        assert!(r.passed(), "{}: {}", r.name, r.detail);

        for lambda in [0.25, 0.5] {
            let cfg = SynthesisConfig { lambda, ..Default::default() };
            assert!(synthesize(&m, &cfg).is_ok(), "rate {lambda} must stay feasible");
        }
    }

    /// A state with no path to the output admits no contracting observer
    /// at any rate.
    #[test]
    fn unobservable_state_infeasible() {
        let m = SystemModel::polynomial(
            &["x1"],
            &["y"],
            &[],
            vec![Polynomial::parse("x1").unwrap()],
            vec![Polynomial::zero()],
        )
        .unwrap();
        let cfg = SynthesisConfig { deg_phi: 1, deg_fz: 1, lambda: 0.5, ..Default::default() };
        match synthesize(&m, &cfg) {
            Err(SynthError::Infeasible { best_feasible_lambda, .. }) => {
                assert!(best_feasible_lambda.is_none());
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    /// The block certificate implies the direct inequality pointwise. The
    /// block form carries a quadratic-in-Jacobian correction, so globally it
    /// only holds when the observer field Jacobian is bounded; a stable
    /// linear plant with genuine contraction margin exercises it.
    #[test]
    fn block_certificate_implies_direct_inequality() {
        let m = SystemModel::polynomial(
            &["x1", "x2"],
            &["y"],
            &[],
            vec![
                Polynomial::parse("-2*x1 + x2").unwrap(),
                Polynomial::parse("-x2").unwrap(),
            ],
            vec![Polynomial::parse("x1").unwrap()],
        )
        .unwrap();
        let cfg = SynthesisConfig {
            lambda: 0.25,
            form: CertificateForm::Block,
            ..Default::default()
        };
        let spec = synthesize(&m, &cfg).unwrap();
        assert!(spec.r.is_some());
        let domain =
            Domain::bounding_box(&["x1", "x2", "y"], &[-2.0, -2.0, -2.0], &[2.0, 2.0, 2.0]);
        for pt in halton_points(&domain, 100) {
            let b: Vec<(&str, f64)> =
                vec![("x1", pt[0]), ("x2", pt[1]), ("y", pt[2])];
            let f = DMatrix::from_fn(2, 2, |i, j| {
                spec.f_z[i]
                    .differentiate(if j == 0 { "x1" } else { "x2" })
                    .evaluate(&b)
                    .unwrap()
            });
            let s = &f + f.transpose() + &spec.p * (2.0 * spec.lambda);
            let s = (&s + s.transpose()) * 0.5;
            let max_eig = s.clone().symmetric_eigen().eigenvalues.max();
            assert!(max_eig <= 1e-6 * (1.0 + s.amax()), "implied inequality violated: {max_eig}");
        }
    }

    /// Lie chain for the cubic benchmark: output derivative, then the
    /// first state equation.
    #[test]
    fn lie_chain_transform() {
        let m = poly_benchmark();
        let t = sdo_transform(&m, 2.0, &[2.0, 1.0]).unwrap();
        let Transformation::Poly(ps) = &t.transformation else { panic!("expected polynomial") };
        assert_eq!(ps[0], Polynomial::parse("x1 - 4*y").unwrap());
        assert_eq!(ps[1], Polynomial::parse("x1 - 1/3*x1^3 - x1*x2^2 - 2*y").unwrap());
        assert_eq!(t.companion[(0, 0)], -2.0);
        assert_eq!(t.companion[(0, 1)], 1.0);
        assert!(t.remainder[0].is_zero());

        // the pushforward identity holds at sample points
        let domain = Domain::bounding_box(&["x1", "x2", "y"], &[-1.0; 3], &[1.0; 3]);
        for pt in halton_points(&domain, 50) {
            let (x, y) = pt.split_at(2);
            let (fx, fy) = m.f(x, y, &[]);
            let jx = t.transformation.jacobian_x(x, y, &m.x_names, &m.y_names);
            let jy = t.transformation.jacobian_y(x, y, &m.x_names, &m.y_names);
            let b: Vec<(&str, f64)> = vec![("x1", x[0]), ("x2", x[1]), ("y", y[0])];
            for i in 0..2 {
                let mut push = jy[(i, 0)] * fy[0];
                for j in 0..2 {
                    push += jx[(i, j)] * fx[j];
                }
                let val = t.f_z[i].evaluate(&b).unwrap();
                assert_relative_eq!(push, val, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn unstable_gain_polynomial_rejected() {
        let m = poly_benchmark();
        match sdo_transform(&m, 1.0, &[0.0, -1.0]) {
            Err(SynthError::NotHurwitz(re)) => assert!(re > 0.9),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    /// Integrator chain: the Lie chain is just the unmeasured states.
    #[test]
    fn integrator_chain_transform() {
        let m = SystemModel::polynomial(
            &["x1", "x2"],
            &["y"],
            &[],
            vec![Polynomial::parse("x2").unwrap(), Polynomial::zero()],
            vec![Polynomial::parse("x1").unwrap()],
        )
        .unwrap();
        let t = sdo_transform(&m, 1.0, &[1.0, 1.0]).unwrap();
        let Transformation::Poly(ps) = &t.transformation else { panic!("expected polynomial") };
        assert_eq!(ps[0], Polynomial::parse("x1 - y").unwrap());
        assert_eq!(ps[1], Polynomial::parse("x2 - y").unwrap());
    }

    #[test]
    fn empty_filter_degenerates_to_plain_synthesis() {
        let m = poly_benchmark();
        let am = AugmentedModel::new(&m, DMatrix::zeros(0, 0), vec![], &[]).unwrap();
        let cfg = SynthesisConfig { lambda: 0.5, ..Default::default() };
        let spec = synthesize_immersed(&am, &cfg).unwrap();
        assert_eq!(spec.mode, SynthMode::Direct);
        assert!(spec.augmentation.is_none());
    }
}
