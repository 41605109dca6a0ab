//! Sum-of-squares compilation.
//!
//! Turns "this polynomial (matrix) with coefficients affine in unknown
//! parameters must be a sum of squares" into semidefinite feasibility data
//! for the [`crate::sdp`] solver. Matrix constraints `S(x) <= 0` are
//! scalarized as `-v' S(x) v` being SOS in `(x, v)` with a Gram basis of
//! degree exactly one in `v`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::poly::Polynomial;
use crate::sdp::{self, Constraint, Objective, SdpError, SdpProblem, SdpStatus, SolveOptions};

#[derive(Debug, Error)]
pub enum SosError {
    #[error("constraint is bilinear in parameters {0} and {1}; the search set must keep one of them fixed")]
    BilinearParameter(usize, usize),
    #[error("monomial `{0}` cannot be generated by any product of Gram basis elements")]
    UncoveredMonomial(String),
    #[error("parameter index {0} out of range ({1} parameters declared)")]
    ParameterRange(usize, usize),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

/// Coefficients at or below this magnitude count as structurally zero
/// during Gram basis reduction (exact cancellations leave rounding dust).
const COEFF_ZERO_TOL: f64 = 1e-11;

/// Polynomial whose coefficients are affine in decision parameters:
/// `base + sum_k theta_k * linear[k]`.
#[derive(Debug, Clone)]
pub struct ParamPoly {
    pub base: Polynomial,
    linear: Vec<(usize, Polynomial)>,
}

impl ParamPoly {
    pub fn from_poly(p: Polynomial) -> Self {
        ParamPoly { base: p, linear: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self::from_poly(Polynomial::constant(c))
    }

    pub fn zero() -> Self {
        Self::from_poly(Polynomial::zero())
    }

    /// The bare parameter `theta_k`.
    pub fn theta(k: usize) -> Self {
        ParamPoly { base: Polynomial::zero(), linear: vec![(k, Polynomial::constant(1.0))] }
    }

    /// `theta_k * p`.
    pub fn theta_times(k: usize, p: Polynomial) -> Self {
        ParamPoly { base: Polynomial::zero(), linear: vec![(k, p)] }
    }

    pub fn linear_terms(&self) -> &[(usize, Polynomial)] {
        &self.linear
    }

    pub fn is_parameterized(&self) -> bool {
        self.linear.iter().any(|(_, p)| !p.is_zero())
    }

    fn compact(mut self) -> Self {
        let mut merged: BTreeMap<usize, Polynomial> = BTreeMap::new();
        for (k, p) in self.linear.drain(..) {
            let entry = merged.entry(k).or_insert_with(Polynomial::zero);
            *entry = entry.add(&p);
        }
        self.linear = merged.into_iter().filter(|(_, p)| !p.is_zero()).collect();
        self
    }

    pub fn add(&self, other: &ParamPoly) -> ParamPoly {
        let mut linear = self.linear.clone();
        linear.extend(other.linear.iter().cloned());
        ParamPoly { base: self.base.add(&other.base), linear }.compact()
    }

    pub fn sub(&self, other: &ParamPoly) -> ParamPoly {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> ParamPoly {
        ParamPoly {
            base: self.base.scale(s),
            linear: self.linear.iter().map(|(k, p)| (*k, p.scale(s))).collect(),
        }
        .compact()
    }

    /// Multiply by a parameter-free polynomial.
    pub fn mul_poly(&self, p: &Polynomial) -> ParamPoly {
        ParamPoly {
            base: self.base.mul(p),
            linear: self.linear.iter().map(|(k, q)| (*k, q.mul(p))).collect(),
        }
        .compact()
    }

    /// General product. Rejected when both factors carry parameters, since
    /// the result would be quadratic in theta (a bilinear matrix
    /// inequality, outside the convex search set).
    pub fn mul(&self, other: &ParamPoly) -> Result<ParamPoly, SosError> {
        if self.is_parameterized() && other.is_parameterized() {
            let i = self.linear.iter().find(|(_, p)| !p.is_zero()).unwrap().0;
            let j = other.linear.iter().find(|(_, p)| !p.is_zero()).unwrap().0;
            return Err(SosError::BilinearParameter(i, j));
        }
        if other.is_parameterized() {
            Ok(other.mul_poly(&self.base))
        } else {
            Ok(self.mul_poly(&other.base))
        }
    }

    pub fn differentiate(&self, var: &str) -> ParamPoly {
        ParamPoly {
            base: self.base.differentiate(var),
            linear: self.linear.iter().map(|(k, p)| (*k, p.differentiate(var))).collect(),
        }
        .compact()
    }

    /// Substitute numeric parameter values, leaving a plain polynomial.
    pub fn instantiate(&self, theta: &[f64]) -> Polynomial {
        let mut p = self.base.clone();
        for (k, q) in &self.linear {
            p = p.add(&q.scale(theta[*k]));
        }
        p
    }

    fn max_abs_coeff(&self) -> f64 {
        let mut m = self.base.terms().map(|(_, c)| c.abs()).fold(0.0, f64::max);
        for (_, p) in &self.linear {
            m = m.max(p.terms().map(|(_, c)| c.abs()).fold(0.0, f64::max));
        }
        m
    }

    fn monomials_over(&self, vars: &[String]) -> Vec<Vec<u32>> {
        let mut out = Vec::new();
        for poly in std::iter::once(&self.base).chain(self.linear.iter().map(|(_, p)| p)) {
            for (e, _) in poly.terms() {
                out.push(embed_exponents(poly.vars(), e, vars));
            }
        }
        out
    }
}

pub(crate) fn embed_exponents(from_vars: &[String], e: &[u32], to_vars: &[String]) -> Vec<u32> {
    let mut ne = vec![0u32; to_vars.len()];
    for (k, v) in from_vars.iter().enumerate() {
        if e[k] > 0 {
            let i = to_vars.iter().position(|w| w == v).expect("variable missing from ambient list");
            ne[i] = e[k];
        }
    }
    ne
}

/// Monomial exponent vectors over a fixed variable list, used as a Gram
/// basis. Pruned by per-variable and total degree bounds derived from the
/// target polynomial (a bounding-box relaxation of the Newton polytope).
#[derive(Debug, Clone)]
pub struct MonomialBasis {
    pub vars: Vec<String>,
    pub exponents: Vec<Vec<u32>>,
}

impl MonomialBasis {
    /// All monomials with per-variable caps and total degree in
    /// `[min_total, max_total]`.
    pub fn bounded(vars: &[String], caps: &[u32], min_total: u32, max_total: u32) -> Self {
        let mut exponents = Vec::new();
        let mut cur = vec![0u32; vars.len()];
        fn rec(caps: &[u32], i: usize, cur: &mut Vec<u32>, lo: u32, hi: u32, out: &mut Vec<Vec<u32>>) {
            if i == caps.len() {
                let td: u32 = cur.iter().sum();
                if td >= lo && td <= hi {
                    out.push(cur.clone());
                }
                return;
            }
            let used: u32 = cur[..i].iter().sum();
            for k in 0..=caps[i].min(hi.saturating_sub(used)) {
                cur[i] = k;
                rec(caps, i + 1, cur, lo, hi, out);
            }
            cur[i] = 0;
        }
        rec(caps, 0, &mut cur, min_total, max_total, &mut exponents);
        MonomialBasis { vars: vars.to_vec(), exponents }
    }

    /// Basis adequate for the given target monomials: caps are half the
    /// per-variable maxima (rounded up), total degree spans half the
    /// min/max total degrees.
    pub fn for_monomials(vars: &[String], monomials: &[Vec<u32>]) -> Self {
        if monomials.is_empty() {
            return MonomialBasis { vars: vars.to_vec(), exponents: vec![vec![0; vars.len()]] };
        }
        let caps: Vec<u32> = (0..vars.len())
            .map(|i| monomials.iter().map(|e| e[i]).max().unwrap().div_ceil(2))
            .collect();
        let min_total = monomials.iter().map(|e| e.iter().sum::<u32>()).min().unwrap() / 2;
        let max_total = monomials.iter().map(|e| e.iter().sum::<u32>()).max().unwrap().div_ceil(2);
        Self::bounded(vars, &caps, min_total, max_total)
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn monomial(&self, k: usize) -> Polynomial {
        let mut p = Polynomial::constant(1.0);
        for (i, &e) in self.exponents[k].iter().enumerate() {
            p = p.mul(&Polynomial::variable(&self.vars[i]).pow(e));
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SosStatus {
    Feasible,
    Infeasible,
    Unknown,
}

#[derive(Debug, Clone)]
pub struct SosSolution {
    pub status: SosStatus,
    pub theta: Vec<f64>,
    pub grams: Vec<DMatrix<f64>>,
    /// Maximized eigenvalue headroom across all Gram blocks; near zero for
    /// marginal certificates.
    pub slack: f64,
    pub iterations: usize,
}

/// Accumulates SOS and linear constraints over a shared parameter vector,
/// then compiles to one semidefinite feasibility problem.
pub struct SosProgram {
    n_theta: usize,
    block_dims: Vec<usize>,
    constraints: Vec<Constraint>,
    gram_blocks: Vec<usize>,
    bases: Vec<MonomialBasis>,
    /// Surviving Gram elements (matrix row, basis monomial) per block.
    elements: Vec<Vec<(usize, usize)>>,
}

impl SosProgram {
    pub fn new(n_theta: usize) -> Self {
        SosProgram {
            n_theta,
            block_dims: Vec::new(),
            constraints: Vec::new(),
            gram_blocks: Vec::new(),
            bases: Vec::new(),
            elements: Vec::new(),
        }
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    /// Require `p` to be a sum of squares over `vars`. Returns a handle
    /// indexing into [`SosSolution::grams`] for certificate extraction.
    pub fn require_sos(&mut self, p: &ParamPoly, vars: &[String]) -> Result<usize, SosError> {
        let matrix = vec![vec![p.clone()]];
        self.require_matrix_sos(&matrix, vars)
    }

    /// Like [`require_sos`](Self::require_sos) with an explicit Gram basis;
    /// errors if some monomial of `p` escapes the basis products.
    pub fn require_sos_with_basis(
        &mut self,
        p: &ParamPoly,
        vars: &[String],
        basis: &MonomialBasis,
    ) -> Result<usize, SosError> {
        let matrix = vec![vec![p.clone()]];
        self.compile_matrix(&matrix, vars, basis)
    }

    /// Require the symmetric polynomial matrix `S` to satisfy `S(x) >= 0`
    /// for all x, via `v' S(x) v` being SOS in `(x, v)`.
    pub fn require_matrix_sos(&mut self, s: &[Vec<ParamPoly>], vars: &[String]) -> Result<usize, SosError> {
        let mut target_monos: Vec<Vec<u32>> = Vec::new();
        for row in s {
            for entry in row {
                target_monos.extend(entry.monomials_over(vars));
            }
        }
        let basis = MonomialBasis::for_monomials(vars, &target_monos);
        self.compile_matrix(s, vars, &basis)
    }

    fn compile_matrix(
        &mut self,
        s: &[Vec<ParamPoly>],
        vars: &[String],
        basis: &MonomialBasis,
    ) -> Result<usize, SosError> {
        let dim = s.len();
        for row in s {
            assert_eq!(row.len(), dim, "matrix must be square");
        }
        self.check_theta_range(s)?;
        let nm = basis.len();

        // target coefficient for key (mono, a, b): (S_ab + S_ba) for a < b,
        // S_aa on the diagonal
        type Key = (Vec<u32>, usize, usize);
        let mut targets: BTreeMap<Key, ParamPoly> = BTreeMap::new();
        for a in 0..dim {
            for b in a..dim {
                let entry = if a == b { s[a][b].clone() } else { s[a][b].add(&s[b][a]) };
                let mut add_coeffs = |k_theta: Option<usize>, poly: &Polynomial| {
                    for (e, c) in poly.terms() {
                        let mono = embed_exponents(poly.vars(), e, vars);
                        let key = (mono, a, b);
                        let t = targets.entry(key).or_insert_with(ParamPoly::zero);
                        match k_theta {
                            None => t.base = t.base.add(&Polynomial::constant(c)),
                            Some(k) => {
                                *t = t.add(&ParamPoly::theta_times(k, Polynomial::constant(c)))
                            }
                        }
                    }
                };
                add_coeffs(None, &entry.base);
                for (k, poly) in &entry.linear {
                    add_coeffs(Some(*k), poly);
                }
            }
        }

        // Gram elements (matrix row a, basis monomial m). Diagonal
        // consistency reduction: when the squared key of an element has a
        // structurally zero target and no other product reaches it,
        // positive semidefiniteness forces the element's whole Gram row to
        // vanish, so the element can be removed. Without this the slack
        // formulation would see a singular Gram at every feasible point.
        let is_zero = |t: Option<&ParamPoly>| -> bool {
            t.map_or(true, |t| t.max_abs_coeff() <= COEFF_ZERO_TOL)
        };
        let mut alive: Vec<(usize, usize)> =
            (0..dim).flat_map(|a| (0..nm).map(move |m| (a, m))).collect();
        loop {
            let mut pair_count: BTreeMap<Key, usize> = BTreeMap::new();
            for p in 0..alive.len() {
                for q in p..alive.len() {
                    let (ap, mp) = alive[p];
                    let (aq, mq) = alive[q];
                    let mono: Vec<u32> = basis.exponents[mp]
                        .iter()
                        .zip(&basis.exponents[mq])
                        .map(|(x, y)| x + y)
                        .collect();
                    *pair_count.entry((mono, ap.min(aq), ap.max(aq))).or_default() += 1;
                }
            }
            let mut drop = None;
            for (idx, &(a, m)) in alive.iter().enumerate() {
                let mono2: Vec<u32> = basis.exponents[m].iter().map(|&e| 2 * e).collect();
                let key = (mono2, a, a);
                if is_zero(targets.get(&key)) && pair_count.get(&key) == Some(&1) {
                    drop = Some(idx);
                    break;
                }
            }
            match drop {
                Some(idx) => {
                    alive.remove(idx);
                }
                None => break,
            }
        }
        let gram_dim = alive.len();
        assert!(gram_dim > 0, "gram basis fully pruned; constraint is structurally zero");

        // products of surviving elements
        let mut rows: BTreeMap<Key, Vec<(usize, usize, f64)>> = BTreeMap::new();
        for p in 0..gram_dim {
            for q in p..gram_dim {
                let (ap, mp) = alive[p];
                let (aq, mq) = alive[q];
                let mono: Vec<u32> = basis.exponents[mp]
                    .iter()
                    .zip(&basis.exponents[mq])
                    .map(|(x, y)| x + y)
                    .collect();
                let key = (mono, ap.min(aq), ap.max(aq));
                let entry = rows.entry(key).or_default();
                entry.push((p, q, 1.0));
                if p != q {
                    entry.push((q, p, 1.0));
                }
            }
        }

        // targets with no product left: structurally zero ones vanish, a
        // parameterized coefficient is pinned by a linear equality, and a
        // fixed nonzero coefficient cannot be certified at all
        let mut pending: Vec<Constraint> = Vec::new();
        for (key, target) in &targets {
            if rows.contains_key(key) {
                continue;
            }
            if target.base.constant_term().abs() > COEFF_ZERO_TOL {
                let (mono, a, b) = key;
                let mut label = String::new();
                for (i, &k) in mono.iter().enumerate() {
                    if k > 0 {
                        if !label.is_empty() {
                            label.push('*');
                        }
                        label.push_str(&vars[i]);
                        if k > 1 {
                            label.push_str(&format!("^{k}"));
                        }
                    }
                }
                if label.is_empty() {
                    label = "1".into();
                }
                if dim > 1 {
                    label = format!("{label} (entry {a},{b})");
                }
                return Err(SosError::UncoveredMonomial(label));
            }
            let free: Vec<(usize, f64)> = target
                .linear
                .iter()
                .filter(|(_, p)| p.constant_term().abs() > COEFF_ZERO_TOL)
                .map(|(k, p)| (*k, -p.constant_term()))
                .collect();
            if !free.is_empty() {
                pending.push(Constraint { mats: vec![], free, rhs: target.base.constant_term() });
            }
        }

        let block = self.block_dims.len();
        let handle = self.gram_blocks.len();
        self.block_dims.push(gram_dim);
        self.gram_blocks.push(block);
        self.bases.push(basis.clone());
        self.elements.push(alive);
        self.constraints.extend(pending);
        for (key, gram_entries) in rows {
            let mut mat = DMatrix::zeros(gram_dim, gram_dim);
            for (i, j, v) in gram_entries {
                mat[(i, j)] += v;
            }
            let target = targets.get(&key).cloned().unwrap_or_else(ParamPoly::zero);
            // <A, G> - sum_k c_k theta_k = base coefficient
            let free: Vec<(usize, f64)> = target
                .linear
                .iter()
                .map(|(k, p)| (*k, -p.constant_term()))
                .collect();
            self.constraints.push(Constraint {
                mats: vec![(block, mat)],
                free,
                rhs: target.base.constant_term(),
            });
        }
        Ok(handle)
    }

    fn check_theta_range(&self, s: &[Vec<ParamPoly>]) -> Result<(), SosError> {
        for row in s {
            for entry in row {
                for (k, _) in entry.linear_terms() {
                    if *k >= self.n_theta {
                        return Err(SosError::ParameterRange(*k, self.n_theta));
                    }
                }
            }
        }
        Ok(())
    }

    /// Linear equality `sum_k coeffs_k * theta_k = rhs`.
    pub fn add_theta_equality(&mut self, coeffs: &[(usize, f64)], rhs: f64) {
        self.constraints.push(Constraint { mats: vec![], free: coeffs.to_vec(), rhs });
    }

    /// Linear inequality `sum_k coeffs_k * theta_k <= rhs` via a
    /// nonnegative scalar slack block.
    pub fn add_theta_inequality(&mut self, coeffs: &[(usize, f64)], rhs: f64) {
        let block = self.block_dims.len();
        self.block_dims.push(1);
        self.constraints.push(Constraint {
            mats: vec![(block, DMatrix::from_element(1, 1, 1.0))],
            free: coeffs.to_vec(),
            rhs,
        });
    }

    pub fn to_sdp(&self) -> SdpProblem {
        SdpProblem {
            block_dims: self.block_dims.clone(),
            n_free: self.n_theta,
            constraints: self.constraints.clone(),
            objective: Objective::default(),
        }
    }

    /// Solve as a feasibility problem (maximized eigenvalue slack).
    pub fn solve(&self, opts: &SolveOptions) -> Result<SosSolution, SosError> {
        let sdp = self.to_sdp();
        let sol = sdp::solve_feasibility(&sdp, opts)?;
        let status = match sol.status {
            SdpStatus::Feasible => SosStatus::Feasible,
            SdpStatus::Infeasible => SosStatus::Infeasible,
            SdpStatus::MaxIter => SosStatus::Unknown,
        };
        Ok(SosSolution {
            status,
            theta: sol.free_values.clone(),
            grams: self.gram_blocks.iter().map(|&b| sol.blocks[b].clone()).collect(),
            slack: sol.slack.unwrap_or(f64::NAN),
            iterations: sol.iterations,
        })
    }

    /// Reconstruct the polynomial certified by Gram block `idx` (scalar
    /// constraints only), for round-trip checks.
    pub fn gram_polynomial(&self, idx: usize, gram: &DMatrix<f64>) -> Polynomial {
        let basis = &self.bases[idx];
        let elems = &self.elements[idx];
        assert_eq!(gram.nrows(), elems.len(), "gram dimension mismatch");
        assert!(elems.iter().all(|&(a, _)| a == 0), "gram_polynomial expects a scalar constraint block");
        let mut p = Polynomial::zero();
        for i in 0..elems.len() {
            for j in 0..elems.len() {
                p = p.add(&basis.monomial(elems[i].1).mul(&basis.monomial(elems[j].1)).scale(gram[(i, j)]));
            }
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn vars(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    /// x^2 + 2xy + y^2 = (x+y)^2: the Gram basis prunes to {x, y} and the
    /// unique Gram matrix is [[1,1],[1,1]].
    #[test]
    fn perfect_square_gram() {
        let p = Polynomial::parse("x^2 + 2*x*y + y^2").unwrap();
        let mut prog = SosProgram::new(0);
        let block = prog.require_sos(&ParamPoly::from_poly(p.clone()), &vars(&["x", "y"])).unwrap();
        let sol = prog.solve(&SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SosStatus::Feasible);
        let g = &sol.grams[block];
        assert_eq!(g.nrows(), 2);
        for (i, j, v) in [(0, 0, 1.0), (0, 1, 1.0), (1, 1, 1.0)] {
            assert_relative_eq!(g[(i, j)], v, epsilon = 1e-5);
        }
        let rebuilt = prog.gram_polynomial(0, g);
        for (e, c) in p.terms() {
            let exps: Vec<(&str, u32)> = p.vars().iter().map(|v| v.as_str()).zip(e.iter().copied()).collect();
            assert_relative_eq!(rebuilt.coefficient(&exps), c, epsilon = 1e-5);
        }
    }

    /// The Motzkin polynomial is nonnegative but not a sum of squares.
    #[test]
    fn motzkin_rejected() {
        let p = Polynomial::parse("x^4*y^2 + x^2*y^4 - 3*x^2*y^2 + 1").unwrap();
        let mut prog = SosProgram::new(0);
        prog.require_sos(&ParamPoly::from_poly(p), &vars(&["x", "y"])).unwrap();
        let sol = prog.solve(&SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SosStatus::Infeasible);
        assert!(sol.slack < -1e-6);
    }

    /// Parameterized matrix constraint: find symmetric P with
    /// P + P' - 0.1 I >= 0 and trace P <= 2; the known certificate values
    /// P = diag(0.6370, 0.6369) must also verify when pinned exactly.
    #[test]
    fn parameterized_matrix_monotonicity() {
        // theta = (p11, p12, p22)
        let build = || {
            let mut s = vec![vec![ParamPoly::zero(); 2]; 2];
            s[0][0] = ParamPoly::theta_times(0, Polynomial::constant(2.0))
                .add(&ParamPoly::constant(-0.1));
            s[0][1] = ParamPoly::theta_times(1, Polynomial::constant(2.0));
            s[1][0] = s[0][1].clone();
            s[1][1] = ParamPoly::theta_times(2, Polynomial::constant(2.0))
                .add(&ParamPoly::constant(-0.1));
            s
        };
        let mut prog = SosProgram::new(3);
        prog.require_matrix_sos(&build(), &vars(&[])).unwrap();
        prog.add_theta_inequality(&[(0, 1.0), (2, 1.0)], 2.0);
        let sol = prog.solve(&SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SosStatus::Feasible);
        let (p11, p12, p22) = (sol.theta[0], sol.theta[1], sol.theta[2]);
        assert!(2.0 * p11 - 0.1 > -1e-7);
        assert!((2.0 * p11 - 0.1) * (2.0 * p22 - 0.1) - 4.0 * p12 * p12 > -1e-7);

        let mut pinned = SosProgram::new(3);
        pinned.require_matrix_sos(&build(), &vars(&[])).unwrap();
        pinned.add_theta_equality(&[(0, 1.0)], 0.6370);
        pinned.add_theta_equality(&[(1, 1.0)], 0.0);
        pinned.add_theta_equality(&[(2, 1.0)], 0.6369);
        let sol = pinned.solve(&SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SosStatus::Feasible);
        assert_relative_eq!(sol.theta[0], 0.6370, epsilon = 1e-6);
    }

    #[test]
    fn bilinear_parameters_rejected() {
        let a = ParamPoly::theta(0);
        let b = ParamPoly::theta(1);
        match a.mul(&b) {
            Err(SosError::BilinearParameter(0, 1)) => {}
            other => panic!("expected bilinear rejection, got {other:?}"),
        }
        // parameter times plain polynomial stays affine
        let ok = a.mul(&ParamPoly::from_poly(Polynomial::variable("x"))).unwrap();
        assert!(ok.is_parameterized());
    }

    /// A monomial outside the span of Gram basis products is reported by
    /// name instead of silently dropped.
    #[test]
    fn uncovered_monomial_reported() {
        let p = Polynomial::parse("x^2 + x^3").unwrap();
        let vs = vars(&["x"]);
        let basis = MonomialBasis::bounded(&vs, &[1], 0, 1); // {1, x}: products reach x^2 only
        let mut prog = SosProgram::new(0);
        match prog.require_sos_with_basis(&ParamPoly::from_poly(p), &vs, &basis) {
            Err(SosError::UncoveredMonomial(m)) => assert_eq!(m, "x^3"),
            other => panic!("expected uncovered monomial, got {other:?}"),
        }
    }

    /// Odd leading degree: the x^4 diagonal is structurally zero, so the
    /// reduction removes x^2 from the basis and the x^3 coefficient is
    /// rejected as unreachable.
    #[test]
    fn odd_degree_rejected_by_reduction() {
        let p = Polynomial::parse("x^2 + x^3").unwrap();
        let mut prog = SosProgram::new(0);
        match prog.require_sos(&ParamPoly::from_poly(p), &vars(&["x"])) {
            Err(SosError::UncoveredMonomial(m)) => assert_eq!(m, "x^3"),
            other => panic!("expected structural rejection, got {other:?}"),
        }
    }

    /// Compiling b'Gb for a random PSD G and solving must round-trip: the
    /// program is feasible and the certified polynomial matches.
    #[test]
    fn gram_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let vs = vars(&["x", "y"]);
            let basis = MonomialBasis::bounded(&vs, &[2, 2], 0, 2);
            let n = basis.len();
            let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0f64));
            let g = &m * m.transpose();
            let mut p = Polynomial::zero();
            for i in 0..n {
                for j in 0..n {
                    p = p.add(&basis.monomial(i).mul(&basis.monomial(j)).scale(g[(i, j)]));
                }
            }
            let mut prog = SosProgram::new(0);
            let block = prog.require_sos(&ParamPoly::from_poly(p.clone()), &vs).unwrap();
            let sol = prog.solve(&SolveOptions::default()).unwrap();
            assert_eq!(sol.status, SosStatus::Feasible);
            let rebuilt = prog.gram_polynomial(block, &sol.grams[block]);
            let diff = rebuilt.sub(&p);
            let worst = diff.terms().map(|(_, c)| c.abs()).fold(0.0, f64::max);
            assert!(worst < 1e-5, "round trip error {worst}");
        }
    }
}
