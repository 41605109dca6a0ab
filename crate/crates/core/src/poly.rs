//! Exact multivariate polynomial arithmetic and calculus.
//!
//! Polynomials are stored in canonical form: a sorted variable list and a
//! map from exponent vectors to nonzero coefficients. They underpin symbolic
//! Jacobians, Lie derivatives and the SOS compilation layer.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("variable `{0}` is not bound at evaluation")]
    UnboundVariable(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Multivariate polynomial over named variables with `f64` coefficients.
///
/// Invariants: `vars` is sorted and duplicate-free, every exponent vector
/// has length `vars.len()`, and no stored coefficient is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    vars: Vec<String>,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Polynomial { vars: Vec::new(), terms: BTreeMap::new() }
    }

    pub fn constant(c: f64) -> Self {
        let mut terms = BTreeMap::new();
        if c != 0.0 {
            terms.insert(Vec::new(), c);
        }
        Polynomial { vars: Vec::new(), terms }
    }

    pub fn variable(name: &str) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(vec![1u32], 1.0);
        Polynomial { vars: vec![name.to_string()], terms }
    }

    /// Build from explicit (exponent, coefficient) pairs over `vars`.
    pub fn from_terms(vars: &[&str], terms: &[(&[u32], f64)]) -> Self {
        let var_list: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
        let mut p = Polynomial { vars: var_list, terms: BTreeMap::new() };
        for (exp, c) in terms {
            assert_eq!(exp.len(), p.vars.len(), "exponent length mismatch");
            if *c != 0.0 {
                *p.terms.entry(exp.to_vec()).or_insert(0.0) += c;
            }
        }
        p.canonicalize();
        p.sort_vars();
        p
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], f64)> {
        self.terms.iter().map(|(e, c)| (e.as_slice(), *c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; zero polynomial reports 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    /// Maximum exponent of a single variable across all terms.
    pub fn degree_in(&self, var: &str) -> u32 {
        match self.vars.iter().position(|v| v == var) {
            Some(i) => self.terms.keys().map(|e| e[i]).max().unwrap_or(0),
            None => 0,
        }
    }

    pub fn constant_term(&self) -> f64 {
        self.terms
            .iter()
            .find(|(e, _)| e.iter().all(|&k| k == 0))
            .map(|(_, c)| *c)
            .unwrap_or(0.0)
    }

    /// Coefficient of the monomial with the given per-variable exponents
    /// (variables absent from the query must have exponent zero).
    pub fn coefficient(&self, exps: &[(&str, u32)]) -> f64 {
        let mut target = vec![0u32; self.vars.len()];
        for (name, k) in exps {
            match self.vars.iter().position(|v| v == name) {
                Some(i) => target[i] = *k,
                None if *k == 0 => {}
                None => return 0.0,
            }
        }
        self.terms.get(&target).copied().unwrap_or(0.0)
    }

    fn canonicalize(&mut self) {
        self.terms.retain(|_, c| *c != 0.0);
        // drop variables no surviving term uses so equal polynomials have
        // identical representations
        let used: Vec<bool> = (0..self.vars.len())
            .map(|i| self.terms.keys().any(|e| e[i] > 0))
            .collect();
        if used.iter().all(|&u| u) {
            return;
        }
        let keep: Vec<usize> = used
            .iter()
            .enumerate()
            .filter_map(|(i, &u)| u.then_some(i))
            .collect();
        self.vars = keep.iter().map(|&i| self.vars[i].clone()).collect();
        self.terms = self
            .terms
            .iter()
            .map(|(e, c)| (keep.iter().map(|&i| e[i]).collect::<Vec<u32>>(), *c))
            .collect();
    }

    fn sort_vars(&mut self) {
        let mut order: Vec<usize> = (0..self.vars.len()).collect();
        order.sort_by(|&a, &b| self.vars[a].cmp(&self.vars[b]));
        if order.iter().enumerate().all(|(i, &j)| i == j) {
            return;
        }
        let vars: Vec<String> = order.iter().map(|&j| self.vars[j].clone()).collect();
        let terms = self
            .terms
            .iter()
            .map(|(e, c)| (order.iter().map(|&j| e[j]).collect::<Vec<u32>>(), *c))
            .collect();
        self.vars = vars;
        self.terms = terms;
    }

    /// Re-embed into a superset variable list (must be sorted and contain
    /// all current variables).
    pub fn embed(&self, vars: &[String]) -> Polynomial {
        let idx: Vec<usize> = self
            .vars
            .iter()
            .map(|v| vars.iter().position(|w| w == v).expect("embed: missing variable"))
            .collect();
        let terms = self
            .terms
            .iter()
            .map(|(e, c)| {
                let mut ne = vec![0u32; vars.len()];
                for (k, &j) in idx.iter().enumerate() {
                    ne[j] = e[k];
                }
                (ne, *c)
            })
            .collect();
        Polynomial { vars: vars.to_vec(), terms }
    }

    fn union_vars(a: &Polynomial, b: &Polynomial) -> Vec<String> {
        let mut vars = a.vars.clone();
        for v in &b.vars {
            if !vars.contains(v) {
                vars.push(v.clone());
            }
        }
        vars.sort();
        vars
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let vars = Self::union_vars(self, other);
        let mut r = self.embed(&vars);
        for (e, c) in other.embed(&vars).terms {
            *r.terms.entry(e).or_insert(0.0) += c;
        }
        r.canonicalize();
        r
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut r = self.clone();
        if s == 0.0 {
            r.terms.clear();
        } else {
            for c in r.terms.values_mut() {
                *c *= s;
            }
            r.canonicalize();
        }
        r
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let vars = Self::union_vars(self, other);
        let a = self.embed(&vars);
        let b = other.embed(&vars);
        let mut terms: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (ea, ca) in &a.terms {
            for (eb, cb) in &b.terms {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
                *terms.entry(e).or_insert(0.0) += ca * cb;
            }
        }
        let mut r = Polynomial { vars, terms };
        r.canonicalize();
        r
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut r = Polynomial::constant(1.0);
        for _ in 0..k {
            r = r.mul(self);
        }
        r
    }

    /// Exact partial derivative with respect to `var`. A variable the
    /// polynomial does not contain gives the zero polynomial.
    pub fn differentiate(&self, var: &str) -> Polynomial {
        let Some(i) = self.vars.iter().position(|v| v == var) else {
            return Polynomial::zero();
        };
        let mut terms: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (e, c) in &self.terms {
            if e[i] == 0 {
                continue;
            }
            let mut ne = e.clone();
            ne[i] -= 1;
            *terms.entry(ne).or_insert(0.0) += c * e[i] as f64;
        }
        let mut r = Polynomial { vars: self.vars.clone(), terms };
        r.canonicalize();
        r
    }

    /// Evaluate at a point given as (variable, value) bindings. All of the
    /// polynomial's variables must be bound.
    pub fn evaluate(&self, point: &[(&str, f64)]) -> Result<f64, PolyError> {
        let values: Vec<f64> = self
            .vars
            .iter()
            .map(|v| {
                point
                    .iter()
                    .find(|(n, _)| n == v)
                    .map(|(_, x)| *x)
                    .ok_or_else(|| PolyError::UnboundVariable(v.clone()))
            })
            .collect::<Result<_, _>>()?;
        Ok(self.evaluate_ordered(&values))
    }

    /// Evaluate with values in the polynomial's own variable order.
    /// Power tables keep the evaluation deterministic across calls.
    pub fn evaluate_ordered(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.vars.len());
        let max_deg: Vec<u32> = (0..self.vars.len())
            .map(|i| self.terms.keys().map(|e| e[i]).max().unwrap_or(0))
            .collect();
        let powers: Vec<Vec<f64>> = values
            .iter()
            .zip(&max_deg)
            .map(|(&x, &d)| {
                let mut p = Vec::with_capacity(d as usize + 1);
                p.push(1.0);
                for k in 1..=d {
                    p.push(p[k as usize - 1] * x);
                }
                p
            })
            .collect();
        let mut sum = 0.0;
        for (e, c) in &self.terms {
            let mut m = *c;
            for (i, &k) in e.iter().enumerate() {
                m *= powers[i][k as usize];
            }
            sum += m;
        }
        sum
    }

    /// Lie derivative sum_i (dh/dvars[i]) * f[i].
    pub fn lie_derivative(&self, f: &[Polynomial], vars: &[String]) -> Result<Polynomial, PolyError> {
        if f.len() != vars.len() {
            return Err(PolyError::DimensionMismatch(format!(
                "lie_derivative: {} vector fields for {} variables",
                f.len(),
                vars.len()
            )));
        }
        let mut r = Polynomial::zero();
        for (fi, v) in f.iter().zip(vars) {
            r = r.add(&self.differentiate(v).mul(fi));
        }
        Ok(r)
    }

    /// Parse from the textual form `c*v1^k1*v2^k2 + ...`, e.g.
    /// `-0.3333*x1^3*x2^0 + x1`.
    pub fn parse(input: &str) -> Result<Polynomial, PolyError> {
        let s: String = input.chars().filter(|c| !c.is_whitespace()).collect();
        if s.is_empty() {
            return Err(PolyError::Parse("empty input".into()));
        }
        // Split on +/- at term boundaries (not inside exponents like `e-3`).
        let mut terms: Vec<String> = Vec::new();
        let mut cur = String::new();
        let chars: Vec<char> = s.chars().collect();
        for (i, &c) in chars.iter().enumerate() {
            if (c == '+' || c == '-') && i > 0 && chars[i - 1] != 'e' && chars[i - 1] != 'E' {
                terms.push(cur.clone());
                cur.clear();
            }
            cur.push(c);
        }
        terms.push(cur);
        let mut result = Polynomial::zero();
        for t in terms.iter().filter(|t| !t.is_empty()) {
            result = result.add(&Self::parse_term(t)?);
        }
        Ok(result)
    }

    fn parse_term(term: &str) -> Result<Polynomial, PolyError> {
        let (sign, body) = match term.strip_prefix('-') {
            Some(rest) => (-1.0, rest),
            None => (1.0, term.strip_prefix('+').unwrap_or(term)),
        };
        if body.is_empty() {
            return Err(PolyError::Parse(format!("dangling sign in `{term}`")));
        }
        let mut coeff = sign;
        let mut exps: BTreeMap<String, u32> = BTreeMap::new();
        for factor in body.split('*') {
            if factor.is_empty() {
                return Err(PolyError::Parse(format!("empty factor in `{term}`")));
            }
            let first = factor.chars().next().unwrap();
            if first.is_ascii_digit() || first == '.' {
                // numeric: allow `a/b` fractions and float literals
                if let Some((num, den)) = factor.split_once('/') {
                    let n: f64 = num.parse().map_err(|_| PolyError::Parse(format!("bad number `{factor}`")))?;
                    let d: f64 = den.parse().map_err(|_| PolyError::Parse(format!("bad number `{factor}`")))?;
                    coeff *= n / d;
                } else {
                    let v: f64 = factor.parse().map_err(|_| PolyError::Parse(format!("bad number `{factor}`")))?;
                    coeff *= v;
                }
            } else {
                let (name, pow) = match factor.split_once('^') {
                    Some((n, p)) => {
                        let k: u32 = p.parse().map_err(|_| PolyError::Parse(format!("bad exponent in `{factor}`")))?;
                        (n, k)
                    }
                    None => (factor, 1),
                };
                if name.is_empty() || !name.chars().next().unwrap().is_ascii_alphabetic() {
                    return Err(PolyError::Parse(format!("bad variable `{factor}`")));
                }
                *exps.entry(name.to_string()).or_insert(0) += pow;
            }
        }
        let vars: Vec<String> = exps.keys().cloned().collect();
        let exp: Vec<u32> = exps.values().copied().collect();
        let mut terms = BTreeMap::new();
        if coeff != 0.0 {
            terms.insert(exp, coeff);
        }
        Ok(Polynomial { vars, terms })
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, c) in &self.terms {
            if first {
                if *c < 0.0 {
                    write!(f, "-")?;
                }
                first = false;
            } else if *c < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let mag = c.abs();
            let is_const = e.iter().all(|&k| k == 0);
            if mag != 1.0 || is_const {
                write!(f, "{mag}")?;
                if !is_const {
                    write!(f, "*")?;
                }
            }
            let mut need_star = false;
            for (i, &k) in e.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                if need_star {
                    write!(f, "*")?;
                }
                write!(f, "{}", self.vars[i])?;
                if k > 1 {
                    write!(f, "^{k}")?;
                }
                need_star = true;
            }
        }
        Ok(())
    }
}

/// Rectangular matrix of polynomials sharing one variable ordering.
#[derive(Debug, Clone)]
pub struct PolyMatrix {
    pub rows: usize,
    pub cols: usize,
    entries: Vec<Polynomial>,
}

impl PolyMatrix {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Polynomial) -> Self {
        let entries = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        PolyMatrix { rows, cols, entries }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| Polynomial::zero())
    }

    pub fn get(&self, i: usize, j: usize) -> &Polynomial {
        &self.entries[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, p: Polynomial) {
        self.entries[i * self.cols + j] = p;
    }

    pub fn transpose(&self) -> PolyMatrix {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    pub fn add(&self, other: &PolyMatrix) -> PolyMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self::from_fn(self.rows, self.cols, |i, j| self.get(i, j).add(other.get(i, j)))
    }

    pub fn is_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if self.get(i, j) != self.get(j, i) {
                    return false;
                }
            }
        }
        true
    }

    /// Evaluate every entry at the same point.
    pub fn evaluate(&self, point: &[(&str, f64)]) -> Result<nalgebra::DMatrix<f64>, PolyError> {
        let mut m = nalgebra::DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(i, j)] = self.get(i, j).evaluate(point)?;
            }
        }
        Ok(m)
    }
}
