//! Plant models, domains, input signals and coordinate transformations.
//!
//! A plant is split into unmeasured states `x` and measured states `y`:
//! `dx = f_x(x, y, u)`, `dy = f_y(x, y, u)`. Dynamics come in two flavors:
//! polynomial (symbolic Jacobians, usable by the synthesis layer) and
//! closed form (arbitrary smooth right-hand sides with caller-supplied
//! Jacobians, cross-checked against finite differences at construction).

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::poly::Polynomial;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("jacobian check failed for {what} at {point:?}: analytic {analytic} vs finite difference {fd}")]
    JacobianMismatch { what: String, point: Vec<f64>, analytic: f64, fd: f64 },
    #[error("filter matrix is not Hurwitz (eigenvalue with real part {0:.3e})")]
    NotHurwitz(f64),
    #[error("domain sampling failed: no admissible point in {0} draws")]
    SamplingExhausted(usize),
    #[error("augmentation mismatch at {point:?}: extended dynamics {got} vs filter {expected}")]
    AugmentationMismatch { point: Vec<f64>, got: f64, expected: f64 },
}

type DynFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> (Vec<f64>, Vec<f64>) + Send + Sync>;
type JacFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> DMatrix<f64> + Send + Sync>;

/// Right-hand side of the plant.
#[derive(Clone)]
pub enum Dynamics {
    Polynomial { f_x: Vec<Polynomial>, f_y: Vec<Polynomial> },
    /// `f` returns `(dx, dy)`; `jacobian` is the full derivative of
    /// `(dx, dy)` with respect to `(x, y)`, row-major over stacked states.
    ClosedForm { f: DynFn, jacobian: JacFn },
}

impl std::fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dynamics::Polynomial { f_x, f_y } => f
                .debug_struct("Polynomial")
                .field("f_x", f_x)
                .field("f_y", f_y)
                .finish(),
            Dynamics::ClosedForm { .. } => f.write_str("ClosedForm"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SystemModel {
    pub x_names: Vec<String>,
    pub y_names: Vec<String>,
    pub u_names: Vec<String>,
    pub dynamics: Dynamics,
}

impl SystemModel {
    pub fn polynomial(
        x_names: &[&str],
        y_names: &[&str],
        u_names: &[&str],
        f_x: Vec<Polynomial>,
        f_y: Vec<Polynomial>,
    ) -> Result<Self, ModelError> {
        if f_x.len() != x_names.len() || f_y.len() != y_names.len() {
            return Err(ModelError::Dimension(format!(
                "{} + {} dynamics components for {} + {} states",
                f_x.len(),
                f_y.len(),
                x_names.len(),
                y_names.len()
            )));
        }
        Ok(SystemModel {
            x_names: x_names.iter().map(|s| s.to_string()).collect(),
            y_names: y_names.iter().map(|s| s.to_string()).collect(),
            u_names: u_names.iter().map(|s| s.to_string()).collect(),
            dynamics: Dynamics::Polynomial { f_x, f_y },
        })
    }

    /// Closed-form model. The supplied Jacobian is validated against central
    /// finite differences at each check point (relative tolerance 1e-5).
    pub fn closed_form(
        x_names: &[&str],
        y_names: &[&str],
        u_names: &[&str],
        f: DynFn,
        jacobian: JacFn,
        check_points: &[(Vec<f64>, Vec<f64>, Vec<f64>)],
    ) -> Result<Self, ModelError> {
        let model = SystemModel {
            x_names: x_names.iter().map(|s| s.to_string()).collect(),
            y_names: y_names.iter().map(|s| s.to_string()).collect(),
            u_names: u_names.iter().map(|s| s.to_string()).collect(),
            dynamics: Dynamics::ClosedForm { f, jacobian },
        };
        for (x, y, u) in check_points {
            model.check_jacobian_at(x, y, u, 1e-5)?;
        }
        Ok(model)
    }

    pub fn n_x(&self) -> usize {
        self.x_names.len()
    }

    pub fn n_y(&self) -> usize {
        self.y_names.len()
    }

    pub fn n_u(&self) -> usize {
        self.u_names.len()
    }

    fn bindings<'a>(&'a self, x: &[f64], y: &[f64], u: &[f64]) -> Vec<(&'a str, f64)> {
        let mut b: Vec<(&str, f64)> = Vec::with_capacity(x.len() + y.len() + u.len());
        b.extend(self.x_names.iter().map(|s| s.as_str()).zip(x.iter().copied()));
        b.extend(self.y_names.iter().map(|s| s.as_str()).zip(y.iter().copied()));
        b.extend(self.u_names.iter().map(|s| s.as_str()).zip(u.iter().copied()));
        b
    }

    /// Evaluate the right-hand side, returning `(dx, dy)`.
    pub fn f(&self, x: &[f64], y: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match &self.dynamics {
            Dynamics::Polynomial { f_x, f_y } => {
                let b = self.bindings(x, y, u);
                let dx = f_x.iter().map(|p| p.evaluate(&b).expect("state bindings cover all variables")).collect();
                let dy = f_y.iter().map(|p| p.evaluate(&b).expect("state bindings cover all variables")).collect();
                (dx, dy)
            }
            Dynamics::ClosedForm { f, .. } => f(x, y, u),
        }
    }

    /// Derivative of the stacked right-hand side `(dx, dy)` with respect to
    /// the stacked state `(x, y)` at the given point.
    pub fn jacobian(&self, x: &[f64], y: &[f64], u: &[f64]) -> DMatrix<f64> {
        let (nx, ny) = (self.n_x(), self.n_y());
        match &self.dynamics {
            Dynamics::Polynomial { f_x, f_y } => {
                let b = self.bindings(x, y, u);
                let state_names: Vec<&String> = self.x_names.iter().chain(&self.y_names).collect();
                let mut j = DMatrix::zeros(nx + ny, nx + ny);
                for (r, p) in f_x.iter().chain(f_y.iter()).enumerate() {
                    for (c, name) in state_names.iter().enumerate() {
                        j[(r, c)] = p.differentiate(name).evaluate(&b).expect("state bindings cover all variables");
                    }
                }
                j
            }
            Dynamics::ClosedForm { jacobian, .. } => jacobian(x, y, u),
        }
    }

    /// Central finite-difference cross-check of the analytic Jacobian.
    pub fn check_jacobian_at(&self, x: &[f64], y: &[f64], u: &[f64], tol: f64) -> Result<(), ModelError> {
        let (nx, ny) = (self.n_x(), self.n_y());
        let jac = self.jacobian(x, y, u);
        let h = 1e-6;
        for c in 0..nx + ny {
            let mut xp = x.to_vec();
            let mut yp = y.to_vec();
            let mut xm = x.to_vec();
            let mut ym = y.to_vec();
            if c < nx {
                xp[c] += h;
                xm[c] -= h;
            } else {
                yp[c - nx] += h;
                ym[c - nx] -= h;
            }
            let (dxp, dyp) = self.f(&xp, &yp, u);
            let (dxm, dym) = self.f(&xm, &ym, u);
            for r in 0..nx + ny {
                let fp = if r < nx { dxp[r] } else { dyp[r - nx] };
                let fm = if r < nx { dxm[r] } else { dym[r - nx] };
                let fd = (fp - fm) / (2.0 * h);
                let analytic = jac[(r, c)];
                if (analytic - fd).abs() > tol * (1.0 + analytic.abs().max(fd.abs())) {
                    let mut point = x.to_vec();
                    point.extend_from_slice(y);
                    return Err(ModelError::JacobianMismatch {
                        what: format!("d(state {r})/d(state {c})"),
                        point,
                        analytic,
                        fd,
                    });
                }
            }
        }
        Ok(())
    }
}

type PredFn = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;
type SampleFn = Arc<dyn Fn(&mut dyn rand::RngCore) -> Vec<f64> + Send + Sync>;

/// Region of the stacked state `(x, y)`: a bounding box, optional
/// inequality predicates, and an optional custom sampler (for domains
/// concentrated on a manifold, where rejection sampling would starve).
#[derive(Clone)]
pub struct Domain {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    predicates: Vec<PredFn>,
    sampler: Option<SampleFn>,
}

impl std::fmt::Debug for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Domain")
            .field("names", &self.names)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("predicates", &self.predicates.len())
            .field("custom_sampler", &self.sampler.is_some())
            .finish()
    }
}

impl Domain {
    pub fn bounding_box(names: &[&str], lower: &[f64], upper: &[f64]) -> Self {
        assert_eq!(names.len(), lower.len());
        assert_eq!(names.len(), upper.len());
        Domain {
            names: names.iter().map(|s| s.to_string()).collect(),
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            predicates: Vec::new(),
            sampler: None,
        }
    }

    pub fn with_predicate(mut self, pred: PredFn) -> Self {
        self.predicates.push(pred);
        self
    }

    pub fn with_sampler(mut self, sampler: SampleFn) -> Self {
        self.sampler = Some(sampler);
        self
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn has_custom_sampler(&self) -> bool {
        self.sampler.is_some()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point
            .iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .all(|((&v, &lo), &hi)| v >= lo && v <= hi)
            && self.predicates.iter().all(|p| p(point))
    }

    /// Uniform rejection sample; custom sampler takes precedence (its draws
    /// are still screened by the predicates).
    pub fn sample(&self, rng: &mut impl Rng) -> Result<Vec<f64>, ModelError> {
        const MAX_DRAWS: usize = 10_000;
        for _ in 0..MAX_DRAWS {
            let candidate = match &self.sampler {
                Some(s) => s(rng),
                None => self
                    .lower
                    .iter()
                    .zip(&self.upper)
                    .map(|(&lo, &hi)| rng.gen_range(lo..=hi))
                    .collect(),
            };
            if self.contains(&candidate) {
                return Ok(candidate);
            }
        }
        Err(ModelError::SamplingExhausted(MAX_DRAWS))
    }
}

/// Exogenous input as a function of time.
#[derive(Debug, Clone)]
pub enum InputSignal {
    Zero,
    Constant(Vec<f64>),
    /// `u_i(t) = amplitude_i * cos(frequency_i * t + phase_i)`.
    Cosine { amplitude: Vec<f64>, frequency: Vec<f64>, phase: Vec<f64> },
    /// Linear interpolation between samples; clamped outside the range.
    Tabulated { times: Vec<f64>, values: Vec<Vec<f64>> },
}

impl InputSignal {
    pub fn eval(&self, t: f64, n_u: usize) -> Vec<f64> {
        match self {
            InputSignal::Zero => vec![0.0; n_u],
            InputSignal::Constant(v) => v.clone(),
            InputSignal::Cosine { amplitude, frequency, phase } => amplitude
                .iter()
                .zip(frequency)
                .zip(phase)
                .map(|((&a, &w), &p)| a * (w * t + p).cos())
                .collect(),
            InputSignal::Tabulated { times, values } => {
                if times.is_empty() {
                    return vec![0.0; n_u];
                }
                let k = times.partition_point(|&s| s <= t);
                if k == 0 {
                    values[0].clone()
                } else if k == times.len() {
                    values[times.len() - 1].clone()
                } else {
                    let (t0, t1) = (times[k - 1], times[k]);
                    let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
                    values[k - 1]
                        .iter()
                        .zip(&values[k])
                        .map(|(&a, &b)| a + w * (b - a))
                        .collect()
                }
            }
        }
    }
}

type MapFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type MapJacFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// The measured-state offset `phi(y)` inside an affine transformation.
#[derive(Clone)]
pub enum OutputMap {
    Poly(Vec<Polynomial>),
    ClosedForm { f: MapFn, jacobian: MapJacFn },
}

impl std::fmt::Debug for OutputMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OutputMap::Poly(ps) => f.debug_tuple("Poly").field(ps).finish(),
            OutputMap::ClosedForm { .. } => f.write_str("ClosedForm"),
        }
    }
}

impl OutputMap {
    pub fn eval(&self, y: &[f64], y_names: &[String]) -> Vec<f64> {
        match self {
            OutputMap::Poly(ps) => {
                let b: Vec<(&str, f64)> =
                    y_names.iter().map(|s| s.as_str()).zip(y.iter().copied()).collect();
                ps.iter().map(|p| p.evaluate(&b).expect("output bindings cover all variables")).collect()
            }
            OutputMap::ClosedForm { f, .. } => f(y),
        }
    }

    pub fn jacobian(&self, y: &[f64], y_names: &[String]) -> DMatrix<f64> {
        match self {
            OutputMap::Poly(ps) => {
                let b: Vec<(&str, f64)> =
                    y_names.iter().map(|s| s.as_str()).zip(y.iter().copied()).collect();
                DMatrix::from_fn(ps.len(), y_names.len(), |i, j| {
                    ps[i].differentiate(&y_names[j]).evaluate(&b).expect("output bindings cover all variables")
                })
            }
            OutputMap::ClosedForm { jacobian, .. } => jacobian(y),
        }
    }
}

/// Coordinate change `z = phi(x, y)`.
#[derive(Debug, Clone)]
pub enum Transformation {
    /// `z = P x + phi(y)`, the search set used by the convex conditions.
    Affine { p: DMatrix<f64>, phi_y: OutputMap },
    /// General polynomial components over the stacked `(x, y)` variables.
    Poly(Vec<Polynomial>),
}

impl Transformation {
    pub fn n_z(&self) -> usize {
        match self {
            Transformation::Affine { p, .. } => p.nrows(),
            Transformation::Poly(ps) => ps.len(),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64], x_names: &[String], y_names: &[String]) -> Vec<f64> {
        match self {
            Transformation::Affine { p, phi_y } => {
                let mut z = phi_y.eval(y, y_names);
                for i in 0..p.nrows() {
                    for j in 0..p.ncols() {
                        z[i] += p[(i, j)] * x[j];
                    }
                }
                z
            }
            Transformation::Poly(ps) => {
                let mut b: Vec<(&str, f64)> =
                    x_names.iter().map(|s| s.as_str()).zip(x.iter().copied()).collect();
                b.extend(y_names.iter().map(|s| s.as_str()).zip(y.iter().copied()));
                ps.iter().map(|p| p.evaluate(&b).expect("state bindings cover all variables")).collect()
            }
        }
    }

    /// `d phi / d x` at the point.
    pub fn jacobian_x(&self, x: &[f64], y: &[f64], x_names: &[String], y_names: &[String]) -> DMatrix<f64> {
        match self {
            Transformation::Affine { p, .. } => p.clone(),
            Transformation::Poly(ps) => {
                let mut b: Vec<(&str, f64)> =
                    x_names.iter().map(|s| s.as_str()).zip(x.iter().copied()).collect();
                b.extend(y_names.iter().map(|s| s.as_str()).zip(y.iter().copied()));
                DMatrix::from_fn(ps.len(), x_names.len(), |i, j| {
                    ps[i].differentiate(&x_names[j]).evaluate(&b).expect("state bindings cover all variables")
                })
            }
        }
    }

    /// `d phi / d y` at the point.
    pub fn jacobian_y(&self, x: &[f64], y: &[f64], x_names: &[String], y_names: &[String]) -> DMatrix<f64> {
        match self {
            Transformation::Affine { phi_y, .. } => phi_y.jacobian(y, y_names),
            Transformation::Poly(ps) => {
                let mut b: Vec<(&str, f64)> =
                    x_names.iter().map(|s| s.as_str()).zip(x.iter().copied()).collect();
                b.extend(y_names.iter().map(|s| s.as_str()).zip(y.iter().copied()));
                DMatrix::from_fn(ps.len(), y_names.len(), |i, j| {
                    ps[i].differentiate(&y_names[j]).evaluate(&b).expect("state bindings cover all variables")
                })
            }
        }
    }
}

/// Plant extended with a stable linear filter `dw = A w + f_a(y, u)` whose
/// state is appended to the unmeasured block. Used when no transformation
/// exists over the original state and the observer needs extra dynamics.
#[derive(Debug, Clone)]
pub struct AugmentedModel {
    pub extended: SystemModel,
    pub n_w: usize,
    pub a: DMatrix<f64>,
    pub f_a: Vec<Polynomial>,
}

impl AugmentedModel {
    /// Append filter states `w` to a polynomial plant. `f_a` components may
    /// involve measured states and inputs only. `A` must be Hurwitz so the
    /// filter forgets its initial condition. The assembled extended
    /// dynamics are cross-checked against the filter at sampled points.
    pub fn new(
        model: &SystemModel,
        a: DMatrix<f64>,
        f_a: Vec<Polynomial>,
        w_names: &[&str],
    ) -> Result<Self, ModelError> {
        let n_w = w_names.len();
        if a.nrows() != n_w || a.ncols() != n_w || f_a.len() != n_w {
            return Err(ModelError::Dimension(format!(
                "filter with {} states, A is {}x{}, f_a has {} components",
                n_w,
                a.nrows(),
                a.ncols(),
                f_a.len()
            )));
        }
        if n_w > 0 {
            let max_re = a
                .clone()
                .complex_eigenvalues()
                .iter()
                .map(|e| e.re)
                .fold(f64::NEG_INFINITY, f64::max);
            if max_re >= -1e-9 {
                return Err(ModelError::NotHurwitz(max_re));
            }
        }
        for p in &f_a {
            for v in p.vars() {
                if model.x_names.contains(v) || w_names.iter().any(|w| w == v) {
                    return Err(ModelError::Dimension(format!(
                        "filter input `{v}` must be measured or exogenous"
                    )));
                }
            }
        }
        let Dynamics::Polynomial { f_x, f_y } = &model.dynamics else {
            return Err(ModelError::Dimension("filter augmentation requires a polynomial plant".into()));
        };

        let mut ext_fx = f_x.clone();
        for i in 0..n_w {
            let mut rhs = f_a[i].clone();
            for j in 0..n_w {
                if a[(i, j)] != 0.0 {
                    rhs = rhs.add(&Polynomial::variable(w_names[j]).scale(a[(i, j)]));
                }
            }
            ext_fx.push(rhs);
        }
        let ext_x_names: Vec<String> = model
            .x_names
            .iter()
            .cloned()
            .chain(w_names.iter().map(|s| s.to_string()))
            .collect();
        let ext_x_refs: Vec<&str> = ext_x_names.iter().map(|s| s.as_str()).collect();
        let y_refs: Vec<&str> = model.y_names.iter().map(|s| s.as_str()).collect();
        let u_refs: Vec<&str> = model.u_names.iter().map(|s| s.as_str()).collect();
        let extended = SystemModel::polynomial(&ext_x_refs, &y_refs, &u_refs, ext_fx, f_y.clone())?;

        let aug = AugmentedModel { extended, n_w, a, f_a };
        aug.witness_check(model, 200)?;
        Ok(aug)
    }

    /// Sampled consistency check: the appended rows of the extended
    /// dynamics must equal `A w + f_a(y, u)` pointwise.
    fn witness_check(&self, base: &SystemModel, samples: usize) -> Result<(), ModelError> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        let (nx, ny, nu) = (base.n_x(), base.n_y(), base.n_u());
        for _ in 0..samples {
            let x: Vec<f64> = (0..nx + self.n_w).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..ny).map(|_| rng.gen_range(0.1..2.0)).collect();
            let u: Vec<f64> = (0..nu).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (dx, _) = self.extended.f(&x, &y, &u);
            let w = &x[nx..];
            let b: Vec<(&str, f64)> = base
                .y_names
                .iter()
                .map(|s| s.as_str())
                .zip(y.iter().copied())
                .chain(base.u_names.iter().map(|s| s.as_str()).zip(u.iter().copied()))
                .collect();
            for i in 0..self.n_w {
                let mut expected = self.f_a[i].evaluate(&b).expect("filter bindings cover all variables");
                for j in 0..self.n_w {
                    expected += self.a[(i, j)] * w[j];
                }
                let got = dx[nx + i];
                if (got - expected).abs() > 1e-9 * (1.0 + expected.abs()) {
                    let mut point = x.clone();
                    point.extend_from_slice(&y);
                    return Err(ModelError::AugmentationMismatch { point, got, expected });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn poly_model() -> SystemModel {
        let fx1 = Polynomial::parse("x1 - 1/3*x1^3 - x1*x2^2").unwrap();
        let fx2 = Polynomial::parse("x1 - x2 - 1/3*x2^3 - x2*x1^2").unwrap();
        let fy = Polynomial::parse("x1").unwrap();
        SystemModel::polynomial(&["x1", "x2"], &["y"], &[], vec![fx1, fx2], vec![fy]).unwrap()
    }

    #[test]
    fn polynomial_jacobian_matches_finite_differences() {
        let m = poly_model();
        for &(a, b) in &[(0.5, -1.0), (1.2, 0.3), (-0.8, 0.9)] {
            m.check_jacobian_at(&[a, b], &[0.0], &[], 1e-6).unwrap();
        }
    }

    #[test]
    fn closed_form_jacobian_validated() {
        let f: DynFn = Arc::new(|x, _y, _u| (vec![x[0].sin()], vec![x[0]]));
        let jac: JacFn = Arc::new(|x, _y, _u| {
            DMatrix::from_row_slice(2, 2, &[x[0].cos(), 0.0, 1.0, 0.0])
        });
        let pts = vec![(vec![0.3], vec![0.0], vec![]), (vec![-1.1], vec![0.0], vec![])];
        let m = SystemModel::closed_form(&["q"], &["y"], &[], f, jac, &pts).unwrap();
        let (dx, dy) = m.f(&[0.5], &[0.0], &[]);
        assert_relative_eq!(dx[0], 0.5f64.sin());
        assert_relative_eq!(dy[0], 0.5);

        // a wrong Jacobian is refused
        let f2: DynFn = Arc::new(|x, _y, _u| (vec![x[0].sin()], vec![x[0]]));
        let bad: JacFn = Arc::new(|_x, _y, _u| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]));
        let pts = vec![(vec![2.0], vec![0.0], vec![])];
        assert!(SystemModel::closed_form(&["q"], &["y"], &[], f2, bad, &pts).is_err());
    }

    #[test]
    fn domain_rejection_sampling() {
        let d = Domain::bounding_box(&["a", "b"], &[-1.0, -1.0], &[1.0, 1.0])
            .with_predicate(Arc::new(|p: &[f64]| p[0] + p[1] > 0.0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = d.sample(&mut rng).unwrap();
            assert!(d.contains(&p));
            assert!(p[0] + p[1] > 0.0);
        }
        // empty region exhausts
        let empty = Domain::bounding_box(&["a"], &[0.0], &[1.0])
            .with_predicate(Arc::new(|p: &[f64]| p[0] > 2.0));
        assert!(matches!(empty.sample(&mut rng), Err(ModelError::SamplingExhausted(_))));
    }

    #[test]
    fn input_signal_shapes() {
        assert_eq!(InputSignal::Zero.eval(1.0, 2), vec![0.0, 0.0]);
        let c = InputSignal::Cosine { amplitude: vec![0.2], frequency: vec![1.0], phase: vec![0.0] };
        assert_relative_eq!(c.eval(0.0, 1)[0], 0.2);
        assert_relative_eq!(c.eval(std::f64::consts::PI, 1)[0], -0.2);
        let tab = InputSignal::Tabulated {
            times: vec![0.0, 1.0],
            values: vec![vec![0.0], vec![2.0]],
        };
        assert_relative_eq!(tab.eval(0.5, 1)[0], 1.0);
        assert_relative_eq!(tab.eval(5.0, 1)[0], 2.0);
    }

    #[test]
    fn affine_transformation_jacobians() {
        let p = DMatrix::from_row_slice(2, 2, &[0.6370, 0.0, 0.0, 0.6369]);
        let phi = OutputMap::Poly(vec![
            Polynomial::parse("-2.1872*y").unwrap(),
            Polynomial::parse("-0.6368*y").unwrap(),
        ]);
        let t = Transformation::Affine { p: p.clone(), phi_y: phi };
        let xn = vec!["x1".to_string(), "x2".to_string()];
        let yn = vec!["y".to_string()];
        let z = t.eval(&[1.0, 2.0], &[0.5], &xn, &yn);
        assert_relative_eq!(z[0], 0.6370 - 2.1872 * 0.5, epsilon = 1e-12);
        assert_relative_eq!(z[1], 2.0 * 0.6369 - 0.6368 * 0.5, epsilon = 1e-12);
        assert_eq!(t.jacobian_x(&[1.0, 2.0], &[0.5], &xn, &yn), p);
        let jy = t.jacobian_y(&[1.0, 2.0], &[0.5], &xn, &yn);
        assert_relative_eq!(jy[(0, 0)], -2.1872);
        assert_relative_eq!(jy[(1, 0)], -0.6368);
    }

    #[test]
    fn augmentation_requires_hurwitz() {
        let m = poly_model();
        let unstable = DMatrix::from_row_slice(1, 1, &[0.5]);
        let f_a = vec![Polynomial::parse("y").unwrap()];
        assert!(matches!(
            AugmentedModel::new(&m, unstable, f_a.clone(), &["w1"]),
            Err(ModelError::NotHurwitz(_))
        ));
        let stable = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let aug = AugmentedModel::new(&m, stable, f_a, &["w1"]).unwrap();
        assert_eq!(aug.extended.n_x(), 3);
        let (dx, _) = aug.extended.f(&[0.0, 0.0, 2.0], &[3.0], &[]);
        assert_relative_eq!(dx[2], -2.0 + 3.0);
    }

    #[test]
    fn augmentation_rejects_unmeasured_inputs() {
        let m = poly_model();
        let a = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let bad = vec![Polynomial::parse("x1").unwrap()];
        assert!(AugmentedModel::new(&m, a, bad, &["w1"]).is_err());
    }
}
