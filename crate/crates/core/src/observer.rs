//! Observer runtime: integrate `dxi = f_z(xi, y, u)` and recover the state
//! estimate `xhat = phi^L(xi, y)` by inverting the coordinate change.

use std::sync::Arc;

use nalgebra::DVector;
use thiserror::Error;

use crate::model::Transformation;
use crate::poly::Polynomial;

#[derive(Debug, Error)]
pub enum ObserverError {
    #[error("left inverse did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("transformation Jacobian is singular at the current iterate")]
    SingularJacobian,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

type RhsFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> Vec<f64> + Send + Sync>;
type EstFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// Observer vector field in the transformed coordinates.
#[derive(Clone)]
pub enum ObserverDynamics {
    /// Components over the variables `z_names ++ y_names ++ u_names`.
    Poly { f_z: Vec<Polynomial>, z_names: Vec<String> },
    ClosedForm(RhsFn),
}

impl std::fmt::Debug for ObserverDynamics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ObserverDynamics::Poly { f_z, .. } => f.debug_tuple("Poly").field(f_z).finish(),
            ObserverDynamics::ClosedForm(_) => f.write_str("ClosedForm"),
        }
    }
}

/// How the estimate is pulled back from observer coordinates.
#[derive(Clone)]
pub enum EstimateMap {
    /// Invert the stored transformation (exact for affine maps, damped
    /// Newton for polynomial ones).
    LeftInverse,
    Custom(EstFn),
}

impl std::fmt::Debug for EstimateMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimateMap::LeftInverse => f.write_str("LeftInverse"),
            EstimateMap::Custom(_) => f.write_str("Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Observer {
    pub dynamics: ObserverDynamics,
    pub transformation: Transformation,
    pub estimate_map: EstimateMap,
    pub x_names: Vec<String>,
    pub y_names: Vec<String>,
    pub u_names: Vec<String>,
}

/// Current observer coordinates and the pulled-back estimate.
#[derive(Debug, Clone)]
pub struct ObserverState {
    pub xi: Vec<f64>,
    pub xhat: Vec<f64>,
}

impl Observer {
    pub fn n_z(&self) -> usize {
        self.transformation.n_z()
    }

    pub fn n_x(&self) -> usize {
        self.x_names.len()
    }

    pub fn rhs(&self, xi: &[f64], y: &[f64], u: &[f64]) -> Vec<f64> {
        match &self.dynamics {
            ObserverDynamics::Poly { f_z, z_names } => {
                let mut b: Vec<(&str, f64)> =
                    z_names.iter().map(|s| s.as_str()).zip(xi.iter().copied()).collect();
                b.extend(self.y_names.iter().map(|s| s.as_str()).zip(y.iter().copied()));
                b.extend(self.u_names.iter().map(|s| s.as_str()).zip(u.iter().copied()));
                f_z.iter().map(|p| p.evaluate(&b).expect("observer bindings cover all variables")).collect()
            }
            ObserverDynamics::ClosedForm(f) => f(xi, y, u),
        }
    }

    /// Recover `xhat` with `phi(xhat, y) = xi`, warm-started at `guess`.
    pub fn estimate(&self, xi: &[f64], y: &[f64], guess: &[f64]) -> Result<Vec<f64>, ObserverError> {
        match &self.estimate_map {
            EstimateMap::Custom(f) => Ok(f(xi, y)),
            EstimateMap::LeftInverse => left_inverse(&self.transformation, xi, y, guess, &self.x_names, &self.y_names),
        }
    }
}

/// Solve `phi(x, y) = z` for `x`. Affine maps use a direct solve (least
/// squares when the map is an immersion); polynomial maps run a damped
/// Newton iteration from `guess`.
pub fn left_inverse(
    t: &Transformation,
    z: &[f64],
    y: &[f64],
    guess: &[f64],
    x_names: &[String],
    y_names: &[String],
) -> Result<Vec<f64>, ObserverError> {
    match t {
        Transformation::Affine { p, phi_y } => {
            let offset = phi_y.eval(y, y_names);
            let rhs = DVector::from_iterator(z.len(), z.iter().zip(&offset).map(|(a, b)| a - b));
            if rhs.len() != p.nrows() {
                return Err(ObserverError::Dimension(format!(
                    "{} coordinates for a {}x{} map",
                    rhs.len(),
                    p.nrows(),
                    p.ncols()
                )));
            }
            let x = if p.nrows() == p.ncols() {
                p.clone().lu().solve(&rhs).ok_or(ObserverError::SingularJacobian)?
            } else {
                // immersion: minimum-residual pullback
                p.clone().svd(true, true).solve(&rhs, 1e-12).map_err(|_| ObserverError::SingularJacobian)?
            };
            Ok(x.iter().copied().collect())
        }
        Transformation::Poly(_) => newton_left_inverse(t, z, y, guess, x_names, y_names),
    }
}

fn newton_left_inverse(
    t: &Transformation,
    z: &[f64],
    y: &[f64],
    guess: &[f64],
    x_names: &[String],
    y_names: &[String],
) -> Result<Vec<f64>, ObserverError> {
    const MAX_ITER: usize = 100;
    const MIN_STEP: f64 = 1.0 / (1 << 20) as f64;
    let mut x = guess.to_vec();
    let residual = |x: &[f64]| -> DVector<f64> {
        let fx = t.eval(x, y, x_names, y_names);
        DVector::from_iterator(z.len(), fx.iter().zip(z).map(|(a, b)| a - b))
    };
    let mut r = residual(&x);
    let tol = 1e-12 * (1.0 + z.iter().map(|v| v.abs()).fold(0.0, f64::max));
    for iter in 0..MAX_ITER {
        if r.norm() <= tol {
            return Ok(x);
        }
        let j = t.jacobian_x(&x, y, x_names, y_names);
        let dir = if j.nrows() == j.ncols() {
            j.lu().solve(&r).ok_or(ObserverError::SingularJacobian)?
        } else {
            j.svd(true, true).solve(&r, 1e-12).map_err(|_| ObserverError::SingularJacobian)?
        };
        // backtracking on the residual norm, halving the step
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(xi, di)| xi - alpha * di).collect();
            let rt = residual(&trial);
            if rt.norm() < r.norm() {
                x = trial;
                r = rt;
                break;
            }
            alpha *= 0.5;
            if alpha < MIN_STEP {
                return Err(ObserverError::NoConvergence { residual: r.norm(), iterations: iter });
            }
        }
    }
    if r.norm() <= 1e-9 * (1.0 + z.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
        Ok(x)
    } else {
        Err(ObserverError::NoConvergence { residual: r.norm(), iterations: MAX_ITER })
    }
}

/// Adaptive Simpson quadrature. Used for output maps defined through
/// non-elementary integrals.
pub fn integrate_adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, fm, flm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, fb, frm, right, tol / 2.0, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fb, fm) = (f(a), f(b), f(m));
    let whole = simpson(a, fa, b, fb, fm);
    rec(f, a, b, fa, fb, fm, whole, tol, 50)
}
