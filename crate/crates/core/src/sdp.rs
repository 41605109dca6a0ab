//! Small dense semidefinite feasibility/optimization solver.
//!
//! Primal-dual interior point method with Nesterov-Todd scaling and a dense
//! Cholesky factorization of the Schur complement. Problems produced by the
//! SOS layer are tiny (Gram blocks up to ~30x30), so everything is dense.
//!
//! Problem form:
//!
//! ```text
//! minimize    sum_j <C_j, X_j> + c_f' f
//! subject to  sum_j <A_ij, X_j> + d_i' f = b_i     i = 1..m
//!             X_j >= 0 (PSD),  f free
//! ```
//!
//! Feasibility problems are solved by maximizing a slack `t` with
//! `X_j - t I >= 0`; the problem is declared feasible when `t >= -1e-9`,
//! which makes marginal certificates (an exact zero eigenvalue) observable.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("coefficient matrix for constraint {0} (block {1}) is not symmetric")]
    NonSymmetric(usize, usize),
    #[error("objective matrix for block {0} is not symmetric")]
    NonSymmetricObjective(usize),
    #[error("ill-formed problem: {0}")]
    BadProblem(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// One linear equality `sum_j <mats_j, X_j> + sum_k free_k * f_k = rhs`.
#[derive(Debug, Clone, Default)]
pub struct Constraint {
    pub mats: Vec<(usize, DMatrix<f64>)>,
    pub free: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Objective {
    pub mats: Vec<(usize, DMatrix<f64>)>,
    pub free: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub block_dims: Vec<usize>,
    pub n_free: usize,
    pub constraints: Vec<Constraint>,
    pub objective: Objective,
}

impl SdpProblem {
    pub fn new(block_dims: Vec<usize>, n_free: usize) -> Self {
        SdpProblem { block_dims, n_free, constraints: Vec::new(), objective: Objective::default() }
    }

    /// Plain-text dump of the block structure and constraint data, for
    /// debugging marginal instances.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        writeln!(s, "sdp problem: blocks {:?}, {} free vars, {} constraints", self.block_dims, self.n_free, self.constraints.len()).unwrap();
        for (i, c) in self.constraints.iter().enumerate() {
            writeln!(s, "constraint {i}: rhs = {}", c.rhs).unwrap();
            for (j, m) in &c.mats {
                writeln!(s, "  block {j}:").unwrap();
                for r in 0..m.nrows() {
                    let row: Vec<String> = (0..m.ncols()).map(|cix| format!("{:>12.5e}", m[(r, cix)])).collect();
                    writeln!(s, "    [{}]", row.join(" ")).unwrap();
                }
            }
            for (k, v) in &c.free {
                writeln!(s, "  free {k}: {v}").unwrap();
            }
        }
        s
    }

    fn validate(&self) -> Result<(), SdpError> {
        if self.block_dims.is_empty() {
            return Err(SdpError::BadProblem("at least one PSD block required".into()));
        }
        if self.block_dims.iter().any(|&d| d == 0) {
            return Err(SdpError::BadProblem("zero-dimensional block".into()));
        }
        let check_sym = |m: &DMatrix<f64>| {
            let asym = (m - m.transpose()).amax();
            asym <= 1e-10 * (1.0 + m.amax())
        };
        for (i, c) in self.constraints.iter().enumerate() {
            for (j, m) in &c.mats {
                if *j >= self.block_dims.len() || m.nrows() != self.block_dims[*j] || m.ncols() != self.block_dims[*j] {
                    return Err(SdpError::BadProblem(format!("constraint {i}: bad block index or shape")));
                }
                if !check_sym(m) {
                    return Err(SdpError::NonSymmetric(i, *j));
                }
            }
            for (k, _) in &c.free {
                if *k >= self.n_free {
                    return Err(SdpError::BadProblem(format!("constraint {i}: free index {k} out of range")));
                }
            }
        }
        for (j, m) in &self.objective.mats {
            if !check_sym(m) {
                return Err(SdpError::NonSymmetricObjective(*j));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Feasible,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub blocks: Vec<DMatrix<f64>>,
    pub free_values: Vec<f64>,
    pub dual_y: DVector<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub duality_gap: f64,
    pub objective: f64,
    pub iterations: usize,
    /// Slack margin `t` for feasibility solves (min eigenvalue headroom).
    pub slack: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Accept feasibility when the maximized slack is at least this value.
    pub feas_slack_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { max_iter: 100, tol: 1e-9, feas_slack_tol: -1e-9 }
    }
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric square root and inverse square root via eigendecomposition,
/// with an eigenvalue floor so marginal iterates never blow up.
fn sym_powers(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let eig = sym(m).symmetric_eigen();
    let n = m.nrows();
    let floor = 1e-14 * (1.0 + eig.eigenvalues.amax());
    let mut half = DMatrix::zeros(n, n);
    let mut inv_half = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k].max(floor);
        let v = eig.eigenvectors.column(k);
        let outer = &v * v.transpose();
        half += &outer * lam.sqrt();
        inv_half += &outer * (1.0 / lam.sqrt());
    }
    (half, inv_half)
}

/// Floored symmetric inverse.
fn sym_inv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = sym(m).symmetric_eigen();
    let n = m.nrows();
    let floor = 1e-14 * (1.0 + eig.eigenvalues.amax());
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k].max(floor);
        let v = eig.eigenvectors.column(k);
        inv += &v * v.transpose() * (1.0 / lam);
    }
    inv
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    sym(m).symmetric_eigen().eigenvalues.min()
}

/// Largest alpha in (0, inf] with `x + alpha*dx >= 0`, given `x > 0`.
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let reg = x + DMatrix::identity(n, n) * (1e-14 * (1.0 + x.trace() / n as f64));
    let chol = match reg.clone().cholesky() {
        Some(c) => c,
        None => return 0.0,
    };
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("triangular solve");
    let scaled = sym(&(&l_inv * dx * l_inv.transpose()));
    let lam = min_eig(&scaled);
    if lam >= -1e-16 {
        f64::INFINITY
    } else {
        -1.0 / lam
    }
}

struct Reduced {
    problem: SdpProblem,
    /// f_original = f0 + nullspace * f_reduced
    f0: DVector<f64>,
    nullspace: DMatrix<f64>,
    obj_offset: f64,
}

/// Eliminate equality constraints that touch no PSD block by solving the
/// linear system over the free variables and substituting the nullspace.
fn reduce_pure_free(p: &SdpProblem) -> Result<Result<Reduced, String>, SdpError> {
    let pure: Vec<&Constraint> = p.constraints.iter().filter(|c| c.mats.is_empty()).collect();
    if pure.is_empty() {
        return Ok(Ok(Reduced {
            problem: p.clone(),
            f0: DVector::zeros(p.n_free),
            nullspace: DMatrix::identity(p.n_free, p.n_free),
            obj_offset: 0.0,
        }));
    }
    let m = pure.len();
    let n = p.n_free;
    // pad with zero rows so the SVD returns all n right singular vectors
    let mut e = DMatrix::zeros(m.max(n), n);
    let mut g = DVector::zeros(m.max(n));
    for (i, c) in pure.iter().enumerate() {
        for (k, v) in &c.free {
            e[(i, *k)] += v;
        }
        g[i] = c.rhs;
    }
    let svd = e.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = 1e-12 * (1.0 + smax) * (m.max(n) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    // minimum-norm particular solution
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut f0 = DVector::zeros(n);
    for k in 0..rank {
        let coeff = u.column(k).dot(&g) / svd.singular_values[k];
        f0 += vt.row(k).transpose() * coeff;
    }
    let residual = (&e * &f0 - &g).amax();
    if residual > 1e-8 * (1.0 + g.amax()) {
        return Ok(Err(format!("linear equality constraints inconsistent (residual {residual:.3e})")));
    }
    let null_dim = n - rank;
    let mut nullspace = DMatrix::zeros(n, null_dim);
    for k in 0..null_dim {
        nullspace.set_column(k, &vt.row(rank + k).transpose());
    }
    // substitute into the mixed constraints and the objective
    let mut problem = SdpProblem::new(p.block_dims.clone(), null_dim);
    for c in p.constraints.iter().filter(|c| !c.mats.is_empty()) {
        let mut d = DVector::zeros(n);
        for (k, v) in &c.free {
            d[*k] += v;
        }
        let dn = nullspace.transpose() * &d;
        problem.constraints.push(Constraint {
            mats: c.mats.clone(),
            free: (0..null_dim).filter(|&k| dn[k] != 0.0).map(|k| (k, dn[k])).collect(),
            rhs: c.rhs - d.dot(&f0),
        });
    }
    let mut cf = DVector::zeros(n);
    for (k, v) in &p.objective.free {
        cf[*k] += v;
    }
    let cn = nullspace.transpose() * &cf;
    problem.objective = Objective {
        mats: p.objective.mats.clone(),
        free: (0..null_dim).filter(|&k| cn[k] != 0.0).map(|k| (k, cn[k])).collect(),
    };
    Ok(Ok(Reduced { problem, f0: f0.clone(), nullspace, obj_offset: cf.dot(&f0) }))
}

/// Solve the SDP. With a nonzero objective this minimizes; pure feasibility
/// instances should go through [`solve_feasibility`].
pub fn solve(p: &SdpProblem, opts: &SolveOptions) -> Result<SdpSolution, SdpError> {
    p.validate()?;
    let reduced = match reduce_pure_free(p)? {
        Ok(r) => r,
        Err(msg) => {
            // inconsistent linear constraints: trivially infeasible
            let _ = msg;
            return Ok(SdpSolution {
                status: SdpStatus::Infeasible,
                blocks: p.block_dims.iter().map(|&d| DMatrix::zeros(d, d)).collect(),
                free_values: vec![0.0; p.n_free],
                dual_y: DVector::zeros(p.constraints.len()),
                primal_residual: f64::INFINITY,
                dual_residual: 0.0,
                duality_gap: f64::INFINITY,
                objective: f64::INFINITY,
                iterations: 0,
                slack: None,
            });
        }
    };
    let mut sol = solve_core(&reduced.problem, opts)?;
    // back-substitute free variables
    let f_red = DVector::from_vec(sol.free_values.clone());
    let f_full = &reduced.f0 + &reduced.nullspace * &f_red;
    sol.free_values = f_full.iter().copied().collect();
    sol.objective += reduced.obj_offset;
    Ok(sol)
}

/// Feasibility solve: maximize slack `t` with every block shifted by `t I`
/// (and `t <= 1` through an extra scalar slack block). Feasible when the
/// optimum satisfies `t >= opts.feas_slack_tol`.
pub fn solve_feasibility(p: &SdpProblem, opts: &SolveOptions) -> Result<SdpSolution, SdpError> {
    p.validate()?;
    let nb = p.block_dims.len();
    let t_idx = p.n_free;
    let mut shifted = SdpProblem::new(p.block_dims.clone(), p.n_free + 1);
    shifted.block_dims.push(1); // cap slack block
    for c in &p.constraints {
        let tr: f64 = c.mats.iter().map(|(_, m)| m.trace()).sum();
        let mut free = c.free.clone();
        if tr != 0.0 {
            free.push((t_idx, tr));
        }
        shifted.constraints.push(Constraint { mats: c.mats.clone(), free, rhs: c.rhs });
    }
    // t + s = 1, s >= 0 keeps the slack bounded above
    shifted.constraints.push(Constraint {
        mats: vec![(nb, DMatrix::from_element(1, 1, 1.0))],
        free: vec![(t_idx, 1.0)],
        rhs: 1.0,
    });
    // maximize t
    shifted.objective = Objective { mats: Vec::new(), free: vec![(t_idx, -1.0)] };
    let mut sol = solve(&shifted, opts)?;
    let t = sol.free_values[t_idx];
    sol.slack = Some(t);
    // undo the spectral shift
    for (j, &d) in p.block_dims.iter().enumerate() {
        sol.blocks[j] += DMatrix::identity(d, d) * t;
    }
    sol.blocks.truncate(nb);
    sol.free_values.truncate(p.n_free);
    if sol.status == SdpStatus::Feasible && t < opts.feas_slack_tol {
        sol.status = SdpStatus::Infeasible;
    }
    // Marginal problems (optimal slack exactly zero, singular optimal Gram)
    // make the primal residual stall while the dual side converges fully.
    // Accept such iterates: the slack answers the feasibility question and
    // certificates are validated independently downstream.
    if sol.status == SdpStatus::MaxIter
        && t >= opts.feas_slack_tol
        && sol.dual_residual <= opts.tol.max(1e-7)
        && sol.duality_gap <= 1e-5
        && sol.primal_residual <= 1e-4
    {
        sol.status = SdpStatus::Feasible;
    }
    if sol.status == SdpStatus::MaxIter && std::env::var_os("SDP_TRACE").is_some() {
        eprintln!(
            "feasibility stalled: t {t:.3e} rp {:.3e} rd {:.3e} gap {:.3e}",
            sol.primal_residual, sol.dual_residual, sol.duality_gap
        );
    }
    Ok(sol)
}

fn solve_core(p: &SdpProblem, opts: &SolveOptions) -> Result<SdpSolution, SdpError> {
    let nb = p.block_dims.len();
    let m = p.constraints.len();
    let nf = p.n_free;
    let n_total: usize = p.block_dims.iter().sum();

    // dense problem data
    let mut a: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); m];
    for (i, c) in p.constraints.iter().enumerate() {
        let mut mats: Vec<DMatrix<f64>> = p.block_dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();
        for (j, mm) in &c.mats {
            mats[*j] += sym(mm);
        }
        a[i] = mats;
    }
    let mut b = DVector::zeros(m);
    let mut d_mat = DMatrix::zeros(m, nf);
    for (i, c) in p.constraints.iter().enumerate() {
        b[i] = c.rhs;
        for (k, v) in &c.free {
            d_mat[(i, *k)] += v;
        }
    }
    let mut c_mats: Vec<DMatrix<f64>> = p.block_dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();
    for (j, mm) in &p.objective.mats {
        c_mats[*j] += sym(mm);
    }
    let mut c_free = DVector::zeros(nf);
    for (k, v) in &p.objective.free {
        c_free[*k] += v;
    }

    let data_scale = {
        let mut s: f64 = 1.0;
        s = s.max(b.amax()).max(c_free.amax());
        for cm in &c_mats {
            s = s.max(cm.amax());
        }
        for row in &a {
            for mm in row {
                s = s.max(mm.amax());
            }
        }
        s
    };

    // initial iterates
    let eta = 10.0_f64.max(data_scale.sqrt());
    let mut x: Vec<DMatrix<f64>> = p.block_dims.iter().map(|&d| DMatrix::identity(d, d) * eta).collect();
    let mut s: Vec<DMatrix<f64>> = p.block_dims.iter().map(|&d| DMatrix::identity(d, d) * eta).collect();
    let mut y = DVector::zeros(m);
    let mut f = DVector::zeros(nf);

    let b_norm = 1.0 + b.norm();
    let c_norm = 1.0 + c_mats.iter().map(|mm| mm.norm_squared()).sum::<f64>().sqrt() + c_free.norm();

    let inner = |u: &[DMatrix<f64>], v: &[DMatrix<f64>]| -> f64 {
        u.iter().zip(v).map(|(a, b)| a.dot(b)).sum()
    };

    let mut best: Option<SdpSolution> = None;
    for iter in 0..opts.max_iter {
        // residuals
        let mut r_p = b.clone();
        for i in 0..m {
            r_p[i] -= inner(&a[i], &x);
        }
        r_p -= &d_mat * &f;
        let mut r_d: Vec<DMatrix<f64>> = c_mats.clone();
        for j in 0..nb {
            for i in 0..m {
                r_d[j] -= &a[i][j] * y[i];
            }
            r_d[j] -= &s[j];
        }
        let r_f = &c_free - d_mat.transpose() * &y;
        let gap = inner(&x, &s);
        let mu = gap / n_total as f64;
        let pobj = inner(&c_mats, &x) + c_free.dot(&f);
        let dobj = b.dot(&y);
        let rp_norm = r_p.norm() / b_norm;
        let rd_norm = (r_d.iter().map(|mm| mm.norm_squared()).sum::<f64>().sqrt() + r_f.norm()) / c_norm;
        let rel_gap = gap.abs() / (1.0 + pobj.abs() + dobj.abs());

        let make_sol = |status: SdpStatus, iters: usize| SdpSolution {
            status,
            blocks: x.clone(),
            free_values: f.iter().copied().collect(),
            dual_y: y.clone(),
            primal_residual: rp_norm,
            dual_residual: rd_norm,
            duality_gap: rel_gap,
            objective: pobj,
            iterations: iters,
            slack: None,
        };

        if std::env::var_os("SDP_TRACE").is_some() {
            eprintln!(
                "iter {iter}: rp {rp_norm:.3e} rd {rd_norm:.3e} gap {rel_gap:.3e} mu {mu:.3e} pobj {pobj:.6e} dobj {dobj:.6e}"
            );
        }
        if rp_norm <= opts.tol && rd_norm <= opts.tol && rel_gap <= opts.tol {
            return Ok(make_sol(SdpStatus::Feasible, iter));
        }
        let worst = rp_norm.max(rd_norm).max(rel_gap);
        let improves = best
            .as_ref()
            .map(|b| worst < b.primal_residual.max(b.dual_residual).max(b.duality_gap))
            .unwrap_or(true);
        if improves {
            best = Some(make_sol(SdpStatus::MaxIter, iter));
        }

        // dual improving-ray check: diverging y with near-feasible ray and
        // positive dual objective certifies primal infeasibility
        if y.norm() > 1e5 * b_norm {
            let yh = &y / y.norm();
            let ray_obj = b.dot(&yh);
            let dual_lin = (d_mat.transpose() * &yh).amax();
            let mut ray_psd = true;
            for j in 0..nb {
                let mut sj = DMatrix::zeros(p.block_dims[j], p.block_dims[j]);
                for i in 0..m {
                    sj -= &a[i][j] * yh[i];
                }
                if min_eig(&sj) < -1e-7 {
                    ray_psd = false;
                }
            }
            if ray_obj > 1e-6 && dual_lin < 1e-7 && ray_psd {
                return Ok(make_sol(SdpStatus::Infeasible, iter));
            }
        }

        // NT scaling per block: W = X^{1/2} (X^{1/2} S X^{1/2})^{-1/2} X^{1/2}
        let mut w: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
        let mut s_inv: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
        for j in 0..nb {
            let (x_half, _) = sym_powers(&x[j]);
            let mid = &x_half * &s[j] * &x_half;
            let (_, mid_inv_half) = sym_powers(&mid);
            w.push(sym(&(&x_half * mid_inv_half * &x_half)));
            s_inv.push(sym_inv(&s[j]));
        }

        // Schur complement M_ik = sum_j <A_ij, W_j A_kj W_j>
        let mut schur = DMatrix::zeros(m, m);
        let mut wa: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(m);
        for i in 0..m {
            let row: Vec<DMatrix<f64>> = (0..nb).map(|j| &w[j] * &a[i][j] * &w[j]).collect();
            wa.push(row);
        }
        for i in 0..m {
            for k in i..m {
                let v = (0..nb).map(|j| a[i][j].dot(&wa[k][j])).sum::<f64>();
                schur[(i, k)] = v;
                schur[(k, i)] = v;
            }
        }
        let reg = 1e-13 * (1.0 + schur.trace() / m.max(1) as f64);
        for i in 0..m {
            schur[(i, i)] += reg;
        }
        let Some(schur_chol) = schur.clone().cholesky() else {
            break; // numerically stalled; fall through to best-iterate check
        };

        // saddle solve for given target T (per block): returns (dy, df, dx, ds)
        let solve_dir = |target: &[DMatrix<f64>],
                         r_p: &DVector<f64>,
                         r_d: &[DMatrix<f64>],
                         r_f: &DVector<f64>|
         -> (DVector<f64>, DVector<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
            let mut g = r_p.clone();
            for i in 0..m {
                for j in 0..nb {
                    let wrw = &w[j] * &r_d[j] * &w[j];
                    g[i] -= a[i][j].dot(&(&target[j] - &wrw));
                }
            }
            let (dy, df) = if nf > 0 {
                let minv_d = schur_chol.solve(&d_mat);
                let minv_g = schur_chol.solve(&g);
                let mut small = d_mat.transpose() * &minv_d;
                let sreg = 1e-13 * (1.0 + small.trace() / nf as f64);
                for k in 0..nf {
                    small[(k, k)] += sreg;
                }
                let rhs = d_mat.transpose() * &minv_g - r_f;
                let df = small
                    .clone()
                    .cholesky()
                    .map(|ch| ch.solve(&rhs))
                    .unwrap_or_else(|| small.clone().svd(true, true).solve(&rhs, 1e-12).unwrap());
                let dy = schur_chol.solve(&(&g - &d_mat * &df));
                (dy, df)
            } else {
                (schur_chol.solve(&g), DVector::zeros(0))
            };
            let mut ds: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
            let mut dx: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
            for j in 0..nb {
                let mut dsj = r_d[j].clone();
                for i in 0..m {
                    dsj -= &a[i][j] * dy[i];
                }
                let dxj = sym(&(&target[j] - &w[j] * &dsj * &w[j]));
                ds.push(sym(&dsj));
                dx.push(dxj);
            }
            (dy, df, dx, ds)
        };

        // predictor
        let target_aff: Vec<DMatrix<f64>> = (0..nb).map(|j| -&x[j]).collect();
        let (_dy_a, _df_a, dx_a, ds_a) = solve_dir(&target_aff, &r_p, &r_d, &r_f);
        let mut ap = 1.0_f64;
        let mut ad = 1.0_f64;
        for j in 0..nb {
            ap = ap.min(0.99 * max_step(&x[j], &dx_a[j]));
            ad = ad.min(0.99 * max_step(&s[j], &ds_a[j]));
        }
        let mut gap_aff = 0.0;
        for j in 0..nb {
            gap_aff += (&x[j] + &dx_a[j] * ap).dot(&(&s[j] + &ds_a[j] * ad));
        }
        let mu_aff = gap_aff.max(0.0) / n_total as f64;
        let sigma = ((mu_aff / mu).powi(3)).clamp(1e-8, 1.0);

        // corrector
        let target: Vec<DMatrix<f64>> = (0..nb)
            .map(|j| &s_inv[j] * (sigma * mu) - &x[j])
            .collect();
        let (dy, df, dx, ds) = solve_dir(&target, &r_p, &r_d, &r_f);
        let mut ap = 1.0_f64;
        let mut ad = 1.0_f64;
        for j in 0..nb {
            ap = ap.min(0.98 * max_step(&x[j], &dx[j]));
            ad = ad.min(0.98 * max_step(&s[j], &ds[j]));
        }
        if std::env::var_os("SDP_TRACE").is_some() {
            eprintln!("  step: sigma {sigma:.3e} ap {ap:.3e} ad {ad:.3e}");
        }
        if !(ap.is_finite() && ad.is_finite()) || ap <= 1e-10 || ad <= 1e-10 {
            break;
        }
        for j in 0..nb {
            x[j] = sym(&(&x[j] + &dx[j] * ap));
            s[j] = sym(&(&s[j] + &ds[j] * ad));
        }
        y += &dy * ad;
        f += &df * ap;
    }
    // relaxed acceptance: a stalled run whose best iterate is accurate to
    // 1e-7 across all KKT residuals still counts as solved
    let mut sol = best.ok_or_else(|| SdpError::Numerical("no iterations performed".into()))?;
    let worst = sol.primal_residual.max(sol.dual_residual).max(sol.duality_gap);
    sol.status = if worst <= opts.tol.max(1e-7) { SdpStatus::Feasible } else { SdpStatus::MaxIter };
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// minimize trace(X), X >= 0, X11 = 1 -> X = diag(1, 0), objective 1.
    /// (Analytic KKT: the constraint pins X11; any mass elsewhere only
    /// increases the trace.)
    #[test]
    fn min_trace_pinned_entry() {
        let mut p = SdpProblem::new(vec![2], 0);
        let mut e11 = DMatrix::zeros(2, 2);
        e11[(0, 0)] = 1.0;
        p.constraints.push(Constraint { mats: vec![(0, e11)], free: vec![], rhs: 1.0 });
        p.objective = Objective { mats: vec![(0, DMatrix::identity(2, 2))], free: vec![] };
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Feasible);
        assert_relative_eq!(sol.objective, 1.0, epsilon = 1e-6);
        assert_relative_eq!(sol.blocks[0][(0, 0)], 1.0, epsilon = 1e-6);
        assert!(sol.blocks[0][(1, 1)].abs() < 1e-6);
    }

    /// X >= 0 with trace(X) = -1 has no solution (trace of PSD is >= 0).
    #[test]
    fn negative_trace_infeasible() {
        let mut p = SdpProblem::new(vec![3], 0);
        p.constraints.push(Constraint {
            mats: vec![(0, DMatrix::identity(3, 3))],
            free: vec![],
            rhs: -1.0,
        });
        let sol = solve_feasibility(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
        assert!(sol.slack.unwrap() < -1e-3);
    }

    #[test]
    fn non_symmetric_rejected() {
        let mut p = SdpProblem::new(vec![2], 0);
        let mut bad = DMatrix::zeros(2, 2);
        bad[(0, 1)] = 1.0;
        p.constraints.push(Constraint { mats: vec![(0, bad)], free: vec![], rhs: 0.0 });
        assert!(matches!(solve(&p, &SolveOptions::default()), Err(SdpError::NonSymmetric(0, 0))));
    }

    /// Free variables: minimize f with X11 + f = 2, X <= handled by X11 >= 0;
    /// optimum pushes X11 up; bounded via X11 <= 1 (1x1 slack block).
    #[test]
    fn free_variable_coupling() {
        let mut p = SdpProblem::new(vec![1, 1], 1);
        // X11 + f = 2
        p.constraints.push(Constraint {
            mats: vec![(0, DMatrix::from_element(1, 1, 1.0))],
            free: vec![(0, 1.0)],
            rhs: 2.0,
        });
        // X11 + s = 1
        p.constraints.push(Constraint {
            mats: vec![(0, DMatrix::from_element(1, 1, 1.0)), (1, DMatrix::from_element(1, 1, 1.0))],
            free: vec![],
            rhs: 1.0,
        });
        p.objective = Objective { mats: vec![], free: vec![(0, 1.0)] };
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Feasible);
        assert_relative_eq!(sol.free_values[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(sol.blocks[0][(0, 0)], 1.0, epsilon = 1e-6);
    }

    /// Pure-free equality rows are eliminated before the interior point run.
    #[test]
    fn pure_free_elimination() {
        let mut p = SdpProblem::new(vec![1], 2);
        // f0 + f1 = 3 (no blocks)
        p.constraints.push(Constraint { mats: vec![], free: vec![(0, 1.0), (1, 1.0)], rhs: 3.0 });
        // X11 - f0 = 0
        p.constraints.push(Constraint {
            mats: vec![(0, DMatrix::from_element(1, 1, 1.0))],
            free: vec![(0, -1.0)],
            rhs: 0.0,
        });
        // minimize f0 (bounded below by X11 >= 0)
        p.objective = Objective { mats: vec![], free: vec![(0, 1.0)] };
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Feasible);
        assert_relative_eq!(sol.free_values[0], 0.0, epsilon = 1e-6);
        assert_relative_eq!(sol.free_values[1], 3.0, epsilon = 1e-6);
    }

    #[test]
    fn inconsistent_linear_rows_infeasible() {
        let mut p = SdpProblem::new(vec![1], 1);
        p.constraints.push(Constraint { mats: vec![], free: vec![(0, 1.0)], rhs: 1.0 });
        p.constraints.push(Constraint { mats: vec![], free: vec![(0, 1.0)], rhs: 2.0 });
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }
}
