//! Primal active-set solver for convex quadratic programs
//!
//! ```text
//! minimize  1/2 x^T H x + f^T x   subject to  A x <= b
//! ```
//!
//! `H` only needs to be positive semidefinite. Steps inside the working set
//! are computed in an orthonormal null-space basis; zero-curvature descent
//! directions become rays that either hit a blocking row or prove the
//! problem unbounded. A phase-1 LP (same machinery, `H = 0`) finds a
//! feasible start and, when none exists, a set of mutually inconsistent rows.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub max_iter: usize,
    /// Row `i` counts as satisfied when `a_i x - b_i <= feas_tol * (1 + |b_i|)`.
    pub feas_tol: f64,
    /// Multipliers above `-mult_tol` are accepted as nonnegative.
    pub mult_tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { max_iter: 10_000, feas_tol: 1e-10, mult_tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Working set at the optimum, ascending row indices.
    pub active: Vec<usize>,
    /// One multiplier per row of `A`; zero off the working set.
    pub multipliers: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Objective after every phase-2 iteration.
    pub objective_trace: Vec<f64>,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, f: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let n = f.len();
        if h.nrows() != n || h.ncols() != n {
            return Err(Error::Dimension(format!("H is {}x{}, f has {n}", h.nrows(), h.ncols())));
        }
        if a.ncols() != n && a.nrows() > 0 {
            return Err(Error::Dimension(format!("A has {} columns, expected {n}", a.ncols())));
        }
        if a.nrows() != b.len() {
            return Err(Error::Dimension(format!("A has {} rows, b has {}", a.nrows(), b.len())));
        }
        Ok(Self { h, f, a, b })
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }

    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        if self.a.nrows() == 0 {
            return 0.0;
        }
        (&self.a * x - &self.b).max().max(0.0)
    }

    /// `|H x + f + A^T lambda|_inf`.
    pub fn stationarity_residual(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
        let r = &self.h * x + &self.f + self.a.transpose() * lambda;
        r.amax()
    }
}

/// Solves the QP from `x0` (or the origin). The start need not be feasible.
pub fn solve_qp(problem: &QpProblem, options: &QpOptions, x0: Option<&DVector<f64>>) -> Result<QpSolution> {
    let n = problem.f.len();
    let start = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
    let feasible = if is_feasible(problem, &start, options.feas_tol) {
        start
    } else {
        phase_one(problem, options, &start)?
    };
    let (sol, iters) = active_set(problem, options, feasible, true)?;
    Ok(QpSolution { iterations: iters + sol.iterations, ..sol })
}

fn row_tol(b: f64, tol: f64) -> f64 {
    tol * (1.0 + b.abs())
}

fn is_feasible(p: &QpProblem, x: &DVector<f64>, tol: f64) -> bool {
    let ax = &p.a * x;
    (0..p.b.len()).all(|i| ax[i] - p.b[i] <= row_tol(p.b[i], tol))
}

/// Minimizes `t` subject to `A x - t <= b`, `t >= 0`.
fn phase_one(p: &QpProblem, options: &QpOptions, x0: &DVector<f64>) -> Result<DVector<f64>> {
    let n = p.f.len();
    let m = p.b.len();
    let viol = (&p.a * x0 - &p.b).max().max(0.0);
    let mut a = DMatrix::zeros(m + 1, n + 1);
    a.view_mut((0, 0), (m, n)).copy_from(&p.a);
    for i in 0..m {
        a[(i, n)] = -1.0;
    }
    a[(m, n)] = -1.0;
    let mut b = DVector::zeros(m + 1);
    b.rows_mut(0, m).copy_from(&p.b);
    let mut f = DVector::zeros(n + 1);
    f[n] = 1.0;
    let lp = QpProblem { h: DMatrix::zeros(n + 1, n + 1), f, a, b };
    let mut z = DVector::zeros(n + 1);
    z.rows_mut(0, n).copy_from(x0);
    z[n] = viol * (1.0 + 1e-9) + 1e-12;
    let (sol, _) = match active_set(&lp, options, z, false) {
        Ok(s) => s,
        Err(Error::Unbounded) => return Err(Error::Numerical("phase-1 LP reported unbounded".into())),
        Err(e) => return Err(e),
    };
    let t = sol.x[n];
    let x = sol.x.rows(0, n).into_owned();
    let scale = 1.0 + p.b.amax();
    if t > options.feas_tol * scale * 10.0 && !is_feasible(p, &x, options.feas_tol) {
        let rows = (0..m).filter(|&i| sol.multipliers[i] > options.mult_tol).collect();
        return Err(Error::Infeasible { rows });
    }
    Ok(x)
}

/// Orthonormal basis of the null space of the rows of `aw`.
fn null_space(aw: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    if aw.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let gram = aw.transpose() * aw;
    let scale = gram.diagonal().amax().max(1e-300);
    let eig = SymmetricEigen::new(gram);
    let mut cols: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= 1e-12 * scale).collect();
    cols.sort_unstable();
    let mut z = DMatrix::zeros(n, cols.len());
    for (k, &c) in cols.iter().enumerate() {
        z.set_column(k, &eig.eigenvectors.column(c));
    }
    z
}

fn rows_of(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), a.ncols(), |i, j| a[(idx[i], j)])
}

fn independent_of(a: &DMatrix<f64>, working: &[usize], row: usize) -> bool {
    let r = a.row(row).transpose();
    let norm = r.norm();
    if norm == 0.0 {
        return false;
    }
    if working.is_empty() {
        return true;
    }
    let z = null_space(&rows_of(a, working), a.ncols());
    (z.transpose() * &r).norm() > 1e-9 * norm
}

/// Minimum-norm least-squares multipliers for `A_W^T lambda = -g`.
fn working_multipliers(aw: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let svd = aw.transpose().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(1e-300);
    svd.solve(&(-g), eps).map(|m| m.column(0).into_owned()).unwrap_or_else(|_| DVector::zeros(aw.nrows()))
}

fn active_set(
    p: &QpProblem,
    options: &QpOptions,
    mut x: DVector<f64>,
    record_trace: bool,
) -> Result<(QpSolution, usize)> {
    let n = p.f.len();
    let m = p.b.len();
    let mut working: Vec<usize> = Vec::new();
    let ax = &p.a * &x;
    for i in 0..m {
        if (ax[i] - p.b[i]).abs() <= row_tol(p.b[i], options.feas_tol).max(1e-9 * (1.0 + p.b[i].abs()))
            && independent_of(&p.a, &working, i)
        {
            working.push(i);
        }
    }

    let h_scale = p.h.amax().max(1.0);
    let mut trace = Vec::new();
    let mut stalls = 0usize;
    let mut iterations = 0usize;
    loop {
        if iterations >= options.max_iter {
            return Err(Error::Numerical(format!("active set did not converge in {} iterations", options.max_iter)));
        }
        iterations += 1;
        let bland = stalls > 2 * (m + n);
        let g = &p.h * &x + &p.f;
        let aw = rows_of(&p.a, &working);
        let z = null_space(&aw, n);

        let mut step: Option<(DVector<f64>, bool)> = None;
        if z.ncols() > 0 {
            let hz = z.transpose() * &p.h * &z;
            let gz = z.transpose() * &g;
            let eig = SymmetricEigen::new(hz);
            let r = z.ncols();
            let curv_tol = 1e-11 * h_scale;
            let mut ray = DVector::zeros(r);
            let mut newton = DVector::zeros(r);
            for k in 0..r {
                let u = eig.eigenvectors.column(k);
                let c = u.dot(&gz);
                if eig.eigenvalues[k] > curv_tol {
                    newton -= u * (c / eig.eigenvalues[k]);
                } else {
                    ray -= u * c;
                }
            }
            let gnorm = g.amax().max(1.0);
            if ray.amax() > 1e-10 * gnorm {
                step = Some((&z * ray, true));
            } else {
                let d = &z * newton;
                if d.amax() > 1e-12 * (1.0 + x.amax()) {
                    step = Some((d, false));
                }
            }
        }

        match step {
            None => {
                let lambda_w = if working.is_empty() { DVector::zeros(0) } else { working_multipliers(&aw, &g) };
                let mut drop: Option<usize> = None;
                let mut most_neg = -options.mult_tol * (1.0 + g.amax());
                for (k, &row) in working.iter().enumerate() {
                    let l = lambda_w[k];
                    if bland {
                        if l < most_neg && drop.map_or(true, |d| row < working[d]) {
                            drop = Some(k);
                        }
                    } else if l < most_neg {
                        most_neg = l;
                        drop = Some(k);
                    }
                }
                match drop {
                    Some(k) => {
                        working.remove(k);
                        stalls += 1;
                    }
                    None => {
                        let (x, lambda_w) = polish(p, &working, x, lambda_w);
                        let mut multipliers = DVector::zeros(m);
                        for (k, &row) in working.iter().enumerate() {
                            multipliers[row] = lambda_w[k].max(0.0);
                        }
                        let mut active = working.clone();
                        active.sort_unstable();
                        let objective = p.objective(&x);
                        if record_trace {
                            trace.push(objective);
                        }
                        return Ok((
                            QpSolution { x, active, multipliers, objective, iterations: 0, objective_trace: trace },
                            iterations,
                        ));
                    }
                }
            }
            Some((d, is_ray)) => {
                let ad = &p.a * &d;
                let ax = &p.a * &x;
                let mut alpha = if is_ray { f64::INFINITY } else { 1.0 };
                let mut blocking: Option<usize> = None;
                let dscale = d.amax();
                for i in 0..m {
                    // Rows spanned by the working set are orthogonal to `d` up to
                    // round-off and never block.
                    if working.contains(&i) || ad[i] <= 1e-11 * dscale * p.a.row(i).norm() {
                        continue;
                    }
                    let ai = ((p.b[i] - ax[i]) / ad[i]).max(0.0);
                    if ai < alpha || (ai == alpha && blocking.map_or(false, |bk| i < bk)) {
                        alpha = ai;
                        blocking = Some(i);
                    }
                }
                if alpha.is_infinite() {
                    return Err(Error::Unbounded);
                }
                if alpha == 0.0 {
                    stalls += 1;
                } else {
                    stalls = 0;
                }
                x += &d * alpha;
                if let Some(i) = blocking {
                    if independent_of(&p.a, &working, i) {
                        working.push(i);
                    }
                }
                if record_trace {
                    trace.push(p.objective(&x));
                }
            }
        }
    }
}

/// Re-solves the equality-constrained KKT system on the final working set,
/// which tightens stationarity when the reduced Hessian is nonsingular.
fn polish(p: &QpProblem, working: &[usize], x: DVector<f64>, lambda: DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = p.f.len();
    let k = working.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&p.f));
    for (r, &row) in working.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = p.a[(row, j)];
            kkt[(j, n + r)] = p.a[(row, j)];
        }
        rhs[n + r] = p.b[row];
    }
    let lu = kkt.lu();
    let Some(sol) = lu.solve(&rhs) else {
        return (x, lambda);
    };
    let xn = sol.rows(0, n).into_owned();
    let ln = sol.rows(n, k).into_owned();
    let ok = xn.iter().chain(ln.iter()).all(|v| v.is_finite())
        && (&xn - &x).amax() <= 1e-6 * (1.0 + x.amax())
        && p.stationarity_residual(&xn, &scatter(working, &ln, p.b.len()))
            <= p.stationarity_residual(&x, &scatter(working, &lambda, p.b.len())).max(1e-300) * 10.0;
    if ok {
        (xn, ln)
    } else {
        (x, lambda)
    }
}

fn scatter(working: &[usize], vals: &DVector<f64>, m: usize) -> DVector<f64> {
    let mut out = DVector::zeros(m);
    for (k, &r) in working.iter().enumerate() {
        out[r] = vals[k];
    }
    out
}
