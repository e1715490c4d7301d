//! Primal-dual interior point method for linear and second-order cone
//! programs
//!
//! ```text
//! minimize  c^T x   subject to  A x = b,  G x + s = h,  s in K
//! ```
//!
//! where `K` is a product of a nonnegative orthant and second-order cones
//! `{(t, u) : |u| <= t}`. The iteration follows the homogeneous self-dual
//! embedding with Nesterov-Todd scaling and a Mehrotra predictor-corrector,
//! so infeasible or unbounded problems end with a certificate rather than
//! diverging.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Iterations without progress after which the best iterate is returned.
const STALL_ITERATIONS: usize = 8;

/// Sparse row: `(column, value)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct ConeSpec {
    /// Leading orthant rows.
    pub nonneg: usize,
    /// Sizes of the second-order cone blocks that follow.
    pub soc: Vec<usize>,
}

impl ConeSpec {
    pub fn dim(&self) -> usize {
        self.nonneg + self.soc.iter().sum::<usize>()
    }

    /// Degree of the cone (number of orthant rows plus number of blocks).
    pub fn degree(&self) -> usize {
        self.nonneg + self.soc.len()
    }
}

#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: Vec<SparseRow>,
    pub h: DVector<f64>,
    pub cones: ConeSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConicStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    /// Iteration limit or stalled progress; the point is the last iterate.
    Inaccurate,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: ConicStatus,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub s: DVector<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct IpmOptions {
    pub max_iter: usize,
    pub feastol: f64,
    pub abstol: f64,
    pub reltol: f64,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self { max_iter: 150, feastol: 1e-8, abstol: 1e-8, reltol: 1e-8, step_fraction: 0.99 }
    }
}

impl ConicProblem {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.a.nrows() != self.b.len() || (self.a.nrows() > 0 && self.a.ncols() != n) {
            return Err(Error::Dimension("A does not match b or c".into()));
        }
        if self.g.len() != self.h.len() || self.cones.dim() != self.h.len() {
            return Err(Error::Dimension("G, h and the cone sizes disagree".into()));
        }
        if self.cones.soc.iter().any(|&q| q == 0) {
            return Err(Error::Dimension("empty second-order cone block".into()));
        }
        if self.g.iter().flatten().any(|&(j, _)| j >= n) {
            return Err(Error::Dimension("G column out of range".into()));
        }
        Ok(())
    }

    pub fn g_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.g.len(), self.g.iter().map(|r| r.iter().map(|&(j, v)| v * x[j]).sum()))
    }

    pub fn gt_mul(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n());
        for (i, r) in self.g.iter().enumerate() {
            for &(j, v) in r {
                out[j] += v * z[i];
            }
        }
        out
    }
}

/// Cone geometry helpers over the block layout.
struct Cones<'a> {
    spec: &'a ConeSpec,
}

impl Cones<'_> {
    fn blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut start = self.spec.nonneg;
        self.spec.soc.iter().map(move |&q| {
            let b = (start, q);
            start += q;
            b
        })
    }

    fn identity(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.spec.dim());
        for i in 0..self.spec.nonneg {
            e[i] = 1.0;
        }
        for (st, _) in self.blocks() {
            e[st] = 1.0;
        }
        e
    }

    /// Smallest "eigenvalue" of `u` in the Jordan algebra (interior iff > 0).
    fn min_eig(&self, u: &DVector<f64>) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.spec.nonneg {
            m = m.min(u[i]);
        }
        for (st, q) in self.blocks() {
            let t = u[st];
            let nrm = u.rows(st + 1, q - 1).norm();
            m = m.min(t - nrm);
        }
        m
    }

    /// Jordan product `u o v`.
    fn circ(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(u.len());
        for i in 0..self.spec.nonneg {
            out[i] = u[i] * v[i];
        }
        for (st, q) in self.blocks() {
            let uu = u.rows(st, q);
            let vv = v.rows(st, q);
            out[st] = uu.dot(&vv);
            for k in 1..q {
                out[st + k] = uu[0] * vv[k] + vv[0] * uu[k];
            }
        }
        out
    }

    /// Solves `lambda o u = d` for `u`.
    fn circ_div(&self, lambda: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(d.len());
        for i in 0..self.spec.nonneg {
            out[i] = d[i] / lambda[i];
        }
        for (st, q) in self.blocks() {
            let l = lambda.rows(st, q);
            let dd = d.rows(st, q);
            let l1 = l.rows(1, q - 1);
            let d1 = dd.rows(1, q - 1);
            let det = (l[0] - l1.norm()) * (l[0] + l1.norm());
            let u0 = (l[0] * dd[0] - l1.dot(&d1)) / det;
            out[st] = u0;
            for k in 1..q {
                out[st + k] = (dd[k] - u0 * l[k]) / l[0];
            }
        }
        out
    }

    /// Largest `alpha` with `u + alpha d` in the cone (`u` interior).
    fn max_step(&self, u: &DVector<f64>, d: &DVector<f64>) -> f64 {
        let mut alpha = f64::INFINITY;
        for i in 0..self.spec.nonneg {
            if d[i] < 0.0 {
                alpha = alpha.min(-u[i] / d[i]);
            }
        }
        for (st, q) in self.blocks() {
            let uu = u.rows(st, q);
            let dd = d.rows(st, q);
            let u1 = uu.rows(1, q - 1);
            let d1 = dd.rows(1, q - 1);
            let a = dd[0] * dd[0] - d1.norm_squared();
            let b = 2.0 * (uu[0] * dd[0] - u1.dot(&d1));
            let c = (uu[0] - u1.norm()) * (uu[0] + u1.norm());
            alpha = alpha.min(smallest_positive_root(a, b, c.max(0.0)));
            if dd[0] < 0.0 {
                alpha = alpha.min(-uu[0] / dd[0]);
            }
        }
        alpha
    }
}

fn smallest_positive_root(a: f64, b: f64, c: f64) -> f64 {
    if a == 0.0 {
        return if b < 0.0 { -c / b } else { f64::INFINITY };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut best = f64::INFINITY;
    for r in [q / a, if q != 0.0 { c / q } else { f64::INFINITY }] {
        if r > 0.0 && r < best {
            best = r;
        }
    }
    best
}

/// Nesterov-Todd scaling of one second-order cone block.
#[derive(Debug, Clone)]
pub struct SocScaling {
    pub eta: f64,
    /// Normalised scaling point with `wbar^T J wbar = 1`.
    pub wbar: DVector<f64>,
}

impl SocScaling {
    pub fn new(s: &DVector<f64>, z: &DVector<f64>) -> Self {
        let q = s.len();
        let jdet = |u: &DVector<f64>| {
            let n1 = u.rows(1, q - 1).norm();
            (u[0] - n1) * (u[0] + n1)
        };
        let sn = jdet(s).sqrt();
        let zn = jdet(z).sqrt();
        let sb = s / sn;
        let zb = z / zn;
        let gamma = ((1.0 + zb.dot(&sb)) / 2.0).sqrt();
        let mut wbar = DVector::zeros(q);
        wbar[0] = (sb[0] + zb[0]) / (2.0 * gamma);
        for k in 1..q {
            wbar[k] = (sb[k] - zb[k]) / (2.0 * gamma);
        }
        Self { eta: (sn / zn).sqrt(), wbar }
    }

    fn apply_bar(wbar: &DVector<f64>, sign: f64, u: &DVector<f64>) -> DVector<f64> {
        // W(w) u with w = (w0, sign * w1).
        let q = u.len();
        let w0 = wbar[0];
        let w1 = wbar.rows(1, q - 1) * sign;
        let u1 = u.rows(1, q - 1);
        let mut out = DVector::zeros(q);
        out[0] = w0 * u[0] + w1.dot(&u1);
        let coef = u[0] + w1.dot(&u1) / (1.0 + w0);
        for k in 1..q {
            out[k] = u[k] + coef * w1[k - 1];
        }
        out
    }

    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        Self::apply_bar(&self.wbar, 1.0, u) * self.eta
    }

    pub fn apply_inv(&self, u: &DVector<f64>) -> DVector<f64> {
        Self::apply_bar(&self.wbar, -1.0, u) / self.eta
    }

    /// Dense `W^-2 = eta^-2 (2 (J w)(J w)^T - J)`.
    pub fn inv_squared(&self) -> DMatrix<f64> {
        let q = self.wbar.len();
        let mut jw = self.wbar.clone();
        for k in 1..q {
            jw[k] = -jw[k];
        }
        let mut m = &jw * jw.transpose() * 2.0;
        m[(0, 0)] -= 1.0;
        for k in 1..q {
            m[(k, k)] += 1.0;
        }
        m / (self.eta * self.eta)
    }

    /// Dense `W^2 = eta^2 (2 w w^T - J)`.
    pub fn squared(&self) -> DMatrix<f64> {
        let q = self.wbar.len();
        let mut m = &self.wbar * self.wbar.transpose() * 2.0;
        m[(0, 0)] -= 1.0;
        for k in 1..q {
            m[(k, k)] += 1.0;
        }
        m * (self.eta * self.eta)
    }
}

struct Scaling {
    orth: Vec<f64>,
    soc: Vec<SocScaling>,
}

impl Scaling {
    fn new(cones: &Cones, s: &DVector<f64>, z: &DVector<f64>) -> Self {
        let orth = (0..cones.spec.nonneg).map(|i| (s[i] / z[i]).sqrt()).collect();
        let soc = cones
            .blocks()
            .map(|(st, q)| SocScaling::new(&s.rows(st, q).into_owned(), &z.rows(st, q).into_owned()))
            .collect();
        Self { orth, soc }
    }

    fn apply(&self, cones: &Cones, u: &DVector<f64>, inverse: bool) -> DVector<f64> {
        let mut out = DVector::zeros(u.len());
        for (i, w) in self.orth.iter().enumerate() {
            out[i] = if inverse { u[i] / w } else { u[i] * w };
        }
        for ((st, q), sc) in cones.blocks().zip(&self.soc) {
            let blk = u.rows(st, q).into_owned();
            let r = if inverse { sc.apply_inv(&blk) } else { sc.apply(&blk) };
            out.rows_mut(st, q).copy_from(&r);
        }
        out
    }

    /// `W^2 u`.
    fn apply_sq(&self, cones: &Cones, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(u.len());
        for (i, w) in self.orth.iter().enumerate() {
            out[i] = u[i] * w * w;
        }
        for ((st, q), sc) in cones.blocks().zip(&self.soc) {
            let blk = u.rows(st, q).into_owned();
            out.rows_mut(st, q).copy_from(&sc.apply(&sc.apply(&blk)));
        }
        out
    }

    /// `W^-2 u`.
    fn apply_inv_sq(&self, cones: &Cones, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(u.len());
        for (i, w) in self.orth.iter().enumerate() {
            out[i] = u[i] / (w * w);
        }
        for ((st, q), sc) in cones.blocks().zip(&self.soc) {
            let blk = u.rows(st, q).into_owned();
            out.rows_mut(st, q).copy_from(&sc.apply_inv(&sc.apply_inv(&blk)));
        }
        out
    }
}

/// Factorisation of `[[G^T W^-2 G, A^T], [A, 0]]` reused for several
/// right-hand sides of `[[0, A^T, G^T], [A, 0, 0], [G, 0, -W^2]]`.
struct KktSolver<'a> {
    p: &'a ConicProblem,
    cones: &'a Cones<'a>,
    scaling: &'a Scaling,
    reduced: DMatrix<f64>,
    factor: Factor,
}

/// Factorisation of the reduced system `[[M, A^T], [A, 0]]`.
enum Factor {
    /// Cholesky of `M` and of the Schur complement `A M^-1 A^T`; keeps the
    /// structured ill-conditioning of late iterations harmless.
    Schur {
        m: nalgebra::Cholesky<f64, nalgebra::Dyn>,
        s: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    },
    /// Regularised LU, used when `M` or the Schur complement is not
    /// numerically definite.
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl<'a> KktSolver<'a> {
    fn new(p: &'a ConicProblem, cones: &'a Cones<'a>, scaling: &'a Scaling) -> Result<Self> {
        let n = p.n();
        let np = p.a.nrows();
        let mut m = DMatrix::zeros(n, n);
        for (i, w) in scaling.orth.iter().enumerate() {
            let wi = 1.0 / (w * w);
            let row = &p.g[i];
            for &(j, vj) in row {
                for &(k, vk) in row {
                    m[(j, k)] += wi * vj * vk;
                }
            }
        }
        for ((st, q), sc) in cones.blocks().zip(&scaling.soc) {
            // Gram matrix of W^-1 G_block, formed column by column through the
            // structured inverse, which is better conditioned than W^-2.
            let cols: Vec<usize> = {
                let mut c: Vec<usize> = (st..st + q).flat_map(|i| p.g[i].iter().map(|&(j, _)| j)).collect();
                c.sort_unstable();
                c.dedup();
                c
            };
            let mut blk = DMatrix::zeros(q, cols.len());
            for a in 0..q {
                for &(j, v) in &p.g[st + a] {
                    let k = cols.binary_search(&j).expect("column collected above");
                    blk[(a, k)] += v;
                }
            }
            let mut scaled = DMatrix::zeros(q, cols.len());
            for k in 0..cols.len() {
                scaled.set_column(k, &sc.apply_inv(&blk.column(k).into_owned()));
            }
            let gram = scaled.transpose() * &scaled;
            for (a, &j) in cols.iter().enumerate() {
                for (b, &k) in cols.iter().enumerate() {
                    m[(j, k)] += gram[(a, b)];
                }
            }
        }
        let mut reduced = DMatrix::zeros(n + np, n + np);
        reduced.view_mut((0, 0), (n, n)).copy_from(&m);
        reduced.view_mut((0, n), (n, np)).copy_from(&p.a.transpose());
        reduced.view_mut((n, 0), (np, n)).copy_from(&p.a);
        let scale = 1.0 + m.diagonal().amax();
        let delta = 1e-13 * scale;
        let factor = Self::schur(&m, &p.a, delta).map_or_else(
            || {
                let mut reg = reduced.clone();
                for i in 0..n {
                    reg[(i, i)] += delta;
                }
                for i in n..n + np {
                    reg[(i, i)] -= delta;
                }
                let lu = reg.lu();
                if lu.is_invertible() {
                    Ok(Factor::Lu(lu))
                } else {
                    Err(Error::Numerical("singular reduced KKT matrix".into()))
                }
            },
            Ok,
        )?;
        Ok(Self { p, cones, scaling, reduced, factor })
    }

    fn schur(m: &DMatrix<f64>, a: &DMatrix<f64>, delta: f64) -> Option<Factor> {
        let mut reg = m.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += delta;
        }
        let mc = reg.cholesky()?;
        if a.nrows() == 0 {
            return Some(Factor::Schur { m: mc, s: None });
        }
        let minv_at = mc.solve(&a.transpose());
        let sc = a * minv_at;
        let sc = (&sc + sc.transpose()) * 0.5;
        let sc = sc.cholesky()?;
        Some(Factor::Schur { m: mc, s: Some(sc) })
    }

    fn solve_reduced(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.p.n();
        let np = self.p.a.nrows();
        match &self.factor {
            Factor::Lu(lu) => lu.solve(rhs).unwrap_or_else(|| DVector::zeros(n + np)),
            Factor::Schur { m, s } => {
                let q1 = rhs.rows(0, n).into_owned();
                let mut out = DVector::zeros(n + np);
                match s {
                    None => out.rows_mut(0, n).copy_from(&m.solve(&q1)),
                    Some(s) => {
                        let r2 = rhs.rows(n, np).into_owned();
                        let dy = s.solve(&(&self.p.a * m.solve(&q1) - r2));
                        let dx = m.solve(&(q1 - self.p.a.transpose() * &dy));
                        out.rows_mut(0, n).copy_from(&dx);
                        out.rows_mut(n, np).copy_from(&dy);
                    }
                }
                out
            }
        }
    }

    /// Solves the 3x3 system for right-hand side `(r1, r2, r3)`.
    fn solve_once(&self, r1: &DVector<f64>, r2: &DVector<f64>, r3: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = self.p.n();
        let np = self.p.a.nrows();
        let mut rhs = DVector::zeros(n + np);
        rhs.rows_mut(0, n).copy_from(&(r1 + self.p.gt_mul(&self.scaling.apply_inv_sq(self.cones, r3))));
        rhs.rows_mut(n, np).copy_from(r2);
        let mut sol = self.solve_reduced(&rhs);
        sol += self.solve_reduced(&(&rhs - &self.reduced * &sol));
        let dx = sol.rows(0, n).into_owned();
        let dy = sol.rows(n, np).into_owned();
        let dz = self.scaling.apply_inv_sq(self.cones, &(self.p.g_mul(&dx) - r3));
        (dx, dy, dz)
    }

    /// Solves the 3x3 system for right-hand side `(r1, r2, r3)`, refining
    /// against the unreduced equations.
    fn solve(&self, r1: &DVector<f64>, r2: &DVector<f64>, r3: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let (mut dx, mut dy, mut dz) = self.solve_once(r1, r2, r3);
        let scale = 1.0 + r1.amax().max(r2.amax()).max(r3.amax());
        for _ in 0..4 {
            let e1 = r1 - (self.p.a.transpose() * &dy + self.p.gt_mul(&dz));
            let e2 = r2 - &self.p.a * &dx;
            let e3 = r3 - (self.p.g_mul(&dx) - self.scaling.apply_sq(self.cones, &dz));
            let err = e1.amax().max(e2.amax()).max(e3.amax());
            if err <= 1e-14 * scale {
                break;
            }
            let (cx, cy, cz) = self.solve_once(&e1, &e2, &e3);
            dx += cx;
            dy += cy;
            dz += cz;
        }
        (dx, dy, dz)
    }
}

/// Passes of the Ruiz equilibration applied before the interior point.
const EQUILIBRATION_PASSES: usize = 10;

/// Diagonal scalings `A' = E A D`, `G' = F G D`, `c' = D c`. `F` is
/// constant on each second-order cone block so the cone is preserved.
struct Equilibration {
    d: DVector<f64>,
    e: DVector<f64>,
    f: DVector<f64>,
}

impl Equilibration {
    fn new(p: &ConicProblem) -> Self {
        let n = p.n();
        let np = p.a.nrows();
        let m = p.h.len();
        let mut d = DVector::from_element(n, 1.0);
        let mut e = DVector::from_element(np, 1.0);
        let mut f = DVector::from_element(m, 1.0);
        let root = |v: f64| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 };
        for _ in 0..EQUILIBRATION_PASSES {
            let mut col = DVector::zeros(n);
            let mut row_a = DVector::zeros(np);
            let mut row_g = DVector::zeros(m);
            for i in 0..np {
                for j in 0..n {
                    let v = (e[i] * p.a[(i, j)] * d[j]).abs();
                    col[j] = f64::max(col[j], v);
                    row_a[i] = f64::max(row_a[i], v);
                }
            }
            for (i, r) in p.g.iter().enumerate() {
                for &(j, v) in r {
                    let v = (f[i] * v * d[j]).abs();
                    col[j] = f64::max(col[j], v);
                    row_g[i] = f64::max(row_g[i], v);
                }
            }
            let mut st = p.cones.nonneg;
            for &q in &p.cones.soc {
                let mx = row_g.rows(st, q).max();
                row_g.rows_mut(st, q).fill(mx);
                st += q;
            }
            for j in 0..n {
                d[j] *= root(col[j]);
            }
            for i in 0..np {
                e[i] *= root(row_a[i]);
            }
            for i in 0..m {
                f[i] *= root(row_g[i]);
            }
        }
        Self { d, e, f }
    }

    fn scale(&self, p: &ConicProblem) -> ConicProblem {
        let a = DMatrix::from_fn(p.a.nrows(), p.a.ncols(), |i, j| self.e[i] * p.a[(i, j)] * self.d[j]);
        let g = p
            .g
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().map(|&(j, v)| (j, self.f[i] * v * self.d[j])).collect())
            .collect();
        ConicProblem {
            c: p.c.component_mul(&self.d),
            a,
            b: p.b.component_mul(&self.e),
            g,
            h: p.h.component_mul(&self.f),
            cones: p.cones.clone(),
        }
    }
}

/// Solves the conic program after equilibrating it; residuals are
/// reported on the original data.
pub fn solve_conic(p: &ConicProblem, opts: &IpmOptions) -> Result<ConicSolution> {
    p.validate()?;
    let eq = Equilibration::new(p);
    let mut sol = solve_homogeneous(&eq.scale(p), opts)?;
    sol.x.component_mul_assign(&eq.d);
    sol.y.component_mul_assign(&eq.e);
    sol.z.component_mul_assign(&eq.f);
    sol.s.component_div_assign(&eq.f);
    match sol.status {
        ConicStatus::Optimal | ConicStatus::Inaccurate => {
            let ry = &p.a * &sol.x - &p.b;
            let rz = p.g_mul(&sol.x) + &sol.s - &p.h;
            let rx = p.a.transpose() * &sol.y + p.gt_mul(&sol.z) + &p.c;
            sol.primal_residual = (ry.norm() / (1.0 + p.b.norm())).max(rz.norm() / (1.0 + p.h.norm()));
            sol.dual_residual = rx.norm() / (1.0 + p.c.norm());
        }
        ConicStatus::PrimalInfeasible | ConicStatus::DualInfeasible => {}
    }
    Ok(sol)
}

fn solve_homogeneous(p: &ConicProblem, opts: &IpmOptions) -> Result<ConicSolution> {
    let n = p.n();
    let m = p.h.len();
    let np = p.b.len();
    let cones = Cones { spec: &p.cones };
    let e = cones.identity();
    let degree = p.cones.degree() as f64;

    // Initial point from two least-squares solves with W = I.
    let unit = Scaling {
        orth: vec![1.0; p.cones.nonneg],
        soc: p
            .cones
            .soc
            .iter()
            .map(|&q| {
                let mut w = DVector::zeros(q);
                w[0] = 1.0;
                SocScaling { eta: 1.0, wbar: w }
            })
            .collect(),
    };
    let (mut x, mut y, mut z, mut s) = {
        let k = KktSolver::new(p, &cones, &unit)?;
        let (x0, _, zp) = k.solve(&DVector::zeros(n), &p.b, &p.h);
        let s0 = -zp;
        let (_, y0, z0) = k.solve(&(-&p.c), &DVector::zeros(np), &DVector::zeros(m));
        (x0, y0, z0, s0)
    };
    // Shift both cone points strictly inside the cone.
    for u in [&mut s, &mut z] {
        let a = cones.min_eig(u);
        if m > 0 && a < 1e-8 {
            *u += &e * (1.0 - a);
        }
    }
    let mut tau = 1.0;
    let mut kappa = 1.0;

    let bnorm = p.b.norm();
    let hnorm = p.h.norm();
    let cnorm = p.c.norm();
    let mut last = None;
    // Best iterate seen, returned when the iteration stalls.
    let mut best: Option<(f64, ConicSolution)> = None;
    let mut best_iter = 0usize;
    for iter in 0..=opts.max_iter {
        let rx = p.a.transpose() * &y + p.gt_mul(&z) + &p.c * tau;
        let ry = -(&p.a * &x) + &p.b * tau;
        let rz = &s + p.g_mul(&x) - &p.h * tau;
        let ctx = p.c.dot(&x);
        let bty = p.b.dot(&y);
        let htz = p.h.dot(&z);
        let rt = kappa + ctx + bty + htz;

        let pres = (ry.norm() / (1.0 + bnorm)).max(rz.norm() / (1.0 + hnorm)) / tau;
        let dres = rx.norm() / (1.0 + cnorm) / tau;
        let pcost = ctx / tau;
        let dcost = -(bty + htz) / tau;
        let gap = s.dot(&z) / (tau * tau);
        let relgap = if pcost < 0.0 {
            gap / -pcost
        } else if dcost > 0.0 {
            gap / dcost
        } else {
            f64::INFINITY
        };
        log::trace!("ipm {iter}: pres {pres:.2e} dres {dres:.2e} gap {gap:.2e} pcost {pcost:.8} tau {tau:.2e}");
        let snapshot = |status| ConicSolution {
            status,
            x: &x / tau,
            y: &y / tau,
            z: &z / tau,
            s: &s / tau,
            primal_objective: pcost,
            dual_objective: dcost,
            iterations: iter,
            primal_residual: pres,
            dual_residual: dres,
        };
        if pres < opts.feastol && dres < opts.feastol && (gap < opts.abstol || relgap < opts.reltol) {
            return Ok(snapshot(ConicStatus::Optimal));
        }
        let merit = pres.max(dres).max(gap.min(relgap));
        if merit.is_finite() && best.as_ref().is_none_or(|(b, _)| merit < *b) {
            best = Some((merit, snapshot(ConicStatus::Inaccurate)));
            best_iter = iter;
        } else if iter >= best_iter + STALL_ITERATIONS && best.as_ref().is_some_and(|(b, _)| *b < opts.feastol.sqrt()) {
            // Stalled close to a solution; iterates that are still far off
            // may be heading for an infeasibility certificate instead.
            break;
        }
        // Infeasibility certificates.
        let dual_ray = bty + htz;
        if dual_ray < 0.0 {
            let r = (p.a.transpose() * &y + p.gt_mul(&z)).norm() / (1.0 + cnorm);
            if r / -dual_ray < opts.feastol {
                let scale = -dual_ray;
                return Ok(ConicSolution {
                    status: ConicStatus::PrimalInfeasible,
                    x: DVector::zeros(n),
                    y: &y / scale,
                    z: &z / scale,
                    s: DVector::zeros(m),
                    primal_objective: f64::INFINITY,
                    dual_objective: f64::INFINITY,
                    iterations: iter,
                    primal_residual: pres,
                    dual_residual: dres,
                });
            }
        }
        if ctx < 0.0 {
            let r = (&p.a * &x).norm().max((p.g_mul(&x) + &s).norm()) / (1.0 + bnorm.max(hnorm));
            if r / -ctx < opts.feastol {
                return Ok(ConicSolution {
                    status: ConicStatus::DualInfeasible,
                    x: &x / -ctx,
                    y: DVector::zeros(np),
                    z: DVector::zeros(m),
                    s: &s / -ctx,
                    primal_objective: f64::NEG_INFINITY,
                    dual_objective: f64::NEG_INFINITY,
                    iterations: iter,
                    primal_residual: pres,
                    dual_residual: dres,
                });
            }
        }
        if iter == opts.max_iter {
            last = Some(snapshot(ConicStatus::Inaccurate));
            break;
        }

        let mu = (s.dot(&z) + tau * kappa) / (degree + 1.0);
        let scaling = Scaling::new(&cones, &s, &z);
        let lambda = scaling.apply(&cones, &z, false);
        let kkt = match KktSolver::new(p, &cones, &scaling) {
            Ok(k) => k,
            Err(_) => {
                last = Some(snapshot(ConicStatus::Inaccurate));
                break;
            }
        };
        let (x1, y1, z1) = kkt.solve(&(-&p.c), &p.b, &p.h);
        let denom_base = p.c.dot(&x1) + p.b.dot(&y1) + p.h.dot(&z1);

        // Direction for a given centering and complementarity right-hand sides.
        let direction = |sigma: f64, ds: &DVector<f64>, dk: f64| {
            let r1 = -&rx * (1.0 - sigma);
            let r2 = &ry * (1.0 - sigma);
            let wl = scaling.apply(&cones, &cones.circ_div(&lambda, ds), false);
            let r3 = -&rz * (1.0 - sigma) - &wl;
            let (x2, y2, z2) = kkt.solve(&r1, &r2, &r3);
            let dtau = (-(1.0 - sigma) * rt - dk / tau - (p.c.dot(&x2) + p.b.dot(&y2) + p.h.dot(&z2)))
                / (denom_base - kappa / tau);
            let dx = x2 + &x1 * dtau;
            let dy = y2 + &y1 * dtau;
            let dz = z2 + &z1 * dtau;
            // Taken from the linearised residual row so primal residuals stay exact.
            let ds_ = -&rz * (1.0 - sigma) + &p.h * dtau - p.g_mul(&dx);
            let dkappa = (dk - kappa * dtau) / tau;
            (dx, dy, dz, ds_, dtau, dkappa)
        };
        let step_len = |dz: &DVector<f64>, ds: &DVector<f64>, dtau: f64, dkappa: f64| {
            let mut a = cones.max_step(&s, ds).min(cones.max_step(&z, dz));
            if dtau < 0.0 {
                a = a.min(-tau / dtau);
            }
            if dkappa < 0.0 {
                a = a.min(-kappa / dkappa);
            }
            a
        };

        // Predictor.
        let ds_aff = -cones.circ(&lambda, &lambda);
        let dk_aff = -tau * kappa;
        let (_, _, dz_a, ds_a, dtau_a, dkappa_a) = direction(0.0, &ds_aff, dk_aff);
        let alpha_aff = step_len(&dz_a, &ds_a, dtau_a, dkappa_a).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        // Corrector with the second-order term.
        let wds = scaling.apply(&cones, &ds_a, true);
        let wdz = scaling.apply(&cones, &dz_a, false);
        let ds_cc = -cones.circ(&lambda, &lambda) + &e * (sigma * mu) - cones.circ(&wds, &wdz);
        let dk_cc = -tau * kappa + sigma * mu - dtau_a * dkappa_a;
        let (dx, dy, dz, ds, dtau, dkappa) = direction(sigma, &ds_cc, dk_cc);
        let alpha = (opts.step_fraction * step_len(&dz, &ds, dtau, dkappa)).min(1.0);
        if !(alpha > 1e-14) {
            last = Some(snapshot(ConicStatus::Inaccurate));
            break;
        }
        x += &dx * alpha;
        y += &dy * alpha;
        z += &dz * alpha;
        s += &ds * alpha;
        tau += alpha * dtau;
        kappa += alpha * dkappa;
        if !(x.iter().chain(z.iter()).all(|v| v.is_finite()) && tau.is_finite()) {
            break;
        }
    }
    match (last, best) {
        (_, Some((_, b))) => Ok(b),
        (Some(l), None) => Ok(l),
        (None, None) => Err(Error::Numerical("interior point iterate is not finite".into())),
    }
}
