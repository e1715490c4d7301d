//! Mixed-binary conic models, presolve and best-first branch-and-bound.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use super::conic::{solve_conic, ConeSpec, ConicProblem, ConicStatus, IpmOptions, SparseRow};
use crate::error::{Error, Result};

const PRESOLVE_TOL: f64 = 1e-9;

/// `sum(coef * x_j) + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn new(terms: Vec<(usize, f64)>, constant: f64) -> Self {
        Self { terms, constant }
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, a)| a * x[j]).sum::<f64>()
    }

    /// Substitutes fixed variables and merges repeated indices.
    fn reduce(&self, fixed: &[Option<f64>]) -> Affine {
        let mut constant = self.constant;
        let mut acc: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(j, a) in &self.terms {
            match fixed[j] {
                Some(v) => constant += a * v,
                None => acc.push((j, a)),
            }
        }
        acc.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(acc.len());
        for (j, a) in acc {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += a,
                _ => merged.push((j, a)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        Affine { terms: merged, constant }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarSpec {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
    pub binary: bool,
}

/// `min c^T x` subject to `le_i(x) <= 0`, `eq_i(x) = 0` and
/// `|xs(x)| <= t(x)` for each cone, with some variables binary.
#[derive(Debug, Clone, Default)]
pub struct MixedConicModel {
    pub vars: Vec<VarSpec>,
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    pub le: Vec<Affine>,
    pub eq: Vec<Affine>,
    pub soc: Vec<(Affine, Vec<Affine>)>,
}

impl MixedConicModel {
    pub fn add_var(&mut self, name: impl Into<String>, lb: f64, ub: f64, binary: bool) -> usize {
        self.vars.push(VarSpec { name: name.into(), lb, ub, binary });
        self.objective.push(0.0);
        self.vars.len() - 1
    }

    pub fn add_cost(&mut self, j: usize, c: f64) {
        self.objective[j] += c;
    }

    /// `sum(terms) <= rhs`.
    pub fn add_le(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.le.push(Affine::new(terms, -rhs));
    }

    /// `sum(terms) = rhs`.
    pub fn add_eq(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.eq.push(Affine::new(terms, -rhs));
    }

    /// `|xs| <= t`.
    pub fn add_soc(&mut self, t: Affine, xs: Vec<Affine>) {
        self.soc.push((t, xs));
    }

    pub fn binaries(&self) -> Vec<usize> {
        (0..self.vars.len()).filter(|&j| self.vars[j].binary).collect()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_constant + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for (j, s) in self.vars.iter().enumerate() {
            v = v.max(s.lb - x[j]).max(x[j] - s.ub);
        }
        for r in &self.le {
            v = v.max(r.eval(x));
        }
        for r in &self.eq {
            v = v.max(r.eval(x).abs());
        }
        for (t, xs) in &self.soc {
            let n = xs.iter().map(|a| a.eval(x).powi(2)).sum::<f64>().sqrt();
            v = v.max(n - t.eval(x));
        }
        v
    }
}

/// Outcome of presolving a model with some variables fixed.
enum Lowered {
    Infeasible(String),
    Problem { conic: ConicProblem, columns: Vec<usize>, fixed: Vec<Option<f64>> },
}

fn lower(model: &MixedConicModel, fixings: &[Option<f64>]) -> Lowered {
    let n = model.vars.len();
    let mut fixed: Vec<Option<f64>> = fixings.to_vec();
    let mut lb: Vec<f64> = model.vars.iter().map(|v| v.lb).collect();
    let mut ub: Vec<f64> = model.vars.iter().map(|v| v.ub).collect();
    for j in 0..n {
        if let Some(v) = fixed[j] {
            if v < lb[j] - PRESOLVE_TOL || v > ub[j] + PRESOLVE_TOL {
                return Lowered::Infeasible(format!("{} fixed outside its bounds", model.vars[j].name));
            }
        }
    }
    let mut le: Vec<Affine> = model.le.clone();
    let mut eq: Vec<Affine> = model.eq.clone();
    let mut soc: Vec<(Affine, Vec<Affine>)> = model.soc.clone();

    loop {
        let mut changed = false;
        for j in 0..n {
            if fixed[j].is_none() {
                if lb[j] > ub[j] + PRESOLVE_TOL {
                    return Lowered::Infeasible(format!("empty domain for {}", model.vars[j].name));
                }
                if ub[j] - lb[j] <= PRESOLVE_TOL {
                    let v = if model.vars[j].binary { lb[j].round() } else { 0.5 * (lb[j] + ub[j]) };
                    fixed[j] = Some(v);
                    changed = true;
                }
            }
        }
        let mut next_le = Vec::with_capacity(le.len());
        for r in le.drain(..) {
            let r = r.reduce(&fixed);
            match r.terms.len() {
                0 => {
                    if r.constant > PRESOLVE_TOL * (1.0 + r.constant.abs()) {
                        return Lowered::Infeasible("violated constant inequality".into());
                    }
                }
                1 => {
                    let (j, a) = r.terms[0];
                    let bound = -r.constant / a;
                    if a > 0.0 {
                        if bound < ub[j] {
                            ub[j] = bound;
                            changed = true;
                        }
                    } else if bound > lb[j] {
                        lb[j] = bound;
                        changed = true;
                    }
                }
                _ => next_le.push(r),
            }
        }
        le = next_le;
        let mut next_eq = Vec::with_capacity(eq.len());
        for r in eq.drain(..) {
            let r = r.reduce(&fixed);
            match r.terms.len() {
                0 => {
                    if r.constant.abs() > PRESOLVE_TOL * (1.0 + r.constant.abs()) {
                        return Lowered::Infeasible("violated constant equality".into());
                    }
                }
                1 => {
                    let (j, a) = r.terms[0];
                    let v = -r.constant / a;
                    if v < lb[j] - PRESOLVE_TOL || v > ub[j] + PRESOLVE_TOL {
                        return Lowered::Infeasible(format!("{} forced outside its bounds", model.vars[j].name));
                    }
                    fixed[j] = Some(v.clamp(lb[j], ub[j]));
                    changed = true;
                }
                _ => next_eq.push(r),
            }
        }
        eq = next_eq;
        let mut next_soc = Vec::with_capacity(soc.len());
        for (t, xs) in soc.drain(..) {
            let t = t.reduce(&fixed);
            let xs: Vec<Affine> = xs.iter().map(|a| a.reduce(&fixed)).filter(|a| !(a.terms.is_empty() && a.constant == 0.0)).collect();
            if xs.iter().all(|a| a.terms.is_empty()) {
                // Cone with a constant right part is a linear row.
                let norm = xs.iter().map(|a| a.constant * a.constant).sum::<f64>().sqrt();
                let mut row = t.clone();
                for term in &mut row.terms {
                    term.1 = -term.1;
                }
                row.constant = norm - t.constant;
                le.push(row);
                changed = true;
            } else {
                next_soc.push((t, xs));
            }
        }
        soc = next_soc;
        if !changed {
            break;
        }
    }

    // Opposite inequality pairs are equalities.
    let key = |terms: &[(usize, f64)], sign: f64| -> Vec<(usize, u64)> {
        terms.iter().map(|&(j, a)| (j, (sign * a + 0.0).to_bits())).collect()
    };
    let mut by_key: HashMap<Vec<(usize, u64)>, Vec<usize>> = HashMap::new();
    for (i, r) in le.iter().enumerate() {
        by_key.entry(key(&r.terms, 1.0)).or_default().push(i);
    }
    let mut used = vec![false; le.len()];
    for i in 0..le.len() {
        if used[i] {
            continue;
        }
        if let Some(cands) = by_key.get(&key(&le[i].terms, -1.0)) {
            if let Some(&k) = cands.iter().find(|&&k| {
                !used[k] && k != i && (le[i].constant + le[k].constant).abs() <= PRESOLVE_TOL * (1.0 + le[i].constant.abs())
            }) {
                used[i] = true;
                used[k] = true;
                eq.push(le[i].clone());
            }
        }
    }
    let le: Vec<Affine> = le.into_iter().zip(&used).filter(|(_, &u)| !u).map(|(r, _)| r).collect();
    // Drop repeated equality rows.
    let mut seen: HashMap<(Vec<(usize, u64)>, u64), ()> = HashMap::new();
    let eq: Vec<Affine> = eq.into_iter().filter(|r| seen.insert((key(&r.terms, 1.0), r.constant.to_bits()), ()).is_none()).collect();

    let columns: Vec<usize> = (0..n).filter(|&j| fixed[j].is_none()).collect();
    let mut col_of = vec![usize::MAX; n];
    for (k, &j) in columns.iter().enumerate() {
        col_of[j] = k;
    }
    let nc = columns.len();
    let remap = |a: &Affine| -> SparseRow { a.terms.iter().map(|&(j, v)| (col_of[j], v)).collect() };

    let mut c = DVector::zeros(nc);
    for (k, &j) in columns.iter().enumerate() {
        c[k] = model.objective[j];
    }
    let mut a = DMatrix::zeros(eq.len(), nc);
    let mut b = DVector::zeros(eq.len());
    for (i, r) in eq.iter().enumerate() {
        for &(j, v) in &r.terms {
            a[(i, col_of[j])] += v;
        }
        b[i] = -r.constant;
    }
    let mut g: Vec<SparseRow> = Vec::new();
    let mut h: Vec<f64> = Vec::new();
    for r in &le {
        g.push(remap(r));
        h.push(-r.constant);
    }
    for (k, &j) in columns.iter().enumerate() {
        if lb[j].is_finite() {
            g.push(vec![(k, -1.0)]);
            h.push(-lb[j]);
        }
        if ub[j].is_finite() {
            g.push(vec![(k, 1.0)]);
            h.push(ub[j]);
        }
    }
    let nonneg = g.len();
    let mut sizes = Vec::new();
    for (t, xs) in &soc {
        for aff in std::iter::once(t).chain(xs.iter()) {
            g.push(aff.terms.iter().map(|&(j, v)| (col_of[j], -v)).collect());
            h.push(aff.constant);
        }
        sizes.push(1 + xs.len());
    }
    Lowered::Problem {
        conic: ConicProblem { c, a, b, g, h: DVector::from_vec(h), cones: ConeSpec { nonneg, soc: sizes } },
        columns,
        fixed,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RelaxationStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct Relaxation {
    pub status: RelaxationStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Continuous relaxation with the given variables fixed.
pub fn solve_relaxation(model: &MixedConicModel, fixings: &[Option<f64>], ipm: &IpmOptions) -> Result<Relaxation> {
    let infeasible = |iterations| Relaxation { status: RelaxationStatus::Infeasible, x: Vec::new(), objective: f64::INFINITY, iterations };
    match lower(model, fixings) {
        Lowered::Infeasible(reason) => {
            debug!("presolve infeasible: {reason}");
            Ok(infeasible(0))
        }
        Lowered::Problem { conic, columns, fixed } => {
            let mut x: Vec<f64> = fixed.iter().map(|v| v.unwrap_or(0.0)).collect();
            if columns.is_empty() {
                return Ok(Relaxation { status: RelaxationStatus::Optimal, objective: model.objective_value(&x), x, iterations: 0 });
            }
            let sol = solve_conic(&conic, ipm)?;
            match sol.status {
                ConicStatus::Optimal => {}
                ConicStatus::PrimalInfeasible => return Ok(infeasible(sol.iterations)),
                ConicStatus::DualInfeasible => return Err(Error::Numerical("relaxation is unbounded".into())),
                ConicStatus::Inaccurate => {
                    if sol.primal_residual.max(sol.dual_residual) > 1e-6
                        || (sol.primal_objective - sol.dual_objective).abs() > 1e-6 * (1.0 + sol.primal_objective.abs())
                    {
                        return Err(Error::Numerical(format!(
                            "interior point stalled (residuals {:.1e}/{:.1e}, objectives {} / {})",
                            sol.primal_residual, sol.dual_residual, sol.primal_objective, sol.dual_objective
                        )));
                    }
                    warn!("accepting reduced-accuracy relaxation (residual {:.1e})", sol.primal_residual.max(sol.dual_residual));
                }
            }
            for (k, &j) in columns.iter().enumerate() {
                x[j] = sol.x[k];
            }
            Ok(Relaxation { status: RelaxationStatus::Optimal, objective: model.objective_value(&x), x, iterations: sol.iterations })
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BnbOptions {
    pub rel_gap: f64,
    pub abs_gap: f64,
    pub int_tol: f64,
    pub node_limit: usize,
    pub ipm: IpmOptions,
}

impl Default for BnbOptions {
    fn default() -> Self {
        Self { rel_gap: 1e-6, abs_gap: 1e-9, int_tol: 1e-6, node_limit: 1_000_000, ipm: IpmOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnbStatus {
    Optimal,
    Infeasible,
    NodeLimit,
}

#[derive(Debug, Clone)]
pub struct BnbResult {
    pub status: BnbStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub root_bound: f64,
    pub best_bound: f64,
    pub nodes: usize,
}

struct Node {
    bound: f64,
    id: usize,
    fixings: Vec<Option<f64>>,
}

impl PartialEq for Node {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    // Max-heap on the reversed key: smallest bound first, then oldest node.
    fn cmp(&self, o: &Self) -> Ordering {
        o.bound.total_cmp(&self.bound).then_with(|| o.id.cmp(&self.id))
    }
}

/// Best-first branch-and-bound on the binary variables, branching on the
/// most fractional one (lowest index on ties).
pub fn branch_and_bound(model: &MixedConicModel, opts: &BnbOptions) -> Result<BnbResult> {
    let binaries = model.binaries();
    let n = model.vars.len();
    let mut heap = BinaryHeap::new();
    let mut next_id = 0usize;
    heap.push(Node { bound: f64::NEG_INFINITY, id: next_id, fixings: vec![None; n] });
    next_id += 1;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut root_bound = f64::NAN;
    let mut nodes = 0usize;
    let closed = |bound: f64, inc: &Option<(f64, Vec<f64>)>| match inc {
        Some((v, _)) => bound >= *v - opts.abs_gap.max(opts.rel_gap * v.abs().max(1.0)),
        None => false,
    };
    while let Some(node) = heap.pop() {
        if closed(node.bound, &incumbent) {
            heap.clear();
            break;
        }
        if nodes >= opts.node_limit {
            heap.push(node);
            break;
        }
        nodes += 1;
        let rel = solve_relaxation(model, &node.fixings, &opts.ipm)?;
        if nodes == 1 {
            root_bound = rel.objective;
        }
        if rel.status == RelaxationStatus::Infeasible || closed(rel.objective, &incumbent) {
            continue;
        }
        let pick = binaries
            .iter()
            .copied()
            .filter(|&j| node.fixings[j].is_none())
            .map(|j| (j, (rel.x[j] - rel.x[j].round()).abs()))
            .filter(|&(_, f)| f > opts.int_tol)
            .fold(None::<(usize, f64)>, |best, (j, f)| match best {
                Some((_, bf)) if bf >= f => best,
                _ => Some((j, f)),
            });
        match pick {
            None => {
                // Integral: polish with every binary fixed at its rounded value.
                let mut fix = node.fixings.clone();
                for &j in &binaries {
                    fix[j] = Some(rel.x[j].round().clamp(0.0, 1.0));
                }
                let leaf = solve_relaxation(model, &fix, &opts.ipm)?;
                if leaf.status == RelaxationStatus::Optimal && incumbent.as_ref().is_none_or(|(v, _)| leaf.objective < *v) {
                    debug!("incumbent {:.6} at node {nodes}", leaf.objective);
                    incumbent = Some((leaf.objective, leaf.x));
                }
            }
            Some((j, _)) => {
                for v in [0.0, 1.0] {
                    let mut fix = node.fixings.clone();
                    fix[j] = Some(v);
                    heap.push(Node { bound: rel.objective, id: next_id, fixings: fix });
                    next_id += 1;
                }
            }
        }
    }
    let open_bound = heap.iter().map(|nd| nd.bound).fold(f64::INFINITY, f64::min);
    match incumbent {
        Some((objective, x)) => {
            let status = if heap.is_empty() { BnbStatus::Optimal } else { BnbStatus::NodeLimit };
            Ok(BnbResult { status, best_bound: open_bound.min(objective), x, objective, root_bound, nodes })
        }
        None if heap.is_empty() => Ok(BnbResult {
            status: BnbStatus::Infeasible,
            x: Vec::new(),
            objective: f64::INFINITY,
            root_bound,
            best_bound: f64::INFINITY,
            nodes,
        }),
        None => Err(Error::Numerical(format!("no feasible point after {nodes} nodes"))),
    }
}

/// Exhaustive search over every assignment of the listed binaries (all
/// binaries when `over` is `None`); the oracle for small instances. Any
/// binary left free must come out integral in each continuous solve.
pub fn solve_by_enumeration(model: &MixedConicModel, over: Option<&[usize]>, ipm: &IpmOptions) -> Result<BnbResult> {
    let all = model.binaries();
    let binaries: Vec<usize> = over.map_or(all.clone(), |o| o.to_vec());
    if binaries.len() > 20 {
        return Err(Error::Domain(format!("{} binaries are too many to enumerate", binaries.len())));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let count = 1usize << binaries.len();
    for code in 0..count {
        let mut fix = vec![None; model.vars.len()];
        for (bit, &j) in binaries.iter().enumerate() {
            fix[j] = Some(((code >> bit) & 1) as f64);
        }
        let rel = solve_relaxation(model, &fix, ipm)?;
        if rel.status != RelaxationStatus::Optimal {
            continue;
        }
        if let Some(&j) = all.iter().find(|&&j| (rel.x[j] - rel.x[j].round()).abs() > 1e-6) {
            return Err(Error::Numerical(format!("binary {} is fractional with the enumerated set fixed", model.vars[j].name)));
        }
        if best.as_ref().is_none_or(|(v, _)| rel.objective < *v) {
            best = Some((rel.objective, rel.x));
        }
    }
    Ok(match best {
        Some((objective, x)) => BnbResult {
            status: BnbStatus::Optimal,
            x,
            objective,
            root_bound: f64::NAN,
            best_bound: objective,
            nodes: count,
        },
        None => BnbResult {
            status: BnbStatus::Infeasible,
            x: Vec::new(),
            objective: f64::INFINITY,
            root_bound: f64::NAN,
            best_bound: f64::INFINITY,
            nodes: count,
        },
    })
}
