//! Mixed-binary conic model of the unit commitment problem.

use serde::{Deserialize, Serialize};

use super::instance::{SourceBinding, UcInstance};
use super::milp::{Affine, MixedConicModel};
use crate::dro::SocStabilityConstraint;
use crate::error::{Error, Result};
use crate::regression::DecisionLayout;

/// Per-step stability constraint imposed on the augmented decision `X(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StabilityMode {
    None,
    /// `K^T X(t) >= g_lim`.
    Deterministic { k: Vec<f64>, g_lim: f64 },
    /// `|[sqrt(tau_i) q_i^T X(t)]| <= (mu^T X(t) - g_lim) / k_eta`.
    Dro(SocStabilityConstraint),
}

impl StabilityMode {
    pub fn name(&self) -> &'static str {
        match self {
            StabilityMode::None => "none",
            StabilityMode::Deterministic { .. } => "det",
            StabilityMode::Dro(_) => "dro",
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            StabilityMode::None => None,
            StabilityMode::Deterministic { k, .. } => Some(k.len()),
            StabilityMode::Dro(c) => Some(c.dim()),
        }
    }

    pub fn g_lim(&self) -> Option<f64> {
        match self {
            StabilityMode::None => None,
            StabilityMode::Deterministic { g_lim, .. } => Some(*g_lim),
            StabilityMode::Dro(c) => Some(c.g_lim),
        }
    }

    /// Surrogate margin at a decision in index units: `K^T X - g_lim` for
    /// the linear constraint, `mu^T X - g_lim - k_eta ||.||` for the robust one.
    pub fn margin(&self, x: &[f64]) -> Option<f64> {
        match self {
            StabilityMode::None => None,
            StabilityMode::Deterministic { k, g_lim } => Some(k.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - g_lim),
            StabilityMode::Dro(c) => (x.len() == c.dim())
                .then(|| c.mu.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - c.g_lim - c.k() * c.norm_term(x)),
        }
    }
}

/// Model variable indices.
#[derive(Debug, Clone, Default)]
pub struct VarIndex {
    /// `[unit][t]`
    pub commit: Vec<Vec<usize>>,
    /// `[unit][t]`
    pub startup: Vec<Vec<usize>>,
    /// `[scenario][unit][t]`, per-unit on the base power.
    pub dispatch: Vec<Vec<Vec<usize>>>,
    /// `[scenario][t]`
    pub wind: Vec<Vec<usize>>,
    /// `[scenario][t]`
    pub shed: Vec<Vec<usize>>,
    /// `[scenario][source][t]`: the linearised flag-wind product for
    /// sources bound to units.
    pub product: Vec<Vec<Vec<Option<usize>>>>,
}

#[derive(Debug, Clone)]
pub struct UcProblem {
    pub instance: UcInstance,
    pub mode: StabilityMode,
    pub model: MixedConicModel,
    pub vars: VarIndex,
    /// Source bindings used to form `X(t)`, when the instance defines them.
    pub bindings: Option<Vec<SourceBinding>>,
}

fn bindings_for(instance: &UcInstance, mode: &StabilityMode) -> Result<Option<Vec<SourceBinding>>> {
    match mode.dim() {
        Some(dim) => {
            if dim < 2 || dim % 2 != 0 {
                return Err(Error::Dimension(format!("stability coefficients of length {dim}")));
            }
            instance.source_bindings((dim - 2) / 2).map(Some)
        }
        None => {
            let n = instance
                .units
                .iter()
                .filter_map(|u| u.source)
                .chain(instance.fixed_sources.iter().map(|f| f.source))
                .max()
                .map(|m| m + 1);
            Ok(n.and_then(|n| instance.source_bindings(n).ok()))
        }
    }
}

/// Builds the mixed-binary model. Costs are in k£ and powers in per-unit
/// of `base_mva`.
pub fn build_uc(instance: &UcInstance, mode: &StabilityMode) -> Result<UcProblem> {
    instance.validate()?;
    let bindings = bindings_for(instance, mode)?;
    let t_len = instance.horizon;
    let sb = instance.base_mva;
    let scenarios = instance.dispatch_scenarios();
    let n_units = instance.units.len();
    let mut m = MixedConicModel::default();
    let mut v = VarIndex::default();

    // Commitment and startup binaries.
    for (g, unit) in instance.units.iter().enumerate() {
        let ty = instance.unit_type(g);
        let mut cs = Vec::with_capacity(t_len);
        let mut ss = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let (mut lb, mut ub) = (0.0, 1.0);
            match (unit.initially_on, unit.initial_hours) {
                (true, Some(h)) if t + h < ty.min_up => lb = 1.0,
                (false, Some(h)) if t + h < ty.min_down => ub = 0.0,
                _ => {}
            }
            if !unit.initially_on && t < ty.startup_time {
                ub = 0.0;
            }
            if lb > ub {
                return Err(Error::UcInfeasible(format!("unit {} has conflicting initial conditions", unit.name)));
            }
            let u = m.add_var(format!("u[{}][{t}]", unit.name), lb, ub, true);
            m.add_cost(u, ty.no_load_cost);
            cs.push(u);
            let s = m.add_var(format!("v[{}][{t}]", unit.name), 0.0, 1.0, true);
            m.add_cost(s, ty.startup_cost);
            ss.push(s);
        }
        v.commit.push(cs);
        v.startup.push(ss);
    }
    // Previous-step commitment as an affine expression.
    let prev_u = |g: usize, t: usize, v: &VarIndex| -> Affine {
        if t == 0 {
            Affine::constant(if instance.units[g].initially_on { 1.0 } else { 0.0 })
        } else {
            Affine::new(vec![(v.commit[g][t - 1], 1.0)], 0.0)
        }
    };
    for g in 0..n_units {
        let ty = instance.unit_type(g);
        for t in 0..t_len {
            let u = v.commit[g][t];
            let s = v.startup[g][t];
            let pu = prev_u(g, t, &v);
            // s >= u - u_prev
            let mut terms = vec![(u, 1.0), (s, -1.0)];
            terms.extend(pu.terms.iter().map(|&(j, a)| (j, -a)));
            m.add_le(terms, pu.constant);
            // s <= u
            m.add_le(vec![(s, 1.0), (u, -1.0)], 0.0);
            // s <= 1 - u_prev
            let mut terms = vec![(s, 1.0)];
            terms.extend(pu.terms.iter().cloned());
            m.add_le(terms, 1.0 - pu.constant);
            // Minimum up time: starts in the last min_up steps imply on.
            if ty.min_up > 1 {
                let lo = (t + 1).saturating_sub(ty.min_up);
                let mut terms: Vec<(usize, f64)> = (lo..=t).map(|k| (v.startup[g][k], 1.0)).collect();
                terms.push((u, -1.0));
                m.add_le(terms, 0.0);
            }
            // Minimum down time: shutdowns w = u_prev - u + s in the last
            // min_down steps imply off.
            if ty.min_down > 1 {
                let lo = (t + 1).saturating_sub(ty.min_down);
                let mut terms = Vec::new();
                let mut constant = 0.0;
                for k in lo..=t {
                    let p = prev_u(g, k, &v);
                    terms.extend(p.terms.iter().cloned());
                    constant += p.constant;
                    terms.push((v.commit[g][k], -1.0));
                    terms.push((v.startup[g][k], 1.0));
                }
                terms.push((u, 1.0));
                m.add_le(terms, 1.0 - constant);
            }
        }
    }

    // Dispatch stage per scenario.
    let layout = bindings.as_ref().map(|b| DecisionLayout::new(b.len()));
    for (si, sc) in scenarios.iter().enumerate() {
        let pr = sc.probability;
        let mut disp = Vec::with_capacity(n_units);
        for (g, unit) in instance.units.iter().enumerate() {
            let ty = instance.unit_type(g);
            let pmax = ty.capacity_mw / sb;
            let pmin = ty.min_output_mw / sb;
            let ramp = instance.ramp_fraction * pmax;
            let jump = ramp.max(pmin);
            let mut ps = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let p = m.add_var(format!("p[{si}][{}][{t}]", unit.name), 0.0, pmax, false);
                m.add_cost(p, pr * ty.marginal_cost * sb / 1000.0);
                let u = v.commit[g][t];
                m.add_le(vec![(p, 1.0), (u, -pmax)], 0.0);
                m.add_le(vec![(p, -1.0), (u, pmin)], 0.0);
                ps.push(p);
            }
            let p0 = unit.initial_output_mw.unwrap_or(if unit.initially_on { ty.min_output_mw } else { 0.0 }) / sb;
            for t in 0..t_len {
                let p = ps[t];
                let s = v.startup[g][t];
                let u = v.commit[g][t];
                let pu = prev_u(g, t, &v);
                // p(t) - p(t-1) <= ramp * u_prev + jump * s
                let mut terms = vec![(p, 1.0), (s, -jump)];
                terms.extend(pu.terms.iter().map(|&(j, a)| (j, -ramp * a)));
                let mut rhs = ramp * pu.constant;
                if t == 0 {
                    rhs += p0;
                } else {
                    terms.push((ps[t - 1], -1.0));
                }
                m.add_le(terms, rhs);
                // p(t-1) - p(t) <= ramp * u + jump * (u_prev - u + s)
                let mut terms = vec![(p, -1.0), (u, -ramp + jump), (s, -jump)];
                terms.extend(pu.terms.iter().map(|&(j, a)| (j, -jump * a)));
                let mut rhs = jump * pu.constant;
                if t == 0 {
                    rhs -= p0;
                } else {
                    terms.push((ps[t - 1], 1.0));
                }
                m.add_le(terms, rhs);
            }
            disp.push(ps);
        }
        let mut winds = Vec::with_capacity(t_len);
        let mut sheds = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let demand = sc.demand_mw[t] / sb;
            let avail = sc.wind_mw[t] / sb;
            let w = m.add_var(format!("w[{si}][{t}]"), 0.0, avail, false);
            let shed_ub = if instance.allow_shedding { demand } else { 0.0 };
            let sh = m.add_var(format!("shed[{si}][{t}]"), 0.0, shed_ub, false);
            m.add_cost(sh, pr * instance.shed_cost * sb / 1000.0);
            let mut terms: Vec<(usize, f64)> = (0..n_units).map(|g| (disp[g][t], 1.0)).collect();
            terms.push((w, 1.0));
            terms.push((sh, 1.0));
            m.add_eq(terms, demand);
            winds.push(w);
            sheds.push(sh);
        }
        // Augmented decision per step and the stability rows.
        let mut prods: Vec<Vec<Option<usize>>> = Vec::new();
        if let (Some(b), Some(layout)) = (&bindings, layout) {
            prods = vec![vec![None; t_len]; b.len()];
            for t in 0..t_len {
                let avail = sc.wind_mw[t] / sb;
                let w = winds[t];
                let mut x: Vec<Affine> = vec![Affine::constant(0.0); layout.dim()];
                x[layout.constant()] = Affine::constant(1.0);
                x[layout.wind()] = Affine::new(vec![(w, 1.0)], 0.0);
                for (i, bind) in b.iter().enumerate() {
                    match *bind {
                        SourceBinding::Fixed(on) => {
                            x[layout.flag(i)] = Affine::constant(if on { 1.0 } else { 0.0 });
                            x[layout.product(i)] = if on { Affine::new(vec![(w, 1.0)], 0.0) } else { Affine::constant(0.0) };
                        }
                        SourceBinding::Unit(g) => {
                            let u = v.commit[g][t];
                            let z = m.add_var(format!("z[{si}][{i}][{t}]"), 0.0, avail, false);
                            // z = u * w with 0 <= w <= avail.
                            m.add_le(vec![(z, 1.0), (u, -avail)], 0.0);
                            m.add_le(vec![(z, 1.0), (w, -1.0)], 0.0);
                            m.add_le(vec![(z, -1.0), (w, 1.0), (u, avail)], avail);
                            x[layout.flag(i)] = Affine::new(vec![(u, 1.0)], 0.0);
                            x[layout.product(i)] = Affine::new(vec![(z, 1.0)], 0.0);
                            prods[i][t] = Some(z);
                        }
                    }
                }
                add_stability_row(&mut m, mode, &x);
            }
        }
        v.dispatch.push(disp);
        v.wind.push(winds);
        v.shed.push(sheds);
        v.product.push(prods);
    }
    Ok(UcProblem { instance: instance.clone(), mode: mode.clone(), model: m, vars: v, bindings })
}

fn combine(coefs: &[f64], x: &[Affine]) -> Affine {
    let mut out = Affine::default();
    for (c, a) in coefs.iter().zip(x) {
        if *c == 0.0 {
            continue;
        }
        out.constant += c * a.constant;
        out.terms.extend(a.terms.iter().map(|&(j, v)| (j, c * v)));
    }
    out
}

/// `K^T X >= g_lim` as `g_lim - K^T X <= 0`.
fn add_linear_row(m: &mut MixedConicModel, k: &[f64], g_lim: f64, x: &[Affine]) {
    let e = combine(k, x);
    let terms = e.terms.iter().map(|&(j, a)| (j, -a)).collect();
    m.add_le(terms, e.constant - g_lim);
}

fn add_stability_row(m: &mut MixedConicModel, mode: &StabilityMode, x: &[Affine]) {
    match mode {
        StabilityMode::None => {}
        StabilityMode::Deterministic { k, g_lim } => add_linear_row(m, k, *g_lim, x),
        StabilityMode::Dro(c) if c.is_deterministic() => add_linear_row(m, &c.mu, c.g_lim, x),
        StabilityMode::Dro(c) => {
            let k = c.k();
            let mut t = combine(&c.mu, x);
            t.constant -= c.g_lim;
            for term in &mut t.terms {
                term.1 /= k;
            }
            t.constant /= k;
            let xs = c.factor_rows().iter().map(|row| combine(row, x)).collect();
            m.add_soc(t, xs);
        }
    }
}
