use serde::{Deserialize, Serialize};
use std::io::Write;

use super::build::UcProblem;
use super::instance::SourceBinding;
use super::milp::{branch_and_bound, solve_by_enumeration, BnbOptions, BnbResult, BnbStatus};
use crate::dro::{equivalent_limit, SocStabilityConstraint};
use crate::error::{Error, Result};
use crate::grid::{evaluate_gscr, GridModel, OperatingPoint, MIN_GFL_POWER};
use crate::regression::dataset::format_float;
use crate::regression::AugmentedDecision;

/// Dispatch of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDispatch {
    pub probability: f64,
    /// `[unit][t]` in MW.
    pub dispatch_mw: Vec<Vec<f64>>,
    pub wind_mw: Vec<f64>,
    pub shed_mw: Vec<f64>,
    /// Augmented decision `X(t)` per step (empty without source bindings).
    pub decisions: Vec<Vec<f64>>,
    /// Surrogate stability margin per step under the scheduling mode.
    pub margins: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleStatus {
    Optimal,
    /// Node limit reached; the schedule is the best incumbent.
    NodeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub mode: String,
    pub unit_names: Vec<String>,
    /// `[unit][t]`, 0 or 1.
    pub commitment: Vec<Vec<u8>>,
    pub startups: Vec<Vec<u8>>,
    pub scenarios: Vec<ScenarioDispatch>,
    /// Expected cost over the horizon, k£.
    pub cost: f64,
    pub status: ScheduleStatus,
    pub nodes: usize,
    pub root_bound: f64,
    pub gap: f64,
}

/// Which algorithm solves the mixed-binary model.
#[derive(Debug, Clone, Copy)]
pub enum UcSolver {
    BranchAndBound(BnbOptions),
    /// Exhaustive enumeration of the commitments (small instances only);
    /// startup indicators follow from them.
    Enumeration,
}

pub fn solve_uc(problem: &UcProblem) -> Result<Schedule> {
    solve_uc_with(problem, UcSolver::BranchAndBound(BnbOptions::default()))
}

pub fn solve_uc_with(problem: &UcProblem, solver: UcSolver) -> Result<Schedule> {
    let res = match solver {
        UcSolver::BranchAndBound(opts) => branch_and_bound(&problem.model, &opts)?,
        UcSolver::Enumeration => {
            let commits: Vec<usize> = problem.vars.commit.iter().flatten().copied().collect();
            solve_by_enumeration(&problem.model, Some(&commits), &BnbOptions::default().ipm)?
        }
    };
    schedule_from(problem, &res)
}

fn schedule_from(problem: &UcProblem, res: &BnbResult) -> Result<Schedule> {
    let status = match res.status {
        BnbStatus::Optimal => ScheduleStatus::Optimal,
        BnbStatus::NodeLimit => ScheduleStatus::NodeLimit,
        BnbStatus::Infeasible => {
            return Err(Error::UcInfeasible(
                "no commitment satisfies balance, unit limits and the stability constraint".into(),
            ))
        }
    };
    let inst = &problem.instance;
    let v = &problem.vars;
    let x = &res.x;
    let sb = inst.base_mva;
    let bin = |j: usize| -> u8 { u8::from(x[j] > 0.5) };
    let commitment: Vec<Vec<u8>> = v.commit.iter().map(|r| r.iter().map(|&j| bin(j)).collect()).collect();
    let startups: Vec<Vec<u8>> = v.startup.iter().map(|r| r.iter().map(|&j| bin(j)).collect()).collect();
    let mut scenarios = Vec::new();
    for (si, sc) in inst.dispatch_scenarios().iter().enumerate() {
        let dispatch_mw = v.dispatch[si].iter().map(|r| r.iter().map(|&j| x[j] * sb).collect()).collect();
        let wind_mw: Vec<f64> = v.wind[si].iter().map(|&j| x[j] * sb).collect();
        let shed_mw = v.shed[si].iter().map(|&j| x[j] * sb).collect();
        let mut decisions = Vec::new();
        let mut margins = Vec::new();
        if let Some(b) = &problem.bindings {
            for t in 0..inst.horizon {
                let flags: Vec<f64> = b
                    .iter()
                    .map(|bind| match *bind {
                        SourceBinding::Unit(g) => f64::from(commitment[g][t]),
                        SourceBinding::Fixed(on) => f64::from(u8::from(on)),
                    })
                    .collect();
                let w = x[v.wind[si][t]];
                let xt = AugmentedDecision::new(&flags, w).0;
                // The linearised products must equal the true products.
                for (i, z) in v.product[si].iter().enumerate() {
                    if let Some(j) = z[t] {
                        let err = (x[j] - flags[i] * w).abs();
                        if err > 1e-6 * (1.0 + w.abs()) {
                            return Err(Error::Numerical(format!("product linearisation off by {err:.2e} at step {t}")));
                        }
                    }
                }
                margins.push(problem.mode.margin(&xt));
                decisions.push(xt);
            }
        }
        scenarios.push(ScenarioDispatch { probability: sc.probability, dispatch_mw, wind_mw, shed_mw, decisions, margins });
    }
    let gap = if res.objective.abs() > 0.0 { ((res.objective - res.best_bound) / res.objective.abs()).max(0.0) } else { 0.0 };
    Ok(Schedule {
        mode: problem.mode.name().to_string(),
        unit_names: inst.units.iter().map(|u| u.name.clone()).collect(),
        commitment,
        startups,
        scenarios,
        cost: res.objective,
        status,
        nodes: res.nodes,
        root_bound: res.root_bound,
        gap,
    })
}

/// Summary written next to the schedule CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub cost: f64,
    pub violation_rate: Option<f64>,
    pub g_lim_eq: Option<f64>,
    pub mode: String,
    pub status: ScheduleStatus,
    pub nodes: usize,
    pub gap: f64,
}

impl Schedule {
    pub fn horizon(&self) -> usize {
        self.commitment.first().map_or(0, |r| r.len())
    }

    /// All decision vectors across scenarios, in scenario-major order.
    pub fn all_decisions(&self) -> Vec<Vec<f64>> {
        self.scenarios.iter().flat_map(|s| s.decisions.iter().cloned()).collect()
    }

    /// Number of committed units per step.
    pub fn committed_count(&self) -> Vec<usize> {
        (0..self.horizon()).map(|t| self.commitment.iter().map(|r| r[t] as usize).sum()).collect()
    }

    /// Probability-weighted average of the equivalent limit over steps.
    pub fn equivalent_limit(&self, c: &SocStabilityConstraint) -> Result<f64> {
        let mut total = 0.0;
        for s in &self.scenarios {
            total += s.probability * equivalent_limit(c, &s.decisions)?;
        }
        Ok(total)
    }

    pub fn summary(&self, violation_rate: Option<f64>, g_lim_eq: Option<f64>) -> ScheduleSummary {
        ScheduleSummary {
            cost: self.cost,
            violation_rate,
            g_lim_eq,
            mode: self.mode.clone(),
            status: self.status,
            nodes: self.nodes,
            gap: self.gap,
        }
    }

    /// CSV: step, unit flags, unit dispatches, wind, shed, margin (plus a
    /// scenario column when there are several).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let multi = self.scenarios.len() > 1;
        let mut header: Vec<String> = Vec::new();
        if multi {
            header.push("scenario".into());
        }
        header.push("step".into());
        header.extend(self.unit_names.iter().map(|n| format!("on_{n}")));
        header.extend(self.unit_names.iter().map(|n| format!("p_{n}_mw")));
        header.extend(["wind_mw".to_string(), "shed_mw".to_string(), "margin".to_string()]);
        wtr.write_record(&header)?;
        for (si, s) in self.scenarios.iter().enumerate() {
            for t in 0..self.horizon() {
                let mut row: Vec<String> = Vec::new();
                if multi {
                    row.push(si.to_string());
                }
                row.push(t.to_string());
                row.extend(self.commitment.iter().map(|r| r[t].to_string()));
                row.extend(s.dispatch_mw.iter().map(|r| format_float(r[t])));
                row.push(format_float(s.wind_mw[t]));
                row.push(format_float(s.shed_mw[t]));
                row.push(s.margins.get(t).copied().flatten().map(format_float).unwrap_or_default());
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// True-index check of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCheck {
    pub scenario: usize,
    pub step: usize,
    /// `None` when the index could not be evaluated.
    pub index: Option<f64>,
    pub violated: bool,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEvaluation {
    pub steps: Vec<StepCheck>,
    /// Probability-weighted fraction of violating steps.
    pub violation_rate: f64,
}

/// Re-evaluates every step's true gSCR on `grid` with source reactances
/// `params` and flags steps below `g_lim`. Steps without wind have no
/// grid-following units to destabilise and count as satisfied.
pub fn evaluate_schedule(schedule: &Schedule, grid: &GridModel, params: &[f64], g_lim: f64) -> Result<ScheduleEvaluation> {
    let g = grid.with_source_reactances(params)?;
    let horizon = schedule.horizon();
    let mut steps = Vec::new();
    let mut rate = 0.0;
    for (si, sc) in schedule.scenarios.iter().enumerate() {
        if sc.decisions.len() != horizon {
            return Err(Error::InvalidModel("schedule carries no stability decisions".into()));
        }
        let mut bad = 0usize;
        for (t, x) in sc.decisions.iter().enumerate() {
            let d = AugmentedDecision(x.clone());
            if d.layout().n_sources != g.n_sources() {
                return Err(Error::Dimension(format!(
                    "schedule has {} sources, grid {}",
                    d.layout().n_sources,
                    g.n_sources()
                )));
            }
            let wind = d.wind();
            let check = if wind <= MIN_GFL_POWER {
                StepCheck { scenario: si, step: t, index: None, violated: false, reason: Some("no wind dispatched".into()) }
            } else {
                let op = OperatingPoint::new(d.flags().to_vec(), g.gfl_dispatch(wind));
                match evaluate_gscr(&g, &op) {
                    Ok(e) => StepCheck { scenario: si, step: t, index: Some(e.value), violated: e.value < g_lim, reason: None },
                    Err(err) => StepCheck { scenario: si, step: t, index: None, violated: true, reason: Some(err.to_string()) },
                }
            };
            bad += usize::from(check.violated);
            steps.push(check);
        }
        rate += sc.probability * bad as f64 / horizon as f64;
    }
    Ok(ScheduleEvaluation { steps, violation_rate: rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::desk::{desk_network, desk_uc_instance, DESK_G_LIM};
    use crate::uc::build::{build_uc, StabilityMode};
    use crate::uc::instance::{UcInstance, Unit, UnitType};

    fn unit_type(name: &str, min: f64, no_load: f64, marginal: f64) -> UnitType {
        UnitType {
            name: name.into(),
            capacity_mw: 100.0,
            min_output_mw: min,
            no_load_cost: no_load,
            marginal_cost: marginal,
            startup_cost: 0.0,
            startup_time: 0,
            min_up: 1,
            min_down: 1,
            inertia: None,
            damping: None,
        }
    }

    fn unit(name: &str, ty: &str, output: f64) -> Unit {
        Unit {
            name: name.into(),
            unit_type: ty.into(),
            bus: 1,
            source: None,
            initially_on: true,
            initial_hours: None,
            initial_output_mw: Some(output),
        }
    }

    fn instance(demand: f64, wind: f64, types: Vec<UnitType>, units: Vec<Unit>) -> UcInstance {
        UcInstance {
            horizon: 2,
            base_mva: 100.0,
            demand_mw: vec![demand; 2],
            wind_mw: vec![wind; 2],
            shed_cost: 5000.0,
            allow_shedding: true,
            ramp_fraction: 0.6,
            unit_types: types,
            units,
            fixed_sources: vec![],
            scenarios: vec![],
        }
    }

    #[test]
    fn single_unit_cost_formula() {
        let inst = instance(50.0, 0.0, vec![unit_type("A", 10.0, 1.5, 30.0)], vec![unit("g", "A", 50.0)]);
        let s = solve_uc(&build_uc(&inst, &StabilityMode::None).unwrap()).unwrap();
        // T (no-load + marginal * demand / 1000)
        assert!((s.cost - 2.0 * (1.5 + 30.0 * 50.0 / 1000.0)).abs() <= 1e-6);
        assert_eq!(s.commitment, vec![vec![1, 1]]);
        assert!(s.root_bound <= s.cost + 1e-9);
    }

    #[test]
    fn merit_order_dispatch_by_hand() {
        let types = vec![unit_type("cheap", 0.0, 0.0, 20.0), unit_type("dear", 0.0, 0.0, 50.0)];
        let inst = instance(150.0, 30.0, types, vec![unit("a", "cheap", 100.0), unit("b", "dear", 20.0)]);
        let s = solve_uc(&build_uc(&inst, &StabilityMode::None).unwrap()).unwrap();
        // Wind first, then 100 MW of the cheap unit, 20 MW of the dear one.
        let d = &s.scenarios[0];
        for t in 0..2 {
            assert!((d.wind_mw[t] - 30.0).abs() <= 1e-5);
            assert!((d.dispatch_mw[0][t] - 100.0).abs() <= 1e-5);
            assert!((d.dispatch_mw[1][t] - 20.0).abs() <= 1e-5);
            assert!(d.shed_mw[t].abs() <= 1e-5);
        }
        assert!((s.cost - 2.0 * (100.0 * 20.0 + 20.0 * 50.0) / 1000.0).abs() <= 1e-6);
    }

    #[test]
    fn shedding_when_capacity_runs_out() {
        let inst = instance(130.0, 0.0, vec![unit_type("A", 0.0, 0.0, 20.0)], vec![unit("g", "A", 100.0)]);
        let s = solve_uc(&build_uc(&inst, &StabilityMode::None).unwrap()).unwrap();
        assert!((s.scenarios[0].shed_mw[0] - 30.0).abs() <= 1e-5);
        let mut strict = inst.clone();
        strict.allow_shedding = false;
        assert!(matches!(solve_uc(&build_uc(&strict, &StabilityMode::None).unwrap()), Err(Error::UcInfeasible(_))));
    }

    fn desk_schedule() -> Schedule {
        solve_uc(&build_uc(&desk_uc_instance(), &StabilityMode::None).unwrap()).unwrap()
    }

    #[test]
    fn all_sources_online_never_violate() {
        let grid = desk_network();
        let mut s = desk_schedule();
        for row in s.commitment.iter_mut() {
            row.iter_mut().for_each(|u| *u = 1);
        }
        for x in s.scenarios[0].decisions.iter_mut() {
            let w = AugmentedDecision(x.clone()).wind();
            *x = AugmentedDecision::new(&[1.0; 4], w).0;
        }
        let ev = evaluate_schedule(&s, &grid, &grid.source_reactances(), DESK_G_LIM).unwrap();
        assert_eq!(ev.violation_rate, 0.0);
        assert!(ev.steps.iter().all(|c| c.index.is_none_or(|g| g >= DESK_G_LIM)));
    }

    #[test]
    fn unconstrained_schedule_violates_on_the_weak_grid() {
        let grid = desk_network();
        let s = desk_schedule();
        let ev = evaluate_schedule(&s, &grid, &grid.source_reactances(), DESK_G_LIM).unwrap();
        assert!(ev.violation_rate > 0.0);
        assert!((0.0..=1.0).contains(&ev.violation_rate));
        let free = evaluate_schedule(&s, &grid, &grid.source_reactances(), f64::NEG_INFINITY).unwrap();
        assert_eq!(free.violation_rate, 0.0);
    }

    #[test]
    fn csv_has_one_row_per_step() {
        let s = desk_schedule();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,on_G1,on_G2,on_G3,p_G1_mw,p_G2_mw,p_G3_mw,wind_mw,shed_mw,margin"
        );
        assert_eq!(lines.count(), s.horizon());
    }
}
