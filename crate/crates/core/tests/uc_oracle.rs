mod common;

use common::{random_surrogate, random_uc_instance, stability_modes};
use drsc::dro::SocStabilityConstraint;
use drsc::uc::{build_uc, solve_uc, solve_uc_with, StabilityMode, UcSolver};
use drsc::Error;

const G_LIM: f64 = 1.0;

fn same_outcome(seed: u64, units: usize, horizon: usize) -> usize {
    let mut solved = 0;
    let inst = random_uc_instance(seed, units, horizon);
    for mode in stability_modes(seed, units + 1, G_LIM) {
        let p = build_uc(&inst, &mode).unwrap();
        let bnb = solve_uc(&p);
        let enu = solve_uc_with(&p, UcSolver::Enumeration);
        match (bnb, enu) {
            (Ok(b), Ok(e)) => {
                assert!(
                    (b.cost - e.cost).abs() <= 1e-6 * (1.0 + e.cost.abs()),
                    "seed {seed} {}: {} vs {}",
                    mode.name(),
                    b.cost,
                    e.cost
                );
                assert!(b.root_bound <= b.cost + 1e-6);
                assert!(p.model.max_violation(&commitment_point(&p, &b)) <= 1e-6);
                solved += 1;
            }
            (Err(Error::UcInfeasible(_)), Err(Error::UcInfeasible(_))) => {}
            (b, e) => panic!("seed {seed} {}: {b:?} vs {e:?}", mode.name()),
        }
    }
    solved
}

/// Re-solves the relaxation with the schedule's commitments fixed, which
/// must reproduce a feasible point of the full model.
fn commitment_point(p: &drsc::uc::UcProblem, s: &drsc::uc::Schedule) -> Vec<f64> {
    let mut fix = vec![None; p.model.vars.len()];
    for (g, row) in p.vars.commit.iter().enumerate() {
        for (t, &j) in row.iter().enumerate() {
            fix[j] = Some(f64::from(s.commitment[g][t]));
        }
    }
    for (g, row) in p.vars.startup.iter().enumerate() {
        for (t, &j) in row.iter().enumerate() {
            fix[j] = Some(f64::from(s.startups[g][t]));
        }
    }
    drsc::uc::solve_relaxation(&p.model, &fix, &Default::default()).unwrap().x
}

#[test]
fn branch_and_bound_matches_enumeration() {
    let mut solved = 0;
    for (seed, units, horizon) in [(1, 1, 4), (2, 2, 3), (3, 2, 4), (4, 3, 2), (5, 3, 3), (6, 3, 4)] {
        solved += same_outcome(seed, units, horizon);
    }
    // Most draws are feasible in every mode; the check is not vacuous.
    assert!(solved >= 12, "{solved} feasible solves");
}

#[test]
fn robust_mode_without_spread_is_the_deterministic_schedule() {
    let mut feasible = 0;
    for seed in 10..16 {
        let inst = random_uc_instance(seed, 2, 4);
        let (k, sigma) = random_surrogate(seed, 3);
        let det = solve_uc(&build_uc(&inst, &StabilityMode::Deterministic { k: k.clone(), g_lim: G_LIM }).unwrap());
        let zero = SocStabilityConstraint::new(&k, &(sigma * 0.0), G_LIM, 0.8, false).unwrap();
        let dro = solve_uc(&build_uc(&inst, &StabilityMode::Dro(zero)).unwrap());
        match (det, dro) {
            (Ok(det), Ok(dro)) => {
                assert_eq!(dro.cost.to_bits(), det.cost.to_bits());
                assert_eq!(dro.commitment, det.commitment);
                assert_eq!(dro.scenarios, det.scenarios);
                feasible += 1;
            }
            (Err(a), Err(b)) => assert_eq!(a, b),
            (a, b) => panic!("seed {seed}: {a:?} vs {b:?}"),
        }
    }
    assert!(feasible >= 3);
}

#[test]
fn cost_ordering_across_modes() {
    for seed in 20..26 {
        let inst = random_uc_instance(seed, 3, 4);
        let costs: Vec<f64> = stability_modes(seed, 4, G_LIM)
            .iter()
            .map(|m| solve_uc(&build_uc(&inst, m).unwrap()).map_or(f64::INFINITY, |s| s.cost))
            .collect();
        assert!(costs[0] <= costs[1] + 1e-6 * (1.0 + costs[1].abs()), "seed {seed}: {costs:?}");
        assert!(costs[1] <= costs[2] + 1e-6 * (1.0 + costs[2].abs()), "seed {seed}: {costs:?}");
    }
}

#[test]
fn robust_cost_grows_with_the_spread() {
    let inst = random_uc_instance(31, 3, 4);
    let (k, sigma) = random_surrogate(31, 4);
    let base = SocStabilityConstraint::new(&k, &sigma, G_LIM, 0.8, false).unwrap();
    let mut last = f64::NEG_INFINITY;
    let mut finite = 0;
    for alpha in [0.0, 0.25, 0.5, 1.0, 2.0] {
        let cost = solve_uc(&build_uc(&inst, &StabilityMode::Dro(base.scaled(alpha))).unwrap()).map_or(f64::INFINITY, |s| s.cost);
        assert!(cost == f64::INFINITY || cost >= last - 1e-6 * (1.0 + last.abs()), "alpha {alpha}: {cost} < {last}");
        assert!(last < f64::INFINITY || cost == f64::INFINITY);
        last = cost;
        finite += usize::from(cost.is_finite());
    }
    assert!(finite >= 3);
}

#[test]
fn flat_scenarios_share_commitments() {
    let mut inst = random_uc_instance(41, 2, 3);
    let mut alt = inst.demand_mw.clone();
    alt.iter_mut().for_each(|d| *d *= 1.1);
    inst.scenarios = vec![
        drsc::uc::Scenario { probability: 0.4, demand_mw: inst.demand_mw.clone(), wind_mw: inst.wind_mw.clone() },
        drsc::uc::Scenario { probability: 0.6, demand_mw: alt, wind_mw: inst.wind_mw.clone() },
    ];
    let p = build_uc(&inst, &StabilityMode::None).unwrap();
    let b = solve_uc(&p).unwrap();
    let e = solve_uc_with(&p, UcSolver::Enumeration).unwrap();
    assert_eq!(b.scenarios.len(), 2);
    assert!((b.cost - e.cost).abs() <= 1e-6 * (1.0 + e.cost));
}
