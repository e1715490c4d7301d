#![allow(dead_code)]

use drsc::regression::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random strictly convex QP with a nonempty feasible region.
pub fn random_qp(seed: u64, n: usize, m: usize) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    let f = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let b = &a * &x0 + DVector::from_fn(m, |_, _| rng.random_range(0.0..1.0));
    QpProblem::new(h, f, a, b).unwrap()
}

/// Minimum objective over all working sets whose equality-constrained KKT
/// point is primal feasible with nonnegative multipliers.
pub fn enumerate_qp(p: &QpProblem) -> f64 {
    let n = p.f.len();
    let m = p.b.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
        let k = rows.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
        rhs.rows_mut(0, n).copy_from(&(-&p.f));
        for (j, &r) in rows.iter().enumerate() {
            for c in 0..n {
                kkt[(n + j, c)] = p.a[(r, c)];
                kkt[(c, n + j)] = p.a[(r, c)];
            }
            rhs[n + j] = p.b[r];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, n).into_owned();
        let feasible = p.max_violation(&x) <= 1e-9;
        let dual = (0..k).all(|j| sol[n + j] >= -1e-9);
        if feasible && dual {
            best = best.min(p.objective(&x));
        }
    }
    best
}

/// Random commitment instance whose units are bound to grid sources
/// `0..n_units`, with an always-on grid-forming source `n_units`.
pub fn random_uc_instance(seed: u64, n_units: usize, horizon: usize) -> drsc::uc::UcInstance {
    use drsc::uc::{FixedSource, UcInstance, Unit, UnitType};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut types = Vec::new();
    let mut units = Vec::new();
    let mut total = 0.0;
    for g in 0..n_units {
        let cap: f64 = rng.random_range(50.0..150.0);
        total += cap;
        types.push(UnitType {
            name: format!("T{g}"),
            capacity_mw: cap,
            min_output_mw: cap * rng.random_range(0.0..0.3),
            no_load_cost: rng.random_range(0.5..3.0),
            marginal_cost: rng.random_range(20.0..80.0),
            startup_cost: rng.random_range(0.0..5.0),
            startup_time: rng.random_range(0..3),
            min_up: rng.random_range(1..4),
            min_down: rng.random_range(1..3),
            inertia: None,
            damping: None,
        });
        units.push(Unit {
            name: format!("G{g}"),
            unit_type: format!("T{g}"),
            bus: g as u32 + 1,
            source: Some(g),
            initially_on: rng.random_bool(0.6),
            initial_hours: Some(rng.random_range(0..4)),
            initial_output_mw: None,
        });
    }
    let demand_mw: Vec<f64> = (0..horizon).map(|_| total * rng.random_range(0.25..0.75)).collect();
    let wind_mw = demand_mw.iter().map(|d| d * rng.random_range(0.0..0.5)).collect();
    UcInstance {
        horizon,
        base_mva: 100.0,
        demand_mw,
        wind_mw,
        shed_cost: 3000.0,
        allow_shedding: true,
        ramp_fraction: 0.6,
        unit_types: types,
        units,
        fixed_sources: vec![FixedSource { source: n_units, on: true }],
        scenarios: vec![],
    }
}

/// Surrogate coefficients for `n_sources` sources that reward online
/// sources and penalise wind, and a covariance around them.
pub fn random_surrogate(seed: u64, n_sources: usize) -> (Vec<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 2 * n_sources + 2;
    let mut k = vec![0.0; dim];
    k[0] = -0.5;
    for i in 0..n_sources {
        k[1 + i] = rng.random_range(0.5..1.0);
        k[n_sources + 2 + i] = rng.random_range(0.0..0.2);
    }
    k[n_sources + 1] = rng.random_range(-0.8..-0.3);
    let l = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-0.05..0.05));
    (k, &l * l.transpose())
}

/// The three scheduling modes for a random surrogate.
pub fn stability_modes(seed: u64, n_sources: usize, g_lim: f64) -> Vec<drsc::uc::StabilityMode> {
    use drsc::dro::SocStabilityConstraint;
    use drsc::uc::StabilityMode;
    let (k, sigma) = random_surrogate(seed, n_sources);
    let soc = SocStabilityConstraint::new(&k, &sigma, g_lim, 0.8, false).unwrap();
    vec![StabilityMode::None, StabilityMode::Deterministic { k, g_lim }, StabilityMode::Dro(soc)]
}
