mod common;

use drsc::regression::{solve_qp, QpOptions};

#[test]
fn active_set_matches_enumeration_on_random_problems() {
    for seed in 0..50 {
        let p = common::random_qp(seed, 5, 7);
        let sol = solve_qp(&p, &QpOptions::default(), None).unwrap();
        let oracle = common::enumerate_qp(&p);
        assert!(
            (sol.objective - oracle).abs() <= 1e-7 * (1.0 + oracle.abs()),
            "seed {seed}: solver {} vs enumeration {oracle}",
            sol.objective
        );
        assert!(p.max_violation(&sol.x) <= 1e-8);
        assert!(p.stationarity_residual(&sol.x, &sol.multipliers) <= 1e-9);
        for i in 0..p.b.len() {
            let slack = p.b[i] - (p.a.row(i) * &sol.x)[0];
            assert!(sol.multipliers[i] >= -1e-10);
            assert!((sol.multipliers[i] * slack).abs() <= 1e-8);
        }
    }
}
