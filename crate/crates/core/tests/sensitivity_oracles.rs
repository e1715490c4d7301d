use drsc::desk::{desk_network, desk_pipeline};
use drsc::grid::OperatingPoint;
use drsc::sensitivity::{dg_dp, index_central_difference, pipeline_gradient, JacobianMethod};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn index_derivative_matches_central_difference_on_random_configurations() {
    let base = desk_network();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    while checked < 100 {
        let flags: Vec<f64> = (0..4).map(|_| rng.random_range(0..2) as f64).collect();
        if flags.iter().all(|&f| f == 0.0) {
            continue;
        }
        let x: Vec<f64> = base.source_reactances().iter().map(|x| x * rng.random_range(0.8..1.2)).collect();
        let grid = base.with_source_reactances(&x).unwrap();
        let wind = rng.random_range(0.1..2.0);
        let op = OperatingPoint::new(flags.clone(), grid.gfl_dispatch(wind));
        for src in 0..4 {
            let a = dg_dp(&grid, &op, src).unwrap();
            let fd = index_central_difference(&grid, &op, src).unwrap();
            if flags[src] == 0.0 {
                assert_eq!(a.value, 0.0);
                continue;
            }
            let rel = (a.value - fd).abs() / fd.abs().max(1e-12);
            assert!(rel <= 1e-5, "flags {flags:?} src {src}: {} vs {fd}", a.value);
        }
        checked += 1;
    }
}

#[test]
fn end_to_end_gradient_matches_retraining() {
    let pipe = desk_pipeline().unwrap();
    let g = pipeline_gradient(&pipe).unwrap();
    assert_eq!(g.method, JacobianMethod::Analytic);
    let p0 = pipe.nominal_params();
    for j in 0..p0.len() {
        let h = 1e-4 * p0[j];
        let mut up = p0.clone();
        up[j] += h;
        let mut dn = p0.clone();
        dn[j] -= h;
        let fd = (pipe.fit_at(&up).unwrap().coefficient_vector() - pipe.fit_at(&dn).unwrap().coefficient_vector())
            / (2.0 * h);
        let col = g.grad.column(j);
        for k in 0..col.len() {
            let err = (col[k] - fd[k]).abs();
            assert!(err <= 1e-2 * col[k].abs().max(1e-3 * col.amax()), "param {j} coef {k}: {} vs {}", col[k], fd[k]);
        }
    }
}
