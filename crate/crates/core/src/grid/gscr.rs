use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::admittance::{build_admittance, kron_factors, KronFactors};
use super::{GridModel, OperatingPoint, ReducedAdmittance};
use crate::error::{Error, Result};

/// Smallest eigenpair of `Y'_red = diag(V^2/P) Y_red`.
#[derive(Debug, Clone)]
pub struct GscrEvaluation {
    pub value: f64,
    /// Left eigenvector `w` (`w^T Y' = lambda w^T`).
    pub left: DVector<f64>,
    /// Right eigenvector `v` (`Y' v = lambda v`), scaled so `w^T v = 1`.
    pub right: DVector<f64>,
    pub scaled: DMatrix<f64>,
    /// Distance from `lambda_min` to the next eigenvalue (infinite for 1x1).
    pub gap: f64,
}

/// `lambda_min(diag(V^2/P) Y_red)` with left/right eigenvectors.
///
/// `Y'` is similar to the symmetric `S = D^1/2 Y_red D^1/2`, so the
/// eigenpair comes from a symmetric decomposition of `S`: with `S u = l u`
/// and `|u| = 1`, `v = D^1/2 u` and `w = D^-1/2 u` give `w^T v = 1`.
pub fn gscr_index(y_red: &ReducedAdmittance, gfl: &[(f64, f64)]) -> Result<GscrEvaluation> {
    let n = y_red.y_red.nrows();
    if gfl.len() != n {
        return Err(Error::Dimension(format!("{} GFL entries for a {n}x{n} reduced matrix", gfl.len())));
    }
    if n == 0 {
        return Err(Error::InvalidOperatingPoint("no GFL unit is producing".into()));
    }
    let mut scale = Vec::with_capacity(n);
    for &(v, p) in gfl {
        if !(p > 0.0) {
            return Err(Error::InvalidOperatingPoint(format!("GFL power {p} is not positive")));
        }
        scale.push(v * v / p);
    }
    let sqrt_d: Vec<f64> = scale.iter().map(|d| d.sqrt()).collect();
    let sym = DMatrix::from_fn(n, n, |i, j| sqrt_d[i] * y_red.y_red[(i, j)] * sqrt_d[j]);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let k = order[0];
    let value = eig.eigenvalues[k];
    let gap = if n > 1 { eig.eigenvalues[order[1]] - value } else { f64::INFINITY };
    let mut u = eig.eigenvectors.column(k).into_owned();
    if u.sum() < 0.0 {
        u.neg_mut();
    }
    let right = DVector::from_fn(n, |i, _| sqrt_d[i] * u[i]);
    let left = DVector::from_fn(n, |i, _| u[i] / sqrt_d[i]);
    let scaled = DMatrix::from_fn(n, n, |i, j| scale[i] * y_red.y_red[(i, j)]);
    Ok(GscrEvaluation { value, left, right, scaled, gap })
}

/// Full evaluation chain: admittance, reduction, index. Also returns the
/// reduction factors for derivative work.
pub fn evaluate_gscr_with_factors(grid: &GridModel, op: &OperatingPoint) -> Result<(GscrEvaluation, KronFactors)> {
    let y = build_admittance(grid, op)?;
    let factors = kron_factors(&y)?;
    let gfl: Vec<(f64, f64)> = factors
        .reduced
        .retained_gfl
        .iter()
        .map(|&u| (grid.gfl[u].voltage, op.gfl_power[u]))
        .collect();
    let eval = gscr_index(&factors.reduced, &gfl)?;
    Ok((eval, factors))
}

pub fn evaluate_gscr(grid: &GridModel, op: &OperatingPoint) -> Result<GscrEvaluation> {
    Ok(evaluate_gscr_with_factors(grid, op)?.0)
}

/// Sparse diagonal matrix over the `delta` bus ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDiagonal {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SparseDiagonal {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(i, v) in &self.entries {
            m[(i, i)] += v;
        }
        m
    }
}

/// `dY_dd / dX_g`: a single diagonal entry `-x_g / X_g^2` at the source's
/// position within `delta`.
pub fn d_ydd_dxg(grid: &GridModel, op: &OperatingPoint, source: usize) -> Result<SparseDiagonal> {
    if source >= grid.n_sources() {
        return Err(Error::Dimension(format!("source {source} out of range")));
    }
    let y = build_admittance(grid, op)?;
    let src = grid.source(source);
    let pos = grid.bus_index()[&src.bus];
    let Some(d_pos) = y.eliminated.iter().position(|&i| i == pos) else {
        return Err(Error::UnsupportedPlacement(format!(
            "source {source} sits on retained GFL bus {}",
            src.bus
        )));
    };
    let flag = op.commitment[source];
    let entries = if flag == 0.0 {
        Vec::new()
    } else {
        vec![(d_pos, -flag / (src.reactance * src.reactance))]
    };
    Ok(SparseDiagonal { dim: y.eliminated.len(), entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_admittance, kron_reduce, Branch, GflUnit, Source};
    use approx::assert_relative_eq;

    fn two_gfl() -> GridModel {
        GridModel {
            buses: vec![1, 2, 3, 4],
            branches: vec![
                Branch { from: 1, to: 2, x: 0.2 },
                Branch { from: 2, to: 3, x: 0.1 },
                Branch { from: 3, to: 4, x: 0.3 },
                Branch { from: 2, to: 4, x: 0.25 },
            ],
            sgs: vec![Source { bus: 2, reactance: 0.15 }, Source { bus: 3, reactance: 0.2 }],
            gfm: vec![],
            gfl: vec![
                GflUnit { bus: 1, voltage: 1.0, capacity: 1.0 },
                GflUnit { bus: 4, voltage: 1.02, capacity: 1.0 },
            ],
        }
    }

    #[test]
    fn scalar_case() {
        let red = ReducedAdmittance {
            y_red: DMatrix::from_element(1, 1, 3.0),
            retained_buses: vec![1],
            retained_gfl: vec![0],
        };
        let e = gscr_index(&red, &[(1.0, 0.5)]).unwrap();
        assert_relative_eq!(e.value, 6.0, epsilon = 1e-14);
    }

    #[test]
    fn rejects_nonpositive_power() {
        let red = ReducedAdmittance {
            y_red: DMatrix::from_element(1, 1, 3.0),
            retained_buses: vec![1],
            retained_gfl: vec![0],
        };
        assert!(matches!(gscr_index(&red, &[(1.0, 0.0)]), Err(Error::InvalidOperatingPoint(_))));
        assert!(matches!(gscr_index(&red, &[(1.0, -1.0)]), Err(Error::InvalidOperatingPoint(_))));
    }

    #[test]
    fn two_by_two_matches_characteristic_polynomial() {
        let g = two_gfl();
        let op = OperatingPoint::new(vec![1.0, 1.0], vec![0.6, 0.9]);
        let y = build_admittance(&g, &op).unwrap();
        let red = kron_reduce(&y).unwrap();
        let e = evaluate_gscr(&g, &op).unwrap();
        let d = [1.0 / 0.6, 1.02 * 1.02 / 0.9];
        let (a, b, c, dd) = (
            d[0] * red.y_red[(0, 0)],
            d[0] * red.y_red[(0, 1)],
            d[1] * red.y_red[(1, 0)],
            d[1] * red.y_red[(1, 1)],
        );
        let tr = a + dd;
        let det = a * dd - b * c;
        let lambda_min = 0.5 * (tr - (tr * tr - 4.0 * det).sqrt());
        assert_relative_eq!(e.value, lambda_min, epsilon = 1e-9);
        // Cross-check against a general (nonsymmetric) eigenvalue routine.
        let ev = e.scaled.complex_eigenvalues();
        let min_re = ev.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        assert!(ev.iter().all(|z| z.im.abs() <= 1e-8));
        assert_relative_eq!(e.value, min_re, epsilon = 1e-9);
    }

    #[test]
    fn eigenvectors_satisfy_both_sides() {
        let g = two_gfl();
        let e = evaluate_gscr(&g, &OperatingPoint::new(vec![1.0, 0.0], vec![0.4, 0.7])).unwrap();
        let rv = &e.scaled * &e.right - &e.right * e.value;
        let lw = e.scaled.transpose() * &e.left - &e.left * e.value;
        assert!(rv.norm() <= 1e-8 && lw.norm() <= 1e-8);
        assert_relative_eq!(e.left.dot(&e.right), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn power_scaling_is_inverse() {
        let g = two_gfl();
        let base = evaluate_gscr(&g, &OperatingPoint::new(vec![1.0, 1.0], vec![0.5, 0.8])).unwrap().value;
        for alpha in [0.5, 2.0, 10.0] {
            let s = evaluate_gscr(&g, &OperatingPoint::new(vec![1.0, 1.0], vec![0.5 * alpha, 0.8 * alpha]))
                .unwrap()
                .value;
            assert_relative_eq!(s * alpha, base, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn derivative_entry_values() {
        let g = GridModel {
            buses: vec![1, 2],
            branches: vec![Branch { from: 1, to: 2, x: 0.5 }],
            sgs: vec![Source { bus: 2, reactance: 0.05 }],
            gfm: vec![],
            gfl: vec![GflUnit { bus: 1, voltage: 1.0, capacity: 1.0 }],
        };
        let on = d_ydd_dxg(&g, &OperatingPoint::new(vec![1.0], vec![0.5]), 0).unwrap();
        assert_eq!(on.entries.len(), 1);
        assert_relative_eq!(on.entries[0].1, -400.0, epsilon = 1e-9);
        let off = d_ydd_dxg(&g, &OperatingPoint::new(vec![0.0], vec![0.5]), 0).unwrap();
        assert!(off.entries.is_empty());
        assert_eq!(off.to_dense(), DMatrix::zeros(1, 1));
    }

    #[test]
    fn derivative_rejects_source_on_gfl_bus() {
        let mut g = two_gfl();
        g.sgs[0].bus = 1;
        let r = d_ydd_dxg(&g, &OperatingPoint::new(vec![1.0, 1.0], vec![0.5, 0.5]), 0);
        assert!(matches!(r, Err(Error::UnsupportedPlacement(_))));
    }

    #[test]
    fn derivative_matches_central_difference_of_ydd() {
        let g = two_gfl();
        let op = OperatingPoint::new(vec![1.0, 1.0], vec![0.5, 0.5]);
        for src in 0..2 {
            let analytic = d_ydd_dxg(&g, &op, src).unwrap().to_dense();
            let x0 = g.source_reactances();
            let h = 1e-6;
            let block = |dx: f64| {
                let mut x = x0.clone();
                x[src] += dx;
                let y = build_admittance(&g.with_source_reactances(&x).unwrap(), &op).unwrap();
                y.block(&y.eliminated, &y.eliminated)
            };
            let fd = (block(h) - block(-h)) / (2.0 * h);
            assert!((fd - &analytic).abs().max() <= 1e-4 * analytic.abs().max());
        }
    }
}
