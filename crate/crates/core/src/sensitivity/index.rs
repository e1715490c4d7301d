use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{d_ydd_dxg, evaluate_gscr, evaluate_gscr_with_factors, GridModel, OperatingPoint};
use crate::regression::Dataset;

/// Eigenvalue gap below which the analytic derivative is replaced by a
/// central difference.
pub const MIN_EIGEN_GAP: f64 = 1e-8;
/// Relative step of the index finite differences.
pub const INDEX_FD_STEP: f64 = 1e-6;

/// Index derivative and how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexDerivative {
    pub value: f64,
    pub finite_difference: bool,
}

/// `d g / d X_g` for source `source` by eigenvalue perturbation.
///
/// With `Y_red = Y_LL - Y_Ld Y_dd^-1 Y_dL`, `dY_red = Y_Ld Y_dd^-1 dY_dd Y_dd^-1 Y_dL`
/// and `dg = w^T diag(V^2/P) dY_red v / (w^T v)`. Falls back to a central
/// difference when `lambda_min` is not simple.
pub fn dg_dp(grid: &GridModel, op: &OperatingPoint, source: usize) -> Result<IndexDerivative> {
    let dydd = d_ydd_dxg(grid, op, source)?;
    if dydd.entries.is_empty() {
        return Ok(IndexDerivative { value: 0.0, finite_difference: false });
    }
    let (eval, factors) = evaluate_gscr_with_factors(grid, op)?;
    if eval.gap < MIN_EIGEN_GAP {
        warn!("lambda_min nearly repeated (gap {:e}); using a finite difference", eval.gap);
        return Ok(IndexDerivative { value: index_central_difference(grid, op, source)?, finite_difference: true });
    }
    let n = eval.right.len();
    let scale: Vec<f64> = factors
        .reduced
        .retained_gfl
        .iter()
        .map(|&u| grid.gfl[u].voltage.powi(2) / op.gfl_power[u])
        .collect();
    let mut dy_red = DMatrix::zeros(n, n);
    for &(d, val) in &dydd.entries {
        let z = factors.ydd_inv_ydc.row(d).transpose();
        dy_red.ger(val, &z, &z, 1.0);
    }
    let dscaled = DMatrix::from_fn(n, n, |i, j| scale[i] * dy_red[(i, j)]);
    let value = eval.left.dot(&(&dscaled * &eval.right)) / eval.left.dot(&eval.right);
    Ok(IndexDerivative { value, finite_difference: false })
}

/// Central difference of the index in `X_g` with step `1e-6 X_g`.
pub fn index_central_difference(grid: &GridModel, op: &OperatingPoint, source: usize) -> Result<f64> {
    let x0 = grid.source_reactances();
    let h = INDEX_FD_STEP * x0[source];
    let at = |dx: f64| -> Result<f64> {
        let mut x = x0.clone();
        x[source] += dx;
        Ok(evaluate_gscr(&grid.with_source_reactances(&x)?, op)?.value)
    };
    Ok((at(h)? - at(-h)?) / (2.0 * h))
}

/// `d g^Omega / d p`: one row per sample, one column per source reactance.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSensitivity {
    pub matrix: DMatrix<f64>,
    /// Entries computed by finite differences, as `(sample, source)`.
    pub fallbacks: Vec<(usize, usize)>,
}

pub fn index_sensitivity(grid: &GridModel, data: &Dataset) -> Result<IndexSensitivity> {
    let p = grid.n_sources();
    if data.layout.n_sources != p {
        return Err(Error::Dimension(format!("dataset has {} sources, grid {p}", data.layout.n_sources)));
    }
    let rows: Vec<Vec<IndexDerivative>> = data
        .samples
        .par_iter()
        .map(|s| {
            let op = OperatingPoint::new(s.x.flags().to_vec(), grid.gfl_dispatch(s.x.wind()));
            (0..p).map(|src| dg_dp(grid, &op, src)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut matrix = DMatrix::zeros(data.len(), p);
    let mut fallbacks = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        for (j, d) in row.iter().enumerate() {
            matrix[(i, j)] = d.value;
            if d.finite_difference {
                fallbacks.push((i, j));
            }
        }
    }
    Ok(IndexSensitivity { matrix, fallbacks })
}

/// `grad f = (d K / d g^Omega) (d g^Omega / d p)`.
pub fn grad_f(dk_dg: &DMatrix<f64>, index: &IndexSensitivity) -> Result<DMatrix<f64>> {
    if dk_dg.ncols() != index.matrix.nrows() {
        return Err(Error::Dimension(format!(
            "dK/dg has {} columns, dg/dp has {} rows",
            dk_dg.ncols(),
            index.matrix.nrows()
        )));
    }
    Ok(dk_dg * &index.matrix)
}

/// Column of `grad f` for one parameter, written as an explicit sum.
pub fn grad_f_column(dk_dg: &DMatrix<f64>, dg_dp: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(dk_dg.nrows());
    for w in 0..dk_dg.ncols() {
        for k in 0..dk_dg.nrows() {
            out[k] += dk_dg[(k, w)] * dg_dp[w];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, GflUnit, Source};
    use approx::assert_relative_eq;

    fn mesh() -> GridModel {
        GridModel {
            buses: vec![1, 2, 3, 4, 5],
            branches: vec![
                Branch { from: 1, to: 2, x: 0.1 },
                Branch { from: 2, to: 3, x: 0.15 },
                Branch { from: 3, to: 4, x: 0.2 },
                Branch { from: 4, to: 5, x: 0.1 },
                Branch { from: 2, to: 5, x: 0.3 },
            ],
            sgs: vec![Source { bus: 2, reactance: 0.25 }, Source { bus: 3, reactance: 0.3 }],
            gfm: vec![Source { bus: 4, reactance: 0.35 }],
            gfl: vec![
                GflUnit { bus: 1, voltage: 1.0, capacity: 1.0 },
                GflUnit { bus: 5, voltage: 1.0, capacity: 0.5 },
            ],
        }
    }

    #[test]
    fn matches_central_difference() {
        let g = mesh();
        for flags in [[1.0, 1.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]] {
            let op = OperatingPoint::new(flags.to_vec(), g.gfl_dispatch(0.9));
            for src in 0..3 {
                let a = dg_dp(&g, &op, src).unwrap();
                let fd = index_central_difference(&g, &op, src).unwrap();
                assert!(!a.finite_difference);
                if flags[src] == 0.0 {
                    assert_eq!(a.value, 0.0);
                } else {
                    assert_relative_eq!(a.value, fd, max_relative = 1e-5);
                }
            }
        }
    }

    #[test]
    fn radial_single_source_weakens_with_reactance() {
        let g = GridModel {
            buses: vec![1, 2],
            branches: vec![Branch { from: 1, to: 2, x: 0.2 }],
            sgs: vec![Source { bus: 2, reactance: 0.1 }],
            gfm: vec![],
            gfl: vec![GflUnit { bus: 1, voltage: 1.0, capacity: 1.0 }],
        };
        let op = OperatingPoint::new(vec![1.0], vec![0.8]);
        let d = dg_dp(&g, &op, 0).unwrap().value;
        assert!(d < 0.0);
        let g0 = evaluate_gscr(&g, &op).unwrap().value;
        let g1 = evaluate_gscr(&g.with_source_reactances(&[0.11]).unwrap(), &op).unwrap().value;
        assert!(g1 < g0);
        // Series combination: Y_red = 1/(0.2 + X), g = Y_red / P.
        assert_relative_eq!(d, -1.0 / (0.3f64 * 0.3) / 0.8, max_relative = 1e-10);
    }

    #[test]
    fn grad_f_chain_rule() {
        let dk = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let zero = IndexSensitivity { matrix: DMatrix::zeros(3, 2), fallbacks: vec![] };
        assert_eq!(grad_f(&dk, &zero).unwrap(), DMatrix::zeros(2, 2));
        let col = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let one = IndexSensitivity { matrix: DMatrix::from_column_slice(3, 1, col.as_slice()), fallbacks: vec![] };
        let g = grad_f(&dk, &one).unwrap();
        let direct = grad_f_column(&dk, &col);
        assert_relative_eq!(g[(0, 0)], direct[0], epsilon = 1e-15);
        assert_relative_eq!(g[(1, 0)], direct[1], epsilon = 1e-15);
        assert_relative_eq!(direct[0], 0.1 - 0.4 + 0.9, epsilon = 1e-15);
    }
}
