use nalgebra::DMatrix;

use super::{GridModel, OperatingPoint, MIN_GFL_POWER};
use crate::error::{Error, Result};

/// Pivots of `Y_dd` smaller than this mark the reduction as singular.
const PIVOT_TOL: f64 = 1e-10;

/// Full bus admittance matrix `Y = Y0 + Yg` with the GFL / rest partition.
#[derive(Debug, Clone)]
pub struct AdmittanceMatrix {
    pub y: DMatrix<f64>,
    pub bus_ids: Vec<u32>,
    /// Positions (in bus order) of retained GFL buses, in GFL-unit order.
    pub retained: Vec<usize>,
    /// GFL unit index for each retained position.
    pub retained_gfl: Vec<usize>,
    /// Positions of every other bus (`delta`), ascending.
    pub eliminated: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ReducedAdmittance {
    pub y_red: DMatrix<f64>,
    pub retained_buses: Vec<u32>,
    pub retained_gfl: Vec<usize>,
}

/// Kron reduction together with `Y_dd^-1 Y_dC`, which the index
/// derivatives reuse.
#[derive(Debug, Clone)]
pub struct KronFactors {
    pub reduced: ReducedAdmittance,
    /// `Y_dd^-1 Y_dC`, shape `|delta| x |C_L|`.
    pub ydd_inv_ydc: DMatrix<f64>,
}

/// Assembles `Y` for a given commitment and GFL dispatch. GFL units below
/// [`MIN_GFL_POWER`] are treated as passive buses.
pub fn build_admittance(grid: &GridModel, op: &OperatingPoint) -> Result<AdmittanceMatrix> {
    op.check(grid)?;
    let index = grid.bus_index();
    let n = grid.buses.len();
    let mut y = DMatrix::<f64>::zeros(n, n);
    for br in &grid.branches {
        if !(br.x > 0.0) {
            return Err(Error::InvalidModel(format!("branch {}-{} reactance {}", br.from, br.to, br.x)));
        }
        let (i, j) = (index[&br.from], index[&br.to]);
        let b = 1.0 / br.x;
        y[(i, i)] += b;
        y[(j, j)] += b;
        y[(i, j)] -= b;
        y[(j, i)] -= b;
    }
    for (k, src) in grid.sources().enumerate() {
        if !(src.reactance > 0.0) {
            return Err(Error::InvalidModel(format!("source {k} reactance {}", src.reactance)));
        }
        let i = index[&src.bus];
        y[(i, i)] += op.commitment[k] / src.reactance;
    }

    let mut retained = Vec::new();
    let mut retained_gfl = Vec::new();
    for (u, unit) in grid.gfl.iter().enumerate() {
        if op.gfl_power[u] >= MIN_GFL_POWER {
            retained.push(index[&unit.bus]);
            retained_gfl.push(u);
        }
    }
    let eliminated = (0..n).filter(|i| !retained.contains(i)).collect();
    Ok(AdmittanceMatrix { y, bus_ids: grid.buses.clone(), retained, retained_gfl, eliminated })
}

impl AdmittanceMatrix {
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.y[(rows[i], cols[j])])
    }

    /// Passive buses in connected pieces of the `delta` subgraph that touch
    /// neither a committed source nor a retained bus.
    fn floating_buses(&self) -> Vec<u32> {
        let d = &self.eliminated;
        let nd = d.len();
        let mut comp = vec![usize::MAX; nd];
        let mut floating = Vec::new();
        for start in 0..nd {
            if comp[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            comp[start] = start;
            let mut members = Vec::new();
            let mut anchored = false;
            while let Some(a) = stack.pop() {
                members.push(a);
                let ia = d[a];
                let offdiag: f64 = (0..self.y.ncols()).filter(|&j| j != ia).map(|j| self.y[(ia, j)]).sum();
                if self.y[(ia, ia)] + offdiag > 1e-12 {
                    anchored = true;
                }
                if self.retained.iter().any(|&r| self.y[(ia, r)] != 0.0) {
                    anchored = true;
                }
                for b in 0..nd {
                    if comp[b] == usize::MAX && b != a && self.y[(ia, d[b])] != 0.0 {
                        comp[b] = start;
                        stack.push(b);
                    }
                }
            }
            if !anchored {
                floating.extend(members.iter().map(|&m| self.bus_ids[d[m]]));
            }
        }
        floating.sort_unstable();
        floating
    }
}

pub fn kron_factors(y: &AdmittanceMatrix) -> Result<KronFactors> {
    let c = &y.retained;
    let d = &y.eliminated;
    let y_cc = y.block(c, c);
    let retained_buses = c.iter().map(|&i| y.bus_ids[i]).collect();
    if d.is_empty() {
        return Ok(KronFactors {
            reduced: ReducedAdmittance { y_red: y_cc, retained_buses, retained_gfl: y.retained_gfl.clone() },
            ydd_inv_ydc: DMatrix::zeros(0, c.len()),
        });
    }
    let y_dd = y.block(d, d);
    let y_dc = y.block(d, c);
    let lu = y_dd.lu();
    let min_pivot = lu.u().diagonal().iter().fold(f64::INFINITY, |m, p| m.min(p.abs()));
    if !(min_pivot >= PIVOT_TOL) {
        let mut buses = y.floating_buses();
        if buses.is_empty() {
            buses = d.iter().map(|&i| y.bus_ids[i]).collect();
        }
        return Err(Error::ReductionSingular { buses });
    }
    let ydd_inv_ydc = lu
        .solve(&y_dc)
        .ok_or_else(|| Error::ReductionSingular { buses: d.iter().map(|&i| y.bus_ids[i]).collect() })?;
    let mut y_red = y_cc - y_dc.transpose() * &ydd_inv_ydc;
    // Symmetrize round-off.
    let yt = y_red.transpose();
    y_red = (&y_red + yt) * 0.5;
    Ok(KronFactors {
        reduced: ReducedAdmittance { y_red, retained_buses, retained_gfl: y.retained_gfl.clone() },
        ydd_inv_ydc,
    })
}

/// Schur complement `Y_CC - Y_Cd Y_dd^-1 Y_dC`.
pub fn kron_reduce(y: &AdmittanceMatrix) -> Result<ReducedAdmittance> {
    Ok(kron_factors(y)?.reduced)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, GflUnit, Source};
    use approx::assert_relative_eq;

    fn chain3() -> GridModel {
        GridModel {
            buses: vec![1, 2, 3],
            branches: vec![Branch { from: 1, to: 2, x: 0.1 }, Branch { from: 2, to: 3, x: 0.2 }],
            sgs: vec![Source { bus: 3, reactance: 0.05 }],
            gfm: vec![],
            gfl: vec![GflUnit { bus: 1, voltage: 1.0, capacity: 1.0 }],
        }
    }

    #[test]
    fn single_edge_laplacian() {
        let g = GridModel {
            buses: vec![1, 2],
            branches: vec![Branch { from: 1, to: 2, x: 0.5 }],
            sgs: vec![],
            gfm: vec![],
            gfl: vec![],
        };
        let y = build_admittance(&g, &OperatingPoint::new(vec![], vec![])).unwrap();
        assert_eq!(y.y, DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0]));
    }

    #[test]
    fn committed_source_adds_diagonal() {
        let g = GridModel {
            buses: vec![1, 2],
            branches: vec![Branch { from: 1, to: 2, x: 0.5 }],
            sgs: vec![Source { bus: 2, reactance: 0.25 }],
            gfm: vec![],
            gfl: vec![],
        };
        let y = build_admittance(&g, &OperatingPoint::new(vec![1.0], vec![])).unwrap();
        assert_eq!(y.y[(1, 1)], 6.0);
        let y = build_admittance(&g, &OperatingPoint::new(vec![0.0], vec![])).unwrap();
        assert_eq!(y.y[(1, 1)], 2.0);
    }

    #[test]
    fn chain_matches_hand_assembly() {
        let y = build_admittance(&chain3(), &OperatingPoint::new(vec![1.0], vec![0.5])).unwrap();
        // 1/0.1 = 10, 1/0.2 = 5, 1/0.05 = 20
        let expected = DMatrix::from_row_slice(3, 3, &[10.0, -10.0, 0.0, -10.0, 15.0, -5.0, 0.0, -5.0, 25.0]);
        assert_relative_eq!(y.y, expected, epsilon = 1e-12);
        assert_eq!(y.retained, vec![0]);
        assert_eq!(y.eliminated, vec![1, 2]);
    }

    #[test]
    fn parallel_branches_sum() {
        let mut g = chain3();
        g.branches.push(Branch { from: 1, to: 2, x: 0.1 });
        let y = build_admittance(&g, &OperatingPoint::new(vec![1.0], vec![0.5])).unwrap();
        assert_relative_eq!(y.y[(0, 1)], -20.0, epsilon = 1e-12);
    }

    #[test]
    fn chain_reduction_matches_explicit_inverse() {
        let y = build_admittance(&chain3(), &OperatingPoint::new(vec![1.0], vec![0.5])).unwrap();
        let red = kron_reduce(&y).unwrap();
        // a - b^T D^-1 b with a = 10, b = [-10, 0], D = [[15,-5],[-5,25]]
        let det = 15.0 * 25.0 - 25.0;
        let d_inv_00 = 25.0 / det;
        let expected = 10.0 - 100.0 * d_inv_00;
        assert_relative_eq!(red.y_red[(0, 0)], expected, epsilon = 1e-12);
        assert_eq!(red.retained_buses, vec![1]);
    }

    #[test]
    fn empty_delta_returns_full_matrix() {
        let g = GridModel {
            buses: vec![1, 2],
            branches: vec![Branch { from: 1, to: 2, x: 0.5 }],
            sgs: vec![],
            gfm: vec![],
            gfl: vec![GflUnit { bus: 1, voltage: 1.0, capacity: 1.0 }, GflUnit { bus: 2, voltage: 1.0, capacity: 1.0 }],
        };
        let y = build_admittance(&g, &OperatingPoint::new(vec![], vec![0.3, 0.3])).unwrap();
        let red = kron_reduce(&y).unwrap();
        assert_eq!(red.y_red, y.y);
    }

    #[test]
    fn floating_passive_island_is_named() {
        // Bus 3 hangs off bus 2 (retained GFL) only through bus 4 which is
        // itself passive, but we make bus 3-4 unreachable from the source
        // by leaving the GFL out of the dispatch.
        let g = GridModel {
            buses: vec![1, 2, 3],
            branches: vec![Branch { from: 1, to: 2, x: 0.5 }, Branch { from: 2, to: 3, x: 0.5 }],
            sgs: vec![Source { bus: 1, reactance: 0.2 }],
            gfm: vec![],
            gfl: vec![GflUnit { bus: 3, voltage: 1.0, capacity: 1.0 }],
        };
        // Source offline and GFL dropped: every bus is passive and floating.
        let y = build_admittance(&g, &OperatingPoint::new(vec![0.0], vec![0.0])).unwrap();
        match kron_reduce(&y) {
            Err(Error::ReductionSingular { buses }) => assert_eq!(buses, vec![1, 2, 3]),
            other => panic!("expected singular reduction, got {other:?}"),
        }
        // With the GFL retained the passive buses are anchored to it.
        let y = build_admittance(&g, &OperatingPoint::new(vec![0.0], vec![0.5])).unwrap();
        assert!(kron_reduce(&y).is_ok());
    }

    #[test]
    fn small_gfl_output_is_dropped() {
        let y = build_admittance(&chain3(), &OperatingPoint::new(vec![1.0], vec![1e-9])).unwrap();
        assert!(y.retained.is_empty());
        assert_eq!(y.eliminated, vec![0, 1, 2]);
    }
}
