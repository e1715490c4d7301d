use nalgebra::{DMatrix, DVector};

use super::kkt::STRONG_ACTIVITY;
use crate::error::{Error, Result};
use crate::grid::GridModel;
use crate::regression::fit::prune_features;
use crate::regression::{fit_smooth, fit_smooth_with, CoefficientFit, Dataset, SmoothRegressionConfig};

/// A coefficient vector together with a fingerprint of the optimum's
/// active set (used to detect flips between neighbouring evaluations).
#[derive(Debug, Clone, PartialEq)]
pub struct MapValue {
    pub k: DVector<f64>,
    pub signature: Vec<usize>,
}

/// The end-to-end map `p -> K`.
pub trait CoefficientMap: Sync {
    fn n_params(&self) -> usize;
    fn n_coefficients(&self) -> usize;
    fn evaluate(&self, p: &[f64]) -> Result<MapValue>;
}

/// Relabel the dataset at perturbed reactances, then refit.
#[derive(Debug, Clone)]
pub struct Pipeline {
    /// Grid at the nominal reactances.
    pub grid: GridModel,
    /// Dataset labelled at the nominal reactances.
    pub data: Dataset,
    /// Regression settings, frozen at their nominal values.
    pub cfg: SmoothRegressionConfig,
    pub nominal: CoefficientFit,
}

impl Pipeline {
    pub fn new(grid: GridModel, data: Dataset, cfg: SmoothRegressionConfig, prune: bool) -> Result<Self> {
        if data.layout.n_sources != grid.n_sources() {
            return Err(Error::Dimension(format!(
                "dataset has {} sources, grid {}",
                data.layout.n_sources,
                grid.n_sources()
            )));
        }
        let first = fit_smooth(&data, &cfg)?;
        let nominal = if prune {
            let keep = prune_features(&first);
            fit_smooth_with(&data, &cfg, &keep, Some(&first.coefficients))?
        } else {
            first
        };
        Ok(Self { grid, data, cfg, nominal })
    }

    pub fn nominal_params(&self) -> Vec<f64> {
        self.grid.source_reactances()
    }

    /// Same pipeline re-centred at other nominal reactances.
    pub fn recentred(&self, p: &[f64]) -> Result<Self> {
        let grid = self.grid.with_source_reactances(p)?;
        let labels = self.data.relabel(&grid)?;
        let data = self.data.with_labels(&labels)?;
        let nominal = fit_smooth_with(&data, &self.cfg, &self.nominal.features, Some(&self.nominal.coefficients))?;
        Ok(Self { grid, data, cfg: self.cfg, nominal })
    }

    pub fn fit_at(&self, p: &[f64]) -> Result<CoefficientFit> {
        let grid = self.grid.with_source_reactances(p)?;
        let labels = self.data.relabel(&grid)?;
        fit_smooth_with(
            &self.data.with_labels(&labels)?,
            &self.cfg,
            &self.nominal.features,
            Some(&self.nominal.coefficients),
        )
    }
}

pub(crate) fn signature(fit: &CoefficientFit) -> Vec<usize> {
    fit.active_set
        .iter()
        .zip(&fit.multipliers)
        .filter(|(_, &l)| l > STRONG_ACTIVITY)
        .map(|(&r, _)| r)
        .collect()
}

impl CoefficientMap for Pipeline {
    fn n_params(&self) -> usize {
        self.grid.n_sources()
    }

    fn n_coefficients(&self) -> usize {
        self.data.layout.dim()
    }

    fn evaluate(&self, p: &[f64]) -> Result<MapValue> {
        let fit = self.fit_at(p)?;
        Ok(MapValue { k: fit.coefficient_vector(), signature: signature(&fit) })
    }
}

/// `f(p) = a + B p + 1/2 sum_j c_j p_j^2`, for oracle tests.
#[derive(Debug, Clone)]
pub struct QuadraticMap {
    pub a: DVector<f64>,
    pub b: DMatrix<f64>,
    /// `k x p` matrix of pure second derivatives.
    pub c: DMatrix<f64>,
}

impl QuadraticMap {
    pub fn affine(a: DVector<f64>, b: DMatrix<f64>) -> Self {
        let c = DMatrix::zeros(b.nrows(), b.ncols());
        Self { a, b, c }
    }
}

impl CoefficientMap for QuadraticMap {
    fn n_params(&self) -> usize {
        self.b.ncols()
    }

    fn n_coefficients(&self) -> usize {
        self.a.len()
    }

    fn evaluate(&self, p: &[f64]) -> Result<MapValue> {
        let pv = DVector::from_column_slice(p);
        let sq = pv.map(|x| 0.5 * x * x);
        Ok(MapValue { k: &self.a + &self.b * &pv + &self.c * sq, signature: vec![] })
    }
}
