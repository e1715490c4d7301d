use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::fit::gaussian_weight_slope;
use crate::regression::{
    fit_smooth_with, gaussian_weight, CoefficientFit, Dataset, FitConfig, RowFamily, SmoothRegressionConfig,
};

/// Multipliers above this count as strongly active.
pub const STRONG_ACTIVITY: f64 = 1e-8;
/// Label step of the retrain finite differences.
pub const RETRAIN_STEP: f64 = 1e-5;
/// Reciprocal condition number below which the KKT matrix is treated as singular.
const SINGULAR_RCOND: f64 = 1e-12;

/// Blocks of the perturbed KKT system `[[A, B], [B^T, 0]] [dK; dl] = [-c; d]`
/// in the fit's feature space.
#[derive(Debug, Clone)]
pub struct KktPerturbation {
    /// Hessian of the Lagrangian in `K`.
    pub a: DMatrix<f64>,
    /// One column per strongly active row: its gradient in `K`.
    pub b: DMatrix<f64>,
    /// Column `w`: `d (grad_K C) / d g^w`.
    pub c: DMatrix<f64>,
    /// Column `w`: derivative of each active row's bound with respect to `g^w`.
    pub d: DMatrix<f64>,
    /// Indices into `fit.rows` of the strongly active rows.
    pub active_rows: Vec<usize>,
    /// Active rows dropped for lack of a positive multiplier.
    pub weakly_active: Vec<usize>,
}

pub(crate) fn smooth_config(fit: &CoefficientFit) -> Result<SmoothRegressionConfig> {
    match &fit.config {
        FitConfig::Smooth(cfg) => Ok(*cfg),
        FitConfig::Hard { .. } => Err(Error::Domain("sensitivities require a smooth fit".into())),
    }
}

/// Builds the blocks from the fitted optimum.
///
/// With `C = sum_w e_w (g_w - K^T X_w)^2` and `e_w` the Gaussian weight of
/// `g_w`:
/// * `A = sum_w 2 e_w X_w X_w^T` (the rows are linear in `K`);
/// * `c_w = 2 X_w (e'_w (K^T X_w - g_w) - e_w)`
///   `= -2 X_w e_w (1 + (K^T X_w - g_w)(g_w - g'_lim)/s^2)`;
/// * upper rows `K^T X <= g_lim + M gamma(g - g_lim)` give `B = X`,
///   `d = M gamma'(g - g_lim)`;
/// * lower rows `-K^T X <= -g_lim + M gamma(g_lim + nu - g)` give `B = -X`,
///   `d = -M gamma'(g_lim + nu - g)`.
pub fn assemble_kkt_perturbation(fit: &CoefficientFit, data: &Dataset) -> Result<KktPerturbation> {
    let cfg = smooth_config(fit)?;
    let feats = &fit.features;
    let k = feats.len();
    let n = data.len();
    let xw = |w: usize| DVector::from_iterator(k, feats.iter().map(|&f| data.samples[w].x.0[f]));
    let mut a = DMatrix::zeros(k, k);
    let mut c = DMatrix::zeros(k, n);
    for w in 0..n {
        let x = xw(w);
        let g = data.samples[w].g;
        let e = gaussian_weight(g, &cfg);
        a.ger(2.0 * e, &x, &x, 1.0);
        let resid = fit.predict(&data.samples[w].x.0) - g;
        let slope = gaussian_weight_slope(g, &cfg);
        c.set_column(w, &(&x * (2.0 * (slope * resid - e))));
    }
    let mut active_rows = Vec::new();
    let mut weakly_active = Vec::new();
    for (row, &lambda) in fit.active_set.iter().zip(&fit.multipliers) {
        if lambda > STRONG_ACTIVITY {
            active_rows.push(*row);
        } else {
            weakly_active.push(*row);
        }
    }
    let m = active_rows.len();
    let mut b = DMatrix::zeros(k, m);
    let mut d = DMatrix::zeros(m, n);
    for (j, &r) in active_rows.iter().enumerate() {
        let origin = fit.rows[r];
        let x = xw(origin.sample);
        let g = data.samples[origin.sample].g;
        match origin.family {
            RowFamily::Upper => {
                b.set_column(j, &x);
                d[(j, origin.sample)] = cfg.big_m * cfg.switch_slope(g - cfg.g_lim);
            }
            RowFamily::Lower => {
                b.set_column(j, &(-x));
                d[(j, origin.sample)] = -cfg.big_m * cfg.switch_slope(cfg.g_lim + cfg.nu - g);
            }
        }
    }
    Ok(KktPerturbation { a, b, c, d, active_rows, weakly_active })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMethod {
    Analytic,
    /// KKT matrix singular; every column from retrain differences.
    RetrainFallback,
}

/// `dK/dg^w` for every sample.
#[derive(Debug, Clone)]
pub struct CoefficientJacobian {
    /// `k_bar x |Omega|`; rows of pruned coefficients are zero.
    pub dk_dg: DMatrix<f64>,
    /// `|active| x |Omega|` multiplier sensitivities (empty on fallback).
    pub dlambda_dg: DMatrix<f64>,
    pub method: JacobianMethod,
    /// Largest residual of the solved linear systems.
    pub residual: f64,
}

/// Solves the perturbed KKT system for every sample, falling back to
/// retrain differences when the system is singular.
pub fn dk_dg(fit: &CoefficientFit, data: &Dataset) -> Result<CoefficientJacobian> {
    let sys = assemble_kkt_perturbation(fit, data)?;
    let k = sys.a.nrows();
    let m = sys.b.ncols();
    let n = data.len();
    let dim = data.layout.dim();
    let mut kkt = DMatrix::zeros(k + m, k + m);
    kkt.view_mut((0, 0), (k, k)).copy_from(&sys.a);
    kkt.view_mut((0, k), (k, m)).copy_from(&sys.b);
    kkt.view_mut((k, 0), (m, k)).copy_from(&sys.b.transpose());
    let sv = kkt.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smax > 0.0) || smin < SINGULAR_RCOND * smax {
        log::warn!("KKT matrix singular (rcond {:e}); using retrain differences", smin / smax);
        return retrain_jacobian(fit, data);
    }
    let mut rhs = DMatrix::zeros(k + m, n);
    rhs.view_mut((0, 0), (k, n)).copy_from(&(-&sys.c));
    rhs.view_mut((k, 0), (m, n)).copy_from(&sys.d);
    let lu = kkt.clone().lu();
    let sol = lu.solve(&rhs).ok_or_else(|| Error::Numerical("KKT solve failed".into()))?;
    let residual = (&kkt * &sol - &rhs).amax();
    let mut dk = DMatrix::zeros(dim, n);
    for (j, &f) in fit.features.iter().enumerate() {
        dk.set_row(f, &sol.row(j));
    }
    Ok(CoefficientJacobian {
        dk_dg: dk,
        dlambda_dg: sol.rows(k, m).into_owned(),
        method: JacobianMethod::Analytic,
        residual,
    })
}

/// Column `w` by refitting with `g^w` moved by `+-h`.
pub fn retrain_column(fit: &CoefficientFit, data: &Dataset, w: usize, h: f64) -> Result<DVector<f64>> {
    let cfg = smooth_config(fit)?;
    let labels: Vec<f64> = data.samples.iter().map(|s| s.g).collect();
    let refit = |delta: f64| -> Result<CoefficientFit> {
        let mut l = labels.clone();
        l[w] += delta;
        fit_smooth_with(&data.with_labels(&l)?, &cfg, &fit.features, Some(&fit.coefficients))
    };
    let plus = refit(h)?;
    let minus = refit(-h)?;
    Ok((plus.coefficient_vector() - minus.coefficient_vector()) / (2.0 * h))
}

pub fn retrain_jacobian(fit: &CoefficientFit, data: &Dataset) -> Result<CoefficientJacobian> {
    let cols: Vec<DVector<f64>> =
        (0..data.len()).into_par_iter().map(|w| retrain_column(fit, data, w, RETRAIN_STEP)).collect::<Result<_>>()?;
    Ok(CoefficientJacobian {
        dk_dg: DMatrix::from_columns(&cols),
        dlambda_dg: DMatrix::zeros(0, data.len()),
        method: JacobianMethod::RetrainFallback,
        residual: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::{fit_smooth, AugmentedDecision, DecisionLayout, TrainingSample};

    fn data(noise: f64) -> Dataset {
        let k = [1.0, 0.8, 0.5, -1.2, 0.3, 0.2];
        let mut samples = Vec::new();
        let mut i = 0;
        for c in 0..4 {
            let flags = [(c & 1) as f64, ((c >> 1) & 1) as f64];
            for w in [0.1, 0.4, 0.7, 0.9] {
                let x = AugmentedDecision::new(&flags, w);
                let g = x.dot(&k) + noise * ((i * 7 % 5) as f64 - 2.0);
                samples.push(TrainingSample { x, g });
                i += 1;
            }
        }
        Dataset { layout: DecisionLayout::new(2), samples, skipped: vec![] }
    }

    fn labels(d: &Dataset) -> Vec<f64> {
        d.samples.iter().map(|s| s.g).collect()
    }

    /// Gradient of the Lagrangian in `K` at fixed `K`, `lambda`, as a function of the labels.
    fn lagrangian_grad(fit: &CoefficientFit, d: &Dataset, cfg: &SmoothRegressionConfig, rows: &[usize], lam: &[f64]) -> DVector<f64> {
        let k = fit.features.len();
        let mut g = DVector::zeros(k);
        for s in &d.samples {
            let x = DVector::from_iterator(k, fit.features.iter().map(|&f| s.x.0[f]));
            let e = gaussian_weight(s.g, cfg);
            g += &x * (2.0 * e * (fit.predict(&s.x.0) - s.g));
        }
        for (&r, &l) in rows.iter().zip(lam) {
            let o = fit.rows[r];
            let x = DVector::from_iterator(k, fit.features.iter().map(|&f| d.samples[o.sample].x.0[f]));
            g += match o.family {
                RowFamily::Upper => x * l,
                RowFamily::Lower => x * -l,
            };
        }
        g
    }

    #[test]
    fn c_block_matches_finite_difference_of_lagrangian_gradient() {
        let d = data(0.15);
        let cfg = SmoothRegressionConfig::with_defaults(1.2, 0.6, &labels(&d));
        let fit = fit_smooth(&d, &cfg).unwrap();
        let sys = assemble_kkt_perturbation(&fit, &d).unwrap();
        let lam: Vec<f64> = sys
            .active_rows
            .iter()
            .map(|r| fit.multipliers[fit.active_set.iter().position(|a| a == r).unwrap()])
            .collect();
        let h = 1e-6;
        for w in 0..d.len() {
            let mut l = labels(&d);
            l[w] += h;
            let up = lagrangian_grad(&fit, &d.with_labels(&l).unwrap(), &cfg, &sys.active_rows, &lam);
            l[w] -= 2.0 * h;
            let down = lagrangian_grad(&fit, &d.with_labels(&l).unwrap(), &cfg, &sys.active_rows, &lam);
            let fd = (up - down) / (2.0 * h);
            let col = sys.c.column(w);
            assert!((&fd - col).amax() <= 1e-5 * (1.0 + col.amax()), "sample {w}");
        }
    }

    #[test]
    fn zero_residual_sample_has_plain_c() {
        let d = data(0.0);
        let lo = labels(&d).iter().copied().fold(f64::INFINITY, f64::min);
        let cfg = SmoothRegressionConfig::with_defaults(lo, 100.0, &labels(&d));
        let fit = fit_smooth(&d, &cfg).unwrap();
        let sys = assemble_kkt_perturbation(&fit, &d).unwrap();
        assert!(sys.active_rows.is_empty());
        for w in 0..d.len() {
            let e = gaussian_weight(d.samples[w].g, &cfg);
            for k in 0..6 {
                let want = -2.0 * d.samples[w].x.0[k] * e;
                assert!((sys.c[(k, w)] - want).abs() <= 1e-8 * (1.0 + want.abs()));
            }
        }
        // With no active rows the system is the weighted least-squares sensitivity.
        let jac = dk_dg(&fit, &d).unwrap();
        let want = sys.a.clone().lu().solve(&(-&sys.c)).unwrap();
        assert!((jac.dk_dg - want).amax() <= 1e-10);
    }

    #[test]
    fn analytic_columns_match_retraining() {
        let d = data(0.15);
        let cfg = SmoothRegressionConfig::with_defaults(1.2, 0.6, &labels(&d));
        let fit = fit_smooth(&d, &cfg).unwrap();
        let jac = dk_dg(&fit, &d).unwrap();
        assert_eq!(jac.method, JacobianMethod::Analytic);
        assert!(jac.residual <= 1e-9);
        for w in 0..d.len() {
            let fd = retrain_column(&fit, &d, w, RETRAIN_STEP).unwrap();
            let col = jac.dk_dg.column(w);
            // Retrain differences carry ~1e-7 of solver noise, hence the absolute floor.
            assert!((&fd - col).amax() <= 1e-3 * col.amax() + 1e-6, "sample {w}: {fd} vs {col}");
        }
    }

    #[test]
    fn active_soft_rows_match_retraining() {
        let d = data(0.15);
        let mut cfg = SmoothRegressionConfig::with_defaults(1.2, 0.6, &labels(&d));
        cfg.big_m = 0.05;
        let fit = fit_smooth(&d, &cfg).unwrap();
        let jac = dk_dg(&fit, &d).unwrap();
        let sys = assemble_kkt_perturbation(&fit, &d).unwrap();
        assert!(!sys.active_rows.is_empty());
        assert!(sys.d.iter().any(|v| *v != 0.0));
        assert_eq!(jac.method, JacobianMethod::Analytic);
        for w in 0..d.len() {
            let fd = retrain_column(&fit, &d, w, RETRAIN_STEP).unwrap();
            let col = jac.dk_dg.column(w);
            assert!((&fd - col).amax() <= 1e-3 * col.amax() + 1e-6, "sample {w}: {fd} vs {col}");
        }
    }

    #[test]
    fn duplicate_samples_share_columns() {
        let mut d = data(0.15);
        d.samples.push(d.samples[5].clone());
        let cfg = SmoothRegressionConfig::with_defaults(1.2, 0.6, &labels(&d));
        let fit = fit_smooth(&d, &cfg).unwrap();
        let jac = dk_dg(&fit, &d).unwrap();
        let last = d.len() - 1;
        assert!((jac.dk_dg.column(5) - jac.dk_dg.column(last)).amax() <= 1e-12);
    }

    #[test]
    fn far_sample_has_negligible_influence() {
        let mut d = data(0.15);
        d.samples[3].g = 40.0;
        let cfg = SmoothRegressionConfig::with_defaults(1.2, 0.6, &labels(&d));
        let fit = fit_smooth(&d, &cfg).unwrap();
        let jac = dk_dg(&fit, &d).unwrap();
        assert!(jac.dk_dg.column(3).amax() <= 1e-12);
    }

    #[test]
    fn singular_system_falls_back_to_retraining() {
        // Only two distinct decisions: the weighted normal matrix is rank deficient.
        let d = Dataset {
            layout: DecisionLayout::new(2),
            samples: vec![
                TrainingSample { x: AugmentedDecision::new(&[1.0, 0.0], 0.5), g: 1.3 },
                TrainingSample { x: AugmentedDecision::new(&[1.0, 1.0], 0.5), g: 1.5 },
            ],
            skipped: vec![],
        };
        let cfg = SmoothRegressionConfig::with_defaults(1.2, 0.6, &labels(&d));
        let fit = fit_smooth(&d, &cfg).unwrap();
        let jac = dk_dg(&fit, &d).unwrap();
        assert_eq!(jac.method, JacobianMethod::RetrainFallback);
    }
}
