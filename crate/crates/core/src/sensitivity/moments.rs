use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::index::{grad_f, index_sensitivity, INDEX_FD_STEP};
use super::kkt::{dk_dg, JacobianMethod};
use super::pipeline::{CoefficientMap, Pipeline};
use crate::error::{Error, Result};

/// Relative step of the Hessian differences.
pub const HESSIAN_STEP: f64 = 1e-3;

/// Independent uncertain reactances, optionally with a full covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainParameterSpec {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl UncertainParameterSpec {
    /// Standard deviation `cv * mean` for every parameter.
    pub fn from_cv(mean: &[f64], cv: f64) -> Self {
        Self { mean: mean.to_vec(), variance: mean.iter().map(|m| (cv * m).powi(2)).collect(), covariance: None }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.variance.len() != self.mean.len() {
            return Err(Error::Dimension(format!("{} means, {} variances", self.mean.len(), self.variance.len())));
        }
        if self.variance.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain("variances must be finite and nonnegative".into()));
        }
        if let Some(c) = &self.covariance {
            if c.len() != self.dim() || c.iter().any(|r| r.len() != self.dim()) {
                return Err(Error::Dimension("covariance override has the wrong shape".into()));
            }
        }
        Ok(())
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        match &self.covariance {
            Some(c) => DMatrix::from_fn(self.dim(), self.dim(), |i, j| c[i][j]),
            None => DMatrix::from_diagonal(&DVector::from_column_slice(&self.variance)),
        }
    }

    /// Diagonal of the effective covariance.
    pub fn variances(&self) -> Vec<f64> {
        let c = self.covariance_matrix();
        (0..self.dim()).map(|i| c[(i, i)]).collect()
    }
}

/// How the mean picks up second-order terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MeanCorrection {
    /// `mu = f(mu_p)`.
    FirstOrder,
    /// `mu = f(mu_p) + 1/2 sum_p f_pp sigma_p^2`.
    #[default]
    SecondOrder,
    /// `mu = f(mu_p) + sum_p f_pp sigma_p^2` (no one half).
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMeta {
    pub index_fd: f64,
    pub hessian: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FallbackMeta {
    /// Index derivatives computed by finite differences.
    pub index: usize,
    /// `dK/dg` from retrain differences instead of the KKT system.
    pub kkt: bool,
    /// Parameters whose Hessian stencil straddled an active-set change.
    pub hessian: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentMeta {
    pub mode: MeanCorrection,
    pub steps: StepMeta,
    pub fallbacks: FallbackMeta,
}

/// Mean and covariance of the surrogate coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub meta: MomentMeta,
}

impl MomentEstimate {
    pub fn mu_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mu)
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let n = self.mu.len();
        DMatrix::from_fn(n, n, |i, j| self.sigma[i][j])
    }

    pub fn variances(&self) -> Vec<f64> {
        (0..self.mu.len()).map(|i| self.sigma[i][i]).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Pure second derivatives `d^2 f_k / d p_j^2` by central differences.
#[derive(Debug, Clone)]
pub struct HessianDiag {
    /// `k x p`.
    pub values: DMatrix<f64>,
    pub steps: Vec<f64>,
    /// Parameters evaluated with a one-sided stencil after an active-set flip.
    pub flagged: Vec<usize>,
    pub f_mu: DVector<f64>,
}

/// Central second differences with `h_j = rel_step * mu_j`. When the
/// active set differs across the stencil, the one-sided stencil on the
/// side that agrees with the centre is used instead and the parameter is
/// flagged.
pub fn hessian_diag_f(map: &dyn CoefficientMap, mu: &[f64], rel_step: f64) -> Result<HessianDiag> {
    let p = map.n_params();
    if mu.len() != p {
        return Err(Error::Dimension(format!("{} means for {p} parameters", mu.len())));
    }
    let centre = map.evaluate(mu)?;
    let cols: Vec<(DVector<f64>, f64, bool)> = (0..p)
        .into_par_iter()
        .map(|j| -> Result<(DVector<f64>, f64, bool)> {
            let h = rel_step * mu[j].abs().max(f64::MIN_POSITIVE);
            let at = |steps: f64| {
                let mut q = mu.to_vec();
                q[j] += steps * h;
                map.evaluate(&q)
            };
            let plus = at(1.0)?;
            let minus = at(-1.0)?;
            let same_plus = plus.signature == centre.signature;
            let same_minus = minus.signature == centre.signature;
            if same_plus && same_minus {
                return Ok(((plus.k - &centre.k * 2.0 + minus.k) / (h * h), h, false));
            }
            log::warn!("active set changes around parameter {j}; using a one-sided stencil");
            let col = if same_plus {
                let plus2 = at(2.0)?;
                (plus2.k - plus.k * 2.0 + &centre.k) / (h * h)
            } else {
                let minus2 = at(-2.0)?;
                (&centre.k - minus.k * 2.0 + minus2.k) / (h * h)
            };
            Ok((col, h, true))
        })
        .collect::<Result<_>>()?;
    let mut values = DMatrix::zeros(map.n_coefficients(), p);
    let mut steps = Vec::with_capacity(p);
    let mut flagged = Vec::new();
    for (j, (col, h, flag)) in cols.into_iter().enumerate() {
        values.set_column(j, &col);
        steps.push(h);
        if flag {
            flagged.push(j);
        }
    }
    Ok(HessianDiag { values, steps, flagged, f_mu: centre.k })
}

/// Delta-method moments: `Sigma_K = grad Sigma_p grad^T` and the mean with
/// the selected second-order correction.
pub fn propagate_moments(
    grad: &DMatrix<f64>,
    hessian_diag: Option<&DMatrix<f64>>,
    spec: &UncertainParameterSpec,
    f_mu: &DVector<f64>,
    mode: MeanCorrection,
) -> Result<MomentEstimate> {
    spec.validate()?;
    let k = f_mu.len();
    if grad.nrows() != k || grad.ncols() != spec.dim() {
        return Err(Error::Dimension(format!(
            "gradient is {}x{}, expected {k}x{}",
            grad.nrows(),
            grad.ncols(),
            spec.dim()
        )));
    }
    if !grad.iter().chain(f_mu.iter()).all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite gradient or mean".into()));
    }
    let var = spec.variances();
    let factor = match mode {
        MeanCorrection::FirstOrder => 0.0,
        MeanCorrection::SecondOrder => 0.5,
        MeanCorrection::Literal => 1.0,
    };
    let mut mu = f_mu.clone();
    if factor != 0.0 {
        let h = hessian_diag.ok_or_else(|| Error::Domain("second-order mean needs the Hessian diagonal".into()))?;
        if h.nrows() != k || h.ncols() != spec.dim() {
            return Err(Error::Dimension("Hessian diagonal has the wrong shape".into()));
        }
        for i in 0..k {
            mu[i] += factor * (0..spec.dim()).map(|j| h[(i, j)] * var[j]).sum::<f64>();
        }
    }
    let s = grad * spec.covariance_matrix() * grad.transpose();
    let s = (&s + s.transpose()) * 0.5;
    Ok(MomentEstimate {
        mu: mu.iter().copied().collect(),
        sigma: (0..k).map(|i| s.row(i).iter().copied().collect()).collect(),
        meta: MomentMeta {
            mode,
            steps: StepMeta { index_fd: INDEX_FD_STEP, hessian: HESSIAN_STEP },
            fallbacks: FallbackMeta::default(),
        },
    })
}

/// Analytic gradient `grad f` of the pipeline at its nominal point.
#[derive(Debug, Clone)]
pub struct PipelineGradient {
    pub grad: DMatrix<f64>,
    pub index_fallbacks: usize,
    pub method: JacobianMethod,
}

pub fn pipeline_gradient(pipe: &Pipeline) -> Result<PipelineGradient> {
    let idx = index_sensitivity(&pipe.grid, &pipe.data)?;
    let jac = dk_dg(&pipe.nominal, &pipe.data)?;
    Ok(PipelineGradient { grad: grad_f(&jac.dk_dg, &idx)?, index_fallbacks: idx.fallbacks.len(), method: jac.method })
}

/// Full analytic chain: index and KKT sensitivities, Hessian diagonal,
/// Delta-method moments. The pipeline is re-centred at `spec.mean` first
/// when its nominal reactances differ.
pub fn analytic_moments(pipe: &Pipeline, spec: &UncertainParameterSpec, mode: MeanCorrection) -> Result<MomentEstimate> {
    spec.validate()?;
    if spec.dim() != pipe.grid.n_sources() {
        return Err(Error::Dimension(format!("{} parameters for {} sources", spec.dim(), pipe.grid.n_sources())));
    }
    let recentred;
    let pipe = if pipe.nominal_params() != spec.mean {
        recentred = pipe.recentred(&spec.mean)?;
        &recentred
    } else {
        pipe
    };
    let g = pipeline_gradient(pipe)?;
    let f_mu = pipe.nominal.coefficient_vector();
    let hess = match mode {
        MeanCorrection::FirstOrder => None,
        _ => Some(hessian_diag_f(pipe, &spec.mean, HESSIAN_STEP)?),
    };
    let mut est = propagate_moments(&g.grad, hess.as_ref().map(|h| &h.values), spec, &f_mu, mode)?;
    est.meta.fallbacks = FallbackMeta {
        index: g.index_fallbacks,
        kkt: g.method == JacobianMethod::RetrainFallback,
        hessian: hess.map(|h| h.flagged).unwrap_or_default(),
    };
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensitivity::pipeline::QuadraticMap;
    use approx::assert_relative_eq;

    #[test]
    fn affine_map_has_zero_hessian() {
        let b = DMatrix::from_row_slice(2, 2, &[1.5, -2.0, 0.3, 4.0]);
        let m = QuadraticMap::affine(DVector::from_vec(vec![1.0, 2.0]), b.clone());
        let h = hessian_diag_f(&m, &[0.3, 0.7], HESSIAN_STEP).unwrap();
        for j in 0..2 {
            let bound = 1e-6 * b.column(j).amax() / h.steps[j];
            assert!(h.values.column(j).amax() <= bound);
        }
        assert!(h.flagged.is_empty());
    }

    #[test]
    fn quadratic_map_recovers_curvature() {
        let c = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, -1.5, 2.5]);
        let m = QuadraticMap { a: DVector::zeros(2), b: DMatrix::zeros(2, 2), c: c.clone() };
        let h = hessian_diag_f(&m, &[0.4, 1.1], HESSIAN_STEP).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                if c[(i, j)] != 0.0 {
                    assert_relative_eq!(h.values[(i, j)], c[(i, j)], max_relative = 1e-6);
                }
            }
        }
        let half = hessian_diag_f(&m, &[0.4, 1.1], HESSIAN_STEP / 2.0).unwrap();
        assert!((&half.values - &h.values).amax() <= 0.05 * c.amax());
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let f = DVector::from_vec(vec![1.0, -2.0]);
        let spec = UncertainParameterSpec { mean: vec![0.5], variance: vec![0.0], covariance: None };
        let grad = DMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        let h = DMatrix::from_column_slice(2, 1, &[10.0, 10.0]);
        let e = propagate_moments(&grad, Some(&h), &spec, &f, MeanCorrection::SecondOrder).unwrap();
        assert_eq!(e.mu, vec![1.0, -2.0]);
        assert_eq!(e.sigma, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn affine_moments_are_exact() {
        let a = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -2.0, 0.0, 0.3, 0.7]);
        let spec = UncertainParameterSpec { mean: vec![0.2, 0.4], variance: vec![0.01, 0.04], covariance: None };
        let m = QuadraticMap::affine(a.clone(), b.clone());
        let h = hessian_diag_f(&m, &spec.mean, HESSIAN_STEP).unwrap();
        let e = propagate_moments(&b, Some(&h.values), &spec, &h.f_mu, MeanCorrection::SecondOrder).unwrap();
        let want_mu = &a + &b * DVector::from_vec(spec.mean.clone());
        let want_s = &b * spec.covariance_matrix() * b.transpose();
        assert!((e.mu_vector() - want_mu).amax() <= 1e-9);
        assert!((e.sigma_matrix() - want_s).amax() <= 1e-15);
    }

    #[test]
    fn square_of_centred_variable() {
        // f(p) = p^2 with p ~ (0, s^2): E f = s^2, first-order variance 0.
        let m = QuadraticMap {
            a: DVector::zeros(1),
            b: DMatrix::zeros(1, 1),
            c: DMatrix::from_element(1, 1, 2.0),
        };
        let s2 = 0.09;
        let spec = UncertainParameterSpec { mean: vec![0.0], variance: vec![s2], covariance: None };
        // Centre at 0: use an absolute step through a shifted evaluation.
        let h = 1e-3;
        let f = |p: f64| m.evaluate(&[p]).unwrap().k[0];
        let hess = DMatrix::from_element(1, 1, (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h));
        let grad = DMatrix::from_element(1, 1, (f(h) - f(-h)) / (2.0 * h));
        let e = propagate_moments(&grad, Some(&hess), &spec, &DVector::zeros(1), MeanCorrection::SecondOrder).unwrap();
        assert_relative_eq!(e.mu[0], s2, max_relative = 1e-9);
        assert_eq!(e.sigma[0][0], 0.0);
        let lit = propagate_moments(&grad, Some(&hess), &spec, &DVector::zeros(1), MeanCorrection::Literal).unwrap();
        assert_relative_eq!(lit.mu[0], 2.0 * s2, max_relative = 1e-9);
    }

    #[test]
    fn covariance_override_is_used() {
        let spec = UncertainParameterSpec {
            mean: vec![1.0, 1.0],
            variance: vec![0.0, 0.0],
            covariance: Some(vec![vec![0.04, 0.01], vec![0.01, 0.09]]),
        };
        let grad = DMatrix::identity(2, 2);
        let e = propagate_moments(&grad, None, &spec, &DVector::zeros(2), MeanCorrection::FirstOrder).unwrap();
        assert_eq!(e.sigma[0][1], 0.01);
        assert_eq!(spec.variances(), vec![0.04, 0.09]);
    }

    #[test]
    fn json_layout() {
        let spec = UncertainParameterSpec::from_cv(&[0.2], 0.05);
        let e = propagate_moments(&DMatrix::identity(1, 1), None, &spec, &DVector::zeros(1), MeanCorrection::FirstOrder)
            .unwrap();
        let json = e.to_json().unwrap();
        let mu = json.find("\"mu\"").unwrap();
        let sigma = json.find("\"sigma\"").unwrap();
        let meta = json.find("\"meta\"").unwrap();
        assert!(mu < sigma && sigma < meta);
        assert_eq!(MomentEstimate::from_json(&json).unwrap(), e);
    }
}
