use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::qp::{solve_qp, QpOptions, QpProblem, QpSolution};
use crate::error::{Error, Result};

/// Margin that turns the strict unstable-side inequality into `<= g_lim - EPS_STRICT`.
pub const EPS_STRICT: f64 = 1e-6;

/// Lift on the stable-side bound, `>= g_lim + EPS_CLOSED`, so that samples
/// held on that bound by an active row still predict at or above `g_lim`
/// after solver round-off.
pub const EPS_CLOSED: f64 = 1e-9;

/// Region membership of every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPartition {
    pub g_lim: f64,
    pub nu: f64,
    /// `g < g_lim`.
    pub unstable: Vec<usize>,
    /// `g_lim <= g < g_lim + nu`.
    pub boundary: Vec<usize>,
    /// `g >= g_lim + nu`.
    pub stable: Vec<usize>,
}

pub fn partition(labels: &[f64], g_lim: f64, nu: f64) -> Result<RegionPartition> {
    if !(nu > 0.0) {
        return Err(Error::Domain(format!("nu must be positive, got {nu}")));
    }
    let mut p = RegionPartition { g_lim, nu, unstable: vec![], boundary: vec![], stable: vec![] };
    for (i, &g) in labels.iter().enumerate() {
        if g < g_lim {
            p.unstable.push(i);
        } else if g < g_lim + nu {
            p.boundary.push(i);
        } else {
            p.stable.push(i);
        }
    }
    Ok(p)
}

/// How the big-M terms of the soft constraints switch on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Switching {
    /// `M * gamma(x)` with the logistic `gamma`.
    #[default]
    Sigmoid,
    /// `M * [x >= 0]`, the infinitely steep limit.
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothRegressionConfig {
    pub g_lim: f64,
    pub nu: f64,
    /// Gaussian spatial scale.
    pub s: f64,
    /// Sigmoid steepness.
    pub r: f64,
    /// Big-M constant.
    pub big_m: f64,
    #[serde(default)]
    pub switching: Switching,
}

impl SmoothRegressionConfig {
    /// Defaults: boundary weight 0.5, `r = 0.5`, `M = 10 max|g|`.
    pub fn with_defaults(g_lim: f64, nu: f64, labels: &[f64]) -> Self {
        let max_abs = labels.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        Self { g_lim, nu, s: default_scale(nu), r: 0.5, big_m: 10.0 * max_abs.max(1e-12), switching: Switching::Sigmoid }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.s > 0.0 && self.r > 0.0 && self.big_m > 0.0) {
            return Err(Error::Domain(format!("invalid smooth regression config {self:?}")));
        }
        Ok(())
    }

    /// Centre of the Gaussian weight, `g_lim + nu/2`.
    pub fn centre(&self) -> f64 {
        self.g_lim + 0.5 * self.nu
    }

    pub fn switch(&self, x: f64) -> f64 {
        match self.switching {
            Switching::Sigmoid => sigmoid_gamma(x, self.r),
            Switching::Step => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn switch_slope(&self, x: f64) -> f64 {
        match self.switching {
            Switching::Sigmoid => sigmoid_gamma_slope(x, self.r),
            Switching::Step => 0.0,
        }
    }
}

/// `s` such that the weight at `g_lim` and at `g_lim + nu` equals one half.
pub fn default_scale(nu: f64) -> f64 {
    nu / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

pub fn gaussian_weight(g: f64, cfg: &SmoothRegressionConfig) -> f64 {
    let d = g - cfg.centre();
    (-d * d / (2.0 * cfg.s * cfg.s)).exp()
}

/// Derivative of [`gaussian_weight`] with respect to `g`.
pub fn gaussian_weight_slope(g: f64, cfg: &SmoothRegressionConfig) -> f64 {
    -gaussian_weight(g, cfg) * (g - cfg.centre()) / (cfg.s * cfg.s)
}

pub fn sigmoid_gamma(x: f64, r: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * r * x).exp())
}

pub fn sigmoid_gamma_slope(x: f64, r: f64) -> f64 {
    let g = sigmoid_gamma(x, r);
    2.0 * r * g * (1.0 - g)
}

/// Which regression produced a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitConfig {
    Hard { g_lim: f64, nu: f64 },
    Smooth(SmoothRegressionConfig),
}

/// Origin of a QP inequality row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowFamily {
    /// `K^T X <= bound` (unstable side).
    Upper,
    /// `-K^T X <= -bound` (stable side).
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowOrigin {
    pub sample: usize,
    pub family: RowFamily,
}

/// Fitted surrogate coefficients with the optimum's active set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientFit {
    pub coefficients: Vec<f64>,
    /// Active inequality rows (indices into `rows`).
    pub active_set: Vec<usize>,
    /// Multiplier of each active row, aligned with `active_set`.
    pub multipliers: Vec<f64>,
    pub objective: f64,
    pub config: FitConfig,
    /// Coefficients allowed to vary; the rest are pinned at zero.
    pub features: Vec<usize>,
    pub rows: Vec<RowOrigin>,
    pub kkt_residual: f64,
    pub iterations: usize,
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

impl CoefficientFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.coefficients.iter().zip(x).map(|(k, x)| k * x).sum()
    }

    pub fn coefficient_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.coefficients.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// QP data in the reduced feature space plus the row bookkeeping.
struct Assembled {
    problem: QpProblem,
    rows: Vec<RowOrigin>,
    constant: f64,
}

fn select_columns(data: &Dataset, features: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(data.len(), features.len(), |i, j| data.samples[i].x.0[features[j]])
}

/// Weighted least squares `sum_w w (g - K^T X)^2` as `1/2 K^T H K + f^T K + c`.
fn weighted_lsq(x: &DMatrix<f64>, labels: &[f64], weights: &[(usize, f64)]) -> (DMatrix<f64>, DVector<f64>, f64) {
    let k = x.ncols();
    let mut h = DMatrix::zeros(k, k);
    let mut f = DVector::zeros(k);
    let mut c = 0.0;
    for &(i, w) in weights {
        let row = x.row(i).transpose();
        h.ger(2.0 * w, &row, &row, 1.0);
        f.axpy(-2.0 * w * labels[i], &row, 1.0);
        c += w * labels[i] * labels[i];
    }
    (h, f, c)
}

fn stack_rows(x: &DMatrix<f64>, rows: &[RowOrigin], bounds: Vec<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let a = DMatrix::from_fn(rows.len(), x.ncols(), |r, j| {
        let v = x[(rows[r].sample, j)];
        match rows[r].family {
            RowFamily::Upper => v,
            RowFamily::Lower => -v,
        }
    });
    (a, DVector::from_vec(bounds))
}

fn assemble_hard(data: &Dataset, part: &RegionPartition, features: &[usize]) -> Result<Assembled> {
    if part.boundary.is_empty() {
        return Err(Error::DegenerateObjective(format!(
            "no sample in the boundary region [g_lim, g_lim + nu) with nu = {}",
            part.nu
        )));
    }
    let x = select_columns(data, features);
    let labels: Vec<f64> = data.samples.iter().map(|s| s.g).collect();
    let weights: Vec<(usize, f64)> = part.boundary.iter().map(|&i| (i, 1.0)).collect();
    let (h, f, constant) = weighted_lsq(&x, &labels, &weights);
    let mut rows = Vec::new();
    let mut bounds = Vec::new();
    for i in 0..data.len() {
        if part.unstable.binary_search(&i).is_ok() {
            rows.push(RowOrigin { sample: i, family: RowFamily::Upper });
            bounds.push(part.g_lim - EPS_STRICT);
        } else if part.stable.binary_search(&i).is_ok() {
            rows.push(RowOrigin { sample: i, family: RowFamily::Lower });
            bounds.push(-part.g_lim - EPS_CLOSED);
        }
    }
    let (a, b) = stack_rows(&x, &rows, bounds);
    Ok(Assembled { problem: QpProblem::new(h, f, a, b)?, rows, constant })
}

fn assemble_smooth(data: &Dataset, cfg: &SmoothRegressionConfig, features: &[usize]) -> Result<Assembled> {
    cfg.validate()?;
    let x = select_columns(data, features);
    let labels: Vec<f64> = data.samples.iter().map(|s| s.g).collect();
    let weights: Vec<(usize, f64)> = labels.iter().enumerate().map(|(i, &g)| (i, gaussian_weight(g, cfg))).collect();
    let (h, f, constant) = weighted_lsq(&x, &labels, &weights);
    let mut rows = Vec::with_capacity(2 * data.len());
    let mut bounds = Vec::with_capacity(2 * data.len());
    for (i, &g) in labels.iter().enumerate() {
        rows.push(RowOrigin { sample: i, family: RowFamily::Upper });
        bounds.push(cfg.g_lim + cfg.big_m * cfg.switch(g - cfg.g_lim));
        rows.push(RowOrigin { sample: i, family: RowFamily::Lower });
        bounds.push(-cfg.g_lim + cfg.big_m * cfg.switch(cfg.g_lim + cfg.nu - g));
    }
    let (a, b) = stack_rows(&x, &rows, bounds);
    Ok(Assembled { problem: QpProblem::new(h, f, a, b)?, rows, constant })
}

fn finish(
    asm: Assembled,
    sol: QpSolution,
    data: &Dataset,
    features: &[usize],
    config: FitConfig,
) -> CoefficientFit {
    let mut coefficients = vec![0.0; data.layout.dim()];
    for (j, &f) in features.iter().enumerate() {
        coefficients[f] = sol.x[j];
    }
    let kkt_residual = asm.problem.stationarity_residual(&sol.x, &sol.multipliers);
    let multipliers = sol.active.iter().map(|&r| sol.multipliers[r]).collect();
    CoefficientFit {
        coefficients,
        active_set: sol.active.clone(),
        multipliers,
        objective: sol.objective + asm.constant,
        config,
        features: features.to_vec(),
        rows: asm.rows,
        kkt_residual,
        iterations: sol.iterations,
        objective_trace: sol.objective_trace.iter().map(|o| o + asm.constant).collect(),
    }
}

fn map_infeasible(err: Error, rows: &[RowOrigin], hint: &str) -> Error {
    match err {
        Error::Infeasible { rows: bad } => {
            let mut samples: Vec<usize> = bad.iter().map(|&r| rows[r].sample).collect();
            samples.dedup();
            Error::FitInfeasible { samples, hint: hint.into() }
        }
        e => e,
    }
}

fn all_features(data: &Dataset) -> Vec<usize> {
    (0..data.layout.dim()).collect()
}

fn check_features(data: &Dataset, features: &[usize]) -> Result<()> {
    let dim = data.layout.dim();
    if features.is_empty() || features.windows(2).any(|w| w[0] >= w[1]) || features.iter().any(|&f| f >= dim) {
        return Err(Error::Dimension(format!("feature subset {features:?} invalid for dimension {dim}")));
    }
    Ok(())
}

/// Boundary-aware regression with hard region constraints.
pub fn fit_hard(data: &Dataset, part: &RegionPartition) -> Result<CoefficientFit> {
    fit_hard_features(data, part, &all_features(data))
}

pub fn fit_hard_features(data: &Dataset, part: &RegionPartition, features: &[usize]) -> Result<CoefficientFit> {
    check_features(data, features)?;
    let asm = assemble_hard(data, part, features)?;
    let sol = solve_qp(&asm.problem, &QpOptions::default(), None)
        .map_err(|e| map_infeasible(e, &asm.rows, "increase nu"))?;
    Ok(finish(asm, sol, data, features, FitConfig::Hard { g_lim: part.g_lim, nu: part.nu }))
}

/// Result of the `nu` search.
#[derive(Debug, Clone)]
pub struct NuChoice {
    pub nu: f64,
    pub fit: CoefficientFit,
    pub partition: RegionPartition,
    /// Number of hard fits attempted.
    pub solves: usize,
}

/// Smallest `nu` on the grid `nu0 * 2^j` (capped at the label range, `nu0`
/// one percent of it) for which the hard fit is feasible.
pub fn choose_nu(data: &Dataset, g_lim: f64) -> Result<NuChoice> {
    let labels: Vec<f64> = data.samples.iter().map(|s| s.g).collect();
    let lo = labels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo < g_lim && hi >= g_lim) {
        return Err(Error::Domain(format!("labels [{lo}, {hi}] do not straddle g_lim = {g_lim}")));
    }
    let range = hi - lo;
    let nu0 = 0.01 * range;
    let mut solves = 0;
    let mut j = 0;
    loop {
        let nu = (nu0 * 2f64.powi(j)).min(range);
        let part = partition(&labels, g_lim, nu)?;
        if !part.boundary.is_empty() {
            solves += 1;
            match fit_hard(data, &part) {
                Ok(fit) => return Ok(NuChoice { nu, fit, partition: part, solves }),
                Err(Error::FitInfeasible { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        if nu >= range {
            return Err(Error::DataInseparable { nu: range });
        }
        j += 1;
    }
}

/// Gaussian-weighted regression with sigmoid-softened region constraints.
pub fn fit_smooth(data: &Dataset, cfg: &SmoothRegressionConfig) -> Result<CoefficientFit> {
    fit_smooth_with(data, cfg, &all_features(data), None)
}

/// [`fit_smooth`] restricted to `features`, optionally warm-started from a
/// full-length coefficient vector.
pub fn fit_smooth_with(
    data: &Dataset,
    cfg: &SmoothRegressionConfig,
    features: &[usize],
    warm: Option<&[f64]>,
) -> Result<CoefficientFit> {
    check_features(data, features)?;
    let asm = assemble_smooth(data, cfg, features)?;
    let x0 = warm.map(|w| DVector::from_iterator(features.len(), features.iter().map(|&f| w[f])));
    let sol = solve_qp(&asm.problem, &QpOptions::default(), x0.as_ref())
        .map_err(|e| map_infeasible(e, &asm.rows, "increase big_m"))?;
    Ok(finish(asm, sol, data, features, FitConfig::Smooth(*cfg)))
}

/// Features kept by the optional pruning pass: coefficients at least
/// `0.1 * median|K|` in magnitude. The constant term is always kept.
pub fn prune_features(fit: &CoefficientFit) -> Vec<usize> {
    let mut mags: Vec<f64> = fit.features.iter().map(|&f| fit.coefficients[f].abs()).collect();
    mags.sort_by(f64::total_cmp);
    let median = if mags.is_empty() {
        0.0
    } else if mags.len() % 2 == 1 {
        mags[mags.len() / 2]
    } else {
        0.5 * (mags[mags.len() / 2 - 1] + mags[mags.len() / 2])
    };
    fit.features
        .iter()
        .copied()
        .filter(|&f| f == 0 || fit.coefficients[f].abs() >= 0.1 * median)
        .collect()
}

/// Smooth fit followed by a pruning pass and refit.
pub fn fit_smooth_pruned(data: &Dataset, cfg: &SmoothRegressionConfig) -> Result<CoefficientFit> {
    let first = fit_smooth(data, cfg)?;
    let keep = prune_features(&first);
    if keep.len() == first.features.len() {
        return Ok(first);
    }
    fit_smooth_with(data, cfg, &keep, Some(&first.coefficients))
}
