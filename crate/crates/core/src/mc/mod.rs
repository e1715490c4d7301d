//! Monte Carlo oracles and experiment drivers: retraining-based moment
//! estimates, MAPE comparison against the analytic moments, CV sweeps,
//! sampled violation rates and the fixed-margin baseline.

pub mod experiments;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::dro::MomentFamily;
use crate::error::{Error, Result};
use crate::regression::dataset::format_float;
use crate::sensitivity::{CoefficientMap, MomentEstimate, UncertainParameterSpec};

pub use experiments::{
    cv_sweep, fixed_margin_baseline, sampled_violation_rate, write_cv_csv, CvRow, MarginBaseline, MarginRow,
    ViolationEstimate, ViolationSampling,
};

/// Largest fraction of failed samples for a valid estimate.
pub const MAX_DROP_FRACTION: f64 = 0.01;
/// Redraws allowed per sample before the truncation is declared hopeless.
pub const MAX_REDRAWS: usize = 1000;
/// Reference values smaller than this are left out of the MAPE.
pub const MAPE_EXCLUSION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_samples: usize,
    /// Shape of the standardised reactance perturbations.
    #[serde(default = "default_family")]
    pub family: MomentFamily,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cvs")]
    pub cvs: Vec<f64>,
    /// Spacing of the running-mean trace, in draws.
    #[serde(default = "default_trace_every")]
    pub trace_every: usize,
}

fn default_family() -> MomentFamily {
    MomentFamily::Gaussian
}

fn default_cvs() -> Vec<f64> {
    vec![0.05, 0.10, 0.15, 0.20]
}

fn default_trace_every() -> usize {
    500
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_samples: 15_000,
            family: default_family(),
            seed: 0,
            cvs: default_cvs(),
            trace_every: default_trace_every(),
        }
    }
}

impl McConfig {
    pub fn with_samples(n_samples: usize, seed: u64) -> Self {
        Self { n_samples, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Domain("Monte Carlo needs at least one sample".into()));
        }
        if self.cvs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::Domain("coefficients of variation must be positive".into()));
        }
        if self.trace_every == 0 {
            return Err(Error::Domain("trace spacing must be positive".into()));
        }
        Ok(())
    }
}

/// Draws reactance vectors `p = mean + L xi`, rejecting any draw with a
/// nonpositive entry. Each sample index has its own random stream, so a
/// draw does not depend on which thread produced it.
#[derive(Debug, Clone)]
pub struct ParameterSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    family: MomentFamily,
    seed: u64,
}

impl ParameterSampler {
    pub fn new(spec: &UncertainParameterSpec, family: MomentFamily, seed: u64) -> Result<Self> {
        spec.validate()?;
        let cov = spec.covariance_matrix();
        let factor = match &spec.covariance {
            None => DMatrix::from_diagonal(&DVector::from_iterator(spec.dim(), spec.variance.iter().map(|v| v.sqrt()))),
            Some(_) => {
                let eig = cov.symmetric_eigen();
                if eig.eigenvalues.iter().any(|&l| l < -1e-12 * eig.eigenvalues.amax().max(1.0)) {
                    return Err(Error::InvalidCovariance { eigenvalue: eig.eigenvalues.min() });
                }
                let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
                &eig.eigenvectors * DMatrix::from_diagonal(&root)
            }
        };
        if spec.mean.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::Domain("mean reactances must be positive".into()));
        }
        Ok(Self { mean: DVector::from_column_slice(&spec.mean), factor, family, seed })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn draw(&self, index: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        for _ in 0..MAX_REDRAWS {
            let xi = DVector::from_fn(self.dim(), |_, _| self.family.draw(&mut rng));
            let p = &self.mean + &self.factor * xi;
            if p.iter().all(|v| *v > 0.0) {
                return Ok(p.iter().copied().collect());
            }
        }
        Err(Error::Domain(format!("no positive reactance draw after {MAX_REDRAWS} attempts")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedSample {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// Draws consumed so far.
    pub n: usize,
    /// Running mean over the valid draws among them.
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub n_samples: usize,
    pub n_effective: usize,
    pub dropped: Vec<DroppedSample>,
    pub trace: Vec<TracePoint>,
}

impl McResult {
    pub fn variances(&self) -> Vec<f64> {
        (0..self.mu.len()).map(|i| self.sigma[i][i]).collect()
    }

    /// CSV with columns `n, k0, k1, ...`.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["n".to_string()];
        header.extend((0..self.mu.len()).map(|i| format!("k{i}")));
        wtr.write_record(&header)?;
        for p in &self.trace {
            let mut row = vec![p.n.to_string()];
            row.extend(p.mean.iter().map(|v| format_float(*v)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Evaluates `map` at `cfg.n_samples` reactance draws and returns the
/// sample mean and covariance of the coefficients. Failed evaluations are
/// dropped and counted; more than 1% failures is an error.
pub fn mc_moments(map: &dyn CoefficientMap, spec: &UncertainParameterSpec, cfg: &McConfig) -> Result<McResult> {
    cfg.validate()?;
    if spec.dim() != map.n_params() {
        return Err(Error::Dimension(format!("{} parameters for a map of {}", spec.dim(), map.n_params())));
    }
    let sampler = ParameterSampler::new(spec, cfg.family, cfg.seed)?;
    let outcomes: Vec<std::result::Result<Vec<f64>, String>> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| {
            let p = sampler.draw(i as u64).map_err(|e| e.to_string())?;
            map.evaluate(&p).map(|v| v.k.iter().copied().collect()).map_err(|e| e.to_string())
        })
        .collect();
    aggregate(outcomes, map.n_coefficients(), cfg.trace_every)
}

fn aggregate(outcomes: Vec<std::result::Result<Vec<f64>, String>>, dim: usize, trace_every: usize) -> Result<McResult> {
    let n_samples = outcomes.len();
    let mut dropped = Vec::new();
    let mut valid: Vec<Vec<f64>> = Vec::with_capacity(n_samples);
    // Sums of deviations from the first valid draw: exact for constant
    // samples and free of cancellation when the spread is small.
    let mut shift: Option<Vec<f64>> = None;
    let mut sum = vec![0.0; dim];
    let mut trace = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(k) if k.len() == dim && k.iter().all(|v| v.is_finite()) => {
                let s0 = shift.get_or_insert_with(|| k.clone());
                for ((s, v), c) in sum.iter_mut().zip(&k).zip(s0.iter()) {
                    *s += v - c;
                }
                valid.push(k);
            }
            Ok(_) => dropped.push(DroppedSample { index: i, reason: "non-finite coefficients".into() }),
            Err(reason) => dropped.push(DroppedSample { index: i, reason }),
        }
        let n = i + 1;
        if (n % trace_every == 0 || n == n_samples) && !valid.is_empty() {
            let s0 = shift.as_ref().expect("a valid draw");
            trace.push(TracePoint { n, mean: sum.iter().zip(s0).map(|(s, c)| c + s / valid.len() as f64).collect() });
        }
    }
    if dropped.len() as f64 > MAX_DROP_FRACTION * n_samples as f64 || valid.is_empty() {
        return Err(Error::McInvalid { dropped: dropped.len(), total: n_samples });
    }
    let n = valid.len();
    let s0 = shift.expect("a valid draw");
    let mu: Vec<f64> = sum.iter().zip(&s0).map(|(s, c)| c + s / n as f64).collect();
    let mut sigma = vec![vec![0.0; dim]; dim];
    if n > 1 {
        for k in &valid {
            let d: Vec<f64> = k.iter().zip(&mu).map(|(a, m)| a - m).collect();
            for i in 0..dim {
                for j in i..dim {
                    sigma[i][j] += d[i] * d[j];
                }
            }
        }
        for i in 0..dim {
            for j in i..dim {
                sigma[i][j] /= (n - 1) as f64;
                sigma[j][i] = sigma[i][j];
            }
        }
    }
    Ok(McResult { mu, sigma, n_samples, n_effective: n, dropped, trace })
}

/// Mean absolute percentage error of `estimate` against `reference`,
/// skipping (and listing) reference entries below [`MAPE_EXCLUSION`].
pub fn mape(estimate: &[f64], reference: &[f64]) -> Result<(f64, Vec<usize>)> {
    if estimate.len() != reference.len() {
        return Err(Error::Dimension(format!("{} estimates, {} references", estimate.len(), reference.len())));
    }
    let mut excluded = Vec::new();
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, (a, r)) in estimate.iter().zip(reference).enumerate() {
        match percent_error(*a, *r) {
            Some(e) => {
                total += e.abs();
                count += 1;
            }
            None => excluded.push(i),
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMape);
    }
    Ok((total / count as f64, excluded))
}

/// Signed `(estimate - reference) / reference` in percent.
pub fn percent_error(estimate: f64, reference: f64) -> Option<f64> {
    (reference.abs() >= MAPE_EXCLUSION).then(|| (estimate - reference) / reference * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientComparison {
    pub index: usize,
    pub analytic_mu: f64,
    pub mc_mu: f64,
    pub e_mu: Option<f64>,
    pub analytic_var: f64,
    pub mc_var: f64,
    pub e_var: Option<f64>,
}

/// Analytic versus Monte Carlo moments, coefficient by coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub coefficients: Vec<CoefficientComparison>,
    pub mape_mu: f64,
    pub mape_var: f64,
    pub excluded_mu: Vec<usize>,
    pub excluded_var: Vec<usize>,
    pub n_samples: usize,
    pub n_effective: usize,
    pub dropped: usize,
}

pub fn validation_report(analytic: &MomentEstimate, mc: &McResult) -> Result<ValidationReport> {
    let ana_var = analytic.variances();
    let mc_var = mc.variances();
    let (mape_mu, excluded_mu) = mape(&analytic.mu, &mc.mu)?;
    let (mape_var, excluded_var) = mape(&ana_var, &mc_var)?;
    let coefficients = (0..mc.mu.len())
        .map(|i| CoefficientComparison {
            index: i,
            analytic_mu: analytic.mu[i],
            mc_mu: mc.mu[i],
            e_mu: percent_error(analytic.mu[i], mc.mu[i]),
            analytic_var: ana_var[i],
            mc_var: mc_var[i],
            e_var: percent_error(ana_var[i], mc_var[i]),
        })
        .collect();
    Ok(ValidationReport {
        coefficients,
        mape_mu,
        mape_var,
        excluded_mu,
        excluded_var,
        n_samples: mc.n_samples,
        n_effective: mc.n_effective,
        dropped: mc.dropped.len(),
    })
}

impl ValidationReport {
    /// One row per coefficient.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["coefficient", "analytic_mu", "mc_mu", "e_mu_pct", "analytic_var", "mc_var", "e_var_pct"])?;
        let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
        for c in &self.coefficients {
            wtr.write_record([
                c.index.to_string(),
                format_float(c.analytic_mu),
                format_float(c.mc_mu),
                opt(c.e_mu),
                format_float(c.analytic_var),
                format_float(c.mc_var),
                opt(c.e_var),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
