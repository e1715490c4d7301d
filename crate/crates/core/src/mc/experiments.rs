use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use super::{mc_moments, validation_report, McConfig, ParameterSampler, ValidationReport};
use crate::dro::MomentFamily;
use crate::error::{Error, Result};
use crate::grid::GridModel;
use crate::regression::dataset::format_float;
use crate::sensitivity::{analytic_moments, MeanCorrection, Pipeline, UncertainParameterSpec};
use crate::uc::{build_uc, evaluate_schedule, solve_uc, Schedule, StabilityMode, UcInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub cv: f64,
    pub mape_mu: f64,
    pub mape_var: f64,
    pub n_effective: usize,
    pub dropped: usize,
}

/// Analytic and Monte Carlo moments at `sigma_p = cv * mean` for every
/// CV in `cfg.cvs`. All CVs share the seed, so the standardised draws are
/// common across rows.
pub fn cv_sweep(
    pipe: &Pipeline,
    mean: &[f64],
    cfg: &McConfig,
    correction: MeanCorrection,
) -> Result<(Vec<CvRow>, Vec<ValidationReport>)> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &cv in &cfg.cvs {
        let spec = UncertainParameterSpec::from_cv(mean, cv);
        let ana = analytic_moments(pipe, &spec, correction)?;
        let mc = mc_moments(pipe, &spec, cfg)?;
        let rep = validation_report(&ana, &mc)?;
        rows.push(CvRow { cv, mape_mu: rep.mape_mu, mape_var: rep.mape_var, n_effective: rep.n_effective, dropped: rep.dropped });
        reports.push(rep);
    }
    Ok((rows, reports))
}

pub fn write_cv_csv<W: Write>(rows: &[CvRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["cv", "mape_mu", "mape_var", "n_effective", "dropped"])?;
    for r in rows {
        wtr.write_record([
            format_float(r.cv),
            format_float(r.mape_mu),
            format_float(r.mape_var),
            r.n_effective.to_string(),
            r.dropped.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// How the true reactances are drawn when scoring a schedule.
#[derive(Debug, Clone)]
pub struct ViolationSampling<'a> {
    pub grid: &'a GridModel,
    pub spec: &'a UncertainParameterSpec,
    pub family: MomentFamily,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationEstimate {
    /// Mean over draws of the per-draw violation rate.
    pub rate: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

/// Expected violation rate of `schedule` when the true source reactances
/// follow the sampling distribution.
pub fn sampled_violation_rate(schedule: &Schedule, sampling: &ViolationSampling, g_lim: f64) -> Result<ViolationEstimate> {
    if sampling.n_samples == 0 {
        return Err(Error::Domain("violation sampling needs at least one draw".into()));
    }
    let sampler = ParameterSampler::new(sampling.spec, sampling.family, sampling.seed)?;
    let rates: Vec<f64> = (0..sampling.n_samples)
        .into_par_iter()
        .map(|i| {
            let p = sampler.draw(i as u64)?;
            Ok(evaluate_schedule(schedule, sampling.grid, &p, g_lim)?.violation_rate)
        })
        .collect::<Result<_>>()?;
    let n = rates.len() as f64;
    let rate = rates.iter().sum::<f64>() / n;
    let var = if rates.len() > 1 { rates.iter().map(|r| (r - rate).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(ViolationEstimate { rate, std_error: (var / n).sqrt(), n_samples: rates.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    /// Relative inflation of the limit, `g_lim * (1 + margin)`.
    pub margin: f64,
    /// `None` when no commitment meets the inflated limit.
    pub cost: Option<f64>,
    pub violation_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginBaseline {
    pub rows: Vec<MarginRow>,
    /// Smallest margin whose schedule shows no sampled violation.
    pub smallest_zero_violation: Option<f64>,
    pub zero_violation_cost: Option<f64>,
    pub dro_cost: Option<f64>,
}

/// Deterministic scheduling with the limit inflated by each margin, scored
/// against the uninflated limit under sampled reactances.
pub fn fixed_margin_baseline(
    instance: &UcInstance,
    k_mu: &[f64],
    g_lim: f64,
    margins: &[f64],
    sampling: &ViolationSampling,
    dro_cost: Option<f64>,
) -> Result<MarginBaseline> {
    if margins.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(Error::Domain("margins must be finite and nonnegative".into()));
    }
    let mut rows = Vec::new();
    for &margin in margins {
        let mode = StabilityMode::Deterministic { k: k_mu.to_vec(), g_lim: g_lim * (1.0 + margin) };
        let problem = build_uc(instance, &mode)?;
        match solve_uc(&problem) {
            Ok(s) => {
                let v = sampled_violation_rate(&s, sampling, g_lim)?;
                rows.push(MarginRow { margin, cost: Some(s.cost), violation_rate: Some(v.rate) });
            }
            Err(Error::UcInfeasible(_)) => rows.push(MarginRow { margin, cost: None, violation_rate: None }),
            Err(e) => return Err(e),
        }
    }
    let best = rows
        .iter()
        .filter(|r| r.violation_rate == Some(0.0))
        .min_by(|a, b| a.margin.total_cmp(&b.margin));
    Ok(MarginBaseline {
        smallest_zero_violation: best.map(|r| r.margin),
        zero_violation_cost: best.and_then(|r| r.cost),
        rows,
        dro_cost,
    })
}

impl MarginBaseline {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["margin_pct", "cost", "violation_rate"])?;
        let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
        for r in &self.rows {
            wtr.write_record([format_float(100.0 * r.margin), opt(r.cost), opt(r.violation_rate)])?;
        }
        wtr.flush()?;
        Ok(())
    }
}
