use serde::Serialize;
use std::path::PathBuf;

use drsc::desk::{DESK_NETWORK_JSON, DESK_UC_JSON};
use drsc::dro::SocStabilityConstraint;
use drsc::grid::GridModel;
use drsc::mc::{
    cv_sweep, fixed_margin_baseline, mc_moments, sampled_violation_rate, validation_report, write_cv_csv, ViolationSampling,
};
use drsc::regression::{
    choose_nu, fit_smooth, fit_smooth_pruned, generate_dataset, partition, CoefficientFit, Dataset, EnumerationPolicy, FitConfig,
    SmoothRegressionConfig,
};
use drsc::sensitivity::{analytic_moments, MomentEstimate, Pipeline};
use drsc::uc::{build_uc, evaluate_schedule, solve_uc, Schedule, StabilityMode, UcInstance};

use crate::config::{ModeName, PipelineConfig};
use crate::error::CliError;
use crate::lineage::{read_artifact, sha256, write_artifact, Input};

/// Resolved configuration plus the loaded base inputs.
pub struct Context {
    pub cfg: PipelineConfig,
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>, CliError> {
    Ok((serde_json::to_string_pretty(v)? + "\n").into_bytes())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> drsc::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn network_input(&self) -> Result<Input, CliError> {
        match &self.cfg.network {
            Some(p) => Input::file(p),
            None => Ok(Input::bundled("desk_network", DESK_NETWORK_JSON)),
        }
    }

    fn instance_input(&self) -> Result<Input, CliError> {
        match &self.cfg.instance {
            Some(p) => Input::file(p),
            None => Ok(Input::bundled("desk_uc", DESK_UC_JSON)),
        }
    }

    fn grid(&self) -> Result<(Input, GridModel), CliError> {
        let input = self.network_input()?;
        let grid = GridModel::from_json_str(input.text()?).map_err(|e| CliError::Invalid(format!("{}: {e}", input.key)))?;
        Ok((input, grid))
    }

    fn dataset(&self) -> Result<(Input, Dataset), CliError> {
        let input = read_artifact(&self.out("dataset.csv"))?;
        let data = Dataset::read_csv(input.bytes.as_slice())?;
        Ok((input, data))
    }

    fn fit(&self) -> Result<(Input, CoefficientFit), CliError> {
        let input = read_artifact(&self.out("fit.json"))?;
        Ok((input.clone(), CoefficientFit::from_json(input.text()?)?))
    }

    fn moments(&self) -> Result<(Input, MomentEstimate), CliError> {
        let input = read_artifact(&self.out("moments.json"))?;
        Ok((input.clone(), MomentEstimate::from_json(input.text()?)?))
    }

    fn smooth_config(&self, data: &Dataset) -> Result<SmoothRegressionConfig, CliError> {
        let nu = match self.cfg.nu {
            Some(nu) => nu,
            None => choose_nu(data, self.cfg.g_lim)?.nu,
        };
        let labels: Vec<f64> = data.samples.iter().map(|s| s.g).collect();
        Ok(SmoothRegressionConfig::with_defaults(self.cfg.g_lim, nu, &labels))
    }

    /// The coefficient map rebuilt from the stored dataset and fit.
    fn pipeline(&self) -> Result<(Vec<Input>, Pipeline), CliError> {
        let (net_in, grid) = self.grid()?;
        let (data_in, data) = self.dataset()?;
        let (fit_in, fit) = self.fit()?;
        let FitConfig::Smooth(cfg) = fit.config else {
            return Err(CliError::Invalid("fit.json does not hold a smooth fit".into()));
        };
        let pruned = fit.features.len() < data.layout.dim();
        let pipe = Pipeline::new(grid, data, cfg, pruned)?;
        Ok((vec![net_in, data_in, fit_in], pipe))
    }

    fn seed(&self, stream: &str) -> u64 {
        let h = sha256(format!("{}:{stream}", self.cfg.seed).as_bytes());
        u64::from_str_radix(&h[..16], 16).expect("hex digest")
    }

    fn stability_mode(&self, mode: ModeName, moments: Option<&MomentEstimate>) -> Result<StabilityMode, CliError> {
        Ok(match (mode, moments) {
            (ModeName::None, _) => StabilityMode::None,
            (ModeName::Det, Some(m)) => StabilityMode::Deterministic { k: m.mu.clone(), g_lim: self.cfg.g_lim },
            (ModeName::Dro, Some(m)) => {
                StabilityMode::Dro(SocStabilityConstraint::from_moments(m, self.cfg.g_lim, self.cfg.eta, self.cfg.symmetric)?)
            }
            (_, None) => unreachable!("moments are loaded for stability modes"),
        })
    }
}

pub fn gen_data(ctx: &Context) -> Result<(), CliError> {
    let (net_in, grid) = ctx.grid()?;
    let policy = ctx.cfg.min_online.map_or(EnumerationPolicy::All, EnumerationPolicy::MinOnline);
    let data = generate_dataset(&grid, ctx.cfg.wind_levels, &policy)?;
    let bytes = csv_bytes(|b| data.write_csv(b))?;
    let path = ctx.out("dataset.csv");
    write_artifact(&path, &bytes, &[&net_in])?;
    let labels: Vec<f64> = data.samples.iter().map(|s| s.g).collect();
    println!("wrote {} ({} samples, {} skipped)", path.display(), data.len(), data.skipped.len());
    let nu = match ctx.cfg.nu {
        Some(nu) => Some(nu),
        None => choose_nu(&data, ctx.cfg.g_lim).ok().map(|c| c.nu),
    };
    match nu {
        Some(nu) => {
            let p = partition(&labels, ctx.cfg.g_lim, nu)?;
            println!(
                "class balance at nu = {nu}: unstable {}, boundary {}, stable {}",
                p.unstable.len(),
                p.boundary.len(),
                p.stable.len()
            );
        }
        None => println!("no separable boundary band; class balance unavailable"),
    }
    Ok(())
}

pub fn fit(ctx: &Context) -> Result<(), CliError> {
    let (data_in, data) = ctx.dataset()?;
    let cfg = ctx.smooth_config(&data)?;
    let fit = if ctx.cfg.prune { fit_smooth_pruned(&data, &cfg)? } else { fit_smooth(&data, &cfg)? };
    let path = ctx.out("fit.json");
    write_artifact(&path, &to_json(&fit)?, &[&data_in])?;
    println!("wrote {} (nu = {}, KKT residual {:.1e})", path.display(), cfg.nu, fit.kkt_residual);
    Ok(())
}

pub fn propagate(ctx: &Context) -> Result<(), CliError> {
    let (inputs, pipe) = ctx.pipeline()?;
    let spec = ctx.cfg.spec(&pipe.nominal_params());
    let est = analytic_moments(&pipe, &spec, ctx.cfg.mean_correction)?;
    let path = ctx.out("moments.json");
    let refs: Vec<&Input> = inputs.iter().collect();
    write_artifact(&path, (est.to_json()? + "\n").as_bytes(), &refs)?;
    println!("wrote {} ({} coefficients)", path.display(), est.mu.len());
    Ok(())
}

pub fn validate_mc(ctx: &Context) -> Result<(), CliError> {
    let (mut inputs, pipe) = ctx.pipeline()?;
    let (mom_in, analytic) = ctx.moments()?;
    inputs.push(mom_in);
    let spec = ctx.cfg.spec(&pipe.nominal_params());
    let mut mc_cfg = ctx.cfg.mc.clone();
    mc_cfg.seed = ctx.seed("mc");
    let mc = mc_moments(&pipe, &spec, &mc_cfg)?;
    let report = validation_report(&analytic, &mc)?;
    let refs: Vec<&Input> = inputs.iter().collect();
    write_artifact(&ctx.out("validation.csv"), &csv_bytes(|b| report.write_csv(b))?, &refs)?;
    write_artifact(&ctx.out("validation.json"), (report.to_json()? + "\n").as_bytes(), &refs)?;
    write_artifact(&ctx.out("trace.csv"), &csv_bytes(|b| mc.write_trace_csv(b))?, &refs)?;
    println!(
        "MAPE mu {:.3}%, MAPE var {:.3}% over {} samples ({} dropped)",
        report.mape_mu, report.mape_var, report.n_effective, report.dropped
    );
    Ok(())
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    cost: f64,
    violation_rate: Option<f64>,
    g_lim_eq: Option<f64>,
    mode: &'a str,
    status: drsc::uc::ScheduleStatus,
    nodes: usize,
    gap: f64,
    violation_std_error: Option<f64>,
}

fn sampling<'a>(ctx: &Context, grid: &'a GridModel, spec: &'a drsc::sensitivity::UncertainParameterSpec) -> ViolationSampling<'a> {
    ViolationSampling {
        grid,
        spec,
        family: ctx.cfg.mc.family,
        n_samples: ctx.cfg.violation_samples,
        seed: ctx.seed("violation"),
    }
}

/// Loads moments when the mode needs them.
fn mode_inputs(ctx: &Context, mode: ModeName) -> Result<(Vec<Input>, Option<MomentEstimate>), CliError> {
    match mode {
        ModeName::None => Ok((vec![], None)),
        _ => {
            let (i, m) = ctx.moments()?;
            Ok((vec![i], Some(m)))
        }
    }
}

fn load_instance(ctx: &Context) -> Result<(Input, UcInstance), CliError> {
    let input = ctx.instance_input()?;
    let inst = UcInstance::from_json_str(input.text()?).map_err(|e| CliError::Invalid(format!("{}: {e}", input.key)))?;
    Ok((input, inst))
}

pub fn schedule(ctx: &Context) -> Result<(), CliError> {
    let mode_name = ctx.cfg.mode;
    let (inst_in, inst) = load_instance(ctx)?;
    let (net_in, grid) = ctx.grid()?;
    let (mut inputs, moments) = mode_inputs(ctx, mode_name)?;
    inputs.push(inst_in);
    inputs.push(net_in);
    let mode = ctx.stability_mode(mode_name, moments.as_ref())?;
    let schedule = solve_uc(&build_uc(&inst, &mode)?)?;
    let spec = ctx.cfg.spec(&grid.source_reactances());
    let violation = if schedule.scenarios.iter().all(|s| !s.decisions.is_empty()) {
        Some(sampled_violation_rate(&schedule, &sampling(ctx, &grid, &spec), ctx.cfg.g_lim)?)
    } else {
        None
    };
    let g_lim_eq = match &mode {
        StabilityMode::None => None,
        StabilityMode::Deterministic { g_lim, .. } => Some(*g_lim),
        StabilityMode::Dro(c) => Some(schedule.equivalent_limit(c)?),
    };
    let summary = SummaryFile {
        cost: schedule.cost,
        violation_rate: violation.as_ref().map(|v| v.rate),
        g_lim_eq,
        mode: mode_name.as_str(),
        status: schedule.status,
        nodes: schedule.nodes,
        gap: schedule.gap,
        violation_std_error: violation.as_ref().map(|v| v.std_error),
    };
    let refs: Vec<&Input> = inputs.iter().collect();
    let m = mode_name.as_str();
    write_artifact(&ctx.out(&format!("schedule_{m}.csv")), &csv_bytes(|b| schedule.write_csv(b))?, &refs)?;
    write_artifact(&ctx.out(&format!("schedule_{m}.json")), &to_json(&schedule)?, &refs)?;
    write_artifact(&ctx.out(&format!("summary_{m}.json")), &to_json(&summary)?, &refs)?;
    println!(
        "{m}: cost {:.4} k£, violation rate {}, {} nodes",
        schedule.cost,
        summary.violation_rate.map_or("n/a".into(), |v| format!("{v:.4}")),
        schedule.nodes
    );
    Ok(())
}

#[derive(Serialize)]
struct EvaluationFile {
    nominal_violation_rate: f64,
    sampled_violation_rate: f64,
    sampled_std_error: f64,
    steps: Vec<drsc::uc::StepCheck>,
}

pub fn evaluate(ctx: &Context) -> Result<(), CliError> {
    let m = ctx.cfg.mode.as_str();
    let sched_in = read_artifact(&ctx.out(&format!("schedule_{m}.json")))?;
    let schedule: Schedule = serde_json::from_slice(&sched_in.bytes)?;
    let (net_in, grid) = ctx.grid()?;
    let nominal = evaluate_schedule(&schedule, &grid, &grid.source_reactances(), ctx.cfg.g_lim)?;
    let spec = ctx.cfg.spec(&grid.source_reactances());
    let sampled = sampled_violation_rate(&schedule, &sampling(ctx, &grid, &spec), ctx.cfg.g_lim)?;
    let csv = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["scenario", "step", "gscr", "violated", "reason"])?;
        for s in &nominal.steps {
            w.write_record([
                s.scenario.to_string(),
                s.step.to_string(),
                s.index.map(|g| format!("{g:?}")).unwrap_or_default(),
                s.violated.to_string(),
                s.reason.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let file = EvaluationFile {
        nominal_violation_rate: nominal.violation_rate,
        sampled_violation_rate: sampled.rate,
        sampled_std_error: sampled.std_error,
        steps: nominal.steps,
    };
    let refs = [&sched_in, &net_in];
    write_artifact(&ctx.out(&format!("evaluation_{m}.csv")), &csv, &refs)?;
    write_artifact(&ctx.out(&format!("evaluation_{m}.json")), &to_json(&file)?, &refs)?;
    println!("{m}: nominal violation rate {:.4}, sampled {:.4}", file.nominal_violation_rate, file.sampled_violation_rate);
    Ok(())
}

pub fn cv_sweep_cmd(ctx: &Context) -> Result<(), CliError> {
    let (inputs, pipe) = ctx.pipeline()?;
    let mut mc_cfg = ctx.cfg.mc.clone();
    mc_cfg.seed = ctx.seed("mc");
    let mean = ctx.cfg.uncertainty.as_ref().map_or_else(|| pipe.nominal_params(), |u| u.mean.clone());
    let (rows, reports) = cv_sweep(&pipe, &mean, &mc_cfg, ctx.cfg.mean_correction)?;
    let refs: Vec<&Input> = inputs.iter().collect();
    write_artifact(&ctx.out("cv_sweep.csv"), &csv_bytes(|b| write_cv_csv(&rows, b))?, &refs)?;
    write_artifact(&ctx.out("cv_sweep.json"), &to_json(&reports)?, &refs)?;
    for r in &rows {
        println!("cv {:>5.1}%: MAPE mu {:.3}%, MAPE var {:.3}%", 100.0 * r.cv, r.mape_mu, r.mape_var);
    }
    Ok(())
}

pub fn margin_baseline(ctx: &Context) -> Result<(), CliError> {
    let (inst_in, inst) = load_instance(ctx)?;
    let (net_in, grid) = ctx.grid()?;
    let (mom_in, moments) = ctx.moments()?;
    let dro = ctx.stability_mode(ModeName::Dro, Some(&moments))?;
    let dro_cost = solve_uc(&build_uc(&inst, &dro)?).map(|s| s.cost).ok();
    let spec = ctx.cfg.spec(&grid.source_reactances());
    let base =
        fixed_margin_baseline(&inst, &moments.mu, ctx.cfg.g_lim, &ctx.cfg.margins, &sampling(ctx, &grid, &spec), dro_cost)?;
    let refs = [&inst_in, &net_in, &mom_in];
    write_artifact(&ctx.out("margin_baseline.csv"), &csv_bytes(|b| base.write_csv(b))?, &refs)?;
    write_artifact(&ctx.out("margin_baseline.json"), &to_json(&base)?, &refs)?;
    match (base.smallest_zero_violation, base.zero_violation_cost) {
        (Some(m), Some(c)) => println!(
            "smallest zero-violation margin {:.1}% costs {c:.4} k£ (DRO {})",
            100.0 * m,
            dro_cost.map_or("infeasible".into(), |d| format!("{d:.4} k£"))
        ),
        _ => println!("no margin on the grid removes every violation"),
    }
    Ok(())
}
