use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use drsc::desk::{DESK_G_LIM, DESK_NU, DESK_WIND_LEVELS};
use drsc::mc::McConfig;
use drsc::sensitivity::{MeanCorrection, UncertainParameterSpec};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    None,
    Det,
    Dro,
}

impl ModeName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeName::None => "none",
            ModeName::Det => "det",
            ModeName::Dro => "dro",
        }
    }
}

/// Single configuration file shared by every subcommand. Paths are taken
/// relative to the configuration file's directory; unset inputs fall back
/// to the bundled desk case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub network: Option<PathBuf>,
    #[serde(default)]
    pub instance: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_g_lim")]
    pub g_lim: f64,
    /// Boundary band; `null` picks the smallest separable width.
    #[serde(default = "default_nu")]
    pub nu: Option<f64>,
    #[serde(default = "default_levels")]
    pub wind_levels: usize,
    /// Drop commitment combinations with fewer sources online.
    #[serde(default)]
    pub min_online: Option<usize>,
    #[serde(default)]
    pub prune: bool,
    /// Coefficient of variation of every source reactance, used when no
    /// explicit uncertainty is given.
    #[serde(default = "default_cv")]
    pub cv: f64,
    #[serde(default)]
    pub uncertainty: Option<UncertainParameterSpec>,
    #[serde(default)]
    pub mean_correction: MeanCorrection,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub symmetric: bool,
    #[serde(default = "default_mode")]
    pub mode: ModeName,
    #[serde(default = "default_mc")]
    pub mc: McConfig,
    /// Draws of the true reactances used to score schedules.
    #[serde(default = "default_violation_samples")]
    pub violation_samples: usize,
    #[serde(default = "default_margins")]
    pub margins: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_g_lim() -> f64 {
    DESK_G_LIM
}

fn default_nu() -> Option<f64> {
    Some(DESK_NU)
}

fn default_levels() -> usize {
    DESK_WIND_LEVELS
}

fn default_cv() -> f64 {
    0.05
}

fn default_eta() -> f64 {
    0.8
}

fn default_mode() -> ModeName {
    ModeName::Dro
}

fn default_mc() -> McConfig {
    McConfig::with_samples(2000, 0)
}

fn default_violation_samples() -> usize {
    2000
}

fn default_margins() -> Vec<f64> {
    vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.3]
}

impl Default for PipelineConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Invalid(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.network, &mut cfg.instance].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Invalid(m));
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta must lie in (0, 1), got {}", self.eta));
        }
        if !(self.cv > 0.0 && self.cv.is_finite()) {
            return bad(format!("cv must be positive, got {}", self.cv));
        }
        if self.wind_levels == 0 || self.violation_samples == 0 {
            return bad("wind_levels and violation_samples must be positive".into());
        }
        if self.nu.is_some_and(|n| !(n > 0.0)) {
            return bad("nu must be positive".into());
        }
        if self.margins.iter().any(|m| !(*m >= 0.0)) {
            return bad("margins must be nonnegative".into());
        }
        self.mc.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
        for p in [&self.network, &self.instance].into_iter().flatten() {
            if !p.is_file() {
                return bad(format!("input file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// Uncertainty around the given nominal reactances.
    pub fn spec(&self, nominal: &[f64]) -> UncertainParameterSpec {
        self.uncertainty.clone().unwrap_or_else(|| UncertainParameterSpec::from_cv(nominal, self.cv))
    }
}
