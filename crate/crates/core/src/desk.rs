//! Bundled desk-scale case used by the examples, tests and CLI defaults.

use crate::grid::GridModel;
use crate::regression::{generate_dataset, Dataset, EnumerationPolicy, SmoothRegressionConfig};
use crate::sensitivity::Pipeline;
use crate::uc::UcInstance;
use crate::Result;

pub const DESK_NETWORK_JSON: &str = include_str!("../data/desk_network.json");
pub const DESK_UC_JSON: &str = include_str!("../data/desk_uc.json");

/// Stability limit on the gSCR used with the desk network.
pub const DESK_G_LIM: f64 = 2.5;
/// Width of the boundary band used by the smooth regression.
pub const DESK_NU: f64 = 1.0;
/// Wind levels per commitment combination.
pub const DESK_WIND_LEVELS: usize = 6;

/// Eight buses, three synchronous generators, one grid-forming inverter
/// and two grid-following wind units.
pub fn desk_network() -> GridModel {
    GridModel::from_json_str(DESK_NETWORK_JSON).expect("bundled network is valid")
}

pub fn desk_dataset() -> Result<Dataset> {
    generate_dataset(&desk_network(), DESK_WIND_LEVELS, &EnumerationPolicy::All)
}

pub fn desk_regression_config(data: &Dataset) -> SmoothRegressionConfig {
    let labels: Vec<f64> = data.samples.iter().map(|s| s.g).collect();
    SmoothRegressionConfig::with_defaults(DESK_G_LIM, DESK_NU, &labels)
}

pub fn desk_pipeline() -> Result<Pipeline> {
    let data = desk_dataset()?;
    let cfg = desk_regression_config(&data);
    Pipeline::new(desk_network(), data, cfg, false)
}

/// Twelve-hour high-wind commitment instance on the desk network: two
/// mid-merit units, one peaker and an always-on grid-forming inverter.
pub fn desk_uc_instance() -> UcInstance {
    UcInstance::from_json_str(DESK_UC_JSON).expect("bundled instance is valid")
}
