use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Thermal unit parameters in the units of the usual unit-commitment
/// tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitType {
    pub name: String,
    pub capacity_mw: f64,
    #[serde(default)]
    pub min_output_mw: f64,
    /// k£/h while committed.
    pub no_load_cost: f64,
    /// £/MWh.
    pub marginal_cost: f64,
    /// k£ per start.
    #[serde(default)]
    pub startup_cost: f64,
    /// Hours a unit that starts the horizon offline needs before it can run.
    #[serde(default)]
    pub startup_time: usize,
    #[serde(default)]
    pub min_up: usize,
    #[serde(default)]
    pub min_down: usize,
    /// Carried for completeness; not used by the stability constraint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<f64>,
    /// Carried for completeness; not used by the stability constraint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub name: String,
    #[serde(rename = "type")]
    pub unit_type: String,
    pub bus: u32,
    /// Position of this unit among the grid's sources (SGs, then GFMs);
    /// its commitment is that source's flag in the stability decision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<usize>,
    #[serde(default = "default_true")]
    pub initially_on: bool,
    /// Hours already spent in the initial state; unset means long enough
    /// for every minimum up/down time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_hours: Option<usize>,
    /// Output before the first step; defaults to the minimum output when
    /// initially on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_output_mw: Option<f64>,
}

/// Source whose commitment is not a scheduling decision (for example a
/// grid-forming inverter that is always online).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedSource {
    pub source: usize,
    pub on: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub probability: f64,
    pub demand_mw: Vec<f64>,
    pub wind_mw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcInstance {
    pub horizon: usize,
    #[serde(default = "default_base")]
    pub base_mva: f64,
    pub demand_mw: Vec<f64>,
    pub wind_mw: Vec<f64>,
    /// £/MWh of unserved load.
    pub shed_cost: f64,
    #[serde(default = "default_true")]
    pub allow_shedding: bool,
    /// Ramp limit per hour as a fraction of capacity.
    #[serde(default = "default_ramp")]
    pub ramp_fraction: f64,
    pub unit_types: Vec<UnitType>,
    pub units: Vec<Unit>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fixed_sources: Vec<FixedSource>,
    /// Optional flat scenario set replacing the single profile in the
    /// dispatch stage; commitments are shared.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scenarios: Vec<Scenario>,
}

fn default_true() -> bool {
    true
}

fn default_base() -> f64 {
    100.0
}

fn default_ramp() -> f64 {
    0.6
}

/// How each grid source's commitment flag is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceBinding {
    Unit(usize),
    Fixed(bool),
}

impl UcInstance {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let inst: Self = serde_json::from_str(s)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn unit_type(&self, unit: usize) -> &UnitType {
        let name = &self.units[unit].unit_type;
        self.unit_types.iter().find(|t| &t.name == name).expect("validated unit type")
    }

    /// The dispatch scenarios, with the base profile as the single default.
    pub fn dispatch_scenarios(&self) -> Vec<Scenario> {
        if self.scenarios.is_empty() {
            vec![Scenario { probability: 1.0, demand_mw: self.demand_mw.clone(), wind_mw: self.wind_mw.clone() }]
        } else {
            self.scenarios.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        if self.horizon == 0 {
            return bad("horizon must be at least one step".into());
        }
        if !(self.base_mva > 0.0) {
            return bad("base_mva must be positive".into());
        }
        if !(self.shed_cost >= 0.0) || !(self.ramp_fraction > 0.0) {
            return bad("shed_cost must be nonnegative and ramp_fraction positive".into());
        }
        let profile = |name: &str, v: &[f64]| -> Result<()> {
            if v.len() != self.horizon {
                return Err(Error::InvalidModel(format!("{name} has {} entries, horizon is {}", v.len(), self.horizon)));
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::InvalidModel(format!("{name} must be finite and nonnegative")));
            }
            Ok(())
        };
        profile("demand_mw", &self.demand_mw)?;
        profile("wind_mw", &self.wind_mw)?;
        if !self.scenarios.is_empty() {
            let total: f64 = self.scenarios.iter().map(|s| s.probability).sum();
            if (total - 1.0).abs() > 1e-9 || self.scenarios.iter().any(|s| !(s.probability > 0.0)) {
                return bad(format!("scenario probabilities must be positive and sum to 1 (got {total})"));
            }
            for (i, s) in self.scenarios.iter().enumerate() {
                profile(&format!("scenario {i} demand_mw"), &s.demand_mw)?;
                profile(&format!("scenario {i} wind_mw"), &s.wind_mw)?;
            }
        }
        for t in &self.unit_types {
            if !(t.capacity_mw > 0.0) || t.min_output_mw < 0.0 || t.min_output_mw > t.capacity_mw {
                return bad(format!("unit type {} needs 0 <= min output <= capacity", t.name));
            }
            if t.no_load_cost < 0.0 || t.marginal_cost < 0.0 || t.startup_cost < 0.0 {
                return bad(format!("unit type {} has a negative cost", t.name));
            }
        }
        if self.units.is_empty() {
            return bad("no units".into());
        }
        for u in &self.units {
            let Some(t) = self.unit_types.iter().find(|t| t.name == u.unit_type) else {
                return bad(format!("unit {} refers to unknown type {}", u.name, u.unit_type));
            };
            if let Some(p) = u.initial_output_mw {
                if p < 0.0 || p > t.capacity_mw || (!u.initially_on && p != 0.0) {
                    return bad(format!("unit {} has an inconsistent initial output", u.name));
                }
            }
        }
        Ok(())
    }

    /// Binding of grid sources `0..n_sources` to units or fixed flags.
    /// Every source must be bound exactly once.
    pub fn source_bindings(&self, n_sources: usize) -> Result<Vec<SourceBinding>> {
        let mut out: Vec<Option<SourceBinding>> = vec![None; n_sources];
        let mut place = |s: usize, b: SourceBinding| -> Result<()> {
            if s >= n_sources {
                return Err(Error::Dimension(format!("source index {s} outside 0..{n_sources}")));
            }
            if out[s].is_some() {
                return Err(Error::InvalidModel(format!("source {s} is bound twice")));
            }
            out[s] = Some(b);
            Ok(())
        };
        for (i, u) in self.units.iter().enumerate() {
            if let Some(s) = u.source {
                place(s, SourceBinding::Unit(i))?;
            }
        }
        for f in &self.fixed_sources {
            place(f.source, SourceBinding::Fixed(f.on))?;
        }
        out.into_iter()
            .enumerate()
            .map(|(i, b)| b.ok_or_else(|| Error::InvalidModel(format!("grid source {i} is not bound to a unit or fixed flag"))))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> UcInstance {
        UcInstance {
            horizon: 2,
            base_mva: 100.0,
            demand_mw: vec![50.0, 60.0],
            wind_mw: vec![0.0, 10.0],
            shed_cost: 1000.0,
            allow_shedding: true,
            ramp_fraction: 0.6,
            unit_types: vec![UnitType {
                name: "A".into(),
                capacity_mw: 100.0,
                min_output_mw: 10.0,
                no_load_cost: 1.0,
                marginal_cost: 20.0,
                startup_cost: 2.0,
                startup_time: 0,
                min_up: 1,
                min_down: 1,
                inertia: Some(5.0),
                damping: None,
            }],
            units: vec![Unit {
                name: "g1".into(),
                unit_type: "A".into(),
                bus: 1,
                source: Some(0),
                initially_on: true,
                initial_hours: None,
                initial_output_mw: None,
            }],
            fixed_sources: vec![FixedSource { source: 1, on: true }],
            scenarios: vec![],
        }
    }

    #[test]
    fn json_round_trip() {
        let inst = base();
        let back = UcInstance::from_json_str(&inst.to_json().unwrap()).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn rejects_bad_profiles() {
        let mut inst = base();
        inst.demand_mw = vec![1.0];
        assert!(inst.validate().is_err());
        let mut inst = base();
        inst.wind_mw[0] = -1.0;
        assert!(inst.validate().is_err());
    }

    #[test]
    fn bindings_cover_every_source() {
        let inst = base();
        assert_eq!(inst.source_bindings(2).unwrap(), vec![SourceBinding::Unit(0), SourceBinding::Fixed(true)]);
        assert!(inst.source_bindings(3).is_err());
        assert!(inst.source_bindings(1).is_err());
    }
}
