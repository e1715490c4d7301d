//! Lossless network model, admittance assembly, Kron reduction and the
//! generalized short-circuit ratio (gSCR) index.
//!
//! The network is reactance-only, so every admittance matrix is real and
//! symmetric. Synchronous generators (SGs) and grid-forming inverters (GFMs)
//! are "sources": each adds `x_g / X_g` to the diagonal of its bus when
//! committed. Grid-following inverters (GFLs) define the retained bus set of
//! the Kron reduction and scale the reduced matrix by `V^2 / P`.

mod admittance;
mod gscr;

pub use admittance::{build_admittance, kron_factors, kron_reduce, AdmittanceMatrix, KronFactors, ReducedAdmittance};
pub use gscr::{
    d_ydd_dxg, evaluate_gscr, evaluate_gscr_with_factors, gscr_index, GscrEvaluation, SparseDiagonal,
};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};

/// GFL units producing less than this (per-unit) are dropped from the
/// retained set for an evaluation.
pub const MIN_GFL_POWER: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    /// Series reactance, per-unit.
    pub x: f64,
}

/// An SG or GFM: a voltage source behind an internal reactance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub bus: u32,
    #[serde(rename = "Xg")]
    pub reactance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GflUnit {
    pub bus: u32,
    #[serde(rename = "V", default = "unit_voltage")]
    pub voltage: f64,
    /// Rated output in per-unit; a wind level `a` in [0, 1] dispatches
    /// `a * capacity` from this unit.
    #[serde(default = "unit_capacity")]
    pub capacity: f64,
}

fn unit_voltage() -> f64 {
    1.0
}

fn unit_capacity() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Sg,
    Gfm,
}

/// Network description as read from the JSON network file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridModel {
    pub buses: Vec<u32>,
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub sgs: Vec<Source>,
    #[serde(default)]
    pub gfm: Vec<Source>,
    #[serde(default)]
    pub gfl: Vec<GflUnit>,
}

/// Per-evaluation decisions: one commitment flag per source (SGs first,
/// then GFMs) and the active power of every GFL unit.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub commitment: Vec<f64>,
    pub gfl_power: Vec<f64>,
}

impl GridModel {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let grid: GridModel = serde_json::from_str(s)?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &b in &self.buses {
            if !seen.insert(b) {
                return Err(Error::InvalidModel(format!("duplicate bus id {b}")));
            }
        }
        for br in &self.branches {
            if !(br.x > 0.0) || !br.x.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "branch {}-{} has nonpositive reactance {}",
                    br.from, br.to, br.x
                )));
            }
            if br.from == br.to {
                return Err(Error::InvalidModel(format!("branch {}-{} is a self loop", br.from, br.to)));
            }
            for b in [br.from, br.to] {
                if !seen.contains(&b) {
                    return Err(Error::InvalidModel(format!("branch references unknown bus {b}")));
                }
            }
        }
        for (i, s) in self.sources().enumerate() {
            if !(s.reactance > 0.0) || !s.reactance.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "source {i} at bus {} has nonpositive reactance {}",
                    s.bus, s.reactance
                )));
            }
            if !seen.contains(&s.bus) {
                return Err(Error::InvalidModel(format!("source {i} at unknown bus {}", s.bus)));
            }
        }
        let mut gfl_buses = BTreeSet::new();
        for u in &self.gfl {
            if !seen.contains(&u.bus) {
                return Err(Error::InvalidModel(format!("GFL at unknown bus {}", u.bus)));
            }
            if !gfl_buses.insert(u.bus) {
                return Err(Error::InvalidModel(format!("two GFL units share bus {}", u.bus)));
            }
            if !(u.voltage > 0.0) || !(u.capacity > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "GFL at bus {} needs positive voltage and capacity",
                    u.bus
                )));
            }
        }
        if !self.is_connected() {
            return Err(Error::InvalidModel("branch graph is not connected".into()));
        }
        Ok(())
    }

    /// Sources in parameter order: SGs then GFMs.
    pub fn sources(&self) -> impl Iterator<Item = &Source> {
        self.sgs.iter().chain(self.gfm.iter())
    }

    pub fn n_sources(&self) -> usize {
        self.sgs.len() + self.gfm.len()
    }

    pub fn source(&self, idx: usize) -> &Source {
        if idx < self.sgs.len() {
            &self.sgs[idx]
        } else {
            &self.gfm[idx - self.sgs.len()]
        }
    }

    pub fn source_kind(&self, idx: usize) -> SourceKind {
        if idx < self.sgs.len() {
            SourceKind::Sg
        } else {
            SourceKind::Gfm
        }
    }

    pub fn source_reactances(&self) -> Vec<f64> {
        self.sources().map(|s| s.reactance).collect()
    }

    /// Copy of the model with source reactances replaced (SGs then GFMs).
    pub fn with_source_reactances(&self, reactances: &[f64]) -> Result<Self> {
        if reactances.len() != self.n_sources() {
            return Err(Error::Dimension(format!(
                "{} reactances for {} sources",
                reactances.len(),
                self.n_sources()
            )));
        }
        let mut out = self.clone();
        for (i, &x) in reactances.iter().enumerate() {
            if !(x > 0.0) {
                return Err(Error::InvalidModel(format!("source {i} reactance {x} not positive")));
            }
            let n_sg = out.sgs.len();
            if i < n_sg {
                out.sgs[i].reactance = x;
            } else {
                out.gfm[i - n_sg].reactance = x;
            }
        }
        Ok(out)
    }

    pub fn total_gfl_capacity(&self) -> f64 {
        self.gfl.iter().map(|u| u.capacity).sum()
    }

    /// Splits a total wind output (per-unit) across GFL units in proportion
    /// to their capacities.
    pub fn gfl_dispatch(&self, total_wind: f64) -> Vec<f64> {
        let cap = self.total_gfl_capacity();
        if cap <= 0.0 {
            return vec![0.0; self.gfl.len()];
        }
        self.gfl.iter().map(|u| total_wind * u.capacity / cap).collect()
    }

    pub(crate) fn bus_index(&self) -> BTreeMap<u32, usize> {
        self.buses.iter().enumerate().map(|(i, &b)| (b, i)).collect()
    }

    fn is_connected(&self) -> bool {
        if self.buses.is_empty() {
            return false;
        }
        let index = self.bus_index();
        let mut parent: Vec<usize> = (0..self.buses.len()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for br in &self.branches {
            let a = find(&mut parent, index[&br.from]);
            let b = find(&mut parent, index[&br.to]);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let root = find(&mut parent, 0);
        (0..self.buses.len()).all(|i| find(&mut parent, i) == root)
    }
}

impl OperatingPoint {
    pub fn new(commitment: Vec<f64>, gfl_power: Vec<f64>) -> Self {
        Self { commitment, gfl_power }
    }

    /// All sources committed with a given total wind output.
    pub fn all_on(grid: &GridModel, total_wind: f64) -> Self {
        Self {
            commitment: vec![1.0; grid.n_sources()],
            gfl_power: grid.gfl_dispatch(total_wind),
        }
    }

    pub(crate) fn check(&self, grid: &GridModel) -> Result<()> {
        if self.commitment.len() != grid.n_sources() {
            return Err(Error::Dimension(format!(
                "{} commitment flags for {} sources",
                self.commitment.len(),
                grid.n_sources()
            )));
        }
        if self.gfl_power.len() != grid.gfl.len() {
            return Err(Error::Dimension(format!(
                "{} GFL powers for {} GFL units",
                self.gfl_power.len(),
                grid.gfl.len()
            )));
        }
        Ok(())
    }
}
