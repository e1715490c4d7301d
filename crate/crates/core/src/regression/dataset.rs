use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use super::decision::{AugmentedDecision, DecisionLayout};
use crate::error::{Error, Result};
use crate::grid::{evaluate_gscr, GridModel, OperatingPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub x: AugmentedDecision,
    pub g: f64,
}

/// Which commitment combinations enter the data set.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum EnumerationPolicy {
    /// Every one of the `2^n` on/off combinations.
    #[default]
    All,
    /// Only combinations with at least this many sources online.
    MinOnline(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedSample {
    pub commitment: Vec<f64>,
    pub wind: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub layout: DecisionLayout,
    pub samples: Vec<TrainingSample>,
    pub skipped: Vec<SkippedSample>,
}

/// Midpoints of `n` equal sub-intervals of `[0, capacity]`.
pub fn wind_levels(n: usize, capacity: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) / n as f64 * capacity).collect()
}

/// Commitment vectors in binary counting order (source `i` is bit `i`).
pub fn commitment_combinations(n_sources: usize, policy: &EnumerationPolicy) -> Vec<Vec<f64>> {
    (0..1usize << n_sources)
        .map(|c| (0..n_sources).map(|i| ((c >> i) & 1) as f64).collect::<Vec<f64>>())
        .filter(|flags| match policy {
            EnumerationPolicy::All => true,
            EnumerationPolicy::MinOnline(k) => flags.iter().sum::<f64>() as usize >= *k,
        })
        .collect()
}

/// One sample per (commitment combination, wind level), labelled with the
/// gSCR at the grid's nominal reactances. Configurations whose reduction
/// fails are skipped and logged.
pub fn generate_dataset(grid: &GridModel, n_levels: usize, policy: &EnumerationPolicy) -> Result<Dataset> {
    if n_levels < 2 {
        return Err(Error::Domain(format!("need at least 2 wind levels, got {n_levels}")));
    }
    grid.validate()?;
    let layout = DecisionLayout::new(grid.n_sources());
    let levels = wind_levels(n_levels, grid.total_gfl_capacity());
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for flags in commitment_combinations(grid.n_sources(), policy) {
        for &w in &levels {
            let op = OperatingPoint::new(flags.clone(), grid.gfl_dispatch(w));
            match evaluate_gscr(grid, &op) {
                Ok(e) if e.value.is_finite() => {
                    samples.push(TrainingSample { x: AugmentedDecision::new(&flags, w), g: e.value })
                }
                Ok(e) => skipped.push(SkippedSample {
                    commitment: flags.clone(),
                    wind: w,
                    reason: format!("non-finite index {}", e.value),
                }),
                Err(err) => {
                    warn!("skipping commitment {flags:?} at wind {w}: {err}");
                    skipped.push(SkippedSample { commitment: flags.clone(), wind: w, reason: err.to_string() })
                }
            }
        }
    }
    Ok(Dataset { layout, samples, skipped })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> DVector<f64> {
        DVector::from_iterator(self.samples.len(), self.samples.iter().map(|s| s.g))
    }

    pub fn design(&self) -> DMatrix<f64> {
        let k = self.layout.dim();
        DMatrix::from_fn(self.samples.len(), k, |i, j| self.samples[i].x.0[j])
    }

    /// Same decisions with new labels.
    pub fn with_labels(&self, labels: &[f64]) -> Result<Self> {
        if labels.len() != self.samples.len() {
            return Err(Error::Dimension(format!("{} labels for {} samples", labels.len(), self.samples.len())));
        }
        let mut out = self.clone();
        for (s, &g) in out.samples.iter_mut().zip(labels) {
            s.g = g;
        }
        Ok(out)
    }

    /// Recomputes every label on `grid` (typically with perturbed source
    /// reactances).
    pub fn relabel(&self, grid: &GridModel) -> Result<Vec<f64>> {
        self.samples
            .iter()
            .map(|s| {
                let op = OperatingPoint::new(s.x.flags().to_vec(), grid.gfl_dispatch(s.x.wind()));
                evaluate_gscr(grid, &op).map(|e| e.value)
            })
            .collect()
    }

    pub fn max_abs_label(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.g.abs()))
    }

    /// CSV with one column per augmented entry followed by `g`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = self.layout.labels();
        header.push("g".into());
        wtr.write_record(&header)?;
        for s in &self.samples {
            let mut row: Vec<String> = s.x.0.iter().map(|v| format_float(*v)).collect();
            row.push(format_float(s.g));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let width = headers.len();
        if width < 3 || (width - 1) % 2 != 0 || headers.get(width - 1) != Some("g") {
            return Err(Error::Parse(format!("unexpected dataset header {headers:?}")));
        }
        let layout = DecisionLayout::new((width - 3) / 2);
        let mut samples = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {e}", line + 1))))
                .collect::<Result<_>>()?;
            let x = AugmentedDecision(vals[..width - 1].to_vec());
            x.validate()?;
            samples.push(TrainingSample { x, g: vals[width - 1] });
        }
        Ok(Self { layout, samples, skipped: Vec::new() })
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, GflUnit, Source};

    pub(crate) fn toy_grid() -> GridModel {
        GridModel {
            buses: vec![1, 2, 3],
            branches: vec![Branch { from: 1, to: 2, x: 0.1 }, Branch { from: 2, to: 3, x: 0.1 }],
            sgs: vec![Source { bus: 2, reactance: 0.2 }, Source { bus: 3, reactance: 0.3 }],
            gfm: vec![],
            gfl: vec![GflUnit { bus: 1, voltage: 1.0, capacity: 1.0 }],
        }
    }

    #[test]
    fn midpoint_levels() {
        assert_eq!(wind_levels(4, 1.0), vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn cardinality_two_sources_two_levels() {
        let d = generate_dataset(&toy_grid(), 2, &EnumerationPolicy::All).unwrap();
        assert_eq!(d.len() + d.skipped.len(), 8);
        assert!(d.len() <= 8);
    }

    #[test]
    fn all_on_is_strongest_per_level() {
        let d = generate_dataset(&toy_grid(), 3, &EnumerationPolicy::All).unwrap();
        for w in wind_levels(3, 1.0) {
            let same: Vec<&TrainingSample> = d.samples.iter().filter(|s| s.x.wind() == w).collect();
            let best = same.iter().map(|s| s.g).fold(f64::NEG_INFINITY, f64::max);
            let all_on = same.iter().find(|s| s.x.flags().iter().all(|&f| f == 1.0)).unwrap();
            assert_eq!(all_on.g, best);
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = generate_dataset(&toy_grid(), 3, &EnumerationPolicy::All).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.samples, d.samples);
        assert!(String::from_utf8(buf).unwrap().starts_with("one,x0,x1,wind,x0_wind,x1_wind,g\n"));
    }

    #[test]
    fn rejects_single_level() {
        assert!(generate_dataset(&toy_grid(), 1, &EnumerationPolicy::All).is_err());
    }

    #[test]
    fn min_online_policy_filters() {
        assert_eq!(commitment_combinations(3, &EnumerationPolicy::MinOnline(2)).len(), 4);
    }
}
