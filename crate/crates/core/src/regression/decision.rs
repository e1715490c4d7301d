use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index layout of the augmented decision vector
/// `[1 | flags (n) | total wind | flag_i * wind (n)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionLayout {
    pub n_sources: usize,
}

impl DecisionLayout {
    pub fn new(n_sources: usize) -> Self {
        Self { n_sources }
    }

    pub fn dim(&self) -> usize {
        2 * self.n_sources + 2
    }

    pub const fn constant(&self) -> usize {
        0
    }

    pub fn flag(&self, i: usize) -> usize {
        1 + i
    }

    pub fn wind(&self) -> usize {
        1 + self.n_sources
    }

    pub fn product(&self, i: usize) -> usize {
        2 + self.n_sources + i
    }

    /// Column labels used in CSV headers.
    pub fn labels(&self) -> Vec<String> {
        let mut out = vec!["one".to_string()];
        out.extend((0..self.n_sources).map(|i| format!("x{i}")));
        out.push("wind".into());
        out.extend((0..self.n_sources).map(|i| format!("x{i}_wind")));
        out
    }
}

/// Augmented decision `X` paired with a stability surrogate `K^T X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedDecision(pub Vec<f64>);

impl AugmentedDecision {
    pub fn new(flags: &[f64], wind: f64) -> Self {
        let n = flags.len();
        let mut v = Vec::with_capacity(2 * n + 2);
        v.push(1.0);
        v.extend_from_slice(flags);
        v.push(wind);
        v.extend(flags.iter().map(|f| f * wind));
        Self(v)
    }

    pub fn layout(&self) -> DecisionLayout {
        DecisionLayout::new((self.0.len() - 2) / 2)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn flags(&self) -> &[f64] {
        let n = self.layout().n_sources;
        &self.0[1..1 + n]
    }

    pub fn wind(&self) -> f64 {
        self.0[self.layout().wind()]
    }

    /// Checks the structural invariants: leading one, binary flags and
    /// exact flag-wind products.
    pub fn validate(&self) -> Result<()> {
        let v = &self.0;
        if v.len() < 2 || v.len() % 2 != 0 {
            return Err(Error::Dimension(format!("augmented decision of length {}", v.len())));
        }
        if v[0] != 1.0 {
            return Err(Error::InvalidModel("augmented decision must start with 1".into()));
        }
        let l = self.layout();
        let w = v[l.wind()];
        for i in 0..l.n_sources {
            let f = v[l.flag(i)];
            if f != 0.0 && f != 1.0 {
                return Err(Error::InvalidModel(format!("flag {i} = {f} is not binary")));
            }
            if v[l.product(i)] != f * w {
                return Err(Error::InvalidModel(format!("product {i} differs from flag*wind")));
            }
        }
        Ok(())
    }

    pub fn dot(&self, k: &[f64]) -> f64 {
        self.0.iter().zip(k).map(|(a, b)| a * b).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_positions() {
        let x = AugmentedDecision::new(&[1.0, 0.0, 1.0], 0.5);
        assert_eq!(x.0, vec![1.0, 1.0, 0.0, 1.0, 0.5, 0.5, 0.0, 0.5]);
        let l = x.layout();
        assert_eq!(l.dim(), 8);
        assert_eq!(l.wind(), 4);
        assert_eq!(l.product(2), 7);
        assert_eq!(l.labels()[5], "x0_wind");
        x.validate().unwrap();
    }

    #[test]
    fn invariants_are_enforced() {
        let mut x = AugmentedDecision::new(&[1.0, 0.0], 0.3);
        x.0[1] = 0.5;
        assert!(x.validate().is_err());
        let mut x = AugmentedDecision::new(&[1.0, 0.0], 0.3);
        x.0[0] = 2.0;
        assert!(x.validate().is_err());
    }
}
