//! Moment-based distributionally robust stability constraint in
//! second-order-cone form.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensitivity::MomentEstimate;

/// Eigenvalues in `[-PSD_REPAIR, 0)` are clipped to zero.
pub const PSD_REPAIR: f64 = 1e-8;

/// Safety factor of the moment-based chance constraint.
///
/// The general form is `sqrt(eta / (1 - eta))`; the variant for symmetric
/// distributions is `sqrt(1 / (2 (1 - eta)))` and needs `eta >= 0.5`.
pub fn k_eta(eta: f64, symmetric: bool) -> Result<f64> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Domain(format!("eta = {eta} outside (0, 1)")));
    }
    if symmetric {
        if eta < 0.5 {
            return Err(Error::Domain(format!("symmetric k_eta needs eta >= 0.5, got {eta}")));
        }
        Ok((1.0 / (2.0 * (1.0 - eta))).sqrt())
    } else {
        Ok((eta / (1.0 - eta)).sqrt())
    }
}

/// Eigenpairs `(tau_i, q_i)` with `Sigma = sum tau_i q_i q_i^T`, ordered by
/// descending `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFactors {
    pub tau: Vec<f64>,
    pub q: Vec<DVector<f64>>,
}

impl SpectralFactors {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let n = self.q.first().map_or(0, |q| q.len());
        let mut m = DMatrix::zeros(n, n);
        for (t, q) in self.tau.iter().zip(&self.q) {
            m.ger(*t, q, q, 1.0);
        }
        m
    }
}

pub fn spectral_factorize(sigma: &DMatrix<f64>) -> Result<SpectralFactors> {
    if !sigma.is_square() {
        return Err(Error::Dimension("covariance must be square".into()));
    }
    if (sigma - sigma.transpose()).amax() > 1e-9 * (1.0 + sigma.amax()) {
        return Err(Error::InvalidModel("covariance is not symmetric".into()));
    }
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = sigma.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut tau = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    for i in order {
        let l = eig.eigenvalues[i];
        if l < -PSD_REPAIR {
            return Err(Error::InvalidCovariance { eigenvalue: l });
        }
        let mut v = eig.eigenvectors.column(i).into_owned();
        // Deterministic sign: largest-magnitude entry positive.
        if v[v.iamax()] < 0.0 {
            v.neg_mut();
        }
        tau.push(l.max(0.0));
        q.push(v);
    }
    Ok(SpectralFactors { tau, q })
}

/// `||[sqrt(tau_i) q_i^T X]|| <= (mu^T X - g_lim) / k_eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocStabilityConstraint {
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    /// Eigenvectors, one per entry of `tau`.
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub g_lim: f64,
    pub eta: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub symmetric: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocEvaluation {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    pub margin: f64,
}

impl SocStabilityConstraint {
    pub fn new(mu: &[f64], sigma: &DMatrix<f64>, g_lim: f64, eta: f64, symmetric: bool) -> Result<Self> {
        if sigma.nrows() != mu.len() {
            return Err(Error::Dimension(format!("mu has {} entries, Sigma is {}x{}", mu.len(), sigma.nrows(), sigma.ncols())));
        }
        k_eta(eta, symmetric)?;
        let f = spectral_factorize(sigma)?;
        Ok(Self {
            mu: mu.to_vec(),
            tau: f.tau,
            q: f.q.iter().map(|v| v.iter().copied().collect()).collect(),
            g_lim,
            eta,
            symmetric,
        })
    }

    pub fn from_moments(m: &MomentEstimate, g_lim: f64, eta: f64, symmetric: bool) -> Result<Self> {
        Self::new(&m.mu, &m.sigma_matrix(), g_lim, eta, symmetric)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn k(&self) -> f64 {
        k_eta(self.eta, self.symmetric).expect("validated at construction")
    }

    /// True when every `tau` is zero: the constraint is the deterministic row.
    pub fn is_deterministic(&self) -> bool {
        self.tau.iter().all(|&t| t == 0.0)
    }

    /// Rows `sqrt(tau_i) q_i^T` for the nonzero `tau_i`.
    pub fn factor_rows(&self) -> Vec<Vec<f64>> {
        self.tau
            .iter()
            .zip(&self.q)
            .filter(|(t, _)| **t > 0.0)
            .map(|(t, q)| q.iter().map(|v| t.sqrt() * v).collect())
            .collect()
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        SpectralFactors { tau: self.tau.clone(), q: self.q.iter().map(|v| DVector::from_column_slice(v)).collect() }
            .reconstruct()
    }

    /// Same constraint with the covariance scaled by `alpha >= 0`.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self { tau: self.tau.iter().map(|t| t * alpha).collect(), ..self.clone() }
    }

    pub fn norm_term(&self, x: &[f64]) -> f64 {
        self.tau
            .iter()
            .zip(&self.q)
            .map(|(t, q)| {
                let p: f64 = q.iter().zip(x).map(|(a, b)| a * b).sum();
                t * p * p
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<SocEvaluation> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!("decision has {} entries, constraint {}", x.len(), self.dim())));
        }
        let lhs = self.norm_term(x);
        let mean: f64 = self.mu.iter().zip(x).map(|(a, b)| a * b).sum();
        let rhs = (mean - self.g_lim) / self.k();
        Ok(SocEvaluation { lhs, rhs, satisfied: lhs <= rhs, margin: rhs - lhs })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        if c.tau.len() != c.q.len() || c.q.iter().any(|q| q.len() != c.mu.len()) {
            return Err(Error::Dimension("constraint factors do not match mu".into()));
        }
        k_eta(c.eta, c.symmetric)?;
        Ok(c)
    }
}

pub fn evaluate_soc(c: &SocStabilityConstraint, x: &[f64]) -> Result<SocEvaluation> {
    c.evaluate(x)
}

/// Mean over the schedule of `g_lim + k_eta ||[sqrt(tau_i) q_i^T X(t)]||`.
pub fn equivalent_limit(c: &SocStabilityConstraint, schedule: &[Vec<f64>]) -> Result<f64> {
    if schedule.is_empty() {
        return Err(Error::Domain("empty schedule".into()));
    }
    let k = c.k();
    let mut total = 0.0;
    for x in schedule {
        if x.len() != c.dim() {
            return Err(Error::Dimension(format!("decision has {} entries, constraint {}", x.len(), c.dim())));
        }
        total += c.g_lim + k * c.norm_term(x);
    }
    Ok(total / schedule.len() as f64)
}

/// Zero-mean, unit-variance families used to draw coefficients with
/// prescribed moments, `K = mu + sum_i sqrt(tau_i) q_i xi_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentFamily {
    Gaussian,
    /// Uniform on `[-sqrt 3, sqrt 3]`.
    Uniform,
    /// `+-1` with equal probability.
    TwoPoint,
}

impl MomentFamily {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            MomentFamily::Gaussian => StandardNormal.sample(rng),
            MomentFamily::Uniform => rng.random_range(-(3f64.sqrt())..3f64.sqrt()),
            MomentFamily::TwoPoint => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

pub fn sample_coefficients<R: Rng + ?Sized>(c: &SocStabilityConstraint, family: MomentFamily, rng: &mut R) -> Vec<f64> {
    let mut k = c.mu.clone();
    for (t, q) in c.tau.iter().zip(&c.q) {
        let xi = family.draw(rng) * t.sqrt();
        for (kv, qv) in k.iter_mut().zip(q) {
            *kv += xi * qv;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn k_eta_table() {
        assert_eq!(k_eta(0.5, false).unwrap(), 1.0);
        assert!((k_eta(0.9, false).unwrap() - 3.0).abs() <= 4.0 * f64::EPSILON * 3.0);
        assert_eq!(k_eta(0.875, true).unwrap(), 2.0);
        assert!(k_eta(0.0, false).is_err());
        assert!(k_eta(1.0, false).is_err());
        assert!(k_eta(0.4, true).is_err());
        let grid: Vec<f64> = (1..100).map(|i| k_eta(i as f64 / 100.0, false).unwrap()).collect();
        assert!(grid.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn factorization_cases() {
        let f = spectral_factorize(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(f.tau, vec![1.0, 1.0]);
        assert_relative_eq!(f.q[0].dot(&f.q[1]), 0.0, epsilon = 1e-15);
        let u = DVector::from_vec(vec![3.0, 4.0]);
        let f = spectral_factorize(&(&u * u.transpose())).unwrap();
        assert_relative_eq!(f.tau[0], 25.0, epsilon = 1e-12);
        assert!(f.tau[1].abs() <= 1e-12);
        assert_relative_eq!((&f.q[0] - &u / 5.0).amax(), 0.0, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let s = &a * a.transpose();
        let f = spectral_factorize(&s).unwrap();
        assert!((f.reconstruct() - &s).norm() <= 1e-10);
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((f.q[i].dot(&f.q[j]) - want).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn psd_repair_and_rejection() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -5e-9]));
        assert_eq!(spectral_factorize(&s).unwrap().tau, vec![1.0, 0.0]);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-3]));
        assert!(matches!(spectral_factorize(&bad), Err(Error::InvalidCovariance { .. })));
    }

    #[test]
    fn hand_instance() {
        let c = SocStabilityConstraint::new(
            &[2.0, 1.0],
            &DMatrix::from_diagonal(&DVector::from_vec(vec![0.04, 0.01])),
            2.0,
            0.8,
            false,
        )
        .unwrap();
        let e = c.evaluate(&[1.0, 1.0]).unwrap();
        assert_relative_eq!(e.lhs, 0.05f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(e.rhs, 0.5, epsilon = 1e-14);
        assert!(e.satisfied);
    }

    #[test]
    fn zero_covariance_is_deterministic() {
        let c = SocStabilityConstraint::new(&[1.0, 2.0], &DMatrix::zeros(2, 2), 2.5, 0.9, false).unwrap();
        assert!(c.is_deterministic());
        assert!(c.evaluate(&[1.0, 0.75]).unwrap().satisfied);
        assert!(!c.evaluate(&[1.0, 0.7]).unwrap().satisfied);
        assert_eq!(equivalent_limit(&c, &[vec![1.0, 0.3], vec![1.0, 0.9]]).unwrap(), 2.5);
        // k_eta -> 1 at eta = 0.5.
        let half = SocStabilityConstraint { eta: 0.5, ..c };
        assert_eq!(half.k(), 1.0);
    }

    #[test]
    fn factorized_and_quadratic_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-0.3..0.3));
        let s = &a * a.transpose();
        let c = SocStabilityConstraint::new(&[3.0, 1.0, -0.5, 0.2], &s, 1.0, 0.85, false).unwrap();
        for _ in 0..200 {
            let x = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let e = c.evaluate(x.as_slice()).unwrap();
            let quad = x.dot(&(&s * &x)).sqrt();
            assert!((e.lhs - quad).abs() <= 1e-9);
            if e.satisfied {
                let mean: f64 = c.mu.iter().zip(x.iter()).map(|(m, v)| m * v).sum();
                assert!(c.k() * quad <= mean - c.g_lim + 1e-9);
            }
        }
    }

    #[test]
    fn equivalent_limit_scaling_and_monotonicity() {
        let s = DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.09]);
        let c = SocStabilityConstraint::new(&[2.0, 1.0], &s, 2.0, 0.8, false).unwrap();
        let sched = vec![vec![1.0, 0.5], vec![1.0, -0.2]];
        let x = [1.0, 0.5];
        assert_relative_eq!(c.scaled(2.0).norm_term(&x), 2f64.sqrt() * c.norm_term(&x), max_relative = 1e-12);
        let mut prev = f64::NEG_INFINITY;
        for i in 1..20 {
            let ci = SocStabilityConstraint { eta: i as f64 / 20.0, ..c.clone() };
            let v = equivalent_limit(&ci, &sched).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        assert!(equivalent_limit(&c, &[]).is_err());
    }

    #[test]
    fn json_round_trip_and_keys() {
        let s = DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.09]);
        let c = SocStabilityConstraint::new(&[2.0, 1.0], &s, 2.0, 0.8, false).unwrap();
        let json = c.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["mu", "tau", "Q", "g_lim", "eta"]);
        assert_eq!(SocStabilityConstraint::from_json(&json).unwrap(), c);
    }

    #[test]
    fn sampled_moments_match() {
        let s = DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.09]);
        let c = SocStabilityConstraint::new(&[2.0, 1.0], &s, 2.0, 0.8, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for fam in [MomentFamily::Gaussian, MomentFamily::Uniform, MomentFamily::TwoPoint] {
            let n = 40_000;
            let draws: Vec<Vec<f64>> = (0..n).map(|_| sample_coefficients(&c, fam, &mut rng)).collect();
            let m0 = draws.iter().map(|d| d[0]).sum::<f64>() / n as f64;
            let v1 = draws.iter().map(|d| (d[1] - 1.0).powi(2)).sum::<f64>() / n as f64;
            assert!((m0 - 2.0).abs() <= 4.0 * (0.04f64 / n as f64).sqrt());
            assert!((v1 - 0.09).abs() <= 0.05 * 0.09);
        }
    }
}
