//! Nonhomogeneous exponential waiting times and compound Poisson traces.

use crate::intensity::{IntensityError, IntensityFunction};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StochasticError {
    #[error("duration must be nonnegative, got {0}")]
    NegativeDuration(f64),
    #[error("no arrival before the horizon {horizon}")]
    HorizonExceeded { horizon: f64 },
    #[error("invalid batch distribution: {0}")]
    InvalidBatch(String),
    #[error(transparent)]
    Intensity(#[from] IntensityError),
}

pub type Result<T> = std::result::Result<T, StochasticError>;

/// Seeded random stream. Equal `(seed, stream)` pairs yield equal draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Exp(1) variate.
    pub fn unit_exponential(&mut self) -> f64 {
        let u: f64 = self.inner.random();
        -(1.0 - u).ln()
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Waiting time from `origin` to the next event of an inhomogeneous process.
#[derive(Debug, Clone, Copy)]
pub struct NonhomExp<'a> {
    pub origin: f64,
    pub intensity: &'a IntensityFunction,
}

impl<'a> NonhomExp<'a> {
    pub fn new(origin: f64, intensity: &'a IntensityFunction) -> Self {
        Self { origin, intensity }
    }

    /// `P(L < tau) = 1 - exp(-Λ(s, s + tau))`.
    pub fn cdf(&self, tau: f64) -> Result<f64> {
        if tau < 0.0 {
            return Err(StochasticError::NegativeDuration(tau));
        }
        let cum = self.intensity.integrate(self.origin, self.origin + tau)?;
        Ok((-(-cum).exp_m1()).clamp(0.0, 1.0))
    }

    /// Draws a waiting time by inverting the cumulative intensity. With a
    /// horizon `h`, fails with `HorizonExceeded` when no event happens in
    /// `[s, h]`.
    pub fn sample(&self, rng: &mut RngStream, horizon: Option<f64>) -> Result<f64> {
        let target = rng.unit_exponential();
        self.waiting_time_for(target, horizon)
    }

    /// Waiting time whose cumulative intensity equals `target`.
    pub fn waiting_time_for(&self, target: f64, horizon: Option<f64>) -> Result<f64> {
        match self.intensity.invert(self.origin, target, horizon)? {
            Some(t) => Ok(t - self.origin),
            None => Err(StochasticError::HorizonExceeded {
                horizon: horizon.unwrap_or(f64::INFINITY),
            }),
        }
    }
}

/// Number of tuples inserted (or removed) by a single event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BatchSpec", into = "BatchSpec")]
pub struct BatchDistribution {
    support: Vec<(u32, f64)>,
    cumulative: Vec<f64>,
    mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BatchSpec {
    support: Vec<(u32, f64)>,
}

impl TryFrom<BatchSpec> for BatchDistribution {
    type Error = StochasticError;
    fn try_from(spec: BatchSpec) -> Result<Self> {
        BatchDistribution::new(spec.support)
    }
}

impl From<BatchDistribution> for BatchSpec {
    fn from(b: BatchDistribution) -> Self {
        BatchSpec { support: b.support }
    }
}

impl Default for BatchDistribution {
    fn default() -> Self {
        Self::unit()
    }
}

impl BatchDistribution {
    pub fn new(mut support: Vec<(u32, f64)>) -> Result<Self> {
        if support.is_empty() {
            return Err(StochasticError::InvalidBatch("empty support".into()));
        }
        support.sort_by_key(|(k, _)| *k);
        if support.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(StochasticError::InvalidBatch("duplicate batch size".into()));
        }
        if support.iter().any(|(k, p)| *k == 0 || !(p.is_finite() && *p >= 0.0)) {
            return Err(StochasticError::InvalidBatch(
                "sizes must be ≥ 1 and probabilities nonnegative".into(),
            ));
        }
        let total: f64 = support.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(StochasticError::InvalidBatch(format!("probabilities sum to {total}")));
        }
        let mut acc = 0.0;
        let cumulative = support
            .iter()
            .map(|(_, p)| {
                acc += p;
                acc
            })
            .collect();
        let mean = support.iter().map(|(k, p)| *k as f64 * p).sum();
        Ok(Self {
            support,
            cumulative,
            mean,
        })
    }

    /// Every event carries exactly one tuple.
    pub fn unit() -> Self {
        Self::new(vec![(1, 1.0)]).expect("point mass is valid")
    }

    /// Empirical distribution from `(size, count)` pairs.
    pub fn from_counts(counts: &[(u32, u64)]) -> Result<Self> {
        let total: u64 = counts.iter().map(|(_, c)| c).sum();
        if total == 0 {
            return Err(StochasticError::InvalidBatch("no observations".into()));
        }
        let support: Vec<(u32, f64)> = counts
            .iter()
            .filter(|(_, c)| *c > 0)
            .map(|(k, c)| (*k, *c as f64 / total as f64))
            .collect();
        // absorb rounding so the total is exactly one
        let sum: f64 = support.iter().map(|(_, p)| p).sum();
        let support = support.into_iter().map(|(k, p)| (k, p / sum)).collect();
        Self::new(support)
    }

    pub fn support(&self) -> &[(u32, f64)] {
        &self.support
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn probability(&self, size: u32) -> f64 {
        self.support
            .iter()
            .find(|(k, _)| *k == size)
            .map(|(_, p)| *p)
            .unwrap_or(0.0)
    }

    pub fn sample(&self, rng: &mut RngStream) -> u32 {
        if self.support.len() == 1 {
            return self.support[0].0;
        }
        let u = rng.uniform();
        let idx = self.cumulative.partition_point(|c| *c <= u);
        self.support[idx.min(self.support.len() - 1)].0
    }
}

/// Event times in `(s, f]` with independent batch sizes.
pub fn simulate_nhpp(
    intensity: &IntensityFunction,
    batch: &BatchDistribution,
    s: f64,
    f: f64,
    rng: &mut RngStream,
) -> Result<Vec<(f64, u32)>> {
    if f < s {
        return Err(StochasticError::NegativeDuration(f - s));
    }
    let mut events = Vec::new();
    let mut t = s;
    loop {
        let target = rng.unit_exponential();
        match intensity.invert(t, target, Some(f))? {
            Some(next) => {
                t = next;
                events.push((t, batch.sample(rng)));
            }
            _ => break,
        }
    }
    Ok(events)
}

/// `E[B(s, f)] = E[batch] · Λ(s, f)`.
pub fn expected_insertions(intensity: &IntensityFunction, batch: &BatchDistribution, s: f64, f: f64) -> Result<f64> {
    if f < s {
        return Err(StochasticError::NegativeDuration(f - s));
    }
    Ok(batch.mean() * intensity.integrate(s, f)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_of_constant_rate_is_exponential() {
        let f = IntensityFunction::constant(2.0).unwrap();
        let d = NonhomExp::new(3.0, &f);
        assert_eq!(d.cdf(0.0).unwrap(), 0.0);
        assert!((d.cdf(0.7).unwrap() - (1.0 - (-1.4f64).exp())).abs() < 1e-15);
        assert!(matches!(d.cdf(-1.0), Err(StochasticError::NegativeDuration(_))));
    }

    #[test]
    fn tiny_target_gives_tiny_wait() {
        let f = crate::presets::weekly_profile();
        let d = NonhomExp::new(0.3, &f);
        assert!(d.waiting_time_for(1e-14, None).unwrap() < 1e-12);
    }

    #[test]
    fn horizon_is_reported() {
        let f = IntensityFunction::constant(1e-6).unwrap();
        let mut rng = RngStream::new(1, 0);
        let r = NonhomExp::new(0.0, &f).sample(&mut rng, Some(1.0));
        assert!(matches!(r, Err(StochasticError::HorizonExceeded { .. })));
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let mut c = RngStream::new(7, 4);
        let xa: Vec<u64> = (0..5).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..5).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..5).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn batch_validation_and_mean() {
        let b = BatchDistribution::new(vec![(1, 0.962), (2, 0.034), (3, 0.004)]).unwrap();
        assert!((b.mean() - 1.042).abs() < 1e-12);
        assert!(BatchDistribution::new(vec![(0, 1.0)]).is_err());
        assert!(BatchDistribution::new(vec![(1, 0.5)]).is_err());
        let e = BatchDistribution::from_counts(&[(1, 536), (2, 19), (3, 2)]).unwrap();
        assert!((e.probability(1) - 536.0 / 557.0).abs() < 1e-12);
        let json = serde_json::to_string(&b).unwrap();
        assert_eq!(serde_json::from_str::<BatchDistribution>(&json).unwrap(), b);
    }

    #[test]
    fn empty_interval_has_no_events() {
        let f = IntensityFunction::constant(5.0).unwrap();
        let mut rng = RngStream::new(0, 0);
        assert!(simulate_nhpp(&f, &BatchDistribution::unit(), 2.0, 2.0, &mut rng).unwrap().is_empty());
        assert_eq!(expected_insertions(&f, &BatchDistribution::unit(), 2.0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn expected_insertions_is_product() {
        let f = IntensityFunction::constant(10.0).unwrap();
        let b = BatchDistribution::new(vec![(1, 0.962), (2, 0.034), (3, 0.004)]).unwrap();
        assert!((expected_insertions(&f, &b, 0.0, 1.0).unwrap() - 10.42).abs() < 1e-12);
    }
}
