//! Attribute-modification models.
//!
//! An attribute's value jumps according to a continuous-time Markov chain
//! run on a transformed clock: the chain's generator `Q` is fixed and time is
//! measured by the cumulative modification intensity `Γ(s, f)`, so
//! `P(s, f) = exp(Γ(s, f) · Q)`.
//!
//! Large domains are handled by cheaper special cases: a two-state
//! changed/unchanged lump, a numeric random walk, and content-independent
//! overwrites.

use crate::intensity::{IntensityError, IntensityFunction};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest domain that may be represented with a dense generator.
pub const MAX_STATES: usize = 4096;

const ROW_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarkovError {
    #[error("domain of {0} states exceeds the dense limit of {MAX_STATES}")]
    TooManyStates(usize),
    #[error("an attribute needs at least one state")]
    NoStates,
    #[error("duplicate state label `{0}`")]
    DuplicateState(String),
    #[error("shape mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid rate or probability: {0}")]
    InvalidParameter(String),
    #[error("jump probabilities out of state `{state}` sum to {sum}, expected 1")]
    BadJumpRow { state: String, sum: f64 },
    #[error("partition is not lumpable: rate from block {from} into block {to} deviates by {deviation}")]
    NotLumpable { from: usize, to: usize, deviation: f64 },
    #[error("partition must cover every state exactly once")]
    BadPartition,
    #[error("unknown value `{0}`")]
    UnknownValue(String),
    #[error(transparent)]
    Intensity(#[from] IntensityError),
}

pub type Result<T> = std::result::Result<T, MarkovError>;

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(MarkovError::DimensionMismatch("matrix rows must have equal length n".into()));
        }
        Ok(Self {
            n,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|x| x * k).collect(),
        }
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * n..(k + 1) * n];
                let dst = &mut out.data[i * n..(i + 1) * n];
                for (d, b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        out
    }

    fn add_assign(&mut self, other: &Matrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `exp(A)` by scaling and squaring with a Taylor kernel.
    pub fn expm(&self) -> Matrix {
        let norm = self.norm_inf();
        let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
        let a = self.scaled(0.5f64.powi(squarings as i32));
        let mut result = Matrix::identity(self.n);
        let mut term = Matrix::identity(self.n);
        for k in 1..=30 {
            term = term.mul(&a).scaled(1.0 / k as f64);
            result.add_assign(&term);
            if term.norm_inf() <= 1e-18 * result.norm_inf() {
                break;
            }
        }
        for _ in 0..squarings {
            result = result.mul(&result);
        }
        result
    }

    /// Clamps entries to `[0, 1]` after rounding noise.
    fn clamp_probabilities(mut self) -> Matrix {
        for x in &mut self.data {
            *x = x.clamp(0.0, 1.0);
        }
        self
    }
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(MarkovError::InvalidParameter(format!("{name} = {v}")));
    }
    Ok(())
}

fn check_labels(states: &[String]) -> Result<()> {
    if states.is_empty() {
        return Err(MarkovError::NoStates);
    }
    if states.len() > MAX_STATES {
        return Err(MarkovError::TooManyStates(states.len()));
    }
    let mut seen = std::collections::HashSet::new();
    for s in states {
        if !seen.insert(s) {
            return Err(MarkovError::DuplicateState(s.clone()));
        }
    }
    Ok(())
}

/// Finite-state chain with relative exit rates and jump probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarkovSpec", into = "MarkovSpec")]
pub struct MarkovAttribute {
    states: Vec<String>,
    exit_rates: Vec<f64>,
    jumps: Matrix,
    intensity: IntensityFunction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MarkovSpec {
    states: Vec<String>,
    exit_rates: Vec<f64>,
    transition_probs: Vec<Vec<f64>>,
    intensity: IntensityFunction,
}

impl TryFrom<MarkovSpec> for MarkovAttribute {
    type Error = MarkovError;
    fn try_from(s: MarkovSpec) -> Result<Self> {
        MarkovAttribute::new(s.states, s.exit_rates, s.transition_probs, s.intensity)
    }
}

impl From<MarkovAttribute> for MarkovSpec {
    fn from(m: MarkovAttribute) -> Self {
        MarkovSpec {
            transition_probs: m.jumps.rows(),
            states: m.states,
            exit_rates: m.exit_rates,
            intensity: m.intensity,
        }
    }
}

impl MarkovAttribute {
    /// `jump_probs[u][v]` is the probability that a transition out of `u`
    /// lands in `v`; the diagonal is ignored and should be zero.
    pub fn new(
        states: Vec<String>,
        exit_rates: Vec<f64>,
        jump_probs: Vec<Vec<f64>>,
        intensity: IntensityFunction,
    ) -> Result<Self> {
        check_labels(&states)?;
        let n = states.len();
        if exit_rates.len() != n || jump_probs.len() != n {
            return Err(MarkovError::DimensionMismatch(format!(
                "{n} states, {} exit rates, {} jump rows",
                exit_rates.len(),
                jump_probs.len()
            )));
        }
        let mut jumps = Matrix::from_rows(&jump_probs)?;
        for u in 0..n {
            check_rate("exit rate", exit_rates[u])?;
            jumps.set(u, u, 0.0);
            let row = jumps.row(u);
            for &p in row {
                if !(p.is_finite() && (0.0..=1.0 + ROW_TOL).contains(&p)) {
                    return Err(MarkovError::InvalidParameter(format!("jump probability {p}")));
                }
            }
            let sum: f64 = row.iter().sum();
            let needs_row = exit_rates[u] > 0.0;
            if needs_row && (sum - 1.0).abs() > ROW_TOL {
                return Err(MarkovError::BadJumpRow {
                    state: states[u].clone(),
                    sum,
                });
            }
        }
        Ok(Self {
            states,
            exit_rates,
            jumps,
            intensity,
        })
    }

    /// Builds the chain from a generator with zero row sums.
    pub fn from_generator(states: Vec<String>, q: &Matrix, intensity: IntensityFunction) -> Result<Self> {
        let n = q.dim();
        if states.len() != n {
            return Err(MarkovError::DimensionMismatch(format!("{} states, generator {n}×{n}", states.len())));
        }
        let mut exit = vec![0.0; n];
        let mut jumps = vec![vec![0.0; n]; n];
        for u in 0..n {
            let out: f64 = (0..n).filter(|v| *v != u).map(|v| q.get(u, v)).sum();
            if (out + q.get(u, u)).abs() > 1e-12 * (1.0 + out.abs()) {
                return Err(MarkovError::InvalidParameter(format!("generator row {u} does not sum to zero")));
            }
            exit[u] = out;
            if out > 0.0 {
                for v in (0..n).filter(|v| *v != u) {
                    jumps[u][v] = q.get(u, v) / out;
                }
            }
        }
        Self::new(states, exit, jumps, intensity)
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn exit_rates(&self) -> &[f64] {
        &self.exit_rates
    }

    pub fn jump_probabilities(&self) -> &Matrix {
        &self.jumps
    }

    pub fn intensity(&self) -> &IntensityFunction {
        &self.intensity
    }

    pub fn index_of(&self, value: &str) -> Result<usize> {
        self.states
            .iter()
            .position(|s| s == value)
            .ok_or_else(|| MarkovError::UnknownValue(value.to_string()))
    }

    /// `q[u][v] = ℓ_u P[u][v]` off the diagonal, `q[u][u] = -ℓ_u`.
    pub fn generator(&self) -> Matrix {
        let n = self.states.len();
        let mut q = Matrix::zeros(n);
        for u in 0..n {
            for v in 0..n {
                if u != v {
                    q.set(u, v, self.exit_rates[u] * self.jumps.get(u, v));
                }
            }
            q.set(u, u, -self.exit_rates[u]);
        }
        q
    }

    /// Transition matrix after `gamma` units of transformed time.
    pub fn transition_for(&self, gamma: f64) -> Matrix {
        if gamma == 0.0 {
            return Matrix::identity(self.states.len());
        }
        self.generator().scaled(gamma).expm().clamp_probabilities()
    }

    pub fn transition_matrix(&self, s: f64, f: f64) -> Result<Matrix> {
        Ok(self.transition_for(self.intensity.integrate(s, f)?))
    }

    /// Block-level chain for a lumpable partition.
    pub fn lump(&self, partition: &[Vec<usize>]) -> Result<MarkovAttribute> {
        let n = self.states.len();
        let mut owner = vec![usize::MAX; n];
        for (b, block) in partition.iter().enumerate() {
            if block.is_empty() {
                return Err(MarkovError::BadPartition);
            }
            for &u in block {
                if u >= n || owner[u] != usize::MAX {
                    return Err(MarkovError::BadPartition);
                }
                owner[u] = b;
            }
        }
        if owner.contains(&usize::MAX) {
            return Err(MarkovError::BadPartition);
        }
        let q = self.generator();
        let k = partition.len();
        let mut lumped = Matrix::zeros(k);
        for (a, block) in partition.iter().enumerate() {
            for b in (0..k).filter(|b| *b != a) {
                let rates: Vec<f64> = block
                    .iter()
                    .map(|&u| partition[b].iter().map(|&v| q.get(u, v)).sum())
                    .collect();
                let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi - lo > ROW_TOL {
                    return Err(MarkovError::NotLumpable {
                        from: a,
                        to: b,
                        deviation: hi - lo,
                    });
                }
                lumped.set(a, b, rates[0]);
            }
            let out: f64 = (0..k).filter(|b| *b != a).map(|b| lumped.get(a, b)).sum();
            lumped.set(a, a, -out);
        }
        let labels = partition
            .iter()
            .map(|block| block.iter().map(|&u| self.states[u].as_str()).collect::<Vec<_>>().join("|"))
            .collect();
        MarkovAttribute::from_generator(labels, &lumped, self.intensity.clone())
    }
}

/// Changed/unchanged lump with exit rate `theta` and return rate
/// `theta_prime`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryLump {
    pub theta: f64,
    pub theta_prime: f64,
    pub intensity: IntensityFunction,
}

/// State labels used when a binary lump is treated as a chain.
pub const UNCHANGED: &str = "unchanged";
pub const CHANGED: &str = "changed";

impl BinaryLump {
    pub fn new(theta: f64, theta_prime: f64, intensity: IntensityFunction) -> Result<Self> {
        check_rate("theta", theta)?;
        check_rate("theta_prime", theta_prime)?;
        Ok(Self {
            theta,
            theta_prime,
            intensity,
        })
    }

    /// `(P[stay unchanged], P[changed])` after transformed time `gamma`.
    pub fn transition_for(&self, gamma: f64) -> (f64, f64) {
        let total = self.theta + self.theta_prime;
        if total <= 0.0 || gamma == 0.0 {
            return (1.0, 0.0);
        }
        let same = (self.theta_prime + self.theta * (-total * gamma).exp()) / total;
        (same, 1.0 - same)
    }

    pub fn transition(&self, s: f64, f: f64) -> Result<(f64, f64)> {
        Ok(self.transition_for(self.intensity.integrate(s, f)?))
    }

    pub fn as_markov(&self) -> MarkovAttribute {
        MarkovAttribute::new(
            vec![UNCHANGED.into(), CHANGED.into()],
            vec![self.theta, self.theta_prime],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            self.intensity.clone(),
        )
        .expect("binary chain is valid")
    }
}

/// Which second-moment formula a random walk reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentForm {
    /// Compound-Poisson second moment `Γσ² + Γδ² + Γ²δ²`.
    #[default]
    Corrected,
    /// Uncorrected variant `Γ(σ² + 2Γδ²)`.
    Uncorrected,
}

/// Numeric attribute whose value moves by IID steps at each event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomWalk {
    pub delta: f64,
    pub sigma2: f64,
    pub intensity: IntensityFunction,
    #[serde(default)]
    pub moment_form: MomentForm,
}

impl RandomWalk {
    pub fn new(delta: f64, sigma2: f64, intensity: IntensityFunction) -> Result<Self> {
        if !delta.is_finite() {
            return Err(MarkovError::InvalidParameter(format!("delta = {delta}")));
        }
        check_rate("sigma2", sigma2)?;
        Ok(Self {
            delta,
            sigma2,
            intensity,
            moment_form: MomentForm::Corrected,
        })
    }

    pub fn with_moment_form(mut self, form: MomentForm) -> Self {
        self.moment_form = form;
        self
    }

    /// `(E[A(f)], E[(A(f) - A(s))²])` after transformed time `gamma`.
    pub fn moments_for(&self, x0: f64, gamma: f64) -> (f64, f64) {
        let mean = x0 + gamma * self.delta;
        let d2 = self.delta * self.delta;
        let second = match self.moment_form {
            MomentForm::Corrected => gamma * self.sigma2 + gamma * d2 + gamma * gamma * d2,
            MomentForm::Uncorrected => gamma * (self.sigma2 + 2.0 * gamma * d2),
        };
        (mean, second)
    }

    pub fn moments(&self, x0: f64, s: f64, f: f64) -> Result<(f64, f64)> {
        Ok(self.moments_for(x0, self.intensity.integrate(s, f)?))
    }
}

/// Events overwrite the value with a draw from `omega`, independent of the
/// old value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OverwriteSpec", into = "OverwriteSpec")]
pub struct Overwrite {
    states: Vec<String>,
    omega: Vec<f64>,
    exit_rates: Vec<f64>,
    intensity: IntensityFunction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OverwriteSpec {
    states: Vec<String>,
    omega: Vec<f64>,
    exit_rates: Vec<f64>,
    intensity: IntensityFunction,
}

impl TryFrom<OverwriteSpec> for Overwrite {
    type Error = MarkovError;
    fn try_from(s: OverwriteSpec) -> Result<Self> {
        Overwrite::new(s.states, s.omega, s.exit_rates, s.intensity)
    }
}

impl From<Overwrite> for OverwriteSpec {
    fn from(o: Overwrite) -> Self {
        OverwriteSpec {
            states: o.states,
            omega: o.omega,
            exit_rates: o.exit_rates,
            intensity: o.intensity,
        }
    }
}

impl Overwrite {
    pub fn new(states: Vec<String>, omega: Vec<f64>, exit_rates: Vec<f64>, intensity: IntensityFunction) -> Result<Self> {
        check_labels(&states)?;
        if omega.len() != states.len() || exit_rates.len() != states.len() {
            return Err(MarkovError::DimensionMismatch(format!(
                "{} states, {} weights, {} exit rates",
                states.len(),
                omega.len(),
                exit_rates.len()
            )));
        }
        for (&w, &l) in omega.iter().zip(&exit_rates) {
            check_rate("omega", w)?;
            check_rate("exit rate", l)?;
        }
        let total: f64 = omega.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MarkovError::InvalidParameter(format!("omega sums to {total}")));
        }
        Ok(Self {
            states,
            omega,
            exit_rates,
            intensity,
        })
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn exit_rates(&self) -> &[f64] {
        &self.exit_rates
    }

    pub fn intensity(&self) -> &IntensityFunction {
        &self.intensity
    }

    fn index_of(&self, value: &str) -> Result<usize> {
        self.states
            .iter()
            .position(|s| s == value)
            .ok_or_else(|| MarkovError::UnknownValue(value.to_string()))
    }

    pub fn transition_index(&self, u: usize, v: usize, gamma: f64) -> f64 {
        let stay = (-self.exit_rates[u] * gamma).exp();
        if u == v {
            stay * (1.0 - self.omega[u]) + self.omega[u]
        } else {
            (1.0 - stay) * self.omega[v]
        }
    }

    pub fn transition(&self, u: &str, v: &str, s: f64, f: f64) -> Result<f64> {
        let (iu, iv) = (self.index_of(u)?, self.index_of(v)?);
        Ok(self.transition_index(iu, iv, self.intensity.integrate(s, f)?))
    }

    /// Embedded chain: exit rate `ℓ(1 - ω_u)` and jumps `ω_v / (1 - ω_u)`.
    pub fn as_markov(&self) -> MarkovAttribute {
        let n = self.states.len();
        let mut exit = vec![0.0; n];
        let mut jumps = vec![vec![0.0; n]; n];
        for u in 0..n {
            let leave = 1.0 - self.omega[u];
            if leave > 1e-15 && self.exit_rates[u] > 0.0 {
                exit[u] = self.exit_rates[u] * leave;
                for v in (0..n).filter(|v| *v != u) {
                    jumps[u][v] = self.omega[v] / leave;
                }
                // renormalize against rounding in 1 - ω_u
                let sum: f64 = jumps[u].iter().sum();
                jumps[u].iter_mut().for_each(|p| *p /= sum);
            }
        }
        MarkovAttribute::new(self.states.clone(), exit, jumps, self.intensity.clone())
            .expect("embedded chain is valid")
    }
}

/// Probability that independent attributes move jointly from `us` to `vs`.
pub fn compound_transition(
    models: &[&MarkovAttribute],
    us: &[usize],
    vs: &[usize],
    s: f64,
    f: f64,
) -> Result<f64> {
    if models.len() != us.len() || models.len() != vs.len() {
        return Err(MarkovError::DimensionMismatch(format!(
            "{} models, {} source values, {} target values",
            models.len(),
            us.len(),
            vs.len()
        )));
    }
    let mut p = 1.0;
    for ((m, &u), &v) in models.iter().zip(us).zip(vs) {
        let n = m.states().len();
        if u >= n || v >= n {
            return Err(MarkovError::DimensionMismatch(format!("value index out of range for {n} states")));
        }
        p *= m.transition_matrix(s, f)?.get(u, v);
    }
    Ok(p)
}

/// Any of the supported modification models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum AttributeModel {
    Markov(MarkovAttribute),
    Binary(BinaryLump),
    Walk(RandomWalk),
    Overwrite(Overwrite),
}

impl AttributeModel {
    pub fn intensity(&self) -> &IntensityFunction {
        match self {
            AttributeModel::Markov(m) => m.intensity(),
            AttributeModel::Binary(b) => &b.intensity,
            AttributeModel::Walk(w) => &w.intensity,
            AttributeModel::Overwrite(o) => o.intensity(),
        }
    }

    pub fn gamma(&self, s: f64, f: f64) -> Result<f64> {
        Ok(self.intensity().integrate(s, f)?)
    }

    /// Finite chain equivalent, if the model has a finite domain.
    pub fn chain(&self) -> Option<MarkovAttribute> {
        match self {
            AttributeModel::Markov(m) => Some(m.clone()),
            AttributeModel::Binary(b) => Some(b.as_markov()),
            AttributeModel::Overwrite(o) => Some(o.as_markov()),
            AttributeModel::Walk(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> IntensityFunction {
        IntensityFunction::constant(1.0).unwrap()
    }

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let m = MarkovAttribute::new(labels(2), vec![1.0, 2.0], vec![vec![0.0, 1.0], vec![1.0, 0.0]], unit()).unwrap();
        assert_eq!(m.transition_for(0.0), Matrix::identity(2));
    }

    #[test]
    fn expm_matches_scalar_exponential() {
        let a = Matrix::from_rows(&[vec![-3.7]]).unwrap();
        assert!((a.expm().get(0, 0) - (-3.7f64).exp()).abs() < 1e-15);
        let d = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, -40.0]]).unwrap().expm();
        assert!((d.get(0, 0) - 2f64.exp()).abs() < 1e-12 * 2f64.exp());
        assert!((d.get(1, 1) - (-40f64).exp()).abs() < 1e-25);
    }

    #[test]
    fn binary_closed_form_vs_chain() {
        let b = BinaryLump::new(0.7, 0.2, unit()).unwrap();
        let p = b.as_markov().transition_for(1.3);
        let (same, changed) = b.transition_for(1.3);
        assert!((p.get(0, 0) - same).abs() < 1e-12);
        assert!((p.get(0, 1) - changed).abs() < 1e-12);
    }

    #[test]
    fn crawler_case() {
        let b = BinaryLump::new(1.0, 0.0, unit()).unwrap();
        let (same, _) = b.transition_for(std::f64::consts::LN_2);
        assert!((same - 0.5).abs() < 1e-15);
        let sym = BinaryLump::new(1.0, 1.0, unit()).unwrap();
        let (same, changed) = sym.transition_for(60.0);
        assert!((same - 0.5).abs() < 1e-12 && (changed - 0.5).abs() < 1e-12);
    }

    #[test]
    fn random_walk_moments() {
        let w = RandomWalk::new(3.0, 0.0, unit()).unwrap();
        assert_eq!(w.moments_for(100.0, 2.0).0, 106.0);
        let w = RandomWalk::new(0.0, 4.0, unit()).unwrap();
        assert_eq!(w.moments_for(0.0, 2.0).1, 8.0);
        assert_eq!(w.clone().with_moment_form(MomentForm::Uncorrected).moments_for(0.0, 2.0).1, 8.0);
        let w = RandomWalk::new(1.0, 1.0, unit()).unwrap();
        assert_eq!(w.moments_for(0.0, 2.0).1, 8.0);
        assert_eq!(w.with_moment_form(MomentForm::Uncorrected).moments_for(0.0, 2.0).1, 10.0);
    }

    #[test]
    fn overwrite_values() {
        let o = Overwrite::new(labels(2), vec![0.5, 0.5], vec![1.0, 1.0], unit()).unwrap();
        let p = o.transition_index(0, 0, std::f64::consts::LN_2);
        assert!((p - 0.75).abs() < 1e-15);
        assert_eq!(o.transition_index(0, 1, 0.0), 0.0);
        assert!(matches!(o.transition("0", "x", 0.0, 1.0), Err(MarkovError::UnknownValue(_))));
        let absorbing = Overwrite::new(labels(2), vec![1.0, 0.0], vec![1.0, 1.0], unit()).unwrap();
        assert_eq!(absorbing.transition_index(0, 0, 5.0), 1.0);
        assert_eq!(absorbing.as_markov().exit_rates()[0], 0.0);
    }

    #[test]
    fn overwrite_embedding_uniform_three() {
        let third = 1.0 / 3.0;
        let o = Overwrite::new(labels(3), vec![third, third, 1.0 - 2.0 * third], vec![1.0; 3], unit()).unwrap();
        let m = o.as_markov();
        for u in 0..3 {
            assert!((m.exit_rates()[u] - 2.0 / 3.0).abs() < 1e-12);
            for v in (0..3).filter(|v| *v != u) {
                assert!((m.jump_probabilities().get(u, v) - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lump_rejects_asymmetric_rates() {
        let q = Matrix::from_rows(&[
            vec![-1.0, 0.5, 0.5],
            vec![0.2, -0.2, 0.0],
            vec![0.9, 0.0, -0.9],
        ])
        .unwrap();
        let m = MarkovAttribute::from_generator(labels(3), &q, unit()).unwrap();
        assert!(matches!(m.lump(&[vec![0], vec![1, 2]]), Err(MarkovError::NotLumpable { .. })));
        let same = m.lump(&[vec![0], vec![1], vec![2]]).unwrap();
        assert!(same.generator().max_abs_diff(&m.generator()) < 1e-15);
        assert!(matches!(m.lump(&[vec![0], vec![1]]), Err(MarkovError::BadPartition)));
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            MarkovAttribute::new(labels(2), vec![1.0, 1.0], vec![vec![0.0, 0.5], vec![1.0, 0.0]], unit()),
            Err(MarkovError::BadJumpRow { .. })
        ));
        assert!(matches!(
            MarkovAttribute::new(labels(MAX_STATES + 1), vec![], vec![], unit()),
            Err(MarkovError::TooManyStates(_))
        ));
        let m = BinaryLump::new(1.0, 0.5, unit()).unwrap().as_markov();
        assert!(matches!(
            compound_transition(&[&m], &[0, 1], &[0], 0.0, 1.0),
            Err(MarkovError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        let m = AttributeModel::Markov(
            MarkovAttribute::new(labels(2), vec![1.0, 0.5], vec![vec![0.0, 1.0], vec![1.0, 0.0]], unit()).unwrap(),
        );
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"model\":\"markov\""));
        assert_eq!(serde_json::from_str::<AttributeModel>(&s).unwrap(), m);
        let b = AttributeModel::Binary(BinaryLump::new(0.3, 0.0, unit()).unwrap());
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(serde_json::from_str::<AttributeModel>(&s).unwrap(), b);
    }
}
