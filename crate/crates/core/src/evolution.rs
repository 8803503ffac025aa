//! Relation-level forecasts: survival, cardinality, histograms and the
//! probability of a first alteration.
//!
//! A tuple of `R` disappears either through its own intrinsic deletion or
//! because a tuple it references (directly or transitively) is deleted. With
//! fixed multiplicities each tuple of `R` depends on `w(R, S)` tuples of every
//! relation `S` reachable from `R`, so its hazard is
//! `μ̃_R(t) = Σ_S w(R, S) μ_S(t)` and survival from `s` to `f` is
//! `exp(-∫_s^f μ̃_R)`.

use crate::intensity::{IntensityError, IntensityFunction};
use crate::markov::{AttributeModel, MarkovError};
use crate::quad;
use crate::stochastic::BatchDistribution;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

const QUAD_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolutionError {
    #[error("dependency graph has a cycle through `{0}`")]
    CycleDetected(String),
    #[error("unknown relation `{0}`")]
    MissingRelation(String),
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),
    #[error("relation `{relation}` has no model for attribute `{attribute}`")]
    MissingAttributeModel { relation: String, attribute: String },
    #[error("relation `{relation}` has no histogram for attribute `{attribute}`")]
    MissingHistogram { relation: String, attribute: String },
    #[error("alteration state lacks an entry for `{0}`")]
    MissingState(String),
    #[error("relation `{0}` has no multiplicity samples")]
    MissingMultiplicityData(String),
    #[error("histogram of `{relation}.{attribute}` totals {total}, cardinality is {cardinality}")]
    InconsistentHistogram {
        relation: String,
        attribute: String,
        total: f64,
        cardinality: f64,
    },
    #[error("value `{value}` of `{attribute}` is not in the attribute's domain")]
    UnknownValue { attribute: String, value: String },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("interval end {end} precedes start {start}")]
    ReversedInterval { start: f64, end: f64 },
    #[error(transparent)]
    Intensity(#[from] IntensityError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

pub type Result<T> = std::result::Result<T, EvolutionError>;

/// Value counts of one attribute.
pub type Histogram = BTreeMap<String, f64>;

/// Lifetime distribution of a tuple measured from its insertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LifetimeCdf {
    /// Linear interpolation through `(age, G(age))` knots; `G` is 1 past the
    /// last knot.
    PiecewiseLinear { points: Vec<(f64, f64)> },
    /// Every tuple lives exactly `at` days.
    Step { at: f64 },
    Weibull { shape: f64, scale: f64 },
}

impl LifetimeCdf {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EvolutionError::Invalid(m.to_string()));
        match self {
            LifetimeCdf::PiecewiseLinear { points } => {
                if points.is_empty() || points[0] != (0.0, 0.0) {
                    return bad("piecewise-linear lifetime cdf must start at (0, 0)");
                }
                if points.windows(2).any(|w| w[1].0 <= w[0].0 || w[1].1 < w[0].1) {
                    return bad("lifetime cdf knots must increase in age and be nondecreasing");
                }
                if points.iter().any(|p| !(0.0..=1.0).contains(&p.1)) {
                    return bad("lifetime cdf values must lie in [0, 1]");
                }
            }
            LifetimeCdf::Step { at } if !(at.is_finite() && *at > 0.0) => return bad("step age must be positive"),
            LifetimeCdf::Weibull { shape, scale } if !(*shape > 0.0 && *scale > 0.0) => {
                return bad("Weibull parameters must be positive")
            }
            _ => {}
        }
        Ok(())
    }

    pub fn eval(&self, age: f64) -> f64 {
        if age <= 0.0 {
            return 0.0;
        }
        match self {
            LifetimeCdf::PiecewiseLinear { points } => {
                let i = points.partition_point(|p| p.0 <= age);
                if i >= points.len() {
                    return 1.0;
                }
                let (a0, g0) = points[i - 1];
                let (a1, g1) = points[i];
                g0 + (g1 - g0) * (age - a0) / (a1 - a0)
            }
            LifetimeCdf::Step { at } => {
                if age >= *at {
                    1.0
                } else {
                    0.0
                }
            }
            LifetimeCdf::Weibull { shape, scale } => -(-(age / scale).powf(*shape)).exp_m1(),
        }
    }

    /// Smallest age with `G(age) ≥ p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self {
            LifetimeCdf::PiecewiseLinear { points } => {
                let i = points.partition_point(|q| q.1 < p);
                if i == 0 {
                    return 0.0;
                }
                if i >= points.len() {
                    return points[points.len() - 1].0;
                }
                let (a0, g0) = points[i - 1];
                let (a1, g1) = points[i];
                if g1 == g0 {
                    a1
                } else {
                    a0 + (a1 - a0) * (p - g0) / (g1 - g0)
                }
            }
            LifetimeCdf::Step { at } => *at,
            LifetimeCdf::Weibull { shape, scale } => scale * (-(-p).ln_1p()).powf(1.0 / shape),
        }
    }

    /// Ages where the cdf has kinks or jumps.
    fn knots(&self) -> Vec<f64> {
        match self {
            LifetimeCdf::PiecewiseLinear { points } => points.iter().map(|p| p.0).collect(),
            LifetimeCdf::Step { at } => vec![*at],
            LifetimeCdf::Weibull { .. } => Vec::new(),
        }
    }
}

/// Insertion times of the tuples alive at the reference time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgeTable {
    Full { births: Vec<f64> },
    /// Equally weighted birth-time quantiles standing in for the population.
    Sketch { quantiles: Vec<f64> },
}

/// Number of quantiles kept by [`AgeTable::sketch`].
pub const SKETCH_SIZE: usize = 256;

impl AgeTable {
    /// Midpoint quantiles of the birth times; exact when there are at most
    /// [`SKETCH_SIZE`] tuples.
    pub fn sketch(births: &[f64]) -> Self {
        let mut sorted = births.to_vec();
        sorted.sort_by(f64::total_cmp);
        if sorted.len() <= SKETCH_SIZE {
            return AgeTable::Full { births: sorted };
        }
        let n = sorted.len();
        let quantiles = (0..SKETCH_SIZE)
            .map(|k| {
                let pos = (k as f64 + 0.5) / SKETCH_SIZE as f64 * n as f64 - 0.5;
                let i = pos.floor().max(0.0) as usize;
                let frac = pos - i as f64;
                let j = (i + 1).min(n - 1);
                sorted[i] + frac * (sorted[j] - sorted[i])
            })
            .collect();
        AgeTable::Sketch { quantiles }
    }

    fn entries(&self) -> &[f64] {
        match self {
            AgeTable::Full { births } => births,
            AgeTable::Sketch { quantiles } => quantiles,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Lifespan {
    /// Intrinsic deletions follow the relation's deletion intensity.
    #[default]
    Memoryless,
    /// Tuples live for a random time drawn from `cdf`.
    General { cdf: LifetimeCdf, ages: AgeTable },
}

/// Evolution parameters of one relation and its state at the reference time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationModel {
    pub name: String,
    pub insertion: IntensityFunction,
    #[serde(default)]
    pub batch: BatchDistribution,
    pub deletion: IntensityFunction,
    /// Tuples removed per event when deletions are treated as a compound
    /// process of their own.
    #[serde(default)]
    pub deletion_batch: BatchDistribution,
    #[serde(default)]
    pub lifespan: Lifespan,
    #[serde(default)]
    pub attributes: BTreeMap<String, AttributeModel>,
    #[serde(default)]
    pub histograms: BTreeMap<String, Histogram>,
    /// Value distribution of newly inserted tuples, per attribute.
    #[serde(default)]
    pub insert_values: BTreeMap<String, Histogram>,
    /// Counts over joint value tuples of all modifiable attributes (ordered by
    /// attribute name).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_histogram: Option<Vec<(Vec<String>, f64)>>,
    /// Per-tuple multiplicity vectors `S -> w(r, S)` for relations whose
    /// multiplicities vary between tuples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiplicity_samples: Option<Vec<BTreeMap<String, f64>>>,
    pub cardinality: f64,
}

impl RelationModel {
    /// A relation with the given rates, unit batches and no attributes.
    pub fn new(name: &str, insertion: IntensityFunction, deletion: IntensityFunction, cardinality: f64) -> Self {
        Self {
            name: name.to_string(),
            insertion,
            batch: BatchDistribution::unit(),
            deletion,
            deletion_batch: BatchDistribution::unit(),
            lifespan: Lifespan::Memoryless,
            attributes: BTreeMap::new(),
            histograms: BTreeMap::new(),
            insert_values: BTreeMap::new(),
            joint_histogram: None,
            multiplicity_samples: None,
            cardinality,
        }
    }

    pub fn with_attribute(mut self, name: &str, model: AttributeModel, histogram: Histogram) -> Self {
        self.attributes.insert(name.to_string(), model);
        self.histograms.insert(name.to_string(), histogram);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.cardinality.is_finite() && self.cardinality >= 0.0) {
            return Err(EvolutionError::Invalid(format!("cardinality of `{}` must be nonnegative", self.name)));
        }
        for (attr, h) in &self.histograms {
            if h.values().any(|c| !(c.is_finite() && *c >= 0.0)) {
                return Err(EvolutionError::Invalid(format!("negative count in `{}.{attr}`", self.name)));
            }
            let total: f64 = h.values().sum();
            if (total - self.cardinality).abs() > 1e-9 * (1.0 + self.cardinality) {
                return Err(EvolutionError::InconsistentHistogram {
                    relation: self.name.clone(),
                    attribute: attr.clone(),
                    total,
                    cardinality: self.cardinality,
                });
            }
        }
        if let Lifespan::General { cdf, .. } = &self.lifespan {
            cdf.validate()?;
        }
        Ok(())
    }
}

/// `from` references `to`: deleting a `to` tuple deletes the `from` tuples
/// that reference it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub multiplicity: u32,
}

/// Relations plus their referential-integrity graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatabaseSpec", into = "DatabaseSpec")]
pub struct Database {
    relations: Vec<RelationModel>,
    edges: Vec<Edge>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatabaseSpec {
    relations: Vec<RelationModel>,
    #[serde(default)]
    edges: Vec<Edge>,
}

impl TryFrom<DatabaseSpec> for Database {
    type Error = EvolutionError;
    fn try_from(spec: DatabaseSpec) -> Result<Self> {
        Database::new(spec.relations, spec.edges)
    }
}

impl From<Database> for DatabaseSpec {
    fn from(db: Database) -> Self {
        DatabaseSpec {
            relations: db.relations,
            edges: db.edges,
        }
    }
}

/// Frozen quantities at the reference time that drive the first-alteration
/// probability.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AlterationState {
    /// `D(R, S, s)`: distinct tuples of `S` whose deletion would remove at
    /// least one tuple of `R` (for `S = R` this is `|R(s)|`).
    pub referenced: BTreeMap<String, f64>,
    /// `h(R, A, s) = Σ_v R̂_{A,v}(s) ℓ_v` per attribute.
    pub exit_mass: BTreeMap<String, f64>,
}

fn check_interval(s: f64, f: f64) -> Result<()> {
    if f < s {
        return Err(EvolutionError::ReversedInterval { start: s, end: f });
    }
    Ok(())
}

impl Database {
    pub fn new(relations: Vec<RelationModel>, edges: Vec<Edge>) -> Result<Self> {
        let db = Self { relations, edges };
        db.validate()?;
        Ok(db)
    }

    /// A database holding a single relation and no edges.
    pub fn single(relation: RelationModel) -> Result<Self> {
        Self::new(vec![relation], Vec::new())
    }

    pub fn relations(&self) -> &[RelationModel] {
        &self.relations
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn relation(&self, name: &str) -> Result<&RelationModel> {
        self.relations
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| EvolutionError::MissingRelation(name.to_string()))
    }

    pub fn relation_mut(&mut self, name: &str) -> Result<&mut RelationModel> {
        self.relations
            .iter_mut()
            .find(|r| r.name == name)
            .ok_or_else(|| EvolutionError::MissingRelation(name.to_string()))
    }

    fn validate(&self) -> Result<()> {
        let mut names = std::collections::HashSet::new();
        for r in &self.relations {
            if !names.insert(r.name.as_str()) {
                return Err(EvolutionError::Invalid(format!("duplicate relation `{}`", r.name)));
            }
            r.validate()?;
        }
        for e in &self.edges {
            self.relation(&e.from)?;
            self.relation(&e.to)?;
            if e.multiplicity == 0 {
                return Err(EvolutionError::Invalid(format!("edge {} -> {} has zero multiplicity", e.from, e.to)));
            }
            if e.from == e.to {
                return Err(EvolutionError::CycleDetected(e.from.clone()));
            }
        }
        self.topological_order().map(|_| ())
    }

    /// Relations ordered so that every referenced relation precedes the
    /// relations that reference it.
    pub fn topological_order(&self) -> Result<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        fn visit(db: &Database, name: &str, marks: &mut BTreeMap<String, Mark>, out: &mut Vec<String>) -> Result<()> {
            match marks.get(name).copied().unwrap_or(Mark::New) {
                Mark::Done => return Ok(()),
                Mark::Active => return Err(EvolutionError::CycleDetected(name.to_string())),
                Mark::New => {}
            }
            marks.insert(name.to_string(), Mark::Active);
            for e in db.edges.iter().filter(|e| e.from == name) {
                visit(db, &e.to, marks, out)?;
            }
            marks.insert(name.to_string(), Mark::Done);
            out.push(name.to_string());
            Ok(())
        }
        let mut marks = BTreeMap::new();
        let mut out = Vec::new();
        for r in &self.relations {
            visit(self, &r.name, &mut marks, &mut out)?;
        }
        Ok(out)
    }

    /// `w(R, S)` for every `S` reachable from `R` (including `R` with weight
    /// 1). Parallel paths add up.
    pub fn closure(&self, name: &str) -> Result<BTreeMap<String, f64>> {
        self.relation(name)?;
        let mut out = BTreeMap::new();
        self.accumulate_closure(name, 1.0, &mut out, 0)?;
        Ok(out)
    }

    fn accumulate_closure(&self, name: &str, weight: f64, out: &mut BTreeMap<String, f64>, depth: usize) -> Result<()> {
        if depth > self.relations.len() {
            return Err(EvolutionError::CycleDetected(name.to_string()));
        }
        *out.entry(name.to_string()).or_insert(0.0) += weight;
        for e in self.edges.iter().filter(|e| e.from == name) {
            self.accumulate_closure(&e.to, weight * e.multiplicity as f64, out, depth + 1)?;
        }
        Ok(())
    }

    /// True when `R` takes part in no referential-integrity edge.
    pub fn is_isolated(&self, name: &str) -> bool {
        !self.edges.iter().any(|e| e.from == name || e.to == name)
    }

    fn memoryless(&self, name: &str) -> Result<&RelationModel> {
        let r = self.relation(name)?;
        if matches!(r.lifespan, Lifespan::General { .. }) {
            return Err(EvolutionError::UnsupportedModel(format!(
                "`{name}` has a non-exponential lifespan; only expected_cardinality supports it"
            )));
        }
        Ok(r)
    }

    /// `μ̃_R = Σ_S w(R, S) μ_S`.
    pub fn effective_deletion_intensity(&self, name: &str) -> Result<IntensityFunction> {
        let closure = self.closure(name)?;
        let mut parts = Vec::with_capacity(closure.len());
        for (s, w) in &closure {
            parts.push(self.relation(s)?.deletion.scale(*w)?);
        }
        Ok(IntensityFunction::sum(&parts)?)
    }

    /// `p_R(s, f) = exp(-M̃_R(s, f))`.
    pub fn survival_prob(&self, name: &str, s: f64, f: f64) -> Result<f64> {
        check_interval(s, f)?;
        self.memoryless(name)?;
        let mu = self.effective_deletion_intensity(name)?;
        Ok((-mu.integrate(s, f)?).exp())
    }

    /// Survival averaged over the relation's multiplicity samples:
    /// `mean_r exp(-Σ_S w(r, S) M_S(s, f))`. The relation's own deletion
    /// intensity always enters with weight 1.
    pub fn survival_prob_sampled(&self, name: &str, s: f64, f: f64) -> Result<f64> {
        check_interval(s, f)?;
        let r = self.memoryless(name)?;
        let samples = r
            .multiplicity_samples
            .as_ref()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| EvolutionError::MissingMultiplicityData(name.to_string()))?;
        let own = r.deletion.integrate(s, f)?;
        let mut cache: BTreeMap<&str, f64> = BTreeMap::new();
        let mut total = 0.0;
        for sample in samples {
            let mut exponent = own;
            for (other, w) in sample {
                if other == name {
                    continue;
                }
                let m = match cache.get(other.as_str()) {
                    Some(m) => *m,
                    None => {
                        let m = self.relation(other)?.deletion.integrate(s, f)?;
                        cache.insert(other.as_str(), m);
                        m
                    }
                };
                exponent += w * m;
            }
            total += (-exponent).exp();
        }
        Ok(total / samples.len() as f64)
    }

    /// `Λ̃_R(s, f) = ∫_s^f λ_R(t) exp(-M̃_R(t, f)) dt`, the expected number of
    /// insertion events in `(s, f]` whose tuples are still alive at `f`.
    pub fn effective_insertions(&self, name: &str, s: f64, f: f64) -> Result<f64> {
        check_interval(s, f)?;
        let r = self.memoryless(name)?;
        let mu = self.effective_deletion_intensity(name)?;
        surviving_mass(&r.insertion, &mu, s, f)
    }

    /// `E[X_R(s, f)] = E[Δ⁺] Λ̃_R(s, f)`.
    pub fn surviving_insertions_mean(&self, name: &str, s: f64, f: f64) -> Result<f64> {
        Ok(self.relation(name)?.batch.mean() * self.effective_insertions(name, s, f)?)
    }

    /// `E[|R(f)|]` given the cardinality at `s`.
    pub fn expected_cardinality(&self, name: &str, s: f64, f: f64) -> Result<f64> {
        check_interval(s, f)?;
        let r = self.relation(name)?;
        match &r.lifespan {
            Lifespan::Memoryless => {
                let p = self.survival_prob(name, s, f)?;
                Ok(p * r.cardinality + self.surviving_insertions_mean(name, s, f)?)
            }
            Lifespan::General { cdf, ages } => {
                if !self.is_isolated(name) {
                    return Err(EvolutionError::UnsupportedModel(format!(
                        "`{name}` combines a non-exponential lifespan with referential integrity"
                    )));
                }
                let entries = ages.entries();
                let survivors = if entries.is_empty() {
                    0.0
                } else {
                    let mean: f64 = entries
                        .iter()
                        .map(|b| {
                            let alive = 1.0 - cdf.eval(s - b);
                            if alive <= 0.0 {
                                0.0
                            } else {
                                (1.0 - cdf.eval(f - b)) / alive
                            }
                        })
                        .sum::<f64>()
                        / entries.len() as f64;
                    mean * r.cardinality
                };
                let mut cuts = r.insertion.breakpoints(s, f);
                cuts.extend(cdf.knots().into_iter().map(|k| f - k).filter(|t| *t > s && *t < f));
                let cuts = quad::merge_breakpoints(&[cuts]);
                let inserted =
                    quad::integrate_pieces(|t| r.insertion.eval(t) * (1.0 - cdf.eval(f - t)), &cuts, QUAD_TOL);
                Ok(survivors + r.batch.mean() * inserted)
            }
        }
    }

    /// `E[D_R(s, f)] = E[Δ⁻] M_R(s, f)`, treating deletions as a compound
    /// process of their own.
    pub fn compound_deletion_mean(&self, name: &str, s: f64, f: f64) -> Result<f64> {
        check_interval(s, f)?;
        let r = self.relation(name)?;
        Ok(r.deletion_batch.mean() * r.deletion.integrate(s, f)?)
    }

    fn attribute<'a>(&self, r: &'a RelationModel, attribute: &str) -> Result<&'a AttributeModel> {
        r.attributes
            .get(attribute)
            .ok_or_else(|| EvolutionError::MissingAttributeModel {
                relation: r.name.clone(),
                attribute: attribute.to_string(),
            })
    }

    fn histogram<'a>(&self, r: &'a RelationModel, attribute: &str) -> Result<&'a Histogram> {
        r.histograms
            .get(attribute)
            .ok_or_else(|| EvolutionError::MissingHistogram {
                relation: r.name.clone(),
                attribute: attribute.to_string(),
            })
    }

    /// Distribution of attribute values among newly inserted tuples, indexed
    /// like `states`. Falls back to the current histogram, then to uniform.
    pub fn insert_distribution(&self, name: &str, attribute: &str, states: &[String]) -> Result<Vec<f64>> {
        let r = self.relation(name)?;
        let source = r
            .insert_values
            .get(attribute)
            .or_else(|| r.histograms.get(attribute))
            .filter(|h| h.values().sum::<f64>() > 0.0);
        let Some(h) = source else {
            return Ok(vec![1.0 / states.len() as f64; states.len()]);
        };
        let total: f64 = h.values().sum();
        let mut out = vec![0.0; states.len()];
        for (value, count) in h {
            let i = index_in(states, attribute, value)?;
            out[i] = count / total;
        }
        Ok(out)
    }

    /// Histogram vector indexed like `states`.
    fn histogram_vector(&self, r: &RelationModel, attribute: &str, states: &[String]) -> Result<Vec<f64>> {
        let h = self.histogram(r, attribute)?;
        let mut out = vec![0.0; states.len()];
        for (value, count) in h {
            out[index_in(states, attribute, value)?] += count;
        }
        Ok(out)
    }

    /// Expected histogram of `attribute` at `f`.
    ///
    /// Survivors of `R(s)` move through the transition matrix; tuples
    /// inserted at `t ∈ (s, f]` start from the insertion distribution and
    /// must themselves survive until `f`. Random-walk attributes have no
    /// finite domain, so their histogram is rescaled to the expected
    /// cardinality.
    pub fn expected_histogram(&self, name: &str, attribute: &str, s: f64, f: f64) -> Result<Histogram> {
        check_interval(s, f)?;
        let r = self.memoryless(name)?;
        let model = self.attribute(r, attribute)?;
        let Some(chain) = model.chain() else {
            let h = self.histogram(r, attribute)?;
            let expected = self.expected_cardinality(name, s, f)?;
            let ratio = if r.cardinality > 0.0 { expected / r.cardinality } else { 0.0 };
            return Ok(h.iter().map(|(k, v)| (k.clone(), v * ratio)).collect());
        };
        let states = chain.states().to_vec();
        let n = states.len();
        let p = self.survival_prob(name, s, f)?;
        let current = self.histogram_vector(r, attribute, &states)?;
        let transition = chain.transition_matrix(s, f)?;
        let mut result = vec![0.0; n];
        for u in 0..n {
            if current[u] == 0.0 {
                continue;
            }
            for (v, out) in result.iter_mut().enumerate() {
                *out += p * current[u] * transition.get(u, v);
            }
        }
        let omega = self.insert_distribution(name, attribute, &states)?;
        let mu = self.effective_deletion_intensity(name)?;
        let gamma = chain.intensity();
        let q = chain.generator();
        let cuts = quad::merge_breakpoints(&[
            r.insertion.breakpoints(s, f),
            mu.breakpoints(s, f),
            gamma.breakpoints(s, f),
        ]);
        let batch = r.batch.mean();
        let mut failure = None;
        let inserted = quad::integrate_vec_pieces(
            |t, out| {
                let rate = r.insertion.eval(t);
                if rate == 0.0 || failure.is_some() {
                    return;
                }
                let (m, g) = match (mu.integrate(t, f), gamma.integrate(t, f)) {
                    (Ok(m), Ok(g)) => (m, g),
                    (Err(e), _) | (_, Err(e)) => {
                        failure = Some(e);
                        return;
                    }
                };
                let weight = rate * (-m).exp();
                let pt = if g == 0.0 {
                    crate::markov::Matrix::identity(n)
                } else {
                    q.scaled(g).expm()
                };
                for u in 0..n {
                    if omega[u] == 0.0 {
                        continue;
                    }
                    for (v, o) in out.iter_mut().enumerate() {
                        *o += weight * omega[u] * pt.get(u, v).clamp(0.0, 1.0);
                    }
                }
            },
            &cuts,
            n,
            QUAD_TOL,
        );
        if let Some(e) = failure {
            return Err(e.into());
        }
        for (out, ins) in result.iter_mut().zip(&inserted) {
            *out += batch * ins;
        }
        Ok(states.into_iter().zip(result).collect())
    }

    /// Exit mass `Σ_v R̂_{A,v} ℓ_v` of one attribute. Random walks change at
    /// every event, so their exit rate is 1.
    pub fn exit_mass(&self, name: &str, attribute: &str) -> Result<f64> {
        let r = self.relation(name)?;
        let model = self.attribute(r, attribute)?;
        match model.chain() {
            Some(chain) => {
                let h = self.histogram_vector(r, attribute, chain.states())?;
                Ok(h.iter().zip(chain.exit_rates()).map(|(c, l)| c * l).sum())
            }
            None => Ok(r.cardinality),
        }
    }

    /// Alteration state built from the model alone, assuming distinct tuples
    /// of `R` never share referenced tuples (`D(R, S) = w(R, S) |R(s)|`).
    pub fn default_alteration_state(&self, name: &str) -> Result<AlterationState> {
        let r = self.relation(name)?;
        let referenced = self
            .closure(name)?
            .into_iter()
            .map(|(s, w)| (s, w * r.cardinality))
            .collect();
        let mut exit_mass = BTreeMap::new();
        for attr in r.attributes.keys() {
            exit_mass.insert(attr.clone(), self.exit_mass(name, attr)?);
        }
        Ok(AlterationState { referenced, exit_mass })
    }

    /// `Z_R(s, f) = Λ_R + Σ_S D(R, S) M_S + Σ_A h(R, A) Γ_A`.
    pub fn alteration_exponent(&self, name: &str, state: &AlterationState, s: f64, f: f64) -> Result<f64> {
        check_interval(s, f)?;
        let r = self.memoryless(name)?;
        let mut z = r.insertion.integrate(s, f)?;
        for other in self.closure(name)?.keys() {
            let d = state
                .referenced
                .get(other)
                .ok_or_else(|| EvolutionError::MissingState(other.clone()))?;
            if *d > 0.0 {
                z += d * self.relation(other)?.deletion.integrate(s, f)?;
            }
        }
        for (attr, model) in &r.attributes {
            let h = state
                .exit_mass
                .get(attr)
                .ok_or_else(|| EvolutionError::MissingState(format!("{name}.{attr}")))?;
            if *h > 0.0 {
                z += h * model.gamma(s, f)?;
            }
        }
        Ok(z)
    }

    /// Probability that `R` changes at least once in `(s, f]`.
    pub fn first_alteration(&self, name: &str, state: &AlterationState, s: f64, f: f64) -> Result<f64> {
        let z = self.alteration_exponent(name, state, s, f)?;
        Ok((-(-z).exp_m1()).clamp(0.0, 1.0))
    }

    /// Probability that a surviving tuple keeps the value it had at `s` for
    /// every modifiable attribute, given its current values.
    fn keep_probabilities(&self, r: &RelationModel, s: f64, f: f64) -> Result<BTreeMap<String, BTreeMap<String, f64>>> {
        let mut out = BTreeMap::new();
        for (attr, model) in &r.attributes {
            let h = self.histogram(r, attr)?;
            let mut per_value = BTreeMap::new();
            match model.chain() {
                Some(chain) => {
                    let p = chain.transition_matrix(s, f)?;
                    for value in h.keys() {
                        let i = index_in(chain.states(), attr, value)?;
                        per_value.insert(value.clone(), p.get(i, i));
                    }
                }
                None => {
                    let stay = (-model.gamma(s, f)?).exp();
                    for value in h.keys() {
                        per_value.insert(value.clone(), stay);
                    }
                }
            }
            out.insert(attr.clone(), per_value);
        }
        Ok(out)
    }

    /// `(E[Y⁻], E[Y⁺])`: surviving tuples of `R(s)` whose modifiable
    /// attributes hold the same values at `f` as at `s`, and those that
    /// differ.
    pub fn surviving_unmodified_mean(&self, name: &str, s: f64, f: f64) -> Result<(f64, f64)> {
        check_interval(s, f)?;
        let r = self.memoryless(name)?;
        let p = self.survival_prob(name, s, f)?;
        let survivors = p * r.cardinality;
        if r.attributes.is_empty() {
            return Ok((survivors, 0.0));
        }
        let keep = self.keep_probabilities(r, s, f)?;
        let unchanged = match &r.joint_histogram {
            Some(joint) => {
                let attrs: Vec<&String> = r.attributes.keys().collect();
                let mut acc = 0.0;
                for (values, count) in joint {
                    if values.len() != attrs.len() {
                        return Err(EvolutionError::Invalid(format!(
                            "joint histogram rows of `{name}` need {} values",
                            attrs.len()
                        )));
                    }
                    let mut prob = 1.0;
                    for (attr, value) in attrs.iter().zip(values) {
                        prob *= keep[*attr].get(value).copied().ok_or_else(|| EvolutionError::UnknownValue {
                            attribute: (*attr).clone(),
                            value: value.clone(),
                        })?;
                    }
                    acc += count * prob;
                }
                acc
            }
            None => {
                if r.cardinality == 0.0 {
                    0.0
                } else {
                    let mut frac = 1.0;
                    for (attr, per_value) in &keep {
                        let h = &r.histograms[attr];
                        let kept: f64 = h.iter().map(|(v, c)| c * per_value[v]).sum();
                        frac *= kept / r.cardinality;
                    }
                    frac * r.cardinality
                }
            }
        };
        let minus = p * unchanged;
        Ok((minus, (survivors - minus).max(0.0)))
    }

    /// Replaces the reference-time state of `R` by its expectation at `f`.
    pub fn advance(&self, name: &str, s: f64, f: f64) -> Result<RelationModel> {
        let mut r = self.relation(name)?.clone();
        let mut histograms = BTreeMap::new();
        for attr in r.histograms.keys() {
            if r.attributes.contains_key(attr) {
                histograms.insert(attr.clone(), self.expected_histogram(name, attr, s, f)?);
            } else {
                let ratio = if r.cardinality > 0.0 {
                    self.expected_cardinality(name, s, f)? / r.cardinality
                } else {
                    0.0
                };
                histograms.insert(attr.clone(), r.histograms[attr].iter().map(|(k, v)| (k.clone(), v * ratio)).collect());
            }
        }
        r.cardinality = self.expected_cardinality(name, s, f)?;
        // keep the totals consistent despite quadrature noise
        for h in histograms.values_mut() {
            let total: f64 = h.values().sum();
            if total > 0.0 {
                let k = r.cardinality / total;
                h.values_mut().for_each(|v| *v *= k);
            }
        }
        r.histograms = histograms;
        r.joint_histogram = None;
        Ok(r)
    }

    /// Copy of the database with `R` replaced.
    pub fn with_relation(&self, relation: RelationModel) -> Result<Database> {
        let mut db = self.clone();
        let name = relation.name.clone();
        *db.relation_mut(&name)? = relation;
        db.validate()?;
        Ok(db)
    }
}

fn index_in(states: &[String], attribute: &str, value: &str) -> Result<usize> {
    states
        .iter()
        .position(|s| s == value)
        .ok_or_else(|| EvolutionError::UnknownValue {
            attribute: attribute.to_string(),
            value: value.to_string(),
        })
}

/// `∫_s^f λ(t) exp(-∫_t^f μ) dt`, with closed forms for proportional rates.
pub fn surviving_mass(lambda: &IntensityFunction, mu: &IntensityFunction, s: f64, f: f64) -> Result<f64> {
    if f <= s || lambda.is_zero() {
        return Ok(0.0);
    }
    if let Some(alpha) = mu.proportional_factor(lambda) {
        let cum = lambda.integrate(s, f)?;
        if alpha == 0.0 {
            return Ok(cum);
        }
        return Ok(-(-alpha * cum).exp_m1() / alpha);
    }
    let cuts = quad::merge_breakpoints(&[lambda.breakpoints(s, f), mu.breakpoints(s, f)]);
    let mut failure = None;
    let value = quad::integrate_pieces(
        |t| match mu.integrate(t, f) {
            Ok(m) => lambda.eval(t) * (-m).exp(),
            Err(e) => {
                failure = Some(e);
                0.0
            }
        },
        &cuts,
        QUAD_TOL,
    );
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(value),
    }
}
