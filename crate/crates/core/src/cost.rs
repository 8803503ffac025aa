//! Obsolescence and transcription costs of a replica.
//!
//! Between two refreshes at `s` and `f` the replica misses every change made
//! to the source. A missed insertion at `t` is charged `g(t, f) = ∫_t^f a`,
//! the accumulated importance of the time during which it was invisible, and
//! a missed deletion at `t` is charged the same way with its own weight.
//! Modified tuples are charged by a per-attribute distance between the stale
//! and current values. A refresh costs `c + β · (tuples transferred)`.

use crate::calendar::{self, CalendarError};
use crate::evolution::{Database, EvolutionError};
use crate::intensity::{IntensityError, IntensityFunction, Segment};
use crate::markov::{AttributeModel, MarkovError};
use crate::quad;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

const QUAD_TOL: f64 = 1e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("refresh times must be strictly increasing and inside ({start}, {end}]")]
    UnorderedSchedule { start: f64, end: f64 },
    #[error("no attribute model for `{0}`")]
    MissingModel(String),
    #[error("no histogram for `{0}`")]
    MissingHistogram(String),
    #[error("invalid cost specification: {0}")]
    Invalid(String),
    #[error("metric for `{attribute}` cannot be applied: {reason}")]
    UnsupportedMetric { attribute: String, reason: String },
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Intensity(#[from] IntensityError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Calendar(#[from] CalendarError),
}

pub type Result<T> = std::result::Result<T, CostError>;

/// Weekly piecewise-constant importance rate `a(τ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightSpec", into = "WeightSpec")]
pub struct ImportanceWeight {
    rate: IntensityFunction,
    spec: WeightSpec,
}

/// Block of preferred hours, e.g. `{"days": "Mon-Fri", "start": "09:00",
/// "end": "18:00"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkBlock {
    pub days: String,
    pub start: String,
    pub end: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    #[serde(default)]
    pub work_hours: Vec<WorkBlock>,
    /// Weight inside work hours.
    pub a1: f64,
    /// Weight outside work hours.
    pub a2: f64,
    /// Flat charge per missed change, added to the accumulated weight.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub terminal: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl TryFrom<WeightSpec> for ImportanceWeight {
    type Error = CostError;
    fn try_from(spec: WeightSpec) -> Result<Self> {
        ImportanceWeight::from_spec(spec)
    }
}

impl From<ImportanceWeight> for WeightSpec {
    fn from(w: ImportanceWeight) -> Self {
        w.spec
    }
}

fn parse_days(text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once('-') {
            let (a, b) = (calendar::parse_weekday(a)?, calendar::parse_weekday(b)?);
            let mut d = a;
            loop {
                out.push(d);
                if d == b {
                    break;
                }
                d = (d + 1) % 7;
            }
        } else {
            out.push(calendar::parse_weekday(part)?);
        }
    }
    Ok(out)
}

impl ImportanceWeight {
    /// `a(τ) ≡ a`.
    pub fn constant(a: f64) -> Result<Self> {
        Self::from_spec(WeightSpec {
            work_hours: Vec::new(),
            a1: a,
            a2: a,
            terminal: 0.0,
        })
    }

    /// `g(t, f) = κ` for every `t < f`: each missed change costs the same.
    pub fn terminal(kappa: f64) -> Result<Self> {
        Self::from_spec(WeightSpec {
            work_hours: Vec::new(),
            a1: 0.0,
            a2: 0.0,
            terminal: kappa,
        })
    }

    /// Weight `a1` during the given blocks and `a2` elsewhere.
    pub fn from_spec(spec: WeightSpec) -> Result<Self> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !(ok(spec.a1) && ok(spec.a2) && ok(spec.terminal)) {
            return Err(CostError::Invalid("importance weights must be nonnegative".into()));
        }
        let mut intervals: Vec<(f64, f64)> = Vec::new();
        for block in &spec.work_hours {
            let start = calendar::parse_time_of_day(&block.start)?;
            let end = calendar::parse_time_of_day(&block.end)?;
            if end <= start {
                return Err(CostError::Invalid(format!("work block {}–{} is empty", block.start, block.end)));
            }
            for d in parse_days(&block.days)? {
                intervals.push((d as f64 + start, d as f64 + end));
            }
        }
        let mut cuts = vec![0.0, 7.0];
        for (a, b) in &intervals {
            cuts.push(*a);
            cuts.push(*b);
        }
        let cuts = quad::merge_breakpoints(&[cuts]);
        let mut segments: Vec<Segment> = Vec::new();
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let inside = intervals.iter().any(|(a, b)| mid >= *a && mid < *b);
            let value = if inside { spec.a1 } else { spec.a2 };
            match segments.last_mut() {
                Some(last) if last.coeffs[0] == value => last.end = w[1],
                _ => segments.push(Segment::constant(w[0], w[1], value)),
            }
        }
        let rate = if segments.len() == 1 {
            IntensityFunction::constant(segments[0].coeffs[0])?
        } else {
            IntensityFunction::recurrent(7.0, segments)?
        };
        Ok(Self { rate, spec })
    }

    pub fn rate(&self) -> &IntensityFunction {
        &self.rate
    }

    pub fn is_zero(&self) -> bool {
        self.rate.is_zero() && self.spec.terminal == 0.0
    }

    /// `g(t, f) = ∫_t^f a(τ) dτ + κ`.
    pub fn g(&self, t: f64, f: f64) -> Result<f64> {
        Ok(self.g_inner(t, f)?)
    }

    fn g_inner(&self, t: f64, f: f64) -> std::result::Result<f64, IntensityError> {
        Ok(self.rate.integrate(t, f)? + self.spec.terminal)
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::from_spec(WeightSpec {
            work_hours: self.spec.work_hours.clone(),
            a1: self.spec.a1 * k,
            a2: self.spec.a2 * k,
            terminal: self.spec.terminal * k,
        })
    }
}

/// Distance between a stale and a current attribute value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModificationMetric {
    /// Cost 1 whenever the value differs.
    Unit,
    /// `k (v - u)²` for numeric values.
    SquaredError { k: f64 },
    /// Arbitrary `c[u][v]` with a zero diagonal.
    CostMatrix { states: Vec<String>, costs: Vec<Vec<f64>> },
}

impl ModificationMetric {
    fn validate(&self, attribute: &str) -> Result<()> {
        match self {
            ModificationMetric::Unit => Ok(()),
            ModificationMetric::SquaredError { k } if k.is_finite() && *k >= 0.0 => Ok(()),
            ModificationMetric::SquaredError { .. } => Err(CostError::Invalid(format!("k for `{attribute}` must be ≥ 0"))),
            ModificationMetric::CostMatrix { states, costs } => {
                if costs.len() != states.len() || costs.iter().any(|r| r.len() != states.len()) {
                    return Err(CostError::Invalid(format!("cost matrix for `{attribute}` has the wrong shape")));
                }
                for (i, row) in costs.iter().enumerate() {
                    if row[i] != 0.0 {
                        return Err(CostError::Invalid(format!("cost matrix for `{attribute}` has a nonzero diagonal")));
                    }
                    if row.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                        return Err(CostError::Invalid(format!("cost matrix for `{attribute}` has a negative entry")));
                    }
                }
                Ok(())
            }
        }
    }

    /// Realized cost of a tuple that moved from `old` to `new`.
    pub fn realized(&self, attribute: &str, old: &str, new: &str) -> Result<f64> {
        match self {
            ModificationMetric::Unit => Ok(if old == new { 0.0 } else { 1.0 }),
            ModificationMetric::SquaredError { k } => {
                let u = parse_numeric(attribute, old)?;
                let v = parse_numeric(attribute, new)?;
                Ok(k * (v - u) * (v - u))
            }
            ModificationMetric::CostMatrix { states, costs } => {
                let i = matrix_index(states, attribute, old)?;
                let j = matrix_index(states, attribute, new)?;
                Ok(costs[i][j])
            }
        }
    }
}

fn parse_numeric(attribute: &str, value: &str) -> Result<f64> {
    value.trim().parse::<f64>().map_err(|_| CostError::UnsupportedMetric {
        attribute: attribute.to_string(),
        reason: format!("value `{value}` is not numeric"),
    })
}

fn matrix_index(states: &[String], attribute: &str, value: &str) -> Result<usize> {
    states.iter().position(|s| s == value).ok_or_else(|| CostError::UnsupportedMetric {
        attribute: attribute.to_string(),
        reason: format!("value `{value}` is missing from the cost matrix"),
    })
}

/// How deletion obsolescence is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeletionForm {
    /// `|R(s)| ∫ μ̃(t) e^{-M̃(s,t)} g(t, f) dt`, the exact expectation.
    #[default]
    Exact,
    /// `|R(s)| (1 - e^{-M̃}) / M̃ · ∫ μ̃ g`, which replaces the survival
    /// factor inside the integral by its average.
    AverageFactor,
}

/// Trade-off weight, refresh prices and obsolescence weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CostFile", into = "CostFile")]
pub struct CostSpec {
    pub alpha: f64,
    pub setup: f64,
    pub beta: f64,
    pub insertion_weight: ImportanceWeight,
    pub deletion_weight: ImportanceWeight,
    pub metrics: BTreeMap<String, ModificationMetric>,
    pub deletion_form: DeletionForm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CostFile {
    alpha: f64,
    setup_c: f64,
    beta: f64,
    #[serde(default)]
    work_hours: Vec<WorkBlock>,
    #[serde(default = "one")]
    a1: f64,
    #[serde(default = "one")]
    a2: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    terminal: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    deletion: Option<WeightSpec>,
    #[serde(default)]
    metrics: BTreeMap<String, ModificationMetric>,
    #[serde(default)]
    deletion_form: DeletionForm,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<CostFile> for CostSpec {
    type Error = CostError;
    fn try_from(f: CostFile) -> Result<Self> {
        let insertion = WeightSpec {
            work_hours: f.work_hours,
            a1: f.a1,
            a2: f.a2,
            terminal: f.terminal,
        };
        let deletion = f.deletion.unwrap_or_else(|| insertion.clone());
        let spec = CostSpec {
            alpha: f.alpha,
            setup: f.setup_c,
            beta: f.beta,
            insertion_weight: ImportanceWeight::from_spec(insertion)?,
            deletion_weight: ImportanceWeight::from_spec(deletion)?,
            metrics: f.metrics,
            deletion_form: f.deletion_form,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<CostSpec> for CostFile {
    fn from(c: CostSpec) -> Self {
        let ins = c.insertion_weight.spec;
        let del = c.deletion_weight.spec;
        CostFile {
            alpha: c.alpha,
            setup_c: c.setup,
            beta: c.beta,
            deletion: (del != ins).then_some(del),
            work_hours: ins.work_hours,
            a1: ins.a1,
            a2: ins.a2,
            terminal: ins.terminal,
            metrics: c.metrics,
            deletion_form: c.deletion_form,
        }
    }
}

impl CostSpec {
    /// Uniform unit weights for both insertions and deletions, no metrics.
    pub fn uniform(alpha: f64, setup: f64, beta: f64) -> Result<Self> {
        let spec = CostSpec {
            alpha,
            setup,
            beta,
            insertion_weight: ImportanceWeight::constant(1.0)?,
            deletion_weight: ImportanceWeight::constant(1.0)?,
            metrics: BTreeMap::new(),
            deletion_form: DeletionForm::Exact,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(CostError::Invalid(format!("alpha = {} is outside [0, 1]", self.alpha)));
        }
        if !(self.setup.is_finite() && self.setup >= 0.0 && self.beta.is_finite() && self.beta >= 0.0) {
            return Err(CostError::Invalid("setup cost and beta must be nonnegative".into()));
        }
        for (attr, m) in &self.metrics {
            m.validate(attr)?;
        }
        Ok(())
    }
}

/// Expected obsolescence over one refresh interval.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObsolescenceBreakdown {
    pub insertion: f64,
    pub deletion: f64,
    pub modification: f64,
    pub total: f64,
}

impl ObsolescenceBreakdown {
    pub fn new(insertion: f64, deletion: f64, modification: f64) -> Self {
        Self {
            insertion,
            deletion,
            modification,
            total: insertion + deletion + modification,
        }
    }

    pub fn add(&mut self, other: &ObsolescenceBreakdown) {
        self.insertion += other.insertion;
        self.deletion += other.deletion;
        self.modification += other.modification;
        self.total += other.total;
    }
}

fn collect_failure<T>(slot: &mut Option<IntensityError>, r: std::result::Result<T, IntensityError>, fallback: T) -> T {
    match r {
        Ok(v) => v,
        Err(e) => {
            slot.get_or_insert(e);
            fallback
        }
    }
}

/// `E[Δ⁺] ∫_s^f λ(t) p̂(t, f) g(t, f) dt`: missed insertions still present at
/// `f`, each weighted by the importance of the time it was missing.
pub fn insertion_obsolescence(db: &Database, relation: &str, weight: &ImportanceWeight, s: f64, f: f64) -> Result<f64> {
    if f <= s || weight.is_zero() {
        return Ok(0.0);
    }
    let r = db.relation(relation)?;
    let mu = db.effective_deletion_intensity(relation)?;
    let cuts = quad::merge_breakpoints(&[
        r.insertion.breakpoints(s, f),
        mu.breakpoints(s, f),
        weight.rate().breakpoints(s, f),
    ]);
    let mut failure = None;
    let value = quad::integrate_pieces(
        |t| {
            let rate = r.insertion.eval(t);
            if rate == 0.0 {
                return 0.0;
            }
            let m = collect_failure(&mut failure, mu.integrate(t, f), 0.0);
            let g = collect_failure(&mut failure, weight.g_inner(t, f), 0.0);
            rate * (-m).exp() * g
        },
        &cuts,
        QUAD_TOL,
    );
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(r.batch.mean() * value)
}

/// Expected cost of tuples of `R(s)` deleted in `(s, f]`, each charged
/// `g(d, f)` at its deletion time `d`.
pub fn deletion_obsolescence(
    db: &Database,
    relation: &str,
    weight: &ImportanceWeight,
    form: DeletionForm,
    s: f64,
    f: f64,
) -> Result<f64> {
    if f <= s || weight.is_zero() {
        return Ok(0.0);
    }
    let r = db.relation(relation)?;
    if r.cardinality == 0.0 {
        return Ok(0.0);
    }
    let mu = db.effective_deletion_intensity(relation)?;
    let total_m = mu.integrate(s, f)?;
    if total_m == 0.0 {
        return Ok(0.0);
    }
    let cuts = quad::merge_breakpoints(&[mu.breakpoints(s, f), weight.rate().breakpoints(s, f)]);
    let mut failure = None;
    let value = match form {
        DeletionForm::Exact => quad::integrate_pieces(
            |t| {
                let rate = mu.eval(t);
                if rate == 0.0 {
                    return 0.0;
                }
                let m = collect_failure(&mut failure, mu.integrate(s, t), 0.0);
                let g = collect_failure(&mut failure, weight.g_inner(t, f), 0.0);
                rate * (-m).exp() * g
            },
            &cuts,
            QUAD_TOL,
        ),
        DeletionForm::AverageFactor => {
            let raw = quad::integrate_pieces(
                |t| mu.eval(t) * collect_failure(&mut failure, weight.g_inner(t, f), 0.0),
                &cuts,
                QUAD_TOL,
            );
            -(-total_m).exp_m1() / total_m * raw
        }
    };
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(r.cardinality * value)
}

/// Expected distance between stale and current values of the surviving
/// tuples of `R(s)`, summed over the attributes that have a metric.
pub fn modification_obsolescence(
    db: &Database,
    relation: &str,
    metrics: &BTreeMap<String, ModificationMetric>,
    s: f64,
    f: f64,
) -> Result<f64> {
    if f <= s || metrics.is_empty() {
        return Ok(0.0);
    }
    let r = db.relation(relation)?;
    let p = db.survival_prob(relation, s, f)?;
    let mut total = 0.0;
    for (attr, metric) in metrics {
        let model = r
            .attributes
            .get(attr)
            .ok_or_else(|| CostError::MissingModel(format!("{relation}.{attr}")))?;
        let hist = r
            .histograms
            .get(attr)
            .ok_or_else(|| CostError::MissingHistogram(format!("{relation}.{attr}")))?;
        let per_attr = match (model, model.chain()) {
            (AttributeModel::Walk(w), _) => {
                let gamma = model.gamma(s, f)?;
                let n: f64 = hist.values().sum();
                match metric {
                    ModificationMetric::SquaredError { k } => n * k * w.moments_for(0.0, gamma).1,
                    ModificationMetric::Unit => n * -(-gamma).exp_m1(),
                    ModificationMetric::CostMatrix { .. } => {
                        return Err(CostError::UnsupportedMetric {
                            attribute: attr.clone(),
                            reason: "cost matrices need a finite domain".into(),
                        })
                    }
                }
            }
            (_, Some(chain)) => {
                let states = chain.states();
                let pm = chain.transition_matrix(s, f)?;
                let mut acc = 0.0;
                for (value, count) in hist {
                    if *count == 0.0 {
                        continue;
                    }
                    let u = states.iter().position(|x| x == value).ok_or_else(|| {
                        CostError::Evolution(EvolutionError::UnknownValue {
                            attribute: attr.clone(),
                            value: value.clone(),
                        })
                    })?;
                    let mut expected = 0.0;
                    for (v, target) in states.iter().enumerate() {
                        let prob = pm.get(u, v);
                        if prob == 0.0 || v == u {
                            continue;
                        }
                        expected += prob * metric.realized(attr, value, target)?;
                    }
                    acc += count * expected;
                }
                acc
            }
            (_, None) => unreachable!("only walks lack a finite chain"),
        };
        total += per_attr;
    }
    Ok(p * total)
}

/// All three obsolescence components for one interval.
pub fn obsolescence(db: &Database, relation: &str, spec: &CostSpec, s: f64, f: f64) -> Result<ObsolescenceBreakdown> {
    Ok(ObsolescenceBreakdown::new(
        insertion_obsolescence(db, relation, &spec.insertion_weight, s, f)?,
        deletion_obsolescence(db, relation, &spec.deletion_weight, spec.deletion_form, s, f)?,
        modification_obsolescence(db, relation, &spec.metrics, s, f)?,
    ))
}

/// Tuples shipped by a refresh.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TransferCounts {
    pub inserted_surviving: f64,
    pub modified_surviving: f64,
    pub deleted: f64,
}

/// `c + β (X + Y⁺ + |R(s)| - Y)`.
pub fn transcription_cost(setup: f64, beta: f64, counts: &TransferCounts) -> f64 {
    setup + beta * (counts.inserted_surviving + counts.modified_surviving + counts.deleted)
}

/// Expected transfer counts of a refresh at `f` after one at `s`.
pub fn expected_transfer(db: &Database, relation: &str, s: f64, f: f64) -> Result<TransferCounts> {
    let r = db.relation(relation)?;
    let p = db.survival_prob(relation, s, f)?;
    let (_, plus) = db.surviving_unmodified_mean(relation, s, f)?;
    Ok(TransferCounts {
        inserted_surviving: db.surviving_insertions_mean(relation, s, f)?,
        modified_surviving: plus,
        deleted: r.cardinality * (1.0 - p),
    })
}

/// Expected transcription cost of a refresh at `f` after one at `s`.
pub fn expected_transcription(db: &Database, relation: &str, spec: &CostSpec, s: f64, f: f64) -> Result<f64> {
    Ok(transcription_cost(spec.setup, spec.beta, &expected_transfer(db, relation, s, f)?))
}

/// Aggregate cost of a schedule.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostTotals {
    /// `Σ α C_u + (1 - α) C_o`, including the trailing interval.
    pub total: f64,
    pub transcription: f64,
    pub obsolescence: f64,
    pub refresh_count: usize,
    pub breakdown: ObsolescenceBreakdown,
}

/// Checks `start < b₁ < … < b_k ≤ end`.
pub fn check_schedule(schedule: &[f64], start: f64, end: f64) -> Result<()> {
    let mut prev = start;
    for &b in schedule {
        if !(b > prev && b <= end) {
            return Err(CostError::UnorderedSchedule { start, end });
        }
        prev = b;
    }
    Ok(())
}

/// Expected total cost of refreshing at `schedule` over `(start, end]`.
///
/// The state of the relation (cardinality and histograms) is carried from
/// one refresh to the next by its expectation.
pub fn total_cost(schedule: &[f64], spec: &CostSpec, db: &Database, relation: &str, start: f64, end: f64) -> Result<CostTotals> {
    check_schedule(schedule, start, end)?;
    let mut out = CostTotals {
        refresh_count: schedule.len(),
        ..Default::default()
    };
    let mut state = db.clone();
    let mut s = start;
    let mut bounds: Vec<(f64, bool)> = schedule.iter().map(|b| (*b, true)).collect();
    if end > schedule.last().copied().unwrap_or(start) {
        bounds.push((end, false));
    }
    for (f, is_refresh) in bounds {
        let obs = obsolescence(&state, relation, spec, s, f)?;
        out.breakdown.add(&obs);
        out.obsolescence += obs.total;
        out.total += (1.0 - spec.alpha) * obs.total;
        if is_refresh {
            let tc = expected_transcription(&state, relation, spec, s, f)?;
            out.transcription += tc;
            out.total += spec.alpha * tc;
        }
        let next = state.advance(relation, s, f)?;
        state = state.with_relation(next)?;
        s = f;
    }
    Ok(out)
}
