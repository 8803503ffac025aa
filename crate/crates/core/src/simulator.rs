//! Discrete-event Monte Carlo simulation of relation histories.
//!
//! Every tuple carries its own deletion clock and one modification clock per
//! attribute, both drawn by inverting the relevant cumulative intensity.
//! Deleting a tuple immediately deletes every tuple that references it.
//! Replication `i` draws from the random stream `(seed, i)`, so results do not
//! depend on how replications are scheduled across threads. The state at
//! the start of the horizon is built once from the seed and shared by all
//! replications.

use crate::calendar::Epoch;
use crate::cost::{CostError, CostSpec, ModificationMetric, ObsolescenceBreakdown};
use crate::evolution::{AlterationState, Database, EvolutionError, Lifespan, LifetimeCdf, AgeTable};
use crate::intensity::{IntensityError, IntensityFunction};
use crate::markov::AttributeModel;
use crate::stochastic::{BatchDistribution, RngStream};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

/// Stream index reserved for building the shared initial state.
const INITIAL_STREAM: u64 = u64::MAX;

/// Random parent draws tried before giving up on one reference.
const PARENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("dependency cycle through `{0}`")]
    CycleDetected(String),
    #[error("no traces to summarize")]
    EmptyTraces,
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("cannot pick a `{parent}` tuple for a new `{relation}` tuple with disjoint ancestry")]
    ParentSelection { relation: String, parent: String },
    #[error("referential integrity violated by tuple {tuple} at time {time}")]
    IntegrityViolation { tuple: usize, time: f64 },
    #[error("query not applicable: {0}")]
    InvalidQuery(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error(transparent)]
    Evolution(EvolutionError),
    #[error(transparent)]
    Intensity(#[from] IntensityError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

impl From<EvolutionError> for SimError {
    fn from(e: EvolutionError) -> Self {
        match e {
            EvolutionError::CycleDetected(r) => SimError::CycleDetected(r),
            other => SimError::Evolution(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::InvalidConfig(msg.into())
}

/// What to simulate and how often.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub database: Database,
    /// Relation whose statistics are collected.
    pub relation: String,
    pub start: f64,
    pub end: f64,
    pub replications: usize,
    pub seed: u64,
    /// Weights for per-realization obsolescence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostSpec>,
    /// Keep every event of every replication.
    #[serde(default)]
    pub record_events: bool,
    /// Keep the full tuple table at the end of each replication.
    #[serde(default)]
    pub keep_final_state: bool,
    /// Verify referential integrity after every event.
    #[serde(default)]
    pub check_integrity: bool,
}

impl SimConfig {
    pub fn new(database: Database, relation: &str, start: f64, end: f64, replications: usize, seed: u64) -> Self {
        Self {
            database,
            relation: relation.to_string(),
            start,
            end,
            replications,
            seed,
            cost: None,
            record_events: false,
            keep_final_state: false,
            check_integrity: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(invalid("replications must be at least 1"));
        }
        if !(self.start.is_finite() && self.end.is_finite() && self.end >= self.start) {
            return Err(invalid(format!("horizon [{}, {}] is not ordered", self.start, self.end)));
        }
        self.database.topological_order()?;
        self.database.relation(&self.relation)?;
        if let Some(c) = &self.cost {
            c.validate()?;
        }
        Ok(())
    }
}

/// Attribute value of a simulated tuple.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Value {
    State(usize),
    Real(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimOp {
    Insert,
    Delete,
    /// Deleted because a referenced tuple was deleted.
    Cascade,
    Modify,
}

impl SimOp {
    pub fn as_str(&self) -> &'static str {
        match self {
            SimOp::Insert => "insert",
            SimOp::Delete => "delete",
            SimOp::Cascade => "cascade",
            SimOp::Modify => "modify",
        }
    }
}

/// One simulated event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: f64,
    pub relation: String,
    pub op: SimOp,
    pub tuple: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<u64>,
}

/// A tuple in a state snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleRecord {
    pub id: usize,
    pub relation: String,
    pub born: f64,
    pub alive: bool,
    pub parents: Vec<usize>,
    pub values: BTreeMap<String, String>,
}

/// Per-replication statistics of the target relation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    /// `|R(f)|`.
    pub cardinality: u64,
    /// `|R(s)|`.
    pub initial_cardinality: u64,
    /// Tuples of `R(s)` alive at `f`.
    pub survivors: u64,
    /// Survivors whose attribute values at `f` equal those at `s` (`Y⁻`).
    pub unmodified: u64,
    /// Tuples inserted in `(s, f]` and alive at `f` (`X`).
    pub inserted_surviving: u64,
    /// Time of the first insertion, deletion or modification in `R`.
    pub first_change: Option<f64>,
    /// Counts per state for each finite-domain attribute, in attribute order.
    pub histograms: Vec<Vec<u64>>,
    /// Realized obsolescence when the config has cost weights.
    pub obsolescence: Option<ObsolescenceBreakdown>,
}

impl Observation {
    /// `Y⁺`: survivors with at least one changed attribute.
    pub fn modified(&self) -> u64 {
        self.survivors - self.unmodified
    }
}

/// Names needed to interpret observations and events.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Labels {
    pub relations: Vec<String>,
    /// Per relation: attribute names with their states (`None` for numeric).
    pub attributes: Vec<Vec<(String, Option<Vec<String>>)>>,
    pub target: usize,
}

impl Labels {
    /// Finite-domain attributes of the target, in observation order.
    pub fn histogram_attributes(&self) -> Vec<(&str, &[String])> {
        self.attributes[self.target]
            .iter()
            .filter_map(|(name, states)| states.as_ref().map(|s| (name.as_str(), s.as_slice())))
            .collect()
    }
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub replication: usize,
    pub events: Vec<SimEvent>,
    pub observation: Observation,
    pub final_state: Option<Vec<TupleRecord>>,
    pub labels: Arc<Labels>,
}

enum AttrSim {
    Chain {
        states: Vec<String>,
        exit: Vec<f64>,
        /// Cumulative jump probabilities per source state.
        jumps: Vec<Vec<f64>>,
        intensity: IntensityFunction,
    },
    Walk {
        step: Normal<f64>,
        intensity: IntensityFunction,
    },
}

impl AttrSim {
    fn intensity(&self) -> &IntensityFunction {
        match self {
            AttrSim::Chain { intensity, .. } | AttrSim::Walk { intensity, .. } => intensity,
        }
    }

    fn exit_rate(&self, v: Value) -> f64 {
        match (self, v) {
            (AttrSim::Chain { exit, .. }, Value::State(u)) => exit[u],
            _ => 1.0,
        }
    }

    fn label(&self, v: Value) -> String {
        match (self, v) {
            (AttrSim::Chain { states, .. }, Value::State(u)) => states[u].clone(),
            (_, Value::Real(x)) => format!("{x}"),
            (_, Value::State(u)) => u.to_string(),
        }
    }
}

enum MetricPlan {
    Matrix(Vec<Vec<f64>>),
    Squared(f64),
    Unit,
}

impl MetricPlan {
    fn cost(&self, old: Value, new: Value) -> f64 {
        match (self, old, new) {
            (MetricPlan::Matrix(m), Value::State(u), Value::State(v)) => m[u][v],
            (MetricPlan::Squared(k), Value::Real(a), Value::Real(b)) => k * (b - a) * (b - a),
            (_, a, b) => {
                if a == b {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

struct AttrPlan {
    sim: AttrSim,
    /// Values of newly inserted tuples with cumulative probabilities.
    insert: Vec<(Value, f64)>,
    metric: Option<MetricPlan>,
}

struct RelPlan {
    insertion: IntensityFunction,
    deletion: IntensityFunction,
    batch: BatchDistribution,
    lifetime: Option<LifetimeCdf>,
    attrs: Vec<AttrPlan>,
    /// `(referenced relation, multiplicity)` per outgoing edge.
    parents: Vec<(usize, u32)>,
}

#[derive(Clone)]
struct Tuple {
    rel: usize,
    alive: bool,
    initial: bool,
    born: f64,
    /// Scheduled end of life for non-exponential lifespans.
    death: Option<f64>,
    parents: Vec<usize>,
    /// Every tuple reachable through references, sorted.
    lineage: Vec<usize>,
    children: Vec<usize>,
    values: Vec<Value>,
    start_values: Vec<Value>,
    /// Index in the live list of its relation.
    slot: usize,
}

#[derive(Clone)]
struct World {
    tuples: Vec<Tuple>,
    live: Vec<Vec<usize>>,
}

impl World {
    fn add(&mut self, t: Tuple) -> usize {
        let id = self.tuples.len();
        let rel = t.rel;
        self.tuples.push(t);
        self.tuples[id].slot = self.live[rel].len();
        self.live[rel].push(id);
        for p in self.tuples[id].parents.clone() {
            self.tuples[p].children.push(id);
        }
        id
    }

    fn remove(&mut self, id: usize) {
        let rel = self.tuples[id].rel;
        let slot = self.tuples[id].slot;
        self.tuples[id].alive = false;
        self.live[rel].swap_remove(slot);
        if let Some(&moved) = self.live[rel].get(slot) {
            self.tuples[moved].slot = slot;
        }
    }
}

struct Plan {
    cfg: SimConfig,
    rels: Vec<RelPlan>,
    labels: Arc<Labels>,
    initial: World,
    insertion_weight: Option<crate::cost::ImportanceWeight>,
    deletion_weight: Option<crate::cost::ImportanceWeight>,
}

fn integral(x: f64, what: &str) -> Result<usize> {
    if !(x.is_finite() && x >= 0.0 && (x - x.round()).abs() < 1e-9) {
        return Err(invalid(format!("{what} must be a nonnegative integer, got {x}")));
    }
    Ok(x.round() as usize)
}

fn parse_real(attr: &str, value: &str) -> Result<f64> {
    value
        .trim()
        .parse::<f64>()
        .map_err(|_| invalid(format!("random-walk attribute `{attr}` has non-numeric value `{value}`")))
}

fn cumulative(weights: Vec<(Value, f64)>) -> Vec<(Value, f64)> {
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let mut acc = 0.0;
    weights
        .into_iter()
        .map(|(v, w)| {
            acc += w / total;
            (v, acc)
        })
        .collect()
}

fn pick<T: Copy>(table: &[(T, f64)], u: f64) -> T {
    let i = table.partition_point(|(_, c)| *c <= u);
    table[i.min(table.len() - 1)].0
}

fn build_plan(cfg: &SimConfig) -> Result<Plan> {
    cfg.validate()?;
    let db = &cfg.database;
    let names: Vec<String> = db.relations().iter().map(|r| r.name.clone()).collect();
    let index = |name: &str| names.iter().position(|n| n == name).expect("validated relation");
    let target = index(&cfg.relation);
    let metrics = cfg.cost.as_ref().map(|c| &c.metrics);

    let mut rels = Vec::new();
    let mut attr_labels = Vec::new();
    for (ri, r) in db.relations().iter().enumerate() {
        let lifetime = match &r.lifespan {
            Lifespan::Memoryless => None,
            Lifespan::General { cdf, .. } => {
                if !db.is_isolated(&r.name) {
                    return Err(invalid(format!(
                        "`{}` has a non-exponential lifespan and takes part in references",
                        r.name
                    )));
                }
                Some(cdf.clone())
            }
        };
        let mut attrs = Vec::new();
        let mut labels = Vec::new();
        for (attr, model) in &r.attributes {
            let (sim, insert) = match (model, model.chain()) {
                (AttributeModel::Walk(w), _) => {
                    let step = Normal::new(w.delta, w.sigma2.max(0.0).sqrt())
                        .map_err(|e| invalid(format!("walk `{attr}`: {e}")))?;
                    let source = r
                        .insert_values
                        .get(attr)
                        .or_else(|| r.histograms.get(attr))
                        .filter(|h| h.values().sum::<f64>() > 0.0);
                    let insert = match source {
                        Some(h) => {
                            let mut w = Vec::new();
                            for (v, c) in h {
                                w.push((Value::Real(parse_real(attr, v)?), *c));
                            }
                            cumulative(w)
                        }
                        None => vec![(Value::Real(0.0), 1.0)],
                    };
                    labels.push((attr.clone(), None));
                    (
                        AttrSim::Walk {
                            step,
                            intensity: w.intensity.clone(),
                        },
                        insert,
                    )
                }
                (_, Some(chain)) => {
                    let states = chain.states().to_vec();
                    let n = states.len();
                    let jumps = (0..n)
                        .map(|u| {
                            let mut acc = 0.0;
                            chain
                                .jump_probabilities()
                                .row(u)
                                .iter()
                                .map(|p| {
                                    acc += p;
                                    acc
                                })
                                .collect()
                        })
                        .collect();
                    let dist = db.insert_distribution(&r.name, attr, &states)?;
                    let insert = cumulative(dist.into_iter().enumerate().map(|(i, p)| (Value::State(i), p)).collect());
                    labels.push((attr.clone(), Some(states.clone())));
                    (
                        AttrSim::Chain {
                            states,
                            exit: chain.exit_rates().to_vec(),
                            jumps,
                            intensity: chain.intensity().clone(),
                        },
                        insert,
                    )
                }
                (_, None) => unreachable!("only walks lack a finite chain"),
            };
            let metric = match metrics.filter(|_| ri == target).and_then(|m| m.get(attr)) {
                None => None,
                Some(m) => Some(match (&sim, m) {
                    (AttrSim::Chain { states, .. }, m) => {
                        let mut table = vec![vec![0.0; states.len()]; states.len()];
                        for (u, a) in states.iter().enumerate() {
                            for (v, b) in states.iter().enumerate() {
                                table[u][v] = m.realized(attr, a, b)?;
                            }
                        }
                        MetricPlan::Matrix(table)
                    }
                    (AttrSim::Walk { .. }, ModificationMetric::SquaredError { k }) => MetricPlan::Squared(*k),
                    (AttrSim::Walk { .. }, ModificationMetric::Unit) => MetricPlan::Unit,
                    (AttrSim::Walk { .. }, ModificationMetric::CostMatrix { .. }) => {
                        return Err(CostError::UnsupportedMetric {
                            attribute: attr.clone(),
                            reason: "cost matrices need a finite domain".into(),
                        }
                        .into())
                    }
                }),
            };
            attrs.push(AttrPlan { sim, insert, metric });
        }
        if ri == target {
            if let Some(m) = metrics {
                if let Some(missing) = m.keys().find(|k| !r.attributes.contains_key(*k)) {
                    return Err(CostError::MissingModel(format!("{}.{missing}", r.name)).into());
                }
            }
        }
        let parents = db
            .edges()
            .iter()
            .filter(|e| e.from == r.name)
            .map(|e| (index(&e.to), e.multiplicity))
            .collect();
        rels.push(RelPlan {
            insertion: r.insertion.clone(),
            deletion: r.deletion.clone(),
            batch: r.batch.clone(),
            lifetime,
            attrs,
            parents,
        });
        attr_labels.push(labels);
    }
    let labels = Arc::new(Labels {
        relations: names,
        attributes: attr_labels,
        target,
    });
    let mut plan = Plan {
        cfg: cfg.clone(),
        rels,
        labels,
        initial: World {
            tuples: Vec::new(),
            live: Vec::new(),
        },
        insertion_weight: cfg.cost.as_ref().map(|c| c.insertion_weight.clone()),
        deletion_weight: cfg.cost.as_ref().map(|c| c.deletion_weight.clone()),
    };
    plan.initial = build_initial(&plan)?;
    Ok(plan)
}

/// Picks parents for a new tuple so that no two references share an
/// ancestor; returns the parents and the merged lineage.
fn choose_parents(plan: &Plan, world: &World, rel: usize, rng: &mut RngStream) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut parents = Vec::new();
    let mut taken: BTreeSet<usize> = BTreeSet::new();
    for &(prel, mult) in &plan.rels[rel].parents {
        for _ in 0..mult {
            let pool = &world.live[prel];
            let mut chosen = None;
            if !pool.is_empty() {
                for _ in 0..PARENT_ATTEMPTS {
                    let p = pool[(rng.uniform() * pool.len() as f64) as usize % pool.len()];
                    let t = &world.tuples[p];
                    if !taken.contains(&p) && t.lineage.iter().all(|a| !taken.contains(a)) {
                        chosen = Some(p);
                        break;
                    }
                }
            }
            let p = chosen.ok_or_else(|| SimError::ParentSelection {
                relation: plan.labels.relations[rel].clone(),
                parent: plan.labels.relations[prel].clone(),
            })?;
            taken.insert(p);
            taken.extend(world.tuples[p].lineage.iter().copied());
            parents.push(p);
        }
    }
    Ok((parents, taken.into_iter().collect()))
}

fn new_tuple(rel: usize, born: f64, initial: bool, parents: Vec<usize>, lineage: Vec<usize>, values: Vec<Value>) -> Tuple {
    Tuple {
        rel,
        alive: true,
        initial,
        born,
        death: None,
        parents,
        lineage,
        children: Vec::new(),
        start_values: values.clone(),
        values,
        slot: 0,
    }
}

fn build_initial(plan: &Plan) -> Result<World> {
    let db = &plan.cfg.database;
    let mut rng = RngStream::new(plan.cfg.seed, INITIAL_STREAM);
    let mut world = World {
        tuples: Vec::new(),
        live: vec![Vec::new(); plan.rels.len()],
    };
    for name in db.topological_order()? {
        let r = db.relation(&name)?;
        let ri = plan.labels.relations.iter().position(|n| *n == name).expect("known relation");
        let n = integral(r.cardinality, &format!("cardinality of `{name}`"))?;
        let attr_names: Vec<&String> = r.attributes.keys().collect();
        let plans = &plan.rels[ri].attrs;
        let to_value = |k: usize, label: &str| -> Result<Value> {
            match &plans[k].sim {
                AttrSim::Chain { states, .. } => states
                    .iter()
                    .position(|s| s == label)
                    .map(Value::State)
                    .ok_or_else(|| {
                        SimError::from(EvolutionError::UnknownValue {
                            attribute: attr_names[k].clone(),
                            value: label.to_string(),
                        })
                    }),
                AttrSim::Walk { .. } => Ok(Value::Real(parse_real(attr_names[k], label)?)),
            }
        };
        let mut rows: Vec<Vec<Value>> = vec![Vec::with_capacity(attr_names.len()); n];
        match &r.joint_histogram {
            Some(joint) if !attr_names.is_empty() => {
                let mut all = Vec::new();
                for (labels, count) in joint {
                    if labels.len() != attr_names.len() {
                        return Err(invalid(format!("joint histogram rows of `{name}` need {} values", attr_names.len())));
                    }
                    let values = labels.iter().enumerate().map(|(k, l)| to_value(k, l)).collect::<Result<Vec<_>>>()?;
                    for _ in 0..integral(*count, "joint histogram count")? {
                        all.push(values.clone());
                    }
                }
                if all.len() != n {
                    return Err(invalid(format!("joint histogram of `{name}` counts {} tuples, not {n}", all.len())));
                }
                all.shuffle(&mut rng);
                rows = all;
            }
            _ => {
                for (k, attr) in attr_names.iter().enumerate() {
                    let h = r.histograms.get(*attr).ok_or_else(|| {
                        SimError::from(EvolutionError::MissingHistogram {
                            relation: name.clone(),
                            attribute: (*attr).clone(),
                        })
                    })?;
                    let mut column = Vec::with_capacity(n);
                    for (label, count) in h {
                        let v = to_value(k, label)?;
                        for _ in 0..integral(*count, &format!("histogram count of `{name}.{attr}`"))? {
                            column.push(v);
                        }
                    }
                    if column.len() != n {
                        return Err(invalid(format!("histogram `{name}.{attr}` counts {} tuples, not {n}", column.len())));
                    }
                    column.shuffle(&mut rng);
                    for (row, v) in rows.iter_mut().zip(column) {
                        row.push(v);
                    }
                }
            }
        }
        let births: Vec<f64> = match &r.lifespan {
            Lifespan::General { ages, .. } => {
                let entries = match ages {
                    AgeTable::Full { births } => births.clone(),
                    AgeTable::Sketch { quantiles } => quantiles.clone(),
                };
                if entries.len() == n {
                    entries
                } else if entries.is_empty() {
                    vec![plan.cfg.start; n]
                } else {
                    (0..n)
                        .map(|_| entries[(rng.uniform() * entries.len() as f64) as usize % entries.len()])
                        .collect()
                }
            }
            Lifespan::Memoryless => vec![plan.cfg.start; n],
        };
        for (values, born) in rows.into_iter().zip(births) {
            let (parents, lineage) = choose_parents(plan, &world, ri, &mut rng)?;
            world.add(new_tuple(ri, born, true, parents, lineage, values));
        }
    }
    Ok(world)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Insert(usize),
    Delete(usize),
    Modify(usize, usize),
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    time: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // reversed so that the max-heap pops the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

struct Replica<'a> {
    plan: &'a Plan,
    world: World,
    heap: BinaryHeap<Entry>,
    seq: u64,
    rng: RngStream,
    events: Vec<SimEvent>,
    first_change: Option<f64>,
    deletion_cost: f64,
    batch_id: u64,
}

impl<'a> Replica<'a> {
    fn push(&mut self, time: f64, kind: Kind) {
        self.seq += 1;
        self.heap.push(Entry {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn end(&self) -> f64 {
        self.plan.cfg.end
    }

    fn schedule_insertion(&mut self, rel: usize, now: f64) -> Result<()> {
        let target = self.rng.unit_exponential();
        if let Some(t) = self.plan.rels[rel].insertion.invert(now, target, Some(self.end()))? {
            self.push(t, Kind::Insert(rel));
        }
        Ok(())
    }

    fn schedule_deletion(&mut self, id: usize, now: f64) -> Result<()> {
        let rel = self.world.tuples[id].rel;
        let plan = &self.plan.rels[rel];
        let when = match &plan.lifetime {
            None => {
                let target = self.rng.unit_exponential();
                plan.deletion.invert(now, target, Some(self.end()))?
            }
            Some(cdf) => {
                let t = &self.world.tuples[id];
                let death = match t.death {
                    Some(d) => d,
                    None => {
                        let reached = cdf.eval((now - t.born).max(0.0));
                        let u = self.rng.uniform();
                        let p = reached + u * (1.0 - reached);
                        (t.born + cdf.quantile(p)).max(now)
                    }
                };
                self.world.tuples[id].death = Some(death);
                (death <= self.end()).then_some(death)
            }
        };
        if let Some(t) = when {
            self.push(t, Kind::Delete(id));
        }
        Ok(())
    }

    fn schedule_modification(&mut self, id: usize, attr: usize, now: f64) -> Result<()> {
        let rel = self.world.tuples[id].rel;
        let sim = &self.plan.rels[rel].attrs[attr].sim;
        let rate = sim.exit_rate(self.world.tuples[id].values[attr]);
        if rate <= 0.0 {
            return Ok(());
        }
        let target = self.rng.unit_exponential() / rate;
        if let Some(t) = sim.intensity().invert(now, target, Some(self.end()))? {
            self.push(t, Kind::Modify(id, attr));
        }
        Ok(())
    }

    fn schedule_tuple(&mut self, id: usize, now: f64) -> Result<()> {
        self.schedule_deletion(id, now)?;
        for a in 0..self.world.tuples[id].values.len() {
            self.schedule_modification(id, a, now)?;
        }
        Ok(())
    }

    fn touch(&mut self, rel: usize, time: f64) {
        if rel == self.plan.labels.target && self.first_change.is_none() {
            self.first_change = Some(time);
        }
    }

    fn record(&mut self, event: SimEvent) {
        if self.plan.cfg.record_events {
            self.events.push(event);
        }
    }

    fn insert(&mut self, rel: usize, time: f64) -> Result<()> {
        let k = self.plan.rels[rel].batch.sample(&mut self.rng);
        self.batch_id += 1;
        for _ in 0..k {
            let (parents, lineage) = choose_parents(self.plan, &self.world, rel, &mut self.rng)?;
            let values: Vec<Value> = self.plan.rels[rel]
                .attrs
                .iter()
                .map(|a| pick(&a.insert, self.rng.uniform()))
                .collect();
            let id = self.world.add(new_tuple(rel, time, false, parents, lineage, values));
            self.record(SimEvent {
                time,
                relation: self.plan.labels.relations[rel].clone(),
                op: SimOp::Insert,
                tuple: id,
                attribute: None,
                old: None,
                new: None,
                batch: Some(self.batch_id),
            });
            self.schedule_tuple(id, time)?;
        }
        self.touch(rel, time);
        self.schedule_insertion(rel, time)
    }

    fn delete(&mut self, id: usize, time: f64) -> Result<()> {
        let mut stack = vec![(id, SimOp::Delete)];
        while let Some((t, op)) = stack.pop() {
            if !self.world.tuples[t].alive {
                continue;
            }
            self.world.remove(t);
            let (rel, initial) = (self.world.tuples[t].rel, self.world.tuples[t].initial);
            if rel == self.plan.labels.target && initial {
                if let Some(w) = &self.plan.deletion_weight {
                    self.deletion_cost += w.g(time, self.end())?;
                }
            }
            self.touch(rel, time);
            self.record(SimEvent {
                time,
                relation: self.plan.labels.relations[rel].clone(),
                op,
                tuple: t,
                attribute: None,
                old: None,
                new: None,
                batch: None,
            });
            for &c in self.world.tuples[t].children.iter().rev() {
                if self.world.tuples[c].alive {
                    stack.push((c, SimOp::Cascade));
                }
            }
        }
        Ok(())
    }

    fn modify(&mut self, id: usize, attr: usize, time: f64) -> Result<()> {
        let rel = self.world.tuples[id].rel;
        let old = self.world.tuples[id].values[attr];
        let sim = &self.plan.rels[rel].attrs[attr].sim;
        let new = match (sim, old) {
            (AttrSim::Chain { jumps, .. }, Value::State(u)) => {
                let row = &jumps[u];
                let x = self.rng.uniform() * row.last().copied().unwrap_or(1.0);
                let v = row.partition_point(|c| *c <= x).min(row.len() - 1);
                Value::State(v)
            }
            (AttrSim::Walk { step, .. }, Value::Real(x)) => Value::Real(x + step.sample(&mut self.rng)),
            _ => unreachable!("value kind follows the attribute model"),
        };
        self.world.tuples[id].values[attr] = new;
        self.touch(rel, time);
        if self.plan.cfg.record_events {
            let event = SimEvent {
                time,
                relation: self.plan.labels.relations[rel].clone(),
                op: SimOp::Modify,
                tuple: id,
                attribute: Some(self.plan.labels.attributes[rel][attr].0.clone()),
                old: Some(sim.label(old)),
                new: Some(sim.label(new)),
                batch: None,
            };
            self.events.push(event);
        }
        self.schedule_modification(id, attr, time)
    }

    fn check_integrity(&self, time: f64) -> Result<()> {
        for (id, t) in self.world.tuples.iter().enumerate() {
            if t.alive && t.parents.iter().any(|p| !self.world.tuples[*p].alive) {
                return Err(SimError::IntegrityViolation { tuple: id, time });
            }
        }
        Ok(())
    }

    fn run(mut self, replication: usize) -> Result<SimTrace> {
        let start = self.plan.cfg.start;
        for rel in 0..self.plan.rels.len() {
            self.schedule_insertion(rel, start)?;
        }
        for id in 0..self.world.tuples.len() {
            self.schedule_tuple(id, start)?;
        }
        while let Some(e) = self.heap.pop() {
            if e.time > self.end() {
                break;
            }
            match e.kind {
                Kind::Insert(rel) => self.insert(rel, e.time)?,
                Kind::Delete(id) => {
                    if self.world.tuples[id].alive {
                        self.delete(id, e.time)?;
                    }
                }
                Kind::Modify(id, attr) => {
                    if self.world.tuples[id].alive {
                        self.modify(id, attr, e.time)?;
                    }
                }
            }
            if self.plan.cfg.check_integrity {
                self.check_integrity(e.time)?;
            }
        }
        let observation = self.observe()?;
        let final_state = self.plan.cfg.keep_final_state.then(|| snapshot(self.plan, &self.world));
        Ok(SimTrace {
            replication,
            events: self.events,
            observation,
            final_state,
            labels: self.plan.labels.clone(),
        })
    }

    fn observe(&self) -> Result<Observation> {
        let target = self.plan.labels.target;
        let plan = &self.plan.rels[target];
        let end = self.end();
        let chain_attrs: Vec<usize> = plan
            .attrs
            .iter()
            .enumerate()
            .filter(|(_, a)| matches!(a.sim, AttrSim::Chain { .. }))
            .map(|(i, _)| i)
            .collect();
        let mut obs = Observation {
            histograms: chain_attrs
                .iter()
                .map(|&a| match &plan.attrs[a].sim {
                    AttrSim::Chain { states, .. } => vec![0; states.len()],
                    AttrSim::Walk { .. } => Vec::new(),
                })
                .collect(),
            first_change: self.first_change,
            ..Default::default()
        };
        let (mut ins_cost, mut mod_cost) = (0.0, 0.0);
        for t in self.world.tuples.iter().filter(|t| t.rel == target) {
            if t.initial {
                obs.initial_cardinality += 1;
            }
            if !t.alive {
                continue;
            }
            obs.cardinality += 1;
            for (h, &a) in obs.histograms.iter_mut().zip(&chain_attrs) {
                if let Value::State(u) = t.values[a] {
                    h[u] += 1;
                }
            }
            if t.initial {
                obs.survivors += 1;
                if t.values == t.start_values {
                    obs.unmodified += 1;
                }
                for (k, a) in plan.attrs.iter().enumerate() {
                    if let Some(m) = &a.metric {
                        mod_cost += m.cost(t.start_values[k], t.values[k]);
                    }
                }
            } else {
                obs.inserted_surviving += 1;
                if let Some(w) = &self.plan.insertion_weight {
                    ins_cost += w.g(t.born, end)?;
                }
            }
        }
        if self.plan.cfg.cost.is_some() {
            obs.obsolescence = Some(ObsolescenceBreakdown::new(ins_cost, self.deletion_cost, mod_cost));
        }
        Ok(obs)
    }
}

fn snapshot(plan: &Plan, world: &World) -> Vec<TupleRecord> {
    world
        .tuples
        .iter()
        .enumerate()
        .map(|(id, t)| TupleRecord {
            id,
            relation: plan.labels.relations[t.rel].clone(),
            born: t.born,
            alive: t.alive,
            parents: t.parents.clone(),
            values: plan.labels.attributes[t.rel]
                .iter()
                .zip(&plan.rels[t.rel].attrs)
                .zip(&t.values)
                .map(|(((name, _), a), v)| (name.clone(), a.sim.label(*v)))
                .collect(),
        })
        .collect()
}

fn replicate(plan: &Plan, replication: usize) -> Result<SimTrace> {
    Replica {
        plan,
        world: plan.initial.clone(),
        heap: BinaryHeap::new(),
        seq: 0,
        rng: RngStream::new(plan.cfg.seed, replication as u64),
        events: Vec::new(),
        first_change: None,
        deletion_cost: 0.0,
        batch_id: 0,
    }
    .run(replication)
}

/// Runs every replication, in parallel, in replication order.
pub fn run(cfg: &SimConfig) -> Result<Vec<SimTrace>> {
    let plan = build_plan(cfg)?;
    (0..cfg.replications).into_par_iter().map(|i| replicate(&plan, i)).collect()
}

/// The shared state at the start of the horizon.
pub fn initial_state(cfg: &SimConfig) -> Result<Vec<TupleRecord>> {
    let plan = build_plan(cfg)?;
    Ok(snapshot(&plan, &plan.initial))
}

/// Alteration state of the target computed from the actual initial tuples:
/// distinct referenced tuples per relation and the summed exit rates.
pub fn alteration_state(cfg: &SimConfig) -> Result<AlterationState> {
    let plan = build_plan(cfg)?;
    let target = plan.labels.target;
    let mut referenced: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for name in cfg.database.closure(&cfg.relation)?.keys() {
        referenced.insert(name.clone(), BTreeSet::new());
    }
    let mut exit_mass: BTreeMap<String, f64> = plan.labels.attributes[target]
        .iter()
        .map(|(n, _)| (n.clone(), 0.0))
        .collect();
    for (id, t) in plan.initial.tuples.iter().enumerate().filter(|(_, t)| t.rel == target) {
        referenced.get_mut(&cfg.relation).expect("self").insert(id);
        for &a in &t.lineage {
            let rel = &plan.labels.relations[plan.initial.tuples[a].rel];
            referenced.entry(rel.clone()).or_default().insert(a);
        }
        for (k, a) in plan.rels[target].attrs.iter().enumerate() {
            *exit_mass.get_mut(&plan.labels.attributes[target][k].0).expect("attribute") += a.sim.exit_rate(t.values[k]);
        }
    }
    Ok(AlterationState {
        referenced: referenced.into_iter().map(|(k, v)| (k, v.len() as f64)).collect(),
        exit_mass,
    })
}

/// Joint value counts of the target's initial tuples, attributes in name
/// order.
pub fn initial_joint_histogram(cfg: &SimConfig) -> Result<Vec<(Vec<String>, f64)>> {
    let plan = build_plan(cfg)?;
    let target = plan.labels.target;
    let mut counts: BTreeMap<Vec<String>, f64> = BTreeMap::new();
    for t in plan.initial.tuples.iter().filter(|t| t.rel == target) {
        let key = plan.rels[target].attrs.iter().zip(&t.values).map(|(a, v)| a.sim.label(*v)).collect();
        *counts.entry(key).or_insert(0.0) += 1.0;
    }
    Ok(counts.into_iter().collect())
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples<I: IntoIterator<Item = f64>>(samples: I) -> Option<Self> {
        let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
        for x in samples {
            n += 1;
            let d = x - mean;
            mean += d / n as f64;
            m2 += d * (x - mean);
        }
        if n == 0 {
            return None;
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        Some(Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n,
        })
    }

    /// `|value - mean|` in standard errors; zero spread only matches exactly.
    pub fn z(&self, value: f64) -> f64 {
        let d = (value - self.mean).abs();
        if self.std_error > 0.0 {
            d / self.std_error
        } else if d <= 1e-9 * (1.0 + value.abs()) {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Statistic extracted from each replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "query", rename_all = "snake_case")]
pub enum Query {
    Cardinality,
    Histogram { attribute: String, value: String },
    Survival,
    FirstAlteration,
    /// Whether the first change happened by `time` (at most the horizon end).
    FirstAlterationBy { time: f64 },
    InsertionObsolescence,
    DeletionObsolescence,
    ModificationObsolescence,
    Obsolescence,
    Unmodified,
    Modified,
    InsertedSurviving,
}

fn histogram_index(labels: &Labels, attribute: &str, value: &str) -> Result<(usize, usize)> {
    let attrs = labels.histogram_attributes();
    let a = attrs
        .iter()
        .position(|(n, _)| *n == attribute)
        .ok_or_else(|| SimError::InvalidQuery(format!("no finite-domain attribute `{attribute}`")))?;
    let v = attrs[a]
        .1
        .iter()
        .position(|s| s == value)
        .ok_or_else(|| SimError::InvalidQuery(format!("`{value}` is not a state of `{attribute}`")))?;
    Ok((a, v))
}

/// Mean and standard error of `query` across replications.
pub fn summarize(traces: &[SimTrace], query: &Query) -> Result<Estimate> {
    let first = traces.first().ok_or(SimError::EmptyTraces)?;
    let changed = |t: &SimTrace| -> f64 { t.observation.first_change.map_or(0.0, |_| 1.0) };
    let obs_part = |t: &SimTrace, f: fn(&ObsolescenceBreakdown) -> f64| -> Result<f64> {
        t.observation
            .obsolescence
            .as_ref()
            .map(f)
            .ok_or_else(|| SimError::InvalidQuery("the config has no cost weights".into()))
    };
    let values: Vec<f64> = match query {
        Query::Cardinality => traces.iter().map(|t| t.observation.cardinality as f64).collect(),
        Query::Histogram { attribute, value } => {
            let (a, v) = histogram_index(&first.labels, attribute, value)?;
            traces.iter().map(|t| t.observation.histograms[a][v] as f64).collect()
        }
        Query::Survival => {
            if first.observation.initial_cardinality == 0 {
                return Err(SimError::InvalidQuery("survival needs initial tuples".into()));
            }
            traces
                .iter()
                .map(|t| t.observation.survivors as f64 / t.observation.initial_cardinality as f64)
                .collect()
        }
        Query::FirstAlteration => traces.iter().map(changed).collect(),
        Query::FirstAlterationBy { time } => traces
            .iter()
            .map(|t| t.observation.first_change.map_or(0.0, |c| if c <= *time { 1.0 } else { 0.0 }))
            .collect(),
        Query::InsertionObsolescence => traces.iter().map(|t| obs_part(t, |o| o.insertion)).collect::<Result<_>>()?,
        Query::DeletionObsolescence => traces.iter().map(|t| obs_part(t, |o| o.deletion)).collect::<Result<_>>()?,
        Query::ModificationObsolescence => {
            traces.iter().map(|t| obs_part(t, |o| o.modification)).collect::<Result<_>>()?
        }
        Query::Obsolescence => traces.iter().map(|t| obs_part(t, |o| o.total)).collect::<Result<_>>()?,
        Query::Unmodified => traces.iter().map(|t| t.observation.unmodified as f64).collect(),
        Query::Modified => traces.iter().map(|t| t.observation.modified() as f64).collect(),
        Query::InsertedSurviving => traces.iter().map(|t| t.observation.inserted_surviving as f64).collect(),
    };
    Ok(Estimate::from_samples(values).expect("nonempty"))
}

/// Everything the agreement checks compare against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub relation: String,
    pub replications: usize,
    pub cardinality: Estimate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survival: Option<Estimate>,
    pub first_alteration: Estimate,
    pub unmodified: Estimate,
    pub modified: Estimate,
    pub inserted_surviving: Estimate,
    pub histograms: BTreeMap<String, BTreeMap<String, Estimate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obsolescence: Option<BTreeMap<String, Estimate>>,
}

pub fn summary(traces: &[SimTrace]) -> Result<Summary> {
    let first = traces.first().ok_or(SimError::EmptyTraces)?;
    let labels = &first.labels;
    let mut histograms = BTreeMap::new();
    for (attr, states) in labels.histogram_attributes() {
        let mut per = BTreeMap::new();
        for s in states {
            let q = Query::Histogram {
                attribute: attr.to_string(),
                value: s.clone(),
            };
            per.insert(s.clone(), summarize(traces, &q)?);
        }
        histograms.insert(attr.to_string(), per);
    }
    let obsolescence = if first.observation.obsolescence.is_some() {
        let mut m = BTreeMap::new();
        for (name, q) in [
            ("insertion", Query::InsertionObsolescence),
            ("deletion", Query::DeletionObsolescence),
            ("modification", Query::ModificationObsolescence),
            ("total", Query::Obsolescence),
        ] {
            m.insert(name.to_string(), summarize(traces, &q)?);
        }
        Some(m)
    } else {
        None
    };
    Ok(Summary {
        relation: labels.relations[labels.target].clone(),
        replications: traces.len(),
        cardinality: summarize(traces, &Query::Cardinality)?,
        survival: summarize(traces, &Query::Survival).ok(),
        first_alteration: summarize(traces, &Query::FirstAlteration)?,
        unmodified: summarize(traces, &Query::Unmodified)?,
        modified: summarize(traces, &Query::Modified)?,
        inserted_surviving: summarize(traces, &Query::InsertedSurviving)?,
        histograms,
        obsolescence,
    })
}

/// Column names of the event CSV.
pub const TRACE_HEADER: [&str; 9] = ["replication", "time", "relation", "op", "tuple", "attribute", "old", "new", "batch"];

/// Writes every recorded event as CSV with ISO-8601 UTC times.
pub fn write_traces_csv<W: Write>(traces: &[SimTrace], writer: W, epoch: &Epoch) -> Result<()> {
    if traces.is_empty() {
        return Err(SimError::EmptyTraces);
    }
    let io = |e: csv::Error| SimError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_HEADER).map_err(io)?;
    for t in traces {
        for e in &t.events {
            w.write_record([
                t.replication.to_string(),
                epoch.format_precise(e.time),
                e.relation.clone(),
                e.op.as_str().to_string(),
                e.tuple.to_string(),
                e.attribute.clone().unwrap_or_default(),
                e.old.clone().unwrap_or_default(),
                e.new.clone().unwrap_or_default(),
                e.batch.map(|b| b.to_string()).unwrap_or_default(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| SimError::Io(e.to_string()))
}

/// Writes the summary as pretty-printed JSON.
pub fn write_summary_json<W: Write>(summary: &Summary, mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, summary).map_err(|e| SimError::Io(e.to_string()))?;
    writeln!(writer).map_err(|e| SimError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{Edge, RelationModel};
    use std::f64::consts::LN_2;

    fn c(rate: f64) -> IntensityFunction {
        IntensityFunction::constant(rate).unwrap()
    }

    #[test]
    fn frozen_world_is_unchanged() {
        let db = Database::single(RelationModel::new("R", c(0.0), c(0.0), 7.0)).unwrap();
        let mut cfg = SimConfig::new(db, "R", 0.0, 5.0, 3, 1);
        cfg.record_events = true;
        cfg.keep_final_state = true;
        let traces = run(&cfg).unwrap();
        let init = initial_state(&cfg).unwrap();
        for t in &traces {
            assert!(t.events.is_empty());
            assert_eq!(t.final_state.as_ref().unwrap(), &init);
        }
        let e = summarize(&traces, &Query::Cardinality).unwrap();
        assert_eq!((e.mean, e.std_error), (7.0, 0.0));
        assert_eq!(summarize(&[], &Query::Cardinality), Err(SimError::EmptyTraces));
    }

    #[test]
    fn seeded_runs_repeat() {
        let db = Database::single(RelationModel::new("R", c(2.0), c(1.0), 10.0)).unwrap();
        let mut cfg = SimConfig::new(db, "R", 0.0, LN_2, 50, 9);
        cfg.record_events = true;
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 10;
        assert_ne!(a, run(&cfg).unwrap());
    }

    #[test]
    fn cascades_keep_integrity() {
        let s = RelationModel::new("S", c(5.0), c(1.0), 30.0);
        let r = RelationModel::new("R", c(3.0), c(0.5), 10.0);
        let db = Database::new(
            vec![r, s],
            vec![Edge {
                from: "R".into(),
                to: "S".into(),
                multiplicity: 2,
            }],
        )
        .unwrap();
        let mut cfg = SimConfig::new(db, "R", 0.0, 2.0, 20, 3);
        cfg.check_integrity = true;
        cfg.record_events = true;
        let traces = run(&cfg).unwrap();
        assert!(traces.iter().any(|t| t.events.iter().any(|e| e.op == SimOp::Cascade)));
        let state = alteration_state(&cfg).unwrap();
        assert_eq!(state.referenced["R"], 10.0);
        assert!(state.referenced["S"] <= 20.0);
    }

    #[test]
    fn single_insertion_costs_its_weight() {
        let db = Database::single(RelationModel::new("R", c(0.0), c(0.0), 0.0)).unwrap();
        let mut cfg = SimConfig::new(db, "R", 0.0, 1.0, 1, 0);
        cfg.cost = Some(CostSpec::uniform(0.5, 1.0, 0.0).unwrap());
        let plan = build_plan(&cfg).unwrap();
        let mut rep = Replica {
            plan: &plan,
            world: plan.initial.clone(),
            heap: BinaryHeap::new(),
            seq: 0,
            rng: RngStream::new(0, 0),
            events: Vec::new(),
            first_change: None,
            deletion_cost: 0.0,
            batch_id: 0,
        };
        rep.insert(0, 0.25).unwrap();
        let obs = rep.observe().unwrap();
        assert_eq!(obs.obsolescence.unwrap().insertion, 0.75);
        assert_eq!(obs.first_change, Some(0.25));
    }

    #[test]
    fn estimate_statistics() {
        let e = Estimate::from_samples([1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(e.mean, 2.5);
        assert!((e.std_error - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!(Estimate::from_samples(std::iter::empty()).is_none());
    }

    #[test]
    fn trace_csv_requires_traces() {
        let mut buf = Vec::new();
        assert_eq!(write_traces_csv(&[], &mut buf, &Epoch::default()), Err(SimError::EmptyTraces));
    }
}
