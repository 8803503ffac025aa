//! Shared fixtures: randomized database configurations and the agreement
//! check between closed forms and simulated means.

#![allow(dead_code)]

use relevo::cost::{self, CostSpec, DeletionForm, ImportanceWeight, ModificationMetric, WeightSpec, WorkBlock};
use relevo::evolution::{Database, Edge, Histogram, RelationModel};
use relevo::markov::{AttributeModel, BinaryLump, MarkovAttribute, Overwrite, RandomWalk, CHANGED, UNCHANGED};
use relevo::simulator::{self, Estimate, Query, SimConfig, SimTrace};
use relevo::stochastic::{BatchDistribution, RngStream};
use relevo::{IntensityFunction, Segment};
use std::collections::BTreeMap;

pub struct Draw(RngStream);

impl Draw {
    pub fn new(seed: u64) -> Self {
        Self(RngStream::new(seed, 0))
    }

    pub fn unit(&mut self) -> f64 {
        self.0.uniform()
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + ((self.unit() * (hi - lo + 1) as f64) as usize).min(hi - lo)
    }

    pub fn coin(&mut self, p: f64) -> bool {
        self.unit() < p
    }
}

/// Constant rate or a daily two-level profile.
pub fn rate(d: &mut Draw, lo: f64, hi: f64) -> IntensityFunction {
    if d.coin(0.5) {
        IntensityFunction::constant(d.range(lo, hi)).unwrap()
    } else {
        let cut = d.range(0.2, 0.8);
        IntensityFunction::recurrent(
            1.0,
            vec![
                Segment::constant(0.0, cut, d.range(lo, hi)),
                Segment::constant(cut, 1.0, d.range(lo, hi)),
            ],
        )
        .unwrap()
    }
}

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("v{i}")).collect()
}

/// Integer counts summing to `n`.
fn split(d: &mut Draw, n: usize, parts: usize) -> Vec<f64> {
    let mut counts = vec![0.0; parts];
    for _ in 0..n {
        counts[d.int(0, parts - 1)] += 1.0;
    }
    counts
}

fn finite_attribute(d: &mut Draw, n: usize) -> (AttributeModel, Histogram, ModificationMetric) {
    let intensity = rate(d, 0.2, 1.5);
    let (model, states) = match d.int(0, 2) {
        0 => {
            let b = BinaryLump::new(d.range(0.2, 2.0), d.range(0.0, 1.0), intensity).unwrap();
            (AttributeModel::Binary(b), vec![UNCHANGED.to_string(), CHANGED.to_string()])
        }
        1 => {
            let k = d.int(2, 4);
            let states = labels(k);
            let exit: Vec<f64> = (0..k).map(|_| d.range(0.1, 2.0)).collect();
            let jumps: Vec<Vec<f64>> = (0..k)
                .map(|u| {
                    let w: Vec<f64> = (0..k).map(|v| if v == u { 0.0 } else { d.range(0.1, 1.0) }).collect();
                    let t: f64 = w.iter().sum();
                    w.into_iter().map(|x| x / t).collect()
                })
                .collect();
            (
                AttributeModel::Markov(MarkovAttribute::new(states.clone(), exit, jumps, intensity).unwrap()),
                states,
            )
        }
        _ => {
            let k = d.int(2, 4);
            let states = labels(k);
            let w: Vec<f64> = (0..k).map(|_| d.range(0.1, 1.0)).collect();
            let t: f64 = w.iter().sum();
            let omega = w.into_iter().map(|x| x / t).collect();
            let exit = (0..k).map(|_| d.range(0.3, 2.0)).collect();
            (
                AttributeModel::Overwrite(Overwrite::new(states.clone(), omega, exit, intensity).unwrap()),
                states,
            )
        }
    };
    let counts = split(d, n, states.len());
    let hist: Histogram = states.iter().cloned().zip(counts).collect();
    let metric = if d.coin(0.5) {
        ModificationMetric::Unit
    } else {
        let k = states.len();
        let costs = (0..k)
            .map(|u| (0..k).map(|v| if u == v { 0.0 } else { d.range(0.5, 3.0) }).collect())
            .collect();
        ModificationMetric::CostMatrix { states, costs }
    };
    (model, hist, metric)
}

fn walk_attribute(d: &mut Draw, n: usize) -> (AttributeModel, Histogram, ModificationMetric) {
    let w = RandomWalk::new(d.range(-1.0, 1.0), d.range(0.2, 2.0), rate(d, 0.2, 1.5)).unwrap();
    let mut hist = Histogram::new();
    let counts = split(d, n, 3);
    for (i, c) in counts.into_iter().enumerate() {
        hist.insert(format!("{}", i as f64 * 2.5), c);
    }
    let metric = if d.coin(0.5) {
        ModificationMetric::SquaredError { k: d.range(0.5, 2.0) }
    } else {
        ModificationMetric::Unit
    };
    (AttributeModel::Walk(w), hist, metric)
}

fn weight(d: &mut Draw) -> ImportanceWeight {
    match d.int(0, 2) {
        0 => ImportanceWeight::constant(d.range(0.5, 2.0)).unwrap(),
        1 => ImportanceWeight::from_spec(WeightSpec {
            work_hours: vec![WorkBlock {
                days: "Mon-Fri".into(),
                start: "09:00".into(),
                end: "18:00".into(),
            }],
            a1: d.range(1.0, 3.0),
            a2: d.range(0.0, 0.5),
            terminal: 0.0,
        })
        .unwrap(),
        _ => ImportanceWeight::from_spec(WeightSpec {
            work_hours: Vec::new(),
            a1: d.range(0.2, 1.0),
            a2: 0.0,
            terminal: d.range(0.5, 1.5),
        })
        .unwrap(),
    }
}

/// A randomized database of one to three relations, a cost spec and a
/// horizon. The target relation is always `R`.
pub fn random_config(seed: u64, replications: usize) -> SimConfig {
    let mut d = Draw::new(seed);
    let n = d.int(5, 25);
    let mut r = RelationModel::new("R", rate(&mut d, 0.5, 5.0), rate(&mut d, 0.05, 0.6), n as f64);
    if d.coin(0.4) {
        r.batch = BatchDistribution::new(vec![(1, 0.8), (2, 0.15), (3, 0.05)]).unwrap();
    }
    let mut metrics = BTreeMap::new();
    let (model, hist, metric) = finite_attribute(&mut d, n);
    r = r.with_attribute("a", model, hist);
    metrics.insert("a".to_string(), metric);
    if d.coin(0.4) {
        let (model, hist, metric) = walk_attribute(&mut d, n);
        r = r.with_attribute("w", model, hist);
        metrics.insert("w".to_string(), metric);
    }
    let mut relations = vec![r];
    let mut edges = Vec::new();
    let topology = d.int(0, 2);
    if topology >= 1 {
        let m = d.int(1, 2) as u32;
        let s = RelationModel::new("S", rate(&mut d, 5.0, 20.0), rate(&mut d, 0.05, 0.4), (3 * m as usize * n + 40) as f64);
        relations.push(s);
        edges.push(Edge {
            from: "R".into(),
            to: "S".into(),
            multiplicity: m,
        });
        if topology == 2 {
            let size = relations[1].cardinality as usize * 2 + 40;
            relations.push(RelationModel::new("U", rate(&mut d, 10.0, 30.0), rate(&mut d, 0.02, 0.2), size as f64));
            edges.push(Edge {
                from: "S".into(),
                to: "U".into(),
                multiplicity: 1,
            });
        }
    }
    let db = Database::new(relations, edges).unwrap();
    let start = d.range(0.0, 7.0);
    let end = start + d.range(0.3, 1.5);
    let spec = CostSpec {
        alpha: 0.5,
        setup: 1.0,
        beta: 0.1,
        insertion_weight: weight(&mut d),
        deletion_weight: weight(&mut d),
        metrics,
        deletion_form: DeletionForm::Exact,
    };
    let mut cfg = SimConfig::new(db, "R", start, end, replications, seed);
    cfg.cost = Some(spec);
    cfg
}

/// One closed-form value compared with its simulated mean.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub analytic: f64,
    pub simulated: Estimate,
}

impl Check {
    pub fn z(&self) -> f64 {
        self.simulated.z(self.analytic)
    }

    pub fn passes(&self) -> bool {
        self.z() <= 3.0
    }
}

/// Time in `(s, f]` at which the first-alteration probability is closest to
/// one half, so the comparison is not saturated.
fn median_time(db: &Database, state: &relevo::evolution::AlterationState, s: f64, f: f64) -> f64 {
    let z = |t: f64| db.alteration_exponent("R", state, s, t).unwrap();
    if z(f) <= std::f64::consts::LN_2 {
        return f;
    }
    let (mut lo, mut hi) = (s, f);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if z(mid) < std::f64::consts::LN_2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Every closed-form prediction for the config's target, next to the
/// simulated estimate.
pub fn agreement_checks(cfg: &SimConfig, traces: &[SimTrace]) -> Vec<Check> {
    let (s, f) = (cfg.start, cfg.end);
    let spec = cfg.cost.as_ref().unwrap();
    // condition on the simulator's actual starting tuples
    let mut db = cfg.database.clone();
    let joint = simulator::initial_joint_histogram(cfg).unwrap();
    db.relation_mut("R").unwrap().joint_histogram = Some(joint);
    let state = simulator::alteration_state(cfg).unwrap();
    let mut checks = Vec::new();
    let mut push = |name: &str, analytic: f64, q: Query| {
        checks.push(Check {
            name: name.to_string(),
            analytic,
            simulated: simulator::summarize(traces, &q).unwrap(),
        });
    };
    push("cardinality", db.expected_cardinality("R", s, f).unwrap(), Query::Cardinality);
    push("survival", db.survival_prob("R", s, f).unwrap(), Query::Survival);
    let r = db.relation("R").unwrap().clone();
    for (attr, model) in &r.attributes {
        if let Some(chain) = model.chain() {
            let h = db.expected_histogram("R", attr, s, f).unwrap();
            for v in chain.states() {
                push(
                    &format!("histogram {attr}={v}"),
                    h.get(v).copied().unwrap_or(0.0),
                    Query::Histogram {
                        attribute: attr.clone(),
                        value: v.clone(),
                    },
                );
            }
        }
    }
    let t = median_time(&db, &state, s, f);
    push(
        "first alteration",
        db.first_alteration("R", &state, s, t).unwrap(),
        Query::FirstAlterationBy { time: t },
    );
    push(
        "insertion obsolescence",
        cost::insertion_obsolescence(&db, "R", &spec.insertion_weight, s, f).unwrap(),
        Query::InsertionObsolescence,
    );
    push(
        "deletion obsolescence",
        cost::deletion_obsolescence(&db, "R", &spec.deletion_weight, DeletionForm::Exact, s, f).unwrap(),
        Query::DeletionObsolescence,
    );
    push(
        "modification obsolescence",
        cost::modification_obsolescence(&db, "R", &spec.metrics, s, f).unwrap(),
        Query::ModificationObsolescence,
    );
    let (minus, plus) = db.surviving_unmodified_mean("R", s, f).unwrap();
    push("unmodified survivors", minus, Query::Unmodified);
    push("modified survivors", plus, Query::Modified);
    checks
}
