//! Refresh policies and their evaluation.
//!
//! Three families are compared on a common knob `M`:
//! * uniform spacing every `M / λ` days,
//! * refresh as soon as the expected insertion obsolescence since the last
//!   refresh exceeds `M² / (2λ)`,
//! * refresh as soon as the probability that the relation changed exceeds
//!   `1 - e^{-M}`.
//!
//! With a constant rate, no deletions and unit weights, all three produce the
//! same uniform schedule.

use crate::cost::{self, CostError, CostSpec, CostTotals, ObsolescenceBreakdown};
use crate::evolution::{Database, EvolutionError};
use crate::fitting::{EventLog, Op, SegmentationSpec};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Refresh times are located to within this many days (about 10 µs).
pub const RESOLUTION: f64 = 1e-10;

/// A trigger reached this close past the horizon still counts, so that
/// bisection round-off does not drop a refresh due exactly at the end.
const END_SLACK: f64 = 1e-7;

/// Largest forward step when searching for the next trigger (one hour).
const MAX_SCAN_STEP: f64 = 1.0 / 24.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("reference rate must be positive, got {0}")]
    NonpositiveRate(f64),
    #[error("invalid policy parameter: {0}")]
    InvalidParameter(String),
    #[error("the {0} trigger never fires before the end of the horizon")]
    TriggerNeverFires(PolicyKind),
    #[error("the trace has no events in the evaluation horizon")]
    EmptyTrace,
    #[error("unknown policy `{0}` (expected usp, threshold or fa)")]
    UnknownPolicy(String),
    #[error("horizon end {end} precedes start {start}")]
    ReversedHorizon { start: f64, end: f64 },
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Usp,
    Threshold,
    #[serde(rename = "fa")]
    FirstAlteration,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Usp, PolicyKind::Threshold, PolicyKind::FirstAlteration];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Usp => "usp",
            PolicyKind::Threshold => "threshold",
            PolicyKind::FirstAlteration => "fa",
        }
    }

    /// Policy of this family calibrated by `m` against reference rate `rate`.
    pub fn instantiate(&self, rate: f64, m: f64) -> Result<Policy> {
        Ok(match self {
            PolicyKind::Usp => Policy::Usp {
                interval: usp_interval(rate, m)?,
            },
            PolicyKind::Threshold => Policy::Threshold {
                level: threshold_from_m(rate, m)?,
            },
            PolicyKind::FirstAlteration => Policy::FirstAlteration {
                probability: fa_from_m(m)?,
            },
        })
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "usp" | "uniform" => Ok(PolicyKind::Usp),
            "threshold" | "obsolescence" => Ok(PolicyKind::Threshold),
            "fa" | "first-alteration" | "first_alteration" => Ok(PolicyKind::FirstAlteration),
            _ => Err(PolicyError::UnknownPolicy(s.to_string())),
        }
    }
}

/// A concrete refresh rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum Policy {
    /// Refresh every `interval` days.
    Usp { interval: f64 },
    /// Refresh when the expected insertion obsolescence reaches `level`.
    Threshold { level: f64 },
    /// Refresh when the probability of at least one change reaches
    /// `probability`.
    #[serde(rename = "fa")]
    FirstAlteration { probability: f64 },
}

impl Policy {
    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Usp { .. } => PolicyKind::Usp,
            Policy::Threshold { .. } => PolicyKind::Threshold,
            Policy::FirstAlteration { .. } => PolicyKind::FirstAlteration,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Policy::Usp { interval } => interval.is_finite() && interval > 0.0,
            Policy::Threshold { level } => level.is_finite() && level > 0.0,
            Policy::FirstAlteration { probability } => probability > 0.0 && probability < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(PolicyError::InvalidParameter(format!("{self:?}")))
        }
    }
}

fn check_m(m: f64) -> Result<()> {
    if m.is_finite() && m > 0.0 {
        Ok(())
    } else {
        Err(PolicyError::InvalidParameter(format!("M must be positive, got {m}")))
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if rate.is_finite() && rate > 0.0 {
        Ok(())
    } else {
        Err(PolicyError::NonpositiveRate(rate))
    }
}

/// `M / λ`: on average `M` insertions between refreshes.
pub fn usp_interval(rate: f64, m: f64) -> Result<f64> {
    check_rate(rate)?;
    check_m(m)?;
    Ok(m / rate)
}

/// `M² / (2λ)`: the insertion obsolescence accumulated by a uniform
/// schedule of spacing `M / λ` under a constant rate and unit weight.
pub fn threshold_from_m(rate: f64, m: f64) -> Result<f64> {
    check_rate(rate)?;
    check_m(m)?;
    Ok(m * m / (2.0 * rate))
}

/// `1 - e^{-M}`: the chance of at least one insertion in `M / λ` days.
pub fn fa_from_m(m: f64) -> Result<f64> {
    check_m(m)?;
    Ok(-(-m).exp_m1())
}

fn check_horizon(start: f64, end: f64) -> Result<()> {
    if !(end >= start) {
        return Err(PolicyError::ReversedHorizon { start, end });
    }
    Ok(())
}

/// Earliest `f` in `(s, end]` where `reached(f)` holds, assuming it stays
/// true once it holds. Steps forward geometrically (capped at one hour) and
/// then bisects down to [`RESOLUTION`].
fn next_trigger<F>(s: f64, end: f64, mut reached: F) -> Result<Option<f64>>
where
    F: FnMut(f64) -> Result<bool>,
{
    let mut lo = s;
    let mut step = 1e-4_f64.min(MAX_SCAN_STEP);
    let limit = end + END_SLACK;
    let hi = loop {
        if lo >= limit {
            return Ok(None);
        }
        let probe = (lo + step).min(limit);
        if reached(probe)? {
            break probe;
        }
        lo = probe;
        step = (step * 2.0).min(MAX_SCAN_STEP);
    };
    let mut hi = hi;
    while hi - lo > RESOLUTION {
        let mid = 0.5 * (lo + hi);
        if reached(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi.min(end)))
}

/// Refresh times in `(start, end]` produced by `policy` for `relation`.
///
/// For the first-alteration rule the relation state is carried forward by
/// its expectation between refreshes. Fails with `TriggerNeverFires` only
/// when no refresh at all happens in the horizon.
pub fn generate_schedule(
    policy: &Policy,
    db: &Database,
    relation: &str,
    spec: &CostSpec,
    start: f64,
    end: f64,
) -> Result<Vec<f64>> {
    policy.validate()?;
    check_horizon(start, end)?;
    db.relation(relation)?;
    let mut out = Vec::new();
    match *policy {
        Policy::Usp { interval } => {
            let mut k = 1u64;
            loop {
                let b = start + k as f64 * interval;
                if b > end + END_SLACK {
                    break;
                }
                out.push(b.min(end));
                k += 1;
            }
        }
        Policy::Threshold { level } => {
            let mut s = start;
            while let Some(b) = next_trigger(s, end, |f| {
                Ok(cost::insertion_obsolescence(db, relation, &spec.insertion_weight, s, f)? >= level)
            })? {
                out.push(b);
                if b >= end {
                    break;
                }
                s = b;
            }
        }
        Policy::FirstAlteration { probability } => {
            let mut state = db.clone();
            let mut s = start;
            loop {
                let alteration = state.default_alteration_state(relation)?;
                let found = next_trigger(s, end, |f| Ok(state.first_alteration(relation, &alteration, s, f)? >= probability))?;
                let Some(b) = found else { break };
                out.push(b);
                if b >= end {
                    break;
                }
                let next = state.advance(relation, s, b)?;
                state = state.with_relation(next)?;
                s = b;
            }
        }
    }
    if out.is_empty() {
        return Err(PolicyError::TriggerNeverFires(policy.kind()));
    }
    Ok(out)
}

/// How a schedule is costed.
#[derive(Debug, Clone, Copy)]
pub enum EvaluationMode<'a> {
    /// Expected costs under the model.
    Analytic,
    /// Realized costs against logged events. Every logged modification
    /// costs one unit of obsolescence.
    Trace(&'a EventLog),
}

/// Costs of `schedule` over `(start, end]`.
pub fn evaluate_schedule(
    schedule: &[f64],
    spec: &CostSpec,
    db: &Database,
    relation: &str,
    start: f64,
    end: f64,
    mode: EvaluationMode<'_>,
) -> Result<CostTotals> {
    check_horizon(start, end)?;
    match mode {
        EvaluationMode::Analytic => Ok(cost::total_cost(schedule, spec, db, relation, start, end)?),
        EvaluationMode::Trace(log) => trace_cost(schedule, spec, log, start, end),
    }
}

fn trace_cost(schedule: &[f64], spec: &CostSpec, log: &EventLog, start: f64, end: f64) -> Result<CostTotals> {
    cost::check_schedule(schedule, start, end)?;
    let events: Vec<_> = log.events.iter().filter(|e| e.time > start && e.time <= end).collect();
    if events.is_empty() {
        return Err(PolicyError::EmptyTrace);
    }
    let mut out = CostTotals {
        refresh_count: schedule.len(),
        ..Default::default()
    };
    let mut bounds: Vec<(f64, bool)> = schedule.iter().map(|b| (*b, true)).collect();
    if end > schedule.last().copied().unwrap_or(start) {
        bounds.push((end, false));
    }
    let mut idx = 0;
    for (f, is_refresh) in bounds {
        let (mut ins, mut del, mut modif, mut shipped) = (0.0, 0.0, 0.0, 0.0);
        while idx < events.len() && events[idx].time <= f {
            let e = events[idx];
            let k = e.count as f64;
            shipped += k;
            match e.op {
                Op::Insert => ins += k * spec.insertion_weight.g(e.time, f)?,
                Op::Delete => del += k * spec.deletion_weight.g(e.time, f)?,
                Op::Modify => modif += k,
            }
            idx += 1;
        }
        let obs = ObsolescenceBreakdown::new(ins, del, modif);
        out.breakdown.add(&obs);
        out.obsolescence += obs.total;
        out.total += (1.0 - spec.alpha) * obs.total;
        if is_refresh {
            let tc = spec.setup + spec.beta * shipped;
            out.transcription += tc;
            out.total += spec.alpha * tc;
        }
    }
    Ok(out)
}

/// Number of refreshes falling in each block of the segmentation.
pub fn segment_counts(schedule: &[f64], seg: &SegmentationSpec) -> Vec<usize> {
    let mut counts = vec![0; seg.blocks().len()];
    for &b in schedule {
        counts[seg.block_of(b)] += 1;
    }
    counts
}

/// One line of a policy comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub policy: PolicyKind,
    pub param: f64,
    pub alpha: f64,
    pub refresh_count: usize,
    pub transcription: f64,
    pub obsolescence: f64,
    pub total: f64,
}

/// A schedule and its α-independent cost components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluated {
    pub policy: PolicyKind,
    pub param: f64,
    pub schedule: Vec<f64>,
    pub costs: CostTotals,
}

impl Evaluated {
    /// Row for trade-off weight `alpha`.
    pub fn row(&self, alpha: f64) -> ReportRow {
        ReportRow {
            policy: self.policy,
            param: self.param,
            alpha,
            refresh_count: self.costs.refresh_count,
            transcription: self.costs.transcription,
            obsolescence: self.costs.obsolescence,
            total: alpha * self.costs.transcription + (1.0 - alpha) * self.costs.obsolescence,
        }
    }
}

/// Generates and costs one schedule per `(policy, M)` pair.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_grid(
    kinds: &[PolicyKind],
    m_grid: &[f64],
    reference_rate: f64,
    spec: &CostSpec,
    db: &Database,
    relation: &str,
    start: f64,
    end: f64,
    mode: EvaluationMode<'_>,
) -> Result<Vec<Evaluated>> {
    let mut out = Vec::new();
    for &kind in kinds {
        for &m in m_grid {
            let policy = kind.instantiate(reference_rate, m)?;
            let schedule = generate_schedule(&policy, db, relation, spec, start, end)?;
            let costs = evaluate_schedule(&schedule, spec, db, relation, start, end, mode)?;
            out.push(Evaluated {
                policy: kind,
                param: m,
                schedule,
                costs,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::RelationModel;
    use crate::intensity::IntensityFunction;

    fn db(lambda: f64) -> Database {
        Database::single(RelationModel::new(
            "R",
            IntensityFunction::constant(lambda).unwrap(),
            IntensityFunction::zero(),
            0.0,
        ))
        .unwrap()
    }

    #[test]
    fn calibration_formulas() {
        assert!((usp_interval(4.57, 1.0).unwrap() - 1.0 / 4.57).abs() < 1e-15);
        assert!((threshold_from_m(4.57, 1.0).unwrap() - 0.109409).abs() < 1e-6);
        assert!((fa_from_m(1.0).unwrap() - 0.632121).abs() < 1e-6);
        assert!(matches!(usp_interval(0.0, 1.0), Err(PolicyError::NonpositiveRate(_))));
        assert!(matches!(threshold_from_m(-1.0, 1.0), Err(PolicyError::NonpositiveRate(_))));
    }

    #[test]
    fn usp_week() {
        let spec = CostSpec::uniform(0.5, 1.0, 0.0).unwrap();
        let p = PolicyKind::Usp.instantiate(4.57, 1.0).unwrap();
        let sched = generate_schedule(&p, &db(4.57), "R", &spec, 0.0, 7.0).unwrap();
        // 31 refreshes after the initial synchronization at time zero
        assert_eq!(sched.len(), 31);
        assert_eq!(sched.len() + 1, 32);
        assert!((sched[0] - 1.0 / 4.57).abs() < 1e-15);
    }

    #[test]
    fn threshold_matches_uniform_for_constant_rate() {
        let spec = CostSpec::uniform(0.5, 1.0, 0.0).unwrap();
        let p = PolicyKind::Threshold.instantiate(2.0, 1.0).unwrap();
        let sched = generate_schedule(&p, &db(2.0), "R", &spec, 0.0, 3.0).unwrap();
        assert_eq!(sched.len(), 6);
        for (k, b) in sched.iter().enumerate() {
            assert!((b - 0.5 * (k + 1) as f64).abs() < 1e-8, "{k}: {b}");
        }
    }

    #[test]
    fn fa_matches_uniform_for_constant_rate() {
        let spec = CostSpec::uniform(0.5, 1.0, 0.0).unwrap();
        let p = PolicyKind::FirstAlteration.instantiate(2.0, 1.0).unwrap();
        let sched = generate_schedule(&p, &db(2.0), "R", &spec, 0.0, 2.0).unwrap();
        assert_eq!(sched.len(), 4);
        assert!((sched[3] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn silent_relation_never_triggers() {
        let spec = CostSpec::uniform(0.5, 1.0, 0.0).unwrap();
        let p = Policy::Threshold { level: 1.0 };
        let r = generate_schedule(&p, &db(1e-9), "R", &spec, 0.0, 5.0);
        assert!(matches!(r, Err(PolicyError::TriggerNeverFires(PolicyKind::Threshold))));
    }

    #[test]
    fn parsing_kinds() {
        assert_eq!("fa".parse::<PolicyKind>().unwrap(), PolicyKind::FirstAlteration);
        assert!(matches!("lru".parse::<PolicyKind>(), Err(PolicyError::UnknownPolicy(_))));
        let p = Policy::Threshold { level: 0.2 };
        assert_eq!(serde_json::from_str::<Policy>(&serde_json::to_string(&p).unwrap()).unwrap(), p);
    }

    #[test]
    fn trace_costs_by_hand() {
        let spec = CostSpec::uniform(0.5, 2.0, 1.0).unwrap();
        let log = EventLog::new(vec![
            crate::fitting::Event { time: 0.25, count: 1, op: Op::Insert },
            crate::fitting::Event { time: 0.5, count: 2, op: Op::Delete },
            crate::fitting::Event { time: 1.5, count: 1, op: Op::Modify },
        ])
        .unwrap();
        let c = evaluate_schedule(&[1.0], &spec, &db(1.0), "R", 0.0, 2.0, EvaluationMode::Trace(&log)).unwrap();
        // insert: 0.75, delete: 2 × 0.5, modify: 1
        assert!((c.obsolescence - 2.75).abs() < 1e-12);
        // one refresh shipping 3 tuples
        assert!((c.transcription - 5.0).abs() < 1e-12);
        assert!((c.total - 3.875).abs() < 1e-12);
        let empty = EventLog::default();
        assert!(matches!(
            evaluate_schedule(&[1.0], &spec, &db(1.0), "R", 0.0, 2.0, EvaluationMode::Trace(&empty)),
            Err(PolicyError::EmptyTrace)
        ));
    }

    #[test]
    fn grid_rows_split_alpha() {
        let spec = CostSpec::uniform(0.5, 1.0, 0.0).unwrap();
        let rows = evaluate_grid(&PolicyKind::ALL, &[1.0], 2.0, &spec, &db(2.0), "R", 0.0, 2.0, EvaluationMode::Analytic).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            let row = r.row(0.25);
            assert!((row.total - (0.25 * row.transcription + 0.75 * row.obsolescence)).abs() < 1e-12);
        }
    }
}
