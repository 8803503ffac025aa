use proptest::prelude::*;
use relevo::cost::CostSpec;
use relevo::evolution::{Database, RelationModel};
use relevo::fitting::{Block, EventLog, SegmentationSpec};
use relevo::markov::{AttributeModel, BinaryLump, CHANGED, UNCHANGED};
use relevo::policy::{self, EvaluationMode, Policy, PolicyError, PolicyKind};
use relevo::{presets, IntensityFunction, Segment};

const SECOND: f64 = 1.0 / 86_400.0;

fn c(rate: f64) -> IntensityFunction {
    IntensityFunction::constant(rate).unwrap()
}

fn homogeneous(rate: f64) -> Database {
    Database::single(RelationModel::new("R", c(rate), c(0.0), 0.0)).unwrap()
}

fn weekly(mu: f64) -> Database {
    let lump = BinaryLump::new(0.3, 0.0, c(1.0)).unwrap();
    let hist = [(UNCHANGED.to_string(), 20.0), (CHANGED.to_string(), 0.0)].into_iter().collect();
    let r = RelationModel::new("R", presets::weekly_profile(), c(mu), 20.0).with_attribute("x", AttributeModel::Binary(lump), hist);
    Database::single(r).unwrap()
}

/// Low rate in the first half of each day, high in the second.
fn two_segment(lo: f64, hi: f64) -> Database {
    let lambda = IntensityFunction::recurrent(1.0, vec![Segment::constant(0.0, 0.5, lo), Segment::constant(0.5, 1.0, hi)]).unwrap();
    Database::single(RelationModel::new("R", lambda, c(0.0), 10.0)).unwrap()
}

fn block(days: &str, start: &str, end: &str) -> Block {
    Block {
        days: days.into(),
        start: start.into(),
        end: end.into(),
    }
}

fn unit_spec(alpha: f64) -> CostSpec {
    CostSpec::uniform(alpha, 1.0, 0.1).unwrap()
}

fn count(policy: Policy, db: &Database, start: f64, end: f64) -> usize {
    match policy::generate_schedule(&policy, db, "R", &unit_spec(0.5), start, end) {
        Ok(s) => s.len(),
        Err(PolicyError::TriggerNeverFires(_)) => 0,
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn calibrated_threshold_matches_uniform_spacing() {
    for rate in [4.57, 1.3] {
        let db = homogeneous(rate);
        for m in [0.5, 1.0, 2.0, 4.0] {
            let spec = unit_spec(0.5);
            let usp = policy::generate_schedule(&PolicyKind::Usp.instantiate(rate, m).unwrap(), &db, "R", &spec, 0.0, 30.0).unwrap();
            let th = policy::generate_schedule(&PolicyKind::Threshold.instantiate(rate, m).unwrap(), &db, "R", &spec, 0.0, 30.0).unwrap();
            assert_eq!(usp.len(), th.len(), "rate {rate}, M {m}");
            let worst = usp.iter().zip(&th).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst <= SECOND, "rate {rate}, M {m}: {} s", worst / SECOND);
        }
    }
}

#[test]
fn first_alteration_matches_uniform_spacing_without_other_changes() {
    let db = homogeneous(2.0);
    let spec = unit_spec(0.5);
    let usp = policy::generate_schedule(&PolicyKind::Usp.instantiate(2.0, 1.5).unwrap(), &db, "R", &spec, 0.0, 10.0).unwrap();
    let fa = policy::generate_schedule(&PolicyKind::FirstAlteration.instantiate(2.0, 1.5).unwrap(), &db, "R", &spec, 0.0, 10.0).unwrap();
    assert_eq!(usp.len(), fa.len());
    assert!(usp.iter().zip(&fa).all(|(a, b)| (a - b).abs() <= SECOND));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn more_budget_means_more_refreshes(kind in prop::sample::select(PolicyKind::ALL.to_vec()), m in 0.3f64..4.0, shrink in 0.2f64..1.0, start in 0.0f64..7.0) {
        let db = weekly(0.05);
        let end = start + 2.0;
        let loose = count(kind.instantiate(4.57, m).unwrap(), &db, start, end);
        let tight = count(kind.instantiate(4.57, m * shrink).unwrap(), &db, start, end);
        prop_assert!(tight >= loose, "{kind}: M {m} gives {loose}, M {} gives {tight}", m * shrink);
    }
}

#[test]
fn refreshes_follow_the_busy_segment() {
    let db = two_segment(1.0, 6.0);
    let seg = SegmentationSpec::new(
        (0..7)
            .flat_map(|d| {
                let day = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"][d];
                [
                    block(day, "00:00", "12:00"),
                    block(day, "12:00", "24:00"),
                ]
            })
            .collect(),
    )
    .unwrap();
    for kind in [PolicyKind::Threshold, PolicyKind::FirstAlteration] {
        let schedule = policy::generate_schedule(&kind.instantiate(3.5, 1.0).unwrap(), &db, "R", &unit_spec(0.5), 0.0, 14.0).unwrap();
        for day in 0..14 {
            let (lo, hi) = (day as f64, day as f64 + 0.5);
            let n_lo = schedule.iter().filter(|b| **b > lo && **b <= hi).count();
            let n_hi = schedule.iter().filter(|b| **b > hi && **b <= hi + 0.5).count();
            assert!(n_hi >= n_lo, "{kind} day {day}: {n_lo} vs {n_hi}");
        }
        let per_block = policy::segment_counts(&schedule, &seg);
        for pair in per_block.chunks(2) {
            assert!(pair[1] >= pair[0], "{kind}: {per_block:?}");
        }
    }
}

#[test]
fn pure_transcription_totals_follow_refresh_counts() {
    let db = weekly(0.1);
    let spec = unit_spec(1.0);
    let evaluated = policy::evaluate_grid(&PolicyKind::ALL, &[0.5, 1.0, 2.0, 4.0], 4.57, &spec, &db, "R", 0.0, 7.0, EvaluationMode::Analytic).unwrap();
    let rows: Vec<_> = evaluated.iter().map(|e| e.row(1.0)).collect();
    for a in &rows {
        for b in &rows {
            if a.refresh_count < b.refresh_count {
                assert!(a.total <= b.total + 1e-9, "{a:?} vs {b:?}");
            }
        }
    }
}

#[test]
fn paired_trace_costs_agree_on_homogeneous_data() {
    let rate = 4.57;
    let mut rng = relevo::stochastic::RngStream::new(17, 0);
    let unit = relevo::stochastic::BatchDistribution::unit();
    let events = relevo::stochastic::simulate_nhpp(&c(rate), &unit, 0.0, 28.0, &mut rng).unwrap();
    let times: Vec<f64> = events.iter().map(|e| e.0).collect();
    let log = EventLog::from_times(&times).unwrap();
    let db = homogeneous(rate);
    let spec = unit_spec(0.5);
    let rows = policy::evaluate_grid(
        &[PolicyKind::Usp, PolicyKind::Threshold],
        &[1.0],
        rate,
        &spec,
        &db,
        "R",
        0.0,
        28.0,
        EvaluationMode::Trace(&log),
    )
    .unwrap();
    let (u, t) = (&rows[0].costs, &rows[1].costs);
    assert_eq!(u.refresh_count, t.refresh_count);
    assert!((u.total - t.total).abs() <= 1e-6 * u.total, "{u:?} vs {t:?}");
}

#[test]
fn single_insertion_trace() {
    let log = EventLog::from_times(&[0.25]).unwrap();
    let spec = unit_spec(0.0);
    let db = homogeneous(1.0);
    let costs = policy::evaluate_schedule(&[0.75], &spec, &db, "R", 0.0, 0.75, EvaluationMode::Trace(&log)).unwrap();
    assert!((costs.obsolescence - 0.5).abs() < 1e-12);
    assert!((costs.total - 0.5).abs() < 1e-12);
    let empty = EventLog::from_times(&[2.0]).unwrap();
    assert!(matches!(
        policy::evaluate_schedule(&[0.75], &spec, &db, "R", 0.0, 1.0, EvaluationMode::Trace(&empty)),
        Err(PolicyError::EmptyTrace)
    ));
}

#[test]
fn unknown_policy_names_are_refused() {
    assert!(matches!("lru".parse::<PolicyKind>(), Err(PolicyError::UnknownPolicy(_))));
    assert_eq!("FA".parse::<PolicyKind>().unwrap(), PolicyKind::FirstAlteration);
}
