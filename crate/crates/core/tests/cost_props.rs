mod common;

use proptest::prelude::*;
use relevo::cost::{self, DeletionForm};
use relevo::evolution::Database;
use relevo::IntensityFunction;

fn breakdown(seed: u64, s: f64, f: f64) -> (f64, f64, f64) {
    let cfg = common::random_config(seed, 1);
    let spec = cfg.cost.as_ref().unwrap();
    let db = &cfg.database;
    (
        cost::insertion_obsolescence(db, "R", &spec.insertion_weight, s, f).unwrap(),
        cost::deletion_obsolescence(db, "R", &spec.deletion_weight, DeletionForm::Exact, s, f).unwrap(),
        cost::modification_obsolescence(db, "R", &spec.metrics, s, f).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn components_are_nonnegative_and_vanish_at_refresh(seed in 0u64..10_000, s in 0.0f64..7.0, len in 0.0f64..2.0) {
        let (i, d, m) = breakdown(seed, s, s + len);
        prop_assert!(i >= 0.0 && d >= 0.0 && m >= 0.0, "{i} {d} {m}");
        let (i0, d0, m0) = breakdown(seed, s, s);
        prop_assert_eq!((i0, d0, m0), (0.0, 0.0, 0.0));
    }

    // Only tuples still present at the refresh count, so with deletions the
    // value can fall as earlier arrivals die off. Without them it cannot.
    #[test]
    fn insertion_obsolescence_grows_with_refresh_time(seed in 0u64..10_000, s in 0.0f64..7.0, a in 0.0f64..2.0, b in 0.0f64..2.0) {
        let cfg = common::random_config(seed, 1);
        let spec = cfg.cost.as_ref().unwrap();
        let mut r = cfg.database.relation("R").unwrap().clone();
        r.deletion = IntensityFunction::zero();
        let db = Database::single(r).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let x = cost::insertion_obsolescence(&db, "R", &spec.insertion_weight, s, s + lo).unwrap();
        let y = cost::insertion_obsolescence(&db, "R", &spec.insertion_weight, s, s + hi).unwrap();
        prop_assert!(y >= x - 1e-12 * (1.0 + x), "{x} > {y}");
    }

    #[test]
    fn doubling_the_weight_doubles_insertion_and_deletion(seed in 0u64..10_000, s in 0.0f64..7.0, len in 0.0f64..2.0) {
        let cfg = common::random_config(seed, 1);
        let spec = cfg.cost.as_ref().unwrap();
        let db = &cfg.database;
        let f = s + len;
        let ins = cost::insertion_obsolescence(db, "R", &spec.insertion_weight, s, f).unwrap();
        let ins2 = cost::insertion_obsolescence(db, "R", &spec.insertion_weight.scaled(2.0).unwrap(), s, f).unwrap();
        prop_assert!((ins2 - 2.0 * ins).abs() <= 1e-9 * (1.0 + ins));
        for form in [DeletionForm::Exact, DeletionForm::AverageFactor] {
            let del = cost::deletion_obsolescence(db, "R", &spec.deletion_weight, form, s, f).unwrap();
            let del2 = cost::deletion_obsolescence(db, "R", &spec.deletion_weight.scaled(2.0).unwrap(), form, s, f).unwrap();
            prop_assert!((del2 - 2.0 * del).abs() <= 1e-9 * (1.0 + del));
        }
    }

    #[test]
    fn total_cost_splits_into_components(seed in 0u64..10_000, cuts in prop::collection::vec(0.0f64..1.0, 0..4)) {
        let cfg = common::random_config(seed, 1);
        let spec = cfg.cost.as_ref().unwrap();
        let (s, f) = (cfg.start, cfg.end);
        let mut schedule: Vec<f64> = cuts.iter().map(|u| s + (f - s) * (0.05 + 0.9 * u)).collect();
        schedule.sort_by(f64::total_cmp);
        schedule.dedup();
        let t = cost::total_cost(&schedule, spec, &cfg.database, "R", s, f).unwrap();
        let mix = spec.alpha * t.transcription + (1.0 - spec.alpha) * t.obsolescence;
        prop_assert!((t.total - mix).abs() <= 1e-9 * (1.0 + mix));
        let b = &t.breakdown;
        prop_assert!((b.insertion + b.deletion + b.modification - t.obsolescence).abs() <= 1e-9 * (1.0 + t.obsolescence));
        prop_assert_eq!(t.refresh_count, schedule.len());
        prop_assert!(t.transcription >= spec.setup * schedule.len() as f64 - 1e-12);
    }
}

#[test]
fn unordered_schedules_are_refused() {
    let cfg = common::random_config(3, 1);
    let spec = cfg.cost.as_ref().unwrap();
    let (s, f) = (cfg.start, cfg.end);
    let mid = 0.5 * (s + f);
    assert!(cost::total_cost(&[mid, mid], spec, &cfg.database, "R", s, f).is_err());
    assert!(cost::total_cost(&[f + 1.0], spec, &cfg.database, "R", s, f).is_err());
    assert!(cost::total_cost(&[s], spec, &cfg.database, "R", s, f).is_err());
}
