use proptest::prelude::*;
use relevo::presets;
use relevo::{IntensityFunction, Segment};

/// Composite Simpson rule on each smooth piece, sampling just inside piece
/// ends so jumps do not leak into a neighbor.
fn simpson(f: &IntensityFunction, a: f64, b: f64, cuts: &[f64]) -> f64 {
    let mut points = vec![a];
    points.extend(cuts.iter().copied().filter(|c| *c > a && *c < b));
    points.push(b);
    let mut total = 0.0;
    for w in points.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let n = 200;
        let h = (hi - lo) / n as f64;
        let nudge = 1e-13 * (1.0 + hi.abs());
        let mut acc = f.eval(lo + nudge) + f.eval(hi - nudge);
        for i in 1..n {
            let x = lo + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f.eval(x);
        }
        total += acc * h / 3.0;
    }
    total
}

fn weekly_cuts(a: f64, b: f64) -> Vec<f64> {
    let mut cuts = Vec::new();
    let first = (a / 7.0).floor() as i64;
    let last = (b / 7.0).ceil() as i64;
    for w in first..=last {
        for (s, _, _) in presets::weekly_blocks() {
            cuts.push(w as f64 * 7.0 + s);
        }
    }
    cuts
}

fn quadratic_pieces() -> impl Strategy<Value = Vec<(f64, [f64; 3])>> {
    prop::collection::vec((0.1f64..2.0, [0.0f64..5.0, 0.0f64..3.0, 0.0f64..2.0]), 1..6)
}

fn build(pieces: &[(f64, [f64; 3])]) -> (IntensityFunction, Vec<f64>) {
    let mut t = 0.0;
    let mut segs = Vec::new();
    let mut cuts = Vec::new();
    for (len, c) in pieces {
        segs.push(Segment::new(t, t + len, c.to_vec()));
        cuts.push(t);
        t += len;
    }
    cuts.push(t);
    (IntensityFunction::piecewise(segs).unwrap(), cuts)
}

proptest! {
    #[test]
    fn additivity(s in 0.0f64..30.0, a in 0.0f64..1.0, len in 0.0f64..20.0) {
        let f = presets::weekly_profile();
        let e = s + len;
        let m = s + a * len;
        let whole = f.integrate(s, e).unwrap();
        let parts = f.integrate(s, m).unwrap() + f.integrate(m, e).unwrap();
        prop_assert!((parts - whole).abs() <= 1e-12 * (1.0 + whole));
    }

    #[test]
    fn periodicity(s in -20.0f64..40.0, k in 0u32..60) {
        let f = presets::weekly_profile();
        let one = f.integrate(0.0, 7.0).unwrap();
        let many = f.integrate(s, s + 7.0 * k as f64).unwrap();
        prop_assert!((many - k as f64 * one).abs() <= 1e-12 * (1.0 + k as f64 * one));
    }

    #[test]
    fn nonnegative_and_monotone(pieces in quadratic_pieces(), a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
        let (f, cuts) = build(&pieces);
        let end = *cuts.last().unwrap();
        let mut xs = [a * end, b * end, c * end];
        xs.sort_by(f64::total_cmp);
        let first = f.integrate(xs[0], xs[1]).unwrap();
        let second = f.integrate(xs[0], xs[2]).unwrap();
        prop_assert!(first >= 0.0);
        prop_assert!(second >= first);
    }

    #[test]
    fn piecewise_matches_simpson(pieces in quadratic_pieces(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (f, cuts) = build(&pieces);
        let end = *cuts.last().unwrap();
        let (lo, hi) = if a < b { (a * end, b * end) } else { (b * end, a * end) };
        let exact = f.integrate(lo, hi).unwrap();
        let oracle = simpson(&f, lo, hi, &cuts);
        prop_assert!((exact - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()));
    }

    #[test]
    fn inversion_round_trip(s in 0.0f64..20.0, target in 0.0f64..40.0) {
        let f = presets::weekly_profile();
        let t = f.invert(s, target, None).unwrap().unwrap();
        let back = f.integrate(s, t).unwrap();
        prop_assert!((back - target).abs() <= 1e-9 * (1.0 + target));
    }
}

#[test]
fn weekly_profile_matches_simpson_on_random_intervals() {
    let f = presets::weekly_profile();
    let mut rng = relevo::stochastic::RngStream::new(5, 0);
    for _ in 0..100 {
        let a = rng.uniform() * 21.0;
        let b = a + rng.uniform() * 10.0;
        let exact = f.integrate(a, b).unwrap();
        let oracle = simpson(&f, a, b, &weekly_cuts(a, b));
        assert!((exact - oracle).abs() <= 1e-9 * (1.0 + exact), "[{a}, {b}]: {exact} vs {oracle}");
    }
}

#[test]
fn weekly_totals() {
    let f = presets::weekly_profile();
    // Mon–Fri hours weighted by block length, plus the weekend days
    let hours = [3.0, 3.0, 3.0, 9.0, 3.0, 3.0];
    let weekday: f64 = hours.iter().zip(&presets::WEEKLY_RATES).map(|(h, r)| h / 24.0 * r).sum();
    let want = 5.0 * weekday + presets::WEEKLY_RATES[6] + presets::WEEKLY_RATES[7];
    assert!((f.integrate(0.0, 7.0).unwrap() - want).abs() < 1e-12);
    assert_eq!(f.eval(1.0 + 10.0 / 24.0), 7.50);
    assert_eq!(f.eval(5.5), 1.50);
}
