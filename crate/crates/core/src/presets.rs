//! Reference weekly insertion profiles for a low-volume bulletin board.
//!
//! Rates are events per day. Workdays are split into six blocks by hour of
//! day; Saturday and Sunday are single blocks.

use crate::intensity::{IntensityFunction, Segment};

/// Hour-of-day boundaries of the workday blocks.
pub const WORKDAY_BLOCK_HOURS: [f64; 7] = [0.0, 3.0, 6.0, 9.0, 18.0, 21.0, 24.0];

/// Plain (unit batch) rates per workday block, then Saturday, then Sunday.
pub const WEEKLY_RATES: [f64; 8] = [2.40, 5.96, 6.04, 7.50, 3.03, 2.41, 1.50, 1.15];

/// Rates when simultaneous arrivals are merged into batches.
pub const WEEKLY_RATES_BATCHED: [f64; 8] = [2.40, 5.96, 5.59, 7.11, 3.03, 2.33, 1.45, 1.15];

/// Empirical batch-size frequencies `(size, count)` that accompany the
/// batched profile.
pub const BATCH_COUNTS: [(u32, u64); 3] = [(1, 536), (2, 19), (3, 2)];

/// Segments `(start, end)` in days from Monday 00:00, aligned with the rate
/// tables above (workday blocks are listed per day).
pub fn weekly_blocks() -> Vec<(f64, f64, usize)> {
    let mut out = Vec::new();
    for day in 0..5 {
        for (k, w) in WORKDAY_BLOCK_HOURS.windows(2).enumerate() {
            out.push((day as f64 + w[0] / 24.0, day as f64 + w[1] / 24.0, k));
        }
    }
    out.push((5.0, 6.0, 6));
    out.push((6.0, 7.0, 7));
    out
}

fn profile(rates: &[f64; 8]) -> IntensityFunction {
    let segments = weekly_blocks()
        .into_iter()
        .map(|(a, b, k)| Segment::constant(a, b, rates[k]))
        .collect();
    IntensityFunction::recurrent(7.0, segments).expect("static profile is valid")
}

/// Weekly recurrent piecewise-constant insertion intensity.
pub fn weekly_profile() -> IntensityFunction {
    profile(&WEEKLY_RATES)
}

/// Weekly profile for the batched (compound) variant.
pub fn weekly_profile_batched() -> IntensityFunction {
    profile(&WEEKLY_RATES_BATCHED)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_partition_the_week() {
        let b = weekly_blocks();
        assert_eq!(b[0].0, 0.0);
        assert_eq!(b.last().unwrap().1, 7.0);
        for w in b.windows(2) {
            assert!((w[0].1 - w[1].0).abs() < 1e-15);
        }
    }

    #[test]
    fn weekly_total() {
        let hours = [3.0, 3.0, 3.0, 9.0, 3.0, 3.0];
        let workday: f64 = hours.iter().zip(&WEEKLY_RATES).map(|(h, r)| h / 24.0 * r).sum();
        let expected = 5.0 * workday + 1.50 + 1.15;
        assert!((weekly_profile().integrate(0.0, 7.0).unwrap() - expected).abs() < 1e-12);
    }
}
