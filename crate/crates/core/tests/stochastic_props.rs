use relevo::fitting::{ks_test, EventLog, rescale_interarrivals};
use relevo::presets;
use relevo::stochastic::{simulate_nhpp, BatchDistribution, NonhomExp, RngStream};
use relevo::IntensityFunction;

fn exp_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        1.0 - (-x).exp()
    }
}

fn rescaled(f: &IntensityFunction, times: &[f64]) -> Vec<f64> {
    rescale_interarrivals(&EventLog::from_times(times).unwrap(), f).unwrap()
}

fn draw(f: &IntensityFunction, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed, 0);
    let mut t = 0.0;
    let mut out = vec![t];
    for _ in 0..n {
        t += NonhomExp::new(t, f).sample(&mut rng, None).unwrap();
        out.push(t);
    }
    out
}

#[test]
fn rescaled_gaps_are_unit_exponential() {
    let weekly = presets::weekly_profile();
    let ramp = IntensityFunction::piecewise(vec![relevo::Segment::new(0.0, 1e6, vec![0.5, 0.01])]).unwrap();
    for (k, f) in [weekly, ramp].iter().enumerate() {
        let times = draw(f, 10_000, 11 + k as u64);
        let r = ks_test(&rescaled(f, &times), exp_cdf).unwrap();
        assert!(!r.rejects(0.05).unwrap(), "intensity {k}: D = {}", r.statistic);
    }
}

#[test]
fn simulated_trace_rescales() {
    let f = presets::weekly_profile();
    let mut rng = RngStream::new(3, 1);
    let events = simulate_nhpp(&f, &BatchDistribution::unit(), 0.0, 26.0 * 7.0, &mut rng).unwrap();
    let times: Vec<f64> = events.iter().map(|e| e.0).collect();
    assert!(times.windows(2).all(|w| w[0] <= w[1]));
    assert!(times.iter().all(|t| *t > 0.0 && *t <= 182.0));
    let r = ks_test(&rescaled(&f, &times), exp_cdf).unwrap();
    assert!(!r.rejects(0.05).unwrap());
}

#[test]
fn identical_streams_give_identical_traces() {
    let f = presets::weekly_profile();
    let batch = BatchDistribution::from_counts(&presets::BATCH_COUNTS).unwrap();
    let a = simulate_nhpp(&f, &batch, 0.0, 14.0, &mut RngStream::new(8, 2)).unwrap();
    let b = simulate_nhpp(&f, &batch, 0.0, 14.0, &mut RngStream::new(8, 2)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn superposition_is_poisson_with_summed_rate() {
    let f = presets::weekly_profile();
    let g = IntensityFunction::constant(3.0).unwrap();
    let unit = BatchDistribution::unit();
    let mut a: Vec<f64> = simulate_nhpp(&f, &unit, 0.0, 700.0, &mut RngStream::new(21, 0))
        .unwrap()
        .into_iter()
        .map(|e| e.0)
        .collect();
    a.extend(simulate_nhpp(&g, &unit, 0.0, 700.0, &mut RngStream::new(21, 1)).unwrap().into_iter().map(|e| e.0));
    a.sort_by(f64::total_cmp);
    let sum = IntensityFunction::sum(&[f.clone(), g.clone()]).unwrap();
    let r = ks_test(&rescaled(&sum, &a), exp_cdf).unwrap();
    assert!(!r.rejects(0.05).unwrap(), "D = {}", r.statistic);
    // the wrong model is clearly rejected
    let wrong = ks_test(&rescaled(&f, &a), exp_cdf).unwrap();
    assert!(wrong.rejects(0.01).unwrap());
}

#[test]
fn empirical_cdf_of_waiting_time() {
    let f = presets::weekly_profile();
    let origin = 4.7;
    let d = NonhomExp::new(origin, &f);
    let mut rng = RngStream::new(2, 0);
    let n = 20_000;
    let samples: Vec<f64> = (0..n).map(|_| d.sample(&mut rng, None).unwrap()).collect();
    let r = ks_test(&samples, |x| d.cdf(x.max(0.0)).unwrap()).unwrap();
    assert!(!r.rejects(0.01).unwrap());
}
