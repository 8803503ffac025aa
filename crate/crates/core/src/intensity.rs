//! Instantaneous rate functions and their exact integrals.
//!
//! Every stochastic process in the crate (insertions, intrinsic deletions,
//! attribute modifications) is driven by an [`IntensityFunction`] measured in
//! events per day. Three shapes are supported:
//!
//! * a constant rate,
//! * a piecewise polynomial on a bounded domain, and
//! * a recurrent piecewise polynomial that repeats with period `T`.
//!
//! Polynomial coefficients of a segment are expressed in the local variable
//! `x = t - start`, so `coeffs = [c0, c1]` on `[a, b)` means
//! `c0 + c1 * (t - a)`.
//!
//! Integration is exact: each segment contributes its antiderivative, and a
//! recurrent function keeps a prefix table over one period so the cost of
//! `integrate(s, e)` does not depend on `e - s`.

use crate::calendar::{self, CalendarError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on segment polynomial degree.
pub const DEFAULT_MAX_DEGREE: usize = 3;

const NEG_TOL: f64 = 1e-12;
const SOLVE_TOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntensityError {
    #[error("interval [{start}, {end}] leaves the domain [{domain_start}, {domain_end}]")]
    OutOfDomain {
        start: f64,
        end: f64,
        domain_start: f64,
        domain_end: f64,
    },
    #[error("interval end {end} precedes start {start}")]
    ReversedInterval { start: f64, end: f64 },
    #[error("scale factor must be nonnegative, got {0}")]
    NegativeScale(f64),
    #[error("cannot sum an empty list of intensities")]
    EmptyList,
    #[error("a piecewise intensity needs at least one segment")]
    EmptySegments,
    #[error("segment [{start}, {end}) is empty or reversed")]
    DegenerateSegment { start: f64, end: f64 },
    #[error("segments leave a gap at t = {0}")]
    Gap(f64),
    #[error("segments overlap at t = {0}")]
    Overlap(f64),
    #[error("rate is negative ({value}) at t = {at}")]
    NegativeRate { at: f64, value: f64 },
    #[error("segment degree {degree} exceeds the configured maximum {max}")]
    DegreeTooHigh { degree: usize, max: usize },
    #[error("recurrent period must be positive and finite, got {0}")]
    BadPeriod(f64),
    #[error("recurrent base must cover exactly [0, {period}), got [{start}, {end})")]
    RecurrentCoverage { start: f64, end: f64, period: f64 },
    #[error("non-finite value in intensity definition")]
    NonFinite,
    #[error(transparent)]
    Calendar(#[from] CalendarError),
}

pub type Result<T> = std::result::Result<T, IntensityError>;

/// One polynomial piece on `[start, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub coeffs: Vec<f64>,
}

impl Segment {
    pub fn new(start: f64, end: f64, coeffs: Vec<f64>) -> Self {
        Self { start, end, coeffs }
    }

    pub fn constant(start: f64, end: f64, rate: f64) -> Self {
        Self::new(start, end, vec![rate])
    }

    fn width(&self) -> f64 {
        self.end - self.start
    }

    fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    fn value_local(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// `∫_0^x p`.
    fn antiderivative_local(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (k, c) in self.coeffs.iter().enumerate().rev() {
            acc = acc * x + c / (k as f64 + 1.0);
        }
        acc * x
    }

    fn min_value(&self) -> (f64, f64) {
        let w = self.width();
        let mut candidates = vec![0.0, w];
        if self.degree() <= 3 {
            // roots of the derivative inside (0, w)
            let d: Vec<f64> = self
                .coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| k as f64 * c)
                .collect();
            match d.len() {
                2 if d[1] != 0.0 => candidates.push(-d[0] / d[1]),
                3 => {
                    let (c, b, a) = (d[0], d[1], d[2]);
                    if a == 0.0 {
                        if b != 0.0 {
                            candidates.push(-c / b);
                        }
                    } else {
                        let disc = b * b - 4.0 * a * c;
                        if disc >= 0.0 {
                            let sq = disc.sqrt();
                            candidates.push((-b + sq) / (2.0 * a));
                            candidates.push((-b - sq) / (2.0 * a));
                        }
                    }
                }
                _ => {}
            }
        }
        candidates
            .into_iter()
            .filter(|x| x.is_finite() && *x >= 0.0 && *x <= w)
            .map(|x| (self.start + x, self.value_local(x)))
            .fold((self.start, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
    }

    /// Smallest local `x` in `[0, width]` with `∫_0^x p = goal`.
    fn solve_local(&self, goal: f64) -> f64 {
        let w = self.width();
        if goal <= 0.0 {
            return 0.0;
        }
        if self.coeffs.len() <= 1 {
            let c0 = self.coeffs.first().copied().unwrap_or(0.0);
            return if c0 > 0.0 { (goal / c0).min(w) } else { 0.0 };
        }
        let total = self.antiderivative_local(w);
        if goal >= total {
            return w;
        }
        let (mut lo, mut hi) = (0.0, w);
        let mut x = w * goal / total;
        for _ in 0..200 {
            let fx = self.antiderivative_local(x) - goal;
            if fx.abs() <= SOLVE_TOL * (1.0 + goal.abs()) * 1e-2 {
                return x;
            }
            if fx > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let dfx = self.value_local(x);
            let newton = x - fx / dfx;
            x = if dfx > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= SOLVE_TOL * (1.0 + w) * 1e-2 {
                break;
            }
        }
        x
    }

    fn shifted(&self, new_start: f64, new_end: f64) -> Segment {
        Segment::new(new_start, new_end, shift_poly(&self.coeffs, new_start - self.start))
    }
}

/// Coefficients of `p(y + h)` in `y` (Taylor shift).
fn shift_poly(coeffs: &[f64], h: f64) -> Vec<f64> {
    let mut a = coeffs.to_vec();
    let n = a.len();
    if h == 0.0 || n < 2 {
        return a;
    }
    for i in 0..n {
        for j in (i..n - 1).rev() {
            a[j] += h * a[j + 1];
        }
    }
    a
}

fn add_poly(acc: &mut Vec<f64>, other: &[f64]) {
    if acc.len() < other.len() {
        acc.resize(other.len(), 0.0);
    }
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

/// Contiguous polynomial segments with a cumulative-integral table.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePolynomial {
    segments: Vec<Segment>,
    cum: Vec<f64>,
}

impl PiecewisePolynomial {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        Self::with_max_degree(segments, DEFAULT_MAX_DEGREE)
    }

    pub fn with_max_degree(mut segments: Vec<Segment>, max_degree: usize) -> Result<Self> {
        if segments.is_empty() {
            return Err(IntensityError::EmptySegments);
        }
        for seg in &segments {
            if !seg.start.is_finite() || !seg.end.is_finite() || seg.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(IntensityError::NonFinite);
            }
            if seg.end <= seg.start {
                return Err(IntensityError::DegenerateSegment {
                    start: seg.start,
                    end: seg.end,
                });
            }
            if seg.degree() > max_degree {
                return Err(IntensityError::DegreeTooHigh {
                    degree: seg.degree(),
                    max: max_degree,
                });
            }
        }
        segments.sort_by(|a, b| a.start.total_cmp(&b.start));
        for pair in segments.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let tol = 1e-12 * (1.0 + a.end.abs());
            if b.start > a.end + tol {
                return Err(IntensityError::Gap(a.end));
            }
            if b.start < a.end - tol {
                return Err(IntensityError::Overlap(b.start));
            }
        }
        // snap tiny mismatches so the table is exactly contiguous
        for i in 1..segments.len() {
            segments[i].start = segments[i - 1].end;
        }
        for seg in &segments {
            let (at, value) = seg.min_value();
            if value < -NEG_TOL {
                return Err(IntensityError::NegativeRate { at, value });
            }
        }
        Ok(Self::from_parts(segments))
    }

    fn from_parts(segments: Vec<Segment>) -> Self {
        let mut cum = Vec::with_capacity(segments.len() + 1);
        let mut acc = 0.0;
        cum.push(0.0);
        for seg in &segments {
            acc += seg.antiderivative_local(seg.width());
            cum.push(acc);
        }
        Self { segments, cum }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.segments[0].start, self.segments[self.segments.len() - 1].end)
    }

    pub fn total(&self) -> f64 {
        self.cum[self.segments.len()]
    }

    pub fn max_degree(&self) -> usize {
        self.segments.iter().map(Segment::degree).max().unwrap_or(0)
    }

    fn locate(&self, t: f64) -> usize {
        let idx = self.segments.partition_point(|s| s.end <= t);
        idx.min(self.segments.len() - 1)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let (a, b) = self.domain();
        if t < a || t >= b {
            return 0.0;
        }
        let seg = &self.segments[self.locate(t)];
        seg.value_local(t - seg.start).max(0.0)
    }

    /// `∫_{domain start}^t`, with `t` clamped into the domain.
    fn cumulative_at(&self, t: f64) -> f64 {
        let (a, b) = self.domain();
        let t = t.clamp(a, b);
        let i = self.locate(t);
        let seg = &self.segments[i];
        self.cum[i] + seg.antiderivative_local(t - seg.start)
    }

    fn check_domain(&self, s: f64, e: f64) -> Result<()> {
        let (a, b) = self.domain();
        let tol = 1e-12 * (1.0 + b.abs());
        if s < a - tol || e > b + tol {
            return Err(IntensityError::OutOfDomain {
                start: s,
                end: e,
                domain_start: a,
                domain_end: b,
            });
        }
        Ok(())
    }

    pub fn integrate(&self, s: f64, e: f64) -> Result<f64> {
        check_order(s, e)?;
        self.check_domain(s, e)?;
        Ok((self.cumulative_at(e) - self.cumulative_at(s)).max(0.0))
    }

    /// Earliest domain point where the cumulative integral reaches `goal`.
    fn solve_cumulative(&self, goal: f64) -> Option<f64> {
        if goal > self.total() {
            return None;
        }
        let n = self.segments.len();
        let i = self.cum[1..].partition_point(|c| *c < goal).min(n - 1);
        let seg = &self.segments[i];
        Some(seg.start + seg.solve_local(goal - self.cum[i]))
    }

    fn breakpoints_into(&self, s: f64, e: f64, offset: f64, out: &mut Vec<f64>) {
        for seg in &self.segments {
            let b = seg.start + offset;
            if b > s && b < e {
                out.push(b);
            }
        }
    }

    fn scaled(&self, k: f64) -> Self {
        let segments = self
            .segments
            .iter()
            .map(|s| Segment::new(s.start, s.end, s.coeffs.iter().map(|c| c * k).collect()))
            .collect();
        Self::from_parts(segments)
    }

    fn boundaries(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.segments.iter().map(|s| s.start).collect();
        b.push(self.domain().1);
        b
    }

    fn with_constant_added(&self, c: f64) -> Self {
        let segments = self
            .segments
            .iter()
            .map(|s| {
                let mut coeffs = s.coeffs.clone();
                add_poly(&mut coeffs, &[c]);
                Segment::new(s.start, s.end, coeffs)
            })
            .collect();
        Self::from_parts(segments)
    }

    /// Pointwise sum of functions sharing one domain; breakpoints are merged.
    fn merge(parts: &[&PiecewisePolynomial]) -> Self {
        let lists: Vec<Vec<f64>> = parts.iter().map(|p| p.boundaries()).collect();
        let cuts = crate::quad::merge_breakpoints(&lists);
        let mut segments = Vec::with_capacity(cuts.len());
        for w in cuts.windows(2) {
            let mut coeffs = vec![0.0];
            for p in parts {
                let src = &p.segments[p.locate(w[0])];
                add_poly(&mut coeffs, &src.shifted(w[0], w[1]).coeffs);
            }
            segments.push(Segment::new(w[0], w[1], coeffs));
        }
        Self::from_parts(segments)
    }

    fn ratio_to(&self, other: &Self) -> Option<f64> {
        if self.segments.len() != other.segments.len() {
            return None;
        }
        let mut alpha: Option<f64> = None;
        for (a, b) in self.segments.iter().zip(&other.segments) {
            let tol = 1e-12 * (1.0 + a.start.abs());
            if (a.start - b.start).abs() > tol || (a.end - b.end).abs() > tol {
                return None;
            }
            let n = a.coeffs.len().max(b.coeffs.len());
            for k in 0..n {
                let ca = a.coeffs.get(k).copied().unwrap_or(0.0);
                let cb = b.coeffs.get(k).copied().unwrap_or(0.0);
                if cb == 0.0 {
                    if ca.abs() > 1e-15 {
                        return None;
                    }
                    continue;
                }
                let r = ca / cb;
                match alpha {
                    None => alpha = Some(r),
                    Some(prev) if (prev - r).abs() <= 1e-12 * (1.0 + prev.abs()) => {}
                    Some(_) => return None,
                }
            }
        }
        Some(alpha.unwrap_or(0.0))
    }
}

/// A piecewise polynomial over `[0, period)` repeated forever.
#[derive(Debug, Clone, PartialEq)]
pub struct Recurrent {
    period: f64,
    base: PiecewisePolynomial,
}

impl Recurrent {
    pub fn new(period: f64, segments: Vec<Segment>) -> Result<Self> {
        Self::with_max_degree(period, segments, DEFAULT_MAX_DEGREE)
    }

    pub fn with_max_degree(period: f64, segments: Vec<Segment>, max_degree: usize) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(IntensityError::BadPeriod(period));
        }
        let base = PiecewisePolynomial::with_max_degree(segments, max_degree)?;
        let (a, b) = base.domain();
        let tol = 1e-12 * (1.0 + period);
        if a.abs() > tol || (b - period).abs() > tol {
            return Err(IntensityError::RecurrentCoverage {
                start: a,
                end: b,
                period,
            });
        }
        Ok(Self { period, base })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn base(&self) -> &PiecewisePolynomial {
        &self.base
    }

    /// `∫_0^T`, computed once at construction.
    pub fn period_integral(&self) -> f64 {
        self.base.total()
    }

    fn split(&self, t: f64) -> (f64, f64) {
        let n = (t / self.period).floor();
        let phase = (t - n * self.period).clamp(0.0, self.period);
        (n, phase)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let (_, phase) = self.split(t);
        if phase >= self.period {
            return self.base.eval(0.0);
        }
        self.base.eval(phase)
    }

    pub fn integrate(&self, s: f64, e: f64) -> Result<f64> {
        check_order(s, e)?;
        let (ns, ps) = self.split(s);
        let (ne, pe) = self.split(e);
        let whole = (ne - ns) * self.base.total();
        Ok((whole + self.base.cumulative_at(pe) - self.base.cumulative_at(ps)).max(0.0))
    }

    fn solve(&self, s: f64, target: f64) -> Option<f64> {
        let total = self.base.total();
        if total <= 0.0 {
            return None;
        }
        let (ns, ps) = self.split(s);
        let goal = self.base.cumulative_at(ps) + target;
        let mut k = (goal / total).floor();
        let mut rem = goal - k * total;
        if rem <= 0.0 && k > 0.0 {
            // land on the end of the previous period rather than its start
            k -= 1.0;
            rem += total;
        }
        let x = self.base.solve_cumulative(rem.min(total))?;
        Some(((ns + k) * self.period + x).max(s))
    }

    fn breakpoints_into(&self, s: f64, e: f64, out: &mut Vec<f64>) {
        let first = (s / self.period).floor() as i64;
        let last = (e / self.period).floor() as i64;
        for n in first..=last {
            self.base.breakpoints_into(s, e, n as f64 * self.period, out);
        }
    }
}

/// A nonnegative rate function (events per day).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntensitySpec", into = "IntensitySpec")]
pub enum IntensityFunction {
    Constant { rate: f64 },
    Piecewise(PiecewisePolynomial),
    Recurrent(Recurrent),
    Sum(Vec<IntensityFunction>),
}

fn check_order(s: f64, e: f64) -> Result<()> {
    if !s.is_finite() || !e.is_finite() {
        return Err(IntensityError::NonFinite);
    }
    if e < s {
        return Err(IntensityError::ReversedInterval { start: s, end: e });
    }
    Ok(())
}

impl IntensityFunction {
    pub fn zero() -> Self {
        IntensityFunction::Constant { rate: 0.0 }
    }

    pub fn constant(rate: f64) -> Result<Self> {
        if !rate.is_finite() {
            return Err(IntensityError::NonFinite);
        }
        if rate < 0.0 {
            return Err(IntensityError::NegativeRate { at: 0.0, value: rate });
        }
        Ok(IntensityFunction::Constant { rate })
    }

    pub fn piecewise(segments: Vec<Segment>) -> Result<Self> {
        Ok(IntensityFunction::Piecewise(PiecewisePolynomial::new(segments)?))
    }

    pub fn recurrent(period: f64, segments: Vec<Segment>) -> Result<Self> {
        Ok(IntensityFunction::Recurrent(Recurrent::new(period, segments)?))
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            IntensityFunction::Constant { rate } => *rate,
            IntensityFunction::Piecewise(p) => p.eval(t),
            IntensityFunction::Recurrent(r) => r.eval(t),
            IntensityFunction::Sum(parts) => parts.iter().map(|p| p.eval(t)).sum(),
        }
    }

    /// Cumulative intensity `Λ(s, e) = ∫_s^e λ(t) dt`.
    pub fn integrate(&self, s: f64, e: f64) -> Result<f64> {
        match self {
            IntensityFunction::Constant { rate } => {
                check_order(s, e)?;
                Ok(rate * (e - s))
            }
            IntensityFunction::Piecewise(p) => p.integrate(s, e),
            IntensityFunction::Recurrent(r) => r.integrate(s, e),
            IntensityFunction::Sum(parts) => {
                check_order(s, e)?;
                parts.iter().map(|p| p.integrate(s, e)).sum()
            }
        }
    }

    pub fn scale(&self, k: f64) -> Result<Self> {
        if !k.is_finite() {
            return Err(IntensityError::NonFinite);
        }
        if k < 0.0 {
            return Err(IntensityError::NegativeScale(k));
        }
        Ok(match self {
            IntensityFunction::Constant { rate } => IntensityFunction::Constant { rate: rate * k },
            IntensityFunction::Piecewise(p) => IntensityFunction::Piecewise(p.scaled(k)),
            IntensityFunction::Recurrent(r) => IntensityFunction::Recurrent(Recurrent {
                period: r.period,
                base: r.base.scaled(k),
            }),
            IntensityFunction::Sum(parts) => {
                IntensityFunction::Sum(parts.iter().map(|p| p.scale(k)).collect::<Result<_>>()?)
            }
        })
    }

    /// Pointwise sum. Constants fold together, and recurrent functions that
    /// share a period are merged into a single recurrent function so that
    /// exact inversion stays available.
    pub fn sum(fs: &[IntensityFunction]) -> Result<Self> {
        if fs.is_empty() {
            return Err(IntensityError::EmptyList);
        }
        if fs.len() == 1 {
            return Ok(fs[0].clone());
        }
        let mut flat = Vec::new();
        fn flatten<'a>(f: &'a IntensityFunction, out: &mut Vec<&'a IntensityFunction>) {
            match f {
                IntensityFunction::Sum(parts) => parts.iter().for_each(|p| flatten(p, out)),
                other => out.push(other),
            }
        }
        fs.iter().for_each(|f| flatten(f, &mut flat));

        let mut constant = 0.0;
        let mut recurrent: Vec<&Recurrent> = Vec::new();
        let mut piecewise: Vec<&PiecewisePolynomial> = Vec::new();
        for f in &flat {
            match f {
                IntensityFunction::Constant { rate } => constant += rate,
                IntensityFunction::Recurrent(r) => recurrent.push(r),
                IntensityFunction::Piecewise(p) => piecewise.push(p),
                IntensityFunction::Sum(_) => unreachable!("flattened"),
            }
        }
        if recurrent.is_empty() && piecewise.is_empty() {
            return Ok(IntensityFunction::Constant { rate: constant });
        }
        let same_period = recurrent
            .windows(2)
            .all(|w| (w[0].period - w[1].period).abs() <= 1e-12 * w[0].period);
        if piecewise.is_empty() && same_period {
            let bases: Vec<&PiecewisePolynomial> = recurrent.iter().map(|r| &r.base).collect();
            let mut base = PiecewisePolynomial::merge(&bases);
            if constant != 0.0 {
                base = base.with_constant_added(constant);
            }
            return Ok(IntensityFunction::Recurrent(Recurrent {
                period: recurrent[0].period,
                base,
            }));
        }
        let same_domain = piecewise.windows(2).all(|w| w[0].domain() == w[1].domain());
        if recurrent.is_empty() && same_domain {
            let mut merged = PiecewisePolynomial::merge(&piecewise);
            if constant != 0.0 {
                merged = merged.with_constant_added(constant);
            }
            return Ok(IntensityFunction::Piecewise(merged));
        }
        let mut parts: Vec<IntensityFunction> = flat.into_iter().filter(|f| !f.is_constant()).cloned().collect();
        if constant != 0.0 {
            parts.push(IntensityFunction::Constant { rate: constant });
        }
        Ok(IntensityFunction::Sum(parts))
    }

    fn is_constant(&self) -> bool {
        matches!(self, IntensityFunction::Constant { .. })
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            IntensityFunction::Constant { rate } => Some(*rate),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            IntensityFunction::Constant { rate } => *rate == 0.0,
            IntensityFunction::Piecewise(p) => p.segments.iter().all(|s| s.coeffs.iter().all(|c| *c == 0.0)),
            IntensityFunction::Recurrent(r) => r.base.segments.iter().all(|s| s.coeffs.iter().all(|c| *c == 0.0)),
            IntensityFunction::Sum(parts) => parts.iter().all(IntensityFunction::is_zero),
        }
    }

    /// Domain on which the function is defined (`None` means all of ℝ).
    pub fn domain(&self) -> Option<(f64, f64)> {
        match self {
            IntensityFunction::Piecewise(p) => Some(p.domain()),
            IntensityFunction::Sum(parts) => parts.iter().filter_map(|p| p.domain()).fold(None, |acc, (a, b)| {
                Some(match acc {
                    None => (a, b),
                    Some((x, y)) => (x.max(a), y.min(b)),
                })
            }),
            _ => None,
        }
    }

    /// Segment boundaries strictly inside `(s, e)`, bracketed by `s` and `e`.
    pub fn breakpoints(&self, s: f64, e: f64) -> Vec<f64> {
        let mut out = vec![s];
        self.collect_breakpoints(s, e, &mut out);
        out.push(e);
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    fn collect_breakpoints(&self, s: f64, e: f64, out: &mut Vec<f64>) {
        match self {
            IntensityFunction::Constant { .. } => {}
            IntensityFunction::Piecewise(p) => p.breakpoints_into(s, e, 0.0, out),
            IntensityFunction::Recurrent(r) => r.breakpoints_into(s, e, out),
            IntensityFunction::Sum(parts) => parts.iter().for_each(|p| p.collect_breakpoints(s, e, out)),
        }
    }

    /// Earliest `t ≥ s` with `Λ(s, t) = target`, or `None` when the target is
    /// not reached before `horizon` (or ever, for bounded total intensity).
    pub fn invert(&self, s: f64, target: f64, horizon: Option<f64>) -> Result<Option<f64>> {
        if !s.is_finite() || !target.is_finite() {
            return Err(IntensityError::NonFinite);
        }
        if target <= 0.0 {
            return Ok(Some(s));
        }
        let hit = match self {
            IntensityFunction::Constant { rate } => (*rate > 0.0).then(|| s + target / rate),
            IntensityFunction::Recurrent(r) => r.solve(s, target),
            IntensityFunction::Piecewise(p) => {
                p.check_domain(s, s)?;
                p.solve_cumulative(p.cumulative_at(s) + target).map(|t| t.max(s))
            }
            IntensityFunction::Sum(_) => self.invert_generic(s, target, horizon)?,
        };
        Ok(match (hit, horizon) {
            (Some(t), Some(h)) if t > h => None,
            (hit, _) => hit,
        })
    }

    fn invert_generic(&self, s: f64, target: f64, horizon: Option<f64>) -> Result<Option<f64>> {
        let limit = match (horizon, self.domain()) {
            (Some(h), Some((_, b))) => h.min(b),
            (Some(h), None) => h,
            (None, Some((_, b))) => b,
            (None, None) => s + 1e9,
        };
        if limit <= s || self.integrate(s, limit)? < target {
            return Ok(None);
        }
        let rate = self.eval(s);
        let mut step = if rate > 0.0 { target / rate } else { 1.0 };
        let mut lo = s;
        let mut hi = (s + step).min(limit);
        while self.integrate(s, hi)? < target {
            lo = hi;
            step *= 2.0;
            hi = (hi + step).min(limit);
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let fx = self.integrate(s, x)? - target;
            if fx > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            if hi - lo <= 1e-12 * (1.0 + x.abs()) {
                break;
            }
            let d = self.eval(x);
            let newton = x - fx / d;
            x = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        Ok(Some(hi))
    }

    /// Returns `α` with `self = α · other` when the proportionality can be
    /// established structurally.
    pub fn proportional_factor(&self, other: &IntensityFunction) -> Option<f64> {
        if self.is_zero() {
            return Some(0.0);
        }
        match (self, other) {
            (IntensityFunction::Constant { rate: a }, IntensityFunction::Constant { rate: b }) if *b > 0.0 => {
                Some(a / b)
            }
            (IntensityFunction::Recurrent(a), IntensityFunction::Recurrent(b))
                if (a.period - b.period).abs() <= 1e-12 * a.period =>
            {
                a.base.ratio_to(&b.base)
            }
            (IntensityFunction::Piecewise(a), IntensityFunction::Piecewise(b)) => a.ratio_to(b),
            _ => None,
        }
    }

    /// Average rate over `[s, e]`.
    pub fn mean_rate(&self, s: f64, e: f64) -> Result<f64> {
        if e <= s {
            return Ok(self.eval(s));
        }
        Ok(self.integrate(s, e)? / (e - s))
    }
}

// ---------------------------------------------------------------------------
// JSON form

/// A time inside a segment definition: fractional days, or `"DOW HH:MM"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeSpec {
    Days(f64),
    Phase(String),
}

impl TimeSpec {
    fn resolve(&self) -> Result<f64> {
        match self {
            TimeSpec::Days(d) => Ok(*d),
            TimeSpec::Phase(p) => Ok(calendar::parse_phase(p)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub start: TimeSpec,
    pub end: TimeSpec,
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IntensitySpec {
    Constant {
        rate: f64,
    },
    Piecewise {
        segments: Vec<SegmentSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_degree: Option<usize>,
    },
    Recurrent {
        period_days: f64,
        segments: Vec<SegmentSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_degree: Option<usize>,
    },
    Sum {
        terms: Vec<IntensitySpec>,
    },
}

fn resolve_segments(specs: &[SegmentSpec], period: Option<f64>) -> Result<Vec<Segment>> {
    specs
        .iter()
        .map(|s| {
            let start = s.start.resolve()?;
            let mut end = s.end.resolve()?;
            if let Some(p) = period {
                // "Mon 00:00" as an end point means the end of the cycle
                if end == 0.0 && start > 0.0 {
                    end = p;
                }
            }
            Ok(Segment::new(start, end, s.coeffs.clone()))
        })
        .collect()
}

impl TryFrom<IntensitySpec> for IntensityFunction {
    type Error = IntensityError;

    fn try_from(spec: IntensitySpec) -> Result<Self> {
        match spec {
            IntensitySpec::Constant { rate } => IntensityFunction::constant(rate),
            IntensitySpec::Piecewise { segments, max_degree } => Ok(IntensityFunction::Piecewise(
                PiecewisePolynomial::with_max_degree(
                    resolve_segments(&segments, None)?,
                    max_degree.unwrap_or(DEFAULT_MAX_DEGREE),
                )?,
            )),
            IntensitySpec::Recurrent {
                period_days,
                segments,
                max_degree,
            } => Ok(IntensityFunction::Recurrent(Recurrent::with_max_degree(
                period_days,
                resolve_segments(&segments, Some(period_days))?,
                max_degree.unwrap_or(DEFAULT_MAX_DEGREE),
            )?)),
            IntensitySpec::Sum { terms } => {
                let parts = terms
                    .into_iter()
                    .map(IntensityFunction::try_from)
                    .collect::<Result<Vec<_>>>()?;
                IntensityFunction::sum(&parts)
            }
        }
    }
}

fn segment_specs(p: &PiecewisePolynomial) -> Vec<SegmentSpec> {
    p.segments
        .iter()
        .map(|s| SegmentSpec {
            start: TimeSpec::Days(s.start),
            end: TimeSpec::Days(s.end),
            coeffs: s.coeffs.clone(),
        })
        .collect()
}

impl From<IntensityFunction> for IntensitySpec {
    fn from(f: IntensityFunction) -> Self {
        match f {
            IntensityFunction::Constant { rate } => IntensitySpec::Constant { rate },
            IntensityFunction::Piecewise(p) => IntensitySpec::Piecewise {
                max_degree: (p.max_degree() > DEFAULT_MAX_DEGREE).then(|| p.max_degree()),
                segments: segment_specs(&p),
            },
            IntensityFunction::Recurrent(r) => IntensitySpec::Recurrent {
                period_days: r.period,
                max_degree: (r.base.max_degree() > DEFAULT_MAX_DEGREE).then(|| r.base.max_degree()),
                segments: segment_specs(&r.base),
            },
            IntensityFunction::Sum(parts) => IntensitySpec::Sum {
                terms: parts.into_iter().map(IntensitySpec::from).collect(),
            },
        }
    }
}
