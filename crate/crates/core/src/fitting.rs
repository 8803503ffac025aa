//! Estimating insertion processes from event logs and checking the fit.
//!
//! The validation rests on time rescaling: if events follow a Poisson
//! process with intensity `λ`, the rescaled gaps `Λ(t_{n-1}, t_n)` are
//! independent unit exponentials, so a Kolmogorov–Smirnov test against
//! `Exp(1)` checks the model. Batch sizes are checked separately by testing
//! that runs of single-tuple events between multi-tuple events are geometric.

use crate::calendar::{self, CalendarError, Epoch};
use crate::intensity::{IntensityError, IntensityFunction, Segment};
use crate::stochastic::{BatchDistribution, StochasticError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use thiserror::Error;

/// Asymptotic Kolmogorov–Smirnov critical values `X(α)`; the rejection
/// threshold for a sample of size `n` is `X(α) / √n`.
pub const KS_CRITICAL: [(f64, f64); 4] = [(0.1, 1.22), (0.05, 1.36), (0.01, 1.63), (0.005, 1.73)];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} events, got {got}")]
    TooFewEvents { needed: usize, got: usize },
    #[error("block {0} has no exposure inside the fitting horizon")]
    EmptyBlockDuration(usize),
    #[error("empty sample")]
    EmptySample,
    #[error("log contains no multi-tuple events")]
    NoMultiEvents,
    #[error("invalid segmentation: {0}")]
    BadSegmentation(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: timestamps must be nondecreasing")]
    NonMonotonic { line: usize },
    #[error("batching window must be positive, got {0}")]
    BadWindow(f64),
    #[error("I/O error: {0}")]
    Io(String),
    #[error(transparent)]
    Calendar(#[from] CalendarError),
    #[error(transparent)]
    Intensity(#[from] IntensityError),
    #[error(transparent)]
    Stochastic(#[from] StochasticError),
}

pub type Result<T> = std::result::Result<T, FitError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    #[default]
    Insert,
    Delete,
    Modify,
}

impl Op {
    pub fn as_str(&self) -> &'static str {
        match self {
            Op::Insert => "insert",
            Op::Delete => "delete",
            Op::Modify => "modify",
        }
    }

    fn parse(text: &str) -> Option<Op> {
        match text.trim().to_ascii_lowercase().as_str() {
            "" | "insert" | "i" => Some(Op::Insert),
            "delete" | "d" => Some(Op::Delete),
            "modify" | "m" | "update" => Some(Op::Modify),
            _ => None,
        }
    }
}

/// One logged event in model days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub count: u32,
    pub op: Op,
}

/// Time-ordered events.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<Event>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    timestamp: String,
    #[serde(default)]
    count: Option<String>,
    #[serde(default)]
    op: Option<String>,
}

impl EventLog {
    pub fn new(events: Vec<Event>) -> Result<Self> {
        for (i, w) in events.windows(2).enumerate() {
            if w[1].time < w[0].time {
                return Err(FitError::NonMonotonic { line: i + 2 });
            }
        }
        Ok(Self { events, source: None })
    }

    /// Unit insertions at the given times.
    pub fn from_times(times: &[f64]) -> Result<Self> {
        Self::new(
            times
                .iter()
                .map(|&time| Event {
                    time,
                    count: 1,
                    op: Op::Insert,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.time).collect()
    }

    /// First and last event time.
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.events.first()?.time, self.events.last()?.time))
    }

    /// Events of one kind.
    pub fn only(&self, op: Op) -> EventLog {
        EventLog {
            events: self.events.iter().filter(|e| e.op == op).copied().collect(),
            source: self.source.clone(),
        }
    }

    /// Splits every `count = k` row into `k` unit rows at the same instant.
    pub fn expand(&self) -> EventLog {
        let events = self
            .events
            .iter()
            .flat_map(|e| std::iter::repeat_n(Event { count: 1, ..*e }, e.count as usize))
            .collect();
        EventLog {
            events,
            source: self.source.clone(),
        }
    }

    /// Reads `timestamp,count,op` CSV with ISO-8601 timestamps. `count`
    /// defaults to 1 and `op` to `insert`.
    pub fn read_csv<R: Read>(reader: R, epoch: &Epoch) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
        let mut events = Vec::new();
        for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| FitError::Parse {
                line,
                message: e.to_string(),
            })?;
            let time = epoch.parse(&row.timestamp).map_err(|e| FitError::Parse {
                line,
                message: e.to_string(),
            })?;
            let count = match row.count.as_deref().map(str::trim) {
                None | Some("") => 1,
                Some(c) => c.parse::<u32>().ok().filter(|c| *c >= 1).ok_or_else(|| FitError::Parse {
                    line,
                    message: format!("count `{c}` must be a positive integer"),
                })?,
            };
            let op_text = row.op.unwrap_or_default();
            let op = Op::parse(&op_text).ok_or_else(|| FitError::Parse {
                line,
                message: format!("unknown op `{op_text}`"),
            })?;
            if let Some(prev) = events.last().map(|e: &Event| e.time) {
                if time < prev {
                    return Err(FitError::NonMonotonic { line });
                }
            }
            events.push(Event { time, count, op });
        }
        Ok(Self { events, source: None })
    }

    pub fn write_csv<W: Write>(&self, writer: W, epoch: &Epoch) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| FitError::Io(e.to_string());
        w.write_record(["timestamp", "count", "op"]).map_err(io)?;
        for e in &self.events {
            w.write_record([epoch.format(e.time), e.count.to_string(), e.op.as_str().to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| FitError::Io(e.to_string()))
    }
}

/// Merges events of the same kind whose gap to the previous event of that
/// kind is below `window` (days). A cluster keeps its first arrival time
/// and the total count.
pub fn batch_events(log: &EventLog, window: f64) -> Result<EventLog> {
    if !(window > 0.0) {
        return Err(FitError::BadWindow(window));
    }
    let mut open: BTreeMap<Op, (usize, f64)> = BTreeMap::new();
    let mut out: Vec<Event> = Vec::with_capacity(log.events.len());
    for e in &log.events {
        match open.get_mut(&e.op) {
            Some((idx, last)) if e.time - *last < window => {
                out[*idx].count += e.count;
                *last = e.time;
            }
            _ => {
                out.push(*e);
                open.insert(e.op, (out.len() - 1, e.time));
            }
        }
    }
    Ok(EventLog {
        events: out,
        source: log.source.clone(),
    })
}

fn require(log: &EventLog, needed: usize) -> Result<()> {
    if log.len() < needed {
        return Err(FitError::TooFewEvents {
            needed,
            got: log.len(),
        });
    }
    Ok(())
}

/// Reciprocal of the mean interarrival time, in events per day.
pub fn fit_homogeneous(log: &EventLog) -> Result<f64> {
    require(log, 2)?;
    let (a, b) = log.span().expect("nonempty");
    let mean_gap = (b - a) / (log.len() - 1) as f64;
    if mean_gap <= 0.0 {
        return Err(FitError::TooFewEvents {
            needed: 2,
            got: 1,
        });
    }
    Ok(1.0 / mean_gap)
}

/// Weekly blocks, each a set of weekdays and an hour range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    /// Weekdays (`"Mon-Fri"`, `"Sat"`, `"Mon,Wed"`).
    pub days: String,
    pub start: String,
    pub end: String,
}

/// A partition of the week into blocks sharing one rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SegmentationFile", into = "SegmentationFile")]
pub struct SegmentationSpec {
    blocks: Vec<Block>,
    /// `(start, end, block)` intervals in days from Monday 00:00, sorted.
    intervals: Vec<(f64, f64, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SegmentationFile {
    blocks: Vec<Block>,
}

impl TryFrom<SegmentationFile> for SegmentationSpec {
    type Error = FitError;
    fn try_from(f: SegmentationFile) -> Result<Self> {
        SegmentationSpec::new(f.blocks)
    }
}

impl From<SegmentationSpec> for SegmentationFile {
    fn from(s: SegmentationSpec) -> Self {
        SegmentationFile { blocks: s.blocks }
    }
}

fn weekdays(text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once('-') {
            let (mut d, b) = (calendar::parse_weekday(a)?, calendar::parse_weekday(b)?);
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

impl SegmentationSpec {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        let mut intervals = Vec::new();
        for (k, b) in blocks.iter().enumerate() {
            let start = calendar::parse_time_of_day(&b.start)?;
            let end = calendar::parse_time_of_day(&b.end)?;
            if end <= start {
                return Err(FitError::BadSegmentation(format!("block {k} ends before it starts")));
            }
            for d in weekdays(&b.days)? {
                intervals.push((d as f64 + start, d as f64 + end, k));
            }
        }
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cursor = 0.0;
        for &(a, b, _) in &intervals {
            if (a - cursor).abs() > 1e-9 {
                let what = if a > cursor { "gap" } else { "overlap" };
                return Err(FitError::BadSegmentation(format!("{what} at day {cursor:.4}")));
            }
            cursor = b;
        }
        if (cursor - 7.0).abs() > 1e-9 {
            return Err(FitError::BadSegmentation("blocks do not cover the whole week".into()));
        }
        Ok(Self { blocks, intervals })
    }

    /// Six workday blocks split at 03, 06, 09, 18 and 21 h, then Saturday
    /// and Sunday.
    pub fn weekly_default() -> Self {
        let hours = ["00:00", "03:00", "06:00", "09:00", "18:00", "21:00", "24:00"];
        let mut blocks: Vec<Block> = hours
            .windows(2)
            .map(|w| Block {
                days: "Mon-Fri".into(),
                start: w[0].into(),
                end: w[1].into(),
            })
            .collect();
        for day in ["Sat", "Sun"] {
            blocks.push(Block {
                days: day.into(),
                start: "00:00".into(),
                end: "24:00".into(),
            });
        }
        Self::new(blocks).expect("default segmentation partitions the week")
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn intervals(&self) -> &[(f64, f64, usize)] {
        &self.intervals
    }

    /// Block containing model time `t`.
    pub fn block_of(&self, t: f64) -> usize {
        let phase = calendar::weekly_phase(t);
        let i = self.intervals.partition_point(|iv| iv.1 <= phase);
        self.intervals[i.min(self.intervals.len() - 1)].2
    }

    /// Weekly intensity with one rate per block.
    pub fn intensity(&self, rates: &[f64]) -> Result<IntensityFunction> {
        let segments = self
            .intervals
            .iter()
            .map(|&(a, b, k)| Segment::constant(a, b, rates[k]))
            .collect();
        Ok(IntensityFunction::recurrent(7.0, segments)?)
    }

    /// Total time spent in each block over `[start, end]`.
    pub fn exposure(&self, start: f64, end: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.blocks.len()];
        for (k, slot) in out.iter_mut().enumerate() {
            let indicator: Vec<f64> = (0..self.blocks.len()).map(|j| if j == k { 1.0 } else { 0.0 }).collect();
            *slot = self.intensity(&indicator)?.integrate(start, end)?;
        }
        Ok(out)
    }
}

/// Per-block event counts divided by per-block exposure over `horizon`
/// (defaults to the span of the log).
pub fn fit_rpc(log: &EventLog, seg: &SegmentationSpec, horizon: Option<(f64, f64)>) -> Result<IntensityFunction> {
    Ok(seg.intensity(&fit_rpc_rates(log, seg, horizon)?)?)
}

/// The block rates behind [`fit_rpc`].
pub fn fit_rpc_rates(log: &EventLog, seg: &SegmentationSpec, horizon: Option<(f64, f64)>) -> Result<Vec<f64>> {
    let (start, end) = match horizon {
        Some(h) => h,
        None => {
            require(log, 2)?;
            log.span().expect("nonempty")
        }
    };
    let exposure = seg.exposure(start, end)?;
    let mut counts = vec![0.0; exposure.len()];
    for e in log.events.iter().filter(|e| e.time >= start && e.time <= end) {
        counts[seg.block_of(e.time)] += 1.0;
    }
    counts
        .iter()
        .zip(&exposure)
        .enumerate()
        .map(|(k, (c, x))| if *x > 0.0 { Ok(c / x) } else { Err(FitError::EmptyBlockDuration(k)) })
        .collect()
}

/// Empirical distribution of event sizes.
pub fn fit_batch_distribution(log: &EventLog) -> Result<BatchDistribution> {
    if log.is_empty() {
        return Err(FitError::EmptySample);
    }
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    for e in &log.events {
        *counts.entry(e.count).or_insert(0) += 1;
    }
    let pairs: Vec<(u32, u64)> = counts.into_iter().collect();
    Ok(BatchDistribution::from_counts(&pairs)?)
}

/// `u_n = Λ(t_{n-1}, t_n)` for consecutive events.
pub fn rescale_interarrivals(log: &EventLog, intensity: &IntensityFunction) -> Result<Vec<f64>> {
    require(log, 2)?;
    log.events
        .windows(2)
        .map(|w| Ok(intensity.integrate(w[0].time, w[1].time)?))
        .collect()
}

/// Outcome of a Kolmogorov–Smirnov test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub n: usize,
    /// `(α, X(α)/√n, rejected)` for each tabulated level.
    pub levels: Vec<(f64, f64, bool)>,
}

impl KsResult {
    fn new(statistic: f64, n: usize) -> Self {
        let levels = KS_CRITICAL
            .iter()
            .map(|&(alpha, x)| {
                let t = ks_threshold(x, n);
                (alpha, t, statistic > t)
            })
            .collect();
        Self { statistic, n, levels }
    }

    pub fn threshold(&self, alpha: f64) -> Option<f64> {
        self.levels.iter().find(|l| (l.0 - alpha).abs() < 1e-12).map(|l| l.1)
    }

    pub fn rejects(&self, alpha: f64) -> Option<bool> {
        self.levels.iter().find(|l| (l.0 - alpha).abs() < 1e-12).map(|l| l.2)
    }

    /// Smallest tabulated level at which the model is rejected.
    pub fn rejection_level(&self) -> Option<f64> {
        self.levels
            .iter()
            .filter(|l| l.2)
            .map(|l| l.0)
            .fold(None, |acc: Option<f64>, a| Some(acc.map_or(a, |b| b.min(a))))
    }
}

/// `X / √n`.
pub fn ks_threshold(x: f64, n: usize) -> f64 {
    x / (n as f64).sqrt()
}

/// Critical value `X(α)` from the built-in table.
pub fn ks_critical(alpha: f64) -> Option<f64> {
    KS_CRITICAL.iter().find(|(a, _)| (a - alpha).abs() < 1e-12).map(|(_, x)| *x)
}

/// Two-sided statistic against a continuous cdf.
pub fn ks_test<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<KsResult> {
    if sample.is_empty() {
        return Err(FitError::EmptySample);
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let k = (i + 1) as f64;
            (k / n - f).abs().max((f - (k - 1.0) / n).abs())
        })
        .fold(0.0, f64::max);
    Ok(KsResult::new(d, xs.len()))
}

/// Two-sided statistic for a sample on `{0, 1, 2, ...}`: both the empirical
/// and the model cdf are step functions, so the supremum is taken over the
/// integers.
pub fn ks_test_discrete<F: Fn(u64) -> f64>(sample: &[u64], cdf: F) -> Result<KsResult> {
    if sample.is_empty() {
        return Err(FitError::EmptySample);
    }
    let mut xs = sample.to_vec();
    xs.sort_unstable();
    let n = xs.len() as f64;
    let max = *xs.last().expect("nonempty");
    let mut d: f64 = 0.0;
    let mut idx = 0;
    for k in 0..=max {
        while idx < xs.len() && xs[idx] <= k {
            idx += 1;
        }
        d = d.max((idx as f64 / n - cdf(k)).abs());
    }
    Ok(KsResult::new(d, xs.len()))
}

/// Number of single-tuple events preceding each multi-tuple event.
pub fn singleton_runs(log: &EventLog) -> Vec<u64> {
    let mut runs = Vec::new();
    let mut current = 0;
    for e in &log.events {
        if e.count > 1 {
            runs.push(current);
            current = 0;
        } else {
            current += 1;
        }
    }
    runs
}

/// Tests that batch sizes are independent: run lengths of single-tuple
/// events should be geometric on `{0, 1, ...}` with
/// `P(K ≤ k) = 1 - p^{k+1}`, `p` the share of single-tuple events.
pub fn runs_test(log: &EventLog) -> Result<KsResult> {
    let runs = singleton_runs(log);
    if runs.is_empty() {
        return Err(FitError::NoMultiEvents);
    }
    let singles = log.events.iter().filter(|e| e.count == 1).count();
    let p = singles as f64 / log.len() as f64;
    ks_test_discrete(&runs, |k| 1.0 - p.powi(k as i32 + 1))
}

/// Shape of the fitted insertion intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Homogeneous,
    Rpc,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Homogeneous => "homogeneous",
            Variant::Rpc => "rpc",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = FitError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "homogeneous" | "hpp" => Ok(Variant::Homogeneous),
            "rpc" | "recurrent" | "piecewise" => Ok(Variant::Rpc),
            other => Err(FitError::BadSegmentation(format!("unknown variant `{other}`"))),
        }
    }
}

/// An insertion model fitted to a log together with its goodness of fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub variant: Variant,
    /// Events are batches of tuples rather than single tuples.
    pub compound: bool,
    pub intensity: IntensityFunction,
    pub batch: BatchDistribution,
    pub ks: KsResult,
}

impl FittedModel {
    /// Display name such as `rpc+batch`.
    pub fn name(&self) -> String {
        if self.compound {
            format!("{}+batch", self.variant.as_str())
        } else {
            self.variant.as_str().to_string()
        }
    }
}

/// Options shared by every fitted variant.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Batching window in days for compound variants.
    pub window: f64,
    pub segmentation: SegmentationSpec,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            window: 60.0 / calendar::SECONDS_PER_DAY,
            segmentation: SegmentationSpec::weekly_default(),
        }
    }
}

fn prepare(log: &EventLog, compound: bool, window: f64) -> Result<EventLog> {
    if compound {
        batch_events(log, window)
    } else {
        Ok(log.expand())
    }
}

/// Fits one variant on `train` and tests it by time rescaling on `test`
/// (or on `train` itself). Plain variants treat every tuple as an arrival;
/// compound variants first merge arrivals closer than the window.
pub fn fit_variant(
    train: &EventLog,
    test: Option<&EventLog>,
    variant: Variant,
    compound: bool,
    options: &FitOptions,
) -> Result<FittedModel> {
    let fit_log = prepare(train, compound, options.window)?;
    let intensity = match variant {
        Variant::Homogeneous => IntensityFunction::constant(fit_homogeneous(&fit_log)?)?,
        Variant::Rpc => fit_rpc(&fit_log, &options.segmentation, None)?,
    };
    let batch = if compound {
        fit_batch_distribution(&fit_log)?
    } else {
        BatchDistribution::unit()
    };
    let test_log = match test {
        Some(t) => prepare(t, compound, options.window)?,
        None => fit_log,
    };
    let sample = rescale_interarrivals(&test_log, &intensity)?;
    let ks = ks_test(&sample, |x| if x <= 0.0 { 0.0 } else { -(-x).exp_m1() })?;
    Ok(FittedModel {
        variant,
        compound,
        intensity,
        batch,
        ks,
    })
}

/// The four-way comparison: homogeneous and weekly-block intensities, each
/// with and without batching.
pub fn goodness_of_fit(train: &EventLog, test: Option<&EventLog>, options: &FitOptions) -> Result<Vec<FittedModel>> {
    let mut out = Vec::new();
    for variant in [Variant::Homogeneous, Variant::Rpc] {
        for compound in [false, true] {
            out.push(fit_variant(train, test, variant, compound, options)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batching_merges_close_arrivals() {
        let e = Epoch::default();
        let times: Vec<f64> = ["2000-11-14T13:43:19Z", "2000-11-14T13:43:23Z", "2000-11-14T13:43:23Z"]
            .iter()
            .map(|s| e.parse(s).unwrap())
            .collect();
        let log = EventLog::from_times(&times).unwrap();
        let b = batch_events(&log, 60.0 / 86400.0).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.events[0].count, 3);
        assert_eq!(e.format(b.events[0].time), "2000-11-14T13:43:19Z");
        let spread = EventLog::from_times(&[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(batch_events(&spread, 0.5).unwrap(), spread);
        assert!(matches!(batch_events(&spread, 0.0), Err(FitError::BadWindow(_))));
    }

    #[test]
    fn homogeneous_from_mean_gap() {
        let gap = calendar::parse_hms("5:15:19").unwrap();
        let log = EventLog::from_times(&(0..10).map(|i| i as f64 * gap).collect::<Vec<_>>()).unwrap();
        let rate = fit_homogeneous(&log).unwrap();
        assert_eq!(format!("{rate:.2}"), "4.57");
        let gap = calendar::parse_hms("5:28:20").unwrap();
        let log = EventLog::from_times(&(0..10).map(|i| i as f64 * gap).collect::<Vec<_>>()).unwrap();
        assert_eq!(format!("{:.2}", fit_homogeneous(&log).unwrap()), "4.39");
        assert!(matches!(
            fit_homogeneous(&EventLog::from_times(&[1.0]).unwrap()),
            Err(FitError::TooFewEvents { .. })
        ));
    }

    #[test]
    fn empty_block_rate_is_zero() {
        let seg = SegmentationSpec::weekly_default();
        // all events fall on Tuesday noon
        let times: Vec<f64> = (0..4).map(|w| 1.5 + 7.0 * w as f64).collect();
        let rates = fit_rpc_rates(&EventLog::from_times(&times).unwrap(), &seg, Some((0.0, 28.0))).unwrap();
        assert_eq!(rates[6], 0.0);
        assert!((rates[3] - 4.0 / (4.0 * 5.0 * 9.0 / 24.0)).abs() < 1e-12);
    }

    #[test]
    fn segmentation_validation() {
        let bad = SegmentationSpec::new(vec![Block {
            days: "Mon-Sun".into(),
            start: "00:00".into(),
            end: "12:00".into(),
        }]);
        assert!(matches!(bad, Err(FitError::BadSegmentation(_))));
        let seg = SegmentationSpec::weekly_default();
        assert_eq!(seg.block_of(1.0 + 10.0 / 24.0), 3);
        assert_eq!(seg.block_of(6.2), 7);
        let json = serde_json::to_string(&seg).unwrap();
        assert_eq!(serde_json::from_str::<SegmentationSpec>(&json).unwrap(), seg);
    }

    #[test]
    fn batch_distribution_counts() {
        let mut events = Vec::new();
        for (size, n) in [(1u32, 536), (2, 19), (3, 2)] {
            for _ in 0..n {
                events.push(Event {
                    time: 0.0,
                    count: size,
                    op: Op::Insert,
                });
            }
        }
        let b = fit_batch_distribution(&EventLog::new(events).unwrap()).unwrap();
        assert!((b.probability(1) - 0.962).abs() < 5e-4);
        assert!((b.probability(2) - 0.034).abs() < 5e-4);
        assert!((b.probability(3) - 0.004).abs() < 5e-4);
    }

    #[test]
    fn rescaling_constant_rate() {
        let log = EventLog::from_times(&[0.0, 0.5, 1.25]).unwrap();
        let u = rescale_interarrivals(&log, &IntensityFunction::constant(2.0).unwrap()).unwrap();
        assert_eq!(u, vec![1.0, 1.5]);
    }

    #[test]
    fn ks_hand_enumeration() {
        // sample at the (k/(n+1)) quantiles of U(0,1), n = 9
        let xs: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
        let r = ks_test(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        let mut want: f64 = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let k = (i + 1) as f64;
            want = want.max((k / 9.0 - x).abs()).max((x - (k - 1.0) / 9.0).abs());
        }
        assert!((r.statistic - want).abs() < 1e-15);
        assert!((r.statistic - 0.1).abs() < 1e-12);
        assert!(matches!(ks_test(&[], |x| x), Err(FitError::EmptySample)));
    }

    #[test]
    fn thresholds() {
        assert!((ks_threshold(ks_critical(0.005).unwrap(), 580) - 0.0718).abs() < 1e-4);
        assert!((ks_threshold(ks_critical(0.1).unwrap(), 557) - 0.0517).abs() < 1e-4);
    }

    #[test]
    fn runs_need_multi_events() {
        let log = EventLog::from_times(&[0.0, 1.0, 2.0]).unwrap();
        assert!(matches!(runs_test(&log), Err(FitError::NoMultiEvents)));
        let sizes = [1, 1, 2, 3, 1, 1, 1, 2, 1];
        let events = sizes
            .iter()
            .enumerate()
            .map(|(i, &c)| Event {
                time: i as f64,
                count: c,
                op: Op::Insert,
            })
            .collect();
        assert_eq!(singleton_runs(&EventLog::new(events).unwrap()), vec![2, 0, 3]);
    }

    #[test]
    fn csv_round_trip() {
        let text = "timestamp,count,op\n2000-01-03T00:00:00Z,,\n2000-01-03T06:00:00Z,2,delete\n";
        let e = Epoch::default();
        let log = EventLog::read_csv(text.as_bytes(), &e).unwrap();
        assert_eq!(log.events[0], Event { time: 0.0, count: 1, op: Op::Insert });
        assert_eq!(log.events[1], Event { time: 0.25, count: 2, op: Op::Delete });
        let mut buf = Vec::new();
        log.write_csv(&mut buf, &e).unwrap();
        assert_eq!(EventLog::read_csv(buf.as_slice(), &e).unwrap(), log);
        let bad = "timestamp,count,op\n2000-01-04T00:00:00Z,1,insert\n2000-01-03T00:00:00Z,1,insert\n";
        assert!(matches!(EventLog::read_csv(bad.as_bytes(), &e), Err(FitError::NonMonotonic { line: 3 })));
    }
}
