use crate::error::{csv_err, io, CliError, Result};
use crate::model::{FitRecord, GofRow, ModelFile, GOF_HEADER};
use crate::{FitArgs, Global, PolicyEvalArgs, PredictArgs, SimulateArgs, ValidateArgs, VariantArg, What};
use chrono::{DateTime, Utc};
use relevo::calendar::{self, Epoch, SECONDS_PER_DAY};
use relevo::evolution::{Database, RelationModel};
use relevo::fitting::{self, EventLog, FitOptions, FittedModel, KsResult, Op, SegmentationSpec, Variant};
use relevo::policy::{self, EvaluationMode, Evaluated, Policy, PolicyKind};
use relevo::simulator::{self, Estimate, Query, SimConfig};
use relevo::IntensityFunction;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Files are rendered in memory first and only written once every output
/// of the command is ready.
struct Outputs<'a> {
    global: &'a Global,
    files: Vec<(String, Vec<u8>)>,
}

impl<'a> Outputs<'a> {
    fn new(global: &'a Global) -> Self {
        Self { global, files: Vec::new() }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn write(self) -> Result<Vec<PathBuf>> {
        let dir = &self.global.out_dir;
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let mut written = Vec::new();
        for (name, bytes) in self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(io(&path))?;
            if !self.global.quiet {
                eprintln!("wrote {}", path.display());
            }
            written.push(path);
        }
        Ok(written)
    }
}

fn echo(global: &Global, bytes: &[u8]) {
    if !global.quiet {
        print!("{}", String::from_utf8_lossy(bytes));
    }
}

fn read_log(path: &Path, epoch: &Epoch) -> Result<EventLog> {
    let file = std::fs::File::open(path).map_err(io(path))?;
    let mut log = EventLog::read_csv(std::io::BufReader::new(file), epoch)?;
    log.source = Some(path.display().to_string());
    Ok(log)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn segmentation(path: Option<&Path>, fallback: Option<&SegmentationSpec>) -> Result<SegmentationSpec> {
    match (path, fallback) {
        (Some(p), _) => read_json(p),
        (None, Some(s)) => Ok(s.clone()),
        (None, None) => Ok(SegmentationSpec::weekly_default()),
    }
}

fn check_epoch(epoch: &Epoch) -> Result<()> {
    if epoch.weekly_offset() != 0.0 {
        return Err(CliError::InvalidArgument(format!(
            "epoch {} must fall on a Monday at 00:00 UTC so weekly blocks line up",
            epoch.origin
        )));
    }
    Ok(())
}

fn parse_instant(text: &str) -> Result<DateTime<Utc>> {
    Ok(calendar::parse_timestamp(text)?)
}

fn csv_bytes<F>(header: &[&str], fill: F) -> std::result::Result<Vec<u8>, csv::Error>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> std::result::Result<(), csv::Error>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    fill(&mut w)?;
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable output");
    bytes.push(b'\n');
    bytes
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// fit

/// Variants in order of increasing complexity.
fn gof_rows(models: &[FittedModel]) -> Vec<GofRow> {
    let mut rows: Vec<GofRow> = models
        .iter()
        .map(|m| GofRow {
            model: m.name(),
            variant: m.variant,
            compound: m.compound,
            n: m.ks.n,
            statistic: m.ks.statistic,
            threshold_05: m.ks.threshold(0.05).unwrap_or(f64::NAN),
            rejected_05: m.ks.rejects(0.05).unwrap_or(true),
            rejection_level: m.ks.rejection_level(),
            best: false,
        })
        .collect();
    // the simplest variant that survives the 5% test; failing that, the
    // smallest statistic
    let pick = rows.iter().position(|r| !r.rejected_05).or_else(|| {
        rows.iter()
            .enumerate()
            .min_by(|a, b| a.1.statistic.total_cmp(&b.1.statistic))
            .map(|(i, _)| i)
    });
    if let Some(i) = pick {
        rows[i].best = true;
    }
    rows
}

fn gof_csv(rows: &[GofRow]) -> std::result::Result<Vec<u8>, csv::Error> {
    csv_bytes(&GOF_HEADER, |w| {
        for r in rows {
            w.write_record([
                r.model.clone(),
                r.variant.as_str().to_string(),
                r.compound.to_string(),
                r.n.to_string(),
                num(r.statistic),
                num(r.threshold_05),
                r.rejected_05.to_string(),
                opt_num(r.rejection_level),
                r.best.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn fit(global: &Global, args: &FitArgs) -> Result<()> {
    if !(args.window > 0.0 && args.window.is_finite()) {
        return Err(CliError::InvalidArgument(format!("--window must be positive, got {}", args.window)));
    }
    let epoch = Epoch::default();
    let train = read_log(&args.log, &epoch)?.only(Op::Insert);
    if train.len() < 2 {
        return Err(CliError::EmptyLog(args.log.clone()));
    }
    let test = match &args.test {
        Some(p) => {
            let t = read_log(p, &epoch)?.only(Op::Insert);
            if t.len() < 2 {
                return Err(CliError::EmptyLog(p.clone()));
            }
            Some(t)
        }
        None => None,
    };
    let options = FitOptions {
        window: args.window / SECONDS_PER_DAY,
        segmentation: segmentation(args.segments.as_deref(), None)?,
    };
    let models = fitting::goodness_of_fit(&train, test.as_ref(), &options)?;
    let variant = match args.variant {
        VariantArg::Homogeneous => Variant::Homogeneous,
        VariantArg::Rpc => Variant::Rpc,
    };
    let chosen = models
        .iter()
        .find(|m| m.variant == variant && m.compound == args.compound)
        .expect("all four variants are fitted");
    let rows = gof_rows(&models);
    let (first, last) = train.span().expect("at least two events");
    let mut relation = RelationModel::new(&args.relation, chosen.intensity.clone(), IntensityFunction::zero(), args.cardinality);
    relation.batch = chosen.batch.clone();
    let model = ModelFile {
        epoch: epoch.origin,
        as_of: epoch.from_days(last),
        relation: args.relation.clone(),
        database: Database::single(relation)?,
        cost: None,
        fit: Some(FitRecord {
            variant,
            compound: args.compound,
            window_seconds: args.window,
            segmentation: options.segmentation.clone(),
            first_event: epoch.from_days(first),
            last_event: epoch.from_days(last),
            events: train.len(),
            goodness_of_fit: rows.clone(),
        }),
    };
    let table = gof_csv(&rows).map_err(csv_err(Path::new("gof.csv")))?;
    let mut out = Outputs::new(global);
    out.add("model.json", model.to_json().into_bytes());
    out.add("gof.csv", table.clone());
    out.write()?;
    echo(global, &table);
    Ok(())
}

// ---------------------------------------------------------------------------
// predict

pub const PREDICT_HEADER: [&str; 8] = ["at", "relation", "quantity", "attribute", "value", "analytic", "mc_mean", "mc_std_error"];

struct Prediction {
    quantity: &'static str,
    attribute: String,
    value: String,
    analytic: f64,
    query: Query,
    mc: Option<Estimate>,
}

pub fn predict(global: &Global, args: &PredictArgs) -> Result<()> {
    let model = ModelFile::read(&args.model)?;
    let epoch = model.epoch();
    check_epoch(&epoch)?;
    let s = model.as_of_days();
    let at = parse_instant(&args.at)?;
    let f = epoch.to_days(at);
    if f < s {
        return Err(CliError::InvalidArgument(format!(
            "--at {} precedes the model's as_of {}",
            args.at,
            epoch.format(s)
        )));
    }
    let db = &model.database;
    let name = model.relation.as_str();
    let mut rows = Vec::new();
    match args.what {
        What::Cardinality => rows.push(Prediction {
            quantity: "cardinality",
            attribute: String::new(),
            value: String::new(),
            analytic: db.expected_cardinality(name, s, f)?,
            query: Query::Cardinality,
            mc: None,
        }),
        What::FirstAlteration => {
            let state = db.default_alteration_state(name)?;
            rows.push(Prediction {
                quantity: "first_alteration",
                attribute: String::new(),
                value: String::new(),
                analytic: db.first_alteration(name, &state, s, f)?,
                query: Query::FirstAlteration,
                mc: None,
            });
        }
        What::Histogram => {
            let relation = db.relation(name)?;
            let attrs: Vec<String> = match &args.attribute {
                Some(a) if relation.histograms.contains_key(a) => vec![a.clone()],
                Some(a) => return Err(CliError::MissingSection(format!("histogram for {name}.{a}"))),
                None => relation.histograms.keys().cloned().collect(),
            };
            if attrs.is_empty() {
                return Err(CliError::MissingSection(format!("histograms for {name}")));
            }
            for attr in attrs {
                if !relation.attributes.contains_key(&attr) {
                    return Err(CliError::MissingSection(format!("attribute model for {name}.{attr}")));
                }
                for (value, count) in db.expected_histogram(name, &attr, s, f)? {
                    rows.push(Prediction {
                        quantity: "histogram",
                        attribute: attr.clone(),
                        query: Query::Histogram {
                            attribute: attr.clone(),
                            value: value.clone(),
                        },
                        value,
                        analytic: count,
                        mc: None,
                    });
                }
            }
        }
    }
    if let Some(reps) = args.mc {
        if reps < 2 {
            return Err(CliError::InvalidArgument("--mc needs at least 2 replications".into()));
        }
        let cfg = SimConfig::new(db.clone(), name, s, f, reps, args.seed);
        let traces = simulator::run(&cfg)?;
        for row in &mut rows {
            row.mc = Some(simulator::summarize(&traces, &row.query)?);
        }
    }
    let stamp = epoch.format_precise(f);
    let table = csv_bytes(&PREDICT_HEADER, |w| {
        for r in &rows {
            w.write_record([
                stamp.clone(),
                name.to_string(),
                r.quantity.to_string(),
                r.attribute.clone(),
                r.value.clone(),
                num(r.analytic),
                opt_num(r.mc.map(|e| e.mean)),
                opt_num(r.mc.map(|e| e.std_error)),
            ])?;
        }
        Ok(())
    })
    .map_err(csv_err(Path::new("prediction.csv")))?;
    let mut out = Outputs::new(global);
    out.add("prediction.csv", table.clone());
    out.write()?;
    echo(global, &table);
    Ok(())
}

// ---------------------------------------------------------------------------
// policy-eval

pub const REPORT_HEADER: [&str; 8] = ["policy", "M", "parameter", "alpha", "refresh_count", "transcription", "obsolescence", "total"];
pub const SCHEDULE_HEADER: [&str; 4] = ["policy", "M", "index", "time"];

fn parameter(p: &Policy) -> f64 {
    match *p {
        Policy::Usp { interval } => interval,
        Policy::Threshold { level } => level,
        Policy::FirstAlteration { probability } => probability,
    }
}

fn block_label(b: &fitting::Block) -> String {
    format!("n[{} {}-{}]", b.days, b.start, b.end)
}

pub fn policy_eval(global: &Global, args: &PolicyEvalArgs) -> Result<()> {
    let kinds = args
        .policies
        .iter()
        .map(|p| p.parse::<PolicyKind>())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if args.m_grid.is_empty() || args.alpha.is_empty() {
        return Err(CliError::InvalidArgument("--M-grid and --alpha need at least one value".into()));
    }
    if let Some(a) = args.alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(CliError::InvalidArgument(format!("alpha {a} is outside [0, 1]")));
    }
    let model = ModelFile::read(&args.model)?;
    let epoch = model.epoch();
    check_epoch(&epoch)?;
    let spec = match &args.cost {
        Some(p) => read_json(p)?,
        None => model.cost()?.clone(),
    };
    let start = match &args.from {
        Some(t) => epoch.to_days(parse_instant(t)?),
        None => model.as_of_days(),
    };
    let end = epoch.to_days(parse_instant(&args.to)?);
    if end <= start {
        return Err(CliError::InvalidArgument("--to must be after the horizon start".into()));
    }
    let name = model.relation.as_str();
    let db = &model.database;
    let rate = match args.reference_rate {
        Some(r) => r,
        None => db.relation(name)?.insertion.mean_rate(start, end).map_err(relevo::evolution::EvolutionError::from)?,
    };
    let log = match &args.log {
        Some(p) => Some(read_log(p, &epoch)?),
        None => None,
    };
    let mode = match &log {
        Some(l) => EvaluationMode::Trace(l),
        None => EvaluationMode::Analytic,
    };
    let seg = segmentation(args.segments.as_deref(), model.fit.as_ref().map(|f| &f.segmentation))?;
    let evaluated = policy::evaluate_grid(&kinds, &args.m_grid, rate, &spec, db, name, start, end, mode)?;

    let params: Vec<f64> = evaluated
        .iter()
        .map(|e| e.policy.instantiate(rate, e.param).map(|p| parameter(&p)))
        .collect::<std::result::Result<_, _>>()?;
    let report = csv_bytes(&REPORT_HEADER, |w| {
        for (e, param) in evaluated.iter().zip(&params) {
            for &alpha in &args.alpha {
                let r = e.row(alpha);
                w.write_record([
                    r.policy.to_string(),
                    num(r.param),
                    num(*param),
                    num(alpha),
                    r.refresh_count.to_string(),
                    num(r.transcription),
                    num(r.obsolescence),
                    num(r.total),
                ])?;
            }
        }
        Ok(())
    })
    .map_err(csv_err(Path::new("policy_report.csv")))?;
    let plot = plot_csv(&evaluated, &seg, &args.alpha).map_err(csv_err(Path::new("policy_plot.csv")))?;
    let schedules = csv_bytes(&SCHEDULE_HEADER, |w| {
        for e in &evaluated {
            for (i, b) in e.schedule.iter().enumerate() {
                w.write_record([e.policy.to_string(), num(e.param), (i + 1).to_string(), epoch.format_precise(*b)])?;
            }
        }
        Ok(())
    })
    .map_err(csv_err(Path::new("policy_schedules.csv")))?;
    let mut out = Outputs::new(global);
    out.add("policy_report.csv", report.clone());
    out.add("policy_plot.csv", plot);
    out.add("policy_schedules.csv", schedules);
    out.write()?;
    echo(global, &report);
    Ok(())
}

/// One series per policy: refresh count, cost components, totals per α and
/// the number of refreshes falling in each segmentation block.
fn plot_csv(evaluated: &[Evaluated], seg: &SegmentationSpec, alphas: &[f64]) -> std::result::Result<Vec<u8>, csv::Error> {
    let mut header: Vec<String> = ["series", "M", "refresh_count", "transcription", "obsolescence"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(alphas.iter().map(|a| format!("total[alpha={a}]")));
    header.extend(seg.blocks().iter().map(block_label));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_bytes(&header_refs, |w| {
        for e in evaluated {
            let mut rec = vec![
                e.policy.to_string(),
                num(e.param),
                e.costs.refresh_count.to_string(),
                num(e.costs.transcription),
                num(e.costs.obsolescence),
            ];
            rec.extend(alphas.iter().map(|a| num(e.row(*a).total)));
            rec.extend(policy::segment_counts(&e.schedule, seg).iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// simulate

/// A model plus a horizon and replication settings.
#[derive(Debug, Clone, Deserialize)]
struct SimulateFile {
    #[serde(flatten)]
    model: ModelFile,
    /// Defaults to the model's `as_of`.
    #[serde(default)]
    start: Option<DateTime<Utc>>,
    end: DateTime<Utc>,
    replications: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    check_integrity: Option<bool>,
}

pub fn simulate(global: &Global, args: &SimulateArgs) -> Result<()> {
    let file: SimulateFile = read_json(&args.config)?;
    let model = file.model;
    let epoch = model.epoch();
    check_epoch(&epoch)?;
    let start = file.start.map_or_else(|| model.as_of_days(), |t| epoch.to_days(t));
    let end = epoch.to_days(file.end);
    let mut cfg = SimConfig::new(
        model.database.clone(),
        &model.relation,
        start,
        end,
        args.replications.unwrap_or(file.replications),
        args.seed.unwrap_or(file.seed),
    );
    cfg.cost = model.cost.clone();
    cfg.record_events = true;
    if let Some(c) = file.check_integrity {
        cfg.check_integrity = c;
    }
    cfg.validate()?;
    let traces = simulator::run(&cfg)?;
    let mut trace_bytes = Vec::new();
    simulator::write_traces_csv(&traces, &mut trace_bytes, &epoch)?;
    let summary = simulator::summary(&traces)?;
    let mut summary_bytes = Vec::new();
    simulator::write_summary_json(&summary, &mut summary_bytes)?;
    let mut out = Outputs::new(global);
    out.add("traces.csv", trace_bytes);
    out.add("summary.json", summary_bytes.clone());
    out.write()?;
    echo(global, &summary_bytes);
    Ok(())
}

// ---------------------------------------------------------------------------
// validate

#[derive(Debug, Serialize)]
struct KsLevel {
    alpha: f64,
    threshold: f64,
    rejected: bool,
}

#[derive(Debug, Serialize)]
struct Validation {
    relation: String,
    log: String,
    batched: bool,
    n: usize,
    statistic: f64,
    levels: Vec<KsLevel>,
    rejection_level: Option<f64>,
}

impl Validation {
    fn new(relation: &str, log: &Path, batched: bool, ks: &KsResult) -> Self {
        Self {
            relation: relation.to_string(),
            log: log.display().to_string(),
            batched,
            n: ks.n,
            statistic: ks.statistic,
            levels: ks
                .levels
                .iter()
                .map(|&(alpha, threshold, rejected)| KsLevel { alpha, threshold, rejected })
                .collect(),
            rejection_level: ks.rejection_level(),
        }
    }
}

pub fn validate(global: &Global, args: &ValidateArgs) -> Result<()> {
    let model = ModelFile::read(&args.model)?;
    let epoch = model.epoch();
    check_epoch(&epoch)?;
    let relation = model.database.relation(&model.relation)?;
    let log = read_log(&args.log, &epoch)?.only(Op::Insert);
    if log.len() < 2 {
        return Err(CliError::EmptyLog(args.log.clone()));
    }
    let batched = relation.batch.support().iter().any(|(k, p)| *k != 1 && *p > 0.0);
    let sample = if batched {
        let seconds = args
            .window
            .or_else(|| model.fit.as_ref().map(|f| f.window_seconds))
            .unwrap_or(60.0);
        fitting::batch_events(&log, seconds / SECONDS_PER_DAY)?
    } else {
        log.expand()
    };
    let rescaled = fitting::rescale_interarrivals(&sample, &relation.insertion)?;
    let ks = fitting::ks_test(&rescaled, |x| if x <= 0.0 { 0.0 } else { -(-x).exp_m1() })?;
    let report = Validation::new(&model.relation, &args.log, batched, &ks);
    let bytes = json_bytes(&report);
    let mut out = Outputs::new(global);
    out.add("validation.json", bytes.clone());
    out.write()?;
    echo(global, &bytes);
    Ok(())
}
