//! Files in and out: forecast CSV ingestion, feature normalization,
//! experiment configuration, model bundles, weight traces and score tables.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::data::{AlignedRow, DataSet, ForecastRecord, LeadGrid, MemberId};
use crate::ensemble::Prediction;
use crate::error::{CsgeError, Result};
use crate::experiment::Method;
use crate::forecasters::{ForecasterKind, ForecasterState};
use crate::metrics::{ScoreTable, Summary};
use crate::training::{
    MemberKinds, MemberSelection, SplitPlan, TrainConfig, TrainedModel, TrainingReport,
};
use crate::weighting::{Coord, WeightState};

/// Column order of a forecast file.
pub const COLUMNS: [&str; 9] = [
    "timestamp",
    "lead",
    "ws100",
    "ws10",
    "u100",
    "v100",
    "pressure",
    "temperature",
    "power",
];

/// Number of weather features per row.
pub const FEATURE_COUNT: usize = 6;

/// Accepted range of normalized power before clipping to [0, 1].
pub const POWER_RANGE: (f64, f64) = (-0.01, 1.05);

pub const BUNDLE_MAGIC: &str = "CSGE-BUNDLE";
pub const BUNDLE_VERSION: u32 = 1;

/// Write through a sibling temporary file and rename into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CsgeError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| CsgeError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CsgeError::io(path, e)
    })
}

/// Parse an ISO-8601 UTC time stamp into epoch seconds. Offsets are
/// honored; naive stamps are read as UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp());
    }
    [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
    .map(|t| t.and_utc().timestamp())
}

pub fn format_timestamp(secs: i64) -> String {
    match DateTime::from_timestamp(secs, 0) {
        Some(t) => t.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => secs.to_string(),
    }
}

/// One weather model's forecast file and its members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherSource {
    pub label: String,
    pub path: PathBuf,
    /// Steps by which this model's runs predate the forecast origin.
    #[serde(default)]
    pub origin_lag: u32,
    pub forecasters: Vec<ForecasterKind>,
}

/// Row counts of one ingested file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub path: String,
    pub rows: usize,
    pub kept: usize,
    pub power_out_of_range: usize,
    pub unparseable: usize,
    pub duplicates: usize,
    pub outside_grid: usize,
}

impl IngestReport {
    pub fn dropped(&self) -> usize {
        self.power_out_of_range + self.unparseable + self.duplicates + self.outside_grid
    }
}

struct CsvRow {
    target: i64,
    lead: u32,
    features: Vec<f64>,
    power: Option<f64>,
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> CsgeError {
    CsgeError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn read_rows(path: &Path, capacity: Option<f64>, report: &mut IngestReport) -> Result<Vec<CsvRow>> {
    let file = fs::File::open(path).map_err(|e| CsgeError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut first = true;
    loop {
        let more = reader.read_record(&mut record).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(path, line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != COLUMNS.len() {
            return Err(parse_error(
                path,
                line,
                format!("expected {} columns, found {}", COLUMNS.len(), record.len()),
            ));
        }
        if first {
            first = false;
            if parse_timestamp(&record[0]).is_some() {
                return Err(parse_error(path, line, "missing header row"));
            }
            continue;
        }
        report.rows += 1;
        let Some(row) = parse_row(&record) else {
            report.unparseable += 1;
            continue;
        };
        let power = match row.power {
            Some(p) => {
                let p = capacity.map_or(p, |c| p / c);
                if !(POWER_RANGE.0..=POWER_RANGE.1).contains(&p) {
                    report.power_out_of_range += 1;
                    continue;
                }
                Some(p.clamp(0.0, 1.0))
            }
            None => None,
        };
        out.push(CsvRow { power, ..row });
    }
    if first {
        return Err(parse_error(path, 1, "empty file, header row expected"));
    }
    Ok(out)
}

fn parse_row(r: &csv::StringRecord) -> Option<CsvRow> {
    let target = parse_timestamp(&r[0])?;
    let lead: u32 = r[1].parse().ok()?;
    let features: Option<Vec<f64>> = (2..2 + FEATURE_COUNT)
        .map(|i| r[i].parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect();
    let power = match &r[8] {
        "" => None,
        s => Some(s.parse::<f64>().ok().filter(|v| v.is_finite())?),
    };
    Some(CsvRow {
        target,
        lead,
        features: features?,
        power,
    })
}

/// Read one forecast file per weather model into a data set with raw
/// (unnormalized) features. The origin of a row is its time stamp minus the
/// lead; the power measured at an origin becomes that row's recent power.
pub fn ingest(
    sources: &[WeatherSource],
    grid: LeadGrid,
    capacity: Option<f64>,
) -> Result<(DataSet, Vec<IngestReport>)> {
    if let Some(c) = capacity {
        if !(c > 0.0 && c.is_finite()) {
            return Err(CsgeError::Config(format!(
                "nominal capacity {c} must be positive"
            )));
        }
    }
    let mut per_file = Vec::with_capacity(sources.len());
    let mut reports = Vec::with_capacity(sources.len());
    let mut measured: HashMap<i64, f64> = HashMap::new();
    for src in sources {
        let mut report = IngestReport {
            path: src.path.display().to_string(),
            ..IngestReport::default()
        };
        let rows = read_rows(&src.path, capacity, &mut report)?;
        for r in &rows {
            if let Some(p) = r.power {
                measured.entry(r.target).or_insert(p);
            }
        }
        per_file.push(rows);
        reports.push(report);
    }
    let step = grid.delta_secs;
    let mut records = Vec::new();
    for (psi, (rows, report)) in per_file.into_iter().zip(&mut reports).enumerate() {
        let mut seen = HashSet::new();
        for r in rows {
            if !grid.contains(r.lead) {
                report.outside_grid += 1;
                continue;
            }
            let origin = r.target - r.lead as i64 * step;
            if !seen.insert((origin, r.lead)) {
                report.duplicates += 1;
                continue;
            }
            report.kept += 1;
            records.push(ForecastRecord {
                origin,
                lead: r.lead,
                origin_lag: sources[psi].origin_lag,
                weather_model: psi,
                features: r.features,
                observation: r.power,
                recent_power: measured.get(&origin).copied(),
            });
        }
        if report.dropped() > 0 {
            log::warn!(
                "{}: dropped {} of {} rows ({} power out of range, {} unparseable, {} duplicate, {} outside lead grid)",
                report.path,
                report.dropped(),
                report.rows,
                report.power_out_of_range,
                report.unparseable,
                report.duplicates,
                report.outside_grid
            );
        }
    }
    let data = DataSet::new(
        records,
        grid,
        sources.iter().map(|s| s.label.clone()).collect(),
        vec![FEATURE_COUNT; sources.len()],
    )?;
    Ok((data, reports))
}

/// Write one weather model's records in the forecast file layout.
pub fn write_forecast_csv(data: &DataSet, psi: usize, path: &Path) -> Result<()> {
    if data.feature_dims().get(psi) != Some(&FEATURE_COUNT) {
        return Err(CsgeError::domain(format!(
            "weather model {} needs {FEATURE_COUNT} features for the file layout",
            psi + 1
        )));
    }
    let step = data.grid().delta_secs;
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for r in data.records().iter().filter(|r| r.weather_model == psi) {
        let _ = write!(
            out,
            "{},{}",
            format_timestamp(r.origin + r.lead as i64 * step),
            r.lead
        );
        for v in &r.features {
            let _ = write!(out, ",{v}");
        }
        match r.observation {
            Some(o) => {
                let _ = writeln!(out, ",{o}");
            }
            None => out.push_str(",\n"),
        }
    }
    write_atomic(path, out.as_bytes())
}

/// Per-weather-model min-max feature scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    /// `min[psi][dim]`.
    pub min: Vec<Vec<f64>>,
    pub max: Vec<Vec<f64>>,
}

impl MinMax {
    /// Ranges over the records whose origin is listed.
    pub fn fit(data: &DataSet, origins: &[i64]) -> Result<Self> {
        let keep: HashSet<i64> = origins.iter().copied().collect();
        let dims = data.feature_dims();
        let mut min: Vec<Vec<f64>> = dims.iter().map(|&d| vec![f64::INFINITY; d]).collect();
        let mut max: Vec<Vec<f64>> = dims.iter().map(|&d| vec![f64::NEG_INFINITY; d]).collect();
        for r in data.records().iter().filter(|r| keep.contains(&r.origin)) {
            for (d, &v) in r.features.iter().enumerate() {
                min[r.weather_model][d] = min[r.weather_model][d].min(v);
                max[r.weather_model][d] = max[r.weather_model][d].max(v);
            }
        }
        if let Some(psi) = min.iter().position(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(CsgeError::InsufficientData(format!(
                "no training rows for weather model {}",
                psi + 1
            )));
        }
        Ok(MinMax { min, max })
    }

    /// Scaled value clipped to [0, 1]; a constant training feature maps to 0.
    pub fn normalize(&self, psi: usize, dim: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[psi][dim], self.max[psi][dim]);
        if hi > lo {
            ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn denormalize(&self, psi: usize, dim: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[psi][dim], self.max[psi][dim]);
        lo + v * (hi - lo)
    }

    pub fn apply(&self, data: &DataSet) -> Result<DataSet> {
        if self.min.len() != data.weather_count()
            || self
                .min
                .iter()
                .zip(data.feature_dims())
                .any(|(m, d)| m.len() != *d)
        {
            return Err(CsgeError::domain(
                "normalizer layout does not match the data set",
            ));
        }
        let records = data
            .records()
            .iter()
            .map(|r| ForecastRecord {
                features: r
                    .features
                    .iter()
                    .enumerate()
                    .map(|(d, &v)| self.normalize(r.weather_model, d, v))
                    .collect(),
                ..r.clone()
            })
            .collect();
        DataSet::new(
            records,
            data.grid(),
            data.weather_labels().to_vec(),
            data.feature_dims().to_vec(),
        )
    }
}

fn default_name() -> String {
    "site".to_string()
}

fn default_step_secs() -> i64 {
    3600
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

/// Lead range of the forecast files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadConfig {
    pub k_min: u32,
    pub k_max: u32,
    #[serde(default = "default_step_secs")]
    pub step_secs: i64,
}

/// Everything one experiment needs, read from a TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Divisor turning measured power into a capacity fraction; omit for
    /// pre-normalized power.
    #[serde(default)]
    pub nominal_capacity: Option<f64>,
    /// Comparison methods fitted by training.
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub leads: LeadConfig,
    pub weather_models: Vec<WeatherSource>,
    #[serde(default)]
    pub split: SplitPlan,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentConfig {
    /// Parse and validate; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CsgeError::io(path, e))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CsgeError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for w in &mut cfg.weather_models {
            if w.path.is_relative() {
                w.path = base.join(&w.path);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CsgeError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.weather_models.is_empty() {
            return Err(CsgeError::Config(
                "at least one weather model is required".into(),
            ));
        }
        let mut labels = HashSet::new();
        for w in &self.weather_models {
            if w.forecasters.is_empty() {
                return Err(CsgeError::Config(format!(
                    "weather model {:?} has no forecasters",
                    w.label
                )));
            }
            if !labels.insert(&w.label) {
                return Err(CsgeError::Config(format!(
                    "weather model label {:?} repeats",
                    w.label
                )));
            }
        }
        if self.methods.is_empty() {
            return Err(CsgeError::Config("at least one method is required".into()));
        }
        self.grid().map_err(|e| CsgeError::Config(e.to_string()))?;
        self.train.validate()
    }

    pub fn grid(&self) -> Result<LeadGrid> {
        LeadGrid::new(self.leads.k_min, self.leads.k_max, self.leads.step_secs)
    }

    pub fn kinds(&self) -> MemberKinds {
        self.weather_models
            .iter()
            .map(|w| w.forecasters.clone())
            .collect()
    }

    /// Raw data set of the configured files.
    pub fn ingest(&self) -> Result<(DataSet, Vec<IngestReport>)> {
        ingest(&self.weather_models, self.grid()?, self.nominal_capacity)
    }
}

/// One fitted comparison method inside a bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundledVariant {
    pub name: String,
    pub selection: MemberSelection,
    pub report: TrainingReport,
}

/// Everything needed to predict: base models and weight statistics for the
/// full member set, plus each method's member subset and exponents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bundle {
    pub config: ExperimentConfig,
    pub normalizer: MinMax,
    pub kinds: MemberKinds,
    pub forecasters: Vec<Vec<ForecasterState>>,
    pub state: WeightState,
    pub variants: Vec<BundledVariant>,
}

impl Bundle {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = format!("{BUNDLE_MAGIC} {BUNDLE_VERSION}\n").into_bytes();
        serde_json::to_writer(&mut out, self)
            .map_err(|e| CsgeError::InvalidBundle(e.to_string()))?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| CsgeError::InvalidBundle("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| CsgeError::InvalidBundle("binary header".into()))?;
        let version = header
            .strip_prefix(BUNDLE_MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| CsgeError::InvalidBundle(format!("bad header {header:?}")))?;
        if version != BUNDLE_VERSION {
            return Err(CsgeError::VersionMismatch {
                expected: BUNDLE_VERSION,
                found: version,
            });
        }
        serde_json::from_slice(&bytes[nl + 1..])
            .map_err(|e| CsgeError::InvalidBundle(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CsgeError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn variant_names(&self) -> Vec<&str> {
        self.variants.iter().map(|v| v.name.as_str()).collect()
    }

    pub fn variant(&self, name: &str) -> Result<&BundledVariant> {
        self.variants
            .iter()
            .find(|v| v.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                CsgeError::Config(format!(
                    "bundle has no method {name:?}; it holds {:?}",
                    self.variant_names()
                ))
            })
    }

    /// The trained model of one method.
    pub fn model(&self, name: &str) -> Result<TrainedModel> {
        let v = self.variant(name)?;
        Ok(TrainedModel {
            kinds: v.selection.restrict_kinds(&self.kinds),
            forecasters: v.selection.restrict_forecasters(&self.forecasters),
            state: self
                .state
                .select(&v.selection.weather, &v.selection.power)?
                .with_eta(v.report.eta)?,
            report: v.report.clone(),
        })
    }

    /// Normalized data set of the bundle's own configured files.
    pub fn load_data(&self) -> Result<(DataSet, Vec<IngestReport>)> {
        let (raw, reports) = self.config.ingest()?;
        Ok((self.normalizer.apply(&raw)?, reports))
    }
}

/// Header of a weight trace file.
pub const TRACE_COLUMNS: [&str; 17] = [
    "origin",
    "lead",
    "weather",
    "power",
    "member_kind",
    "available",
    "member_value",
    "wg_wx",
    "wl_wx",
    "wk_wx",
    "wg_pw",
    "wl_pw",
    "wk_pw",
    "raw",
    "weight",
    "ensemble",
    "observation",
];

fn opt(v: Option<f64>) -> String {
    // adding 0.0 turns -0 into 0
    v.filter(|x| x.is_finite())
        .map(|x| (x + 0.0).to_string())
        .unwrap_or_default()
}

/// One line per member per prediction. `rows[i]` is the row of `predictions[i]`;
/// `labels` and `kinds` follow the model's own member layout.
pub fn weight_trace_csv(
    labels: &[String],
    kinds: &MemberKinds,
    rows: &[&AlignedRow],
    predictions: &[Prediction],
) -> String {
    let mut out = TRACE_COLUMNS.join(",");
    out.push('\n');
    for (row, p) in rows.iter().zip(predictions) {
        for m in &p.members {
            let f = |c: Coord| m.factor(c);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                format_timestamp(row.origin),
                p.lead,
                labels[m.member.weather],
                m.member.power + 1,
                kinds[m.member.weather][m.member.power],
                u8::from(m.value.is_some()),
                opt(m.value),
                f(Coord::GlobalWeather),
                f(Coord::LocalWeather),
                f(Coord::LeadtimeWeather),
                f(Coord::GlobalPower),
                f(Coord::LocalPower),
                f(Coord::LeadtimePower),
                m.raw,
                m.weight,
                p.value,
                opt(Some(row.observation)),
            );
        }
    }
    out
}

/// Forecast file: one line per prediction.
pub fn predictions_csv(rows: &[&AlignedRow], predictions: &[Prediction], step_secs: i64) -> String {
    let mut out = String::from("origin,target,lead,forecast,observation\n");
    for (row, p) in rows.iter().zip(predictions) {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            format_timestamp(row.origin),
            format_timestamp(row.origin + row.lead as i64 * step_secs),
            p.lead,
            p.value,
            opt(Some(row.observation)),
        );
    }
    out
}

fn summary_lines(out: &mut String, metric: &str, s: &Summary) {
    let pct = |v: &Option<f64>| opt(v.map(|x| 100.0 * x));
    let line = |out: &mut String, label: &str, cells: Vec<String>| {
        let _ = writeln!(out, "{metric},{label},{}", cells.join(","));
    };
    line(out, "Avg", s.mean.iter().map(|v| opt(Some(*v))).collect());
    line(out, "Std", s.std.iter().map(|v| opt(Some(*v))).collect());
    line(
        out,
        "Skill of Avg [%]",
        s.skill_of_mean.iter().map(pct).collect(),
    );
    line(
        out,
        "Mean Skill [%]",
        s.mean_skill.iter().map(pct).collect(),
    );
    line(out, "#Wins", s.wins.iter().map(|v| v.to_string()).collect());
}

/// Score table with one block per metric: a line per data set followed by
/// the Avg, Std, skill and #Wins footer.
pub fn score_table_csv(table: &ScoreTable, baseline: usize) -> String {
    let mut out = format!("metric,dataset,{}\n", table.methods.join(","));
    for (d, name) in table.datasets.iter().enumerate() {
        let cells: Vec<String> = table.rmse.iter().map(|m| m[d].to_string()).collect();
        let _ = writeln!(out, "rmse,{name},{}", cells.join(","));
    }
    summary_lines(&mut out, "rmse", &table.rmse_summary(baseline));
    for (d, name) in table.datasets.iter().enumerate() {
        let cells: Vec<String> = table.r2.iter().map(|m| opt(m[d])).collect();
        let _ = writeln!(out, "r2,{name},{}", cells.join(","));
    }
    summary_lines(&mut out, "r2", &table.r2_summary(baseline));
    out
}

/// Pretty JSON for reports.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s =
        serde_json::to_string_pretty(value).map_err(|e| CsgeError::Config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Parse a 1-based `weather:power` member reference.
pub fn parse_member(s: &str) -> Result<MemberId> {
    let bad = || CsgeError::Config(format!("member {s:?} is not of the form weather:power"));
    let (w, p) = s.split_once(':').ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let p: usize = p.trim().parse().map_err(|_| bad())?;
    MemberId::from_labels(w, p)
}
