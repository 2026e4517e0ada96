//! End-to-end flows behind the command-line tool: generate, train,
//! evaluate, predict, trace and ablate.

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{align_all, align_for_prediction, AlignedRow, DataSet, MemberId};
use crate::error::{CsgeError, Result};
use crate::experiment::{ablation_pins, Experiment, Method, VariantResult};
use crate::io::{
    predictions_csv, weight_trace_csv, write_forecast_csv, Bundle, BundledVariant,
    ExperimentConfig, IngestReport, LeadConfig, MinMax, WeatherSource,
};
use crate::metrics::{self, ScoreTable};
use crate::synth::{generate, ScenarioSpec};
use crate::training::{split, SplitPlan, TrainConfig, TrainingReport};
use crate::weighting::{Aspect, EtaVector};

/// File name of the experiment config written next to generated data.
pub const SYNTH_CONFIG_NAME: &str = "config.toml";

/// Write a scenario's forecast files and a matching experiment config into
/// `dir`; returns the config path.
pub fn synth_gen(spec: &ScenarioSpec, dir: &Path) -> Result<PathBuf> {
    let data = generate(spec)?;
    let mut sources = Vec::with_capacity(spec.weather_models.len());
    for (psi, m) in spec.weather_models.iter().enumerate() {
        let file = format!("{}.csv", m.label);
        write_forecast_csv(&data, psi, &dir.join(&file))?;
        sources.push(WeatherSource {
            label: m.label.clone(),
            path: PathBuf::from(file),
            origin_lag: m.origin_lag,
            forecasters: spec.power_kinds.clone(),
        });
    }
    let config = ExperimentConfig {
        name: spec.name.clone(),
        output_dir: PathBuf::from("out"),
        nominal_capacity: None,
        methods: Method::ALL.to_vec(),
        leads: LeadConfig {
            k_min: spec.k_min,
            k_max: spec.k_max,
            step_secs: 3600,
        },
        weather_models: sources,
        split: SplitPlan {
            seed: spec.seed,
            ..SplitPlan::default()
        },
        train: TrainConfig::default(),
    };
    let path = dir.join(SYNTH_CONFIG_NAME);
    crate::io::write_atomic(&path, config.to_toml()?.as_bytes())?;
    Ok(path)
}

/// Ingest, normalize on the training origins and prepare the comparison.
pub fn prepare(config: &ExperimentConfig) -> Result<(Experiment, MinMax, Vec<IngestReport>)> {
    config.validate()?;
    let (raw, reports) = config.ingest()?;
    let plan = split(&raw.origins(), &config.split)?;
    let normalizer = MinMax::fit(&raw, &plan.train)?;
    let data = normalizer.apply(&raw)?;
    let exp = Experiment::new(data, &config.kinds(), config.train.clone(), &config.split)?;
    Ok((exp, normalizer, reports))
}

/// Test-set outcome of one fitted method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub name: String,
    /// Members as `weather:power kind`, 1-based.
    pub members: Vec<String>,
    pub eta: EtaVector,
    pub zeta: f64,
    pub test_rows: usize,
    pub test_rmse: f64,
    pub test_r2: Option<f64>,
    pub training: TrainingReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub name: String,
    pub ingest: Vec<IngestReport>,
    pub train_origins: usize,
    pub test_origins: usize,
    /// Out-of-fold RMSE per member, `[weather][power]`.
    pub oof_rmse: Vec<Vec<f64>>,
    pub variants: Vec<VariantSummary>,
}

fn summarize(
    exp: &Experiment,
    config: &ExperimentConfig,
    r: &VariantResult,
) -> Result<VariantSummary> {
    let kinds = exp.kinds();
    Ok(VariantSummary {
        name: r.name.clone(),
        members: r
            .selection
            .members()
            .iter()
            .map(|m| format!("{m} {}", kinds[m.weather][m.power]))
            .collect(),
        eta: r.model.report.eta,
        zeta: r.model.report.zeta,
        test_rows: r.predictions.len(),
        test_rmse: r.rmse()?,
        test_r2: r.r_squared()?,
        training: r.model.report.clone(),
    })
    .map(|s| {
        log::info!("{} {}: test rmse {:.5}", config.name, s.name, s.test_rmse);
        s
    })
}

/// Fit every configured method and bundle them.
pub fn train(config: &ExperimentConfig) -> Result<(Bundle, TrainSummary)> {
    let (exp, normalizer, ingest) = prepare(config)?;
    let mut variants = Vec::with_capacity(config.methods.len());
    let mut summaries = Vec::with_capacity(config.methods.len());
    for &m in &config.methods {
        let r = exp.run_method(m)?;
        summaries.push(summarize(&exp, config, &r)?);
        variants.push(BundledVariant {
            name: r.name,
            selection: r.selection,
            report: r.model.report,
        });
    }
    let summary = TrainSummary {
        name: config.name.clone(),
        ingest,
        train_origins: exp.prepared.split.train.len(),
        test_origins: exp.prepared.split.test.len(),
        oof_rmse: exp.prepared.oof_rmse.clone(),
        variants: summaries,
    };
    let bundle = Bundle {
        config: config.clone(),
        normalizer,
        kinds: exp.prepared.kinds.clone(),
        forecasters: exp.prepared.forecasters.clone(),
        state: exp.prepared.state.clone(),
        variants,
    };
    Ok((bundle, summary))
}

/// Normalized data: the override config's files, or the bundle's own.
fn bundle_data(bundle: &Bundle, data: Option<&ExperimentConfig>) -> Result<DataSet> {
    let raw = match data {
        Some(c) => {
            if c.weather_models.len() != bundle.config.weather_models.len() {
                return Err(CsgeError::Config(format!(
                    "data has {} weather models, bundle expects {}",
                    c.weather_models.len(),
                    bundle.config.weather_models.len()
                )));
            }
            crate::io::ingest(&c.weather_models, bundle.config.grid()?, c.nominal_capacity)?.0
        }
        None => bundle.config.ingest()?.0,
    };
    bundle.normalizer.apply(&raw)
}

/// Rows whose origin falls in the held-out share under the bundle's split.
fn test_rows(bundle: &Bundle, data: &DataSet) -> Result<Vec<AlignedRow>> {
    let s = split(&data.origins(), &bundle.config.split)?;
    let test: std::collections::HashSet<i64> = s.test.into_iter().collect();
    Ok(align_all(data)
        .into_iter()
        .filter(|r| test.contains(&r.origin))
        .collect())
}

/// Test-set scores of every method in every bundle; one data set per bundle.
/// Returns the table and the baseline's column.
pub fn evaluate(
    bundles: &[Bundle],
    data: Option<&ExperimentConfig>,
    baseline: Option<&str>,
) -> Result<(ScoreTable, usize)> {
    let first = bundles
        .first()
        .ok_or_else(|| CsgeError::Config("at least one bundle is required".into()))?;
    if data.is_some() && bundles.len() > 1 {
        return Err(CsgeError::Config(
            "a data override needs exactly one bundle".into(),
        ));
    }
    let methods: Vec<String> = first
        .variant_names()
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rmse = vec![Vec::new(); methods.len()];
    let mut r2 = vec![Vec::new(); methods.len()];
    let mut names = Vec::new();
    for b in bundles {
        if b.variant_names() != first.variant_names() {
            return Err(CsgeError::Config(format!(
                "bundle {:?} holds methods {:?}, expected {:?}",
                b.config.name,
                b.variant_names(),
                methods
            )));
        }
        let ds = bundle_data(b, data)?;
        let rows = test_rows(b, &ds)?;
        let refs: Vec<&AlignedRow> = rows.iter().collect();
        for (i, m) in methods.iter().enumerate() {
            let (kept, preds) = b.model(m)?.predict_rows(&refs)?;
            let f: Vec<f64> = preds.iter().map(|p| p.value).collect();
            let o: Vec<f64> = kept.iter().map(|&k| rows[k].observation).collect();
            rmse[i].push(metrics::rmse(&f, &o)?);
            r2[i].push(metrics::r_squared(&f, &o)?);
        }
        names.push(b.config.name.clone());
    }
    let table = ScoreTable::new(names, methods, rmse, r2)?;
    let base = match baseline {
        Some(name) => table
            .methods
            .iter()
            .position(|m| m.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                CsgeError::Config(format!(
                    "baseline {name:?} is not among {:?}",
                    table.methods
                ))
            })?,
        None => table.method_index(Method::NoEnsemble.name()).unwrap_or(0),
    };
    Ok((table, base))
}

/// Method a bundle predicts with when none is named: the full ensemble if
/// present, otherwise the last one fitted.
pub fn default_method(bundle: &Bundle) -> Result<String> {
    let names = bundle.variant_names();
    names
        .iter()
        .find(|n| **n == Method::CsgeMulti.name())
        .or(names.last())
        .map(|s| s.to_string())
        .ok_or_else(|| CsgeError::InvalidBundle("no fitted methods".into()))
}

/// Forecast file for every row of the data, optionally with members
/// (1-based, full layout) treated as missing.
pub fn predict(
    bundle: &Bundle,
    data: Option<&ExperimentConfig>,
    method: &str,
    dropped: &[MemberId],
) -> Result<String> {
    let ds = bundle_data(bundle, data)?;
    let rows = align_for_prediction(&ds);
    let refs: Vec<&AlignedRow> = rows.iter().collect();
    let variant = bundle.variant(method)?;
    let local = dropped
        .iter()
        .map(|m| {
            variant.selection.local(*m).ok_or_else(|| {
                CsgeError::Config(format!("member {m} is not part of {}", variant.name))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (kept, preds) = bundle.model(method)?.predict_rows_dropping(&refs, &local)?;
    let kept_rows: Vec<&AlignedRow> = kept.iter().map(|&k| refs[k]).collect();
    Ok(predictions_csv(&kept_rows, &preds, ds.grid().delta_secs))
}

/// Weight trace for rows with origin in `origins`.
pub fn trace(
    bundle: &Bundle,
    data: Option<&ExperimentConfig>,
    method: &str,
    origins: Range<i64>,
) -> Result<String> {
    let ds = bundle_data(bundle, data)?;
    let rows: Vec<AlignedRow> = align_for_prediction(&ds)
        .into_iter()
        .filter(|r| origins.contains(&r.origin))
        .collect();
    let refs: Vec<&AlignedRow> = rows.iter().collect();
    let variant = bundle.variant(method)?;
    let model = bundle.model(method)?;
    let (kept, preds) = model.predict_rows(&refs)?;
    let kept_rows: Vec<&AlignedRow> = kept.iter().map(|&k| refs[k]).collect();
    let labels: Vec<String> = variant
        .selection
        .weather
        .iter()
        .map(|&psi| bundle.config.weather_models[psi].label.clone())
        .collect();
    Ok(weight_trace_csv(&labels, &model.kinds, &kept_rows, &preds))
}

/// Test scores of one ablation variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub aspects: String,
    pub eta: EtaVector,
    pub zeta: f64,
    pub test_rmse: f64,
    pub test_r2: Option<f64>,
}

pub fn aspect_letters(aspects: &[Aspect]) -> String {
    Aspect::ALL
        .iter()
        .filter(|a| aspects.contains(a))
        .map(|a| a.letter())
        .collect()
}

/// The full-member ensemble with every aspect, then with only `aspects`
/// (the others pinned to exponent 0).
pub fn ablate(config: &ExperimentConfig, aspects: &[Aspect]) -> Result<Vec<AblationRow>> {
    let (exp, _, _) = prepare(config)?;
    let all = exp.all_members();
    let mut out = Vec::new();
    for (name, enabled) in [
        ("full", Aspect::ALL.to_vec()),
        ("ablated", aspects.to_vec()),
    ] {
        let r = exp.run(name, &all, Some(ablation_pins(&enabled)))?;
        out.push(AblationRow {
            variant: name.to_string(),
            aspects: aspect_letters(&enabled),
            eta: r.model.report.eta,
            zeta: r.model.report.zeta,
            test_rmse: r.rmse()?,
            test_r2: r.r_squared()?,
        });
    }
    Ok(out)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out =
        String::from("variant,aspects,g_pw,l_pw,k_pw,g_wx,l_wx,k_wx,zeta,test_rmse,test_r2\n");
    for r in rows {
        let eta: Vec<String> = r.eta.to_array().iter().map(|v| v.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.variant,
            r.aspects,
            eta.join(","),
            r.zeta,
            r.test_rmse,
            r.test_r2.map(|v| v.to_string()).unwrap_or_default()
        ));
    }
    out
}
