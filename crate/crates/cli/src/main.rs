//! `csge`: generate synthetic scenarios, train ensembles, predict, evaluate,
//! ablate and trace weights.

use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use csge::data::MemberId;
use csge::io::{self, Bundle, ExperimentConfig};
use csge::pipeline;
use csge::weighting::Aspect;
use csge::CsgeError;

#[derive(Parser)]
#[command(
    name = "csge",
    version,
    about = "Coopetitive soft-gating ensemble for power forecasts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a catalog scenario as forecast files plus an experiment config.
    SynthGen(SynthGenArgs),
    /// Fit every configured method and write a bundle and training report.
    Train(TrainArgs),
    /// Forecast every row of a data set with one method of a bundle.
    Predict(PredictArgs),
    /// Score every method of one or more bundles on their held-out origins.
    Evaluate(EvaluateArgs),
    /// Compare the full ensemble with one restricted to some weighting aspects.
    Ablate(AblateArgs),
    /// Write per-member weight factors for a range of origins.
    Trace(TraceArgs),
}

#[derive(Args)]
struct SynthGenArgs {
    /// Scenario name: single-model, mme-day-ahead, intraday-lagged or model-count-sweep.
    #[arg(long)]
    scenario: String,
    /// Override the scenario's random seed (also used for the split).
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of forecast origins.
    #[arg(long)]
    origins: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the split seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: the config's output_dir].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Trained bundle.
    #[arg(long)]
    bundle: PathBuf,
    /// Config whose forecast files replace the bundle's own data.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Method to use [default: CSGE-M if present, else the last fitted].
    #[arg(long)]
    method: Option<String>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Treat a member as missing, as weather:power (1-based); repeatable.
    #[arg(long = "drop-member", value_name = "WEATHER:POWER")]
    drop_member: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Trained bundle, one per data set; repeatable.
    #[arg(long, required = true)]
    bundle: Vec<PathBuf>,
    /// Config whose forecast files replace the bundle's own data (single bundle only).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reference method for skill scores [default: No-Ens if present, else the first].
    #[arg(long)]
    baseline: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Enabled weighting aspects, a comma-separated subset of g (global), l (local), k (lead time).
    #[arg(long)]
    aspects: String,
    /// Override the split seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: the config's output_dir].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Origins to trace, START..END (END exclusive) as ISO-8601 UTC or epoch seconds [default: all].
    #[arg(long = "origin-range", value_name = "START..END")]
    origin_range: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.split.seed = s;
    }
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    io::write_atomic(&path, contents.as_bytes())?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn parse_time(s: &str) -> Result<i64> {
    match s.trim().parse::<i64>() {
        Ok(v) => Ok(v),
        Err(_) => io::parse_timestamp(s).with_context(|| format!("bad time {s:?}")),
    }
}

fn parse_range(s: &str) -> Result<Range<i64>> {
    let Some((a, b)) = s.split_once("..") else {
        bail!("origin range {s:?} is not of the form START..END");
    };
    let r = parse_time(a)?..parse_time(b)?;
    if r.is_empty() {
        bail!("origin range {s:?} is empty");
    }
    Ok(r)
}

struct Loaded {
    bundle: Bundle,
    data: Option<ExperimentConfig>,
    method: String,
}

fn load_data(a: &DataArgs) -> Result<Loaded> {
    let bundle = Bundle::load(&a.bundle)?;
    let data = a
        .config
        .as_deref()
        .map(|p| load_config(p, None))
        .transpose()?;
    let method = match &a.method {
        Some(m) => bundle.variant(m)?.name.clone(),
        None => pipeline::default_method(&bundle)?,
    };
    Ok(Loaded {
        bundle,
        data,
        method,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthGen(a) => {
            let mut spec = csge::synth::scenario(&a.scenario).with_context(|| {
                let names: Vec<String> = csge::synth::scenario_catalog()
                    .into_iter()
                    .map(|s| s.name)
                    .collect();
                format!(
                    "unknown scenario {:?}; known: {}",
                    a.scenario,
                    names.join(", ")
                )
            })?;
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            if let Some(n) = a.origins {
                spec.n_origins = n;
            }
            spec.validate()?;
            let path = pipeline::synth_gen(&spec, &a.out)?;
            println!("{}", path.display());
        }
        Command::Train(a) => {
            let cfg = load_config(&a.config, a.seed)?;
            let out = a.out.unwrap_or_else(|| cfg.output_dir.clone());
            let (bundle, summary) = pipeline::train(&cfg)?;
            io::write_atomic(&out.join("bundle.csge"), &bundle.to_bytes()?)?;
            write(&out, "report.json", &io::to_json(&summary)?)?;
            for v in &summary.variants {
                println!("{}\t{}", v.name, v.test_rmse);
            }
        }
        Command::Predict(a) => {
            let dropped = a
                .drop_member
                .iter()
                .map(|s| io::parse_member(s))
                .collect::<csge::Result<Vec<MemberId>>>()?;
            let l = load_data(&a.data)?;
            let csv = pipeline::predict(&l.bundle, l.data.as_ref(), &l.method, &dropped)?;
            write(&a.out, "predictions.csv", &csv)?;
        }
        Command::Evaluate(a) => {
            let data = a
                .config
                .as_deref()
                .map(|p| load_config(p, None))
                .transpose()?;
            let bundles = a
                .bundle
                .iter()
                .map(|p| Bundle::load(p))
                .collect::<csge::Result<Vec<_>>>()?;
            let (table, base) = pipeline::evaluate(&bundles, data.as_ref(), a.baseline.as_deref())?;
            let csv = io::score_table_csv(&table, base);
            write(&a.out, "scores.csv", &csv)?;
            print!("{csv}");
        }
        Command::Ablate(a) => {
            let aspects = Aspect::parse_list(&a.aspects)?;
            let cfg = load_config(&a.config, a.seed)?;
            let out = a.out.unwrap_or_else(|| cfg.output_dir.clone());
            let rows = pipeline::ablate(&cfg, &aspects)?;
            let csv = pipeline::ablation_csv(&rows);
            write(&out, "ablation.csv", &csv)?;
            print!("{csv}");
        }
        Command::Trace(a) => {
            let range = match &a.origin_range {
                Some(s) => parse_range(s)?,
                None => i64::MIN..i64::MAX,
            };
            let l = load_data(&a.data)?;
            let csv = pipeline::trace(&l.bundle, l.data.as_ref(), &l.method, range)?;
            write(&a.out, "trace.csv", &csv)?;
        }
    }
    Ok(())
}

fn error_line(e: &anyhow::Error) -> String {
    let kind = e
        .downcast_ref::<CsgeError>()
        .map_or("error", CsgeError::kind);
    serde_json::json!({ "error": kind, "message": format!("{e:#}") }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
