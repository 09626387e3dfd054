//! Command-line surface: configuration files, subcommands, and report
//! emission with traceable metadata.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::deconfound::{fit_dml, fit_iv2sls, fit_ols, residualize, DeconfoundFit, Method};
use crate::dgp;
use crate::error::{Error, Result};
use crate::eval::{pearson, roc_auc, temporal_corr};
use crate::harness::{
    run_lambda_sweep, run_scenario, run_weekday_study, Arm, EvalReport, SweepReport,
    WeekdayReport,
};
use crate::io::{atomic_write, ingest, read_dataset, write_dataset, ColumnMapping, IngestFormat};
use crate::model::{DgpConfig, Split};
use crate::reward::{fit_pairwise_bt, fit_ridge, mse, predict, FitOptions, RewardModel};

/// Top-level configuration document. Unknown keys are rejected so typos
/// fail loudly instead of silently using defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub dgp: DgpConfig,
    #[serde(default)]
    pub fit: Option<FitOptions>,
    #[serde(default)]
    pub deconfound: Option<DeconfoundSection>,
    #[serde(default)]
    pub eval: Option<EvalSection>,
    #[serde(default)]
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeconfoundSection {
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default)]
    pub confounder: Option<String>,
    #[serde(default)]
    pub instruments: Vec<String>,
    #[serde(default)]
    pub folds: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub arms: Vec<String>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub candidate_k: Option<usize>,
    #[serde(default)]
    pub grid: Option<String>,
    /// Twelve per-month outcome shifts for the temporal scenario.
    #[serde(default)]
    pub month_effects: Option<Vec<f64>>,
    /// Monday win-probability for the weekday scenario.
    #[serde(default)]
    pub skew: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

/// Metadata header attached to every report so each number is traceable
/// to the tool version, the exact configuration, and the seeds used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportMeta {
    pub tool_version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Significance tests in reports use the Welch (unpooled) t-test.
    pub ttest_variant: String,
}

impl ReportMeta {
    fn new(config_bytes: &[u8], seeds: Vec<u64>) -> Self {
        ReportMeta {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: hex_digest(config_bytes),
            seeds,
            ttest_variant: "welch".to_string(),
        }
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
struct WithMeta<T: Serialize> {
    meta: ReportMeta,
    report: T,
}

#[derive(Debug, Parser)]
#[command(
    name = "deconf",
    version,
    about = "Seeded confounded-outcome simulations, reward heads, and deconfounding estimators"
)]
struct Cli {
    /// Worker thread cap. Accepted for interface stability; execution is
    /// single-threaded so outputs never depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a JSON config and write it as JSONL.
    Simulate(SimulateArgs),
    /// Fit a reward model on a dataset directory and write it as JSON.
    Train(TrainArgs),
    /// Estimate confounder coefficients and optionally residualize outcomes.
    Deconfound(DeconfoundArgs),
    /// Evaluate a trained model on a dataset's test split.
    Eval(EvalArgs),
    /// Sweep the ridge penalty over a grid and report MSE/AUC per point.
    Sweep(SweepArgs),
    /// Run the multi-arm scenario comparison across seeds.
    Scenario(ScenarioArgs),
    /// Run the weekday-marker amplification study across seeds.
    Weekday(WeekdayArgs),
    /// Validate and convert an external JSONL/CSV file into a dataset.
    Ingest(IngestArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// JSON config file; top-level "dgp" key or a bare DgpConfig document.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for items.jsonl and pairs.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory holding items.jsonl and pairs.jsonl.
    #[arg(long)]
    data: PathBuf,
    /// Output path for the model JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Reward head: "regression" fits ridge on outcomes, "pairwise" fits
    /// Bradley-Terry on preference pairs.
    #[arg(long, default_value = "regression")]
    head: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct DeconfoundArgs {
    #[arg(long)]
    data: PathBuf,
    /// Fit report output path (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Estimator: ols, iv, or dml.
    #[arg(long)]
    method: String,
    /// Confounder name to estimate.
    #[arg(long)]
    confounder: String,
    /// Comma-separated instrument names (iv only).
    #[arg(long, default_value = "")]
    instruments: String,
    /// Cross-fitting folds (dml only).
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the residualized dataset to this directory.
    #[arg(long)]
    residualized_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Trained model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Evaluation report output path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the sweep report (CSV and JSON).
    #[arg(long)]
    out: PathBuf,
    /// Grid spec: "logspace(a,b,n)", "linspace(a,b,n)", or a comma list.
    #[arg(long)]
    grid: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// JSON config file; top-level "dgp" key or a bare DgpConfig document.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the scenario report (CSV and JSON).
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seed list; overrides the config's eval.seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated arm names; overrides the config's eval.arms.
    #[arg(long)]
    arms: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    candidate_k: Option<usize>,
}

#[derive(Debug, Args)]
struct WeekdayArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seeds: Option<String>,
    /// Monday win-probability; overrides the config's eval.skew.
    #[arg(long)]
    skew: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    candidate_k: Option<usize>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Input file (items.jsonl or a CSV table).
    #[arg(long)]
    input: PathBuf,
    /// Input format: jsonl or csv.
    #[arg(long)]
    format: String,
    /// JSON file holding the CSV column mapping.
    #[arg(long)]
    mapping: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

/// Parse a grid spec: "logspace(a,b,n)" gives n points 10^a..10^b,
/// "linspace(a,b,n)" gives n evenly spaced points, and anything else is
/// read as a comma-separated value list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let spec = spec.trim();
    for (name, log) in [("logspace", true), ("linspace", false)] {
        if let Some(rest) = spec.strip_prefix(name) {
            let inner = rest
                .trim()
                .strip_prefix('(')
                .and_then(|s| s.strip_suffix(')'))
                .ok_or_else(|| Error::Config(format!("malformed grid spec {spec:?}")))?;
            let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(Error::Config(format!(
                    "grid spec {spec:?} needs three arguments (start, stop, count)"
                )));
            }
            let a: f64 = parts[0]
                .parse()
                .map_err(|_| Error::Config(format!("bad grid start {:?}", parts[0])))?;
            let b: f64 = parts[1]
                .parse()
                .map_err(|_| Error::Config(format!("bad grid stop {:?}", parts[1])))?;
            let n: usize = parts[2]
                .parse()
                .map_err(|_| Error::Config(format!("bad grid count {:?}", parts[2])))?;
            if n == 0 {
                return Err(Error::Config("grid count must be >= 1".into()));
            }
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let t = if n == 1 {
                    a
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                };
                out.push(if log { 10f64.powf(t) } else { t });
            }
            return Ok(out);
        }
    }
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad grid value {s:?}")))
        })
        .collect::<Result<Vec<f64>>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(Error::Config("empty grid spec".into()))
            } else {
                Ok(v)
            }
        })
    }

fn parse_seed_list(spec: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u64>()
                .map_err(|_| Error::Config(format!("bad seed {s:?}")))
        })
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(Error::Config("empty seed list".into()));
    }
    Ok(seeds)
}

fn parse_arm_list(spec: &str) -> Result<Vec<Arm>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

/// Read a config file, accepting either the full ConfigFile document or a
/// bare DgpConfig for convenience. Serde's message already names the
/// offending field; it is passed through verbatim.
fn load_config(path: &Path) -> Result<(ConfigFile, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
    let config_err = |e: serde_json::Error| Error::Config(format!("config {}: {e}", path.display()));
    // a document with a "dgp" key is a full ConfigFile, otherwise a bare DgpConfig
    if value.get("dgp").is_some() {
        let cfg: ConfigFile = serde_json::from_value(value).map_err(config_err)?;
        Ok((cfg, bytes))
    } else {
        let dgp: DgpConfig = serde_json::from_value(value).map_err(config_err)?;
        Ok((
            ConfigFile {
                dgp,
                fit: None,
                deconfound: None,
                eval: None,
                output: None,
            },
            bytes,
        ))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::Input(format!("serialization failed: {e}")))?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

fn seed_range_tag(seeds: &[u64]) -> String {
    let lo = seeds.iter().min().unwrap();
    let hi = seeds.iter().max().unwrap();
    format!("{lo}-{hi}")
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let (cfg, _) = load_config(&args.config)?;
    let dgp_cfg = cfg.dgp.clone().validated()?;
    let eval = cfg.eval.unwrap_or_default();
    let ds = dgp::generate(
        &dgp_cfg,
        eval.month_effects.as_deref(),
        eval.skew,
    )?;
    std::fs::create_dir_all(&args.out)?;
    write_dataset(&ds, &args.out)?;
    println!(
        "scenario {} items {} pairs {}",
        dgp_cfg.scenario,
        ds.items.len(),
        ds.pairs.len()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let ds = read_dataset(&args.data)?;
    let opts = FitOptions {
        lambda: args.lambda,
        seed: args.seed,
        ..Default::default()
    };
    let model = match args.head.as_str() {
        "regression" => {
            let train = ds.split_items(Split::Train);
            let x: Vec<Vec<f64>> = train.iter().map(|it| it.embedding.clone()).collect();
            let y: Vec<f64> = train.iter().map(|it| it.outcome).collect();
            fit_ridge(&x, &y, &opts, None)?
        }
        "pairwise" => {
            let pairs: Vec<_> = ds.split_pairs(Split::Train).into_iter().cloned().collect();
            let bt_opts = FitOptions {
                learning_rate: 2.0,
                max_iters: 2_000,
                tol: 1e-7,
                ..opts
            };
            fit_pairwise_bt(&ds, &pairs, &bt_opts)?
        }
        other => return Err(Error::Config(format!("unknown head {other:?}"))),
    };
    write_json(&args.out, &model)?;
    println!("trained {} head on {} items", args.head, ds.items.len());
    Ok(())
}

fn cmd_deconfound(args: &DeconfoundArgs) -> Result<()> {
    let ds = read_dataset(&args.data)?;
    let instruments: Vec<String> = args
        .instruments
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    let fit: DeconfoundFit = match args.method.as_str() {
        "ols" => fit_ols(&ds, std::slice::from_ref(&args.confounder))?,
        "iv" => {
            if instruments.is_empty() {
                return Err(Error::Config("iv needs --instruments".into()));
            }
            fit_iv2sls(&ds, &args.confounder, &instruments)?
        }
        "dml" => {
            let opts = FitOptions {
                lambda: 1e-3,
                seed: args.seed,
                ..Default::default()
            };
            fit_dml(&ds, &args.confounder, args.folds, &opts)?
        }
        other => return Err(Error::Config(format!("unknown method {other:?}"))),
    };
    write_json(&args.out, &fit)?;
    if let Some(dir) = &args.residualized_out {
        let resid = residualize(&ds, &fit)?;
        std::fs::create_dir_all(dir)?;
        write_dataset(&resid, dir)?;
    }
    for (name, alpha) in &fit.alpha {
        println!("alpha[{name}] = {alpha:.6} (se {:.6})", fit.stderr[name]);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalOutput {
    test_pair_auc: f64,
    test_mse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sentiment_corr_test: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    temporal_corr: Option<f64>,
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ds = read_dataset(&args.data)?;
    let model: RewardModel = serde_json::from_slice(&std::fs::read(&args.model)?)
        .map_err(|e| Error::Input(format!("model {}: {e}", args.model.display())))?;
    let test = ds.split_items(Split::Test);
    let train = ds.split_items(Split::Train);
    let test_pairs = ds.split_pairs(Split::Test);
    if test.is_empty() || test_pairs.is_empty() {
        return Err(Error::Input("eval needs test items and test pairs".into()));
    }
    let x: Vec<Vec<f64>> = test.iter().map(|it| it.embedding.clone()).collect();
    let y: Vec<f64> = test.iter().map(|it| it.outcome).collect();
    let sentiment_corr_test = {
        let sentiments: Option<Vec<f64>> =
            test.iter().map(|it| it.latent_value("sentiment")).collect();
        match sentiments {
            Some(s) => {
                let scores: Vec<f64> = test
                    .iter()
                    .map(|it| predict(&model, it))
                    .collect::<Result<_>>()?;
                Some(pearson(&scores, &s)?)
            }
            None => None,
        }
    };
    let tc = if test.iter().any(|it| it.time_month.is_some()) {
        temporal_corr(&model, &test, &train).ok()
    } else {
        None
    };
    let out = EvalOutput {
        test_pair_auc: roc_auc(&ds, &test_pairs, &model)?,
        test_mse: mse(&model, &x, &y),
        sentiment_corr_test,
        temporal_corr: tc,
    };
    write_json(&args.out, &out)?;
    println!("auc {:.4} mse {:.6}", out.test_pair_auc, out.test_mse);
    Ok(())
}

fn sweep_csv(report: &SweepReport) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["lambda", "train_mse", "valid_mse", "test_pair_auc", "temporal_corr"])
        .map_err(Error::from)?;
    for row in &report.rows {
        wtr.write_record([
            row.lambda.to_string(),
            row.train_mse.to_string(),
            row.valid_mse.to_string(),
            row.test_pair_auc.to_string(),
            row.temporal_corr.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(Error::from)?;
    }
    wtr.into_inner()
        .map_err(|e| Error::Input(format!("csv buffer error: {e}")))
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let ds = read_dataset(&args.data)?;
    let grid = parse_grid(&args.grid)?;
    let opts = FitOptions {
        seed: args.seed,
        ..Default::default()
    };
    let report = run_lambda_sweep(&ds, &grid, &opts)?;
    std::fs::create_dir_all(&args.out)?;
    let meta = ReportMeta::new(args.grid.as_bytes(), vec![args.seed]);
    let scenario = if ds.items.iter().any(|it| it.time_month.is_some()) {
        "temporal"
    } else {
        "dataset"
    };
    let tag = seed_range_tag(&[args.seed]);
    write_json(
        &args.out.join(format!("{scenario}_sweep_{tag}.json")),
        &WithMeta { meta, report: report.clone() },
    )?;
    atomic_write(
        &args.out.join(format!("{scenario}_sweep_{tag}.csv")),
        &sweep_csv(&report)?,
    )?;
    println!(
        "{} grid points; argmin_valid {} argmax_auc {}",
        report.rows.len(),
        report.argmin_valid_lambda,
        report.argmax_auc_lambda
    );
    Ok(())
}

fn scenario_csv(report: &EvalReport) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "arm",
        "seed",
        "corr_train",
        "corr_valid",
        "auc",
        "mean_selected_sentiment",
        "region_pick_rate",
        "alpha_hat",
    ])
    .map_err(Error::from)?;
    for row in &report.per_seed {
        wtr.write_record([
            row.arm.clone(),
            row.seed.to_string(),
            row.corr_train.to_string(),
            row.corr_valid.to_string(),
            row.auc.to_string(),
            row.mean_selected_sentiment.to_string(),
            row.region_pick_rate.to_string(),
            row.alpha_hat.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(Error::from)?;
    }
    wtr.into_inner()
        .map_err(|e| Error::Input(format!("csv buffer error: {e}")))
}

fn cmd_scenario(args: &ScenarioArgs) -> Result<()> {
    let (cfg, bytes) = load_config(&args.config)?;
    let dgp_cfg = cfg.dgp.clone().validated()?;
    let eval = cfg.eval.clone().unwrap_or_default();
    let seeds = match &args.seeds {
        Some(s) => parse_seed_list(s)?,
        None if !eval.seeds.is_empty() => eval.seeds.clone(),
        None => return Err(Error::Config("no seeds given (--seeds or eval.seeds)".into())),
    };
    let arms = match &args.arms {
        Some(s) => parse_arm_list(s)?,
        None if !eval.arms.is_empty() => eval
            .arms
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<Arm>>>()?,
        None => Arm::ALL.to_vec(),
    };
    let lambda = args.lambda.or(eval.lambda).unwrap_or(1e-3);
    let candidate_k = args.candidate_k.or(eval.candidate_k).unwrap_or(8);
    let report = run_scenario(&dgp_cfg, &arms, &seeds, lambda, candidate_k)?;
    std::fs::create_dir_all(&args.out)?;
    let meta = ReportMeta::new(&bytes, seeds.clone());
    let tag = seed_range_tag(&seeds);
    write_json(
        &args.out.join(format!("{}_scenario_{tag}.json", dgp_cfg.scenario)),
        &WithMeta { meta, report: report.clone() },
    )?;
    atomic_write(
        &args.out.join(format!("{}_scenario_{tag}.csv", dgp_cfg.scenario)),
        &scenario_csv(&report)?,
    )?;
    for row in &report.summary {
        println!(
            "{}: mean_sentiment {:.4} (se {:.4}) corr_valid {:.4}",
            row.stats.arm, row.stats.mean_sentiment, row.stats.se_sentiment, row.corr_valid
        );
    }
    Ok(())
}

fn weekday_csv(report: &WeekdayReport) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["arm", "seed", "marker_weight", "marker_pick_rate"])
        .map_err(Error::from)?;
    for arm in [&report.naive, &report.deconfounded] {
        for ((&seed, &w), &r) in report
            .seeds
            .iter()
            .zip(&arm.marker_weights)
            .zip(&arm.marker_pick_rates)
        {
            wtr.write_record([
                arm.arm.clone(),
                seed.to_string(),
                w.to_string(),
                r.to_string(),
            ])
            .map_err(Error::from)?;
        }
    }
    wtr.into_inner()
        .map_err(|e| Error::Input(format!("csv buffer error: {e}")))
}

fn cmd_weekday(args: &WeekdayArgs) -> Result<()> {
    let (cfg, bytes) = load_config(&args.config)?;
    let dgp_cfg = cfg.dgp.clone().validated()?;
    let eval = cfg.eval.clone().unwrap_or_default();
    let seeds = match &args.seeds {
        Some(s) => parse_seed_list(s)?,
        None if !eval.seeds.is_empty() => eval.seeds.clone(),
        None => return Err(Error::Config("no seeds given (--seeds or eval.seeds)".into())),
    };
    let skew = args
        .skew
        .or(eval.skew)
        .ok_or_else(|| Error::Config("no skew given (--skew or eval.skew)".into()))?;
    let lambda = args.lambda.or(eval.lambda).unwrap_or(0.01);
    let candidate_k = args.candidate_k.or(eval.candidate_k).unwrap_or(8);
    let report = run_weekday_study(&dgp_cfg, skew, &seeds, lambda, candidate_k)?;
    std::fs::create_dir_all(&args.out)?;
    let meta = ReportMeta::new(&bytes, seeds.clone());
    let tag = seed_range_tag(&seeds);
    write_json(
        &args.out.join(format!("weekday_marker_study_{tag}.json")),
        &WithMeta { meta, report: report.clone() },
    )?;
    atomic_write(
        &args.out.join(format!("weekday_marker_study_{tag}.csv")),
        &weekday_csv(&report)?,
    )?;
    println!(
        "naive marker weight {:.4} (p {:.4}); deconfounded {:.4} (p {:.4})",
        report.naive.marker_weight_mean,
        report.naive.weight_test.p,
        report.deconfounded.marker_weight_mean,
        report.deconfounded.weight_test.p
    );
    Ok(())
}

fn cmd_ingest(args: &IngestArgs) -> Result<()> {
    let format: IngestFormat = args.format.parse()?;
    let mapping = match &args.mapping {
        Some(path) => serde_json::from_slice(&std::fs::read(path)?)
            .map_err(|e| Error::Config(format!("mapping {}: {e}", path.display())))?,
        None => {
            if format == IngestFormat::Csv {
                return Err(Error::Config("csv ingest needs --mapping".into()));
            }
            ColumnMapping::default()
        }
    };
    let ds = ingest(&args.input, format, &mapping)?;
    std::fs::create_dir_all(&args.out)?;
    write_dataset(&ds, &args.out)?;
    println!("ingested {} items, {} pairs", ds.items.len(), ds.pairs.len());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Deconfound(a) => cmd_deconfound(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Scenario(a) => cmd_scenario(a),
        Command::Weekday(a) => cmd_weekday(a),
        Command::Ingest(a) => cmd_ingest(a),
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn cli_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit code is 2 for usage errors, 0 for --help/--version
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_specs() {
        let g = parse_grid("logspace(-3,3,13)").unwrap();
        assert_eq!(g.len(), 13);
        assert!((g[0] - 1e-3).abs() < 1e-12);
        assert!((g[12] - 1e3).abs() < 1e-9);
        let l = parse_grid("linspace(0,1,5)").unwrap();
        assert_eq!(l, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_grid("0.1, 0.2,0.3").unwrap(), vec![0.1, 0.2, 0.3]);
        assert!(parse_grid("logspace(1,2)").is_err());
        assert!(parse_grid("").is_err());
        assert!(parse_grid("abc").is_err());
    }

    #[test]
    fn seed_and_arm_lists() {
        assert_eq!(parse_seed_list("1, 2,3").unwrap(), vec![1, 2, 3]);
        assert!(parse_seed_list("").is_err());
        assert!(parse_seed_list("x").is_err());
        let arms = parse_arm_list("naive_observed,deconfound_iv").unwrap();
        assert_eq!(arms, vec![Arm::NaiveObserved, Arm::DeconfoundIv]);
        assert!(parse_arm_list("bogus").is_err());
    }

    #[test]
    fn config_rejects_unknown_keys_and_names_missing_fields() {
        let bad: std::result::Result<ConfigFile, _> =
            serde_json::from_str(r#"{"dgp": {"scenario": "orthogonal", "n": 10, "seed": 1}, "bogus": 1}"#);
        assert!(bad.is_err());
        let missing: std::result::Result<DgpConfig, _> =
            serde_json::from_str(r#"{"scenario": "orthogonal", "n": 10}"#);
        let msg = missing.unwrap_err().to_string();
        assert!(msg.contains("seed"), "message should name the field: {msg}");
    }

    #[test]
    fn report_meta_hash_is_stable() {
        let a = ReportMeta::new(b"config", vec![1]);
        let b = ReportMeta::new(b"config", vec![1]);
        assert_eq!(a.config_hash, b.config_hash);
        assert_eq!(a.config_hash.len(), 64);
        assert_ne!(ReportMeta::new(b"other", vec![1]).config_hash, a.config_hash);
    }
}
