//! Subcommands of the `cogcast` binary. Every command writes its outputs and
//! a `manifest.json` under `--out`; `rerun` replays a manifest.

pub mod config;
pub mod manifest;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use cogcast::backbone::Backbone;
use cogcast::data::{
    cohort_stats, load_cohort_cache, parse_adni_csv, save_cohort_cache, select_cohort, synth_cohort, Schema,
    SynthProfile, COHORT_CACHE_FILE, COHORT_MANIFEST_FILE,
};
use cogcast::eval::{
    evaluate, protocol_split, run_ablation, run_protocol, ConstantMean, Locf, ModelForecaster, RunRecord, FRACTIONS,
    HORIZONS, SEEDS,
};
use cogcast::model::CHECKPOINT_FILE;
use cogcast::prompt::display_name;
use cogcast::train::{train, write_loss_csv};
use cogcast::{AblationVariant, Cohort, EvalReport, ModelBundle, ModelConfig, ProtocolConfig};
use serde::{Deserialize, Serialize};

pub use config::{BackboneSource, Overrides, Settings};
pub use manifest::{file_digest, RunManifest, MANIFEST_FILE};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const RUN_FILE: &str = "run.json";
pub const BACKBONE_FILE: &str = "backbone.tensors";

#[derive(Parser, Debug)]
#[command(
    name = "cogcast",
    version,
    about = "Forecast longitudinal clinical scores with a frozen transformer"
)]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Parse an ADNI-style CSV, select the cohort and cache it
    Prepare(PrepareArgs),
    /// Generate a synthetic cohort cache
    Synth(SynthArgs),
    /// Train one model on a seeded split
    Train(TrainArgs),
    /// Score a trained checkpoint and the baselines on its test split
    Eval(EvalArgs),
    /// Seeds × training fractions × horizons, aggregated over seeds
    Protocol(ProtocolArgs),
    /// One-axis ablations of the default model
    Ablate(AblateArgs),
    /// Forecast one subject with a trained checkpoint
    Forecast(ForecastArgs),
    /// Write a randomly initialised backbone container
    InitBackbone(InitBackboneArgs),
    /// Replay the command recorded in a manifest
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Prepare(_) => "prepare",
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Protocol(_) => "protocol",
            Command::Ablate(_) => "ablate",
            Command::Forecast(_) => "forecast",
            Command::InitBackbone(_) => "init-backbone",
            Command::Rerun(_) => "rerun",
        }
    }
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareArgs {
    /// Wide CSV, one row per subject
    #[arg(long)]
    pub input: PathBuf,
    /// `logical=column` schema file (ADNIMERGE-style names when omitted)
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Number of subjects
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArgs {
    /// TOML file with any of the setting flags (kebab-case keys)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Backbone container; a random backbone is built when omitted
    #[arg(long)]
    pub backbone: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

impl ModelArgs {
    fn settings(&self) -> anyhow::Result<Settings> {
        self.overrides.resolve(self.config.as_deref(), self.backbone.as_deref())
    }

    /// Self-contained form with every setting spelled out.
    fn resolved(&self, settings: &Settings) -> Self {
        Self {
            config: None,
            backbone: self.backbone.clone(),
            overrides: settings.to_overrides(),
        }
    }
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Cohort cache directory
    #[arg(long)]
    pub cohort: PathBuf,
    /// Visit month to forecast (12, 18, 24, 36 or 48)
    #[arg(long, default_value_t = 12)]
    pub horizon: u32,
    /// Training fraction: 0.7 is the full training split, smaller values subsample it
    #[arg(long, default_value_t = 0.7)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    /// Checkpoint directory written by `train`
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = SEEDS)]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = HORIZONS)]
    pub horizons: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_values_t = FRACTIONS)]
    pub fractions: Vec<f64>,
    /// Seeds trained concurrently
    #[arg(long, default_value_t = 1)]
    #[serde(skip, default = "one")]
    pub jobs: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

fn one() -> usize {
    1
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    /// default, layers=6, prompt=off, revin=off, prototypes=1000, heads=4 or all (repeatable)
    #[arg(long, default_value = "all")]
    pub axis: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = HORIZONS)]
    pub horizons: Vec<u32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub subject_id: String,
    /// Month to forecast from all earlier visits (the checkpoint's horizon by default)
    #[arg(long)]
    pub upto: Option<u32>,
    /// Also write forecast.json and a manifest here
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitBackboneArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

/// What a checkpoint was trained on, stored beside its tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRun {
    pub settings: Settings,
    pub seed: u64,
    pub fraction: f64,
    pub horizon: u32,
    pub cohort_digest: String,
}

/// Manifest plus a human-readable summary for stdout.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub summary: String,
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn cohort_digest(dir: &Path) -> anyhow::Result<String> {
    let a = file_digest(&dir.join(COHORT_CACHE_FILE))?;
    let b = file_digest(&dir.join(COHORT_MANIFEST_FILE))?;
    Ok(cogcast::container::sha256_hex(format!("{a}{b}").as_bytes()))
}

fn load_cohort(dir: &Path) -> anyhow::Result<(Cohort, String)> {
    let cohort = load_cohort_cache(dir).with_context(|| format!("loading cohort cache {}", dir.display()))?;
    Ok((cohort, cohort_digest(dir)?))
}

fn record_backbone(m: &mut RunManifest, backbone: &Backbone<f32>) {
    m.inputs.insert("backbone".into(), backbone.digest());
}

/// Runs one command and writes its manifest.
pub fn execute(cmd: &Command) -> anyhow::Result<Outcome> {
    match cmd {
        Command::Prepare(a) => prepare(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Protocol(a) => protocol(a),
        Command::Ablate(a) => ablate(a),
        Command::Forecast(a) => forecast(a),
        Command::InitBackbone(a) => init_backbone(a),
        Command::Rerun(a) => rerun(a),
    }
}

fn cache_outputs(cohort: &Cohort, out: &Path, m: &mut RunManifest) -> anyhow::Result<String> {
    create_dir(out)?;
    save_cohort_cache(cohort, out)?;
    let stats = cohort_stats(cohort).render();
    write_text(&out.join("stats.txt"), &stats)?;
    for f in [COHORT_CACHE_FILE, COHORT_MANIFEST_FILE, "stats.txt"] {
        m.add_output(out, f)?;
    }
    Ok(stats)
}

fn prepare(a: &PrepareArgs) -> anyhow::Result<Outcome> {
    let schema = match &a.schema {
        Some(p) => Schema::load(p).with_context(|| format!("loading schema {}", p.display()))?,
        None => Schema::default(),
    };
    let raw = parse_adni_csv(&a.input, &schema).with_context(|| format!("parsing {}", a.input.display()))?;
    let cohort = select_cohort(&raw);
    let mut m = RunManifest::new(Command::Prepare(a.clone()), &())?;
    m.inputs.insert("csv".into(), file_digest(&a.input)?);
    if let Some(p) = &a.schema {
        m.inputs.insert("schema".into(), file_digest(p)?);
    }
    let stats = cache_outputs(&cohort, &a.out, &mut m)?;
    m.write(&a.out)?;
    let summary = format!("kept {} of {} subjects\n{stats}", cohort.len(), raw.len());
    Ok(Outcome { manifest: m, summary })
}

fn synth(a: &SynthArgs) -> anyhow::Result<Outcome> {
    let profile = SynthProfile::default();
    let cohort = synth_cohort(a.n, a.seed, &profile)?;
    let mut m = RunManifest::new(Command::Synth(a.clone()), &profile)?;
    let stats = cache_outputs(&cohort, &a.out, &mut m)?;
    m.write(&a.out)?;
    Ok(Outcome {
        manifest: m,
        summary: format!("{} synthetic subjects\n{stats}", cohort.len()),
    })
}

fn train_cmd(a: &TrainArgs) -> anyhow::Result<Outcome> {
    let settings = a.model.settings()?;
    let (cohort, digest) = load_cohort(&a.cohort)?;
    let backbone = settings.backbone.build()?;
    let split = protocol_split(&cohort, a.seed, a.fraction)?;
    let model = ModelConfig {
        upto_month: a.horizon,
        seed: a.seed,
        ..settings.model.clone()
    };
    let tc = cogcast::TrainConfig {
        seed: a.seed,
        ..settings.train.clone()
    };
    let mut bundle = ModelBundle::new(model, backbone.clone(), cohort.variable_names.clone())?;
    let outcome = train(&mut bundle, &cohort, &split.train_ids, &split.val_ids, &tc)?;

    create_dir(&a.out)?;
    let ckpt = a.out.join(CHECKPOINT_DIR);
    bundle.save_checkpoint(&ckpt)?;
    let run = CheckpointRun {
        settings: settings.clone(),
        seed: a.seed,
        fraction: a.fraction,
        horizon: a.horizon,
        cohort_digest: digest.clone(),
    };
    write_json(&ckpt.join(RUN_FILE), &run)?;
    write_loss_csv(a.out.join("loss.csv"), &outcome.history)?;

    let invocation = TrainArgs {
        model: a.model.resolved(&settings),
        ..a.clone()
    };
    let mut m = RunManifest::new(Command::Train(invocation), &settings)?;
    m.inputs.insert("cohort".into(), digest);
    record_backbone(&mut m, &backbone);
    m.seeds = vec![a.seed];
    for f in [
        format!("{CHECKPOINT_DIR}/{CHECKPOINT_FILE}"),
        format!("{CHECKPOINT_DIR}/{}", cogcast::model::CHECKPOINT_MANIFEST),
        format!("{CHECKPOINT_DIR}/{RUN_FILE}"),
        "loss.csv".to_string(),
    ] {
        m.add_output(&a.out, &f)?;
    }
    m.write(&a.out)?;
    let (tr, va, te) = split.sizes();
    let first = outcome.history.first().map_or(f64::NAN, |e| e.train_loss);
    let last = outcome.history.last().map_or(f64::NAN, |e| e.train_loss);
    let summary = format!(
        "split {tr}/{va}/{te}; train loss {first:.4} -> {last:.4}; best epoch {} of {}",
        outcome.best_epoch,
        outcome.history.len()
    );
    Ok(Outcome { manifest: m, summary })
}

fn load_checkpoint(dir: &Path) -> anyhow::Result<(CheckpointRun, ModelBundle<f32>)> {
    let run: CheckpointRun = read_json(&dir.join(RUN_FILE))?;
    let backbone = run.settings.backbone.build()?;
    let bundle =
        ModelBundle::load_checkpoint(dir, backbone).with_context(|| format!("loading checkpoint {}", dir.display()))?;
    Ok((run, bundle))
}

#[derive(Serialize)]
struct BaselineRow<'a> {
    method: &'a str,
    variable: &'a str,
    horizon_months: u32,
    mae: Option<f64>,
    n_test_observed: usize,
}

fn eval_cmd(a: &EvalArgs) -> anyhow::Result<Outcome> {
    let (run, bundle) = load_checkpoint(&a.checkpoint)?;
    let (cohort, digest) = load_cohort(&a.cohort)?;
    if digest != run.cohort_digest {
        log::warn!("cohort differs from the one the checkpoint was trained on");
    }
    let split = protocol_split(&cohort, run.seed, run.fraction)?;
    let upto = bundle.config.upto_month;
    let model_fc = ModelForecaster::new(&bundle)?;
    let mean_fc = ConstantMean::fit(&cohort, &split.train_ids, upto)?;
    let forecasters: [(&str, &dyn cogcast::Forecaster); 3] =
        [("Model", &model_fc), ("LOCF", &Locf), ("ConstantMean", &mean_fc)];

    let mut rows = Vec::new();
    let mut model_record = None;
    let mut table = format!("{:<14} {:<10} {:>8} {:>6}\n", "method", "variable", "MAE", "n");
    for (name, fc) in forecasters {
        let res = evaluate(fc, &cohort, &split.test_ids, upto)?;
        for (v, var) in cohort.variable_names.iter().enumerate() {
            let mae = res.mae(v);
            let _ = writeln!(
                table,
                "{name:<14} {:<10} {:>8} {:>6}",
                display_name(var),
                mae.map_or("-".into(), |x| format!("{x:.4}")),
                res.counts[v]
            );
            rows.push(BaselineRow {
                method: name,
                variable: var,
                horizon_months: upto,
                mae,
                n_test_observed: res.counts[v],
            });
        }
        if name == "Model" {
            let (tr, va, te) = split.sizes();
            model_record = Some(RunRecord {
                seed: run.seed,
                fraction: run.fraction,
                horizon_months: upto,
                train: tr,
                val: va,
                test: te,
                config_digest: cogcast::eval::config_digest(&bundle.config, &run.settings.train)?,
                mae: (0..cohort.n_variables()).map(|v| res.mae(v)).collect(),
                counts: res.counts.clone(),
            });
        }
    }
    let report = EvalReport::from_runs(cohort.variable_names.clone(), model_record.into_iter().collect());

    create_dir(&a.out)?;
    report.write_csv(a.out.join("report.csv"))?;
    let mut w = csv::Writer::from_path(a.out.join("baselines.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    write_text(&a.out.join("report.txt"), &table)?;

    let mut m = RunManifest::new(Command::Eval(a.clone()), &run)?;
    m.inputs.insert("cohort".into(), digest);
    m.inputs
        .insert("checkpoint".into(), file_digest(&a.checkpoint.join(CHECKPOINT_FILE))?);
    m.seeds = vec![run.seed];
    for f in ["report.csv", "baselines.csv", "report.txt"] {
        m.add_output(&a.out, f)?;
    }
    m.write(&a.out)?;
    Ok(Outcome {
        manifest: m,
        summary: table,
    })
}

fn protocol(a: &ProtocolArgs) -> anyhow::Result<Outcome> {
    let settings = a.model.settings()?;
    let (cohort, digest) = load_cohort(&a.cohort)?;
    let backbone = settings.backbone.build()?;
    if a.seeds.is_empty() || a.horizons.is_empty() || a.fractions.is_empty() {
        bail!("protocol needs at least one seed, horizon and fraction");
    }
    let cfg = ProtocolConfig {
        horizons: a.horizons.clone(),
        fractions: a.fractions.clone(),
        seeds: a.seeds.clone(),
        model: settings.model.clone(),
        train: settings.train.clone(),
    };
    let runs = protocol_runs(&cohort, &backbone, &cfg, a.jobs.max(1))?;
    let report = EvalReport::from_runs(cohort.variable_names.clone(), runs);

    create_dir(&a.out)?;
    report.write_csv(a.out.join("report.csv"))?;
    let table = report.render_table();
    write_text(&a.out.join("report.txt"), &table)?;
    write_json(&a.out.join("runs.json"), &report.runs)?;

    let invocation = ProtocolArgs {
        model: a.model.resolved(&settings),
        ..a.clone()
    };
    let mut m = RunManifest::new(Command::Protocol(invocation), &cfg)?;
    m.inputs.insert("cohort".into(), digest);
    record_backbone(&mut m, &backbone);
    m.seeds = a.seeds.clone();
    for f in ["report.csv", "report.txt", "runs.json"] {
        m.add_output(&a.out, f)?;
    }
    m.write(&a.out)?;
    let summary = format!("{} training runs\n{table}", report.runs.len());
    Ok(Outcome { manifest: m, summary })
}

/// Runs seeds in up to `jobs` threads; the run order matches a sequential pass.
fn protocol_runs(
    cohort: &Cohort,
    backbone: &Arc<Backbone<f32>>,
    cfg: &ProtocolConfig,
    jobs: usize,
) -> anyhow::Result<Vec<RunRecord>> {
    let per_seed = |seed: u64| -> anyhow::Result<Vec<RunRecord>> {
        let one = ProtocolConfig {
            seeds: vec![seed],
            ..cfg.clone()
        };
        let report = run_protocol(cohort, backbone, &one, |r| {
            log::info!(
                "seed {} fraction {} horizon {}: {:?}",
                r.seed,
                r.fraction,
                r.horizon_months,
                r.mae
            )
        })?;
        Ok(report.runs)
    };
    let mut runs = Vec::new();
    for chunk in cfg.seeds.chunks(jobs) {
        let results: Vec<anyhow::Result<Vec<RunRecord>>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&seed| s.spawn(move || per_seed(seed))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(anyhow!("protocol worker panicked"))))
                .collect()
        });
        for r in results {
            runs.extend(r?);
        }
    }
    Ok(runs)
}

fn parse_axes(axes: &[String]) -> anyhow::Result<Vec<AblationVariant>> {
    let mut out = Vec::new();
    for a in axes {
        if a == "all" {
            out.extend(AblationVariant::ALL);
        } else {
            out.push(AblationVariant::parse(a)?);
        }
    }
    out.dedup();
    Ok(out)
}

fn ablate(a: &AblateArgs) -> anyhow::Result<Outcome> {
    let settings = a.model.settings()?;
    let variants = parse_axes(&a.axis)?;
    let (cohort, digest) = load_cohort(&a.cohort)?;
    let backbone = settings.backbone.build()?;
    let table = run_ablation(
        &cohort,
        &backbone,
        &settings.model,
        &settings.train,
        &variants,
        &a.horizons,
        a.seed,
    )?;
    create_dir(&a.out)?;
    write_text(&a.out.join("ablation.csv"), &table.to_csv()?)?;
    let text = table.render_table();
    write_text(&a.out.join("ablation.txt"), &text)?;

    let invocation = AblateArgs {
        model: a.model.resolved(&settings),
        ..a.clone()
    };
    let mut m = RunManifest::new(Command::Ablate(invocation), &settings)?;
    m.inputs.insert("cohort".into(), digest);
    record_backbone(&mut m, &backbone);
    m.seeds = vec![a.seed];
    for f in ["ablation.csv", "ablation.txt"] {
        m.add_output(&a.out, f)?;
    }
    m.write(&a.out)?;
    Ok(Outcome {
        manifest: m,
        summary: text,
    })
}

#[derive(Serialize)]
struct VariableForecast {
    variable: String,
    value: Option<f64>,
}

#[derive(Serialize)]
struct ForecastFile {
    subject_id: String,
    upto_month: u32,
    forecasts: Vec<VariableForecast>,
}

fn forecast(a: &ForecastArgs) -> anyhow::Result<Outcome> {
    let (run, bundle) = load_checkpoint(&a.checkpoint)?;
    let (cohort, digest) = load_cohort(&a.cohort)?;
    let subject = cohort
        .subject(&a.subject_id)
        .ok_or_else(|| anyhow!("subject `{}` is not in the cohort", a.subject_id))?;
    let upto = a.upto.unwrap_or(run.horizon);
    let out = bundle.predict_next_visit(subject, upto)?;
    let file = ForecastFile {
        subject_id: a.subject_id.clone(),
        upto_month: upto,
        forecasts: bundle
            .variables
            .iter()
            .zip(&out.y_hat)
            .map(|(v, y)| VariableForecast {
                variable: v.clone(),
                value: y.first().copied().filter(|x| x.is_finite()),
            })
            .collect(),
    };
    let mut summary = format!("subject {} at month {upto}\n", a.subject_id);
    for f in &file.forecasts {
        let value = f.value.map_or("skipped (no history)".into(), |x| format!("{x:.3}"));
        let _ = writeln!(summary, "{:<10} {value}", display_name(&f.variable));
    }
    let mut m = RunManifest::new(Command::Forecast(a.clone()), &run)?;
    m.inputs.insert("cohort".into(), digest);
    m.inputs
        .insert("checkpoint".into(), file_digest(&a.checkpoint.join(CHECKPOINT_FILE))?);
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_json(&dir.join("forecast.json"), &file)?;
        m.add_output(dir, "forecast.json")?;
        m.write(dir)?;
    }
    Ok(Outcome { manifest: m, summary })
}

fn init_backbone(a: &InitBackboneArgs) -> anyhow::Result<Outcome> {
    let settings = a.overrides.resolve(None, None)?;
    let backbone = settings.backbone.build()?;
    create_dir(&a.out)?;
    backbone.save(a.out.join(BACKBONE_FILE))?;
    let invocation = InitBackboneArgs {
        overrides: settings.to_overrides(),
        out: a.out.clone(),
    };
    let mut m = RunManifest::new(Command::InitBackbone(invocation), &settings.backbone.config)?;
    m.add_output(&a.out, BACKBONE_FILE)?;
    m.write(&a.out)?;
    Ok(Outcome {
        summary: format!("backbone digest {}", backbone.digest()),
        manifest: m,
    })
}

/// Points a recorded command at a new output directory.
fn with_out(cmd: &Command, out: &Path) -> anyhow::Result<Command> {
    let mut cmd = cmd.clone();
    match &mut cmd {
        Command::Prepare(a) => a.out = out.into(),
        Command::Synth(a) => a.out = out.into(),
        Command::Train(a) => a.out = out.into(),
        Command::Eval(a) => a.out = out.into(),
        Command::Protocol(a) => a.out = out.into(),
        Command::Ablate(a) => a.out = out.into(),
        Command::Forecast(a) => a.out = Some(out.into()),
        Command::InitBackbone(a) => a.out = out.into(),
        Command::Rerun(_) => bail!("a manifest cannot record a rerun"),
    }
    Ok(cmd)
}

fn rerun(a: &RerunArgs) -> anyhow::Result<Outcome> {
    let recorded: RunManifest = read_json(&a.manifest)?;
    let cmd = with_out(&recorded.invocation, &a.out)?;
    let outcome = execute(&cmd)?;
    let changed: BTreeMap<&String, (&String, Option<&String>)> = recorded
        .outputs
        .iter()
        .map(|(k, v)| (k, (v, outcome.manifest.outputs.get(k))))
        .filter(|(_, (a, b))| Some(*a) != *b)
        .collect();
    let mut summary = outcome.summary;
    if changed.is_empty() {
        summary.push_str("\nall outputs match the recorded digests\n");
    } else {
        for (k, _) in changed {
            let _ = writeln!(summary, "output {k} differs from the recorded digest");
        }
    }
    Ok(Outcome {
        manifest: outcome.manifest,
        summary,
    })
}
