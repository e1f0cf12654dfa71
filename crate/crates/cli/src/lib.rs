//! Command-line front end: synthetic data, training, synthesis, evaluation,
//! score aggregation and ablation grids.
//!
//! Every command that writes artifacts also writes `manifest.json` into its
//! output directory. The manifest holds the command, the resolved
//! configuration, the seed and the tool version, which is enough to rerun it.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ambigzsl::checkpoint::{load_checkpoint, save_checkpoint};
use ambigzsl::data::{generate_synthetic_bundle, load_dataset_dir, write_dataset, ClassId, SyntheticSpec};
use ambigzsl::eval::{aggregate, emit_report, read_scores, records_from_scores, render_table, MetricsRecord, Report, Setting};
use ambigzsl::mixer::{LambdaPolicy, PoolSelector};
use ambigzsl::numfmt::fmt_sig9;
use ambigzsl::rng::derive_seed;
use ambigzsl::trainer::{evaluate, regularize_pretrained, synthesize_features, train, Mode, TrainConfig};

pub const LOG_ENV: &str = "AMBIGZSL_LOG_LEVEL";

const AGGREGATE_ABOUT: &str = "\
Aggregate published or measured scores with mNRG.

For each dataset the gain is the method's score minus the reference method's
score in the inductive setting of the same task; mNRG is the median of the
gains (mean of the two central gains for an even number of datasets). ZSL
settings aggregate T1, GZSL settings aggregate H. This raw-difference rule
reproduces every mNRG value of the published comparison tables; the
normalized variant of the metric does not.";

#[derive(Parser, Debug)]
#[command(name = "ambigzsl", version, about = "Zero-shot learning with a semantic-ambiguity regularizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset bundle.
    GenData(GenDataArgs),
    /// Train a model on a dataset bundle.
    Train(TrainArgs),
    /// Generate features from a trained model.
    Synth(SynthArgs),
    /// Fit final classifiers on synthesized features and report ZSL/GZSL accuracy.
    Eval(EvalArgs),
    #[command(about = "Aggregate scores across datasets with mNRG", long_about = AGGREGATE_ABOUT)]
    Aggregate(AggregateArgs),
    /// Train and evaluate once per mixing-proportion policy.
    AblateLambda(AblateLambdaArgs),
    /// Train and evaluate once per prototype pool.
    AblatePool(AblatePoolArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    n_seen: usize,
    #[arg(long, default_value_t = 3)]
    n_unseen: usize,
    /// Visual feature dimension.
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    /// Prototype dimension.
    #[arg(long, default_value_t = 8)]
    prototype_dim: usize,
    #[arg(long, default_value_t = 40)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Inductive,
    Transductive,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Inductive => Mode::Inductive,
            ModeArg::Transductive => Mode::Transductive,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PoolArg {
    Seen,
    Unseen,
    Both,
}

impl From<PoolArg> for PoolSelector {
    fn from(p: PoolArg) -> Self {
        match p {
            PoolArg::Seen => PoolSelector::Seen,
            PoolArg::Unseen => PoolSelector::Unseen,
            PoolArg::Both => PoolSelector::Both,
        }
    }
}

/// Flags that override fields of the training configuration.
#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// JSON or TOML file with training-configuration fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// e.g. fixed:0.5, uniform:0:1, normal:0.5:0.25, beta:0.3:0.3
    #[arg(long)]
    lambda_policy: Option<LambdaPolicy>,
    #[arg(long, value_enum)]
    pool: Option<PoolArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    ambiguity_weight: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::from_path(p).with_context(|| format!("--config {}", p.display()))?,
            None => TrainConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.mode {
            cfg.mode = m.into();
        }
        if let Some(p) = &self.lambda_policy {
            cfg.lambda_policy = *p;
        }
        if let Some(p) = self.pool {
            cfg.pool = p.into();
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(w) = self.ambiguity_weight {
            cfg.ambiguity_weight = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset bundle directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Start from this checkpoint's encoder and generator, with fresh critics.
    #[arg(long)]
    finetune: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ClassSelection {
    Seen,
    Unseen,
    All,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Samples per class; defaults to the checkpoint's synth_per_unseen.
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long, value_enum, default_value = "unseen")]
    classes: ClassSelection,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Method name written into the records.
    #[arg(long, default_value = "ambigzsl")]
    method: String,
}

#[derive(Args, Debug)]
struct AggregateArgs {
    /// CSV with columns method,dataset,setting,metric,value.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value = "CLSWGAN")]
    reference: String,
    /// ZSL-IN, ZSL-TR, GZSL-IN or GZSL-TR; repeatable. Defaults to all four.
    #[arg(long)]
    setting: Vec<Setting>,
    /// Dataset left out of the aggregation; repeatable.
    #[arg(long)]
    exclude: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args, Debug)]
struct AblateLambdaArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Comma-separated policies.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "beta:0.3:0.3,uniform:0:1,normal:0.5:0.25,fixed:0.5,fixed:0.2"
    )]
    policies: Vec<LambdaPolicy>,
}

#[derive(Args, Debug)]
struct AblatePoolArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "both,seen,unseen")]
    pools: Vec<PoolArg>,
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a TrainConfig>,
    params: T,
}

fn write_manifest<T: Serialize>(
    out: &Path,
    command: &str,
    seed: u64,
    data: Option<&Path>,
    config: Option<&TrainConfig>,
    params: T,
) -> Result<()> {
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        data: data.map(|p| p.display().to_string()),
        config,
        params,
    };
    fs::create_dir_all(out).with_context(|| format!("--out {}", out.display()))?;
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}

fn load_data(dir: &Path) -> Result<ambigzsl::DatasetBundle> {
    load_dataset_dir(dir).with_context(|| format!("--data {}", dir.display()))
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n_seen: a.n_seen,
        n_unseen: a.n_unseen,
        d: a.feature_dim,
        a: a.prototype_dim,
        samples_per_class: a.samples_per_class,
        noise_scale: a.noise,
        seed: a.seed,
    };
    let bundle = generate_synthetic_bundle(&spec)?;
    write_dataset(&bundle, &a.out).with_context(|| format!("--out {}", a.out.display()))?;
    write_manifest(&a.out, "gen-data", a.seed, None, None, &spec)?;
    log::info!("wrote {} samples to {}", bundle.n_samples(), a.out.display());
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let bundle = load_data(&a.data)?;
    let model = match &a.finetune {
        Some(p) => {
            let base = load_checkpoint(p).with_context(|| format!("--finetune {}", p.display()))?;
            regularize_pretrained(&base.params, &bundle, &cfg)?
        }
        None => train(&bundle, &cfg)?,
    };
    fs::create_dir_all(&a.out).with_context(|| format!("--out {}", a.out.display()))?;
    save_checkpoint(&model, &a.out.join("checkpoint.json"))?;
    model.write_loss_log(&a.out.join("loss_log.csv"))?;
    fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    write_manifest(
        &a.out,
        "train",
        cfg.seed,
        Some(&a.data),
        Some(&cfg),
        serde_json::json!({ "finetune": a.finetune.as_ref().map(|p| p.display().to_string()) }),
    )?;
    log::info!(
        "{} generator steps, {} critic iterations; checkpoint in {}",
        model.generator_updates,
        model.critic_updates,
        a.out.display()
    );
    Ok(())
}

fn synth_cmd(a: &SynthArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint).with_context(|| format!("--checkpoint {}", a.checkpoint.display()))?;
    let bundle = load_data(&a.data)?;
    let split = bundle.split();
    let classes: Vec<ClassId> = match a.classes {
        ClassSelection::Seen => split.seen.clone(),
        ClassSelection::Unseen => split.unseen.clone(),
        ClassSelection::All => split.all_classes(),
    };
    let n = a.per_class.unwrap_or(model.config.synth_per_unseen);
    let set = synthesize_features(&model, &bundle, &classes, n, a.seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("--out {}", a.out.display()))?;
    let rows: Vec<String> = set
        .features
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| fmt_sig9(v)).collect::<Vec<_>>().join(","))
        .collect();
    fs::write(a.out.join("features.csv"), rows.join("\n") + "\n")?;
    let labels: Vec<String> = set.labels.iter().map(|c| c.to_string()).collect();
    fs::write(a.out.join("labels.csv"), labels.join("\n") + "\n")?;
    write_manifest(
        &a.out,
        "synth",
        a.seed,
        Some(&a.data),
        Some(&model.config),
        serde_json::json!({
            "checkpoint": a.checkpoint.display().to_string(),
            "classes": a.classes,
            "per_class": n,
        }),
    )?;
    log::info!("wrote {} synthetic features", set.len());
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint).with_context(|| format!("--checkpoint {}", a.checkpoint.display()))?;
    let bundle = load_data(&a.data)?;
    let records = evaluate(&model, &bundle, &a.method)?;
    fs::create_dir_all(&a.out).with_context(|| format!("--out {}", a.out.display()))?;
    fs::write(a.out.join("metrics.json"), serde_json::to_string_pretty(&records)? + "\n")?;
    let report = Report {
        records,
        aggregates: vec![],
    };
    emit_report(&report, &a.out)?;
    write_manifest(
        &a.out,
        "eval",
        model.config.seed,
        Some(&a.data),
        Some(&model.config),
        serde_json::json!({ "checkpoint": a.checkpoint.display().to_string(), "method": a.method }),
    )?;
    print!("{}", render_table(&report));
    Ok(())
}

fn aggregate_cmd(a: &AggregateArgs) -> Result<()> {
    let rows = read_scores(&a.scores).with_context(|| format!("--scores {}", a.scores.display()))?;
    let all_records = records_from_scores(&rows);
    let settings: Vec<Setting> = if a.setting.is_empty() {
        ["ZSL-IN", "ZSL-TR", "GZSL-IN", "GZSL-TR"]
            .iter()
            .map(|s| s.parse().expect("valid setting"))
            .collect()
    } else {
        a.setting.clone()
    };
    let mut report = Report::default();
    for st in &settings {
        let summary = aggregate(&all_records, &a.reference, *st, &a.exclude).with_context(|| format!("--setting {st}"))?;
        for (m, why) in &summary.skipped {
            log::warn!("{st}: skipped {m}: {why}");
        }
        report.aggregates.extend(summary.reports);
        report.records.extend(
            all_records
                .iter()
                .filter(|r| r.setting == *st && !a.exclude.contains(&r.dataset))
                .cloned(),
        );
    }
    if let Some(out) = &a.out {
        emit_report(&report, out).with_context(|| format!("--out {}", out.display()))?;
        write_manifest(
            out,
            "aggregate",
            0,
            None,
            None,
            serde_json::json!({
                "scores": a.scores.display().to_string(),
                "reference": a.reference,
                "settings": settings.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                "exclude": a.exclude,
            }),
        )?;
    }
    print!("{}", render_table(&report));
    Ok(())
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect()
}

/// One training and evaluation per grid point, each with its own derived
/// seed; records are named `method`.
fn run_grid(grid: &GridArgs, command: &str, points: Vec<(String, TrainConfig)>) -> Result<()> {
    let base = grid.cfg.resolve()?;
    let bundle = load_data(&grid.data)?;
    let mut records: Vec<MetricsRecord> = Vec::new();
    for (i, (label, mut cfg)) in points.into_iter().enumerate() {
        cfg.seed = derive_seed(base.seed, i as u64);
        log::info!("{command}: {label} (seed {})", cfg.seed);
        let model = train(&bundle, &cfg)?;
        let recs = evaluate(&model, &bundle, &label)?;
        let dir = grid.out.join(format!("{i:02}_{}", slug(&label)));
        fs::create_dir_all(&dir).with_context(|| format!("--out {}", grid.out.display()))?;
        fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&recs)? + "\n")?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
        records.extend(recs);
    }
    let report = Report {
        records,
        aggregates: vec![],
    };
    emit_report(&report, &grid.out)?;
    write_manifest(&grid.out, command, base.seed, Some(&grid.data), Some(&base), serde_json::json!({}))?;
    print!("{}", render_table(&report));
    Ok(())
}

fn ablate_lambda(a: &AblateLambdaArgs) -> Result<()> {
    let base = a.grid.cfg.resolve()?;
    if a.policies.is_empty() {
        bail!("--policies is empty");
    }
    let points = a
        .policies
        .iter()
        .map(|p| {
            (
                format!("lambda={p}"),
                TrainConfig {
                    lambda_policy: *p,
                    ..base.clone()
                },
            )
        })
        .collect();
    run_grid(&a.grid, "ablate-lambda", points)
}

fn ablate_pool(a: &AblatePoolArgs) -> Result<()> {
    let base = a.grid.cfg.resolve()?;
    if a.pools.is_empty() {
        bail!("--pools is empty");
    }
    let points = a
        .pools
        .iter()
        .map(|&p| {
            let pool: PoolSelector = p.into();
            (format!("pool={pool}"), TrainConfig { pool, ..base.clone() })
        })
        .collect();
    run_grid(&a.grid, "ablate-pool", points)
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "info");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns 0 on success, 2 on usage errors and 1 on runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging();
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Aggregate(a) => aggregate_cmd(a),
        Command::AblateLambda(a) => ablate_lambda(a),
        Command::AblatePool(a) => ablate_pool(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
