//! Command-line interface: `gen-data`, `train`, `eval`, `ablate`, `plot`.
//!
//! Exit codes are 0 on success, 1 for usage errors, 2 for data and I/O
//! errors and 3 for numeric failures.

use crate::checkpoint;
use crate::eval::{ablation_sweep, evaluate, report_csv, sweep_csv, zero_shot_csv, EvalReport, Variant};
use crate::io;
use crate::losses::LossWeights;
use crate::plot;
use crate::projection::BankConfig;
use crate::scene::{generate_dataset, Dataset, DatasetConfig};
use crate::trainer::{log_csv, train, AdamWConfig, TrainConfig};
use crate::Error;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const ZERO_SHOT_FILE: &str = "zero_shot.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Parser, Debug)]
#[command(name = "semclip", version, about = "Contrastive image-text training with paraphrase and negation losses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a validated synthetic dataset.
    GenData(GenDataArgs),
    /// Train one loss variant.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out split.
    Eval(EvalArgs),
    /// Train and evaluate every variant over the projection grid.
    Ablate(AblateArgs),
    /// Render SVG charts from evaluation CSVs.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 2000)]
    pub count: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Fraction of distinct scenes used for training.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Training hyperparameters. Unset flags fall back to the config file, then
/// to the built-in defaults.
#[derive(Args, Debug, Default, Clone)]
pub struct HyperArgs {
    /// `key=value` file with the same keys as these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub accumulation_steps: Option<usize>,
    #[arg(long)]
    pub clip_max_norm: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub d_tok: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub normalize: Option<bool>,
    #[arg(long)]
    pub learnable: Option<bool>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Parent directory for the timestamped run directory.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Write into exactly this directory instead.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub zero_shot: bool,
    /// Variant label written into the report.
    #[arg(long, default_value = "model")]
    pub label: String,
    /// Output directory; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Directory holding report.csv and/or zero_shot.csv.
    #[arg(long)]
    pub results: PathBuf,
    /// Output directory; defaults to the results directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Everything needed to redo a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub dataset_hash: Option<String>,
    pub artifacts: Vec<Artifact>,
    pub started: String,
    pub finished: String,
    pub tool_version: String,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn to_json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("config types serialize")
}

fn artifact(dir: &Path, name: &str) -> Result<Artifact, Error> {
    Ok(Artifact { path: name.to_string(), sha256: io::sha256_hex(&io::read(&dir.join(name))?) })
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), Error> {
    let mut bytes = serde_json::to_vec_pretty(manifest).map_err(|e| Error::Data(e.to_string()))?;
    bytes.push(b'\n');
    io::write(&dir.join(MANIFEST_FILE), &bytes)
}

fn gen_data(a: GenDataArgs) -> Result<(), Error> {
    let started = now();
    let config = DatasetConfig { count: a.count, seed: a.seed, train_fraction: a.split };
    let data = generate_dataset(&config)?;
    data.write(&a.out)?;
    let m = &data.manifest;
    let artifacts = [crate::scene::TRAIN_FILE, crate::scene::TEST_FILE, crate::scene::MANIFEST_FILE]
        .iter()
        .map(|f| artifact(&a.out, f))
        .collect::<Result<_, _>>()?;
    write_manifest(
        &a.out,
        &RunManifest {
            command: "gen-data".into(),
            config: to_json(&config),
            seed: Some(a.seed),
            dataset_hash: Some(data.content_hash()?),
            artifacts,
            started,
            finished: now(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            status: "ok".into(),
        },
    )?;
    println!(
        "wrote {} triples ({} train over {} scenes, {} test over {} scenes, {} regenerated) to {}",
        m.count,
        m.train_count,
        m.train_scenes,
        m.test_count,
        m.test_scenes,
        m.regenerated,
        a.out.display()
    );
    Ok(())
}

/// Reads a `key=value` file. Blank lines and `#` comments are skipped.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, Error> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("config line {}: expected key=value", i + 1)))?;
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

const CONFIG_KEYS: [&str; 15] = [
    "epochs",
    "lr",
    "warmup_steps",
    "batch_size",
    "accumulation_steps",
    "clip_max_norm",
    "weight_decay",
    "seed",
    "d",
    "d_tok",
    "noise",
    "variant",
    "n",
    "normalize",
    "learnable",
];

struct Layered {
    file: BTreeMap<String, String>,
}

impl Layered {
    fn load(path: Option<&Path>) -> Result<Self, Error> {
        let file = match path {
            Some(p) => parse_config_file(&io::read_to_string(p)?)?,
            None => BTreeMap::new(),
        };
        if let Some(k) = file.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(Error::Usage(format!("unknown config key {k:?}")));
        }
        Ok(Self { file })
    }

    /// Flag, else file, else default.
    fn get<T: std::str::FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T, Error> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.get(key) {
            Some(s) => s.parse().map_err(|_| Error::Usage(format!("config key {key}: cannot parse {s:?}"))),
            None => Ok(default),
        }
    }
}

fn resolve(h: &HyperArgs, layered: &Layered, weights: LossWeights, bank: BankConfig) -> Result<TrainConfig, Error> {
    let d = TrainConfig::default();
    let config = TrainConfig {
        epochs: layered.get("epochs", h.epochs, d.epochs)?,
        peak_lr: layered.get("lr", h.lr, d.peak_lr)?,
        warmup_steps: layered.get("warmup_steps", h.warmup_steps, d.warmup_steps)?,
        adam: AdamWConfig { weight_decay: layered.get("weight_decay", h.weight_decay, d.adam.weight_decay)?, ..d.adam },
        accumulation_steps: layered.get("accumulation_steps", h.accumulation_steps, d.accumulation_steps)?,
        clip_max_norm: layered.get("clip_max_norm", h.clip_max_norm, d.clip_max_norm)?,
        batch_size: layered.get("batch_size", h.batch_size, d.batch_size)?,
        seed: layered.get("seed", h.seed, d.seed)?,
        weights,
        bank,
        d: layered.get("d", h.d, d.d)?,
        d_tok: layered.get("d_tok", h.d_tok, d.d_tok)?,
        noise_sigma: layered.get("noise", h.noise, d.noise_sigma)?,
    };
    config.validate()?;
    if config.bank.n == 0 || config.bank.n >= config.d {
        return Err(Error::Usage(format!("n must satisfy 0 < n < d, got n={} d={}", config.bank.n, config.d)));
    }
    Ok(config)
}

fn resolve_train(a: &TrainArgs) -> Result<(TrainConfig, Variant), Error> {
    let layered = Layered::load(a.hyper.config.as_deref())?;
    let variant: Variant = layered.get("variant", a.variant.clone(), "semclip".to_string())?.parse()?;
    let b = BankConfig::default();
    let bank = BankConfig {
        n: layered.get("n", a.n, b.n)?,
        normalize: layered.get("normalize", a.normalize, b.normalize)?,
        learnable: layered.get("learnable", a.learnable, b.learnable)?,
    };
    Ok((resolve(&a.hyper, &layered, variant.weights(), bank)?, variant))
}

/// `<root>/<UTC timestamp>-<first 12 hex of the config hash>`, suffixed if taken.
fn run_directory(root: &Path, exact: Option<&Path>, fingerprint: &[u8]) -> Result<PathBuf, Error> {
    if let Some(p) = exact {
        io::create_dir(p)?;
        return Ok(p.to_path_buf());
    }
    let hash = io::sha256_hex(fingerprint);
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{stamp}-{}", &hash[..12]);
    let mut dir = root.join(&base);
    let mut k = 1;
    while dir.exists() {
        dir = root.join(format!("{base}-{k}"));
        k += 1;
    }
    io::create_dir(&dir)?;
    Ok(dir)
}

fn load_dataset(dir: &Path) -> Result<Dataset, Error> {
    if !dir.join(crate::scene::MANIFEST_FILE).exists() {
        return Err(Error::Io {
            path: dir.join(crate::scene::MANIFEST_FILE),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "dataset not found"),
        });
    }
    Dataset::read(dir)
}

fn cmd_train(a: TrainArgs) -> Result<(), Error> {
    let started = now();
    let (config, variant) = resolve_train(&a)?;
    let data = load_dataset(&a.dataset)?;
    let dataset_hash = data.content_hash()?;
    let config_json = serde_json::json!({ "variant": variant.key(), "train": to_json(&config), "dataset": a.dataset });
    let fingerprint = format!("{config_json}{dataset_hash}");
    let dir = run_directory(&a.out, a.run_dir.as_deref(), fingerprint.as_bytes())?;

    let outcome = train(&config, &data.train)?;
    checkpoint::save(&outcome.model, &dir.join(CHECKPOINT_FILE))?;
    io::write(&dir.join(LOSS_LOG_FILE), log_csv(&outcome.log).as_bytes())?;
    let artifacts = vec![artifact(&dir, CHECKPOINT_FILE)?, artifact(&dir, LOSS_LOG_FILE)?];
    write_manifest(
        &dir,
        &RunManifest {
            command: "train".into(),
            config: config_json,
            seed: Some(config.seed),
            dataset_hash: Some(dataset_hash),
            artifacts,
            started,
            finished: now(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            status: outcome.failure.clone().map_or_else(|| "ok".into(), |f| format!("aborted: {f}")),
        },
    )?;
    if let Some(f) = outcome.failure {
        eprintln!("training aborted; last good checkpoint kept in {}", dir.display());
        return Err(Error::Numeric(f));
    }
    let last = outcome.log.last();
    eprintln!(
        "{} steps, final loss {:.4}, tau {:.3}",
        outcome.log.len(),
        last.map_or(f64::NAN, |r| r.total),
        last.map_or(f64::NAN, |r| r.tau)
    );
    println!("{}", dir.display());
    Ok(())
}

fn write_reports(dir: &Path, reports: &[EvalReport], zero_shot: bool) -> Result<Vec<Artifact>, Error> {
    io::write(&dir.join(REPORT_FILE), report_csv(reports).as_bytes())?;
    let mut out = vec![artifact(dir, REPORT_FILE)?];
    if zero_shot {
        io::write(&dir.join(ZERO_SHOT_FILE), zero_shot_csv(reports).as_bytes())?;
        out.push(artifact(dir, ZERO_SHOT_FILE)?);
    }
    Ok(out)
}

fn cmd_eval(a: EvalArgs) -> Result<(), Error> {
    let started = now();
    let model = checkpoint::load(&a.checkpoint)?;
    let data = load_dataset(&a.dataset)?;
    let report = evaluate(&model, &data.test, &a.label)?;
    let dir = match &a.out {
        Some(d) => d.clone(),
        None => a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    io::create_dir(&dir)?;
    let artifacts = write_reports(&dir, std::slice::from_ref(&report), a.zero_shot)?;
    let manifest = RunManifest {
        command: "eval".into(),
        config: serde_json::json!({
            "checkpoint": a.checkpoint,
            "checkpoint_sha256": io::sha256_hex(&io::read(&a.checkpoint)?),
            "dataset": a.dataset,
            "zero_shot": a.zero_shot,
            "label": a.label,
            "model": to_json(&report.model),
        }),
        seed: Some(model.seed),
        dataset_hash: Some(data.content_hash()?),
        artifacts,
        started,
        finished: now(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        status: "ok".into(),
    };
    let name = if dir.join(MANIFEST_FILE).exists() { "eval_manifest.json" } else { MANIFEST_FILE };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
    bytes.push(b'\n');
    io::write(&dir.join(name), &bytes)?;
    println!(
        "orig {:.2}  para {:.2}  neg {:.2}  composite {:.2}",
        report.acc_orig, report.acc_para, report.acc_neg, report.composite
    );
    if a.zero_shot {
        let z = &report.zero_shot[0];
        println!("zero-shot {}: standard {:.2}  negated {:.2}  delta {:.2}", z.task, z.standard_acc, z.negated_acc, z.delta);
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<(), Error> {
    let started = now();
    let layered = Layered::load(a.hyper.config.as_deref())?;
    let base = resolve(&a.hyper, &layered, Variant::Semclip.weights(), BankConfig::default())?;
    let data = load_dataset(&a.dataset)?;
    let dataset_hash = data.content_hash()?;
    let config_json = serde_json::json!({ "base": to_json(&base), "dataset": a.dataset });
    let dir = run_directory(&a.out, a.run_dir.as_deref(), format!("ablate{config_json}{dataset_hash}").as_bytes())?;

    let cells = ablation_sweep(&base, &data.train, &data.test);
    io::write(&dir.join(SWEEP_FILE), sweep_csv(&cells).as_bytes())?;
    let reports: Vec<EvalReport> = cells.iter().filter_map(|c| c.outcome.as_ref().ok().cloned()).collect();
    let mut artifacts = vec![artifact(&dir, SWEEP_FILE)?];
    artifacts.extend(write_reports(&dir, &reports, true)?);
    let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
    write_manifest(
        &dir,
        &RunManifest {
            command: "ablate".into(),
            config: config_json,
            seed: Some(base.seed),
            dataset_hash: Some(dataset_hash),
            artifacts,
            started,
            finished: now(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            status: format!("{} cells ok, {failed} failed", cells.len() - failed),
        },
    )?;
    eprintln!("{} cells, {failed} failed", cells.len());
    println!("{}", dir.display());
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Result<(), Error> {
    let started = now();
    let report_path = a.results.join(REPORT_FILE);
    let zs_path = a.results.join(ZERO_SHOT_FILE);
    let report = if report_path.exists() { plot::parse_report_csv(&io::read_to_string(&report_path)?)? } else { Vec::new() };
    let zs = if zs_path.exists() { plot::parse_zero_shot_csv(&io::read_to_string(&zs_path)?)? } else { Vec::new() };
    if report.is_empty() && zs.is_empty() {
        return Err(Error::Usage(format!("no evaluation results in {}", a.results.display())));
    }
    let dir = a.out.unwrap_or_else(|| a.results.clone());
    io::create_dir(&dir)?;
    let mut artifacts = Vec::new();
    if !report.is_empty() {
        io::write(&dir.join("accuracy.svg"), plot::accuracy_svg(&report).as_bytes())?;
        artifacts.push(artifact(&dir, "accuracy.svg")?);
    }
    if !zs.is_empty() {
        io::write(&dir.join("delta.svg"), plot::delta_svg(&zs).as_bytes())?;
        io::write(&dir.join("delta.csv"), plot::delta_csv(&zs).as_bytes())?;
        artifacts.push(artifact(&dir, "delta.svg")?);
        artifacts.push(artifact(&dir, "delta.csv")?);
    }
    let manifest = RunManifest {
        command: "plot".into(),
        config: serde_json::json!({ "results": a.results }),
        seed: None,
        dataset_hash: None,
        artifacts,
        started,
        finished: now(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        status: "ok".into(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
    bytes.push(b'\n');
    io::write(&dir.join("plot_manifest.json"), &bytes)?;
    println!("{}", dir.display());
    Ok(())
}
