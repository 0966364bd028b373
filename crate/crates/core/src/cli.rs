//! Command-line front end: `train`, `sweep`, `pca`, `synth-check`, `export`.
//!
//! Every command writes `<command>.manifest` into its output directory. The
//! manifest lists each resolved flag as `key=value` and can be passed back via
//! `--config` to repeat the run.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::datasets::{
    load_cifar, load_idx, synth_gaussian, CifarFormat, Dataset, GaussianSpec,
};
use crate::error::{Error, Result};
use crate::eval::{
    export_latent_scatter, export_reconstructions, reconstruct, sweep, LatentCodec, MetricSet,
    SweepMeta,
};
use crate::linalg::Rng;
use crate::losses::SsimConfig;
use crate::model::{AeConfig, Autoencoder, OutputActivation};
use crate::optim::{self, TrainConfig, TrainHistory, ValidationMode};
use crate::pca::{fit_pca, from_covariance, mean_total_squared_error, theoretical_distortion, PcaModel};
use crate::regularizers::{DropMode, TailDropSchedule};
use crate::checkpoint::{Container, AE_KIND};

/// Survivor widths reported by default for a 64-wide latent.
pub const DEFAULT_L_GRID: [usize; 7] = [64, 54, 44, 34, 24, 14, 4];

const BOOL_FLAGS: [&str; 2] = ["worst-order", "coarse-labels"];

#[derive(Parser, Debug)]
#[command(name = "rlae", version, about = "Rateless auto-encoders with latent tail dropout", args_override_self = true)]
pub struct Cli {
    /// Flat key=value file whose entries act as flags (command-line flags win).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train an auto-encoder and write a checkpoint plus history.
    Train(TrainArgs),
    /// Evaluate a checkpoint over survivor widths.
    Sweep(SweepArgs),
    /// Fit the PCA baseline and sweep it.
    Pca(PcaArgs),
    /// Check PCA distortion on Gaussian data against the eigenvalue tail sums.
    SynthCheck(SynthCheckArgs),
    /// Write reconstruction grids and a 2-d latent scatter.
    Export(ExportArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetName {
    Mnist,
    Fmnist,
    Kmnist,
    Cifar10,
    Cifar100,
    SvhnLike,
    Synth,
}

impl DatasetName {
    fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::Fmnist => "fmnist",
            DatasetName::Kmnist => "kmnist",
            DatasetName::Cifar10 => "cifar10",
            DatasetName::Cifar100 => "cifar100",
            DatasetName::SvhnLike => "svhn-like",
            DatasetName::Synth => "synth",
        }
    }

    fn is_color(self) -> bool {
        matches!(self, DatasetName::Cifar10 | DatasetName::Cifar100 | DatasetName::SvhnLike)
    }

    fn default_beta(self) -> f64 {
        if self.is_color() {
            2.1
        } else {
            0.67
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScheduleName {
    Taildrop,
    Uniform,
    Independent,
    None,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossName {
    Mse,
    Ssim,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ValidationName {
    FullWidth,
    RateAveraged,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long, value_enum)]
    pub dataset: DatasetName,
    #[arg(long, default_value = "data")]
    pub data_dir: PathBuf,
    /// Use only the first N training samples.
    #[arg(long)]
    pub subset: Option<usize>,
    /// Use only the first N test samples.
    #[arg(long)]
    pub test_subset: Option<usize>,
    /// CIFAR-100 only: 20 superclass labels instead of 100 fine labels.
    #[arg(long)]
    pub coarse_labels: bool,
    /// Dimension of the synthetic Gaussian data.
    #[arg(long, default_value_t = 32)]
    pub synth_dim: usize,
}

impl DataArgs {
    fn manifest(&self, m: &mut Manifest) {
        m.push("dataset", self.dataset.as_str());
        m.push("data-dir", self.data_dir.display());
        m.push_opt("subset", self.subset);
        m.push_opt("test-subset", self.test_subset);
        m.push("coarse-labels", self.coarse_labels);
        m.push("synth-dim", self.synth_dim);
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 64)]
    pub latent: usize,
    #[arg(long, default_value_t = 1024)]
    pub hidden: usize,
    #[arg(long, value_enum, default_value_t = ScheduleName::Taildrop)]
    pub schedule: ScheduleName,
    /// TailDrop power-law exponent (default 2.1 for color data, 0.67 otherwise).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Uniform drop rate, and the top rate of the independent schedule.
    #[arg(long, default_value_t = 0.9)]
    pub p: f64,
    /// `ssim` pre-trains with MSE and then fine-tunes on negative SSIM.
    #[arg(long, value_enum, default_value_t = LossName::Mse)]
    pub loss: LossName,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    /// Fine-tuning epochs for `--loss ssim` (defaults to `--epochs`).
    #[arg(long)]
    pub ssim_epochs: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = ValidationName::FullWidth)]
    pub validation: ValidationName,
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated survivor widths (default 64,54,...,4 or 1..M).
    #[arg(long = "L-list", value_name = "LIST")]
    pub l_list: Option<String>,
    /// Comma-separated subset of mse, ssim, probe.
    #[arg(long, default_value = "mse,ssim,probe")]
    pub metrics: String,
    /// Model column of the CSV (defaults to a name derived from the schedule).
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long, default_value = "runs/sweep")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct PcaArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 64)]
    pub latent: usize,
    #[arg(long = "L-list", value_name = "LIST")]
    pub l_list: Option<String>,
    /// Keep the least principal components first.
    #[arg(long)]
    pub worst_order: bool,
    #[arg(long)]
    pub metrics: Option<String>,
    /// Fit on a random subsample of this many training samples.
    #[arg(long)]
    pub fit_subset: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "runs/pca")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SynthCheckArgs {
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 50_000)]
    pub samples: usize,
    /// Comma-separated spectrum; defaults to 1/n for n = 1..dim.
    #[arg(long)]
    pub eigenvalues: Option<String>,
    /// Relative tolerance for the sampled comparison.
    #[arg(long, default_value_t = 0.03)]
    pub tolerance: f64,
    /// Absolute tolerance for the population comparison.
    #[arg(long, default_value_t = 1e-8)]
    pub population_tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "runs/synth-check")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long = "L-list", value_name = "LIST")]
    pub l_list: Option<String>,
    /// Comma-separated test-sample indices for the image grid.
    #[arg(long, default_value = "0,1,2,3,4,5,6,7,8,9")]
    pub indices: String,
    #[arg(long, default_value = "runs/export")]
    pub out: PathBuf,
}

/// Ordered `key=value` lines.
#[derive(Default)]
struct Manifest {
    lines: Vec<(String, String)>,
}

impl Manifest {
    fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    fn push_opt<T: std::fmt::Display>(&mut self, key: &str, value: Option<T>) {
        self.push(key, value.map(|v| v.to_string()).unwrap_or_default());
    }

    fn write(&self, dir: &Path, command: &str) -> Result<()> {
        let mut s = format!("# rlae {command}\n");
        for (k, v) in &self.lines {
            let _ = writeln!(s, "{k}={v}");
        }
        let path = dir.join(format!("{command}.manifest"));
        fs::write(&path, s).map_err(|e| Error::file(&path, e))
    }
}

/// Turns a `key=value` file into flags. Empty values and `false` booleans are
/// dropped; `#` starts a comment line.
pub fn config_to_args(text: &str) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("config line {}: expected key=value", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            continue;
        }
        if BOOL_FLAGS.contains(&key) {
            match value {
                "true" => out.push(format!("--{key}").into()),
                "false" => {}
                other => {
                    return Err(Error::Usage(format!(
                        "config line {}: {key} expects true or false, got {other:?}",
                        n + 1
                    )))
                }
            }
        } else {
            out.push(format!("--{key}").into());
            out.push(value.into());
        }
    }
    Ok(out)
}

/// Splices `--config FILE` entries in right after the subcommand name, so
/// that explicit flags (parsed later) override them.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut iter = args.into_iter();
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            config = Some(PathBuf::from(
                iter.next()
                    .ok_or_else(|| Error::Usage("--config needs a file".into()))?,
            ));
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
    let extra = config_to_args(&text)?;
    // rest[0] is the program name; the subcommand is the first non-flag.
    let at = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map_or(rest.len(), |i| i + 2);
    let mut merged: Vec<OsString> = rest[..at.min(rest.len())].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&rest[at.min(rest.len())..]);
    Ok(merged)
}

/// Parses and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Parses `args` (program name first) without running anything.
pub fn parse(args: &[&str]) -> Result<Command> {
    let args = expand_config(args.iter().map(OsString::from).collect())?;
    Cli::try_parse_from(args)
        .map(|c| c.command)
        .map_err(|e| Error::Usage(e.to_string()))
}

/// Runs a parsed command; `Ok` carries the exit code.
pub fn execute(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::Train(a) => cmd_train(a).map(|_| 0),
        Command::Sweep(a) => cmd_sweep(a).map(|_| 0),
        Command::Pca(a) => cmd_pca(a).map(|_| 0),
        Command::SynthCheck(a) => {
            let report = cmd_synth_check(a)?;
            print!("{}", report.text);
            Ok(if report.passed { 0 } else { 1 })
        }
        Command::Export(a) => cmd_export(a).map(|_| 0),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::file(path, e))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

fn find_file(dir: &Path, name: &str) -> Result<PathBuf> {
    let plain = dir.join(name);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::file(
        &plain,
        std::io::Error::new(std::io::ErrorKind::NotFound, "no such file (also tried .gz)"),
    ))
}

fn synth_spec(dim: usize, seed: u64) -> GaussianSpec {
    GaussianSpec::harmonic(dim, seed)
}

/// Loads one split, truncated to the subset flag for that split.
///
/// Synthetic data is drawn from the harmonic spectrum, rotated by `seed`;
/// the splits use independent sample streams.
pub fn load_split(data: &DataArgs, split: Split, seed: u64) -> Result<Dataset> {
    let dir = &data.data_dir;
    let limit = match split {
        Split::Train => data.subset,
        Split::Test => data.test_subset,
    };
    let set = match data.dataset {
        DatasetName::Mnist | DatasetName::Fmnist | DatasetName::Kmnist => {
            let prefix = match split {
                Split::Train => "train",
                Split::Test => "t10k",
            };
            load_idx(
                find_file(dir, &format!("{prefix}-images-idx3-ubyte"))?,
                find_file(dir, &format!("{prefix}-labels-idx1-ubyte"))?,
            )?
        }
        DatasetName::Cifar10 => {
            let files: Vec<PathBuf> = match split {
                Split::Train => (1..=5)
                    .map(|i| find_file(dir, &format!("data_batch_{i}.bin")))
                    .collect::<Result<_>>()?,
                Split::Test => vec![find_file(dir, "test_batch.bin")?],
            };
            load_cifar(&files, CifarFormat::Cifar10)?
        }
        DatasetName::Cifar100 => {
            let name = match split {
                Split::Train => "train.bin",
                Split::Test => "test.bin",
            };
            load_cifar(
                &[find_file(dir, name)?],
                CifarFormat::Cifar100 {
                    coarse_labels: data.coarse_labels,
                },
            )?
        }
        DatasetName::SvhnLike => {
            let name = match split {
                Split::Train => "train.bin",
                Split::Test => "test.bin",
            };
            load_cifar(&[find_file(dir, name)?], CifarFormat::Cifar10)?
        }
        DatasetName::Synth => {
            let (count, stream) = match split {
                Split::Train => (data.subset.unwrap_or(50_000), 1),
                Split::Test => (data.test_subset.unwrap_or(10_000), 2),
            };
            return synth_gaussian(&synth_spec(data.synth_dim, seed), count, &mut Rng::derive(seed, stream));
        }
    };
    Ok(match limit {
        Some(n) => set.take(n),
        None => set,
    })
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse()
                .map_err(|_| Error::Usage(format!("bad {what} entry {v:?}")))
        })
        .collect()
}

/// `--L-list` if given, else the default grid when it fits `M`, else `1..=M`.
pub fn resolve_l_list(flag: Option<&str>, latent_dim: usize) -> Result<Vec<usize>> {
    let mut ls = match flag {
        Some(s) => parse_list::<usize>(s, "L-list")?,
        None if DEFAULT_L_GRID.iter().all(|&l| l <= latent_dim) => DEFAULT_L_GRID.to_vec(),
        None => (1..=latent_dim).collect(),
    };
    if ls.is_empty() {
        return Err(Error::Input("L-list is empty".into()));
    }
    if let Some(&bad) = ls.iter().find(|&&l| l == 0 || l > latent_dim) {
        return Err(Error::Domain(format!("L={bad} outside 1..={latent_dim}")));
    }
    ls.sort_unstable();
    ls.dedup();
    Ok(ls)
}

fn fmt_list<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Builds the schedule named on the command line.
pub fn resolve_schedule(a: &TrainArgs) -> Result<TailDropSchedule> {
    let m = a.latent;
    match a.schedule {
        ScheduleName::Taildrop => {
            TailDropSchedule::taildrop(m, a.beta.unwrap_or_else(|| a.data.dataset.default_beta()))
        }
        ScheduleName::Uniform => TailDropSchedule::uniform(m, a.p),
        ScheduleName::Independent => {
            // Linear ramp from 0 at the head to p at the last latent.
            let rates = (0..m)
                .map(|i| if m == 1 { 0.0 } else { a.p * i as f64 / (m - 1) as f64 })
                .collect();
            TailDropSchedule::independent(rates)
        }
        ScheduleName::None => Ok(TailDropSchedule::none(m)),
    }
}

fn model_id_for(schedule: &TailDropSchedule) -> &'static str {
    match &schedule.mode {
        DropMode::TailDrop { .. } => "rl-ae",
        DropMode::Uniform { p } if *p == 0.0 => "ae",
        DropMode::Uniform { .. } => "sae",
        DropMode::Independent { .. } => "sw-ae",
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Autoencoder,
    pub history: TrainHistory,
    pub fine_tune: Option<TrainHistory>,
    pub checkpoint: PathBuf,
}

pub fn cmd_train(a: &TrainArgs) -> Result<TrainOutcome> {
    let schedule = resolve_schedule(a)?;
    let data = load_split(&a.data, Split::Train, a.seed)?;
    let activation = if data.unclamped {
        OutputActivation::Linear
    } else {
        OutputActivation::Sigmoid
    };
    let config = AeConfig {
        input_dim: data.dim(),
        hidden_dim: a.hidden,
        latent_dim: a.latent,
        output_activation: activation,
        seed: a.seed,
    };
    config.validate()?;
    let validation_mode = match a.validation {
        ValidationName::FullWidth => ValidationMode::FullWidth,
        ValidationName::RateAveraged => ValidationMode::RateAveraged,
    };
    let tcfg = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        patience: a.patience,
        seed: a.seed,
        validation_mode,
        ..TrainConfig::default()
    };
    create_dir(&a.out)?;

    let (mut params, history) = optim::train(&config, &schedule, &data, &tcfg)?;
    write_file(&a.out.join("history.csv"), history.to_csv())?;
    let ssim_epochs = a.ssim_epochs.unwrap_or(a.epochs);
    let fine_tune = if a.loss == LossName::Ssim {
        let ft_cfg = TrainConfig {
            max_epochs: ssim_epochs,
            ..tcfg.clone()
        };
        let (tuned, h) = optim::fine_tune_ssim(&params, &config, &schedule, &data, &ft_cfg)?;
        write_file(&a.out.join("history_ssim.csv"), h.to_csv())?;
        params = tuned;
        Some(h)
    } else {
        None
    };

    let model = Autoencoder { config, params };
    let loss = match a.loss {
        LossName::Mse => "mse",
        LossName::Ssim => "ssim",
    };
    let meta = vec![
        ("model".to_string(), model_id_for(&schedule).to_string()),
        ("dataset".to_string(), a.data.dataset.as_str().to_string()),
        ("schedule".to_string(), schedule.to_string()),
        ("loss".to_string(), loss.to_string()),
        ("train_samples".to_string(), data.len().to_string()),
        (
            "best_epoch".to_string(),
            history.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
        ),
    ];
    let checkpoint = a.out.join("model.ckpt");
    model.save(&checkpoint, &meta)?;

    let mut m = Manifest::default();
    a.data.manifest(&mut m);
    m.push("latent", a.latent);
    m.push("hidden", a.hidden);
    m.push("schedule", format!("{:?}", a.schedule).to_lowercase());
    m.push("beta", a.beta.unwrap_or_else(|| a.data.dataset.default_beta()));
    m.push("p", a.p);
    m.push("loss", loss);
    m.push("seed", a.seed);
    m.push("epochs", a.epochs);
    m.push("ssim-epochs", ssim_epochs);
    m.push("patience", a.patience);
    m.push("lr", a.lr);
    m.push("batch-size", a.batch_size);
    m.push("validation", validation_mode.to_string().replace('_', "-"));
    m.push("out", a.out.display());
    m.write(&a.out, "train")?;

    Ok(TrainOutcome {
        model,
        history,
        fine_tune,
        checkpoint,
    })
}

enum LoadedModel {
    Ae(Autoencoder),
    Pca(PcaModel),
}

impl LoadedModel {
    fn codec(&self) -> &dyn LatentCodec {
        match self {
            LoadedModel::Ae(m) => m,
            LoadedModel::Pca(m) => m,
        }
    }
}

fn load_model(path: &Path) -> Result<(LoadedModel, Container)> {
    let c = Container::load(path)?;
    let model = if c.kind == AE_KIND {
        LoadedModel::Ae(Autoencoder::from_container(&c)?)
    } else {
        LoadedModel::Pca(PcaModel::from_container(&c)?)
    };
    Ok((model, c))
}

fn check_dataset(c: &Container, data: &DataArgs, dataset: &Dataset, codec: &dyn LatentCodec) -> Result<()> {
    if let Some(trained_on) = c.meta("dataset") {
        if trained_on != data.dataset.as_str() {
            return Err(Error::Consistency(format!(
                "checkpoint was trained on {trained_on}, sweep requested {}",
                data.dataset.as_str()
            )));
        }
    }
    if dataset.dim() != codec.input_dim() {
        return Err(Error::Consistency(format!(
            "checkpoint expects {} inputs, dataset has {}",
            codec.input_dim(),
            dataset.dim()
        )));
    }
    Ok(())
}

fn data_seed(c: &Container) -> u64 {
    c.meta("data_seed")
        .or_else(|| c.meta("seed"))
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<String> {
    let (model, c) = load_model(&a.checkpoint)?;
    let codec = model.codec();
    let metrics: MetricSet = a.metrics.parse()?;
    let seed = data_seed(&c);
    let test = load_split(&a.data, Split::Test, seed)?;
    check_dataset(&c, &a.data, &test, codec)?;
    let train = if metrics.probe {
        Some(load_split(&a.data, Split::Train, seed)?)
    } else {
        None
    };
    let ls = resolve_l_list(a.l_list.as_deref(), codec.latent_dim())?;
    let meta = SweepMeta {
        model: a
            .model_id
            .clone()
            .or_else(|| c.meta("model").map(str::to_string))
            .unwrap_or_else(|| c.kind.clone()),
        dataset: a.data.dataset.as_str().to_string(),
        loss: c.meta("loss").unwrap_or("mse").to_string(),
        schedule: c.meta("schedule").unwrap_or("").to_string(),
    };
    let result = sweep(codec, &test, &ls, metrics, train.as_ref(), &SsimConfig::default(), meta)?;
    let csv = result.to_csv();
    create_dir(&a.out)?;
    write_file(&a.out.join("sweep.csv"), &csv)?;

    let mut m = Manifest::default();
    m.push("checkpoint", a.checkpoint.display());
    a.data.manifest(&mut m);
    m.push("L-list", fmt_list(&ls));
    m.push("metrics", metrics);
    m.push("model-id", &result.meta.model);
    m.push("out", a.out.display());
    m.write(&a.out, "sweep")?;
    Ok(csv)
}

#[derive(Debug)]
pub struct PcaOutcome {
    pub model: PcaModel,
    pub sweep_csv: String,
    pub distortion_csv: String,
}

pub fn cmd_pca(a: &PcaArgs) -> Result<PcaOutcome> {
    let train = load_split(&a.data, Split::Train, a.seed)?;
    let test = load_split(&a.data, Split::Test, a.seed)?;
    let fit_on = match a.fit_subset {
        Some(n) if n < train.len() => {
            let mut idx: Vec<usize> = (0..train.len()).collect();
            Rng::derive(a.seed, 3).shuffle(&mut idx);
            idx.truncate(n);
            idx.sort_unstable();
            train.select(&idx)
        }
        _ => train.clone(),
    };
    let model = fit_pca(&fit_on, a.latent)?;
    let ls = resolve_l_list(a.l_list.as_deref(), a.latent)?;
    let metrics: MetricSet = match &a.metrics {
        Some(s) => s.parse()?,
        None if train.unclamped => MetricSet::mse_only(),
        None => MetricSet::all(),
    };
    let codec = if a.worst_order { model.reversed() } else { model.clone() };
    let meta = SweepMeta {
        model: if a.worst_order { "pca-reversed" } else { "pca" }.to_string(),
        dataset: a.data.dataset.as_str().to_string(),
        loss: "mse".to_string(),
        schedule: String::new(),
    };
    let result = sweep(
        &codec,
        &test,
        &ls,
        metrics,
        metrics.probe.then_some(&train),
        &SsimConfig::default(),
        meta,
    )?;
    let sweep_csv = result.to_csv();

    // Total squared error per sample against the tail sums of the fitted
    // spectrum and, for synthetic data, of the generating spectrum.
    let truth = (a.data.dataset == DatasetName::Synth)
        .then(|| synth_spec(a.data.synth_dim, a.seed).eigenvalues);
    let mut distortion_csv = String::from("L,total_sq_err,fitted_tail,true_tail\n");
    for &l in &ls {
        let err = mean_total_squared_error(&test.images, &reconstruct(&codec, &test.images, l)?)?;
        let fitted = theoretical_distortion(&model.eigenvalues, l)?;
        let true_tail = match &truth {
            Some(eigs) => theoretical_distortion(eigs, l)?.to_string(),
            None => String::new(),
        };
        let _ = writeln!(distortion_csv, "{l},{err},{fitted},{true_tail}");
    }

    create_dir(&a.out)?;
    let extra = vec![
        ("model".to_string(), "pca".to_string()),
        ("dataset".to_string(), a.data.dataset.as_str().to_string()),
        ("loss".to_string(), "mse".to_string()),
        ("data_seed".to_string(), a.seed.to_string()),
    ];
    model.save(a.out.join("pca.ckpt"), &extra)?;
    write_file(&a.out.join("sweep.csv"), &sweep_csv)?;
    write_file(&a.out.join("pca_distortion.csv"), &distortion_csv)?;

    let mut m = Manifest::default();
    a.data.manifest(&mut m);
    m.push("latent", a.latent);
    m.push("L-list", fmt_list(&ls));
    m.push("worst-order", a.worst_order);
    m.push("metrics", metrics);
    m.push_opt("fit-subset", a.fit_subset);
    m.push("seed", a.seed);
    m.push("out", a.out.display());
    m.write(&a.out, "pca")?;
    Ok(PcaOutcome {
        model,
        sweep_csv,
        distortion_csv,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCheckRow {
    pub l: usize,
    pub empirical: f64,
    pub theory: f64,
    pub population: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct SynthReport {
    pub rows: Vec<SynthCheckRow>,
    pub passed: bool,
    pub text: String,
}

/// Fits PCA on `samples` Gaussian draws, measures total squared error per
/// sample on an independent draw of the same size, and compares with the
/// eigenvalue tail sums at every `L`. The population variant uses the exact
/// covariance instead of samples.
pub fn cmd_synth_check(a: &SynthCheckArgs) -> Result<SynthReport> {
    create_dir(&a.out)?;
    let mut m = Manifest::default();
    m.push("dim", a.dim);
    m.push("samples", a.samples);
    m.push_opt("eigenvalues", a.eigenvalues.as_ref());
    m.push("tolerance", a.tolerance);
    m.push("population-tolerance", a.population_tolerance);
    m.push("seed", a.seed);
    m.push("out", a.out.display());
    m.write(&a.out, "synth-check")?;

    let eigenvalues = match &a.eigenvalues {
        Some(s) => parse_list::<f64>(s, "eigenvalue")?,
        None => (1..=a.dim).map(|n| 1.0 / n as f64).collect(),
    };
    let spec = GaussianSpec {
        dim: eigenvalues.len(),
        mean: vec![0.0; eigenvalues.len()],
        eigenvalues,
        rotation_seed: a.seed,
    };
    if let Err(e) = spec.validate() {
        let text = format!("FAIL: invalid spectrum: {e}\n");
        let _ = fs::write(a.out.join("synth_check.txt"), &text);
        return Ok(SynthReport {
            rows: Vec::new(),
            passed: false,
            text,
        });
    }
    let n = spec.dim;
    let fit_data = synth_gaussian(&spec, a.samples, &mut Rng::derive(a.seed, 1))?;
    let eval_data = synth_gaussian(&spec, a.samples, &mut Rng::derive(a.seed, 2))?;
    let model = fit_pca(&fit_data, n)?;
    let cov = spec.covariance();
    let population = from_covariance(vec![0.0; n], &cov, n)?;
    let total: f64 = spec.eigenvalues.iter().sum();

    let mut rows = Vec::with_capacity(n);
    let mut text = String::from("L,empirical,theory,rel_err,population,status\n");
    for l in 1..=n {
        let theory = theoretical_distortion(&spec.eigenvalues, l)?;
        let recon = reconstruct(&model, &eval_data.images, l)?;
        let empirical = mean_total_squared_error(&eval_data.images, &recon)?;
        let pop = population.population_distortion(&cov, l)?;
        let sampled_ok = if theory > 0.0 {
            (empirical - theory).abs() <= a.tolerance * theory
        } else {
            empirical <= 1e-9 * total.max(1.0)
        };
        let pop_ok = (pop - theory).abs() <= a.population_tolerance;
        let passed = sampled_ok && pop_ok;
        let rel = if theory > 0.0 {
            ((empirical - theory) / theory).to_string()
        } else {
            String::new()
        };
        let _ = writeln!(
            text,
            "{l},{empirical},{theory},{rel},{pop},{}",
            if passed { "PASS" } else { "FAIL" }
        );
        rows.push(SynthCheckRow {
            l,
            empirical,
            theory,
            population: pop,
            passed,
        });
    }
    let passed = rows.iter().all(|r| r.passed);
    let _ = writeln!(text, "{}", if passed { "PASS" } else { "FAIL" });
    write_file(&a.out.join("synth_check.txt"), &text)?;
    Ok(SynthReport { rows, passed, text })
}

pub fn cmd_export(a: &ExportArgs) -> Result<()> {
    let (model, c) = load_model(&a.checkpoint)?;
    let codec = model.codec();
    let test = load_split(&a.data, Split::Test, data_seed(&c))?;
    check_dataset(&c, &a.data, &test, codec)?;
    let ls = resolve_l_list(a.l_list.as_deref(), codec.latent_dim())?;
    // Largest L first, so the row under the originals is the best reconstruction.
    let ls_desc: Vec<usize> = ls.iter().rev().copied().collect();
    let indices = parse_list::<usize>(&a.indices, "index")?;
    create_dir(&a.out)?;
    let ext = if test.shape.channels == 1 { "pgm" } else { "ppm" };
    export_reconstructions(codec, &test, &ls_desc, &indices, a.out.join(format!("reconstructions.{ext}")))?;
    if codec.latent_dim() >= 2 {
        export_latent_scatter(codec, &test, a.out.join("latent_scatter.csv"))?;
    }

    let mut m = Manifest::default();
    m.push("checkpoint", a.checkpoint.display());
    a.data.manifest(&mut m);
    m.push("L-list", fmt_list(&ls));
    m.push("indices", &a.indices);
    m.push("out", a.out.display());
    m.write(&a.out, "export")
}
