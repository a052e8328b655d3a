//! Command-line front end: `gen-data`, `train-source`, `adapt`, `eval`, `infer`.
//!
//! Every setting is a key of [`RunConfig`]. Values come from the defaults, then
//! an optional `--config` file (`key = value` lines, `#` comments), then the
//! `SODA_SEED` environment variable (seed only), then `--kebab-case` flags.
//! Each run writes the resolved configuration next to its outputs as
//! `<command>.config`, which can be fed back through `--config`.

use std::ffi::OsString;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::backbone::{NetConfig, NormMode, ToySRNet};
use crate::data::{
    bicubic_resize, generate, psnr_y, read_ppm, read_srf32, ssim, stack_images, train_source, write_ppm, DataConfig,
    Datasets, DegradationSpec, Image, Pairs, SourceTrainConfig,
};
use crate::error::Error;
use crate::numerics::{checkpoint, Float, ParamStore};
use crate::rng::{stream_rng, Stream};
use crate::selftrain::{
    adapt_run, evaluate, Ablation, AdaptHyperParams, EnsembleMode, LossWeights, LowBandNorm, RunOptions, TargetData,
};
use crate::wat::Fusion;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "SODA_SEED";

/// Floating-point type a command runs at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("unknown precision '{}' (f32|f64)", s))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// A value type usable in the configuration.
trait ConfigValue: Sized {
    /// Booleans become value-less `--flags`.
    const FLAG: bool = false;
    fn parse(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! display_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse(s: &str) -> Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

display_value!(u64, usize, f64, String, EnsembleMode, LowBandNorm, Fusion, Precision);

impl ConfigValue for bool {
    const FLAG: bool = true;
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(format!("expected true or false, got '{}'", s)),
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for PathBuf {
    fn parse(s: &str) -> Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

macro_rules! run_config {
    ($( $(#[doc = $doc:literal])* $name:ident : $ty:ty = $default:expr, )*) => {
        /// Every setting of every command.
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $( $(#[doc = $doc])* pub $name: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $( $name: $default, )* }
            }
        }

        impl RunConfig {
            /// All keys, in file order.
            pub const KEYS: &'static [&'static str] = &[$( stringify!($name) ),*];

            /// Sets one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key {
                    $( stringify!($name) => {
                        self.$name = <$ty as ConfigValue>::parse(value)
                            .map_err(|e| format!("bad value for `{}`: {}", key, e))?;
                    } )*
                    _ => return Err(format!("unknown key `{}`", key)),
                }
                Ok(())
            }

            /// `(key, value)` pairs in file order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( (stringify!($name), ConfigValue::render(&self.$name)) ),*]
            }

            fn is_flag(key: &str) -> bool {
                match key {
                    $( stringify!($name) => <$ty as ConfigValue>::FLAG, )*
                    _ => false,
                }
            }

            fn help(key: &str) -> &'static str {
                match key {
                    $( stringify!($name) => concat!("", $($doc),*).trim_start(), )*
                    _ => "",
                }
            }
        }
    };
}

run_config! {
    /// Master seed; every random stream derives from it.
    seed: u64 = 0,
    /// f32 or f64.
    precision: Precision = Precision::F32,
    /// Dataset directory.
    data_dir: PathBuf = PathBuf::from("data"),
    /// Directory for logs, evaluation tables and frozen configs.
    run_dir: PathBuf = PathBuf::from("runs"),
    /// Source model written by train-source and read by adapt.
    source_checkpoint: PathBuf = PathBuf::from("runs/source.ckpt"),
    /// Adapted model written by adapt; the model read by eval and infer.
    checkpoint: PathBuf = PathBuf::from("runs/adapted.ckpt"),
    /// infer: input image (.ppm or .srf).
    input: PathBuf = PathBuf::new(),
    /// infer: output PPM.
    output: PathBuf = PathBuf::new(),
    /// Overwrite a non-empty data directory.
    force: bool = false,
    /// HR image side; a multiple of 16·scale.
    hr_size: usize = 256,
    source_pairs: usize = 64,
    target_train: usize = 64,
    target_val: usize = 16,
    target_test: usize = 16,
    /// Gaussian blur σ of the target degradation (0 = none).
    target_blur: f64 = 1.8,
    target_noise: f64 = 0.01,
    /// Backbone feature channels C.
    channels: usize = 32,
    /// Backbone residual blocks R.
    blocks: usize = 4,
    /// Upscaling factor.
    scale: usize = 4,
    source_iterations: usize = 2000,
    source_batch: usize = 8,
    source_patch: usize = 48,
    source_learning_rate: f64 = 1e-3,
    /// Adaptation steps.
    iterations: usize = 2000,
    batch: usize = 8,
    patch: usize = 48,
    learning_rate: f64 = 1e-4,
    disc_learning_rate: f64 = 1e-4,
    /// Teacher EMA decay η.
    ema_decay: f64 = 0.999,
    /// Gumbel-Softmax temperature τ.
    tau: f64 = 0.1,
    /// Stochastic teacher passes N.
    passes: usize = 5,
    alpha: f64 = 4e-4,
    beta: f64 = 1.5,
    lambda_per: f64 = 0.01,
    lambda_low: f64 = 0.1,
    lambda_high: f64 = 0.005,
    l1: usize = 1,
    l2: usize = 3,
    wat_probability: f64 = 0.5,
    wat_heads: usize = 4,
    wat_samples: usize = 4,
    /// mean or sum.
    fusion: Fusion = Fusion::Mean,
    /// Teacher geometric ensemble: full, rotating or off.
    ensemble: EnsembleMode = EnsembleMode::Full,
    /// compensated or raw.
    low_norm: LowBandNorm = LowBandNorm::Compensated,
    eval_interval: usize = 100,
    /// Evaluate and keep the teacher instead of the student.
    eval_teacher: bool = false,
    /// Ablation: never route through the transformer.
    no_wat: bool = false,
    /// Ablation: freeze the teacher at the source model.
    no_ema: bool = false,
    /// Ablation: unit confidence instead of the uncertainty map.
    no_ue: bool = false,
    /// Ablation: drop the wavelet regularizers.
    no_reg: bool = false,
}

impl RunConfig {
    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            channels: self.channels,
            blocks: self.blocks,
            scale: self.scale,
        }
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            hr_size: self.hr_size,
            scale: self.scale,
            source_pairs: self.source_pairs,
            target_train: self.target_train,
            target_val: self.target_val,
            target_test: self.target_test,
            source: DegradationSpec::bicubic(self.scale),
            target: DegradationSpec {
                blur_sigma: (self.target_blur > 0.0).then_some(self.target_blur),
                scale: self.scale,
                noise_std: self.target_noise,
            },
            seed: self.seed,
        }
    }

    pub fn ablations(&self) -> Vec<Ablation> {
        let on = [self.no_wat, self.no_ema, self.no_ue, self.no_reg];
        Ablation::ALL.into_iter().zip(on).filter(|(_, on)| *on).map(|(a, _)| a).collect()
    }

    /// Hyper-parameters with the ablation switches applied.
    pub fn hyper_params(&self) -> AdaptHyperParams {
        let mut hp = AdaptHyperParams {
            ema_decay: self.ema_decay,
            tau: self.tau,
            passes: self.passes,
            alpha: self.alpha,
            beta: self.beta,
            weights: LossWeights {
                perceptual: self.lambda_per,
                low: self.lambda_low,
                high: self.lambda_high,
            },
            l1: self.l1,
            l2: self.l2,
            wat_probability: self.wat_probability,
            patch: self.patch,
            batch: self.batch,
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            disc_learning_rate: self.disc_learning_rate,
            ensemble: self.ensemble,
            use_uncertainty: true,
            low_norm: self.low_norm,
            eval_interval: self.eval_interval,
            eval_teacher: self.eval_teacher,
            wat_heads: self.wat_heads,
            wat_samples: self.wat_samples,
            fusion: self.fusion,
        };
        for a in self.ablations() {
            a.apply(&mut hp);
        }
        hp
    }

    /// Applies `key = value` lines; errors carry the 1-based line number.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fail = |msg: String| CliError::Config {
                line: Some(i + 1),
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected `key = value`, got `{}`", line)))?;
            self.set(key.trim(), value.trim()).map_err(fail)?;
        }
        Ok(())
    }

    /// The frozen form: one `key = value` line per key.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{} = {}", k, v);
        }
        s
    }
}

/// A failed command, with its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments (exit 1).
    Config { line: Option<usize>, msg: String },
    /// A required checkpoint does not exist (exit 2).
    MissingCheckpoint(PathBuf),
    /// Anything else (exit 1).
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingCheckpoint(_) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { line: Some(l), msg } => write!(f, "config error at line {}: {}", l, msg),
            CliError::Config { line: None, msg } => write!(f, "config error: {}", msg),
            CliError::MissingCheckpoint(p) => write!(f, "checkpoint not found: {}", p.display()),
            CliError::Run(e) => write!(f, "{}", e),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => CliError::Config { line: None, msg },
            e => CliError::Run(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

const COMMANDS: [(&str, &str); 5] = [
    ("gen-data", "Generate the synthetic source and target domains"),
    ("train-source", "Supervised pre-training on the source domain"),
    ("adapt", "Source-free adaptation to the target domain"),
    ("eval", "PSNR-Y / SSIM of a checkpoint on every split"),
    ("infer", "Upscale one image"),
];

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn command() -> Command {
    let mut cmd = Command::new("soda-sr")
        .about("Source-free domain adaptation for image super-resolution")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in COMMANDS {
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("Read settings from a `key = value` file"),
        );
        for &key in RunConfig::KEYS {
            let arg = Arg::new(key).long(flag_name(key)).help(RunConfig::help(key));
            sub = sub.arg(if RunConfig::is_flag(key) {
                arg.action(ArgAction::SetTrue)
            } else {
                arg.value_name("VALUE")
            });
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Resolves the configuration of a subcommand's matches.
pub fn resolve_config(m: &ArgMatches, env_seed: Option<&str>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config {
            line: None,
            msg: format!("cannot read {}: {}", path, e),
        })?;
        cfg.apply_text(&text)?;
    }
    if let Some(seed) = env_seed {
        cfg.set("seed", seed.trim()).map_err(|msg| CliError::Config {
            line: None,
            msg: format!("{}: {}", SEED_ENV, msg),
        })?;
    }
    for &key in RunConfig::KEYS {
        if RunConfig::is_flag(key) {
            if m.get_flag(key) {
                cfg.set(key, "true").expect("boolean key");
            }
        } else if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v).map_err(|msg| CliError::Config { line: None, msg })?;
        }
    }
    Ok(cfg)
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let env_seed = std::env::var(SEED_ENV).ok();
    let result = resolve_config(sub, env_seed.as_deref()).and_then(|cfg| execute(name, &cfg));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

/// Runs one command with a resolved configuration.
pub fn execute(name: &str, cfg: &RunConfig) -> Result<(), CliError> {
    match name {
        "gen-data" => gen_data(cfg),
        _ => match cfg.precision {
            Precision::F32 => execute_typed::<f32>(name, cfg),
            Precision::F64 => execute_typed::<f64>(name, cfg),
        },
    }
}

fn execute_typed<T: Float>(name: &str, cfg: &RunConfig) -> Result<(), CliError> {
    match name {
        "train-source" => cmd_train_source::<T>(cfg),
        "adapt" => cmd_adapt::<T>(cfg),
        "eval" => cmd_eval::<T>(cfg),
        "infer" => cmd_infer::<T>(cfg),
        other => Err(CliError::Config {
            line: None,
            msg: format!("unknown command '{}'", other),
        }),
    }
}

fn freeze(cfg: &RunConfig, dir: &Path, command: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.config", command));
    fs::write(&path, cfg.to_text())?;
    Ok(path)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    let dc = cfg.data_config();
    dc.validate()?;
    let data = generate(&dc)?;
    let manifest = data.save(&cfg.data_dir, cfg.force)?;
    freeze(cfg, &cfg.data_dir, "gen-data")?;
    println!(
        "wrote {} images to {} ({} source pairs, {} target train, {} val pairs, {} test pairs)",
        manifest.entries.len(),
        cfg.data_dir.display(),
        data.source_train.len(),
        data.target_train.len(),
        data.target_val.len(),
        data.target_test.len()
    );
    Ok(())
}

fn load_data(cfg: &RunConfig) -> Result<Datasets, CliError> {
    Datasets::load(&cfg.data_dir).map_err(|e| match e {
        Error::Io(io) => CliError::Run(Error::Format(format!(
            "cannot read dataset in {} ({}); run gen-data first",
            cfg.data_dir.display(),
            io
        ))),
        e => e.into(),
    })
}

fn load_store<T: Float>(path: &Path) -> Result<ParamStore<T>, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingCheckpoint(path.to_path_buf()));
    }
    Ok(checkpoint::load(path)?)
}

/// The evaluated model of a checkpoint: a plain backbone, or the student (or
/// teacher) of an adaptation checkpoint.
fn load_model<T: Float>(cfg: &RunConfig, path: &Path) -> Result<ToySRNet<T>, CliError> {
    let store = load_store::<T>(path)?;
    let prefix = if cfg.eval_teacher { "teacher." } else { "student." };
    let adapted = store.iter().any(|(k, _)| k.starts_with(prefix));
    let params = if adapted { store.strip_prefix(prefix) } else { store };
    Ok(ToySRNet::from_store(cfg.net_config(), params)?)
}

fn cmd_train_source<T: Float>(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_data(cfg)?;
    let mut net = ToySRNet::<T>::init(cfg.net_config(), &mut stream_rng(cfg.seed, Stream::ModelInit))?;
    let tc = SourceTrainConfig {
        iterations: cfg.source_iterations,
        batch: cfg.source_batch,
        patch: cfg.source_patch,
        learning_rate: cfg.source_learning_rate,
    };
    let losses = train_source(&mut net, &data.source_train, &tc, &mut stream_rng(cfg.seed, Stream::SourceTraining))?;
    fs::create_dir_all(&cfg.run_dir)?;
    let mut log = String::from("iteration,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(log, "{},{}", i + 1, l);
    }
    fs::write(cfg.run_dir.join("source_train.csv"), log)?;
    fs::create_dir_all(parent_dir(&cfg.source_checkpoint))?;
    checkpoint::save(&net.params, &cfg.source_checkpoint)?;
    freeze(cfg, &parent_dir(&cfg.source_checkpoint), "train-source")?;
    let (p, s) = evaluate(&net, &data.target_val, 8)?;
    println!(
        "source model: {} iterations, final loss {:.4}; target-val PSNR-Y {:.4} dB, SSIM {:.4}",
        losses.len(),
        losses.last().copied().unwrap_or(f64::NAN),
        p,
        s
    );
    Ok(())
}

fn cmd_adapt<T: Float>(cfg: &RunConfig) -> Result<(), CliError> {
    let source_store = load_store::<T>(&cfg.source_checkpoint)?;
    let source = ToySRNet::from_store(cfg.net_config(), source_store)?;
    let data = load_data(cfg)?;
    let hp = cfg.hyper_params();
    fs::create_dir_all(&cfg.run_dir)?;
    fs::create_dir_all(parent_dir(&cfg.checkpoint))?;
    let mut metadata: Vec<(String, String)> = [
        ("no_wat", cfg.no_wat),
        ("no_ema", cfg.no_ema),
        ("no_ue", cfg.no_ue),
        ("no_reg", cfg.no_reg),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    metadata.push(("precision".into(), cfg.precision.to_string()));
    metadata.push(("ensemble".into(), cfg.ensemble.to_string()));
    let csv = cfg.run_dir.join("adapt.csv");
    let opts = RunOptions {
        seed: cfg.seed,
        csv: Some(csv.clone()),
        checkpoint: Some(cfg.checkpoint.clone()),
        metadata,
    };
    let out = adapt_run(
        &source,
        TargetData {
            train_lr: &data.target_train,
            val: &data.target_val,
        },
        &hp,
        &opts,
    )?;
    freeze(cfg, &cfg.run_dir, "adapt")?;
    println!(
        "best target-val PSNR-Y {:.4} dB at iteration {}; checkpoint {}, log {}",
        out.best_psnr,
        out.best_iteration,
        cfg.checkpoint.display(),
        csv.display()
    );
    Ok(())
}

/// One evaluated split.
struct EvalRow {
    split: &'static str,
    psnr: f64,
    ssim: f64,
    bicubic_psnr: f64,
    bicubic_ssim: f64,
}

fn bicubic_scores(pairs: &Pairs, scale: usize) -> crate::Result<(f64, f64)> {
    let hr = stack_images(&pairs.hr)?;
    let up = bicubic_resize(&stack_images(&pairs.lr)?, scale as f64)?.clamp(0.0, 1.0);
    Ok((psnr_y(&up, &hr, scale)?, ssim(&up, &hr, scale)?))
}

fn cmd_eval<T: Float>(cfg: &RunConfig) -> Result<(), CliError> {
    let net = load_model::<T>(cfg, &cfg.checkpoint)?;
    let data = load_data(cfg)?;
    let splits: [(&'static str, &Pairs); 3] = [
        ("source-train", &data.source_train),
        ("target-val", &data.target_val),
        ("target-test", &data.target_test),
    ];
    let mut rows = Vec::new();
    for (split, pairs) in splits {
        if pairs.is_empty() {
            continue;
        }
        let (psnr, ssim) = evaluate(&net, pairs, 8)?;
        let (bicubic_psnr, bicubic_ssim) = bicubic_scores(pairs, cfg.scale)?;
        rows.push(EvalRow {
            split,
            psnr,
            ssim,
            bicubic_psnr,
            bicubic_ssim,
        });
    }
    println!("{:<14}{:>10}{:>9}{:>14}{:>14}", "split", "PSNR-Y", "SSIM", "bicubic PSNR", "bicubic SSIM");
    let mut csv = String::from("split,psnr_y,ssim,bicubic_psnr_y,bicubic_ssim\n");
    for r in &rows {
        println!(
            "{:<14}{:>10.4}{:>9.4}{:>14.4}{:>14.4}",
            r.split, r.psnr, r.ssim, r.bicubic_psnr, r.bicubic_ssim
        );
        let _ = writeln!(
            csv,
            "{},{:.4},{:.4},{:.4},{:.4}",
            r.split, r.psnr, r.ssim, r.bicubic_psnr, r.bicubic_ssim
        );
    }
    fs::create_dir_all(&cfg.run_dir)?;
    fs::write(cfg.run_dir.join("eval.csv"), csv)?;
    freeze(cfg, &cfg.run_dir, "eval")?;
    Ok(())
}

fn read_image(path: &Path) -> crate::Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("srf") => read_srf32(path),
        _ => read_ppm(path),
    }
}

fn cmd_infer<T: Float>(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.input.as_os_str().is_empty() || cfg.output.as_os_str().is_empty() {
        return Err(CliError::Config {
            line: None,
            msg: "infer needs --input and --output".into(),
        });
    }
    let net = load_model::<T>(cfg, &cfg.checkpoint)?;
    let img = read_image(&cfg.input)?;
    let s = img.shape().to_vec();
    let x = img.cast::<T>().reshape(&[1, s[0], s[1], s[2]])?;
    let y = net.infer(&x, NormMode::Softmax, None)?;
    let ys = y.shape().to_vec();
    let out: Image = y.reshape(&ys[1..])?.cast::<f32>();
    fs::create_dir_all(parent_dir(&cfg.output))?;
    write_ppm(&out, &cfg.output)?;
    freeze(cfg, &parent_dir(&cfg.output), "infer")?;
    println!(
        "{}: {}x{} -> {}: {}x{}",
        cfg.input.display(),
        s[1],
        s[0],
        cfg.output.display(),
        ys[2],
        ys[1]
    );
    Ok(())
}
