use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use early_transfer::adversarial::Method;
use early_transfer::data::{cifar_class_id, DATA_DIR_ENV};
use early_transfer::experiments::{DataSource, DEFAULT_ANGLE_SAMPLES, DEFAULT_MAX_PER_CLASS};
use early_transfer::models::NetworkSpec;
use early_transfer::optim::OptimizerKind;

const CLASS_TABLE: &str = "CIFAR-10 class ids: airplane=0 automobile=1 bird=2 cat=3 deer=4 dog=5 frog=6 horse=7 ship=8 truck=9";

const SEED_HELP: &str =
    "Seeds derive from --seed-base as h(base,i) with h(b,i) = splitmix64(splitmix64(b) ^ i): \
model1 i=1, model2 i=2, shuffle1 i=3, shuffle2 i=4, eval i=5.";

#[derive(Parser, Debug)]
#[command(name = "early-transfer", version, about = "Paired-training experiments on the angle between adversarial directions of independent networks", after_help = format!("{CLASS_TABLE}\n{SEED_HELP}"))]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train two networks side by side and record the angle between their adversarial directions after every step.
    Pair(PairArgs),
    /// Angles between first-layer update rows of two models after one step on disjoint batches.
    Correlate(CorrelateArgs),
    /// Angles between first-layer weight rows after one large step and the model's adversarial directions.
    Align(AlignArgs),
    /// Expected-angle and Markov-bound tables, optionally a Monte-Carlo estimate.
    Geometry(GeometryArgs),
    /// Paired training measured once per epoch.
    Longterm(LongtermArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Cifar,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

fn arch(s: &str) -> Result<String, String> {
    NetworkSpec::from_id(s)
        .map(|_| s.trim().to_string())
        .map_err(|e| e.to_string())
}

fn classes(s: &str) -> Result<[u8; 2], String> {
    let ids = s
        .split(',')
        .map(|c| cifar_class_id(c).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    match ids[..] {
        [a, b] if a != b => Ok([a, b]),
        [_, _] => Err("the two classes must differ".into()),
        _ => Err(format!("expected two comma-separated classes, got '{s}'")),
    }
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value = "cifar")]
    pub dataset: DatasetKind,
    /// Two CIFAR-10 classes by name or id.
    #[arg(long, default_value = "cat,dog", value_parser = classes, long_help = CLASS_TABLE)]
    pub classes: [u8; 2],
    /// Directory holding the CIFAR-10 binary batches.
    #[arg(long, env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,
    /// Training images kept per class; 0 keeps all.
    #[arg(long, default_value_t = DEFAULT_MAX_PER_CLASS)]
    pub max_per_class: usize,
    #[arg(long, default_value_t = 4000)]
    pub synthetic_train: usize,
    #[arg(long, default_value_t = 2000)]
    pub synthetic_test: usize,
    #[arg(long, default_value_t = 3072)]
    pub synthetic_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub synthetic_seed: u64,
}

impl DataArgs {
    pub fn source(&self) -> Result<DataSource, String> {
        Ok(match self.dataset {
            DatasetKind::Cifar => DataSource::Cifar {
                dir: self
                    .data_dir
                    .clone()
                    .ok_or_else(|| format!("--dataset cifar needs --data-dir or {DATA_DIR_ENV}"))?,
                classes: self.classes,
                max_per_class: (self.max_per_class > 0).then_some(self.max_per_class),
            },
            DatasetKind::Synthetic => DataSource::Synthetic {
                train: self.synthetic_train,
                test: self.synthetic_test,
                dim: self.synthetic_dim,
                seed: self.synthetic_seed,
            },
        })
    }
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    /// CSV output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; defaults to the CSV path with a `.manifest` extension.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

impl OutputArgs {
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest
            .clone()
            .unwrap_or_else(|| self.out.with_extension("manifest"))
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long, default_value = "fc_deep", value_parser = arch)]
    pub arch1: String,
    #[arg(long, default_value = "fc_deep", value_parser = arch)]
    pub arch2: String,
    /// sgd, sgd_momentum, rmsprop or adam.
    #[arg(long, default_value = "adam", value_parser = clap::value_parser!(OptimizerKind))]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    /// grad or sign.
    #[arg(long, default_value = "grad", value_parser = clap::value_parser!(Method))]
    pub method: Method,
    #[arg(long, default_value_t = DEFAULT_ANGLE_SAMPLES)]
    pub angle_samples: usize,
    #[arg(long, default_value_t = 0, long_help = SEED_HELP)]
    pub seed_base: u64,
    /// Give both models the same seeds (identical-twin control).
    #[arg(long)]
    pub twins: bool,
    #[arg(long, value_enum, default_value = "f64")]
    pub precision: Precision,
    /// Three-panel SVG chart of the series.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct PairArgs {
    #[arg(long, default_value_t = 30)]
    pub steps: usize,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug)]
pub struct LongtermArgs {
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug, Clone)]
pub struct StepArgs {
    #[arg(long, default_value = "fc_deep", value_parser = arch)]
    pub arch1: String,
    #[arg(long, default_value = "fc_deep", value_parser = arch)]
    pub arch2: String,
    #[arg(long, default_value_t = 30)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed_base: u64,
    /// Feed both models the same batch.
    #[arg(long)]
    pub shared_batch: bool,
    #[arg(long, value_enum, default_value = "f64")]
    pub precision: Precision,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct CorrelateArgs {
    #[command(flatten)]
    pub step: StepArgs,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// Step size as a multiple of |first-layer weights| / |first-layer gradient|.
    #[arg(long, default_value_t = 1e3)]
    pub lr_multiplier: f64,
    /// Absolute step size; overrides --lr-multiplier.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value = "grad", value_parser = clap::value_parser!(Method))]
    pub method: Method,
    #[arg(long, default_value_t = DEFAULT_ANGLE_SAMPLES)]
    pub angle_samples: usize,
    #[command(flatten)]
    pub step: StepArgs,
}

#[derive(Args, Debug)]
pub struct GeometryArgs {
    /// Dimensions for the expected-angle table.
    #[arg(long, value_delimiter = ',')]
    pub dims: Vec<usize>,
    /// Angle thresholds t for the Markov bound table.
    #[arg(long, value_delimiter = ',')]
    pub markov: Vec<usize>,
    /// Dimension for --markov and --monte-carlo.
    #[arg(long, default_value_t = 3072)]
    pub dim: usize,
    /// Number of random vector pairs to sample.
    #[arg(long)]
    pub monte_carlo: Option<usize>,
    /// Monte-Carlo seed is h(base,1).
    #[arg(long, default_value_t = 0)]
    pub seed_base: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}
