//! Command-line surface. Every option is also a config-file key (the long
//! flag name) in the table named after the subcommand; defaults are listed
//! in each help text and applied after merging.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "evact",
    version,
    about = "Event-camera activity recognition: representations, linear classification and calibrated uncertainty"
)]
pub struct Cli {
    /// TOML config with one table per subcommand (e.g. [train]) keyed by long
    /// flag names; explicit flags take precedence over the file
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for per-clip parallel stages [default: available cores];
    /// outputs do not depend on it. Also read from a top-level `workers` key
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic labeled clip dataset (train/test splits, manifests, classes.csv)
    Synth(SynthArgs),
    /// Convert and preprocess one event stream (ROI crop, refractory filter, denoise)
    Ingest(IngestArgs),
    /// Build event frames (FRM1) for a stream or every clip of a manifest
    Frames(FramesArgs),
    /// Build a voxel grid (FRM1, one H x W x B frame) for a stream or manifest
    Voxel(VoxelArgs),
    /// Track blobs and write one descriptor per blob (FTR1) for a stream or manifest
    Blobs(BlobsArgs),
    /// Write pooled, flattened frame features (FTR1) for events or frame files
    Featurize(FeaturizeArgs),
    /// Train the softmax head, optionally a Laplace posterior and an ensemble
    Train(TrainArgs),
    /// Clip-level accuracy per class, Motion/Static aggregates and overall Acc@1
    Eval(EvalArgs),
    /// Reliability diagrams with ACE and MCE for one or more predictive methods
    Calibrate(CalibrateArgs),
    /// Collect eval and calibrate outputs of a directory into one summary
    Report(ReportArgs),
    /// Measure frame-building throughput in events per second (single thread)
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolingArg {
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatArg {
    Binary,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightsArg {
    Uniform,
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceArg {
    Auto,
    Full,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Map,
    Laplace,
    Ensemble,
    LaplaceEnsemble,
}

impl MethodArg {
    pub fn name(self) -> &'static str {
        match self {
            MethodArg::Map => "map",
            MethodArg::Laplace => "laplace",
            MethodArg::Ensemble => "ensemble",
            MethodArg::LaplaceEnsemble => "laplace-ensemble",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkArg {
    Bridge,
    Probit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipRuleArg {
    Mode,
    Accum,
    Both,
}

/// Preprocessing applied to every stream before representation.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct PreArgs {
    /// Keep only events in the half-open rectangle x0,y0,x1,y1 (coordinates shift to the ROI)
    #[arg(long, value_name = "X0,Y0,X1,Y1")]
    pub roi: Option<String>,
    /// Refractory period in microseconds; drops events closer than this to a kept event at the same or a neighboring pixel [default: off]
    #[arg(long, value_name = "US")]
    pub refractory_us: Option<u64>,
    /// Enable the neighbor-support (time-surface) denoiser
    #[arg(long)]
    pub denoise: bool,
    /// Denoiser support window in microseconds [default: 10000]
    #[arg(long, value_name = "US")]
    pub tau_d_us: Option<u64>,
    /// Denoiser minimum number of supporting neighbors [default: 1]
    #[arg(long, value_name = "N")]
    pub k_min: Option<u32>,
}

/// Event-frame timing.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct FrameArgs {
    /// Frame period in microseconds [default: 150000]
    #[arg(long, value_name = "US")]
    pub dt_us: Option<u64>,
    /// Memory window in microseconds [default: 512000]
    #[arg(long, value_name = "US")]
    pub t_m_us: Option<u64>,
}

/// Built-in feature extractor.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct FeatureArgs {
    /// Value for cells without an event in the memory window, in [0, 1] [default: 0]
    #[arg(long, value_name = "V")]
    pub fill: Option<f32>,
    /// Spatial pooling factor [default: 8]
    #[arg(long, value_name = "F")]
    pub pool: Option<usize>,
    /// Pooling rule [default: max]
    #[arg(long, value_enum)]
    pub pooling: Option<PoolingArg>,
}

/// Either one file or every clip of a manifest.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct IoArgs {
    /// Input file (single-file mode)
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Output file (single-file mode)
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    /// Clip manifest (path,label,subject_id,config_id); one output per clip plus a manifest.csv in --out-dir
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Output directory (manifest mode)
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Training clips per class [default: 50]
    #[arg(long)]
    pub train_per_class: Option<usize>,
    /// Test clips per class [default: 20]
    #[arg(long)]
    pub test_per_class: Option<usize>,
    /// First seed of the training range [default: 0]
    #[arg(long)]
    pub train_seed: Option<u64>,
    /// First seed of the test range; must not overlap the training range [default: 1000000]
    #[arg(long)]
    pub test_seed: Option<u64>,
    /// Background noise in events per pixel per second [default: 0.05]
    #[arg(long)]
    pub noise_rate: Option<f64>,
    /// Noise multiplier for the test split only [default: 1]
    #[arg(long)]
    pub test_noise_scale: Option<f64>,
    /// Clip duration in microseconds [default: 2000000]
    #[arg(long)]
    pub duration_us: Option<u64>,
    /// Sensor height [default: 64]
    #[arg(long)]
    pub height: Option<u32>,
    /// Sensor width [default: 64]
    #[arg(long)]
    pub width: Option<u32>,
    /// Translation speed in px/s [default: 16]
    #[arg(long)]
    pub speed: Option<f64>,
    /// Body radius in px [default: 8]
    #[arg(long)]
    pub body_radius: Option<f64>,
    /// Log-intensity contrast threshold [default: 0.2]
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct IngestArgs {
    /// Input stream (binary EVS1 or CSV, detected)
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Output stream
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    /// Output encoding [default: csv for a .csv output, binary otherwise]
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[command(flatten)]
    #[serde(flatten)]
    pub pre: PreArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct FramesArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: IoArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub frame: FrameArgs,
    /// Replace undefined cells with this value [default: keep them as NaN]
    #[arg(long, value_name = "V")]
    pub fill: Option<f32>,
    #[command(flatten)]
    #[serde(flatten)]
    pub pre: PreArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct VoxelArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: IoArgs,
    /// Temporal bins [default: 5]
    #[arg(long)]
    pub bins: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub pre: PreArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct BlobsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: IoArgs,
    /// Weight of the previous value in every blob update [default: 0.9]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Minimum blob radius in px [default: 50]
    #[arg(long)]
    pub r_min: Option<f64>,
    /// Resampled points per channel in each descriptor [default: 100]
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Retirement weight threshold [default: 1]
    #[arg(long)]
    pub w_min: Option<f64>,
    /// Weight decay time constant in microseconds [default: 500000]
    #[arg(long)]
    pub tau_w_us: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub pre: PreArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct FeaturizeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: IoArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub frame: FrameArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub feature: FeatureArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub pre: PreArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct TrainArgs {
    /// Training manifest; entries may be event streams, frame files or feature files
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Model directory to write (model.bin, train.json, train_log.csv, ...)
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// classes.csv (id,name,kind) [default: classes.csv beside the manifest, else labels 0..max]
    #[arg(long, value_name = "FILE")]
    pub classes: Option<PathBuf>,
    /// AdamW step size [default: 0.001]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Decoupled weight decay [default: 0.0001]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Passes over the training frames [default: 50]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size [default: 256]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seed for initialization and shuffling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-class loss weights [default: uniform]
    #[arg(long, value_enum)]
    pub class_weights: Option<WeightsArg>,
    /// Also fit a Laplace posterior (and one per ensemble member)
    #[arg(long)]
    pub laplace: bool,
    /// Prior precision of the Laplace posterior [default: 1]
    #[arg(long)]
    pub prior_precision: Option<f64>,
    /// Posterior covariance; auto is full up to 4096 parameters [default: auto]
    #[arg(long, value_enum)]
    pub covariance: Option<CovarianceArg>,
    /// Also train an ensemble of this many heads (seeds seed+1..) [default: none]
    #[arg(long, value_name = "S")]
    pub ensemble: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub frame: FrameArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub feature: FeatureArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub pre: PreArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct EvalArgs {
    /// Test manifest; featurized with the settings stored in the model directory
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Model directory written by `train`
    #[arg(long, value_name = "DIR")]
    pub model_dir: Option<PathBuf>,
    /// Predictive method [default: map]
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Link for the single Laplace posterior [default: bridge]
    #[arg(long, value_enum)]
    pub link: Option<LinkArg>,
    /// Clip decision rule(s) to report: mode, accum (accumulated probability) or both side by side [default: both]
    #[arg(long, value_enum)]
    pub clip_rule: Option<ClipRuleArg>,
    /// classes.csv [default: the one used for training]
    #[arg(long, value_name = "FILE")]
    pub classes: Option<PathBuf>,
    /// Directory for eval_<method>.json and eval_<method>.csv [default: print only]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct CalibrateArgs {
    /// Test manifest; featurized with the settings stored in the model directory
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Model directory written by `train`
    #[arg(long, value_name = "DIR")]
    pub model_dir: Option<PathBuf>,
    /// Methods, comma separated [default: every method the model directory supports]
    #[arg(long, value_enum, value_delimiter = ',')]
    pub method: Option<Vec<MethodArg>>,
    /// Link for the single Laplace posterior [default: bridge]
    #[arg(long, value_enum)]
    pub link: Option<LinkArg>,
    /// Confidence bins [default: 10]
    #[arg(long)]
    pub bins: Option<usize>,
    /// Output directory for diagrams (svg, csv, json) and calibration.json
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct ReportArgs {
    /// Directory holding eval_*.json and calibration.json
    #[arg(long, value_name = "DIR")]
    pub dir: Option<PathBuf>,
    /// Markdown summary to write [default: <dir>/report.md]
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct BenchArgs {
    /// Events in the generated stream [default: 2000000]
    #[arg(long)]
    pub events: Option<usize>,
    /// Stream duration in microseconds [default: 10000000]
    #[arg(long)]
    pub duration_us: Option<u64>,
    /// Sensor height [default: 180]
    #[arg(long)]
    pub height: Option<u32>,
    /// Sensor width [default: 250]
    #[arg(long)]
    pub width: Option<u32>,
    /// Timed repetitions; the fastest is reported [default: 3]
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Seed of the generated stream [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub frame: FrameArgs,
}
