use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "lsinspect", version, about = "Line/space SEM defect inspection pipeline")]
pub struct Cli {
    /// Cap on worker threads (0 = one per core); for `serve`, also the job slots.
    #[arg(long, global = true, env = "WS_WORKERS", default_value_t = 0)]
    pub workers: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a seeded synthetic dataset.
    Generate(GenerateArgs),
    /// Denoise every image of a folder.
    Denoise(DenoiseArgs),
    /// Run a detector over a folder of images.
    Detect(DetectArgs),
    /// Fuse prediction files with the preference-ordered affirmative rule.
    Ensemble(EnsembleArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Compare two evaluation reports (e.g. noisy vs denoised).
    Compare(CompareArgs),
    /// Write the per-defect CSV report.
    ExportCsv(ExportCsvArgs),
    /// Copy images into one folder per detected class.
    Segregate(SegregateArgs),
    /// Radially averaged power spectrum of one image as CSV.
    Psd(PsdArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NoiseModelArg {
    Gaussian,
    PoissonGaussian,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, env = "WS_COUNT", default_value_t = 10)]
    pub count: usize,
    #[arg(long, env = "WS_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "WS_PITCH_PX", default_value_t = 40.0)]
    pub pitch_px: f64,
    #[arg(long, env = "WS_IMAGE_SIZE", default_value_t = 1024)]
    pub image_size: usize,
    /// Class weights, e.g. `gap=174,p_gap=54,microbridge=78,bridge=17,line_collapse=76`.
    #[arg(long, env = "WS_MIX", default_value = "gap=174,p_gap=54,microbridge=78,bridge=17,line_collapse=76")]
    pub mix: String,
    #[arg(long, env = "WS_NOISE_SIGMA", default_value_t = 0.08)]
    pub noise_sigma: f64,
    #[arg(long, env = "WS_NOISE_MODEL", value_enum, default_value = "gaussian")]
    pub noise_model: NoiseModelArg,
    #[arg(long, env = "WS_LWR_SIGMA_PX", default_value_t = 0.0)]
    pub lwr_sigma_px: f64,
    #[arg(long, env = "WS_CHARGING", default_value_t = 0.0)]
    pub charging: f64,
    /// Sub-threshold footing bumps per image (no ground truth).
    #[arg(long, env = "WS_FOOTING", default_value_t = 0)]
    pub footing: usize,
    #[arg(long, env = "WS_MIN_DEFECTS", default_value_t = 1)]
    pub min_defects: usize,
    #[arg(long, env = "WS_MAX_DEFECTS", default_value_t = 4)]
    pub max_defects: usize,
    #[arg(long, env = "WS_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    /// Image folder or dataset root (with `images/`).
    #[arg(long = "in", env = "WS_IN")]
    pub input: PathBuf,
    #[arg(long, env = "WS_OUT")]
    pub out: PathBuf,
    /// median | gaussian | fourier_lowpass
    #[arg(long, env = "WS_METHOD", default_value = "median")]
    pub method: String,
    /// Kernel size, sigma or cutoff; the method default when omitted.
    #[arg(long, env = "WS_PARAM")]
    pub param: Option<f64>,
    /// Also write `psd/<image>.csv` for every denoised image.
    #[arg(long, env = "WS_PSD", default_value_t = false)]
    pub psd: bool,
    #[arg(long, env = "WS_PIXEL_SIZE_NM", default_value_t = 0.8)]
    pub pixel_size_nm: f64,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long = "in", env = "WS_IN")]
    pub input: PathBuf,
    #[arg(long, env = "WS_METHOD", default_value = "baseline")]
    pub method: String,
    #[arg(long, env = "WS_INTENSITY_THRESHOLD", default_value_t = 0.5)]
    pub intensity_threshold: f64,
    /// Minimum failure area in pixels.
    #[arg(long, env = "WS_MIN_SIZE", default_value_t = 8)]
    pub min_size: usize,
    #[arg(long, env = "WS_MERGE_DISTANCE", default_value_t = 1)]
    pub merge_distance: usize,
    /// Model name recorded in the prediction file.
    #[arg(long, env = "WS_MODEL", default_value = "baseline")]
    pub model: String,
    /// Pattern pitch; read from the dataset manifest when omitted.
    #[arg(long, env = "WS_PITCH_PX")]
    pub pitch_px: Option<f64>,
    #[arg(long, env = "WS_PIXEL_SIZE_NM", default_value_t = 0.8)]
    pub pixel_size_nm: f64,
    #[arg(long, env = "WS_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    All,
    First,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ClassScopeArg {
    Agnostic,
    Aware,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long, env = "WS_PREDS", num_args = 1.., value_delimiter = ',', required = true)]
    pub preds: Vec<PathBuf>,
    /// Preference order of model names; defaults to the order of `--preds`.
    #[arg(long, env = "WS_ORDER", value_delimiter = ',')]
    pub order: Vec<String>,
    #[arg(long, env = "WS_IOU", default_value_t = 0.5)]
    pub iou: f64,
    #[arg(long, env = "WS_SCOPE", value_enum, default_value = "all")]
    pub scope: ScopeArg,
    #[arg(long, env = "WS_CLASS_SCOPE", value_enum, default_value = "agnostic")]
    pub class_scope: ClassScopeArg,
    /// Accept a single prediction file (passthrough).
    #[arg(long, env = "WS_ALLOW_SINGLE", default_value_t = false)]
    pub allow_single: bool,
    #[arg(long, env = "WS_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightingArg {
    Instances,
    Uniform,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InterpArg {
    All,
    #[value(name = "11")]
    Eleven,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, env = "WS_PREDS")]
    pub preds: PathBuf,
    /// Annotation folder or dataset root (with `annotations/`).
    #[arg(long, env = "WS_TRUTH")]
    pub truth: PathBuf,
    #[arg(long, env = "WS_IOU", default_value_t = 0.5)]
    pub iou: f64,
    #[arg(long, env = "WS_SCORE_THRESHOLD", default_value_t = 0.5)]
    pub score_threshold: f64,
    #[arg(long, env = "WS_WEIGHTING", value_enum, default_value = "instances")]
    pub weighting: WeightingArg,
    #[arg(long, env = "WS_INTERP", value_enum, default_value = "all")]
    pub interp: InterpArg,
    /// Tag naming the evaluated imagery, echoed in the report.
    #[arg(long, env = "WS_IMAGERY")]
    pub imagery: Option<String>,
    /// Optional CSV of PR points.
    #[arg(long, env = "WS_PR_CSV")]
    pub pr_csv: Option<PathBuf>,
    #[arg(long, env = "WS_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, env = "WS_BASE")]
    pub base: PathBuf,
    #[arg(long, env = "WS_OTHER")]
    pub other: PathBuf,
    #[arg(long, env = "WS_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportCsvArgs {
    #[arg(long, env = "WS_PREDS")]
    pub preds: PathBuf,
    #[arg(long, env = "WS_PIXEL_SIZE_NM", default_value_t = 0.8)]
    pub pixel_size_nm: f64,
    /// Rows below this score are left out.
    #[arg(long, env = "WS_SCORE_THRESHOLD", default_value_t = 0.0)]
    pub score_threshold: f64,
    #[arg(long, env = "WS_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegregateArgs {
    #[arg(long, env = "WS_PREDS")]
    pub preds: PathBuf,
    /// Folder holding the images named in the prediction file.
    #[arg(long, env = "WS_IMAGES")]
    pub images: PathBuf,
    #[arg(long, env = "WS_SCORE_THRESHOLD", default_value_t = 0.5)]
    pub score_threshold: f64,
    #[arg(long, env = "WS_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PsdArgs {
    #[arg(long = "in", env = "WS_IN")]
    pub input: PathBuf,
    #[arg(long, env = "WS_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "WS_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "WS_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "WS_DATA_ROOT", default_value = "lsinspect-data")]
    pub data_root: PathBuf,
}
