use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use streamap::forecast::ForecasterKind;
use streamap::{ColdStart, Horizon};

#[derive(Debug, Parser)]
#[command(
    name = "streamap",
    version,
    about = "Latency-aware streaming detection evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads for per-clip work (default: one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Offline AP and streaming AP under a latency model.
    Sap(SapArgs),
    /// Streaming AP at several playback speed-ups and their mean.
    Vsap(VsapArgs),
    /// Compare forecasters on the same detector output.
    Forecast(ForecastArgs),
    /// Write a dataset subsampled at a frame stride.
    Resample(ResampleArgs),
    /// Generate a synthetic dataset with detections.
    Simulate(SimulateArgs),
    /// Per-object trend weights for one triplet.
    TalWeights(TalArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// COCO-style annotation JSON.
    #[arg(long, requires = "manifest", conflicts_with = "scene")]
    pub annotations: Option<PathBuf>,
    /// Clip manifest JSON mapping image ids to clips in stream order.
    #[arg(long, requires = "annotations")]
    pub manifest: Option<PathBuf>,
    /// COCO results JSON with the detector's output.
    #[arg(long, conflicts_with = "scene")]
    pub detections: Option<PathBuf>,
    /// Synthetic scene spec (JSON); ground truth and detections are generated from it.
    #[arg(long)]
    pub scene: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("latency").required(true).args(["latency_ms", "latency_file", "latency_mean_ms"])))]
pub struct LatencyArgs {
    /// Constant processing time per frame, milliseconds.
    #[arg(long)]
    pub latency_ms: Option<f64>,
    /// JSON latency table: either `{"<frame_id>": ms, ...}` or a tagged latency model.
    #[arg(long)]
    pub latency_file: Option<PathBuf>,
    /// Mean of a Gaussian per-frame latency, milliseconds.
    #[arg(long, requires = "latency_std_ms")]
    pub latency_mean_ms: Option<f64>,
    #[arg(long, requires = "latency_mean_ms")]
    pub latency_std_ms: Option<f64>,
    /// Lower clamp for Gaussian latency, milliseconds.
    #[arg(long, default_value_t = 0.0)]
    pub latency_floor_ms: f64,
    /// Seed for Gaussian latency (default: derived from --seed).
    #[arg(long)]
    pub latency_seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct KalmanArgs {
    /// Minimum IoU for associating boxes across emissions.
    #[arg(long, default_value_t = 0.3)]
    pub kf_gate: f64,
    /// Frames a track survives without a match.
    #[arg(long, default_value_t = 3)]
    pub kf_max_age: u32,
    #[arg(long, default_value_t = 1)]
    pub kf_min_hits: u32,
    /// Frames to extrapolate: `auto` (until the output is read) or a count.
    #[arg(long, default_value = "auto", value_parser = parse_horizon)]
    pub horizon: Horizon,
    /// Override the forecaster's per-frame overhead, milliseconds.
    #[arg(long)]
    pub forecaster_latency_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ColdStartArg {
    /// Skip frames queried before the first output and count them.
    Exclude,
    /// Score them against an empty prediction.
    Empty,
}

impl From<ColdStartArg> for ColdStart {
    fn from(v: ColdStartArg) -> Self {
        match v {
            ColdStartArg::Exclude => ColdStart::Exclude,
            ColdStartArg::Empty => ColdStart::Empty,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// JSON report path; `-` writes it to stdout and moves the table to stderr.
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
    /// Also write the table rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Root seed for every random draw.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub latency: LatencyArgs,
    #[command(flatten)]
    pub kalman: KalmanArgs,
    #[arg(long, value_enum, default_value_t = ColdStartArg::Exclude)]
    pub cold_start: ColdStartArg,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SapArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// none, cv or kalman.
    #[arg(long, default_value = "none")]
    pub forecaster: ForecasterKind,
    /// Write the simulated emission logs here.
    #[arg(long)]
    pub emission_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VsapArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long, default_value = "none")]
    pub forecaster: ForecasterKind,
    /// Comma-separated speed-ups.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6")]
    pub velocities: Vec<u32>,
}

#[derive(Debug, Clone, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long, value_delimiter = ',', default_value = "none,cv,kalman")]
    pub forecasters: Vec<ForecasterKind>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub velocities: Vec<u32>,
}

#[derive(Debug, Clone, Args)]
pub struct ResampleArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Detections to carry over to the kept frames.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Keep frames 0, M, 2M, ... (0 and 1 keep every frame).
    #[arg(long, alias = "velocity")]
    pub stride: u32,
    /// Directory for annotations.json, manifest.json and detections.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Scene spec JSON; without it, random scenes are drawn from --seed.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub clips: usize,
    #[arg(long, default_value_t = 60)]
    pub frames: usize,
    #[arg(long, default_value_t = 6)]
    pub objects: usize,
    #[arg(long, default_value_t = 2)]
    pub categories: u64,
    /// Largest per-axis object speed, pixels per frame.
    #[arg(long, default_value_t = 5.0)]
    pub max_speed: f64,
    /// Detector center jitter std. dev., pixels.
    #[arg(long, default_value_t = 0.0)]
    pub center_jitter: f64,
    /// Detector width/height jitter std. dev., pixels.
    #[arg(long, default_value_t = 0.0)]
    pub size_jitter: f64,
    #[arg(long, default_value_t = 0.0)]
    pub drop_prob: f64,
    /// Mean false positives per frame.
    #[arg(long, default_value_t = 0.0)]
    pub fp_rate: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["triplet", "annotations"])))]
pub struct TalArgs {
    /// JSON with `future` and `reference` box lists and optional `reg_losses`.
    #[arg(long)]
    pub triplet: Option<PathBuf>,
    #[arg(long, requires_all = ["manifest", "clip", "index"])]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub clip: Option<u64>,
    /// Index of the triplet's current frame within the clip.
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub velocity: u32,
    /// Measure against the native-rate frame before the future one.
    #[arg(long)]
    pub advanced: bool,
    #[arg(long, default_value_t = streamap::tal::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = streamap::tal::DEFAULT_NU)]
    pub nu: f64,
    /// Comma-separated per-object regression losses (default: all 1).
    #[arg(long, value_delimiter = ',')]
    pub reg_losses: Option<Vec<f64>>,
    #[command(flatten)]
    pub out: OutputArgs,
}

fn parse_horizon(s: &str) -> Result<Horizon, String> {
    if s == "auto" {
        return Ok(Horizon::Auto);
    }
    s.parse::<u32>()
        .map(Horizon::Frames)
        .map_err(|_| format!("expected `auto` or a frame count, got `{s}`"))
}
