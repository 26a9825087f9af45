use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "langfield", version, about = "Semantic Gaussian field engine")]
pub struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, env = "LANGFIELD_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic region scene.
    Synth(SynthArgs),
    /// Write a camera file (orbit around the origin).
    Camera(CameraArgs),
    /// Render RGB, alpha, weight maps and features.
    Render(RenderArgs),
    /// Similarity heatmap and open-vocabulary labels for a text term.
    Query(QueryArgs),
    /// Segmentation and image-quality metrics.
    Eval(EvalArgs),
    /// Write a synthetic frame sequence as PNGs.
    Frames(FramesArgs),
    /// Track objects through frames and build a pixel-feature store.
    Collect(CollectArgs),
    /// Audit analytic loss gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Sweep the dictionary size on synthetic scenes.
    Ksweep(KsweepArgs),
    /// Run the toy grouping / aggregation / segmentation loop.
    TrainToy(TrainToyArgs),
    /// Serve render and query endpoints over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Primitive count.
    #[arg(long, default_value_t = 4096)]
    pub n: usize,
    /// Dictionary size.
    #[arg(long, default_value_t = 128)]
    pub k: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 32)]
    pub c: usize,
    #[arg(long, default_value_t = 4)]
    pub regions: usize,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct CameraArgs {
    #[arg(long, default_value_t = 96)]
    pub width: u32,
    #[arg(long, default_value_t = 96)]
    pub height: u32,
    /// Radians; 0 looks down +z.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub azimuth: f64,
    /// Radians; positive lifts the eye.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub elevation: f64,
    #[arg(long, default_value_t = 3.0)]
    pub radius: f64,
    /// Vertical field of view in radians; defaults to framing the synthetic grid.
    #[arg(long)]
    pub fov: Option<f64>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u16).range(1..))]
    pub tile_size: u16,
    /// Also write one 16-bit PNG per atom.
    #[arg(long)]
    pub weight_maps: bool,
    /// Also write the assembled feature image (features.lff).
    #[arg(long)]
    pub features: bool,
    /// Compare weight-first and feature-first feature rendering.
    #[arg(long)]
    pub check_equivalence: bool,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("target").required(true).args(["term", "embedding_file"])))]
pub struct QueryArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub term: Option<String>,
    /// JSON array with C numbers, used instead of a vocabulary term.
    #[arg(long)]
    pub embedding_file: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = langfield::eval::ALPHA_FLOOR)]
    pub alpha_floor: f64,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("rgb").multiple(true).requires_all(["pred_rgb", "gt_rgb"]).args(["pred_rgb", "gt_rgb"])))]
pub struct EvalArgs {
    /// Predicted label PNG.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth label PNG.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub pred_rgb: Option<PathBuf>,
    #[arg(long)]
    pub gt_rgb: Option<PathBuf>,
    /// Scene whose vocabulary names the classes.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Exit with a failure code when mIoU is below this value.
    #[arg(long)]
    pub min_miou: Option<f64>,
    /// Write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FramesArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 48)]
    pub height: usize,
    /// Frame at which a third rectangle enters.
    #[arg(long)]
    pub third_object_frame: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    /// Directory of PNG frames, processed in file-name order.
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// External adapter program serving generate / propagate / embed.
    /// Without it the built-in color backend is used.
    #[arg(long)]
    pub adapter: Option<String>,
    #[arg(long = "adapter-arg", allow_hyphen_values = true)]
    pub adapter_args: Vec<String>,
    /// Feature dimension of the built-in embedder.
    #[arg(long, default_value_t = 16)]
    pub c: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = langfield::pipeline::DEFAULT_NMS_IOU)]
    pub nms_iou: f64,
    #[arg(long, default_value_t = langfield::pipeline::DEFAULT_COVERAGE_THRESHOLD)]
    pub coverage_threshold: f64,
    /// Write per-frame statistics as JSON.
    #[arg(long)]
    pub stats_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tighten the gate to the strict double-precision tolerance.
    #[arg(long)]
    pub double: bool,
    /// Negate analytic gradients; the run must then fail.
    #[arg(long)]
    pub perturb_sign_flip: bool,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KsweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8, 16, 32])]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4096)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub c: usize,
    #[arg(long, default_value_t = 192)]
    pub resolution: u32,
    #[arg(long, default_value_t = 3)]
    pub cameras: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Write the per-step grouping loss as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Save the rebuilt scene.
    #[arg(long)]
    pub scene_out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    /// Cached responses kept in memory.
    #[arg(long, default_value_t = 64)]
    pub cache_size: usize,
}
