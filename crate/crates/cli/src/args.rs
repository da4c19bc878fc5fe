use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spheredet_core::SphericalBox;

#[derive(Debug, Parser)]
#[command(
    name = "spheredet",
    version,
    about = "Spherical box geometry, resampling and evaluation for 360-degree images"
)]
pub struct Cli {
    /// Worker threads (defaults to the machine's parallelism).
    #[arg(long, global = true, env = "SPHEREDET_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Export the per-latitude 3x3 sampling-offset table.
    Offsets(OffsetsArgs),
    /// Pairwise IoU matrix between two box files.
    Iou(IouArgs),
    /// Filter a detections file with one selection stage.
    Nms(NmsArgs),
    /// Sample a tangent-plane patch from a panorama.
    Extract(ExtractArgs),
    /// Paste an alpha patch onto a panorama.
    Composite(CompositeArgs),
    /// Generate a synthetic annotated dataset.
    Synth(SynthArgs),
    /// Score detections against ground truth (per-class AP, mAP, latitude bands).
    Eval(EvalArgs),
    /// Dump the anchor grid.
    Anchors(AnchorsArgs),
    /// Draw box outlines onto a panorama.
    Render(RenderArgs),
}

pub fn parse_box(s: &str) -> Result<SphericalBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    let [t, p, fx, fy] = v[..] else {
        return Err(format!(
            "expected theta,phi,fov_x,fov_y, got {} values",
            v.len()
        ));
    };
    SphericalBox::new(t, p, fx, fy).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum OffsetFormat {
    Csv,
    Binary,
}

#[derive(Debug, Args)]
pub struct OffsetsArgs {
    /// ERP height in pixels.
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    /// ERP width in pixels.
    #[arg(long, default_value_t = 1024)]
    pub width: usize,
    #[arg(long, value_enum, default_value_t = OffsetFormat::Csv)]
    pub format: OffsetFormat,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Oracle {
    Grid,
    MonteCarlo,
}

#[derive(Debug, Args)]
pub struct IouArgs {
    /// Box file: a JSON array of [theta, phi, fov_x, fov_y], an annotation
    /// file, or detection/ground-truth JSON lines.
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Use the integral IoU instead of the fast approximation.
    #[arg(long)]
    pub exact: bool,
    #[arg(long, value_enum, default_value_t = Oracle::Grid)]
    pub oracle: Oracle,
    /// Latitude rows of the integration grid.
    #[arg(long, default_value_t = 512)]
    pub grid_height: usize,
    /// Sample count for the Monte-Carlo oracle.
    #[arg(long, default_value_t = 1_000_000)]
    pub mc_samples: usize,
    /// Seed for the Monte-Carlo oracle.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum StageArg {
    /// Class-agnostic NMS then the top-N by score.
    Proposal,
    /// Score floor then per-class NMS.
    Final,
}

#[derive(Debug, Args)]
pub struct NmsArgs {
    /// Detections as JSON lines.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = StageArg::Final)]
    pub stage: StageArg,
    #[arg(long, default_value_t = 0.7)]
    pub proposal_iou: f64,
    #[arg(long, default_value_t = 0.45)]
    pub final_iou: f64,
    #[arg(long, default_value_t = 0.1)]
    pub score_floor: f64,
    #[arg(long, default_value_t = 50)]
    pub top_n: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Panorama PNG.
    #[arg(long)]
    pub input: PathBuf,
    /// Box as theta,phi,fov_x,fov_y in degrees.
    #[arg(long = "box", value_parser = parse_box, allow_hyphen_values = true)]
    pub bbox: SphericalBox,
    /// Expansion factor applied to both FoVs.
    #[arg(long, default_value_t = 1.2)]
    pub expansion: f64,
    #[arg(long, default_value_t = 224)]
    pub patch_height: usize,
    #[arg(long, default_value_t = 224)]
    pub patch_width: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompositeArgs {
    /// Panorama PNG.
    #[arg(long)]
    pub input: PathBuf,
    /// Patch PNG with an alpha channel.
    #[arg(long)]
    pub patch: PathBuf,
    #[arg(long = "box", value_parser = parse_box, allow_hyphen_values = true)]
    pub bbox: SphericalBox,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ModeArg {
    SingleObject,
    MultiPerson,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory of class subdirectories holding alpha PNG crops; built-in
    /// procedural crops when omitted.
    #[arg(long)]
    pub sources: Option<PathBuf>,
    /// Directory of panorama PNGs; solid mid-gray when omitted.
    #[arg(long)]
    pub backgrounds: Option<PathBuf>,
    /// Number of images.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::SingleObject)]
    pub mode: ModeArg,
    /// Fewest objects per image (mode default when omitted).
    #[arg(long)]
    pub objects_min: Option<usize>,
    /// Most objects per image (mode default when omitted).
    #[arg(long)]
    pub objects_max: Option<usize>,
    #[arg(long, default_value_t = 20.0)]
    pub fov_min: f64,
    #[arg(long, default_value_t = 90.0)]
    pub fov_max: f64,
    #[arg(long, default_value_t = -75.0, allow_hyphen_values = true)]
    pub lat_min: f64,
    #[arg(long, default_value_t = 75.0, allow_hyphen_values = true)]
    pub lat_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub max_pairwise_iou: f64,
    #[arg(long, default_value_t = 512)]
    pub erp_height: usize,
    #[arg(long, default_value_t = 1024)]
    pub erp_width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory, replaced if it exists.
    #[arg(long, default_value = "dataset")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ApMethodArg {
    ElevenPoint,
    AllPoints,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Detections as JSON lines.
    #[arg(long)]
    pub detections: PathBuf,
    /// Ground truth as JSON lines.
    #[arg(long)]
    pub ground_truth: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub iou_threshold: f64,
    /// Latitude rows of the integral-IoU grid.
    #[arg(long, default_value_t = 512)]
    pub grid_height: usize,
    #[arg(long, value_enum, default_value_t = ApMethodArg::ElevenPoint)]
    pub ap_method: ApMethodArg,
    /// Width of the latitude bands, degrees.
    #[arg(long, default_value_t = 15.0)]
    pub band_width: f64,
    /// Text report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Machine-readable report path.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum AnchorFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct AnchorsArgs {
    /// Anchor scales in degrees, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [30.0, 60.0, 90.0])]
    pub scales: Vec<f64>,
    /// Aspect ratios as x:y, comma separated.
    #[arg(long, value_delimiter = ',', default_values = ["1:1", "1:2", "2:1"])]
    pub ratios: Vec<String>,
    #[arg(long, default_value_t = 32)]
    pub feature_height: usize,
    #[arg(long, default_value_t = 64)]
    pub feature_width: usize,
    #[arg(long, value_enum, default_value_t = AnchorFormat::Json)]
    pub format: AnchorFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Box file (same formats as `iou`).
    #[arg(long)]
    pub boxes: PathBuf,
    /// Panorama PNG to draw on; a gray canvas when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Canvas height when no input is given.
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    /// Canvas width when no input is given.
    #[arg(long, default_value_t = 1024)]
    pub width: usize,
    /// Outline color as r,g,b in 0-255.
    #[arg(long, value_delimiter = ',', default_values_t = [255u8, 0, 0])]
    pub color: Vec<u8>,
    #[arg(long)]
    pub out: PathBuf,
}
