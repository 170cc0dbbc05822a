use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

#[derive(Debug, Parser)]
#[command(name = "posetrack", version, about = "Single-person pose tracking toolkit")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset (or clip) with a JSONL manifest.
    SynthGen(SynthGenArgs),
    /// Train a keypoint network on a manifest.
    Train(TrainArgs),
    /// Remove the heatmap and offset heads from a checkpoint.
    Strip(StripArgs),
    /// Predict keypoints for one image.
    Infer(InferArgs),
    /// Run the detector-tracker loop over a clip.
    Track(TrackArgs),
    /// PCK evaluation of checkpoints on datasets.
    Eval(EvalArgs),
    /// PCK agreement between two annotation sets of the same images.
    Agree(AgreeArgs),
    /// Finite-difference verification of every gradient.
    GradCheck(GradCheckArgs),
    /// Keypoint topology.
    Topology(TopologyArgs),
    /// Crop transform for a detection or an annotated pose, as JSON.
    Align(AlignArgs),
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    /// Number of samples (or frames with --clip).
    #[arg(short = 'n', long)]
    pub count: usize,
    /// Output directory.
    #[arg(short, long, default_value = "synth")]
    pub out: PathBuf,
    /// Render one continuous clip instead of independent samples.
    #[arg(long)]
    pub clip: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Network preset (overrides the configured network).
    #[arg(long, value_parser = ["full-toy", "lite-toy"])]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hold out the last N records for per-epoch PCK.
    #[arg(long, default_value_t = 0)]
    pub heldout: usize,
    /// Write the loss curve (epoch,loss,pck) here.
    #[arg(long, value_name = "CSV")]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StripArgs {
    /// Checkpoint to read.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Stripped checkpoint to write.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// PPM image.
    #[arg(long)]
    pub image: PathBuf,
    /// Crop region `cx,cy,side,rotation_degrees`; defaults to the largest
    /// centered square.
    #[arg(long, allow_hyphen_values = true)]
    pub roi: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DetectorKind {
    /// Detections derived from the clip's annotations.
    Oracle,
    /// Never detects anyone.
    Null,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Clip directory or manifest; frames are processed in manifest order.
    #[arg(long)]
    pub clip: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DetectorKind::Oracle)]
    pub detector: DetectorKind,
    /// Presence threshold below which tracking is lost.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// JSONL output (stdout when absent).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Print PCK after the first frame and throughput to stderr.
    #[arg(long)]
    pub report: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Markdown,
    Csv,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// One or more checkpoints; each becomes a report row.
    #[arg(long, required = true, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    /// One or more datasets; each becomes a report column.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Keypoints scored.
    #[arg(long, value_parser = ["coco17", "full"])]
    pub subset: Option<String>,
    /// Count invisible ground-truth points as incorrect instead of skipping them.
    #[arg(long)]
    pub count_invisible: bool,
    #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
    pub format: FormatArg,
    /// Write the report here instead of stdout.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Exit with an error if any aggregate PCK is below this value.
    #[arg(long)]
    pub assert_min_pck: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AgreeArgs {
    /// Reference annotation manifest.
    pub a: PathBuf,
    /// Second annotation manifest over the same images.
    pub b: PathBuf,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Random cases per check.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// Entries sampled per parameter tensor.
    #[arg(long, default_value_t = 8)]
    pub entries: usize,
}

#[derive(Debug, Args)]
pub struct TopologyArgs {
    /// Print the `index,name` CSV.
    #[arg(long)]
    pub dump: bool,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Detection `x,y,radius,incline_degrees`.
    #[arg(long, allow_hyphen_values = true, conflicts_with_all = ["data", "index"])]
    pub detection: Option<String>,
    /// Manifest whose record `--index` supplies the pose.
    #[arg(long, requires = "index")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long)]
    pub padding: Option<f64>,
    /// Crop side in pixels.
    #[arg(long, default_value_t = 64)]
    pub crop_size: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
