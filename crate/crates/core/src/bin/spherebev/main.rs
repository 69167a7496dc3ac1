mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spherebev::grid::{DEFAULT_RESOLUTION, DEFAULT_SIDE_METERS};

/// Spherical-camera BEV toolkit.
#[derive(Debug, Parser)]
#[command(name = "spherebev", version, about)]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Copy)]
struct GridArgs {
    /// Grid side length, meters.
    #[arg(long, default_value_t = DEFAULT_SIDE_METERS)]
    side: f64,
    /// Cell size, meters.
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    res: f64,
}

#[derive(Debug, Args, Clone, Copy)]
struct PillarArgs {
    #[arg(long, default_value_t = 8)]
    points_per_pillar: usize,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    z_min: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    z_max: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Project XYZ points (float32 triples) to dual-fisheye pixels, as CSV.
    Project {
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        points: PathBuf,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rasterize box annotations into a BEV label map (PGM).
    Rasterize {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only this class (vehicle, pedestrian, bicycle).
        #[arg(long)]
        class: Option<String>,
        /// Also write the centerness target as a float32 raster.
        #[arg(long)]
        centerness_out: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Sample pillar features for BEV cells, as CSV.
    Pull {
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        featmap: PathBuf,
        /// CSV of `row,col` cells. Defaults to the coarse lattice.
        #[arg(long)]
        cells: Option<PathBuf>,
        #[arg(long, default_value_t = 2500)]
        n_coarse: usize,
        #[command(flatten)]
        pillars: PillarArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coarse-to-fine BEV decoding of a feature map.
    Pipeline {
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        featmap: PathBuf,
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long, default_value_t = 2500)]
        n_coarse: usize,
        /// Anchors refined by the fine pass; 0 disables it.
        #[arg(long, default_value_t = 500)]
        k: usize,
        /// Half-width of the square fine neighbourhood, cells.
        #[arg(long, default_value_t = 1)]
        fine_radius: i64,
        /// Evaluate every cell once and skip the fine pass.
        #[arg(long, conflicts_with_all = ["n_coarse", "k"])]
        dense: bool,
        /// Draw coarse anchors at random (seeded) instead of on a lattice.
        #[arg(long)]
        random_coarse: bool,
        #[command(flatten)]
        pillars: PillarArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Dense logits, float32 raster.
        #[arg(long)]
        out: PathBuf,
        /// Binary map after thresholding, PGM.
        #[arg(long)]
        map_out: Option<PathBuf>,
        /// Ground truth PGM; enables IoU metrics on stdout.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        metrics_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        threshold: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [100.0, 50.0, 20.0])]
        ranges: Vec<f64>,
    },
    /// Segmentation, centerness and offset losses as JSON.
    Loss {
        /// Segmentation logits (float32 raster).
        #[arg(long)]
        pred: PathBuf,
        /// Labels: PGM or float32 raster (> 0.5 is positive).
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        gamma: f64,
        /// Treat `--pred` as probabilities instead of logits.
        #[arg(long)]
        probabilities: bool,
        /// Box annotations for the centerness and offset targets.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, requires = "annotations")]
        pred_center: Option<PathBuf>,
        #[arg(long, requires_all = ["annotations", "pred_offset_y"])]
        pred_offset_x: Option<PathBuf>,
        #[arg(long, requires_all = ["annotations", "pred_offset_x"])]
        pred_offset_y: Option<PathBuf>,
        #[arg(long)]
        class: Option<String>,
        /// Task weights `seg,center,offset`.
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1.0, 1.0, 1.0])]
        weights: Vec<f64>,
    },
    /// IoU of a prediction against ground truth at several ranges, as JSON.
    Evaluate {
        /// Logits (float32 raster) or a binary PGM map.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [100.0, 50.0, 20.0])]
        ranges: Vec<f64>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        threshold: f64,
    },
    /// Synchronize a multi-sensor timestamp trace.
    Sync {
        /// CSV of `stream_id,timestamp`.
        #[arg(long, required_unless_present = "simulate")]
        trace: Option<PathBuf>,
        /// Use a simulated camera/lidar/gnss capture instead of a trace file.
        #[arg(long, conflicts_with = "trace")]
        simulate: bool,
        /// Simulated rates, e.g. `camera=15,lidar=10,gnss=100`.
        #[arg(long, value_delimiter = ',', default_value = "camera=15,lidar=10,gnss=100")]
        rates: Vec<String>,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        /// Simulated timestamp noise (standard deviation), seconds.
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long, default_value_t = 0.03)]
        slop: f64,
        #[arg(long, default_value_t = 20)]
        queue: usize,
        #[arg(long, default_value = "lidar")]
        reference: String,
        /// Streams to synchronize. Defaults to those present.
        #[arg(long, value_delimiter = ',')]
        streams: Vec<String>,
    },
    /// Generate a synthetic scene: annotations, feature map, calibration,
    /// decoder and ground-truth map.
    GenScene {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        n_boxes: usize,
        #[arg(long, default_value_t = 4)]
        channels: usize,
        #[arg(long, default_value_t = 320)]
        fm_height: usize,
        #[arg(long, default_value_t = 640)]
        fm_width: usize,
        /// Box centres lie within ±placement meters.
        #[arg(long, default_value_t = 45.0)]
        placement: f64,
        #[command(flatten)]
        grid: GridArgs,
    },
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("SPHEREBEV_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| commands::UsageError(format!("SPHEREBEV_THREADS={raw:?} is not a thread count")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result = init_threads().and_then(|()| commands::run(cli.command, cli.seed));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
