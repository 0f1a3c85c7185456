mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use aerodet::pipeline::config::{keys_help, PipelineConfig};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

pub fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

pub fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "aerodet", version, about = "Aerial pedestrian detection, activity tagging and telemetry reports")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Configuration file of `section.key = value` lines
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for scenes, crop datasets and model weights
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Number of frames (scenes, sequence length or bench frames)
    #[arg(long, global = true, value_name = "T")]
    pub frames: Option<usize>,
    /// Regression noise amplitude for synthetic maps
    #[arg(long, global = true, value_name = "AMP")]
    pub noise: Option<f64>,
    /// Minimum segmented fraction of a decoded box
    #[arg(long, global = true, value_name = "F")]
    pub delta: Option<f64>,
    /// IoU threshold for evaluation matching and for suppression
    #[arg(long, global = true, value_name = "F")]
    pub iou: Option<f64>,
    /// Report endpoint as host:port
    #[arg(long, global = true, value_name = "HOST:PORT")]
    pub addr: Option<String>,
    /// Override one configuration key; repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Only log warnings and errors
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Scene,
    Sequence,
    Crops,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode an annotation file into per-frame dense maps
    Encode {
        #[arg(long, value_name = "ANNOTATIONS")]
        input: PathBuf,
    },
    /// Decode boxes from a maps file or a frame directory
    Detect {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Run the full per-frame pipeline over a frame directory
    Pipeline {
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        /// Trained model bundle (same as model.path)
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Score predictions against ground truth
    Eval {
        /// Prediction records with a confidence column
        #[arg(long, value_name = "PREDICTIONS")]
        input: PathBuf,
        #[arg(long, value_name = "ANNOTATIONS")]
        truth: PathBuf,
    },
    /// Generate synthetic scenes, sequences or crop datasets
    Synth {
        #[arg(long, value_enum, default_value_t = SynthKind::Scene)]
        kind: SynthKind,
        /// Segmentation flip probability
        #[arg(long, value_name = "P")]
        flip: Option<f64>,
    },
    /// Train the activity heads on a synthetic crop dataset
    Train {
        /// Crop dataset written by `synth --kind crops`; generated from the seed when absent
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Measure per-stage latency on synthetic frames
    Bench {
        /// Boxes per frame
        #[arg(long, default_value_t = 10)]
        boxes: usize,
        /// Drop to the newest frame whenever processing lags the camera
        #[arg(long)]
        latest_only: bool,
    },
    /// Send a framed report file to a receiver
    Send {
        #[arg(long, value_name = "REPORTS")]
        input: PathBuf,
    },
    /// Accept one connection and print the reports it carries
    Recv {
        /// Stop after this many messages
        #[arg(long)]
        count: Option<usize>,
    },
    /// Draw boxes over a frame as a PPM image
    Overlay {
        /// Maps file of the frame
        #[arg(long, value_name = "MAPS")]
        input: PathBuf,
        /// Prediction records drawn in green
        #[arg(long, value_name = "RECORDS")]
        boxes: Option<PathBuf>,
        /// Ground truth records drawn in red
        #[arg(long, value_name = "RECORDS")]
        truth: Option<PathBuf>,
        /// Frame id selecting records; defaults to the id in the file name
        #[arg(long)]
        frame: Option<u32>,
    },
}

/// File values first, then `--set`, then the dedicated flags.
pub fn resolve_config(common: &Common) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    for kv in &common.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v).map_err(usage)?;
    }
    if let Some(s) = common.seed {
        cfg.scene.seed = s;
        cfg.model.seed = s;
    }
    if let Some(n) = common.noise {
        cfg.scene.reg_noise = n;
    }
    if let Some(d) = common.delta {
        cfg.boxgen.delta = d;
    }
    if let Some(t) = common.iou {
        cfg.eval.iou_threshold = t;
        cfg.nms.iou = t;
    }
    if let Some(a) = &common.addr {
        cfg.wire.addr = Some(a.clone());
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let help = format!(
        "Configuration keys (flags override file values):\n{}\nExit codes: 0 success, 1 usage error, 2 data error, 3 internal error",
        keys_help()
    );
    let matches = match Cli::command().after_long_help(help).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let level = if cli.common.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aerodet: {e}");
            ExitCode::from(e.code())
        }
    }
}
