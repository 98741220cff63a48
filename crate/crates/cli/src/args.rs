use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use csgkit::Mode;

#[derive(Debug, Parser)]
#[command(name = "csg", version, about = "CSG program parsing toolkit", args_override_self = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct Global {
    /// Shape mode: 2d or 3d.
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Beam width K.
    #[arg(long, global = true)]
    pub beam: Option<usize>,
    /// Refinement sweeps I.
    #[arg(long, global = true)]
    pub refine: Option<usize>,
    /// Reward exponent.
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Instruction limit T.
    #[arg(long = "max-len", global = true)]
    pub max_len: Option<usize>,
    /// key=value file setting any flag; command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

impl Global {
    pub fn mode(&self) -> Mode {
        self.mode.unwrap_or(Mode::Two)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn max_len(&self) -> usize {
        self.max_len.unwrap_or(csgkit::program::DEFAULT_MAX_LEN)
    }
}

/// Where target programs come from: a program file or a generated dataset.
#[derive(Debug, Args, Clone)]
pub struct Source {
    /// File with one program per line.
    #[arg(long)]
    pub programs: Option<PathBuf>,
    /// Dataset directory written by `gen`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Dataset split to read with --data.
    #[arg(long, default_value = "train")]
    pub split: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Dims {
    Desk,
    Full,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a program to a PBM or CSGV1 file.
    #[command(args_override_self = true)]
    Exec {
        #[arg(long)]
        program: Option<String>,
        #[arg(long)]
        program_file: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a single primitive instruction.
    #[command(args_override_self = true)]
    RenderPrim {
        #[arg(long)]
        prim: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic program dataset.
    #[command(args_override_self = true)]
    Gen {
        /// Per-length counts, `L:N` (split by --split-fractions) or `L:TRAIN/VAL/TEST`.
        #[arg(long)]
        lengths: Option<String>,
        #[arg(long, default_value = "0.8,0.1,0.1")]
        split_fractions: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the vocabulary manifest; optionally write the listing.
    #[command(args_override_self = true)]
    Vocab {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Supervised training on programs.
    #[command(args_override_self = true)]
    TrainSup {
        #[command(flatten)]
        source: Source,
        /// Checkpoint to write after every epoch.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Start from this checkpoint instead of a fresh model.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "desk")]
        dims: Dims,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long)]
        no_dropout: bool,
        /// Stop once teacher-forced accuracy on the training set reaches this.
        #[arg(long)]
        target_accuracy: Option<f64>,
        /// JSON-lines record per epoch.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Policy-gradient fine-tuning against rendered targets.
    #[command(args_override_self = true)]
    TrainRl {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        /// Programs sampled per shape.
        #[arg(long, default_value_t = 1)]
        samples: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Decode programs for target shapes.
    #[command(args_override_self = true)]
    Infer {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Target shape file (PBM or CSGV1).
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Nearest-neighbor retrieval baseline.
    #[command(args_override_self = true)]
    Nn {
        /// Training programs (file or dataset directory).
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Chamfer distance between a 2D target and a shape or program.
    #[command(args_override_self = true)]
    EvalCd {
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        shape: Option<PathBuf>,
        #[arg(long)]
        program: Option<String>,
    },
    /// Voxel IoU between a 3D target and a shape or program.
    #[command(args_override_self = true)]
    EvalIou {
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        shape: Option<PathBuf>,
        #[arg(long)]
        program: Option<String>,
    },
    /// Primitive detections from beam programs, one JSON line per image.
    #[command(args_override_self = true)]
    Detect {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean average precision of a detections file against true programs.
    #[command(args_override_self = true)]
    EvalMap {
        #[arg(long)]
        detections: Option<PathBuf>,
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
    },
    /// Compare analytic and finite-difference gradients.
    #[command(args_override_self = true)]
    Gradcheck {
        /// Model to check; a small random model when absent.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long)]
        max_per_block: Option<usize>,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}
