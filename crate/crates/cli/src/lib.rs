//! Subcommands of the `pargrappa` binary. Each command is a plain function
//! over its argument struct so it can be driven from tests as well.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod analyze;
mod compare;
mod export;
mod reconstruct;
mod simulate;

pub use analyze::{cmd_analyze, AnalyzeArgs, AnalysisSummary};
pub use compare::{cmd_compare, CompareArgs, CompareRow};
pub use export::{cmd_export_pgm, ExportArgs, Part};
pub use reconstruct::{cmd_reconstruct, Method, ReconstructArgs};
pub use simulate::{cmd_simulate, SimulateArgs};

#[derive(Debug, Parser)]
#[command(name = "pargrappa", version, about = "GRAPPA and Bayesian GRAPPA for simulated fMRI")]
pub struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "PARGRAPPA_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a block-design run and write k-space, truth, masks and design.
    Simulate(SimulateArgs),
    /// Reconstruct images from a subsampled (or full) series.
    Reconstruct(ReconstructArgs),
    /// Activation maps and quality metrics of a reconstruction.
    Analyze(AnalyzeArgs),
    /// Tabulate metric differences between two reconstructions.
    Compare(CompareArgs),
    /// Write one frame of an image series as an 8-bit PGM.
    ExportPgm(ExportArgs),
}

/// Weight-sharing choice as a command-line value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Sharing {
    #[default]
    Location,
    OffsetColumn,
    Offset,
}

impl From<Sharing> for pargrappa::grappa::WeightSharing {
    fn from(s: Sharing) -> Self {
        use pargrappa::grappa::WeightSharing as W;
        match s {
            Sharing::Location => W::PerLocation,
            Sharing::OffsetColumn => W::PerRowOffsetColumn,
            Sharing::Offset => W::PerRowOffset,
        }
    }
}

/// Simulation settings shared by `simulate` and `compare --sweep-accel`.
#[derive(Debug, Clone, Args)]
pub struct SimParams {
    #[arg(long, default_value_t = 96)]
    pub ny: usize,
    #[arg(long, default_value_t = 96)]
    pub nx: usize,
    #[arg(long, default_value_t = 8)]
    pub ncoils: usize,
    #[arg(long, default_value_t = 3)]
    pub accel: usize,
    #[arg(long, default_value_t = 0)]
    pub phase_offset: usize,
    #[arg(long, default_value_t = 30)]
    pub ncal: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Magnitude task response.
    #[arg(long, default_value_t = 0.045)]
    pub beta1: f64,
    /// Phase task response in radians.
    #[arg(long, default_value_t = std::f64::consts::PI / 120.0)]
    pub theta1: f64,
    /// Noise variance per part is this times n_y * n_x.
    #[arg(long, default_value_t = 0.0036)]
    pub noise_scale: f64,
    #[arg(long, value_enum, default_value_t = PhantomArg::Brain)]
    pub phantom: PhantomArg,
    #[arg(long, default_value_t = 28)]
    pub roi_voxels: usize,
    /// Off/on epochs in the task run.
    #[arg(long, default_value_t = 16)]
    pub epochs: usize,
    /// Frames per off or on block.
    #[arg(long, default_value_t = 15)]
    pub block: usize,
    #[arg(long, default_value_t = 20)]
    pub rest_head: usize,
    #[arg(long, default_value_t = 10)]
    pub rest_tail: usize,
    #[arg(long, default_value_t = 20)]
    pub discard: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhantomArg {
    Brain,
    Disk,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams::parse_from_defaults()
    }
}

impl SimParams {
    fn parse_from_defaults() -> Self {
        #[derive(Parser)]
        struct Wrap {
            #[command(flatten)]
            p: SimParams,
        }
        Wrap::parse_from(["sim"]).p
    }

    pub fn to_config(&self) -> Result<pargrappa::simulate::SimulationConfig> {
        use pargrappa::simulate::*;
        if self.accel == 0 {
            bail!("--accel must be at least 1");
        }
        Ok(SimulationConfig {
            n_y: self.ny,
            n_x: self.nx,
            n_coils: self.ncoils,
            style: match self.phantom {
                PhantomArg::Brain => PhantomStyle::Brain,
                PhantomArg::Disk => PhantomStyle::Disk,
            },
            roi_voxels: self.roi_voxels,
            design: ExperimentDesign {
                n_rest_head: self.rest_head,
                epoch_count: self.epochs,
                off_len: self.block,
                on_len: self.block,
                n_rest_tail: self.rest_tail,
                discard: self.discard,
            },
            noise: NoiseSpec {
                variance_scale: self.noise_scale,
                seed: self.seed,
            },
            params: ExperimentParams {
                accel: self.accel,
                phase_offset: self.phase_offset,
                beta1: self.beta1,
                theta1: self.theta1,
                n_cal: self.ncal,
                factors: TissueFactors::default(),
            },
        })
    }
}

/// Sets the size of the global worker pool; 0 leaves the default.
pub fn init_threads(n: usize) -> Result<()> {
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a).map(|_| ()),
        Command::Reconstruct(a) => cmd_reconstruct(&a).map(|_| ()),
        Command::Analyze(a) => cmd_analyze(&a).map(|_| ()),
        Command::Compare(a) => cmd_compare(&a).map(|_| ()),
        Command::ExportPgm(a) => cmd_export_pgm(&a),
    }
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

pub(crate) fn in_dir(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
