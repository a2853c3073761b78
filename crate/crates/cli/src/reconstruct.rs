use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use pargrappa::bgrappa::{bgrappa_reconstruct, FrameLog, IcmConfig, Tau2Rule};
use pargrappa::grappa::{grappa_reconstruct, KernelSpec};
use pargrappa::io;
use pargrappa::simulate::reference_reconstruct;
use pargrappa::{CoilKSpaceSeries, ImageSeries, SamplingMask};

use crate::{in_dir, Sharing};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Grappa,
    Bgrappa,
    /// Coil average of fully sampled data.
    Reference,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Grappa => "grappa",
            Method::Bgrappa => "bgrappa",
            Method::Reference => "reference",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Tau2Arg {
    #[default]
    Printed,
    ConditionalMode,
}

#[derive(Debug, Clone, Args)]
pub struct ReconstructArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Bgrappa)]
    pub method: Method,
    /// Input series; defaults to subsampled.kts (full.kts for reference).
    #[arg(long)]
    pub series: Option<PathBuf>,
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value = "2x1")]
    pub kernel: KernelSpec,
    #[arg(long, value_enum, default_value_t = Sharing::Location)]
    pub sharing: Sharing,
    /// Reassess priors per frame from N randomly chosen calibration frames.
    #[arg(long, value_name = "N")]
    pub bootstrap_calib: Option<usize>,
    /// Overrides both prior weights.
    #[arg(long, value_name = "S")]
    pub prior_scalar: Option<f64>,
    #[arg(long, value_enum, default_value_t = Tau2Arg::Printed)]
    pub tau2_rule: Tau2Arg,
    #[arg(long, default_value_t = 10)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub rel_tol: f64,
    /// Seed of the bootstrap streams.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output image series; defaults to <dir>/<method>.kts.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-frame log for bgrappa; defaults to recon_log.csv beside the output.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

impl ReconstructArgs {
    pub fn new(dir: impl Into<PathBuf>, method: Method) -> Self {
        Self {
            dir: dir.into(),
            method,
            series: None,
            calib: None,
            mask: None,
            kernel: KernelSpec::default(),
            sharing: Sharing::Location,
            bootstrap_calib: None,
            prior_scalar: None,
            tau2_rule: Tau2Arg::Printed,
            max_iter: 10,
            rel_tol: 1e-8,
            seed: 0,
            out: None,
            log: None,
        }
    }

    pub fn out_path(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| in_dir(&self.dir, &format!("{}.kts", self.method.name())))
    }

    pub fn icm_config(&self) -> IcmConfig {
        IcmConfig {
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
            bootstrap_calibration: self.bootstrap_calib.is_some(),
            bootstrap_size: self.bootstrap_calib.unwrap_or(30),
            prior_scalar_override: self.prior_scalar,
            tau2_rule: match self.tau2_rule {
                Tau2Arg::Printed => Tau2Rule::Printed,
                Tau2Arg::ConditionalMode => Tau2Rule::ConditionalMode,
            },
            seed: self.seed,
        }
    }
}

pub fn log_csv(log: &[FrameLog]) -> String {
    let mut s = String::from("t,groups,max_sweeps,mean_tau2\n");
    for l in log {
        let _ = writeln!(s, "{},{},{},{:.10e}", l.t, l.groups, l.max_sweeps, l.mean_tau2);
    }
    s
}

fn load_inputs(args: &ReconstructArgs) -> Result<(CoilKSpaceSeries, SamplingMask)> {
    let default_series = if args.method == Method::Reference {
        "full.kts"
    } else {
        "subsampled.kts"
    };
    let series_path = args.series.clone().unwrap_or_else(|| in_dir(&args.dir, default_series));
    let series = io::read_series(&series_path)?;
    let mask = io::read_mask(args.mask.clone().unwrap_or_else(|| in_dir(&args.dir, "mask.kms")))?;
    Ok((series, mask))
}

/// Reconstructs every frame and writes the image series (and the bgrappa log).
pub fn cmd_reconstruct(args: &ReconstructArgs) -> Result<PathBuf> {
    if args.max_iter == 0 || args.rel_tol.is_nan() || args.rel_tol <= 0.0 {
        bail!("--max-iter and --rel-tol must be positive");
    }
    let (series, mask) = load_inputs(args)?;
    let calib = || io::read_series(args.calib.clone().unwrap_or_else(|| in_dir(&args.dir, "calib.kts")));
    let start = Instant::now();
    let (images, log): (ImageSeries, Option<Vec<FrameLog>>) = match args.method {
        Method::Reference => (reference_reconstruct(&series)?, None),
        Method::Grappa => (
            grappa_reconstruct(&series, &mask, &calib()?, &args.kernel, args.sharing.into())?,
            None,
        ),
        Method::Bgrappa => {
            let out = bgrappa_reconstruct(&series, &mask, &calib()?, &args.kernel, args.sharing.into(), &args.icm_config())?;
            (out.images, Some(out.log))
        }
    };
    let secs = start.elapsed().as_secs_f64();
    log::info!(
        "{}: {} frames in {:.2} s ({:.3} s/frame)",
        args.method.name(),
        images.n_t(),
        secs,
        secs / images.n_t().max(1) as f64
    );
    let out = args.out_path();
    io::write_image_series(&out, &images)?;
    if let Some(log) = log {
        let path = args.log.clone().unwrap_or_else(|| {
            out.parent().map(|p| p.join("recon_log.csv")).unwrap_or_else(|| "recon_log.csv".into())
        });
        fs::write(path, log_csv(&log))?;
    }
    Ok(out)
}
