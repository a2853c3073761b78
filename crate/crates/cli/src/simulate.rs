use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use pargrappa::analyze::design_csv;
use pargrappa::io;
use pargrappa::simulate::run_simulation;
use pargrappa::CoilKSpaceSeries;

use crate::{ensure_dir, in_dir, SimParams};

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimParams,
    /// Also write the fully sampled series as full.kts.
    #[arg(long)]
    pub write_full: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes `calib.kts`, `subsampled.kts`, `truth.kts`, `mask.kms`,
/// `brain.kms`, `roi.kms`, `tissue.kms`, `design.csv` and `params.txt`.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<PathBuf> {
    let cfg = args.sim.to_config()?;
    ensure_dir(&args.out)?;
    let e = run_simulation(&cfg)?;
    let dir = &args.out;
    io::write_series(in_dir(dir, "calib.kts"), &e.calib)?;
    io::write_image_series(in_dir(dir, "truth.kts"), &e.truth_series()?)?;
    io::write_mask(in_dir(dir, "mask.kms"), &e.mask)?;
    io::write_bool_map(in_dir(dir, "brain.kms"), &e.brain_mask)?;
    io::write_bool_map(in_dir(dir, "roi.kms"), &e.roi)?;
    io::write_u8_map(in_dir(dir, "tissue.kms"), &e.tissue_labels)?;
    fs::write(in_dir(dir, "design.csv"), design_csv(&e.design))?;
    if args.write_full {
        io::write_series(in_dir(dir, "full.kts"), &e.full)?;
    }
    let mask = e.mask;
    let sub = subsample_owned(e.full, &mask)?;
    io::write_series(in_dir(dir, "subsampled.kts"), &sub)?;

    let p = &args.sim;
    let echo = format!(
        "ny {}\nnx {}\nncoils {}\naccel {}\nphase_offset {}\nncal {}\nseed {}\nbeta1 {}\ntheta1 {}\nnoise_scale {}\nphantom {:?}\nroi_voxels {}\nframes {}\n",
        p.ny,
        p.nx,
        p.ncoils,
        p.accel,
        p.phase_offset,
        p.ncal,
        p.seed,
        p.beta1,
        p.theta1,
        p.noise_scale,
        p.phantom,
        p.roi_voxels,
        sub.n_t()
    );
    fs::write(in_dir(dir, "params.txt"), &echo).context("writing params.txt")?;
    print!("{echo}");
    Ok(dir.clone())
}

fn subsample_owned(full: CoilKSpaceSeries, mask: &pargrappa::SamplingMask) -> Result<CoilKSpaceSeries> {
    let mut data = full.into_inner();
    for mut frame in data.outer_iter_mut() {
        pargrappa::tensor::subsample_frame_inplace(&mut frame, mask)?;
    }
    Ok(CoilKSpaceSeries::new(data)?)
}
