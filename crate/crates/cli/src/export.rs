use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use pargrappa::analyze::write_pgm;
use pargrappa::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Part {
    Magnitude,
    Phase,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    /// Image series (`KTS1`, rank 3).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long, value_enum, default_value_t = Part::Magnitude)]
    pub part: Part,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_export_pgm(args: &ExportArgs) -> Result<()> {
    let series = io::read_image_series(&args.input)?;
    if args.frame >= series.n_t() {
        bail!("frame {} out of range (series has {})", args.frame, series.n_t());
    }
    let img = series.frame(args.frame);
    let values = match args.part {
        Part::Magnitude => img.mapv(|v| v.norm()),
        Part::Phase => img.mapv(|v| v.arg()),
    };
    write_pgm(&args.out, values.view())?;
    Ok(())
}
