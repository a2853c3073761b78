use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use ndarray::Axis;
use pargrappa::analyze::{
    magnitude_activation, phase_activation, phase_drift_correct, quality_csv, quality_report,
    read_design_csv, stats_csv, write_pgm, ActivationMap, DesignMatrix, QualityReport,
};
use pargrappa::{io, ImageSeries};

use crate::{ensure_dir, in_dir};

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Directory written by `simulate` (truth, design and masks).
    #[arg(long)]
    pub dir: PathBuf,
    /// Reconstructed image series.
    #[arg(long)]
    pub recon: PathBuf,
    /// False discovery rate.
    #[arg(long, default_value_t = 0.05)]
    pub q: f64,
    /// Also fit the phase model and write phase_stats.csv.
    #[arg(long)]
    pub phase: bool,
    /// Remove a quadratic spatial phase drift before fitting.
    #[arg(long)]
    pub drift_correct: bool,
    /// Output directory; defaults to <dir>/analysis_<recon stem>.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl AnalyzeArgs {
    pub fn new(dir: impl Into<PathBuf>, recon: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            recon: recon.into(),
            q: 0.05,
            phase: false,
            drift_correct: false,
            out: None,
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            let stem = self.recon.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            in_dir(&self.dir, &format!("analysis_{stem}"))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSummary {
    pub quality: QualityReport,
    pub roi_significant: usize,
    pub roi_mean_t: f64,
    pub brain_significant: usize,
    /// Same pair for the phase model when requested.
    pub phase_roi: Option<(usize, f64)>,
}

fn activation_table(name: &str, map: &ActivationMap, roi: &ndarray::Array2<bool>) -> (usize, f64, String) {
    let (n, t) = map.roi_summary(roi);
    let brain = map.significant.iter().filter(|&&s| s).count();
    (n, t, format!("{name:<10} {n:>15} {t:>11.4} {brain:>17}\n"))
}

/// Writes `stats.csv`, `quality.csv`, PGM maps and prints the ROI table.
pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<AnalysisSummary> {
    let mut recon = io::read_image_series(&args.recon)?;
    let truth = io::read_image_series(in_dir(&args.dir, "truth.kts"))?;
    let brain = io::read_bool_map(in_dir(&args.dir, "brain.kms"))?;
    let roi = io::read_bool_map(in_dir(&args.dir, "roi.kms"))?;
    let design = DesignMatrix::new(&read_design_csv(&in_dir(&args.dir, "design.csv"))?)?;
    if args.drift_correct {
        recon = ImageSeries::new(phase_drift_correct(recon.data().view(), &brain)?)?;
    }
    let out = args.out_dir();
    ensure_dir(&out)?;

    let quality = quality_report(&recon, &truth, &brain, &roi, &design)?;
    let mag = magnitude_activation(&recon, &design, &brain, args.q)?;
    fs::write(out.join("stats.csv"), stats_csv(&mag)).context("writing stats.csv")?;
    fs::write(out.join("quality.csv"), quality_csv(&quality)).context("writing quality.csv")?;
    let mean_mag = recon.magnitude().mean_axis(Axis(0)).expect("non-empty series");
    let mean_phase = recon.data().sum_axis(Axis(0)).mapv(|v| v.arg());
    write_pgm(&out.join("magnitude.pgm"), mean_mag.view())?;
    write_pgm(&out.join("phase.pgm"), mean_phase.view())?;
    write_pgm(&out.join("tmap.pgm"), mag.t.view())?;

    let mut table = format!("{:<10} {:>15} {:>11} {:>17}\n", "model", "roi_significant", "roi_mean_t", "brain_significant");
    let (roi_significant, roi_mean_t, line) = activation_table("magnitude", &mag, &roi);
    table.push_str(&line);
    let phase_roi = if args.phase {
        let ph = phase_activation(&recon, &design, &brain, args.q)?;
        fs::write(out.join("phase_stats.csv"), stats_csv(&ph)).context("writing phase_stats.csv")?;
        write_pgm(&out.join("phase_tmap.pgm"), ph.t.view())?;
        let (n, t, line) = activation_table("phase", &ph, &roi);
        table.push_str(&line);
        Some((n, t))
    } else {
        None
    };
    print!("{table}");
    Ok(AnalysisSummary {
        quality,
        roi_significant,
        roi_mean_t,
        brain_significant: mag.significant.iter().filter(|&&s| s).count(),
        phase_roi,
    })
}
