use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use ndarray::Array2;
use pargrappa::analyze::{magnitude_activation, quality_report, read_design_csv, DesignMatrix};
use pargrappa::bgrappa::{bgrappa_reconstruct, IcmConfig};
use pargrappa::grappa::{grappa_reconstruct, KernelSpec};
use pargrappa::simulate::run_simulation;
use pargrappa::{io, ImageSeries};

use crate::{in_dir, Sharing, SimParams};

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Directory written by `simulate`; needed unless sweeping.
    #[arg(long)]
    pub dir: Option<PathBuf>,
    /// First reconstruction (deltas are a minus b).
    #[arg(long)]
    pub a: Option<PathBuf>,
    #[arg(long)]
    pub b: Option<PathBuf>,
    /// Simulate each acceleration and compare grappa (a) with bgrappa (b).
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub sweep_accel: Vec<usize>,
    #[command(flatten)]
    pub sim: SimParams,
    #[arg(long, default_value = "2x1")]
    pub kernel: KernelSpec,
    #[arg(long, value_enum, default_value_t = Sharing::Location)]
    pub sharing: Sharing,
    #[arg(long, default_value_t = 0.05)]
    pub q: f64,
    /// Defaults to <dir>/compare.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Metrics of one reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse_in: f64,
    pub mse_out: f64,
    pub entropy: f64,
    pub roi_significant: usize,
    pub roi_mean_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub label: String,
    pub a: Metrics,
    pub b: Metrics,
}

pub fn metrics(
    recon: &ImageSeries,
    truth: &ImageSeries,
    brain: &Array2<bool>,
    roi: &Array2<bool>,
    design: &DesignMatrix,
    q: f64,
) -> Result<Metrics> {
    let qr = quality_report(recon, truth, brain, roi, design)?;
    let map = magnitude_activation(recon, design, brain, q)?;
    let (n, t) = map.roi_summary(roi);
    Ok(Metrics {
        mse_in: qr.mse_in,
        mse_out: qr.mse_out,
        entropy: qr.entropy,
        roi_significant: n,
        roi_mean_t: t,
    })
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut s = String::from(
        "label,mse_in_a,mse_in_b,mse_out_a,mse_out_b,entropy_a,entropy_b,roi_sig_a,roi_sig_b,mean_t_a,mean_t_b,d_mse_in,d_mse_out,d_entropy,d_roi_sig,d_mean_t\n",
    );
    for r in rows {
        let (a, b) = (&r.a, &r.b);
        let _ = writeln!(
            s,
            "{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{},{:.10e}",
            r.label,
            a.mse_in,
            b.mse_in,
            a.mse_out,
            b.mse_out,
            a.entropy,
            b.entropy,
            a.roi_significant,
            b.roi_significant,
            a.roi_mean_t,
            b.roi_mean_t,
            a.mse_in - b.mse_in,
            a.mse_out - b.mse_out,
            a.entropy - b.entropy,
            a.roi_significant as i64 - b.roi_significant as i64,
            a.roi_mean_t - b.roi_mean_t
        );
    }
    s
}

fn sweep(args: &CompareArgs) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::new();
    for &accel in &args.sweep_accel {
        let mut sim = args.sim.clone();
        sim.accel = accel;
        let e = run_simulation(&sim.to_config()?)?;
        let sub = e.subsampled()?;
        let truth = e.truth_series()?;
        let design = DesignMatrix::new(&e.design)?;
        let g = grappa_reconstruct(&sub, &e.mask, &e.calib, &args.kernel, args.sharing.into())?;
        let a = metrics(&g, &truth, &e.brain_mask, &e.roi, &design, args.q)?;
        drop(g);
        let b_img = bgrappa_reconstruct(&sub, &e.mask, &e.calib, &args.kernel, args.sharing.into(), &IcmConfig::default())?;
        let b = metrics(&b_img.images, &truth, &e.brain_mask, &e.roi, &design, args.q)?;
        rows.push(CompareRow {
            label: format!("accel{accel}"),
            a,
            b,
        });
    }
    Ok(rows)
}

/// Writes `compare.csv` with one row per pair (or per swept acceleration).
pub fn cmd_compare(args: &CompareArgs) -> Result<Vec<CompareRow>> {
    let rows = if !args.sweep_accel.is_empty() {
        sweep(args)?
    } else {
        let (Some(dir), Some(a), Some(b)) = (&args.dir, &args.a, &args.b) else {
            bail!("compare needs --dir, --a and --b, or --sweep-accel");
        };
        let truth = io::read_image_series(in_dir(dir, "truth.kts"))?;
        let brain = io::read_bool_map(in_dir(dir, "brain.kms"))?;
        let roi = io::read_bool_map(in_dir(dir, "roi.kms"))?;
        let design = DesignMatrix::new(&read_design_csv(&in_dir(dir, "design.csv"))?)?;
        let ma = metrics(&io::read_image_series(a)?, &truth, &brain, &roi, &design, args.q)?;
        let mb = metrics(&io::read_image_series(b)?, &truth, &brain, &roi, &design, args.q)?;
        let stem = |p: &PathBuf| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        vec![CompareRow {
            label: format!("{}-{}", stem(a), stem(b)),
            a: ma,
            b: mb,
        }]
    };
    let out = match (&args.out, &args.dir) {
        (Some(p), _) => p.clone(),
        (None, Some(d)) => in_dir(d, "compare.csv"),
        (None, None) => bail!("--out is required without --dir"),
    };
    let text = compare_csv(&rows);
    fs::write(&out, &text)?;
    print!("{text}");
    Ok(rows)
}
