//! Activation statistics and image-quality metrics.
//!
//! Voxel time series are regressed on `[1, x]` with a right-tailed t-test on
//! the task coefficient; significance uses Benjamini-Hochberg over the brain.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2, ArrayView3, Axis, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, mismatch, Error, Result};
use crate::tensor::ImageSeries;

/// Cap for SNR where the residual variance vanishes.
pub const SNR_CAP: f64 = 1e12;

/// Regressors `[1, x]` of a block design.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    x: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(indicator: &[u8]) -> Result<Self> {
        if indicator.iter().any(|&v| v > 1) {
            return Err(invalid("design indicator must be 0 or 1"));
        }
        if !indicator.contains(&0) || !indicator.contains(&1) {
            return Err(invalid("design needs at least one rest and one task frame"));
        }
        if indicator.len() < 3 {
            return Err(invalid("design needs at least 3 frames"));
        }
        Ok(Self {
            x: indicator.iter().map(|&v| v as f64).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn indicator(&self) -> &[f64] {
        &self.x
    }

    pub fn df(&self) -> usize {
        self.x.len() - 2
    }

    /// The explicit `n x 2` matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.x.len(), 2, |i, j| if j == 0 { 1.0 } else { self.x[i] })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmFit {
    pub beta0: f64,
    pub beta1: f64,
    pub se_beta1: f64,
    /// Residual variance `RSS / (n - 2)`.
    pub sigma2: f64,
    pub t: f64,
    pub p: f64,
}

/// Right tail of Student-t with `df` degrees of freedom.
pub fn t_right_tail(t: f64, df: usize) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df is positive");
    dist.sf(t).clamp(0.0, 1.0)
}

/// Ordinary least squares of `y` on `[1, x]` with a right-tailed test of the slope.
/// A vanishing residual variance gives `t = 0, p = 1`.
pub fn fit_glm(y: &[f64], design: &DesignMatrix) -> Result<GlmFit> {
    let n = design.len();
    if y.len() != n {
        return Err(mismatch(format!("series length {} vs design length {n}", y.len())));
    }
    let x = design.indicator();
    let nf = n as f64;
    let xbar = x.iter().sum::<f64>() / nf;
    let ybar = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - xbar) * (xi - xbar);
        sxy += (xi - xbar) * (yi - ybar);
    }
    let beta1 = sxy / sxx;
    let beta0 = ybar - beta1 * xbar;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| (yi - beta0 - beta1 * xi).powi(2))
        .sum();
    let scale: f64 = y.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let sigma2 = if rss <= 1e-26 * scale { 0.0 } else { rss / (nf - 2.0) };
    let se_beta1 = (sigma2 / sxx).sqrt();
    let (t, p) = if sigma2 == 0.0 {
        (0.0, 1.0)
    } else {
        let t = beta1 / se_beta1;
        (t, t_right_tail(t, design.df()))
    };
    Ok(GlmFit {
        beta0,
        beta1,
        se_beta1,
        sigma2,
        t,
        p,
    })
}

/// Removes jumps larger than pi between successive samples.
pub fn unwrap_phase(phi: &mut [f64]) {
    let mut offset = 0.0;
    for i in 1..phi.len() {
        let prev = phi[i - 1];
        let raw = phi[i] + offset;
        let d = raw - prev;
        if d > PI {
            offset -= 2.0 * PI * ((d - PI) / (2.0 * PI)).ceil();
        } else if d < -PI {
            offset += 2.0 * PI * ((-d - PI) / (2.0 * PI)).ceil();
        }
        phi[i] += offset;
    }
}

/// [`fit_glm`] on the temporally unwrapped phase.
pub fn fit_phase_glm(phi: &[f64], design: &DesignMatrix) -> Result<GlmFit> {
    let mut unwrapped = phi.to_vec();
    unwrap_phase(&mut unwrapped);
    fit_glm(&unwrapped, design)
}

/// Benjamini-Hochberg step-up at level `q`.
pub fn fdr_threshold(p_values: &[f64], q: f64) -> Result<Vec<bool>> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid(format!("FDR level must be in (0, 1], got {q}")));
    }
    if p_values.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(invalid("p-values must lie in [0, 1]"));
    }
    let m = p_values.len();
    let mut sorted = p_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cutoff = (1..=m)
        .rev()
        .find(|&k| sorted[k - 1] <= k as f64 * q / m as f64)
        .map(|k| sorted[k - 1]);
    Ok(match cutoff {
        Some(c) => p_values.iter().map(|&p| p <= c).collect(),
        None => vec![false; m],
    })
}

/// Per-voxel GLM results.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    pub beta0: Array2<f64>,
    pub beta1: Array2<f64>,
    pub sigma2: Array2<f64>,
    pub t: Array2<f64>,
    pub p: Array2<f64>,
    pub significant: Array2<bool>,
    pub df: usize,
}

impl ActivationMap {
    /// Marks voxels by BH over the voxels in `mask` only; others stay false.
    pub fn apply_fdr(&mut self, mask: &Array2<bool>, q: f64) -> Result<()> {
        if mask.dim() != self.p.dim() {
            return Err(mismatch("FDR mask and map differ in size"));
        }
        let idx: Vec<(usize, usize)> = mask.indexed_iter().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        let p: Vec<f64> = idx.iter().map(|&i| self.p[i]).collect();
        let sig = fdr_threshold(&p, q)?;
        self.significant.fill(false);
        for (&i, s) in idx.iter().zip(sig) {
            self.significant[i] = s;
        }
        Ok(())
    }

    /// Significant voxels and mean t over `roi`.
    pub fn roi_summary(&self, roi: &Array2<bool>) -> (usize, f64) {
        let mut count = 0;
        let (mut sum, mut n) = (0.0, 0usize);
        Zip::from(roi).and(&self.significant).and(&self.t).for_each(|&r, &s, &t| {
            if r {
                count += s as usize;
                sum += t;
                n += 1;
            }
        });
        (count, if n == 0 { 0.0 } else { sum / n as f64 })
    }
}

/// Fits every voxel of a real `(time, row, col)` series.
pub fn fit_glm_map(series: ArrayView3<'_, f64>, design: &DesignMatrix, phase: bool) -> Result<ActivationMap> {
    let (n_t, n_y, n_x) = series.dim();
    if n_t != design.len() {
        return Err(mismatch(format!("series has {n_t} frames, design {}", design.len())));
    }
    let fits: Vec<GlmFit> = (0..n_y * n_x)
        .into_par_iter()
        .map(|v| {
            let y: Vec<f64> = series.slice(ndarray::s![.., v / n_x, v % n_x]).to_vec();
            if phase {
                fit_phase_glm(&y, design)
            } else {
                fit_glm(&y, design)
            }
        })
        .collect::<Result<_>>()?;
    let pick = |f: fn(&GlmFit) -> f64| Array2::from_shape_fn((n_y, n_x), |(y, x)| f(&fits[y * n_x + x]));
    Ok(ActivationMap {
        beta0: pick(|f| f.beta0),
        beta1: pick(|f| f.beta1),
        sigma2: pick(|f| f.sigma2),
        t: pick(|f| f.t),
        p: pick(|f| f.p),
        significant: Array2::from_elem((n_y, n_x), false),
        df: design.df(),
    })
}

/// Magnitude GLM with BH significance over `mask`.
pub fn magnitude_activation(series: &ImageSeries, design: &DesignMatrix, mask: &Array2<bool>, q: f64) -> Result<ActivationMap> {
    let mut map = fit_glm_map(series.magnitude().view(), design, false)?;
    map.apply_fdr(mask, q)?;
    Ok(map)
}

/// Phase GLM with BH significance over `mask`.
pub fn phase_activation(series: &ImageSeries, design: &DesignMatrix, mask: &Array2<bool>, q: f64) -> Result<ActivationMap> {
    let mut map = fit_glm_map(series.phase().view(), design, true)?;
    map.apply_fdr(mask, q)?;
    Ok(map)
}

fn check_mask(dims: (usize, usize), mask: &Array2<bool>) -> Result<usize> {
    if mask.dim() != dims {
        return Err(mismatch(format!("mask {:?} vs image {dims:?}", mask.dim())));
    }
    let k = mask.iter().filter(|&&m| m).count();
    if k == 0 {
        return Err(invalid("mask is empty"));
    }
    Ok(k)
}

/// Mean squared difference over masked voxels.
pub fn mse(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, mask: &Array2<bool>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(mismatch("images differ in size"));
    }
    let k = check_mask(a.dim(), mask)?;
    let mut sum = 0.0;
    Zip::from(&a).and(&b).and(mask).for_each(|&u, &v, &m| {
        if m {
            sum += (u - v) * (u - v);
        }
    });
    Ok(sum / k as f64)
}

/// Angle difference mapped to (-pi, pi].
pub fn wrap_angle(d: f64) -> f64 {
    let r = d.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Mean squared wrapped angular difference over masked voxels.
pub fn phase_mse(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, mask: &Array2<bool>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(mismatch("images differ in size"));
    }
    let k = check_mask(a.dim(), mask)?;
    let mut sum = 0.0;
    Zip::from(&a).and(&b).and(mask).for_each(|&u, &v, &m| {
        if m {
            sum += wrap_angle(u - v).powi(2);
        }
    });
    Ok(sum / k as f64)
}

/// Magnitude MSE averaged over every frame and masked voxel.
pub fn series_magnitude_mse(recon: &ImageSeries, truth: &ImageSeries, mask: &Array2<bool>) -> Result<f64> {
    check_pair(recon, truth)?;
    let total: f64 = (0..recon.n_t())
        .map(|t| {
            let a = recon.frame(t).mapv(|v| v.norm());
            let b = truth.frame(t).mapv(|v| v.norm());
            mse(a.view(), b.view(), mask)
        })
        .sum::<Result<f64>>()?;
    Ok(total / recon.n_t() as f64)
}

/// Phase MSE averaged over every frame and masked voxel.
pub fn series_phase_mse(recon: &ImageSeries, truth: &ImageSeries, mask: &Array2<bool>) -> Result<f64> {
    check_pair(recon, truth)?;
    let total: f64 = (0..recon.n_t())
        .map(|t| {
            let a = recon.frame(t).mapv(|v| v.arg());
            let b = truth.frame(t).mapv(|v| v.arg());
            phase_mse(a.view(), b.view(), mask)
        })
        .sum::<Result<f64>>()?;
    Ok(total / recon.n_t() as f64)
}

fn check_pair(a: &ImageSeries, b: &ImageSeries) -> Result<()> {
    if a.data().dim() != b.data().dim() {
        return Err(mismatch(format!(
            "series {:?} vs {:?}",
            a.data().dim(),
            b.data().dim()
        )));
    }
    if a.n_t() == 0 {
        return Err(invalid("series is empty"));
    }
    Ok(())
}

/// `-sum (v/v_max) ln(v/v_max)` with `v_max = sqrt(sum v^2)`; 0 for an all-zero image.
pub fn entropy(magnitude: ArrayView2<'_, f64>) -> Result<f64> {
    if magnitude.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(invalid("entropy needs finite non-negative magnitudes"));
    }
    let vmax = magnitude.iter().map(|v| v * v).sum::<f64>().sqrt();
    if vmax == 0.0 {
        return Ok(0.0);
    }
    Ok(magnitude
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let r = v / vmax;
            -r * r.ln()
        })
        .sum())
}

/// Mean per-frame entropy of the magnitude images.
pub fn series_entropy(series: &ImageSeries) -> Result<f64> {
    if series.n_t() == 0 {
        return Err(invalid("series is empty"));
    }
    let total: f64 = (0..series.n_t())
        .map(|t| entropy(series.frame(t).mapv(|v| v.norm()).view()))
        .sum::<Result<f64>>()?;
    Ok(total / series.n_t() as f64)
}

/// Residual temporal variance, SNR map and ROI CNR of a magnitude series.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalStats {
    pub sigma2: Array2<f64>,
    pub snr: Array2<f64>,
    pub roi_cnr: f64,
}

pub fn temporal_stats(magnitude: ArrayView3<'_, f64>, design: &DesignMatrix, roi: &Array2<bool>) -> Result<TemporalStats> {
    let (_, n_y, n_x) = magnitude.dim();
    let k = check_mask((n_y, n_x), roi)?;
    let map = fit_glm_map(magnitude, design, false)?;
    let sigma = map.sigma2.mapv(f64::sqrt);
    let ratio = |b: f64, s: f64| if s == 0.0 { SNR_CAP.copysign(b) } else { (b / s).clamp(-SNR_CAP, SNR_CAP) };
    let snr = Zip::from(&map.beta0).and(&sigma).map_collect(|&b, &s| ratio(b, s));
    let mut cnr = 0.0;
    Zip::from(&map.beta1).and(&sigma).and(roi).for_each(|&b, &s, &r| {
        if r {
            cnr += ratio(b, s);
        }
    });
    Ok(TemporalStats {
        sigma2: map.sigma2,
        snr,
        roi_cnr: cnr / k as f64,
    })
}

/// Summary metrics of one reconstruction against the noiseless truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub mse_in: f64,
    pub mse_out: f64,
    pub entropy: f64,
    pub mean_snr_in: f64,
    pub roi_cnr: f64,
}

pub fn quality_report(
    recon: &ImageSeries,
    truth: &ImageSeries,
    brain: &Array2<bool>,
    roi: &Array2<bool>,
    design: &DesignMatrix,
) -> Result<QualityReport> {
    let outside = brain.mapv(|b| !b);
    let stats = temporal_stats(recon.magnitude().view(), design, roi)?;
    let k = check_mask(stats.snr.dim(), brain)?;
    let snr_in = Zip::from(&stats.snr)
        .and(brain)
        .fold(0.0, |acc, &s, &b| if b { acc + s } else { acc })
        / k as f64;
    Ok(QualityReport {
        mse_in: series_magnitude_mse(recon, truth, brain)?,
        mse_out: if outside.iter().any(|&o| o) {
            series_magnitude_mse(recon, truth, &outside)?
        } else {
            0.0
        },
        entropy: series_entropy(recon)?,
        mean_snr_in: snr_in,
        roi_cnr: stats.roi_cnr,
    })
}

/// Removes a slowly varying spatial phase drift from one `(time, row, col)`
/// series: each frame's phase relative to the voxel's temporal mean is fit
/// over the brain by a quadratic in `(y, x)` and the fit is subtracted.
pub fn phase_drift_correct(series: ArrayView3<'_, Complex64>, brain: &Array2<bool>) -> Result<ndarray::Array3<Complex64>> {
    let (n_t, n_y, n_x) = series.dim();
    if n_t < 2 {
        return Err(invalid("phase drift correction needs at least 2 frames"));
    }
    let k = check_mask((n_y, n_x), brain)?;
    if k < 6 {
        return Err(invalid(format!("need at least 6 brain voxels for the drift fit, got {k}")));
    }
    let (cy, cx) = ((n_y as f64 - 1.0) / 2.0, (n_x as f64 - 1.0) / 2.0);
    let basis = |y: usize, x: usize| {
        let u = (y as f64 - cy) / n_y as f64;
        let v = (x as f64 - cx) / n_x as f64;
        [1.0, u, v, u * u, u * v, v * v]
    };
    let mean_phase = series.map_axis(Axis(0), |ts| ts.iter().map(|v| v / v.norm().max(f64::MIN_POSITIVE)).sum::<Complex64>().arg());
    let voxels: Vec<(usize, usize)> = brain.indexed_iter().filter(|(_, &b)| b).map(|(i, _)| i).collect();
    let a = DMatrix::from_fn(k, 6, |r, c| basis(voxels[r].0, voxels[r].1)[c]);
    let svd = a.clone().svd(true, true);
    let mut out = series.to_owned();
    for (t, mut frame) in out.outer_iter_mut().enumerate() {
        let rhs = DVector::from_iterator(
            k,
            voxels
                .iter()
                .map(|&(y, x)| wrap_angle(series[[t, y, x]].arg() - mean_phase[[y, x]])),
        );
        let coef = svd
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::InvalidArgument(format!("drift fit failed: {e}")))?;
        for ((y, x), v) in frame.indexed_iter_mut() {
            let fit: f64 = basis(y, x).iter().zip(coef.iter()).map(|(b, c)| b * c).sum();
            *v = Complex64::from_polar(v.norm(), v.arg() - fit);
        }
    }
    Ok(out)
}

/// `stats.csv`: one row per voxel in row-major order.
pub fn stats_csv(map: &ActivationMap) -> String {
    let mut s = String::from("voxel_row,voxel_col,beta0,beta1,t,p,significant\n");
    for ((y, x), &b0) in map.beta0.indexed_iter() {
        let _ = writeln!(
            s,
            "{y},{x},{b0:.10e},{:.10e},{:.10e},{:.10e},{}",
            map.beta1[[y, x]],
            map.t[[y, x]],
            map.p[[y, x]],
            map.significant[[y, x]] as u8
        );
    }
    s
}

pub fn quality_csv(q: &QualityReport) -> String {
    format!(
        "mse_in,mse_out,entropy,mean_snr_in,roi_cnr\n{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}\n",
        q.mse_in, q.mse_out, q.entropy, q.mean_snr_in, q.roi_cnr
    )
}

/// One task indicator per line under a `task` header.
pub fn design_csv(x: &[u8]) -> String {
    let mut s = String::from("task\n");
    for v in x {
        let _ = writeln!(s, "{v}");
    }
    s
}

pub fn parse_design_csv(text: &str) -> Result<Vec<u8>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("task") {
        return Err(Error::Format {
            format: "design csv",
            reason: "missing 'task' header".into(),
        });
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| match l.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Error::Format {
                format: "design csv",
                reason: format!("bad indicator '{other}'"),
            }),
        })
        .collect()
}

pub fn read_design_csv(path: &Path) -> Result<Vec<u8>> {
    parse_design_csv(&fs::read_to_string(path)?)
}

/// 8-bit binary PGM, min-max scaled; the scale goes to `<path>.scale.txt`.
pub fn write_pgm(path: &Path, image: ArrayView2<'_, f64>) -> Result<()> {
    let (n_y, n_x) = image.dim();
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PGM export".into()));
    }
    let lo = image.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = image.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut bytes = format!("P5\n{n_x} {n_y}\n255\n").into_bytes();
    bytes.extend(image.iter().map(|&v| ((v - lo) / span * 255.0).round() as u8));
    fs::write(path, bytes)?;
    let mut side = path.as_os_str().to_owned();
    side.push(".scale.txt");
    fs::write(side, format!("min {lo:.10e}\nmax {hi:.10e}\n"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn design(n: usize) -> DesignMatrix {
        DesignMatrix::new(&(0..n).map(|i| ((i / 3) % 2) as u8).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn design_matrix_rules() {
        assert!(DesignMatrix::new(&[0, 0, 0]).is_err());
        assert!(DesignMatrix::new(&[0, 2, 1]).is_err());
        let d = DesignMatrix::new(&[0, 1, 1, 0]).unwrap();
        assert_eq!(d.matrix()[(2, 0)], 1.0);
        assert_eq!(d.matrix()[(2, 1)], 1.0);
        assert_eq!(d.df(), 2);
    }

    #[test]
    fn constant_series_has_null_test() {
        let d = design(12);
        let f = fit_glm(&[4.0; 12], &d).unwrap();
        assert_eq!((f.beta1, f.t, f.p), (0.0, 0.0, 1.0));
        assert_eq!(f.beta0, 4.0);
    }

    #[test]
    fn exact_line_recovers_coefficients() {
        let d = design(12);
        let y: Vec<f64> = d.indicator().iter().map(|x| 2.0 + 3.0 * x).collect();
        let f = fit_glm(&y, &d).unwrap();
        assert!((f.beta0 - 2.0).abs() < 1e-14 && (f.beta1 - 3.0).abs() < 1e-14);
    }

    #[test]
    fn glm_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = design(20);
        for _ in 0..50 {
            let y: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
            let f = fit_glm(&y, &d).unwrap();
            let x = d.matrix();
            let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
            let yv = DVector::from_vec(y.clone());
            let b = &xtx_inv * x.transpose() * &yv;
            let r = &yv - &x * &b;
            let s2 = r.norm_squared() / 18.0;
            let se = (s2 * xtx_inv[(1, 1)]).sqrt();
            assert!((f.beta0 - b[0]).abs() < 1e-10);
            assert!((f.beta1 - b[1]).abs() < 1e-10);
            assert!((f.se_beta1 - se).abs() < 1e-10);
            assert!((f.t - b[1] / se).abs() < 1e-9);
            let tail = StudentsT::new(0.0, 1.0, 18.0).unwrap();
            assert!((f.p - (1.0 - tail.cdf(b[1] / se))).abs() < 1e-10);
        }
    }

    #[test]
    fn phase_glm_cases() {
        let d = design(30);
        let f = fit_phase_glm(&[0.3; 30], &d).unwrap();
        assert_eq!(f.beta1, 0.0);
        let step = PI / 120.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi: Vec<f64> = d.indicator().iter().map(|x| x * step).collect();
        let f = fit_phase_glm(&phi, &d).unwrap();
        assert!((f.beta1 - step).abs() < 1e-14);
        // a series straddling +-pi fits like the same series rotated away from the cut
        let noisy: Vec<f64> = d
            .indicator()
            .iter()
            .map(|x| PI - 0.05 + x * step + rng.random_range(-0.01..0.01))
            .map(wrap_angle)
            .collect();
        let shifted: Vec<f64> = noisy.iter().map(|v| wrap_angle(v + PI / 2.0)).collect();
        let a = fit_phase_glm(&noisy, &d).unwrap();
        let b = fit_phase_glm(&shifted, &d).unwrap();
        assert!((a.beta1 - b.beta1).abs() < 1e-12);
        assert!((a.t - b.t).abs() < 1e-8);
    }

    #[test]
    fn unwrap_removes_jumps() {
        let mut v = vec![3.0, -3.0, 3.1, -3.1];
        unwrap_phase(&mut v);
        for w in v.windows(2) {
            assert!((w[1] - w[0]).abs() <= PI);
        }
        assert!((v[1] - (2.0 * PI - 3.0)).abs() < 1e-15);
    }

    #[test]
    fn fdr_cases() {
        assert_eq!(fdr_threshold(&[1.0; 5], 0.05).unwrap(), vec![false; 5]);
        assert_eq!(fdr_threshold(&[0.0; 5], 0.05).unwrap(), vec![true; 5]);
        assert_eq!(
            fdr_threshold(&[0.001, 0.01, 0.02, 0.9], 0.05).unwrap(),
            vec![true, true, true, false]
        );
        // step-up: the largest passing rank pulls in smaller failures
        assert_eq!(
            fdr_threshold(&[0.011, 0.03, 0.036, 0.9], 0.05).unwrap(),
            vec![true, true, true, false]
        );
        assert!(fdr_threshold(&[1.2], 0.05).is_err());
        assert!(fdr_threshold(&[], 0.05).unwrap().is_empty());
    }

    #[test]
    fn mse_cases() {
        let a = array![[1.0, 2.0], [0.0, 0.0]];
        let b = array![[0.0, 5.0], [9.0, 9.0]];
        let m = array![[true, true], [false, false]];
        assert_eq!(mse(a.view(), a.view(), &m).unwrap(), 0.0);
        assert_eq!(mse(a.view(), b.view(), &m).unwrap(), 5.0);
        assert!(mse(a.view(), b.view(), &Array2::from_elem((2, 2), false)).is_err());
        let p = array![[PI - 0.1]];
        let q = array![[-PI + 0.1]];
        let one = array![[true]];
        assert!((phase_mse(p.view(), q.view(), &one).unwrap() - 0.04).abs() < 1e-12);
        assert_eq!(wrap_angle(-PI), PI);
    }

    #[test]
    fn entropy_cases() {
        let single = array![[0.0, 3.0], [0.0, 0.0]];
        assert_eq!(entropy(single.view()).unwrap(), 0.0);
        let two = array![[2.5, 2.5]];
        assert!((entropy(two.view()).unwrap() - 2f64.ln() / 2f64.sqrt()).abs() < 1e-12);
        assert!(entropy(array![[-1.0]].view()).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Array2::from_shape_fn((16, 16), |_| rng.random_range(0.0..1.0));
        let mut vmax = 0.0;
        for v in img.iter() {
            vmax += v * v;
        }
        vmax = f64::sqrt(vmax);
        let mut e = 0.0;
        for v in img.iter() {
            e -= v / vmax * (v / vmax).ln();
        }
        assert!((entropy(img.view()).unwrap() - e).abs() < 1e-12);
    }

    #[test]
    fn snr_of_noisy_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let d = design(1000);
        let series = Array3::from_shape_fn((1000, 1, 1), |_| 5.0 + noise.sample(&mut rng));
        let roi = array![[true]];
        let s = temporal_stats(series.view(), &d, &roi).unwrap();
        assert!((s.snr[[0, 0]] / 50.0 - 1.0).abs() < 0.1);
        let flat = Array3::from_elem((10, 1, 1), 2.0);
        let s = temporal_stats(flat.view(), &design(10), &roi).unwrap();
        assert_eq!(s.sigma2[[0, 0]], 0.0);
        assert_eq!(s.snr[[0, 0]], SNR_CAP);
    }

    #[test]
    fn drift_correction() {
        let (n_t, n) = (6, 12);
        let brain = Array2::from_elem((n, n), true);
        let base = Array2::from_shape_fn((n, n), |(y, x)| Complex64::from_polar(1.0 + 0.1 * y as f64, 0.05 * x as f64));
        let series = Array3::from_shape_fn((n_t, n, n), |(_, y, x)| base[[y, x]]);
        let out = phase_drift_correct(series.view(), &brain).unwrap();
        assert!(out.iter().zip(series.iter()).all(|(a, b)| (a - b).norm() < 1e-8));
        // planar ramp growing in time
        let drifted = Array3::from_shape_fn((n_t, n, n), |(t, y, x)| {
            let ramp = 0.02 * t as f64 * (y as f64 - 5.5) / n as f64 + 0.01 * t as f64;
            base[[y, x]] * Complex64::from_polar(1.0, ramp)
        });
        let out = phase_drift_correct(drifted.view(), &brain).unwrap();
        // the remaining phase is the base phase plus a time-constant offset
        let mut sq = 0.0;
        let mut count = 0.0;
        for t in 1..n_t {
            for y in 0..n {
                for x in 0..n {
                    let a = (out[[t, y, x]] * out[[0, y, x]].conj()).arg();
                    sq += a * a;
                    count += 1.0;
                }
            }
        }
        assert!((sq / count).sqrt() < 1e-3);
        for (a, b) in out.iter().zip(drifted.iter()) {
            assert!((a.norm() - b.norm()).abs() <= 1e-14 * b.norm());
        }
        assert!(phase_drift_correct(series.slice(ndarray::s![..1, .., ..]), &brain).is_err());
    }

    #[test]
    fn csv_round_trip_and_format() {
        let x = vec![0, 1, 1, 0];
        assert_eq!(parse_design_csv(&design_csv(&x)).unwrap(), x);
        assert!(parse_design_csv("nope\n1\n").is_err());
        let d = DesignMatrix::new(&x).unwrap();
        let series = Array3::from_shape_fn((4, 2, 3), |(t, y, x)| (t * y + x) as f64);
        let map = fit_glm_map(series.view(), &d, false).unwrap();
        assert_eq!(stats_csv(&map).lines().count(), 1 + 6);
    }
}
