//! Synthetic block-design fMRI experiments: a labeled phantom, smooth complex
//! coil sensitivities, stabilization scaling of the first frames, Gaussian
//! k-space noise and a magnitude/phase task response.
//!
//! Acquisition uses the unnormalized forward DFT (`sqrt(N) * ft2`), so noise
//! of variance `0.0036 * n_y * n_x` per part yields a per-coil image noise
//! standard deviation of 0.06 relative to the phantom's unit intensity scale.

use std::f64::consts::PI;
use std::str::FromStr;

use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis, Zip};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, mismatch, Error, Result};
use crate::grappa::frames_to_images;
use crate::rng::stream_rng;
use crate::tensor::{subsample, CenteredFft2, CoilKSpaceSeries, ComplexImage, ImageSeries, SamplingMask};

pub const WHITE: u8 = 1;
pub const GREY: u8 = 2;
pub const CSF: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhantomStyle {
    /// Elliptical head: grey shell around white matter with a central CSF pool.
    #[default]
    Brain,
    /// Centered disk split into concentric rings.
    Disk,
}

impl FromStr for PhantomStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brain" => Ok(Self::Brain),
            "disk" => Ok(Self::Disk),
            _ => Err(invalid(format!("unknown phantom style '{s}' (expected brain or disk)"))),
        }
    }
}

/// Noiseless object with tissue labels (0 background, 1 white, 2 grey, 3 CSF).
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: ComplexImage,
    pub tissue_labels: Array2<u8>,
    pub brain_mask: Array2<bool>,
}

fn intensity(label: u8) -> f64 {
    match label {
        WHITE => 0.8,
        GREY => 1.0,
        CSF => 1.2,
        _ => 0.0,
    }
}

/// Deterministic piecewise-constant phantom with a gentle linear phase ramp.
pub fn make_phantom(n_y: usize, n_x: usize, style: PhantomStyle) -> Result<Phantom> {
    if n_y < 16 || n_x < 16 {
        return Err(invalid(format!("phantom needs at least 16x16, got {n_y}x{n_x}")));
    }
    let (cy, cx) = ((n_y as f64 - 1.0) / 2.0, (n_x as f64 - 1.0) / 2.0);
    let (hy, hx) = (n_y as f64 / 2.0, n_x as f64 / 2.0);
    let labels = Array2::from_shape_fn((n_y, n_x), |(y, x)| {
        let u = (y as f64 - cy) / hy;
        let v = (x as f64 - cx) / hx;
        let inside = |a: f64, b: f64| (u / a).powi(2) + (v / b).powi(2) <= 1.0;
        match style {
            PhantomStyle::Brain => {
                if !inside(0.85, 0.70) {
                    0
                } else if inside(0.22, 0.14) {
                    CSF
                } else if inside(0.70, 0.56) {
                    WHITE
                } else {
                    GREY
                }
            }
            PhantomStyle::Disk => {
                let r = (u * u + v * v).sqrt();
                if r > 0.8 {
                    0
                } else if r <= 0.3 {
                    CSF
                } else if r <= 0.6 {
                    WHITE
                } else {
                    GREY
                }
            }
        }
    });
    let data = Array2::from_shape_fn((n_y, n_x), |(y, x)| {
        let phase = 0.2 * (y as f64 - cy) / hy + 0.1 * (x as f64 - cx) / hx;
        Complex64::from_polar(intensity(labels[[y, x]]), phase)
    });
    Ok(Phantom {
        image: ComplexImage::new(data)?,
        brain_mask: labels.mapv(|l| l != 0),
        tissue_labels: labels,
    })
}

/// The `n` grey-matter voxels nearest a point on the upper-left cortex
/// (ties broken by row, then column).
pub fn cortex_roi(phantom: &Phantom, n: usize) -> Result<Array2<bool>> {
    let (n_y, n_x) = phantom.tissue_labels.dim();
    let (cy, cx) = ((n_y as f64 - 1.0) / 2.0, (n_x as f64 - 1.0) / 2.0);
    let (py, px) = (cy - 0.55 * n_y as f64 / 2.0, cx - 0.45 * n_x as f64 / 2.0);
    let mut grey: Vec<(f64, usize, usize)> = phantom
        .tissue_labels
        .indexed_iter()
        .filter(|(_, &l)| l == GREY)
        .map(|((y, x), _)| ((y as f64 - py).powi(2) + (x as f64 - px).powi(2), y, x))
        .collect();
    if grey.len() < n {
        return Err(invalid(format!("only {} grey voxels for a {n}-voxel ROI", grey.len())));
    }
    grey.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut roi = Array2::from_elem((n_y, n_x), false);
    for &(_, y, x) in &grey[..n] {
        roi[[y, x]] = true;
    }
    Ok(roi)
}

/// Complex coil sensitivities, `(coil, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMaps {
    pub maps: Array3<Complex64>,
}

impl SensitivityMaps {
    pub fn n_coils(&self) -> usize {
        self.maps.shape()[0]
    }

    /// Rescales every voxel so the coil mean equals `1/sqrt(n_C)`; the
    /// coil-averaged image is then the object over `sqrt(n_C)`, and its
    /// noise level matches the per-coil noise over `sqrt(n_C)`.
    pub fn normalized(&self) -> Result<Self> {
        let n_c = self.n_coils() as f64;
        let mean = self.maps.mean_axis(Axis(0)).expect("at least one coil");
        if mean.iter().any(|m| m.norm() < 1e-12) {
            return Err(invalid("coil mean vanishes; cannot normalize sensitivities"));
        }
        let mut maps = self.maps.clone();
        for mut coil in maps.outer_iter_mut() {
            Zip::from(&mut coil).and(&mean).for_each(|v, m| *v /= m * n_c.sqrt());
        }
        Ok(Self { maps })
    }
}

/// Gaussian-profile coils centered at `n_c` points spaced evenly around the
/// field-of-view border, peak modulus 1, each with a small smooth phase.
pub fn make_sensitivities(n_c: usize, n_y: usize, n_x: usize) -> Result<SensitivityMaps> {
    if n_c == 0 || n_y == 0 || n_x == 0 {
        return Err(invalid("coil count and dimensions must be positive"));
    }
    let (cy, cx) = ((n_y as f64 - 1.0) / 2.0, (n_x as f64 - 1.0) / 2.0);
    let width = 0.45 * n_y.min(n_x) as f64;
    let maps = Array3::from_shape_fn((n_c, n_y, n_x), |(c, y, x)| {
        let angle = 2.0 * PI * c as f64 / n_c as f64;
        let (py, px) = (cy - cy * angle.cos(), cx + cx * angle.sin());
        let d2 = (y as f64 - py).powi(2) + (x as f64 - px).powi(2);
        let ramp = ((y as f64 - cy) * angle.cos() - (x as f64 - cx) * angle.sin()) / n_y.max(n_x) as f64;
        let phase = 0.25 * angle.sin() + 0.3 * ramp;
        Complex64::from_polar((-d2 / (2.0 * width * width)).exp(), phase)
    });
    Ok(SensitivityMaps { maps })
}

/// Elementwise product of the image with each coil map.
pub fn coil_weight(image: ArrayView2<'_, Complex64>, maps: &SensitivityMaps) -> Result<Array3<Complex64>> {
    let (_, n_y, n_x) = maps.maps.dim();
    if image.dim() != (n_y, n_x) {
        return Err(mismatch(format!(
            "image {:?} vs maps {n_y}x{n_x}",
            image.dim()
        )));
    }
    let mut out = maps.maps.clone();
    for mut coil in out.outer_iter_mut() {
        Zip::from(&mut coil).and(&image).for_each(|v, i| *v *= i);
    }
    Ok(out)
}

/// Per-frame, per-tissue multipliers for the first frames of a run
/// (`factors[frame][tissue - 1]`, tissue order white, grey, CSF).
#[derive(Debug, Clone, PartialEq)]
pub struct TissueFactors(pub Vec<[f64; 3]>);

impl Default for TissueFactors {
    /// 1.40, 1.55, 1.75 on the first frame, decreasing linearly to 1 by the fourth.
    fn default() -> Self {
        let first = [1.40, 1.55, 1.75];
        Self(
            (0..3)
                .map(|f| first.map(|v| 1.0 + (v - 1.0) * (1.0 - f as f64 / 3.0)))
                .collect(),
        )
    }
}

impl TissueFactors {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().flatten().any(|&v| !(v >= 1.0) || !v.is_finite()) {
            return Err(invalid("tissue factors must be finite and at least 1"));
        }
        for pair in self.0.windows(2) {
            if (0..3).any(|k| pair[1][k] > pair[0][k]) {
                return Err(invalid("tissue factors must not increase across frames"));
            }
        }
        Ok(())
    }
}

/// Multiplies frame `f < factors.len()` of an image series `(time, row, col)`
/// voxelwise by its tissue factor; background and later frames are untouched.
pub fn scale_initial_frames(
    series: &mut Array3<Complex64>,
    tissue_labels: &Array2<u8>,
    factors: &TissueFactors,
) -> Result<()> {
    factors.validate()?;
    let (n_t, n_y, n_x) = series.dim();
    if tissue_labels.dim() != (n_y, n_x) {
        return Err(mismatch("tissue labels and series differ in size"));
    }
    for (f, row) in factors.0.iter().enumerate().take(n_t) {
        let mut frame = series.index_axis_mut(Axis(0), f);
        Zip::from(&mut frame).and(tissue_labels).for_each(|v, &l| {
            if (WHITE..=CSF).contains(&l) {
                *v *= row[(l - 1) as usize];
            }
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Per-part variance is `variance_scale * n_y * n_x`.
    pub variance_scale: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            variance_scale: 0.0036,
            seed: 1,
        }
    }
}

fn add_frame_noise(frame: &mut ndarray::ArrayViewMut3<'_, Complex64>, sigma: f64, seed: u64, series: u64, t: u64) {
    if sigma == 0.0 {
        return;
    }
    let mut rng = stream_rng(seed, series, t);
    for v in frame.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *v += Complex64::new(sigma * re, sigma * im);
    }
}

/// Adds independent `N(0, variance_scale * n_y * n_x)` noise to the real and
/// imaginary part of every element; frame `t` draws from its own stream.
pub fn add_kspace_noise(series: &CoilKSpaceSeries, spec: &NoiseSpec) -> Result<CoilKSpaceSeries> {
    if !(spec.variance_scale >= 0.0) {
        return Err(invalid("noise variance scale must be non-negative"));
    }
    let sigma = (spec.variance_scale * (series.n_y() * series.n_x()) as f64).sqrt();
    let mut data = series.data().clone();
    data.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(t, mut frame)| add_frame_noise(&mut frame, sigma, spec.seed, 0, t as u64));
    CoilKSpaceSeries::new(data)
}

/// Adds `beta1` to the magnitude and `theta1` to the phase inside the ROI.
pub fn inject_task(image: &ComplexImage, roi: &Array2<bool>, beta1: f64, theta1: f64) -> Result<ComplexImage> {
    if roi.dim() != image.dims() {
        return Err(mismatch("ROI and image differ in size"));
    }
    let mut data = image.data().clone();
    for ((v, &inside), idx) in data.iter_mut().zip(roi.iter()).zip(0..) {
        if !inside {
            continue;
        }
        let mag = v.norm();
        if mag == 0.0 && theta1 != 0.0 {
            return Err(invalid(format!(
                "ROI voxel {} has zero magnitude, phase shift undefined",
                idx
            )));
        }
        *v = Complex64::from_polar(mag + beta1, v.arg() + theta1);
    }
    ComplexImage::new(data)
}

/// Rest head, alternating off/on epochs, rest tail; leading frames discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExperimentDesign {
    pub n_rest_head: usize,
    pub epoch_count: usize,
    pub off_len: usize,
    pub on_len: usize,
    pub n_rest_tail: usize,
    pub discard: usize,
}

impl Default for ExperimentDesign {
    fn default() -> Self {
        Self {
            n_rest_head: 20,
            epoch_count: 16,
            off_len: 15,
            on_len: 15,
            n_rest_tail: 10,
            discard: 20,
        }
    }
}

impl ExperimentDesign {
    /// Total frames acquired.
    pub fn n_tr(&self) -> usize {
        self.n_rest_head + self.epoch_count * (self.off_len + self.on_len) + self.n_rest_tail
    }

    /// Frames kept after the discard.
    pub fn n_images(&self) -> usize {
        self.n_tr() - self.discard
    }

    /// Task indicator for every acquired frame.
    pub fn schedule(&self) -> Vec<u8> {
        let mut x = vec![0u8; self.n_rest_head];
        for _ in 0..self.epoch_count {
            x.extend(std::iter::repeat_n(0, self.off_len));
            x.extend(std::iter::repeat_n(1, self.on_len));
        }
        x.extend(std::iter::repeat_n(0, self.n_rest_tail));
        x
    }

    /// Task indicator for the kept frames.
    pub fn design_vector(&self) -> Vec<u8> {
        self.schedule()[self.discard..].to_vec()
    }

    pub fn validate(&self) -> Result<()> {
        if self.discard >= self.n_tr() {
            return Err(invalid("discard removes every frame"));
        }
        let x = self.design_vector();
        if !x.contains(&0) || !x.contains(&1) {
            return Err(invalid("design needs both task and rest frames after the discard"));
        }
        Ok(())
    }
}

/// Parameters of one simulated run besides the phantom and coils.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentParams {
    pub accel: usize,
    pub phase_offset: usize,
    pub beta1: f64,
    pub theta1: f64,
    pub n_cal: usize,
    pub factors: TissueFactors,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            accel: 3,
            phase_offset: 0,
            beta1: 0.045,
            theta1: PI / 120.0,
            n_cal: 30,
            factors: TissueFactors::default(),
        }
    }
}

/// Everything a simulated run produces.
#[derive(Debug, Clone)]
pub struct Experiment {
    /// Noisy fully sampled k-space of the kept frames.
    pub full: CoilKSpaceSeries,
    pub mask: SamplingMask,
    /// Last `n_cal` frames of a separate task-free run.
    pub calib: CoilKSpaceSeries,
    /// Task indicator per kept frame.
    pub design: Vec<u8>,
    /// Noiseless reconstruction of a rest frame and a task frame.
    pub truth_rest: ComplexImage,
    pub truth_task: ComplexImage,
    pub brain_mask: Array2<bool>,
    pub roi: Array2<bool>,
    pub tissue_labels: Array2<u8>,
}

impl Experiment {
    /// Zero-filled subsampled series.
    pub fn subsampled(&self) -> Result<CoilKSpaceSeries> {
        subsample(&self.full, &self.mask)
    }

    /// Noiseless reconstruction for each kept frame.
    pub fn truth_series(&self) -> Result<ImageSeries> {
        let (n_y, n_x) = self.truth_rest.dims();
        let mut data = Array3::zeros((self.design.len(), n_y, n_x));
        for (t, &x) in self.design.iter().enumerate() {
            let img = if x == 1 { &self.truth_task } else { &self.truth_rest };
            data.index_axis_mut(Axis(0), t).assign(img.data());
        }
        ImageSeries::new(data)
    }
}

/// `sqrt(N) * ft2` of every coil image.
pub fn acquire(coil_images: &Array3<Complex64>, fft: &CenteredFft2) -> Array3<Complex64> {
    let (_, n_y, n_x) = coil_images.dim();
    let scale = ((n_y * n_x) as f64).sqrt();
    let mut out = coil_images.clone();
    for mut coil in out.outer_iter_mut() {
        let mut img = coil.to_owned();
        fft.forward(&mut img);
        img.mapv_inplace(|v| v * scale);
        coil.assign(&img);
    }
    out
}

/// Runs the acquisition protocol.
///
/// The task run follows `design`; frames before `factors.len()` are scaled
/// by tissue, every frame is coil-weighted, transformed and given its own
/// noise draw, and the first `design.discard` frames are dropped. The
/// calibration run is task-free; its frames are indexed from the end so
/// shorter calibration sets are suffixes of longer ones.
pub fn simulate_experiment(
    phantom: &Phantom,
    roi: &Array2<bool>,
    maps: &SensitivityMaps,
    design: &ExperimentDesign,
    noise: &NoiseSpec,
    params: &ExperimentParams,
) -> Result<Experiment> {
    design.validate()?;
    params.factors.validate()?;
    if params.n_cal == 0 {
        return Err(invalid("n_cal must be at least 1"));
    }
    let (n_y, n_x) = phantom.image.dims();
    let (n_c, my, mx) = maps.maps.dim();
    if (my, mx) != (n_y, n_x) {
        return Err(mismatch("sensitivity maps and phantom differ in size"));
    }
    if roi.iter().zip(phantom.brain_mask.iter()).any(|(&r, &b)| r && !b) {
        return Err(invalid("ROI extends outside the brain mask"));
    }
    let mask = SamplingMask::new(n_y, n_x, params.accel, params.phase_offset)?;
    let fft = CenteredFft2::new(n_y, n_x);
    let rest_img = phantom.image.clone();
    let task_img = inject_task(&rest_img, roi, params.beta1, params.theta1)?;
    let rest_k = acquire(&coil_weight(rest_img.view(), maps)?, &fft);
    let task_k = acquire(&coil_weight(task_img.view(), maps)?, &fft);

    let schedule = design.schedule();
    let n_scaled = params.factors.0.len().min(schedule.len());
    let mut scaled = Array3::zeros((n_scaled, n_y, n_x));
    for (f, &x) in schedule.iter().enumerate().take(n_scaled) {
        let img = if x == 1 { &task_img } else { &rest_img };
        scaled.index_axis_mut(Axis(0), f).assign(img.data());
    }
    scale_initial_frames(&mut scaled, &phantom.tissue_labels, &params.factors)?;
    let scaled_k: Vec<Array3<Complex64>> = scaled
        .outer_iter()
        .map(|img| coil_weight(img, maps).map(|c| acquire(&c, &fft)))
        .collect::<Result<_>>()?;

    let sigma = (noise.variance_scale * (n_y * n_x) as f64).sqrt();
    if !(sigma >= 0.0) {
        return Err(invalid("noise variance scale must be non-negative"));
    }
    let n_keep = design.n_images();
    let mut full = Array4::zeros((n_keep, n_c, n_y, n_x));
    full.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut frame)| {
            let f = i + design.discard;
            let clean = if f < n_scaled {
                &scaled_k[f]
            } else if schedule[f] == 1 {
                &task_k
            } else {
                &rest_k
            };
            frame.assign(clean);
            add_frame_noise(&mut frame, sigma, noise.seed, 0, f as u64);
        });
    let mut calib = Array4::zeros((params.n_cal, n_c, n_y, n_x));
    calib
        .outer_iter_mut()
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut frame)| {
            frame.assign(&rest_k);
            let from_end = (params.n_cal - 1 - i) as u64;
            add_frame_noise(&mut frame, sigma, noise.seed, 1, from_end);
        });

    let truth = |k: &Array3<Complex64>| -> Result<ComplexImage> {
        let mut avg = crate::tensor::coil_average(k.view());
        fft.inverse(&mut avg);
        ComplexImage::new(avg)
    };
    Ok(Experiment {
        full: CoilKSpaceSeries::new(full)?,
        mask,
        calib: CoilKSpaceSeries::new(calib)?,
        design: design.design_vector(),
        truth_rest: truth(&rest_k)?,
        truth_task: truth(&task_k)?,
        brain_mask: phantom.brain_mask.clone(),
        roi: roi.clone(),
        tissue_labels: phantom.tissue_labels.clone(),
    })
}

/// Simulation settings with the defaults of the standard experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub n_y: usize,
    pub n_x: usize,
    pub n_coils: usize,
    pub style: PhantomStyle,
    pub roi_voxels: usize,
    pub design: ExperimentDesign,
    pub noise: NoiseSpec,
    pub params: ExperimentParams,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_y: 96,
            n_x: 96,
            n_coils: 8,
            style: PhantomStyle::Brain,
            roi_voxels: 28,
            design: ExperimentDesign::default(),
            noise: NoiseSpec::default(),
            params: ExperimentParams::default(),
        }
    }
}

/// Builds phantom, ROI and normalized coils from `cfg` and simulates the run.
pub fn run_simulation(cfg: &SimulationConfig) -> Result<Experiment> {
    let phantom = make_phantom(cfg.n_y, cfg.n_x, cfg.style)?;
    let roi = cortex_roi(&phantom, cfg.roi_voxels)?;
    let maps = make_sensitivities(cfg.n_coils, cfg.n_y, cfg.n_x)?.normalized()?;
    simulate_experiment(&phantom, &roi, &maps, &cfg.design, &cfg.noise, &cfg.params)
}

/// Coil-average and inverse transform of every frame of a fully sampled series.
pub fn reference_reconstruct(full: &CoilKSpaceSeries) -> Result<ImageSeries> {
    frames_to_images(full.n_t(), full.n_y(), full.n_x(), |t| Ok(full.frame(t).to_owned()))
}

/// One frame's `(coil, row, col)` images back from k-space, undoing the
/// acquisition scale.
pub fn coil_images(frame: ArrayView3<'_, Complex64>) -> Array3<Complex64> {
    let (_, n_y, n_x) = frame.dim();
    let fft = CenteredFft2::new(n_y, n_x);
    let scale = 1.0 / ((n_y * n_x) as f64).sqrt();
    let mut out = frame.to_owned();
    for c in 0..out.shape()[0] {
        let mut img = out.slice(s![c, .., ..]).to_owned();
        fft.inverse(&mut img);
        img.mapv_inplace(|v| v * scale);
        out.slice_mut(s![c, .., ..]).assign(&img);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_labels_partition_mask() {
        let p = make_phantom(32, 32, PhantomStyle::Disk).unwrap();
        let area = p.brain_mask.iter().filter(|&&b| b).count();
        let labelled: usize = (1..=3u8)
            .map(|l| p.tissue_labels.iter().filter(|&&v| v == l).count())
            .sum();
        assert_eq!(area, labelled);
        assert!(p.brain_mask[[16, 16]] && !p.brain_mask[[0, 0]]);
        assert_eq!(p, make_phantom(32, 32, PhantomStyle::Disk).unwrap());
        assert!(make_phantom(15, 32, PhantomStyle::Disk).is_err());
    }

    #[test]
    fn brain_phantom_has_all_tissues_and_phase() {
        let p = make_phantom(96, 96, PhantomStyle::Brain).unwrap();
        for l in 0..=3u8 {
            assert!(p.tissue_labels.iter().any(|&v| v == l), "label {l}");
        }
        assert!(p.image.phase().iter().zip(p.brain_mask.iter()).any(|(&ph, &b)| b && ph.abs() > 0.01));
        let roi = cortex_roi(&p, 28).unwrap();
        assert_eq!(roi.iter().filter(|&&v| v).count(), 28);
        assert!(roi.indexed_iter().all(|(i, &v)| !v || p.tissue_labels[i] == GREY));
    }

    #[test]
    fn single_coil_peaks_on_border() {
        let m = make_sensitivities(1, 32, 32).unwrap();
        let mag = m.maps.index_axis(Axis(0), 0).mapv(|v| v.norm());
        let ((y, _), _) = mag
            .indexed_iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert_eq!(y, 0);
    }

    #[test]
    fn eight_coils_cover_the_brain_with_distinct_peaks() {
        let m = make_sensitivities(8, 96, 96).unwrap();
        let p = make_phantom(96, 96, PhantomStyle::Brain).unwrap();
        let sos = m.maps.map(|v| v.norm_sqr()).sum_axis(Axis(0));
        assert!(p.brain_mask.indexed_iter().all(|(i, &b)| !b || sos[i] > 0.0));
        let mut peaks: Vec<(usize, usize)> = m
            .maps
            .outer_iter()
            .map(|c| {
                c.indexed_iter()
                    .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                    .unwrap()
                    .0
            })
            .collect();
        peaks.sort();
        peaks.dedup();
        assert_eq!(peaks.len(), 8);
        let n = m.normalized().unwrap();
        let mean = n.maps.mean_axis(Axis(0)).unwrap();
        assert!(mean.iter().all(|v| (v - Complex64::new(1.0 / 8f64.sqrt(), 0.0)).norm() < 1e-12));
    }

    #[test]
    fn coil_weight_cases() {
        let img = Array2::from_shape_fn((4, 4), |(y, x)| Complex64::new(y as f64, x as f64));
        let ones = SensitivityMaps {
            maps: Array3::from_elem((3, 4, 4), Complex64::new(1.0, 0.0)),
        };
        let w = coil_weight(img.view(), &ones).unwrap();
        assert!(w.outer_iter().all(|c| c == img));
        let maps = make_sensitivities(2, 4, 4).unwrap();
        let w = coil_weight(img.view(), &maps).unwrap();
        for c in 0..2 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(w[[c, y, x]], img[[y, x]] * maps.maps[[c, y, x]]);
                }
            }
        }
        let zero = coil_weight(Array2::zeros((4, 4)).view(), &maps).unwrap();
        assert!(zero.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn initial_frame_scaling() {
        let labels = ndarray::array![[0u8, 1], [2, 3]];
        let mut series = Array3::from_elem((4, 2, 2), Complex64::new(2.0, -1.0));
        let f = TissueFactors::default();
        assert!((f.0[0][0] - 1.40).abs() < 1e-15);
        scale_initial_frames(&mut series, &labels, &f).unwrap();
        let base = Complex64::new(2.0, -1.0);
        assert_eq!(series[[0, 0, 0]], base);
        assert_eq!(series[[0, 0, 1]], base * 1.40);
        assert_eq!(series[[0, 1, 0]], base * 1.55);
        assert_eq!(series[[0, 1, 1]], base * 1.75);
        assert_eq!(series[[1, 0, 1]], base * f.0[1][0]);
        assert_eq!(series[[3, 1, 1]], base);
        let ones = TissueFactors(vec![[1.0; 3]; 3]);
        let mut s2 = Array3::from_elem((3, 2, 2), base);
        scale_initial_frames(&mut s2, &labels, &ones).unwrap();
        assert!(s2.iter().all(|&v| v == base));
        assert!(TissueFactors(vec![[1.0; 3], [1.2, 1.0, 1.0]]).validate().is_err());
        assert!(TissueFactors(vec![[0.9, 1.0, 1.0]]).validate().is_err());
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let series = CoilKSpaceSeries::new(Array4::zeros((10, 1, 100, 100))).unwrap();
        let spec = NoiseSpec {
            variance_scale: 0.0036,
            seed: 9,
        };
        let a = add_kspace_noise(&series, &spec).unwrap();
        let expected = 0.0036 * 1e4;
        let n = a.data().len() as f64;
        let var_re = a.data().iter().map(|v| v.re * v.re).sum::<f64>() / n;
        let var_im = a.data().iter().map(|v| v.im * v.im).sum::<f64>() / n;
        assert!((var_re / expected - 1.0).abs() < 0.02);
        assert!((var_im / expected - 1.0).abs() < 0.02);
        assert_eq!(a, add_kspace_noise(&series, &spec).unwrap());
        let zero = NoiseSpec {
            variance_scale: 0.0,
            seed: 9,
        };
        assert_eq!(add_kspace_noise(&series, &zero).unwrap(), series);
    }

    #[test]
    fn task_injection() {
        let img = ComplexImage::new(ndarray::array![
            [Complex64::new(1.0, 0.0), Complex64::new(0.0, 2.0)],
            [Complex64::new(0.0, 0.0), Complex64::new(-1.0, 0.0)]
        ])
        .unwrap();
        let roi = ndarray::array![[true, false], [false, false]];
        assert_eq!(inject_task(&img, &roi, 0.0, 0.0).unwrap(), img);
        let out = inject_task(&img, &roi, 0.045, PI / 120.0).unwrap();
        assert!((out.data()[[0, 0]].norm() - 1.045).abs() < 1e-15);
        assert!((out.data()[[0, 0]].arg() - PI / 120.0).abs() < 1e-15);
        assert_eq!(out.data()[[0, 1]], img.data()[[0, 1]]);
        let bad_roi = ndarray::array![[false, false], [true, false]];
        assert!(inject_task(&img, &bad_roi, 0.1, 0.1).is_err());
    }

    #[test]
    fn design_arithmetic() {
        let d = ExperimentDesign::default();
        assert_eq!(d.n_tr(), 510);
        let x = d.design_vector();
        assert_eq!(x.len(), 490);
        assert_eq!(x.iter().filter(|&&v| v == 1).count(), 240);
        assert_eq!(d.schedule().iter().filter(|&&v| v == 1).count(), 240);
        assert_eq!(&x[..15], &[0; 15]);
        assert_eq!(&x[15..30], &[1; 15]);
    }

    #[test]
    fn small_experiment_shapes_and_truth() {
        let cfg = SimulationConfig {
            n_y: 24,
            n_x: 20,
            n_coils: 3,
            roi_voxels: 6,
            design: ExperimentDesign {
                n_rest_head: 4,
                epoch_count: 2,
                off_len: 3,
                on_len: 3,
                n_rest_tail: 2,
                discard: 4,
            },
            params: ExperimentParams {
                n_cal: 5,
                ..ExperimentParams::default()
            },
            ..SimulationConfig::default()
        };
        let e = run_simulation(&cfg).unwrap();
        assert_eq!(e.full.data().dim(), (14, 3, 24, 20));
        assert_eq!(e.calib.n_t(), 5);
        assert_eq!(e.design.len(), 14);
        // the truth is the object over sqrt(n_C)
        let phantom = make_phantom(24, 20, PhantomStyle::Brain).unwrap();
        let scale = (24.0 * 20.0f64).sqrt() / 3f64.sqrt();
        for (a, b) in e.truth_rest.data().iter().zip(phantom.image.data()) {
            assert!((a - b * scale).norm() < 1e-9 * scale);
        }
        // calibration suffix property
        let shorter = run_simulation(&SimulationConfig {
            params: ExperimentParams {
                n_cal: 2,
                ..cfg.params.clone()
            },
            ..cfg.clone()
        })
        .unwrap();
        assert_eq!(shorter.calib.frame(1), e.calib.frame(4));
        assert_eq!(shorter.full, e.full);
    }

    #[test]
    fn zero_beta_makes_task_and_rest_identical() {
        let phantom = make_phantom(16, 16, PhantomStyle::Disk).unwrap();
        let roi = cortex_roi(&phantom, 4).unwrap();
        let maps = make_sensitivities(2, 16, 16).unwrap().normalized().unwrap();
        let e = simulate_experiment(
            &phantom,
            &roi,
            &maps,
            &ExperimentDesign::default(),
            &NoiseSpec::default(),
            &ExperimentParams {
                beta1: 0.0,
                theta1: 0.0,
                n_cal: 2,
                ..ExperimentParams::default()
            },
        )
        .unwrap();
        assert_eq!(e.truth_rest, e.truth_task);
    }

    #[test]
    fn noiseless_reference_recovers_truth() {
        let phantom = make_phantom(16, 16, PhantomStyle::Disk).unwrap();
        let roi = cortex_roi(&phantom, 4).unwrap();
        let maps = make_sensitivities(4, 16, 16).unwrap().normalized().unwrap();
        let design = ExperimentDesign {
            n_rest_head: 3,
            epoch_count: 1,
            off_len: 2,
            on_len: 2,
            n_rest_tail: 1,
            discard: 3,
        };
        let noise = NoiseSpec {
            variance_scale: 0.0,
            seed: 0,
        };
        let e = simulate_experiment(&phantom, &roi, &maps, &design, &noise, &ExperimentParams::default()).unwrap();
        let rec = reference_reconstruct(&e.full).unwrap();
        let truth = e.truth_series().unwrap();
        let err = rec.data().iter().zip(truth.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-8);
        // coil images undo the acquisition
        let imgs = coil_images(e.full.frame(0));
        let weighted = coil_weight(phantom.image.view(), &maps).unwrap();
        assert!(imgs.iter().zip(weighted.iter()).all(|(a, b)| (a - b).norm() < 1e-10));
    }
}
