//! Bayesian GRAPPA: priors for the unacquired frequencies, the weights and
//! the residual variance are assessed from the calibration frames, and each
//! estimation group is solved for its joint posterior mode by ICM.
//!
//! The relation is the swapped GRAPPA one: the acquired anchor of a group is
//! modeled as `f_e = W f_k + noise` in terms of the unacquired points `f_k`
//! around it.

mod icm;

use nalgebra::DMatrix;
use ndarray::ArrayView3;
use num_complex::Complex64;
use rand::seq::index::sample;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::grappa::{
    bgrappa_groups, check_series, estimate_weights, frames_to_images, weight_classes,
    CalibrationSystem, KernelSpec, Placement, WeightSharing,
};
use crate::rng::stream_rng;
use crate::tensor::iso::{weights_to_d, IsoVector};
use crate::tensor::{CoilKSpaceSeries, ImageSeries, SamplingMask};

pub use icm::{
    icm_map, icm_map_reference, icm_map_traced, icm_update_d, icm_update_fk, icm_update_tau2,
    icm_update_tau2_with, log_posterior, quadratic_form, theta,
};

/// Smallest residual variance accepted from calibration data.
pub const TAU0_FLOOR: f64 = 1e-12;

/// Prior hyperparameters for one estimation group.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    /// Prior scalar of `f_k`.
    pub n_k: f64,
    /// Prior mean of `f_k`, length `2p`.
    pub f_k0: IsoVector,
    /// Prior scalar of the weights.
    pub n_w: f64,
    /// Prior mean of `D = [W_R, W_I]`, `n_C x 2p`.
    pub d0: DMatrix<f64>,
    /// Inverse-gamma shape.
    pub alpha: f64,
    /// Inverse-gamma scale.
    pub delta: f64,
    /// Residual k-space variance the scale was built from.
    pub tau0_sq: f64,
}

impl Hyperparameters {
    pub fn n_coils(&self) -> usize {
        self.d0.nrows()
    }

    /// Number of unacquired points times coils covered by the group.
    pub fn p(&self) -> usize {
        self.d0.ncols() / 2
    }

    pub fn validate(&self) -> Result<()> {
        icm::check_positive("n_k", self.n_k)?;
        icm::check_positive("n_w", self.n_w)?;
        icm::check_positive("alpha", self.alpha)?;
        icm::check_positive("delta", self.delta)?;
        icm::check_positive("tau0^2", self.tau0_sq)?;
        if !self.d0.ncols().is_multiple_of(2) || self.f_k0.as_vector().len() != self.d0.ncols() {
            return Err(invalid(format!(
                "D_0 is {:?} but f_k0 has length {}",
                self.d0.shape(),
                self.f_k0.as_vector().len()
            )));
        }
        if self.d0.iter().chain(self.f_k0.as_vector().iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prior means".into()));
        }
        Ok(())
    }
}

/// Current ICM iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct IcmState {
    pub f_k: IsoVector,
    pub d: DMatrix<f64>,
    pub tau2: f64,
    /// Sweeps performed.
    pub iterations: usize,
}

/// Which closed form the variance step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Tau2Rule {
    /// `Theta / (2 (2 n_C + 2 p + 2 n_C p + 1))`.
    #[default]
    Printed,
    /// Exact maximizer of the joint posterior in `tau2` with the other
    /// parameters held fixed: `(Q + 2 delta) / (2 (n_C + p + n_C p + alpha + 1))`.
    ConditionalMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcmConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Reassess the priors per frame from a random subset of calibration frames.
    pub bootstrap_calibration: bool,
    pub bootstrap_size: usize,
    /// Replaces `n_k` and `n_w` when set.
    pub prior_scalar_override: Option<f64>,
    pub tau2_rule: Tau2Rule,
    /// Seed of the per-frame bootstrap streams.
    pub seed: u64,
}

impl Default for IcmConfig {
    fn default() -> Self {
        Self {
            max_iter: 10,
            rel_tol: 1e-8,
            bootstrap_calibration: false,
            bootstrap_size: 30,
            prior_scalar_override: None,
            tau2_rule: Tau2Rule::Printed,
            seed: 0,
        }
    }
}

impl IcmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be at least 1"));
        }
        icm::check_positive("rel_tol", self.rel_tol)?;
        if self.bootstrap_calibration && self.bootstrap_size < 2 {
            return Err(invalid("bootstrap_size must be at least 2"));
        }
        if let Some(s) = self.prior_scalar_override {
            icm::check_positive("prior scalar", s)?;
        }
        Ok(())
    }
}

/// Hyperparameters for every estimation group of a sampling pattern.
///
/// `D_0` is fit per weight class (see [`WeightSharing`]); `f_k0` is always the
/// per-group mean. The scalars are shared by all groups.
#[derive(Debug, Clone)]
pub struct PriorSet {
    mask: SamplingMask,
    kernel: KernelSpec,
    sharing: WeightSharing,
    n_coils: usize,
    n_cal: usize,
    groups: Vec<Placement>,
    class_of: Vec<usize>,
    /// Row-major `n_C x p` complex weights per class.
    w0: Vec<Vec<Complex64>>,
    /// Complex prior means per group.
    f0: Vec<Vec<Complex64>>,
    pub n_k: f64,
    pub n_w: f64,
    pub alpha: f64,
    pub delta: f64,
    pub tau0_sq: f64,
}

impl PriorSet {
    pub fn groups(&self) -> &[Placement] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_cal(&self) -> usize {
        self.n_cal
    }

    pub fn n_classes(&self) -> usize {
        self.w0.len()
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn sharing(&self) -> WeightSharing {
        self.sharing
    }

    /// Hyperparameters of group `g` in the real representation.
    pub fn hyperparameters(&self, g: usize) -> Hyperparameters {
        let p = self.f0[g].len();
        let w0 = &self.w0[self.class_of[g]];
        let w = DMatrix::from_fn(self.n_coils, p, |i, j| w0[i * p + j]);
        Hyperparameters {
            n_k: self.n_k,
            f_k0: IsoVector::from_complex(&self.f0[g]),
            n_w: self.n_w,
            d0: weights_to_d(&w),
            alpha: self.alpha,
            delta: self.delta,
            tau0_sq: self.tau0_sq,
        }
    }

    /// Replaces both prior scalars.
    pub fn with_prior_scalar(mut self, s: f64) -> Result<Self> {
        icm::check_positive("prior scalar", s)?;
        self.n_k = s;
        self.n_w = s;
        Ok(self)
    }
}

/// Mean over coils and acquired locations of the per-location sample variance
/// across calibration frames, real and imaginary parts weighted equally.
pub fn residual_variance(calib: &CoilKSpaceSeries, mask: &SamplingMask) -> Result<f64> {
    let n_t = calib.n_t();
    if n_t < 2 {
        return Err(invalid("at least two calibration frames are needed"));
    }
    let data = calib.data();
    let mut total = 0.0;
    let mut count = 0usize;
    for coil in 0..calib.n_coils() {
        for r in mask.acquired_rows() {
            for c in 0..calib.n_x() {
                let mut mean = Complex64::new(0.0, 0.0);
                for t in 0..n_t {
                    mean += data[[t, coil, r, c]];
                }
                mean /= n_t as f64;
                let mut ss = 0.0;
                for t in 0..n_t {
                    ss += (data[[t, coil, r, c]] - mean).norm_sqr();
                }
                // |z - m|^2 sums both parts; halve for the per-part variance
                total += ss / (n_t - 1) as f64 / 2.0;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Assesses the priors of every estimation group from fully sampled
/// calibration frames: `D_0` by least squares on the swapped relation,
/// `f_k0` as the calibration mean at the group's unacquired points,
/// `n_k = n_w = n_cal`, `alpha = n_cal - 1`, `delta = (n_cal - 1) tau0^2`.
pub fn assess_hyperparameters(
    calib: &CoilKSpaceSeries,
    mask: &SamplingMask,
    kernel: &KernelSpec,
    sharing: WeightSharing,
) -> Result<PriorSet> {
    mask.check_dims(calib.n_y(), calib.n_x())?;
    let n_cal = calib.n_t();
    if n_cal < 2 {
        return Err(invalid(format!(
            "hyperparameter assessment needs at least 2 calibration frames, got {n_cal}"
        )));
    }
    let mut tau0_sq = residual_variance(calib, mask)?;
    if tau0_sq < TAU0_FLOOR {
        log::warn!("calibration variance {tau0_sq:e} below floor, using {TAU0_FLOOR:e}");
        tau0_sq = TAU0_FLOOR;
    }
    let groups = bgrappa_groups(mask, kernel);
    let (class_of, n_classes) = weight_classes(&groups, sharing);
    let mut members: Vec<Vec<&Placement>> = vec![Vec::new(); n_classes];
    for (g, &k) in groups.iter().zip(&class_of) {
        members[k].push(g);
    }
    let w0 = members
        .par_iter()
        .map(|ps| {
            let sys = CalibrationSystem::from_placements(calib, ps)?;
            let w = estimate_weights(&sys);
            let (r, c) = w.shape();
            Ok((0..r * c).map(|k| w[(k / c, k % c)]).collect())
        })
        .collect::<Result<Vec<Vec<Complex64>>>>()?;
    let data = calib.data();
    let n_c = calib.n_coils();
    let f0 = groups
        .iter()
        .map(|g| {
            let mut v = Vec::with_capacity(g.sources.len() * n_c);
            for &(r, c) in &g.sources {
                for coil in 0..n_c {
                    let mut s = Complex64::new(0.0, 0.0);
                    for t in 0..n_cal {
                        s += data[[t, coil, r, c]];
                    }
                    v.push(s / n_cal as f64);
                }
            }
            v
        })
        .collect();
    let n = n_cal as f64;
    Ok(PriorSet {
        mask: *mask,
        kernel: *kernel,
        sharing,
        n_coils: n_c,
        n_cal,
        groups,
        class_of,
        w0,
        f0,
        n_k: n,
        n_w: n,
        alpha: n - 1.0,
        delta: (n - 1.0) * tau0_sq,
        tau0_sq,
    })
}

/// Per-frame reconstruction summary.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLog {
    pub t: usize,
    pub groups: usize,
    pub max_sweeps: usize,
    pub mean_tau2: f64,
}

#[derive(Debug, Clone)]
pub struct BgrappaOutput {
    pub images: ImageSeries,
    pub log: Vec<FrameLog>,
}

/// Fills one `(coil, row, col)` frame group by group. Acquired entries are
/// copied; every unacquired point is written by exactly one group.
pub fn reconstruct_frame(
    frame: ArrayView3<'_, Complex64>,
    prior: &PriorSet,
    config: &IcmConfig,
) -> Result<(ndarray::Array3<Complex64>, FrameLog)> {
    let (n_c, n_y, n_x) = frame.dim();
    prior.mask.check_dims(n_y, n_x)?;
    if n_c != prior.n_coils {
        return Err(invalid(format!(
            "priors assessed for {} coils, frame has {n_c}",
            prior.n_coils
        )));
    }
    let mut out = frame.to_owned();
    let mut ws = icm::Workspace::default();
    let mut f_e = vec![Complex64::new(0.0, 0.0); n_c];
    let mut max_sweeps = 0;
    let mut tau_sum = 0.0;
    for (g, group) in prior.groups.iter().enumerate() {
        let (ar, ac) = group.targets[0];
        for (coil, v) in f_e.iter_mut().enumerate() {
            *v = frame[[coil, ar, ac]];
        }
        let problem = icm::GroupProblem {
            f_e: &f_e,
            f0: &prior.f0[g],
            w0: &prior.w0[prior.class_of[g]],
            n_k: prior.n_k,
            n_w: prior.n_w,
            alpha: prior.alpha,
            delta: prior.delta,
        };
        let outcome = problem.solve(config, &mut ws, |_, _, _| {})?;
        max_sweeps = max_sweeps.max(outcome.iterations);
        tau_sum += outcome.tau2;
        for (i, &(r, c)) in group.sources.iter().enumerate() {
            for coil in 0..n_c {
                out[[coil, r, c]] = ws.f[i * n_c + coil];
            }
        }
    }
    let groups = prior.groups.len();
    let log = FrameLog {
        t: 0,
        groups,
        max_sweeps,
        mean_tau2: if groups == 0 { 0.0 } else { tau_sum / groups as f64 },
    };
    Ok((out, log))
}

/// Sorted random subset of `size` calibration frame indices for frame `t`.
pub fn bootstrap_indices(n_cal: usize, size: usize, seed: u64, t: usize) -> Result<Vec<usize>> {
    if size == 0 || size > n_cal {
        return Err(invalid(format!(
            "bootstrap size {size} must lie in [1, {n_cal}]"
        )));
    }
    let mut rng = stream_rng(seed, 0xB007, t as u64);
    let mut idx = sample(&mut rng, n_cal, size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Full BGRAPPA pipeline: per frame, solve every group for its posterior
/// mode, coil-average, inverse transform. Priors are assessed once, or per
/// frame from a bootstrap subset when `config.bootstrap_calibration` is set.
pub fn bgrappa_reconstruct(
    sub: &CoilKSpaceSeries,
    mask: &SamplingMask,
    calib: &CoilKSpaceSeries,
    kernel: &KernelSpec,
    sharing: WeightSharing,
    config: &IcmConfig,
) -> Result<BgrappaOutput> {
    config.validate()?;
    check_series(sub, calib, mask)?;
    let assess = |c: &CoilKSpaceSeries| -> Result<PriorSet> {
        let prior = assess_hyperparameters(c, mask, kernel, sharing)?;
        match config.prior_scalar_override {
            Some(s) => prior.with_prior_scalar(s),
            None => Ok(prior),
        }
    };
    let shared = if config.bootstrap_calibration {
        None
    } else {
        Some(assess(calib)?)
    };
    let logs = std::sync::Mutex::new(vec![None; sub.n_t()]);
    let images = frames_to_images(sub.n_t(), sub.n_y(), sub.n_x(), |t| {
        let local;
        let prior = match &shared {
            Some(p) => p,
            None => {
                let idx = bootstrap_indices(calib.n_t(), config.bootstrap_size, config.seed, t)?;
                local = assess(&calib.select_frames(&idx)?)?;
                &local
            }
        };
        let (full, mut log) = reconstruct_frame(sub.frame(t), prior, config)?;
        log.t = t;
        logs.lock().expect("log lock")[t] = Some(log);
        Ok(full)
    })?;
    let log = logs
        .into_inner()
        .expect("log lock")
        .into_iter()
        .map(|l| l.expect("every frame logged"))
        .collect();
    Ok(BgrappaOutput { images, log })
}
