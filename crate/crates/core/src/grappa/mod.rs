//! Classical GRAPPA: least-squares interpolation weights fit on fully sampled
//! calibration frames, then applied to fill the unacquired k-space rows.

mod geometry;

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array3, Array4, ArrayView3, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, mismatch, Error, Result};
use crate::io;
use crate::linalg;
use crate::tensor::iso::{to_iso_vector, IsoMatrix};
use crate::tensor::{coil_average, CenteredFft2, CoilKSpaceSeries, ImageSeries, SamplingMask};

pub use geometry::{
    bgrappa_groups, grappa_placement, grappa_placements, weight_classes, KernelSpec, Placement,
    Role, WeightSharing,
};

/// Paired observations for one weight fit: column `m` of `f_calib` is
/// explained by column `m` of `f_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSystem {
    /// `n_C x M` targets.
    pub f_calib: DMatrix<Complex64>,
    /// `p x M` sources.
    pub f_l: DMatrix<Complex64>,
}

impl CalibrationSystem {
    pub fn new(f_calib: DMatrix<Complex64>, f_l: DMatrix<Complex64>) -> Result<Self> {
        if f_calib.ncols() != f_l.ncols() {
            return Err(mismatch(format!(
                "{} target columns but {} source columns",
                f_calib.ncols(),
                f_l.ncols()
            )));
        }
        if f_calib.ncols() == 0 {
            return Err(invalid("calibration system has no observations"));
        }
        Ok(Self { f_calib, f_l })
    }

    /// Stacks one column per (placement, frame) pair, placements outermost.
    /// All placements must have the same number of targets and sources.
    pub fn from_placements(calib: &CoilKSpaceSeries, placements: &[&Placement]) -> Result<Self> {
        let first = placements
            .first()
            .ok_or_else(|| invalid("no placements to gather"))?;
        let n_c = calib.n_coils();
        let n_t = calib.n_t();
        let rows_t = first.targets.len() * n_c;
        let rows_s = first.sources.len() * n_c;
        let m = placements.len() * n_t;
        let data = calib.data();
        let mut f_calib = DMatrix::zeros(rows_t, m);
        let mut f_l = DMatrix::zeros(rows_s, m);
        for (j, pl) in placements.iter().enumerate() {
            if pl.targets.len() * n_c != rows_t || pl.sources.len() * n_c != rows_s {
                return Err(mismatch("pooled placements differ in size"));
            }
            for t in 0..n_t {
                let col = j * n_t + t;
                for (i, &(r, c)) in pl.targets.iter().enumerate() {
                    for coil in 0..n_c {
                        f_calib[(i * n_c + coil, col)] = data[[t, coil, r, c]];
                    }
                }
                for (i, &(r, c)) in pl.sources.iter().enumerate() {
                    for coil in 0..n_c {
                        f_l[(i * n_c + coil, col)] = data[[t, coil, r, c]];
                    }
                }
            }
        }
        Self::new(f_calib, f_l)
    }

    pub fn observations(&self) -> usize {
        self.f_calib.ncols()
    }
}

/// Builds the calibration system at one unacquired point.
///
/// With [`Role::Grappa`] the point's coil values are the targets and its
/// acquired window the sources. With [`Role::Bgrappa`] the relation is the
/// swapped one for the estimation group containing the point: the group's
/// acquired anchor is the target and its unacquired points the sources.
pub fn gather_calibration_system(
    calib: &CoilKSpaceSeries,
    mask: &SamplingMask,
    kernel: &KernelSpec,
    target: (usize, usize),
    role: Role,
) -> Result<CalibrationSystem> {
    mask.check_dims(calib.n_y(), calib.n_x())?;
    let (row, col) = target;
    let placement = match role {
        Role::Grappa => grappa_placement(mask, kernel, row, col)?,
        Role::Bgrappa => {
            if row >= mask.n_y() || col >= mask.n_x() || mask.is_acquired(row) {
                return Err(invalid(format!("({row}, {col}) is not an unacquired point")));
            }
            bgrappa_groups(mask, kernel)
                .into_iter()
                .find(|g| g.sources.contains(&target))
                .expect("tiling covers every unacquired point")
        }
    };
    CalibrationSystem::from_placements(calib, &[&placement])
}

/// Least-squares weights `W = F_calib F_l^H (F_l F_l^H)^{-1}`, falling back to
/// the minimum-norm pseudoinverse solution when the Gram matrix is singular
/// or its condition number exceeds 1e12.
pub fn estimate_weights(sys: &CalibrationSystem) -> DMatrix<Complex64> {
    linalg::least_squares_weights(&sys.f_calib, &sys.f_l)
}

/// Interpolation weights for every unacquired point of one sampling pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    kernel: KernelSpec,
    sharing: WeightSharing,
    mask: SamplingMask,
    n_coils: usize,
    weights: Vec<DMatrix<Complex64>>,
    placements: Vec<Placement>,
    class_of: Vec<usize>,
}

impl WeightSet {
    /// Fits one weight matrix per class from fully sampled calibration frames.
    pub fn estimate(
        calib: &CoilKSpaceSeries,
        mask: &SamplingMask,
        kernel: &KernelSpec,
        sharing: WeightSharing,
    ) -> Result<Self> {
        mask.check_dims(calib.n_y(), calib.n_x())?;
        let placements = grappa_placements(mask, kernel);
        let (class_of, n_classes) = weight_classes(&placements, sharing);
        let mut members: Vec<Vec<&Placement>> = vec![Vec::new(); n_classes];
        for (p, &k) in placements.iter().zip(&class_of) {
            members[k].push(p);
        }
        let weights = members
            .par_iter()
            .map(|ps| CalibrationSystem::from_placements(calib, ps).map(|s| estimate_weights(&s)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kernel: *kernel,
            sharing,
            mask: *mask,
            n_coils: calib.n_coils(),
            weights,
            placements,
            class_of,
        })
    }

    /// Reassembles a weight set from per-class matrices; the class layout is
    /// recomputed from the geometry.
    pub fn from_parts(
        mask: &SamplingMask,
        kernel: &KernelSpec,
        sharing: WeightSharing,
        n_coils: usize,
        weights: Vec<DMatrix<Complex64>>,
    ) -> Result<Self> {
        let placements = grappa_placements(mask, kernel);
        let (class_of, n_classes) = weight_classes(&placements, sharing);
        if weights.len() != n_classes {
            return Err(mismatch(format!(
                "{} weight matrices for {n_classes} classes",
                weights.len()
            )));
        }
        let p = kernel.p(n_coils);
        if let Some(w) = weights.iter().find(|w| w.shape() != (n_coils, p)) {
            return Err(mismatch(format!(
                "weight matrix is {:?}, expected ({n_coils}, {p})",
                w.shape()
            )));
        }
        if weights.iter().flat_map(|w| w.iter()).any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("weight set".into()));
        }
        Ok(Self {
            kernel: *kernel,
            sharing,
            mask: *mask,
            n_coils,
            weights,
            placements,
            class_of,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn sharing(&self) -> WeightSharing {
        self.sharing
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn n_coils(&self) -> usize {
        self.n_coils
    }

    pub fn n_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn class_weights(&self, class: usize) -> &DMatrix<Complex64> {
        &self.weights[class]
    }

    /// Class index and window for the unacquired point `(row, col)`.
    pub fn lookup(&self, row: usize, col: usize) -> Option<(usize, &Placement)> {
        if row >= self.mask.n_y() || col >= self.mask.n_x() || self.mask.is_acquired(row) {
            return None;
        }
        let missing_before = (0..row).filter(|&r| !self.mask.is_acquired(r)).count();
        let idx = missing_before * self.mask.n_x() + col;
        Some((self.class_of[idx], &self.placements[idx]))
    }

    /// Weight matrix applied at `(row, col)`.
    pub fn weights_at(&self, row: usize, col: usize) -> Option<&DMatrix<Complex64>> {
        self.lookup(row, col).map(|(k, _)| &self.weights[k])
    }

    fn check_compatible(&self, mask: &SamplingMask, n_coils: usize) -> Result<()> {
        if n_coils != self.n_coils {
            return Err(mismatch(format!(
                "weights fit for {} coils, data has {n_coils}",
                self.n_coils
            )));
        }
        if *mask != self.mask {
            mask.check_dims(self.mask.n_y(), self.mask.n_x())?;
            let row = mask
                .missing_rows()
                .into_iter()
                .find(|&r| self.mask.is_acquired(r) || self.lookup(r, 0).is_none())
                .unwrap_or_else(|| mask.missing_rows().first().copied().unwrap_or(0));
            return Err(Error::MissingWeightClass { row, col: 0 });
        }
        Ok(())
    }

    /// Writes the per-class weights as a rank-3 `KTS1` tensor
    /// (`class x n_C x p`) with a plain-text header beside it.
    pub fn save(&self, tensor_path: &Path, header_path: &Path) -> Result<()> {
        let p = self.kernel.p(self.n_coils);
        let mut data = ndarray::Array3::zeros((self.weights.len(), self.n_coils, p));
        for (k, w) in self.weights.iter().enumerate() {
            for i in 0..self.n_coils {
                for j in 0..p {
                    data[[k, i, j]] = w[(i, j)];
                }
            }
        }
        io::write_kts(tensor_path, &data.into_dyn())?;
        let mut h = String::new();
        let _ = writeln!(h, "kernel {}", self.kernel);
        let _ = writeln!(h, "sharing {}", self.sharing);
        let _ = writeln!(h, "dims {} {}", self.mask.n_y(), self.mask.n_x());
        let _ = writeln!(h, "accel {}", self.mask.accel());
        let _ = writeln!(h, "phase_offset {}", self.mask.phase_offset());
        let _ = writeln!(h, "coils {}", self.n_coils);
        let _ = writeln!(h, "classes {}", self.weights.len());
        std::fs::write(header_path, h)?;
        Ok(())
    }

    pub fn load(tensor_path: &Path, header_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(header_path)?;
        let bad = |why: &str| Error::Format {
            format: "weight header",
            reason: why.to_string(),
        };
        let field = |key: &str| -> Result<Vec<&str>> {
            text.lines()
                .find_map(|l| {
                    let mut it = l.split_whitespace();
                    (it.next() == Some(key)).then(|| it.collect())
                })
                .ok_or_else(|| bad(&format!("missing '{key}'")))
        };
        let num = |key: &str, i: usize| -> Result<usize> {
            field(key)?
                .get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(&format!("bad '{key}'")))
        };
        let kernel: KernelSpec = field("kernel")?
            .first()
            .ok_or_else(|| bad("bad 'kernel'"))?
            .parse()?;
        let sharing: WeightSharing = field("sharing")?
            .first()
            .ok_or_else(|| bad("bad 'sharing'"))?
            .parse()?;
        let mask = SamplingMask::new(
            num("dims", 0)?,
            num("dims", 1)?,
            num("accel", 0)?,
            num("phase_offset", 0)?,
        )?;
        let n_coils = num("coils", 0)?;
        let data: ndarray::Array3<Complex64> = io::read_kts(tensor_path)?
            .into_dimensionality()
            .map_err(|_| bad("weights tensor is not rank 3"))?;
        if data.shape()[0] != num("classes", 0)? {
            return Err(bad("class count disagrees with tensor"));
        }
        let (_, n_c, p) = data.dim();
        let weights = data
            .outer_iter()
            .map(|w| DMatrix::from_fn(n_c, p, |i, j| w[[i, j]]))
            .collect();
        Self::from_parts(&mask, &kernel, sharing, n_coils, weights)
    }
}

fn source_vector(frame: &ArrayView3<'_, Complex64>, placement: &Placement, out: &mut Vec<Complex64>) {
    let n_c = frame.shape()[0];
    out.clear();
    for &(r, c) in &placement.sources {
        for coil in 0..n_c {
            out.push(frame[[coil, r, c]]);
        }
    }
}

/// Fills every unacquired point of one `(coil, row, col)` frame with
/// `W f_l` from its acquired window. Acquired entries are copied unchanged;
/// values stored at unacquired points are ignored.
pub fn interpolate_missing(
    frame: ArrayView3<'_, Complex64>,
    mask: &SamplingMask,
    weights: &WeightSet,
) -> Result<Array3<Complex64>> {
    let (n_c, n_y, n_x) = frame.dim();
    mask.check_dims(n_y, n_x)?;
    weights.check_compatible(mask, n_c)?;
    let mut out = frame.to_owned();
    let mut src = Vec::with_capacity(weights.kernel.p(n_c));
    for (placement, &k) in weights.placements.iter().zip(&weights.class_of) {
        source_vector(&frame, placement, &mut src);
        let w = &weights.weights[k];
        let (r, c) = placement.targets[0];
        for coil in 0..n_c {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, s) in src.iter().enumerate() {
                acc += w[(coil, j)] * s;
            }
            out[[coil, r, c]] = acc;
        }
    }
    Ok(out)
}

/// [`interpolate_missing`] carried out in the real isomorphic representation:
/// each fill is `ISO(W) iso(f_l)` mapped back to complex values.
pub fn interpolate_missing_iso(
    frame: ArrayView3<'_, Complex64>,
    mask: &SamplingMask,
    weights: &WeightSet,
) -> Result<Array3<Complex64>> {
    let (n_c, n_y, n_x) = frame.dim();
    mask.check_dims(n_y, n_x)?;
    weights.check_compatible(mask, n_c)?;
    let isos: Vec<IsoMatrix> = weights.weights.iter().map(IsoMatrix::from_complex).collect();
    let mut out = frame.to_owned();
    let mut src = Vec::new();
    for (placement, &k) in weights.placements.iter().zip(&weights.class_of) {
        source_vector(&frame, placement, &mut src);
        let filled = isos[k].mul_vector(&to_iso_vector(&src))?.to_complex();
        let (r, c) = placement.targets[0];
        for (coil, v) in filled.into_iter().enumerate() {
            out[[coil, r, c]] = v;
        }
    }
    Ok(out)
}

/// Coil-average and inverse transform of each full `(coil, row, col)` frame.
pub(crate) fn frames_to_images<F>(n_t: usize, n_y: usize, n_x: usize, fill: F) -> Result<ImageSeries>
where
    F: Fn(usize) -> Result<Array3<Complex64>> + Sync,
{
    let fft = CenteredFft2::new(n_y, n_x);
    let images = (0..n_t)
        .into_par_iter()
        .map(|t| {
            let full = fill(t)?;
            let mut img = coil_average(full.view());
            fft.inverse(&mut img);
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    ImageSeries::from_images(images)
}

/// Full GRAPPA pipeline with weights fit once from `calib` and held fixed:
/// per frame, interpolate, coil-average, inverse transform.
pub fn grappa_reconstruct(
    sub: &CoilKSpaceSeries,
    mask: &SamplingMask,
    calib: &CoilKSpaceSeries,
    kernel: &KernelSpec,
    sharing: WeightSharing,
) -> Result<ImageSeries> {
    check_series(sub, calib, mask)?;
    let weights = WeightSet::estimate(calib, mask, kernel, sharing)?;
    grappa_reconstruct_with(sub, mask, &weights)
}

/// GRAPPA pipeline with a precomputed weight set.
pub fn grappa_reconstruct_with(
    sub: &CoilKSpaceSeries,
    mask: &SamplingMask,
    weights: &WeightSet,
) -> Result<ImageSeries> {
    mask.check_dims(sub.n_y(), sub.n_x())?;
    frames_to_images(sub.n_t(), sub.n_y(), sub.n_x(), |t| {
        interpolate_missing(sub.frame(t), mask, weights)
    })
}

pub(crate) fn check_series(
    sub: &CoilKSpaceSeries,
    calib: &CoilKSpaceSeries,
    mask: &SamplingMask,
) -> Result<()> {
    mask.check_dims(sub.n_y(), sub.n_x())?;
    mask.check_dims(calib.n_y(), calib.n_x())?;
    if sub.n_coils() != calib.n_coils() {
        return Err(mismatch(format!(
            "series has {} coils, calibration has {}",
            sub.n_coils(),
            calib.n_coils()
        )));
    }
    Ok(())
}

/// Stacks frames back into a series; used by tests and tools that want the
/// filled k-space rather than images.
pub fn interpolate_series(
    sub: &CoilKSpaceSeries,
    mask: &SamplingMask,
    weights: &WeightSet,
) -> Result<CoilKSpaceSeries> {
    let frames = (0..sub.n_t())
        .into_par_iter()
        .map(|t| interpolate_missing(sub.frame(t), mask, weights))
        .collect::<Result<Vec<_>>>()?;
    let (n_c, n_y, n_x) = frames[0].dim();
    let mut data = Array4::zeros((frames.len(), n_c, n_y, n_x));
    for (t, f) in frames.iter().enumerate() {
        data.index_axis_mut(Axis(0), t).assign(f);
    }
    CoilKSpaceSeries::new(data)
}
