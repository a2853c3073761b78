//! Complex array containers, centered 2-D Fourier transforms, line
//! subsampling masks and the complex/real isomorphisms used by the
//! reconstruction engines.

mod fft;
pub mod iso;
mod mask;

use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis, Zip};
use num_complex::Complex64;

use crate::error::{invalid, mismatch, Error, Result};

pub use fft::{ft2, ft2_inplace, ift2, ift2_inplace, CenteredFft2};
pub use mask::SamplingMask;

fn check_finite<'a>(what: &str, mut values: impl Iterator<Item = &'a Complex64>) -> Result<()> {
    if values.any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

/// A single complex 2-D array (`n_y` rows by `n_x` columns), either an image
/// or a k-space array.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    data: Array2<Complex64>,
}

impl ComplexImage {
    pub fn new(data: Array2<Complex64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(invalid("image dimensions must be positive"));
        }
        check_finite("image", data.iter())?;
        Ok(Self { data })
    }

    pub fn zeros(n_y: usize, n_x: usize) -> Self {
        assert!(n_y > 0 && n_x > 0, "image dimensions must be positive");
        Self {
            data: Array2::zeros((n_y, n_x)),
        }
    }

    pub fn n_y(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.data.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, Complex64> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array2<Complex64> {
        self.data
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.data.mapv(|v| v.norm())
    }

    pub fn phase(&self) -> Array2<f64> {
        self.data.mapv(|v| v.arg())
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Multi-coil k-space time series, indexed `(time, coil, row, col)`.
///
/// Subsampled series use the zero-filled representation: unacquired rows are
/// present and hold exact zeros, the sampling pattern travels separately as a
/// [`SamplingMask`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoilKSpaceSeries {
    data: Array4<Complex64>,
}

impl CoilKSpaceSeries {
    pub fn new(data: Array4<Complex64>) -> Result<Self> {
        if data.shape().contains(&0) {
            return Err(invalid(format!(
                "series dimensions must be positive, got {:?}",
                data.shape()
            )));
        }
        check_finite("k-space series", data.iter())?;
        Ok(Self { data })
    }

    /// Stacks per-frame `(coil, row, col)` arrays along a new time axis.
    pub fn from_frames(frames: &[Array3<Complex64>]) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(invalid("series needs at least one frame"));
        };
        let dim = first.dim();
        let mut data = Array4::zeros((frames.len(), dim.0, dim.1, dim.2));
        for (t, frame) in frames.iter().enumerate() {
            if frame.dim() != dim {
                return Err(mismatch(format!(
                    "frame {t} has shape {:?}, expected {dim:?}",
                    frame.dim()
                )));
            }
            data.index_axis_mut(Axis(0), t).assign(frame);
        }
        Self::new(data)
    }

    pub fn n_t(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn n_coils(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn n_y(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn n_x(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn data(&self) -> &Array4<Complex64> {
        &self.data
    }

    pub fn into_inner(self) -> Array4<Complex64> {
        self.data
    }

    pub fn frame(&self, t: usize) -> ArrayView3<'_, Complex64> {
        self.data.index_axis(Axis(0), t)
    }

    /// Copies the listed frames, in order, into a new series.
    pub fn select_frames(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid("frame selection is empty"));
        }
        if let Some(&bad) = indices.iter().find(|&&t| t >= self.n_t()) {
            return Err(invalid(format!("frame {bad} out of range")));
        }
        Ok(Self {
            data: self.data.select(Axis(0), indices),
        })
    }

    /// The trailing `n` frames.
    pub fn last_frames(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n_t() {
            return Err(invalid(format!(
                "cannot take last {n} of {} frames",
                self.n_t()
            )));
        }
        let start = self.n_t() - n;
        Ok(Self {
            data: self.data.slice(s![start.., .., .., ..]).to_owned(),
        })
    }
}

/// Reconstructed complex image series, indexed `(time, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSeries {
    data: Array3<Complex64>,
}

impl ImageSeries {
    pub fn new(data: Array3<Complex64>) -> Result<Self> {
        if data.shape().contains(&0) {
            return Err(invalid("image series dimensions must be positive"));
        }
        check_finite("image series", data.iter())?;
        Ok(Self { data })
    }

    pub fn from_images(images: Vec<Array2<Complex64>>) -> Result<Self> {
        let Some(first) = images.first() else {
            return Err(invalid("image series needs at least one image"));
        };
        let (n_y, n_x) = first.dim();
        let mut data = Array3::zeros((images.len(), n_y, n_x));
        for (t, img) in images.iter().enumerate() {
            if img.dim() != (n_y, n_x) {
                return Err(mismatch(format!("image {t} has shape {:?}", img.dim())));
            }
            data.index_axis_mut(Axis(0), t).assign(img);
        }
        Self::new(data)
    }

    pub fn n_t(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn n_y(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn n_x(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn into_inner(self) -> Array3<Complex64> {
        self.data
    }

    pub fn frame(&self, t: usize) -> ArrayView2<'_, Complex64> {
        self.data.index_axis(Axis(0), t)
    }

    pub fn image(&self, t: usize) -> ComplexImage {
        ComplexImage {
            data: self.frame(t).to_owned(),
        }
    }

    pub fn magnitude(&self) -> Array3<f64> {
        self.data.mapv(|v| v.norm())
    }

    pub fn phase(&self) -> Array3<f64> {
        self.data.mapv(|v| v.arg())
    }
}

/// Elementwise complex mean over the coil axis of one `(coil, row, col)` frame.
pub fn coil_average(frame: ArrayView3<'_, Complex64>) -> Array2<Complex64> {
    let n_c = frame.shape()[0] as f64;
    let mut sum = frame.sum_axis(Axis(0));
    sum.mapv_inplace(|v| v / n_c);
    sum
}

/// Zero every unacquired row of a single `(coil, row, col)` frame in place.
pub fn subsample_frame_inplace(
    frame: &mut ndarray::ArrayViewMut3<'_, Complex64>,
    mask: &SamplingMask,
) -> Result<()> {
    mask.check_dims(frame.shape()[1], frame.shape()[2])?;
    for row in mask.missing_rows() {
        frame.slice_mut(s![.., row, ..]).fill(Complex64::new(0.0, 0.0));
    }
    Ok(())
}

/// Zero-filled subsampling: acquired rows are copied verbatim, all other rows
/// become exact zeros.
pub fn subsample(ks: &CoilKSpaceSeries, mask: &SamplingMask) -> Result<CoilKSpaceSeries> {
    mask.check_dims(ks.n_y(), ks.n_x())?;
    let mut data = ks.data.clone();
    let missing = mask.missing_rows();
    Zip::from(data.outer_iter_mut()).for_each(|mut frame| {
        for &row in &missing {
            frame.slice_mut(s![.., row, ..]).fill(Complex64::new(0.0, 0.0));
        }
    });
    Ok(CoilKSpaceSeries { data })
}
