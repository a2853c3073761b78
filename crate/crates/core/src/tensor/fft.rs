//! Centered, orthonormal 2-D DFT.
//!
//! Arrays are DC-centered: frequency zero lives at index `(n_y / 2, n_x / 2)`
//! (integer division), matching the `fftshift` convention. Both directions
//! carry a `1 / sqrt(n_y * n_x)` factor so the pair is unitary.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::ComplexImage;

/// Reusable plans for one array shape.
#[derive(Clone)]
pub struct CenteredFft2 {
    n_y: usize,
    n_x: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CenteredFft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CenteredFft2")
            .field("n_y", &self.n_y)
            .field("n_x", &self.n_x)
            .finish()
    }
}

impl CenteredFft2 {
    pub fn new(n_y: usize, n_x: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_y,
            n_x,
            row_fwd: planner.plan_fft_forward(n_x),
            row_inv: planner.plan_fft_inverse(n_x),
            col_fwd: planner.plan_fft_forward(n_y),
            col_inv: planner.plan_fft_inverse(n_y),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_y, self.n_x)
    }

    /// Image to k-space.
    pub fn forward(&self, data: &mut Array2<Complex64>) {
        self.transform(data, false);
    }

    /// k-space to image.
    pub fn inverse(&self, data: &mut Array2<Complex64>) {
        self.transform(data, true);
    }

    fn transform(&self, data: &mut Array2<Complex64>, inverse: bool) {
        let (n_y, n_x) = (self.n_y, self.n_x);
        assert_eq!(data.dim(), (n_y, n_x), "array shape does not match plan");
        let (cy, cx) = (n_y / 2, n_x / 2);
        let (row_fft, col_fft) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };

        // ifftshift into a row-major buffer
        let mut buf = vec![Complex64::default(); n_y * n_x];
        for y in 0..n_y {
            let sy = (y + cy) % n_y;
            for x in 0..n_x {
                buf[y * n_x + x] = data[[sy, (x + cx) % n_x]];
            }
        }
        let mut scratch =
            vec![Complex64::default(); row_fft.get_inplace_scratch_len().max(col_fft.get_inplace_scratch_len())];
        for row in buf.chunks_exact_mut(n_x) {
            row_fft.process_with_scratch(row, &mut scratch);
        }
        // columns through a transposed buffer
        let mut tr = vec![Complex64::default(); n_y * n_x];
        for y in 0..n_y {
            for x in 0..n_x {
                tr[x * n_y + y] = buf[y * n_x + x];
            }
        }
        for col in tr.chunks_exact_mut(n_y) {
            col_fft.process_with_scratch(col, &mut scratch);
        }
        let scale = 1.0 / ((n_y * n_x) as f64).sqrt();
        // fftshift back out
        for y in 0..n_y {
            let sy = (y + n_y - cy) % n_y;
            for x in 0..n_x {
                let sx = (x + n_x - cx) % n_x;
                data[[y, x]] = tr[sx * n_y + sy] * scale;
            }
        }
    }
}

pub fn ft2_inplace(data: &mut Array2<Complex64>) {
    let (n_y, n_x) = data.dim();
    CenteredFft2::new(n_y, n_x).forward(data);
}

pub fn ift2_inplace(data: &mut Array2<Complex64>) {
    let (n_y, n_x) = data.dim();
    CenteredFft2::new(n_y, n_x).inverse(data);
}

/// Centered orthonormal forward transform (image to k-space).
pub fn ft2(img: &ComplexImage) -> ComplexImage {
    let mut data = img.data().clone();
    ft2_inplace(&mut data);
    ComplexImage { data }
}

/// Centered orthonormal inverse transform (k-space to image).
pub fn ift2(k: &ComplexImage) -> ComplexImage {
    let mut data = k.data().clone();
    ift2_inplace(&mut data);
    ComplexImage { data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_image(n_y: usize, n_x: usize, seed: u64) -> ComplexImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array2::from_shape_fn((n_y, n_x), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        ComplexImage::new(data).unwrap()
    }

    /// Direct double-sum centered DFT; `sign` is -1 forward, +1 inverse.
    fn naive_dft(img: &ComplexImage, sign: f64) -> Array2<Complex64> {
        let (n_y, n_x) = img.dims();
        let (cy, cx) = ((n_y / 2) as f64, (n_x / 2) as f64);
        let scale = 1.0 / ((n_y * n_x) as f64).sqrt();
        Array2::from_shape_fn((n_y, n_x), |(u, v)| {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..n_y {
                for x in 0..n_x {
                    let ph = sign
                        * 2.0
                        * PI
                        * ((u as f64 - cy) * (y as f64 - cy) / n_y as f64
                            + (v as f64 - cx) * (x as f64 - cx) / n_x as f64);
                    acc += img.data()[[y, x]] * Complex64::from_polar(1.0, ph);
                }
            }
            acc * scale
        })
    }

    fn max_diff(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn zeros_stay_zero() {
        let z = ComplexImage::zeros(6, 5);
        assert_eq!(ift2(&z), z);
    }

    #[test]
    fn centered_delta_gives_flat_image() {
        for (n_y, n_x) in [(8, 8), (5, 7), (6, 3)] {
            let mut k = ComplexImage::zeros(n_y, n_x);
            k.data[[n_y / 2, n_x / 2]] = Complex64::new(1.0, 0.0);
            let img = ift2(&k);
            let expected = 1.0 / ((n_y * n_x) as f64).sqrt();
            for v in img.data() {
                assert!((v.norm() - expected).abs() < 1e-14);
                assert!(v.im.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn matches_naive_dft() {
        for (n_y, n_x, seed) in [(8, 8, 1), (7, 5, 2), (4, 9, 3)] {
            let img = random_image(n_y, n_x, seed);
            assert!(max_diff(ift2(&img).data(), &naive_dft(&img, 1.0)) < 1e-10);
            assert!(max_diff(ft2(&img).data(), &naive_dft(&img, -1.0)) < 1e-10);
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        for (n_y, n_x) in [(8, 8), (96, 96), (33, 17), (1, 12)] {
            let img = random_image(n_y, n_x, 7);
            let k = ft2(&img);
            assert!((k.energy() - img.energy()).abs() <= 1e-10 * img.energy());
            let back = ift2(&k);
            let rel = max_diff(back.data(), img.data());
            assert!(rel < 1e-10);
        }
    }
}
