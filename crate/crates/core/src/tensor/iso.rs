//! Real-valued isomorphic representations of complex linear algebra.
//!
//! A complex vector `f = f_R + i f_I` maps to the stacked real vector
//! `[f_R; f_I]`, and a complex matrix `W = W_R + i W_I` to the block matrix
//! `[[W_R, -W_I], [W_I, W_R]]`, so that `iso(W f) == iso(W) iso(f)`.
//! The compact weight layout `D = [W_R, W_I]` stores each real parameter once.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{invalid, mismatch, Result};

/// Stacked `[Re; Im]` real vector of even length.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoVector(DVector<f64>);

impl IsoVector {
    pub fn new(v: DVector<f64>) -> Result<Self> {
        if !v.len().is_multiple_of(2) {
            return Err(invalid(format!("iso vector length {} is odd", v.len())));
        }
        Ok(Self(v))
    }

    pub fn zeros(complex_len: usize) -> Self {
        Self(DVector::zeros(2 * complex_len))
    }

    pub fn from_complex(f: &[Complex64]) -> Self {
        let m = f.len();
        Self(DVector::from_fn(2 * m, |i, _| {
            if i < m {
                f[i].re
            } else {
                f[i - m].im
            }
        }))
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        let m = self.0.len() / 2;
        (0..m)
            .map(|i| Complex64::new(self.0[i], self.0[i + m]))
            .collect()
    }

    /// Number of complex entries.
    pub fn complex_len(&self) -> usize {
        self.0.len() / 2
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    /// Real parts (`f_R`).
    pub fn re(&self) -> DVector<f64> {
        self.0.rows(0, self.complex_len()).into_owned()
    }

    /// Imaginary parts (`f_I`).
    pub fn im(&self) -> DVector<f64> {
        let m = self.complex_len();
        self.0.rows(m, m).into_owned()
    }
}

pub fn to_iso_vector(f: &[Complex64]) -> IsoVector {
    IsoVector::from_complex(f)
}

pub fn from_iso_vector(v: &[f64]) -> Result<Vec<Complex64>> {
    Ok(IsoVector::new(DVector::from_column_slice(v))?.to_complex())
}

/// Real `2a x 2b` block matrix `[[W_R, -W_I], [W_I, W_R]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoMatrix(DMatrix<f64>);

impl IsoMatrix {
    pub fn from_parts(w_re: &DMatrix<f64>, w_im: &DMatrix<f64>) -> Result<Self> {
        if w_re.shape() != w_im.shape() {
            return Err(mismatch(format!(
                "real part {:?} and imaginary part {:?} differ in shape",
                w_re.shape(),
                w_im.shape()
            )));
        }
        let (a, b) = w_re.shape();
        let mut m = DMatrix::zeros(2 * a, 2 * b);
        m.view_mut((0, 0), (a, b)).copy_from(w_re);
        m.view_mut((0, b), (a, b)).copy_from(&(-w_im));
        m.view_mut((a, 0), (a, b)).copy_from(w_im);
        m.view_mut((a, b), (a, b)).copy_from(w_re);
        Ok(Self(m))
    }

    pub fn from_complex(w: &DMatrix<Complex64>) -> Self {
        Self::from_parts(&w.map(|z| z.re), &w.map(|z| z.im)).expect("parts share a shape")
    }

    /// Builds the design matrix from the compact `D = [W_R, W_I]` layout.
    pub fn from_d(d: &DMatrix<f64>) -> Result<Self> {
        let (a, two_b) = d.shape();
        if two_b % 2 != 0 {
            return Err(invalid(format!("D has odd column count {two_b}")));
        }
        let b = two_b / 2;
        Self::from_parts(
            &d.view((0, 0), (a, b)).into_owned(),
            &d.view((0, b), (a, b)).into_owned(),
        )
    }

    /// Wraps an existing real matrix after checking the block structure.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let iso = Self(m);
        if !iso.has_block_structure() {
            return Err(invalid("matrix lacks the [[A, -B], [B, A]] block structure"));
        }
        Ok(iso)
    }

    pub fn has_block_structure(&self) -> bool {
        let (r, c) = self.0.shape();
        if r % 2 != 0 || c % 2 != 0 {
            return false;
        }
        let (a, b) = (r / 2, c / 2);
        (0..a).all(|i| {
            (0..b).all(|j| {
                self.0[(i, j)] == self.0[(i + a, j + b)]
                    && self.0[(i, j + b)] == -self.0[(i + a, j)]
            })
        })
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn to_complex(&self) -> DMatrix<Complex64> {
        let (a, b) = (self.0.nrows() / 2, self.0.ncols() / 2);
        DMatrix::from_fn(a, b, |i, j| Complex64::new(self.0[(i, j)], self.0[(i + a, j)]))
    }

    pub fn mul_vector(&self, f: &IsoVector) -> Result<IsoVector> {
        if self.0.ncols() != f.as_vector().len() {
            return Err(mismatch(format!(
                "{}-column iso matrix applied to length {} vector",
                self.0.ncols(),
                f.as_vector().len()
            )));
        }
        IsoVector::new(&self.0 * f.as_vector())
    }
}

pub fn to_iso_matrix(w_re: &DMatrix<f64>, w_im: &DMatrix<f64>) -> Result<IsoMatrix> {
    IsoMatrix::from_parts(w_re, w_im)
}

/// Compact weight layout `D = [W_R, W_I]` (`n_C x 2p`).
pub fn weights_to_d(w: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (a, b) = w.shape();
    DMatrix::from_fn(a, 2 * b, |i, j| if j < b { w[(i, j)].re } else { w[(i, j - b)].im })
}

pub fn d_to_weights(d: &DMatrix<f64>) -> Result<DMatrix<Complex64>> {
    let (a, two_b) = d.shape();
    if two_b % 2 != 0 {
        return Err(invalid(format!("D has odd column count {two_b}")));
    }
    let b = two_b / 2;
    Ok(DMatrix::from_fn(a, b, |i, j| Complex64::new(d[(i, j)], d[(i, j + b)])))
}

/// The `2p x 2` matrix `[[f_R, f_I], [-f_I, f_R]]` with `D F_k == iso(W f_k)`
/// read column-wise as `[Re, Im]`.
pub fn fk_to_fk_matrix(f_k: &IsoVector) -> DMatrix<f64> {
    let p = f_k.complex_len();
    let v = f_k.as_vector();
    DMatrix::from_fn(2 * p, 2, |i, j| match (i < p, j) {
        (true, 0) => v[i],
        (true, _) => v[i + p],
        (false, 0) => -v[i],
        (false, _) => v[i - p],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_complex(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
        DMatrix::from_fn(rows, cols, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn vector_layout() {
        let v = to_iso_vector(&[c(1.0, 2.0)]);
        assert_eq!(v.as_vector().as_slice(), &[1.0, 2.0]);
        assert_eq!(from_iso_vector(&[1.0, 2.0]).unwrap(), vec![c(1.0, 2.0)]);
        assert!(from_iso_vector(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn imaginary_unit_product() {
        let w = DMatrix::from_element(1, 1, c(0.0, 1.0));
        let iso = IsoMatrix::from_complex(&w);
        let out = iso.mul_vector(&to_iso_vector(&[c(1.0, 0.0)])).unwrap();
        assert_eq!(out.as_vector().as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn iso_product_matches_complex_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random_complex(3, 4, &mut rng);
        let f: Vec<Complex64> = random_complex(4, 1, &mut rng).iter().copied().collect();
        let complex = &w * DMatrix::from_column_slice(4, 1, &f);
        let iso = IsoMatrix::from_complex(&w)
            .mul_vector(&to_iso_vector(&f))
            .unwrap()
            .to_complex();
        for (a, b) in complex.iter().zip(&iso) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn d_layout_round_trip_and_block_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_complex(2, 5, &mut rng);
        let d = weights_to_d(&w);
        assert_eq!(d.shape(), (2, 10));
        assert_eq!(d_to_weights(&d).unwrap(), w);
        let iso = IsoMatrix::from_d(&d).unwrap();
        assert!(iso.has_block_structure());
        assert_eq!(iso, IsoMatrix::from_complex(&w));
        let mut broken = iso.as_matrix().clone();
        broken[(0, 0)] += 1.0;
        assert!(IsoMatrix::new(broken).is_err());
    }

    #[test]
    fn fk_matrix_pattern() {
        let fk = to_iso_vector(&[c(1.0, 2.0)]);
        let m = fk_to_fk_matrix(&fk);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -2.0, 1.0]));
        let zero = fk_to_fk_matrix(&IsoVector::zeros(3));
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn d_times_fk_matrix_is_complex_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_complex(3, 4, &mut rng);
        let f: Vec<Complex64> = random_complex(4, 1, &mut rng).iter().copied().collect();
        let prod = weights_to_d(&w) * fk_to_fk_matrix(&to_iso_vector(&f));
        let expected = &w * DMatrix::from_column_slice(4, 1, &f);
        for i in 0..3 {
            assert!((prod[(i, 0)] - expected[i].re).abs() < 1e-12);
            assert!((prod[(i, 1)] - expected[i].im).abs() < 1e-12);
        }
    }
}
