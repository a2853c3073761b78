//! Dense complex helpers: the least-squares weight solve and a small
//! Hermitian Cholesky used in the per-group inner loops.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Gram matrices with a larger eigenvalue spread fall back to the pseudoinverse.
pub(crate) const GRAM_CONDITION_LIMIT: f64 = 1e12;

/// Solves `W F_l ~= F_calib` in the least-squares sense.
///
/// Uses `W = F_calib F_l^H (F_l F_l^H)^{-1}` when the Gram matrix is
/// well-conditioned and the minimum-norm solution `F_calib F_l^+` otherwise.
pub(crate) fn least_squares_weights(
    f_calib: &DMatrix<Complex64>,
    f_l: &DMatrix<Complex64>,
) -> DMatrix<Complex64> {
    let gram = f_l * f_l.adjoint();
    let rhs = f_calib * f_l.adjoint();
    let eig = gram.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |m, &v| m.max(v));
    let min = eig.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if max > 0.0 && min > 0.0 && max / min <= GRAM_CONDITION_LIMIT {
        if let Some(chol) = gram.cholesky() {
            // W G = B  <=>  G W^H = B^H  (G Hermitian)
            return chol.solve(&rhs.adjoint()).adjoint();
        }
    }
    pseudo_inverse_solve(f_calib, f_l)
}

/// Minimum-norm `F_calib F_l^+` via the SVD of `F_l`.
pub(crate) fn pseudo_inverse_solve(
    f_calib: &DMatrix<Complex64>,
    f_l: &DMatrix<Complex64>,
) -> DMatrix<Complex64> {
    let (p, m) = f_l.shape();
    let svd = f_l.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^H");
    let s_max = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    // singular-value cut matching the Gram condition limit
    let cut = s_max / GRAM_CONDITION_LIMIT.sqrt();
    let mut pinv = DMatrix::<Complex64>::zeros(m, p);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= cut || s == 0.0 {
            continue;
        }
        let inv = 1.0 / s;
        for i in 0..m {
            let vik = v_t[(k, i)].conj() * inv;
            for j in 0..p {
                pinv[(i, j)] += vik * u[(j, k)].conj();
            }
        }
    }
    f_calib * pinv
}

/// In-place Cholesky of a row-major `n x n` Hermitian positive-definite matrix
/// (lower factor overwrites the lower triangle). Returns false if a pivot is
/// not positive.
pub(crate) fn cholesky_in_place(a: &mut [Complex64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j].re;
        for k in 0..j {
            d -= a[j * n + k].norm_sqr();
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = Complex64::new(d, 0.0);
        let inv = 1.0 / d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k].conj();
            }
            a[i * n + j] = s * inv;
        }
    }
    true
}

/// Solves `L L^H x = b` in place given the factor from [`cholesky_in_place`].
pub(crate) fn cholesky_solve_in_place(l: &[Complex64], n: usize, b: &mut [Complex64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i].re;
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i].conj() * b[k];
        }
        b[i] = s / l[i * n + i].re;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
        DMatrix::from_fn(rows, cols, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn small_cholesky_solves_hermitian_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(5, 5, &mut rng);
        let g = &a * a.adjoint() + DMatrix::identity(5, 5) * Complex64::new(0.5, 0.0);
        let b = random(5, 1, &mut rng);
        let mut flat: Vec<Complex64> = (0..25).map(|k| g[(k / 5, k % 5)]).collect();
        assert!(cholesky_in_place(&mut flat, 5));
        let mut x: Vec<Complex64> = b.iter().copied().collect();
        cholesky_solve_in_place(&flat, 5, &mut x);
        let r = &g * DMatrix::from_column_slice(5, 1, &x) - &b;
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut m = vec![Complex64::new(1.0, 0.0), Complex64::new(2.0, 0.0), Complex64::new(2.0, 0.0), Complex64::new(1.0, 0.0)];
        assert!(!cholesky_in_place(&mut m, 2));
    }

    #[test]
    fn pseudo_inverse_gives_minimum_norm_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // 6 unknowns, 3 observations: underdetermined
        let f_l = random(6, 3, &mut rng);
        let f_calib = random(2, 3, &mut rng);
        let w = least_squares_weights(&f_calib, &f_l);
        assert!((&w * &f_l - &f_calib).norm() < 1e-10);
        // minimum norm: rows of W lie in the column space of F_l^H... i.e. W = C F_l^H
        let proj = &f_l * (f_l.adjoint() * &f_l).try_inverse().unwrap() * f_l.adjoint();
        assert!((&w * &proj - &w).norm() < 1e-10);
    }
}
