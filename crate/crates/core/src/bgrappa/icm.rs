//! Iterated conditional modes for one estimation group.
//!
//! Model, all in the real isomorphic representation:
//! `f_e ~ N(W f_k, tau2 I)`, `f_k ~ N(f_k0, tau2/n_k I)`,
//! `D ~ N(D_0, tau2/n_w I)`, `tau2 ~ IG(alpha, delta)`, with `W = ISO(D)` and
//! `D = [W_R, W_I]`.
//!
//! Two routes are kept. The reference route evaluates the printed real
//! closed forms with dense solves. The fast route works on complex values:
//! the `f_k` mode through a Woodbury identity on an `n_C x n_C` system and the
//! `D` mode as a rank-one Sherman-Morrison update.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{Hyperparameters, IcmConfig, IcmState, Tau2Rule};
use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg::{cholesky_in_place, cholesky_solve_in_place};
use crate::tensor::iso::{d_to_weights, fk_to_fk_matrix, weights_to_d, IsoMatrix, IsoVector};

fn check_shapes(state: &IcmState, f_e: &IsoVector, hyper: &Hyperparameters) -> Result<()> {
    let (n_c, two_p) = hyper.d0.shape();
    if state.d.shape() != (n_c, two_p)
        || state.f_k.as_vector().len() != two_p
        || hyper.f_k0.as_vector().len() != two_p
        || f_e.as_vector().len() != 2 * n_c
    {
        return Err(mismatch(format!(
            "ICM shapes disagree: D {:?}, D_0 {:?}, f_k {}, f_k0 {}, f_e {}",
            state.d.shape(),
            hyper.d0.shape(),
            state.f_k.as_vector().len(),
            hyper.f_k0.as_vector().len(),
            f_e.as_vector().len()
        )));
    }
    Ok(())
}

fn spd_solve(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.cholesky()
        .map(|c| c.solve(&b))
        .ok_or_else(|| Error::NonFinite("system matrix lost positive definiteness".into()))
}

/// Conditional mode of `f_k`: `(W'W + n_k I)^{-1} (W' f_e + n_k f_k0)`.
pub fn icm_update_fk(state: &IcmState, f_e: &IsoVector, hyper: &Hyperparameters) -> Result<IsoVector> {
    check_shapes(state, f_e, hyper)?;
    let w = IsoMatrix::from_d(&state.d)?;
    let w = w.as_matrix();
    let two_p = w.ncols();
    let a = w.transpose() * w + DMatrix::identity(two_p, two_p) * hyper.n_k;
    let b = w.transpose() * f_e.as_vector() + hyper.f_k0.as_vector() * hyper.n_k;
    let x = spd_solve(a, DMatrix::from_column_slice(two_p, 1, b.as_slice()))?;
    IsoVector::new(DVector::from_column_slice(x.as_slice()))
}

/// Conditional mode of `D`: `(F_e F_k' + n_w D_0)(F_k F_k' + n_w I)^{-1}`.
pub fn icm_update_d(state: &IcmState, f_e: &IsoVector, hyper: &Hyperparameters) -> Result<DMatrix<f64>> {
    check_shapes(state, f_e, hyper)?;
    let n_c = hyper.d0.nrows();
    let f_ev = f_e.as_vector();
    let fe_mat = DMatrix::from_fn(n_c, 2, |i, j| f_ev[i + j * n_c]);
    let fk = fk_to_fk_matrix(&state.f_k);
    let two_p = fk.nrows();
    let s = &fk * fk.transpose() + DMatrix::identity(two_p, two_p) * hyper.n_w;
    let b = fe_mat * fk.transpose() + &hyper.d0 * hyper.n_w;
    // D S = B with S symmetric  <=>  S D' = B'
    Ok(spd_solve(s, b.transpose())?.transpose())
}

/// The quadratic part of the posterior exponent:
/// `|f_e - W f_k|^2 + n_k |f_k - f_k0|^2 + n_w tr[(D - D_0)(D - D_0)']`.
pub fn quadratic_form(state: &IcmState, f_e: &IsoVector, hyper: &Hyperparameters) -> Result<f64> {
    check_shapes(state, f_e, hyper)?;
    let w = IsoMatrix::from_d(&state.d)?;
    let resid = f_e.as_vector() - w.as_matrix() * state.f_k.as_vector();
    let prior_f = state.f_k.as_vector() - hyper.f_k0.as_vector();
    let prior_d = &state.d - &hyper.d0;
    Ok(resid.norm_squared() + hyper.n_k * prior_f.norm_squared() + hyper.n_w * prior_d.norm_squared())
}

/// `Theta = quadratic_form + alpha * delta`.
pub fn theta(state: &IcmState, f_e: &IsoVector, hyper: &Hyperparameters) -> Result<f64> {
    Ok(quadratic_form(state, f_e, hyper)? + hyper.alpha * hyper.delta)
}

pub(crate) fn tau2_from_quadratic(q: f64, n_c: usize, p: usize, hyper_alpha: f64, hyper_delta: f64, rule: Tau2Rule) -> f64 {
    let (n_c, p) = (n_c as f64, p as f64);
    match rule {
        Tau2Rule::Printed => {
            (q + hyper_alpha * hyper_delta) / (2.0 * (2.0 * n_c + 2.0 * p + 2.0 * n_c * p + 1.0))
        }
        Tau2Rule::ConditionalMode => {
            (q + 2.0 * hyper_delta) / (2.0 * (n_c + p + n_c * p + hyper_alpha + 1.0))
        }
    }
}

/// `tau2 = Theta / (2 (2 n_C + 2 p + 2 n_C p + 1))`.
pub fn icm_update_tau2(state: &IcmState, f_e: &IsoVector, hyper: &Hyperparameters) -> Result<f64> {
    icm_update_tau2_with(state, f_e, hyper, Tau2Rule::Printed)
}

pub fn icm_update_tau2_with(
    state: &IcmState,
    f_e: &IsoVector,
    hyper: &Hyperparameters,
    rule: Tau2Rule,
) -> Result<f64> {
    let q = quadratic_form(state, f_e, hyper)?;
    let tau2 = tau2_from_quadratic(q, hyper.n_coils(), hyper.p(), hyper.alpha, hyper.delta, rule);
    if !(tau2 > 0.0) || !tau2.is_finite() {
        return Err(Error::NonFinite(format!("tau2 update gave {tau2}")));
    }
    Ok(tau2)
}

/// Log of the joint posterior density up to an additive constant:
/// `-(n_C + p + n_C p + alpha + 1) ln tau2 - (Q + 2 delta) / (2 tau2)`.
pub fn log_posterior(state: &IcmState, f_e: &IsoVector, hyper: &Hyperparameters) -> Result<f64> {
    let q = quadratic_form(state, f_e, hyper)?;
    Ok(log_posterior_from_quadratic(q, state.tau2, hyper.n_coils(), hyper.p(), hyper.alpha, hyper.delta))
}

pub(crate) fn log_posterior_from_quadratic(q: f64, tau2: f64, n_c: usize, p: usize, alpha: f64, delta: f64) -> f64 {
    let (n_c, p) = (n_c as f64, p as f64);
    -(n_c + p + n_c * p + alpha + 1.0) * tau2.ln() - (q + 2.0 * delta) / (2.0 * tau2)
}

/// One group's ICM problem in complex form. `w0` is row-major `n_C x p`.
pub(crate) struct GroupProblem<'a> {
    pub f_e: &'a [Complex64],
    pub f0: &'a [Complex64],
    pub w0: &'a [Complex64],
    pub n_k: f64,
    pub n_w: f64,
    pub alpha: f64,
    pub delta: f64,
}

/// Scratch buffers reused across groups.
#[derive(Default)]
pub(crate) struct Workspace {
    pub f: Vec<Complex64>,
    pub w: Vec<Complex64>,
    f_new: Vec<Complex64>,
    w_new: Vec<Complex64>,
    b: Vec<Complex64>,
    gram: Vec<Complex64>,
    y: Vec<Complex64>,
    r: Vec<Complex64>,
}

pub(crate) struct GroupOutcome {
    pub tau2: f64,
    pub iterations: usize,
}

impl GroupProblem<'_> {
    fn n_c(&self) -> usize {
        self.f_e.len()
    }

    fn p(&self) -> usize {
        self.f0.len()
    }

    /// `f = (W^H W + n_k I)^{-1} (W^H f_e + n_k f0)`.
    pub fn update_f(&self, w: &[Complex64], ws_b: &mut Vec<Complex64>, gram: &mut Vec<Complex64>, y: &mut Vec<Complex64>, out: &mut Vec<Complex64>) -> Result<()> {
        let (n_c, p, n_k) = (self.n_c(), self.p(), self.n_k);
        ws_b.clear();
        ws_b.extend(self.f0.iter().map(|v| v * n_k));
        for i in 0..n_c {
            let fe = self.f_e[i];
            let row = &w[i * p..(i + 1) * p];
            for (b, wij) in ws_b.iter_mut().zip(row) {
                *b += wij.conj() * fe;
            }
        }
        out.clear();
        if p <= n_c {
            gram.clear();
            gram.resize(p * p, Complex64::new(0.0, 0.0));
            for i in 0..n_c {
                let row = &w[i * p..(i + 1) * p];
                for j in 0..p {
                    let cj = row[j].conj();
                    for k in 0..=j {
                        gram[j * p + k] += cj * row[k];
                    }
                }
            }
            for j in 0..p {
                gram[j * p + j] += n_k;
            }
            if !cholesky_in_place(gram, p) {
                return Err(Error::NonFinite("f_k system not positive definite".into()));
            }
            out.extend_from_slice(ws_b);
            cholesky_solve_in_place(gram, p, out);
        } else {
            // Woodbury: (n_k I + W^H W)^{-1} = (I - W^H (n_k I + W W^H)^{-1} W) / n_k
            gram.clear();
            gram.resize(n_c * n_c, Complex64::new(0.0, 0.0));
            for i in 0..n_c {
                let ri = &w[i * p..(i + 1) * p];
                for k in 0..=i {
                    let rk = &w[k * p..(k + 1) * p];
                    let mut s = Complex64::new(0.0, 0.0);
                    for j in 0..p {
                        s += ri[j] * rk[j].conj();
                    }
                    gram[i * n_c + k] = s;
                }
                gram[i * n_c + i] += n_k;
            }
            if !cholesky_in_place(gram, n_c) {
                return Err(Error::NonFinite("f_k system not positive definite".into()));
            }
            y.clear();
            for i in 0..n_c {
                let ri = &w[i * p..(i + 1) * p];
                y.push(ri.iter().zip(ws_b.iter()).map(|(a, b)| a * b).sum());
            }
            cholesky_solve_in_place(gram, n_c, y);
            out.extend_from_slice(ws_b);
            for i in 0..n_c {
                let yi = y[i];
                let ri = &w[i * p..(i + 1) * p];
                for (o, wij) in out.iter_mut().zip(ri) {
                    *o -= wij.conj() * yi;
                }
            }
            let inv = 1.0 / n_k;
            for o in out.iter_mut() {
                *o *= inv;
            }
        }
        Ok(())
    }

    /// `W = W0 + (f_e - W0 f) f^H / (n_w + |f|^2)`.
    pub fn update_w(&self, f: &[Complex64], r: &mut Vec<Complex64>, out: &mut Vec<Complex64>) {
        let (n_c, p) = (self.n_c(), self.p());
        let scale = 1.0 / (self.n_w + f.iter().map(|v| v.norm_sqr()).sum::<f64>());
        r.clear();
        for i in 0..n_c {
            let row = &self.w0[i * p..(i + 1) * p];
            let wf: Complex64 = row.iter().zip(f).map(|(a, b)| a * b).sum();
            r.push((self.f_e[i] - wf) * scale);
        }
        out.clear();
        out.extend_from_slice(self.w0);
        for i in 0..n_c {
            let ri = r[i];
            for (o, fj) in out[i * p..(i + 1) * p].iter_mut().zip(f) {
                *o += ri * fj.conj();
            }
        }
    }

    pub fn quadratic(&self, f: &[Complex64], w: &[Complex64]) -> f64 {
        let p = self.p();
        let mut q = 0.0;
        for (i, fe) in self.f_e.iter().enumerate() {
            let row = &w[i * p..(i + 1) * p];
            let wf: Complex64 = row.iter().zip(f).map(|(a, b)| a * b).sum();
            q += (fe - wf).norm_sqr();
        }
        q += self.n_k * f.iter().zip(self.f0).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
        q += self.n_w * w.iter().zip(self.w0).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
        q
    }

    pub fn tau2(&self, q: f64, rule: Tau2Rule) -> f64 {
        tau2_from_quadratic(q, self.n_c(), self.p(), self.alpha, self.delta, rule)
    }

    /// Runs the sweeps; the final `f_k` and `W` are left in `ws.f` / `ws.w`.
    /// `on_sweep` sees `(f, w, tau2)` after initialization and after every sweep.
    pub fn solve(
        &self,
        config: &IcmConfig,
        ws: &mut Workspace,
        mut on_sweep: impl FnMut(&[Complex64], &[Complex64], f64),
    ) -> Result<GroupOutcome> {
        ws.f.clear();
        ws.f.extend_from_slice(self.f0);
        ws.w.clear();
        ws.w.extend_from_slice(self.w0);
        let mut tau2 = self.tau2(self.quadratic(&ws.f, &ws.w), config.tau2_rule);
        on_sweep(&ws.f, &ws.w, tau2);
        let mut iterations = 0;
        for it in 1..=config.max_iter {
            iterations = it;
            self.update_f(&ws.w, &mut ws.b, &mut ws.gram, &mut ws.y, &mut ws.f_new)?;
            self.update_w(&ws.f_new, &mut ws.r, &mut ws.w_new);
            let q = self.quadratic(&ws.f_new, &ws.w_new);
            tau2 = self.tau2(q, config.tau2_rule);
            if !q.is_finite() || !(tau2 > 0.0) || !tau2.is_finite() {
                return Err(Error::NonFinite(format!("ICM sweep {it} gave tau2 = {tau2}")));
            }
            let change = relative_change(&ws.f, &ws.f_new).max(relative_change(&ws.w, &ws.w_new));
            std::mem::swap(&mut ws.f, &mut ws.f_new);
            std::mem::swap(&mut ws.w, &mut ws.w_new);
            on_sweep(&ws.f, &ws.w, tau2);
            if change < config.rel_tol {
                break;
            }
        }
        Ok(GroupOutcome { tau2, iterations })
    }
}

fn relative_change(old: &[Complex64], new: &[Complex64]) -> f64 {
    let mut diff = 0.0;
    let mut base = 0.0;
    for (a, b) in old.iter().zip(new) {
        diff += (a - b).norm_sqr();
        base += a.norm_sqr();
    }
    if diff == 0.0 {
        0.0
    } else {
        (diff / base.max(f64::MIN_POSITIVE)).sqrt()
    }
}

fn row_major(w: &DMatrix<Complex64>) -> Vec<Complex64> {
    let (r, c) = w.shape();
    (0..r * c).map(|k| w[(k / c, k % c)]).collect()
}

fn from_row_major(v: &[Complex64], rows: usize, cols: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(rows, cols, |i, j| v[i * cols + j])
}

/// MAP estimate for one group, starting from the prior means.
pub fn icm_map(f_e: &IsoVector, hyper: &Hyperparameters, config: &IcmConfig) -> Result<IcmState> {
    Ok(icm_map_traced(f_e, hyper, config)?.0)
}

/// [`icm_map`] plus the log posterior after initialization and after each sweep.
pub fn icm_map_traced(
    f_e: &IsoVector,
    hyper: &Hyperparameters,
    config: &IcmConfig,
) -> Result<(IcmState, Vec<f64>)> {
    hyper.validate()?;
    config.validate()?;
    let n_c = hyper.n_coils();
    if f_e.complex_len() != n_c {
        return Err(mismatch(format!(
            "f_e has {} complex entries, expected {n_c}",
            f_e.complex_len()
        )));
    }
    let fe = f_e.to_complex();
    let f0 = hyper.f_k0.to_complex();
    let w0 = row_major(&d_to_weights(&hyper.d0)?);
    let problem = GroupProblem {
        f_e: &fe,
        f0: &f0,
        w0: &w0,
        n_k: hyper.n_k,
        n_w: hyper.n_w,
        alpha: hyper.alpha,
        delta: hyper.delta,
    };
    let mut ws = Workspace::default();
    let mut trace = Vec::new();
    let outcome = problem.solve(config, &mut ws, |f, w, tau2| {
        let q = problem.quadratic(f, w);
        trace.push(log_posterior_from_quadratic(q, tau2, n_c, f.len(), hyper.alpha, hyper.delta));
    })?;
    let state = IcmState {
        f_k: IsoVector::from_complex(&ws.f),
        d: weights_to_d(&from_row_major(&ws.w, n_c, f0.len())),
        tau2: outcome.tau2,
        iterations: outcome.iterations,
    };
    Ok((state, trace))
}

/// The same schedule evaluated with the printed real closed forms; kept as an
/// independent check on the fast route.
pub fn icm_map_reference(f_e: &IsoVector, hyper: &Hyperparameters, config: &IcmConfig) -> Result<IcmState> {
    hyper.validate()?;
    config.validate()?;
    let mut state = IcmState {
        f_k: hyper.f_k0.clone(),
        d: hyper.d0.clone(),
        tau2: 1.0,
        iterations: 0,
    };
    state.tau2 = icm_update_tau2_with(&state, f_e, hyper, config.tau2_rule)?;
    for it in 1..=config.max_iter {
        let f_new = icm_update_fk(&state, f_e, hyper)?;
        let f_change = (f_new.as_vector() - state.f_k.as_vector()).norm()
            / state.f_k.as_vector().norm().max(f64::MIN_POSITIVE);
        state.f_k = f_new;
        let d_new = icm_update_d(&state, f_e, hyper)?;
        let d_change = (&d_new - &state.d).norm() / state.d.norm().max(f64::MIN_POSITIVE);
        state.d = d_new;
        state.tau2 = icm_update_tau2_with(&state, f_e, hyper, config.tau2_rule)?;
        state.iterations = it;
        if f_change.max(d_change) < config.rel_tol {
            break;
        }
    }
    Ok(state)
}

pub(crate) fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(invalid(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}
