//! Gaussian-process regression over scalar inputs with an RBF kernel.
//!
//! Fitting is Cholesky-based with jitter escalation; hyperparameters are
//! either fixed or selected by maximizing the log marginal likelihood
//! (multi-start L-BFGS in log-parameter space). In marginal-likelihood mode
//! the targets are standardized internally and predictions are mapped back,
//! so the reported posterior is always in the original units.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lbfgs::{self, LbfgsOptions};
use crate::seed::mix;
use crate::{Error, Result};

/// Positive-definiteness floor added to the covariance diagonal.
pub const JITTER: f64 = 1e-10;

/// RBF kernel hyperparameters plus observation noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GprHyper {
    /// Signal variance σ_f².
    pub signal_variance: f64,
    /// Length scale ℓ.
    pub length_scale: f64,
    /// Noise variance σ_n², floored at [`JITTER`].
    pub noise_variance: f64,
}

impl GprHyper {
    pub fn new(signal_variance: f64, length_scale: f64, noise_variance: f64) -> Result<Self> {
        if !(signal_variance >= 0.0) || !signal_variance.is_finite() {
            return Err(Error::Config(format!("signal_variance must be >= 0, got {signal_variance}")));
        }
        if !(length_scale > 0.0) || !length_scale.is_finite() {
            return Err(Error::Config(format!("length_scale must be > 0, got {length_scale}")));
        }
        if !noise_variance.is_finite() || noise_variance < 0.0 {
            return Err(Error::Config(format!("noise_variance must be finite and >= 0, got {noise_variance}")));
        }
        Ok(Self {
            signal_variance,
            length_scale,
            noise_variance: noise_variance.max(JITTER),
        })
    }
}

/// Squared-exponential covariance between two inputs.
#[inline]
pub fn rbf_kernel(c1: f64, c2: f64, hyper: &GprHyper) -> f64 {
    let d = c1 - c2;
    hyper.signal_variance * (-d * d / (2.0 * hyper.length_scale * hyper.length_scale)).exp()
}

/// Hyperparameter policy for [`fit`].
#[derive(Debug, Clone, Copy)]
pub enum HyperSearch {
    /// Use the given hyperparameters as-is (targets are not standardized).
    Fixed(GprHyper),
    /// Maximize the log marginal likelihood over all three hyperparameters
    /// (targets standardized internally).
    MarginalLikelihood,
}

/// A fitted Gaussian-process posterior.
#[derive(Debug, Clone)]
pub struct GprModel {
    train_x: Vec<f64>,
    train_y: Vec<f64>,
    /// Standardized targets actually conditioned on.
    train_z: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    hyper: GprHyper,
    /// Lower-triangular Cholesky factor of `K + σ_n² I`, row-major.
    chol: Vec<f64>,
    /// `(K + σ_n² I)^{-1} z`.
    alpha: Vec<f64>,
}

/// In-place Cholesky of a row-major symmetric matrix; `None` when a pivot
/// is non-positive.
fn cholesky(mut a: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                a[i * n + j] = sum.sqrt();
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
        for j in (i + 1)..n {
            a[i * n + j] = 0.0;
        }
    }
    Some(a)
}

/// Solve `L w = b` (forward substitution).
fn solve_lower(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut w = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            w[i] -= l[i * n + k] * w[k];
        }
        w[i] /= l[i * n + i];
    }
    w
}

/// Solve `L^T v = b` (backward substitution).
fn solve_lower_transpose(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut v = b.to_vec();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            v[i] -= l[k * n + i] * v[k];
        }
        v[i] /= l[i * n + i];
    }
    v
}

/// Solve `(L L^T) x = b`.
fn solve_spd(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    solve_lower_transpose(l, n, &solve_lower(l, n, b))
}

/// Covariance matrix without the noise term.
fn kernel_matrix(xs: &[f64], hyper: &GprHyper) -> Vec<f64> {
    let n = xs.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = rbf_kernel(xs[i], xs[j], hyper);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Cholesky of `K + σ_n² I` with jitter escalation (×10 up to 1e-4).
/// Returns the factor and the effective noise variance used.
fn factor_with_escalation(xs: &[f64], hyper: &GprHyper) -> Result<(Vec<f64>, f64)> {
    let n = xs.len();
    let base = kernel_matrix(xs, hyper);
    let mut jitter = hyper.noise_variance.max(JITTER);
    loop {
        let mut a = base.clone();
        for i in 0..n {
            a[i * n + i] += jitter;
        }
        if let Some(l) = cholesky(a, n) {
            return Ok((l, jitter));
        }
        jitter *= 10.0;
        if jitter > 1e-4 {
            return Err(Error::SingularModel(format!(
                "covariance not positive definite after jitter escalation to {jitter:.1e} (n = {n})"
            )));
        }
    }
}

/// Log marginal likelihood of standardized targets `z` under `hyper`, and
/// its gradient with respect to `(ln σ_f², ln ℓ, ln σ_n²)`.
fn lml_and_grad(xs: &[f64], z: &[f64], hyper: &GprHyper) -> Result<(f64, [f64; 3])> {
    let n = xs.len();
    let (l, eff_noise) = factor_with_escalation(xs, hyper)?;
    let alpha = solve_spd(&l, n, z);
    let mut lml = -0.5 * z.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>();
    for i in 0..n {
        lml -= l[i * n + i].ln();
    }
    lml -= 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // K^{-1} column by column, then W = α αᵀ - K^{-1}.
    let mut kinv = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = solve_spd(&l, n, &e);
        for i in 0..n {
            kinv[i * n + j] = col[i];
        }
        e[j] = 0.0;
    }

    let ell2 = hyper.length_scale * hyper.length_scale;
    let mut grad = [0.0f64; 3];
    for i in 0..n {
        for j in 0..n {
            let w = alpha[i] * alpha[j] - kinv[i * n + j];
            let k_rbf = rbf_kernel(xs[i], xs[j], hyper);
            let d = xs[i] - xs[j];
            // dK/d ln σ_f² = K_rbf; dK/d ln ℓ = K_rbf d²/ℓ²; dK/d ln σ_n² = σ_n² δ.
            grad[0] += 0.5 * w * k_rbf;
            grad[1] += 0.5 * w * k_rbf * d * d / ell2;
            if i == j {
                grad[2] += 0.5 * w * eff_noise;
            }
        }
    }
    Ok((lml, grad))
}

/// Fit a GP to `(train_x, train_y)` under the given hyperparameter policy.
///
/// Inputs need not be distinct: the jitter floor keeps the covariance
/// positive definite for duplicates.
pub fn fit(train_x: &[f64], train_y: &[f64], search: HyperSearch) -> Result<GprModel> {
    if train_x.len() != train_y.len() || train_x.is_empty() {
        return Err(Error::InvalidInput(format!(
            "need matched non-empty training arrays, got {} xs and {} ys",
            train_x.len(),
            train_y.len()
        )));
    }
    if train_x.iter().chain(train_y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("training data must be finite".into()));
    }
    let n = train_x.len();

    let (hyper, y_mean, y_scale) = match search {
        HyperSearch::Fixed(h) => (GprHyper::new(h.signal_variance, h.length_scale, h.noise_variance)?, 0.0, 1.0),
        HyperSearch::MarginalLikelihood => {
            let (mean, scale) = standardization(train_y);
            let z: Vec<f64> = train_y.iter().map(|y| (y - mean) / scale).collect();
            (ml2_search(train_x, &z)?, mean, scale)
        }
    };

    let z: Vec<f64> = train_y.iter().map(|y| (y - y_mean) / y_scale).collect();
    let (chol, eff_noise) = factor_with_escalation(train_x, &hyper)?;
    let alpha = solve_spd(&chol, n, &z);
    Ok(GprModel {
        train_x: train_x.to_vec(),
        train_y: train_y.to_vec(),
        train_z: z,
        y_mean,
        y_scale,
        hyper: GprHyper {
            noise_variance: eff_noise,
            ..hyper
        },
        chol,
        alpha,
    })
}

/// Mean and scale used for target standardization (identity when fewer than
/// two points or when the targets are constant).
fn standardization(y: &[f64]) -> (f64, f64) {
    if y.len() < 2 {
        return (0.0, 1.0);
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if std > 0.0 && std.is_finite() {
        (mean, std)
    } else {
        (mean, 1.0)
    }
}

/// Deterministic multi-start ML-II search in log-parameter space.
fn ml2_search(xs: &[f64], z: &[f64]) -> Result<GprHyper> {
    let span = {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &x in xs {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        (hi - lo).max(1e-3)
    };

    // First start: unit signal variance (targets are standardized), a
    // length scale of a third of the input span, and small noise.
    let mut starts: Vec<[f64; 3]> = vec![[0.0, (span / 3.0).ln(), (1e-6f64).ln()]];
    let mut rng = ChaCha8Rng::seed_from_u64(mix(0x6790, 0));
    for _ in 1..5 {
        starts.push([
            rng.gen_range((1e-2f64).ln()..(1e1f64).ln()),
            rng.gen_range((span / 50.0).ln()..(2.0 * span).ln()),
            rng.gen_range((1e-8f64).ln()..(1e-2f64).ln()),
        ]);
    }

    let opts = LbfgsOptions {
        memory: 5,
        max_iters: 60,
        grad_tol: 1e-6,
        ..LbfgsOptions::default()
    };

    let mut best: Option<(f64, GprHyper)> = None;
    for theta0 in &starts {
        // A singular covariance at a trial point is a soft wall for the
        // line search, not a fatal error.
        let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
            let hyper = hyper_from_log(theta)?;
            match lml_and_grad(xs, z, &hyper) {
                Ok((lml, grad)) => Ok((-lml, vec![-grad[0], -grad[1], -grad[2]])),
                Err(Error::SingularModel(s)) => Err(Error::NonFinite(s)),
                Err(e) => Err(e),
            }
        };
        let Ok((theta, neg_lml, _)) = lbfgs::minimize(objective, theta0, &opts) else {
            continue;
        };
        let Ok(hyper) = hyper_from_log(&theta) else {
            continue;
        };
        if lml_and_grad(xs, z, &hyper).is_err() {
            continue;
        }
        let lml = -neg_lml;
        if best.as_ref().is_none_or(|(b, _)| lml > *b) {
            best = Some((lml, hyper));
        }
    }
    best.map(|(_, h)| h)
        .ok_or_else(|| Error::SingularModel("every ML-II restart failed".into()))
}

fn hyper_from_log(theta: &[f64]) -> Result<GprHyper> {
    if theta.iter().any(|v| !v.is_finite() || v.abs() > 60.0) {
        return Err(Error::NonFinite("log hyperparameters".into()));
    }
    GprHyper::new(theta[0].exp(), theta[1].exp(), theta[2].exp().max(JITTER))
}

impl GprModel {
    pub fn train_x(&self) -> &[f64] {
        &self.train_x
    }

    pub fn train_y(&self) -> &[f64] {
        &self.train_y
    }

    pub fn hyper(&self) -> &GprHyper {
        &self.hyper
    }

    /// Lower-triangular Cholesky factor of `K + σ_n² I`, row-major.
    pub fn chol(&self) -> &[f64] {
        &self.chol
    }

    fn predict_raw(&self, c: f64) -> (f64, f64) {
        let n = self.train_x.len();
        let k_star: Vec<f64> = self.train_x.iter().map(|&x| rbf_kernel(c, x, &self.hyper)).collect();
        let mean_z: f64 = k_star.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let w = solve_lower(&self.chol, n, &k_star);
        let var_z = self.hyper.signal_variance - w.iter().map(|v| v * v).sum::<f64>();
        (mean_z, var_z)
    }

    /// Posterior mean and standard deviation at `c`, in original units.
    pub fn predict(&self, c: f64) -> (f64, f64) {
        let (mean_z, var_z) = self.predict_raw(c);
        let mean = mean_z * self.y_scale + self.y_mean;
        let std = var_z.max(0.0).sqrt() * self.y_scale;
        (mean, std)
    }

    /// Log marginal likelihood of the (standardized) targets under the
    /// fitted hyperparameters.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.train_x.len();
        let mut lml = -0.5 * self.train_z.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            lml -= self.chol[i * n + i].ln();
        }
        lml - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed(sf2: f64, ell: f64, sn2: f64) -> HyperSearch {
        HyperSearch::Fixed(GprHyper::new(sf2, ell, sn2).unwrap())
    }

    /// Dense direct-solve oracle: Gaussian elimination with partial
    /// pivoting, no Cholesky anywhere.
    fn dense_solve(a: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
        let mut m: Vec<f64> = a.to_vec();
        let mut rhs = b.to_vec();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs())).unwrap();
            if piv != col {
                for k in 0..n {
                    m.swap(col * n + k, piv * n + k);
                }
                rhs.swap(col, piv);
            }
            let p = m[col * n + col];
            for row in (col + 1)..n {
                let f = m[row * n + col] / p;
                for k in col..n {
                    m[row * n + k] -= f * m[col * n + k];
                }
                rhs[row] -= f * rhs[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut s = rhs[row];
            for k in (row + 1)..n {
                s -= m[row * n + k] * x[k];
            }
            x[row] = s / m[row * n + row];
        }
        x
    }

    /// Dense oracle for posterior mean/variance and LML at fixed hypers,
    /// replicating the (no-standardization) fixed-mode pipeline.
    fn dense_oracle(xs: &[f64], ys: &[f64], hyper: &GprHyper, q: f64) -> (f64, f64, f64) {
        let n = xs.len();
        let mut k = kernel_matrix(xs, hyper);
        for i in 0..n {
            k[i * n + i] += hyper.noise_variance;
        }
        let alpha = dense_solve(&k, n, ys);
        let k_star: Vec<f64> = xs.iter().map(|&x| rbf_kernel(q, x, hyper)).collect();
        let mean: f64 = k_star.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let kinv_kstar = dense_solve(&k, n, &k_star);
        let var = hyper.signal_variance - k_star.iter().zip(&kinv_kstar).map(|(a, b)| a * b).sum::<f64>();
        // log det via LU-free route: product of pivots would need the
        // factorization; use the identity det = prod of eigen... instead
        // compute det by Gaussian elimination on a fresh copy.
        let det = {
            let mut m = k.clone();
            let mut det = 1.0;
            for col in 0..n {
                let piv = (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs())).unwrap();
                if piv != col {
                    for t in 0..n {
                        m.swap(col * n + t, piv * n + t);
                    }
                    det = -det;
                }
                let p = m[col * n + col];
                det *= p;
                for row in (col + 1)..n {
                    let f = m[row * n + col] / p;
                    for t in col..n {
                        m[row * n + t] -= f * m[col * n + t];
                    }
                }
            }
            det
        };
        let yt_alpha: f64 = ys.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let lml = -0.5 * yt_alpha - 0.5 * det.ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        (mean, var, lml)
    }

    #[test]
    fn kernel_basics() {
        let h = GprHyper::new(2.0, 0.3, JITTER).unwrap();
        assert_eq!(rbf_kernel(0.4, 0.4, &h), 2.0);
        let h1 = GprHyper::new(1.0, 1.0, JITTER).unwrap();
        let v = rbf_kernel(0.0, std::f64::consts::SQRT_2, &h1);
        assert!((v - (-1.0f64).exp()).abs() < 1e-12);
        // Symmetry over random pairs.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            assert_eq!(rbf_kernel(a, b, &h), rbf_kernel(b, a, &h));
        }
    }

    #[test]
    fn single_point_interpolates() {
        let model = fit(&[0.5], &[-1.0], fixed(1.0, 0.2, JITTER)).unwrap();
        let (mean, std) = model.predict(0.5);
        assert!((mean - (-1.0)).abs() < 1e-6);
        assert!(std < 1e-4);
    }

    #[test]
    fn two_point_posterior_matches_hand_solution() {
        let hyper = GprHyper::new(1.0, 1.0, JITTER).unwrap();
        let model = fit(&[0.0, 1.0], &[0.0, 1.0], HyperSearch::Fixed(hyper)).unwrap();
        let (mean, _) = model.predict(0.5);
        // Hand 2x2 solve: K = [[1+j, e^-0.5], [e^-0.5, 1+j]], k* = e^-0.125 [1, 1].
        let k01 = (-0.5f64).exp();
        let diag = 1.0 + JITTER;
        let det = diag * diag - k01 * k01;
        let alpha = [(-k01) / det, diag / det]; // K^{-1} [0, 1]^T
        let ks = (-0.125f64).exp();
        let expected = ks * (alpha[0] + alpha[1]);
        assert!((mean - expected).abs() < 1e-10, "{mean} vs {expected}");
    }

    #[test]
    fn output_scaling_scales_predictions() {
        let xs = [0.1, 0.35, 0.6, 0.9];
        let ys = [0.3, -0.2, 0.5, 0.1];
        let model = fit(&xs, &ys, fixed(1.0, 0.2, JITTER)).unwrap();
        let ys10: Vec<f64> = ys.iter().map(|y| 10.0 * y).collect();
        let scaled = fit(&xs, &ys10, fixed(100.0, 0.2, 100.0 * JITTER)).unwrap();
        for q in [0.0, 0.2, 0.5, 0.77, 1.0] {
            let (m1, s1) = model.predict(q);
            let (m10, s10) = scaled.predict(q);
            assert!((m10 - 10.0 * m1).abs() < 1e-6, "mean at {q}: {m10} vs {}", 10.0 * m1);
            assert!((s10 - 10.0 * s1).abs() < 1e-6);
        }
    }

    #[test]
    fn interpolation_and_prior_reversion() {
        let xs = [0.2, 0.4, 0.6];
        let ys = [1.0, -0.5, 0.25];
        let model = fit(&xs, &ys, fixed(2.0, 0.05, JITTER)).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            let (mean, std) = model.predict(*x);
            assert!((mean - y).abs() < 1e-6, "at {x}: {mean} vs {y}");
            assert!(std < 1e-4);
        }
        // Far from the data the posterior reverts to the zero-mean prior.
        let (mean, std) = model.predict(50.0);
        assert!(mean.abs() < 1e-9);
        assert!((std - 2.0f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn batch_predict_equals_pointwise() {
        let model = fit(&[0.1, 0.5, 0.9], &[0.0, 1.0, -1.0], fixed(1.0, 0.3, 1e-6)).unwrap();
        let grid: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let batch: Vec<(f64, f64)> = grid.iter().map(|&c| model.predict(c)).collect();
        for (c, out) in grid.iter().zip(&batch) {
            assert_eq!(*out, model.predict(*c));
        }
    }

    #[test]
    fn single_point_lml_analytic() {
        // k(c,c) + σ_n² = 1 with y = 0 gives -0.5 ln(2π).
        let model = fit(&[0.3], &[0.0], fixed(1.0 - JITTER, 1.0, JITTER)).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((model.log_marginal_likelihood() - expected).abs() < 1e-9);
    }

    #[test]
    fn cholesky_pipeline_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..5 {
            let n = 10;
            let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
            let (amp, freq, phase) = (
                rng.gen_range(0.5..2.0),
                rng.gen_range(1.0..6.0),
                rng.gen_range(0.0..3.0),
            );
            let ys: Vec<f64> = xs.iter().map(|x| amp * (freq * x + phase).sin()).collect();
            let hyper = GprHyper::new(
                rng.gen_range(0.5..2.0),
                rng.gen_range(0.05..0.5),
                rng.gen_range(1e-6..1e-3),
            )
            .unwrap();
            let model = fit(&xs, &ys, HyperSearch::Fixed(hyper)).unwrap();
            for q in [0.0, 0.33, 0.71, 1.0] {
                let (mean, std) = model.predict(q);
                let (dm, dv, _) = dense_oracle(&xs, &ys, model.hyper(), q);
                assert!((mean - dm).abs() < 1e-8, "trial {trial} mean {mean} vs {dm}");
                assert!((std * std - dv.max(0.0)).abs() < 1e-8, "trial {trial} var");
            }
            let (_, _, dlml) = dense_oracle(&xs, &ys, model.hyper(), 0.5);
            assert!(
                (model.log_marginal_likelihood() - dlml).abs() < 1e-8,
                "trial {trial} lml {} vs {dlml}",
                model.log_marginal_likelihood()
            );
        }
    }

    #[test]
    fn duplicate_points_stay_positive_definite_and_match_dense() {
        let xs = [0.4, 0.4, 0.7];
        let ys = [0.2, 0.2, -0.1];
        let model = fit(&xs, &ys, fixed(1.0, 0.2, JITTER)).unwrap();
        let (_, _, dlml) = dense_oracle(&xs, &ys, model.hyper(), 0.5);
        assert!((model.log_marginal_likelihood() - dlml).abs() < 1e-8);
        let (mean, _) = model.predict(0.4);
        assert!((mean - 0.2).abs() < 1e-5);
    }

    #[test]
    fn cholesky_reconstruction_error_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 60;
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (6.0 * x).sin()).collect();
        let model = fit(&xs, &ys, fixed(1.0, 0.15, 1e-8)).unwrap();
        let l = model.chol();
        let mut k = kernel_matrix(&xs, model.hyper());
        for i in 0..n {
            k[i * n + i] += model.hyper().noise_variance;
        }
        for i in 0..n {
            for j in 0..n {
                let mut v = 0.0;
                for t in 0..n {
                    v += l[i * n + t] * l[j * n + t];
                }
                assert!((v - k[i * n + j]).abs() < 1e-8, "({i},{j}): {v} vs {}", k[i * n + j]);
            }
        }
    }

    #[test]
    fn posterior_variance_non_negative_on_grid() {
        let xs: Vec<f64> = (0..20).map(|i| 0.1 + 0.9 * i as f64 / 19.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -(x - 0.55) * (x - 0.55)).collect();
        let model = fit(&xs, &ys, fixed(1.0, 0.1, JITTER)).unwrap();
        for i in 0..1001 {
            let c = 0.1 + 0.9 * i as f64 / 1000.0;
            let (_, raw_var) = model.predict_raw(c);
            assert!(raw_var > -1e-12, "raw variance {raw_var} at {c}");
            let (_, std) = model.predict(c);
            assert!(std >= 0.0 && std.is_finite());
        }
    }

    #[test]
    fn extra_noise_free_point_never_raises_variance() {
        let xs = [0.15, 0.4, 0.8];
        let ys = [0.1, -0.3, 0.6];
        let before = fit(&xs, &ys, fixed(1.0, 0.2, JITTER)).unwrap();
        let after = fit(&[0.15, 0.4, 0.8, 0.6], &[0.1, -0.3, 0.6, 0.2], fixed(1.0, 0.2, JITTER)).unwrap();
        for i in 0..1001 {
            let c = 0.1 + 0.9 * i as f64 / 1000.0;
            let (_, s_before) = before.predict(c);
            let (_, s_after) = after.predict(c);
            assert!(
                s_after * s_after <= s_before * s_before + 1e-8,
                "variance rose at {c}: {s_after} > {s_before}"
            );
        }
    }

    #[test]
    fn ml2_recovers_a_smooth_function() {
        let xs: Vec<f64> = (0..25).map(|i| 0.1 + 0.9 * i as f64 / 24.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -(x - 0.55) * (x - 0.55)).collect();
        let model = fit(&xs, &ys, HyperSearch::MarginalLikelihood).unwrap();
        // Interpolation quality on held-out queries.
        for i in 0..50 {
            let c = 0.12 + 0.86 * i as f64 / 49.0;
            let truth = -(c - 0.55) * (c - 0.55);
            let (mean, _) = model.predict(c);
            assert!((mean - truth).abs() < 1e-3, "at {c}: {mean} vs {truth}");
        }
        // Deterministic refit.
        let again = fit(&xs, &ys, HyperSearch::MarginalLikelihood).unwrap();
        assert_eq!(model.hyper(), again.hyper());
    }

    #[test]
    fn mismatched_or_empty_inputs_rejected() {
        assert!(fit(&[0.1, 0.2], &[1.0], fixed(1.0, 0.1, JITTER)).is_err());
        assert!(fit(&[], &[], fixed(1.0, 0.1, JITTER)).is_err());
        assert!(fit(&[f64::NAN], &[0.0], fixed(1.0, 0.1, JITTER)).is_err());
    }
}
