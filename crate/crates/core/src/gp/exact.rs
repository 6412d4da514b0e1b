//! Generic exact Gaussian-process regression over any [`CovKernel`]: Gram
//! assembly, marginal likelihood with analytic gradients, multi-start
//! hyperparameter fitting, posteriors and closed-form leave-one-out.
//!
//! All quantities here are in the model's standardized output units.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::kernel::CovKernel;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, JitteredCholesky};
use crate::optim::{minimize_lbfgs, LbfgsOptions};

/// Bounds on the inferred residual noise variance (standardized units).
pub const NOISE_BOUNDS: (f64, f64) = (1e-8, 10.0);

/// A conditioned exact GP with cached factorization.
#[derive(Clone, Debug)]
pub struct ExactGp<K: CovKernel> {
    pub kernel: K,
    pub params: Vec<f64>,
    pub noise_var: f64,
    pub inputs: Vec<K::Input>,
    pub y: DVector<f64>,
    /// Known per-point observation variances (squared SEMs).
    pub fixed_noise: DVector<f64>,
    pub factor: JitteredCholesky,
    pub alpha: DVector<f64>,
}

pub(crate) fn gram<K: CovKernel>(kernel: &K, params: &[f64], inputs: &[K::Input]) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(params, &inputs[i], &inputs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

pub(crate) fn cross<K: CovKernel>(
    kernel: &K,
    params: &[f64],
    rows: &[K::Input],
    cols: &[K::Input],
) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| kernel.eval(params, &rows[i], &cols[j]))
}

fn regularized<K: CovKernel>(
    kernel: &K,
    params: &[f64],
    inputs: &[K::Input],
    fixed_noise: &DVector<f64>,
    noise_var: f64,
) -> DMatrix<f64> {
    let mut k = gram(kernel, params, inputs);
    for i in 0..inputs.len() {
        k[(i, i)] += fixed_noise[i] + noise_var;
    }
    k
}

impl<K: CovKernel> ExactGp<K> {
    /// `[kernel params.., ln noise_var]`, the layout of [`FitOptions::warm_starts`].
    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.params.clone();
        t.push(self.noise_var.max(f64::MIN_POSITIVE).ln());
        t
    }

    /// Conditions a GP with fixed hyperparameters on the given data.
    pub fn new(
        kernel: K,
        params: Vec<f64>,
        noise_var: f64,
        inputs: Vec<K::Input>,
        y: DVector<f64>,
        fixed_noise: DVector<f64>,
    ) -> Result<Self> {
        if inputs.len() != y.len() || y.len() != fixed_noise.len() {
            return Err(Error::Contract(format!(
                "{} inputs, {} targets, {} noise entries",
                inputs.len(),
                y.len(),
                fixed_noise.len()
            )));
        }
        if params.len() != kernel.n_params() {
            return Err(Error::Contract(format!(
                "kernel expects {} parameters, got {}",
                kernel.n_params(),
                params.len()
            )));
        }
        let k = regularized(&kernel, &params, &inputs, &fixed_noise, noise_var);
        let factor = cholesky_jittered(&k)?;
        let alpha = factor.solve(&y);
        Ok(Self {
            kernel,
            params,
            noise_var,
            inputs,
            y,
            fixed_noise,
            factor,
            alpha,
        })
    }

    pub fn n(&self) -> usize {
        self.inputs.len()
    }

    /// Per-point total observation variance on the diagonal (fixed + inferred + jitter).
    pub fn obs_noise(&self, i: usize) -> f64 {
        self.fixed_noise[i] + self.noise_var + self.factor.jitter
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.n() as f64;
        -0.5 * self.y.dot(&self.alpha) - 0.5 * self.factor.log_det() - 0.5 * n * (2.0 * PI).ln()
    }

    pub fn prior_cov(&self, q: &[K::Input]) -> DMatrix<f64> {
        gram(&self.kernel, &self.params, q)
    }

    /// `k(X, q)` for the training inputs X.
    pub fn cross_train(&self, q: &[K::Input]) -> DMatrix<f64> {
        cross(&self.kernel, &self.params, &self.inputs, q)
    }

    /// Joint latent posterior at the query inputs.
    pub fn posterior(&self, q: &[K::Input]) -> (DVector<f64>, DMatrix<f64>) {
        let kq = self.cross_train(q);
        let mean = kq.transpose() * &self.alpha;
        let mut cov = self.prior_cov(q);
        if self.n() > 0 {
            let v = self.factor.solve_lower(&kq);
            cov -= v.transpose() * v;
        }
        crate::linalg::symmetrize(&mut cov);
        (mean, cov)
    }

    pub fn posterior_mean_at(&self, q: &K::Input) -> f64 {
        self.inputs
            .iter()
            .zip(self.alpha.iter())
            .map(|(x, a)| self.kernel.eval(&self.params, x, q) * a)
            .sum()
    }

    /// Closed-form leave-one-out predictive means and variances (the
    /// variance includes the held-out point's observation noise).
    pub fn loo(&self) -> (DVector<f64>, DVector<f64>) {
        let kinv = self.factor.inverse();
        let n = self.n();
        let mut mu = DVector::zeros(n);
        let mut var = DVector::zeros(n);
        for i in 0..n {
            let c = kinv[(i, i)];
            mu[i] = self.y[i] - self.alpha[i] / c;
            var[i] = 1.0 / c;
        }
        (mu, var)
    }
}

/// Negative log marginal likelihood and its gradient with respect to
/// `theta = [kernel params..., ln noise_var]` (the last entry is omitted when
/// the noise is not learned).
pub(crate) fn neg_lml_grad<K: CovKernel>(
    kernel: &K,
    inputs: &[K::Input],
    y: &DVector<f64>,
    fixed_noise: &DVector<f64>,
    theta: &[f64],
    learn_noise: Option<f64>,
    grad: &mut [f64],
) -> Option<f64> {
    let p = kernel.n_params();
    let params = &theta[..p];
    let noise_var = match learn_noise {
        Some(fixed) => fixed,
        None => theta[p].exp(),
    };
    let n = inputs.len();
    let k = regularized(kernel, params, inputs, fixed_noise, noise_var);
    let factor = cholesky_jittered(&k).ok()?;
    let alpha = factor.solve(y);
    let nll = 0.5 * y.dot(&alpha) + 0.5 * factor.log_det() + 0.5 * n as f64 * (2.0 * PI).ln();
    let kinv = factor.inverse();
    for g in grad.iter_mut() {
        *g = 0.0;
    }
    let mut dk = vec![0.0; p];
    let mut noise_grad = 0.0;
    for i in 0..n {
        for j in 0..=i {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            let mult = if i == j { 0.5 } else { 1.0 };
            kernel.eval_grad(params, &inputs[i], &inputs[j], &mut dk);
            for (g, d) in grad[..p].iter_mut().zip(&dk) {
                *g -= mult * w * d;
            }
            if i == j {
                noise_grad -= 0.5 * w * noise_var;
            }
        }
    }
    if learn_noise.is_none() {
        grad[p] = noise_grad;
    }
    if !nll.is_finite() {
        return None;
    }
    Some(nll)
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub restarts: usize,
    pub lbfgs: LbfgsOptions,
    /// `Some(v)` pins the inferred noise variance to `v` instead of fitting it.
    pub fixed_noise_var: Option<f64>,
    /// Extra starts tried before the regular ones, laid out as
    /// `[kernel params.., ln noise_var]`; vectors of the wrong length are skipped.
    pub warm_starts: Vec<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 16,
            lbfgs: LbfgsOptions::default(),
            fixed_noise_var: None,
            warm_starts: Vec::new(),
        }
    }
}

/// Summary of a multi-start fit.
#[derive(Clone, Debug, Default)]
pub struct FitReport {
    pub best_lml: f64,
    pub start_lmls: Vec<f64>,
    pub failed_starts: usize,
}

/// Samples a start uniformly within `ranges` (already in parameter space).
pub(crate) fn random_start(rng: &mut impl Rng, ranges: &[(f64, f64)]) -> Vec<f64> {
    ranges.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect()
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Maximizes the marginal likelihood from every start and keeps the best
/// optimum; LML ties within 1e-10 go to the lexicographically smaller
/// parameter vector.
pub fn fit_exact<K: CovKernel>(
    kernel: K,
    inputs: Vec<K::Input>,
    y: DVector<f64>,
    fixed_noise: DVector<f64>,
    starts: &[Vec<f64>],
    opts: &FitOptions,
) -> Result<(ExactGp<K>, FitReport)> {
    if inputs.is_empty() {
        return Err(Error::Input("cannot fit a GP without observations".into()));
    }
    if y.iter().any(|v| !v.is_finite()) || fixed_noise.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Input("targets and noise must be finite (noise nonnegative)".into()));
    }
    let p = kernel.n_params();
    let mut bounds = kernel.bounds();
    if opts.fixed_noise_var.is_none() {
        bounds.push((NOISE_BOUNDS.0.ln(), NOISE_BOUNDS.1.ln()));
    }
    let mut report = FitReport {
        best_lml: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut scratch = vec![0.0; bounds.len()];
    let n_theta = bounds.len();
    let warm = opts
        .warm_starts
        .iter()
        .filter(|w| w.len() == n_theta || w.len() == p + 1);
    for start in warm.chain(starts) {
        let mut s: Vec<f64> = start.clone();
        s.truncate(bounds.len());
        for (v, &(lo, hi)) in s.iter_mut().zip(&bounds) {
            *v = v.clamp(lo, hi);
        }
        let f0 = neg_lml_grad(&kernel, &inputs, &y, &fixed_noise, &s, opts.fixed_noise_var, &mut scratch);
        report.start_lmls.push(f0.map(|v| -v).unwrap_or(f64::NEG_INFINITY));
        let res = minimize_lbfgs(
            |th, g| neg_lml_grad(&kernel, &inputs, &y, &fixed_noise, th, opts.fixed_noise_var, g),
            &s,
            &bounds,
            &opts.lbfgs,
        );
        let Some(res) = res else {
            report.failed_starts += 1;
            continue;
        };
        let lml = -res.f;
        let better = match &best {
            None => true,
            Some((b, bx)) => lml > b + 1e-10 || ((lml - b).abs() <= 1e-10 && lex_less(&res.x, bx)),
        };
        if better {
            best = Some((lml, res.x));
        }
    }
    let Some((lml, theta)) = best else {
        let best_start = report.start_lmls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        return Err(Error::Optimization {
            restarts: starts.len(),
            best_objective: best_start,
            message: "every start failed to factorize".into(),
        });
    };
    report.best_lml = lml;
    let noise_var = opts.fixed_noise_var.unwrap_or_else(|| theta[p].exp());
    let gp = ExactGp::new(kernel, theta[..p].to_vec(), noise_var, inputs, y, fixed_noise)?;
    Ok((gp, report))
}

/// Central-difference check of `neg_lml_grad`; returns the worst relative error.
#[cfg(test)]
pub(crate) fn gradient_check<K: CovKernel>(
    kernel: &K,
    inputs: &[K::Input],
    y: &DVector<f64>,
    fixed_noise: &DVector<f64>,
    theta: &[f64],
) -> f64 {
    let mut g = vec![0.0; theta.len()];
    let mut scratch = vec![0.0; theta.len()];
    neg_lml_grad(kernel, inputs, y, fixed_noise, theta, None, &mut g).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut tp = theta.to_vec();
        tp[i] += h;
        let fp = neg_lml_grad(kernel, inputs, y, fixed_noise, &tp, None, &mut scratch).unwrap();
        tp[i] -= 2.0 * h;
        let fm = neg_lml_grad(kernel, inputs, y, fixed_noise, &tp, None, &mut scratch).unwrap();
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / g[i].abs().max(1.0));
    }
    worst
}
