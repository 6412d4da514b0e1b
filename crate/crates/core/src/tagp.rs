//! Target-aware GP: independently fitted per-proxy base GPs combined with
//! sparse nonnegative weights plus a bias GP on the target residuals.
//!
//! Weights act on the base posteriors in their own standardized units
//! (`(mu_s - mean_s) / sd_s`) and are scaled by the target's sample SD, so
//! `f_L(x) = g(x) + sd_y * sum_s w_s * mu~_s(x)`. This makes a weight of one
//! mean "the proxy moves the target by one target SD per proxy SD".

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::gp::exact::{gram, NOISE_BOUNDS};
use crate::gp::kernel::{CovKernel, SpatialCov};
use crate::gp::single::spatial_starts;
use crate::gp::{fit_gp, FittedGp, GpConfig, LooPoint, PosteriorGaussian, TrainingSet};
use crate::linalg::{cholesky_jittered, sample_sd};
use crate::optim::minimize_lbfgs;

#[derive(Clone, Debug, PartialEq)]
pub struct ProxyDataset {
    pub id: String,
    pub train: TrainingSet,
}

impl ProxyDataset {
    pub fn new(id: impl Into<String>, train: TrainingSet) -> Self {
        Self { id: id.into(), train }
    }
}

#[derive(Clone, Debug)]
pub struct BaseModel {
    pub id: String,
    pub gp: FittedGp,
}

impl BaseModel {
    /// Base posterior in the proxy's standardized units.
    fn standardized(&self, xq: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let p = self.gp.posterior(xq)?;
        let s = self.gp.standardizer();
        Ok((p.mean.map(|m| (m - s.mean) / s.sd), p.cov / (s.sd * s.sd)))
    }
}

#[derive(Clone, Debug, Default)]
pub struct BaseModelSet {
    pub models: Vec<BaseModel>,
    /// One entry per proxy that could not be fitted and was dropped.
    pub warnings: Vec<String>,
}

impl BaseModelSet {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// Fits one single-task GP per proxy, in parallel. Each proxy's seed is
/// derived from its id, so a dataset gets the same fit wherever it appears.
pub fn fit_base_models(proxies: &[ProxyDataset], cfg: &GpConfig, seed: u64) -> BaseModelSet {
    fit_base_models_with(proxies, |_| cfg.clone(), seed)
}

/// [`fit_base_models`] with a per-proxy fit configuration (e.g. warm starts).
pub fn fit_base_models_with<F>(proxies: &[ProxyDataset], cfg: F, seed: u64) -> BaseModelSet
where
    F: Fn(&str) -> GpConfig + Sync,
{
    let fits: Vec<_> = proxies
        .par_iter()
        .map(|p| (p.id.clone(), fit_gp(&p.train, &cfg(&p.id), crate::seeds::derive_str(seed, &p.id))))
        .collect();
    let mut set = BaseModelSet::default();
    for (id, fit) in fits {
        match fit {
            Ok(gp) => set.models.push(BaseModel { id, gp }),
            Err(e) => {
                warn!("dropping proxy {id}: {e}");
                set.warnings.push(format!("proxy {id} dropped: {e}"));
            }
        }
    }
    set
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TagpConfig {
    /// Scale of the half-Cauchy prior on each weight.
    pub cauchy_scale: f64,
    /// Pin every weight to zero; the model is then the bias GP alone.
    pub force_zero_weights: bool,
    /// Starts for the joint weight / bias-hyperparameter search.
    pub weight_restarts: usize,
    #[serde(skip)]
    pub gp: GpConfig,
}

impl Default for TagpConfig {
    fn default() -> Self {
        Self {
            cauchy_scale: 0.1,
            force_zero_weights: false,
            weight_restarts: 8,
            gp: GpConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TagpModel {
    pub base: BaseModelSet,
    pub weights: Vec<f64>,
    pub bias: FittedGp,
    /// Sample SD of the target outcomes; converts standardized proxy units to target units.
    pub target_scale: f64,
    pub cauchy_scale: f64,
    pub warnings: Vec<String>,
}

const WEIGHT_BOUNDS: (f64, f64) = (-12.0, 5.0);

fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u
    } else {
        u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn log_half_cauchy(w: f64, scale: f64) -> f64 {
    (2.0 / (std::f64::consts::PI * scale)).ln() - (w / scale).powi(2).ln_1p()
}

/// Everything the LOO objective needs, in standardized target units.
struct LooProblem {
    kernel: SpatialCov,
    x: Vec<Vec<f64>>,
    y: DVector<f64>,
    fixed_noise: DVector<f64>,
    /// Standardized base means / variances at the target inputs, one column per proxy.
    mu: DMatrix<f64>,
    var: DMatrix<f64>,
    cauchy_scale: f64,
}

impl LooProblem {
    fn n_bias(&self) -> usize {
        self.kernel.n_params() + 1
    }

    /// Negative penalized LOO log-likelihood; when `wgrad` is given it
    /// receives the analytic gradient with respect to the raw weight
    /// parameters (the weights enter linearly in the LOO residuals).
    fn eval(&self, params: &[f64], wgrad: Option<&mut [f64]>) -> Option<f64> {
        let nb = self.n_bias();
        let (theta, u) = params.split_at(nb);
        let w: Vec<f64> = u.iter().map(|v| softplus(*v)).collect();
        let n = self.y.len();
        let mut k = gram(&self.kernel, &theta[..nb - 1], &self.x);
        let noise = theta[nb - 1].exp();
        for i in 0..n {
            k[(i, i)] += noise + self.fixed_noise[i];
        }
        let kinv = cholesky_jittered(&k).ok()?.inverse();
        let r = &self.y - &self.mu * DVector::from_column_slice(&w);
        let alpha = &kinv * r;
        let wsq = DVector::from_iterator(w.len(), w.iter().map(|v| v * v));
        let extra = &self.var * wsq;
        let mut total = 0.0;
        let mut e = vec![0.0; n];
        let mut v = vec![0.0; n];
        for i in 0..n {
            let d = kinv[(i, i)];
            if !(d > 0.0) {
                return None;
            }
            e[i] = alpha[i] / d;
            v[i] = 1.0 / d + extra[i];
            total += -0.5 * (2.0 * std::f64::consts::PI * v[i]).ln() - 0.5 * e[i] * e[i] / v[i];
        }
        for wi in &w {
            total += log_half_cauchy(*wi, self.cauchy_scale);
        }
        if let Some(g) = wgrad {
            // de_i/dw_s = -(K^-1 mu_s)_i / Kinv_ii ; dv_i/dw_s = 2 w_s var_is.
            let kmu = &kinv * &self.mu;
            for (s, gs) in g.iter_mut().enumerate() {
                let mut d = 0.0;
                for i in 0..n {
                    let de = -kmu[(i, s)] / kinv[(i, i)];
                    let dv = 2.0 * w[s] * self.var[(i, s)];
                    d += -0.5 * dv / v[i] + 0.5 * e[i] * e[i] * dv / (v[i] * v[i]) - e[i] * de / v[i];
                }
                let ws = w[s] / self.cauchy_scale;
                d += -2.0 * ws / (self.cauchy_scale * (1.0 + ws * ws));
                *gs = -d * sigmoid(u[s]);
            }
        }
        total.is_finite().then_some(-total)
    }
}

/// Fits the ensemble weights (and, jointly, the bias-GP hyperparameters) by
/// penalized LOO likelihood, then refits the bias GP by marginal likelihood
/// on the residuals `y - sd_y * sum_s w_s mu~_s(x)`.
pub fn fit_tagp(base: &BaseModelSet, target: &TrainingSet, cfg: &TagpConfig, seed: u64) -> Result<TagpModel> {
    target.validate()?;
    if target.len() < 3 {
        return input("the target-aware GP needs at least three target observations");
    }
    let mut warnings = base.warnings.clone();
    let s = base.len();
    let weights = if s == 0 || cfg.force_zero_weights {
        vec![0.0; s]
    } else {
        match fit_weights(base, target, cfg, seed)? {
            Some(w) => w,
            None => {
                warn!("weight optimization failed; using zero weights");
                warnings.push("weight optimization failed; weights set to zero".into());
                vec![0.0; s]
            }
        }
    };
    let scale = target_scale(target);
    let mut residual = target.clone();
    if weights.iter().any(|w| *w != 0.0) {
        for (m, w) in base.models.iter().zip(&weights) {
            let (mu, _) = m.standardized(&target.x)?;
            for i in 0..residual.len() {
                residual.y[i] -= scale * w * mu[i];
            }
        }
    }
    let bias = fit_gp(&residual, &cfg.gp, seed)?;
    Ok(TagpModel {
        base: base.clone(),
        weights,
        bias,
        target_scale: scale,
        cauchy_scale: cfg.cauchy_scale,
        warnings,
    })
}

fn target_scale(target: &TrainingSet) -> f64 {
    let sd = sample_sd(&target.y);
    if sd > 1e-12 {
        sd
    } else {
        1.0
    }
}

fn fit_weights(base: &BaseModelSet, target: &TrainingSet, cfg: &TagpConfig, seed: u64) -> Result<Option<Vec<f64>>> {
    let n = target.len();
    let s = base.len();
    let dim = target.dim().unwrap_or(0);
    let mean = crate::linalg::mean(&target.y);
    let sd = target_scale(target);
    let mut mu = DMatrix::zeros(n, s);
    let mut var = DMatrix::zeros(n, s);
    for (j, m) in base.models.iter().enumerate() {
        let (mj, cj) = m.standardized(&target.x)?;
        for i in 0..n {
            mu[(i, j)] = mj[i];
            var[(i, j)] = cj[(i, i)].max(0.0);
        }
    }
    let problem = LooProblem {
        kernel: SpatialCov::new(cfg.gp.family, dim),
        x: target.x.clone(),
        y: DVector::from_iterator(n, target.y.iter().map(|v| (v - mean) / sd)),
        fixed_noise: DVector::from_iterator(n, target.noise_sem.iter().map(|e| (e / sd).powi(2))),
        mu,
        var,
        cauchy_scale: cfg.cauchy_scale,
    };
    let nb = problem.n_bias();
    let mut bounds = problem.kernel.bounds();
    bounds.push((NOISE_BOUNDS.0.ln(), NOISE_BOUNDS.1.ln()));
    bounds.extend(std::iter::repeat_n(WEIGHT_BOUNDS, s));

    let restarts = cfg.weight_restarts.max(1);
    let bias_starts = spatial_starts(dim, restarts, crate::seeds::derive_str(seed, "tagp-bias"));
    let mut rng = crate::seeds::rng(crate::seeds::derive_str(seed, "tagp-weights"));
    let inv = |w: f64| w.exp_m1().ln();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (k, mut start) in bias_starts.into_iter().enumerate() {
        for _ in 0..s {
            let w: f64 = match k {
                0 => 0.01,
                1 => 0.5,
                _ => rng.random_range(1e-3f64.ln()..0f64).exp(),
            };
            start.push(inv(w));
        }
        let f = |x: &[f64], g: &mut [f64]| -> Option<f64> {
            let (gb, gw) = g.split_at_mut(nb);
            let value = problem.eval(x, Some(gw))?;
            // Bias hyperparameters by central differences on the same objective.
            let mut xs = x.to_vec();
            for i in 0..nb {
                let h = 1e-5;
                xs[i] = x[i] + h;
                let up = problem.eval(&xs, None)?;
                xs[i] = x[i] - h;
                let dn = problem.eval(&xs, None)?;
                xs[i] = x[i];
                gb[i] = (up - dn) / (2.0 * h);
            }
            Some(value)
        };
        if let Some(r) = minimize_lbfgs(f, &start, &bounds, &cfg.gp.fit.lbfgs) {
            let better = match &best {
                None => true,
                Some((bf, bx)) => r.f < bf - 1e-10 || ((r.f - bf).abs() <= 1e-10 && r.x < *bx),
            };
            if better {
                best = Some((r.f, r.x));
            }
        }
    }
    Ok(best.map(|(_, x)| x[nb..].iter().map(|u| softplus(*u)).collect()))
}

impl TagpModel {
    /// Assembles a model from already-fitted parts.
    pub fn assemble(base: BaseModelSet, weights: Vec<f64>, bias: FittedGp, target_scale: f64) -> Result<Self> {
        if weights.len() != base.len() {
            return input("one weight per base model is required");
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return input("weights must be nonnegative");
        }
        Ok(Self {
            base,
            weights,
            bias,
            target_scale,
            cauchy_scale: TagpConfig::default().cauchy_scale,
            warnings: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.bias.dim()
    }

    /// Base-model ids paired with their weights.
    pub fn named_weights(&self) -> Vec<(String, f64)> {
        self.base.models.iter().map(|m| m.id.clone()).zip(self.weights.iter().copied()).collect()
    }

    /// Weighted proxy contribution at `xq` in target units: mean and covariance.
    fn ensemble(&self, xq: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let q = xq.len();
        let mut mean = DVector::zeros(q);
        let mut cov = DMatrix::zeros(q, q);
        for (m, w) in self.base.models.iter().zip(&self.weights) {
            if *w == 0.0 {
                continue;
            }
            let (mu, c) = m.standardized(xq)?;
            mean += mu * (self.target_scale * w);
            cov += c * (self.target_scale * w).powi(2);
        }
        Ok((mean, cov))
    }

    pub fn posterior(&self, xq: &[Vec<f64>]) -> Result<PosteriorGaussian> {
        let g = self.bias.posterior(xq)?;
        let (m, c) = self.ensemble(xq)?;
        Ok(PosteriorGaussian {
            mean: g.mean + m,
            cov: g.cov + c,
        })
    }

    pub fn posterior_mean(&self, x: &[f64]) -> f64 {
        let xq = [x.to_vec()];
        self.bias.posterior_mean(x) + self.ensemble(&xq).map(|(m, _)| m[0]).unwrap_or(0.0)
    }

    /// Leave-one-out over the target points with the base models held fixed.
    pub fn loo_cv(&self) -> Result<Vec<LooPoint>> {
        let bias_loo = self.bias.loo_cv()?;
        let train = self.bias.train();
        let mut out = Vec::with_capacity(bias_loo.len());
        for (i, p) in bias_loo.iter().enumerate() {
            let (m, c) = self.ensemble(std::slice::from_ref(&train.x[i]))?;
            out.push(LooPoint::new(p.observed + m[0], p.pred_mean + m[0], p.pred_var + c[(0, 0)]));
        }
        Ok(out)
    }
}

/// Posterior of the target-aware model, treating the bias GP and the base
/// posteriors as independent Gaussians.
pub fn tagp_posterior(m: &TagpModel, xq: &[Vec<f64>]) -> Result<PosteriorGaussian> {
    m.posterior(xq)
}
