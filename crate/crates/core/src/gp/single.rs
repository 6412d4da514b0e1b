//! Single-task GP regression: the public `fit_gp` entry point, posteriors in
//! raw output units, and leave-one-out diagnostics.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::exact::{fit_exact, random_start, ExactGp, FitOptions, FitReport};
use super::kernel::{KernelFamily, SpatialCov, SpatialKernelParams};
use crate::error::{contract, input, Result};
use crate::linalg::{mean, sample_sd};

/// Observations for one output: normalized inputs, raw outcomes and their SEMs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub noise_sem: Vec<f64>,
}

impl TrainingSet {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>, noise_sem: Vec<f64>) -> Result<Self> {
        let t = Self { x, y, noise_sem };
        t.validate()?;
        Ok(t)
    }

    /// Noise-free observations.
    pub fn noiseless(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        Self::new(x, y, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.x.first().map(|r| r.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() || self.y.len() != self.noise_sem.len() {
            return input(format!(
                "training set has {} inputs, {} outcomes, {} SEMs",
                self.x.len(),
                self.y.len(),
                self.noise_sem.len()
            ));
        }
        if let Some(d) = self.dim() {
            if d == 0 || self.x.iter().any(|r| r.len() != d) {
                return input("training inputs must share a dimension of at least 1");
            }
        }
        if self.x.iter().flatten().chain(&self.y).any(|v| !v.is_finite()) {
            return input("training data must be finite");
        }
        if self.noise_sem.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return input("noise SEMs must be finite and nonnegative");
        }
        Ok(())
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64, sem: f64) {
        self.x.push(x);
        self.y.push(y);
        self.noise_sem.push(sem);
    }

    pub fn without(&self, i: usize) -> TrainingSet {
        let mut t = self.clone();
        t.x.remove(i);
        t.y.remove(i);
        t.noise_sem.remove(i);
        t
    }
}

/// Affine output standardization `z = (y - mean) / sd`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub sd: f64,
}

impl Standardizer {
    pub const IDENTITY: Standardizer = Standardizer { mean: 0.0, sd: 1.0 };

    /// Zero mean, unit sample variance; the scale falls back to one for fewer
    /// than two points or (near-)constant data.
    pub fn fit(y: &[f64]) -> Self {
        let m = mean(y);
        let sd = sample_sd(y);
        let sd = if sd > 1e-12 * m.abs().max(1.0) { sd } else { 1.0 };
        Self { mean: m, sd }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.mean) / self.sd
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

/// A joint Gaussian over query points.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl PosteriorGaussian {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn variance(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| v.max(0.0))
    }

    pub fn sd(&self) -> DVector<f64> {
        self.variance().map(f64::sqrt)
    }

    /// Maps a standardized posterior back to raw units.
    pub fn unstandardize(mean: DVector<f64>, cov: DMatrix<f64>, s: &Standardizer) -> Self {
        Self {
            mean: mean.map(|m| s.inverse(m)),
            cov: cov * (s.sd * s.sd),
        }
    }
}

/// One held-out prediction in raw units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooPoint {
    pub observed: f64,
    pub pred_mean: f64,
    /// Predictive variance of the held-out observation (includes its noise).
    pub pred_var: f64,
    pub nll: f64,
    pub squared_error: f64,
}

impl LooPoint {
    pub fn new(observed: f64, pred_mean: f64, pred_var: f64) -> Self {
        let r = observed - pred_mean;
        Self {
            observed,
            pred_mean,
            pred_var,
            nll: 0.5 * (2.0 * PI * pred_var).ln() + r * r / (2.0 * pred_var),
            squared_error: r * r,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GpConfig {
    pub family: KernelFamily,
    pub fit: FitOptions,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::Matern52,
            fit: FitOptions::default(),
        }
    }
}

impl GpConfig {
    pub fn with_family(family: KernelFamily) -> Self {
        Self {
            family,
            ..Default::default()
        }
    }
}

/// A single-task GP conditioned on standardized training data.
#[derive(Clone, Debug)]
pub struct FittedGp {
    pub(crate) gp: ExactGp<SpatialCov>,
    pub(crate) standardizer: Standardizer,
    pub(crate) train: TrainingSet,
    pub(crate) report: FitReport,
}

/// Starting points for spatial-kernel fits: a neutral default followed by
/// log-uniform draws. Layout matches `[ln l.., ln s, ln noise]`.
pub(crate) fn spatial_starts(dim: usize, restarts: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = crate::seeds::rng(seed);
    let mut starts = Vec::with_capacity(restarts.max(1));
    let mut first = vec![0.3f64.ln(); dim];
    first.push(0.0);
    first.push(1e-3f64.ln());
    starts.push(first);
    let mut ranges = vec![(0.05f64.ln(), 2f64.ln()); dim];
    ranges.push((0.2f64.ln(), 5f64.ln()));
    ranges.push((1e-6f64.ln(), 0.5f64.ln()));
    while starts.len() < restarts.max(1) {
        starts.push(random_start(&mut rng, &ranges));
    }
    starts
}

/// Fits a single-task GP by multi-start marginal-likelihood maximization.
/// Outputs are standardized internally; inputs are expected normalized.
pub fn fit_gp(train: &TrainingSet, cfg: &GpConfig, seed: u64) -> Result<FittedGp> {
    train.validate()?;
    if train.is_empty() {
        return input("fit_gp needs at least one observation");
    }
    let dim = train.dim().unwrap_or(0);
    let standardizer = Standardizer::fit(&train.y);
    let y = DVector::from_iterator(train.len(), train.y.iter().map(|v| standardizer.forward(*v)));
    let noise = DVector::from_iterator(
        train.len(),
        train.noise_sem.iter().map(|s| (s / standardizer.sd).powi(2)),
    );
    let kernel = SpatialCov::new(cfg.family, dim);
    let starts = spatial_starts(dim, cfg.fit.restarts, seed);
    let (gp, report) = fit_exact(kernel, train.x.clone(), y, noise, &starts, &cfg.fit)?;
    Ok(FittedGp {
        gp,
        standardizer,
        train: train.clone(),
        report,
    })
}

impl FittedGp {
    /// Conditions a GP with fixed hyperparameters. `noise_var` is the
    /// inferred residual variance in standardized units. An empty training
    /// set yields the prior.
    pub fn with_params(train: &TrainingSet, params: &SpatialKernelParams, noise_var: f64) -> Result<Self> {
        train.validate()?;
        params.validate()?;
        if let Some(d) = train.dim() {
            if d != params.dim() {
                return contract(format!("{d}-d data with {}-d kernel", params.dim()));
            }
        }
        let standardizer = if train.is_empty() {
            Standardizer::IDENTITY
        } else {
            Standardizer::fit(&train.y)
        };
        Self::with_standardizer(train, params, noise_var, standardizer)
    }

    pub(crate) fn with_standardizer(
        train: &TrainingSet,
        params: &SpatialKernelParams,
        noise_var: f64,
        standardizer: Standardizer,
    ) -> Result<Self> {
        let kernel = SpatialCov::new(params.family, params.dim());
        let y = DVector::from_iterator(train.len(), train.y.iter().map(|v| standardizer.forward(*v)));
        let noise = DVector::from_iterator(
            train.len(),
            train.noise_sem.iter().map(|s| (s / standardizer.sd).powi(2)),
        );
        let theta = kernel.encode(params);
        let gp = ExactGp::new(kernel, theta, noise_var, train.x.clone(), y, noise)?;
        Ok(Self {
            gp,
            standardizer,
            train: train.clone(),
            report: FitReport::default(),
        })
    }

    /// Prior GP (no observations).
    pub fn prior(params: &SpatialKernelParams) -> Result<Self> {
        Self::with_params(&TrainingSet::default(), params, NOISE_FLOOR)
    }

    pub fn dim(&self) -> usize {
        self.gp.kernel.dim
    }

    pub fn params(&self) -> SpatialKernelParams {
        self.gp.kernel.decode(&self.gp.params)
    }

    /// Inferred residual noise variance in standardized units.
    pub fn inferred_noise_var(&self) -> f64 {
        self.gp.noise_var
    }

    pub fn jitter(&self) -> f64 {
        self.gp.factor.jitter
    }

    pub fn standardizer(&self) -> Standardizer {
        self.standardizer
    }

    pub fn train(&self) -> &TrainingSet {
        &self.train
    }

    pub fn fit_report(&self) -> &FitReport {
        &self.report
    }

    /// Log marginal likelihood of the standardized training outcomes.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.gp.log_marginal_likelihood()
    }

    fn check_query(&self, xq: &[Vec<f64>]) -> Result<()> {
        if xq.iter().any(|r| r.len() != self.dim()) {
            return contract(format!("queries must be {}-d", self.dim()));
        }
        Ok(())
    }

    /// Joint posterior of the latent function in standardized units.
    pub fn posterior_standardized(&self, xq: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_query(xq)?;
        Ok(self.gp.posterior(xq))
    }

    /// Joint posterior of the latent function in raw output units.
    pub fn posterior(&self, xq: &[Vec<f64>]) -> Result<PosteriorGaussian> {
        let (m, c) = self.posterior_standardized(xq)?;
        Ok(PosteriorGaussian::unstandardize(m, c, &self.standardizer))
    }

    pub fn posterior_mean(&self, x: &[f64]) -> f64 {
        self.standardizer.inverse(self.gp.posterior_mean_at(&x.to_vec()))
    }

    /// Closed-form leave-one-out predictions from the cached factorization.
    pub fn loo_cv(&self) -> Result<Vec<LooPoint>> {
        if self.train.len() < 2 {
            return input("leave-one-out needs at least two observations");
        }
        let (mu, var) = self.gp.loo();
        let s = self.standardizer;
        Ok((0..self.train.len())
            .map(|i| LooPoint::new(self.train.y[i], s.inverse(mu[i]), var[i] * s.sd * s.sd))
            .collect())
    }
}

const NOISE_FLOOR: f64 = super::exact::NOISE_BOUNDS.0;

pub fn total_nll(points: &[LooPoint]) -> f64 {
    points.iter().map(|p| p.nll).sum()
}

pub fn mean_squared_error(points: &[LooPoint]) -> f64 {
    mean(&points.iter().map(|p| p.squared_error).collect::<Vec<_>>())
}
