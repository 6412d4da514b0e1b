//! Time-of-day aware GP: a 24-hour periodic kernel multiplied with the
//! spatial kernel, and the time-averaged short-run effect it implies.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{contract, input, Result};
use crate::gp::exact::{fit_exact, ExactGp, FitReport};
use crate::gp::kernel::{correlation, lengthscales, CovKernel, KernelFamily, SpatialCov, LENGTHSCALE_BOUNDS, OUTPUTSCALE_BOUNDS};
use crate::gp::single::spatial_starts;
use crate::gp::{GpConfig, LooPoint, PosteriorGaussian, SpatialKernelParams, Standardizer};

/// Period of the time-of-day effect, in hours.
pub const PERIOD_HOURS: f64 = 24.0;

/// Hourly grid used to average out the time-of-day effect.
pub const AVERAGING_GRID: usize = 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalInput {
    pub x: Vec<f64>,
    /// Hours elapsed since the start of the experiment.
    pub tau: f64,
}

impl TemporalInput {
    pub fn new(x: Vec<f64>, tau: f64) -> Self {
        Self { x, tau }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalKernelParams {
    pub sigma_f: f64,
    pub period: f64,
    pub l_p: f64,
    pub spatial: SpatialKernelParams,
}

impl TemporalKernelParams {
    pub fn new(sigma_f: f64, l_p: f64, spatial: SpatialKernelParams) -> Self {
        Self {
            sigma_f,
            period: PERIOD_HOURS,
            l_p,
            spatial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_f > 0.0 && self.l_p > 0.0) {
            return contract("sigma_f and l_p must be positive");
        }
        if self.period != PERIOD_HOURS {
            return contract("the period is fixed at 24 hours");
        }
        self.spatial.validate()
    }
}

/// `exp(-2 sin^2(pi |tau - tau2| / p) / l_p^2)`.
pub fn periodic_kernel(tau: f64, tau2: f64, p: f64, l_p: f64) -> Result<f64> {
    if !(p > 0.0 && l_p > 0.0) {
        return contract("periodic kernel needs positive period and lengthscale");
    }
    Ok(periodic(((tau - tau2) / p).abs(), l_p).0)
}

/// Periodic correlation at a lag measured in periods, plus its derivative
/// with respect to `ln l_p`.
#[inline]
fn periodic(lag_periods: f64, l_p: f64) -> (f64, f64) {
    let s = (std::f64::consts::PI * lag_periods).sin();
    let q = 2.0 * s * s / (l_p * l_p);
    let k = (-q).exp();
    (k, 2.0 * q * k)
}

/// `sigma_f * periodic(tau, tau') * spatial(x, x')`.
pub fn temporal_product_kernel(a: &TemporalInput, b: &TemporalInput, params: &TemporalKernelParams) -> Result<f64> {
    params.validate()?;
    let kp = periodic_kernel(a.tau, b.tau, params.period, params.l_p)?;
    Ok(params.sigma_f * kp * crate::gp::kernel_eval(&a.x, &b.x, &params.spatial)?)
}

/// Covariance over `(x, tau)`. Parameters are `[ln l.., ln sigma_f, ln l_p]`;
/// without the periodic factor `ln l_p` is dropped and time is ignored.
/// Time enters in units of the period, so `l_p` shares the spatial bounds.
#[derive(Clone, Debug)]
pub struct TemporalCov {
    pub spatial: SpatialCov,
    pub periodic: bool,
}

impl TemporalCov {
    pub fn new(family: KernelFamily, dim: usize, periodic: bool) -> Self {
        Self {
            spatial: SpatialCov::unit(family, dim),
            periodic,
        }
    }

    pub fn decode(&self, params: &[f64]) -> TemporalKernelParams {
        let d = self.spatial.dim;
        let spatial = self.spatial.decode(&params[..d]);
        let l_p = if self.periodic { params[d + 1].exp() } else { f64::INFINITY };
        TemporalKernelParams {
            sigma_f: params[d].exp(),
            period: PERIOD_HOURS,
            l_p,
            spatial,
        }
    }

    pub fn encode(&self, p: &TemporalKernelParams) -> Vec<f64> {
        let mut v: Vec<f64> = p.spatial.lengthscales.iter().map(|l| l.ln()).collect();
        v.push((p.sigma_f * p.spatial.outputscale).ln());
        if self.periodic {
            v.push(p.l_p.ln());
        }
        v
    }
}

impl CovKernel for TemporalCov {
    type Input = TemporalInput;

    fn n_params(&self) -> usize {
        self.spatial.dim + 1 + usize::from(self.periodic)
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        let ln = |(a, b): (f64, f64)| (a.ln(), b.ln());
        let mut v = vec![ln(LENGTHSCALE_BOUNDS); self.spatial.dim];
        v.push(ln(OUTPUTSCALE_BOUNDS));
        if self.periodic {
            v.push(ln(LENGTHSCALE_BOUNDS));
        }
        v
    }

    fn eval(&self, params: &[f64], a: &TemporalInput, b: &TemporalInput) -> f64 {
        let d = self.spatial.dim;
        let mut buf = [0.0; 32];
        let ls = lengthscales(params, d, &mut buf);
        let c = correlation(self.spatial.family, &a.x, &b.x, ls, None);
        let p = if self.periodic {
            periodic((a.tau - b.tau).abs() / PERIOD_HOURS, params[d + 1].exp()).0
        } else {
            1.0
        };
        params[d].exp() * p * c
    }

    fn eval_grad(&self, params: &[f64], a: &TemporalInput, b: &TemporalInput, grad: &mut [f64]) -> f64 {
        let d = self.spatial.dim;
        let mut buf = [0.0; 32];
        let ls = lengthscales(params, d, &mut buf);
        let c = correlation(self.spatial.family, &a.x, &b.x, ls, Some(&mut grad[..d]));
        let sf = params[d].exp();
        let (p, dp) = if self.periodic {
            periodic((a.tau - b.tau).abs() / PERIOD_HOURS, params[d + 1].exp())
        } else {
            (1.0, 0.0)
        };
        for g in grad[..d].iter_mut() {
            *g *= sf * p;
        }
        let k = sf * p * c;
        grad[d] = k;
        if self.periodic {
            grad[d + 1] = sf * dp * c;
        }
        k
    }
}

/// Hourly observations for the temporal model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TemporalTrainingSet {
    pub inputs: Vec<TemporalInput>,
    pub y: Vec<f64>,
    pub noise_sem: Vec<f64>,
}

impl TemporalTrainingSet {
    pub fn push(&mut self, x: Vec<f64>, tau: f64, y: f64, sem: f64) {
        self.inputs.push(TemporalInput::new(x, tau));
        self.y.push(y);
        self.noise_sem.push(sem);
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn validate(&self) -> Result<usize> {
        if self.inputs.len() != self.y.len() || self.y.len() != self.noise_sem.len() {
            return input("temporal training set has mismatched lengths");
        }
        let dim = self.inputs.first().map(|p| p.x.len()).unwrap_or(0);
        for (i, p) in self.inputs.iter().enumerate() {
            if p.x.len() != dim {
                return input("inconsistent input dimension");
            }
            if !(p.tau.is_finite() && p.tau >= 0.0) {
                return input(format!("tau must be finite and nonnegative (row {i})"));
            }
            if p.x.iter().any(|v| !v.is_finite()) || !self.y[i].is_finite() {
                return input(format!("non-finite value in row {i}"));
            }
            if !(self.noise_sem[i] >= 0.0 && self.noise_sem[i].is_finite()) {
                return input(format!("invalid SEM in row {i}"));
            }
        }
        Ok(dim)
    }

    fn distinct_times(&self) -> usize {
        let mut t: Vec<f64> = self.inputs.iter().map(|p| p.tau).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t.len()
    }
}

#[derive(Clone, Debug)]
pub struct FittedTemporalGp {
    pub(crate) gp: ExactGp<TemporalCov>,
    pub(crate) standardizer: Standardizer,
    pub(crate) report: FitReport,
    /// Set when the data had a single time point and the periodic factor was dropped.
    pub spatial_fallback: bool,
}

fn standardized(train: &TemporalTrainingSet, s: &Standardizer) -> (DVector<f64>, DVector<f64>) {
    (
        DVector::from_iterator(train.len(), train.y.iter().map(|v| s.forward(*v))),
        DVector::from_iterator(train.len(), train.noise_sem.iter().map(|e| (e / s.sd).powi(2))),
    )
}

/// Fits the product kernel by multi-start marginal-likelihood maximization.
/// With `periodic = false` the same data is fit by the spatial kernel alone,
/// which is the nested comparison model.
pub fn fit_temporal_gp_with(
    train: &TemporalTrainingSet,
    cfg: &GpConfig,
    periodic: bool,
    seed: u64,
) -> Result<FittedTemporalGp> {
    let dim = train.validate()?;
    if train.len() < 2 {
        return input("the temporal model needs at least two observations");
    }
    let fallback = periodic && train.distinct_times() < 2;
    if fallback {
        warn!("all observations share one time point; fitting the spatial kernel only");
    }
    let periodic = periodic && !fallback;
    let s = Standardizer::fit(&train.y);
    let (y, noise) = standardized(train, &s);
    let kernel = TemporalCov::new(cfg.family, dim, periodic);
    let mut rng = crate::seeds::rng(crate::seeds::derive_str(seed, "periodic-lengthscale"));
    let starts: Vec<Vec<f64>> = spatial_starts(dim, cfg.fit.restarts, seed)
        .into_iter()
        .enumerate()
        .map(|(k, mut v)| {
            if periodic {
                // Start 0 is nearly time-constant; the rest explore.
                let lp: f64 = match k {
                    0 => 1.0,
                    1 => 20.0,
                    _ => rand::Rng::random_range(&mut rng, 0.3f64.ln()..3f64.ln()).exp(),
                };
                v.insert(dim + 1, lp.ln());
            }
            v
        })
        .collect();
    let (gp, report) = fit_exact(kernel, train.inputs.clone(), y, noise, &starts, &cfg.fit)?;
    Ok(FittedTemporalGp {
        gp,
        standardizer: s,
        report,
        spatial_fallback: fallback,
    })
}

pub fn fit_temporal_gp(train: &TemporalTrainingSet, cfg: &GpConfig, seed: u64) -> Result<FittedTemporalGp> {
    fit_temporal_gp_with(train, cfg, true, seed)
}

impl FittedTemporalGp {
    /// Conditions the product kernel with fixed hyperparameters; `sigma_f`
    /// and `noise_var` are in standardized units.
    pub fn with_params(train: &TemporalTrainingSet, params: &TemporalKernelParams, noise_var: f64) -> Result<Self> {
        let dim = train.validate()?;
        params.validate()?;
        if !train.is_empty() && dim != params.spatial.dim() {
            return contract("kernel dimension does not match the data");
        }
        let s = if train.is_empty() {
            Standardizer::IDENTITY
        } else {
            Standardizer::fit(&train.y)
        };
        let (y, noise) = standardized(train, &s);
        let kernel = TemporalCov::new(params.spatial.family, params.spatial.dim(), true);
        let theta = kernel.encode(params);
        let gp = ExactGp::new(kernel, theta, noise_var, train.inputs.clone(), y, noise)?;
        Ok(Self {
            gp,
            standardizer: s,
            report: FitReport::default(),
            spatial_fallback: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.gp.kernel.spatial.dim
    }

    pub fn params(&self) -> TemporalKernelParams {
        self.gp.kernel.decode(&self.gp.params)
    }

    pub fn is_periodic(&self) -> bool {
        self.gp.kernel.periodic
    }

    pub fn inferred_noise_var(&self) -> f64 {
        self.gp.noise_var
    }

    pub fn jitter(&self) -> f64 {
        self.gp.factor.jitter
    }

    pub fn standardizer(&self) -> Standardizer {
        self.standardizer
    }

    pub fn fit_report(&self) -> &FitReport {
        &self.report
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.gp.log_marginal_likelihood()
    }

    pub fn posterior(&self, q: &[TemporalInput]) -> Result<PosteriorGaussian> {
        if q.iter().any(|p| p.x.len() != self.dim()) {
            return contract(format!("queries must be {}-d", self.dim()));
        }
        let (m, c) = self.gp.posterior(q);
        Ok(PosteriorGaussian::unstandardize(m, c, &self.standardizer))
    }

    /// Joint posterior of the hourly-grid averages `mean_h f(x_i, h)` over
    /// one period, for every query point.
    pub fn time_averaged_posterior(&self, xs: &[Vec<f64>]) -> Result<PosteriorGaussian> {
        let g = AVERAGING_GRID;
        let q: Vec<TemporalInput> = xs
            .iter()
            .flat_map(|x| (0..g).map(move |h| TemporalInput::new(x.clone(), h as f64 * PERIOD_HOURS / g as f64)))
            .collect();
        let full = self.posterior(&q)?;
        // Averaging operator A (n x n*g) applied as A m and A C A^T.
        let n = xs.len();
        let a = DMatrix::from_fn(n, n * g, |i, j| if j / g == i { 1.0 / g as f64 } else { 0.0 });
        let mean = &a * &full.mean;
        let mut cov = &a * &full.cov * a.transpose();
        crate::linalg::symmetrize(&mut cov);
        Ok(PosteriorGaussian { mean, cov })
    }

    pub fn loo_cv(&self) -> Result<Vec<LooPoint>> {
        if self.gp.n() < 2 {
            return input("leave-one-out needs at least two observations");
        }
        let (mu, var) = self.gp.loo();
        let s = self.standardizer;
        Ok((0..self.gp.n())
            .map(|i| LooPoint::new(s.inverse(self.gp.y[i]), s.inverse(mu[i]), var[i] * s.sd * s.sd))
            .collect())
    }
}

/// Posterior mean and variance of the time-averaged effect at `x`.
pub fn time_averaged_effect(model: &FittedTemporalGp, x: &[f64]) -> Result<(f64, f64)> {
    let p = model.time_averaged_posterior(&[x.to_vec()])?;
    Ok((p.mean[0], p.cov[(0, 0)]))
}
