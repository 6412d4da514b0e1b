//! Quasi-random initial designs and a log-space Monte-Carlo noisy expected
//! improvement over the long-run posterior, with greedy batch selection.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::linalg::cholesky_jittered;
use crate::optim::{compass_maximize, CompassOptions};
use crate::qmc::{normal_draws, sobol_points};
use crate::surrogate::{Prepared, Surrogate};


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    pub mc_samples: usize,
    pub batch_size: usize,
    /// Temperature of the smooth max / softplus relaxations, in standardized units.
    pub temperature: f64,
    pub restarts: usize,
    /// Quasi-random candidates scored before local refinement.
    pub raw_candidates: usize,
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            mc_samples: 256,
            batch_size: 1,
            temperature: 1e-3,
            restarts: 8,
            raw_candidates: 512,
            seed: 0,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 || self.batch_size == 0 || self.restarts == 0 || self.raw_candidates == 0 {
            return input("acquisition counts must be positive");
        }
        if !(self.temperature > 0.0) {
            return input("acquisition temperature must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateBatch {
    /// Arms in raw coordinates.
    pub arms: Vec<Vec<f64>>,
    pub acquisition_value: f64,
    /// Set when local search failed and a quasi-random candidate was used.
    pub fallback: bool,
}

pub fn validate_bounds(bounds: &[(f64, f64)]) -> Result<()> {
    if bounds.is_empty() {
        return input("bounds must have at least one dimension");
    }
    for (i, (lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return input(format!("invalid bounds in dimension {i}: [{lo}, {hi}]"));
        }
    }
    Ok(())
}

pub fn to_unit(x: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter().zip(bounds).map(|(v, (lo, hi))| (v - lo) / (hi - lo)).collect()
}

pub fn from_unit(u: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    u.iter()
        .zip(bounds)
        .map(|(v, (lo, hi))| (lo + v.clamp(0.0, 1.0) * (hi - lo)).clamp(*lo, *hi))
        .collect()
}

/// `n` scrambled Sobol points scaled to `bounds`.
pub fn quasi_random_design(bounds: &[(f64, f64)], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    validate_bounds(bounds)?;
    if n == 0 {
        return input("a design needs at least one point");
    }
    Ok(sobol_points(n, bounds.len(), seed)?
        .iter()
        .map(|u| from_unit(u, bounds))
        .collect())
}

fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln(softplus(u))`, accurate in both tails.
fn log_softplus(u: f64) -> f64 {
    if u > 30.0 {
        u.ln()
    } else if u < -30.0 {
        u
    } else {
        u.exp().ln_1p().ln()
    }
}

/// Per-sample `ln(tau * softplus((smax f_c - max f_b) / tau))` in
/// standardized units, given joint samples laid out as `[baseline, candidates]`.
fn log_improvements(samples: &DMatrix<f64>, nb: usize, tau: f64) -> Vec<f64> {
    let q = samples.ncols() - nb;
    let mut scratch = vec![0.0; q];
    (0..samples.nrows())
        .map(|k| {
            let best = (0..nb).map(|j| samples[(k, j)]).fold(f64::NEG_INFINITY, f64::max);
            for (i, s) in scratch.iter_mut().enumerate() {
                *s = samples[(k, nb + i)] / tau;
            }
            let smax = tau * logsumexp(&scratch);
            tau.ln() + log_softplus((smax - best) / tau)
        })
        .collect()
}

fn draws(n: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
    let z = normal_draws(n, d, seed)?;
    Ok(DMatrix::from_fn(n, d, |i, j| z[i][j]))
}

/// Baseline points in lexicographic order, so estimates do not depend on the
/// caller's row order (quasi-random draws are assigned by position).
fn canonical(baseline: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut b = baseline.to_vec();
    b.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    b
}

/// Per-sample log improvements (standardized units) for a candidate set,
/// drawn jointly with the baseline. Inputs are normalized.
pub fn log_nei_samples(
    model: &dyn Surrogate,
    candidates: &[Vec<f64>],
    baseline: &[Vec<f64>],
    cfg: &AcquisitionConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if candidates.is_empty() || baseline.is_empty() {
        return input("noisy EI needs candidates and a nonempty baseline");
    }
    let all: Vec<Vec<f64>> = canonical(baseline).into_iter().chain(candidates.iter().cloned()).collect();
    let post = model.posterior(&all)?;
    let s = model.output_scale();
    let mean = &post.mean / s;
    let cov = &post.cov / (s * s);
    let l = cholesky_jittered(&cov)?.l();
    let z = draws(cfg.mc_samples, all.len(), cfg.seed)?;
    let mut f = z * l.transpose();
    for mut row in f.row_iter_mut() {
        row += mean.transpose();
    }
    Ok(log_improvements(&f, baseline.len(), cfg.temperature))
}

/// Log of the Monte-Carlo noisy expected improvement of `candidates` over the
/// random best of `baseline`, in raw output units. Inputs are normalized.
pub fn log_nei(
    model: &dyn Surrogate,
    candidates: &[Vec<f64>],
    baseline: &[Vec<f64>],
    cfg: &AcquisitionConfig,
) -> Result<f64> {
    let v = log_nei_samples(model, candidates, baseline, cfg)?;
    Ok(logsumexp(&v) - (v.len() as f64).ln() + model.output_scale().ln())
}

/// Baselines up to this size are used whole.
const PRUNE_ABOVE: usize = 32;

/// Single-candidate evaluator reusing baseline samples across calls.
struct Evaluator<'a> {
    prepared: Box<dyn Prepared + 'a>,
    scale: f64,
    tau: f64,
    /// Lower factor of the standardized baseline covariance.
    lb: DMatrix<f64>,
    /// Baseline draws `z_b` (samples x nb) and the per-sample baseline maxima.
    zb: DMatrix<f64>,
    zc: DVector<f64>,
    best: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    fn new(model: &'a dyn Surrogate, baseline: &[Vec<f64>], cfg: &AcquisitionConfig) -> Result<Self> {
        let baseline = canonical(baseline);
        let prepared = crate::surrogate::prepare_baseline(model, &baseline)?;
        let s = model.output_scale();
        let nb = baseline.len();
        let post = prepared.baseline();
        let lb = cholesky_jittered(&(&post.cov / (s * s)))?.l();
        let z = draws(cfg.mc_samples, nb + 1, cfg.seed)?;
        let zb = z.columns(0, nb).into_owned();
        let zc = z.column(nb).into_owned();
        let fb = &zb * lb.transpose();
        let best = (0..cfg.mc_samples)
            .map(|k| (0..nb).map(|j| fb[(k, j)] + post.mean[j] / s).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Ok(Self {
            prepared,
            scale: s,
            tau: cfg.temperature,
            lb,
            zb,
            zc,
            best,
        })
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (m, v, cross) = self.prepared.candidate(x);
        let s = self.scale;
        let (m, v, cross) = (m / s, v / (s * s), cross / (s * s));
        let l = self
            .lb
            .solve_lower_triangular(&cross)
            .unwrap_or_else(|| DVector::zeros(cross.len()));
        let sc = (v - l.dot(&l)).max(0.0).sqrt();
        let shift = &self.zb * l;
        let logs: Vec<f64> = (0..self.best.len())
            .map(|k| {
                let f = m + shift[k] + sc * self.zc[k];
                self.tau.ln() + log_softplus((f - self.best[k]) / self.tau)
            })
            .collect();
        logsumexp(&logs) - (logs.len() as f64).ln() + s.ln()
    }
}

/// Keeps the baseline points that are the sampled maximum in at least one
/// posterior draw. The others contribute nothing to the improvement
/// threshold beyond Monte-Carlo error.
fn prune_baseline(model: &dyn Surrogate, baseline: &[Vec<f64>], cfg: &AcquisitionConfig) -> Result<Vec<Vec<f64>>> {
    if baseline.len() <= PRUNE_ABOVE {
        return Ok(baseline.to_vec());
    }
    let post = model.posterior(baseline)?;
    let s = model.output_scale();
    let l = cholesky_jittered(&(&post.cov / (s * s)))?.l();
    let n = baseline.len();
    let f = draws(cfg.mc_samples, n, crate::seeds::derive_str(cfg.seed, "prune"))? * l.transpose();
    let mut keep = vec![false; n];
    for k in 0..cfg.mc_samples {
        let arg = (0..n)
            .map(|j| (j, f[(k, j)] + post.mean[j] / s))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j)
            .unwrap_or(0);
        keep[arg] = true;
    }
    Ok(baseline.iter().zip(keep).filter(|(_, k)| *k).map(|(x, _)| x.clone()).collect())
}

fn too_close(u: &[f64], others: &[Vec<f64>]) -> bool {
    others
        .iter()
        .any(|o| o.iter().zip(u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() < 1e-6)
}

/// Greedy batch construction: each arm maximizes log noisy EI with the
/// earlier arms (and `pending`) appended to the baseline. `baseline` and
/// `pending` are raw coordinates; the model works on the unit cube.
pub fn optimize_batch(
    model: &dyn Surrogate,
    bounds: &[(f64, f64)],
    cfg: &AcquisitionConfig,
    baseline: &[Vec<f64>],
    pending: &[Vec<f64>],
) -> Result<CandidateBatch> {
    validate_bounds(bounds)?;
    cfg.validate()?;
    if model.dim() != bounds.len() {
        return input(format!("{}-d model with {}-d bounds", model.dim(), bounds.len()));
    }
    let initial: Vec<Vec<f64>> = baseline.iter().chain(pending).map(|x| to_unit(x, bounds)).collect();
    if initial.is_empty() {
        return input("batch selection needs at least one baseline arm");
    }
    let mut base = prune_baseline(model, &initial, cfg)?;
    let mut taken = initial.clone();
    let d = bounds.len();
    let raw = sobol_points(cfg.raw_candidates, d, crate::seeds::derive_str(cfg.seed, "raw-candidates"))?;
    let unit_bounds = vec![(0.0, 1.0); d];
    let mut arms = Vec::with_capacity(cfg.batch_size);
    let mut value = f64::NEG_INFINITY;
    let mut fallback = false;
    for step in 0..cfg.batch_size {
        let step_cfg = AcquisitionConfig {
            seed: crate::seeds::derive(cfg.seed, step as u64),
            ..cfg.clone()
        };
        let eval = Evaluator::new(model, &base, &step_cfg)?;
        let mut scored: Vec<(f64, &Vec<f64>)> = raw
            .iter()
            .filter(|u| !too_close(u, &taken))
            .map(|u| (eval.value(u), u))
            .filter(|(v, _)| v.is_finite())
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.partial_cmp(b.1).unwrap()));
        let mut best: Option<(f64, Vec<f64>)> = None;
        for (_, start) in scored.iter().take(cfg.restarts) {
            let (x, v) = compass_maximize(|u: &[f64]| eval.value(u), start, &unit_bounds, &CompassOptions::default());
            if !v.is_finite() || too_close(&x, &taken) {
                continue;
            }
            let better = match &best {
                None => true,
                Some((bv, bx)) => v > *bv || (v == *bv && x < *bx),
            };
            if better {
                best = Some((v, x));
            }
        }
        let (v, u) = match best {
            Some(b) => b,
            None => {
                warn!("acquisition search failed; using the best quasi-random candidate");
                fallback = true;
                match scored.first() {
                    Some((v, u)) => (*v, (*u).clone()),
                    None => {
                        // Every raw candidate collides with the baseline: take any free Sobol point.
                        let u = raw.iter().find(|u| !too_close(u, &taken)).cloned().unwrap_or_else(|| raw[0].clone());
                        (f64::NEG_INFINITY, u)
                    }
                }
            }
        };
        value = v;
        base.push(u.clone());
        taken.push(u.clone());
        arms.push(from_unit(&u, bounds));
    }
    if arms.len() > 1 {
        // Report the joint value of the whole batch over the original baseline.
        let units: Vec<Vec<f64>> = arms.iter().map(|a| to_unit(a, bounds)).collect();
        value = log_nei(model, &units, &initial, cfg)?;
    }
    Ok(CandidateBatch {
        arms,
        acquisition_value: value,
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::gp::{fit_gp, GpConfig, TrainingSet};
    use crate::multitask::{fit_mtgp, MtgpConfig, TaskId};
    use crate::tagp::{fit_base_models, fit_tagp, ProxyDataset, TagpConfig};

    fn set(xs: &[f64], f: impl Fn(f64) -> f64) -> TrainingSet {
        TrainingSet::new(xs.iter().map(|x| vec![*x]).collect(), xs.iter().map(|x| f(*x)).collect(), vec![0.05; xs.len()])
            .unwrap()
    }

    #[test]
    fn cached_candidate_path_matches_joint_estimate() {
        let f = |x: f64| (5.0 * x).sin();
        let g = |x: f64| (5.0 * x).sin() + 0.3 * x;
        let lr = set(&[0.1, 0.45, 0.7, 0.95], f);
        let sr = set(&[0.05, 0.2, 0.3, 0.5, 0.6, 0.8, 0.9], g);
        let gp = fit_gp(&lr, &GpConfig::default(), 0).unwrap();
        let mut tasks = std::collections::BTreeMap::new();
        tasks.insert(TaskId(0), lr.clone());
        tasks.insert(TaskId(1), sr.clone());
        let mt = fit_mtgp(&tasks, &MtgpConfig::default(), 0).unwrap();
        let base = fit_base_models(&[ProxyDataset::new("s", sr)], &GpConfig::default(), 0);
        let tg = fit_tagp(&base, &lr, &TagpConfig::default(), 0).unwrap();
        let mut tg_w = tg.clone();
        tg_w.weights = vec![0.6];
        let cfg = AcquisitionConfig::default();
        let baseline = vec![vec![0.45], vec![0.1], vec![0.7]];
        let models: Vec<&dyn Surrogate> = vec![&gp, &mt, &tg, &tg_w];
        for m in models {
            let ev = Evaluator::new(m, &baseline, &cfg).unwrap();
            for x in [0.0, 0.33, 0.62, 0.99] {
                let fast = ev.value(&[x]);
                let slow = log_nei(m, &[vec![x]], &baseline, &cfg).unwrap();
                assert!((fast - slow).abs() < 1e-4 * (1.0 + slow.abs()), "{x}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn log_softplus_tails() {
        assert!((log_softplus(-50.0) + 50.0).abs() < 1e-12);
        assert!((log_softplus(50.0) - 50f64.ln()).abs() < 1e-12);
        assert!((log_softplus(0.0) - 2f64.ln().ln()).abs() < 1e-12);
    }
}
