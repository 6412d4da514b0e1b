//! Intrinsic-coregionalization (ICM) multi-task GP jointly modeling the
//! long-run experiment (task 0) and the short-run experiments.
//!
//! The covariance between `(t, x)` and `(t', x')` is `K[t, t'] * k(x, x')`
//! with a free-form PSD task matrix `K = L L^T` and a shared spatial kernel.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, input, Result};
use crate::gp::exact::{fit_exact, ExactGp, FitOptions, FitReport};
use crate::gp::kernel::{correlation, lengthscales, CovKernel, KernelFamily, SpatialCov, SpatialKernelParams};
use crate::gp::single::spatial_starts;
use crate::gp::{LooPoint, PosteriorGaussian, TrainingSet};
use crate::linalg::sample_sd;

/// Index of a task: 0 is the long-run experiment, 1.. are short-run trials.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId(pub usize);

impl TaskId {
    pub const LONG_RUN: TaskId = TaskId(0);
}

/// How short-run observations map onto tasks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskGranularity {
    /// One task per short-run trial.
    #[default]
    PerTrial,
    /// All short-run trials share a single task.
    Collapsed,
}

/// Lower-triangular factor `L` of the task covariance `K = L L^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskCovariance {
    pub factor: DMatrix<f64>,
}

impl TaskCovariance {
    pub fn from_factor(factor: DMatrix<f64>) -> Result<Self> {
        if factor.nrows() != factor.ncols() || factor.nrows() == 0 {
            return contract("task factor must be square and nonempty");
        }
        let mut f = factor;
        for i in 0..f.nrows() {
            for j in i + 1..f.ncols() {
                f[(i, j)] = 0.0;
            }
        }
        Ok(Self { factor: f })
    }

    /// Factor of a given PSD matrix (jittered Cholesky).
    pub fn from_matrix(k: &DMatrix<f64>) -> Result<Self> {
        let c = crate::linalg::cholesky_jittered(k)?;
        Self::from_factor(c.l())
    }

    pub fn n_tasks(&self) -> usize {
        self.factor.nrows()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    pub fn entry(&self, t: usize, u: usize) -> f64 {
        let m = t.min(u);
        (0..=m).map(|b| self.factor[(t, b)] * self.factor[(u, b)]).sum()
    }

    pub fn correlation(&self, t: usize, u: usize) -> f64 {
        self.entry(t, u) / (self.entry(t, t) * self.entry(u, u)).sqrt()
    }
}

/// ICM covariance `K[t, t'] * k(x, x')`.
pub fn icm_kernel(
    t: TaskId,
    a: &[f64],
    t2: TaskId,
    b: &[f64],
    k: &TaskCovariance,
    spatial: &SpatialKernelParams,
) -> Result<f64> {
    if t.0 >= k.n_tasks() || t2.0 >= k.n_tasks() {
        return contract(format!(
            "task index out of range ({} / {} for {} tasks)",
            t.0,
            t2.0,
            k.n_tasks()
        ));
    }
    Ok(k.entry(t.0, t2.0) * crate::gp::kernel_eval(a, b, spatial)?)
}

fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u
    } else {
        u.exp().ln_1p()
    }
}

fn softplus_inv(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp_m1().ln()
    }
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Covariance over `(task, x)` inputs. Parameters: the lower-triangular
/// factor entries in row-major order (diagonal through softplus), then the
/// spatial log-lengthscales.
#[derive(Clone, Debug)]
pub struct IcmCov {
    pub n_tasks: usize,
    pub spatial: SpatialCov,
}

pub type TaskInput = (usize, Vec<f64>);

impl IcmCov {
    pub fn new(n_tasks: usize, family: KernelFamily, dim: usize) -> Self {
        Self {
            n_tasks,
            spatial: SpatialCov::unit(family, dim),
        }
    }

    fn n_factor(&self) -> usize {
        self.n_tasks * (self.n_tasks + 1) / 2
    }

    fn idx(i: usize, j: usize) -> usize {
        i * (i + 1) / 2 + j
    }

    pub fn decode_factor(&self, params: &[f64]) -> DMatrix<f64> {
        let t = self.n_tasks;
        let mut l = DMatrix::zeros(t, t);
        for i in 0..t {
            for j in 0..=i {
                let u = params[Self::idx(i, j)];
                l[(i, j)] = if i == j { softplus(u) } else { u };
            }
        }
        l
    }

    pub fn encode(&self, factor: &DMatrix<f64>, spatial: &SpatialKernelParams) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for i in 0..self.n_tasks {
            for j in 0..=i {
                let f = factor[(i, j)];
                v.push(if i == j { softplus_inv(f.abs().max(1e-12)) } else { f });
            }
        }
        v.extend(spatial.lengthscales.iter().map(|l| l.ln()));
        v
    }

    fn task_entry(&self, params: &[f64], t: usize, u: usize) -> f64 {
        let m = t.min(u);
        (0..=m)
            .map(|b| {
                let lt = if b == t { softplus(params[Self::idx(t, b)]) } else { params[Self::idx(t, b)] };
                let lu = if b == u { softplus(params[Self::idx(u, b)]) } else { params[Self::idx(u, b)] };
                lt * lu
            })
            .sum()
    }
}

impl CovKernel for IcmCov {
    type Input = TaskInput;

    fn n_params(&self) -> usize {
        self.n_factor() + self.spatial.dim
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        let mut b = Vec::with_capacity(self.n_params());
        for i in 0..self.n_tasks {
            for j in 0..=i {
                b.push(if i == j { (-12.0, 8.0) } else { (-50.0, 50.0) });
            }
        }
        b.extend(self.spatial.bounds());
        b
    }

    fn eval(&self, params: &[f64], a: &TaskInput, b: &TaskInput) -> f64 {
        let nf = self.n_factor();
        let mut buf = [0.0; 32];
        let ls = lengthscales(&params[nf..], self.spatial.dim, &mut buf);
        self.task_entry(params, a.0, b.0) * correlation(self.spatial.family, &a.1, &b.1, ls, None)
    }

    fn eval_grad(&self, params: &[f64], a: &TaskInput, b: &TaskInput, grad: &mut [f64]) -> f64 {
        let nf = self.n_factor();
        let mut buf = [0.0; 32];
        let ls = lengthscales(&params[nf..], self.spatial.dim, &mut buf);
        let c = correlation(self.spatial.family, &a.1, &b.1, ls, Some(&mut grad[nf..]));
        let (t, u) = (a.0, b.0);
        let ktu = self.task_entry(params, t, u);
        for g in grad[nf..].iter_mut() {
            *g *= ktu;
        }
        for g in grad[..nf].iter_mut() {
            *g = 0.0;
        }
        let l = |i: usize, j: usize| -> f64 {
            if j > i {
                0.0
            } else if i == j {
                softplus(params[Self::idx(i, j)])
            } else {
                params[Self::idx(i, j)]
            }
        };
        let dl = |i: usize, j: usize| -> f64 {
            if i == j {
                sigmoid(params[Self::idx(i, j)])
            } else {
                1.0
            }
        };
        // dK[t,u]/dL[t,b] = L[u,b], dK[t,u]/dL[u,b] = L[t,b]
        for bcol in 0..=t {
            grad[Self::idx(t, bcol)] += l(u, bcol) * dl(t, bcol) * c;
        }
        for bcol in 0..=u {
            grad[Self::idx(u, bcol)] += l(t, bcol) * dl(u, bcol) * c;
        }
        ktu * c
    }
}

#[derive(Clone, Debug)]
pub struct MtgpConfig {
    pub family: KernelFamily,
    pub fit: FitOptions,
}

impl Default for MtgpConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::Matern52,
            fit: FitOptions::default(),
        }
    }
}

/// A fitted ICM multi-task GP.
#[derive(Clone, Debug)]
pub struct FittedMtgp {
    pub(crate) gp: ExactGp<IcmCov>,
    /// Per-task output means; a single pooled scale is shared by all tasks.
    pub(crate) task_means: Vec<f64>,
    pub(crate) scale: f64,
    pub(crate) per_task: BTreeMap<TaskId, TrainingSet>,
    pub(crate) report: FitReport,
}

fn flatten(
    per_task: &BTreeMap<TaskId, TrainingSet>,
) -> Result<(usize, usize, Vec<TaskInput>, Vec<f64>, Vec<f64>)> {
    let long = per_task.get(&TaskId::LONG_RUN);
    if long.map(|t| t.is_empty()).unwrap_or(true) {
        return input("the long-run task (0) needs at least one observation");
    }
    let mut dim = None;
    let mut inputs = Vec::new();
    let mut ys = Vec::new();
    let mut sems = Vec::new();
    for (task, set) in per_task {
        set.validate()?;
        if let Some(d) = set.dim() {
            if *dim.get_or_insert(d) != d {
                return input("all tasks must share the input dimension");
            }
        }
        for i in 0..set.len() {
            inputs.push((task.0, set.x[i].clone()));
            ys.push(set.y[i]);
            sems.push(set.noise_sem[i]);
        }
    }
    let n_tasks = per_task.keys().next_back().map(|t| t.0 + 1).unwrap_or(1);
    Ok((n_tasks, dim.unwrap_or(1), inputs, ys, sems))
}

/// Per-task centering with one pooled scale (sample SD of the centered values).
fn task_standardization(per_task: &BTreeMap<TaskId, TrainingSet>, n_tasks: usize) -> (Vec<f64>, f64) {
    let mut means = vec![0.0; n_tasks];
    let mut centered = Vec::new();
    for (task, set) in per_task {
        let m = crate::linalg::mean(&set.y);
        means[task.0] = m;
        centered.extend(set.y.iter().map(|v| v - m));
    }
    // Sample SD around zero with n-1 degrees of freedom, matching the
    // single-task standardizer when there is only one task.
    let n = centered.len();
    let sd = if n >= 2 {
        (centered.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let scale_ref = means.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let sd = if sd > 1e-12 * scale_ref { sd } else { 1.0 };
    (means, sd)
}

fn standardized_data(
    per_task: &BTreeMap<TaskId, TrainingSet>,
    means: &[f64],
    scale: f64,
) -> (DVector<f64>, DVector<f64>) {
    let mut y = Vec::new();
    let mut noise = Vec::new();
    for (task, set) in per_task {
        for i in 0..set.len() {
            y.push((set.y[i] - means[task.0]) / scale);
            noise.push((set.noise_sem[i] / scale).powi(2));
        }
    }
    (DVector::from_vec(y), DVector::from_vec(noise))
}

/// Fits the ICM model by multi-start marginal-likelihood maximization over
/// the task factor, the shared lengthscales and the residual noise.
pub fn fit_mtgp(per_task: &BTreeMap<TaskId, TrainingSet>, cfg: &MtgpConfig, seed: u64) -> Result<FittedMtgp> {
    let (n_tasks, dim, inputs, _, _) = flatten(per_task)?;
    let (means, scale) = task_standardization(per_task, n_tasks);
    let (y, noise) = standardized_data(per_task, &means, scale);
    let kernel = IcmCov::new(n_tasks, cfg.family, dim);

    // Per-task spread of the standardized outcomes seeds the factor diagonal.
    let task_sd: Vec<f64> = (0..n_tasks)
        .map(|t| {
            per_task
                .get(&TaskId(t))
                .map(|s| sample_sd(&s.y) / scale)
                .filter(|v| *v > 1e-6)
                .unwrap_or(1.0)
        })
        .collect();
    let spatial = spatial_starts(dim, cfg.fit.restarts, seed);
    let mut off_rng = crate::seeds::rng(crate::seeds::derive_str(seed, "icm-offdiag"));
    let starts: Vec<Vec<f64>> = spatial
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let amp = (s[dim].exp()).sqrt();
            let mut l = DMatrix::zeros(n_tasks, n_tasks);
            for i in 0..n_tasks {
                l[(i, i)] = amp * task_sd[i];
                for j in 0..i {
                    if k > 0 {
                        l[(i, j)] = amp * task_sd[i] * off_rng.random_range(-1.0..1.0);
                    }
                }
            }
            let sp = SpatialKernelParams::new(cfg.family, s[..dim].iter().map(|v| v.exp()).collect(), 1.0);
            let mut theta = kernel.encode(&l, &sp);
            theta.push(s[dim + 1]);
            theta
        })
        .collect();
    let (gp, report) = fit_exact(kernel, inputs, y, noise, &starts, &cfg.fit)?;
    Ok(FittedMtgp {
        gp,
        task_means: means,
        scale,
        per_task: per_task.clone(),
        report,
    })
}

impl FittedMtgp {
    /// Conditions an ICM model with fixed hyperparameters. The task matrix is
    /// in standardized units; `spatial.outputscale` is ignored (the task
    /// matrix carries the signal variance).
    pub fn with_params(
        per_task: &BTreeMap<TaskId, TrainingSet>,
        task_cov: &TaskCovariance,
        spatial: &SpatialKernelParams,
        noise_var: f64,
    ) -> Result<Self> {
        let (n_tasks, dim, inputs, _, _) = flatten(per_task)?;
        if task_cov.n_tasks() < n_tasks {
            return contract("task covariance is smaller than the number of tasks");
        }
        if dim != spatial.dim() {
            return contract("spatial kernel dimension does not match the data");
        }
        let (means, scale) = task_standardization(per_task, task_cov.n_tasks());
        let (y, noise) = standardized_data(per_task, &means, scale);
        let kernel = IcmCov::new(task_cov.n_tasks(), spatial.family, dim);
        let theta = kernel.encode(&task_cov.factor, spatial);
        let gp = ExactGp::new(kernel, theta, noise_var, inputs, y, noise)?;
        Ok(Self {
            gp,
            task_means: means,
            scale,
            per_task: per_task.clone(),
            report: FitReport::default(),
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.gp.kernel.n_tasks
    }

    pub fn dim(&self) -> usize {
        self.gp.kernel.spatial.dim
    }

    pub fn task_covariance(&self) -> TaskCovariance {
        TaskCovariance {
            factor: self.gp.kernel.decode_factor(&self.gp.params),
        }
    }

    pub fn spatial_params(&self) -> SpatialKernelParams {
        let nf = self.gp.params.len() - self.dim();
        self.gp.kernel.spatial.decode(&self.gp.params[nf..])
    }

    pub fn inferred_noise_var(&self) -> f64 {
        self.gp.noise_var
    }

    pub fn jitter(&self) -> f64 {
        self.gp.factor.jitter
    }

    /// Output mean and shared scale used to standardize task `t`.
    pub fn task_standardizer(&self, t: TaskId) -> crate::gp::Standardizer {
        crate::gp::Standardizer {
            mean: self.task_means.get(t.0).copied().unwrap_or(0.0),
            sd: self.scale,
        }
    }

    pub fn per_task(&self) -> &BTreeMap<TaskId, TrainingSet> {
        &self.per_task
    }

    pub fn fit_report(&self) -> &FitReport {
        &self.report
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.gp.log_marginal_likelihood()
    }

    pub(crate) fn check(&self, t: TaskId, xq: &[Vec<f64>]) -> Result<()> {
        if t.0 >= self.n_tasks() {
            return contract(format!("task {} out of range for {} tasks", t.0, self.n_tasks()));
        }
        if xq.iter().any(|r| r.len() != self.dim()) {
            return contract(format!("queries must be {}-d", self.dim()));
        }
        Ok(())
    }

    /// Standardized latent posterior for task `t`, conditioned on all tasks.
    pub fn posterior_standardized(&self, t: TaskId, xq: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check(t, xq)?;
        let q: Vec<TaskInput> = xq.iter().map(|x| (t.0, x.clone())).collect();
        Ok(self.gp.posterior(&q))
    }

    pub fn posterior_for_task(&self, t: TaskId, xq: &[Vec<f64>]) -> Result<PosteriorGaussian> {
        let (m, c) = self.posterior_standardized(t, xq)?;
        Ok(PosteriorGaussian::unstandardize(m, c, &self.task_standardizer(t)))
    }

    pub fn posterior_mean(&self, t: TaskId, x: &[f64]) -> f64 {
        self.task_standardizer(t)
            .inverse(self.gp.posterior_mean_at(&(t.0, x.to_vec())))
    }

    /// Leave-one-out predictions for the observations of task `t`, with all
    /// other observations (of every task) kept.
    pub fn loo_for_task(&self, t: TaskId) -> Result<Vec<LooPoint>> {
        let count = self.gp.inputs.iter().filter(|(task, _)| *task == t.0).count();
        if count < 2 {
            return input("leave-one-out needs at least two observations of the task");
        }
        let (mu, var) = self.gp.loo();
        let s = self.task_standardizer(t);
        Ok(self
            .gp
            .inputs
            .iter()
            .enumerate()
            .filter(|(_, (task, _))| *task == t.0)
            .map(|(i, _)| LooPoint::new(s.inverse(self.gp.y[i]), s.inverse(mu[i]), var[i] * s.sd * s.sd))
            .collect())
    }
}

/// Groups short-run observations by batch into tasks according to `granularity`.
/// Batch indices start at 1; the result always contains the long-run task.
pub fn assemble_tasks(
    long_run: TrainingSet,
    short_run_batches: &[TrainingSet],
    granularity: TaskGranularity,
) -> BTreeMap<TaskId, TrainingSet> {
    let mut tasks = BTreeMap::new();
    tasks.insert(TaskId::LONG_RUN, long_run);
    match granularity {
        TaskGranularity::PerTrial => {
            for (b, set) in short_run_batches.iter().enumerate() {
                if !set.is_empty() {
                    tasks.insert(TaskId(tasks.len()), set.clone());
                }
                let _ = b;
            }
        }
        TaskGranularity::Collapsed => {
            let mut all = TrainingSet::default();
            for set in short_run_batches {
                for i in 0..set.len() {
                    all.push(set.x[i].clone(), set.y[i], set.noise_sem[i]);
                }
            }
            if !all.is_empty() {
                tasks.insert(TaskId(1), all);
            }
        }
    }
    tasks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::exact::gradient_check;

    #[test]
    fn icm_gradient_matches_central_differences() {
        let mut rng = crate::seeds::rng(17);
        for trial in 0..20 {
            let n_tasks = 1 + trial % 3;
            let kernel = IcmCov::new(n_tasks, KernelFamily::Matern52, 2);
            let n = 6;
            let inputs: Vec<TaskInput> = (0..n)
                .map(|i| (i % n_tasks, vec![rng.random(), rng.random()]))
                .collect();
            let y = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
            let noise = DVector::from_element(n, 0.01);
            let theta: Vec<f64> = (0..kernel.n_params() + 1)
                .map(|_| rng.random_range(-1.5..0.5))
                .collect();
            let err = gradient_check(&kernel, &inputs, &y, &noise, &theta);
            assert!(err < 1e-4, "trial {trial}: {err}");
        }
    }

    #[test]
    fn factor_parameterization_round_trips() {
        let k = IcmCov::new(3, KernelFamily::Rbf, 1);
        let l = DMatrix::from_row_slice(3, 3, &[0.7, 0.0, 0.0, -0.3, 1.2, 0.0, 0.5, 0.1, 0.4]);
        let sp = SpatialKernelParams::isotropic(KernelFamily::Rbf, 1, 0.3, 1.0);
        let th = k.encode(&l, &sp);
        let back = k.decode_factor(&th);
        assert!((back - l).abs().max() < 1e-12);
    }

    #[test]
    fn collapsed_granularity_merges_batches() {
        let lr = TrainingSet::noiseless(vec![vec![0.1]], vec![1.0]).unwrap();
        let b1 = TrainingSet::noiseless(vec![vec![0.2]], vec![2.0]).unwrap();
        let b2 = TrainingSet::noiseless(vec![vec![0.3], vec![0.4]], vec![3.0, 4.0]).unwrap();
        let per = assemble_tasks(lr.clone(), &[b1.clone(), b2.clone()], TaskGranularity::PerTrial);
        assert_eq!(per.len(), 3);
        let col = assemble_tasks(lr, &[b1, b2], TaskGranularity::Collapsed);
        assert_eq!(col.len(), 2);
        assert_eq!(col[&TaskId(1)].len(), 3);
    }
}
