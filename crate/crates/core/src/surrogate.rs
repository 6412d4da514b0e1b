//! The long-run posterior interface consumed by the acquisition and the
//! harness, implemented for every model kind.

use nalgebra::{DMatrix, DVector};

use crate::error::{contract, Result};
use crate::gp::exact::ExactGp;
use crate::gp::kernel::CovKernel;
use crate::gp::{FittedGp, PosteriorGaussian};
use crate::multitask::{FittedMtgp, TaskId};
use crate::tagp::TagpModel;

/// A model exposing a joint Gaussian posterior over the long-run outcome at
/// normalized inputs, in raw output units.
pub trait Surrogate: Sync {
    fn dim(&self) -> usize;
    /// Typical output scale, used to standardize acquisition values.
    fn output_scale(&self) -> f64;
    fn posterior(&self, x: &[Vec<f64>]) -> Result<PosteriorGaussian>;
    fn posterior_mean(&self, x: &[f64]) -> f64;
    /// Caches what is needed to evaluate one moving candidate jointly with a
    /// fixed baseline set. `None` means no cache is available and
    /// [`prepare_baseline`] recomputes the joint posterior per candidate.
    fn prepare(&self, _baseline: &[Vec<f64>]) -> Result<Option<Box<dyn Prepared + '_>>> {
        Ok(None)
    }
}

pub fn prepare_baseline<'a>(model: &'a dyn Surrogate, baseline: &[Vec<f64>]) -> Result<Box<dyn Prepared + 'a>> {
    if let Some(p) = model.prepare(baseline)? {
        return Ok(p);
    }
    Ok(Box::new(Uncached {
        model,
        points: baseline.to_vec(),
        baseline: model.posterior(baseline)?,
    }))
}

struct Uncached<'a> {
    model: &'a dyn Surrogate,
    points: Vec<Vec<f64>>,
    baseline: PosteriorGaussian,
}

impl Prepared for Uncached<'_> {
    fn baseline(&self) -> &PosteriorGaussian {
        &self.baseline
    }

    fn candidate(&self, x: &[f64]) -> (f64, f64, DVector<f64>) {
        let mut all = self.points.clone();
        all.push(x.to_vec());
        let nb = self.points.len();
        match self.model.posterior(&all) {
            Ok(p) => (p.mean[nb], p.cov[(nb, nb)], p.cov.column(nb).rows(0, nb).into_owned()),
            Err(_) => (f64::NAN, f64::NAN, DVector::zeros(nb)),
        }
    }
}

/// A baseline set with cached factorizations.
pub trait Prepared: Sync {
    /// Joint posterior over the baseline points.
    fn baseline(&self) -> &PosteriorGaussian;
    /// Posterior mean and variance at `x` plus its covariance with each baseline point.
    fn candidate(&self, x: &[f64]) -> (f64, f64, DVector<f64>);
}

/// One GP contributing `offset + coef * f_std(x)` to the output.
struct Term<'a, K: CovKernel> {
    gp: &'a ExactGp<K>,
    offset: f64,
    coef: f64,
    base_inputs: Vec<K::Input>,
    /// `L^-1 k(X, baseline)`.
    vb: DMatrix<f64>,
}

impl<'a, K: CovKernel> Term<'a, K> {
    fn new(gp: &'a ExactGp<K>, offset: f64, coef: f64, base_inputs: Vec<K::Input>) -> Self {
        let kb = gp.cross_train(&base_inputs);
        let vb = if gp.n() > 0 {
            gp.factor.solve_lower(&kb)
        } else {
            DMatrix::zeros(0, base_inputs.len())
        };
        Self {
            gp,
            offset,
            coef,
            base_inputs,
            vb,
        }
    }

    fn add_candidate(&self, c: &K::Input, mean: &mut f64, var: &mut f64, cross: &mut DVector<f64>) {
        let g = self.gp;
        let kc = DVector::from_iterator(g.n(), g.inputs.iter().map(|x| g.kernel.eval(&g.params, x, c)));
        let v = if g.n() > 0 { g.factor.solve_lower_vec(&kc) } else { kc.clone() };
        let c2 = self.coef * self.coef;
        *mean += self.offset + self.coef * kc.dot(&g.alpha);
        *var += c2 * (g.kernel.eval(&g.params, c, c) - v.dot(&v));
        let vbtv = self.vb.transpose() * &v;
        for (i, b) in self.base_inputs.iter().enumerate() {
            cross[i] += c2 * (g.kernel.eval(&g.params, b, c) - vbtv[i]);
        }
    }
}

struct SumPrepared<'a, K: CovKernel, F: Fn(&[f64]) -> K::Input + Sync> {
    terms: Vec<Term<'a, K>>,
    map: F,
    baseline: PosteriorGaussian,
}

impl<'a, K, F> Prepared for SumPrepared<'a, K, F>
where
    K: CovKernel,
    F: Fn(&[f64]) -> K::Input + Sync,
{
    fn baseline(&self) -> &PosteriorGaussian {
        &self.baseline
    }

    fn candidate(&self, x: &[f64]) -> (f64, f64, DVector<f64>) {
        let c = (self.map)(x);
        let (mut m, mut v) = (0.0, 0.0);
        let mut cross = DVector::zeros(self.baseline.len());
        for t in &self.terms {
            t.add_candidate(&c, &mut m, &mut v, &mut cross);
        }
        (m, v.max(0.0), cross)
    }
}

fn check_dims(dim: usize, x: &[Vec<f64>]) -> Result<()> {
    if x.iter().any(|r| r.len() != dim) {
        return contract(format!("expected {dim}-d points"));
    }
    Ok(())
}

impl Surrogate for FittedGp {
    fn dim(&self) -> usize {
        FittedGp::dim(self)
    }

    fn output_scale(&self) -> f64 {
        self.standardizer().sd
    }

    fn posterior(&self, x: &[Vec<f64>]) -> Result<PosteriorGaussian> {
        FittedGp::posterior(self, x)
    }

    fn posterior_mean(&self, x: &[f64]) -> f64 {
        FittedGp::posterior_mean(self, x)
    }

    fn prepare(&self, baseline: &[Vec<f64>]) -> Result<Option<Box<dyn Prepared + '_>>> {
        check_dims(self.dim(), baseline)?;
        let s = self.standardizer();
        Ok(Some(Box::new(SumPrepared {
            terms: vec![Term::new(&self.gp, s.mean, s.sd, baseline.to_vec())],
            map: |x: &[f64]| x.to_vec(),
            baseline: FittedGp::posterior(self, baseline)?,
        })))
    }
}

/// The long-run task of the multi-task model.
impl Surrogate for FittedMtgp {
    fn dim(&self) -> usize {
        FittedMtgp::dim(self)
    }

    fn output_scale(&self) -> f64 {
        self.scale
    }

    fn posterior(&self, x: &[Vec<f64>]) -> Result<PosteriorGaussian> {
        self.posterior_for_task(TaskId::LONG_RUN, x)
    }

    fn posterior_mean(&self, x: &[f64]) -> f64 {
        FittedMtgp::posterior_mean(self, TaskId::LONG_RUN, x)
    }

    fn prepare(&self, baseline: &[Vec<f64>]) -> Result<Option<Box<dyn Prepared + '_>>> {
        self.check(TaskId::LONG_RUN, baseline)?;
        let s = self.task_standardizer(TaskId::LONG_RUN);
        let inputs = baseline.iter().map(|x| (0, x.clone())).collect();
        Ok(Some(Box::new(SumPrepared {
            terms: vec![Term::new(&self.gp, s.mean, s.sd, inputs)],
            map: |x: &[f64]| (0usize, x.to_vec()),
            baseline: self.posterior_for_task(TaskId::LONG_RUN, baseline)?,
        })))
    }
}

impl Surrogate for TagpModel {
    fn dim(&self) -> usize {
        TagpModel::dim(self)
    }

    fn output_scale(&self) -> f64 {
        self.target_scale
    }

    fn posterior(&self, x: &[Vec<f64>]) -> Result<PosteriorGaussian> {
        TagpModel::posterior(self, x)
    }

    fn posterior_mean(&self, x: &[f64]) -> f64 {
        TagpModel::posterior_mean(self, x)
    }

    fn prepare(&self, baseline: &[Vec<f64>]) -> Result<Option<Box<dyn Prepared + '_>>> {
        check_dims(self.dim(), baseline)?;
        let s = self.bias.standardizer();
        let mut terms = vec![Term::new(&self.bias.gp, s.mean, s.sd, baseline.to_vec())];
        for (m, w) in self.base.models.iter().zip(&self.weights) {
            if *w == 0.0 {
                continue;
            }
            // Base standardized posterior times target_scale * w (see tagp docs).
            terms.push(Term::new(&m.gp.gp, 0.0, self.target_scale * w, baseline.to_vec()));
        }
        Ok(Some(Box::new(SumPrepared {
            terms,
            map: |x: &[f64]| x.to_vec(),
            baseline: TagpModel::posterior(self, baseline)?,
        })))
    }
}
