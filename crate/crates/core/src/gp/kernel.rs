//! Stationary spatial kernels (ARD Matérn-5/2 and RBF) and the covariance
//! trait used by the exact-GP machinery.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    #[default]
    Matern52,
    Rbf,
}

/// Lengthscale bounds in normalized input units.
pub const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-3, 1e3);
pub const OUTPUTSCALE_BOUNDS: (f64, f64) = (1e-4, 1e4);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialKernelParams {
    pub family: KernelFamily,
    pub lengthscales: Vec<f64>,
    pub outputscale: f64,
}

impl SpatialKernelParams {
    pub fn new(family: KernelFamily, lengthscales: Vec<f64>, outputscale: f64) -> Self {
        Self {
            family,
            lengthscales,
            outputscale,
        }
    }

    pub fn isotropic(family: KernelFamily, dim: usize, lengthscale: f64, outputscale: f64) -> Self {
        Self::new(family, vec![lengthscale; dim], outputscale)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() {
            return contract("kernel needs at least one lengthscale");
        }
        if self.lengthscales.iter().any(|l| !(*l > 0.0) || !l.is_finite())
            || !(self.outputscale > 0.0)
            || !self.outputscale.is_finite()
        {
            return contract("kernel parameters must be finite and strictly positive");
        }
        Ok(())
    }
}

/// Unit-outputscale correlation between `a` and `b`; when `grad` is given it
/// receives the derivative with respect to each log-lengthscale.
#[inline]
pub(crate) fn correlation(
    family: KernelFamily,
    a: &[f64],
    b: &[f64],
    lengthscales: &[f64],
    grad: Option<&mut [f64]>,
) -> f64 {
    let mut r2 = 0.0;
    for ((x, y), l) in a.iter().zip(b).zip(lengthscales) {
        let z = (x - y) / l;
        r2 += z * z;
    }
    match family {
        KernelFamily::Rbf => {
            let k = (-0.5 * r2).exp();
            if let Some(g) = grad {
                for (i, gi) in g.iter_mut().enumerate() {
                    let z = (a[i] - b[i]) / lengthscales[i];
                    *gi = k * z * z;
                }
            }
            k
        }
        KernelFamily::Matern52 => {
            let r = r2.sqrt();
            let s5r = 5f64.sqrt() * r;
            let e = (-s5r).exp();
            let k = (1.0 + s5r + 5.0 * r2 / 3.0) * e;
            if let Some(g) = grad {
                let c = 5.0 / 3.0 * (1.0 + s5r) * e;
                for (i, gi) in g.iter_mut().enumerate() {
                    let z = (a[i] - b[i]) / lengthscales[i];
                    *gi = c * z * z;
                }
            }
            k
        }
    }
}

/// Evaluates the spatial kernel `outputscale * corr(a, b)`.
pub fn kernel_eval(a: &[f64], b: &[f64], params: &SpatialKernelParams) -> Result<f64> {
    params.validate()?;
    if a.len() != params.dim() || b.len() != params.dim() {
        return contract(format!(
            "kernel expects {}-d inputs, got {} and {}",
            params.dim(),
            a.len(),
            b.len()
        ));
    }
    Ok(params.outputscale * correlation(params.family, a, b, &params.lengthscales, None))
}

/// A covariance function with an unconstrained parameter vector, consumed by
/// the generic exact-GP fitter. Parameters live in an optimizer-friendly
/// space (typically logs), bounded by `bounds()`.
pub trait CovKernel: Clone + Send + Sync {
    type Input: Clone + Send + Sync;

    fn n_params(&self) -> usize;
    fn bounds(&self) -> Vec<(f64, f64)>;
    fn eval(&self, params: &[f64], a: &Self::Input, b: &Self::Input) -> f64;
    /// Value plus the gradient with respect to `params`, written into `grad`.
    fn eval_grad(&self, params: &[f64], a: &Self::Input, b: &Self::Input, grad: &mut [f64]) -> f64;
}

/// ARD spatial kernel over normalized inputs. Parameters are
/// `[ln l_1, ..., ln l_d]` followed by `ln outputscale` unless the outputscale
/// is pinned to one (used when another factor carries the signal variance).
#[derive(Clone, Debug)]
pub struct SpatialCov {
    pub family: KernelFamily,
    pub dim: usize,
    pub unit_outputscale: bool,
}

impl SpatialCov {
    pub fn new(family: KernelFamily, dim: usize) -> Self {
        Self {
            family,
            dim,
            unit_outputscale: false,
        }
    }

    pub fn unit(family: KernelFamily, dim: usize) -> Self {
        Self {
            family,
            dim,
            unit_outputscale: true,
        }
    }

    pub fn encode(&self, p: &SpatialKernelParams) -> Vec<f64> {
        let mut v: Vec<f64> = p.lengthscales.iter().map(|l| l.ln()).collect();
        if !self.unit_outputscale {
            v.push(p.outputscale.ln());
        }
        v
    }

    pub fn decode(&self, v: &[f64]) -> SpatialKernelParams {
        let lengthscales = v[..self.dim].iter().map(|x| x.exp()).collect();
        let outputscale = if self.unit_outputscale {
            1.0
        } else {
            v[self.dim].exp()
        };
        SpatialKernelParams::new(self.family, lengthscales, outputscale)
    }
}

impl CovKernel for SpatialCov {
    type Input = Vec<f64>;

    fn n_params(&self) -> usize {
        self.dim + usize::from(!self.unit_outputscale)
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        let mut b = vec![(LENGTHSCALE_BOUNDS.0.ln(), LENGTHSCALE_BOUNDS.1.ln()); self.dim];
        if !self.unit_outputscale {
            b.push((OUTPUTSCALE_BOUNDS.0.ln(), OUTPUTSCALE_BOUNDS.1.ln()));
        }
        b
    }

    fn eval(&self, params: &[f64], a: &Vec<f64>, b: &Vec<f64>) -> f64 {
        let mut ls = [0.0; 32];
        let ls = lengthscales(params, self.dim, &mut ls);
        let s = if self.unit_outputscale {
            1.0
        } else {
            params[self.dim].exp()
        };
        s * correlation(self.family, a, b, ls, None)
    }

    fn eval_grad(&self, params: &[f64], a: &Vec<f64>, b: &Vec<f64>, grad: &mut [f64]) -> f64 {
        let mut ls = [0.0; 32];
        let ls = lengthscales(params, self.dim, &mut ls);
        let c = correlation(self.family, a, b, ls, Some(&mut grad[..self.dim]));
        if self.unit_outputscale {
            c
        } else {
            let s = params[self.dim].exp();
            for g in grad[..self.dim].iter_mut() {
                *g *= s;
            }
            grad[self.dim] = s * c;
            s * c
        }
    }
}

/// Exponentiated lengthscales, stack-allocated for the common small-d case.
#[inline]
pub(crate) fn lengthscales<'a>(params: &[f64], dim: usize, buf: &'a mut [f64; 32]) -> &'a [f64] {
    assert!(dim <= 32, "at most 32 input dimensions are supported");
    for i in 0..dim {
        buf[i] = params[i].exp();
    }
    &buf[..dim]
}
