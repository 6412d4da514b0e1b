//! Reference values for test fixtures, computed the slow, obvious way.

use longrun::benchmarks::hartmann3;
use longrun::optim::{fd_gradient, minimize_lbfgs, LbfgsOptions};
use longrun::qmc::sobol_points;
use longrun::temporal::periodic_kernel;
use nalgebra::{DMatrix, DVector};

use crate::{runtime, Failure};

pub const NAMES: [&str; 3] = ["hartmann3-min", "periodic-k-0-12", "gp-posterior-3pt"];

pub fn run(name: &str) -> Result<(), Failure> {
    match name {
        "hartmann3-min" => {
            let (x, f) = hartmann3_min()?;
            println!("min {f:.12}");
            println!("argmin {:.12} {:.12} {:.12}", x[0], x[1], x[2]);
        }
        "periodic-k-0-12" => {
            for lag in [0.0, 12.0, 24.0] {
                let k = periodic_kernel(0.0, lag, 24.0, 1.0)?;
                println!("k(0,{lag}) {k:.15e}");
            }
            println!("exp(-2) {:.15e}", (-2f64).exp());
        }
        "gp-posterior-3pt" => {
            let p = gp_posterior_3pt();
            for (i, q) in GP_QUERY.iter().enumerate() {
                println!("x={q} mean {:.15e} var {:.15e}", p.mean[i], p.var[i]);
            }
            println!("lml {:.15e}", p.lml);
        }
        other => {
            return Err(Failure::Config(format!(
                "unknown oracle {other:?}; known: {}",
                NAMES.join(", ")
            )))
        }
    }
    Ok(())
}

/// Multi-start L-BFGS with central-difference gradients.
pub fn hartmann3_min() -> Result<(Vec<f64>, f64), Failure> {
    let bounds = [(0.0, 1.0); 3];
    let mut best: Option<(Vec<f64>, f64)> = None;
    for x0 in sobol_points(64, 3, 1)? {
        let opts = LbfgsOptions {
            max_iter: 500,
            grad_tol: 1e-10,
            ..Default::default()
        };
        let r = minimize_lbfgs(
            |x: &[f64], g: &mut [f64]| {
                let mut f = |y: &[f64]| Some(hartmann3(y));
                fd_gradient(&mut f, x, 1e-6, g);
                Some(hartmann3(x))
            },
            &x0,
            &bounds,
            &opts,
        );
        if let Some(r) = r {
            if best.as_ref().is_none_or(|(_, f)| r.f < *f) {
                best = Some((r.x, r.f));
            }
        }
    }
    best.ok_or_else(|| runtime("every start failed"))
}

/// Inputs, outputs and hyperparameters of the pinned three-point fixture:
/// squared-exponential kernel, lengthscale 0.25, unit signal variance,
/// noise variance 0.01, zero prior mean, no output standardization.
pub const GP_X: [f64; 3] = [0.1, 0.5, 0.9];
pub const GP_Y: [f64; 3] = [0.3, -0.2, 0.8];
pub const GP_QUERY: [f64; 4] = [0.0, 0.3, 0.7, 1.0];
pub const GP_LENGTHSCALE: f64 = 0.25;
pub const GP_NOISE: f64 = 0.01;

pub struct Posterior3 {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub lml: f64,
}

pub fn gp_posterior_3pt() -> Posterior3 {
    let k = |a: f64, b: f64| (-(a - b).powi(2) / (2.0 * GP_LENGTHSCALE * GP_LENGTHSCALE)).exp();
    let n = GP_X.len();
    let kxx = DMatrix::from_fn(n, n, |i, j| k(GP_X[i], GP_X[j]) + if i == j { GP_NOISE } else { 0.0 });
    let inv = kxx.clone().try_inverse().expect("fixture Gram is invertible");
    let y = DVector::from_row_slice(&GP_Y);
    let alpha = &inv * &y;
    let mut mean = Vec::new();
    let mut var = Vec::new();
    for q in GP_QUERY {
        let kq = DVector::from_fn(n, |i, _| k(q, GP_X[i]));
        mean.push(kq.dot(&alpha));
        var.push(k(q, q) - (kq.transpose() * &inv * &kq)[0]);
    }
    let lml = -0.5 * y.dot(&alpha) - 0.5 * kxx.determinant().ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Posterior3 { mean, var, lml }
}
