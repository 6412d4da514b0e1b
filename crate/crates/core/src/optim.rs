//! Local optimizers: a box-constrained L-BFGS for smooth objectives with
//! analytic or finite-difference gradients, and a gradient-free compass
//! search used on Monte-Carlo acquisition surfaces.

use std::collections::VecDeque;

#[derive(Clone, Debug)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    /// Convergence threshold on the infinity norm of the projected gradient.
    pub grad_tol: f64,
    /// Relative objective-decrease threshold.
    pub f_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            memory: 8,
            grad_tol: 1e-7,
            f_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Zeroes gradient components that push against an active bound.
fn projected_gradient(x: &[f64], g: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(bounds)
        .map(|((&xi, &gi), &(lo, hi))| {
            if (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

/// Minimizes `f` over a box. The objective writes its gradient into the second
/// argument and returns `None` when it cannot be evaluated at that point
/// (treated as an infinite value by the line search).
pub fn minimize_lbfgs<F>(
    mut f: F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    opts: &LbfgsOptions,
) -> Option<OptResult>
where
    F: FnMut(&[f64], &mut [f64]) -> Option<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, bounds);
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut g_new = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..opts.max_iter {
        iterations = it + 1;
        let pg = projected_gradient(&x, &g, bounds);
        if pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) < opts.grad_tol {
            converged = true;
            break;
        }

        // Two-loop recursion on the projected gradient.
        let mut q = pg.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = mem.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut d: Vec<f64> = q
            .iter()
            .zip(&pg)
            .map(|(qi, pgi)| if *pgi == 0.0 { 0.0 } else { -qi })
            .collect();
        if dot(&d, &pg) >= 0.0 {
            mem.clear();
            d = pg.iter().map(|v| -v).collect();
        }

        let mut step = if mem.is_empty() {
            (1.0 / pg.iter().map(|v| v * v).sum::<f64>().sqrt()).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            project(&mut xn, bounds);
            let dx: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if dx.iter().all(|v| *v == 0.0) {
                break;
            }
            if let Some(fn_) = f(&xn, &mut g_new) {
                if fn_.is_finite()
                    && g_new.iter().all(|v| v.is_finite())
                    && fn_ <= fx + 1e-4 * dot(&g, &dx)
                {
                    accepted = Some((xn, fn_, dx));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, s)) = accepted else {
            if mem.is_empty() {
                break;
            }
            mem.clear();
            continue;
        };
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - fn_;
        x = xn;
        fx = fn_;
        g.copy_from_slice(&g_new);
        if decrease.abs() <= opts.f_tol * fx.abs().max(1.0) {
            let pg = projected_gradient(&x, &g, bounds);
            converged = pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) < opts.grad_tol.sqrt();
            break;
        }
    }
    Some(OptResult {
        x,
        f: fx,
        iterations,
        converged,
    })
}

/// Central finite-difference gradient of a scalar objective.
pub fn fd_gradient<F: FnMut(&[f64]) -> Option<f64>>(
    f: &mut F,
    x: &[f64],
    h: f64,
    grad: &mut [f64],
) -> Option<()> {
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp)?;
        xp[i] = x[i] - h;
        let fm = f(&xp)?;
        xp[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Some(())
}

#[derive(Clone, Debug)]
pub struct CompassOptions {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_evals: usize,
}

impl Default for CompassOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            min_step: 1e-4,
            max_evals: 400,
        }
    }
}

/// Maximizes `f` over the box `[lo, hi]^d` by coordinate-wise compass search
/// with step halving. Returns the best point and its value.
pub fn compass_maximize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    opts: &CompassOptions,
) -> (Vec<f64>, f64) {
    let mut x = x0.to_vec();
    project(&mut x, bounds);
    let mut fx = f(&x);
    let mut evals = 1;
    let mut step = opts.initial_step;
    while step >= opts.min_step && evals < opts.max_evals {
        let mut improved = false;
        for i in 0..x.len() {
            for sign in [1.0, -1.0] {
                let (lo, hi) = bounds[i];
                let cand_i = (x[i] + sign * step * (hi - lo)).clamp(lo, hi);
                if cand_i == x[i] {
                    continue;
                }
                let old = x[i];
                x[i] = cand_i;
                let fc = f(&x);
                evals += 1;
                if fc > fx {
                    fx = fc;
                    improved = true;
                    break;
                }
                x[i] = old;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            Some((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2))
        };
        let r = minimize_lbfgs(
            f,
            &[-1.2, 1.0],
            &[(-5.0, 5.0), (-5.0, 5.0)],
            &LbfgsOptions {
                max_iter: 500,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{r:?}");
    }

    #[test]
    fn lbfgs_respects_bounds() {
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 3.0);
            Some((x[0] - 3.0).powi(2))
        };
        let r = minimize_lbfgs(f, &[0.0], &[(-1.0, 1.0)], &LbfgsOptions::default()).unwrap();
        assert_eq!(r.x[0], 1.0);
        assert!(r.converged);
    }

    #[test]
    fn compass_finds_peak() {
        let (x, v) = compass_maximize(
            |x| -(x[0] - 0.3).powi(2) - (x[1] - 0.8).powi(2),
            &[0.5, 0.5],
            &[(0.0, 1.0), (0.0, 1.0)],
            &CompassOptions::default(),
        );
        assert!((x[0] - 0.3).abs() < 1e-3 && (x[1] - 0.8).abs() < 1e-3);
        assert!(v > -1e-6);
    }
}
