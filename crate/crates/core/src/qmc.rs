//! Quasi-random sequences: scrambled Sobol points in the unit cube and
//! quasi-random standard-normal draws derived from them.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{input, Result};

const SOBOL_DIMS: usize = sobol_burley::NUM_DIMENSIONS as usize;
const SOBOL_LEN: usize = 1 << 16;

fn sobol_coord(index: usize, dim: usize, seed: u64) -> f64 {
    let block = (dim / SOBOL_DIMS) as u64;
    let s = crate::seeds::derive(seed, block) as u32;
    sobol_burley::sample(index as u32, (dim % SOBOL_DIMS) as u32, s) as f64
}

/// `n` Owen-scrambled Sobol points in `[0, 1)^d`.
pub fn sobol_points(n: usize, d: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if d == 0 {
        return input("sobol dimension must be at least 1");
    }
    if n > SOBOL_LEN {
        return input(format!("at most {SOBOL_LEN} sobol points are supported"));
    }
    Ok((0..n)
        .map(|i| (0..d).map(|j| sobol_coord(i, j, seed)).collect())
        .collect())
}

/// Quasi-random standard-normal draws, `n` rows of `d` columns, obtained by
/// mapping midpoint-shifted Sobol coordinates through the normal quantile.
pub fn normal_draws(n: usize, d: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n > SOBOL_LEN {
        return input(format!("at most {SOBOL_LEN} draws are supported"));
    }
    let std = Normal::standard();
    let eps = 0.5 / SOBOL_LEN as f64;
    Ok((0..n)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let u = sobol_coord(i, j, seed).clamp(eps, 1.0 - eps);
                    std.inverse_cdf(u)
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_draws_are_roughly_standard() {
        let z = normal_draws(1024, 2, 3).unwrap();
        let m: f64 = z.iter().map(|r| r[0]).sum::<f64>() / 1024.0;
        let v: f64 = z.iter().map(|r| (r[0] - m).powi(2)).sum::<f64>() / 1023.0;
        assert!(m.abs() < 0.02, "{m}");
        assert!((v - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn wide_draws_use_more_than_256_dims() {
        let z = normal_draws(4, 300, 1).unwrap();
        assert_eq!(z[0].len(), 300);
        assert!(z[0].iter().all(|v| v.is_finite()));
    }
}
