//! Small dense linear-algebra helpers shared by the models.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative jitter added to every factorized Gram matrix before escalation.
pub const JITTER_START: f64 = 1e-8;
/// Largest relative jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-4;

/// A Cholesky factor together with the absolute jitter that made it succeed.
#[derive(Clone, Debug)]
pub struct JitteredCholesky {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl JitteredCholesky {
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// Solves `L v = b` for the lower factor.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn solve_lower_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }
}

/// Factorizes a symmetric matrix, adding `1e-8 * mean(diag)` to the diagonal and
/// escalating the jitter geometrically (x10) up to `1e-4 * mean(diag)`.
pub fn cholesky_jittered(k: &DMatrix<f64>) -> Result<JitteredCholesky> {
    let n = k.nrows();
    if n != k.ncols() {
        return Err(Error::Contract(format!("gram matrix is {}x{}", n, k.ncols())));
    }
    if n == 0 {
        let chol = Cholesky::new(DMatrix::<f64>::zeros(0, 0))
            .ok_or_else(|| Error::Numerical("empty factorization".into()))?;
        return Ok(JitteredCholesky { chol, jitter: 0.0 });
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("gram matrix has non-finite entries".into()));
    }
    let scale = (k.diagonal().sum() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * 1.000_001 {
        let jitter = rel * scale;
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(kj) {
            return Ok(JitteredCholesky { chol, jitter });
        }
        rel *= 10.0;
    }
    Err(Error::Numerical(format!(
        "cholesky failed for {n}x{n} matrix after jitter escalation to {JITTER_MAX:e}"
    )))
}

/// Symmetrizes in place by averaging with the transpose.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_rescues_singular_matrix() {
        let k = DMatrix::from_element(3, 3, 1.0);
        let f = cholesky_jittered(&k).unwrap();
        assert!(f.jitter > 0.0 && f.jitter <= 1e-4);
    }

    #[test]
    fn indefinite_matrix_fails() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky_jittered(&k), Err(Error::Numerical(_))));
    }

    #[test]
    fn log_det_matches_determinant() {
        let k = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = cholesky_jittered(&k).unwrap();
        assert!((f.log_det() - (1.75f64).ln()).abs() < 1e-7);
    }
}
