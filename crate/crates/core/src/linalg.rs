//! Small symmetric positive-definite helpers used by every conjugate update.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Added to the diagonal when a factorization fails; retried once.
pub const JITTER: f64 = 1e-10;

/// Cholesky factor of an SPD matrix, retrying once with [`JITTER`] on the diagonal.
pub fn spd_cholesky(m: DMatrix<f64>, block: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(block, "matrix has non-finite entries"));
    }
    match m.clone().cholesky() {
        Some(c) => Ok(c),
        None => {
            let n = m.nrows();
            let jittered = m + DMatrix::identity(n, n) * JITTER;
            jittered
                .cholesky()
                .ok_or_else(|| Error::numerical(block, format!("{n}x{n} precision is not positive definite")))
        }
    }
}

pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// A Gaussian in canonical form: density proportional to
/// `exp(-x'Px/2 + b'x)`, i.e. mean `P^{-1} b` and covariance `P^{-1}`.
#[derive(Debug, Clone)]
pub struct CanonicalGaussian {
    pub precision: DMatrix<f64>,
    pub linear: DVector<f64>,
}

impl CanonicalGaussian {
    pub fn zeros(dim: usize) -> Self {
        CanonicalGaussian {
            precision: DMatrix::zeros(dim, dim),
            linear: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn factor(&self, block: &'static str) -> Result<FactoredGaussian> {
        let chol = spd_cholesky(self.precision.clone(), block)?;
        let mean = chol.solve(&self.linear);
        Ok(FactoredGaussian { chol, mean })
    }

    pub fn mean(&self, block: &'static str) -> Result<DVector<f64>> {
        Ok(self.factor(block)?.mean)
    }

    pub fn covariance(&self, block: &'static str) -> Result<DMatrix<f64>> {
        Ok(self.factor(block)?.chol.inverse())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, block: &'static str) -> Result<DVector<f64>> {
        Ok(self.factor(block)?.sample(rng))
    }
}

/// A canonical Gaussian with its precision already factored.
pub struct FactoredGaussian {
    pub chol: Cholesky<f64, Dyn>,
    pub mean: DVector<f64>,
}

impl FactoredGaussian {
    /// `mean + L^{-T} e` with `e ~ N(0, I)`, which has covariance `P^{-1}`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.mean.len();
        let e = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let l = self.chol.l();
        let shift = l
            .tr_solve_lower_triangular(&e)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + shift
    }
}

/// Draw from `N(mean, cov)` with `cov` SPD.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
    block: &'static str,
) -> Result<DVector<f64>> {
    let chol = spd_cholesky(cov.clone(), block)?;
    let e = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(mean + chol.l() * e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn canonical_moments() {
        let p = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_column_slice(&[1.0, 2.0]);
        let g = CanonicalGaussian { precision: p.clone(), linear: b.clone() };
        let inv = p.try_inverse().unwrap();
        assert!((g.mean("t").unwrap() - &inv * b).norm() < 1e-14);
        assert!((g.covariance("t").unwrap() - inv).norm() < 1e-14);
    }

    #[test]
    fn sample_covariance_matches_precision_inverse() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, -0.8, -0.8, 1.0]);
        let g = CanonicalGaussian { precision: p.clone(), linear: DVector::zeros(2) };
        let f = g.factor("t").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            let d = f.sample(&mut rng);
            acc += &d * d.transpose();
        }
        acc /= n as f64;
        let cov = p.try_inverse().unwrap();
        assert!((acc - cov).abs().max() < 0.02);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(spd_cholesky(m, "t").is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(spd_cholesky(bad, "t"), Err(Error::Numerical { block: "t", .. })));
    }
}
