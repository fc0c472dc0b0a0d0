//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{FosrError, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| FosrError::NotPositiveDefinite(what.to_string()))
}

/// log det of the factored matrix.
pub fn chol_logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Gaussian in precision form: `N(mean, Q⁻¹)` with `Q = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct PrecisionGaussian {
    pub mean: DVector<f64>,
    pub chol: Cholesky<f64, Dyn>,
}

impl PrecisionGaussian {
    /// Builds the Gaussian whose precision is `precision` and whose mean
    /// solves `precision · mean = linear`.
    pub fn from_canonical(precision: DMatrix<f64>, linear: &DVector<f64>) -> Result<Self> {
        let chol = Cholesky::new(precision).ok_or_else(|| {
            FosrError::NotPositiveDefinite("full-conditional precision".into())
        })?;
        let mean = chol.solve(linear);
        Ok(Self { mean, chol })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        // ‖Lᵀ(x − m)‖² = (x − m)ᵀ Q (x − m)
        let lt_diff = self.chol.l().tr_mul(&diff);
        let half_logdet: f64 = self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        -0.5 * self.dim() as f64 * LN_2PI + half_logdet - 0.5 * lt_diff.norm_squared()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        // Lᵀ v = z gives v ~ N(0, Q⁻¹)
        let v = self
            .chol
            .l_dirty()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("cholesky factor has a positive diagonal");
        &self.mean + v
    }
}

/// Symmetric square root `S` with `S Sᵀ = m`, clipping negative
/// eigenvalues (roundoff) to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut vecs = eig.eigenvectors.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        vecs.column_mut(j).scale_mut(s);
    }
    vecs
}

/// Empirical quantile with linear interpolation between order
/// statistics (`sorted` must be ascending and nonempty).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Numerically stable `log(mean(exp(xs)))`.
pub fn log_mean_exp<I: IntoIterator<Item = f64> + Clone>(xs: I) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let (sum, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + (x - max).exp(), n + 1));
    max + (sum / n as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 1.0), 4.0);
        assert!((quantile_sorted(&xs, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn log_mean_exp_handles_large_values() {
        let v = log_mean_exp([1000.0, 1000.0]);
        assert!((v - 1000.0).abs() < 1e-12);
    }

    #[test]
    fn precision_gaussian_log_pdf_matches_dense() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let g = PrecisionGaussian::from_canonical(q.clone(), &b).unwrap();
        let x = DVector::from_vec(vec![0.3, 0.7]);
        let cov = q.clone().try_inverse().unwrap();
        let d = &x - &g.mean;
        let quad = (d.transpose() * q.clone() * &d)[(0, 0)];
        let expect = -LN_2PI - 0.5 * cov.determinant().ln() - 0.5 * quad;
        assert!((g.log_pdf(&x) - expect).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(g.sample(&mut rng).len(), 2);
    }
}
