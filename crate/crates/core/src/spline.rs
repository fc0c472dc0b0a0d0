//! Clamped cubic B-spline bases and the blended shrinkage/smoothness
//! penalty used as prior precision on spline scores.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{FosrError, Result};
use crate::linalg::chol_logdet;

pub const DEGREE: usize = 3;

/// A clamped cubic B-spline basis on `[t_min, t_max]` together with its
/// penalty matrices `P0 = I`, `P2 = Δ₂ᵀΔ₂` and `P = αP0 + (1 − α)P2`.
#[derive(Debug, Clone)]
pub struct BasisSystem {
    k: usize,
    t_min: f64,
    t_max: f64,
    alpha: f64,
    knots: Vec<f64>,
    p0: DMatrix<f64>,
    p2: DMatrix<f64>,
    penalty: DMatrix<f64>,
    penalty_chol: Cholesky<f64, Dyn>,
    penalty_logdet: f64,
}

impl BasisSystem {
    /// Builds a basis with `k` functions and equally spaced interior knots.
    pub fn new(k: usize, t_min: f64, t_max: f64, alpha: f64) -> Result<Self> {
        if k < DEGREE + 1 {
            return Err(FosrError::InvalidDimension(format!(
                "basis count K = {k} must be at least {}",
                DEGREE + 1
            )));
        }
        if !(t_min.is_finite() && t_max.is_finite()) || t_min >= t_max {
            return Err(FosrError::InvalidRange(format!(
                "need t_min < t_max, got [{t_min}, {t_max}]"
            )));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(FosrError::InvalidRange(format!("alpha = {alpha} outside (0, 1]")));
        }

        let n_interior = k - DEGREE - 1;
        let mut knots = Vec::with_capacity(k + DEGREE + 1);
        knots.extend(std::iter::repeat_n(t_min, DEGREE + 1));
        let width = t_max - t_min;
        for j in 1..=n_interior {
            knots.push(t_min + width * j as f64 / (n_interior + 1) as f64);
        }
        knots.extend(std::iter::repeat_n(t_max, DEGREE + 1));

        let p0 = DMatrix::<f64>::identity(k, k);
        let p2 = second_difference_gram(k);
        let penalty = if alpha == 1.0 {
            p0.clone()
        } else {
            &p0 * alpha + &p2 * (1.0 - alpha)
        };
        let penalty_chol = Cholesky::new(penalty.clone())
            .ok_or_else(|| FosrError::NotPositiveDefinite("penalty matrix P".into()))?;
        let penalty_logdet = chol_logdet(&penalty_chol);

        Ok(Self {
            k,
            t_min,
            t_max,
            alpha,
            knots,
            p0,
            p2,
            penalty,
            penalty_chol,
            penalty_logdet,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn degree(&self) -> usize {
        DEGREE
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn p0(&self) -> &DMatrix<f64> {
        &self.p0
    }

    pub fn p2(&self) -> &DMatrix<f64> {
        &self.p2
    }

    /// Blended penalty `P`.
    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    pub fn penalty_chol(&self) -> &Cholesky<f64, Dyn> {
        &self.penalty_chol
    }

    pub fn penalty_logdet(&self) -> f64 {
        self.penalty_logdet
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_min && t <= self.t_max
    }

    /// Evaluation matrix with entry `(d, l) = θ_l(times[d])`.
    pub fn eval(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(times.len(), self.k);
        let mut local = [0.0; DEGREE + 1];
        for (d, &t) in times.iter().enumerate() {
            let span = self.span(t)?;
            self.nonzero_basis(span, t, &mut local);
            for (r, v) in local.iter().enumerate() {
                out[(d, span - DEGREE + r)] = *v;
            }
        }
        Ok(out)
    }

    /// Row of basis values at a single time.
    pub fn eval_row(&self, t: f64) -> Result<Vec<f64>> {
        let m = self.eval(&[t])?;
        Ok(m.row(0).iter().copied().collect())
    }

    fn span(&self, t: f64) -> Result<usize> {
        if !t.is_finite() || !self.contains(t) {
            return Err(FosrError::OutOfDomain {
                time: t,
                t_min: self.t_min,
                t_max: self.t_max,
            });
        }
        let last = self.k - 1;
        if t >= self.knots[last + 1] {
            return Ok(last);
        }
        // knots[span] <= t < knots[span + 1]
        let mut lo = DEGREE;
        let mut hi = last + 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(lo)
    }

    // Cox–de Boor triangle for the degree+1 functions supported on `span`.
    fn nonzero_basis(&self, span: usize, t: f64, out: &mut [f64; DEGREE + 1]) {
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        out[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = t - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }
}

/// `Δ₂ᵀΔ₂` for the `(k − 2) × k` second-difference operator.
fn second_difference_gram(k: usize) -> DMatrix<f64> {
    let mut d2 = DMatrix::zeros(k - 2, k);
    for r in 0..k - 2 {
        d2[(r, r)] = 1.0;
        d2[(r, r + 1)] = -2.0;
        d2[(r, r + 2)] = 1.0;
    }
    d2.tr_mul(&d2)
}

/// `count` equally spaced points covering `[t_min, t_max]`.
pub fn uniform_grid(t_min: f64, t_max: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![t_min],
        _ => (0..count)
            .map(|i| t_min + (t_max - t_min) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}
