//! AR(1)-structured error covariance.
//!
//! Three constructions are supported:
//!
//! * `Decade`: lag-`k` entry `σ²ρ^k`, with `k` counted in grid steps.
//! * `Continuous`: `σ²ρ^{|Δt| / base_step}` for arbitrary times, `ρ ∈ (0, 1)`.
//! * `Supplementary`: two index-based constructors. The `Obs` variant puts
//!   `σ²ρ^{2k−1}` at lag `k ≥ 1`; the `Full` variant puts `σ²ρ^k`.
//!
//! Decade and continuous covariances are Markov in time, so their inverse
//! is tridiagonal and determinants and solves run in `O(D)`. The
//! supplementary constructions go through a dense Cholesky factor.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{FosrError, Result};
use crate::linalg::chol_logdet;

const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuppVariant {
    Obs,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovMode {
    Decade,
    Continuous,
    Supplementary(SuppVariant),
}

impl CovMode {
    /// Open interval of admissible correlation parameters.
    pub fn rho_domain(self) -> (f64, f64) {
        match self {
            CovMode::Continuous => (0.0, 1.0),
            _ => (-1.0, 1.0),
        }
    }

    pub fn rho_in_domain(self, rho: f64) -> bool {
        let (lo, hi) = self.rho_domain();
        rho > lo && rho < hi
    }

    pub fn is_discrete(self) -> bool {
        !matches!(self, CovMode::Continuous)
    }

    pub fn code(self) -> u64 {
        match self {
            CovMode::Decade => 0,
            CovMode::Continuous => 1,
            CovMode::Supplementary(SuppVariant::Obs) => 2,
            CovMode::Supplementary(SuppVariant::Full) => 3,
        }
    }

    pub fn from_code(code: u64) -> Result<Self> {
        Ok(match code {
            0 => CovMode::Decade,
            1 => CovMode::Continuous,
            2 => CovMode::Supplementary(SuppVariant::Obs),
            3 => CovMode::Supplementary(SuppVariant::Full),
            _ => return Err(FosrError::Format(format!("unknown covariance mode code {code}"))),
        })
    }
}

/// The user-facing `cov_mode` setting. It selects the covariance used
/// for fitting and the one used for kriging, which differ only in the
/// supplementary-literal setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovSetting {
    Decade,
    Continuous,
    SupplementaryLiteral,
}

impl CovSetting {
    pub fn fit_mode(self) -> (CovMode, f64) {
        match self {
            CovSetting::Decade => (CovMode::Decade, 10.0),
            CovSetting::Continuous => (CovMode::Continuous, 10.0),
            CovSetting::SupplementaryLiteral => (CovMode::Supplementary(SuppVariant::Obs), 10.0),
        }
    }

    pub fn krige_mode(self) -> (CovMode, f64) {
        match self {
            CovSetting::Decade => (CovMode::Decade, 10.0),
            CovSetting::Continuous => (CovMode::Continuous, 10.0),
            CovSetting::SupplementaryLiteral => (CovMode::Supplementary(SuppVariant::Full), 5.0),
        }
    }
}

impl FromStr for CovSetting {
    type Err = FosrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "decade" => Ok(CovSetting::Decade),
            "continuous" => Ok(CovSetting::Continuous),
            "supplementary-literal" => Ok(CovSetting::SupplementaryLiteral),
            other => Err(FosrError::Config(format!(
                "cov_mode must be decade, continuous or supplementary-literal, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for CovSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovSetting::Decade => "decade",
            CovSetting::Continuous => "continuous",
            CovSetting::SupplementaryLiteral => "supplementary-literal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Spec {
    pub sigma2: f64,
    pub rho: f64,
    pub mode: CovMode,
    /// Years between adjacent grid points.
    pub base_step: f64,
}

impl Ar1Spec {
    pub fn new(sigma2: f64, rho: f64, mode: CovMode, base_step: f64) -> Result<Self> {
        let spec = Self { sigma2, rho, mode, base_step };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(FosrError::InvalidParameter(format!("sigma2 = {} must be > 0", self.sigma2)));
        }
        if !(self.base_step > 0.0 && self.base_step.is_finite()) {
            return Err(FosrError::InvalidParameter(format!(
                "base_step = {} must be > 0",
                self.base_step
            )));
        }
        if !self.mode.rho_in_domain(self.rho) {
            let (lo, hi) = self.mode.rho_domain();
            return Err(FosrError::InvalidParameter(format!(
                "rho = {} outside ({lo}, {hi}) for {:?} mode",
                self.rho, self.mode
            )));
        }
        Ok(())
    }

    pub fn with_sigma2(&self, sigma2: f64) -> Self {
        Self { sigma2, ..*self }
    }

    /// Lag between two times: integer grid steps for discrete modes,
    /// fractional steps for the continuous mode.
    fn lag(&self, a: f64, b: f64) -> Result<f64> {
        let steps = (b - a).abs() / self.base_step;
        if self.mode.is_discrete() {
            let rounded = steps.round();
            if (steps - rounded).abs() > GRID_TOL {
                return Err(FosrError::MisalignedGrid {
                    step: self.base_step,
                    detail: format!("{a} and {b} are {steps} steps apart"),
                });
            }
            Ok(rounded)
        } else {
            Ok(steps)
        }
    }

    /// Correlation at a given lag.
    pub fn correlation(&self, lag: f64) -> f64 {
        if lag == 0.0 {
            return 1.0;
        }
        match self.mode {
            CovMode::Decade | CovMode::Supplementary(SuppVariant::Full) => {
                self.rho.powi(lag as i32)
            }
            CovMode::Continuous => self.rho.powf(lag),
            CovMode::Supplementary(SuppVariant::Obs) => self.rho.powi(2 * lag as i32 - 1),
        }
    }
}

fn check_increasing(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(FosrError::InvalidDimension("empty time grid".into()));
    }
    if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FosrError::InvalidRange("times must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// Dense covariance matrix over `times`.
pub fn build_cov(spec: &Ar1Spec, times: &[f64]) -> Result<DMatrix<f64>> {
    spec.validate()?;
    check_increasing(times)?;
    let n = times.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = spec.sigma2;
        for j in 0..i {
            let v = spec.sigma2 * spec.correlation(spec.lag(times[j], times[i])?);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Uniform grid of `d` points spaced `base_step` apart.
fn unit_grid(spec: &Ar1Spec, d: usize) -> Vec<f64> {
    (0..d).map(|i| i as f64 * spec.base_step).collect()
}

/// log det Σ on a uniform grid of `d` points.
pub fn cov_logdet(spec: &Ar1Spec, d: usize) -> Result<f64> {
    if d == 0 {
        return Err(FosrError::InvalidDimension("D must be at least 1".into()));
    }
    Ok(Ar1Factor::new(spec, &unit_grid(spec, d))?.logdet())
}

/// `Σ⁻¹ · rhs`.
pub fn cov_solve(spec: &Ar1Spec, times: &[f64], rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ar1Factor::new(spec, times)?.solve(rhs)
}

#[derive(Debug, Clone)]
enum FactorKind {
    /// Innovation form: `u_1 = x_1`, `u_d = (x_d − r_d x_{d−1}) / s_d`
    /// whitens the correlation matrix, with `s_d = sqrt(1 − r_d²)`.
    Markov { r: Vec<f64>, s: Vec<f64> },
    Dense { chol: Cholesky<f64, Dyn> },
}

/// Factorized covariance over a fixed set of times.
#[derive(Debug, Clone)]
pub struct Ar1Factor {
    sigma2: f64,
    dim: usize,
    logdet: f64,
    kind: FactorKind,
}

impl Ar1Factor {
    pub fn new(spec: &Ar1Spec, times: &[f64]) -> Result<Self> {
        spec.validate()?;
        check_increasing(times)?;
        let dim = times.len();
        match spec.mode {
            CovMode::Decade | CovMode::Continuous => {
                let mut r = vec![0.0; dim];
                let mut s = vec![1.0; dim];
                let mut logdet = dim as f64 * spec.sigma2.ln();
                for d in 1..dim {
                    let rd = spec.correlation(spec.lag(times[d - 1], times[d])?);
                    let one_minus = 1.0 - rd * rd;
                    if one_minus <= 0.0 {
                        return Err(FosrError::NotPositiveDefinite(format!(
                            "lag correlation {rd} at step {d}"
                        )));
                    }
                    r[d] = rd;
                    s[d] = one_minus.sqrt();
                    logdet += one_minus.ln();
                }
                Ok(Self { sigma2: spec.sigma2, dim, logdet, kind: FactorKind::Markov { r, s } })
            }
            CovMode::Supplementary(_) => {
                let m = build_cov(spec, times)?;
                let chol = Cholesky::new(m).ok_or_else(|| {
                    FosrError::NotPositiveDefinite(format!(
                        "supplementary covariance at rho = {}",
                        spec.rho
                    ))
                })?;
                let logdet = chol_logdet(&chol);
                Ok(Self { sigma2: spec.sigma2, dim, logdet, kind: FactorKind::Dense { chol } })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// `xᵀ Σ⁻¹ x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            FactorKind::Markov { r, s } => {
                let mut acc = x[0] * x[0];
                for d in 1..self.dim {
                    let u = (x[d] - r[d] * x[d - 1]) / s[d];
                    acc += u * u;
                }
                acc / self.sigma2
            }
            FactorKind::Dense { chol } => {
                let v = DVector::from_column_slice(x);
                let w = chol
                    .l_dirty()
                    .solve_lower_triangular(&v)
                    .expect("cholesky factor has a positive diagonal");
                w.norm_squared()
            }
        }
    }

    /// `log N(x; 0, Σ)`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        -0.5 * (self.dim as f64 * crate::linalg::LN_2PI + self.logdet + self.quad_form(x))
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.dim {
            return Err(FosrError::DimensionMismatch(format!(
                "rhs has {} rows, covariance is {}x{}",
                rhs.nrows(),
                self.dim,
                self.dim
            )));
        }
        match &self.kind {
            FactorKind::Markov { r, s } => {
                let mut out = DMatrix::zeros(self.dim, rhs.ncols());
                let mut u = vec![0.0; self.dim];
                for c in 0..rhs.ncols() {
                    let x = rhs.column(c);
                    // u = A x, then Σ⁻¹x = Aᵀu / σ²
                    u[0] = x[0];
                    for d in 1..self.dim {
                        u[d] = (x[d] - r[d] * x[d - 1]) / s[d];
                    }
                    for d in 0..self.dim {
                        let mut v = u[d] / s[d];
                        if d + 1 < self.dim {
                            v -= r[d + 1] * u[d + 1] / s[d + 1];
                        }
                        out[(d, c)] = v / self.sigma2;
                    }
                }
                Ok(out)
            }
            FactorKind::Dense { chol } => Ok(chol.solve(rhs)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn decades(d: usize) -> Vec<f64> {
        (0..d).map(|i| 2020.0 + 10.0 * i as f64).collect()
    }

    #[test]
    fn decade_example_matrix() {
        let spec = Ar1Spec::new(2.0, 0.5, CovMode::Decade, 10.0).unwrap();
        let m = build_cov(&spec, &decades(3)).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, 1.0, 2.0, 1.0, 0.5, 1.0, 2.0]);
        assert_eq!(m, expect);
    }

    #[test]
    fn zero_rho_is_diagonal() {
        let spec = Ar1Spec::new(3.0, 0.0, CovMode::Decade, 10.0).unwrap();
        let m = build_cov(&spec, &decades(4)).unwrap();
        assert_eq!(m, DMatrix::identity(4, 4) * 3.0);
        let obs = Ar1Spec::new(3.0, 0.0, CovMode::Supplementary(SuppVariant::Obs), 10.0).unwrap();
        assert_eq!(build_cov(&obs, &decades(4)).unwrap(), DMatrix::identity(4, 4) * 3.0);
        let rhs = DMatrix::from_fn(4, 2, |i, j| (i + j) as f64);
        let sol = cov_solve(&spec, &decades(4), &rhs).unwrap();
        assert_relative_eq!(sol, rhs / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn supplementary_obs_lag_pattern() {
        let spec = Ar1Spec::new(1.0, 0.5, CovMode::Supplementary(SuppVariant::Obs), 10.0).unwrap();
        let m = build_cov(&spec, &decades(3)).unwrap();
        assert_eq!(m[(0, 1)], 0.5);
        assert_eq!(m[(1, 2)], 0.5);
        assert_eq!(m[(0, 2)], 0.125);
        let full = Ar1Spec::new(1.0, 0.5, CovMode::Supplementary(SuppVariant::Full), 5.0).unwrap();
        let m = build_cov(&full, &[2020.0, 2025.0, 2030.0]).unwrap();
        assert_eq!(m[(0, 2)], 0.25);
    }

    #[test]
    fn continuous_mode_requires_positive_rho() {
        assert!(Ar1Spec::new(1.0, 0.0, CovMode::Continuous, 10.0).is_err());
        assert!(Ar1Spec::new(1.0, -0.2, CovMode::Continuous, 10.0).is_err());
        assert!(Ar1Spec::new(1.0, 1.0, CovMode::Decade, 10.0).is_err());
        assert!(Ar1Spec::new(0.0, 0.5, CovMode::Decade, 10.0).is_err());
    }

    #[test]
    fn continuous_restricted_to_decades_matches_decade_mode() {
        for rho in [0.05, 0.3, 0.5, 0.9] {
            let c = Ar1Spec::new(1.7, rho, CovMode::Continuous, 10.0).unwrap();
            let d = Ar1Spec::new(1.7, rho, CovMode::Decade, 10.0).unwrap();
            let times = decades(8);
            let mc = build_cov(&c, &times).unwrap();
            let md = build_cov(&d, &times).unwrap();
            assert_relative_eq!(mc, md, max_relative = 1e-14);
        }
    }

    #[test]
    fn misaligned_grid_is_rejected() {
        let spec = Ar1Spec::new(1.0, 0.5, CovMode::Decade, 10.0).unwrap();
        assert!(matches!(
            build_cov(&spec, &[2020.0, 2025.0]),
            Err(FosrError::MisalignedGrid { .. })
        ));
        let c = Ar1Spec::new(1.0, 0.5, CovMode::Continuous, 10.0).unwrap();
        assert!(build_cov(&c, &[2020.0, 2025.0]).is_ok());
    }

    #[test]
    fn logdet_examples() {
        let spec = Ar1Spec::new(1.0, 0.0, CovMode::Decade, 10.0).unwrap();
        assert_eq!(cov_logdet(&spec, 8).unwrap(), 0.0);
        let spec = Ar1Spec::new(2.0, 0.5, CovMode::Decade, 10.0).unwrap();
        let expect = 3.0 * 2f64.ln() + 2.0 * 0.75f64.ln();
        let got = cov_logdet(&spec, 3).unwrap();
        assert!((got - expect).abs() < 1e-12);
        let dense = build_cov(&spec, &decades(3)).unwrap().determinant().ln();
        assert!((got - dense).abs() < 1e-10);
    }

    #[test]
    fn two_by_two_solve() {
        let spec = Ar1Spec::new(1.0, 0.5, CovMode::Decade, 10.0).unwrap();
        let rhs = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let sol = cov_solve(&spec, &decades(2), &rhs).unwrap();
        assert!((sol[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
        assert!((sol[(1, 0)] + 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn solve_dimension_mismatch() {
        let spec = Ar1Spec::new(1.0, 0.5, CovMode::Decade, 10.0).unwrap();
        let rhs = DMatrix::zeros(3, 1);
        assert!(matches!(
            cov_solve(&spec, &decades(2), &rhs),
            Err(FosrError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn negative_rho_sweep_is_positive_definite() {
        for i in -19..=19 {
            let rho = 0.05 * i as f64;
            let spec = Ar1Spec::new(1.3, rho, CovMode::Decade, 10.0).unwrap();
            let m = build_cov(&spec, &decades(8)).unwrap();
            assert_eq!(m, m.transpose());
            assert!(Cholesky::new(m).is_some(), "rho = {rho}");
        }
    }

    #[test]
    fn setting_parses() {
        assert_eq!("continuous".parse::<CovSetting>().unwrap(), CovSetting::Continuous);
        assert_eq!(
            "supplementary-literal".parse::<CovSetting>().unwrap().krige_mode().1,
            5.0
        );
        assert!("ar2".parse::<CovSetting>().is_err());
    }
}
