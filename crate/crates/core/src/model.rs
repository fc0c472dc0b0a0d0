//! Dataset, hyperparameters, parameter state and the joint log-density
//! of the hierarchically centred model
//!
//! ```text
//! y_ij        ~ N_D(Θ B_{Z,i}, Σ(σ², ρ))
//! B_{Z,i}     ~ N_K(B_W w_i, σ²_Z P⁻¹)        σ²_Z     ~ IG(a_Z, b_Z)
//! B_{W,k}     ~ N_K(0, σ²_{W,k} P⁻¹)          σ²_{W,k} ~ IG(a_{W,k}, b_{W,k})
//! σ²          ~ IG(ν/2, νψ/2)                 ψ        ~ Γ(ν₀/2, ν₀/(2ψ₀))
//! ρ           ~ N(0, 1) restricted to the covariance mode's domain
//! ```

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::cov::{build_cov, Ar1Factor, Ar1Spec, CovMode};
use crate::error::{FosrError, Result};
use crate::linalg::{cholesky, LN_2PI};
use crate::spline::BasisSystem;

/// Ensemble of simulator trajectories on a common time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleDataset {
    /// `N × D` responses, one row per (scenario, simulator) curve.
    pub y: DMatrix<f64>,
    /// `I × (p + 1)` covariates with a leading column of ones.
    pub w: DMatrix<f64>,
    /// Scenario index (0-based) of each response row.
    pub group_of: Vec<usize>,
    pub times: Vec<f64>,
    pub scenario_labels: Vec<String>,
    /// Simulator identifier of each response row.
    pub model_labels: Vec<String>,
    /// Names of the `p` non-intercept covariates.
    pub covariate_names: Vec<String>,
}

/// Everything about a dataset except the responses.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSkeleton {
    pub w: DMatrix<f64>,
    pub group_of: Vec<usize>,
    pub times: Vec<f64>,
    pub scenario_labels: Vec<String>,
    pub model_labels: Vec<String>,
    pub covariate_names: Vec<String>,
}

impl DesignSkeleton {
    pub fn n_rows(&self) -> usize {
        self.group_of.len()
    }

    pub fn n_scenarios(&self) -> usize {
        self.w.nrows()
    }

    pub fn with_responses(&self, y: DMatrix<f64>) -> Result<EnsembleDataset> {
        EnsembleDataset::new(
            y,
            self.w.clone(),
            self.group_of.clone(),
            self.times.clone(),
            self.scenario_labels.clone(),
            self.model_labels.clone(),
            self.covariate_names.clone(),
        )
    }
}

impl EnsembleDataset {
    pub fn new(
        y: DMatrix<f64>,
        w: DMatrix<f64>,
        group_of: Vec<usize>,
        times: Vec<f64>,
        scenario_labels: Vec<String>,
        model_labels: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.nrows();
        let i_count = w.nrows();
        if n == 0 || i_count == 0 || times.is_empty() {
            return Err(FosrError::Empty("dataset needs at least one curve and one time".into()));
        }
        if y.ncols() != times.len() {
            return Err(FosrError::DimensionMismatch(format!(
                "Y has {} columns but {} times",
                y.ncols(),
                times.len()
            )));
        }
        if group_of.len() != n || model_labels.len() != n {
            return Err(FosrError::DimensionMismatch(
                "group_of and model_labels need one entry per response row".into(),
            ));
        }
        if scenario_labels.len() != i_count || covariate_names.len() + 1 != w.ncols() {
            return Err(FosrError::DimensionMismatch(
                "scenario labels / covariate names do not match W".into(),
            ));
        }
        if times.windows(2).any(|p| p[0] >= p[1]) {
            return Err(FosrError::InvalidRange("times must be strictly increasing".into()));
        }
        if y.iter().any(|v| !v.is_finite()) || w.iter().any(|v| !v.is_finite()) {
            return Err(FosrError::InvalidParameter("non-finite entries in Y or W".into()));
        }
        if w.column(0).iter().any(|&v| v != 1.0) {
            return Err(FosrError::SingularDesign("first column of W must be all ones".into()));
        }
        let mut counts = vec![0usize; i_count];
        for &g in &group_of {
            if g >= i_count {
                return Err(FosrError::DimensionMismatch(format!("scenario index {g} out of range")));
            }
            counts[g] += 1;
        }
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(FosrError::InvalidDimension(format!(
                "scenario {} has no curves",
                scenario_labels[i]
            )));
        }
        if w.ncols() > i_count || w.clone().svd(false, false).rank(1e-10) < w.ncols() {
            return Err(FosrError::SingularDesign("W does not have full column rank".into()));
        }
        Ok(Self { y, w, group_of, times, scenario_labels, model_labels, covariate_names })
    }

    pub fn n_rows(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_scenarios(&self) -> usize {
        self.w.nrows()
    }

    /// `p + 1`, the number of columns of `W`.
    pub fn n_covariates(&self) -> usize {
        self.w.ncols()
    }

    pub fn rows_per_scenario(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_scenarios()];
        for &g in &self.group_of {
            counts[g] += 1;
        }
        counts
    }

    pub fn skeleton(&self) -> DesignSkeleton {
        DesignSkeleton {
            w: self.w.clone(),
            group_of: self.group_of.clone(),
            times: self.times.clone(),
            scenario_labels: self.scenario_labels.clone(),
            model_labels: self.model_labels.clone(),
            covariate_names: self.covariate_names.clone(),
        }
    }
}

/// Fixed prior constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub a_w: Vec<f64>,
    pub b_w: Vec<f64>,
    pub a_z: f64,
    pub b_z: f64,
    pub nu: f64,
    pub nu0: f64,
    pub psi0: f64,
    pub alpha: f64,
    pub k: usize,
}

impl HyperParams {
    /// Reference configuration reported for the 23 × 5 ensemble.
    pub fn paper_reference() -> Self {
        Self {
            a_w: vec![4.0; 6],
            b_w: vec![0.51, 0.0002, 0.002, 0.001, 0.0005, 0.0001],
            a_z: 92.0,
            b_z: 0.0038,
            nu: 7.0,
            nu0: 2.0,
            psi0: 0.047,
            alpha: 0.01,
            k: 8,
        }
    }

    /// Reference configuration with `ψ ~ Γ(1, 0.75)`, i.e. `ν₀ = 2`,
    /// `ψ₀ = 4/3`.
    pub fn paper_reference_stan() -> Self {
        Self { psi0: 4.0 / 3.0, ..Self::paper_reference() }
    }

    pub fn alternative1() -> Self {
        Self {
            a_w: vec![3.0; 6],
            b_w: vec![2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
            a_z: 2.0,
            b_z: 6.0,
            nu: 11.0,
            ..Self::paper_reference()
        }
    }

    pub fn alternative2() -> Self {
        Self {
            a_w: vec![5.0; 6],
            b_w: vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0],
            a_z: 4.0,
            b_z: 7.0,
            nu: 20.0,
            ..Self::paper_reference()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper-reference" => Ok(Self::paper_reference()),
            "paper-reference-stan" => Ok(Self::paper_reference_stan()),
            "alt1" => Ok(Self::alternative1()),
            "alt2" => Ok(Self::alternative2()),
            other => Err(FosrError::Config(format!("unknown preset {other:?}"))),
        }
    }

    pub fn validate(&self, n_cov: usize) -> Result<()> {
        if self.a_w.len() != n_cov || self.b_w.len() != n_cov {
            return Err(FosrError::DimensionMismatch(format!(
                "a_W/b_W have lengths {}/{}, design has p + 1 = {n_cov}",
                self.a_w.len(),
                self.b_w.len()
            )));
        }
        let all = self
            .a_w
            .iter()
            .chain(&self.b_w)
            .chain([&self.a_z, &self.b_z, &self.nu, &self.nu0, &self.psi0]);
        for v in all {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(FosrError::InvalidParameter(format!(
                    "hyperparameters must be strictly positive, found {v}"
                )));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(FosrError::InvalidRange(format!("alpha = {} outside (0, 1]", self.alpha)));
        }
        if self.k < 4 {
            return Err(FosrError::InvalidDimension(format!("K = {} < 4", self.k)));
        }
        Ok(())
    }
}

/// One point of the sampler's state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    /// `K × (p + 1)` fixed-effect scores.
    pub b_w: DMatrix<f64>,
    /// `K × I` random-effect scores.
    pub b_z: DMatrix<f64>,
    pub sig2_w: Vec<f64>,
    pub sig2_z: f64,
    pub sigma2: f64,
    pub psi: f64,
    pub rho: f64,
}

impl ParamState {
    /// Number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.b_w.len() + self.b_z.len() + self.sig2_w.len() + 4
    }

    /// Flat layout: `B_W` (column-major), `B_Z` (column-major), `σ²_W`,
    /// `σ²_Z`, `σ²`, `ψ`, `ρ`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_scalars());
        v.extend(self.b_w.iter());
        v.extend(self.b_z.iter());
        v.extend(&self.sig2_w);
        v.extend([self.sig2_z, self.sigma2, self.psi, self.rho]);
        v
    }

    pub fn from_flat(flat: &[f64], k: usize, n_cov: usize, n_scen: usize) -> Result<Self> {
        let need = k * n_cov + k * n_scen + n_cov + 4;
        if flat.len() != need {
            return Err(FosrError::DimensionMismatch(format!(
                "flat state has {} values, expected {need}",
                flat.len()
            )));
        }
        let (bw, rest) = flat.split_at(k * n_cov);
        let (bz, rest) = rest.split_at(k * n_scen);
        let (s2w, rest) = rest.split_at(n_cov);
        Ok(Self {
            b_w: DMatrix::from_column_slice(k, n_cov, bw),
            b_z: DMatrix::from_column_slice(k, n_scen, bz),
            sig2_w: s2w.to_vec(),
            sig2_z: rest[0],
            sigma2: rest[1],
            psi: rest[2],
            rho: rest[3],
        })
    }

    /// Names matching [`ParamState::to_flat`], 0-based indices.
    pub fn scalar_names(k: usize, n_cov: usize, n_scen: usize) -> Vec<String> {
        let mut names = Vec::new();
        for c in 0..n_cov {
            for l in 0..k {
                names.push(format!("B_W[{l},{c}]"));
            }
        }
        for i in 0..n_scen {
            for l in 0..k {
                names.push(format!("B_Z[{l},{i}]"));
            }
        }
        for c in 0..n_cov {
            names.push(format!("sig2_W[{c}]"));
        }
        names.extend(["sig2_Z", "sigma2", "psi", "rho"].map(String::from));
        names
    }
}

/// `log IG(x; shape, rate)`.
pub fn log_inv_gamma(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 || !x.is_finite() {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - rate / x
}

/// `log Γ(x; shape, rate)`.
pub fn log_gamma_density(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 || !x.is_finite() {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// The model bound to a dataset, basis, hyperparameters and covariance mode.
#[derive(Debug, Clone)]
pub struct FosrModel {
    pub data: EnsembleDataset,
    pub basis: BasisSystem,
    pub hp: HyperParams,
    pub mode: CovMode,
    pub base_step: f64,
    /// `D × K` basis evaluated at the observed times.
    pub theta: DMatrix<f64>,
    /// `D × I` per-scenario sums `Σ_j y_ij`.
    pub scenario_sums: DMatrix<f64>,
    pub rows_per_scenario: Vec<usize>,
}

impl FosrModel {
    pub fn new(
        data: EnsembleDataset,
        basis: BasisSystem,
        hp: HyperParams,
        mode: CovMode,
        base_step: f64,
    ) -> Result<Self> {
        hp.validate(data.n_covariates())?;
        if hp.k != basis.k() {
            return Err(FosrError::DimensionMismatch(format!(
                "hyperparameters say K = {}, basis has K = {}",
                hp.k,
                basis.k()
            )));
        }
        let theta = basis.eval(&data.times)?;
        let mut scenario_sums = DMatrix::zeros(data.n_times(), data.n_scenarios());
        for (n, &g) in data.group_of.iter().enumerate() {
            for d in 0..data.n_times() {
                scenario_sums[(d, g)] += data.y[(n, d)];
            }
        }
        let rows_per_scenario = data.rows_per_scenario();
        Ok(Self { data, basis, hp, mode, base_step, theta, scenario_sums, rows_per_scenario })
    }

    pub fn k(&self) -> usize {
        self.basis.k()
    }

    pub fn check_dims(&self, state: &ParamState) -> Result<()> {
        let (k, c, i) = (self.k(), self.data.n_covariates(), self.data.n_scenarios());
        if state.b_w.shape() != (k, c)
            || state.b_z.shape() != (k, i)
            || state.sig2_w.len() != c
        {
            return Err(FosrError::DimensionMismatch(format!(
                "state has B_W {:?}, B_Z {:?}, {} sig2_W; model needs ({k},{c}), ({k},{i}), {c}",
                state.b_w.shape(),
                state.b_z.shape(),
                state.sig2_w.len()
            )));
        }
        Ok(())
    }

    pub fn ar1_spec(&self, sigma2: f64, rho: f64) -> Result<Ar1Spec> {
        Ar1Spec::new(sigma2, rho, self.mode, self.base_step)
    }

    /// Factor of `Σ(σ², ρ)` on the observed grid, or `None` when the
    /// parameters fall outside the model's domain.
    pub fn error_factor(&self, sigma2: f64, rho: f64) -> Option<Ar1Factor> {
        let spec = self.ar1_spec(sigma2, rho).ok()?;
        Ar1Factor::new(&spec, &self.data.times).ok()
    }

    /// `D × I` fitted scenario curves `Θ B_Z`.
    pub fn fitted(&self, b_z: &DMatrix<f64>) -> DMatrix<f64> {
        &self.theta * b_z
    }

    /// `N × D` residuals `y_ij − Θ B_{Z,i}`.
    pub fn residuals(&self, b_z: &DMatrix<f64>) -> DMatrix<f64> {
        let fitted = self.fitted(b_z);
        let mut e = self.data.y.clone();
        for (n, &g) in self.data.group_of.iter().enumerate() {
            for d in 0..self.data.n_times() {
                e[(n, d)] -= fitted[(d, g)];
            }
        }
        e
    }

    /// Per-curve log-likelihood contributions.
    pub fn curve_log_likelihoods(&self, state: &ParamState) -> Result<Vec<f64>> {
        self.check_dims(state)?;
        let n = self.data.n_rows();
        let Some(factor) = self.error_factor(state.sigma2, state.rho) else {
            return Ok(vec![f64::NEG_INFINITY; n]);
        };
        let e = self.residuals(&state.b_z);
        let mut row = vec![0.0; self.data.n_times()];
        Ok((0..n)
            .map(|r| {
                for (d, v) in row.iter_mut().enumerate() {
                    *v = e[(r, d)];
                }
                factor.log_density(&row)
            })
            .collect())
    }

    pub fn log_likelihood(&self, state: &ParamState) -> Result<f64> {
        Ok(self.curve_log_likelihoods(state)?.iter().sum())
    }

    /// `Σ_n e_nᵀ R(ρ)⁻¹ e_n` for the correlation matrix `R = Σ / σ²`.
    pub fn residual_quad_form(&self, b_z: &DMatrix<f64>, rho: f64) -> Option<f64> {
        let factor = self.error_factor(1.0, rho)?;
        let e = self.residuals(b_z);
        let mut row = vec![0.0; self.data.n_times()];
        let mut acc = 0.0;
        for r in 0..self.data.n_rows() {
            for (d, v) in row.iter_mut().enumerate() {
                *v = e[(r, d)];
            }
            acc += factor.quad_form(&row);
        }
        Some(acc)
    }

    /// `log N_K(x; m, σ² P⁻¹)`.
    pub fn log_score_prior(&self, x: &DVector<f64>, mean: &DVector<f64>, var: f64) -> f64 {
        if var <= 0.0 || !var.is_finite() {
            return f64::NEG_INFINITY;
        }
        let k = self.k() as f64;
        let diff = x - mean;
        let quad = diff.dot(&(self.basis.penalty() * &diff));
        -0.5 * k * LN_2PI - 0.5 * k * var.ln() + 0.5 * self.basis.penalty_logdet()
            - 0.5 * quad / var
    }

    pub fn log_rho_prior(&self, rho: f64) -> f64 {
        if !self.mode.rho_in_domain(rho) {
            return f64::NEG_INFINITY;
        }
        -0.5 * rho * rho - 0.5 * LN_2PI
    }

    pub fn log_prior(&self, state: &ParamState) -> Result<f64> {
        self.check_dims(state)?;
        let hp = &self.hp;
        let k = self.k();
        let mut lp = 0.0;
        let means = &state.b_w * self.data.w.transpose();
        for i in 0..self.data.n_scenarios() {
            lp += self.log_score_prior(
                &state.b_z.column(i).into_owned(),
                &means.column(i).into_owned(),
                state.sig2_z,
            );
        }
        let zero = DVector::zeros(k);
        for c in 0..self.data.n_covariates() {
            lp += self.log_score_prior(&state.b_w.column(c).into_owned(), &zero, state.sig2_w[c]);
            lp += log_inv_gamma(state.sig2_w[c], hp.a_w[c], hp.b_w[c]);
        }
        lp += log_inv_gamma(state.sig2_z, hp.a_z, hp.b_z);
        lp += log_inv_gamma(state.sigma2, hp.nu / 2.0, hp.nu * state.psi / 2.0);
        lp += log_gamma_density(state.psi, hp.nu0 / 2.0, hp.nu0 / (2.0 * hp.psi0));
        lp += self.log_rho_prior(state.rho);
        if lp.is_nan() {
            lp = f64::NEG_INFINITY;
        }
        Ok(lp)
    }

    pub fn log_joint(&self, state: &ParamState) -> Result<f64> {
        let lp = self.log_prior(state)?;
        if lp == f64::NEG_INFINITY {
            return Ok(lp);
        }
        Ok(lp + self.log_likelihood(state)?)
    }
}

impl FosrModel {
    /// Unconstrained coordinates in the flat layout: variances and `ψ` on
    /// the log scale, `ρ` through logit on `(0, 1)` or atanh on `(−1, 1)`.
    pub fn to_unconstrained(&self, state: &ParamState) -> Vec<f64> {
        let mut v = state.to_flat();
        let n = v.len();
        let first_var = n - state.sig2_w.len() - 4;
        for x in &mut v[first_var..n - 1] {
            *x = x.ln();
        }
        v[n - 1] = match self.mode {
            CovMode::Continuous => (state.rho / (1.0 - state.rho)).ln(),
            _ => state.rho.atanh(),
        };
        v
    }

    pub fn from_unconstrained(&self, x: &[f64]) -> Result<ParamState> {
        let n_cov = self.data.n_covariates();
        let mut v = x.to_vec();
        let n = v.len();
        if n < n_cov + 4 {
            return Err(FosrError::DimensionMismatch("unconstrained vector too short".into()));
        }
        for x in &mut v[n - n_cov - 4..n - 1] {
            *x = x.exp();
        }
        v[n - 1] = match self.mode {
            CovMode::Continuous => 1.0 / (1.0 + (-v[n - 1]).exp()),
            _ => v[n - 1].tanh(),
        };
        ParamState::from_flat(&v, self.k(), n_cov, self.data.n_scenarios())
    }

    /// Central-difference gradient of [`FosrModel::log_joint`] with respect
    /// to the unconstrained coordinates (no Jacobian term).
    pub fn numeric_gradient(&self, state: &ParamState, h: f64) -> Result<Vec<f64>> {
        let x0 = self.to_unconstrained(state);
        let mut grad = Vec::with_capacity(x0.len());
        let mut x = x0.clone();
        for j in 0..x0.len() {
            x[j] = x0[j] + h;
            let up = self.log_joint(&self.from_unconstrained(&x)?)?;
            x[j] = x0[j] - h;
            let down = self.log_joint(&self.from_unconstrained(&x)?)?;
            x[j] = x0[j];
            grad.push((up - down) / (2.0 * h));
        }
        Ok(grad)
    }
}

/// Draws responses `y_ij = Θ B_{Z,i} + ε_ij`, `ε_ij ~ N(0, Σ)`,
/// deterministically from `seed`.
pub fn simulate_dataset(
    truth: &ParamState,
    design: &DesignSkeleton,
    basis: &BasisSystem,
    mode: CovMode,
    base_step: f64,
    seed: u64,
) -> Result<EnsembleDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = simulate_responses(truth, design, basis, mode, base_step, &mut rng)?;
    design.with_responses(y)
}

pub fn simulate_responses<R: rand::Rng + ?Sized>(
    truth: &ParamState,
    design: &DesignSkeleton,
    basis: &BasisSystem,
    mode: CovMode,
    base_step: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let d = design.times.len();
    if truth.b_z.shape() != (basis.k(), design.n_scenarios()) {
        return Err(FosrError::DimensionMismatch("truth B_Z does not match design".into()));
    }
    let theta = basis.eval(&design.times)?;
    let fitted = &theta * &truth.b_z;
    let spec = Ar1Spec::new(truth.sigma2, truth.rho, mode, base_step)?;
    let chol = cholesky(&build_cov(&spec, &design.times)?, "error covariance")?;
    let l = chol.l();
    let mut y = DMatrix::zeros(design.n_rows(), d);
    for (n, &g) in design.group_of.iter().enumerate() {
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let eps = &l * z;
        for t in 0..d {
            y[(n, t)] = fitted[(t, g)] + eps[t];
        }
    }
    Ok(y)
}
