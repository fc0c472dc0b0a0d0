//! Gibbs-within-Metropolis sampler.
//!
//! Every block except `ρ` has a closed-form full conditional:
//!
//! * `B_{Z,i}`: Gaussian with precision `J_i ΘᵀΣ⁻¹Θ + P/σ²_Z`.
//! * `vec(B_W)`: Gaussian with precision `(WᵀW ⊗ P)/σ²_Z + blockdiag(P/σ²_{W,k})`.
//! * `σ²_{W,k}`, `σ²_Z`, `σ²`: inverse gamma; `ψ`: gamma.
//!
//! By default the scores are drawn as one block: `vec(B_W)` from its
//! conditional with `B_Z` integrated out, then every `B_{Z,i}` from its
//! full conditional. The plain two-step update mixes very slowly when
//! `σ²_Z` is small relative to the noise, because `B_Z` and `B_W` then
//! pin each other.
//!
//! `ρ` is updated by a random-walk Metropolis step whose uniform
//! proposal is reflected back into the covariance mode's domain, which
//! keeps the proposal symmetric.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cov::{build_cov, Ar1Factor, CovMode};
use crate::eb::fit_pilot;
use crate::error::{FosrError, Result};
use crate::linalg::{cholesky, PrecisionGaussian};
use crate::model::{log_gamma_density, log_inv_gamma, FosrModel, ParamState};

/// How the spline scores are updated within a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreUpdate {
    /// `B_Z` then `B_W`, each from its full conditional.
    Conditional,
    /// `B_W` with `B_Z` integrated out, then `B_Z` given `B_W`.
    #[default]
    Collapsed,
}

impl std::str::FromStr for ScoreUpdate {
    type Err = FosrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "conditional" => Ok(ScoreUpdate::Conditional),
            "collapsed" => Ok(ScoreUpdate::Collapsed),
            other => Err(FosrError::Config(format!(
                "score_update must be conditional or collapsed, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_iter: usize,
    pub n_warmup: usize,
    pub thin: usize,
    pub seed: u64,
    /// Half-width of the uniform `ρ` proposal.
    pub rho_step: f64,
    /// Robbins–Monro adaptation of `rho_step` during warmup.
    pub adapt: bool,
    pub target_accept: f64,
    pub score_update: ScoreUpdate,
    /// Print progress lines to standard error.
    pub progress: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_iter: 20_000,
            n_warmup: 15_000,
            thin: 1,
            seed: 0,
            rho_step: 0.05,
            adapt: true,
            target_accept: 0.4,
            score_update: ScoreUpdate::Collapsed,
            progress: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(FosrError::InvalidParameter("n_chains must be at least 1".into()));
        }
        if self.n_warmup >= self.n_iter {
            return Err(FosrError::InvalidParameter(format!(
                "n_warmup = {} must be below n_iter = {}",
                self.n_warmup, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(FosrError::InvalidParameter("thin must be at least 1".into()));
        }
        if !(self.rho_step > 0.0 && self.rho_step.is_finite()) {
            return Err(FosrError::InvalidParameter("rho_step must be > 0".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(FosrError::InvalidParameter("target_accept must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        (self.n_iter - self.n_warmup).div_ceil(self.thin)
    }
}

/// `IG(shape, rate)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGammaDist {
    pub shape: f64,
    pub rate: f64,
}

impl InvGammaDist {
    pub fn log_pdf(&self, x: f64) -> f64 {
        log_inv_gamma(x, self.shape, self.rate)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        1.0 / GammaDist { shape: self.shape, rate: self.rate }.sample(rng)
    }
}

/// `Γ(shape, rate)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaDist {
    pub shape: f64,
    pub rate: f64,
}

impl GammaDist {
    pub fn log_pdf(&self, x: f64) -> f64 {
        log_gamma_density(x, self.shape, self.rate)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.shape, 1.0 / self.rate)
            .expect("shape and rate are positive")
            .sample(rng)
    }
}

/// `Σ⁻¹Θ` and `ΘᵀΣ⁻¹Θ` for the current `(σ², ρ)`.
struct CovCache {
    sinv_theta: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl CovCache {
    fn new(model: &FosrModel, state: &ParamState) -> Result<Self> {
        let spec = model.ar1_spec(state.sigma2, state.rho)?;
        let factor = Ar1Factor::new(&spec, &model.data.times)?;
        let sinv_theta = factor.solve(&model.theta)?;
        let gram = model.theta.tr_mul(&sinv_theta);
        Ok(Self { sinv_theta, gram })
    }
}

/// Full conditionals of every `B_{Z,i}`.
pub fn bz_conditionals(model: &FosrModel, state: &ParamState) -> Result<Vec<PrecisionGaussian>> {
    model.check_dims(state)?;
    let cache = CovCache::new(model, state)?;
    let p = model.basis.penalty();
    let prior_prec = p / state.sig2_z;
    let means = &state.b_w * model.data.w.transpose();
    let data_lin = cache.sinv_theta.tr_mul(&model.scenario_sums);
    (0..model.data.n_scenarios())
        .map(|i| {
            let prec = &cache.gram * model.rows_per_scenario[i] as f64 + &prior_prec;
            let lin = data_lin.column(i) + &prior_prec * means.column(i);
            PrecisionGaussian::from_canonical(prec, &lin)
        })
        .collect()
}

/// Full conditional of `vec(B_W)` (columns stacked).
pub fn bw_conditional(model: &FosrModel, state: &ParamState) -> Result<PrecisionGaussian> {
    model.check_dims(state)?;
    let k = model.k();
    let n_cov = model.data.n_covariates();
    let p = model.basis.penalty();
    let w = &model.data.w;
    let wtw = w.tr_mul(w) / state.sig2_z;
    let mut prec = DMatrix::zeros(k * n_cov, k * n_cov);
    for a in 0..n_cov {
        for b in 0..n_cov {
            let mut block = p * wtw[(a, b)];
            if a == b {
                block += p / state.sig2_w[a];
            }
            prec.view_mut((a * k, b * k), (k, k)).copy_from(&block);
        }
    }
    let lin = p * &state.b_z * w / state.sig2_z;
    PrecisionGaussian::from_canonical(prec, &DVector::from_column_slice(lin.as_slice()))
}

/// Conditional of `vec(B_W)` given the variances and `ρ` with `B_Z`
/// integrated out. Scenario means `ȳ_i` are then Gaussian around
/// `Θ B_W w_i` with covariance `Σ/J_i + σ²_Z Θ P⁻¹ Θᵀ`.
pub fn bw_collapsed_conditional(model: &FosrModel, state: &ParamState) -> Result<PrecisionGaussian> {
    model.check_dims(state)?;
    let k = model.k();
    let n_cov = model.data.n_covariates();
    let theta = &model.theta;
    let p = model.basis.penalty();
    let sigma = build_cov(&model.ar1_spec(state.sigma2, state.rho)?, &model.data.times)?;
    let score_cov = theta * model.basis.penalty_chol().solve(&theta.transpose()) * state.sig2_z;
    // scenarios with the same number of curves share V_i
    let mut by_count: Vec<(usize, DMatrix<f64>, Cholesky<f64, Dyn>)> = Vec::new();
    let mut prec = DMatrix::zeros(k * n_cov, k * n_cov);
    let mut lin = DVector::zeros(k * n_cov);
    let w = &model.data.w;
    for i in 0..model.data.n_scenarios() {
        let j = model.rows_per_scenario[i];
        if j == 0 {
            continue;
        }
        let pos = match by_count.iter().position(|e| e.0 == j) {
            Some(pos) => pos,
            None => {
                let v = &sigma / j as f64 + &score_cov;
                let chol = cholesky(&v, "collapsed score covariance")?;
                let gram = theta.tr_mul(&chol.solve(theta));
                by_count.push((j, gram, chol));
                by_count.len() - 1
            }
        };
        let (_, gram, chol) = &by_count[pos];
        let mean_i = model.scenario_sums.column(i) / j as f64;
        let lin_i = theta.tr_mul(&chol.solve(&mean_i));
        for a in 0..n_cov {
            let mut seg = lin.rows_mut(a * k, k);
            seg += &lin_i * w[(i, a)];
            for b in 0..n_cov {
                let mut block = prec.view_mut((a * k, b * k), (k, k));
                block += gram * (w[(i, a)] * w[(i, b)]);
            }
        }
    }
    for a in 0..n_cov {
        let mut block = prec.view_mut((a * k, a * k), (k, k));
        block += p / state.sig2_w[a];
    }
    PrecisionGaussian::from_canonical(prec, &lin)
}

pub fn sig2_w_conditional(model: &FosrModel, state: &ParamState, c: usize) -> InvGammaDist {
    let col = state.b_w.column(c);
    let quad = col.dot(&(model.basis.penalty() * col));
    InvGammaDist {
        shape: model.hp.a_w[c] + model.k() as f64 / 2.0,
        rate: model.hp.b_w[c] + 0.5 * quad,
    }
}

pub fn sig2_z_conditional(model: &FosrModel, state: &ParamState) -> InvGammaDist {
    let resid = &state.b_z - &state.b_w * model.data.w.transpose();
    let quad = (resid.transpose() * model.basis.penalty() * &resid).trace();
    let i_count = model.data.n_scenarios() as f64;
    InvGammaDist {
        shape: model.hp.a_z + i_count * model.k() as f64 / 2.0,
        rate: model.hp.b_z + 0.5 * quad,
    }
}

pub fn sigma2_conditional(model: &FosrModel, state: &ParamState) -> Result<InvGammaDist> {
    let quad = model.residual_quad_form(&state.b_z, state.rho).ok_or_else(|| {
        FosrError::InvalidParameter(format!("rho = {} outside the covariance domain", state.rho))
    })?;
    let nd = (model.data.n_rows() * model.data.n_times()) as f64;
    Ok(InvGammaDist {
        shape: model.hp.nu / 2.0 + nd / 2.0,
        rate: model.hp.nu * state.psi / 2.0 + 0.5 * quad,
    })
}

pub fn psi_conditional(model: &FosrModel, state: &ParamState) -> GammaDist {
    let hp = &model.hp;
    GammaDist {
        shape: hp.nu0 / 2.0 + hp.nu / 2.0,
        rate: hp.nu0 / (2.0 * hp.psi0) + hp.nu / (2.0 * state.sigma2),
    }
}

pub fn update_bz<R: Rng + ?Sized>(
    model: &FosrModel,
    state: &ParamState,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let conds = bz_conditionals(model, state)?;
    let mut b_z = DMatrix::zeros(model.k(), conds.len());
    for (i, c) in conds.iter().enumerate() {
        b_z.column_mut(i).copy_from(&c.sample(rng));
    }
    Ok(b_z)
}

pub fn update_bw<R: Rng + ?Sized>(
    model: &FosrModel,
    state: &ParamState,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let draw = bw_conditional(model, state)?.sample(rng);
    Ok(DMatrix::from_column_slice(model.k(), model.data.n_covariates(), draw.as_slice()))
}

/// `(B_W, B_Z)` drawn jointly: `B_W` from the collapsed conditional,
/// then `B_Z` given the new `B_W`.
pub fn update_scores_collapsed<R: Rng + ?Sized>(
    model: &FosrModel,
    state: &ParamState,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let draw = bw_collapsed_conditional(model, state)?.sample(rng);
    let b_w = DMatrix::from_column_slice(model.k(), model.data.n_covariates(), draw.as_slice());
    let b_z = update_bz(model, &ParamState { b_w: b_w.clone(), ..state.clone() }, rng)?;
    Ok((b_w, b_z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceDraw {
    pub sig2_w: Vec<f64>,
    pub sig2_z: f64,
    pub sigma2: f64,
    pub psi: f64,
}

/// Draws `σ²_W`, `σ²_Z`, then `σ²` given the current `ψ`, then `ψ`
/// given the new `σ²`.
pub fn update_variances<R: Rng + ?Sized>(
    model: &FosrModel,
    state: &ParamState,
    rng: &mut R,
) -> Result<VarianceDraw> {
    let sig2_w = (0..model.data.n_covariates())
        .map(|c| sig2_w_conditional(model, state, c).sample(rng))
        .collect();
    let sig2_z = sig2_z_conditional(model, state).sample(rng);
    let sigma2 = sigma2_conditional(model, state)?.sample(rng);
    let psi = psi_conditional(model, &ParamState { sigma2, ..state.clone() }).sample(rng);
    Ok(VarianceDraw { sig2_w, sig2_z, sigma2, psi })
}

/// Reflects `x` into `(lo, hi)`.
pub fn reflect(mut x: f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    // fold into one period of the reflection, then mirror the upper half
    let period = 2.0 * width;
    let mut offset = (x - lo) % period;
    if offset < 0.0 {
        offset += period;
    }
    x = if offset <= width { lo + offset } else { hi - (offset - width) };
    x
}

/// Log target for `ρ` with everything else fixed, up to a constant.
pub fn rho_log_target(model: &FosrModel, residuals: &DMatrix<f64>, sigma2: f64, rho: f64) -> f64 {
    let prior = model.log_rho_prior(rho);
    if prior == f64::NEG_INFINITY {
        return prior;
    }
    let Some(factor) = model.error_factor(sigma2, rho) else {
        return f64::NEG_INFINITY;
    };
    let mut row = vec![0.0; residuals.ncols()];
    let mut ll = 0.0;
    for r in 0..residuals.nrows() {
        for (d, v) in row.iter_mut().enumerate() {
            *v = residuals[(r, d)];
        }
        ll += factor.log_density(&row);
    }
    prior + ll
}

/// One reflective random-walk Metropolis step for `ρ`.
pub fn update_rho<R: Rng + ?Sized>(
    model: &FosrModel,
    state: &ParamState,
    rng: &mut R,
    step: f64,
) -> (f64, bool) {
    let residuals = model.residuals(&state.b_z);
    rho_step_with_residuals(model, &residuals, state.sigma2, state.rho, rng, step)
}

fn rho_step_with_residuals<R: Rng + ?Sized>(
    model: &FosrModel,
    residuals: &DMatrix<f64>,
    sigma2: f64,
    rho: f64,
    rng: &mut R,
    step: f64,
) -> (f64, bool) {
    let (lo, hi) = model.mode.rho_domain();
    let proposal = reflect(rho + step * (2.0 * rng.random::<f64>() - 1.0), lo, hi);
    let current = rho_log_target(model, residuals, sigma2, rho);
    let candidate = rho_log_target(model, residuals, sigma2, proposal);
    let log_ratio = candidate - current;
    let u: f64 = rng.random();
    if log_ratio >= 0.0 || u.ln() < log_ratio {
        (proposal, true)
    } else {
        (rho, false)
    }
}

/// One full Gibbs sweep. Returns whether the `ρ` proposal was accepted.
pub fn sweep<R: Rng + ?Sized>(
    model: &FosrModel,
    state: &mut ParamState,
    rng: &mut R,
    rho_step: f64,
    scores: ScoreUpdate,
) -> Result<bool> {
    match scores {
        ScoreUpdate::Conditional => {
            state.b_z = update_bz(model, state, rng)?;
            state.b_w = update_bw(model, state, rng)?;
        }
        ScoreUpdate::Collapsed => {
            (state.b_w, state.b_z) = update_scores_collapsed(model, state, rng)?;
        }
    }
    let v = update_variances(model, state, rng)?;
    state.sig2_w = v.sig2_w;
    state.sig2_z = v.sig2_z;
    state.sigma2 = v.sigma2;
    state.psi = v.psi;
    let (rho, accepted) = update_rho(model, state, rng, rho_step);
    state.rho = rho;
    Ok(accepted)
}

/// Draws a state from the prior (used for simulation-based checks).
pub fn sample_prior<R: Rng + ?Sized>(model: &FosrModel, rng: &mut R) -> Result<ParamState> {
    let hp = &model.hp;
    let k = model.k();
    let n_cov = model.data.n_covariates();
    let p = model.basis.penalty();
    let zero = DVector::zeros(k);
    let psi = GammaDist { shape: hp.nu0 / 2.0, rate: hp.nu0 / (2.0 * hp.psi0) }.sample(rng);
    let sigma2 = InvGammaDist { shape: hp.nu / 2.0, rate: hp.nu * psi / 2.0 }.sample(rng);
    let (lo, hi) = model.mode.rho_domain();
    let rho = loop {
        let r: f64 = StandardNormal.sample(rng);
        if r > lo && r < hi {
            break r;
        }
    };
    let mut sig2_w = Vec::with_capacity(n_cov);
    let mut b_w = DMatrix::zeros(k, n_cov);
    for c in 0..n_cov {
        let s = InvGammaDist { shape: hp.a_w[c], rate: hp.b_w[c] }.sample(rng);
        let g = PrecisionGaussian::from_canonical(p / s, &zero)?;
        b_w.column_mut(c).copy_from(&g.sample(rng));
        sig2_w.push(s);
    }
    let sig2_z = InvGammaDist { shape: hp.a_z, rate: hp.b_z }.sample(rng);
    let dev = PrecisionGaussian::from_canonical(p / sig2_z, &zero)?;
    let mut b_z = &b_w * model.data.w.transpose();
    for i in 0..b_z.ncols() {
        let d = dev.sample(rng);
        let mut col = b_z.column_mut(i);
        col += d;
    }
    Ok(ParamState { b_w, b_z, sig2_w, sig2_z, sigma2, psi, rho })
}

fn inv_gamma_center(shape: f64, rate: f64) -> f64 {
    if shape > 1.0 {
        rate / (shape - 1.0)
    } else {
        rate / (shape + 1.0)
    }
}

/// Starting state: pilot least-squares scores with multiplicative jitter
/// in `[0.9, 1.1]`, variances at their prior centres.
pub fn initial_state<R: Rng + ?Sized>(model: &FosrModel, rng: &mut R) -> Result<ParamState> {
    let pilot = fit_pilot(&model.data, &model.basis)?;
    let mut jitter = |m: &DMatrix<f64>| m.map(|v| v * (0.9 + 0.2 * rng.random::<f64>()));
    let b_z = jitter(&pilot.b_z_ols);
    let b_w = jitter(&pilot.b_w_wls);
    let hp = &model.hp;
    let sig2_w = hp.a_w.iter().zip(&hp.b_w).map(|(&a, &b)| inv_gamma_center(a, b)).collect();
    let sig2_z = inv_gamma_center(hp.a_z, hp.b_z);
    let psi = hp.psi0;
    let sigma2 = inv_gamma_center(hp.nu / 2.0, hp.nu * psi / 2.0);
    let rho = 0.5;
    let state = ParamState { b_w, b_z, sig2_w, sig2_z, sigma2, psi, rho };
    let lj = model.log_joint(&state)?;
    if !lj.is_finite() {
        return Err(FosrError::Initialization(format!("log joint at the initial state is {lj}")));
    }
    Ok(state)
}

/// Retained posterior draws with their per-curve log-likelihoods.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawStore {
    pub k: usize,
    pub n_cov: usize,
    pub n_scen: usize,
    pub n_obs: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub mode: CovMode,
    pub draws: Vec<ParamState>,
    /// `R × N` per-draw, per-curve log-likelihood.
    pub loglik: DMatrix<f64>,
    pub chain_of: Vec<usize>,
    pub iter_of: Vec<usize>,
    /// Per chain, the `ρ` proposal half-width used at every iteration.
    pub step_log: Vec<Vec<f64>>,
    /// Per chain, the post-warmup `ρ` acceptance rate.
    pub rho_accept: Vec<f64>,
}

impl DrawStore {
    /// Store built from bare states (no log-likelihood columns), all
    /// attributed to chains by `chain_of`.
    pub fn from_states(states: Vec<ParamState>, chain_of: Vec<usize>, mode: CovMode) -> Result<Self> {
        let first = states.first().ok_or_else(|| FosrError::Empty("no draws".into()))?;
        if chain_of.len() != states.len() {
            return Err(FosrError::DimensionMismatch("chain_of length".into()));
        }
        let n_chains = chain_of.iter().max().map_or(0, |m| m + 1);
        let mut counters = vec![0usize; n_chains];
        let iter_of = chain_of
            .iter()
            .map(|&c| {
                counters[c] += 1;
                counters[c] - 1
            })
            .collect();
        Ok(Self {
            k: first.b_w.nrows(),
            n_cov: first.b_w.ncols(),
            n_scen: first.b_z.ncols(),
            n_obs: 0,
            n_chains,
            seed: 0,
            mode,
            loglik: DMatrix::zeros(states.len(), 0),
            draws: states,
            chain_of,
            iter_of,
            step_log: vec![Vec::new(); n_chains],
            rho_accept: vec![f64::NAN; n_chains],
        })
    }

    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn scalar_names(&self) -> Vec<String> {
        ParamState::scalar_names(self.k, self.n_cov, self.n_scen)
    }

    /// `series[param][chain][draw]` for every scalar parameter.
    pub fn chain_series(&self) -> Vec<Vec<Vec<f64>>> {
        let n_params = self.draws.first().map_or(0, |d| d.n_scalars());
        let mut out = vec![vec![Vec::new(); self.n_chains]; n_params];
        for (state, &c) in self.draws.iter().zip(&self.chain_of) {
            for (p, v) in state.to_flat().into_iter().enumerate() {
                out[p][c].push(v);
            }
        }
        out
    }

    /// Posterior mean of `B_Z`.
    pub fn mean_b_z(&self) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.k, self.n_scen);
        for d in &self.draws {
            acc += &d.b_z;
        }
        acc / self.draws.len() as f64
    }
}

struct ChainOutput {
    draws: Vec<ParamState>,
    loglik: Vec<Vec<f64>>,
    iters: Vec<usize>,
    steps: Vec<f64>,
    accept_rate: f64,
}

fn run_chain(model: &FosrModel, cfg: &SamplerConfig, chain: usize) -> Result<ChainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64 + 1);
    let mut state = initial_state(model, &mut rng)?;
    let (lo, hi) = model.mode.rho_domain();
    let max_step = hi - lo;
    let mut log_step = cfg.rho_step.ln();
    let mut step = cfg.rho_step;
    let keep = cfg.draws_per_chain();
    let mut out = ChainOutput {
        draws: Vec::with_capacity(keep),
        loglik: Vec::with_capacity(keep),
        iters: Vec::with_capacity(keep),
        steps: Vec::with_capacity(cfg.n_iter),
        accept_rate: 0.0,
    };
    let mut accepted_post = 0usize;
    let report_every = (cfg.n_iter / 10).max(1);
    for iter in 0..cfg.n_iter {
        let accepted = sweep(model, &mut state, &mut rng, step, cfg.score_update)?;
        let warm = iter < cfg.n_warmup;
        if warm && cfg.adapt {
            let gain = 1.0 / ((iter + 1) as f64).powf(0.6);
            log_step += gain * (accepted as u8 as f64 - cfg.target_accept);
            log_step = log_step.clamp(1e-4f64.ln(), max_step.ln());
            step = log_step.exp();
        }
        out.steps.push(step);
        if !warm {
            accepted_post += accepted as usize;
            if (iter - cfg.n_warmup).is_multiple_of(cfg.thin) {
                out.loglik.push(model.curve_log_likelihoods(&state)?);
                out.draws.push(state.clone());
                out.iters.push(iter);
            }
        }
        if cfg.progress && (iter + 1) % report_every == 0 {
            eprintln!(
                "chain {chain}: iteration {}/{} rho step {:.4} post-warmup acceptance {:.3}",
                iter + 1,
                cfg.n_iter,
                step,
                accepted_post as f64 / (iter + 1).saturating_sub(cfg.n_warmup).max(1) as f64
            );
        }
    }
    out.accept_rate = accepted_post as f64 / (cfg.n_iter - cfg.n_warmup) as f64;
    Ok(out)
}

/// Runs `cfg.n_chains` independent chains in parallel. Chain `c` draws
/// from stream `c + 1` of a ChaCha generator seeded with `cfg.seed`, so
/// the result depends only on the seed.
pub fn run_chains(model: &FosrModel, cfg: &SamplerConfig) -> Result<DrawStore> {
    cfg.validate()?;
    let outputs: Vec<Result<ChainOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.n_chains)
            .map(|c| scope.spawn(move || run_chain(model, cfg, c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampler thread panicked"))
            .collect()
    });
    let n_obs = model.data.n_rows();
    let mut store = DrawStore {
        k: model.k(),
        n_cov: model.data.n_covariates(),
        n_scen: model.data.n_scenarios(),
        n_obs,
        n_chains: cfg.n_chains,
        seed: cfg.seed,
        mode: model.mode,
        draws: Vec::new(),
        loglik: DMatrix::zeros(0, n_obs),
        chain_of: Vec::new(),
        iter_of: Vec::new(),
        step_log: Vec::new(),
        rho_accept: Vec::new(),
    };
    let mut ll_rows = Vec::new();
    for (c, out) in outputs.into_iter().enumerate() {
        let out = out?;
        store.chain_of.extend(std::iter::repeat_n(c, out.draws.len()));
        store.iter_of.extend(out.iters);
        store.draws.extend(out.draws);
        ll_rows.extend(out.loglik.into_iter().flatten());
        store.step_log.push(out.steps);
        store.rho_accept.push(out.accept_rate);
    }
    store.loglik = DMatrix::from_row_slice(store.draws.len(), n_obs, &ll_rows);
    if store.loglik.iter().any(|v| !v.is_finite()) {
        return Err(FosrError::InvalidParameter("non-finite log-likelihood in draws".into()));
    }
    Ok(store)
}
