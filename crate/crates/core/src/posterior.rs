//! Posterior functionals: coefficient and scenario curves with credible
//! bands, ROPE probabilities and temporal kriging.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::cov::{build_cov, Ar1Spec, CovMode};
use crate::error::{FosrError, Result};
use crate::linalg::{cholesky, psd_sqrt, quantile_sorted};
use crate::model::{EnsembleDataset, ParamState};
use crate::sampler::DrawStore;
use crate::spline::BasisSystem;

pub const ROPE_THRESHOLD: f64 = 0.9;

/// Pointwise posterior summary of one curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveSummary {
    pub id: String,
    pub index: usize,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Central credible mass of the band.
    pub level: f64,
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(FosrError::InvalidRange(format!("credible level {level} outside (0, 1)")));
    }
    Ok(())
}

/// Summarizes `values` (`R × T`, one row per draw).
pub fn summarize_values(
    id: String,
    index: usize,
    times: &[f64],
    values: &DMatrix<f64>,
    level: f64,
) -> CurveSummary {
    let r = values.nrows();
    let tail = (1.0 - level) / 2.0;
    let mut mean = Vec::with_capacity(times.len());
    let mut lower = Vec::with_capacity(times.len());
    let mut upper = Vec::with_capacity(times.len());
    let mut col = vec![0.0; r];
    for t in 0..times.len() {
        col.copy_from_slice(values.column(t).as_slice());
        mean.push(col.iter().sum::<f64>() / r as f64);
        col.sort_by(|a, b| a.total_cmp(b));
        lower.push(quantile_sorted(&col, tail));
        upper.push(quantile_sorted(&col, 1.0 - tail));
    }
    CurveSummary { id, index, times: times.to_vec(), mean, lower, upper, level }
}

fn curve_values<F>(store: &DrawStore, theta: &DMatrix<f64>, scores: F) -> DMatrix<f64>
where
    F: Fn(&ParamState) -> DVector<f64>,
{
    let mut out = DMatrix::zeros(store.n_draws(), theta.nrows());
    for (r, d) in store.draws.iter().enumerate() {
        let v = theta * scores(d);
        out.row_mut(r).copy_from(&v.transpose());
    }
    out
}

fn prepare(store: &DrawStore, basis: &BasisSystem, grid: &[f64]) -> Result<DMatrix<f64>> {
    if store.n_draws() == 0 {
        return Err(FosrError::Empty("draw store is empty".into()));
    }
    if store.k != basis.k() {
        return Err(FosrError::DimensionMismatch(format!(
            "draws have K = {}, basis has K = {}",
            store.k,
            basis.k()
        )));
    }
    basis.eval(grid)
}

/// `β_k(t) = Θ(t) B_{W,k}` for every covariate column `k`.
pub fn summarize_beta(
    store: &DrawStore,
    basis: &BasisSystem,
    grid: &[f64],
    level: f64,
) -> Result<Vec<CurveSummary>> {
    check_level(level)?;
    let theta = prepare(store, basis, grid)?;
    Ok((0..store.n_cov)
        .map(|k| {
            let v = curve_values(store, &theta, |d| d.b_w.column(k).into_owned());
            summarize_values(format!("beta[{k}]"), k, grid, &v, level)
        })
        .collect())
}

/// `c_i(t) = Θ(t) B_{Z,i}` for every scenario `i`.
pub fn summarize_c(
    store: &DrawStore,
    basis: &BasisSystem,
    grid: &[f64],
    level: f64,
) -> Result<Vec<CurveSummary>> {
    check_level(level)?;
    let theta = prepare(store, basis, grid)?;
    Ok((0..store.n_scen)
        .map(|i| {
            let v = curve_values(store, &theta, |d| d.b_z.column(i).into_owned());
            summarize_values(format!("c[{i}]"), i, grid, &v, level)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RopeCurve {
    pub index: usize,
    pub times: Vec<f64>,
    /// Half-width of the equivalence region: the posterior variance of `β_k(t)`.
    pub delta: Vec<f64>,
    /// Posterior probability that `|β_k(t)| > δ_k(t)`.
    pub prob: Vec<f64>,
}

impl RopeCurve {
    pub fn significant(&self, threshold: f64) -> Vec<bool> {
        self.prob.iter().map(|&p| p > threshold).collect()
    }

    /// True when the probability crosses `threshold` anywhere on the grid.
    pub fn fires(&self, threshold: f64) -> bool {
        self.prob.iter().any(|&p| p > threshold)
    }
}

pub fn rope_probability(store: &DrawStore, basis: &BasisSystem, grid: &[f64]) -> Result<Vec<RopeCurve>> {
    let theta = prepare(store, basis, grid)?;
    let r = store.n_draws();
    if r < 2 {
        return Err(FosrError::InvalidDimension("ROPE needs at least 2 draws".into()));
    }
    Ok((0..store.n_cov)
        .map(|k| {
            let v = curve_values(store, &theta, |d| d.b_w.column(k).into_owned());
            let mut delta = Vec::with_capacity(grid.len());
            let mut prob = Vec::with_capacity(grid.len());
            for t in 0..grid.len() {
                let col = v.column(t);
                let mu = col.sum() / r as f64;
                let var = col.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (r - 1) as f64;
                let outside = col.iter().filter(|x| x.abs() > var).count();
                delta.push(var);
                prob.push(outside as f64 / r as f64);
            }
            RopeCurve { index: k, times: grid.to_vec(), delta, prob }
        })
        .collect())
}

/// Conditional mean and covariance of `x_p | x_o = y` for a jointly
/// Gaussian `(x_p, x_o)`.
pub fn conditional_gaussian(
    mu_p: &DVector<f64>,
    mu_o: &DVector<f64>,
    sigma_pp: &DMatrix<f64>,
    sigma_po: &DMatrix<f64>,
    sigma_oo: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let chol = cholesky(sigma_oo, "observed-block covariance")?;
    let gain = chol.solve(&sigma_po.transpose()).transpose();
    let mean = mu_p + &gain * (y - mu_o);
    let cov = sigma_pp - &gain * sigma_po.transpose();
    Ok((mean, (&cov + cov.transpose()) * 0.5))
}

/// Covariance blocks over observed and prediction times for one
/// correlation structure.
#[derive(Debug, Clone)]
pub struct KrigingPlan {
    pub obs_times: Vec<f64>,
    pub pred_times: Vec<f64>,
    pub mode: CovMode,
    pub base_step: f64,
    pub theta_obs: DMatrix<f64>,
    pub theta_pred: DMatrix<f64>,
    // positions of observed/predicted times in the merged sorted grid
    obs_idx: Vec<usize>,
    pred_idx: Vec<usize>,
    merged: Vec<f64>,
}

impl KrigingPlan {
    pub fn new(
        basis: &BasisSystem,
        obs_times: &[f64],
        pred_times: &[f64],
        mode: CovMode,
        base_step: f64,
    ) -> Result<Self> {
        if pred_times.is_empty() {
            return Err(FosrError::Empty("no prediction times".into()));
        }
        if let Some(t) = pred_times.iter().find(|t| obs_times.contains(t)) {
            return Err(FosrError::InvalidParameter(format!("prediction time {t} is observed")));
        }
        let theta_obs = basis.eval(obs_times)?;
        let theta_pred = basis.eval(pred_times)?;
        let mut tagged: Vec<(f64, bool, usize)> = obs_times
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, true, i))
            .chain(pred_times.iter().enumerate().map(|(i, &t)| (t, false, i)))
            .collect();
        tagged.sort_by(|a, b| a.0.total_cmp(&b.0));
        if tagged.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(FosrError::InvalidParameter("duplicate prediction times".into()));
        }
        let mut obs_idx = vec![0; obs_times.len()];
        let mut pred_idx = vec![0; pred_times.len()];
        for (pos, &(_, is_obs, i)) in tagged.iter().enumerate() {
            if is_obs {
                obs_idx[i] = pos;
            } else {
                pred_idx[i] = pos;
            }
        }
        let merged = tagged.iter().map(|t| t.0).collect();
        let plan = Self {
            obs_times: obs_times.to_vec(),
            pred_times: pred_times.to_vec(),
            mode,
            base_step,
            theta_obs,
            theta_pred,
            obs_idx,
            pred_idx,
            merged,
        };
        // surface grid misalignment before any draws are processed
        let probe_rho = if mode.rho_in_domain(0.5) { 0.5 } else { 0.0 };
        plan.blocks(1.0, probe_rho)?;
        Ok(plan)
    }

    /// `(Σ_pp, Σ_po, Σ_oo)` at `(σ², ρ)`.
    pub fn blocks(&self, sigma2: f64, rho: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let spec = Ar1Spec::new(sigma2, rho, self.mode, self.base_step)?;
        let full = build_cov(&spec, &self.merged)?;
        let pick = |rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |a, b| full[(rows[a], cols[b])])
        };
        Ok((
            pick(&self.pred_idx, &self.pred_idx),
            pick(&self.pred_idx, &self.obs_idx),
            pick(&self.obs_idx, &self.obs_idx),
        ))
    }

    /// Per-curve conditional means (`P × N`) and the shared conditional
    /// covariance for one parameter state.
    pub fn condition(&self, state: &ParamState, data: &EnsembleDataset) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (spp, spo, soo) = self.blocks(state.sigma2, state.rho)?;
        let chol = cholesky(&soo, "observed-block covariance")?;
        let gain = chol.solve(&spo.transpose()).transpose();
        let cov = &spp - &gain * spo.transpose();
        let fit_obs = &self.theta_obs * &state.b_z;
        let fit_pred = &self.theta_pred * &state.b_z;
        let mut means = DMatrix::zeros(self.pred_times.len(), data.n_rows());
        for (n, &g) in data.group_of.iter().enumerate() {
            let resid = data.y.row(n).transpose() - fit_obs.column(g);
            let m = fit_pred.column(g) + &gain * resid;
            means.column_mut(n).copy_from(&m);
        }
        Ok((means, (&cov + cov.transpose()) * 0.5))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KrigedCurve {
    pub row: usize,
    pub scenario: usize,
    /// Posterior mean of the conditional means.
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// `R × P` predictive draws when requested.
    #[serde(skip)]
    pub samples: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KrigingResult {
    pub pred_times: Vec<f64>,
    pub level: f64,
    pub curves: Vec<KrigedCurve>,
    /// Posterior mean of the conditional covariance.
    pub mean_cond_cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrigeOptions {
    pub level: f64,
    pub seed: u64,
    pub keep_samples: bool,
}

impl Default for KrigeOptions {
    fn default() -> Self {
        Self { level: 0.95, seed: 0, keep_samples: false }
    }
}

/// Posterior predictive at unobserved times, integrating over the draws.
/// Curve `n` draws its predictive noise from stream `n` of a generator
/// seeded with `opts.seed`.
pub fn krige(
    store: &DrawStore,
    plan: &KrigingPlan,
    data: &EnsembleDataset,
    opts: &KrigeOptions,
) -> Result<KrigingResult> {
    check_level(opts.level)?;
    if store.n_draws() == 0 {
        return Err(FosrError::Empty("draw store is empty".into()));
    }
    if plan.obs_times != data.times {
        return Err(FosrError::DimensionMismatch("kriging plan built for other times".into()));
    }
    let p = plan.pred_times.len();
    let r = store.n_draws();
    let mut cond_means = Vec::with_capacity(r);
    let mut roots = Vec::with_capacity(r);
    let mut mean_cov = DMatrix::zeros(p, p);
    for d in &store.draws {
        let (m, cov) = plan.condition(d, data)?;
        roots.push(psd_sqrt(&cov));
        mean_cov += cov;
        cond_means.push(m);
    }
    mean_cov /= r as f64;

    let tail = (1.0 - opts.level) / 2.0;
    let mut curves = Vec::with_capacity(data.n_rows());
    for (n, &g) in data.group_of.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(n as u64);
        let mut samples = DMatrix::zeros(r, p);
        let mut mean = DVector::zeros(p);
        for (idx, (m, root)) in cond_means.iter().zip(&roots).enumerate() {
            let mu = m.column(n);
            mean += mu;
            let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
            let draw = mu + root * z;
            samples.row_mut(idx).copy_from(&draw.transpose());
        }
        mean /= r as f64;
        let mut lower = Vec::with_capacity(p);
        let mut upper = Vec::with_capacity(p);
        let mut col = vec![0.0; r];
        for t in 0..p {
            col.copy_from_slice(samples.column(t).as_slice());
            col.sort_by(|a, b| a.total_cmp(b));
            lower.push(quantile_sorted(&col, tail));
            upper.push(quantile_sorted(&col, 1.0 - tail));
        }
        curves.push(KrigedCurve {
            row: n,
            scenario: g,
            mean: mean.iter().copied().collect(),
            lower,
            upper,
            samples: opts.keep_samples.then_some(samples),
        });
    }
    Ok(KrigingResult {
        pred_times: plan.pred_times.clone(),
        level: opts.level,
        curves,
        mean_cond_cov: mean_cov.row_iter().map(|row| row.iter().copied().collect()).collect(),
    })
}

/// Mid-decades 2025, 2035, ..., 2085.
pub fn default_pred_grid() -> Vec<f64> {
    (0..7).map(|i| 2025.0 + 10.0 * i as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cov::SuppVariant;
    use crate::design::{tiny_design, tiny_truth};
    use crate::model::simulate_dataset;
    use rand::Rng;

    fn basis() -> BasisSystem {
        BasisSystem::new(4, 2020.0, 2050.0, 0.1).unwrap()
    }

    fn random_store(r: usize, seed: u64) -> DrawStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states = (0..r)
            .map(|_| ParamState {
                b_w: DMatrix::from_fn(4, 2, |_, _| rng.sample(StandardNormal)),
                b_z: DMatrix::from_fn(4, 3, |_, _| rng.sample(StandardNormal)),
                sig2_w: vec![1.0, 1.0],
                sig2_z: 1.0,
                sigma2: 0.5 + rng.random::<f64>(),
                psi: 1.0,
                rho: 0.2 + 0.6 * rng.random::<f64>(),
            })
            .collect();
        DrawStore::from_states(states, vec![0; r], CovMode::Continuous).unwrap()
    }

    #[test]
    fn single_draw_collapses_bands() {
        let store = random_store(1, 1);
        let grid = [2020.0, 2033.0, 2050.0];
        let b = basis();
        let s = summarize_beta(&store, &b, &grid, 0.95).unwrap();
        let expect = b.eval(&grid).unwrap() * store.draws[0].b_w.column(1);
        for t in 0..3 {
            assert_eq!(s[1].mean[t], expect[t]);
            assert_eq!(s[1].lower[t], expect[t]);
            assert_eq!(s[1].upper[t], expect[t]);
        }
    }

    #[test]
    fn recomputation_oracle() {
        let store = random_store(57, 2);
        let grid = [2021.0, 2045.5];
        let b = basis();
        let s = summarize_c(&store, &b, &grid, 0.9).unwrap();
        for i in 0..3 {
            for (t, &time) in grid.iter().enumerate() {
                let row = b.eval_row(time).unwrap();
                let mut vals: Vec<f64> = store
                    .draws
                    .iter()
                    .map(|d| row.iter().zip(d.b_z.column(i).iter()).map(|(a, b)| a * b).sum())
                    .collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                // type-7 quantile by hand
                let h: f64 = 56.0 * 0.05;
                let lo = vals[h as usize] + (h - h.floor()) * (vals[h as usize + 1] - vals[h as usize]);
                assert!((s[i].mean[t] - mean).abs() < 1e-12);
                assert!((s[i].lower[t] - lo).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rope_on_degenerate_draws() {
        let mut store = random_store(5, 3);
        for d in store.draws.iter_mut() {
            d.b_w.fill(0.7);
        }
        let rope = rope_probability(&store, &basis(), &[2025.0]).unwrap();
        assert_eq!(rope[0].prob[0], 1.0);
        assert!(rope[0].delta[0].abs() < 1e-20);
        assert!(rope_probability(&random_store(1, 3), &basis(), &[2025.0]).is_err());
    }

    #[test]
    fn conditional_matches_partitioned_inverse() {
        let full = DMatrix::from_row_slice(3, 3, &[2.0, 0.6, 0.3, 0.6, 1.5, 0.2, 0.3, 0.2, 1.0]);
        // predict index 0 from indices 1, 2
        let prec = full.clone().try_inverse().unwrap();
        let mu = DVector::from_vec(vec![0.1, -0.2, 0.4]);
        let y = DVector::from_vec(vec![0.5, 1.0]);
        let (m, c) = conditional_gaussian(
            &DVector::from_vec(vec![mu[0]]),
            &DVector::from_vec(vec![mu[1], mu[2]]),
            &full.view((0, 0), (1, 1)).into_owned(),
            &full.view((0, 1), (1, 2)).into_owned(),
            &full.view((1, 1), (2, 2)).into_owned(),
            &y,
        )
        .unwrap();
        let var = 1.0 / prec[(0, 0)];
        let mean = mu[0] - var * (prec[(0, 1)] * (y[0] - mu[1]) + prec[(0, 2)] * (y[1] - mu[2]));
        assert!((c[(0, 0)] - var).abs() < 1e-12);
        assert!((m[0] - mean).abs() < 1e-12);
    }

    #[test]
    fn zero_rho_kriging_is_plain_fit() {
        let b = basis();
        let design = tiny_design();
        let mut truth = tiny_truth(&b);
        truth.rho = 0.0;
        let data = simulate_dataset(&truth, &design, &b, CovMode::Decade, 10.0, 4).unwrap();
        let plan = KrigingPlan::new(
            &b,
            &data.times,
            &[2025.0, 2035.0],
            CovMode::Supplementary(SuppVariant::Full),
            5.0,
        )
        .unwrap();
        let (means, cov) = plan.condition(&truth, &data).unwrap();
        let fit = &plan.theta_pred * &truth.b_z;
        for (n, &g) in data.group_of.iter().enumerate() {
            assert!((means.column(n) - fit.column(g)).abs().max() < 1e-14);
        }
        assert!((cov - DMatrix::identity(2, 2) * truth.sigma2).abs().max() < 1e-14);
    }

    #[test]
    fn noiseless_kriging_returns_fit() {
        let b = basis();
        let design = tiny_design();
        let mut truth = tiny_truth(&b);
        truth.sigma2 = 1e-14;
        let data = simulate_dataset(&truth, &design, &b, CovMode::Continuous, 10.0, 5).unwrap();
        let store = DrawStore::from_states(vec![truth.clone(); 3], vec![0, 0, 1], CovMode::Continuous).unwrap();
        let plan = KrigingPlan::new(&b, &data.times, &[2025.0, 2045.0], CovMode::Continuous, 10.0).unwrap();
        let res = krige(&store, &plan, &data, &KrigeOptions::default()).unwrap();
        let fit = &plan.theta_pred * &truth.b_z;
        for c in &res.curves {
            for t in 0..2 {
                assert!((c.mean[t] - fit[(t, c.scenario)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn decade_mode_rejects_mid_decades() {
        let b = basis();
        let times = [2020.0, 2030.0, 2040.0, 2050.0];
        assert!(matches!(
            KrigingPlan::new(&b, &times, &[2025.0], CovMode::Decade, 10.0),
            Err(FosrError::MisalignedGrid { .. })
        ));
        assert!(KrigingPlan::new(&b, &times, &[2030.0], CovMode::Continuous, 10.0).is_err());
        assert!(matches!(
            KrigingPlan::new(&b, &times, &[2055.0], CovMode::Continuous, 10.0),
            Err(FosrError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn krige_is_deterministic() {
        let b = basis();
        let design = tiny_design();
        let truth = tiny_truth(&b);
        let data = simulate_dataset(&truth, &design, &b, CovMode::Continuous, 10.0, 6).unwrap();
        let store = random_store(20, 6);
        let plan = KrigingPlan::new(&b, &data.times, &default_pred_grid()[..3], CovMode::Continuous, 10.0).unwrap();
        let opts = KrigeOptions { seed: 3, keep_samples: true, ..Default::default() };
        let a = krige(&store, &plan, &data, &opts).unwrap();
        let c = krige(&store, &plan, &data, &opts).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.curves[0].samples.as_ref().unwrap().shape(), (20, 3));
    }
}
