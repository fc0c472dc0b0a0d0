//! Split R-hat, multi-chain effective sample size and autocorrelations.

use serde::{Serialize, Serializer};

use crate::error::{FosrError, Result};
use crate::sampler::DrawStore;

pub const MAX_ACF_LAG: usize = 50;

/// Split R-hat outcome. Constant chains have no defined R-hat; chains
/// that are each constant at different values diverge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rhat {
    Value(f64),
    Divergent,
    NotApplicable,
}

impl Rhat {
    pub fn value(self) -> Option<f64> {
        match self {
            Rhat::Value(v) => Some(v),
            _ => None,
        }
    }

    /// True when the value is finite and below `limit`.
    pub fn below(self, limit: f64) -> bool {
        matches!(self, Rhat::Value(v) if v < limit)
    }
}

impl Serialize for Rhat {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Rhat::Value(v) => s.serialize_f64(*v),
            Rhat::Divergent => s.serialize_str("divergent"),
            Rhat::NotApplicable => s.serialize_str("not-applicable"),
        }
    }
}

// Sums in a canonical order so chain permutations give identical bits.
fn ordered_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v.into_iter().sum()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn split_halves(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(&c[..half]);
        out.push(&c[c.len() - half..]);
    }
    out
}

struct ChainStats {
    n: f64,
    /// Mean within-chain variance (denominator n − 1).
    w: f64,
    /// Between-chain variance of the means, times n.
    b: f64,
}

fn chain_stats(parts: &[&[f64]]) -> ChainStats {
    let m = parts.len() as f64;
    let n = parts[0].len() as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let vars: Vec<f64> = parts
        .iter()
        .zip(&means)
        .map(|(p, mu)| p.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0))
        .collect();
    let grand = ordered_sum(means.clone()) / m;
    let b = n * ordered_sum(means.iter().map(|mu| (mu - grand) * (mu - grand)).collect()) / (m - 1.0);
    ChainStats { n, w: ordered_sum(vars) / m, b }
}

fn check_chains(chains: &[Vec<f64>]) -> Result<usize> {
    let Some(first) = chains.first() else {
        return Err(FosrError::Empty("no chains".into()));
    };
    let n = first.len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(FosrError::DimensionMismatch("chains differ in length".into()));
    }
    if n < 4 {
        return Err(FosrError::InvalidDimension(format!("{n} draws per chain, need at least 4")));
    }
    Ok(n)
}

/// Split R-hat: each chain is cut into two halves, and the potential
/// scale reduction is computed over the `2m` half-chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<Rhat> {
    check_chains(chains)?;
    let parts = split_halves(chains);
    let s = chain_stats(&parts);
    if !(s.w > 0.0) {
        return Ok(if s.b > 0.0 { Rhat::Divergent } else { Rhat::NotApplicable });
    }
    let var_plus = (s.n - 1.0) / s.n * s.w + s.b / s.n;
    Ok(Rhat::Value((var_plus / s.w).sqrt()))
}

/// Autocovariance at `lag` with denominator `n`.
fn autocov(x: &[f64], mu: f64, lag: usize) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for t in 0..n - lag {
        acc += (x[t] - mu) * (x[t + lag] - mu);
    }
    acc / n as f64
}

/// Multi-chain effective sample size over split chains, with Geyer's
/// initial positive sequence truncation and monotone adjustment. `None`
/// when there is no within-chain variation.
pub fn ess(chains: &[Vec<f64>]) -> Result<Option<f64>> {
    check_chains(chains)?;
    let parts = split_halves(chains);
    let s = chain_stats(&parts);
    if !(s.w > 0.0) {
        return Ok(None);
    }
    let m = parts.len() as f64;
    let n = parts[0].len();
    let var_plus = (s.n - 1.0) / s.n * s.w + s.b / s.n;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let rho_at = |lag: usize| {
        let acov = ordered_sum(parts.iter().zip(&means).map(|(p, &mu)| autocov(p, mu, lag)).collect()) / m;
        1.0 - (s.w - acov) / var_plus
    };

    // Pair sums Γ_k = ρ_{2k} + ρ_{2k+1}, truncated at the first non-positive one.
    let mut pairs = Vec::new();
    let mut lag = 0;
    while lag + 1 < n {
        let gamma = if lag == 0 { 1.0 + rho_at(1) } else { rho_at(lag) + rho_at(lag + 1) };
        if gamma <= 0.0 {
            break;
        }
        pairs.push(gamma);
        lag += 2;
    }
    for k in 1..pairs.len() {
        if pairs[k] > pairs[k - 1] {
            pairs[k] = pairs[k - 1];
        }
    }
    let total = m * n as f64;
    let tau = (-1.0 + 2.0 * pairs.iter().sum::<f64>()).max(1.0 / total.log10());
    Ok(Some(total / tau))
}

/// Sample autocorrelations at lags `0..=max_lag` (denominator `n`).
/// `None` for a constant series.
pub fn acf(x: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    if x.is_empty() {
        return None;
    }
    let mu = mean(x);
    let c0 = autocov(x, mu, 0);
    if !(c0 > 0.0) {
        return None;
    }
    Some((0..=max_lag.min(x.len() - 1)).map(|k| autocov(x, mu, k) / c0).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub rhat: Rhat,
    pub ess: Option<f64>,
    pub mean: f64,
    pub sd: f64,
    /// Autocorrelations averaged over chains; empty when every chain is constant.
    pub acf: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub n_chains: usize,
    pub draws_per_chain: usize,
    pub params: Vec<ParamDiagnostics>,
    pub max_rhat: Option<f64>,
    pub worst_rhat_param: Option<String>,
    pub min_ess: Option<f64>,
    pub min_ess_param: Option<String>,
    pub n_divergent: usize,
    pub rho_accept: Vec<f64>,
}

impl DiagnosticsReport {
    pub fn get(&self, name: &str) -> Option<&ParamDiagnostics> {
        self.params.iter().find(|p| p.name == name)
    }
}

pub fn diagnose_series(name: &str, chains: &[Vec<f64>], max_lag: usize) -> Result<ParamDiagnostics> {
    let rhat = split_rhat(chains)?;
    let ess = ess(chains)?;
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let mu = mean(&pooled);
    let sd = (pooled.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (pooled.len() - 1) as f64).sqrt();
    let per_chain: Vec<Vec<f64>> = chains.iter().filter_map(|c| acf(c, max_lag)).collect();
    let acf = if per_chain.is_empty() {
        Vec::new()
    } else {
        let len = per_chain.iter().map(Vec::len).min().unwrap_or(0);
        (0..len)
            .map(|k| ordered_sum(per_chain.iter().map(|a| a[k]).collect()) / per_chain.len() as f64)
            .collect()
    };
    Ok(ParamDiagnostics { name: name.to_string(), rhat, ess, mean: mu, sd, acf })
}

pub fn compute_diagnostics(store: &DrawStore) -> Result<DiagnosticsReport> {
    if store.n_chains < 2 {
        return Err(FosrError::InvalidDimension(format!(
            "diagnostics need at least 2 chains, store has {}",
            store.n_chains
        )));
    }
    let names = store.scalar_names();
    let series = store.chain_series();
    let mut params = Vec::with_capacity(names.len());
    for (name, chains) in names.iter().zip(&series) {
        params.push(diagnose_series(name, chains, MAX_ACF_LAG)?);
    }
    let mut max_rhat: Option<(f64, &str)> = None;
    let mut min_ess: Option<(f64, &str)> = None;
    let mut n_divergent = 0;
    for p in &params {
        match p.rhat {
            Rhat::Value(v) if max_rhat.is_none_or(|(m, _)| v > m) => max_rhat = Some((v, &p.name)),
            Rhat::Divergent => n_divergent += 1,
            _ => {}
        }
        if let Some(e) = p.ess {
            if min_ess.is_none_or(|(m, _)| e < m) {
                min_ess = Some((e, &p.name));
            }
        }
    }
    Ok(DiagnosticsReport {
        n_chains: store.n_chains,
        draws_per_chain: series.first().and_then(|c| c.first()).map_or(0, Vec::len),
        max_rhat: max_rhat.map(|m| m.0),
        worst_rhat_param: max_rhat.map(|m| m.1.to_string()),
        min_ess: min_ess.map(|m| m.0),
        min_ess_param: min_ess.map(|m| m.1.to_string()),
        n_divergent,
        rho_accept: store.rho_accept.clone(),
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn iid_chains(m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect()
    }

    fn ar1_chains(m: usize, n: usize, phi: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let innov = (1.0 - phi * phi).sqrt();
        (0..m)
            .map(|_| {
                let mut x: f64 = rng.sample(StandardNormal);
                (0..n)
                    .map(|_| {
                        let e: f64 = rng.sample(StandardNormal);
                        x = phi * x + innov * e;
                        x
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn iid_chains_have_unit_rhat_and_full_ess() {
        let chains = iid_chains(4, 1000, 1);
        let r = split_rhat(&chains).unwrap().value().unwrap();
        assert!((0.99..=1.01).contains(&r), "rhat {r}");
        let e = ess(&chains).unwrap().unwrap();
        assert!((3200.0..=4800.0).contains(&e), "ess {e}");
    }

    #[test]
    fn constant_chains() {
        let same = vec![vec![1.0; 10], vec![1.0; 10]];
        assert_eq!(split_rhat(&same).unwrap(), Rhat::NotApplicable);
        assert_eq!(ess(&same).unwrap(), None);
        let apart = vec![vec![1.0; 10], vec![2.0; 10]];
        assert_eq!(split_rhat(&apart).unwrap(), Rhat::Divergent);
        assert!(acf(&[3.0; 5], 3).is_none());
    }

    #[test]
    fn ar1_chain_ess_ratio() {
        let chains = ar1_chains(4, 5000, 0.5, 2);
        let e = ess(&chains).unwrap().unwrap() / 20_000.0;
        assert!((e - 1.0 / 3.0).abs() < 0.2 / 3.0, "ess ratio {e}");
    }

    #[test]
    fn ess_decreases_with_autocorrelation() {
        let e: Vec<f64> = [0.2, 0.5, 0.8]
            .iter()
            .map(|&phi| ess(&ar1_chains(4, 2000, phi, 3)).unwrap().unwrap())
            .collect();
        assert!(e[0] > e[1] && e[1] > e[2], "{e:?}");
    }

    #[test]
    fn chain_order_does_not_matter() {
        let chains = ar1_chains(4, 300, 0.4, 4);
        let mut rev = chains.clone();
        rev.reverse();
        let a = diagnose_series("x", &chains, 10).unwrap();
        let b = diagnose_series("x", &rev, 10).unwrap();
        assert_eq!(a.rhat, b.rhat);
        assert_eq!(a.ess, b.ess);
        assert_eq!(a.acf, b.acf);
    }

    #[test]
    fn shifted_chains_diverge() {
        let mut chains = iid_chains(4, 500, 5);
        for x in chains[0].iter_mut() {
            *x += 5.0;
        }
        assert!(split_rhat(&chains).unwrap().value().unwrap() > 1.5);
    }

    #[test]
    fn acf_of_alternating_series() {
        let x: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let a = acf(&x, 2).unwrap();
        assert_eq!(a[0], 1.0);
        assert!((a[1] + 0.99).abs() < 1e-12);
    }

    #[test]
    fn too_short_chains_are_rejected() {
        let c = vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]];
        assert!(split_rhat(&c).is_err());
    }
}
