//! WAIC, LPML and posterior predictive MSE. The observation unit is one
//! curve `y_ij`, so `loglik` has one column per response row.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{FosrError, Result};
use crate::linalg::log_mean_exp;
use crate::model::FosrModel;
use crate::sampler::DrawStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Waic {
    pub waic: f64,
    pub lppd: f64,
    pub p_waic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lpml {
    pub lpml: f64,
    pub log_cpo: Vec<f64>,
    /// Observations whose CPO estimate is not finite.
    pub flagged: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub waic: f64,
    pub lppd: f64,
    pub p_waic: f64,
    pub lpml: f64,
    pub log_cpo: Vec<f64>,
    pub flagged: Vec<usize>,
    pub mse: f64,
}

fn check(loglik: &DMatrix<f64>) -> Result<()> {
    if loglik.nrows() == 0 || loglik.ncols() == 0 {
        return Err(FosrError::Empty("log-likelihood matrix is empty".into()));
    }
    if loglik.iter().any(|v| !v.is_finite()) {
        return Err(FosrError::InvalidParameter("log-likelihood matrix has non-finite entries".into()));
    }
    Ok(())
}

pub fn waic(loglik: &DMatrix<f64>) -> Result<Waic> {
    check(loglik)?;
    let r = loglik.nrows() as f64;
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    for col in loglik.column_iter() {
        lppd += log_mean_exp(col.iter().copied());
        if loglik.nrows() > 1 {
            let mu = col.sum() / r;
            p_waic += col.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (r - 1.0);
        }
    }
    Ok(Waic { waic: -2.0 * (lppd - p_waic), lppd, p_waic })
}

pub fn lpml(loglik: &DMatrix<f64>) -> Result<Lpml> {
    check(loglik)?;
    let log_cpo: Vec<f64> = loglik
        .column_iter()
        .map(|col| -log_mean_exp(col.iter().map(|x| -x)))
        .collect();
    let flagged = log_cpo
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
        .collect();
    Ok(Lpml { lpml: log_cpo.iter().sum(), log_cpo, flagged })
}

/// Mean squared difference between the data and the posterior mean
/// fitted curves at the observed times.
pub fn predictive_mse(store: &DrawStore, model: &FosrModel) -> Result<f64> {
    if store.n_draws() == 0 {
        return Err(FosrError::Empty("draw store is empty".into()));
    }
    let b_z = store.mean_b_z();
    if b_z.shape() != (model.k(), model.data.n_scenarios()) {
        return Err(FosrError::DimensionMismatch("draws do not match the model".into()));
    }
    let e = model.residuals(&b_z);
    Ok(e.norm_squared() / e.len() as f64)
}

pub fn score(store: &DrawStore, model: &FosrModel) -> Result<ScoreReport> {
    let w = waic(&store.loglik)?;
    let l = lpml(&store.loglik)?;
    Ok(ScoreReport {
        waic: w.waic,
        lppd: w.lppd,
        p_waic: w.p_waic,
        lpml: l.lpml,
        log_cpo: l.log_cpo,
        flagged: l.flagged,
        mse: predictive_mse(store, model)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_draws() {
        let ll = DMatrix::from_fn(10, 3, |_, c| -(c as f64) - 0.5);
        let w = waic(&ll).unwrap();
        assert_eq!(w.p_waic, 0.0);
        assert!((w.waic + 2.0 * (-0.5 - 1.5 - 2.5)).abs() < 1e-12);
        let l = lpml(&ll).unwrap();
        assert!((l.lpml - (-4.5)).abs() < 1e-12);
        assert!(l.flagged.is_empty());
    }

    #[test]
    fn empty_or_nonfinite_rejected() {
        assert!(waic(&DMatrix::zeros(0, 3)).is_err());
        let mut ll = DMatrix::zeros(3, 2);
        ll[(1, 1)] = f64::NEG_INFINITY;
        assert!(lpml(&ll).is_err());
    }

    #[test]
    fn better_fit_has_lower_waic() {
        // same spread, one model assigns higher likelihood everywhere
        let good = DMatrix::from_fn(50, 4, |r, _| -1.0 + 0.01 * (r % 7) as f64);
        let bad = good.map(|v| v - 3.0);
        assert!(waic(&good).unwrap().waic < waic(&bad).unwrap().waic);
        assert!(lpml(&good).unwrap().lpml > lpml(&bad).unwrap().lpml);
    }

    proptest! {
        #[test]
        fn shift_invariance(vals in prop::collection::vec(-50.0f64..5.0, 24), shift in -500.0f64..500.0) {
            let ll = DMatrix::from_vec(6, 4, vals);
            let shifted = ll.map(|v| v + shift);
            let a = waic(&ll).unwrap();
            let b = waic(&shifted).unwrap();
            prop_assert!((b.lppd - a.lppd - 4.0 * shift).abs() < 1e-9);
            prop_assert!((b.p_waic - a.p_waic).abs() < 1e-9);
            let la = lpml(&ll).unwrap();
            let lb = lpml(&shifted).unwrap();
            prop_assert!((lb.lpml - la.lpml - 4.0 * shift).abs() < 1e-9);
            prop_assert!(a.p_waic >= 0.0);
        }

        #[test]
        fn draw_permutation_invariance(vals in prop::collection::vec(-20.0f64..0.0, 15), rot in 0usize..5) {
            let ll = DMatrix::from_vec(5, 3, vals);
            let perm = DMatrix::from_fn(5, 3, |r, c| ll[((r + rot) % 5, c)]);
            let a = waic(&ll).unwrap();
            let b = waic(&perm).unwrap();
            prop_assert!((a.waic - b.waic).abs() < 1e-9);
            prop_assert!((lpml(&ll).unwrap().lpml - lpml(&perm).unwrap().lpml).abs() < 1e-9);
        }
    }
}
