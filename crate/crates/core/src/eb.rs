//! Least-squares pilot fits and the empirical-Bayes choice of the score
//! variance hyperparameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FosrError, Result};
use crate::model::{EnsembleDataset, HyperParams};
use crate::spline::BasisSystem;

#[derive(Debug, Clone, PartialEq)]
pub struct PilotEstimates {
    /// `K × I`: per-scenario least-squares scores.
    pub b_z_ols: DMatrix<f64>,
    /// `K × (p + 1)`: `P`-weighted regression of the `B_Z` columns on `W`.
    pub b_w_wls: DMatrix<f64>,
}

/// Shape/rate pairs produced by the empirical-Bayes rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EbHyperParams {
    pub a_w: Vec<f64>,
    pub b_w: Vec<f64>,
    pub a_z: f64,
    pub b_z: f64,
}

impl EbHyperParams {
    /// Merges into `base`, replacing `a_W`, `b_W`, `a_Z`, `b_Z`.
    pub fn apply(&self, base: &HyperParams) -> HyperParams {
        HyperParams {
            a_w: self.a_w.clone(),
            b_w: self.b_w.clone(),
            a_z: self.a_z,
            b_z: self.b_z,
            ..base.clone()
        }
    }
}

pub fn fit_pilot(data: &EnsembleDataset, basis: &BasisSystem) -> Result<PilotEstimates> {
    let theta = basis.eval(&data.times)?;
    let k = basis.k();
    let gram = theta.tr_mul(&theta);
    let gram_chol = nalgebra::Cholesky::new(gram).ok_or_else(|| {
        FosrError::SingularDesign(format!(
            "ΘᵀΘ is singular: {} observed times cannot identify K = {k} scores",
            data.n_times()
        ))
    })?;

    // min Σ_j ‖y_ij − Θb‖² is solved by regressing the scenario mean curve.
    let counts = data.rows_per_scenario();
    let mut means = DMatrix::zeros(data.n_times(), data.n_scenarios());
    for (n, &g) in data.group_of.iter().enumerate() {
        for d in 0..data.n_times() {
            means[(d, g)] += data.y[(n, d)] / counts[g] as f64;
        }
    }
    let b_z_ols = gram_chol.solve(&theta.tr_mul(&means));

    // Normal equations (WᵀW ⊗ P) vec(B_W) = vec(P B_Z W).
    let w = &data.w;
    let n_cov = w.ncols();
    let p = basis.penalty();
    let wtw = w.tr_mul(w);
    let mut normal = DMatrix::zeros(k * n_cov, k * n_cov);
    for a in 0..n_cov {
        for b in 0..n_cov {
            normal.view_mut((a * k, b * k), (k, k)).copy_from(&(p * wtw[(a, b)]));
        }
    }
    let rhs_mat = p * &b_z_ols * w;
    let rhs = DVector::from_column_slice(rhs_mat.as_slice());
    let chol = nalgebra::Cholesky::new(normal)
        .ok_or_else(|| FosrError::SingularDesign("weighted least-squares normal matrix".into()))?;
    let vec_bw = chol.solve(&rhs);
    let b_w_wls = DMatrix::from_column_slice(k, n_cov, vec_bw.as_slice());
    Ok(PilotEstimates { b_z_ols, b_w_wls })
}

pub fn eb_hyperparams(
    pilot: &PilotEstimates,
    data: &EnsembleDataset,
    basis: &BasisSystem,
) -> Result<EbHyperParams> {
    let k = basis.k();
    if pilot.b_z_ols.shape() != (k, data.n_scenarios())
        || pilot.b_w_wls.shape() != (k, data.n_covariates())
    {
        return Err(FosrError::DimensionMismatch("pilot fits do not match data/basis".into()));
    }
    let p = basis.penalty();
    let i_count = data.n_scenarios() as f64;
    let resid = &pilot.b_z_ols - &pilot.b_w_wls * data.w.transpose();
    let b_z = 0.5 * (resid.transpose() * p * &resid).trace();
    let b_w = (0..data.n_covariates())
        .map(|c| {
            let col = pilot.b_w_wls.column(c);
            0.5 * col.dot(&(p * col))
        })
        .collect();
    Ok(EbHyperParams {
        a_w: vec![k as f64 / 2.0; data.n_covariates()],
        b_w,
        a_z: i_count * k as f64 / 2.0,
        b_z,
    })
}
