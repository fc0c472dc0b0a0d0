//! Synthetic designs and ground-truth parameter generators used by the
//! `simulate` subcommand and the test suites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::linalg::PrecisionGaussian;
use crate::model::{DesignSkeleton, HyperParams, ParamState};
use crate::spline::BasisSystem;

pub const SSP_COVARIATES: [&str; 5] = ["POP", "GDPPC", "END", "FF", "LC"];

/// The 23 SSP-level combinations used for the full-scale design: the
/// three diagonal scenarios, every one-at-a-time move away from the SSP2
/// centre, and one-at-a-time moves towards SSP2 from the SSP1 and SSP3
/// corners.
pub fn ssp_levels() -> Vec<[f64; 5]> {
    let mut out = vec![[1.0; 5], [2.0; 5], [3.0; 5]];
    for v in 0..5 {
        for level in [1.0, 3.0] {
            let mut row = [2.0; 5];
            row[v] = level;
            out.push(row);
        }
    }
    for corner in [1.0, 3.0] {
        for v in 0..5 {
            let mut row = [corner; 5];
            row[v] = 2.0;
            out.push(row);
        }
    }
    out
}

/// 23 scenarios × `n_models` simulators on the decades 2020..=2090.
pub fn ssp_design(n_models: usize) -> DesignSkeleton {
    let levels = ssp_levels();
    let i_count = levels.len();
    let w = DMatrix::from_fn(i_count, 6, |i, c| if c == 0 { 1.0 } else { levels[i][c - 1] });
    let mut group_of = Vec::new();
    let mut model_labels = Vec::new();
    for i in 0..i_count {
        for j in 0..n_models {
            group_of.push(i);
            model_labels.push(format!("IAM{}", j + 1));
        }
    }
    DesignSkeleton {
        w,
        group_of,
        times: (0..8).map(|d| 2020.0 + 10.0 * d as f64).collect(),
        scenario_labels: (0..i_count).map(|i| format!("S{:02}", i + 1)).collect(),
        model_labels,
        covariate_names: SSP_COVARIATES.iter().map(|s| s.to_string()).collect(),
    }
}

/// I = 3 scenarios, J = 2 simulators, D = 4 decades, p = 1.
pub fn tiny_design() -> DesignSkeleton {
    let w = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
    DesignSkeleton {
        w,
        group_of: vec![0, 0, 1, 1, 2, 2],
        times: vec![2020.0, 2030.0, 2040.0, 2050.0],
        scenario_labels: vec!["A".into(), "B".into(), "C".into()],
        model_labels: vec!["m1".into(), "m2".into(), "m1".into(), "m2".into(), "m1".into(), "m2".into()],
        covariate_names: vec!["x".into()],
    }
}

/// Moderately informative priors for the tiny design (K = 4, p = 1).
pub fn tiny_hyperparams() -> HyperParams {
    HyperParams {
        a_w: vec![3.0, 3.0],
        b_w: vec![2.0, 1.0],
        a_z: 4.0,
        b_z: 1.5,
        nu: 6.0,
        nu0: 4.0,
        psi0: 0.5,
        alpha: 0.1,
        k: 4,
    }
}

/// A fixed, valid state for the tiny design.
pub fn tiny_truth(basis: &BasisSystem) -> ParamState {
    let k = basis.k();
    let b_w = DMatrix::from_fn(k, 2, |l, c| if c == 0 { 1.0 + 0.2 * l as f64 } else { 0.5 - 0.1 * l as f64 });
    let w = tiny_design().w;
    let mut b_z = &b_w * w.transpose();
    for (idx, v) in b_z.iter_mut().enumerate() {
        *v += 0.1 * ((idx as f64) * 1.3).sin();
    }
    ParamState {
        b_w,
        b_z,
        sig2_w: vec![0.8, 0.4],
        sig2_z: 0.3,
        sigma2: 0.2,
        psi: 0.4,
        rho: 0.45,
    }
}

/// Ground truth for simulation studies.
#[derive(Debug, Clone)]
pub struct TruthSettings {
    /// `K × (p + 1)` fixed-effect scores.
    pub b_w: DMatrix<f64>,
    pub sig2_z: f64,
    pub sigma2: f64,
    pub rho: f64,
}

impl TruthSettings {
    /// Default truth for a `p`-covariate design on `basis`: a declining
    /// intercept, covariate 1 planted at zero, covariate 2 planted at a
    /// constant `5σ`, and smooth moderate effects for the rest.
    pub fn planted(basis: &BasisSystem, n_cov: usize, sigma2: f64, rho: f64, sig2_z: f64) -> Self {
        let k = basis.k();
        let sigma = sigma2.sqrt();
        let b_w = DMatrix::from_fn(k, n_cov, |l, c| {
            let u = l as f64 / (k - 1) as f64;
            match c {
                0 => 3.5 - 1.0 * u,
                1 => 0.0,
                2 => 5.0 * sigma,
                _ => {
                    let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                    sign * 0.3 * (std::f64::consts::PI * (u + 0.25 * c as f64)).sin()
                }
            }
        });
        Self { b_w, sig2_z, sigma2, rho }
    }

    /// Draws `B_{Z,i} ~ N(B_W w_i, σ²_Z P⁻¹)` and assembles a full state.
    pub fn draw_state<R: Rng + ?Sized>(
        &self,
        basis: &BasisSystem,
        design: &DesignSkeleton,
        rng: &mut R,
    ) -> ParamState {
        let means = &self.b_w * design.w.transpose();
        let prior = PrecisionGaussian::from_canonical(basis.penalty() / self.sig2_z, &DVector::zeros(basis.k()))
            .expect("penalty is positive definite");
        let mut b_z = means.clone();
        for i in 0..design.n_scenarios() {
            let dev = prior.sample(rng);
            b_z.column_mut(i).copy_from(&(means.column(i) + dev));
        }
        ParamState {
            b_w: self.b_w.clone(),
            b_z,
            sig2_w: vec![1.0; self.b_w.ncols()],
            sig2_z: self.sig2_z,
            sigma2: self.sigma2,
            psi: self.sigma2,
            rho: self.rho,
        }
    }
}
