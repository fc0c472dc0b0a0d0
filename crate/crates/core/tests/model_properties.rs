//! Density, simulation and covariance properties checked against
//! independently coded oracles.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fosr_core::cov::{build_cov, Ar1Factor, Ar1Spec, CovMode, SuppVariant};
use fosr_core::design::{tiny_design, tiny_hyperparams, tiny_truth};
use fosr_core::model::{simulate_dataset, DesignSkeleton, FosrModel, ParamState};
use fosr_core::posterior::KrigingPlan;
use fosr_core::spline::BasisSystem;

fn tiny(mode: CovMode, seed: u64) -> (FosrModel, ParamState) {
    let basis = BasisSystem::new(4, 2020.0, 2050.0, 0.1).unwrap();
    let truth = tiny_truth(&basis);
    let data = simulate_dataset(&truth, &tiny_design(), &basis, mode, 10.0, seed).unwrap();
    (FosrModel::new(data, basis, tiny_hyperparams(), mode, 10.0).unwrap(), truth)
}

/// `R(ρ)` and `dR/dρ` on the model's grid, written out from the lag formula.
fn corr_and_derivative(model: &FosrModel, rho: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let t = &model.data.times;
    let d = t.len();
    let lag = |i: usize, j: usize| (t[i] - t[j]).abs() / model.base_step;
    let r = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rho.powf(lag(i, j)) });
    let dr = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            0.0
        } else {
            let l = lag(i, j);
            l * rho.powf(l - 1.0)
        }
    });
    (r, dr)
}

/// Analytic gradient of the log joint in the unconstrained coordinates.
fn analytic_gradient(model: &FosrModel, s: &ParamState) -> Vec<f64> {
    let hp = &model.hp;
    let p = model.basis.penalty();
    let theta = &model.theta;
    let w = &model.data.w;
    let k = model.k() as f64;
    let n_scen = model.data.n_scenarios();
    let n_cov = model.data.n_covariates();
    let (r, dr) = corr_and_derivative(model, s.rho);
    let r_inv = r.clone().try_inverse().unwrap();
    let sigma_inv = &r_inv / s.sigma2;

    let resid_scores = &s.b_z - &s.b_w * w.transpose();
    let mut g_bz = -(p * &resid_scores) / s.sig2_z;
    let mut quad_e = 0.0;
    let mut quad_drho = 0.0;
    for (n, &i) in model.data.group_of.iter().enumerate() {
        let e = model.data.y.row(n).transpose() - theta * s.b_z.column(i);
        let mut col = g_bz.column_mut(i);
        col += theta.transpose() * (&sigma_inv * &e);
        quad_e += e.dot(&(&r_inv * &e));
        quad_drho += e.dot(&(&r_inv * &dr * &r_inv * &e));
    }
    let mut g_bw = (p * &resid_scores * w) / s.sig2_z;
    for c in 0..n_cov {
        let col = p * s.b_w.column(c) / s.sig2_w[c];
        let mut out = g_bw.column_mut(c);
        out -= col;
    }

    let mut g = Vec::new();
    g.extend(g_bw.iter());
    g.extend(g_bz.iter());
    for c in 0..n_cov {
        let q = s.b_w.column(c).dot(&(p * s.b_w.column(c)));
        let v = s.sig2_w[c];
        g.push(-k / 2.0 + q / (2.0 * v) - (hp.a_w[c] + 1.0) + hp.b_w[c] / v);
    }
    let q_z: f64 = (resid_scores.transpose() * p * &resid_scores).trace();
    g.push(-(n_scen as f64) * k / 2.0 + q_z / (2.0 * s.sig2_z) - (hp.a_z + 1.0) + hp.b_z / s.sig2_z);
    let nd = (model.data.n_rows() * model.data.n_times()) as f64;
    g.push(-nd / 2.0 + quad_e / (2.0 * s.sigma2) - (hp.nu / 2.0 + 1.0) + hp.nu * s.psi / (2.0 * s.sigma2));
    let d_psi = hp.nu / (2.0 * s.psi) - hp.nu / (2.0 * s.sigma2) + (hp.nu0 / 2.0 - 1.0) / s.psi - hp.nu0 / (2.0 * hp.psi0);
    g.push(s.psi * d_psi);
    let n_rows = model.data.n_rows() as f64;
    let d_rho = -0.5 * n_rows * (&r_inv * &dr).trace() + 0.5 * quad_drho / s.sigma2 - s.rho;
    let jac = match model.mode {
        CovMode::Continuous => s.rho * (1.0 - s.rho),
        _ => 1.0 - s.rho * s.rho,
    };
    g.push(d_rho * jac);
    g
}

#[test]
fn finite_difference_gradient_matches_analytic() {
    for (mode, seed) in [(CovMode::Continuous, 1), (CovMode::Decade, 2)] {
        let (model, truth) = tiny(mode, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let mut s = truth.clone();
            s.b_w = s.b_w.map(|v| v + rng.random_range(-0.2..0.2));
            s.b_z = s.b_z.map(|v| v + rng.random_range(-0.2..0.2));
            s.sig2_w = s.sig2_w.iter().map(|v| v * rng.random_range(0.5..2.0)).collect();
            s.sig2_z *= rng.random_range(0.5..2.0);
            s.sigma2 *= rng.random_range(0.5..2.0);
            s.psi *= rng.random_range(0.5..2.0);
            s.rho = rng.random_range(0.1..0.8);
            let numeric = model.numeric_gradient(&s, 1e-5).unwrap();
            let exact = analytic_gradient(&model, &s);
            assert_eq!(numeric.len(), exact.len());
            for (j, (a, b)) in numeric.iter().zip(&exact).enumerate() {
                let rel = (a - b).abs() / b.abs().max(1.0);
                assert!(rel < 1e-4, "{mode:?} coordinate {j}: numeric {a} vs analytic {b}");
            }
        }
    }
}

#[test]
fn independent_noise_sample_covariance() {
    // one scenario, 10⁴ curves, ρ = 0
    let j = 10_000;
    let basis = BasisSystem::new(4, 2020.0, 2050.0, 0.1).unwrap();
    let design = DesignSkeleton {
        w: DMatrix::from_row_slice(1, 1, &[1.0]),
        group_of: vec![0; j],
        times: vec![2020.0, 2030.0, 2040.0, 2050.0],
        scenario_labels: vec!["s".into()],
        model_labels: (0..j).map(|m| format!("m{m}")).collect(),
        covariate_names: vec![],
    };
    let sigma2 = 0.7;
    let truth = ParamState {
        b_w: DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 1.5, 0.5]),
        b_z: DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 1.5, 0.5]),
        sig2_w: vec![1.0],
        sig2_z: 1.0,
        sigma2,
        psi: 1.0,
        rho: 0.0,
    };
    let data = simulate_dataset(&truth, &design, &basis, CovMode::Decade, 10.0, 5).unwrap();
    let fitted = basis.eval(&design.times).unwrap() * truth.b_z.column(0);
    let d = design.times.len();
    let mut cov = DMatrix::zeros(d, d);
    for n in 0..j {
        let e = data.y.row(n).transpose() - &fitted;
        cov += &e * e.transpose();
    }
    cov /= j as f64;
    let n = j as f64;
    for a in 0..d {
        for b in 0..d {
            let (target, se) = if a == b {
                (sigma2, sigma2 * (2.0 / n).sqrt())
            } else {
                (0.0, sigma2 / n.sqrt())
            };
            assert!((cov[(a, b)] - target).abs() < 3.0 * se, "entry ({a},{b}) = {}", cov[(a, b)]);
        }
    }
}

#[test]
fn unconstrained_round_trip() {
    for mode in [CovMode::Continuous, CovMode::Decade] {
        let (model, truth) = tiny(mode, 3);
        let back = model.from_unconstrained(&model.to_unconstrained(&truth)).unwrap();
        for (a, b) in back.to_flat().iter().zip(truth.to_flat()) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
    }
}

fn mode_strategy() -> impl Strategy<Value = (CovMode, f64)> {
    prop_oneof![
        (0.01f64..0.99).prop_map(|r| (CovMode::Continuous, r)),
        (-0.95f64..0.95).prop_map(|r| (CovMode::Decade, r)),
        (-0.95f64..0.95).prop_map(|r| (CovMode::Supplementary(SuppVariant::Full), r)),
        (0.01f64..0.95).prop_map(|r| (CovMode::Supplementary(SuppVariant::Obs), r)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_is_symmetric_positive_definite((mode, rho) in mode_strategy(), sigma2 in 0.01f64..10.0, d in 1usize..12) {
        let step = if mode == CovMode::Supplementary(SuppVariant::Full) { 5.0 } else { 10.0 };
        let times: Vec<f64> = (0..d).map(|i| 2000.0 + step * i as f64).collect();
        let spec = Ar1Spec::new(sigma2, rho, mode, step).unwrap();
        let m = build_cov(&spec, &times).unwrap();
        prop_assert_eq!(&m, &m.transpose());
        let factor = Ar1Factor::new(&spec, &times).unwrap();
        let x: Vec<f64> = (0..d).map(|i| (i as f64 * 0.7).sin() + 0.1).collect();
        let dense = m.clone().try_inverse().unwrap();
        let xv = DVector::from_column_slice(&x);
        let want = xv.dot(&(&dense * &xv));
        prop_assert!(factor.quad_form(&x) > 0.0);
        prop_assert!((factor.quad_form(&x) - want).abs() < 1e-8 * want.abs().max(1.0));
    }

    #[test]
    fn kriging_never_inflates_variance(rho in 0.01f64..0.95, sigma2 in 0.1f64..5.0, seed in 0u64..1000) {
        let basis = BasisSystem::new(5, 2000.0, 2100.0, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs: Vec<f64> = (0..6).map(|i| 2000.0 + 20.0 * i as f64).collect();
        // odd years never coincide with the even observation grid
        let pred: Vec<f64> = (0..3).map(|_| 2001.0 + 2.0 * rng.random_range(0..50) as f64).collect();
        let mut pred_sorted = pred.clone();
        pred_sorted.sort_by(f64::total_cmp);
        pred_sorted.dedup();
        let plan = KrigingPlan::new(&basis, &obs, &pred_sorted, CovMode::Continuous, 10.0).unwrap();
        let (spp, spo, soo) = plan.blocks(sigma2, rho).unwrap();
        let cond = &spp - &spo * soo.try_inverse().unwrap() * spo.transpose();
        let eig_cond = nalgebra::SymmetricEigen::new((&cond + cond.transpose()) * 0.5).eigenvalues.min();
        prop_assert!(eig_cond > -1e-10);
        for i in 0..pred_sorted.len() {
            prop_assert!(cond[(i, i)] <= spp[(i, i)] + 1e-12);
        }
    }
}
