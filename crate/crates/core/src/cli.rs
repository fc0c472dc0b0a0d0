//! Command-line front end. Every subcommand reads a [`RunConfig`], runs
//! one pipeline stage and writes its outputs under the output directory.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::design::{ssp_design, TruthSettings};
use crate::diagnostics::compute_diagnostics;
use crate::eb::{eb_hyperparams, fit_pilot};
use crate::error::{FosrError, Result};
use crate::io::{self, PriorChoice, Provenance, RunConfig};
use crate::model::{simulate_dataset, EnsembleDataset, FosrModel, HyperParams, ParamState};
use crate::posterior::{self, KrigeOptions, KrigingPlan};
use crate::sampler::{run_chains, DrawStore};
use crate::scoring;
use crate::spline::BasisSystem;

pub const DRAWS_FILE: &str = "draws.bin";

#[derive(Debug, Parser)]
#[command(name = "fosr", version, about = "Bayesian function-on-scalar emulator for simulator ensembles")]
pub struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Hyperparameter preset: paper-reference, paper-reference-stan, alt1, alt2 or empirical-bayes.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Input CSV, overriding the `data` key.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Extra `key=value` config entries, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Run the sampler and persist the draws.
    Fit,
    /// Coefficient and scenario curve summaries.
    Summarize,
    /// Predictions at unobserved times.
    Krige,
    /// Practical-equivalence probabilities of the coefficient curves.
    Rope,
    /// WAIC, LPML and predictive MSE.
    Score,
    /// Convergence diagnostics and trace exports.
    Diagnose,
    /// Empirical-Bayes prior constants from pilot least-squares fits.
    EbHyperparams,
    /// Synthetic 23-scenario ensemble from planted parameters.
    Simulate,
}

/// Resolves the configuration from the file plus command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for entry in &cli.set {
        let (k, v) = entry
            .split_once('=')
            .ok_or_else(|| FosrError::Config(format!("--set expects KEY=VALUE, got {entry:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(d) = &cli.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.sampler.seed = s;
    }
    if let Some(p) = &cli.preset {
        cfg.prior = PriorChoice::parse(p)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Data, basis and hyperparameters for a configured run.
pub struct Pipeline {
    pub cfg: RunConfig,
    pub prov: Provenance,
    pub model: FosrModel,
}

impl Pipeline {
    pub fn load(cfg: RunConfig) -> Result<Self> {
        let data = io::ingest(cfg.data_path()?, cfg.log_transform)?;
        let basis = cfg.basis_for(&data)?;
        let hp = cfg.hyperparams_for(&data, &basis)?;
        let (mode, step) = cfg.cov_mode.fit_mode();
        let model = FosrModel::new(data, basis, hp, mode, step)?;
        let prov = cfg.provenance();
        Ok(Self { cfg, prov, model })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn load_draws(&self) -> Result<DrawStore> {
        let (store, _) = io::read_draws(&self.out(DRAWS_FILE))?;
        let d = &self.model.data;
        if store.k != self.model.k() || store.n_cov != d.n_covariates() || store.n_scen != d.n_scenarios() {
            return Err(FosrError::DimensionMismatch(format!(
                "draws (K = {}, p + 1 = {}, I = {}) do not match the configured model",
                store.k, store.n_cov, store.n_scen
            )));
        }
        Ok(store)
    }

    fn beta_labels(&self) -> Vec<String> {
        let mut v = vec!["intercept".to_string()];
        v.extend(self.model.data.covariate_names.iter().cloned());
        v
    }
}

#[derive(Serialize)]
struct FitInfo<'a> {
    n_draws: usize,
    n_chains: usize,
    rho_accept: &'a [f64],
    cov_mode: String,
    hyperparams: &'a HyperParams,
    n_obs: usize,
    n_times: usize,
    n_scenarios: usize,
}

fn cmd_fit(p: &Pipeline) -> Result<()> {
    let start = Instant::now();
    let store = run_chains(&p.model, &p.cfg.sampler)?;
    io::write_draws(&p.out(DRAWS_FILE), &store, &p.prov.config_sha256)?;
    if p.cfg.export_csv {
        io::write_draws_csv(&p.out("draws.csv"), &store, &p.prov)?;
    }
    let info = FitInfo {
        n_draws: store.n_draws(),
        n_chains: store.n_chains,
        rho_accept: &store.rho_accept,
        cov_mode: p.cfg.cov_mode.to_string(),
        hyperparams: &p.model.hp,
        n_obs: p.model.data.n_rows(),
        n_times: p.model.data.n_times(),
        n_scenarios: p.model.data.n_scenarios(),
    };
    io::write_json(&p.out("fit.json"), &info, &p.prov)?;
    eprintln!("fit: {} draws in {:.1}s", store.n_draws(), start.elapsed().as_secs_f64());
    Ok(())
}

fn cmd_summarize(p: &Pipeline) -> Result<()> {
    let store = p.load_draws()?;
    let grid = p.cfg.summary_grid(&p.model.basis);
    let beta = posterior::summarize_beta(&store, &p.model.basis, &grid, p.cfg.level)?;
    let c = posterior::summarize_c(&store, &p.model.basis, &grid, p.cfg.level)?;
    io::write_curves_csv(&p.out("beta_summary.csv"), &beta, &p.beta_labels(), &p.prov)?;
    io::write_curves_csv(&p.out("c_summary.csv"), &c, &p.model.data.scenario_labels, &p.prov)?;
    #[derive(Serialize)]
    struct Meta<'a> {
        level: f64,
        grid: &'a [f64],
        beta_labels: Vec<String>,
        scenario_labels: &'a [String],
        n_draws: usize,
    }
    let meta = Meta {
        level: p.cfg.level,
        grid: &grid,
        beta_labels: p.beta_labels(),
        scenario_labels: &p.model.data.scenario_labels,
        n_draws: store.n_draws(),
    };
    io::write_json(&p.out("summary.json"), &meta, &p.prov)
}

fn cmd_rope(p: &Pipeline) -> Result<()> {
    let store = p.load_draws()?;
    let grid = p.cfg.summary_grid(&p.model.basis);
    let curves = posterior::rope_probability(&store, &p.model.basis, &grid)?;
    let labels = p.beta_labels();
    io::write_rope_csv(&p.out("rope.csv"), &curves, &labels, p.cfg.rope_threshold, &p.prov)?;
    #[derive(Serialize)]
    struct Flag {
        label: String,
        fires: bool,
        max_prob: f64,
    }
    let flags: Vec<Flag> = curves
        .iter()
        .map(|c| Flag {
            label: labels[c.index].clone(),
            fires: c.fires(p.cfg.rope_threshold),
            max_prob: c.prob.iter().copied().fold(0.0, f64::max),
        })
        .collect();
    io::write_json(
        &p.out("rope.json"),
        &serde_json::json!({ "threshold": p.cfg.rope_threshold, "coefficients": flags }),
        &p.prov,
    )
}

fn cmd_krige(p: &Pipeline) -> Result<()> {
    let store = p.load_draws()?;
    let (mode, step) = p.cfg.cov_mode.krige_mode();
    let plan = KrigingPlan::new(&p.model.basis, &p.model.data.times, &p.cfg.pred_times, mode, step)?;
    let opts = KrigeOptions { level: p.cfg.level, seed: p.cfg.sampler.seed, keep_samples: false };
    let res = posterior::krige(&store, &plan, &p.model.data, &opts)?;
    io::write_krige_csv(&p.out("krige.csv"), &res, &p.model.data, &p.prov)?;
    io::write_json(
        &p.out("krige.json"),
        &serde_json::json!({
            "pred_times": res.pred_times,
            "level": res.level,
            "cov_mode": p.cfg.cov_mode.to_string(),
            "mean_cond_cov": res.mean_cond_cov,
        }),
        &p.prov,
    )
}

fn cmd_score(p: &Pipeline) -> Result<()> {
    let store = p.load_draws()?;
    let report = scoring::score(&store, &p.model)?;
    io::write_cpo_csv(&p.out("cpo.csv"), &report.log_cpo, &p.model.data, &p.prov)?;
    io::write_json(&p.out("score.json"), &report, &p.prov)?;
    println!("waic = {}\nlpml = {}\nmse = {}", report.waic, report.lpml, report.mse);
    Ok(())
}

fn cmd_diagnose(p: &Pipeline) -> Result<()> {
    let store = p.load_draws()?;
    let report = compute_diagnostics(&store)?;
    // B_Z traces are omitted; everything else is exported
    let skip_from = store.k * store.n_cov;
    let skip_to = skip_from + store.k * store.n_scen;
    let n = store.draws.first().map_or(0, |d| d.n_scalars());
    let params: Vec<usize> = (0..n).filter(|i| *i < skip_from || *i >= skip_to).collect();
    io::write_trace_csv(&p.out("trace.csv"), &store, &params, &p.prov)?;
    io::write_acf_csv(&p.out("acf.csv"), &report, &p.prov)?;
    io::write_json(&p.out("diagnostics.json"), &report, &p.prov)?;
    if let Some(r) = report.max_rhat {
        println!("max split R-hat = {r:.4} ({})", report.worst_rhat_param.as_deref().unwrap_or(""));
    }
    if let Some(e) = report.min_ess {
        println!("min ESS = {e:.1} ({})", report.min_ess_param.as_deref().unwrap_or(""));
    }
    Ok(())
}

fn cmd_eb(cfg: &RunConfig) -> Result<()> {
    let data = io::ingest(cfg.data_path()?, cfg.log_transform)?;
    let basis = cfg.basis_for(&data)?;
    let eb = eb_hyperparams(&fit_pilot(&data, &basis)?, &data, &basis)?;
    let hp = eb.apply(&HyperParams::paper_reference());
    let fragment = io::hyperparams_fragment(&hp);
    let prov = cfg.provenance();
    fs::write(cfg.out.join("eb_hyperparams.conf"), format!("{}\n{fragment}", prov.header_line()))?;
    io::write_json(&cfg.out.join("eb_hyperparams.json"), &eb, &prov)?;
    print!("{fragment}");
    Ok(())
}

#[derive(Serialize)]
struct TruthFile<'a> {
    b_w: Vec<Vec<f64>>,
    b_z: Vec<Vec<f64>>,
    sig2_z: f64,
    sigma2: f64,
    rho: f64,
    cov_mode: String,
    state: &'a [f64],
}

fn columns(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

/// Simulated design, truth state and dataset for a configuration.
pub fn simulate_from_config(cfg: &RunConfig) -> Result<(EnsembleDataset, ParamState, BasisSystem)> {
    let design = ssp_design(cfg.sim.n_models);
    let t_min = cfg.t_min.unwrap_or(design.times[0]);
    let t_max = cfg.t_max.unwrap_or(design.times[design.times.len() - 1]);
    let basis = BasisSystem::new(cfg.k, t_min, t_max, cfg.alpha)?;
    let settings = TruthSettings::planted(&basis, design.w.ncols(), cfg.sim.sigma2, cfg.sim.rho, cfg.sim.sig2_z);
    let seed = cfg.sampler.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = settings.draw_state(&basis, &design, &mut rng);
    let (mode, step) = cfg.cov_mode.fit_mode();
    let data = simulate_dataset(&truth, &design, &basis, mode, step, seed.wrapping_add(1))?;
    Ok((data, truth, basis))
}

fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let (data, truth, basis) = simulate_from_config(cfg)?;
    let prov = cfg.provenance();
    io::write_dataset(&cfg.out.join("data.csv"), &data, cfg.log_transform, &prov)?;
    let flat = truth.to_flat();
    let file = TruthFile {
        b_w: columns(&truth.b_w),
        b_z: columns(&truth.b_z),
        sig2_z: truth.sig2_z,
        sigma2: truth.sigma2,
        rho: truth.rho,
        cov_mode: cfg.cov_mode.to_string(),
        state: &flat,
    };
    io::write_json(&cfg.out.join("truth.json"), &file, &prov)?;
    let grid = cfg.summary_grid(&basis);
    let theta = basis.eval(&grid)?;
    let curves: Vec<_> = (0..truth.b_w.ncols())
        .map(|k| {
            let v = &theta * truth.b_w.column(k);
            let row = nalgebra::DMatrix::from_row_slice(1, grid.len(), v.as_slice());
            posterior::summarize_values(format!("beta[{k}]"), k, &grid, &row, 0.95)
        })
        .collect();
    let mut labels = vec!["intercept".to_string()];
    labels.extend(data.covariate_names.iter().cloned());
    io::write_curves_csv(&cfg.out.join("truth_beta.csv"), &curves, &labels, &prov)
}

/// Parses `argv` and runs the selected subcommand.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    fs::create_dir_all(&cfg.out)?;
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg),
        Command::EbHyperparams => cmd_eb(&cfg),
        cmd => {
            let p = Pipeline::load(cfg)?;
            match cmd {
                Command::Fit => cmd_fit(&p),
                Command::Summarize => cmd_summarize(&p),
                Command::Krige => cmd_krige(&p),
                Command::Rope => cmd_rope(&p),
                Command::Score => cmd_score(&p),
                Command::Diagnose => cmd_diagnose(&p),
                Command::Simulate | Command::EbHyperparams => unreachable!(),
            }
        }
    }
}

/// Single-line, tab-separated error report.
pub fn error_line(e: &FosrError) -> String {
    let msg = e.to_string().replace(['\n', '\t'], " ");
    format!("error\tkind={}\tmessage={msg}", e.kind())
}

/// Entry point shared by the binary and tests; returns the exit status.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}

