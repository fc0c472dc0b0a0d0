//! Dataset ingestion, run configuration, and persistence of draws and
//! reports.
//!
//! # Binary draw layout
//!
//! All integers are little-endian `u64`, all reals little-endian `f64`.
//!
//! ```text
//! magic        8 bytes  "FOSRDRW1"
//! config hash 32 bytes  SHA-256 of the run configuration
//! header      10 × u64  k, n_cov, n_scen, n_obs, n_chains, n_draws,
//!                       seed, mode code, n_scalars, format version
//! draws       n_draws chunks of: chain u64, iter u64,
//!                       n_scalars f64 (flat state), n_obs f64 (loglik)
//! trailer     per chain: accept-rate f64, steps u64, steps × f64
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cov::{CovMode, CovSetting};
use crate::eb::{eb_hyperparams, fit_pilot};
use crate::error::{FosrError, Result};
use crate::model::{EnsembleDataset, HyperParams, ParamState};
use crate::posterior::default_pred_grid;
use crate::sampler::{DrawStore, SamplerConfig};
use crate::spline::BasisSystem;

const MAGIC: &[u8; 8] = b"FOSRDRW1";
const FORMAT_VERSION: u64 = 1;

/// Identifies the run that produced an output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_sha256: String, seed: u64) -> Self {
        Self { version: crate::VERSION.to_string(), config_sha256, seed }
    }

    /// Comment line placed at the top of every CSV output.
    pub fn header_line(&self) -> String {
        format!("# fosr {} config_sha256={} seed={}", self.version, self.config_sha256, self.seed)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn csv_writer(path: &Path, prov: &Provenance) -> Result<csv::Writer<BufWriter<File>>> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "{}", prov.header_line())?;
    Ok(csv::Writer::from_writer(f))
}

/// Writes `value` as pretty JSON with a top-level `provenance` field.
pub fn write_json<T: Serialize>(path: &Path, value: &T, prov: &Provenance) -> Result<()> {
    let mut v = serde_json::to_value(value)?;
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("provenance".into(), serde_json::to_value(prov)?);
    } else {
        v = serde_json::json!({ "provenance": prov, "value": v });
    }
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, &v)?;
    writeln!(f)?;
    Ok(())
}

// ---------------------------------------------------------------- ingestion

struct CurveRows {
    covariates: Vec<f64>,
    points: Vec<(f64, f64, u64)>,
}

/// Reads the long-format CSV
/// `scenario_id, model_id, <covariates...>, year, value`.
/// Lines starting with `#` are ignored. Scenarios are ordered by id and
/// curves by model id, so row order in the file does not matter.
pub fn ingest_reader<R: Read>(reader: R, log_transform: bool) -> Result<EnsembleDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let nc = cols.len();
    if nc < 4
        || cols[0] != "scenario_id"
        || cols[1] != "model_id"
        || cols[nc - 2] != "year"
        || cols[nc - 1] != "value"
    {
        return Err(FosrError::Ingest(format!(
            "header must be scenario_id,model_id,<covariates...>,year,value; got {}",
            cols.join(",")
        )));
    }
    let covariate_names: Vec<String> = cols[2..nc - 2].iter().map(|s| s.to_string()).collect();
    let n_cov = covariate_names.len();

    let mut curves: BTreeMap<(String, String), CurveRows> = BTreeMap::new();
    let mut scenario_cov: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != nc {
            return Err(FosrError::Ingest(format!("line {line}: expected {nc} fields, found {}", rec.len())));
        }
        let num = |idx: usize| -> Result<f64> {
            let v: f64 = rec[idx].parse().map_err(|_| {
                FosrError::Ingest(format!("line {line}: column {} is not a number: {:?}", cols[idx], &rec[idx]))
            })?;
            if !v.is_finite() {
                return Err(FosrError::Ingest(format!("line {line}: column {} is not finite", cols[idx])));
            }
            Ok(v)
        };
        let scenario = rec[0].to_string();
        let model = rec[1].to_string();
        let covs = (2..nc - 2).map(num).collect::<Result<Vec<f64>>>()?;
        let year = num(nc - 2)?;
        let mut value = num(nc - 1)?;
        if log_transform {
            if value <= 0.0 {
                return Err(FosrError::Ingest(format!(
                    "line {line}: value {value} for scenario {scenario}, model {model}, year {year} \
                     must be positive under the log transform"
                )));
            }
            value = value.ln();
        }
        match scenario_cov.get(&scenario) {
            Some(prev) if prev != &covs => {
                return Err(FosrError::Ingest(format!(
                    "line {line}: covariates of scenario {scenario} differ from an earlier row"
                )));
            }
            Some(_) => {}
            None => {
                scenario_cov.insert(scenario.clone(), covs.clone());
            }
        }
        curves
            .entry((scenario, model))
            .or_insert_with(|| CurveRows { covariates: covs, points: Vec::new() })
            .points
            .push((year, value, line));
    }
    if curves.is_empty() {
        return Err(FosrError::Empty("no data rows".into()));
    }

    let mut years = BTreeSet::new();
    for c in curves.values_mut() {
        c.points.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in c.points.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(FosrError::Ingest(format!(
                    "lines {} and {}: duplicate year {}",
                    w[0].2, w[1].2, w[0].0
                )));
            }
        }
        years.extend(c.points.iter().map(|p| p.0.to_bits()));
    }
    let mut times: Vec<f64> = years.into_iter().map(f64::from_bits).collect();
    times.sort_by(|a, b| a.total_cmp(b));

    let scenario_labels: Vec<String> = scenario_cov.keys().cloned().collect();
    let i_count = scenario_labels.len();
    let mut y = DMatrix::zeros(curves.len(), times.len());
    let mut group_of = Vec::with_capacity(curves.len());
    let mut model_labels = Vec::with_capacity(curves.len());
    let mut w = DMatrix::from_element(i_count, n_cov + 1, 1.0);
    for (i, s) in scenario_labels.iter().enumerate() {
        for (c, v) in scenario_cov[s].iter().enumerate() {
            w[(i, c + 1)] = *v;
        }
    }
    for (row, ((scenario, model), c)) in curves.iter().enumerate() {
        if c.points.len() != times.len() || c.points.iter().zip(&times).any(|(p, t)| p.0 != *t) {
            return Err(FosrError::Ingest(format!(
                "scenario {scenario}, model {model}: {} years, the ensemble grid has {}; grids must be identical",
                c.points.len(),
                times.len()
            )));
        }
        debug_assert_eq!(c.covariates, scenario_cov[scenario]);
        for (d, p) in c.points.iter().enumerate() {
            y[(row, d)] = p.1;
        }
        group_of.push(scenario_labels.binary_search(scenario).expect("scenario was recorded"));
        model_labels.push(model.clone());
    }
    EnsembleDataset::new(y, w, group_of, times, scenario_labels, model_labels, covariate_names)
}

pub fn ingest(path: &Path, log_transform: bool) -> Result<EnsembleDataset> {
    let f = File::open(path)
        .map_err(|e| FosrError::Ingest(format!("cannot open {}: {e}", path.display())))?;
    ingest_reader(BufReader::new(f), log_transform)
}

/// Writes a dataset in the ingestion format. With `exponentiate`, values
/// are written as `exp(y)` so that ingestion with the log transform
/// recovers `y`.
pub fn write_dataset(path: &Path, data: &EnsembleDataset, exponentiate: bool, prov: &Provenance) -> Result<()> {
    let mut wtr = csv_writer(path, prov)?;
    let mut header = vec!["scenario_id".to_string(), "model_id".to_string()];
    header.extend(data.covariate_names.iter().cloned());
    header.extend(["year".to_string(), "value".to_string()]);
    wtr.write_record(&header)?;
    for (n, &g) in data.group_of.iter().enumerate() {
        for (d, t) in data.times.iter().enumerate() {
            let mut rec = vec![data.scenario_labels[g].clone(), data.model_labels[n].clone()];
            rec.extend((1..data.n_covariates()).map(|c| data.w[(g, c)].to_string()));
            let v = data.y[(n, d)];
            rec.push(t.to_string());
            rec.push(if exponentiate { v.exp() } else { v }.to_string());
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

// ------------------------------------------------------------ configuration

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PriorChoice {
    Preset(String),
    EmpiricalBayes,
}

impl PriorChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "empirical-bayes" => Ok(PriorChoice::EmpiricalBayes),
            name => {
                HyperParams::preset(name)?;
                Ok(PriorChoice::Preset(name.to_string()))
            }
        }
    }
}

/// Individual hyperparameter overrides applied after the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct HyperOverrides {
    pub a_w: Option<Vec<f64>>,
    pub b_w: Option<Vec<f64>>,
    pub a_z: Option<f64>,
    pub b_z: Option<f64>,
    pub nu: Option<f64>,
    pub nu0: Option<f64>,
    pub psi0: Option<f64>,
}

/// Settings of the `simulate` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSettings {
    pub n_models: usize,
    pub sigma2: f64,
    pub rho: f64,
    pub sig2_z: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self { n_models: 5, sigma2: 0.04, rho: 0.5, sig2_z: 5e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    /// Not part of the configuration hash.
    #[serde(skip)]
    pub out: PathBuf,
    pub prior: PriorChoice,
    pub overrides: HyperOverrides,
    pub k: usize,
    pub alpha: f64,
    /// Basis domain; defaults to the span of the observed times.
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub cov_mode: CovSetting,
    pub log_transform: bool,
    pub sampler: SamplerConfig,
    pub pred_times: Vec<f64>,
    pub level: f64,
    /// Spacing of the curve-summary grid, in years.
    pub grid_step: f64,
    pub rope_threshold: f64,
    pub export_csv: bool,
    pub sim: SimSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            out: PathBuf::from("fosr-out"),
            prior: PriorChoice::Preset("paper-reference".into()),
            overrides: HyperOverrides::default(),
            k: 8,
            alpha: 0.01,
            t_min: None,
            t_max: None,
            cov_mode: CovSetting::Continuous,
            log_transform: true,
            sampler: SamplerConfig::default(),
            pred_times: default_pred_grid(),
            level: 0.95,
            grid_step: 1.0,
            rope_threshold: 0.9,
            export_csv: false,
            sim: SimSettings::default(),
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| FosrError::Config(format!("{key}: {v:?} is not a number")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| FosrError::Config(format!("{key}: {v:?} is not a non-negative integer")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(FosrError::Config(format!("{key}: {v:?} is not a boolean"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| parse_f64(key, x.trim())).collect()
}

impl RunConfig {
    /// Parses the flat `key = value` format. Blank lines and lines
    /// starting with `#` are skipped; lists are comma-separated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                FosrError::Config(format!("line {}: expected key = value, got {line:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(FosrError::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.sampler;
        match key {
            "data" => self.data = Some(PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            "prior" | "preset" => self.prior = PriorChoice::parse(v)?,
            "a_w" => self.overrides.a_w = Some(parse_list(key, v)?),
            "b_w" => self.overrides.b_w = Some(parse_list(key, v)?),
            "a_z" => self.overrides.a_z = Some(parse_f64(key, v)?),
            "b_z" => self.overrides.b_z = Some(parse_f64(key, v)?),
            "nu" => self.overrides.nu = Some(parse_f64(key, v)?),
            "nu0" => self.overrides.nu0 = Some(parse_f64(key, v)?),
            "psi0" => self.overrides.psi0 = Some(parse_f64(key, v)?),
            "k" | "K" => self.k = parse_usize(key, v)?,
            "alpha" => self.alpha = parse_f64(key, v)?,
            "t_min" => self.t_min = Some(parse_f64(key, v)?),
            "t_max" => self.t_max = Some(parse_f64(key, v)?),
            "cov_mode" => self.cov_mode = v.parse()?,
            "log_transform" => self.log_transform = parse_bool(key, v)?,
            "n_chains" => s.n_chains = parse_usize(key, v)?,
            "n_iter" => s.n_iter = parse_usize(key, v)?,
            "n_warmup" => s.n_warmup = parse_usize(key, v)?,
            "thin" => s.thin = parse_usize(key, v)?,
            "seed" => {
                s.seed = v.parse().map_err(|_| FosrError::Config(format!("seed: {v:?} is not a u64")))?
            }
            "rho_step" => s.rho_step = parse_f64(key, v)?,
            "adapt" => s.adapt = parse_bool(key, v)?,
            "target_accept" => s.target_accept = parse_f64(key, v)?,
            "score_update" => s.score_update = v.parse()?,
            "progress" => s.progress = parse_bool(key, v)?,
            "pred_times" => self.pred_times = parse_list(key, v)?,
            "level" => self.level = parse_f64(key, v)?,
            "grid_step" => self.grid_step = parse_f64(key, v)?,
            "rope_threshold" => self.rope_threshold = parse_f64(key, v)?,
            "export_csv" => self.export_csv = parse_bool(key, v)?,
            "sim_models" => self.sim.n_models = parse_usize(key, v)?,
            "sim_sigma2" => self.sim.sigma2 = parse_f64(key, v)?,
            "sim_rho" => self.sim.rho = parse_f64(key, v)?,
            "sim_sig2_z" => self.sim.sig2_z = parse_f64(key, v)?,
            other => return Err(FosrError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FosrError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.data {
            if !p.exists() {
                return Err(FosrError::Config(format!("data file {} does not exist", p.display())));
            }
        }
        self.sampler.validate()?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(FosrError::Config(format!("level {} outside (0, 1)", self.level)));
        }
        if !(self.grid_step > 0.0) {
            return Err(FosrError::Config("grid_step must be > 0".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(FosrError::Config(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if self.k < 4 {
            return Err(FosrError::Config(format!("K = {} < 4", self.k)));
        }
        if self.pred_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FosrError::Config("pred_times must be strictly increasing".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(self.hash(), self.sampler.seed)
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| FosrError::Config("no data file configured (key `data`)".into()))
    }

    pub fn basis_for(&self, data: &EnsembleDataset) -> Result<BasisSystem> {
        let t_min = self.t_min.unwrap_or(data.times[0]);
        let t_max = self.t_max.unwrap_or(data.times[data.n_times() - 1]);
        BasisSystem::new(self.k, t_min, t_max, self.alpha)
    }

    /// Preset (or empirical-Bayes) hyperparameters with overrides applied.
    pub fn hyperparams_for(&self, data: &EnsembleDataset, basis: &BasisSystem) -> Result<HyperParams> {
        let mut hp = match &self.prior {
            PriorChoice::Preset(name) => HyperParams::preset(name)?,
            PriorChoice::EmpiricalBayes => {
                let pilot = fit_pilot(data, basis)?;
                eb_hyperparams(&pilot, data, basis)?.apply(&HyperParams::paper_reference())
            }
        };
        let o = &self.overrides;
        if let Some(v) = &o.a_w {
            hp.a_w = v.clone();
        }
        if let Some(v) = &o.b_w {
            hp.b_w = v.clone();
        }
        hp.a_z = o.a_z.unwrap_or(hp.a_z);
        hp.b_z = o.b_z.unwrap_or(hp.b_z);
        hp.nu = o.nu.unwrap_or(hp.nu);
        hp.nu0 = o.nu0.unwrap_or(hp.nu0);
        hp.psi0 = o.psi0.unwrap_or(hp.psi0);
        hp.k = self.k;
        hp.alpha = self.alpha;
        hp.validate(data.n_covariates())?;
        Ok(hp)
    }

    /// Summary grid from the basis start to its end in `grid_step` years.
    pub fn summary_grid(&self, basis: &BasisSystem) -> Vec<f64> {
        let n = ((basis.t_max() - basis.t_min()) / self.grid_step + 1e-9).floor() as usize;
        let mut g: Vec<f64> = (0..=n).map(|i| basis.t_min() + i as f64 * self.grid_step).collect();
        if g.last().is_some_and(|&t| t < basis.t_max() - 1e-9) {
            g.push(basis.t_max());
        }
        g
    }
}

/// Hyperparameters as a config fragment.
pub fn hyperparams_fragment(hp: &HyperParams) -> String {
    let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    format!(
        "a_w = {}\nb_w = {}\na_z = {}\nb_z = {}\n",
        list(&hp.a_w),
        list(&hp.b_w),
        hp.a_z,
        hp.b_z
    )
}

// ------------------------------------------------------------------- draws

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| FosrError::Format(format!("truncated draw file: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(get_u64(r)?))
}

fn get_len(r: &mut impl Read, what: &str) -> Result<usize> {
    let v = get_u64(r)?;
    usize::try_from(v)
        .ok()
        .filter(|&n| n < (1 << 40))
        .ok_or_else(|| FosrError::Format(format!("implausible {what} {v}")))
}

pub fn write_draws_to<W: Write>(w: &mut W, store: &DrawStore, config_sha256: &str) -> Result<()> {
    let n_scalars = store.draws.first().map_or(0, |d| d.n_scalars());
    if config_sha256.len() != 64 || !config_sha256.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(FosrError::Format(format!("config hash {config_sha256:?} is not a SHA-256 hex digest")));
    }
    let mut hash = [0u8; 32];
    for (i, chunk) in config_sha256.as_bytes().chunks(2).enumerate() {
        // validated above
        hash[i] = u8::from_str_radix(std::str::from_utf8(chunk).unwrap(), 16).unwrap();
    }
    w.write_all(MAGIC)?;
    w.write_all(&hash)?;
    for v in [
        store.k,
        store.n_cov,
        store.n_scen,
        store.n_obs,
        store.n_chains,
        store.n_draws(),
    ] {
        put_u64(w, v as u64)?;
    }
    put_u64(w, store.seed)?;
    put_u64(w, store.mode.code())?;
    put_u64(w, n_scalars as u64)?;
    put_u64(w, FORMAT_VERSION)?;
    for (r, d) in store.draws.iter().enumerate() {
        put_u64(w, store.chain_of[r] as u64)?;
        put_u64(w, store.iter_of[r] as u64)?;
        for v in d.to_flat() {
            put_f64(w, v)?;
        }
        for c in 0..store.n_obs {
            put_f64(w, store.loglik[(r, c)])?;
        }
    }
    for c in 0..store.n_chains {
        put_f64(w, store.rho_accept[c])?;
        put_u64(w, store.step_log[c].len() as u64)?;
        for &s in &store.step_log[c] {
            put_f64(w, s)?;
        }
    }
    Ok(())
}

/// Reads a draw file, returning the store and the hex config hash.
pub fn read_draws_from<R: Read>(r: &mut R) -> Result<(DrawStore, String)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| FosrError::Format("draw file too short".into()))?;
    if &magic != MAGIC {
        return Err(FosrError::Format("not a fosr draw file (bad magic)".into()));
    }
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash).map_err(|_| FosrError::Format("truncated header".into()))?;
    let k = get_len(r, "K")?;
    let n_cov = get_len(r, "covariate count")?;
    let n_scen = get_len(r, "scenario count")?;
    let n_obs = get_len(r, "observation count")?;
    let n_chains = get_len(r, "chain count")?;
    let n_draws = get_len(r, "draw count")?;
    let seed = get_u64(r)?;
    let mode = CovMode::from_code(get_u64(r)?)?;
    let n_scalars = get_len(r, "scalar count")?;
    let version = get_u64(r)?;
    if version != FORMAT_VERSION {
        return Err(FosrError::Format(format!("unsupported draw format version {version}")));
    }
    if n_scalars != k * n_cov + k * n_scen + n_cov + 4 {
        return Err(FosrError::Format("scalar count does not match dimensions".into()));
    }
    let mut draws = Vec::with_capacity(n_draws);
    let mut chain_of = Vec::with_capacity(n_draws);
    let mut iter_of = Vec::with_capacity(n_draws);
    let mut ll = Vec::with_capacity(n_draws * n_obs);
    let mut flat = vec![0.0; n_scalars];
    for _ in 0..n_draws {
        let c = get_len(r, "chain index")?;
        if c >= n_chains {
            return Err(FosrError::Format(format!("chain index {c} out of range")));
        }
        chain_of.push(c);
        iter_of.push(get_len(r, "iteration")?);
        for v in flat.iter_mut() {
            *v = get_f64(r)?;
        }
        draws.push(ParamState::from_flat(&flat, k, n_cov, n_scen)?);
        for _ in 0..n_obs {
            ll.push(get_f64(r)?);
        }
    }
    let mut rho_accept = Vec::with_capacity(n_chains);
    let mut step_log = Vec::with_capacity(n_chains);
    for _ in 0..n_chains {
        rho_accept.push(get_f64(r)?);
        let len = get_len(r, "step log length")?;
        step_log.push((0..len).map(|_| get_f64(r)).collect::<Result<Vec<f64>>>()?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(FosrError::Format("trailing bytes after draw file trailer".into()));
    }
    let store = DrawStore {
        k,
        n_cov,
        n_scen,
        n_obs,
        n_chains,
        seed,
        mode,
        draws,
        loglik: DMatrix::from_row_slice(n_draws, n_obs, &ll),
        chain_of,
        iter_of,
        step_log,
        rho_accept,
    };
    Ok((store, hex(&hash)))
}

pub fn write_draws(path: &Path, store: &DrawStore, config_sha256: &str) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    write_draws_to(&mut f, store, config_sha256)?;
    f.flush()?;
    Ok(())
}

pub fn read_draws(path: &Path) -> Result<(DrawStore, String)> {
    let f = File::open(path)
        .map_err(|e| FosrError::Format(format!("cannot open {}: {e}", path.display())))?;
    read_draws_from(&mut BufReader::new(f))
}

/// One row per draw: chain, iteration, every scalar parameter.
pub fn write_draws_csv(path: &Path, store: &DrawStore, prov: &Provenance) -> Result<()> {
    let mut wtr = csv_writer(path, prov)?;
    let mut header = vec!["chain".to_string(), "iter".to_string()];
    header.extend(store.scalar_names());
    wtr.write_record(&header)?;
    for (r, d) in store.draws.iter().enumerate() {
        let mut rec = vec![store.chain_of[r].to_string(), store.iter_of[r].to_string()];
        rec.extend(d.to_flat().iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- reports

/// Long format: `curve_id, label, t, mean, lo, hi`.
pub fn write_curves_csv(
    path: &Path,
    curves: &[crate::posterior::CurveSummary],
    labels: &[String],
    prov: &Provenance,
) -> Result<()> {
    let mut wtr = csv_writer(path, prov)?;
    wtr.write_record(["curve_id", "label", "t", "mean", "lo", "hi"])?;
    for c in curves {
        let label = labels.get(c.index).map_or("", String::as_str);
        for t in 0..c.times.len() {
            wtr.write_record([
                c.id.clone(),
                label.to_string(),
                c.times[t].to_string(),
                c.mean[t].to_string(),
                c.lower[t].to_string(),
                c.upper[t].to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// `curve_id, label, t, delta, pi0, significant`.
pub fn write_rope_csv(
    path: &Path,
    curves: &[crate::posterior::RopeCurve],
    labels: &[String],
    threshold: f64,
    prov: &Provenance,
) -> Result<()> {
    let mut wtr = csv_writer(path, prov)?;
    wtr.write_record(["curve_id", "label", "t", "delta", "pi0", "significant"])?;
    for c in curves {
        let label = labels.get(c.index).map_or("", String::as_str);
        for t in 0..c.times.len() {
            wtr.write_record([
                format!("beta[{}]", c.index),
                label.to_string(),
                c.times[t].to_string(),
                c.delta[t].to_string(),
                c.prob[t].to_string(),
                (c.prob[t] > threshold).to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// `scenario_id, model_id, t, mean, lo, hi`.
pub fn write_krige_csv(
    path: &Path,
    res: &crate::posterior::KrigingResult,
    data: &EnsembleDataset,
    prov: &Provenance,
) -> Result<()> {
    let mut wtr = csv_writer(path, prov)?;
    wtr.write_record(["scenario_id", "model_id", "t", "mean", "lo", "hi"])?;
    for c in &res.curves {
        for (t, time) in res.pred_times.iter().enumerate() {
            wtr.write_record([
                data.scenario_labels[c.scenario].clone(),
                data.model_labels[c.row].clone(),
                time.to_string(),
                c.mean[t].to_string(),
                c.lower[t].to_string(),
                c.upper[t].to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// `param, chain, iter, value` for the selected parameter indices.
pub fn write_trace_csv(path: &Path, store: &DrawStore, params: &[usize], prov: &Provenance) -> Result<()> {
    let names = store.scalar_names();
    let mut wtr = csv_writer(path, prov)?;
    wtr.write_record(["param", "chain", "iter", "value"])?;
    for (r, d) in store.draws.iter().enumerate() {
        let flat = d.to_flat();
        for &p in params {
            wtr.write_record([
                names[p].clone(),
                store.chain_of[r].to_string(),
                store.iter_of[r].to_string(),
                flat[p].to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// `param, lag, acf`.
pub fn write_acf_csv(path: &Path, report: &crate::diagnostics::DiagnosticsReport, prov: &Provenance) -> Result<()> {
    let mut wtr = csv_writer(path, prov)?;
    wtr.write_record(["param", "lag", "acf"])?;
    for p in &report.params {
        for (lag, v) in p.acf.iter().enumerate() {
            wtr.write_record([p.name.clone(), lag.to_string(), v.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// `row, scenario_id, model_id, log_cpo`.
pub fn write_cpo_csv(path: &Path, log_cpo: &[f64], data: &EnsembleDataset, prov: &Provenance) -> Result<()> {
    let mut wtr = csv_writer(path, prov)?;
    wtr.write_record(["row", "scenario_id", "model_id", "log_cpo"])?;
    for (n, v) in log_cpo.iter().enumerate() {
        wtr.write_record([
            n.to_string(),
            data.scenario_labels[data.group_of[n]].clone(),
            data.model_labels[n].clone(),
            v.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
