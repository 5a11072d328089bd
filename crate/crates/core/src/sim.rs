//! Monte-Carlo comparison of WALS and ML fits on simulated NB2 data.
//!
//! Every (scenario, run) pair owns two ChaCha8 streams, one for the
//! training sample and one for the validation sample, addressed by a
//! counter rather than drawn from a shared generator. Results therefore do
//! not depend on how runs are scheduled across threads.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{sample_nb2, Nb2Params};
use crate::ml::{fit_ml, MlOptions};
use crate::scoring::{score_report, PredictiveDistribution, ScoreReport, SIMULATION_TRUNCATION};
use crate::shrinkage::PriorSpec;
use crate::wals::{fit_walsnb_with, WeightRule};

/// Size of the focus coefficient pool.
pub const FOCUS_POOL: usize = 10;
/// Size of the auxiliary coefficient pool.
pub const AUX_POOL: usize = 100;

const STREAM_TRAIN: u64 = 0;
const STREAM_EVAL: u64 = 1;
const STREAM_POOL: u64 = u64::MAX;

/// Coefficients shared by every scenario of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPool {
    pub beta1_pool: Vec<f64>,
    pub beta2_pool: Vec<f64>,
    pub offset: f64,
}

/// Draw the coefficient pools: focus entries are equally likely to come
/// from U(−0.25, −0.1) or U(0.1, 0.25), auxiliary entries from
/// U(−0.01, 0.01).
pub fn generate_pools(seed: u64) -> CoefficientPool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_POOL);
    let beta1_pool = (0..FOCUS_POOL)
        .map(|_| {
            let magnitude = rng.random_range(0.1..=0.25);
            if rng.random_bool(0.5) {
                magnitude
            } else {
                -magnitude
            }
        })
        .collect();
    let beta2_pool = (0..AUX_POOL).map(|_| rng.random_range(-0.01..=0.01)).collect();
    CoefficientPool { beta1_pool, beta2_pool, offset: 3f64.ln() }
}

/// n draws from N(0, Σ) with unit variances and common correlation b,
/// using x = √b·z₀·1 + √(1−b)·z.
pub fn sample_design<R: Rng + ?Sized>(n: usize, k: usize, b: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&b) {
        return Err(Error::Domain(format!("correlation b must lie in [0, 1), got {b}")));
    }
    let (sb, sr) = (b.sqrt(), (1.0 - b).sqrt());
    let mut x = DMatrix::zeros(n, k);
    for i in 0..n {
        let z0: f64 = rng.sample(StandardNormal);
        for j in 0..k {
            let z: f64 = rng.sample(StandardNormal);
            x[(i, j)] = sb * z0 + sr * z;
        }
    }
    Ok(x)
}

/// NB2 counts with means exp(Xβ).
pub fn simulate_response<R: Rng + ?Sized>(x: &DMatrix<f64>, beta: &DVector<f64>, rho: f64, rng: &mut R) -> Result<Vec<u64>> {
    if x.ncols() != beta.len() {
        return Err(Error::DimensionMismatch(format!("{} columns, {} coefficients", x.ncols(), beta.len())));
    }
    (x * beta).iter().map(|eta| sample_nb2(eta.exp(), rho, rng)).collect()
}

/// The procedures compared in the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Procedure {
    /// WALS with the constant and the true focus regressors as focus.
    #[serde(rename = "walsNB-dgp")]
    WalsDgp,
    /// WALS with only the constant as focus.
    #[serde(rename = "walsNB-aux")]
    WalsAux,
    /// ML on all regressors.
    #[serde(rename = "ML-U")]
    MlU,
    /// ML on the constant and the focus regressors.
    #[serde(rename = "ML-focus")]
    MlFocus,
    /// ML on the constant and the auxiliary regressors.
    #[serde(rename = "ML-AC")]
    MlAc,
    /// The true data-generating law, no fitting.
    #[serde(rename = "oracle")]
    Oracle,
}

impl Procedure {
    pub const ALL: [Procedure; 6] =
        [Procedure::WalsDgp, Procedure::WalsAux, Procedure::MlU, Procedure::MlFocus, Procedure::MlAc, Procedure::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Procedure::WalsDgp => "walsNB-dgp",
            Procedure::WalsAux => "walsNB-aux",
            Procedure::MlU => "ML-U",
            Procedure::MlFocus => "ML-focus",
            Procedure::MlAc => "ML-AC",
            Procedure::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Procedure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Procedure::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown procedure '{s}'")))
    }
}

/// One cell of the simulation design, fully resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n: usize,
    pub k1: usize,
    pub k2: usize,
    pub rho: f64,
    pub b: f64,
    pub n_eval: usize,
    pub runs: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=FOCUS_POOL).contains(&self.k1) {
            return bad(format!("k1 must be in 1..={FOCUS_POOL}, got {}", self.k1));
        }
        if !(1..=AUX_POOL).contains(&self.k2) {
            return bad(format!("k2 must be in 1..={AUX_POOL}, got {}", self.k2));
        }
        if !(0.0..1.0).contains(&self.b) {
            return bad(format!("b must be in [0, 1), got {}", self.b));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if self.n < self.k1 + self.k2 + 2 {
            return bad(format!("n = {} is too small for k1 + k2 = {}", self.n, self.k1 + self.k2));
        }
        if self.n_eval == 0 || self.runs == 0 {
            return bad("n_eval and runs must be positive".into());
        }
        Ok(())
    }
}

fn default_runs() -> usize {
    300
}
fn default_n_eval() -> usize {
    4000
}
fn default_truncation() -> u64 {
    SIMULATION_TRUNCATION
}
fn default_procedures() -> Vec<Procedure> {
    Procedure::ALL.to_vec()
}
fn default_prior() -> PriorSpec {
    PriorSpec::weibull_default()
}

/// Scenario entry as written in a config file; unset fields inherit the
/// experiment-level defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEntry {
    pub n: usize,
    pub k1: usize,
    pub k2: usize,
    pub rho: f64,
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_eval: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Cartesian product specification of scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: Vec<usize>,
    pub k1: Vec<usize>,
    pub k2: Vec<usize>,
    pub rho: Vec<f64>,
    pub b: Vec<f64>,
}

impl GridSpec {
    /// n ∈ {500, 1000, 2000, 4000}, k₁ ∈ {1, 5, 10}, k₂ ∈ {1, 5, 10, 20, 50, 100},
    /// ρ ∈ {0.5, 1, 2}, b ∈ {0, 0.5, 0.9}.
    pub fn reconstructed_default() -> Self {
        Self {
            n: vec![500, 1000, 2000, 4000],
            k1: vec![1, 5, 10],
            k2: vec![1, 5, 10, 20, 50, 100],
            rho: vec![0.5, 1.0, 2.0],
            b: vec![0.0, 0.5, 0.9],
        }
    }

    fn entries(&self) -> Vec<ScenarioEntry> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &k1 in &self.k1 {
                for &k2 in &self.k2 {
                    for &rho in &self.rho {
                        for &b in &self.b {
                            out.push(ScenarioEntry { n, k1, k2, rho, b, n_eval: None, runs: None, seed: None });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Simulation experiment as read from a TOML file.
///
/// ```toml
/// seed = 1
/// runs = 50
/// procedures = ["walsNB-aux", "ML-U", "oracle"]
///
/// [[scenario]]
/// n = 500
/// k1 = 1
/// k2 = 100
/// rho = 1.0
/// b = 0.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Master seed: drives the coefficient pools and, unless a scenario
    /// sets its own, every scenario's streams.
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    #[serde(default = "default_truncation")]
    pub truncation: u64,
    #[serde(default = "default_procedures")]
    pub procedures: Vec<Procedure>,
    #[serde(default = "default_prior")]
    pub prior: PriorSpec,
    /// Record wall-clock fit times. Off by default because timings break
    /// byte-for-byte reproducibility of the results file.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub ml: MlOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, rename = "scenario", skip_serializing_if = "Vec::is_empty")]
    pub scenarios: Vec<ScenarioEntry>,
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// The desk-scale preset: one sparse scenario, 50 runs.
    pub fn desk_preset(seed: u64) -> Self {
        Self {
            seed,
            runs: 50,
            n_eval: default_n_eval(),
            truncation: default_truncation(),
            procedures: default_procedures(),
            prior: default_prior(),
            record_timing: false,
            ml: MlOptions::default(),
            grid: None,
            scenarios: vec![ScenarioEntry { n: 500, k1: 1, k2: 100, rho: 1.0, b: 0.0, n_eval: None, runs: None, seed: None }],
        }
    }

    /// Expand the grid and fill defaults; every returned scenario is
    /// validated, so a bad entry is rejected before anything runs.
    pub fn resolve(&self) -> Result<Vec<Scenario>> {
        if self.procedures.is_empty() {
            return Err(Error::Config("no procedures selected".into()));
        }
        self.prior.validate().map_err(|e| Error::Config(e.to_string()))?;
        let mut entries = self.grid.as_ref().map(GridSpec::entries).unwrap_or_default();
        entries.extend(self.scenarios.iter().cloned());
        if entries.is_empty() {
            return Err(Error::Config("no scenarios given".into()));
        }
        entries
            .into_iter()
            .map(|e| {
                let s = Scenario {
                    n: e.n,
                    k1: e.k1,
                    k2: e.k2,
                    rho: e.rho,
                    b: e.b,
                    n_eval: e.n_eval.unwrap_or(self.n_eval),
                    runs: e.runs.unwrap_or(self.runs),
                    seed: e.seed.unwrap_or(self.seed),
                };
                s.validate()?;
                Ok(s)
            })
            .collect()
    }

    /// Equivalent config with every scenario written out explicitly.
    pub fn resolved(&self) -> Result<Self> {
        let scenarios = self
            .resolve()?
            .into_iter()
            .map(|s| ScenarioEntry {
                n: s.n,
                k1: s.k1,
                k2: s.k2,
                rho: s.rho,
                b: s.b,
                n_eval: Some(s.n_eval),
                runs: Some(s.runs),
                seed: Some(s.seed),
            })
            .collect();
        Ok(Self { grid: None, scenarios, ..self.clone() })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Outcome of one procedure on one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub scenario_id: usize,
    pub run: usize,
    pub procedure: Procedure,
    pub converged: bool,
    pub metrics: Option<ScoreReport>,
    pub fit_millis: Option<f64>,
    pub failure: Option<String>,
}

fn run_rng(seed: u64, scenario: &Scenario, run: usize, purpose: u64) -> ChaCha8Rng {
    // The stream id mixes the scenario parameters, so the same scenario gets
    // the same data wherever it sits in a grid.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |v: u64| {
        for byte in v.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for v in [scenario.n as u64, scenario.k1 as u64, scenario.k2 as u64, scenario.rho.to_bits(), scenario.b.to_bits()] {
        mix(v);
    }
    mix(scenario.n_eval as u64);
    mix(run as u64);
    mix(purpose);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}

/// Training or validation sample for one run: x = [x₁ x₂] and counts.
#[derive(Debug, Clone)]
pub struct SimSample {
    pub x: DMatrix<f64>,
    pub y: Vec<u64>,
    pub mu: Vec<f64>,
}

fn true_coefficients(pool: &CoefficientPool, scenario: &Scenario) -> DVector<f64> {
    let mut beta = DVector::zeros(scenario.k1 + scenario.k2);
    for j in 0..scenario.k1 {
        beta[j] = pool.beta1_pool[j];
    }
    for m in 0..scenario.k2 {
        beta[scenario.k1 + m] = pool.beta2_pool[m];
    }
    beta
}

pub fn draw_sample(pool: &CoefficientPool, scenario: &Scenario, n: usize, rng: &mut ChaCha8Rng) -> Result<SimSample> {
    let x = sample_design(n, scenario.k1 + scenario.k2, scenario.b, rng)?;
    let beta = true_coefficients(pool, scenario);
    let eta = (&x * beta).add_scalar(pool.offset);
    let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let y = mu.iter().map(|&m| sample_nb2(m, scenario.rho, rng)).collect::<Result<_>>()?;
    Ok(SimSample { x, y, mu })
}

/// The (training, validation) pair of one run.
pub fn run_samples(pool: &CoefficientPool, scenario: &Scenario, run: usize) -> Result<(SimSample, SimSample)> {
    let train = draw_sample(pool, scenario, scenario.n, &mut run_rng(scenario.seed, scenario, run, STREAM_TRAIN))?;
    let eval = draw_sample(pool, scenario, scenario.n_eval, &mut run_rng(scenario.seed, scenario, run, STREAM_EVAL))?;
    Ok((train, eval))
}

fn with_intercept(cols: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = cols[0].nrows();
    let k: usize = cols.iter().map(|c| c.ncols()).sum();
    let mut out = DMatrix::from_element(n, k + 1, 1.0);
    let mut at = 1;
    for c in cols {
        out.columns_mut(at, c.ncols()).copy_from(*c);
        at += c.ncols();
    }
    out
}

struct Designs {
    /// [1 x₁]
    focus: DMatrix<f64>,
    x2: DMatrix<f64>,
    /// [1 x₁ x₂]
    full: DMatrix<f64>,
    /// [1 x₂]
    aux: DMatrix<f64>,
    ones: DMatrix<f64>,
}

impl Designs {
    fn new(x: &DMatrix<f64>, k1: usize, k2: usize) -> Self {
        let x1 = x.columns(0, k1).clone_owned();
        let x2 = x.columns(k1, k2).clone_owned();
        Self {
            focus: with_intercept(&[&x1]),
            full: with_intercept(&[&x1, &x2]),
            aux: with_intercept(&[&x2]),
            ones: DMatrix::from_element(x.nrows(), 1, 1.0),
            x2,
        }
    }
}

struct Fitted {
    params: Nb2Params,
    millis: f64,
}

fn time<T>(f: impl FnOnce() -> Result<T>) -> (Result<T>, f64) {
    let t0 = Instant::now();
    let out = f();
    (out, t0.elapsed().as_secs_f64() * 1e3)
}

fn ml_on(y: &[u64], x1: DMatrix<f64>, x2: DMatrix<f64>, options: &MlOptions) -> Result<Fitted> {
    let (fit, millis) = time(|| {
        let data = Dataset::new(y.to_vec(), x1, x2)?;
        fit_ml(&data, options)?.require_converged()
    });
    Ok(Fitted { params: fit?.params, millis })
}

fn score_params(params: &Nb2Params, x_eval: &DMatrix<f64>, y_eval: &[u64], truncation: u64) -> Result<ScoreReport> {
    let preds = crate::scoring::predictive_distributions(params, x_eval)?;
    score_report(&preds, y_eval, truncation)
}

/// Fit and score every requested procedure on one run.
pub fn run_once(
    config: &SimConfig,
    pool: &CoefficientPool,
    scenario: &Scenario,
    scenario_id: usize,
    run: usize,
) -> Vec<RunResult> {
    let mut procs = config.procedures.clone();
    procs.sort();
    procs.dedup();
    let record = |procedure, outcome: Result<(ScoreReport, f64)>| match outcome {
        Ok((metrics, millis)) => RunResult {
            scenario_id,
            run,
            procedure,
            converged: true,
            metrics: Some(metrics),
            fit_millis: config.record_timing.then_some(millis),
            failure: None,
        },
        Err(e) => RunResult {
            scenario_id,
            run,
            procedure,
            converged: false,
            metrics: None,
            fit_millis: None,
            failure: Some(e.to_string()),
        },
    };
    let (train, eval) = match run_samples(pool, scenario, run) {
        Ok(s) => s,
        Err(e) => return procs.into_iter().map(|p| record(p, Err(e.clone()))).collect(),
    };
    let (k1, k2) = (scenario.k1, scenario.k2);
    let tr = Designs::new(&train.x, k1, k2);
    let ev = Designs::new(&eval.x, k1, k2);
    let trunc = config.truncation;
    let y = &train.y;

    let needs_start = procs.iter().any(|p| matches!(p, Procedure::MlU | Procedure::WalsDgp | Procedure::WalsAux));
    let ml_u = needs_start.then(|| ml_on(y, tr.focus.clone(), tr.x2.clone(), &config.ml));
    let rule = WeightRule::Prior(config.prior);

    procs
        .into_iter()
        .map(|p| {
            let outcome = match p {
                Procedure::Oracle => eval
                    .mu
                    .iter()
                    .map(|&m| PredictiveDistribution::new(m, scenario.rho))
                    .collect::<Result<Vec<_>>>()
                    .and_then(|preds| score_report(&preds, &eval.y, trunc))
                    .map(|r| (r, 0.0)),
                Procedure::MlU => ml_u
                    .as_ref()
                    .expect("start fit computed")
                    .clone_result()
                    .and_then(|f| Ok((score_params(&f.params, &ev.full, &eval.y, trunc)?, f.millis))),
                Procedure::MlFocus => ml_on(y, tr.focus.clone(), DMatrix::zeros(scenario.n, 0), &config.ml)
                    .and_then(|f| Ok((score_params(&f.params, &ev.focus, &eval.y, trunc)?, f.millis))),
                Procedure::MlAc => ml_on(y, tr.aux.clone(), DMatrix::zeros(scenario.n, 0), &config.ml)
                    .and_then(|f| Ok((score_params(&f.params, &ev.aux, &eval.y, trunc)?, f.millis))),
                Procedure::WalsDgp | Procedure::WalsAux => {
                    let start = ml_u.as_ref().expect("start fit computed").clone_result();
                    start.and_then(|start| {
                        let (x1, x2) = if p == Procedure::WalsDgp {
                            (tr.focus.clone(), tr.x2.clone())
                        } else {
                            (tr.ones.clone(), tr.full.columns(1, k1 + k2).clone_owned())
                        };
                        let (fit, millis) = time(|| {
                            let data = Dataset::new(y.clone(), x1, x2)?;
                            fit_walsnb_with(&data, &rule, &start.params)
                        });
                        let fit = fit?;
                        Ok((score_params(&fit.params(), &ev.full, &eval.y, trunc)?, millis + start.millis))
                    })
                }
            };
            record(p, outcome)
        })
        .collect()
}

trait CloneResult {
    fn clone_result(&self) -> Result<Fitted>;
}

impl CloneResult for Result<Fitted> {
    fn clone_result(&self) -> Result<Fitted> {
        match self {
            Ok(f) => Ok(Fitted { params: f.params.clone(), millis: f.millis }),
            Err(e) => Err(e.clone()),
        }
    }
}

/// All runs of all scenarios, ordered by (scenario, run, procedure).
/// Runs execute in parallel on the current rayon pool.
pub fn run_experiment(config: &SimConfig) -> Result<Vec<RunResult>> {
    let scenarios = config.resolve()?;
    let pool = generate_pools(config.seed);
    let jobs: Vec<(usize, usize)> =
        scenarios.iter().enumerate().flat_map(|(id, s)| (0..s.runs).map(move |r| (id, r))).collect();
    let nested: Vec<Vec<RunResult>> =
        jobs.par_iter().map(|&(id, run)| run_once(config, &pool, &scenarios[id], id, run)).collect();
    Ok(nested.into_iter().flatten().collect())
}

/// Results of a single scenario.
pub fn run_scenario(config: &SimConfig, scenario: &Scenario, pool: &CoefficientPool) -> Result<Vec<RunResult>> {
    scenario.validate()?;
    let nested: Vec<Vec<RunResult>> =
        (0..scenario.runs).into_par_iter().map(|run| run_once(config, pool, scenario, 0, run)).collect();
    Ok(nested.into_iter().flatten().collect())
}

/// Mean and interquartile range of one metric over successful runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Aggregate for one (scenario, procedure) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario_id: usize,
    pub procedure: Procedure,
    pub successes: usize,
    pub failures: usize,
    pub rmse: Option<MetricSummary>,
    pub log: Option<MetricSummary>,
    pub brier: Option<MetricSummary>,
    pub spherical: Option<MetricSummary>,
}

/// Linear-interpolation sample quantile (the usual "type 7" definition).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize_metric(values: &mut [f64]) -> Option<MetricSummary> {
    if values.is_empty() {
        return None;
    }
    let mean = crate::sum::mean(values)?;
    values.sort_by(f64::total_cmp);
    Some(MetricSummary { mean, q25: quantile(values, 0.25), q75: quantile(values, 0.75) })
}

/// Means and quartiles per (scenario, procedure), excluding failed runs.
pub fn summarize(results: &[RunResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, Procedure)> = results.iter().map(|r| (r.scenario_id, r.procedure)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(sid, proc)| {
            let cell: Vec<&RunResult> =
                results.iter().filter(|r| r.scenario_id == sid && r.procedure == proc).collect();
            let ok: Vec<&ScoreReport> = cell.iter().filter_map(|r| r.metrics.as_ref()).collect();
            let pick = |f: fn(&ScoreReport) -> f64| summarize_metric(&mut ok.iter().map(|m| f(m)).collect::<Vec<_>>());
            SummaryRow {
                scenario_id: sid,
                procedure: proc,
                successes: ok.len(),
                failures: cell.len() - ok.len(),
                rmse: pick(|m| m.rmse),
                log: pick(|m| m.log_score),
                brier: pick(|m| m.brier_score),
                spherical: pick(|m| m.spherical_score),
            }
        })
        .collect()
}

/// Token written for absent values.
pub const MISSING: &str = "NA";

/// Round-trip-safe representation with 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_else(|| MISSING.to_string())
}

/// Comment lines identifying the tool and the full resolved config.
pub fn provenance_header(tool_version: &str, config_toml: &str) -> String {
    let mut out = format!("# walsnb {tool_version}\n# config:\n");
    for line in config_toml.lines() {
        out.push_str("#   ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// Recover the embedded config text from a file written with
/// [`provenance_header`].
pub fn extract_embedded_config(text: &str) -> Option<String> {
    let mut lines = text.lines().skip_while(|l| *l != "# config:");
    lines.next()?;
    let body: Vec<&str> = lines.map_while(|l| l.strip_prefix("#   ")).collect();
    Some(body.join("\n") + "\n")
}

pub const RESULT_COLUMNS: [&str; 9] =
    ["scenario_id", "run", "procedure", "converged", "rmse", "log", "brier", "spherical", "fit_millis"];

/// Long-format results table.
pub fn write_results<W: Write>(out: &mut W, header: &str, results: &[RunResult]) -> Result<()> {
    out.write_all(header.as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for r in results {
        let m = r.metrics.as_ref();
        w.write_record([
            r.scenario_id.to_string(),
            r.run.to_string(),
            r.procedure.name().to_string(),
            r.converged.to_string(),
            fmt_opt(m.map(|m| m.rmse)),
            fmt_opt(m.map(|m| m.log_score)),
            fmt_opt(m.map(|m| m.brier_score)),
            fmt_opt(m.map(|m| m.spherical_score)),
            fmt_opt(r.fit_millis),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Aggregated table: one row per (scenario, procedure) with scenario
/// parameters, success/failure counts and mean/q25/q75 per metric.
pub fn write_summary<W: Write>(out: &mut W, header: &str, scenarios: &[Scenario], rows: &[SummaryRow]) -> Result<()> {
    out.write_all(header.as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    let mut cols: Vec<String> = ["scenario_id", "n", "k1", "k2", "rho", "b", "procedure", "successes", "failures"]
        .map(String::from)
        .to_vec();
    for m in ["rmse", "log", "brier", "spherical"] {
        for s in ["mean", "q25", "q75"] {
            cols.push(format!("{m}_{s}"));
        }
    }
    w.write_record(&cols)?;
    for r in rows {
        let s = &scenarios[r.scenario_id];
        let mut rec = vec![
            r.scenario_id.to_string(),
            s.n.to_string(),
            s.k1.to_string(),
            s.k2.to_string(),
            fmt_num(s.rho),
            fmt_num(s.b),
            r.procedure.name().to_string(),
            r.successes.to_string(),
            r.failures.to_string(),
        ];
        for m in [r.rmse, r.log, r.brier, r.spherical] {
            rec.push(fmt_opt(m.map(|v| v.mean)));
            rec.push(fmt_opt(m.map(|v| v.q25)));
            rec.push(fmt_opt(m.map(|v| v.q75)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_opt(field: &str, row: usize, column: &str) -> Result<Option<f64>> {
    if field == MISSING {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| Error::Parse { row, column: column.into(), message: format!("not a number: '{field}'") })
}

/// Parse a results table written by [`write_results`].
pub fn read_results(text: &str) -> Result<Vec<RunResult>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(RESULT_COLUMNS.iter().copied()) {
        return Err(Error::Config(format!("unexpected results header {headers:?}")));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let int = |j: usize| {
            rec[j].parse::<usize>().map_err(|_| Error::Parse {
                row,
                column: RESULT_COLUMNS[j].into(),
                message: format!("not an integer: '{}'", &rec[j]),
            })
        };
        let converged = match &rec[3] {
            "true" => true,
            "false" => false,
            other => return Err(Error::Parse { row, column: "converged".into(), message: format!("'{other}'") }),
        };
        let vals: Vec<Option<f64>> =
            (4..8).map(|j| parse_opt(&rec[j], row, RESULT_COLUMNS[j])).collect::<Result<_>>()?;
        let metrics = match (vals[0], vals[1], vals[2], vals[3]) {
            (Some(rmse), Some(log_score), Some(brier_score), Some(spherical_score)) => {
                Some(ScoreReport { rmse, log_score, brier_score, spherical_score, truncation: 0 })
            }
            _ => None,
        };
        out.push(RunResult {
            scenario_id: int(0)?,
            run: int(1)?,
            procedure: rec[2].parse()?,
            converged,
            metrics,
            fit_millis: parse_opt(&rec[8], row, "fit_millis")?,
            failure: None,
        });
    }
    Ok(out)
}
