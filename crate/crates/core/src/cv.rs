//! K-fold cross-validated learning curves on user-supplied count data.
//!
//! Observations are permuted once and cut into K contiguous folds. For fold
//! k the training pool is the permuted order with fold k removed; a training
//! set of size t is the first t entries of that pool, so training sets for
//! increasing t are nested while every validation fold stays fixed.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ml::{fit_ml, MlOptions};
use crate::scoring::{predictive_distributions, score_report, ScoreReport};
use crate::shrinkage::PriorSpec;
use crate::sim::{fmt_num, MISSING};
use crate::wals::{fit_walsnb_with, WeightRule};

/// Default number of folds.
pub const DEFAULT_FOLDS: usize = 10;

/// Assignment of observations to folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    /// Fold index (0-based) of every observation.
    pub assignments: Vec<usize>,
    pub k: usize,
    pub seed: u64,
    /// The random permutation the folds were cut from.
    pub order: Vec<usize>,
}

/// Permute 0..n with a seeded ChaCha8 generator and cut the permutation into
/// K contiguous blocks. When K does not divide n the first n mod K blocks
/// hold one extra observation, so sizes differ by at most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || n < k {
        return Err(Error::Domain(format!("need K >= 2 and n >= K, got n = {n}, K = {k}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut assignments = vec![0; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &obs in &order[pos..pos + size] {
            assignments[obs] = fold;
        }
        pos += size;
    }
    Ok(FoldPlan { assignments, k, seed, order })
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }

    /// Observations in fold `k`, in permutation order.
    pub fn validation(&self, k: usize) -> Vec<usize> {
        self.order.iter().copied().filter(|&i| self.assignments[i] == k).collect()
    }

    /// Training pool for fold `k`, in permutation order.
    pub fn training_pool(&self, k: usize) -> Vec<usize> {
        self.order.iter().copied().filter(|&i| self.assignments[i] != k).collect()
    }

    /// The first `t` observations of the training pool for fold `k`.
    pub fn training(&self, k: usize, t: usize) -> Result<Vec<usize>> {
        let pool = self.training_pool(k);
        if t > pool.len() {
            return Err(Error::Domain(format!("training size {t} exceeds the pool of {}", pool.len())));
        }
        Ok(pool[..t].to_vec())
    }

    /// Largest admissible training size, n minus the largest fold.
    pub fn t_max(&self) -> usize {
        self.n() - self.fold_sizes().into_iter().max().unwrap_or(0)
    }
}

/// Declared type of a CSV column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnType {
    /// "count", "real"
    Simple(SimpleType),
    /// Two-level factor coded 0 for the first level and 1 for the second.
    Binary { levels: [String; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimpleType {
    Count,
    Real,
}

/// Column name to type. Columns absent from the schema are ignored.
pub type TableSchema = BTreeMap<String, ColumnType>;

/// Typed numeric columns read from a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    columns: BTreeMap<String, Vec<f64>>,
    n_rows: usize,
}

impl RawTable {
    pub fn from_columns(columns: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let n_rows = columns.values().next().map_or(0, Vec::len);
        if columns.values().any(|c| c.len() != n_rows) {
            return Err(Error::DimensionMismatch("columns have different lengths".into()));
        }
        Ok(Self { columns, n_rows })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns.get(name).map(Vec::as_slice).ok_or_else(|| Error::MissingColumn(name.into()))
    }

    /// Largest value in a column.
    pub fn max(&self, name: &str) -> Result<f64> {
        Ok(self.column(name)?.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }
}

fn parse_cell(raw: &str, ty: &ColumnType, row: usize, column: &str) -> Result<f64> {
    let err = |message: String| Error::Parse { row, column: column.into(), message };
    let cell = raw.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
        return Err(err("missing value".into()));
    }
    match ty {
        ColumnType::Simple(SimpleType::Real) => {
            let v: f64 = cell.parse().map_err(|_| err(format!("not a number: '{cell}'")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite value '{cell}'")));
            }
            Ok(v)
        }
        ColumnType::Simple(SimpleType::Count) => {
            let v: u64 = cell.parse().map_err(|_| err(format!("not a non-negative integer: '{cell}'")))?;
            Ok(v as f64)
        }
        ColumnType::Binary { levels } => levels
            .iter()
            .position(|l| l == cell)
            .map(|p| p as f64)
            .ok_or_else(|| err(format!("'{cell}' is not one of {levels:?}"))),
    }
}

/// Read the schema columns of a headed CSV. Errors carry the 1-based data
/// row and the column name.
pub fn ingest_csv(path: &Path, schema: &TableSchema) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ingest_reader(file, schema)
}

pub fn ingest_reader<R: Read>(reader: R, schema: &TableSchema) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut positions = Vec::new();
    for (name, ty) in schema {
        let pos = headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.clone()))?;
        positions.push((name.clone(), ty.clone(), pos));
    }
    let mut columns: BTreeMap<String, Vec<f64>> = schema.keys().map(|k| (k.clone(), Vec::new())).collect();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (name, ty, pos) in &positions {
            let raw = rec.get(*pos).unwrap_or("");
            let v = parse_cell(raw, ty, i + 1, name)?;
            columns.get_mut(name).expect("schema column").push(v);
        }
    }
    RawTable::from_columns(columns)
}

/// A design term: a column, a product of columns written `a:b`, or an
/// integer power written `a^2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Column(String),
    Product(Vec<String>),
    Power(String, u32),
}

impl Term {
    pub fn parse(spec: &str) -> Result<Self> {
        let s = spec.trim();
        if let Some((base, exp)) = s.split_once('^') {
            let p: u32 = exp.trim().parse().map_err(|_| Error::Config(format!("bad exponent in term '{s}'")))?;
            if p == 0 {
                return Err(Error::Config(format!("zero exponent in term '{s}'")));
            }
            return Ok(Term::Power(base.trim().to_string(), p));
        }
        if s.contains(':') {
            let parts: Vec<String> = s.split(':').map(|p| p.trim().to_string()).collect();
            if parts.iter().any(String::is_empty) {
                return Err(Error::Config(format!("empty factor in term '{s}'")));
            }
            return Ok(Term::Product(parts));
        }
        if s.is_empty() {
            return Err(Error::Config("empty term".into()));
        }
        Ok(Term::Column(s.to_string()))
    }

    pub fn evaluate(&self, table: &RawTable) -> Result<Vec<f64>> {
        match self {
            Term::Column(c) => Ok(table.column(c)?.to_vec()),
            Term::Power(c, p) => Ok(table.column(c)?.iter().map(|v| v.powi(*p as i32)).collect()),
            Term::Product(cs) => {
                let mut out = vec![1.0; table.n_rows()];
                for c in cs {
                    for (o, v) in out.iter_mut().zip(table.column(c)?) {
                        *o *= v;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Column name of the constant.
pub const INTERCEPT: &str = "(Intercept)";

/// Regression design: which terms enter as focus and which as auxiliary
/// regressors. The constant, when present, is always the first focus column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub response: String,
    #[serde(default = "yes")]
    pub intercept: bool,
    #[serde(default)]
    pub focus: Vec<String>,
    #[serde(default)]
    pub auxiliary: Vec<String>,
}

fn yes() -> bool {
    true
}

fn matrix_from_columns(cols: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// Assemble X₁ and X₂ from `table` in the declared order.
pub fn build_design(table: &RawTable, spec: &DesignSpec) -> Result<Dataset> {
    let n = table.n_rows();
    let y = table
        .column(&spec.response)?
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as u64)
            } else {
                Err(Error::Parse { row: i + 1, column: spec.response.clone(), message: format!("{v} is not a count") })
            }
        })
        .collect::<Result<Vec<u64>>>()?;
    let mut focus_cols = Vec::new();
    let mut focus_names = Vec::new();
    if spec.intercept {
        focus_cols.push(vec![1.0; n]);
        focus_names.push(INTERCEPT.to_string());
    }
    for t in &spec.focus {
        focus_cols.push(Term::parse(t)?.evaluate(table)?);
        focus_names.push(t.trim().to_string());
    }
    let mut aux_cols = Vec::new();
    for t in &spec.auxiliary {
        aux_cols.push(Term::parse(t)?.evaluate(table)?);
    }
    let aux_names = spec.auxiliary.iter().map(|t| t.trim().to_string()).collect();
    let mut seen = std::collections::BTreeSet::new();
    for name in focus_names.iter().chain(spec.auxiliary.iter()) {
        if !seen.insert(name.trim()) {
            return Err(Error::Config(format!("term '{name}' appears twice")));
        }
    }
    Dataset::with_names(y, matrix_from_columns(&focus_cols, n), matrix_from_columns(&aux_cols, n), focus_names, aux_names)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Maximum likelihood on all design columns.
    Ml,
    /// WALS started from the ML fit on all design columns.
    Wals,
}

/// A named estimator and design, e.g. "walsNB-int".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvProcedure {
    pub name: String,
    pub estimator: Estimator,
    #[serde(default = "yes")]
    pub intercept: bool,
    #[serde(default)]
    pub focus: Vec<String>,
    #[serde(default)]
    pub auxiliary: Vec<String>,
}

impl CvProcedure {
    pub fn design(&self, response: &str) -> DesignSpec {
        DesignSpec {
            response: response.to_string(),
            intercept: self.intercept,
            focus: self.focus.clone(),
            auxiliary: self.auxiliary.clone(),
        }
    }
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}
fn default_cv_prior() -> PriorSpec {
    PriorSpec::laplace_default()
}

/// Learning-curve experiment as read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    /// Path of the CSV file, relative to the working directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    pub seed: u64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Training sizes t₁ < … < t_L. Empty means the single size t_max.
    #[serde(default)]
    pub grid: Vec<usize>,
    /// Truncation for Brier and spherical scores; defaults to the largest
    /// observed count in the full data set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<u64>,
    #[serde(default = "default_cv_prior")]
    pub prior: PriorSpec,
    #[serde(default)]
    pub ml: MlOptions,
    pub response: String,
    pub columns: TableSchema,
    #[serde(rename = "procedure")]
    pub procedures: Vec<CvProcedure>,
}

impl CvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.procedures.is_empty() {
            return Err(Error::Config("no procedures".into()));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) || self.grid.first() == Some(&0) {
            return Err(Error::Config("grid must be strictly increasing and positive".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for p in &self.procedures {
            if !names.insert(&p.name) {
                return Err(Error::Config(format!("procedure '{}' defined twice", p.name)));
            }
        }
        self.prior.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Outcome of one (training size, procedure, fold) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CvCell {
    pub metrics: Option<ScoreReport>,
    pub failure: Option<String>,
}

/// Fold metrics for every grid point and procedure plus their fold means.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub grid: Vec<usize>,
    pub procedures: Vec<String>,
    pub k: usize,
    pub truncation: u64,
    /// values[l][m][k]
    pub values: Vec<Vec<Vec<CvCell>>>,
}

/// Fold means of one (t, procedure) pair, ignoring failed folds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvMean {
    pub successes: usize,
    pub failures: usize,
    pub rmse: Option<f64>,
    pub log: Option<f64>,
    pub brier: Option<f64>,
    pub spherical: Option<f64>,
}

impl LearningCurve {
    pub fn cv_mean(&self, l: usize, m: usize) -> CvMean {
        let ok: Vec<&ScoreReport> = self.values[l][m].iter().filter_map(|c| c.metrics.as_ref()).collect();
        let avg = |f: fn(&ScoreReport) -> f64| {
            (!ok.is_empty()).then(|| ok.iter().map(|r| f(r)).collect::<crate::sum::KahanSum>().value() / ok.len() as f64)
        };
        CvMean {
            successes: ok.len(),
            failures: self.values[l][m].len() - ok.len(),
            rmse: avg(|r| r.rmse),
            log: avg(|r| r.log_score),
            brier: avg(|r| r.brier_score),
            spherical: avg(|r| r.spherical_score),
        }
    }

    pub fn procedure_index(&self, name: &str) -> Option<usize> {
        self.procedures.iter().position(|p| p == name)
    }

    pub fn any_success(&self) -> bool {
        self.values.iter().flatten().flatten().any(|c| c.metrics.is_some())
    }
}

fn fit_and_score(
    proc_: &CvProcedure,
    data: &Dataset,
    train: &[usize],
    valid: &[usize],
    config: &CvConfig,
    truncation: u64,
) -> Result<ScoreReport> {
    let train_data = data.select_rows(train)?;
    let ml = fit_ml(&train_data, &config.ml)?.require_converged()?;
    let params = match proc_.estimator {
        Estimator::Ml => ml.params,
        Estimator::Wals => fit_walsnb_with(&train_data, &WeightRule::Prior(config.prior), &ml.params)?.params(),
    };
    let x_valid = data.full_design().select_rows(valid);
    let y_valid: Vec<u64> = valid.iter().map(|&i| data.y()[i]).collect();
    let preds = predictive_distributions(&params, &x_valid)?;
    score_report(&preds, &y_valid, truncation)
}

/// Run the learning-curve experiment on an already ingested table.
pub fn learning_curve(table: &RawTable, config: &CvConfig) -> Result<LearningCurve> {
    config.validate()?;
    let n = table.n_rows();
    let plan = make_folds(n, config.folds, config.seed)?;
    let t_max = plan.t_max();
    let grid = if config.grid.is_empty() { vec![t_max] } else { config.grid.clone() };
    if let Some(&t) = grid.last() {
        if t > t_max {
            return Err(Error::Config(format!("largest training size {t} exceeds t_max = {t_max}")));
        }
    }
    let truncation = match config.truncation {
        Some(r) => r,
        None => table.max(&config.response)? as u64,
    };
    let datasets: Vec<Dataset> =
        config.procedures.iter().map(|p| build_design(table, &p.design(&config.response))).collect::<Result<_>>()?;
    let values: Vec<Vec<Vec<CvCell>>> = grid
        .par_iter()
        .map(|&t| {
            config
                .procedures
                .iter()
                .zip(&datasets)
                .map(|(p, data)| {
                    (0..plan.k)
                        .map(|k| {
                            let outcome = plan
                                .training(k, t)
                                .and_then(|train| fit_and_score(p, data, &train, &plan.validation(k), config, truncation));
                            match outcome {
                                Ok(r) => CvCell { metrics: Some(r), failure: None },
                                Err(e) => CvCell { metrics: None, failure: Some(e.to_string()) },
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(LearningCurve {
        grid,
        procedures: config.procedures.iter().map(|p| p.name.clone()).collect(),
        k: plan.k,
        truncation,
        values,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_else(|| MISSING.into())
}

/// Long table: t, procedure, fold, metric, value (fold is 1-based).
pub fn write_curve_long<W: Write>(out: &mut W, header: &str, curve: &LearningCurve) -> Result<()> {
    out.write_all(header.as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "procedure", "fold", "metric", "value"])?;
    for (l, &t) in curve.grid.iter().enumerate() {
        for (m, name) in curve.procedures.iter().enumerate() {
            for (k, cell) in curve.values[l][m].iter().enumerate() {
                let r = cell.metrics.as_ref();
                for (metric, v) in [
                    ("rmse", r.map(|r| r.rmse)),
                    ("log", r.map(|r| r.log_score)),
                    ("brier", r.map(|r| r.brier_score)),
                    ("spherical", r.map(|r| r.spherical_score)),
                ] {
                    w.write_record([t.to_string(), name.clone(), (k + 1).to_string(), metric.to_string(), opt(v)])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Fold means per (t, procedure) with success and failure counts.
pub fn write_curve_means<W: Write>(out: &mut W, header: &str, curve: &LearningCurve) -> Result<()> {
    out.write_all(header.as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "procedure", "successes", "failures", "rmse", "log", "brier", "spherical"])?;
    for (l, &t) in curve.grid.iter().enumerate() {
        for (m, name) in curve.procedures.iter().enumerate() {
            let s = curve.cv_mean(l, m);
            w.write_record([
                t.to_string(),
                name.clone(),
                s.successes.to_string(),
                s.failures.to_string(),
                opt(s.rmse),
                opt(s.log),
                opt(s.brier),
                opt(s.spherical),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
