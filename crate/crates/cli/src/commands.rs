use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use walsnb::cv::{build_design, ingest_csv, write_curve_long, write_curve_means, DesignSpec, TableSchema};
use walsnb::scoring::{score_report, PredictiveDistribution};
use walsnb::sim::{fmt_num, provenance_header, run_experiment, summarize, write_results, write_summary, SimConfig, MISSING};
use walsnb::{fit_ml, fit_walsnb, learning_curve, CvConfig, Error, MlOptions, PriorSpec, VERSION};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    fn estimation(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn io(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::MissingColumn(_) => 1,
            Error::Io(_) | Error::Parse { .. } => 3,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> CliResult {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| CliError::io(format!("{}: {e}", p.display()))),
        None => std::io::stdout().write_all(bytes).map_err(|e| CliError::io(format!("stdout: {e}"))),
    }
}

fn to_toml<T: Serialize>(value: &T) -> CliResult<String> {
    toml::to_string(value).map_err(|e| CliError::usage(e.to_string()))
}

fn prior_from_flag(name: &str) -> CliResult<PriorSpec> {
    match name {
        "laplace" => Ok(PriorSpec::laplace_default()),
        "weibull" | "reflected_weibull" => Ok(PriorSpec::weibull_default()),
        other => Err(CliError::usage(format!("unknown prior '{other}' (expected laplace or weibull)"))),
    }
}

fn yes() -> bool {
    true
}

fn laplace() -> PriorSpec {
    PriorSpec::laplace_default()
}

/// Config of `walsnb fit`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data: Option<String>,
    response: String,
    #[serde(default = "yes")]
    intercept: bool,
    #[serde(default)]
    focus: Vec<String>,
    #[serde(default)]
    auxiliary: Vec<String>,
    #[serde(default = "laplace")]
    prior: PriorSpec,
    #[serde(default)]
    ml: MlOptions,
    columns: TableSchema,
}

fn data_path(config_value: &Option<String>, flag: &Option<PathBuf>) -> CliResult<PathBuf> {
    flag.clone()
        .or_else(|| config_value.as_ref().map(PathBuf::from))
        .ok_or_else(|| CliError::usage("no data file: set `data` in the config or pass --data"))
}

pub fn fit(args: crate::FitArgs) -> CliResult {
    let mut config: FitConfig =
        toml::from_str(&read_text(&args.config)?).map_err(|e| CliError::usage(e.to_string()))?;
    let path = data_path(&config.data, &args.data)?;
    config.data = Some(path.display().to_string());
    if let Some(p) = &args.prior {
        config.prior = prior_from_flag(p)?;
    }
    config.prior.validate().map_err(|e| CliError::usage(e.to_string()))?;

    let table = ingest_csv(&path, &config.columns)?;
    let spec = DesignSpec {
        response: config.response.clone(),
        intercept: config.intercept,
        focus: config.focus.clone(),
        auxiliary: config.auxiliary.clone(),
    };
    let data = build_design(&table, &spec)?;
    let ml = fit_ml(&data, &config.ml)?;
    if !ml.converged {
        return Err(CliError::estimation(format!(
            "ML did not converge: {}",
            ml.failure_reason.as_deref().unwrap_or("iteration limit")
        )));
    }
    let wals = fit_walsnb(&data, &config.prior, &ml)?;

    let mut out = provenance_header(VERSION, &to_toml(&config)?).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let record = |w: &mut csv::Writer<&mut Vec<u8>>, row: [String; 5]| {
            w.write_record(row).map_err(|e| CliError::io(e.to_string()))
        };
        record(&mut w, ["term", "block", "ml", "wals", "weight"].map(String::from))?;
        let k1 = data.k1();
        for (j, name) in data.focus_names().iter().enumerate() {
            record(
                &mut w,
                [
                    name.clone(),
                    "focus".into(),
                    fmt_num(ml.params.beta()[j]),
                    fmt_num(wals.beta1_hat[j]),
                    MISSING.into(),
                ],
            )?;
        }
        for (h, name) in data.aux_names().iter().enumerate() {
            record(
                &mut w,
                [
                    name.clone(),
                    "auxiliary".into(),
                    fmt_num(ml.params.beta()[k1 + h]),
                    fmt_num(wals.beta2_hat[h]),
                    fmt_num(wals.w_diag[h]),
                ],
            )?;
        }
        record(
            &mut w,
            ["rho".into(), "dispersion".into(), fmt_num(ml.params.rho()), fmt_num(wals.rho_hat), MISSING.into()],
        )?;
        w.flush().map_err(|e| CliError::io(e.to_string()))?;
    }
    emit(args.out.as_deref(), &out)
}

pub fn simulate(args: crate::SimulateArgs) -> CliResult {
    let mut config = match (&args.config, args.preset.as_deref()) {
        (Some(path), _) => SimConfig::parse(&read_text(path)?)?,
        (None, Some("desk")) => SimConfig::desk_preset(args.seed.unwrap_or(1)),
        (None, Some(other)) => return Err(CliError::usage(format!("unknown preset '{other}' (available: desk)"))),
        (None, None) => return Err(CliError::usage("either --config or --preset is required")),
    };
    if let Some(s) = args.seed {
        config.seed = s;
        for e in &mut config.scenarios {
            e.seed = None;
        }
    }
    if let Some(r) = args.runs {
        config.runs = r;
        for e in &mut config.scenarios {
            e.runs = None;
        }
    }
    if let Some(m) = args.n_eval {
        config.n_eval = m;
        for e in &mut config.scenarios {
            e.n_eval = None;
        }
    }
    config.record_timing |= args.record_timing;
    // Everything is validated here, before the first run starts.
    let resolved = config.resolved()?;
    let scenarios = resolved.resolve()?;
    let header = provenance_header(VERSION, &resolved.to_toml()?);

    let results = run_experiment(&resolved)?;
    if !results.is_empty() && results.iter().all(|r| r.metrics.is_none()) {
        return Err(CliError::estimation("every run failed"));
    }
    let mut out = Vec::new();
    write_results(&mut out, &header, &results)?;
    emit(args.out.as_deref(), &out)?;
    if let Some(path) = &args.summary {
        let mut s = Vec::new();
        write_summary(&mut s, &header, &scenarios, &summarize(&results))?;
        emit(Some(path), &s)?;
    }
    Ok(())
}

pub fn cv(args: crate::CvArgs) -> CliResult {
    let mut config = CvConfig::parse(&read_text(&args.config)?)?;
    let path = data_path(&config.data, &args.data)?;
    config.data = Some(path.display().to_string());
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(k) = args.folds {
        config.folds = k;
    }
    if let Some(g) = args.grid {
        config.grid = g;
    }
    config.validate()?;
    let table = ingest_csv(&path, &config.columns)?;
    if config.truncation.is_none() {
        config.truncation = Some(table.max(&config.response)? as u64);
    }
    let curve = learning_curve(&table, &config)?;
    let header = provenance_header(VERSION, &config.to_toml()?);
    if !curve.any_success() {
        return Err(CliError::estimation("no fold fit succeeded for any training size"));
    }
    let failures: usize =
        (0..curve.grid.len()).flat_map(|l| (0..curve.procedures.len()).map(move |m| (l, m))).map(|(l, m)| curve.cv_mean(l, m).failures).sum();
    if failures > 0 {
        eprintln!("walsnb: {failures} fold fits failed; see the NA cells in the output");
    }
    let mut out = Vec::new();
    write_curve_long(&mut out, &header, &curve)?;
    emit(args.out.as_deref(), &out)?;
    if let Some(p) = &args.means {
        let mut m = Vec::new();
        write_curve_means(&mut m, &header, &curve)?;
        emit(Some(p), &m)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ScoreSettings {
    predictions: String,
    truncation: u64,
}

/// Rows of (μ̂, ρ̂, y) from a predictions file.
fn read_predictions(path: &Path) -> CliResult<(Vec<PredictiveDistribution>, Vec<u64>)> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| CliError::io(e.to_string()))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| CliError::io(format!("predictions file lacks column '{name}'")))
    };
    let (im, ir, iy) = (col("mu")?, col("rho")?, col("y")?);
    let mut preds = Vec::new();
    let mut ys = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::io(e.to_string()))?;
        let row = i + 1;
        let bad = |c: &str, m: String| CliError::io(Error::Parse { row, column: c.into(), message: m }.to_string());
        let num = |j: usize, c: &str| -> CliResult<f64> {
            rec.get(j).unwrap_or("").parse().map_err(|_| bad(c, format!("not a number: '{}'", rec.get(j).unwrap_or(""))))
        };
        let y: u64 = rec.get(iy).unwrap_or("").parse().map_err(|_| bad("y", "not a non-negative integer".into()))?;
        let p = PredictiveDistribution::new(num(im, "mu")?, num(ir, "rho")?).map_err(|e| bad("mu/rho", e.to_string()))?;
        preds.push(p);
        ys.push(y);
    }
    Ok((preds, ys))
}

pub fn score(args: crate::ScoreArgs) -> CliResult {
    let (preds, y) = read_predictions(&args.predictions)?;
    if y.is_empty() {
        return Err(CliError::io("predictions file has no rows"));
    }
    let truncation = args.truncation.unwrap_or_else(|| y.iter().copied().max().unwrap_or(0));
    let report = score_report(&preds, &y, truncation)?;
    let settings = ScoreSettings { predictions: args.predictions.display().to_string(), truncation };
    let mut out = provenance_header(VERSION, &to_toml(&settings)?).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let io = |e: csv::Error| CliError::io(e.to_string());
        w.write_record(["n", "truncation", "rmse", "log", "brier", "spherical"]).map_err(io)?;
        w.write_record([
            y.len().to_string(),
            truncation.to_string(),
            fmt_num(report.rmse),
            fmt_num(report.log_score),
            fmt_num(report.brier_score),
            fmt_num(report.spherical_score),
        ])
        .map_err(io)?;
        w.flush().map_err(|e| CliError::io(e.to_string()))?;
    }
    emit(args.out.as_deref(), &out)
}
