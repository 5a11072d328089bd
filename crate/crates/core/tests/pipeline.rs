mod common;

use common::synthetic;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use walsnb::cv::{ingest_reader, ColumnType, SimpleType, TableSchema};
use walsnb::scoring::{predictive_distributions, score_report};
use walsnb::sim::{run_experiment, sample_design, simulate_response, write_results, SimConfig};
use walsnb::{fit_ml, fit_walsnb, learning_curve, log_likelihood, CvConfig, Dataset, MlOptions, PriorSpec};

#[test]
fn log_score_sum_is_negative_log_likelihood() {
    let data = synthetic(41, 250, 2, 3);
    let fit = fit_ml(&data, &MlOptions::default()).unwrap();
    let preds = predictive_distributions(&fit.params, &data.full_design()).unwrap();
    let report = score_report(&preds, data.y(), 150).unwrap();
    let ll = log_likelihood(&fit.params, &data).unwrap();
    assert!((report.log_score * data.n() as f64 + ll).abs() < 1e-10 * ll.abs());
    assert!((fit.loglik - ll).abs() < 1e-9 * ll.abs());
}

#[test]
fn ml_recovers_generating_coefficients() {
    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = sample_design(n, 1, 0.0, &mut rng).unwrap();
    let mut full = DMatrix::from_element(n, 2, 1.0);
    full.column_mut(1).copy_from(&x.column(0));
    let beta = DVector::from_vec(vec![0.5, -0.3]);
    let y = simulate_response(&full, &beta, 2.0, &mut rng).unwrap();
    let data = Dataset::new(y, full.columns(0, 1).into_owned(), full.columns(1, 1).into_owned()).unwrap();
    let fit = fit_ml(&data, &MlOptions::default()).unwrap().require_converged().unwrap();
    assert!((fit.params.beta() - beta).amax() < 0.05);
    assert!((fit.params.rho() / 2.0 - 1.0).abs() < 0.1);
}

#[test]
fn wals_predictions_stay_close_to_ml_for_strong_signals() {
    let data = synthetic(43, 2000, 2, 3);
    let ml = fit_ml(&data, &MlOptions::default()).unwrap();
    let wals = fit_walsnb(&data, &PriorSpec::weibull_default(), &ml).unwrap();
    let x = data.full_design();
    let mu_ml = walsnb::kernels::predict_mean(&ml.params, &x).unwrap();
    let mu_w = walsnb::predict_mean(&wals, &x).unwrap();
    let rel = mu_ml.iter().zip(mu_w.iter()).map(|(a, b)| (a / b - 1.0).abs()).fold(0.0, f64::max);
    assert!(rel < 0.2, "{rel}");
}

#[test]
fn simulation_output_is_reproducible_and_complete() {
    let text = r#"
seed = 9
runs = 3
n_eval = 300
procedures = ["walsNB-aux", "ML-U", "oracle"]
[[scenario]]
n = 150
k1 = 1
k2 = 4
rho = 1.0
b = 0.0
"#;
    let config = SimConfig::parse(text).unwrap();
    let header = walsnb::sim::provenance_header(walsnb::VERSION, &config.resolved().unwrap().to_toml().unwrap());
    let render = || {
        let results = run_experiment(&config).unwrap();
        let mut out = Vec::new();
        write_results(&mut out, &header, &results).unwrap();
        String::from_utf8(out).unwrap()
    };
    let a = render();
    assert_eq!(a, render());
    let rows = walsnb::sim::read_results(&a).unwrap();
    assert_eq!(rows.len(), 9);
    let embedded = walsnb::sim::extract_embedded_config(&a).unwrap();
    let again = SimConfig::parse(&embedded).unwrap();
    assert_eq!(again.resolved().unwrap(), config.resolved().unwrap());
}

#[test]
fn csv_to_learning_curve() {
    let data = synthetic(44, 240, 1, 3);
    let mut csv = String::from("count,a,b,c,sex\n");
    for i in 0..data.n() {
        let sex = if i % 3 == 0 { "f" } else { "m" };
        let x = data.x2().row(i);
        csv.push_str(&format!("{},{},{},{},{sex}\n", data.y()[i], x[0], x[1], x[2]));
    }
    let mut schema = TableSchema::new();
    schema.insert("count".into(), ColumnType::Simple(SimpleType::Count));
    for c in ["a", "b", "c"] {
        schema.insert(c.into(), ColumnType::Simple(SimpleType::Real));
    }
    schema.insert("sex".into(), ColumnType::Binary { levels: ["m".into(), "f".into()] });
    let table = ingest_reader(csv.as_bytes(), &schema).unwrap();
    let config = CvConfig::parse(
        r#"
seed = 1
folds = 4
grid = [60, 120, 180]
response = "count"
[columns]
[[procedure]]
name = "walsNB-int"
estimator = "wals"
auxiliary = ["a", "b", "c", "sex", "a:sex", "b^2"]
[[procedure]]
name = "ML-int"
estimator = "ml"
auxiliary = ["a", "b", "c", "sex", "a:sex", "b^2"]
"#,
    )
    .unwrap();
    let curve = learning_curve(&table, &config).unwrap();
    assert_eq!(curve.grid, vec![60, 120, 180]);
    for m in 0..2 {
        for l in 0..3 {
            assert_eq!(curve.cv_mean(l, m).successes, 4);
        }
    }
    let mut out = Vec::new();
    walsnb::cv::write_curve_long(&mut out, "", &curve).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 2 * 4 * 4);
    assert_eq!(learning_curve(&table, &config).unwrap(), curve);
}
