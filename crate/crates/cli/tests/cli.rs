//! End-to-end behavior of the `peakcast` binary: flag validation, exit
//! codes, output formats, determinism, and bundle round trips.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{DateTime, Utc};
use peakcast::bundle::{AnyModel, ModelBundle, TrainEcho};
use peakcast::data::Normalizer;
use peakcast::evt::{gpd_mean, GpdParams};
use peakcast::nn::{EvtHead, Network, Prediction, SIGMA_FLOOR};
use rand::rngs::StdRng;
use rand::SeedableRng;
use tempfile::TempDir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_peakcast")
}

/// Runs the binary with a clean seed environment.
fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("PEAKCAST_SEED")
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path_str(dir: &TempDir, name: &str) -> (PathBuf, String) {
    let p = dir.path().join(name);
    let s = p.to_str().expect("utf-8 temp path").to_string();
    (p, s)
}

/// Parsed forecast CSV row.
struct ForecastRow {
    ts: String,
    point: f64,
    lo95: Option<f64>,
    hi95: Option<f64>,
}

fn read_forecast(path: &Path) -> Vec<ForecastRow> {
    let text = std::fs::read_to_string(path).expect("forecast file");
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("timestamp,point,lo95,hi95"));
    lines
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells.len(), 4, "bad row {line:?}");
            let opt = |s: &str| {
                if s.is_empty() {
                    None
                } else {
                    Some(s.parse::<f64>().expect("numeric cell"))
                }
            };
            ForecastRow {
                ts: cells[0].to_string(),
                point: cells[1].parse().expect("numeric point"),
                lo95: opt(cells[2]),
                hi95: opt(cells[3]),
            }
        })
        .collect()
}

#[test]
fn synth_is_deterministic_and_prints_a_summary() {
    let dir = TempDir::new().unwrap();
    let (a_path, a) = path_str(&dir, "a.csv");
    let (b_path, b) = path_str(&dir, "b.csv");

    let out = run(&["synth", "--hours", "48", "--seed", "7", "--out", &a]);
    assert_success(&out);
    let summary = String::from_utf8(out.stdout).unwrap();
    assert!(summary.starts_with("n=48 min="), "summary: {summary}");
    assert!(!summary.contains("above_threshold"));

    let out = run(&["synth", "--hours", "48", "--seed", "7", "--out", &b]);
    assert_success(&out);
    assert_eq!(
        std::fs::read(&a_path).unwrap(),
        std::fs::read(&b_path).unwrap(),
        "same flags and seed must produce identical files"
    );

    let (_, c) = path_str(&dir, "c.csv");
    let out = run(&[
        "synth",
        "--hours",
        "48",
        "--seed",
        "7",
        "--threshold",
        "0",
        "--out",
        &c,
    ]);
    assert_success(&out);
    let summary = String::from_utf8(out.stdout).unwrap();
    assert!(
        summary.trim_end().ends_with("above_threshold=48"),
        "every hour exceeds a zero threshold: {summary}"
    );
}

#[test]
fn synth_rejects_zero_hours_as_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let (out_path, out_str) = path_str(&dir, "x.csv");
    let out = run(&["synth", "--hours", "0", "--seed", "1", "--out", &out_str]);
    assert_eq!(out.status.code(), Some(2), "usage errors exit 2");
    assert!(!out_path.exists(), "no file on usage error");
}

#[test]
fn seed_environment_variable_overrides_the_flag() {
    let dir = TempDir::new().unwrap();
    let (a_path, a) = path_str(&dir, "a.csv");
    let (b_path, b) = path_str(&dir, "b.csv");
    let out = run(&["synth", "--hours", "24", "--seed", "3", "--out", &a]);
    assert_success(&out);
    let out = Command::new(bin())
        .args(["synth", "--hours", "24", "--seed", "999", "--out", &b])
        .env("PEAKCAST_SEED", "3")
        .output()
        .unwrap();
    assert_success(&out);
    assert_eq!(
        std::fs::read(&a_path).unwrap(),
        std::fs::read(&b_path).unwrap()
    );

    let out = Command::new(bin())
        .args(["synth", "--hours", "24", "--seed", "1", "--out", &a])
        .env("PEAKCAST_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "one diagnostic line: {err}");
    assert!(err.contains("PEAKCAST_SEED"), "names the variable: {err}");
}

#[test]
fn synthetic_series_has_a_strong_daily_cycle() {
    let dir = TempDir::new().unwrap();
    let (csv_path, csv) = path_str(&dir, "load.csv");
    let out = run(&["synth", "--hours", "10000", "--seed", "42", "--out", &csv]);
    assert_success(&out);

    let text = std::fs::read_to_string(&csv_path).unwrap();
    let values: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 10000);

    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let lag = 24;
    let cov = values[..n - lag]
        .iter()
        .zip(&values[lag..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum::<f64>()
        / (n - lag) as f64;
    let acf24 = cov / var;
    assert!(acf24 > 0.5, "lag-24 autocorrelation {acf24} too weak");
}

#[test]
fn train_prints_epoch_rows_and_the_bundle_echoes_the_run() {
    let dir = TempDir::new().unwrap();
    let (_, csv) = path_str(&dir, "load.csv");
    assert_success(&run(&[
        "synth", "--hours", "400", "--seed", "5", "--out", &csv,
    ]));

    let (bundle_path, bundle) = path_str(&dir, "mlp.json");
    let out = run(&[
        "train", "--data", &csv, "--model", "mlp", "--epochs", "4", "--seed", "9", "--out",
        &bundle,
    ]);
    assert_success(&out);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss");
    assert_eq!(lines.len(), 1 + 4, "one row per epoch");
    for (i, line) in lines[1..].iter().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0], i.to_string());
        assert!(cells[1].parse::<f64>().is_ok());
        assert!(cells[2].parse::<f64>().is_ok());
    }

    let loaded = ModelBundle::load(&bundle_path).unwrap();
    assert_eq!(loaded.seed, 9);
    assert_eq!(loaded.lags, 24);
    assert_eq!(loaded.horizon, 5);
    let echo = loaded.train.expect("training echo");
    assert_eq!(echo.epochs, 4);
    assert_eq!(echo.lr, 0.01, "squared-error default learning rate");
}

#[test]
fn train_requires_a_threshold_for_the_tail_model() {
    let dir = TempDir::new().unwrap();
    let (_, csv) = path_str(&dir, "load.csv");
    assert_success(&run(&[
        "synth", "--hours", "400", "--seed", "5", "--out", &csv,
    ]));
    let (_, bundle) = path_str(&dir, "evt.json");
    let out = run(&["train", "--data", &csv, "--model", "evt", "--out", &bundle]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("--threshold"), "diagnostic: {err}");
}

#[test]
fn train_reports_the_exceedance_count_when_there_are_too_few() {
    let dir = TempDir::new().unwrap();
    let (_, csv) = path_str(&dir, "load.csv");
    assert_success(&run(&[
        "synth", "--hours", "400", "--seed", "5", "--out", &csv,
    ]));
    let (bundle_path, bundle) = path_str(&dir, "evt.json");
    let out = run(&[
        "train",
        "--data",
        &csv,
        "--model",
        "evt",
        "--threshold",
        "99999999",
        "--out",
        &bundle,
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "one diagnostic line: {err}");
    assert!(
        err.contains("insufficient exceedances") && err.contains("found 0"),
        "names the count found: {err}"
    );
    assert!(!bundle_path.exists());
}

#[test]
fn reloaded_bundle_reproduces_in_process_predictions() {
    let dir = TempDir::new().unwrap();
    let (_, csv) = path_str(&dir, "load.csv");
    assert_success(&run(&[
        "synth", "--hours", "600", "--seed", "8", "--out", &csv,
    ]));
    let (bundle_path, bundle) = path_str(&dir, "mlp.json");
    assert_success(&run(&[
        "train", "--data", &csv, "--model", "mlp", "--epochs", "6", "--seed", "2", "--out",
        &bundle,
    ]));

    let (fc_path, fc) = path_str(&dir, "fc.csv");
    assert_success(&run(&[
        "forecast", "--bundle", &bundle, "--data", &csv, "--steps", "40", "--out", &fc,
    ]));
    let rows = read_forecast(&fc_path);
    assert_eq!(rows.len(), 40);

    // Recompute the same windows through the library and compare exactly:
    // the CSV prints shortest-round-trip decimals, so parsing them back
    // must reproduce the in-process floats bit for bit.
    let loaded = ModelBundle::load(&bundle_path).unwrap();
    let model = match loaded.instantiate().unwrap() {
        AnyModel::Mlp(m) => m,
        _ => panic!("trained an mlp"),
    };
    let norm = loaded.normalizer.clone().unwrap();
    let frame = peakcast::data::read_csv(Path::new(&csv)).unwrap();
    let values = frame.values();
    let n = values.len();
    for (k, row) in rows.iter().enumerate() {
        let base = n - 40 + k;
        let mut input = values[base + 1 - loaded.lags..=base].to_vec();
        norm.apply_all(&mut input);
        let pred = match model.predict(&input).unwrap() {
            Prediction::Point(z) => norm.invert(z),
            _ => unreachable!(),
        };
        assert_eq!(row.point.to_bits(), pred.to_bits(), "row {k} differs");
        assert!(row.lo95.is_none() && row.hi95.is_none(), "empty intervals");
        // Rows are stamped horizon hours after their window.
        let ts: DateTime<Utc> = row.ts.parse().unwrap();
        assert_eq!(
            ts,
            frame.timestamps()[base] + chrono::Duration::hours(loaded.horizon as i64)
        );
    }
}

#[test]
fn constant_tail_head_forecasts_a_flat_level_above_the_threshold() {
    let dir = TempDir::new().unwrap();
    let (_, csv) = path_str(&dir, "load.csv");
    assert_success(&run(&[
        "synth", "--hours", "200", "--seed", "4", "--out", &csv,
    ]));

    // A head with all-zero parameters emits sigma = softplus(0) + floor and
    // shape exactly 0 for every input, so each forecast point is the same
    // exponential-tail mean u + sigma.
    let mut rng = StdRng::seed_from_u64(0);
    let mut head = EvtHead::seeded(24, 3, &mut rng).unwrap();
    let zeros = vec![0.0; head.param_count()];
    head.set_params(&zeros).unwrap();
    let u = 30_000.0;
    let echo = TrainEcho {
        lr: 0.005,
        epochs: 0,
        batch_size: 32,
        lambda: 0.0,
        p_drop: 0.0,
        val_fraction: 0.0,
        patience: 0,
    };
    let norm = Normalizer {
        mean: 25_000.0,
        std: 3_000.0,
    };
    let bundle = ModelBundle::from_evt(&head, 5, u, norm, 0, echo);
    let bundle_path = dir.path().join("flat.json");
    bundle.save(&bundle_path).unwrap();

    let (fc_path, fc) = path_str(&dir, "fc.csv");
    assert_success(&run(&[
        "forecast",
        "--bundle",
        bundle_path.to_str().unwrap(),
        "--data",
        &csv,
        "--steps",
        "12",
        "--out",
        &fc,
    ]));
    let rows = read_forecast(&fc_path);
    let (sigma, xi) = head.forward(&vec![0.0; 24]).unwrap();
    assert!((sigma - (2.0_f64.ln() + SIGMA_FLOOR)).abs() < 1e-12 && xi == 0.0);
    let expected = gpd_mean(&GpdParams::new(u, sigma, xi).unwrap());
    for row in &rows {
        assert_eq!(row.point.to_bits(), expected.to_bits(), "flat level");
        let (lo, hi) = (row.lo95.unwrap(), row.hi95.unwrap());
        assert!(lo <= row.point && row.point <= hi);
        assert!(lo >= u, "interval stays above the threshold");
    }
}

#[test]
fn trained_tail_forecast_keeps_points_inside_their_intervals() {
    let dir = TempDir::new().unwrap();
    let (_, csv) = path_str(&dir, "load.csv");
    assert_success(&run(&[
        "synth", "--hours", "10000", "--seed", "42", "--out", &csv,
    ]));
    let (_, bundle) = path_str(&dir, "evt.json");
    assert_success(&run(&[
        "train",
        "--data",
        &csv,
        "--model",
        "evt",
        "--threshold",
        "31000",
        "--epochs",
        "200",
        "--out",
        &bundle,
    ]));
    let (fc_path, fc) = path_str(&dir, "fc.csv");
    assert_success(&run(&[
        "forecast", "--bundle", &bundle, "--data", &csv, "--steps", "1000", "--out", &fc,
    ]));
    let rows = read_forecast(&fc_path);
    assert_eq!(rows.len(), 1000);
    for (k, row) in rows.iter().enumerate() {
        let (lo, hi) = (row.lo95.unwrap(), row.hi95.unwrap());
        assert!(
            lo <= row.point && row.point <= hi,
            "row {k}: {lo} .. {} .. {hi}",
            row.point
        );
        assert!(row.point >= 31000.0, "tail points never drop below u");
    }
}

#[test]
fn seasonal_forecast_continues_past_the_data_end() {
    let dir = TempDir::new().unwrap();
    let (_, csv) = path_str(&dir, "load.csv");
    assert_success(&run(&[
        "synth", "--hours", "1000", "--seed", "6", "--out", &csv,
    ]));
    let (_, bundle) = path_str(&dir, "fourier.json");
    assert_success(&run(&[
        "train", "--data", &csv, "--model", "fourier", "--out", &bundle,
    ]));
    let (fc_path, fc) = path_str(&dir, "fc.csv");
    assert_success(&run(&[
        "forecast", "--bundle", &bundle, "--data", &csv, "--steps", "48", "--out", &fc,
    ]));
    let rows = read_forecast(&fc_path);
    assert_eq!(rows.len(), 48);

    // 1000 hours from the generator's start: the first forecast row is the
    // next hour after the last observation.
    let first: DateTime<Utc> = rows[0].ts.parse().unwrap();
    assert_eq!(first, "2016-02-11T16:00:00Z".parse::<DateTime<Utc>>().unwrap());
    let mut prev_width = 0.0;
    let mut prev_ts = None::<DateTime<Utc>>;
    for row in &rows {
        let ts: DateTime<Utc> = row.ts.parse().unwrap();
        if let Some(p) = prev_ts {
            assert_eq!(ts - p, chrono::Duration::hours(1), "hourly stamps");
        }
        prev_ts = Some(ts);
        let width = row.hi95.unwrap() - row.lo95.unwrap();
        assert!(width >= prev_width - 1e-9, "interval width never shrinks");
        prev_width = width;
    }
}

#[test]
fn comparing_a_bundle_with_itself_yields_identical_rows() {
    let dir = TempDir::new().unwrap();
    let (_, csv) = path_str(&dir, "load.csv");
    assert_success(&run(&[
        "synth", "--hours", "500", "--seed", "3", "--out", &csv,
    ]));
    let (_, bundle) = path_str(&dir, "m.json");
    assert_success(&run(&[
        "train", "--data", &csv, "--model", "mlp", "--epochs", "3", "--out", &bundle,
    ]));
    let (cmp_path, cmp) = path_str(&dir, "cmp.csv");
    let out = run(&[
        "compare",
        "--data",
        &csv,
        "--bundles",
        &bundle,
        &bundle,
        "--threshold",
        "28000",
        "--out",
        &cmp,
    ]);
    assert_success(&out);

    let text = std::fs::read_to_string(&cmp_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "header plus two rows");
    assert_eq!(
        lines[0],
        "model,mse,rmse,mae,mape,peak_mse,peak_rmse,peak_mae,peak_mape,n,n_peaks"
    );
    assert_eq!(lines[1], lines[2], "same bundle, same metrics");

    // The text table on stdout covers the same two models.
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn compare_needs_at_least_two_bundles() {
    let dir = TempDir::new().unwrap();
    let (_, csv) = path_str(&dir, "load.csv");
    assert_success(&run(&[
        "synth", "--hours", "500", "--seed", "3", "--out", &csv,
    ]));
    let (_, bundle) = path_str(&dir, "m.json");
    assert_success(&run(&[
        "train", "--data", &csv, "--model", "mlp", "--epochs", "3", "--out", &bundle,
    ]));
    let (_, cmp) = path_str(&dir, "cmp.csv");
    let out = run(&[
        "compare",
        "--data",
        &csv,
        "--bundles",
        &bundle,
        "--threshold",
        "28000",
        "--out",
        &cmp,
    ]);
    assert_eq!(out.status.code(), Some(2), "usage error");
}

#[test]
fn compare_rejects_a_seasonal_bundle_fit_through_the_evaluation_window() {
    let dir = TempDir::new().unwrap();
    let (_, csv) = path_str(&dir, "load.csv");
    assert_success(&run(&[
        "synth", "--hours", "600", "--seed", "3", "--out", &csv,
    ]));
    let (_, mlp) = path_str(&dir, "m.json");
    assert_success(&run(&[
        "train", "--data", &csv, "--model", "mlp", "--epochs", "3", "--out", &mlp,
    ]));
    let (_, fourier) = path_str(&dir, "f.json");
    assert_success(&run(&[
        "train", "--data", &csv, "--model", "fourier", "--out", &fourier,
    ]));
    let (_, cmp) = path_str(&dir, "cmp.csv");
    let out = run(&[
        "compare",
        "--data",
        &csv,
        "--bundles",
        &mlp,
        &fourier,
        "--threshold",
        "28000",
        "--out",
        &cmp,
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("refit"), "actionable message: {err}");
}

#[test]
fn tampered_schema_version_is_refused() {
    let dir = TempDir::new().unwrap();
    let (_, csv) = path_str(&dir, "load.csv");
    assert_success(&run(&[
        "synth", "--hours", "500", "--seed", "3", "--out", &csv,
    ]));
    let (bundle_path, bundle) = path_str(&dir, "m.json");
    assert_success(&run(&[
        "train", "--data", &csv, "--model", "mlp", "--epochs", "3", "--out", &bundle,
    ]));

    let text = std::fs::read_to_string(&bundle_path).unwrap();
    let tampered = text.replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
    assert_ne!(text, tampered, "tampering took effect");
    std::fs::write(&bundle_path, tampered).unwrap();

    let (_, fc) = path_str(&dir, "fc.csv");
    let out = run(&[
        "forecast", "--bundle", &bundle, "--data", &csv, "--steps", "5", "--out", &fc,
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("schema"), "refusal names the schema: {err}");
}

#[test]
fn forecast_steps_beyond_available_windows_is_an_error() {
    let dir = TempDir::new().unwrap();
    let (_, csv) = path_str(&dir, "load.csv");
    assert_success(&run(&[
        "synth", "--hours", "100", "--seed", "3", "--out", &csv,
    ]));
    let (_, bundle) = path_str(&dir, "m.json");
    assert_success(&run(&[
        "train", "--data", &csv, "--model", "mlp", "--epochs", "2", "--out", &bundle,
    ]));
    // 100 observations and 24 lags leave 77 windows.
    let (_, fc) = path_str(&dir, "fc.csv");
    let out = run(&[
        "forecast", "--bundle", &bundle, "--data", &csv, "--steps", "78", "--out", &fc,
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("77"), "says how many windows exist: {err}");
}
