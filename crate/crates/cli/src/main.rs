//! Command-line driver: generate synthetic hourly series, train forecasting
//! models, forecast from saved bundles, and compare bundles on a held-out
//! tail. Every command is deterministic given its flags, seed, and input
//! files; `PEAKCAST_SEED` overrides `--seed` when set.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, Duration, SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::rngs::StdRng;
use rand::SeedableRng;

use peakcast::baseline::{
    fit_fourier_ar, forecast_from, forecast_fourier_ar, select_k, FourierSpec,
};
use peakcast::bundle::{AnyModel, ModelBundle, TrainEcho};
use peakcast::data::{
    filter_exceedances, fit_normalizer, make_windows, read_csv, synth_series, write_atomic,
    write_csv, Normalizer, SeriesFrame, SynthConfig,
};
use peakcast::eval::{compare_models, comparison_csv, comparison_table};
use peakcast::evt::{gpd_mean, gpd_quantile, GpdParams, MIN_EXCEEDANCES};
use peakcast::nn::{Activation, EvtHead, LstmModel, Mlp, Network, Prediction};
use peakcast::trainer::{
    sgd_train, train_val_split, LossKind, TrainConfig, TrainReport, DEFAULT_LR_GPD_NLL,
    DEFAULT_LR_MSE,
};

/// Environment variable that overrides `--seed` on every command.
const SEED_ENV: &str = "PEAKCAST_SEED";
/// Held-out evaluation window used by `compare`: the last ten days.
const COMPARE_TAIL_HOURS: usize = 240;
/// Minibatch size used by the SGD trainer.
const BATCH_SIZE: usize = 32;
/// Central 95% interval bounds emitted by tail forecasts.
const INTERVAL_LO_Q: f64 = 0.025;
const INTERVAL_HI_Q: f64 = 0.975;
/// Seasonal baseline configuration: daily harmonics are chosen on a
/// chronological holdout; a fixed weekly block is added once the series
/// spans at least two weeks.
const DAILY_PERIOD: usize = 24;
const WEEKLY_PERIOD: usize = 168;
const MAX_DAILY_HARMONICS: usize = 6;
const WEEKLY_HARMONICS: usize = 3;
const SELECT_K_HOLDOUT: f64 = 0.25;

#[derive(Parser)]
#[command(
    name = "peakcast",
    version,
    about = "Forecast hourly load series with peak-aware tail models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hourly load series as a timestamp,value CSV.
    Synth(SynthArgs),
    /// Train a model on a CSV series and save it as a JSON bundle.
    Train(TrainArgs),
    /// Forecast from a saved bundle into a timestamp,point,lo95,hi95 CSV.
    #[command(long_about = "Forecast from a saved bundle into a \
        timestamp,point,lo95,hi95 CSV.\n\n\
        Squared-error bundles (mlp, lstm) emit de-normalized point \
        predictions for the last --steps lag windows of the data and leave \
        the interval cells empty; each row is stamped at its prediction \
        target, horizon hours after its window, so the final horizon rows \
        extend past the end of the data.\n\n\
        Tail bundles (evt) emit the conditional exceedance mean as the \
        point and the 2.5%/97.5% exceedance quantiles as the interval. \
        They model only values above their training threshold, so every \
        point is at least that threshold even at inputs where no \
        exceedance is likely; read the rows as 'if this hour exceeds the \
        threshold, expect this level'.\n\n\
        Seasonal baseline bundles (fourier) forecast --steps hours past \
        the end of the data with analytic 95% intervals; the data must \
        share the start instant of the series the bundle was fit on.")]
    Forecast(ForecastArgs),
    /// Compare two or more bundles on the last 240 hours of a series.
    #[command(long_about = "Compare two or more bundles on the last 240 \
        hours of a series.\n\n\
        Each bundle predicts every held-out hour: network bundles from the \
        lag window ending horizon hours earlier, the seasonal baseline by \
        forecasting from the end of its own fitting sample (which must \
        precede the held-out tail). Writes the metric table as CSV to \
        --out and prints an aligned text table; peak_* columns restrict \
        the metrics to hours whose actual value exceeds --threshold.")]
    Compare(CompareArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of hours to generate.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    hours: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Report how many generated hours exceed this level in the summary.
    #[arg(long)]
    threshold: Option<f64>,
    /// Mean level of the series.
    #[arg(long, default_value_t = 25_000.0)]
    base: f64,
    /// Amplitude of the daily sinusoid.
    #[arg(long, default_value_t = 4_000.0)]
    daily_amplitude: f64,
    /// Level drop applied to Saturday and Sunday hours.
    #[arg(long, default_value_t = 1_500.0)]
    weekend_dip: f64,
    /// Standard deviation of the Gaussian hour-to-hour noise.
    #[arg(long, default_value_t = 500.0)]
    noise_std: f64,
    /// Probability that any given hour carries a spike.
    #[arg(long, default_value_t = 0.02)]
    spike_rate: f64,
    /// Minimum magnitude a spike adds.
    #[arg(long, default_value_t = 4_000.0)]
    spike_location: f64,
    /// Scale of the Pareto spike magnitude distribution.
    #[arg(long, default_value_t = 2_000.0)]
    spike_scale: f64,
    /// Shape of the Pareto spike magnitude distribution.
    #[arg(long, default_value_t = 0.2)]
    spike_shape: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelFlag {
    /// Feed-forward point forecaster trained on squared error.
    Mlp,
    /// Recurrent point forecaster trained on squared error.
    Lstm,
    /// Tail model: predicts the scale and shape of threshold exceedances.
    Evt,
    /// Seasonal harmonic regression with AR(2) errors (ignores the
    /// network flags).
    Fourier,
}

#[derive(Args)]
struct TrainArgs {
    /// Input CSV with timestamp,value rows.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    model: ModelFlag,
    /// Input window length in hours.
    #[arg(long, default_value_t = 24)]
    lags: usize,
    /// Lead time: each window predicts the value this many hours ahead.
    #[arg(long, default_value_t = 5)]
    horizon: usize,
    /// Exceedance threshold in the series' units; required for --model evt
    /// (31000 suits the default synthetic generator scale).
    #[arg(long)]
    threshold: Option<f64>,
    /// Hidden width of the network models.
    #[arg(long, default_value_t = 3)]
    hidden: usize,
    /// SGD epochs for the network models.
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Learning rate; defaults to 0.01 for squared error and 0.005 for the
    /// tail likelihood.
    #[arg(long)]
    lr: Option<f64>,
    /// L2 penalty strength on weights (biases are never penalized).
    #[arg(long, default_value_t = 0.0)]
    l2: f64,
    /// Input dropout probability during training.
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Chronological fraction of windows held out for validation; the
    /// saved model carries the best-validation epoch's weights.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    /// Output bundle path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ForecastArgs {
    /// Bundle produced by `train`.
    #[arg(long)]
    bundle: PathBuf,
    /// Input CSV with timestamp,value rows.
    #[arg(long)]
    data: PathBuf,
    /// Number of forecast rows to emit.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Input CSV with timestamp,value rows.
    #[arg(long)]
    data: PathBuf,
    /// Two or more bundle files; rows keep this order.
    #[arg(long, num_args = 2.., required = true)]
    bundles: Vec<PathBuf>,
    /// Threshold defining the peak-only metric columns.
    #[arg(long)]
    threshold: f64,
    /// Output CSV path for the comparison table.
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        // One diagnostic line: the whole context chain, colon-separated.
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Forecast(args) => cmd_forecast(args),
        Command::Compare(args) => cmd_compare(args),
    }
}

/// `--seed`, unless the override environment variable is set.
fn resolve_seed(flag: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(text) => text
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV} must be an unsigned integer, got {text:?}")),
        Err(std::env::VarError::NotPresent) => Ok(flag),
        Err(err) => Err(anyhow!(err)).with_context(|| format!("reading {SEED_ENV}")),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let spike = GpdParams::new(args.spike_location, args.spike_scale, args.spike_shape)
        .context("invalid spike distribution")?;
    let cfg = SynthConfig {
        n_hours: args.hours as usize,
        base: args.base,
        daily_amplitude: args.daily_amplitude,
        weekend_dip: args.weekend_dip,
        noise_std: args.noise_std,
        spike_rate: args.spike_rate,
        spike,
        seed,
    };
    let frame = synth_series(&cfg)?;
    write_csv(&frame, &args.out).with_context(|| format!("writing {}", args.out.display()))?;

    let values = frame.values();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut summary = format!("n={} min={min:.1} max={max:.1}", frame.len());
    if let Some(u) = args.threshold {
        let above = values.iter().filter(|&&v| v > u).count();
        summary.push_str(&format!(" above_threshold={above}"));
    }
    println!("{summary}");
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let frame =
        read_csv(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let bundle = match args.model {
        ModelFlag::Fourier => train_fourier(&frame, seed)?,
        _ => train_network(&args, &frame, seed)?,
    };
    bundle
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

fn train_network(args: &TrainArgs, frame: &SeriesFrame, seed: u64) -> Result<ModelBundle> {
    let set = make_windows(frame, args.lags, args.horizon)?;
    // Scale statistics come from the chronological training part only, so
    // the validation tail never leaks into the normalizer.
    let (train_part, _) = train_val_split(&set, args.val_fraction)?;
    let norm = fit_normalizer(&train_part.targets)?;

    let is_evt = args.model == ModelFlag::Evt;
    let cfg = TrainConfig {
        lr: args.lr.unwrap_or(if is_evt {
            DEFAULT_LR_GPD_NLL
        } else {
            DEFAULT_LR_MSE
        }),
        epochs: args.epochs,
        batch_size: BATCH_SIZE,
        lambda: args.l2,
        p_drop: args.dropout,
        val_fraction: args.val_fraction,
        patience: 0,
        seed,
    };
    let echo = TrainEcho {
        lr: cfg.lr,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lambda: cfg.lambda,
        p_drop: cfg.p_drop,
        val_fraction: cfg.val_fraction,
        patience: cfg.patience,
    };
    let mut rng = StdRng::seed_from_u64(seed);

    match args.model {
        ModelFlag::Mlp => {
            let data = normalized_windows(set, &norm);
            let mut model = Mlp::seeded(&[args.lags, args.hidden, 1], Activation::Tanh, &mut rng)?;
            let report = sgd_train(&mut model, &data, &LossKind::Mse, &cfg)?;
            print_epochs(&report);
            Ok(ModelBundle::from_mlp(
                &model,
                args.lags,
                args.horizon,
                norm,
                seed,
                echo,
            ))
        }
        ModelFlag::Lstm => {
            let data = normalized_windows(set, &norm);
            let mut model = LstmModel::seeded(args.lags, args.hidden, &mut rng);
            let report = sgd_train(&mut model, &data, &LossKind::Mse, &cfg)?;
            print_epochs(&report);
            Ok(ModelBundle::from_lstm(&model, args.horizon, norm, seed, echo))
        }
        ModelFlag::Evt => {
            let u = args
                .threshold
                .ok_or_else(|| anyhow!("--threshold is required for --model evt"))?;
            let mut data = filter_exceedances(&set, u);
            let found = data.len();
            if found < MIN_EXCEEDANCES {
                bail!(
                    "insufficient exceedances: found {found} targets above {u}, \
                     need at least {MIN_EXCEEDANCES}"
                );
            }
            // Inputs are normalized at the series scale; targets stay raw
            // because the tail likelihood lives at the observation scale.
            for row in &mut data.inputs {
                norm.apply_all(row);
            }
            let mut model = EvtHead::seeded(args.lags, args.hidden, &mut rng)?;
            // Start the scale output at the mean excess (the exponential-tail
            // maximum-likelihood scale). Plain SGD cannot climb from a unit
            // scale to the observation scale within a sane epoch budget, and
            // an underscaled sigma drives the shape into saturation instead.
            let mean_excess = data.targets.iter().map(|y| y - u).sum::<f64>() / found as f64;
            let out_layer = model.backbone.layers.last_mut().expect("head has layers");
            out_layer.bias[0] = inv_softplus(mean_excess);
            let report = sgd_train(&mut model, &data, &LossKind::GpdNll { threshold: u }, &cfg)?;
            print_epochs(&report);
            Ok(ModelBundle::from_evt(
                &model,
                args.horizon,
                u,
                norm,
                seed,
                echo,
            ))
        }
        ModelFlag::Fourier => unreachable!("dispatched in cmd_train"),
    }
}

/// Inverse of `softplus`: the raw value whose softplus is `y` (y > 0).
/// Written as y + ln(1 - e^(-y)) so large `y` never overflows.
fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp()).ln_1p()
}

/// Applies the normalizer to every input window and every target.
fn normalized_windows(
    mut set: peakcast::data::SupervisedSet,
    norm: &Normalizer,
) -> peakcast::data::SupervisedSet {
    for row in &mut set.inputs {
        norm.apply_all(row);
    }
    for t in &mut set.targets {
        *t = norm.apply(*t);
    }
    set
}

fn train_fourier(frame: &SeriesFrame, seed: u64) -> Result<ModelBundle> {
    let values = frame.values();
    let k_daily = select_k(values, DAILY_PERIOD, MAX_DAILY_HARMONICS, SELECT_K_HOLDOUT)
        .context("choosing the daily harmonic count")?;
    let mut specs = vec![FourierSpec::new(k_daily, DAILY_PERIOD)?];
    if values.len() >= 2 * WEEKLY_PERIOD {
        specs.push(FourierSpec::new(WEEKLY_HARMONICS, WEEKLY_PERIOD)?);
    }
    let model = fit_fourier_ar(values, &specs, None)?;
    // The least-squares fit has no epochs; report its in-sample one-step
    // innovation variance in the same shape as the network trainers.
    println!("epoch,train_loss,val_loss");
    println!("0,{},", model.resid_var);
    Ok(ModelBundle::from_fourier(&model, seed))
}

fn print_epochs(report: &TrainReport) {
    println!("epoch,train_loss,val_loss");
    for (epoch, train) in report.train_losses.iter().enumerate() {
        match report.val_losses.get(epoch) {
            Some(val) => println!("{epoch},{train},{val}"),
            None => println!("{epoch},{train},"),
        }
    }
}

struct ForecastRow {
    ts: DateTime<Utc>,
    point: f64,
    interval: Option<(f64, f64)>,
}

fn cmd_forecast(args: ForecastArgs) -> Result<()> {
    let bundle = ModelBundle::load(&args.bundle)
        .with_context(|| format!("loading {}", args.bundle.display()))?;
    let frame =
        read_csv(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let steps = args.steps as usize;
    let model = bundle.instantiate().context("incompatible bundle")?;

    let mut rows = Vec::with_capacity(steps);
    if let AnyModel::Fourier(m) = &model {
        // Continue the error recursion from the end of the data and
        // forecast past it.
        let values = frame.values();
        let resid = m.residuals(values, None)?;
        if resid.len() < 2 {
            bail!(
                "incompatible bundle: the seasonal model needs at least 2 \
                 observations to continue its error recursion, data has {}",
                resid.len()
            );
        }
        let state = (resid[resid.len() - 2], resid[resid.len() - 1]);
        let forecast = forecast_from(m, values.len(), state, steps, None)?;
        let last_ts = *frame.timestamps().last().expect("frame is non-empty");
        for (j, step) in forecast.iter().enumerate() {
            rows.push(ForecastRow {
                ts: last_ts + Duration::hours(j as i64 + 1),
                point: step.point,
                interval: Some((step.lo95, step.hi95)),
            });
        }
    } else {
        let norm = required_normalizer(&bundle)?;
        for (base, input) in last_windows(&bundle, &frame, steps)? {
            let ts = frame.timestamps()[base] + Duration::hours(bundle.horizon as i64);
            let (point, interval) = window_prediction(&bundle, &model, norm, &input)?;
            rows.push(ForecastRow {
                ts,
                point,
                interval,
            });
        }
    }

    let mut csv = String::from("timestamp,point,lo95,hi95\n");
    for row in &rows {
        let ts = row.ts.to_rfc3339_opts(SecondsFormat::Secs, true);
        match row.interval {
            Some((lo, hi)) => csv.push_str(&format!("{ts},{},{lo},{hi}\n", row.point)),
            None => csv.push_str(&format!("{ts},{},,\n", row.point)),
        }
    }
    write_atomic(&args.out, csv.as_bytes())
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {} forecast rows to {}", rows.len(), args.out.display());
    Ok(())
}

/// The last `steps` lag windows of the series, oldest first, as
/// (base index, normalized input) pairs.
fn last_windows(
    bundle: &ModelBundle,
    frame: &SeriesFrame,
    steps: usize,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let p = bundle.lags;
    let n = frame.len();
    if p == 0 {
        bail!("incompatible bundle: lag window length is 0");
    }
    if n < p {
        bail!("incompatible bundle: needs at least {p} observations, data has {n}");
    }
    let available = n - p + 1;
    if steps > available {
        bail!("--steps {steps} exceeds the {available} lag windows the data provides");
    }
    let norm = required_normalizer(bundle)?;
    let values = frame.values();
    Ok(((n - steps)..n)
        .map(|base| {
            let mut input = values[base + 1 - p..=base].to_vec();
            norm.apply_all(&mut input);
            (base, input)
        })
        .collect())
}

fn required_normalizer(bundle: &ModelBundle) -> Result<&Normalizer> {
    bundle
        .normalizer
        .as_ref()
        .ok_or_else(|| anyhow!("incompatible bundle: missing input normalizer"))
}

/// Point (and optional 95% interval) for one normalized lag window.
fn window_prediction(
    bundle: &ModelBundle,
    model: &AnyModel,
    norm: &Normalizer,
    input: &[f64],
) -> Result<(f64, Option<(f64, f64)>)> {
    match model {
        AnyModel::Mlp(m) => point_only(norm, m.predict(input)?),
        AnyModel::Lstm(m) => point_only(norm, m.predict(input)?),
        AnyModel::Evt(m) => {
            let (sigma, xi) = m.forward(input)?;
            let u = bundle
                .threshold
                .ok_or_else(|| anyhow!("incompatible bundle: tail model missing its threshold"))?;
            let gp = GpdParams::new(u, sigma, xi)?;
            let lo = gpd_quantile(&gp, INTERVAL_LO_Q)?;
            let hi = gpd_quantile(&gp, INTERVAL_HI_Q)?;
            Ok((gpd_mean(&gp), Some((lo, hi))))
        }
        AnyModel::Fourier(_) => bail!("incompatible bundle: seasonal models have no lag windows"),
    }
}

fn point_only(norm: &Normalizer, pred: Prediction) -> Result<(f64, Option<(f64, f64)>)> {
    match pred {
        Prediction::Point(z) => Ok((norm.invert(z), None)),
        Prediction::Gpd { .. } => bail!("incompatible bundle: expected a point model"),
    }
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let frame =
        read_csv(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let n = frame.len();
    if n <= COMPARE_TAIL_HOURS {
        bail!("compare holds out the last {COMPARE_TAIL_HOURS} hours; data has only {n}");
    }
    let targets = frame.values()[n - COMPARE_TAIL_HOURS..].to_vec();

    let mut results = Vec::with_capacity(args.bundles.len());
    for path in &args.bundles {
        let bundle =
            ModelBundle::load(path).with_context(|| format!("loading {}", path.display()))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let preds = tail_predictions(&bundle, &frame)
            .with_context(|| format!("evaluating {}", path.display()))?;
        results.push((name, preds));
    }

    let rows = compare_models(&results, &targets, args.threshold)?;
    write_atomic(&args.out, comparison_csv(&rows).as_bytes())
        .with_context(|| format!("writing {}", args.out.display()))?;
    print!("{}", comparison_table(&rows));
    Ok(())
}

/// One prediction per held-out hour. Network bundles predict each tail
/// value from the lag window ending `horizon` hours earlier; the seasonal
/// baseline forecasts recursively from the end of its own fitting sample,
/// which must precede the held-out tail.
fn tail_predictions(bundle: &ModelBundle, frame: &SeriesFrame) -> Result<Vec<f64>> {
    let n = frame.len();
    let model = bundle.instantiate().context("incompatible bundle")?;

    if let AnyModel::Fourier(m) = &model {
        if m.fit_len + COMPARE_TAIL_HOURS > n {
            bail!(
                "the seasonal bundle was fit through hour {}, leaving fewer than \
                 {COMPARE_TAIL_HOURS} held-out hours of the {n}-hour series; \
                 refit it on a shorter prefix",
                m.fit_len
            );
        }
        let ahead = n - m.fit_len;
        let forecast = forecast_fourier_ar(m, m.last_resid, ahead, None)?;
        return Ok(forecast[ahead - COMPARE_TAIL_HOURS..]
            .iter()
            .map(|s| s.point)
            .collect());
    }

    let p = bundle.lags;
    let h = bundle.horizon;
    let first_target = n - COMPARE_TAIL_HOURS;
    if p == 0 || first_target + 1 < p + h {
        bail!(
            "incompatible bundle: lag window {p} plus horizon {h} does not fit \
             before the held-out tail"
        );
    }
    let norm = required_normalizer(bundle)?;
    let values = frame.values();
    let mut preds = Vec::with_capacity(COMPARE_TAIL_HOURS);
    for target_index in first_target..n {
        let base = target_index - h;
        let mut input = values[base + 1 - p..=base].to_vec();
        norm.apply_all(&mut input);
        let (point, _) = window_prediction(bundle, &model, norm, &input)?;
        preds.push(point);
    }
    Ok(preds)
}
