//! Hourly series ingestion, supervised windowing, and synthetic data.
//!
//! Series are strictly hourly and strictly increasing in time; a gap is an
//! ingestion error, never silently imputed. Supervised windows pair the
//! `p` most recent values (oldest first) with the target `h` hours after
//! the window's last element, so no input overlaps its target.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, SecondsFormat, TimeZone, Utc, Weekday};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evt::{gpd_draw, GpdParams};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected header 'timestamp,value', found '{found}'")]
    BadHeader { line: usize, found: String },
    #[error("line {line}: {what}")]
    Parse { line: usize, what: String },
    #[error("line {line}: timestamps must increase strictly")]
    NonMonotonicTimestamps { line: usize },
    #[error("line {line}: gap in hourly spacing")]
    GapDetected { line: usize },
    #[error("line {line}: value is not finite")]
    NonFiniteValue { line: usize },
    #[error("series is empty")]
    EmptySeries,
    #[error("series of length {len} too short for lags {lags} and horizon {horizon}")]
    TooShort {
        len: usize,
        lags: usize,
        horizon: usize,
    },
    #[error("window shape must have lags >= 1 and horizon >= 1")]
    BadWindowShape,
    #[error("cannot normalize: {0}")]
    DegenerateSeries(String),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

/// Unit tag for series values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    MegaWatts,
    DollarsPerMegaWattHour,
}

impl std::fmt::Display for Unit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Unit::MegaWatts => write!(f, "MW"),
            Unit::DollarsPerMegaWattHour => write!(f, "$/MWh"),
        }
    }
}

/// An hourly series: equal-length timestamp and value vectors, timestamps
/// strictly increasing in one-hour steps, all values finite.
#[derive(Debug, Clone)]
pub struct SeriesFrame {
    timestamps: Vec<DateTime<Utc>>,
    values: Vec<f64>,
    unit: Unit,
}

impl SeriesFrame {
    pub fn new(
        timestamps: Vec<DateTime<Utc>>,
        values: Vec<f64>,
        unit: Unit,
    ) -> Result<Self, DataError> {
        if timestamps.is_empty() || values.is_empty() {
            return Err(DataError::EmptySeries);
        }
        if timestamps.len() != values.len() {
            return Err(DataError::Parse {
                line: 0,
                what: format!(
                    "{} timestamps vs {} values",
                    timestamps.len(),
                    values.len()
                ),
            });
        }
        let hour = Duration::hours(1);
        for i in 1..timestamps.len() {
            let step = timestamps[i] - timestamps[i - 1];
            // Data rows start at file line 2; entry i sits on line i + 2.
            if step <= Duration::zero() {
                return Err(DataError::NonMonotonicTimestamps { line: i + 2 });
            }
            if step != hour {
                return Err(DataError::GapDetected { line: i + 2 });
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteValue { line: i + 2 });
        }
        Ok(Self {
            timestamps,
            values,
            unit,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    /// First `n` hours of the frame.
    pub fn head(&self, n: usize) -> Result<SeriesFrame, DataError> {
        if n == 0 || n > self.len() {
            return Err(DataError::EmptySeries);
        }
        Ok(SeriesFrame {
            timestamps: self.timestamps[..n].to_vec(),
            values: self.values[..n].to_vec(),
            unit: self.unit,
        })
    }
}

/// Lagged windows plus their targets. Row `i` holds the `lags` source
/// values ending at `base_indices[i]` (oldest first); its target is the
/// source value `horizon` hours later.
#[derive(Debug, Clone)]
pub struct SupervisedSet {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub base_indices: Vec<usize>,
    pub lags: usize,
    pub horizon: usize,
}

impl SupervisedSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Rows `range.0 .. range.1`, preserving chronological order.
    pub fn slice(&self, start: usize, end: usize) -> SupervisedSet {
        SupervisedSet {
            inputs: self.inputs[start..end].to_vec(),
            targets: self.targets[start..end].to_vec(),
            base_indices: self.base_indices[start..end].to_vec(),
            lags: self.lags,
            horizon: self.horizon,
        }
    }
}

/// Builds all `len - lags - horizon + 1` supervised windows of the frame.
pub fn make_windows(
    frame: &SeriesFrame,
    lags: usize,
    horizon: usize,
) -> Result<SupervisedSet, DataError> {
    if lags == 0 || horizon == 0 {
        return Err(DataError::BadWindowShape);
    }
    let len = frame.len();
    if len < lags + horizon {
        return Err(DataError::TooShort {
            len,
            lags,
            horizon,
        });
    }
    let n = len - lags - horizon + 1;
    let values = frame.values();
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut base_indices = Vec::with_capacity(n);
    for base in (lags - 1)..(len - horizon) {
        inputs.push(values[base + 1 - lags..=base].to_vec());
        targets.push(values[base + horizon]);
        base_indices.push(base);
    }
    Ok(SupervisedSet {
        inputs,
        targets,
        base_indices,
        lags,
        horizon,
    })
}

/// Keeps only rows whose target strictly exceeds the threshold. Inputs are
/// untouched; a window may contain sub-threshold values.
pub fn filter_exceedances(set: &SupervisedSet, u: f64) -> SupervisedSet {
    let keep: Vec<usize> = (0..set.len()).filter(|&i| set.targets[i] > u).collect();
    SupervisedSet {
        inputs: keep.iter().map(|&i| set.inputs[i].clone()).collect(),
        targets: keep.iter().map(|&i| set.targets[i]).collect(),
        base_indices: keep.iter().map(|&i| set.base_indices[i]).collect(),
        lags: set.lags,
        horizon: set.horizon,
    }
}

/// Location-scale transform fit on training data only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn apply_all(&self, xs: &mut [f64]) {
        for x in xs {
            *x = self.apply(*x);
        }
    }
}

/// Mean and population standard deviation of `values`. Errors when the
/// values do not vary, since the transform would divide by zero.
pub fn fit_normalizer(values: &[f64]) -> Result<Normalizer, DataError> {
    if values.is_empty() {
        return Err(DataError::EmptySeries);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 || !std.is_finite() {
        return Err(DataError::DegenerateSeries(format!(
            "standard deviation {std} over {} values",
            values.len()
        )));
    }
    Ok(Normalizer { mean, std })
}

/// First timestamp of every generated series.
pub fn synth_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2016, 1, 1, 0, 0, 0).unwrap()
}

/// Hour of day at which the daily sinusoid peaks.
pub const DAILY_PEAK_HOUR: f64 = 17.0;

/// Configuration for the synthetic hourly load generator: a base level,
/// a daily sinusoid peaking at [`DAILY_PEAK_HOUR`], a weekend dip, Gaussian
/// noise, and independently arriving generalized-Pareto spikes.
#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub n_hours: usize,
    pub base: f64,
    pub daily_amplitude: f64,
    /// Subtracted from Saturday and Sunday hours.
    pub weekend_dip: f64,
    pub noise_std: f64,
    /// Per-hour spike probability in [0, 1].
    pub spike_rate: f64,
    /// Magnitude distribution of a spike; the draw (at least `spike.u()`)
    /// is added on top of the hour's value.
    pub spike: GpdParams,
    pub seed: u64,
}

/// Generates a seed-deterministic synthetic series. Draws are consumed in
/// a fixed per-hour order, so for a given seed a shorter series is a
/// prefix of a longer one.
pub fn synth_series(cfg: &SynthConfig) -> Result<SeriesFrame, DataError> {
    if cfg.n_hours == 0 {
        return Err(DataError::InvalidConfig("n_hours must be >= 1".into()));
    }
    for (name, v) in [
        ("base", cfg.base),
        ("daily_amplitude", cfg.daily_amplitude),
        ("weekend_dip", cfg.weekend_dip),
        ("noise_std", cfg.noise_std),
    ] {
        if !v.is_finite() || (name != "base" && v < 0.0) {
            return Err(DataError::InvalidConfig(format!("{name} = {v}")));
        }
    }
    if !(0.0..=1.0).contains(&cfg.spike_rate) {
        return Err(DataError::InvalidConfig(format!(
            "spike_rate = {} outside [0, 1]",
            cfg.spike_rate
        )));
    }
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_std)
        .map_err(|e| DataError::InvalidConfig(format!("noise_std: {e}")))?;
    let start = synth_start();
    let phase = std::f64::consts::FRAC_PI_2 - 2.0 * std::f64::consts::PI * DAILY_PEAK_HOUR / 24.0;

    let mut timestamps = Vec::with_capacity(cfg.n_hours);
    let mut values = Vec::with_capacity(cfg.n_hours);
    for t in 0..cfg.n_hours {
        let ts = start + Duration::hours(t as i64);
        let angle = 2.0 * std::f64::consts::PI * t as f64 / 24.0 + phase;
        let mut y = cfg.base + cfg.daily_amplitude * angle.sin();
        if matches!(ts.weekday(), Weekday::Sat | Weekday::Sun) {
            y -= cfg.weekend_dip;
        }
        y += noise.sample(&mut rng);
        if rng.random::<f64>() < cfg.spike_rate {
            y += gpd_draw(&cfg.spike, &mut rng);
        }
        timestamps.push(ts);
        values.push(y);
    }
    SeriesFrame::new(timestamps, values, Unit::MegaWatts)
}

/// Writes bytes to `path` via a temporary file in the same directory plus
/// an atomic rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Reads a `timestamp,value` CSV with RFC 3339 UTC timestamps. Errors
/// carry 1-based file line numbers.
pub fn read_csv(path: &Path) -> Result<SeriesFrame, DataError> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text)
}

fn parse_csv(text: &str) -> Result<SeriesFrame, DataError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::EmptySeries)?;
    let header = header.trim_end_matches('\r');
    if header != "timestamp,value" {
        return Err(DataError::BadHeader {
            line: 1,
            found: header.to_string(),
        });
    }
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let row = raw.trim_end_matches('\r');
        if row.is_empty() {
            continue;
        }
        let (ts_str, val_str) = row.split_once(',').ok_or_else(|| DataError::Parse {
            line,
            what: "expected two comma-separated fields".into(),
        })?;
        let ts = DateTime::parse_from_rfc3339(ts_str)
            .map_err(|e| DataError::Parse {
                line,
                what: format!("bad timestamp '{ts_str}': {e}"),
            })?
            .with_timezone(&Utc);
        let value: f64 = val_str.parse().map_err(|e| DataError::Parse {
            line,
            what: format!("bad value '{val_str}': {e}"),
        })?;
        if !value.is_finite() {
            return Err(DataError::NonFiniteValue { line });
        }
        // Spacing checks live in the constructor; map their positions back
        // to file lines by construction order.
        timestamps.push(ts);
        values.push(value);
    }
    SeriesFrame::new(timestamps, values, Unit::MegaWatts)
}

/// Serializes the frame as `timestamp,value` rows. Values use the shortest
/// decimal form that parses back to the identical float.
pub fn csv_string(frame: &SeriesFrame) -> String {
    let mut out = String::with_capacity(frame.len() * 32 + 16);
    out.push_str("timestamp,value\n");
    for (ts, v) in frame.timestamps().iter().zip(frame.values()) {
        out.push_str(&ts.to_rfc3339_opts(SecondsFormat::Secs, true));
        out.push(',');
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out
}

/// Writes the frame to `path` atomically.
pub fn write_csv(frame: &SeriesFrame, path: &Path) -> Result<(), DataError> {
    write_atomic(path, csv_string(frame).as_bytes())?;
    Ok(())
}
