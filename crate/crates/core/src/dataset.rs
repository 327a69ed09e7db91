//! Series ingestion, moving-window restructuring, splitting, bootstrap
//! resampling and the two case-study preprocessors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, NaiveDate, SecondsFormat, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Sample;

/// Ordered real observations with optional strictly increasing timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    values: Vec<f64>,
    timestamps: Option<Vec<DateTime<Utc>>>,
    pub label: String,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite value at position {i}")));
        }
        Ok(Self {
            values,
            timestamps: None,
            label: String::new(),
        })
    }

    pub fn with_timestamps(values: Vec<f64>, timestamps: Vec<DateTime<Utc>>) -> Result<Self> {
        if values.len() != timestamps.len() {
            return Err(Error::Input(format!(
                "{} values but {} timestamps",
                values.len(),
                timestamps.len()
            )));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Input(format!(
                "timestamps not strictly increasing at position {}",
                i + 1
            )));
        }
        let mut s = Self::new(values)?;
        s.timestamps = Some(timestamps);
        Ok(s)
    }

    pub fn labeled(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn timestamps(&self) -> Option<&[DateTime<Utc>]> {
        self.timestamps.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn slice(&self, range: std::ops::Range<usize>) -> TimeSeries {
        TimeSeries {
            values: self.values[range.clone()].to_vec(),
            timestamps: self.timestamps.as_ref().map(|t| t[range].to_vec()),
            label: self.label.clone(),
        }
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &TimeSeries) -> Result<TimeSeries> {
        let values = [self.values.as_slice(), other.values.as_slice()].concat();
        match (&self.timestamps, &other.timestamps) {
            (None, None) => Ok(TimeSeries::new(values)?.labeled(self.label.clone())),
            (Some(a), Some(b)) => {
                Ok(TimeSeries::with_timestamps(values, [a.as_slice(), b.as_slice()].concat())?
                    .labeled(self.label.clone()))
            }
            _ => Err(Error::Input(
                "cannot join a timestamped series with an untimestamped one".into(),
            )),
        }
    }
}

/// One supervised pair: `window = x[origin..origin + w]`, `label = x[origin + w]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub window: Vec<f64>,
    pub label: f64,
    /// 0-based position of the window's first element in the source series.
    pub origin: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowedPairs {
    pub window_len: usize,
    pub pairs: Vec<Pair>,
}

impl WindowedPairs {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn samples(&self) -> Vec<Sample> {
        self.pairs
            .iter()
            .map(|p| Sample::new(p.window.clone(), p.label))
            .collect()
    }

    /// Samples at `indices`, repeats included.
    pub fn select(&self, indices: &[usize]) -> Vec<Sample> {
        indices
            .iter()
            .map(|&i| Sample::new(self.pairs[i].window.clone(), self.pairs[i].label))
            .collect()
    }
}

/// Moving-window restructuring into `(window, next value)` pairs.
pub fn make_windows(series: &TimeSeries, w: usize) -> Result<WindowedPairs> {
    if w == 0 {
        return Err(Error::Input("window length must be positive".into()));
    }
    if series.len() < w + 1 {
        return Err(Error::Input(format!(
            "series of length {} is too short for window {w}",
            series.len()
        )));
    }
    let x = series.values();
    let pairs = (0..x.len() - w)
        .map(|i| Pair {
            window: x[i..i + w].to_vec(),
            label: x[i + w],
            origin: i,
        })
        .collect();
    Ok(WindowedPairs { window_len: w, pairs })
}

/// Order-preserving prefix/suffix split.
pub fn split_train_test(series: &TimeSeries, n_train: usize) -> Result<(TimeSeries, TimeSeries)> {
    if n_train == 0 || n_train >= series.len() {
        return Err(Error::Input(format!(
            "n_train must lie in 1..{}, got {n_train}",
            series.len()
        )));
    }
    Ok((series.slice(0..n_train), series.slice(n_train..series.len())))
}

/// A bootstrap bag and its out-of-bag complement.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapSplit {
    /// Sampled indices, with replacement, in draw order.
    pub bag: Vec<usize>,
    /// Sorted indices never drawn.
    pub oob: Vec<usize>,
}

/// Draws `n` indices uniformly with replacement from the pairs.
pub fn bootstrap_resample(pairs: &WindowedPairs, n: usize, seed: u64) -> Result<BootstrapSplit> {
    bootstrap_indices(pairs.len(), n, seed)
}

pub(crate) fn bootstrap_indices(count: usize, n: usize, seed: u64) -> Result<BootstrapSplit> {
    if count == 0 {
        return Err(Error::Input("cannot resample an empty pair set".into()));
    }
    if n == 0 {
        return Err(Error::Input("resample size must be positive".into()));
    }
    crate::audit::record(crate::audit::Component::BootstrapDraw);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bag: Vec<usize> = (0..n).map(|_| rng.gen_range(0..count)).collect();
    let mut seen = vec![false; count];
    for &i in &bag {
        seen[i] = true;
    }
    let oob = (0..count).filter(|&i| !seen[i]).collect();
    Ok(BootstrapSplit { bag, oob })
}

/// Vibration summary `√(Σ aᵢ² / 1.5)` of an averaged amplitude spectrum.
pub fn at_summary(amplitudes: &[f64]) -> Result<f64> {
    if amplitudes.is_empty() {
        return Err(Error::Input("empty amplitude spectrum".into()));
    }
    if amplitudes.iter().any(|a| !a.is_finite()) {
        return Err(Error::Input("non-finite amplitude".into()));
    }
    Ok((amplitudes.iter().map(|a| a * a).sum::<f64>() / 1.5).sqrt())
}

/// Bucket averaging and service-hour filtering for minute-level meter data.
///
/// Times are minutes after midnight UTC. A bucket is kept when its start
/// lies strictly inside the service window `(service_start, service_end)`,
/// which may wrap past midnight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyResampleConfig {
    pub bucket_minutes: u32,
    /// `None` keeps every bucket.
    pub service_window: Option<(u32, u32)>,
    /// Start of the service day, e.g. 240 for 04:00.
    pub day_boundary: u32,
}

impl Default for EnergyResampleConfig {
    fn default() -> Self {
        Self {
            bucket_minutes: 30,
            service_window: Some((5 * 60 + 30, 30)),
            day_boundary: 4 * 60,
        }
    }
}

impl EnergyResampleConfig {
    pub fn validate(&self) -> Result<()> {
        const DAY: u32 = 24 * 60;
        if self.bucket_minutes == 0 || DAY % self.bucket_minutes != 0 {
            return Err(Error::Config(format!(
                "bucket of {} minutes does not divide a day",
                self.bucket_minutes
            )));
        }
        let in_day = |m: u32| m < DAY;
        if !in_day(self.day_boundary)
            || self
                .service_window
                .is_some_and(|(a, b)| !in_day(a) || !in_day(b) || a == b)
        {
            return Err(Error::Config("service times must be distinct minutes within a day".into()));
        }
        Ok(())
    }

    fn keeps(&self, minute_of_day: u32) -> bool {
        match self.service_window {
            None => true,
            Some((start, end)) if start < end => start < minute_of_day && minute_of_day < end,
            Some((start, end)) => minute_of_day > start || minute_of_day < end,
        }
    }

    /// Service date a timestamp belongs to.
    pub fn service_day(&self, t: DateTime<Utc>) -> NaiveDate {
        (t - chrono::Duration::minutes(self.day_boundary as i64)).date_naive()
    }
}

/// Averages minute readings into buckets, then drops out-of-service buckets.
/// The output is stamped with bucket start times.
pub fn resample_energy(minutes: &TimeSeries, cfg: &EnergyResampleConfig) -> Result<TimeSeries> {
    cfg.validate()?;
    let ts = minutes
        .timestamps()
        .ok_or_else(|| Error::Input("energy resampling needs timestamps".into()))?;
    let bucket_secs = cfg.bucket_minutes as i64 * 60;
    let mut buckets: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for (t, v) in ts.iter().zip(minutes.values()) {
        let start = t.timestamp().div_euclid(bucket_secs) * bucket_secs;
        let e = buckets.entry(start).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    let mut values = Vec::with_capacity(buckets.len());
    let mut stamps = Vec::with_capacity(buckets.len());
    for (start, (sum, count)) in buckets {
        let t = DateTime::<Utc>::from_timestamp(start, 0)
            .ok_or_else(|| Error::Input(format!("timestamp {start} out of range")))?;
        let minute_of_day = t.hour() * 60 + t.minute();
        if cfg.keeps(minute_of_day) {
            values.push(sum / count as f64);
            stamps.push(t);
        }
    }
    Ok(TimeSeries::with_timestamps(values, stamps)?.labeled(minutes.label.clone()))
}

/// 17 significant digits; parses back to the identical `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Parses `timestamp,value` or `value` CSV, with an optional header line.
pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(parse_csv(&text, path)?.labeled(label))
}

pub(crate) fn parse_csv(text: &str, path: &Path) -> Result<TimeSeries> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut values = Vec::new();
    let mut stamps = Vec::new();
    let mut columns: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r').trim_start_matches('\u{feff}').trim();
        if line.is_empty() {
            continue;
        }
        if columns.is_none() {
            let lower = line.to_ascii_lowercase();
            if lower == "timestamp,value" || lower == "value" {
                columns = Some(lower.split(',').count());
                continue;
            }
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let expected = *columns.get_or_insert(fields.len());
        if fields.len() != expected || !(1..=2).contains(&expected) {
            return Err(parse_err(
                line_no,
                format!("expected {expected} column(s), found {}", fields.len()),
            ));
        }
        let raw_value = fields[expected - 1];
        let value: f64 = raw_value
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid number {raw_value:?}")))?;
        if !value.is_finite() {
            return Err(Error::Input(format!("non-finite value on line {line_no}")));
        }
        values.push(value);
        if expected == 2 {
            let t = DateTime::parse_from_rfc3339(fields[0])
                .map_err(|e| parse_err(line_no, format!("invalid timestamp {:?}: {e}", fields[0])))?;
            stamps.push(t.with_timezone(&Utc));
        }
    }
    if columns == Some(2) {
        TimeSeries::with_timestamps(values, stamps)
    } else {
        TimeSeries::new(values)
    }
}

pub(crate) fn render_csv(series: &TimeSeries) -> String {
    let mut out = String::new();
    match series.timestamps() {
        Some(ts) => {
            out.push_str("timestamp,value\n");
            for (t, v) in ts.iter().zip(series.values()) {
                let _ = writeln!(out, "{},{}", format_timestamp(t), format_f64(*v));
            }
        }
        None => {
            out.push_str("value\n");
            for v in series.values() {
                let _ = writeln!(out, "{}", format_f64(*v));
            }
        }
    }
    out
}

pub fn write_csv(series: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_csv(series)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn series(v: &[f64]) -> TimeSeries {
        TimeSeries::new(v.to_vec()).unwrap()
    }

    #[test]
    fn windows_enumerate_pairs() {
        let p = make_windows(&series(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(p.pairs.len(), 2);
        assert_eq!(p.pairs[0].window, vec![1.0, 2.0]);
        assert_eq!(p.pairs[0].label, 3.0);
        assert_eq!(p.pairs[1].window, vec![2.0, 3.0]);
        assert_eq!(p.pairs[1].label, 4.0);
    }

    #[test]
    fn window_count_and_constant_labels() {
        let long = series(&vec![0.5; 500]);
        assert_eq!(make_windows(&long, 5).unwrap().len(), 495);
        let c = make_windows(&series(&[3.0; 4]), 2).unwrap();
        assert!(c.pairs.iter().all(|p| p.label == 3.0));
    }

    #[test]
    fn short_series_is_rejected() {
        assert!(matches!(make_windows(&series(&[1.0, 2.0]), 2), Err(Error::Input(_))));
        assert!(matches!(make_windows(&series(&[1.0, 2.0]), 0), Err(Error::Input(_))));
    }

    #[test]
    fn split_sizes_and_partition() {
        let s = series(&(0..500).map(|i| i as f64).collect::<Vec<_>>());
        let (a, b) = split_train_test(&s, 350).unwrap();
        assert_eq!((a.len(), b.len()), (350, 150));
        assert_eq!(a.concat(&b).unwrap(), s);
        let (_, one) = split_train_test(&s, 499).unwrap();
        assert_eq!(one.values(), &[499.0]);
        assert!(split_train_test(&s, 0).is_err());
        assert!(split_train_test(&s, 500).is_err());
    }

    #[test]
    fn single_pair_bootstrap() {
        let pairs = make_windows(&series(&[1.0, 2.0]), 1).unwrap();
        let b = bootstrap_resample(&pairs, 3, 9).unwrap();
        assert_eq!(b.bag, vec![0, 0, 0]);
        assert!(b.oob.is_empty());
    }

    #[test]
    fn bootstrap_is_seeded() {
        let pairs = make_windows(&series(&(0..50).map(f64::from).collect::<Vec<_>>()), 3).unwrap();
        assert_eq!(
            bootstrap_resample(&pairs, 47, 4).unwrap(),
            bootstrap_resample(&pairs, 47, 4).unwrap()
        );
        assert_ne!(
            bootstrap_resample(&pairs, 47, 4).unwrap(),
            bootstrap_resample(&pairs, 47, 5).unwrap()
        );
    }

    #[test]
    fn oob_fraction_approaches_inverse_e() {
        // (1 − 1/n)^n for n = 1000
        let analytic = (1.0 - 1.0 / 1000.0f64).powi(1000);
        let mean = (0..200u64)
            .map(|s| bootstrap_indices(1000, 1000, s).unwrap().oob.len() as f64 / 1000.0)
            .sum::<f64>()
            / 200.0;
        assert!((mean - analytic).abs() < 0.02, "mean oob {mean}");
        assert!((mean - (-1.0f64).exp()).abs() < 0.02);
    }

    #[test]
    fn at_summary_examples() {
        assert_eq!(at_summary(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((at_summary(&[3.0]).unwrap() - 6f64.sqrt()).abs() < 1e-15);
        assert!((at_summary(&[1.0, 1.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(at_summary(&[]), Err(Error::Input(_))));
    }

    fn minute_day(value: impl Fn(usize) -> f64) -> TimeSeries {
        let start = Utc.with_ymd_and_hms(2022, 10, 24, 0, 0, 0).unwrap();
        let ts = (0..1440).map(|m| start + chrono::Duration::minutes(m as i64)).collect();
        TimeSeries::with_timestamps((0..1440).map(value).collect(), ts).unwrap()
    }

    #[test]
    fn energy_buckets_and_service_filter() {
        let day = minute_day(|_| 2.5);
        let unfiltered = EnergyResampleConfig {
            service_window: None,
            ..Default::default()
        };
        let all = resample_energy(&day, &unfiltered).unwrap();
        assert_eq!(all.len(), 48);
        assert!(all.values().iter().all(|&v| v == 2.5));
        let kept = resample_energy(&day, &EnergyResampleConfig::default()).unwrap();
        assert_eq!(kept.len(), 37);
    }

    #[test]
    fn energy_bucket_means() {
        let day = minute_day(|m| m as f64);
        let cfg = EnergyResampleConfig {
            service_window: None,
            ..Default::default()
        };
        let out = resample_energy(&day, &cfg).unwrap();
        assert_eq!(out.values()[0], 14.5);
        assert_eq!(out.values()[47], (1410.0 + 1439.0) / 2.0);
    }

    #[test]
    fn energy_needs_timestamps() {
        assert!(matches!(
            resample_energy(&series(&[1.0]), &EnergyResampleConfig::default()),
            Err(Error::Input(_))
        ));
        let bad = EnergyResampleConfig {
            bucket_minutes: 7,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn service_day_rolls_at_boundary() {
        let cfg = EnergyResampleConfig::default();
        let late = Utc.with_ymd_and_hms(2022, 10, 25, 3, 59, 0).unwrap();
        let early = Utc.with_ymd_and_hms(2022, 10, 25, 4, 0, 0).unwrap();
        assert_eq!(cfg.service_day(late), NaiveDate::from_ymd_opt(2022, 10, 24).unwrap());
        assert_eq!(cfg.service_day(early), NaiveDate::from_ymd_opt(2022, 10, 25).unwrap());
    }

    #[test]
    fn csv_formats() {
        let p = Path::new("mem.csv");
        let s = parse_csv("timestamp,value\r\n2022-01-01T00:00:00Z,1.5\r\n2022-01-01T00:01:00Z,2\r\n", p).unwrap();
        assert_eq!(s.values(), &[1.5, 2.0]);
        assert_eq!(s.timestamps().unwrap().len(), 2);
        let s = parse_csv("value\n1\n2\n3\n", p).unwrap();
        assert!(s.timestamps().is_none());
        let s = parse_csv("4\n5\n", p).unwrap();
        assert_eq!(s.values(), &[4.0, 5.0]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let p = Path::new("bad.csv");
        match parse_csv("value\n1\nabc\n", p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match parse_csv("1\n2,3\n", p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_csv("value\nNaN\n", p), Err(Error::Input(_))));
        assert!(matches!(parse_csv("value\ninf\n", p), Err(Error::Input(_))));
    }
}
