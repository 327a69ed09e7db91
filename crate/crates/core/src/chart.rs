//! Phase II: prediction-interval control limits and online monitoring.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{format_f64, TimeSeries};
use crate::ensemble::{predict_total_std, UncertaintyBundle};
use crate::error::{Error, Result};

/// Two-sided standard-normal quantile for α = 0.02.
pub const DEFAULT_Z: f64 = 2.326;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartConfig {
    pub z: f64,
    /// Expected window length; `None` accepts the predictor's.
    #[serde(default)]
    pub window_len: Option<usize>,
}

impl Default for ChartConfig {
    fn default() -> Self {
        Self {
            z: DEFAULT_Z,
            window_len: None,
        }
    }
}

impl ChartConfig {
    pub fn with_z(z: f64) -> Self {
        Self {
            z,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z > 0.0) || !self.z.is_finite() {
            return Err(Error::Config(format!("z must be positive and finite, got {}", self.z)));
        }
        Ok(())
    }
}

/// Classification of one monitored point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlarmRecord {
    /// 0-based position in the monitored series.
    pub index: usize,
    pub value: f64,
    /// Chart center.
    pub f_hat: f64,
    pub s: f64,
    pub lcl: f64,
    pub ucl: f64,
    /// `lcl ≤ value ≤ ucl`.
    pub in_control: bool,
}

/// `(f̂ − z·s, f̂ + z·s)`.
pub fn limits(f_hat: f64, s: f64, z: f64) -> Result<(f64, f64)> {
    if !(s > 0.0) {
        return Err(Error::Domain(format!("spread s must be positive, got {s}")));
    }
    if !(z > 0.0) {
        return Err(Error::Domain(format!("z must be positive, got {z}")));
    }
    Ok((f_hat - z * s, f_hat + z * s))
}

/// Anything that maps the preceding window to a chart center and spread.
pub trait IntervalPredictor {
    fn window_len(&self) -> usize;
    /// `(center, s)` for the point following `window`.
    fn interval(&self, window: &[f64]) -> Result<(f64, f64)>;
}

impl IntervalPredictor for UncertaintyBundle {
    fn window_len(&self) -> usize {
        UncertaintyBundle::window_len(self)
    }

    fn interval(&self, window: &[f64]) -> Result<(f64, f64)> {
        predict_total_std(self, window)
    }
}

/// Classifies every point from position `w` onward against limits built
/// from the `w` observed values before it. Alarms never reset the chart.
pub fn monitor<P: IntervalPredictor + ?Sized>(
    predictor: &P,
    series: &TimeSeries,
    cfg: &ChartConfig,
) -> Result<Vec<AlarmRecord>> {
    monitor_values(predictor, series.values(), cfg)
}

pub fn monitor_values<P: IntervalPredictor + ?Sized>(
    predictor: &P,
    values: &[f64],
    cfg: &ChartConfig,
) -> Result<Vec<AlarmRecord>> {
    cfg.validate()?;
    let w = predictor.window_len();
    if let Some(expected) = cfg.window_len {
        if expected != w {
            return Err(Error::Config(format!(
                "chart expects window length {expected} but the model uses {w}"
            )));
        }
    }
    if values.len() < w + 1 {
        return Err(Error::Input(format!(
            "series of length {} has no point to monitor with window {w}",
            values.len()
        )));
    }
    (w..values.len())
        .map(|i| {
            let (center, s) = predictor.interval(&values[i - w..i])?;
            let (lcl, ucl) = limits(center, s, cfg.z)?;
            let value = values[i];
            Ok(AlarmRecord {
                index: i,
                value,
                f_hat: center,
                s,
                lcl,
                ucl,
                in_control: lcl <= value && value <= ucl,
            })
        })
        .collect()
}

/// Index of the first out-of-control record.
pub fn first_alarm(records: &[AlarmRecord]) -> Option<usize> {
    records.iter().find(|r| !r.in_control).map(|r| r.index)
}

pub const ALARM_HEADER: &str = "index,value,f_hat,s,lcl,ucl,in_control";

pub fn alarms_csv(records: &[AlarmRecord]) -> String {
    let mut out = String::from(ALARM_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.index,
            format_f64(r.value),
            format_f64(r.f_hat),
            format_f64(r.s),
            format_f64(r.lcl),
            format_f64(r.ucl),
            r.in_control
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Predicts the last value with a fixed spread.
    struct Persistence(f64);

    impl IntervalPredictor for Persistence {
        fn window_len(&self) -> usize {
            2
        }
        fn interval(&self, window: &[f64]) -> Result<(f64, f64)> {
            Ok((window[window.len() - 1], self.0))
        }
    }

    #[test]
    fn limit_examples() {
        assert_eq!(limits(0.0, 1.0, 2.326).unwrap(), (-2.326, 2.326));
        assert_eq!(limits(5.0, 0.5, 2.0).unwrap(), (4.0, 6.0));
        let (l, u) = limits(1.3, 0.7, 3.1).unwrap();
        assert!((u - l - 2.0 * 3.1 * 0.7).abs() < 1e-12);
        assert!(matches!(limits(0.0, 0.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn counts_and_boundary() {
        let values = [0.0, 0.0, 1.0, 1.0, 5.0];
        let recs = monitor_values(&Persistence(0.5), &values, &ChartConfig::with_z(2.0)).unwrap();
        assert_eq!(recs.len(), values.len() - 2);
        // 1.0 lies exactly on the upper limit 0 + 2·0.5
        assert!(recs[0].in_control);
        assert!(!recs[2].in_control);
        assert_eq!(first_alarm(&recs), Some(4));
    }

    #[test]
    fn first_alarm_examples() {
        let rec = |index, in_control| AlarmRecord {
            index,
            value: 0.0,
            f_hat: 0.0,
            s: 1.0,
            lcl: -1.0,
            ucl: 1.0,
            in_control,
        };
        assert_eq!(first_alarm(&[rec(3, true)]), None);
        assert_eq!(first_alarm(&[rec(400, true), rec(410, false), rec(420, false)]), Some(410));
        assert_eq!(first_alarm(&[rec(1, false)]), Some(1));
    }

    #[test]
    fn short_series_and_window_mismatch() {
        assert!(matches!(
            monitor_values(&Persistence(1.0), &[1.0, 2.0], &ChartConfig::default()),
            Err(Error::Input(_))
        ));
        let cfg = ChartConfig {
            window_len: Some(5),
            ..ChartConfig::default()
        };
        assert!(matches!(
            monitor_values(&Persistence(1.0), &[1.0; 10], &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn csv_has_one_row_per_record() {
        let recs = monitor_values(&Persistence(1.0), &[0.0; 6], &ChartConfig::default()).unwrap();
        let csv = alarms_csv(&recs);
        assert_eq!(csv.lines().count(), 1 + 4);
        assert!(csv.starts_with(ALARM_HEADER));
    }
}
