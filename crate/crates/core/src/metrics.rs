//! Run-level detection metrics and their aggregation into report tables.
//!
//! Times are 1-based. The post-change window is `τ..=T`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Alarm times of one monitored series.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub tau: usize,
    #[serde(rename = "T")]
    pub len: usize,
    /// Strictly increasing, within `1..=T`.
    alarms: Vec<usize>,
}

impl RunOutcome {
    pub fn new(tau: usize, len: usize, alarms: Vec<usize>) -> Result<Self> {
        if tau == 0 || tau > len {
            return Err(Error::Input(format!("tau {tau} outside 1..={len}")));
        }
        if alarms.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input("alarm times must be strictly increasing".into()));
        }
        if alarms.first().is_some_and(|&a| a == 0) || alarms.last().is_some_and(|&a| a > len) {
            return Err(Error::Input(format!("alarm time outside 1..={len}")));
        }
        Ok(Self { tau, len, alarms })
    }

    pub fn alarms(&self) -> &[usize] {
        &self.alarms
    }

    pub fn first_alarm(&self) -> Option<usize> {
        self.alarms.first().copied()
    }

    /// First alarm at or after the change point.
    pub fn first_post_change_alarm(&self) -> Option<usize> {
        let i = self.alarms.partition_point(|&a| a < self.tau);
        self.alarms.get(i).copied()
    }

    pub fn post_change_alarms(&self) -> usize {
        self.alarms.len() - self.alarms.partition_point(|&a| a < self.tau)
    }

    pub fn post_change_len(&self) -> usize {
        self.len - self.tau + 1
    }
}

fn nonempty(runs: &[RunOutcome]) -> Result<()> {
    if runs.is_empty() {
        return Err(Error::Input("no runs to evaluate".into()));
    }
    Ok(())
}

/// Share of runs whose first alarm precedes the change point.
pub fn fap(runs: &[RunOutcome]) -> Result<f64> {
    nonempty(runs)?;
    let hits = runs
        .iter()
        .filter(|r| r.first_alarm().is_some_and(|a| a < r.tau))
        .count();
    Ok(hits as f64 / runs.len() as f64)
}

/// Mean delay `t_A − τ` over runs with an alarm at or after `τ`, where
/// `t_A` is the first such alarm. `None` when no run qualifies.
pub fn ced(runs: &[RunOutcome]) -> Option<f64> {
    let delays: Vec<usize> = runs
        .iter()
        .filter_map(|r| r.first_post_change_alarm().map(|a| a - r.tau))
        .collect();
    if delays.is_empty() {
        return None;
    }
    Some(delays.iter().sum::<usize>() as f64 / delays.len() as f64)
}

/// Share of runs with at least one alarm in `τ..=T`.
pub fn dr(runs: &[RunOutcome]) -> Result<f64> {
    nonempty(runs)?;
    let hits = runs.iter().filter(|r| r.post_change_alarms() > 0).count();
    Ok(hits as f64 / runs.len() as f64)
}

/// Percentage of post-change points that alarmed.
pub fn recall(run: &RunOutcome) -> f64 {
    100.0 * run.post_change_alarms() as f64 / run.post_change_len() as f64
}

pub fn mean_recall(runs: &[RunOutcome]) -> Result<f64> {
    nonempty(runs)?;
    Ok(runs.iter().map(recall).sum::<f64>() / runs.len() as f64)
}

/// One run tagged with its grouping keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: String,
    pub phi: f64,
    pub delta: f64,
    pub seed: u64,
    pub outcome: RunOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub phi: f64,
    pub delta: f64,
    pub reps: usize,
    pub fap: f64,
    pub dr: f64,
    pub ced: Option<f64>,
    pub recall: f64,
}

impl MetricsReport {
    /// Metrics of one `(model, φ, δ)` group. All runs must share `τ` and `T`.
    pub fn from_runs(model: &str, phi: f64, delta: f64, runs: &[RunOutcome]) -> Result<Self> {
        nonempty(runs)?;
        if runs.iter().any(|r| r.tau != runs[0].tau || r.len != runs[0].len) {
            return Err(Error::Input(format!(
                "group {model}/{phi}/{delta} mixes change points or lengths"
            )));
        }
        Ok(Self {
            model: model.to_string(),
            phi,
            delta,
            reps: runs.len(),
            fap: fap(runs)?,
            dr: dr(runs)?,
            ced: ced(runs),
            recall: mean_recall(runs)?,
        })
    }
}

/// One report per `(model, φ, δ)`, in order of first appearance.
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<MetricsReport>> {
    let mut keys: Vec<(&str, u64, u64)> = Vec::new();
    let mut groups: Vec<Vec<RunOutcome>> = Vec::new();
    for r in records {
        let key = (r.model.as_str(), r.phi.to_bits(), r.delta.to_bits());
        match keys.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(r.outcome.clone()),
            None => {
                keys.push(key);
                groups.push(vec![r.outcome.clone()]);
            }
        }
    }
    keys.iter()
        .zip(&groups)
        .map(|(&(m, p, d), runs)| MetricsReport::from_runs(m, f64::from_bits(p), f64::from_bits(d), runs))
        .collect()
}

pub const REPORT_HEADER: &str = "model,phi,delta,reps,FAP,DR,CED,Recall";

/// Report CSV; an undefined CED is an empty field.
pub fn report_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        let ced = r.ced.map(|c| c.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.model, r.phi, r.delta, r.reps, r.fap, r.dr, ced, r.recall
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(alarms: &[usize]) -> RunOutcome {
        RunOutcome::new(401, 500, alarms.to_vec()).unwrap()
    }

    #[test]
    fn fap_examples() {
        assert!((fap(&[run(&[350]), run(&[]), run(&[450])]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(fap(&[run(&[]), run(&[])]).unwrap(), 0.0);
        assert_eq!(fap(&[run(&[1]), run(&[400, 450])]).unwrap(), 1.0);
        assert!(matches!(fap(&[]), Err(Error::Input(_))));
    }

    #[test]
    fn ced_examples() {
        assert_eq!(ced(&[run(&[405]), run(&[411])]), Some(7.0));
        assert_eq!(ced(&[run(&[401])]), Some(0.0));
        assert_eq!(ced(&[run(&[300, 400])]), None);
        assert_eq!(ced(&[run(&[300, 403])]), Some(2.0));
    }

    #[test]
    fn dr_and_recall_examples() {
        assert_eq!(dr(&[run(&[350])]).unwrap(), 0.0);
        assert_eq!(dr(&[run(&[500])]).unwrap(), 1.0);
        assert_eq!(recall(&run(&(401..=500).collect::<Vec<_>>())), 100.0);
        assert_eq!(recall(&run(&[350])), 0.0);
        assert_eq!(recall(&run(&(401..426).collect::<Vec<_>>())), 25.0);
    }

    #[test]
    fn outcome_validation() {
        assert!(RunOutcome::new(401, 500, vec![3, 3]).is_err());
        assert!(RunOutcome::new(401, 500, vec![501]).is_err());
        assert!(RunOutcome::new(501, 500, vec![]).is_err());
        assert!(RunOutcome::new(401, 500, vec![0]).is_err());
    }

    #[test]
    fn aggregate_groups_in_order() {
        let rec = |m: &str, d: f64, a: &[usize]| RunRecord {
            model: m.into(),
            phi: 0.1,
            delta: d,
            seed: 0,
            outcome: run(a),
        };
        let reports = aggregate(&[
            rec("b", 1.0, &[402]),
            rec("a", 1.0, &[]),
            rec("b", 1.0, &[300]),
        ])
        .unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!((reports[0].model.as_str(), reports[0].reps), ("b", 2));
        assert_eq!(reports[0].fap, 0.5);
        assert_eq!(reports[1].ced, None);
        let csv = report_csv(&reports);
        assert!(csv.starts_with("model,phi,delta,reps,FAP,DR,CED,Recall\n"));
        assert!(csv.lines().nth(2).unwrap().contains(",0,0,,0"));
    }

    #[test]
    fn mixed_groups_are_rejected() {
        let a = run(&[]);
        let b = RunOutcome::new(400, 500, vec![]).unwrap();
        assert!(MetricsReport::from_runs("m", 0.1, 0.0, &[a, b]).is_err());
    }
}
