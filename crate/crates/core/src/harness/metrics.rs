use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::log::RunLog;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ticks: usize,
    pub duration: f64,
    pub rmse_vx: f64,
    pub rmse_pz: f64,
    pub rmse_theta: f64,
    pub max_abs_theta: f64,
    /// Largest `|theta - theta_ref|`.
    pub max_theta_deviation: f64,
    pub mean_abs_vx: f64,
    pub qp_solves: usize,
    /// Solve-time percentiles in milliseconds; absent without timing data.
    pub qp_ms_p50: Option<f64>,
    pub qp_ms_p90: Option<f64>,
    pub qp_ms_p99: Option<f64>,
    pub qp_ms_max: Option<f64>,
    pub max_kkt_residual: f64,
    pub fell: bool,
    pub failure: Option<String>,
}

pub fn rmse(errors: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = errors
        .into_iter()
        .fold((0.0, 0usize), |(s, n), e| (s + e * e, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Nearest-rank percentile of an already sorted slice.
pub fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q / 100.0 * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Tracking and solver statistics over the records with `t` in `window`
/// (all records when `None`).
pub fn compute_metrics(log: &RunLog, window: Option<(f64, f64)>) -> Result<Metrics> {
    let recs: Vec<_> = log
        .records
        .iter()
        .filter(|r| window.is_none_or(|(a, b)| r.t >= a && r.t <= b))
        .collect();
    if recs.is_empty() {
        return Err(Error::InvalidParameter(
            "no log records in the metrics window".into(),
        ));
    }
    let mut times: Vec<f64> = recs
        .iter()
        .filter_map(|r| r.qp.as_ref().and_then(|q| q.solve_ms))
        .collect();
    times.sort_by(f64::total_cmp);
    Ok(Metrics {
        ticks: recs.len(),
        duration: recs[recs.len() - 1].t - recs[0].t,
        rmse_vx: rmse(recs.iter().map(|r| r.state[3] - r.reference[3])),
        rmse_pz: rmse(recs.iter().map(|r| r.state[1] - r.reference[1])),
        rmse_theta: rmse(recs.iter().map(|r| r.state[2] - r.reference[2])),
        max_abs_theta: recs.iter().map(|r| r.state[2].abs()).fold(0.0, f64::max),
        max_theta_deviation: recs
            .iter()
            .map(|r| (r.state[2] - r.reference[2]).abs())
            .fold(0.0, f64::max),
        mean_abs_vx: recs.iter().map(|r| r.state[3].abs()).sum::<f64>() / recs.len() as f64,
        qp_solves: recs.iter().filter(|r| r.qp.is_some()).count(),
        qp_ms_p50: percentile(&times, 50.0),
        qp_ms_p90: percentile(&times, 90.0),
        qp_ms_p99: percentile(&times, 99.0),
        qp_ms_max: times.last().copied(),
        max_kkt_residual: recs
            .iter()
            .filter_map(|r| r.qp.as_ref().map(|q| q.kkt_residual))
            .fold(0.0, f64::max),
        fell: log.fell(),
        failure: log.failure.clone(),
    })
}
