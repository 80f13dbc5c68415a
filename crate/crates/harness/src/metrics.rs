//! Summary metrics of a closed-loop run, computed from telemetry rows only
//! (plus solve times), so they can be recomputed from the CSV files.

use serde::{Deserialize, Serialize};
use tpc_core::sim::TickRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    /// Time from the last reference change until the output stays in band.
    pub settling_time: Option<f64>,
    pub settling_ticks: Option<usize>,
    /// Largest excursion past the reference in the direction of the last step.
    pub overshoot: f64,
    /// Mean `|y − r|` over the final ticks.
    pub steady_state_error: f64,
    /// Mean output over the final ticks.
    pub steady_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub ticks: usize,
    pub p: Option<ChannelMetrics>,
    pub q: Option<ChannelMetrics>,
    /// Largest realized current magnitude at any plant step after the lead-in.
    pub max_current: f64,
    pub degraded_ticks: usize,
    pub median_solve_time: Option<f64>,
}

/// Ticks averaged for the steady-state figures.
pub const STEADY_WINDOW: usize = 10;

fn channel(rows: &[TickRecord], band: f64, pick: impl Fn(&TickRecord) -> (f64, f64)) -> Option<ChannelMetrics> {
    if rows.is_empty() {
        return None;
    }
    let step = (1..rows.len()).rev().find(|&k| pick(&rows[k]).1 != pick(&rows[k - 1]).1).unwrap_or(0);
    let dir = if step > 0 { (pick(&rows[step]).1 - pick(&rows[step - 1]).1).signum() } else { 1.0 };
    let settled = (step..rows.len())
        .rev()
        .take_while(|&k| {
            let (y, r) = pick(&rows[k]);
            (y - r).abs() <= band
        })
        .last();
    let overshoot = rows[step..]
        .iter()
        .map(|row| {
            let (y, r) = pick(row);
            dir * (y - r)
        })
        .fold(0.0, f64::max);
    let tail = &rows[rows.len().saturating_sub(STEADY_WINDOW)..];
    let n = tail.len() as f64;
    let steady_state_error = tail.iter().map(|row| (pick(row).0 - pick(row).1).abs()).sum::<f64>() / n;
    let steady_value = tail.iter().map(|row| pick(row).0).sum::<f64>() / n;
    Some(ChannelMetrics {
        settling_time: settled.map(|k| rows[k].time - rows[step].time),
        settling_ticks: settled.map(|k| k - step),
        overshoot,
        steady_state_error,
        steady_value,
    })
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

/// `solve_times` holds the times of ticks that ran the solver.
pub fn compute(rows: &[TickRecord], solve_times: &[f64], lead_in: usize, band: f64) -> RunMetrics {
    let mut times = solve_times.to_vec();
    RunMetrics {
        ticks: rows.len(),
        p: channel(rows, band, |r| (r.y_clean[0], r.p_ref)),
        q: channel(rows, band, |r| (r.y_clean[1], r.q_ref)),
        max_current: rows.iter().skip(lead_in).map(|r| r.max_current).fold(0.0, f64::max),
        degraded_ticks: rows.iter().filter(|r| r.degraded).count(),
        median_solve_time: median(&mut times),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize, p: f64, p_ref: f64) -> TickRecord {
        TickRecord {
            tick: k,
            time: k as f64 * 0.01,
            p_ref,
            q_ref: 0.0,
            y_meas: [p, 0.0, p, 0.0],
            y_clean: [p, 0.0, p, 0.0],
            u: [0.0; 2],
            y_hat: [0.0; 4],
            status: None,
            iterations: 0,
            degraded: false,
            max_current: p.abs(),
        }
    }

    #[test]
    fn step_metrics() {
        let ys = [0.0, 0.0, 0.1, 0.25, 0.33, 0.31, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3];
        let rows: Vec<_> = ys.iter().enumerate().map(|(k, &y)| row(k, y, if k < 2 { 0.0 } else { 0.3 })).collect();
        let m = compute(&rows, &[], 0, 0.02);
        let p = m.p.unwrap();
        assert_eq!(p.settling_ticks, Some(3));
        assert!((p.overshoot - 0.03).abs() < 1e-12);
        assert!((m.max_current - 0.33).abs() < 1e-12);
        let q = m.q.unwrap();
        assert_eq!(q.settling_ticks, Some(0));
    }

    #[test]
    fn never_settling_and_empty() {
        let rows: Vec<_> = (0..5).map(|k| row(k, 0.0, 0.3)).collect();
        assert_eq!(compute(&rows, &[], 0, 0.02).p.unwrap().settling_time, None);
        let m = compute(&[], &[], 0, 0.02);
        assert!(m.p.is_none() && m.median_solve_time.is_none());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
