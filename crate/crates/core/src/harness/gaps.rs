//! Gap events `τ_n - τ_{n-1} < a_n` over an ensemble of trajectories.

use serde::{Deserialize, Serialize};

use crate::solver::TrajectoryRecord;
use crate::stats::wilson_interval;

use super::HarnessError;

/// Normal quantile for the 95% Wilson interval.
pub const WILSON_Z: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub n: u32,
    pub a_n: f64,
    /// Trajectories that crossed `base^{n-1}` after the start.
    pub tau_prev_observed: u64,
    pub violations: u64,
    /// Trajectories whose gap is decided: `τ_n` observed, or censored at a
    /// time at least `a_n` past `τ_{n-1}`.
    pub total: u64,
    /// Censored before `a_n` elapsed, so the event cannot be decided.
    pub indeterminate: u64,
    pub freq: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryViolations {
    pub index: u64,
    pub violations: u32,
    /// Largest `n` with a violation.
    pub last_violation: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapTable {
    pub rows: Vec<GapRow>,
    pub per_trajectory: Vec<TrajectoryViolations>,
    /// `Σ_n P̂_n` over the rows.
    pub borel_cantelli: f64,
}

/// Time at which the trajectory stopped being observed.
fn censor_time(r: &TrajectoryRecord) -> f64 {
    r.final_time
}

/// Tabulate gap events for `n = 1..=a.len()` (`a[n-1] = a_n`).
///
/// A pair `(τ_{n-1}, τ_n)` is used only when `τ_{n-1}` is a genuine crossing:
/// levels already exceeded at time zero are skipped, since the sup-norm there
/// is not `base^{n-1}`. Rows are emitted only for `n` where some trajectory
/// crossed `base^{n-1}`.
pub fn gap_statistics(records: &[TrajectoryRecord], a: &[f64]) -> Result<GapTable, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::Config("no trajectory records".into()));
    }
    let mut per_trajectory: Vec<TrajectoryViolations> = records
        .iter()
        .map(|r| TrajectoryViolations {
            index: r.index,
            violations: 0,
            last_violation: None,
        })
        .collect();
    let mut rows = Vec::new();
    for (i, &a_n) in a.iter().enumerate() {
        let n = (i + 1) as u32;
        let mut row = GapRow {
            n,
            a_n,
            tau_prev_observed: 0,
            violations: 0,
            total: 0,
            indeterminate: 0,
            freq: 0.0,
            ci_lo: 0.0,
            ci_hi: 1.0,
        };
        for (r, tv) in records.iter().zip(per_trajectory.iter_mut()) {
            let prev = match r.tau(n - 1) {
                Some(hit) if !hit.initial => hit.time,
                _ => continue,
            };
            row.tau_prev_observed += 1;
            match r.tau(n) {
                Some(hit) => {
                    row.total += 1;
                    if hit.time - prev < a_n {
                        row.violations += 1;
                        tv.violations += 1;
                        tv.last_violation = Some(n);
                    }
                }
                None if censor_time(r) - prev >= a_n => row.total += 1,
                None => row.indeterminate += 1,
            }
        }
        if row.tau_prev_observed == 0 {
            continue;
        }
        if row.total > 0 {
            row.freq = row.violations as f64 / row.total as f64;
        }
        (row.ci_lo, row.ci_hi) = wilson_interval(row.violations, row.total, WILSON_Z);
        rows.push(row);
    }
    let borel_cantelli = rows.iter().map(|r| r.freq).sum();
    Ok(GapTable {
        rows,
        per_trajectory,
        borel_cantelli,
    })
}
