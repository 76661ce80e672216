//! Library side of the command-line subcommands. Each takes a parsed config
//! and an output directory and returns the files it wrote.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::growth::{
    make_trapezoid_h, osgood_test_all, GrowthFunction, OsgoodOptions, OsgoodReport, OsgoodVerdict,
};
use crate::solver::{simulate_trajectory, SolverConfig, TrajectoryRecord};
use crate::stochan::{estimate_sup_moment, MomentExperiment, MomentReport};

use super::output::{write_atomic, write_json, write_trajectory_csv};
use super::HarnessError;

fn default_horizon() -> usize {
    64
}

fn default_base_points() -> Vec<f64> {
    vec![1.0]
}

fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OsgoodCheckConfig {
    pub h: GrowthFunction,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_base_points")]
    pub base_points: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<OsgoodOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsgoodCheckOutput {
    /// Divergent only when every base point diverges.
    pub verdict: OsgoodVerdict,
    pub reports: Vec<OsgoodReport>,
}

fn combine(reports: &[OsgoodReport]) -> OsgoodVerdict {
    if reports
        .iter()
        .all(|r| r.verdict == OsgoodVerdict::DivergesWithinHorizon)
    {
        OsgoodVerdict::DivergesWithinHorizon
    } else if reports
        .iter()
        .any(|r| r.verdict == OsgoodVerdict::ConvergesNumerically)
    {
        OsgoodVerdict::ConvergesNumerically
    } else {
        OsgoodVerdict::Inconclusive
    }
}

pub fn partial_sums_csv(report: &OsgoodReport) -> String {
    let mut s = String::from("n,lower_sum,upper_sum\n");
    for p in &report.trace {
        let _ = writeln!(s, "{},{},{}", p.n, p.lower_sum, p.upper_sum);
    }
    s
}

/// Writes `osgood.json` and `partial_sums.csv` (one file per base point,
/// suffixed `_<k>` beyond the first).
pub fn osgood_check(
    cfg: &OsgoodCheckConfig,
    out: &Path,
) -> Result<(OsgoodCheckOutput, Vec<PathBuf>), HarnessError> {
    let opts = cfg.options.clone().unwrap_or_default();
    let reports = osgood_test_all(&cfg.h, cfg.horizon, &cfg.base_points, &opts)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let result = OsgoodCheckOutput {
        verdict: combine(&reports),
        reports,
    };
    ensure_dir(out)?;
    let mut files = vec![out.join("osgood.json")];
    write_json(&files[0], &result)?;
    for (k, r) in result.reports.iter().enumerate() {
        let name = if k == 0 {
            "partial_sums.csv".to_string()
        } else {
            format!("partial_sums_{k}.csv")
        };
        let path = out.join(name);
        write_atomic(&path, partial_sums_csv(r).as_bytes())?;
        files.push(path);
    }
    Ok((result, files))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructHConfig {
    pub g: GrowthFunction,
    pub count: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructHOutput {
    pub h: GrowthFunction,
    pub requested: usize,
    pub effective: usize,
    pub truncated: bool,
    pub min_segment_integral: f64,
    pub osgood: OsgoodReport,
}

/// Writes `breakpoints.csv` (`n,u,h,segment_integral`) and `construct_h.json`.
pub fn construct_h(
    cfg: &ConstructHConfig,
    out: &Path,
) -> Result<(ConstructHOutput, Vec<PathBuf>), HarnessError> {
    let h = make_trapezoid_h(cfg.g.clone(), cfg.count)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let trap = h.as_trapezoid().expect("trapezoid kind");
    let integrals = trap.segment_integrals();
    let mut csv = String::from("n,u,h,segment_integral\n");
    for (i, b) in trap.breakpoints().iter().enumerate() {
        match integrals.get(i) {
            Some(s) => {
                let _ = writeln!(csv, "{},{},{},{}", i + 1, b.u, b.g, s);
            }
            None => {
                let _ = writeln!(csv, "{},{},{},", i + 1, b.u, b.g);
            }
        }
    }
    let osgood = crate::growth::osgood_test(&h, cfg.horizon, &OsgoodOptions::default())
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let result = ConstructHOutput {
        requested: trap.requested_count(),
        effective: trap.effective_count(),
        truncated: trap.truncated(),
        min_segment_integral: integrals.iter().copied().fold(f64::INFINITY, f64::min),
        osgood,
        h: h.clone(),
    };
    ensure_dir(out)?;
    let files = vec![out.join("breakpoints.csv"), out.join("construct_h.json")];
    write_atomic(&files[0], csv.as_bytes())?;
    write_json(&files[1], &result)?;
    Ok((result, files))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub index: u64,
}

/// Writes `trajectory.csv` (`time,sup`) and `summary.json` (the record
/// without its trace).
pub fn simulate(
    cfg: &SimulateConfig,
    out: &Path,
) -> Result<(TrajectoryRecord, Vec<PathBuf>), HarnessError> {
    let record = simulate_trajectory(&cfg.solver, cfg.seed, cfg.index)?;
    ensure_dir(out)?;
    let files = vec![out.join("trajectory.csv"), out.join("summary.json")];
    write_trajectory_csv(&files[0], &record)?;
    let summary = TrajectoryRecord {
        sup_trace: Vec::new(),
        ..record.clone()
    };
    write_json(&files[1], &summary)?;
    Ok((record, files))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    pub experiment: MomentExperiment,
    #[serde(default)]
    pub seed: u64,
}

pub fn moments_csv(report: &MomentReport) -> String {
    let mut s = String::from("epsilon,estimate,stderr\n");
    for r in &report.rows {
        let _ = writeln!(s, "{},{},{}", r.epsilon, r.estimate, r.stderr);
    }
    s
}

/// Writes `moments.csv` (`epsilon,estimate,stderr`) and `summary.json`.
pub fn moments(
    cfg: &MomentsConfig,
    out: &Path,
) -> Result<(MomentReport, Vec<PathBuf>), HarnessError> {
    let report = estimate_sup_moment(&cfg.experiment, cfg.seed)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    ensure_dir(out)?;
    let files = vec![out.join("moments.csv"), out.join("summary.json")];
    write_atomic(&files[0], moments_csv(&report).as_bytes())?;
    write_json(&files[1], &report)?;
    Ok((report, files))
}
