//! Files written by an ensemble run.
//!
//! ```text
//! <out>/summary.json
//! <out>/gaps.csv                 n,a_n,violations,total,freq,ci_lo,ci_hi
//! <out>/manifest.json
//! <out>/resume.json              completed indices, keyed by config hash
//! <out>/trajectories/<i>.csv     time,sup
//! <out>/trajectories/<i>.json    full record
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::solver::TrajectoryRecord;

use super::{EnsembleSummary, HarnessError};

/// Write `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| HarnessError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn gaps_csv(summary: &EnsembleSummary) -> String {
    let mut s = String::from("n,a_n,violations,total,freq,ci_lo,ci_hi\n");
    for r in &summary.gaps.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.n, r.a_n, r.violations, r.total, r.freq, r.ci_lo, r.ci_hi
        );
    }
    s
}

pub fn trajectory_csv(record: &TrajectoryRecord) -> String {
    let mut s = String::from("time,sup\n");
    for (t, v) in &record.sup_trace {
        let _ = writeln!(s, "{t},{v}");
    }
    s
}

pub fn write_trajectory_csv(path: &Path, record: &TrajectoryRecord) -> Result<(), HarnessError> {
    write_atomic(path, trajectory_csv(record).as_bytes())
}

/// Write `summary.json`, `gaps.csv` and `manifest.json` into `dir`.
pub fn emit_outputs(summary: &EnsembleSummary, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let files = [
        dir.join("summary.json"),
        dir.join("gaps.csv"),
        dir.join("manifest.json"),
    ];
    write_json(&files[0], summary)?;
    write_atomic(&files[1], gaps_csv(summary).as_bytes())?;
    write_json(&files[2], &summary.manifest)?;
    Ok(files.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResumeState {
    config_sha256: String,
    trajectories: usize,
    completed: BTreeSet<u64>,
    complete: bool,
}

/// Sole writer of per-trajectory files and the resumption token.
#[derive(Debug)]
pub(crate) struct Collector {
    dir: PathBuf,
    state: ResumeState,
}

impl Collector {
    pub(crate) fn open(dir: &Path, hash: &str, total: usize) -> Result<Collector, HarnessError> {
        let traj = dir.join("trajectories");
        fs::create_dir_all(&traj).map_err(|e| HarnessError::io(&traj, e))?;
        let resume = dir.join("resume.json");
        let fresh = ResumeState {
            config_sha256: hash.to_string(),
            trajectories: total,
            completed: BTreeSet::new(),
            complete: false,
        };
        let state = if resume.exists() {
            let old: ResumeState = super::read_json(&resume)?;
            if old.config_sha256 != hash {
                return Err(HarnessError::Config(format!(
                    "{} belongs to a run with config hash {}, not {hash}",
                    resume.display(),
                    old.config_sha256
                )));
            }
            ResumeState {
                complete: false,
                ..old
            }
        } else {
            fresh
        };
        let c = Collector {
            dir: dir.to_path_buf(),
            state,
        };
        c.save()?;
        Ok(c)
    }

    pub(crate) fn resume_path(&self) -> PathBuf {
        self.dir.join("resume.json")
    }

    fn record_path(&self, index: u64, ext: &str) -> PathBuf {
        self.dir.join("trajectories").join(format!("{index}.{ext}"))
    }

    fn save(&self) -> Result<(), HarnessError> {
        write_json(&self.resume_path(), &self.state)
    }

    /// Records listed as completed; unreadable ones are dropped and rerun.
    pub(crate) fn load_completed(&self) -> Result<Vec<TrajectoryRecord>, HarnessError> {
        let mut out = Vec::new();
        for &i in &self.state.completed {
            if let Ok(r) = super::read_json::<TrajectoryRecord>(&self.record_path(i, "json")) {
                if r.index == i {
                    out.push(r);
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn record(&mut self, rec: &TrajectoryRecord) -> Result<(), HarnessError> {
        write_trajectory_csv(&self.record_path(rec.index, "csv"), rec)?;
        let text = serde_json::to_string(rec).expect("record serializes");
        write_atomic(&self.record_path(rec.index, "json"), text.as_bytes())?;
        self.state.completed.insert(rec.index);
        self.save()
    }

    pub(crate) fn finish(&mut self) -> Result<(), HarnessError> {
        self.state.complete = true;
        self.save()
    }
}
