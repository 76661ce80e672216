//! Ensemble orchestration: configuration, parallel trajectory runs with a
//! single collecting writer, gap statistics and persisted outputs.

pub mod commands;
pub mod gaps;
pub mod output;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::growth::{a_sequence, GrowthFunction};
use crate::solver::{Solver, SolverConfig, SolverError, TrajectoryRecord};
use crate::stats::wilson_interval;

pub use gaps::{gap_statistics, GapRow, GapTable, TrajectoryViolations};
pub use output::{emit_outputs, write_trajectory_csv};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{source_name}: at `{path}`: {message}")]
    Schema {
        source_name: String,
        path: String,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("interrupted after {completed} of {total} trajectories")]
    Interrupted {
        completed: usize,
        total: usize,
        /// Written state from which a rerun with the same output directory continues.
        resume: Option<PathBuf>,
    },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> HarnessError {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Parse JSON text into `T`, reporting the path of the first offending key.
pub fn parse_json<T: DeserializeOwned>(text: &str, source_name: &str) -> Result<T, HarnessError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| HarnessError::Schema {
        source_name: source_name.to_string(),
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_json(&text, &path.display().to_string())
}

/// User choice `(p, ζ)` for the reference decay exponent of gap probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub p: f64,
    pub zeta: f64,
}

/// `r = p((1-η-ζ)/2 - γ)` with the admissibility of `(p, ζ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceExponent {
    pub p: f64,
    pub zeta: f64,
    pub eta: f64,
    pub gamma: f64,
    pub r: f64,
    /// `ζ ∈ (0, 1-η-2γ)`.
    pub zeta_feasible: bool,
    /// `max{2/(1-η-2γ-ζ), d/ζ}`.
    pub p_min: f64,
    pub p_feasible: bool,
    /// `r > 1`.
    pub summable: bool,
}

pub fn reference_exponent(
    spec: ReferenceSpec,
    eta: f64,
    gamma: f64,
    dim: usize,
) -> ReferenceExponent {
    let ReferenceSpec { p, zeta } = spec;
    let room = 1.0 - eta - 2.0 * gamma;
    let zeta_feasible = zeta > 0.0 && zeta < room;
    let p_min = if zeta_feasible {
        (2.0 / (room - zeta)).max(dim as f64 / zeta)
    } else {
        f64::INFINITY
    };
    let r = p * ((1.0 - eta - zeta) / 2.0 - gamma);
    ReferenceExponent {
        p,
        zeta,
        eta,
        gamma,
        r,
        zeta_feasible,
        p_min,
        p_feasible: p > p_min,
        summable: r > 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub solver: SolverConfig,
    pub trajectories: usize,
    #[serde(default)]
    pub seed: u64,
    /// Growth function defining the pacing sequence `a_n`; defaults to the
    /// reaction's `h`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pacing: Option<GrowthFunction>,
    /// Deepest `n` for gap events; defaults to the ladder depth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_depth: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.solver.validate()?;
        if self.trajectories < 1 {
            return Err(HarnessError::Config(
                "trajectory count must be at least 1".into(),
            ));
        }
        let depth = self.gap_depth();
        if depth < 1 || depth > self.solver.ladder_depth {
            return Err(HarnessError::Config(format!(
                "gap depth {depth} must lie in 1..={}",
                self.solver.ladder_depth
            )));
        }
        Ok(())
    }

    pub fn gap_depth(&self) -> u32 {
        self.gap_depth.unwrap_or(self.solver.ladder_depth)
    }

    pub fn pacing_h(&self) -> &GrowthFunction {
        self.pacing.as_ref().unwrap_or(&self.solver.reaction.h)
    }

    /// SHA-256 of the canonical JSON form, excluding the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn parse_config(path: &Path) -> Result<EnsembleConfig, HarnessError> {
    let cfg: EnsembleConfig = read_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub trajectories: usize,
}

impl Manifest {
    pub fn for_config(cfg: &EnsembleConfig) -> Manifest {
        Manifest {
            config_sha256: cfg.hash(),
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            trajectories: cfg.trajectories,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub trajectories: usize,
    pub exploded: usize,
    pub explosion_fraction: f64,
    pub explosion_ci: (f64, f64),
    /// Trajectories that left the `f64` range (counted as exploded).
    pub overflowed: usize,
    pub explosion_threshold: f64,
    pub a: Vec<f64>,
    /// First `n` at which `a_n` could not be evaluated.
    pub a_truncated_at: Option<usize>,
    pub gaps: GapTable,
    pub borel_cantelli: f64,
    /// Deepest ladder level reached by any trajectory.
    pub max_level: Option<u32>,
    pub reference: Option<ReferenceExponent>,
    pub manifest: Manifest,
}

/// Aggregate finished records (sorted by index) into a summary.
pub fn summarize(
    cfg: &EnsembleConfig,
    records: &[TrajectoryRecord],
) -> Result<EnsembleSummary, HarnessError> {
    let seq = a_sequence(cfg.pacing_h(), cfg.gap_depth() as usize);
    let gaps = gap_statistics(records, &seq.a)?;
    let n = records.len();
    let exploded = records.iter().filter(|r| r.exploded).count();
    let reference = cfg.reference.map(|spec| {
        let eta = cfg.solver.noise.eta().unwrap_or(f64::NAN);
        reference_exponent(
            spec,
            eta,
            cfg.solver.sigma.gamma,
            cfg.solver.operator.lengths.len(),
        )
    });
    Ok(EnsembleSummary {
        trajectories: n,
        exploded,
        explosion_fraction: exploded as f64 / n as f64,
        explosion_ci: wilson_interval(exploded as u64, n as u64, gaps::WILSON_Z),
        overflowed: records.iter().filter(|r| r.overflow).count(),
        explosion_threshold: cfg.solver.explosion_threshold(),
        a: seq.a,
        a_truncated_at: seq.truncated_at,
        borel_cantelli: gaps.borel_cantelli,
        gaps,
        max_level: records
            .iter()
            .filter_map(|r| r.ladder.last().map(|h| h.n))
            .max(),
        reference,
        manifest: Manifest::for_config(cfg),
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the rayon default.
    pub threads: Option<usize>,
    /// Output directory, overriding the config's.
    pub out: Option<PathBuf>,
    /// Set to stop scheduling new trajectories.
    pub cancel: Option<Arc<AtomicBool>>,
}

#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    pub summary: EnsembleSummary,
    /// Sorted by index.
    pub records: Vec<TrajectoryRecord>,
}

/// Run every trajectory of the ensemble, persist records as they complete,
/// then aggregate. With an output directory, previously completed
/// trajectories of an identical configuration are loaded instead of rerun.
pub fn run_ensemble(
    cfg: &EnsembleConfig,
    opts: &RunOptions,
) -> Result<EnsembleOutcome, HarnessError> {
    cfg.validate()?;
    let solver = Solver::new(&cfg.solver)?;
    let out = opts.out.clone().or_else(|| cfg.output.clone());
    let hash = cfg.hash();
    let mut writer = match &out {
        Some(dir) => Some(output::Collector::open(dir, &hash, cfg.trajectories)?),
        None => None,
    };
    let mut records: Vec<TrajectoryRecord> = match &writer {
        Some(w) => w.load_completed()?,
        None => Vec::new(),
    };
    let done: std::collections::BTreeSet<u64> = records.iter().map(|r| r.index).collect();
    let pending: Vec<u64> = (0..cfg.trajectories as u64)
        .filter(|i| !done.contains(i))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let cancel = opts.cancel.clone().unwrap_or_default();
    let (tx, rx) = mpsc::channel::<TrajectoryRecord>();
    let mut write_error = None;
    std::thread::scope(|scope| {
        let solver = &solver;
        let cancel = &cancel;
        let pending = &pending;
        let seed = cfg.seed;
        scope.spawn(move || {
            pool.install(|| {
                pending.par_iter().for_each_with(tx, |tx, &i| {
                    if cancel.load(Ordering::Relaxed) {
                        return;
                    }
                    let _ = tx.send(solver.simulate(seed, i));
                });
            });
        });
        for rec in rx {
            if let Some(w) = writer.as_mut() {
                if write_error.is_none() {
                    if let Err(e) = w.record(&rec) {
                        write_error = Some(e);
                        cancel.store(true, Ordering::Relaxed);
                    }
                }
            }
            records.push(rec);
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    records.sort_by_key(|r| r.index);
    if records.len() < cfg.trajectories {
        return Err(HarnessError::Interrupted {
            completed: records.len(),
            total: cfg.trajectories,
            resume: writer.as_ref().map(|w| w.resume_path()),
        });
    }
    let summary = summarize(cfg, &records)?;
    if let Some(dir) = &out {
        emit_outputs(&summary, dir)?;
        if let Some(w) = writer.as_mut() {
            w.finish()?;
        }
    }
    Ok(EnsembleOutcome { summary, records })
}
