//! The golden ensemble must reproduce `tests/golden/gaps.csv` byte for byte.
//! When the file is absent (first build) it is written from this run.

use std::path::Path;

use osgoodlab::harness::{output::gaps_csv, parse_config, run_ensemble, RunOptions};

#[test]
fn golden_gaps_csv() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let cfg = parse_config(&dir.join("ensemble.json")).unwrap();
    let out = tempfile::tempdir().unwrap();
    let run = run_ensemble(
        &cfg,
        &RunOptions {
            out: Some(out.path().to_path_buf()),
            ..RunOptions::default()
        },
    )
    .unwrap();
    let produced = std::fs::read_to_string(out.path().join("gaps.csv")).unwrap();
    assert_eq!(produced, gaps_csv(&run.summary));
    let golden = dir.join("gaps.csv");
    if !golden.exists() {
        std::fs::write(&golden, &produced).unwrap();
        eprintln!("wrote {}", golden.display());
    }
    let expected = std::fs::read_to_string(&golden).unwrap();
    assert_eq!(produced, expected);
}
