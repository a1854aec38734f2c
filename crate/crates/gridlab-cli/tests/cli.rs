//! Black-box checks of the `gridlab` binary.

use std::path::Path;
use std::process::{Command, Output};

fn gridlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridlab"))
        .args(args)
        .output()
        .expect("spawn gridlab")
}

fn ieee14() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/ieee14.json")
        .display()
        .to_string()
}

#[test]
fn help_lists_the_pipeline_stages() {
    let out = gridlab(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for stage in ["ingest", "profiles", "attack", "embed", "report", "run", "krige"] {
        assert!(text.contains(stage), "--help does not mention {stage}");
    }
}

#[test]
fn ingest_normalizes_and_summarizes() {
    let dir = tempfile::tempdir().unwrap();
    let output = dir.path().join("ieee14.json");
    let out = gridlab(&[
        "ingest",
        "--input",
        &ieee14(),
        "--output",
        output.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let written: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&output).unwrap()).unwrap();
    assert_eq!(written["buses"].as_array().unwrap().len(), 14);
    assert_eq!(written["lines"].as_array().unwrap().len(), 20);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("14"), "summary lacks the bus count:\n{text}");
    assert!(text.contains("20"), "summary lacks the line count:\n{text}");
}

#[test]
fn run_completes_a_smoke_study_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("smoke.conf");
    std::fs::write(
        &config_path,
        format!(
            "experiment = smoke\n\
             out = {out}\n\
             seed = 7\n\
             n_runs = 3\n\
             grids = {grid}\n\
             alpha_set = 2\n\
             p_set = 0.1\n\
             f_set = 0.5\n\
             q_set = 0.1\n",
            out = dir.path().join("artifacts").display(),
            grid = ieee14(),
        ),
    )
    .unwrap();

    let first = gridlab(&["run", "--config", config_path.to_str().unwrap()]);
    assert!(
        first.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&first.stderr)
    );
    let text = String::from_utf8(first.stdout).unwrap();
    let manifest_line = text
        .lines()
        .find(|l| l.contains("smoke-"))
        .unwrap_or_else(|| panic!("no manifest id in output:\n{text}"));
    let manifest_id = manifest_line
        .split_whitespace()
        .find(|w| w.starts_with("smoke-"))
        .unwrap();
    let root = dir.path().join("artifacts").join(manifest_id);
    assert!(root.join("manifest.json").is_file());
    assert!(root.join("ieee14/campaigns.jsonl").is_file());

    // A second invocation resumes from the artifacts and recomputes nothing.
    let second = gridlab(&["run", "--config", config_path.to_str().unwrap()]);
    assert!(second.status.success());
    let text = String::from_utf8(second.stdout).unwrap();
    assert!(
        text.contains("(0 computed this run)"),
        "resume should compute nothing:\n{text}"
    );
}

#[test]
fn missing_grid_fails_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("broken.conf");
    std::fs::write(
        &config_path,
        format!(
            "experiment = broken\nout = {}\ngrids = /nonexistent/grid.json\n",
            dir.path().join("artifacts").display()
        ),
    )
    .unwrap();
    let out = gridlab(&["run", "--config", config_path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
