//! End-to-end pipeline behaviors that span several library modules.

use gridlab::config::{Config, FractionToken};
use gridlab::evaluation::{fit_full, r_squared, RegressionDataset};
use gridlab::metrics::MEASURES;
use gridlab::orchestrator::{run_experiment, StagePlan};
use std::path::{Path, PathBuf};

fn ieee14_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/ieee14.json")
}

/// The default study family is a fixed 3168-profile grid; the campaign ledger
/// carries one record per profile regardless of how many runs each held.
#[test]
fn default_family_produces_3168_campaign_records() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = Config::default();
    config.experiment = "family".into();
    config.out_dir = dir.path().to_path_buf();
    config.n_runs = 1; // the record count cannot depend on this
    config.grids = vec![ieee14_path()];

    let plan = StagePlan {
        campaigns: true,
        embeddings: false,
        measures: false,
        evaluation: false,
    };
    let outcome = run_experiment(&config, plan).unwrap();
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    assert_eq!(outcome.completed, 3168);

    let profiles =
        std::fs::read_to_string(outcome.root.join("ieee14/profiles.jsonl")).unwrap();
    assert_eq!(profiles.lines().count(), 3168);
    let campaigns =
        std::fs::read_to_string(outcome.root.join("ieee14/campaigns.jsonl")).unwrap();
    assert_eq!(campaigns.lines().count(), 3168);
}

/// A response that is exactly linear in the predictor lies in the smoothing
/// penalty's null space, so the full-data fit must reproduce it (almost)
/// perfectly at any smoothing level.
#[test]
fn linear_response_is_fit_exactly() {
    let pairs: Vec<(f64, f64)> = (0..40)
        .map(|i| {
            let x = 0.2 + 0.7 * i as f64 / 39.0;
            (x, 2.0 + 3.0 * x)
        })
        .collect();
    let dataset = RegressionDataset::new("net", "mean_line_load", &pairs).unwrap();
    let model = fit_full(&dataset).unwrap();
    let predictions = model.predict_many(dataset.xs());
    let score = r_squared(dataset.ys(), &predictions).unwrap();
    assert!(score > 1.0 - 1e-6, "linear response fit R² {score}");
}

/// A two-profile smoke study sits far below the 20-point cross-validation
/// floor: the report must say so for every measure instead of fitting models.
#[test]
fn smoke_report_lists_every_measure_as_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = Config::default();
    config.experiment = "smoke".into();
    config.out_dir = dir.path().to_path_buf();
    config.n_runs = 5;
    config.grids = vec![ieee14_path()];
    config.alpha_set = vec![2.0];
    config.p_set = vec![FractionToken::Value(0.1)];
    config.f_set = vec![0.5];
    config.q_set = vec![FractionToken::Value(0.1)];

    let outcome = run_experiment(&config, StagePlan::everything()).unwrap();
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    assert_eq!(outcome.completed, 2);

    let skipped =
        std::fs::read_to_string(outcome.root.join("report/skipped.txt")).unwrap();
    for measure in MEASURES {
        assert!(
            skipped.contains(&format!("ieee14/{measure}: 2 points")),
            "skipped.txt is missing {measure}:\n{skipped}"
        );
    }
    assert!(!outcome.root.join("report/evaluation.json").exists());
}
