//! Experiment orchestration: a deterministic, resumable artifact pipeline.
//!
//! A run is identified by a manifest id derived from everything that affects
//! results — the configured sweep, solver knobs, seeds, and the content of the
//! input grids — and *not* from anything that merely affects scheduling (worker
//! count, output location). All artifacts live under `out/{manifest_id}/`:
//!
//! ```text
//! out/{id}/
//!   manifest.json                identity, decision flags, completion ledger
//!   summaries.csv                normalized robustness measures, all networks
//!   errors.jsonl                 per-profile stage failures (possibly empty)
//!   {network}/
//!     profiles.jsonl             the generated limit-profile family
//!     runs/{profile_id}.json     per-profile artifact (campaign/embedding/measures)
//!     campaigns.jsonl            campaign results in canonical order
//!     embeddings.jsonl           embeddings in canonical order
//!   report/
//!     evaluation.json|csv        cross-validated measure-vs-collapse skill
//!     plots/{network}_{measure}.csv
//! ```
//!
//! The per-profile artifact files double as the completion ledger: a rerun
//! recomputes exactly the missing ones, and aggregate files are rebuilt from
//! artifacts in canonical order on every run, so interrupted, resumed, and
//! differently-parallel runs all converge to byte-identical trees.

use crate::cascade::{run_campaign, CampaignResult, CascadeError};
use crate::config::Config;
use crate::dcflow::{solve_full, DcError};
use crate::evaluation::{
    cross_validate, fit_full, write_plot_csv, write_report_csv, write_report_json, CvConfig,
    EvalError, EvaluationReport, RegressionDataset, REGRESSION_DESCRIPTION,
};
use crate::geospatial::{
    edge_midpoint_samples, fit_variogram, krige, node_samples, write_esri_ascii, write_raster_csv,
    GeoError, GridSpec, SamplePoint,
};
use crate::grid::{load_grid, GridError, GridFormat, PowerGrid};
use crate::metrics::{aggregate, normalize_batch, ElementKind, MetricsError, RobustnessSummary};
use crate::profiles::{
    external_profile, generate_profile_grid, write_profiles_jsonl, LineLimitProfile, ProfileError,
    ProfileParams,
};
use crate::seeds::derive_seed;
use crate::setse::{embed_grid, SetseEmbedding, SetseError};
use crate::topology::{summary_statistics, SummaryStatistics};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Conventions this pipeline commits to where the underlying quantities admit
/// more than one reasonable definition. Stamped into every artifact so rows
/// are interpretable without the source.
///
/// * `balance_rule=proportional` — island imbalance is settled by scaling the
///   surplus side down, never by shedding the deficit side asymmetrically.
/// * `alloc=proportional` — redistributed headroom is allocated to recipients
///   in proportion to their current excess.
/// * `mr_population=all_nodes` — the giant-component degree criterion is
///   evaluated over all surviving nodes, not per island.
/// * `force_norm=l2` — spring-solver convergence is measured on the Euclidean
///   norm of the residual force vector.
pub const DECISION_FLAGS: &str =
    "balance_rule=proportional alloc=proportional mr_population=all_nodes force_norm=l2";

/// Seed-stream indices reserved for non-campaign randomness. Campaign streams
/// are the network indices 0, 1, 2, …, so reserved streams count down from
/// the top of the space.
const REPORT_SEED_STREAM: u64 = u64::MAX - 1;
const TIMESERIES_SEED_STREAM: u64 = u64::MAX - 2;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("no grid files configured; set `grids` in the config")]
    NoGrids,
    #[error("network {0:?} is not among the configured grids")]
    UnknownNetwork(String),
    #[error("no artifact for {network}/{profile_id}; run the pipeline first")]
    MissingArtifact { network: String, profile_id: String },
    #[error("artifact for {network}/{profile_id} has no {component}; run that stage first")]
    MissingComponent {
        network: String,
        profile_id: String,
        component: &'static str,
    },
    #[error("unknown surface layer {0:?}; expected elevation, strain, or tension")]
    UnknownLayer(String),
    #[error("line {line} has no capacity rating; the rolling study needs one per line")]
    MissingCapacity { line: String },
    #[error("batch file {path}: {detail}")]
    BadBatch { path: String, detail: String },
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Dc(#[from] DcError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Setse(#[from] SetseError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("thread pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> OrchestratorError + '_ {
    move |e| OrchestratorError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

/// 64-bit FNV-1a over a byte string; used to fingerprint inputs and name runs.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Content identity of one input grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFingerprint {
    pub name: String,
    pub n_buses: usize,
    pub n_lines: usize,
    /// FNV-1a over the grid's canonical JSON form.
    pub content: String,
}

/// The subset of the configuration that determines results. Worker count and
/// output location are deliberately absent: they affect scheduling only, and
/// two runs differing only in those must produce byte-identical trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestIdentity {
    pub experiment: String,
    pub seed: u64,
    pub n_runs: usize,
    pub alpha_set: Vec<f64>,
    pub p_set: Vec<String>,
    pub f_set: Vec<f64>,
    pub q_set: Vec<String>,
    pub directions: Vec<String>,
    pub include_proportional: bool,
    pub eps_floor_mw: f64,
    pub k_min: f64,
    pub k_range: f64,
    pub setse: crate::setse::SpringSolverConfig,
    pub cv_repeats: u32,
    pub cv_folds: u32,
    pub eval_proportional_only: bool,
    pub variogram_bins: usize,
    pub raster_cell_size: f64,
    pub grids: Vec<GridFingerprint>,
}

/// The run's identity document, written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    /// `{experiment}-{16 hex digits}`; names the artifact directory.
    pub id: String,
    pub flags: String,
    pub identity: ManifestIdentity,
    /// Sorted `network/profile_id` entries with an artifact on disk.
    pub completed: Vec<String>,
}

impl ExperimentManifest {
    fn build(config: &Config, grids: &[PowerGrid]) -> Self {
        let identity = ManifestIdentity {
            experiment: config.experiment.clone(),
            seed: config.seed,
            n_runs: config.n_runs,
            alpha_set: config.alpha_set.clone(),
            p_set: config.p_set.iter().map(|t| t.to_string()).collect(),
            f_set: config.f_set.clone(),
            q_set: config.q_set.iter().map(|t| t.to_string()).collect(),
            directions: config
                .directions
                .iter()
                .map(|d| format!("{d:?}"))
                .collect(),
            include_proportional: config.include_proportional,
            eps_floor_mw: config.eps_floor_mw,
            k_min: config.k_min,
            k_range: config.k_range,
            setse: config.setse.clone(),
            cv_repeats: config.cv_repeats,
            cv_folds: config.cv_folds,
            eval_proportional_only: config.eval_proportional_only,
            variogram_bins: config.variogram_bins,
            raster_cell_size: config.raster_cell_size,
            grids: grids
                .iter()
                .map(|g| GridFingerprint {
                    name: g.name().to_string(),
                    n_buses: g.n_buses(),
                    n_lines: g.n_lines(),
                    content: format!("{:016x}", fnv1a64(g.to_canonical_json().as_bytes())),
                })
                .collect(),
        };
        let digest = fnv1a64(
            serde_json::to_string(&identity)
                .expect("identity serializes")
                .as_bytes(),
        );
        ExperimentManifest {
            id: format!("{}-{:016x}", identity.experiment, digest),
            flags: DECISION_FLAGS.to_string(),
            identity,
            completed: Vec::new(),
        }
    }
}

/// Which pipeline stages to run. Later stages pull in what they consume:
/// measures need embeddings, evaluation needs campaigns and measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StagePlan {
    pub campaigns: bool,
    pub embeddings: bool,
    pub measures: bool,
    pub evaluation: bool,
}

impl StagePlan {
    pub fn everything() -> Self {
        StagePlan {
            campaigns: true,
            embeddings: true,
            measures: true,
            evaluation: true,
        }
    }

    /// Close the plan under stage dependencies.
    pub fn closed(mut self) -> Self {
        if self.evaluation {
            self.campaigns = true;
            self.measures = true;
        }
        if self.measures {
            self.embeddings = true;
        }
        self
    }
}

/// Everything the pipeline knows about one profile, accreted stage by stage.
/// The file `{network}/runs/{profile_id}.json` holding it is the unit of
/// resumption: present means complete for every stage whose field is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileArtifact {
    pub manifest: String,
    pub flags: String,
    pub network: String,
    pub profile_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub campaign: Option<CampaignResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<SetseEmbedding>,
    /// Raw measures only; normalized columns are a batch property and are
    /// computed when `summaries.csv` is rebuilt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measures: Option<Vec<RobustnessSummary>>,
}

/// One stage failure, recorded in `errors.jsonl`; the run continues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub manifest: String,
    pub network: String,
    pub profile_id: String,
    pub stage: &'static str,
    pub error: String,
}

/// One line of `{network}/campaigns.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
pub struct CampaignRecord {
    pub manifest: String,
    pub network: String,
    #[serde(flatten)]
    pub campaign: CampaignResult,
}

/// One line of `{network}/embeddings.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub manifest: String,
    pub network: String,
    pub profile_id: String,
    #[serde(flatten)]
    pub embedding: SetseEmbedding,
}

/// What a pipeline invocation did.
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest_id: String,
    /// `out/{manifest_id}`.
    pub root: PathBuf,
    /// Artifacts present after the run (completed profiles).
    pub completed: usize,
    /// Profiles whose artifacts were computed (not resumed) this run.
    pub computed: usize,
    pub failures: Vec<StageFailure>,
}

/// Write `bytes` then atomically move into place, so a crash never leaves a
/// half-written file behind the resume check.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), OrchestratorError> {
    let mut tmp_name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<(), OrchestratorError> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn load_configured_grids(config: &Config) -> Result<Vec<PowerGrid>, OrchestratorError> {
    if config.grids.is_empty() {
        return Err(OrchestratorError::NoGrids);
    }
    config
        .grids
        .iter()
        .map(|p| Ok(load_grid(p, config.grid_format)?))
        .collect()
}

fn artifact_path(root: &Path, network: &str, profile_id: &str) -> PathBuf {
    root.join(network).join("runs").join(format!("{profile_id}.json"))
}

/// Bring one profile's artifact up to the requested stage set, reusing any
/// artifact already on disk. Stage failures become data, not run aborts.
fn ensure_artifact(
    grid: &PowerGrid,
    base_flows: &[f64],
    profile: &LineLimitProfile,
    manifest_id: &str,
    network: &str,
    master_seed: u64,
    config: &Config,
    stages: StagePlan,
    path: &Path,
) -> Result<(ProfileArtifact, Vec<StageFailure>, bool), OrchestratorError> {
    // Unreadable or unparsable artifacts are recomputed rather than trusted.
    let mut artifact = std::fs::read(path)
        .ok()
        .and_then(|bytes| serde_json::from_slice(&bytes).ok())
        .unwrap_or_else(|| new_artifact(manifest_id, network, &profile.id));
    let mut failures = Vec::new();
    let mut touched = false;
    let fail = |stage: &'static str, error: String| StageFailure {
        manifest: manifest_id.to_string(),
        network: network.to_string(),
        profile_id: profile.id.clone(),
        stage,
        error,
    };

    if stages.campaigns && artifact.campaign.is_none() {
        match run_campaign(grid, profile, config.n_runs, master_seed) {
            Ok(c) => {
                artifact.campaign = Some(c);
                touched = true;
            }
            Err(e) => failures.push(fail("campaign", e.to_string())),
        }
    }
    if stages.embeddings && artifact.embedding.is_none() {
        match embed_grid(
            grid,
            profile,
            base_flows,
            config.k_min,
            config.k_range,
            config.eps_floor_mw,
            &config.setse,
        ) {
            Ok(e) => {
                artifact.embedding = Some(e);
                touched = true;
            }
            Err(e) => failures.push(fail("embedding", e.to_string())),
        }
    }
    if stages.measures && artifact.measures.is_none() {
        if let Some(embedding) = &artifact.embedding {
            match crate::metrics::summarize_profile(
                network,
                &profile.id,
                &profile.capacities,
                base_flows,
                config.eps_floor_mw,
                embedding,
            ) {
                Ok(m) => {
                    artifact.measures = Some(m);
                    touched = true;
                }
                Err(e) => failures.push(fail("measures", e.to_string())),
            }
        }
        // No embedding: the embedding failure above already tells the story.
    }

    if touched {
        let mut bytes = serde_json::to_vec_pretty(&artifact).expect("artifact serializes");
        bytes.push(b'\n');
        write_atomic(path, &bytes)?;
    }
    Ok((artifact, failures, touched))
}

fn new_artifact(manifest_id: &str, network: &str, profile_id: &str) -> ProfileArtifact {
    ProfileArtifact {
        manifest: manifest_id.to_string(),
        flags: DECISION_FLAGS.to_string(),
        network: network.to_string(),
        profile_id: profile_id.to_string(),
        campaign: None,
        embedding: None,
        measures: None,
    }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), OrchestratorError> {
    let mut out = Vec::new();
    for row in rows {
        let line = serde_json::to_string(row).expect("row serializes");
        writeln!(out, "{line}").map_err(|e| OrchestratorError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
    }
    write_atomic(path, &out)
}

/// Run the configured experiment through the requested stages.
///
/// Deterministic by construction: campaign seeds derive from (master seed,
/// network index), every profile of a network shares one campaign seed stream
/// so attack orders are paired across profiles, and aggregate files are
/// rebuilt from per-profile artifacts in canonical order after the parallel
/// section. Worker count affects wall time only.
pub fn run_experiment(
    config: &Config,
    stages: StagePlan,
) -> Result<RunOutcome, OrchestratorError> {
    let stages = stages.closed();
    let grids = load_configured_grids(config)?;
    let mut manifest = ExperimentManifest::build(config, &grids);
    let root = config.out_dir.join(&manifest.id);
    create_dir(&root)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| OrchestratorError::Pool(e.to_string()))?;

    let mut all_failures: Vec<StageFailure> = Vec::new();
    let mut computed = 0usize;
    let mut completed: Vec<String> = Vec::new();
    // (network, artifacts in canonical profile order), network in config order.
    let mut per_network: Vec<(String, Vec<ProfileArtifact>)> = Vec::new();

    for (network_index, grid) in grids.iter().enumerate() {
        let network = grid.name().to_string();
        let network_dir = root.join(&network);
        create_dir(&network_dir.join("runs"))?;

        let (_, flow) = solve_full(grid)?;
        let params = config.profile_params(grid.n_lines());
        let profiles = generate_profile_grid(grid, &flow.flows, &params)?;
        write_profiles_jsonl(&network_dir.join("profiles.jsonl"), &manifest.id, &profiles)
            .map_err(OrchestratorError::Profile)?;

        let master_seed = derive_seed(config.seed, network_index as u64);
        let results: Vec<Result<(ProfileArtifact, Vec<StageFailure>, bool), OrchestratorError>> =
            pool.install(|| {
                profiles
                    .par_iter()
                    .map(|profile| {
                        ensure_artifact(
                            grid,
                            &flow.flows,
                            profile,
                            &manifest.id,
                            &network,
                            master_seed,
                            config,
                            stages,
                            &artifact_path(&root, &network, &profile.id),
                        )
                    })
                    .collect()
            });

        let mut artifacts = Vec::with_capacity(profiles.len());
        for (profile, result) in profiles.iter().zip(results) {
            let (artifact, failures, touched) = result?;
            if touched {
                computed += 1;
            }
            all_failures.extend(failures);
            if artifact_path(&root, &network, &profile.id).is_file() {
                completed.push(format!("{network}/{}", profile.id));
            }
            artifacts.push(artifact);
        }

        if stages.campaigns {
            let rows: Vec<CampaignRecord> = artifacts
                .iter()
                .filter_map(|a| a.campaign.clone())
                .map(|campaign| CampaignRecord {
                    manifest: manifest.id.clone(),
                    network: network.clone(),
                    campaign,
                })
                .collect();
            write_jsonl(&network_dir.join("campaigns.jsonl"), &rows)?;
        }
        if stages.embeddings {
            let rows: Vec<EmbeddingRecord> = artifacts
                .iter()
                .filter(|a| a.embedding.is_some())
                .map(|a| EmbeddingRecord {
                    manifest: manifest.id.clone(),
                    network: network.clone(),
                    profile_id: a.profile_id.clone(),
                    embedding: a.embedding.clone().expect("filtered to present"),
                })
                .collect();
            write_jsonl(&network_dir.join("embeddings.jsonl"), &rows)?;
        }

        per_network.push((network, artifacts));
    }

    // Batch-normalized measure table across all networks (grouped internally
    // by network and measure, so cross-network rows never mix).
    let mut summaries: Vec<RobustnessSummary> = Vec::new();
    if stages.measures {
        for (_, artifacts) in &per_network {
            for artifact in artifacts {
                if let Some(m) = &artifact.measures {
                    summaries.extend(m.iter().cloned());
                }
            }
        }
        normalize_batch(&mut summaries);
        write_summaries_csv(&root.join("summaries.csv"), &manifest, &summaries)?;
    }

    write_jsonl(&root.join("errors.jsonl"), &all_failures)?;

    if stages.evaluation {
        pool.install(|| write_report(config, &manifest, &root, &per_network, &summaries))?;
    }

    completed.sort();
    manifest.completed = completed;
    let mut manifest_bytes =
        serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    manifest_bytes.push(b'\n');
    write_atomic(&root.join("manifest.json"), &manifest_bytes)?;

    Ok(RunOutcome {
        manifest_id: manifest.id,
        completed: manifest.completed.len(),
        computed,
        root,
        failures: all_failures,
    })
}

fn write_summaries_csv(
    path: &Path,
    manifest: &ExperimentManifest,
    summaries: &[RobustnessSummary],
) -> Result<(), OrchestratorError> {
    let mut out = Vec::new();
    let werr = |e: std::io::Error| OrchestratorError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    };
    writeln!(out, "# manifest = {}", manifest.id).map_err(werr)?;
    writeln!(out, "# flags = {}", manifest.flags).map_err(werr)?;
    writeln!(out, "network,profile_id,measure,raw,kappa,degenerate").map_err(werr)?;
    for s in summaries {
        let kappa = s.kappa.map_or(String::new(), |v| v.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.network, s.profile_id, s.measure, s.raw, kappa, s.degenerate
        )
        .map_err(werr)?;
    }
    write_atomic(path, &out)
}

/// Regression datasets in canonical order: network (config order), then
/// measure (declaration order). x is the normalized measure, y the campaign's
/// mean collapse round; a profile contributes iff both of its stages landed.
fn regression_datasets(
    per_network: &[(String, Vec<ProfileArtifact>)],
    summaries: &[RobustnessSummary],
    proportional_only: bool,
    profile_kinds: &BTreeMap<(String, String), bool>,
) -> Result<Vec<RegressionDataset>, EvalError> {
    let mut kappa: BTreeMap<(&str, &str, &str), f64> = BTreeMap::new();
    for s in summaries {
        if let Some(k) = s.kappa {
            kappa.insert((&s.network, &s.profile_id, &s.measure), k);
        }
    }
    let mut datasets = Vec::new();
    for (network, artifacts) in per_network {
        for measure in crate::metrics::MEASURES {
            let mut pairs: Vec<(f64, f64)> = Vec::new();
            for artifact in artifacts {
                if proportional_only
                    && !profile_kinds
                        .get(&(network.clone(), artifact.profile_id.clone()))
                        .copied()
                        .unwrap_or(false)
                {
                    continue;
                }
                let Some(campaign) = &artifact.campaign else { continue };
                let Some(&x) =
                    kappa.get(&(network.as_str(), artifact.profile_id.as_str(), measure))
                else {
                    continue;
                };
                pairs.push((x, campaign.mean_collapse_round));
            }
            if !pairs.is_empty() {
                datasets.push(RegressionDataset::new(network.clone(), measure, &pairs)?);
            }
        }
    }
    Ok(datasets)
}

fn write_report(
    config: &Config,
    manifest: &ExperimentManifest,
    root: &Path,
    per_network: &[(String, Vec<ProfileArtifact>)],
    summaries: &[RobustnessSummary],
) -> Result<(), OrchestratorError> {
    let report_dir = root.join("report");
    create_dir(&report_dir)?;

    let mut profile_kinds: BTreeMap<(String, String), bool> = BTreeMap::new();
    for (network, artifacts) in per_network {
        for artifact in artifacts {
            let proportional = artifact
                .campaign
                .as_ref()
                .map(|c| matches!(c.params, ProfileParams::Proportional { .. }))
                .unwrap_or(false);
            profile_kinds.insert((network.clone(), artifact.profile_id.clone()), proportional);
        }
    }

    let datasets = regression_datasets(
        per_network,
        summaries,
        config.eval_proportional_only,
        &profile_kinds,
    )?;
    let (usable, skipped): (Vec<_>, Vec<_>) = datasets.into_iter().partition(|d| d.len() >= 20);

    if !skipped.is_empty() || usable.is_empty() {
        let mut out = Vec::new();
        let werr = |e: std::io::Error| OrchestratorError::Io {
            path: report_dir.join("skipped.txt").display().to_string(),
            detail: e.to_string(),
        };
        writeln!(out, "# manifest = {}", manifest.id).map_err(werr)?;
        writeln!(
            out,
            "datasets below the 20-point cross-validation floor; no model was fit for them"
        )
        .map_err(werr)?;
        for d in &skipped {
            writeln!(out, "{}/{}: {} points", d.network, d.measure, d.len()).map_err(werr)?;
        }
        if usable.is_empty() {
            writeln!(out, "no dataset was large enough; evaluation files were not written")
                .map_err(werr)?;
        }
        write_atomic(&report_dir.join("skipped.txt"), &out)?;
    }
    if usable.is_empty() {
        return Ok(());
    }

    let cv = CvConfig {
        repeats: config.cv_repeats,
        folds: config.cv_folds,
        seed: derive_seed(config.seed, REPORT_SEED_STREAM),
    };
    let entries = usable
        .par_iter()
        .map(|d| cross_validate(d, &cv))
        .collect::<Result<Vec<_>, _>>()?;
    let report = EvaluationReport {
        regression: REGRESSION_DESCRIPTION.to_string(),
        repeats: cv.repeats,
        folds: cv.folds.max(2),
        entries,
    };
    write_report_json(&report, &report_dir.join("evaluation.json"))?;
    write_report_csv(&report, &report_dir.join("evaluation.csv"))?;

    let plots_dir = report_dir.join("plots");
    create_dir(&plots_dir)?;
    for dataset in &usable {
        let model = fit_full(dataset)?;
        write_plot_csv(
            dataset,
            &model,
            &plots_dir.join(format!("{}_{}.csv", dataset.network, dataset.measure)),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Grid ingestion
// ---------------------------------------------------------------------------

/// Load a grid, write its canonical JSON form, and return its structural
/// summary.
pub fn ingest_grid(
    input: &Path,
    format: GridFormat,
    output: &Path,
) -> Result<SummaryStatistics, OrchestratorError> {
    let grid = load_grid(input, format)?;
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            create_dir(parent)?;
        }
    }
    grid.write_canonical_json(output)?;
    Ok(summary_statistics(&grid))
}

// ---------------------------------------------------------------------------
// Rolling load study
// ---------------------------------------------------------------------------

/// One row of the demand batch: overrides for one bus in one period.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRow {
    pub period: u64,
    pub bus_id: String,
    pub generation: f64,
    pub demand: f64,
}

/// Measures for one feasible period of the rolling study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub period: u64,
    /// Mean |flow| / rating over lines; unlike tolerance-derived loads this
    /// may exceed 1 when a period overloads real ratings.
    pub mean_line_load: f64,
    pub mean_abs_elevation: f64,
    pub mean_strain: f64,
    pub mean_tension: f64,
    pub mean_collapse_round: f64,
    pub mean_power_lost: f64,
}

/// Correlation summary of the rolling study, written as `correlations.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeseriesCorrelations {
    pub stamp: String,
    pub flags: String,
    pub network: String,
    pub n_periods: usize,
    pub skipped_periods: Vec<u64>,
    /// Pearson correlation of each measure series against the mean collapse
    /// round series; `null` when undefined (constant series or < 3 periods).
    pub correlations: BTreeMap<String, Option<f64>>,
    /// Measures whose correlation is undefined, with the reason.
    pub undefined: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct TimeseriesOutcome {
    pub stamp: String,
    pub out_dir: PathBuf,
    pub records: Vec<PeriodRecord>,
    pub skipped_periods: Vec<u64>,
}

/// Parse and validate a `period,bus_id,generation,demand` batch file: header
/// required, periods grouped and strictly increasing, buses must exist, one
/// row per (period, bus), loads finite and non-negative.
pub fn read_batch_csv(path: &Path, grid: &PowerGrid) -> Result<Vec<BatchRow>, OrchestratorError> {
    let bad = |detail: String| OrchestratorError::BadBatch {
        path: path.display().to_string(),
        detail,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let expected = ["period", "bus_id", "generation", "demand"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(bad(format!(
            "header must be {}, got {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows: Vec<BatchRow> = Vec::new();
    let mut seen: std::collections::BTreeSet<(u64, String)> = std::collections::BTreeSet::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let line = i + 2; // header is line 1
        let field = |j: usize| record.get(j).unwrap_or("").to_string();
        let period: u64 = field(0)
            .parse()
            .map_err(|_| bad(format!("line {line}: period {:?} is not an integer", field(0))))?;
        let bus_id = field(1);
        if grid.bus_position(&bus_id).is_none() {
            return Err(bad(format!("line {line}: unknown bus {bus_id:?}")));
        }
        let number = |j: usize, name: &str| -> Result<f64, OrchestratorError> {
            let v: f64 = field(j)
                .parse()
                .map_err(|_| bad(format!("line {line}: {name} {:?} is not a number", field(j))))?;
            if !v.is_finite() || v < 0.0 {
                return Err(bad(format!(
                    "line {line}: {name} must be finite and non-negative, got {v}"
                )));
            }
            Ok(v)
        };
        let generation = number(2, "generation")?;
        let demand = number(3, "demand")?;
        if let Some(prev) = rows.last() {
            if period < prev.period {
                return Err(bad(format!(
                    "line {line}: period {period} after {}; periods must be grouped in increasing order",
                    prev.period
                )));
            }
        }
        if !seen.insert((period, bus_id.clone())) {
            return Err(bad(format!(
                "line {line}: duplicate row for period {period}, bus {bus_id:?}"
            )));
        }
        rows.push(BatchRow {
            period,
            bus_id,
            generation,
            demand,
        });
    }
    if rows.is_empty() {
        return Err(bad("no data rows".to_string()));
    }
    Ok(rows)
}

/// Replay a demand batch against a grid with real line ratings.
///
/// Each period rebuilds the grid with that period's bus overrides, solves the
/// flow, embeds the loaded grid against its ratings, and runs the attack
/// campaign — all periods share one campaign seed stream, so identical
/// periods produce identical records. Periods whose flow solve fails are
/// skipped and flagged. Line load here is |flow| / rating averaged over
/// lines, deliberately unclamped: periods that overload real ratings are the
/// interesting ones.
pub fn run_timeseries(
    config: &Config,
    grid_path: &Path,
    batch_path: &Path,
) -> Result<TimeseriesOutcome, OrchestratorError> {
    let grid = load_grid(grid_path, config.grid_format)?;
    let capacities: Vec<f64> = grid
        .lines()
        .iter()
        .map(|l| {
            l.capacity.ok_or_else(|| OrchestratorError::MissingCapacity {
                line: l.id.clone(),
            })
        })
        .collect::<Result<_, _>>()?;
    let rows = read_batch_csv(batch_path, &grid)?;
    let batch_bytes = std::fs::read(batch_path).map_err(io_err(batch_path))?;

    #[derive(Serialize)]
    struct TimeseriesIdentity<'a> {
        grid: String,
        batch: String,
        seed: u64,
        n_runs: usize,
        k_min: f64,
        k_range: f64,
        eps_floor_mw: f64,
        setse: &'a crate::setse::SpringSolverConfig,
    }
    let identity = TimeseriesIdentity {
        grid: format!("{:016x}", fnv1a64(grid.to_canonical_json().as_bytes())),
        batch: format!("{:016x}", fnv1a64(&batch_bytes)),
        seed: config.seed,
        n_runs: config.n_runs,
        k_min: config.k_min,
        k_range: config.k_range,
        eps_floor_mw: config.eps_floor_mw,
        setse: &config.setse,
    };
    let stamp = format!(
        "ts-{:016x}",
        fnv1a64(serde_json::to_string(&identity).expect("identity serializes").as_bytes())
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| OrchestratorError::Pool(e.to_string()))?;
    let master_seed = derive_seed(config.seed, TIMESERIES_SEED_STREAM);

    let mut periods: Vec<(u64, Vec<&BatchRow>)> = Vec::new();
    for row in &rows {
        match periods.last_mut() {
            Some((p, group)) if *p == row.period => group.push(row),
            _ => periods.push((row.period, vec![row])),
        }
    }

    let mut records: Vec<PeriodRecord> = Vec::new();
    let mut skipped: Vec<u64> = Vec::new();
    for (period, group) in &periods {
        let mut buses = grid.buses().to_vec();
        for row in group {
            let idx = grid.bus_position(&row.bus_id).expect("validated above");
            buses[idx].generation = row.generation;
            buses[idx].demand = row.demand;
        }
        let period_grid = PowerGrid::new(grid.name().to_string(), buses, grid.lines().to_vec())?;
        let Ok((_, flow)) = solve_full(&period_grid) else {
            skipped.push(*period);
            continue;
        };
        let profile = external_profile(&period_grid, "ratings", capacities.clone())?;
        let record = pool.install(|| -> Result<PeriodRecord, OrchestratorError> {
            let embedding = embed_grid(
                &period_grid,
                &profile,
                &flow.flows,
                config.k_min,
                config.k_range,
                config.eps_floor_mw,
                &config.setse,
            )?;
            let campaign = run_campaign(&period_grid, &profile, config.n_runs, master_seed)?;
            let loads: Vec<f64> = flow
                .flows
                .iter()
                .zip(&capacities)
                .map(|(f, c)| f.abs() / c)
                .collect();
            Ok(PeriodRecord {
                period: *period,
                mean_line_load: aggregate(&loads, ElementKind::Edge)?,
                mean_abs_elevation: aggregate(&embedding.elevation, ElementKind::Node)?,
                mean_strain: aggregate(&embedding.strain, ElementKind::Edge)?,
                mean_tension: aggregate(&embedding.tension, ElementKind::Edge)?,
                mean_collapse_round: campaign.mean_collapse_round,
                mean_power_lost: campaign.mean_power_lost,
            })
        })?;
        records.push(record);
    }

    let out_dir = config.out_dir.join("timeseries").join(grid.name());
    create_dir(&out_dir)?;
    write_timeseries_csv(&out_dir.join("timeseries.csv"), &stamp, &records)?;

    let series: [(&str, Vec<f64>); 4] = [
        (
            "mean_line_load",
            records.iter().map(|r| r.mean_line_load).collect(),
        ),
        (
            "mean_abs_elevation",
            records.iter().map(|r| r.mean_abs_elevation).collect(),
        ),
        ("mean_strain", records.iter().map(|r| r.mean_strain).collect()),
        ("mean_tension", records.iter().map(|r| r.mean_tension).collect()),
    ];
    let outcome: Vec<f64> = records.iter().map(|r| r.mean_collapse_round).collect();
    let mut correlations = BTreeMap::new();
    let mut undefined = BTreeMap::new();
    for (name, values) in &series {
        match crate::evaluation::pearson(values, &outcome) {
            Ok(r) => {
                correlations.insert(name.to_string(), Some(r));
            }
            Err(e) => {
                correlations.insert(name.to_string(), None);
                undefined.insert(name.to_string(), e.to_string());
            }
        }
    }
    let summary = TimeseriesCorrelations {
        stamp: stamp.clone(),
        flags: DECISION_FLAGS.to_string(),
        network: grid.name().to_string(),
        n_periods: records.len(),
        skipped_periods: skipped.clone(),
        correlations,
        undefined,
    };
    let mut bytes = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    bytes.push(b'\n');
    write_atomic(&out_dir.join("correlations.json"), &bytes)?;

    Ok(TimeseriesOutcome {
        stamp,
        out_dir,
        records,
        skipped_periods: skipped,
    })
}

fn write_timeseries_csv(
    path: &Path,
    stamp: &str,
    records: &[PeriodRecord],
) -> Result<(), OrchestratorError> {
    let mut out = Vec::new();
    let werr = |e: std::io::Error| OrchestratorError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    };
    writeln!(out, "# timeseries = {stamp}").map_err(werr)?;
    writeln!(out, "# flags = {DECISION_FLAGS}").map_err(werr)?;
    writeln!(
        out,
        "period,mean_line_load,mean_abs_elevation,mean_strain,mean_tension,mean_collapse_round,mean_power_lost"
    )
    .map_err(werr)?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.period,
            r.mean_line_load,
            r.mean_abs_elevation,
            r.mean_strain,
            r.mean_tension,
            r.mean_collapse_round,
            r.mean_power_lost
        )
        .map_err(werr)?;
    }
    write_atomic(path, &out)
}

// ---------------------------------------------------------------------------
// Surface interpolation of embedding layers
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct KrigeOutputPaths {
    pub csv: PathBuf,
    pub value_asc: PathBuf,
    pub variance_asc: PathBuf,
}

/// Interpolate one embedding layer of one completed profile onto a raster.
///
/// `layer` is `elevation` (sampled at buses), `strain`, or `tension` (sampled
/// at line midpoints). The variogram is fit to the samples, the raster covers
/// them with one cell of margin, and outputs land next to the artifact under
/// `{network}/kriging/`.
pub fn run_krige(
    config: &Config,
    network: &str,
    profile_id: &str,
    layer: &str,
) -> Result<KrigeOutputPaths, OrchestratorError> {
    let grids = load_configured_grids(config)?;
    let manifest = ExperimentManifest::build(config, &grids);
    let grid = grids
        .iter()
        .find(|g| g.name() == network)
        .ok_or_else(|| OrchestratorError::UnknownNetwork(network.to_string()))?;
    let root = config.out_dir.join(&manifest.id);
    let path = artifact_path(&root, network, profile_id);
    let bytes = std::fs::read(&path).map_err(|_| OrchestratorError::MissingArtifact {
        network: network.to_string(),
        profile_id: profile_id.to_string(),
    })?;
    let artifact: ProfileArtifact =
        serde_json::from_slice(&bytes).map_err(|e| OrchestratorError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
    let embedding = artifact
        .embedding
        .as_ref()
        .ok_or_else(|| OrchestratorError::MissingComponent {
            network: network.to_string(),
            profile_id: profile_id.to_string(),
            component: "embedding",
        })?;

    let samples: Vec<SamplePoint> = match layer {
        "elevation" => node_samples(grid, &embedding.elevation)?,
        "strain" => edge_midpoint_samples(grid, &embedding.strain)?,
        "tension" => edge_midpoint_samples(grid, &embedding.tension)?,
        other => return Err(OrchestratorError::UnknownLayer(other.to_string())),
    };

    let cell_size = if config.raster_cell_size > 0.0 {
        config.raster_cell_size
    } else {
        auto_cell_size(&samples)
    };
    let model = fit_variogram(&samples, config.variogram_bins)?;
    let spec = GridSpec::covering(&samples, cell_size)?;
    let outcome = krige(&samples, &model, &spec)?;

    let krige_dir = root.join(network).join("kriging");
    create_dir(&krige_dir)?;
    let stem = format!("{profile_id}_{layer}");
    let metadata = vec![
        format!("manifest = {}", manifest.id),
        format!("flags = {DECISION_FLAGS}"),
        format!("network = {network}"),
        format!("profile = {profile_id}"),
        format!("layer = {layer}"),
        format!(
            "variogram = spherical nugget={} sill={} range={}",
            model.nugget, model.sill, model.range
        ),
        format!("duplicates_merged = {}", outcome.duplicates_merged),
        format!(
            "max_weight_sum_deviation = {:e}",
            outcome.max_weight_sum_deviation
        ),
    ];
    let paths = KrigeOutputPaths {
        csv: krige_dir.join(format!("{stem}.csv")),
        value_asc: krige_dir.join(format!("{stem}.asc")),
        variance_asc: krige_dir.join(format!("{stem}_variance.asc")),
    };
    write_raster_csv(&outcome.field, &metadata, &paths.csv)?;
    write_esri_ascii(&spec, &outcome.field.values, &paths.value_asc)?;
    write_esri_ascii(&spec, &outcome.field.variances, &paths.variance_asc)?;
    Ok(paths)
}

/// Default raster resolution: the samples' larger bounding-box span divided
/// into 40 cells, or 1 when the samples are degenerate.
fn auto_cell_size(samples: &[SamplePoint]) -> f64 {
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in samples {
        x_min = x_min.min(s.x);
        x_max = x_max.max(s.x);
        y_min = y_min.min(s.y);
        y_max = y_max.max(s.y);
    }
    let span = (x_max - x_min).max(y_max - y_min);
    if span > 0.0 && span.is_finite() {
        span / 40.0
    } else {
        1.0
    }
}
