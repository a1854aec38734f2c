//! Network-level robustness measures and batch normalization.
//!
//! Every candidate robustness proxy is the mean of absolute per-element
//! values: per-edge tolerance α, per-edge line load 1/α, and the embedding
//! outputs (|elevation| per node, strain and tension per edge). Raw means are
//! then min–max normalized to κ ∈ [0,1] within a (network, measure) batch so
//! different measures become comparable.

use crate::profiles::per_edge_alpha;
use crate::setse::SetseEmbedding;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The five measures every profile is summarized by.
pub const MEASURES: [&str; 5] = [
    "mean_alpha",
    "mean_line_load",
    "mean_abs_elevation",
    "mean_strain",
    "mean_tension",
];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot aggregate an empty {0} vector")]
    Empty(&'static str),
    #[error("line load needs alpha >= 1 on every edge, got {alpha}")]
    BadAlpha { alpha: f64 },
}

/// What a value vector ranges over; only error messages care.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Node,
    Edge,
}

impl ElementKind {
    fn label(self) -> &'static str {
        match self {
            ElementKind::Node => "per-node",
            ElementKind::Edge => "per-edge",
        }
    }
}

/// Mean of absolute values.
pub fn aggregate(values: &[f64], kind: ElementKind) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty(kind.label()));
    }
    Ok(values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64)
}

/// Per-edge line load LL = 1/α. α = ∞ is a legal "unloadable line" and maps
/// to load 0; anything below 1 (or NaN) is rejected.
pub fn line_load(alphas: &[f64]) -> Result<Vec<f64>, MetricsError> {
    alphas
        .iter()
        .map(|&alpha| {
            if alpha >= 1.0 {
                Ok(1.0 / alpha)
            } else {
                Err(MetricsError::BadAlpha { alpha })
            }
        })
        .collect()
}

/// One (profile, measure) row of a robustness batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSummary {
    pub network: String,
    pub profile_id: String,
    pub measure: String,
    pub raw: f64,
    /// Min–max normalized value; `None` until the batch is normalized.
    pub kappa: Option<f64>,
    /// True when the (network, measure) group had no spread (κ forced to 0).
    pub degenerate: bool,
}

/// Summarize one profile's per-edge tolerances and embedding into the five
/// measure rows (κ unset — normalization is a batch operation).
pub fn summarize_profile(
    network: &str,
    profile_id: &str,
    capacities: &[f64],
    base_flows: &[f64],
    eps_floor: f64,
    embedding: &SetseEmbedding,
) -> Result<Vec<RobustnessSummary>, MetricsError> {
    let alphas = per_edge_alpha(capacities, base_flows, eps_floor);
    let loads = line_load(&alphas)?;
    let raw = [
        ("mean_alpha", aggregate(&alphas, ElementKind::Edge)?),
        ("mean_line_load", aggregate(&loads, ElementKind::Edge)?),
        (
            "mean_abs_elevation",
            aggregate(&embedding.elevation, ElementKind::Node)?,
        ),
        ("mean_strain", aggregate(&embedding.strain, ElementKind::Edge)?),
        (
            "mean_tension",
            aggregate(&embedding.tension, ElementKind::Edge)?,
        ),
    ];
    Ok(raw
        .into_iter()
        .map(|(measure, value)| RobustnessSummary {
            network: network.to_string(),
            profile_id: profile_id.to_string(),
            measure: measure.to_string(),
            raw: value,
            kappa: None,
            degenerate: false,
        })
        .collect())
}

/// Min–max normalize raw means within each (network, measure) group:
/// κ = (m̄ − min)/(max − min). Groups without spread get κ = 0 on every row
/// and are flagged degenerate.
pub fn normalize_batch(summaries: &mut [RobustnessSummary]) {
    use std::collections::HashMap;
    let mut extremes: HashMap<(String, String), (f64, f64)> = HashMap::new();
    for s in summaries.iter() {
        let entry = extremes
            .entry((s.network.clone(), s.measure.clone()))
            .or_insert((f64::INFINITY, f64::NEG_INFINITY));
        entry.0 = entry.0.min(s.raw);
        entry.1 = entry.1.max(s.raw);
    }
    for s in summaries.iter_mut() {
        let (min, max) = extremes[&(s.network.clone(), s.measure.clone())];
        if max > min {
            s.kappa = Some((s.raw - min) / (max - min));
            s.degenerate = false;
        } else {
            s.kappa = Some(0.0);
            s.degenerate = true;
        }
    }
}
