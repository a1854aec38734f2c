//! Random-attack cascade campaigns.
//!
//! An attack run removes lines one at a time in a seeded random order. After
//! each removal the grid is re-islanded, re-balanced, and re-solved; any line
//! whose flow magnitude strictly exceeds its capacity trips, and the
//! relaxation repeats until no line is overloaded. The run ends at the first
//! round after which the network no longer sustains a giant component under
//! the Molloy–Reed criterion ⟨k²⟩ − 2⟨k⟩ > 0, evaluated over *all* original
//! buses (isolated buses count with degree zero).
//!
//! Campaigns repeat the run over derived seeds. Run `i` always gets seed
//! `derive_seed(master, i)`, so two campaigns with the same master seed
//! attack every profile with the same line orders — paired comparisons
//! across profiles see identical attack noise.

use crate::dcflow::{
    balanced_injections, solve_dc_flow, total_power_served, DcError, FlowSolution,
    InjectionVector,
};
use crate::grid::PowerGrid;
use crate::profiles::{apply_profile, LineLimitProfile, ProfileError, ProfileParams};
use crate::seeds::{derive_seed, permutation};
use crate::topology::degrees_of;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error(transparent)]
    Flow(#[from] DcError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// The order in which an attack run targets lines: a seeded permutation of
/// the canonical line order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackSequence {
    pub seed: u64,
    pub order: Vec<usize>,
}

pub fn attack_sequence(grid: &PowerGrid, seed: u64) -> AttackSequence {
    AttackSequence {
        seed,
        order: permutation(grid.n_lines(), seed),
    }
}

/// Molloy–Reed giant-component criterion ⟨k²⟩ − 2⟨k⟩ > 0, evaluated exactly
/// in integer arithmetic (n divides out of both sides).
pub fn molloy_reed_has_giant(degrees: &[usize]) -> bool {
    assert!(
        !degrees.is_empty(),
        "Molloy-Reed criterion needs a non-empty population"
    );
    let sum_k: u128 = degrees.iter().map(|&k| k as u128).sum();
    let sum_k2: u128 = degrees.iter().map(|&k| (k as u128) * (k as u128)).sum();
    sum_k2 > 2 * sum_k
}

/// Result of relaxing one outage to its cascade fixed point.
#[derive(Debug, Clone)]
pub struct CascadeOutcome {
    /// Lines tripped by overload (not the targeted removal), in trip order.
    pub tripped: Vec<usize>,
    /// Relaxation passes taken to reach the fixed point (≥ 1).
    pub passes: usize,
    pub injections: InjectionVector,
    pub solution: FlowSolution,
}

/// Relax the grid state in `alive` to a cascade fixed point: repeatedly
/// solve and trip every line with |flow| strictly above its capacity.
pub fn propagate_cascade(
    grid: &PowerGrid,
    capacities: &[f64],
    alive: &mut [bool],
) -> Result<CascadeOutcome, DcError> {
    let mut tripped = Vec::new();
    let mut passes = 0;
    loop {
        passes += 1;
        let injections = balanced_injections(grid, alive)?;
        let solution = solve_dc_flow(grid, alive, &injections)?;
        let mut any = false;
        for j in 0..grid.n_lines() {
            if alive[j] && solution.flows[j].abs() > capacities[j] {
                alive[j] = false;
                tripped.push(j);
                any = true;
            }
        }
        if !any {
            return Ok(CascadeOutcome {
                tripped,
                passes,
                injections,
                solution,
            });
        }
    }
}

/// One complete attack-to-collapse run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRunResult {
    pub seed: u64,
    /// 1-based attack round after which the giant component first vanished.
    pub collapse_round: usize,
    /// Per round, how many lines the cascade tripped beyond the target.
    pub cascade_sizes: Vec<usize>,
    /// Targeted line positions, round by round (prefix of the attack order
    /// restricted to lines still alive when their turn came).
    pub targets: Vec<usize>,
    pub initially_served_mw: f64,
    pub served_at_collapse_mw: f64,
    /// 1 − served/initially_served; 0 when nothing was served to begin with.
    pub power_lost_fraction: f64,
}

/// Run one seeded attack on a grid under a limit profile.
pub fn run_attack(
    grid: &PowerGrid,
    profile: &LineLimitProfile,
    seed: u64,
) -> Result<AttackRunResult, CascadeError> {
    apply_profile(grid, profile)?; // alignment check only; capacities used directly
    run_attack_with_capacities(grid, &profile.capacities, seed).map_err(CascadeError::from)
}

fn run_attack_with_capacities(
    grid: &PowerGrid,
    capacities: &[f64],
    seed: u64,
) -> Result<AttackRunResult, DcError> {
    let mut alive = vec![true; grid.n_lines()];
    let initial = balanced_injections(grid, &alive)?;
    let initially_served = total_power_served(grid, &initial);

    let sequence = attack_sequence(grid, seed);
    let mut cascade_sizes = Vec::new();
    let mut targets = Vec::new();
    let mut round = 0;
    let mut served = initially_served;

    for &target in &sequence.order {
        if !alive[target] {
            continue; // already gone in an earlier cascade
        }
        round += 1;
        targets.push(target);
        alive[target] = false;
        let outcome = propagate_cascade(grid, capacities, &mut alive)?;
        cascade_sizes.push(outcome.tripped.len());
        served = total_power_served(grid, &outcome.injections);

        let degrees = degrees_of(
            grid.n_buses(),
            grid.endpoints()
                .iter()
                .zip(&alive)
                .filter(|(_, &a)| a)
                .map(|(&e, _)| e),
        );
        if !molloy_reed_has_giant(&degrees) {
            break;
        }
    }

    let power_lost_fraction = if initially_served > 0.0 {
        1.0 - served / initially_served
    } else {
        0.0
    };
    Ok(AttackRunResult {
        seed,
        collapse_round: round,
        cascade_sizes,
        targets,
        initially_served_mw: initially_served,
        served_at_collapse_mw: served,
        power_lost_fraction,
    })
}

/// A campaign: `n_runs` independent attack runs plus aggregate statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub profile_id: String,
    pub params: ProfileParams,
    pub n_runs: usize,
    pub master_seed: u64,
    pub mean_collapse_round: f64,
    pub mean_power_lost: f64,
    pub min_power_lost: f64,
    pub max_power_lost: f64,
    pub runs: Vec<AttackRunResult>,
}

/// Run a seeded campaign against one profile. Runs execute in parallel but
/// the result is ordered by run index, so output is schedule-independent.
pub fn run_campaign(
    grid: &PowerGrid,
    profile: &LineLimitProfile,
    n_runs: usize,
    master_seed: u64,
) -> Result<CampaignResult, CascadeError> {
    apply_profile(grid, profile)?;
    let runs: Vec<AttackRunResult> = (0..n_runs)
        .into_par_iter()
        .map(|i| run_attack_with_capacities(grid, &profile.capacities, derive_seed(master_seed, i as u64)))
        .collect::<Result<_, _>>()?;
    let n = runs.len().max(1) as f64;
    let mean_collapse_round = runs.iter().map(|r| r.collapse_round as f64).sum::<f64>() / n;
    let mean_power_lost = runs.iter().map(|r| r.power_lost_fraction).sum::<f64>() / n;
    let min_power_lost = runs
        .iter()
        .map(|r| r.power_lost_fraction)
        .fold(f64::INFINITY, f64::min);
    let max_power_lost = runs
        .iter()
        .map(|r| r.power_lost_fraction)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CampaignResult {
        profile_id: profile.id.clone(),
        params: profile.params.clone(),
        n_runs,
        master_seed,
        mean_collapse_round,
        mean_power_lost,
        min_power_lost: if runs.is_empty() { 0.0 } else { min_power_lost },
        max_power_lost: if runs.is_empty() { 0.0 } else { max_power_lost },
        runs,
    })
}
