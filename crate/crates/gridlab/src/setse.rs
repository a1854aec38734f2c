//! Strain–Elevation–Tension Spring embedding (SETSe).
//!
//! A loaded grid is recast as a physical system: each bus becomes a unit
//! mass free to move vertically, pushed up or down by a force proportional
//! to its normalised net power; each line becomes a spring of natural
//! (horizontal) length 1 whose stiffness grows with how lightly the line is
//! loaded. Damped Newtonian relaxation settles the system, and the
//! equilibrium geometry — node elevations, spring strains and tensions — is
//! the embedding. Tense, steep embeddings signal fragile grids.

use crate::grid::PowerGrid;
use crate::profiles::{per_edge_alpha, LineLimitProfile};
use crate::topology::components_of;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default stiffness floor (α = 1, a line with no headroom).
pub const K_MIN_DEFAULT: f64 = 100.0;
/// Default stiffness span; α → ∞ approaches `K_MIN_DEFAULT + K_RANGE_DEFAULT`.
pub const K_RANGE_DEFAULT: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum SetseError {
    #[error("alpha {alpha} cannot be mapped to a stiffness (needs finite alpha >= 1)")]
    BadAlpha { alpha: f64 },
    #[error("invalid spring system: {0}")]
    BadSystem(String),
    #[error(
        "no equilibrium after {iterations} iterations and {retunes} restarts \
         (best residual {residual:.3e}, tolerance {tolerance:.3e})"
    )]
    NonConvergence {
        iterations: u64,
        retunes: u32,
        residual: f64,
        tolerance: f64,
    },
    #[error("embedding profile '{profile}': {source}")]
    Profile {
        profile: String,
        #[source]
        source: Box<SetseError>,
    },
}

/// Map a line's tolerance α to a spring stiffness:
/// k = k_range·(1 − 1/α) + k_min.
///
/// Fully loaded lines (α = 1) get the softest spring `k_min`; unloadable
/// lines (α → ∞) approach `k_min + k_range`.
pub fn stiffness_from_alpha(alpha: f64, k_min: f64, k_range: f64) -> Result<f64, SetseError> {
    if !(alpha.is_finite() && alpha >= 1.0) {
        return Err(SetseError::BadAlpha { alpha });
    }
    Ok(k_range * (1.0 - 1.0 / alpha) + k_min)
}

/// Per-node vertical forces from a grid's raw net injections.
///
/// Within each connected component the injection vector G is L2-normalised
/// (F = 2·G/‖G‖₂) and then mean-centred so each component's forces sum to
/// zero. Components with no injection at all get zero force. The scale of G
/// cancels: only the injection *pattern* shapes the embedding.
pub fn forces_from_injections(grid: &PowerGrid) -> Vec<f64> {
    let injections = grid.net_injections();
    let mut forces = vec![0.0; grid.n_buses()];
    for component in components_of(grid.n_buses(), grid.endpoints().iter().copied()) {
        let norm = component
            .iter()
            .map(|&b| injections[b] * injections[b])
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            continue;
        }
        let mean = component.iter().map(|&b| 2.0 * injections[b] / norm).sum::<f64>()
            / component.len() as f64;
        for &b in &component {
            forces[b] = 2.0 * injections[b] / norm - mean;
        }
    }
    forces
}

/// One spring: endpoints (node indices), stiffness, natural length.
#[derive(Debug, Clone, PartialEq)]
pub struct SpringEdge {
    pub a: usize,
    pub b: usize,
    pub stiffness: f64,
    pub natural_length: f64,
}

/// A vertical-spring system ready to relax.
#[derive(Debug, Clone, PartialEq)]
pub struct SpringSystem {
    forces: Vec<f64>,
    edges: Vec<SpringEdge>,
}

impl SpringSystem {
    pub fn new(forces: Vec<f64>, edges: Vec<SpringEdge>) -> Result<Self, SetseError> {
        let n = forces.len();
        if let Some(f) = forces.iter().find(|f| !f.is_finite()) {
            return Err(SetseError::BadSystem(format!("non-finite force {f}")));
        }
        for (i, e) in edges.iter().enumerate() {
            if e.a >= n || e.b >= n {
                return Err(SetseError::BadSystem(format!(
                    "edge {i} references node {} beyond {n} nodes",
                    e.a.max(e.b)
                )));
            }
            if e.a == e.b {
                return Err(SetseError::BadSystem(format!("edge {i} is a self-spring")));
            }
            if !(e.stiffness.is_finite() && e.stiffness > 0.0) {
                return Err(SetseError::BadSystem(format!(
                    "edge {i} has non-positive stiffness {}",
                    e.stiffness
                )));
            }
            if !(e.natural_length.is_finite() && e.natural_length > 0.0) {
                return Err(SetseError::BadSystem(format!(
                    "edge {i} has non-positive natural length {}",
                    e.natural_length
                )));
            }
        }
        Ok(SpringSystem { forces, edges })
    }

    pub fn forces(&self) -> &[f64] {
        &self.forces
    }

    pub fn edges(&self) -> &[SpringEdge] {
        &self.edges
    }
}

/// Relaxation controls. The first attempt derives its timestep and drag from
/// the component's stiffest spring: δt = dt_factor·√(1/k_max),
/// γ = gamma_factor·√(k_max) (γ = 2√k is critical damping for the stiffest
/// mode). Near equilibrium the *tangent* stiffness of a gently strained
/// spring is far below k, so those defaults can overdamp the slow modes;
/// stalled attempts retune with drag ÷4 and timestep ×4 (capped by a
/// stability bound) until the residual decays fast enough to land.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpringSolverConfig {
    pub dt_factor: f64,
    pub gamma_factor: f64,
    /// Convergence tolerance as a fraction of Σ|F| per component...
    /// the residual Σ|net force| must drop below tol_factor·Σ|F|.
    pub tol_factor: f64,
    /// Absolute tolerance override; when set it replaces the Σ|F|-scaled
    /// tolerance in every component.
    pub tolerance_abs: Option<f64>,
    pub max_iterations: u64,
    /// Retunes allowed, shared by the two failure modes: a diverging attempt
    /// restarts from flat with the timestep halved; a stalling attempt keeps
    /// its state and continues with drag ÷4 and timestep ×4.
    pub max_retunes: u32,
    /// Steps between divergence/stall checkpoints.
    pub divergence_check_every: u64,
    /// Residual growth factor between checkpoints that flags divergence.
    pub divergence_growth: f64,
}

impl Default for SpringSolverConfig {
    fn default() -> Self {
        SpringSolverConfig {
            dt_factor: 0.01,
            gamma_factor: 2.0,
            tol_factor: 1e-6,
            tolerance_abs: None,
            max_iterations: 1_000_000,
            max_retunes: 8,
            divergence_check_every: 10_000,
            divergence_growth: 10.0,
        }
    }
}

/// How an equilibrium was reached; attached to every embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    /// Integration steps of the successful attempt, summed over components.
    pub iterations: u64,
    /// Σ|net force| at emission, summed over components.
    pub residual: f64,
    /// Tolerance actually enforced (sum of per-component tolerances).
    pub tolerance: f64,
    /// Timestep of the final attempt in the stiffest component.
    pub dt: f64,
    pub gamma: f64,
    /// Divergence restarts consumed (max over components).
    pub retunes: u32,
    /// Force normalization that produced the input forces ("l2" when derived
    /// from grid injections, "as_given" for hand-built systems).
    pub force_norm: String,
}

/// Equilibrium embedding: per-node elevation (mean 0 per component),
/// per-edge strain and tension in the system's edge order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetseEmbedding {
    pub elevation: Vec<f64>,
    pub strain: Vec<f64>,
    pub tension: Vec<f64>,
    pub convergence: Convergence,
}

/// Relax a spring system to mechanical equilibrium.
///
/// Semi-implicit Euler with unit masses and velocity drag, solved per
/// connected component (components do not interact). Divergence — a
/// non-finite residual or 10× residual growth between checkpoints — halves
/// the timestep and restarts, up to `max_retunes` times.
pub fn solve_equilibrium(
    system: &SpringSystem,
    config: &SpringSolverConfig,
) -> Result<SetseEmbedding, SetseError> {
    let n = system.forces.len();
    let mut forces = system.forces.clone();
    let components = components_of(n, system.edges.iter().map(|e| (e.a, e.b)));
    // Enforce the balance invariant: forces in each component sum to zero.
    for component in &components {
        let mean = component.iter().map(|&i| forces[i]).sum::<f64>() / component.len() as f64;
        for &i in component {
            forces[i] -= mean;
        }
    }

    let mut component_of = vec![0usize; n];
    for (c, comp) in components.iter().enumerate() {
        for &i in comp {
            component_of[i] = c;
        }
    }
    let mut edges_by_component: Vec<Vec<&SpringEdge>> = vec![Vec::new(); components.len()];
    for e in &system.edges {
        edges_by_component[component_of[e.a]].push(e);
    }

    let mut elevation = vec![0.0; n];
    let mut total_iterations = 0u64;
    let mut total_residual = 0.0;
    let mut total_tolerance = 0.0;
    let mut final_dt = 0.0;
    let mut final_gamma = 0.0;
    let mut max_retunes_used = 0u32;

    for (c, component) in components.iter().enumerate() {
        let edges = &edges_by_component[c];
        if edges.is_empty() {
            continue; // isolated node: centred force is zero, stays at z = 0
        }
        let k_max = edges
            .iter()
            .map(|e| e.stiffness)
            .fold(f64::NEG_INFINITY, f64::max);
        let dt0 = config.dt_factor * (1.0 / k_max).sqrt();
        let gamma0 = config.gamma_factor * k_max.sqrt();
        let force_sum: f64 = component.iter().map(|&i| forces[i].abs()).sum();
        let tolerance = config
            .tolerance_abs
            .unwrap_or(config.tol_factor * force_sum);

        let outcome = relax_component(component, edges, &forces, dt0, gamma0, tolerance, config)?;
        for (&i, &z) in component.iter().zip(&outcome.elevation) {
            elevation[i] = z;
        }
        total_iterations += outcome.iterations;
        total_residual += outcome.residual;
        total_tolerance += tolerance;
        final_dt = outcome.dt;
        final_gamma = outcome.gamma;
        max_retunes_used = max_retunes_used.max(outcome.retunes);
    }

    // Mean-zero elevations per component (drift is zero in exact arithmetic;
    // this pins it against float noise and is the documented normalization).
    for component in &components {
        let mean = component.iter().map(|&i| elevation[i]).sum::<f64>() / component.len() as f64;
        for &i in component {
            elevation[i] -= mean;
        }
    }

    let (strain, tension) = strains_and_tensions(&system.edges, &elevation);
    Ok(SetseEmbedding {
        elevation,
        strain,
        tension,
        convergence: Convergence {
            iterations: total_iterations,
            residual: total_residual,
            tolerance: total_tolerance,
            dt: final_dt,
            gamma: final_gamma,
            retunes: max_retunes_used,
            force_norm: "as_given".to_string(),
        },
    })
}

struct ComponentOutcome {
    elevation: Vec<f64>,
    iterations: u64,
    residual: f64,
    dt: f64,
    gamma: f64,
    retunes: u32,
}

fn relax_component(
    component: &[usize],
    edges: &[&SpringEdge],
    forces: &[f64],
    dt0: f64,
    gamma0: f64,
    tolerance: f64,
    config: &SpringSolverConfig,
) -> Result<ComponentOutcome, SetseError> {
    let m = component.len();
    let mut local = std::collections::HashMap::with_capacity(m);
    for (li, &g) in component.iter().enumerate() {
        local.insert(g, li);
    }
    let local_edges: Vec<(usize, usize, f64, f64)> = edges
        .iter()
        .map(|e| (local[&e.a], local[&e.b], e.stiffness, e.natural_length))
        .collect();
    let local_forces: Vec<f64> = component.iter().map(|&g| forces[g]).collect();

    // A spring's tangent stiffness never exceeds k, so by Gershgorin the
    // stiffness operator's largest eigenvalue is at most twice the largest
    // per-node stiffness sum; a step of 1/sqrt(that) keeps the integrator
    // stable no matter how far the stall ladder stretches it.
    let mut stiffness_sum = vec![0.0_f64; m];
    for &(a, b, k, _) in &local_edges {
        stiffness_sum[a] += k;
        stiffness_sum[b] += k;
    }
    let row_max = stiffness_sum.iter().fold(0.0_f64, |acc, &s| acc.max(s));
    let dt_cap = 1.0 / (2.0 * row_max).sqrt();

    let mut z = vec![0.0; m];
    let mut v = vec![0.0; m];
    let mut net = vec![0.0; m];
    let mut stalls = 0u32; // lighten drag, lengthen step, keep state
    let mut halvings = 0u32; // halve step, restart from flat
    let mut best_residual = f64::INFINITY;
    let mut best_iterations = 0u64;

    loop {
        let boost = 4f64.powi(stalls as i32);
        let dt = (dt0 * boost).min(dt_cap) / 2f64.powi(halvings as i32);
        let gamma = gamma0 / boost;
        let retunes = stalls + halvings;
        let mut checkpoint_residual = f64::INFINITY;
        let mut failure = None;

        for iter in 0..=config.max_iterations {
            net.copy_from_slice(&local_forces);
            for &(a, b, k, d) in &local_edges {
                let dz = z[a] - z[b];
                let length = (d * d + dz * dz).sqrt();
                // Spring pulls its endpoints together along itself; the
                // vertical component on `a` points toward `b`.
                let vertical = k * (length - d) * dz / length;
                net[a] -= vertical;
                net[b] += vertical;
            }
            let residual: f64 = net.iter().map(|f| f.abs()).sum();
            if residual <= tolerance {
                return Ok(ComponentOutcome {
                    elevation: z,
                    iterations: iter,
                    residual,
                    dt,
                    gamma,
                    retunes,
                });
            }
            if !residual.is_finite() {
                failure = Some(Failure::Diverged);
                break;
            }
            if iter > 0 && iter % config.divergence_check_every == 0 {
                if residual > config.divergence_growth * checkpoint_residual {
                    failure = Some(Failure::Diverged);
                    break;
                }
                // Project the current decay rate over the remaining budget;
                // demand twice the barely-sufficient rate, because decay only
                // slows as the fast modes die off. A trajectory that cannot
                // land is abandoned early instead of grinding the budget.
                let rate = (checkpoint_residual / residual).ln()
                    / config.divergence_check_every as f64;
                let needed = (residual / tolerance).ln()
                    / (config.max_iterations - iter) as f64;
                if rate < 2.0 * needed {
                    failure = Some(Failure::Stalled);
                    break;
                }
                checkpoint_residual = residual;
            }
            best_residual = best_residual.min(residual);
            best_iterations = iter;
            for i in 0..m {
                v[i] += dt * (net[i] - gamma * v[i]);
                z[i] += dt * v[i];
            }
        }

        if retunes >= config.max_retunes {
            return Err(SetseError::NonConvergence {
                iterations: best_iterations,
                retunes: config.max_retunes,
                residual: best_residual,
                tolerance,
            });
        }
        match failure.unwrap_or(Failure::Stalled) {
            Failure::Diverged => {
                halvings += 1;
                z.iter_mut().for_each(|z| *z = 0.0);
                v.iter_mut().for_each(|v| *v = 0.0);
            }
            Failure::Stalled => {
                stalls += 1;
                // Keep the hard-won elevations; drop momentum tuned to the
                // old drag.
                v.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}

enum Failure {
    Diverged,
    Stalled,
}

fn strains_and_tensions(edges: &[SpringEdge], elevation: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut strain = Vec::with_capacity(edges.len());
    let mut tension = Vec::with_capacity(edges.len());
    for e in edges {
        let dz = elevation[e.a] - elevation[e.b];
        let length = (e.natural_length * e.natural_length + dz * dz).sqrt();
        strain.push((length - e.natural_length) / e.natural_length);
        tension.push(e.stiffness * (length - e.natural_length));
    }
    (strain, tension)
}

/// Embed a grid under a limit profile: per-line α → stiffness, injections →
/// forces, natural length 1, then relax.
pub fn embed_grid(
    grid: &PowerGrid,
    profile: &LineLimitProfile,
    base_flows: &[f64],
    k_min: f64,
    k_range: f64,
    eps_floor: f64,
    config: &SpringSolverConfig,
) -> Result<SetseEmbedding, SetseError> {
    let wrap = |source: SetseError| SetseError::Profile {
        profile: profile.id.clone(),
        source: Box::new(source),
    };
    if profile.capacities.len() != grid.n_lines() || base_flows.len() != grid.n_lines() {
        return Err(wrap(SetseError::BadSystem(format!(
            "profile/base flows cover {}/{} lines, grid has {}",
            profile.capacities.len(),
            base_flows.len(),
            grid.n_lines()
        ))));
    }
    let alphas = per_edge_alpha(&profile.capacities, base_flows, eps_floor);
    let edges = grid
        .endpoints()
        .iter()
        .zip(&alphas)
        .map(|(&(a, b), &alpha)| {
            Ok(SpringEdge {
                a,
                b,
                stiffness: stiffness_from_alpha(alpha, k_min, k_range)?,
                natural_length: 1.0,
            })
        })
        .collect::<Result<Vec<_>, SetseError>>()
        .map_err(wrap)?;
    let system = SpringSystem::new(forces_from_injections(grid), edges).map_err(wrap)?;
    let mut embedding = solve_equilibrium(&system, config).map_err(wrap)?;
    embedding.convergence.force_norm = "l2".to_string();
    Ok(embedding)
}
