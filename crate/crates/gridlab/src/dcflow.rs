//! DC power flow on islanded grids.
//!
//! The pipeline for any line-outage state is: partition the surviving lines
//! into islands, balance each island's generation against its demand by
//! proportionally scaling the larger side, then solve the linearised (DC)
//! flow equations per island. Angles are solved from the reduced island
//! Laplacian (slack row/column removed) and line flows recovered as
//! susceptance times the angle difference, which is the incidence-matrix form
//! f = C·A·(AᵀCA)⁻¹·p with the slack column dropped.
//!
//! The slack bus of an island is its largest generator (ties broken by
//! lexicographically smallest bus id); it absorbs the rounding residual left
//! by balancing. Islands with no generation or no demand are *dead*: every
//! injection is curtailed to zero and their lines carry exactly zero flow.

use crate::grid::PowerGrid;
use crate::topology::components_of;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DcError {
    #[error("injection vector has {got} entries for {expected} buses")]
    BadLength { got: usize, expected: usize },
    #[error("alive mask has {got} entries for {expected} lines")]
    BadMask { got: usize, expected: usize },
    #[error("island containing bus '{bus}' has a singular flow system")]
    Singular { bus: String },
    #[error("non-finite flow on line '{line}'")]
    NonFinite { line: String },
    #[error("slack bus '{bus}' not found")]
    UnknownSlack { bus: String },
}

/// Per-bus net injections (MW) after balancing, tagged with the island
/// partition they were balanced for. Entries of buses in dead islands are
/// exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionVector {
    values: Vec<f64>,
    islands: Vec<Island>,
}

/// One island of the partition: bus positions plus whether the island is dead
/// (lacking generation or demand, so fully shed).
#[derive(Debug, Clone, PartialEq)]
pub struct Island {
    pub buses: Vec<usize>,
    pub dead: bool,
}

impl InjectionVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn islands(&self) -> &[Island] {
        &self.islands
    }
}

/// Flow solution for one line-outage state.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    /// Per-line flow in MW, signed positive in the line's from→to direction,
    /// in canonical line order. Removed lines and dead-island lines carry
    /// exactly 0.
    pub flows: Vec<f64>,
    /// Per island: the chosen slack and the balance residual it absorbed.
    pub islands: Vec<IslandSolve>,
}

#[derive(Debug, Clone)]
pub struct IslandSolve {
    pub buses: Vec<usize>,
    /// Slack bus position; `None` for dead islands (nothing to solve).
    pub slack: Option<usize>,
    /// MW absorbed by the slack: its injection minus its net outflow.
    pub residual: f64,
    pub dead: bool,
}

/// Proportionally balance one island of a grid.
///
/// Returns the balanced net injection of each bus in `island`, aligned with
/// the `island` slice. The larger of aggregate generation and demand is
/// scaled down to the smaller; islands missing either side come back all
/// zero (dead).
pub fn balance_island(grid: &PowerGrid, island: &[usize]) -> Vec<f64> {
    let gen: f64 = island.iter().map(|&b| grid.buses()[b].generation).sum();
    let dem: f64 = island.iter().map(|&b| grid.buses()[b].demand).sum();
    if gen <= 0.0 || dem <= 0.0 {
        return vec![0.0; island.len()];
    }
    let (gen_scale, dem_scale) = if gen > dem {
        (dem / gen, 1.0)
    } else {
        (1.0, gen / dem)
    };
    island
        .iter()
        .map(|&b| {
            let bus = &grid.buses()[b];
            bus.generation * gen_scale - bus.demand * dem_scale
        })
        .collect()
}

/// Island partition + balanced injections for the grid restricted to the
/// lines where `alive` is true.
pub fn balanced_injections(grid: &PowerGrid, alive: &[bool]) -> Result<InjectionVector, DcError> {
    if alive.len() != grid.n_lines() {
        return Err(DcError::BadMask {
            got: alive.len(),
            expected: grid.n_lines(),
        });
    }
    let comps = components_of(
        grid.n_buses(),
        grid.endpoints()
            .iter()
            .zip(alive)
            .filter(|(_, &a)| a)
            .map(|(&e, _)| e),
    );
    let mut values = vec![0.0; grid.n_buses()];
    let mut islands = Vec::with_capacity(comps.len());
    for buses in comps {
        let balanced = balance_island(grid, &buses);
        let dead = balanced.iter().all(|&p| p == 0.0)
            && (buses.iter().map(|&b| grid.buses()[b].generation).sum::<f64>() <= 0.0
                || buses.iter().map(|&b| grid.buses()[b].demand).sum::<f64>() <= 0.0);
        for (&b, &p) in buses.iter().zip(&balanced) {
            values[b] = p;
        }
        islands.push(Island { buses, dead });
    }
    Ok(InjectionVector { values, islands })
}

/// Balanced injections for the intact grid (all lines alive).
pub fn balanced_injections_full(grid: &PowerGrid) -> InjectionVector {
    balanced_injections(grid, &vec![true; grid.n_lines()]).expect("mask length matches by construction")
}

/// Solve DC flow for balanced injections over the alive lines.
pub fn solve_dc_flow(
    grid: &PowerGrid,
    alive: &[bool],
    injections: &InjectionVector,
) -> Result<FlowSolution, DcError> {
    solve_inner(grid, alive, injections, None)
}

/// As [`solve_dc_flow`] but forcing the slack bus of the island containing
/// `slack_bus_id`. Exists so tests can demonstrate slack invariance; other
/// islands keep the default choice.
pub fn solve_dc_flow_with_slack(
    grid: &PowerGrid,
    alive: &[bool],
    injections: &InjectionVector,
    slack_bus_id: &str,
) -> Result<FlowSolution, DcError> {
    let pos = grid
        .bus_position(slack_bus_id)
        .ok_or_else(|| DcError::UnknownSlack {
            bus: slack_bus_id.to_string(),
        })?;
    solve_inner(grid, alive, injections, Some(pos))
}

/// Convenience: balance and solve the intact grid in one call.
pub fn solve_full(grid: &PowerGrid) -> Result<(InjectionVector, FlowSolution), DcError> {
    let alive = vec![true; grid.n_lines()];
    let inj = balanced_injections(grid, &alive)?;
    let sol = solve_dc_flow(grid, &alive, &inj)?;
    Ok((inj, sol))
}

fn solve_inner(
    grid: &PowerGrid,
    alive: &[bool],
    injections: &InjectionVector,
    forced_slack: Option<usize>,
) -> Result<FlowSolution, DcError> {
    if alive.len() != grid.n_lines() {
        return Err(DcError::BadMask {
            got: alive.len(),
            expected: grid.n_lines(),
        });
    }
    if injections.values.len() != grid.n_buses() {
        return Err(DcError::BadLength {
            got: injections.values.len(),
            expected: grid.n_buses(),
        });
    }

    // Island lines, grouped: line -> island of its endpoints.
    let mut island_of_bus = vec![usize::MAX; grid.n_buses()];
    for (k, island) in injections.islands.iter().enumerate() {
        for &b in &island.buses {
            island_of_bus[b] = k;
        }
    }
    let mut island_lines: Vec<Vec<usize>> = vec![Vec::new(); injections.islands.len()];
    for (j, &(u, _v)) in grid.endpoints().iter().enumerate() {
        if alive[j] {
            island_lines[island_of_bus[u]].push(j);
        }
    }

    let mut flows = vec![0.0; grid.n_lines()];
    let mut reports = Vec::with_capacity(injections.islands.len());
    // Scratch map bus -> local index within the island being solved.
    let mut local = vec![usize::MAX; grid.n_buses()];

    for (k, island) in injections.islands.iter().enumerate() {
        if island.dead {
            reports.push(IslandSolve {
                buses: island.buses.clone(),
                slack: None,
                residual: 0.0,
                dead: true,
            });
            continue;
        }
        let slack = match forced_slack {
            Some(pos) if island_of_bus[pos] == k => pos,
            _ => default_slack(grid, &island.buses),
        };
        solve_island(
            grid,
            &island.buses,
            &island_lines[k],
            slack,
            &injections.values,
            &mut local,
            &mut flows,
        )?;
        // Residual the slack must absorb: its injection minus its net outflow.
        let mut outflow = 0.0;
        for &j in &island_lines[k] {
            let (u, v) = grid.endpoints()[j];
            if u == slack {
                outflow += flows[j];
            } else if v == slack {
                outflow -= flows[j];
            }
        }
        reports.push(IslandSolve {
            buses: island.buses.clone(),
            slack: Some(slack),
            residual: injections.values[slack] - outflow,
            dead: false,
        });
    }
    Ok(FlowSolution {
        flows,
        islands: reports,
    })
}

/// Largest generator in the island; ties go to the lexicographically smallest
/// bus id so the choice is stable across platforms.
fn default_slack(grid: &PowerGrid, buses: &[usize]) -> usize {
    *buses
        .iter()
        .max_by(|&&a, &&b| {
            let ga = grid.buses()[a].generation;
            let gb = grid.buses()[b].generation;
            ga.partial_cmp(&gb)
                .expect("validated generation is finite")
                // On equal generation prefer the smaller id, i.e. treat it as
                // larger in this max.
                .then_with(|| grid.buses()[b].id.cmp(&grid.buses()[a].id))
        })
        .expect("islands are non-empty")
}

fn solve_island(
    grid: &PowerGrid,
    buses: &[usize],
    lines: &[usize],
    slack: usize,
    injections: &[f64],
    local: &mut [usize],
    flows: &mut [f64],
) -> Result<(), DcError> {
    // Local indices for non-slack buses.
    let mut order = Vec::with_capacity(buses.len() - 1);
    for &b in buses {
        if b != slack {
            local[b] = order.len();
            order.push(b);
        } else {
            local[b] = usize::MAX;
        }
    }
    let m = order.len();
    if m == 0 {
        // Singleton island: no lines, nothing to solve.
        return Ok(());
    }

    let mut lap = DMatrix::<f64>::zeros(m, m);
    for &j in lines {
        let (u, v) = grid.endpoints()[j];
        let b = grid.lines()[j].susceptance;
        let (lu, lv) = (local[u], local[v]);
        if lu != usize::MAX {
            lap[(lu, lu)] += b;
        }
        if lv != usize::MAX {
            lap[(lv, lv)] += b;
        }
        if lu != usize::MAX && lv != usize::MAX {
            lap[(lu, lv)] -= b;
            lap[(lv, lu)] -= b;
        }
    }
    let rhs = DVector::<f64>::from_iterator(m, order.iter().map(|&b| injections[b]));

    // The reduced Laplacian of a connected island is symmetric positive
    // definite; Cholesky is the natural factorisation, LU the fallback.
    let theta_reduced = match lap.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => lap
            .lu()
            .solve(&rhs)
            .ok_or_else(|| DcError::Singular {
                bus: grid.buses()[buses[0]].id.clone(),
            })?,
    };

    for &j in lines {
        let (u, v) = grid.endpoints()[j];
        let theta_u = if local[u] == usize::MAX {
            0.0
        } else {
            theta_reduced[local[u]]
        };
        let theta_v = if local[v] == usize::MAX {
            0.0
        } else {
            theta_reduced[local[v]]
        };
        let f = grid.lines()[j].susceptance * (theta_u - theta_v);
        if !f.is_finite() {
            return Err(DcError::NonFinite {
                line: grid.lines()[j].id.clone(),
            });
        }
        flows[j] = f;
    }
    Ok(())
}

/// Power-balance residual at every bus: injection minus net outflow over the
/// alive lines. For a correct solution the largest magnitude is at numerical
/// noise level relative to the total injected power.
pub fn kirchhoff_residuals(
    grid: &PowerGrid,
    alive: &[bool],
    injections: &InjectionVector,
    solution: &FlowSolution,
) -> Vec<f64> {
    let mut residual: Vec<f64> = injections.values.clone();
    for (j, &(u, v)) in grid.endpoints().iter().enumerate() {
        if alive[j] {
            residual[u] -= solution.flows[j];
            residual[v] += solution.flows[j];
        }
    }
    residual
}

/// Total power delivered to loads: the sum of positive balanced injections.
///
/// After proportional balancing each island's generation equals its demand,
/// so summing the positive side counts the MW actually served.
pub fn total_power_served(grid: &PowerGrid, injections: &InjectionVector) -> f64 {
    debug_assert_eq!(injections.values.len(), grid.n_buses());
    injections.values.iter().map(|&p| p.max(0.0)).sum()
}
