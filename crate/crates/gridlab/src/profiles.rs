//! Line-limit profiles: families of per-line capacity vectors.
//!
//! A profile assigns every line a thermal capacity derived from the intact
//! grid's base flows. The *proportional* rule sets capacity to a tolerance
//! multiple α of the base flow magnitude. The *redistribution* rule then
//! moves spare headroom ("excess" = capacity − |base flow|) from one extreme
//! of the excess distribution to the other, producing grids that are equally
//! provisioned in aggregate but very differently protected — the experiment
//! family the attack campaigns sweep over.

use crate::grid::PowerGrid;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("alpha must be finite and > 1, got {alpha}")]
    BadAlpha { alpha: f64 },
    #[error("{name} must lie in {range}, got {value}")]
    BadFraction {
        name: &'static str,
        range: &'static str,
        value: f64,
    },
    #[error("base flow vector has {got} entries for {expected} lines")]
    BadFlowLength { got: usize, expected: usize },
    #[error("external capacities must be finite and positive; line {line} has {value}")]
    BadCapacity { line: String, value: f64 },
    #[error("profile '{id}' has no tolerance parameter to derive from")]
    UnderivableBase { id: String },
    #[error("profile '{profile}' does not match grid '{grid}': {detail}")]
    GridMismatch {
        profile: String,
        grid: String,
        detail: String,
    },
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
}

/// Which excess extreme donates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Headroom-rich lines donate to headroom-poor lines.
    MostToLeast,
    /// Headroom-poor lines donate to headroom-rich lines.
    LeastToMost,
}

impl Direction {
    fn tag(self) -> &'static str {
        match self {
            Direction::MostToLeast => "mtl",
            Direction::LeastToMost => "ltm",
        }
    }
}

/// How a profile was produced; carried in every artifact so downstream rows
/// are self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileParams {
    Proportional { alpha: f64 },
    Redistributed {
        alpha: f64,
        p: f64,
        f: f64,
        q: f64,
        direction: Direction,
        /// Allocation rule for the donated pool; always "proportional"
        /// (each recipient gains in proportion to its current excess).
        alloc: String,
    },
    /// Capacities supplied from outside (e.g. real thermal ratings) rather
    /// than derived from base flows; `source` says where they came from.
    External { source: String },
}

/// A per-line capacity vector plus its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineLimitProfile {
    pub id: String,
    pub params: ProfileParams,
    /// Line ids in canonical grid order; stored so artifacts can be checked
    /// against the grid they are replayed on.
    pub line_ids: Vec<String>,
    pub capacities: Vec<f64>,
}

/// Floor (MW) substituted for |base flow| on lines that carry no flow, so
/// their capacities stay positive and per-line tolerances stay defined.
pub const EPS_FLOOR_MW: f64 = 1e-6;

/// Per-line tolerance α implied by a capacity vector: capacity divided by
/// |base flow| with the zero-flow floor, clamped below at 1.
///
/// The clamp covers one degenerate corner: redistribution can drain a
/// zero-flow line's (floor-derived) capacity below the floor itself, which
/// would imply α < 1 even though the line still has headroom over its actual
/// (zero) flow. Such a line is reported as exactly fully loaded (α = 1)
/// rather than rejected.
pub fn per_edge_alpha(capacities: &[f64], base_flows: &[f64], eps_floor: f64) -> Vec<f64> {
    capacities
        .iter()
        .zip(base_flows)
        .map(|(&c, f)| (c / f.abs().max(eps_floor)).max(1.0))
        .collect()
}

fn fmt_param(x: f64) -> String {
    let s = format!("{x:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn check_fraction(
    name: &'static str,
    value: f64,
    allow_one: bool,
) -> Result<(), ProfileError> {
    let ok = value.is_finite() && value > 0.0 && (value < 1.0 || (allow_one && value == 1.0));
    if ok {
        Ok(())
    } else {
        Err(ProfileError::BadFraction {
            name,
            range: if allow_one { "(0, 1]" } else { "(0, 1)" },
            value,
        })
    }
}

/// Capacity = α·max(|base flow|, ε-floor) on every line.
///
/// Requires α > 1 so every capacity strictly exceeds its base flow.
pub fn proportional_profile(
    grid: &PowerGrid,
    base_flows: &[f64],
    alpha: f64,
    eps_floor: f64,
) -> Result<LineLimitProfile, ProfileError> {
    if !(alpha.is_finite() && alpha > 1.0) {
        return Err(ProfileError::BadAlpha { alpha });
    }
    if base_flows.len() != grid.n_lines() {
        return Err(ProfileError::BadFlowLength {
            got: base_flows.len(),
            expected: grid.n_lines(),
        });
    }
    let capacities = base_flows
        .iter()
        .map(|f| alpha * f.abs().max(eps_floor))
        .collect();
    Ok(LineLimitProfile {
        id: format!("prop_a{}", fmt_param(alpha)),
        params: ProfileParams::Proportional { alpha },
        line_ids: grid.lines().iter().map(|l| l.id.clone()).collect(),
        capacities,
    })
}

/// Move excess capacity between the extremes of the excess distribution.
///
/// Donors are the fraction `p` of lines at the `direction` extreme of
/// excess = capacity − |base flow| (count = max(1, round(p·E)); ties broken
/// by line id). Each donor gives up fraction `f` of its excess. The pooled
/// donation goes to the fraction `q` of *non-donor* lines at the opposite
/// extreme, each receiving in proportion to its current excess (equal split
/// if the recipients' excess sums to zero). Total capacity is conserved.
///
/// Degenerate corner: if every line is a donor there are no recipients and
/// the profile is returned unchanged rather than destroying capacity.
pub fn redistribute_excess(
    grid: &PowerGrid,
    base_flows: &[f64],
    base: &LineLimitProfile,
    p: f64,
    f: f64,
    q: f64,
    direction: Direction,
) -> Result<LineLimitProfile, ProfileError> {
    check_fraction("p", p, true)?;
    check_fraction("f", f, false)?;
    check_fraction("q", q, true)?;
    if base_flows.len() != grid.n_lines() {
        return Err(ProfileError::BadFlowLength {
            got: base_flows.len(),
            expected: grid.n_lines(),
        });
    }
    verify_alignment(grid, base)?;
    let alpha = base_alpha(base)?;

    let n = grid.n_lines();
    let excess: Vec<f64> = base
        .capacities
        .iter()
        .zip(base_flows)
        .map(|(c, f)| c - f.abs())
        .collect();

    // Order line indices by excess in the donating direction, ids breaking
    // ties, so the donor cut is unambiguous.
    let ordered = |descending: bool| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| {
            let by_excess = if descending {
                excess[b].partial_cmp(&excess[a])
            } else {
                excess[a].partial_cmp(&excess[b])
            }
            .expect("excess is finite");
            by_excess.then_with(|| grid.lines()[a].id.cmp(&grid.lines()[b].id))
        });
        idx
    };
    let donors_first = ordered(direction == Direction::MostToLeast);

    let n_donors = ((p * n as f64).round() as usize).clamp(1, n);
    let donors: Vec<usize> = donors_first[..n_donors].to_vec();
    let mut is_donor = vec![false; n];
    for &d in &donors {
        is_donor[d] = true;
    }

    // Recipients: opposite extreme, drawn from non-donors only.
    let recipients_first = ordered(direction == Direction::LeastToMost);
    let n_recipients_target = ((q * n as f64).round() as usize).max(1);
    let recipients: Vec<usize> = recipients_first
        .iter()
        .copied()
        .filter(|&e| !is_donor[e])
        .take(n_recipients_target)
        .collect();
    if recipients.is_empty() {
        return Ok(LineLimitProfile {
            id: derived_id(alpha, p, f, q, direction),
            params: derived_params(alpha, p, f, q, direction),
            line_ids: base.line_ids.clone(),
            capacities: base.capacities.clone(),
        });
    }

    let mut capacities = base.capacities.clone();
    let mut pool = 0.0;
    for &d in &donors {
        let donation = f * excess[d];
        capacities[d] -= donation;
        pool += donation;
    }
    let recipient_excess: f64 = recipients.iter().map(|&r| excess[r]).sum();
    if recipient_excess > 0.0 {
        for &r in &recipients {
            capacities[r] += pool * excess[r] / recipient_excess;
        }
    } else {
        let share = pool / recipients.len() as f64;
        for &r in &recipients {
            capacities[r] += share;
        }
    }

    Ok(LineLimitProfile {
        id: derived_id(alpha, p, f, q, direction),
        params: derived_params(alpha, p, f, q, direction),
        line_ids: base.line_ids.clone(),
        capacities,
    })
}

/// Wrap externally supplied capacities (e.g. real thermal ratings) as a
/// profile. Every line needs a finite, positive capacity.
pub fn external_profile(
    grid: &PowerGrid,
    source: &str,
    capacities: Vec<f64>,
) -> Result<LineLimitProfile, ProfileError> {
    if capacities.len() != grid.n_lines() {
        return Err(ProfileError::BadFlowLength {
            got: capacities.len(),
            expected: grid.n_lines(),
        });
    }
    for (line, &c) in grid.lines().iter().zip(&capacities) {
        if !(c.is_finite() && c > 0.0) {
            return Err(ProfileError::BadCapacity {
                line: line.id.clone(),
                value: c,
            });
        }
    }
    Ok(LineLimitProfile {
        id: format!("ext_{source}"),
        params: ProfileParams::External {
            source: source.to_string(),
        },
        line_ids: grid.lines().iter().map(|l| l.id.clone()).collect(),
        capacities,
    })
}

fn base_alpha(base: &LineLimitProfile) -> Result<f64, ProfileError> {
    match &base.params {
        ProfileParams::Proportional { alpha } => Ok(*alpha),
        ProfileParams::Redistributed { alpha, .. } => Ok(*alpha),
        ProfileParams::External { .. } => Err(ProfileError::UnderivableBase {
            id: base.id.clone(),
        }),
    }
}

fn derived_id(alpha: f64, p: f64, f: f64, q: f64, direction: Direction) -> String {
    format!(
        "rd_a{}_{}_p{}_f{}_q{}",
        fmt_param(alpha),
        direction.tag(),
        fmt_param(p),
        fmt_param(f),
        fmt_param(q)
    )
}

fn derived_params(alpha: f64, p: f64, f: f64, q: f64, direction: Direction) -> ProfileParams {
    ProfileParams::Redistributed {
        alpha,
        p,
        f,
        q,
        direction,
        alloc: "proportional".to_string(),
    }
}

fn verify_alignment(grid: &PowerGrid, profile: &LineLimitProfile) -> Result<(), ProfileError> {
    let mismatch = |detail: String| ProfileError::GridMismatch {
        profile: profile.id.clone(),
        grid: grid.name().to_string(),
        detail,
    };
    if profile.line_ids.len() != grid.n_lines() || profile.capacities.len() != grid.n_lines() {
        return Err(mismatch(format!(
            "profile covers {} lines, grid has {}",
            profile.line_ids.len(),
            grid.n_lines()
        )));
    }
    for (line, pid) in grid.lines().iter().zip(&profile.line_ids) {
        if line.id != *pid {
            return Err(mismatch(format!(
                "line order differs (grid '{}' vs profile '{}')",
                line.id, pid
            )));
        }
    }
    Ok(())
}

/// Stamp a profile's capacities onto its grid, after checking alignment.
pub fn apply_profile(grid: &PowerGrid, profile: &LineLimitProfile) -> Result<PowerGrid, ProfileError> {
    verify_alignment(grid, profile)?;
    grid.with_capacities(&profile.capacities)
        .map_err(|e| ProfileError::GridMismatch {
            profile: profile.id.clone(),
            grid: grid.name().to_string(),
            detail: e.to_string(),
        })
}

/// Parameter sweep defining a profile family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileGridParams {
    pub alphas: Vec<f64>,
    pub ps: Vec<f64>,
    pub fs: Vec<f64>,
    pub qs: Vec<f64>,
    pub directions: Vec<Direction>,
    /// Also emit the plain proportional profile for each α (off by default:
    /// the study family consists of the redistributed grids).
    pub include_proportional: bool,
    pub eps_floor: f64,
}

impl ProfileGridParams {
    /// The default study sweep. `n_lines` feeds the "one line" fraction 1/E
    /// included in the p and q sets.
    pub fn default_study(n_lines: usize) -> Self {
        let single = 1.0 / n_lines.max(1) as f64;
        let mut fractions: Vec<f64> = Vec::with_capacity(6);
        for v in [single, 0.1, 0.2, 0.3, 0.4, 0.5] {
            if !fractions.iter().any(|&u| (u - v).abs() < 1e-12) {
                fractions.push(v);
            }
        }
        ProfileGridParams {
            alphas: vec![
                1.005, 1.025, 1.1, 1.2, 1.5, 2.0, 3.0, 5.0, 7.0, 10.0, 20.0,
            ],
            ps: fractions.clone(),
            fs: vec![0.25, 0.5, 0.75, 0.99],
            qs: fractions,
            directions: vec![Direction::MostToLeast, Direction::LeastToMost],
            include_proportional: false,
            eps_floor: EPS_FLOOR_MW,
        }
    }
}

/// Generate the full profile family in canonical order: α outer, then
/// direction, p, f, q. Ids are unique within the family.
pub fn generate_profile_grid(
    grid: &PowerGrid,
    base_flows: &[f64],
    params: &ProfileGridParams,
) -> Result<Vec<LineLimitProfile>, ProfileError> {
    let mut out = Vec::new();
    for &alpha in &params.alphas {
        let base = proportional_profile(grid, base_flows, alpha, params.eps_floor)?;
        if params.include_proportional {
            out.push(base.clone());
        }
        for &direction in &params.directions {
            for &p in &params.ps {
                for &f in &params.fs {
                    for &q in &params.qs {
                        out.push(redistribute_excess(
                            grid, base_flows, &base, p, f, q, direction,
                        )?);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One JSON-lines record: a profile tagged with its experiment id.
#[derive(Debug, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub experiment: String,
    #[serde(flatten)]
    pub profile: LineLimitProfile,
}

/// Write profiles as JSON lines (one object per line, canonical order).
pub fn write_profiles_jsonl(
    path: &Path,
    experiment: &str,
    profiles: &[LineLimitProfile],
) -> Result<(), ProfileError> {
    let io_err = |e: std::io::Error| ProfileError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    for profile in profiles {
        let record = ProfileRecord {
            experiment: experiment.to_string(),
            profile: profile.clone(),
        };
        let line = serde_json::to_string(&record).map_err(|e| ProfileError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Read a JSON-lines profile artifact back.
pub fn read_profiles_jsonl(path: &Path) -> Result<Vec<ProfileRecord>, ProfileError> {
    let io_err = |e: std::io::Error| ProfileError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| ProfileError::Io {
            path: path.display().to_string(),
            detail: format!("line {}: {}", i + 1, e),
        })?;
        out.push(record);
    }
    Ok(out)
}
