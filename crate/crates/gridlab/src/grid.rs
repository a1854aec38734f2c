//! Grid data model, validation, and file ingestion.
//!
//! A [`PowerGrid`] is an undirected multigraph: buses carry generation and
//! demand in MW plus planar coordinates; lines carry a susceptance and an
//! optional thermal capacity. Construction validates the whole record set, so
//! every `PowerGrid` in circulation satisfies the structural invariants
//! (unique ids, resolvable endpoints, positive susceptances, no self-loops).

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("{path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("invalid grid '{grid}': {detail}")]
    Validation { grid: String, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Bus: a node with generation and demand in MW and a planar position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub generation: f64,
    pub demand: f64,
}

impl Bus {
    /// Net injection in MW (generation minus demand), derived on demand.
    pub fn net_injection(&self) -> f64 {
        self.generation - self.demand
    }
}

/// Transmission line between two buses.
///
/// `susceptance` is the DC-flow weight (per unit); `capacity`, when present,
/// is a thermal limit in MW. Base grids usually ship without capacities —
/// limit profiles supply them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    pub from: String,
    pub to: String,
    pub susceptance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
}

/// Input format accepted by [`load_grid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridFormat {
    /// A single JSON document: `{name, buses: [...], lines: [...]}`.
    CanonicalJson,
    /// A directory holding `nodes.csv` and `edges.csv`.
    NodeEdgeCsv,
}

/// Validated grid. Bus and line order is the file order and is the canonical
/// order used by every vector keyed "per bus" / "per line" in this crate.
#[derive(Debug, Clone)]
pub struct PowerGrid {
    name: String,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    bus_index: HashMap<String, usize>,
    endpoints: Vec<(usize, usize)>,
}

/// Serialized shape of a grid file; validated into [`PowerGrid`] on load.
#[derive(Debug, Serialize, Deserialize)]
struct GridFile {
    name: String,
    buses: Vec<Bus>,
    lines: Vec<Line>,
}

impl PowerGrid {
    /// Validate a record set into a grid.
    pub fn new(name: String, buses: Vec<Bus>, lines: Vec<Line>) -> Result<Self, GridError> {
        let fail = |detail: String| GridError::Validation {
            grid: name.clone(),
            detail,
        };
        if buses.is_empty() {
            return Err(fail("bus list is empty".into()));
        }
        let mut bus_index = HashMap::with_capacity(buses.len());
        for (i, bus) in buses.iter().enumerate() {
            if bus.id.is_empty() {
                return Err(fail(format!("bus {i} has an empty id")));
            }
            for (label, v) in [
                ("x", bus.x),
                ("y", bus.y),
                ("generation", bus.generation),
                ("demand", bus.demand),
            ] {
                if !v.is_finite() {
                    return Err(fail(format!("bus '{}': {label} is not finite", bus.id)));
                }
            }
            if bus.generation < 0.0 || bus.demand < 0.0 {
                return Err(fail(format!(
                    "bus '{}': generation and demand must be non-negative",
                    bus.id
                )));
            }
            if bus_index.insert(bus.id.clone(), i).is_some() {
                return Err(fail(format!("duplicate bus id '{}'", bus.id)));
            }
        }
        let mut line_ids = HashMap::with_capacity(lines.len());
        let mut endpoints = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            if line.id.is_empty() {
                return Err(fail(format!("line {i} has an empty id")));
            }
            if line_ids.insert(line.id.clone(), i).is_some() {
                return Err(fail(format!("duplicate line id '{}'", line.id)));
            }
            let from = *bus_index.get(&line.from).ok_or_else(|| {
                fail(format!(
                    "line '{}': endpoint '{}' is not a bus",
                    line.id, line.from
                ))
            })?;
            let to = *bus_index.get(&line.to).ok_or_else(|| {
                fail(format!(
                    "line '{}': endpoint '{}' is not a bus",
                    line.id, line.to
                ))
            })?;
            if from == to {
                return Err(fail(format!("line '{}' is a self-loop", line.id)));
            }
            if !(line.susceptance.is_finite() && line.susceptance > 0.0) {
                return Err(fail(format!(
                    "line '{}': susceptance must be finite and positive",
                    line.id
                )));
            }
            if let Some(cap) = line.capacity {
                if !(cap.is_finite() && cap > 0.0) {
                    return Err(fail(format!(
                        "line '{}': capacity must be finite and positive",
                        line.id
                    )));
                }
            }
            endpoints.push((from, to));
        }
        Ok(PowerGrid {
            name,
            buses,
            lines,
            bus_index,
            endpoints,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    /// Position of a bus id in the canonical bus order.
    pub fn bus_position(&self, id: &str) -> Option<usize> {
        self.bus_index.get(id).copied()
    }

    /// Position of a line id in the canonical line order.
    pub fn line_position(&self, id: &str) -> Option<usize> {
        self.lines.iter().position(|l| l.id == id)
    }

    /// Endpoint bus positions `(from, to)` of every line, in line order.
    pub fn endpoints(&self) -> &[(usize, usize)] {
        &self.endpoints
    }

    /// Per-bus net injection in MW, in bus order.
    pub fn net_injections(&self) -> Vec<f64> {
        self.buses.iter().map(Bus::net_injection).collect()
    }

    /// Replace every line capacity (used when applying a limit profile).
    /// `capacities` is in line order.
    pub fn with_capacities(&self, capacities: &[f64]) -> Result<Self, GridError> {
        if capacities.len() != self.lines.len() {
            return Err(GridError::Validation {
                grid: self.name.clone(),
                detail: format!(
                    "capacity vector has {} entries for {} lines",
                    capacities.len(),
                    self.lines.len()
                ),
            });
        }
        let lines = self
            .lines
            .iter()
            .zip(capacities)
            .map(|(l, &c)| Line {
                capacity: Some(c),
                ..l.clone()
            })
            .collect();
        PowerGrid::new(self.name.clone(), self.buses.clone(), lines)
    }

    /// Serialize to the canonical JSON document (pretty-printed, field order
    /// fixed; byte-identical for identical grids).
    pub fn to_canonical_json(&self) -> String {
        let file = GridFile {
            name: self.name.clone(),
            buses: self.buses.clone(),
            lines: self.lines.clone(),
        };
        let mut out = serde_json::to_string_pretty(&file).expect("grid serialization");
        out.push('\n');
        out
    }

    pub fn write_canonical_json(&self, path: &Path) -> Result<(), GridError> {
        std::fs::write(path, self.to_canonical_json()).map_err(|source| GridError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Load and validate a grid file.
///
/// JSON parse failures carry the line/column from the parser; CSV failures
/// carry the file and record position.
pub fn load_grid(path: &Path, format: GridFormat) -> Result<PowerGrid, GridError> {
    match format {
        GridFormat::CanonicalJson => load_json(path),
        GridFormat::NodeEdgeCsv => load_csv_dir(path),
    }
}

fn load_json(path: &Path) -> Result<PowerGrid, GridError> {
    let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: GridFile = serde_json::from_str(&text).map_err(|e| GridError::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    PowerGrid::new(file.name, file.buses, file.lines)
}

/// Node/edge CSV directory: `nodes.csv` with header
/// `id,x,y,generation,demand` and `edges.csv` with header
/// `id,from,to,susceptance[,capacity]` (empty capacity = none).
fn load_csv_dir(dir: &Path) -> Result<PowerGrid, GridError> {
    let nodes_path = dir.join("nodes.csv");
    let edges_path = dir.join("edges.csv");

    #[derive(Deserialize)]
    struct NodeRow {
        id: String,
        x: f64,
        y: f64,
        generation: f64,
        demand: f64,
    }
    #[derive(Deserialize)]
    struct EdgeRow {
        id: String,
        from: String,
        to: String,
        susceptance: f64,
        #[serde(default)]
        capacity: Option<f64>,
    }

    fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, GridError> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| GridError::Parse {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
        let mut rows = Vec::new();
        for (i, row) in reader.deserialize().enumerate() {
            let row: T = row.map_err(|e| GridError::Parse {
                path: path.display().to_string(),
                detail: format!("record {}: {}", i + 1, e),
            })?;
            rows.push(row);
        }
        Ok(rows)
    }

    let nodes: Vec<NodeRow> = read_rows(&nodes_path)?;
    let edges: Vec<EdgeRow> = read_rows(&edges_path)?;
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "grid".to_string());
    let buses = nodes
        .into_iter()
        .map(|n| Bus {
            id: n.id,
            x: n.x,
            y: n.y,
            generation: n.generation,
            demand: n.demand,
        })
        .collect();
    let lines = edges
        .into_iter()
        .map(|e| Line {
            id: e.id,
            from: e.from,
            to: e.to,
            susceptance: e.susceptance,
            capacity: e.capacity,
        })
        .collect();
    PowerGrid::new(name, buses, lines)
}

/// Render a short human-readable description (used by the CLI `ingest`
/// subcommand alongside the summary statistics).
pub fn describe(grid: &PowerGrid) -> String {
    let mut s = String::new();
    let gen: f64 = grid.buses().iter().map(|b| b.generation).sum();
    let dem: f64 = grid.buses().iter().map(|b| b.demand).sum();
    let _ = writeln!(
        s,
        "{}: {} buses, {} lines, {:.1} MW generation, {:.1} MW demand",
        grid.name(),
        grid.n_buses(),
        grid.n_lines(),
        gen,
        dem
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bus(id: &str, g: f64, d: f64) -> Bus {
        Bus {
            id: id.into(),
            x: 0.0,
            y: 0.0,
            generation: g,
            demand: d,
        }
    }

    fn line(id: &str, from: &str, to: &str, b: f64) -> Line {
        Line {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            susceptance: b,
            capacity: None,
        }
    }

    #[test]
    fn test_valid_grid_roundtrip() {
        let g = PowerGrid::new(
            "t".into(),
            vec![bus("a", 10.0, 0.0), bus("b", 0.0, 10.0)],
            vec![line("l1", "a", "b", 2.0)],
        )
        .unwrap();
        let json = g.to_canonical_json();
        let parsed: GridFile = serde_json::from_str(&json).unwrap();
        let g2 = PowerGrid::new(parsed.name, parsed.buses, parsed.lines).unwrap();
        assert_eq!(g2.n_buses(), 2);
        assert_eq!(g2.endpoints(), &[(0, 1)]);
        assert_eq!(g2.to_canonical_json(), json);
    }

    #[test]
    fn test_duplicate_bus_id_rejected() {
        let err = PowerGrid::new(
            "t".into(),
            vec![bus("a", 0.0, 0.0), bus("a", 0.0, 0.0)],
            vec![],
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate bus id 'a'"), "{err}");
    }

    #[test]
    fn test_unknown_endpoint_rejected() {
        let err = PowerGrid::new(
            "t".into(),
            vec![bus("a", 0.0, 0.0)],
            vec![line("l1", "a", "zz", 1.0)],
        )
        .unwrap_err();
        assert!(err.to_string().contains("'zz' is not a bus"), "{err}");
    }

    #[test]
    fn test_self_loop_rejected() {
        let err = PowerGrid::new(
            "t".into(),
            vec![bus("a", 0.0, 0.0)],
            vec![line("l1", "a", "a", 1.0)],
        )
        .unwrap_err();
        assert!(err.to_string().contains("self-loop"), "{err}");
    }

    #[test]
    fn test_nonpositive_susceptance_rejected() {
        for b in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            let err = PowerGrid::new(
                "t".into(),
                vec![bus("a", 0.0, 0.0), bus("b", 0.0, 0.0)],
                vec![line("l1", "a", "b", b)],
            )
            .unwrap_err();
            assert!(err.to_string().contains("susceptance"), "{b}: {err}");
        }
    }

    #[test]
    fn test_empty_bus_list_rejected() {
        let err = PowerGrid::new("t".into(), vec![], vec![]).unwrap_err();
        assert!(err.to_string().contains("empty"), "{err}");
    }

    #[test]
    fn test_parallel_lines_allowed() {
        let g = PowerGrid::new(
            "t".into(),
            vec![bus("a", 1.0, 0.0), bus("b", 0.0, 1.0)],
            vec![line("l1", "a", "b", 1.0), line("l2", "b", "a", 2.0)],
        )
        .unwrap();
        assert_eq!(g.n_lines(), 2);
    }

    #[test]
    fn test_with_capacities_replaces_all() {
        let g = PowerGrid::new(
            "t".into(),
            vec![bus("a", 1.0, 0.0), bus("b", 0.0, 1.0)],
            vec![line("l1", "a", "b", 1.0)],
        )
        .unwrap();
        let g2 = g.with_capacities(&[5.0]).unwrap();
        assert_eq!(g2.lines()[0].capacity, Some(5.0));
        assert!(g.with_capacities(&[1.0, 2.0]).is_err());
        assert!(g.with_capacities(&[-1.0]).is_err());
    }

    #[test]
    fn test_json_parse_error_carries_position() {
        let dir = std::env::temp_dir().join(format!("gridlab-badjson-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.json");
        std::fs::write(&path, "{\"name\": \"x\", \"buses\": [,]}").unwrap();
        let err = load_grid(&path, GridFormat::CanonicalJson).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "{msg}");
        std::fs::remove_dir_all(&dir).ok();
    }
}
