//! Ordinary kriging of node and edge quantities onto a map raster.
//!
//! Scattered samples (node elevations at bus coordinates, edge quantities at
//! line midpoints) are interpolated with ordinary kriging under a spherical
//! variogram. Distances are planar Euclidean on the stored x/y coordinates —
//! "spherical" names the variogram's shape, not great-circle geometry. Every
//! cell also gets its kriging variance, so maps can show where the
//! interpolation is guessing.

use crate::grid::PowerGrid;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("variogram fitting needs at least 5 points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate geometry: all points coincide")]
    AllCoincident,
    #[error("invalid raster spec: {0}")]
    BadSpec(String),
    #[error("variogram model invalid: {0}")]
    BadModel(String),
    #[error("kriging system is singular even after merging duplicates")]
    SingularSystem,
    #[error("unbiasedness violated: weights at cell {cell} sum to 1{sum:+e}")]
    WeightSum { cell: usize, sum: f64 },
    #[error("value vector length {got} does not match point count {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One scattered observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

fn dist(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}

/// Spherical variogram γ(h) = c₀ + c·(1.5·h/a − 0.5·(h/a)³) for h ≤ a,
/// plateauing at c₀ + c beyond the range; γ(0) = 0 at the point itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    /// Nugget c₀ ≥ 0: jump right off a sample.
    pub nugget: f64,
    /// Partial sill c ≥ 0: spatially structured variance.
    pub sill: f64,
    /// Range a > 0: distance where correlation dies out.
    pub range: f64,
}

impl VariogramModel {
    pub fn new(nugget: f64, sill: f64, range: f64) -> Result<Self, GeoError> {
        if !(nugget >= 0.0 && sill >= 0.0 && range > 0.0)
            || !nugget.is_finite()
            || !sill.is_finite()
            || !range.is_finite()
        {
            return Err(GeoError::BadModel(format!(
                "nugget {nugget}, sill {sill}, range {range}"
            )));
        }
        Ok(VariogramModel {
            nugget,
            sill,
            range,
        })
    }

    pub fn gamma(&self, h: f64) -> f64 {
        if h <= 0.0 {
            0.0
        } else if h >= self.range {
            self.nugget + self.sill
        } else {
            let r = h / self.range;
            self.nugget + self.sill * (1.5 * r - 0.5 * r * r * r)
        }
    }
}

/// One distance bin of the empirical semivariogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemivariogramBin {
    /// Mean pair distance within the bin.
    pub distance: f64,
    /// Average half squared value difference.
    pub gamma: f64,
    pub pairs: usize,
}

/// Default bin count for [`empirical_semivariogram`].
pub const SEMIVARIOGRAM_BINS_DEFAULT: usize = 15;

/// Method-of-moments semivariogram: pairs up to a cutoff of half the maximum
/// pairwise distance, split into `n_bins` equal-width distance bins. Empty
/// bins are dropped.
pub fn empirical_semivariogram(
    points: &[SamplePoint],
    n_bins: usize,
) -> Result<Vec<SemivariogramBin>, GeoError> {
    if points.len() < 2 {
        return Err(GeoError::TooFewPoints(points.len()));
    }
    let mut max_d = 0.0f64;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            max_d = max_d.max(dist(points[i].x, points[i].y, points[j].x, points[j].y));
        }
    }
    if max_d == 0.0 {
        return Err(GeoError::AllCoincident);
    }
    let cutoff = max_d / 2.0;
    let n_bins = n_bins.max(1);
    let width = cutoff / n_bins as f64;
    let mut dist_sum = vec![0.0; n_bins];
    let mut gamma_sum = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let h = dist(points[i].x, points[i].y, points[j].x, points[j].y);
            if h <= 0.0 || h > cutoff {
                continue;
            }
            let bin = ((h / width).ceil() as usize - 1).min(n_bins - 1);
            dist_sum[bin] += h;
            gamma_sum[bin] += 0.5 * (points[i].value - points[j].value).powi(2);
            counts[bin] += 1;
        }
    }
    Ok((0..n_bins)
        .filter(|&b| counts[b] > 0)
        .map(|b| SemivariogramBin {
            distance: dist_sum[b] / counts[b] as f64,
            gamma: gamma_sum[b] / counts[b] as f64,
            pairs: counts[b],
        })
        .collect())
}

/// Fit (c₀, c, a) to the empirical semivariogram by weighted least squares.
///
/// The range is scanned over a fine deterministic grid; for each candidate
/// the nugget and partial sill follow from a pair-count-weighted linear
/// solve, clamped to be non-negative. The lowest weighted squared error wins
/// (ties take the smaller range).
pub fn fit_variogram(
    points: &[SamplePoint],
    n_bins: usize,
) -> Result<VariogramModel, GeoError> {
    if points.len() < 5 {
        return Err(GeoError::TooFewPoints(points.len()));
    }
    let bins = empirical_semivariogram(points, n_bins)?;
    let cutoff = bins.iter().map(|b| b.distance).fold(0.0, f64::max);
    let mut best: Option<(f64, VariogramModel)> = None;
    for step in 1..=240 {
        let range = cutoff * (step as f64 / 80.0); // up to 3× the cutoff
        let shape = |h: f64| {
            if h >= range {
                1.0
            } else {
                let r = h / range;
                1.5 * r - 0.5 * r * r * r
            }
        };
        // Weighted least squares for γ ≈ c₀ + c·shape(h).
        let (mut sw, mut ss, mut ss2, mut sg, mut ssg) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for b in &bins {
            let w = b.pairs as f64;
            let s = shape(b.distance);
            sw += w;
            ss += w * s;
            ss2 += w * s * s;
            sg += w * b.gamma;
            ssg += w * s * b.gamma;
        }
        let det = sw * ss2 - ss * ss;
        let (mut nugget, mut sill) = if det.abs() > 1e-12 * sw * ss2.max(1.0) {
            (
                (ss2 * sg - ss * ssg) / det,
                (sw * ssg - ss * sg) / det,
            )
        } else {
            (0.0, if ss2 > 0.0 { ssg / ss2 } else { 0.0 })
        };
        if nugget < 0.0 {
            nugget = 0.0;
            sill = if ss2 > 0.0 { (ssg / ss2).max(0.0) } else { 0.0 };
        }
        if sill < 0.0 {
            sill = 0.0;
            nugget = (sg / sw).max(0.0);
        }
        let sse: f64 = bins
            .iter()
            .map(|b| {
                let fit = nugget + sill * shape(b.distance);
                b.pairs as f64 * (b.gamma - fit).powi(2)
            })
            .sum();
        if best.as_ref().is_none_or(|(e, _)| sse < *e) {
            best = Some((
                sse,
                VariogramModel {
                    nugget,
                    sill,
                    range,
                },
            ));
        }
    }
    let (_, model) = best.expect("range grid is never empty");
    Ok(model)
}

/// Raster geometry: `n_cols × n_rows` square cells; values are taken at cell
/// centres. Row 0 is the northernmost row (the layout GIS text rasters use).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub y_min: f64,
    pub cell_size: f64,
    pub n_cols: usize,
    pub n_rows: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GeoError> {
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(GeoError::BadSpec(format!(
                "cell size {} must be positive",
                self.cell_size
            )));
        }
        if self.n_cols == 0 || self.n_rows == 0 {
            return Err(GeoError::BadSpec("empty raster".into()));
        }
        if !self.x_min.is_finite() || !self.y_min.is_finite() {
            return Err(GeoError::BadSpec("non-finite origin".into()));
        }
        Ok(())
    }

    /// Smallest raster of the given cell size covering all points, padded by
    /// one cell on each side.
    pub fn covering(points: &[SamplePoint], cell_size: f64) -> Result<Self, GeoError> {
        if points.is_empty() {
            return Err(GeoError::BadSpec("no points to cover".into()));
        }
        let x_lo = points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let x_hi = points.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let y_lo = points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let y_hi = points.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        let spec = GridSpec {
            x_min: x_lo - cell_size,
            y_min: y_lo - cell_size,
            cell_size,
            n_cols: ((x_hi - x_lo) / cell_size).ceil() as usize + 2,
            n_rows: ((y_hi - y_lo) / cell_size).ceil() as usize + 2,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Centre of the cell at (row, col), row 0 northernmost.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.x_min + (col as f64 + 0.5) * self.cell_size,
            self.y_min + (self.n_rows as f64 - row as f64 - 0.5) * self.cell_size,
        )
    }

    pub fn n_cells(&self) -> usize {
        self.n_cols * self.n_rows
    }
}

/// Kriged raster: row-major values and kriging variances, row 0 northernmost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterField {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub variances: Vec<f64>,
}

/// Raster plus interpolation diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrigeOutcome {
    pub field: RasterField,
    /// Sample points dropped by merging exact-coordinate duplicates.
    pub duplicates_merged: usize,
    /// Largest |Σ weights − 1| seen across cells (unbiasedness slack).
    pub max_weight_sum_deviation: f64,
}

/// Merge samples at exactly equal coordinates by averaging their values.
fn merge_duplicates(points: &[SamplePoint]) -> (Vec<SamplePoint>, usize) {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .x
            .total_cmp(&points[b].x)
            .then(points[a].y.total_cmp(&points[b].y))
            .then(a.cmp(&b))
    });
    let mut merged: Vec<SamplePoint> = Vec::with_capacity(points.len());
    let mut dropped = 0usize;
    let mut i = 0;
    while i < order.len() {
        let p = points[order[i]];
        let mut sum = p.value;
        let mut count = 1usize;
        let mut j = i + 1;
        while j < order.len()
            && points[order[j]].x == p.x
            && points[order[j]].y == p.y
        {
            sum += points[order[j]].value;
            count += 1;
            j += 1;
        }
        merged.push(SamplePoint {
            x: p.x,
            y: p.y,
            value: sum / count as f64,
        });
        dropped += count - 1;
        i = j;
    }
    (merged, dropped)
}

/// Ordinary-kriging weights and Lagrange multiplier for one target location.
/// Exposed for direct checks of hand-solved systems; [`krige`] factorizes the
/// shared matrix once instead.
pub fn kriging_weights(
    points: &[SamplePoint],
    model: &VariogramModel,
    x: f64,
    y: f64,
) -> Result<(Vec<f64>, f64), GeoError> {
    let system = KrigingSystem::build(points, model)?;
    let sol = system.solve_at(x, y);
    Ok((sol.weights, sol.lagrange))
}

struct KrigingSystem {
    points: Vec<SamplePoint>,
    model: VariogramModel,
    matrix: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

struct CellSolution {
    weights: Vec<f64>,
    lagrange: f64,
    value: f64,
    variance: f64,
    weight_sum_deviation: f64,
}

impl KrigingSystem {
    fn build(points: &[SamplePoint], model: &VariogramModel) -> Result<Self, GeoError> {
        let n = points.len();
        if n == 0 {
            return Err(GeoError::TooFewPoints(0));
        }
        let mut a = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in (i + 1)..n {
                let g = model.gamma(dist(points[i].x, points[i].y, points[j].x, points[j].y));
                a[(i, j)] = g;
                a[(j, i)] = g;
            }
            a[(i, n)] = 1.0;
            a[(n, i)] = 1.0;
        }
        let lu = a.clone().lu();
        if lu.determinant() == 0.0 {
            return Err(GeoError::SingularSystem);
        }
        Ok(KrigingSystem {
            points: points.to_vec(),
            model: *model,
            matrix: a,
            lu,
        })
    }

    fn solve_at(&self, x: f64, y: f64) -> CellSolution {
        let n = self.points.len();
        let mut rhs = DVector::zeros(n + 1);
        for (i, p) in self.points.iter().enumerate() {
            rhs[i] = self.model.gamma(dist(p.x, p.y, x, y));
        }
        rhs[n] = 1.0;
        let mut sol = self.lu.solve(&rhs).expect("factorization verified nonsingular");
        // One step of iterative refinement keeps the unbiasedness constraint
        // satisfied to well below the asserted 1e-10.
        let residual = &rhs - &self.matrix * &sol;
        if let Some(correction) = self.lu.solve(&residual) {
            sol += correction;
        }
        let weights: Vec<f64> = sol.iter().take(n).cloned().collect();
        let lagrange = sol[n];
        let value = weights
            .iter()
            .zip(&self.points)
            .map(|(w, p)| w * p.value)
            .sum();
        // σ² = Σ wᵢ·γ(dᵢ) + μ, clamped against ulp-negative results.
        let variance = (weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * rhs[i])
            .sum::<f64>()
            + lagrange)
            .max(0.0);
        let weight_sum_deviation = (weights.iter().sum::<f64>() - 1.0).abs();
        CellSolution {
            weights,
            lagrange,
            value,
            variance,
            weight_sum_deviation,
        }
    }
}

/// Ordinary kriging of scattered samples onto a raster.
///
/// Exact-duplicate coordinates are averaged first (and counted in the
/// outcome); the (n+1)×(n+1) system matrix is factorized once and reused for
/// every cell; cells solve in parallel. Unbiasedness (weights summing to 1
/// within 1e-10) is enforced per cell.
pub fn krige(
    points: &[SamplePoint],
    model: &VariogramModel,
    spec: &GridSpec,
) -> Result<KrigeOutcome, GeoError> {
    spec.validate()?;
    let (merged, duplicates_merged) = merge_duplicates(points);
    let system = KrigingSystem::build(&merged, model)?;
    let cells: Vec<(f64, f64, f64)> = (0..spec.n_cells())
        .into_par_iter()
        .map(|cell| {
            let (x, y) = spec.cell_center(cell / spec.n_cols, cell % spec.n_cols);
            let sol = system.solve_at(x, y);
            (sol.value, sol.variance, sol.weight_sum_deviation)
        })
        .collect();
    let mut max_dev = 0.0f64;
    for (cell, &(_, _, dev)) in cells.iter().enumerate() {
        if dev > 1e-10 {
            return Err(GeoError::WeightSum {
                cell,
                sum: dev,
            });
        }
        max_dev = max_dev.max(dev);
    }
    Ok(KrigeOutcome {
        field: RasterField {
            spec: *spec,
            values: cells.iter().map(|c| c.0).collect(),
            variances: cells.iter().map(|c| c.1).collect(),
        },
        duplicates_merged,
        max_weight_sum_deviation: max_dev,
    })
}

/// Node elevations as kriging samples at bus coordinates.
pub fn node_samples(grid: &PowerGrid, node_values: &[f64]) -> Result<Vec<SamplePoint>, GeoError> {
    if node_values.len() != grid.n_buses() {
        return Err(GeoError::LengthMismatch {
            got: node_values.len(),
            want: grid.n_buses(),
        });
    }
    Ok(grid
        .buses()
        .iter()
        .zip(node_values)
        .map(|(b, &v)| SamplePoint {
            x: b.x,
            y: b.y,
            value: v,
        })
        .collect())
}

/// Edge quantities as kriging samples at line midpoints.
pub fn edge_midpoint_samples(
    grid: &PowerGrid,
    edge_values: &[f64],
) -> Result<Vec<SamplePoint>, GeoError> {
    if edge_values.len() != grid.n_lines() {
        return Err(GeoError::LengthMismatch {
            got: edge_values.len(),
            want: grid.n_lines(),
        });
    }
    Ok(grid
        .endpoints()
        .iter()
        .zip(edge_values)
        .map(|(&(u, w), &v)| {
            let a = &grid.buses()[u];
            let b = &grid.buses()[w];
            SamplePoint {
                x: (a.x + b.x) / 2.0,
                y: (a.y + b.y) / 2.0,
                value: v,
            }
        })
        .collect())
}

/// CSV of cell centres: `x,y,value,variance`, optionally preceded by `#`
/// metadata lines.
pub fn write_raster_csv(
    field: &RasterField,
    metadata: &[String],
    path: &Path,
) -> Result<(), GeoError> {
    let mut out = Vec::new();
    for line in metadata {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "x,y,value,variance")?;
    for row in 0..field.spec.n_rows {
        for col in 0..field.spec.n_cols {
            let (x, y) = field.spec.cell_center(row, col);
            let idx = row * field.spec.n_cols + col;
            writeln!(out, "{},{},{},{}", x, y, field.values[idx], field.variances[idx])?;
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// ESRI-ASCII-grid text raster of one layer (values or variances), readable
/// by common GIS tools.
pub fn write_esri_ascii(spec: &GridSpec, layer: &[f64], path: &Path) -> Result<(), GeoError> {
    if layer.len() != spec.n_cells() {
        return Err(GeoError::LengthMismatch {
            got: layer.len(),
            want: spec.n_cells(),
        });
    }
    let mut out = Vec::new();
    writeln!(out, "ncols {}", spec.n_cols)?;
    writeln!(out, "nrows {}", spec.n_rows)?;
    writeln!(out, "xllcorner {}", spec.x_min)?;
    writeln!(out, "yllcorner {}", spec.y_min)?;
    writeln!(out, "cellsize {}", spec.cell_size)?;
    writeln!(out, "NODATA_value -9999")?;
    for row in 0..spec.n_rows {
        let cells: Vec<String> = (0..spec.n_cols)
            .map(|col| format!("{}", layer[row * spec.n_cols + col]))
            .collect();
        writeln!(out, "{}", cells.join(" "))?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::seeds::SplitMix64;

    fn model(nugget: f64, sill: f64, range: f64) -> VariogramModel {
        VariogramModel::new(nugget, sill, range).unwrap()
    }

    #[test]
    fn test_variogram_shape() {
        let m = model(0.1, 0.9, 3.0);
        assert_eq!(m.gamma(0.0), 0.0);
        assert_relative_eq!(m.gamma(3.0), 1.0);
        assert_relative_eq!(m.gamma(30.0), 1.0);
        // 0.1 + 0.9·(1.5·(2/3) − 0.5·(2/3)³) = 0.1 + 0.9·23/27 = 13/15
        assert_relative_eq!(m.gamma(2.0), 13.0 / 15.0, epsilon = 1e-12);
        let mut last = 0.0;
        for step in 1..=60 {
            let g = m.gamma(0.1 * step as f64);
            assert!(g >= last, "γ must be monotone");
            last = g;
        }
        assert!(VariogramModel::new(-0.1, 1.0, 1.0).is_err());
        assert!(VariogramModel::new(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn test_empirical_semivariogram_hand_pair() {
        // Three collinear points one apart: pairs at h=1 (×2, cutoff is half
        // the max distance 2, so the h=2 pair is out of reach).
        let pts = [
            SamplePoint { x: 0.0, y: 0.0, value: 1.0 },
            SamplePoint { x: 1.0, y: 0.0, value: 3.0 },
            SamplePoint { x: 2.0, y: 0.0, value: 4.0 },
        ];
        let bins = empirical_semivariogram(&pts, 15).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].pairs, 2);
        assert_relative_eq!(bins[0].distance, 1.0);
        // Mean of ½(1−3)² = 2 and ½(3−4)² = 0.5.
        assert_relative_eq!(bins[0].gamma, 1.25);
    }

    #[test]
    fn test_fit_variogram_rejects_bad_inputs() {
        let few: Vec<SamplePoint> = (0..4)
            .map(|i| SamplePoint { x: i as f64, y: 0.0, value: i as f64 })
            .collect();
        assert!(matches!(fit_variogram(&few, 15), Err(GeoError::TooFewPoints(4))));
        let coincident = vec![SamplePoint { x: 1.0, y: 1.0, value: 0.5 }; 6];
        assert!(matches!(
            fit_variogram(&coincident, 15),
            Err(GeoError::AllCoincident)
        ));
    }

    #[test]
    fn test_constant_field_fits_zero_sill_and_interpolates_constant() {
        let mut rng = SplitMix64::new(11);
        let pts: Vec<SamplePoint> = (0..12)
            .map(|_| SamplePoint {
                x: rng.next_below(100) as f64 / 10.0,
                y: rng.next_below(100) as f64 / 10.0,
                value: 4.25,
            })
            .collect();
        let fitted = fit_variogram(&pts, 15).unwrap();
        assert!(fitted.nugget.abs() < 1e-12 && fitted.sill.abs() < 1e-12);
        // Interpolation under any model must return the constant.
        let spec = GridSpec::covering(&pts, 2.5).unwrap();
        let outcome = krige(&pts, &model(0.0, 1.0, 5.0), &spec).unwrap();
        for v in &outcome.field.values {
            assert_relative_eq!(*v, 4.25, epsilon = 1e-9);
        }
    }

    #[test]
    fn test_symmetric_three_point_system_hand_solved() {
        // Equilateral triangle, side D = 2, target at the circumcentre
        // (distance R = 2/√3 from each vertex). Symmetry forces w = 1/3 each;
        // the first kriging equation then gives μ = γ(R) − (2/3)·γ(D).
        let d = 2.0f64;
        let pts = [
            SamplePoint { x: 0.0, y: 0.0, value: 1.0 },
            SamplePoint { x: d, y: 0.0, value: 2.0 },
            SamplePoint { x: d / 2.0, y: d * 3.0f64.sqrt() / 2.0, value: 6.0 },
        ];
        let cx = d / 2.0;
        let cy = d / (2.0 * 3.0f64.sqrt());
        let m = model(0.1, 0.9, 3.0);
        let (weights, mu) = kriging_weights(&pts, &m, cx, cy).unwrap();
        for w in &weights {
            assert_relative_eq!(*w, 1.0 / 3.0, epsilon = 1e-8);
        }
        // γ(D) = 13/15 (hand arithmetic above); γ(R) via the same spherical
        // formula, independent of the solver under test.
        let r = 2.0 / 3.0f64.sqrt();
        let gamma_r = 0.1 + 0.9 * (1.5 * (r / 3.0) - 0.5 * (r / 3.0).powi(3));
        assert_relative_eq!(mu, gamma_r - (2.0 / 3.0) * (13.0 / 15.0), epsilon = 1e-8);
        // Prediction is the plain mean; variance is γ(R) + μ.
        let spec = GridSpec {
            x_min: cx - 0.5,
            y_min: cy - 0.5,
            cell_size: 1.0,
            n_cols: 1,
            n_rows: 1,
        };
        let outcome = krige(&pts, &m, &spec).unwrap();
        assert_relative_eq!(outcome.field.values[0], 3.0, epsilon = 1e-8);
        assert_relative_eq!(
            outcome.field.variances[0],
            2.0 * gamma_r - (2.0 / 3.0) * (13.0 / 15.0),
            epsilon = 1e-8
        );
    }

    #[test]
    fn test_kriging_exact_at_data_points() {
        let mut rng = SplitMix64::new(77);
        let pts: Vec<SamplePoint> = (0..8)
            .map(|_| SamplePoint {
                x: rng.next_below(1000) as f64 / 100.0,
                y: rng.next_below(1000) as f64 / 100.0,
                value: rng.next_below(100) as f64 / 7.0,
            })
            .collect();
        let m = model(0.2, 1.3, 6.0);
        for p in &pts {
            let (weights, _) = kriging_weights(&pts, &m, p.x, p.y).unwrap();
            let predicted: f64 = weights
                .iter()
                .zip(&pts)
                .map(|(w, q)| w * q.value)
                .sum();
            assert!(
                (predicted - p.value).abs() <= 1e-8,
                "not exact at ({}, {}): {} vs {}",
                p.x,
                p.y,
                predicted,
                p.value
            );
        }
    }

    #[test]
    fn test_kriging_weights_sum_to_one_across_raster() {
        let mut rng = SplitMix64::new(5);
        let pts: Vec<SamplePoint> = (0..10)
            .map(|_| SamplePoint {
                x: rng.next_below(500) as f64 / 50.0,
                y: rng.next_below(500) as f64 / 50.0,
                value: (rng.next_below(2000) as f64 - 1000.0) / 100.0,
            })
            .collect();
        let spec = GridSpec::covering(&pts, 1.0).unwrap();
        let outcome = krige(&pts, &model(0.05, 2.0, 4.0), &spec).unwrap();
        assert!(outcome.max_weight_sum_deviation <= 1e-10);
        assert!(outcome.field.values.iter().all(|v| v.is_finite()));
        assert!(outcome.field.variances.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn test_duplicate_points_averaged_and_flagged() {
        let pts = [
            SamplePoint { x: 0.0, y: 0.0, value: 2.0 },
            SamplePoint { x: 0.0, y: 0.0, value: 4.0 },
            SamplePoint { x: 3.0, y: 0.0, value: 10.0 },
            SamplePoint { x: 0.0, y: 3.0, value: 6.0 },
        ];
        let spec = GridSpec {
            x_min: -0.5,
            y_min: -0.5,
            cell_size: 1.0,
            n_cols: 1,
            n_rows: 1,
        };
        let outcome = krige(&pts, &model(0.0, 1.0, 5.0), &spec).unwrap();
        assert_eq!(outcome.duplicates_merged, 1);
        // Cell centre sits on the duplicate location: exactness against the
        // averaged value 3.
        assert_relative_eq!(outcome.field.values[0], 3.0, epsilon = 1e-8);
    }

    #[test]
    fn test_single_point_zero_nugget_constant_field() {
        let pts = [SamplePoint { x: 1.0, y: 1.0, value: 5.5 }];
        let spec = GridSpec {
            x_min: 0.0,
            y_min: 0.0,
            cell_size: 1.0,
            n_cols: 3,
            n_rows: 3,
        };
        let outcome = krige(&pts, &model(0.0, 1.0, 2.0), &spec).unwrap();
        for v in &outcome.field.values {
            assert_relative_eq!(*v, 5.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn test_krige_deterministic() {
        let mut rng = SplitMix64::new(123);
        let pts: Vec<SamplePoint> = (0..9)
            .map(|_| SamplePoint {
                x: rng.next_below(100) as f64 / 10.0,
                y: rng.next_below(100) as f64 / 10.0,
                value: rng.next_below(50) as f64,
            })
            .collect();
        let spec = GridSpec::covering(&pts, 2.0).unwrap();
        let m = model(0.1, 1.0, 4.0);
        let a = krige(&pts, &m, &spec).unwrap();
        let b = krige(&pts, &m, &spec).unwrap();
        assert_eq!(a, b);
    }

    /// Draw a Gaussian-process realization with a known spherical variogram
    /// over clustered sites, via the covariance Cholesky factor.
    fn gp_realization(truth: &VariogramModel, seed: u64) -> Vec<SamplePoint> {
        let mut rng = SplitMix64::new(seed);
        // Two broad clusters, each much wider than the range, so a single
        // realization's empirical variogram averages over many independent
        // patches at every lag.
        let mut coords = Vec::new();
        for cluster in 0..2 {
            let cx = 25.0 * cluster as f64;
            for _ in 0..100 {
                coords.push((
                    cx + rng.next_below(24_000) as f64 / 1000.0 - 12.0,
                    rng.next_below(24_000) as f64 / 1000.0 - 12.0,
                ));
            }
        }
        let n = coords.len();
        let total = truth.nugget + truth.sill;
        let cov = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                total
            } else {
                let h = dist(coords[i].0, coords[i].1, coords[j].0, coords[j].1);
                total - truth.gamma(h)
            }
        });
        let chol = cov.cholesky().expect("valid covariance");
        let normals = DVector::from_iterator(n, (0..n).map(|_| {
            // Box–Muller from two uniform draws.
            let u1 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            let u2 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            (-2.0 * u1.max(1e-300).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        }));
        let z = chol.l() * normals;
        coords
            .iter()
            .zip(z.iter())
            .map(|(&(x, y), &v)| SamplePoint { x, y, value: v })
            .collect()
    }

    #[test]
    fn test_fit_recovers_generative_range_on_two_clusters() {
        let truth = model(0.1, 1.0, 5.0);
        let pts = gp_realization(&truth, 2024);
        let fitted = fit_variogram(&pts, 15).unwrap();
        let rel = (fitted.range - truth.range).abs() / truth.range;
        assert!(
            rel < 0.2,
            "range {} vs truth {} off by {:.1}%",
            fitted.range,
            truth.range,
            rel * 100.0
        );
    }

    #[test]
    fn test_raster_writers() {
        let spec = GridSpec {
            x_min: 0.0,
            y_min: 0.0,
            cell_size: 1.0,
            n_cols: 2,
            n_rows: 2,
        };
        let field = RasterField {
            spec,
            values: vec![1.0, 2.0, 3.0, 4.0],
            variances: vec![0.1, 0.2, 0.3, 0.4],
        };
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("raster.csv");
        let asc_path = dir.path().join("raster.asc");
        write_raster_csv(&field, &["meta line".to_string()], &csv_path).unwrap();
        write_esri_ascii(&spec, &field.values, &asc_path).unwrap();

        let csv_text = std::fs::read_to_string(&csv_path).unwrap();
        let lines: Vec<&str> = csv_text.lines().collect();
        assert_eq!(lines[0], "# meta line");
        assert_eq!(lines[1], "x,y,value,variance");
        assert_eq!(lines.len(), 2 + 4);
        // First data row is the north-west cell: y = y_min + 1.5·cell.
        assert_eq!(lines[2], "0.5,1.5,1,0.1");

        let asc_text = std::fs::read_to_string(&asc_path).unwrap();
        let asc: Vec<&str> = asc_text.lines().collect();
        assert_eq!(asc[0], "ncols 2");
        assert_eq!(asc[1], "nrows 2");
        assert_eq!(asc[5], "NODATA_value -9999");
        assert_eq!(asc[6], "1 2");
        assert_eq!(asc[7], "3 4");
    }

    #[test]
    fn test_grid_spec_validation() {
        assert!(GridSpec {
            x_min: 0.0,
            y_min: 0.0,
            cell_size: 0.0,
            n_cols: 2,
            n_rows: 2
        }
        .validate()
        .is_err());
        assert!(GridSpec {
            x_min: 0.0,
            y_min: 0.0,
            cell_size: 1.0,
            n_cols: 0,
            n_rows: 2
        }
        .validate()
        .is_err());
    }
}
