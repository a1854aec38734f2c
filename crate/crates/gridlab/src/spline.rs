//! Univariate penalized cubic B-spline smoother.
//!
//! This is the regression engine behind the measure-vs-collapse evaluation: a
//! cubic B-spline basis with interior knots at predictor quantiles, a
//! second-difference roughness penalty, and a smoothing parameter chosen by
//! generalized cross-validation over a logarithmic grid.
//!
//! The penalty differences coefficients with respect to the basis's Greville
//! abscissae rather than by raw index. With uneven (quantile) knots that is
//! what makes the penalty's null space exactly the linear functions, so a
//! straight-line signal survives any amount of smoothing — a property the
//! evaluation harness leans on.

use nalgebra::{DMatrix, DVector, QR};
use thiserror::Error;

/// Interior knot count used by the default fit.
pub const INTERIOR_KNOTS_DEFAULT: usize = 20;

#[derive(Debug, Error)]
pub enum SplineError {
    #[error("need at least {need} training points, got {n}")]
    TooFewPoints { n: usize, need: usize },
    #[error("x and y lengths differ ({nx} vs {ny})")]
    LengthMismatch { nx: usize, ny: usize },
    #[error("training data must be finite")]
    NonFinite,
    #[error("no smoothing candidate produced a solvable system")]
    NoCandidate,
}

/// Cubic B-spline basis on a clamped knot vector.
#[derive(Debug, Clone)]
struct CubicBasis {
    /// Clamped knot vector: 4 copies of x_min, strictly increasing interior
    /// knots, 4 copies of x_max.
    knots: Vec<f64>,
    n_basis: usize,
}

impl CubicBasis {
    /// Build from data with `n_interior` knots at evenly spaced quantiles.
    /// Interior knots that collide with each other or the boundary are
    /// dropped, so the basis degrades gracefully on clustered data.
    fn from_quantiles(x: &[f64], n_interior: usize) -> Self {
        let mut sorted = x.to_vec();
        sorted.sort_by(f64::total_cmp);
        let lo = sorted[0];
        let hi = sorted[sorted.len() - 1];
        let min_gap = 1e-9 * (hi - lo);
        let mut knots = vec![lo; 4];
        for j in 1..=n_interior {
            let t = quantile_sorted(&sorted, j as f64 / (n_interior + 1) as f64);
            let prev = *knots.last().expect("knot vector starts non-empty");
            if t > prev + min_gap && t < hi - min_gap {
                knots.push(t);
            }
        }
        knots.extend(std::iter::repeat(hi).take(4));
        let n_basis = knots.len() - 4;
        CubicBasis { knots, n_basis }
    }

    fn x_min(&self) -> f64 {
        self.knots[0]
    }

    fn x_max(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Knot span containing x, clamped to the non-degenerate range.
    fn span(&self, x: f64) -> usize {
        let p = self.knots.partition_point(|&t| t <= x);
        p.saturating_sub(1).clamp(3, self.knots.len() - 5)
    }

    /// The four nonzero basis values at x: returns (first active index,
    /// values). Cox–de Boor recursion.
    fn row(&self, x: f64) -> (usize, [f64; 4]) {
        let k = self.span(x);
        let t = &self.knots;
        let mut n = [0.0f64; 4];
        let mut left = [0.0f64; 4];
        let mut right = [0.0f64; 4];
        n[0] = 1.0;
        for j in 1..=3 {
            left[j] = x - t[k + 1 - j];
            right[j] = t[k + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (k - 3, n)
    }

    /// Greville abscissae: the x-locations the coefficients "live at".
    /// B-splines have linear precision there: f(x) = a + bx has coefficients
    /// c_i = a + b·ξ_i.
    fn greville(&self) -> Vec<f64> {
        (0..self.n_basis)
            .map(|i| (self.knots[i + 1] + self.knots[i + 2] + self.knots[i + 3]) / 3.0)
            .collect()
    }
}

/// Linear-interpolation quantile of pre-sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Difference operator whose rows are second divided differences of the
/// coefficients with respect to the Greville abscissae. The penalty is
/// ‖Dc‖², and D's null space is exactly {c_i = a + b·ξ_i}, i.e. linear
/// functions of x.
fn divided_difference_operator(greville: &[f64]) -> DMatrix<f64> {
    let nb = greville.len();
    let mut d = DMatrix::zeros(nb.saturating_sub(2), nb);
    for i in 1..nb.saturating_sub(1) {
        let h0 = greville[i] - greville[i - 1];
        let h1 = greville[i + 1] - greville[i];
        let span = greville[i + 1] - greville[i - 1];
        let w_prev = 2.0 / (h0 * span);
        let w_next = 2.0 / (h1 * span);
        d[(i - 1, i - 1)] = w_prev;
        d[(i - 1, i)] = -(w_prev + w_next);
        d[(i - 1, i + 1)] = w_next;
    }
    d
}

/// The logarithmic smoothing grid searched by generalized cross-validation:
/// quarter-decade steps from 1e-8 to 1e6.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=56).map(|k| 10f64.powf(-8.0 + 0.25 * k as f64)).collect()
}

/// Hyperparameters of a fitted smoother, recorded in evaluation reports.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplineHyperparameters {
    pub lambda: f64,
    /// Effective degrees of freedom tr((BᵀB + λP)⁻¹BᵀB).
    pub edf: f64,
    pub n_basis: usize,
    pub gcv: f64,
    /// True when all predictors coincided and the model fell back to the
    /// plain mean of y.
    pub constant_fallback: bool,
}

/// A fitted univariate smoother. Predictions outside the training range are
/// clamped to the boundary values.
#[derive(Debug, Clone)]
pub struct SplineModel {
    basis: Option<CubicBasis>,
    coeffs: Vec<f64>,
    fallback_mean: f64,
    hyper: SplineHyperparameters,
}

impl SplineModel {
    pub fn predict(&self, x: f64) -> f64 {
        let Some(basis) = &self.basis else {
            return self.fallback_mean;
        };
        let xx = x.clamp(basis.x_min(), basis.x_max());
        let (first, vals) = basis.row(xx);
        vals.iter()
            .enumerate()
            .map(|(j, v)| v * self.coeffs[first + j])
            .sum()
    }

    pub fn predict_many(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.predict(x)).collect()
    }

    pub fn hyperparameters(&self) -> &SplineHyperparameters {
        &self.hyper
    }
}

/// Fit with the default knot count and smoothing grid.
pub fn fit_spline(x: &[f64], y: &[f64]) -> Result<SplineModel, SplineError> {
    fit_spline_with(x, y, INTERIOR_KNOTS_DEFAULT, &default_lambda_grid())
}

/// Fit a penalized cubic B-spline.
///
/// Each candidate λ minimizes ‖y − Bc‖² + λ‖Dc‖², solved as the stacked
/// least-squares problem [B; √λ·D]c = [y; 0] by QR — normal equations would
/// square the condition number and visibly bend a straight line at heavy
/// smoothing. Candidates are scored with GCV(λ) = n·RSS / (n − edf)², where
/// edf = tr((BᵀB + λDᵀD)⁻¹BᵀB) = ‖BR⁻¹‖²_F; the smallest score wins (ties
/// take the smaller λ). Identical predictors throughout collapse the model to
/// the mean of y, flagged via [`SplineHyperparameters::constant_fallback`].
pub fn fit_spline_with(
    x: &[f64],
    y: &[f64],
    n_interior: usize,
    lambda_grid: &[f64],
) -> Result<SplineModel, SplineError> {
    if x.len() != y.len() {
        return Err(SplineError::LengthMismatch {
            nx: x.len(),
            ny: y.len(),
        });
    }
    if x.len() < 10 {
        return Err(SplineError::TooFewPoints {
            n: x.len(),
            need: 10,
        });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(SplineError::NonFinite);
    }
    let n = x.len();
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        let mean = y.iter().sum::<f64>() / n as f64;
        let rss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let denom = (n - 1) as f64;
        return Ok(SplineModel {
            basis: None,
            coeffs: Vec::new(),
            fallback_mean: mean,
            hyper: SplineHyperparameters {
                lambda: 0.0,
                edf: 1.0,
                n_basis: 1,
                gcv: n as f64 * rss / (denom * denom),
                constant_fallback: true,
            },
        });
    }

    let basis = CubicBasis::from_quantiles(x, n_interior);
    let nb = basis.n_basis;
    let mut design = DMatrix::zeros(n, nb);
    for (r, &xx) in x.iter().enumerate() {
        let (first, vals) = basis.row(xx);
        for (j, v) in vals.iter().enumerate() {
            design[(r, first + j)] = *v;
        }
    }
    let yv = DVector::from_column_slice(y);
    let diff_op = divided_difference_operator(&basis.greville());
    let nd = diff_op.nrows();

    let mut best: Option<(f64, f64, f64, DVector<f64>)> = None; // (gcv, λ, edf, coeffs)
    for &lambda in lambda_grid {
        let mut stacked = DMatrix::zeros(n + nd, nb);
        stacked.rows_mut(0, n).copy_from(&design);
        stacked
            .rows_mut(n, nd)
            .copy_from(&(&diff_op * lambda.sqrt()));
        let mut rhs = DVector::zeros(n + nd);
        rhs.rows_mut(0, n).copy_from(&yv);
        let qr = QR::new(stacked);
        let r = qr.r();
        let qty = qr.q().transpose() * rhs;
        let Some(coeffs) = r.solve_upper_triangular(&qty) else {
            continue; // rank-deficient stack: λ too small for this data
        };
        let rss = (&yv - &design * &coeffs).norm_squared();
        // edf = tr((BᵀB + λDᵀD)⁻¹BᵀB) = ‖BR⁻¹‖²_F, row by row through the
        // triangular factor.
        let r_t = r.transpose();
        let mut edf = 0.0;
        for row in 0..n {
            let b_row = design.row(row).transpose();
            let Some(solved) = r_t.solve_lower_triangular(&b_row) else {
                continue;
            };
            edf += solved.norm_squared();
        }
        let denom = n as f64 - edf;
        if denom <= 1e-9 {
            continue; // saturated fit: GCV undefined, never competitive
        }
        let gcv = n as f64 * rss / (denom * denom);
        if best.as_ref().is_none_or(|(g, ..)| gcv < *g) {
            best = Some((gcv, lambda, edf, coeffs));
        }
    }
    let (gcv, lambda, edf, coeffs) = best.ok_or(SplineError::NoCandidate)?;
    Ok(SplineModel {
        basis: Some(basis),
        coeffs: coeffs.iter().cloned().collect(),
        fallback_mean: 0.0,
        hyper: SplineHyperparameters {
            lambda,
            edf,
            n_basis: nb,
            gcv,
            constant_fallback: false,
        },
    })
}
