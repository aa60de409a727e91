//! Least-squares fits of binned densities and distances between densities.
//!
//! Both fits regress in log space over the levels of a grid and skip empty
//! bins, whose logarithm is undefined. Bins are weighted equally.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::SalaryGrid;

/// Fewest non-empty bins either fit accepts.
pub const MIN_FIT_POINTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    Lognormal,
    Powerlaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FitParameters {
    Lognormal { mu: f64, sigma: f64 },
    /// Density proportional to `S^-(1 + eta)`.
    Powerlaw { eta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub parameters: FitParameters,
    pub r_squared: f64,
    /// Salary interval `[low, high]` of the bins considered, in kilodollars.
    pub fit_range: (f64, f64),
    /// Non-empty bins used in the regression.
    pub point_count: usize,
    /// Empty bins inside the fit range left out of the regression.
    pub excluded_bins: usize,
}

impl FitResult {
    pub fn eta(&self) -> Option<f64> {
        match self.parameters {
            FitParameters::Powerlaw { eta } => Some(eta),
            _ => None,
        }
    }

    pub fn mu_sigma(&self) -> Option<(f64, f64)> {
        match self.parameters {
            FitParameters::Lognormal { mu, sigma } => Some((mu, sigma)),
            _ => None,
        }
    }
}

fn check_histogram(histogram: &[f64], grid: &SalaryGrid) -> Result<f64> {
    if histogram.len() != grid.len() {
        return domain(format!(
            "histogram has {} bins but the grid has {} levels",
            histogram.len(),
            grid.len()
        ));
    }
    if histogram.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
        return domain("histogram entries must be finite and >= 0");
    }
    let total: f64 = histogram.iter().sum();
    if !(total > 0.0) {
        return domain("histogram is empty");
    }
    Ok(total)
}

/// Ordinary least squares of `y` on the columns of `design` (row-major, `p` columns)
/// through the normal equations. Returns the coefficients and `r^2`.
fn least_squares(design: &[Vec<f64>], y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let p = design[0].len();
    // Center the regressors for conditioning; the intercept is the first column.
    let mut ata = vec![vec![0.0; p]; p];
    let mut aty = vec![0.0; p];
    for (row, yi) in design.iter().zip(y) {
        for a in 0..p {
            aty[a] += row[a] * yi;
            for b in 0..p {
                ata[a][b] += row[a] * row[b];
            }
        }
    }
    let coef = solve_symmetric(ata, aty)
        .ok_or_else(|| Error::Domain("regressors are collinear".into()))?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (row, yi) in design.iter().zip(y) {
        let fitted: f64 = row.iter().zip(&coef).map(|(a, c)| a * c).sum();
        ss_res += (yi - fitted).powi(2);
        ss_tot += (yi - mean).powi(2);
    }
    let r2 = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    Ok((coef, r2))
}

/// Gaussian elimination with partial pivoting.
fn solve_symmetric(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Fits `x_i ~ (1/S_i) exp(-(ln S_i - mu)^2 / 2 sigma^2)` to per-level occupancies.
///
/// Regresses `ln x_i + ln S_i` on `(1, u, u^2)` with `u = ln S_i - c` centered
/// on the mean log-salary of the non-empty bins. `r_squared` is that of the
/// quadratic regression.
pub fn fit_lognormal(histogram: &[f64], grid: &SalaryGrid) -> Result<FitResult> {
    check_histogram(histogram, grid)?;
    let pts: Vec<(f64, f64)> = histogram
        .iter()
        .zip(grid.levels())
        .filter(|(h, _)| **h > 0.0)
        .map(|(h, s)| (s.ln(), h.ln() + s.ln()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData {
            found: pts.len(),
            required: MIN_FIT_POINTS,
        });
    }
    let center = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let design: Vec<Vec<f64>> = pts
        .iter()
        .map(|(l, _)| {
            let u = l - center;
            vec![1.0, u, u * u]
        })
        .collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (coef, r_squared) = least_squares(&design, &y)?;
    if !(coef[2] < 0.0) {
        return domain("histogram is not log-concave in ln S; no lognormal fits it");
    }
    let var = -1.0 / (2.0 * coef[2]);
    let first = histogram.iter().position(|h| *h > 0.0).unwrap();
    let last = histogram.iter().rposition(|h| *h > 0.0).unwrap();
    Ok(FitResult {
        model: FitModel::Lognormal,
        parameters: FitParameters::Lognormal {
            mu: center + coef[1] * var,
            sigma: var.sqrt(),
        },
        r_squared,
        fit_range: (grid.levels()[first], grid.levels()[last]),
        point_count: pts.len(),
        excluded_bins: (first..=last).filter(|&i| histogram[i] == 0.0).count(),
    })
}

/// Fits `x_i ~ S_i^-(1 + eta)` over the top of the distribution.
///
/// The fit range is the shortest run of highest salary levels holding at
/// least `top_fraction` of the total population.
pub fn fit_powerlaw_tail(histogram: &[f64], grid: &SalaryGrid, top_fraction: f64) -> Result<FitResult> {
    let total = check_histogram(histogram, grid)?;
    if !(top_fraction > 0.0 && top_fraction <= 0.5) {
        return domain(format!("top fraction must lie in (0, 0.5], got {top_fraction}"));
    }
    let n = histogram.len();
    let mut start = n;
    let mut mass = 0.0;
    while start > 0 && mass < top_fraction * total {
        start -= 1;
        mass += histogram[start];
    }
    let pts: Vec<(f64, f64)> = (start..n)
        .filter(|&i| histogram[i] > 0.0)
        .map(|i| (grid.levels()[i].ln(), histogram[i].ln()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData {
            found: pts.len(),
            required: MIN_FIT_POINTS,
        });
    }
    let center = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let design: Vec<Vec<f64>> = pts.iter().map(|(l, _)| vec![1.0, l - center]).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (coef, r_squared) = least_squares(&design, &y)?;
    Ok(FitResult {
        model: FitModel::Powerlaw,
        parameters: FitParameters::Powerlaw { eta: -coef[1] - 1.0 },
        r_squared,
        fit_range: (grid.levels()[start], grid.max()),
        point_count: pts.len(),
        excluded_bins: (n - start) - pts.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    L1,
    Linf,
    /// Kolmogorov-Smirnov: largest gap between the cumulative sums.
    Ks,
}

/// Distance between two densities over the same levels.
pub fn distribution_distance(p: &[f64], q: &[f64], metric: Metric) -> Result<f64> {
    if p.len() != q.len() {
        return domain(format!("length mismatch: {} vs {}", p.len(), q.len()));
    }
    for (name, d) in [("p", p), ("q", q)] {
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > 1e-9 || d.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return domain(format!("{name} is not a density (sum {s})"));
        }
    }
    let diffs = p.iter().zip(q).map(|(a, b)| a - b);
    Ok(match metric {
        Metric::L1 => diffs.map(f64::abs).sum(),
        Metric::Linf => diffs.map(f64::abs).fold(0.0, f64::max),
        Metric::Ks => {
            let mut acc = 0.0f64;
            diffs
                .map(|d| {
                    acc += d;
                    acc.abs()
                })
                .fold(0.0, f64::max)
        }
    })
}
