//! Normalized histograms and Gaussian kernel density estimates.

use serde::{Deserialize, Serialize};

use super::{population_stats, AnalysisError};

pub const DEFAULT_BINS: usize = 60;
pub const DEFAULT_GRID: usize = 401;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    /// `bins + 1` ascending bin edges.
    pub bin_edges: Vec<f64>,
    /// Density per bin; Σ height·width = 1.
    pub histogram: Vec<f64>,
    /// Ascending abscissae for the KDE.
    pub grid: Vec<f64>,
    /// KDE per grid point; empty when degenerate.
    pub kde: Vec<f64>,
    /// Kernel bandwidth; 0 when degenerate.
    pub bandwidth: f64,
    /// Zero-variance input: histogram only.
    pub degenerate: bool,
}

pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `0.9 · min(σ, IQR/1.34) · N^(-1/5)`, falling back to σ when the IQR is 0.
pub fn silverman_bandwidth(weights: &[f64]) -> Result<f64, AnalysisError> {
    if weights.len() < 2 {
        return Err(AnalysisError::TooFew { need: 2, got: weights.len() });
    }
    let (_, sigma) = population_stats(weights);
    if sigma == 0.0 {
        return Err(AnalysisError::Degenerate);
    }
    let mut sorted = weights.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sigma.min(iqr / 1.34) } else { sigma };
    Ok(0.9 * spread * (weights.len() as f64).powf(-0.2))
}

/// f̂(x) = (1/(N·h)) Σ φ((x − wᵢ)/h).
pub fn kde_at(weights: &[f64], h: f64, x: f64) -> f64 {
    let s: f64 = weights.iter().map(|&w| normal_pdf((x - w) / h)).sum();
    s / (weights.len() as f64 * h)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| if i == n - 1 { hi } else { lo + step * i as f64 }).collect()
}

/// Histogram with `bins` equal-width bins over the data range.
pub fn histogram(weights: &[f64], bins: usize) -> (Vec<f64>, Vec<f64>) {
    let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi, bins) = if hi > lo { (lo, hi, bins) } else { (lo - 0.5, lo + 0.5, 1) };
    let edges = linspace(lo, hi, bins + 1);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &w in weights {
        let b = (((w - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = weights.len() as f64;
    (edges, counts.iter().map(|&c| c as f64 / (n * width)).collect())
}

/// Histogram plus Gaussian KDE on a grid spanning μ ± 5σ and the data
/// range padded by 4h. `bandwidth` overrides Silverman's rule.
pub fn density(weights: &[f64], bins: usize, bandwidth: Option<f64>, grid_points: usize) -> Result<DensityEstimate, AnalysisError> {
    if weights.len() < 2 {
        return Err(AnalysisError::TooFew { need: 2, got: weights.len() });
    }
    if bins == 0 || grid_points < 2 {
        return Err(AnalysisError::InvalidArgument("bins and grid points must be positive".into()));
    }
    if let Some(h) = bandwidth {
        if !(h > 0.0 && h.is_finite()) {
            return Err(AnalysisError::InvalidArgument(format!("bandwidth must be positive, got {h}")));
        }
    }
    let (bin_edges, hist) = histogram(weights, bins);
    let (mu, sigma) = population_stats(weights);
    if sigma == 0.0 {
        return Ok(DensityEstimate { bin_edges, histogram: hist, grid: Vec::new(), kde: Vec::new(), bandwidth: 0.0, degenerate: true });
    }
    let h = match bandwidth {
        Some(h) => h,
        None => silverman_bandwidth(weights)?,
    };
    let lo = (mu - 5.0 * sigma).min(bin_edges[0] - 4.0 * h);
    let hi = (mu + 5.0 * sigma).max(bin_edges[bin_edges.len() - 1] + 4.0 * h);
    let grid = linspace(lo, hi, grid_points);
    let kde = grid.iter().map(|&x| kde_at(weights, h, x)).collect();
    Ok(DensityEstimate { bin_edges, histogram: hist, grid, kde, bandwidth: h, degenerate: false })
}

/// Trapezoid rule over a sampled curve.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}
