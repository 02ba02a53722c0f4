//! Exact (O(n²)) t-SNE of per-trial weight vectors.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{load_trial_model, AccuracyGroup, AnalysisError};
use crate::nn::RngState;
use crate::trainer::ExperimentManifest;

pub const PERPLEXITY_TOL: f64 = 1e-3;
pub const MAX_SEARCH_STEPS: usize = 200;

#[derive(Debug, Error)]
pub enum TsneError {
    #[error("t-SNE needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("perplexity {perplexity} must be positive and below the point count {n}")]
    BadPerplexity { perplexity: f64, n: usize },
    #[error("points have differing dimensions within cohort `{cohort}`")]
    MixedDimensions { cohort: String },
    #[error("input contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    /// Std of the initial N(0, s²) coordinates.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            init_std: 1e-4,
            seed: 0,
        }
    }
}

/// Symmetric joint affinities.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub n: usize,
    /// Row-major n×n.
    pub p: Vec<f64>,
    /// Gaussian σᵢ per row.
    pub sigma: Vec<f64>,
    /// 2^H of each conditional row before symmetrization.
    pub row_perplexity: Vec<f64>,
    pub warnings: Vec<String>,
}

impl AffinityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }
}

/// Squared Euclidean distances between rows of `x`.
pub fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum() }).collect())
        .collect();
    rows.concat()
}

/// p_{j|i} ∝ exp(−β(d_j − d_min)), j ≠ i; returns (row, perplexity).
fn conditional(d: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let dmin = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
    let mut row: Vec<f64> = d.iter().enumerate().map(|(j, &v)| if j == i { 0.0 } else { (-beta * (v - dmin)).exp() }).collect();
    let z: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= z);
    let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum();
    (row, h.exp2())
}

struct Row {
    p: Vec<f64>,
    beta: f64,
    perplexity: f64,
    converged: bool,
}

/// Bisection on the precision β so that 2^H(p_i) hits `target`.
fn calibrate(d: &[f64], i: usize, target: f64) -> Row {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    // Scale the first guess to the distance range.
    let mean: f64 = d.iter().sum::<f64>() / (d.len() - 1) as f64;
    if mean > 0.0 && mean.is_finite() {
        beta = 1.0 / mean;
    }
    let mut best = conditional(d, i, beta);
    for _ in 0..MAX_SEARCH_STEPS {
        let diff = best.1 - target;
        if diff.abs() < PERPLEXITY_TOL {
            return Row { p: best.0, beta, perplexity: best.1, converged: true };
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (lo + hi);
        }
        best = conditional(d, i, beta);
    }
    let converged = (best.1 - target).abs() < PERPLEXITY_TOL;
    Row { p: best.0, beta, perplexity: best.1, converged }
}

/// Calibrates every row to `perplexity` and symmetrizes
/// p_ij = (p_{j|i} + p_{i|j}) / 2n.
pub fn pairwise_affinities(x: &[Vec<f64>], perplexity: f64) -> Result<AffinityMatrix, TsneError> {
    let n = x.len();
    if n < 4 {
        return Err(TsneError::TooFewPoints(n));
    }
    if !(perplexity > 0.0 && perplexity < n as f64) {
        return Err(TsneError::BadPerplexity { perplexity, n });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(TsneError::NonFinite);
    }
    let d = squared_distances(x);
    let rows: Vec<Row> = (0..n).into_par_iter().map(|i| calibrate(&d[i * n..(i + 1) * n], i, perplexity)).collect();
    let mut warnings = Vec::new();
    let stuck = rows.iter().filter(|r| !r.converged).count();
    if stuck > 0 {
        warnings.push(format!(
            "perplexity calibration did not reach {perplexity} within {PERPLEXITY_TOL} for {stuck} of {n} rows (duplicate-heavy input); sigma clamped"
        ));
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (rows[i].p[j] + rows[j].p[i]) / (2.0 * n as f64);
        }
    }
    Ok(AffinityMatrix {
        n,
        p,
        sigma: rows.iter().map(|r| if r.beta > 0.0 { (0.5 / r.beta).sqrt() } else { f64::INFINITY }).collect(),
        row_perplexity: rows.iter().map(|r| r.perplexity).collect(),
        warnings,
    })
}

/// Unnormalized Student-t kernel (1 + ‖yᵢ − yⱼ‖²)⁻¹ and its sum.
fn student_t(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut w = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            w[i * n + j] = v;
            w[j * n + i] = v;
            z += 2.0 * v;
        }
    }
    (w, z)
}

/// Q of an embedding (n×n, zero diagonal, unit mass).
pub fn joint_q(y: &[[f64; 2]]) -> Vec<f64> {
    let (w, z) = student_t(y);
    w.into_iter().map(|v| v / z).collect()
}

/// KL(P‖Q) = Σ p log(p/q) over p > 0.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let q = joint_q(y);
    p.iter().zip(&q).filter(|(&p, _)| p > 0.0).map(|(&p, &q)| p * (p / q).ln()).sum::<f64>().max(0.0)
}

/// ∂KL/∂yᵢ = 4 Σⱼ (p_ij − q_ij)(yᵢ − yⱼ)(1 + ‖yᵢ − yⱼ‖²)⁻¹, with P scaled by `exaggeration`.
pub fn kl_gradient(p: &[f64], y: &[[f64; 2]], exaggeration: f64) -> Vec<[f64; 2]> {
    let n = y.len();
    let (w, z) = student_t(y);
    let mut g = vec![[0.0; 2]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let k = i * n + j;
            let m = 4.0 * (exaggeration * p[k] - w[k] / z) * w[k];
            g[i][0] += m * (y[i][0] - y[j][0]);
            g[i][1] += m * (y[i][1] - y[j][1]);
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub y: Vec<[f64; 2]>,
    /// KL(P‖Q) against the unexaggerated P after every iteration.
    pub kl_history: Vec<f64>,
    pub final_kl: f64,
    pub perplexity: f64,
    pub warnings: Vec<String>,
}

/// Largest usable perplexity for `n` points.
pub fn max_perplexity(n: usize) -> f64 {
    (n as f64 - 1.0) / 3.0
}

/// Gradient descent with momentum, per-coordinate gains and early
/// exaggeration. Perplexity is clamped to (n − 1)/3 for small inputs.
pub fn tsne_embed(x: &[Vec<f64>], config: &TsneConfig) -> Result<Embedding, TsneError> {
    let n = x.len();
    if n < 4 {
        return Err(TsneError::TooFewPoints(n));
    }
    if let Some(d) = x.first().map(Vec::len) {
        if x.iter().any(|r| r.len() != d) {
            return Err(TsneError::MixedDimensions { cohort: String::new() });
        }
    }
    let mut warnings = Vec::new();
    let mut perplexity = config.perplexity;
    if perplexity > max_perplexity(n) {
        perplexity = max_perplexity(n);
        warnings.push(format!("perplexity {} clamped to {perplexity:.4} for {n} points", config.perplexity));
    }
    let aff = pairwise_affinities(x, perplexity)?;
    warnings.extend(aff.warnings.iter().cloned());
    let p = aff.p;

    let mut rng = RngState::new(config.seed);
    let mut y: Vec<[f64; 2]> =
        (0..n).map(|_| [config.init_std * rng.standard_normal(), config.init_std * rng.standard_normal()]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_history = Vec::with_capacity(config.iterations);
    // The reference optimizer steps along the gradient without its constant 4.
    let step = config.learning_rate / 4.0;
    for it in 0..config.iterations {
        let exaggeration = if it < config.exaggeration_iters { config.early_exaggeration } else { 1.0 };
        let momentum = if it < config.momentum_switch { config.initial_momentum } else { config.final_momentum };
        let grad = kl_gradient(&p, &y, exaggeration);
        for i in 0..n {
            for c in 0..2 {
                let same_sign = (grad[i][c] > 0.0) == (update[i][c] > 0.0);
                gains[i][c] = if same_sign { (gains[i][c] * 0.8).max(0.01) } else { gains[i][c] + 0.2 };
                update[i][c] = momentum * update[i][c] - step * gains[i][c] * grad[i][c];
                y[i][c] += update[i][c];
            }
        }
        for c in 0..2 {
            let mean = y.iter().map(|v| v[c]).sum::<f64>() / n as f64;
            y.iter_mut().for_each(|v| v[c] -= mean);
        }
        kl_history.push(kl_divergence(&p, &y));
    }
    let final_kl = kl_history.last().copied().unwrap_or_else(|| kl_divergence(&p, &y));
    Ok(Embedding { y, kl_history, final_kl, perplexity, warnings })
}

/// One trial's flattened weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortItem {
    pub trial_id: usize,
    /// Trials with equal keys are embedded together.
    pub cohort: String,
    pub weights: Vec<f64>,
    pub accuracy: f64,
    pub label: AccuracyGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub trial_id: usize,
    pub cohort: String,
    pub x: f64,
    pub y: f64,
    pub accuracy: f64,
    pub label: AccuracyGroup,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Projection {
    pub points: Vec<ProjectedPoint>,
    pub warnings: Vec<String>,
}

pub const EMBEDDING_CSV_HEADER: &str = "trial_id,cohort,x,y,accuracy,label";

impl Projection {
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "{EMBEDDING_CSV_HEADER}")?;
        for p in &self.points {
            writeln!(out, "{},{},{},{},{},{}", p.trial_id, p.cohort, p.x, p.y, p.accuracy, p.label)?;
        }
        Ok(())
    }
}

/// Embeds each cohort separately (cohorts run concurrently). Cohorts with
/// fewer than 4 trials are skipped with a warning.
pub fn project_cohorts(items: &[CohortItem], config: &TsneConfig) -> Result<Projection, TsneError> {
    let mut keys: Vec<&str> = Vec::new();
    for it in items {
        if !keys.contains(&it.cohort.as_str()) {
            keys.push(&it.cohort);
        }
    }
    let results: Vec<Result<Projection, TsneError>> = keys
        .par_iter()
        .map(|key| {
            let members: Vec<&CohortItem> = items.iter().filter(|i| i.cohort == *key).collect();
            let dim = members[0].weights.len();
            if members.iter().any(|m| m.weights.len() != dim) {
                return Err(TsneError::MixedDimensions { cohort: key.to_string() });
            }
            if members.len() < 4 {
                return Ok(Projection {
                    points: Vec::new(),
                    warnings: vec![format!("cohort `{key}` has {} trials; t-SNE needs 4", members.len())],
                });
            }
            let x: Vec<Vec<f64>> = members.iter().map(|m| m.weights.clone()).collect();
            let emb = tsne_embed(&x, config)?;
            let points = members
                .iter()
                .zip(&emb.y)
                .map(|(m, y)| ProjectedPoint {
                    trial_id: m.trial_id,
                    cohort: key.to_string(),
                    x: y[0],
                    y: y[1],
                    accuracy: m.accuracy,
                    label: m.label,
                })
                .collect();
            let warnings = emb.warnings.into_iter().map(|w| format!("cohort `{key}`: {w}")).collect();
            Ok(Projection { points, warnings })
        })
        .collect();
    let mut out = Projection::default();
    for r in results {
        let r = r?;
        out.points.extend(r.points);
        out.warnings.extend(r.warnings);
    }
    Ok(out)
}

/// Cohort key of a spec: a short architecture tag plus a digest of its resolved JSON.
pub fn cohort_key(spec: &crate::models::ModelSpec) -> String {
    let s = spec.clone().resolved();
    let mut key = format!("{}", s.family);
    match s.family {
        crate::models::Family::Dnn => key += &format!("-{}x{}", s.hidden()[0], s.hidden()[1]),
        crate::models::Family::Cnn => key += &format!("-c{}", s.channels()),
        crate::models::Family::Vit => key += &format!("-h{}", s.nhead()),
    }
    let full = serde_json::to_string(&s).expect("spec serializes");
    let digest = hex::encode(Sha256::digest(full.as_bytes()));
    format!("{key}-{}", &digest[..8])
}

/// Loads the `group` weights of every checkpointed trial in the manifests and
/// embeds them, one cohort per distinct model spec.
pub fn project_manifests(
    manifests: &[(&ExperimentManifest, &Path)],
    group: &str,
    config: &TsneConfig,
) -> Result<Projection, TsneError> {
    let mut items = Vec::new();
    for (m, dir) in manifests {
        for t in m.trials.iter().filter(|t| t.checkpoint.is_some()) {
            let model = load_trial_model(dir, t)?;
            let weights = model.weight_group(group).map_err(AnalysisError::from)?.values;
            let label = t.group.as_deref().and_then(|g| g.parse().ok()).unwrap_or(AccuracyGroup::Low);
            items.push(CohortItem { trial_id: t.trial_id, cohort: cohort_key(&t.spec), weights, accuracy: t.final_accuracy, label });
        }
    }
    project_cohorts(&items, config)
}

pub fn project_manifest(manifest: &ExperimentManifest, dir: &Path, group: &str, config: &TsneConfig) -> Result<Projection, TsneError> {
    project_manifests(&[(manifest, dir)], group, config)
}

/// Mean pairwise distance within `a` and mean distance from `a` to `b`.
pub fn separation(a: &[[f64; 2]], b: &[[f64; 2]]) -> (f64, f64) {
    let dist = |p: &[f64; 2], q: &[f64; 2]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
    let mut within = (0.0, 0usize);
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            within.0 += dist(&a[i], &a[j]);
            within.1 += 1;
        }
    }
    let mut across = (0.0, 0usize);
    for p in a {
        for q in b {
            across.0 += dist(p, q);
            across.1 += 1;
        }
    }
    (within.0 / within.1.max(1) as f64, across.0 / across.1.max(1) as f64)
}

#[cfg(test)]
mod tests;
