//! Weight statistics, node strength, density estimates and accuracy grouping.

mod density;
mod grouping;

use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{Model, ModelError, ParamKind};
use crate::nn::KERNEL;
use crate::trainer::{load_checkpoint, ExperimentManifest, TrainError, TrialRecord};

pub use density::{
    density, histogram, kde_at, normal_pdf, quantile, silverman_bandwidth, trapezoid, DensityEstimate, DEFAULT_BINS,
    DEFAULT_GRID,
};
pub use grouping::{
    classify_trial, classify_trials, default_thresholds, detect_nonconvergence, AccuracyGroup, GroupThresholds,
    NonConvergence,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("weight group is empty")]
    Empty,
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("zero-variance input")]
    Degenerate,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("trial {trial_id} has no checkpoint")]
    NoCheckpoint { trial_id: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Mean and population standard deviation (two-pass).
pub fn population_stats(w: &[f64]) -> (f64, f64) {
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub group: String,
    pub n: usize,
    pub mean: f64,
    /// Population (1/N) standard deviation.
    pub std: f64,
}

pub fn weight_mean_std(group: &str, weights: &[f64]) -> Result<WeightStats, AnalysisError> {
    if weights.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let (mean, std) = population_stats(weights);
    Ok(WeightStats { group: group.to_string(), n: weights.len(), mean, std })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Abs,
    Plus,
    Minus,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeStrengths {
    pub group: String,
    /// Σ|w| over each node's incoming weights.
    pub s: Vec<f64>,
    /// Σ of the positive incoming weights.
    pub s_plus: Vec<f64>,
    /// Σ|w| of the negative incoming weights.
    pub s_minus: Vec<f64>,
}

impl NodeStrengths {
    fn push(&mut self, weights: impl Iterator<Item = f64>) {
        let (mut p, mut m) = (0.0, 0.0);
        for w in weights {
            if w > 0.0 {
                p += w;
            } else {
                m -= w;
            }
        }
        self.s.push(p + m);
        self.s_plus.push(p);
        self.s_minus.push(m);
    }

    pub fn values(&self, sign: Sign) -> &[f64] {
        match sign {
            Sign::Abs => &self.s,
            Sign::Plus => &self.s_plus,
            Sign::Minus => &self.s_minus,
        }
    }

    /// Mean over nodes; 0 for an empty set.
    pub fn mean(&self, sign: Sign) -> f64 {
        let v = self.values(sign);
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }
}

/// Appends the nodes of one weight tensor: a column of an `[in, out]`
/// matrix, a `[Cin, 3, 3]` kernel, or a single norm scale.
fn tensor_nodes(out: &mut NodeStrengths, kind: ParamKind, shape: &[usize], data: &[f64]) {
    match kind {
        ParamKind::Linear => {
            let (rows, cols) = (shape[0], shape[1]);
            for j in 0..cols {
                out.push((0..rows).map(|i| data[i * cols + j]));
            }
        }
        ParamKind::ConvKernel => {
            let per = shape[1] * KERNEL * KERNEL;
            for k in data.chunks_exact(per) {
                out.push(k.iter().copied());
            }
        }
        ParamKind::NormScale => {
            for &g in data {
                out.push(std::iter::once(g));
            }
        }
        _ => {}
    }
}

/// Node strengths of every weight tensor in `group`, nodes concatenated in
/// parameter order (so ViT `attn` covers Wq, Wk, Wv and Wo jointly).
pub fn node_strength(model: &Model, group: &str) -> Result<NodeStrengths, AnalysisError> {
    let mut out = NodeStrengths { group: group.to_string(), ..Default::default() };
    for p in model.group_params(group)? {
        tensor_nodes(&mut out, p.kind, p.tensor.shape(), p.tensor.data());
    }
    Ok(out)
}

/// Per-parameter breakdown of [`node_strength`], one entry per weight tensor.
pub fn node_strength_per_param(model: &Model, group: &str) -> Result<Vec<NodeStrengths>, AnalysisError> {
    let mut all = Vec::new();
    for p in model.group_params(group)? {
        if p.kind.is_weight() {
            let mut out = NodeStrengths { group: p.name.clone(), ..Default::default() };
            tensor_nodes(&mut out, p.kind, p.tensor.shape(), p.tensor.data());
            all.push(out);
        }
    }
    Ok(all)
}

/// One trial × one weight group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub trial_id: usize,
    pub group: String,
    pub n: usize,
    pub mu: f64,
    pub sigma: f64,
    pub mean_s: f64,
    pub mean_s_plus: f64,
    pub mean_s_minus: f64,
    /// Gaussian KDE at w = 0 with Silverman bandwidth; 0 when degenerate.
    pub kde_at_zero: f64,
    pub accuracy: f64,
    pub label: AccuracyGroup,
}

pub const GROUP_CSV_HEADER: &str = "trial_id,group,N,mu,sigma,mean_S,mean_S_plus,mean_S_minus,kde0,accuracy,label";

/// Rows for every weight group of one model.
pub fn analyze_model(model: &Model, trial_id: usize, accuracy: f64, label: AccuracyGroup) -> Result<Vec<GroupRow>, AnalysisError> {
    let mut rows = Vec::new();
    for g in model.weight_groups() {
        let stats = weight_mean_std(&g.name, &g.values)?;
        let ns = node_strength(model, &g.name)?;
        let kde_at_zero = match silverman_bandwidth(&g.values) {
            Ok(h) => kde_at(&g.values, h, 0.0),
            Err(_) => 0.0,
        };
        rows.push(GroupRow {
            trial_id,
            group: g.name,
            n: stats.n,
            mu: stats.mean,
            sigma: stats.std,
            mean_s: ns.mean(Sign::Abs),
            mean_s_plus: ns.mean(Sign::Plus),
            mean_s_minus: ns.mean(Sign::Minus),
            kde_at_zero,
            accuracy,
            label,
        });
    }
    Ok(rows)
}

/// Loads the final weights of a trial from its manifest directory.
pub fn load_trial_model(dir: &Path, record: &TrialRecord) -> Result<Model, AnalysisError> {
    let rel = record.checkpoint.as_ref().ok_or(AnalysisError::NoCheckpoint { trial_id: record.trial_id })?;
    Ok(load_checkpoint(&dir.join(rel))?.model)
}

/// Rows for every trial with a checkpoint, in trial order. Trials must
/// already carry labels (see [`classify_trials`]); unlabeled ones count as low.
pub fn analyze_manifest(manifest: &ExperimentManifest, dir: &Path) -> Result<Vec<GroupRow>, AnalysisError> {
    let per_trial: Vec<Result<Vec<GroupRow>, AnalysisError>> = manifest
        .trials
        .par_iter()
        .filter(|t| t.checkpoint.is_some())
        .map(|t| {
            let model = load_trial_model(dir, t)?;
            let label = t.group.as_deref().and_then(|g| g.parse().ok()).unwrap_or(AccuracyGroup::Low);
            analyze_model(&model, t.trial_id, t.final_accuracy, label)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_trial {
        rows.extend(r?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsPoint {
    pub trial_id: usize,
    pub mu: f64,
    pub sigma: f64,
    pub accuracy: f64,
    pub label: AccuracyGroup,
}

/// Mean-vs-σ points of one group, one per trial.
pub fn stats_scatter(rows: &[GroupRow], group: &str) -> Vec<StatsPoint> {
    rows.iter()
        .filter(|r| r.group == group)
        .map(|r| StatsPoint { trial_id: r.trial_id, mu: r.mu, sigma: r.sigma, accuracy: r.accuracy, label: r.label })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthPoint {
    pub trial_id: usize,
    pub a: f64,
    pub b: f64,
    pub accuracy: f64,
    pub label: AccuracyGroup,
}

fn pick(r: &GroupRow, sign: Sign) -> f64 {
    match sign {
        Sign::Abs => r.mean_s,
        Sign::Plus => r.mean_s_plus,
        Sign::Minus => r.mean_s_minus,
    }
}

/// Per-trial (mean S over A, mean S over B) with S, S⁺ or S⁻ chosen by `sign`.
pub fn strength_scatter(rows: &[GroupRow], group_a: &str, group_b: &str, sign: Sign) -> Vec<StrengthPoint> {
    rows.iter()
        .filter(|r| r.group == group_a)
        .filter_map(|a| {
            let b = rows.iter().find(|b| b.trial_id == a.trial_id && b.group == group_b)?;
            Some(StrengthPoint { trial_id: a.trial_id, a: pick(a, sign), b: pick(b, sign), accuracy: a.accuracy, label: a.label })
        })
        .collect()
}

pub fn write_group_csv(rows: &[GroupRow], out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "{GROUP_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.trial_id,
            r.group,
            r.n,
            r.mu,
            r.sigma,
            r.mean_s,
            r.mean_s_plus,
            r.mean_s_minus,
            r.kde_at_zero,
            r.accuracy,
            r.label
        )?;
    }
    Ok(())
}

/// Per-node export: one row per node of `group` in each model.
pub fn write_node_csv(models: &[(usize, &Model)], group: &str, out: &mut impl Write) -> Result<(), AnalysisError> {
    let io = |e: io::Error| AnalysisError::InvalidArgument(e.to_string());
    writeln!(out, "trial_id,group,node,S,S_plus,S_minus").map_err(io)?;
    for (id, m) in models {
        let ns = node_strength(m, group)?;
        for (i, ((s, p), n)) in ns.s.iter().zip(&ns.s_plus).zip(&ns.s_minus).enumerate() {
            writeln!(out, "{id},{group},{i},{s},{p},{n}").map_err(io)?;
        }
    }
    Ok(())
}

/// Median of a sample; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
