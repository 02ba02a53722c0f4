//! Analysis tables and the report directory (CSV + SVG + index).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use paramscope_core::analysis::{
    analyze_manifest, classify_trials, density, load_trial_model, write_group_csv, AccuracyGroup, DensityEstimate,
    GroupRow, GroupThresholds, Sign,
};
use paramscope_core::models::Family;
use paramscope_core::trainer::ExperimentManifest;
use paramscope_core::tsne::Projection;
use serde::{Deserialize, Serialize};

use crate::config::AnalysisSection;
use crate::svg::{render_svg, Mark, PlotData, PlotKind, PlotSpec, Series};
use crate::CliError;

pub const ANALYSIS_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLabel {
    pub trial_id: usize,
    pub seed: u64,
    pub final_accuracy: f64,
    pub label: AccuracyGroup,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDensity {
    pub trial_id: usize,
    pub group: String,
    pub accuracy: f64,
    pub label: AccuracyGroup,
    pub estimate: DensityEstimate,
}

/// Everything `analyze` computes; `report` only reads this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub schema_version: u32,
    pub config_hash: String,
    pub family: Family,
    pub thresholds: GroupThresholds,
    pub labels: Vec<TrialLabel>,
    pub rows: Vec<GroupRow>,
    pub densities: Vec<TrialDensity>,
}

impl AnalysisOutput {
    pub fn label_of(&self, trial_id: usize) -> Option<AccuracyGroup> {
        self.labels.iter().find(|l| l.trial_id == trial_id).map(|l| l.label)
    }
}

/// Copy of `manifest` with every trial's `group` filled in.
pub fn labeled(manifest: &ExperimentManifest, thresholds: &GroupThresholds, section: &AnalysisSection) -> Result<ExperimentManifest, CliError> {
    let mut m = manifest.clone();
    classify_trials(&mut m.trials, thresholds, &section.nonconvergence)?;
    Ok(m)
}

pub fn analyze(manifest: &ExperimentManifest, dir: &Path, thresholds: &GroupThresholds, section: &AnalysisSection) -> Result<AnalysisOutput, CliError> {
    let m = labeled(manifest, thresholds, section)?;
    let family = m.config.model.family;
    let rows = analyze_manifest(&m, dir)?;
    let mut densities = Vec::new();
    let mut labels = Vec::new();
    for t in &m.trials {
        let label: AccuracyGroup = t.group.as_deref().unwrap_or("low").parse()?;
        labels.push(TrialLabel { trial_id: t.trial_id, seed: t.seed, final_accuracy: t.final_accuracy, label, diverged: t.diverged });
        if t.checkpoint.is_none() {
            continue;
        }
        let model = load_trial_model(dir, t)?;
        for g in family.panel_groups() {
            let w = model.weight_group(g).map_err(paramscope_core::analysis::AnalysisError::from)?;
            if w.values.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let estimate = density(&w.values, section.bins, section.bandwidth, section.grid_points)?;
            densities.push(TrialDensity { trial_id: t.trial_id, group: g.to_string(), accuracy: t.final_accuracy, label, estimate });
        }
    }
    Ok(AnalysisOutput {
        schema_version: ANALYSIS_SCHEMA_VERSION,
        config_hash: m.config_hash.clone(),
        family,
        thresholds: *thresholds,
        labels,
        rows,
        densities,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// `trials.csv`, `groups.csv`, `density.csv` and `analysis.json` in `dir`.
pub fn write_analysis(a: &AnalysisOutput, dir: &Path) -> Result<(), CliError> {
    let mut trials = String::from("trial_id,seed,final_accuracy,label,diverged\n");
    for l in &a.labels {
        let _ = writeln!(trials, "{},{},{},{},{}", l.trial_id, l.seed, l.final_accuracy, l.label, l.diverged);
    }
    write(&dir.join("trials.csv"), &trials)?;

    let mut groups = Vec::new();
    write_group_csv(&a.rows, &mut groups).map_err(|e| CliError::io(dir, e))?;
    write(&dir.join("groups.csv"), &String::from_utf8_lossy(&groups))?;

    let mut dens = String::from("trial_id,group,kind,x,y\n");
    for d in &a.densities {
        let e = &d.estimate;
        for (i, h) in e.histogram.iter().enumerate() {
            let centre = 0.5 * (e.bin_edges[i] + e.bin_edges[i + 1]);
            let _ = writeln!(dens, "{},{},hist,{},{}", d.trial_id, d.group, centre, h);
        }
        for (x, y) in e.grid.iter().zip(&e.kde) {
            let _ = writeln!(dens, "{},{},kde,{},{}", d.trial_id, d.group, x, y);
        }
    }
    write(&dir.join("density.csv"), &dens)?;

    let json = serde_json::to_string_pretty(a).map_err(|e| CliError::Config(e.to_string()))? + "\n";
    write(&dir.join("analysis.json"), &json)
}

pub fn read_analysis(path: &Path) -> Result<AnalysisOutput, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub kind: PlotKind,
    pub group: String,
    /// CSV holding the plotted rows (for SVG entries) or the SVG drawn from it.
    pub pair: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportIndex {
    pub schema_version: u32,
    pub files: BTreeMap<String, IndexEntry>,
}

struct Emitter<'a> {
    dir: &'a Path,
    index: ReportIndex,
}

impl Emitter<'_> {
    fn emit(&mut self, stem: &str, group: &str, spec: &PlotSpec, csv: &str, data: &PlotData) -> Result<(), CliError> {
        let (svg_name, csv_name) = (format!("{stem}.svg"), format!("{stem}.csv"));
        write(&self.dir.join(&csv_name), csv)?;
        write(&self.dir.join(&svg_name), &render_svg(spec, data))?;
        let entry = |pair: &str| IndexEntry { kind: spec.kind, group: group.to_string(), pair: pair.to_string() };
        self.index.files.insert(svg_name.clone(), entry(&csv_name));
        self.index.files.insert(csv_name, entry(&svg_name));
        Ok(())
    }
}

fn group_label(family: Family, name: &str) -> String {
    family.group_def(name).map_or_else(|| name.to_string(), |g| g.label.to_string())
}

/// Node-strength panels per family: pairs of groups in figure order.
pub fn strength_pairs(family: Family) -> &'static [(&'static str, &'static str)] {
    match family {
        Family::Dnn => &[("ip_fc1", "fc1_fc2"), ("ip_fc1", "fc2_op"), ("fc1_fc2", "fc2_op")],
        Family::Cnn => &[("conv1", "fc")],
        Family::Vit => &[("attn", "mlp"), ("mlp", "norm"), ("attn", "norm")],
    }
}

fn scatter(
    rows: impl Iterator<Item = (usize, f64, f64, f64, AccuracyGroup)>,
    header: &str,
) -> (String, PlotData) {
    let mut csv = format!("row,{header}\n");
    let mut data = PlotData::default();
    for (row, (id, x, y, acc, label)) in rows.enumerate() {
        let _ = writeln!(csv, "{row},{id},{x},{y},{acc},{label}");
        data.marks.push(Mark { x, y, accuracy: acc, row });
    }
    (csv, data)
}

/// Writes every figure of one experiment into `dir` and returns the index.
pub fn emit_report(
    manifest: &ExperimentManifest,
    analysis: &AnalysisOutput,
    projection: Option<&Projection>,
    dir: &Path,
) -> Result<ReportIndex, CliError> {
    let family = analysis.family;
    let mut em = Emitter { dir, index: ReportIndex { schema_version: REPORT_SCHEMA_VERSION, files: BTreeMap::new() } };

    // convergence: per-epoch training loss, colored by final accuracy
    let mut csv = String::from("row,trial_id,epoch,train_loss,final_accuracy,label\n");
    let mut data = PlotData::default();
    let mut row = 0;
    for t in &manifest.trials {
        let label = analysis.label_of(t.trial_id).unwrap_or(AccuracyGroup::Low);
        let first = row;
        let mut points = Vec::new();
        for (e, &l) in t.train_loss.iter().enumerate() {
            let _ = writeln!(csv, "{row},{},{},{l},{},{label}", t.trial_id, e + 1, t.final_accuracy);
            points.push(((e + 1) as f64, l));
            row += 1;
        }
        if !points.is_empty() {
            data.lines.push(Series { points, accuracy: t.final_accuracy, row: first });
        }
    }
    let title = format!("{} on {}: convergence", family.as_str().to_uppercase(), manifest.config.dataset);
    em.emit("convergence", "all", &PlotSpec::new(PlotKind::ConvergenceLines, &title, "epoch", "training loss"), &csv, &data)?;

    for g in family.panel_groups() {
        let label = group_label(family, g);
        let (csv, data) = scatter(
            analysis.rows.iter().filter(|r| r.group == *g).map(|r| (r.trial_id, r.mu, r.sigma, r.accuracy, r.label)),
            "trial_id,mu,sigma,accuracy,label",
        );
        let spec = PlotSpec::new(PlotKind::MeanSigmaScatter, &format!("{label}: weight mean vs std"), "mean", "standard deviation");
        em.emit(&format!("mean_sigma_{g}"), g, &spec, &csv, &data)?;

        let mut csv = String::from("row,trial_id,x,density,accuracy,label\n");
        let mut data = PlotData::default();
        let mut row = 0;
        for d in analysis.densities.iter().filter(|d| d.group == *g && !d.estimate.degenerate) {
            let first = row;
            for (x, y) in d.estimate.grid.iter().zip(&d.estimate.kde) {
                let _ = writeln!(csv, "{row},{},{x},{y},{},{}", d.trial_id, d.accuracy, d.label);
                row += 1;
            }
            let points = d.estimate.grid.iter().copied().zip(d.estimate.kde.iter().copied()).collect();
            data.lines.push(Series { points, accuracy: d.accuracy, row: first });
        }
        let spec = PlotSpec::new(PlotKind::DensityCurves, &format!("{label}: weight density"), "weight", "density");
        em.emit(&format!("density_{g}"), g, &spec, &csv, &data)?;
    }

    for &(a, b) in strength_pairs(family) {
        for (sign, suffix, mark) in [(Sign::Abs, "", ""), (Sign::Plus, "_plus", "+"), (Sign::Minus, "_minus", "-")] {
            let points = paramscope_core::analysis::strength_scatter(&analysis.rows, a, b, sign);
            let (csv, data) = scatter(
                points.iter().map(|p| (p.trial_id, p.a, p.b, p.accuracy, p.label)),
                &format!("trial_id,S{mark}_{a},S{mark}_{b},accuracy,label"),
            );
            let (la, lb) = (group_label(family, a), group_label(family, b));
            let spec = PlotSpec::new(
                PlotKind::StrengthScatter,
                &format!("{la}{mark} vs {lb}{mark}: mean node strength"),
                &format!("mean S{mark} ({la})"),
                &format!("mean S{mark} ({lb})"),
            );
            em.emit(&format!("strength_{a}_vs_{b}{suffix}"), &format!("{a}_vs_{b}{suffix}"), &spec, &csv, &data)?;
        }
    }

    if let Some(p) = projection {
        let mut cohorts: Vec<&str> = p.points.iter().map(|q| q.cohort.as_str()).collect();
        cohorts.dedup();
        for c in cohorts {
            let (csv, data) = scatter(
                p.points.iter().filter(|q| q.cohort == c).map(|q| (q.trial_id, q.x, q.y, q.accuracy, q.label)),
                "trial_id,x,y,accuracy,label",
            );
            let spec = PlotSpec::new(PlotKind::EmbeddingScatter, &format!("{c}: weight projection"), "t-SNE 1", "t-SNE 2");
            em.emit(&format!("embedding_{c}"), c, &spec, &csv, &data)?;
        }
    }

    let json = serde_json::to_string_pretty(&em.index).map_err(|e| CliError::Config(e.to_string()))? + "\n";
    write(&dir.join("index.json"), &json)?;
    Ok(em.index)
}
