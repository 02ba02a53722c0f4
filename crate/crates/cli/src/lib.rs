//! `paramscope` command line: fetch datasets, train populations of trials,
//! analyze their weights, project them with t-SNE and render reports.
//!
//! Output directory layout:
//!
//! ```text
//! <out>/paramscope.resolved.toml
//! <out>/manifest.json
//! <out>/checkpoints/trial_0000.pscp ...
//! <out>/analysis/{trials,groups,density}.csv, analysis.json
//! <out>/projection/embedding.csv, embedding.json
//! <out>/report/*.svg, *.csv, index.json
//! ```

pub mod config;
pub mod report;
pub mod svg;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use paramscope_core::analysis::{default_thresholds, AnalysisError};
use paramscope_core::data::{fetch, load_split, DataError, DatasetName, FetchOptions, Split};
use paramscope_core::trainer::{run_experiment, ExperimentManifest, PreparedData, RunOptions, TrainError};
use paramscope_core::tsne::{project_manifest, Projection, TsneError};

use config::{CliConfig, RESOLVED_CONFIG};

/// Failure of one command, printed as a single `error[kind]: message` line.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    MissingDataset { dataset: DatasetName, dir: PathBuf },
    /// An earlier pipeline stage has not been run.
    MissingStage { file: PathBuf, command: &'static str },
    Io(String),
    Data(DataError),
    Train(TrainError),
    Analysis(AnalysisError),
    Projection(TsneError),
}

impl CliError {
    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn config(origin: &Path, e: impl fmt::Display) -> Self {
        CliError::Config(format!("{}: {}", origin.display(), e.to_string().trim_end()))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingDataset { .. } => "missing-dataset",
            CliError::MissingStage { .. } => "missing-input",
            CliError::Io(_) => "io",
            CliError::Data(_) => "data",
            CliError::Train(_) => "train",
            CliError::Analysis(_) => "analysis",
            CliError::Projection(_) => "projection",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: ", self.kind())?;
        match self {
            CliError::Config(m) | CliError::Io(m) => f.write_str(m),
            CliError::MissingDataset { dataset, dir } => write!(
                f,
                "{dataset} is not in the cache at {}; run `paramscope fetch --dataset {dataset}` first",
                dir.display()
            ),
            CliError::MissingStage { file, command } => {
                write!(f, "{} not found; run `paramscope {command}` first", file.display())
            }
            CliError::Data(e) => write!(f, "{e}"),
            CliError::Train(e) => write!(f, "{e}"),
            CliError::Analysis(e) => write!(f, "{e}"),
            CliError::Projection(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Missing { dataset, dir } => CliError::MissingDataset { dataset, dir },
            e => CliError::Data(e),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(d) => d.into(),
            TrainError::InvalidConfig(m) => CliError::Config(m),
            e => CliError::Train(e),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::InvalidThresholds(m) => CliError::Config(format!("analysis.thresholds: {m}")),
            e => CliError::Analysis(e),
        }
    }
}

impl From<TsneError> for CliError {
    fn from(e: TsneError) -> Self {
        CliError::Projection(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "paramscope", version, about = "Weight diagnostics for populations of trained networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML config; defaults to the resolved config inside --out if present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Base seed of the experiment.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Train on a seeded subset of this many examples.
    #[arg(long, global = true)]
    pub subset: Option<usize>,
    /// Trials trained concurrently.
    #[arg(long, global = true)]
    pub parallel: Option<usize>,
    /// Reject configurations outside the paper's grid.
    #[arg(long, global = true)]
    pub strict_paper_mode: bool,
    /// Record wall times as 0 so outputs are byte-reproducible.
    #[arg(long, global = true)]
    pub fixed_clock: bool,
    /// No per-epoch progress on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Download and verify datasets into the cache.
    Fetch {
        /// Dataset to fetch (repeatable); defaults to the experiment's dataset.
        #[arg(long)]
        dataset: Vec<DatasetName>,
    },
    /// Train every trial of the experiment and write the manifest.
    Train,
    /// Label trials and compute weight statistics and densities.
    Analyze,
    /// Embed per-trial weight vectors in 2-D.
    Project,
    /// Render CSV/SVG figures and an index.
    Report,
}

/// Config file (or the resolved one in the output directory) with flags applied.
pub fn resolve_config(common: &Common) -> Result<CliConfig, CliError> {
    let mut cfg = match (&common.config, &common.out) {
        (Some(path), _) => CliConfig::load(path)?,
        (None, Some(out)) if out.join(RESOLVED_CONFIG).is_file() => CliConfig::load(&out.join(RESOLVED_CONFIG))?,
        _ => CliConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.clone());
    }
    if let Some(exp) = cfg.experiment.as_mut() {
        if let Some(seed) = common.seed {
            exp.base_seed = seed;
        }
        if let Some(n) = common.subset {
            exp.subset = Some(n);
        }
        if let Some(k) = common.parallel {
            exp.parallelism = k;
        }
        if common.strict_paper_mode {
            exp.strict_paper_mode = true;
        }
    }
    Ok(cfg)
}

fn output_dir(cfg: &CliConfig) -> Result<PathBuf, CliError> {
    cfg.output_dir.clone().ok_or_else(|| CliError::Config("no output directory: pass --out or set output_dir".into()))
}

fn read_manifest(out: &Path) -> Result<ExperimentManifest, CliError> {
    let path = out.join("manifest.json");
    if !path.is_file() {
        return Err(CliError::MissingStage { file: path, command: "train" });
    }
    Ok(ExperimentManifest::read(&path)?)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = resolve_config(&cli.common)?;
    match &cli.command {
        Command::Fetch { dataset } => {
            let names = if dataset.is_empty() { vec![cfg.experiment()?.dataset] } else { dataset.clone() };
            let cache = cfg.fetch.cache();
            let opts = FetchOptions { attempts: cfg.fetch.attempts.max(1), ..FetchOptions::default() };
            for name in names {
                let files = fetch(name, &cfg.fetch.sources_for(name), &cache, &opts)?;
                println!("{name}: {} files verified in {}", files.len(), cache.display());
            }
        }
        Command::Train => {
            let out = output_dir(&cfg)?;
            let exp = cfg.experiment()?.clone();
            exp.validate()?;
            let cache = cfg.fetch.cache();
            let train = load_split(&cache, exp.dataset, Split::Train)?;
            let test = load_split(&cache, exp.dataset, Split::Test)?;
            let data = PreparedData::new(&exp, train, test);
            cfg.write_resolved(&out)?;
            let opts = RunOptions { out_dir: Some(out.clone()), quiet: cli.common.quiet, fixed_clock: cli.common.fixed_clock };
            let manifest = run_experiment(&exp, &data, &opts)?;
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            let failed = manifest.trials.iter().filter(|t| t.error.is_some()).count();
            println!("trained {} trials ({failed} failed); manifest: {}", manifest.trials.len(), out.join("manifest.json").display());
        }
        Command::Analyze => {
            let out = output_dir(&cfg)?;
            let manifest = read_manifest(&out)?;
            let thresholds = cfg
                .analysis
                .thresholds
                .unwrap_or_else(|| default_thresholds(manifest.config.dataset, manifest.config.model.family));
            let analysis = report::analyze(&manifest, &out, &thresholds, &cfg.analysis)?;
            report::write_analysis(&analysis, &out.join("analysis"))?;
            cfg.experiment.get_or_insert_with(|| manifest.config.clone());
            cfg.write_resolved(&out)?;
            println!("analyzed {} trials into {}", analysis.labels.len(), out.join("analysis").display());
        }
        Command::Project => {
            let out = output_dir(&cfg)?;
            let manifest = read_manifest(&out)?;
            let analysis_path = out.join("analysis").join("analysis.json");
            let thresholds = cfg
                .analysis
                .thresholds
                .unwrap_or_else(|| default_thresholds(manifest.config.dataset, manifest.config.model.family));
            let mut labeled = report::labeled(&manifest, &thresholds, &cfg.analysis)?;
            if analysis_path.is_file() {
                let a = report::read_analysis(&analysis_path)?;
                for t in &mut labeled.trials {
                    if let Some(l) = a.label_of(t.trial_id) {
                        t.group = Some(l.to_string());
                    }
                }
            }
            let group = cfg.projection.group.clone().unwrap_or_else(|| manifest.config.model.family.whole_group().to_string());
            let proj = project_manifest(&labeled, &out, &group, &cfg.projection.tsne)?;
            for w in &proj.warnings {
                eprintln!("warning: {w}");
            }
            let dir = out.join("projection");
            let mut csv = Vec::new();
            proj.write_csv(&mut csv).map_err(|e| CliError::io(&dir, e))?;
            write_text(&dir.join("embedding.csv"), &String::from_utf8_lossy(&csv))?;
            let json = serde_json::to_string_pretty(&proj).map_err(|e| CliError::Config(e.to_string()))? + "\n";
            write_text(&dir.join("embedding.json"), &json)?;
            cfg.experiment.get_or_insert_with(|| manifest.config.clone());
            cfg.write_resolved(&out)?;
            println!("projected {} trials into {}", proj.points.len(), dir.display());
        }
        Command::Report => {
            let out = output_dir(&cfg)?;
            let manifest = read_manifest(&out)?;
            let analysis_path = out.join("analysis").join("analysis.json");
            if !analysis_path.is_file() {
                return Err(CliError::MissingStage { file: analysis_path, command: "analyze" });
            }
            let analysis = report::read_analysis(&analysis_path)?;
            let proj_path = out.join("projection").join("embedding.json");
            let projection: Option<Projection> = if proj_path.is_file() {
                let text = fs::read_to_string(&proj_path).map_err(|e| CliError::io(&proj_path, e))?;
                Some(serde_json::from_str(&text).map_err(|e| CliError::config(&proj_path, e))?)
            } else {
                eprintln!("note: no projection found; run `paramscope project` to add embedding plots");
                None
            };
            let index = report::emit_report(&manifest, &analysis, projection.as_ref(), &out.join("report"))?;
            println!("wrote {} report files to {}", index.files.len() + 1, out.join("report").display());
        }
    }
    Ok(())
}
