//! TOML configuration file.
//!
//! ```toml
//! output_dir = "runs/dnn-mnist"
//!
//! [experiment]
//! dataset = "mnist"
//! trials = 30
//! model = { family = "dnn", input_shape = [1, 28, 28], hidden = [100, 100] }
//!
//! [analysis]
//! bins = 60
//! thresholds = { non_max = 15.0, low_max = 56.0, high_min = 95.0 }
//!
//! [projection]
//! group = "whole_net"
//! tsne = { perplexity = 30.0, seed = 0 }
//!
//! [fetch]
//! cache_dir = "/data/paramscope"
//! sources.mnist = [{ file = "train-images-idx3-ubyte", url = "...", compression = "gzip" }]
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use paramscope_core::analysis::{GroupThresholds, NonConvergence, DEFAULT_BINS, DEFAULT_GRID};
use paramscope_core::data::{RemoteFile, DatasetName};
use paramscope_core::trainer::TrainConfig;
use paramscope_core::tsne::TsneConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Name of the resolved config written into every output directory.
pub const RESOLVED_CONFIG: &str = "paramscope.resolved.toml";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<TrainConfig>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub projection: ProjectionSection,
    #[serde(default)]
    pub fetch: FetchSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Defaults per dataset and model family when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<GroupThresholds>,
    pub nonconvergence: NonConvergence,
    pub bins: usize,
    /// Fixed KDE bandwidth instead of Silverman's rule.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    pub grid_points: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            thresholds: None,
            nonconvergence: NonConvergence::default(),
            bins: DEFAULT_BINS,
            bandwidth: None,
            grid_points: DEFAULT_GRID,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionSection {
    /// Weight group to embed; the whole network when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub tsne: TsneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FetchSection {
    /// Overrides `PARAMSCOPE_CACHE` and the default cache location.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    pub attempts: u32,
    /// Mirror list per dataset name, replacing the built-in sources.
    pub sources: BTreeMap<String, Vec<RemoteFile>>,
}

impl Default for FetchSection {
    fn default() -> Self {
        FetchSection { cache_dir: None, attempts: 4, sources: BTreeMap::new() }
    }
}

impl FetchSection {
    pub fn cache(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(paramscope_core::data::cache_dir)
    }

    pub fn sources_for(&self, name: DatasetName) -> Vec<RemoteFile> {
        self.sources.get(name.as_str()).cloned().unwrap_or_else(|| paramscope_core::data::default_sources(name))
    }
}

impl CliConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let cfg: CliConfig = toml::from_str(text).map_err(|e| CliError::config(origin, e))?;
        for key in cfg.fetch.sources.keys() {
            key.parse::<DatasetName>()
                .map_err(|_| CliError::Config(format!("{}: fetch.sources: unknown dataset `{key}`", origin.display())))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    pub fn experiment(&self) -> Result<&TrainConfig, CliError> {
        self.experiment.as_ref().ok_or_else(|| CliError::Config("config has no [experiment] section".into()))
    }

    /// Writes the resolved config into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG);
        let mut resolved = self.clone();
        // the file lives in the output directory, so the path itself is omitted
        resolved.output_dir = None;
        if let Some(exp) = resolved.experiment.as_mut() {
            exp.model = exp.model.clone().resolved();
        }
        fs::write(&path, resolved.to_toml()?).map_err(|e| CliError::io(&path, e))
    }
}
