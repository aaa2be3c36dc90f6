//! The single TOML file that drives a pipeline run.
//!
//! Unknown keys are rejected at every level. Relative data paths are
//! resolved against the directory holding the config file.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneTrainConfig;
use crate::bias_head::HeadTrainConfig;
use crate::error::{Error, Result};
use crate::synth::SynthParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Base,
    Patientnode,
    #[default]
    Gatedbias,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Base, Method::Patientnode, Method::Gatedbias];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::Patientnode => "patientnode",
            Method::Gatedbias => "gatedbias",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected base, patientnode or gatedbias)")))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triples_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interactions_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping_path: Option<PathBuf>,
    /// Keep only the `universe_cap` most connected attributes per group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub universe_cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthParams>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "toml::Table")]
pub struct BackboneSection {
    /// Embedding file to load instead of training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load: Option<PathBuf>,
    #[serde(flatten)]
    pub train: BackboneTrainConfig,
}

impl TryFrom<toml::Table> for BackboneSection {
    type Error = String;

    fn try_from(mut table: toml::Table) -> std::result::Result<Self, String> {
        let load = match table.remove("load") {
            None => None,
            Some(toml::Value::String(p)) => Some(PathBuf::from(p)),
            Some(other) => return Err(format!("backbone.load must be a path string, found {}", other.type_str())),
        };
        let train = BackboneTrainConfig::deserialize(toml::Value::Table(table)).map_err(|e| e.to_string())?;
        Ok(Self { load, train })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    pub scale_alpha: f64,
    pub cap_tau: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            scale_alpha: 0.1,
            cap_tau: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub percentile_p: u32,
    pub epsilon: f64,
    pub n_shuffles: usize,
    pub seeds: Vec<u64>,
    /// Cutoff for Alignment@k and the placebo check.
    pub alignment_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 3, 10],
            percentile_p: 70,
            epsilon: 0.1,
            n_shuffles: 20,
            seeds: vec![0, 1, 2],
            alignment_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub method: Method,
    pub data: DataConfig,
    #[serde(default)]
    pub backbone: BackboneSection,
    #[serde(default)]
    pub profile: ProfileConfig,
    #[serde(default)]
    pub head: HeadTrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl PipelineConfig {
    /// Parses and validates; relative paths are joined onto `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(base) = base_dir {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = std::path::absolute(base).map_err(|e| Error::io(base, e))?;
        Self::from_toml_str(&text, Some(&base))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes to TOML")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.data.triples_dir);
        fix(&mut self.data.interactions_path);
        fix(&mut self.data.grouping_path);
        fix(&mut self.backbone.load);
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        let has_files = d.triples_dir.is_some() || d.interactions_path.is_some() || d.grouping_path.is_some();
        match (&d.synthetic, has_files) {
            (Some(_), true) => {
                return Err(Error::Config(
                    "[data] takes either file paths or a [data.synthetic] table, not both".into(),
                ))
            }
            (None, false) => {
                return Err(Error::Config(
                    "[data] needs triples_dir (plus interactions_path and grouping_path) or [data.synthetic]".into(),
                ))
            }
            (Some(s), false) => s.validate()?,
            (None, true) => {
                if d.triples_dir.is_none() {
                    return Err(Error::Config("[data] triples_dir is required".into()));
                }
            }
        }
        if d.universe_cap == Some(0) {
            return Err(Error::Config("universe_cap must be positive".into()));
        }
        self.backbone.train.validate()?;
        if !(self.profile.scale_alpha > 0.0 && self.profile.cap_tau > 0.0) {
            return Err(Error::Config("profile scale_alpha and cap_tau must be positive".into()));
        }
        self.head.validate()?;
        let e = &self.eval;
        if e.ks.is_empty() || e.ks.contains(&0) {
            return Err(Error::Config("eval ks must be a non-empty list of positive cutoffs".into()));
        }
        if !(1..=100).contains(&e.percentile_p) {
            return Err(Error::Config(format!("percentile_p {} outside 1..=100", e.percentile_p)));
        }
        if !(e.epsilon >= 0.0 && e.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon {} must be finite and non-negative", e.epsilon)));
        }
        if e.n_shuffles == 0 || e.alignment_k == 0 {
            return Err(Error::Config("n_shuffles and alignment_k must be positive".into()));
        }
        if e.seeds.is_empty() {
            return Err(Error::Config("eval seeds must not be empty".into()));
        }
        Ok(())
    }
}
