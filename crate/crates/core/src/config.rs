//! End-to-end run configuration. Every field has a default, so `{}` is a
//! complete config: the simulation study with IPTW-LR and IPTW-SVR.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::AnalysisConfig;
use crate::error::{Error, Result};
use crate::outcome::{Family, Hyper, ModelSpec};
use crate::propensity::PropensityOptions;
use crate::sensitivity::ConfounderConfig;
use crate::simulate::SimConfig;
use crate::validation::{default_k_grid, DEFAULT_EXPOSURE};

/// One outcome model to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    /// Label used in reports; defaults to `iptw-<family>` or `<family>`.
    #[serde(default)]
    pub name: String,
    pub family: Family,
    #[serde(default)]
    pub hyper: Hyper,
    /// IPTW on. Off trains on every unit with unit weights.
    #[serde(default = "yes")]
    pub causal: bool,
}

fn yes() -> bool {
    true
}

impl ModelEntry {
    pub fn new(name: &str, family: Family, causal: bool) -> Self {
        ModelEntry {
            name: name.into(),
            family,
            hyper: Hyper::default(),
            causal,
        }
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            family: self.family,
            hyper: self.hyper.clone(),
        }
    }
}

/// External observational data instead of a simulated cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub path: PathBuf,
    /// JSON schema sidecar; defaults to columns `a`, `y` and all others as
    /// covariates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivitySettings {
    pub placebo: bool,
    pub bootstrap: usize,
    pub confounding: bool,
    pub configs: Vec<ConfounderConfig>,
    /// Runs per confounder configuration.
    pub runs: usize,
}

impl Default for SensitivitySettings {
    fn default() -> Self {
        SensitivitySettings {
            placebo: true,
            bootstrap: 200,
            confounding: true,
            configs: ConfounderConfig::defaults(),
            runs: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSettings {
    pub enabled: bool,
    pub exposure: f64,
    /// Percentages for the high/low splits.
    pub k_grid: Vec<f64>,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        ValidationSettings {
            enabled: true,
            exposure: DEFAULT_EXPOSURE,
            k_grid: default_k_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every seed in the run. Replaces `sim.seed`.
    pub master_seed: u64,
    pub sim: SimConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
    pub models: Vec<ModelEntry>,
    pub trim_lo: f64,
    pub trim_hi: f64,
    pub levels: usize,
    pub balance_threshold: f64,
    pub propensity: PropensityOptions,
    pub sensitivity: SensitivitySettings,
    pub validation: ValidationSettings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            master_seed: 0,
            sim: SimConfig::default(),
            data: None,
            models: vec![
                ModelEntry::new("iptw-lr", Family::LinearWls, true),
                ModelEntry::new("iptw-svr", Family::SvrLinear, true),
            ],
            trim_lo: 0.01,
            trim_hi: 0.99,
            levels: 4,
            balance_threshold: 0.2,
            propensity: PropensityOptions::default(),
            sensitivity: SensitivitySettings::default(),
            validation: ValidationSettings::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    /// Parses JSON. Unknown fields are errors.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fills derived fields: model names, `sim.seed`.
    pub fn resolved(mut self) -> Self {
        self.sim.seed = self.master_seed;
        for m in &mut self.models {
            if m.name.is_empty() {
                m.name = if m.causal {
                    format!("iptw-{}", m.family.name())
                } else {
                    m.family.name().to_string()
                };
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.models.is_empty() {
            return cfg("at least one model is required".into());
        }
        let mut names: Vec<&str> = self.models.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1] && !w[0].is_empty()) {
            return cfg("model names must be unique".into());
        }
        for m in &self.models {
            m.spec().validate().map_err(|e| Error::Config(format!("model `{}`: {e}", m.name)))?;
        }
        if !(0.0 <= self.trim_lo && self.trim_lo < self.trim_hi && self.trim_hi <= 1.0) {
            return cfg(format!("need 0 <= trim_lo < trim_hi <= 1, got {} and {}", self.trim_lo, self.trim_hi));
        }
        if self.levels == 0 {
            return cfg("levels must be at least 1".into());
        }
        if !(self.balance_threshold >= 0.0 && self.balance_threshold.is_finite()) {
            return cfg("balance_threshold must be >= 0".into());
        }
        if self.sensitivity.confounding && self.sensitivity.runs == 0 {
            return cfg("sensitivity.runs must be at least 1".into());
        }
        for c in &self.sensitivity.configs {
            c.validate().map_err(|e| Error::Config(format!("sensitivity: {e}")))?;
        }
        let v = &self.validation;
        if !(v.exposure > 0.0 && v.exposure < 1.0) {
            return cfg(format!("validation.exposure must be in (0, 1), got {}", v.exposure));
        }
        if let Some(k) = v.k_grid.iter().find(|&&k| !(k > 0.0 && k < 100.0)) {
            return cfg(format!("k_grid entries must be in (0, 100), got {k}"));
        }
        match &self.data {
            Some(src) => {
                for p in std::iter::once(&src.path).chain(src.schema.as_ref()) {
                    if !p.exists() {
                        return cfg(format!("{}: file not found", p.display()));
                    }
                }
            }
            None => self.sim.validate().map_err(|e| Error::Config(format!("sim: {e}")))?,
        }
        Ok(())
    }

    /// Per-model analysis settings. Every model shares the master seed.
    pub fn analysis(&self, m: &ModelEntry) -> AnalysisConfig {
        AnalysisConfig {
            model: m.spec(),
            causal: m.causal,
            propensity: self.propensity,
            trim_lo: self.trim_lo,
            trim_hi: self.trim_hi,
            levels: self.levels,
            seed: self.master_seed,
        }
    }

    /// Lowercase hex SHA-256 of the canonical JSON of this config, without
    /// `output_dir`: where results go does not change them.
    pub fn hash(&self) -> String {
        let keyed = RunConfig {
            output_dir: None,
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&keyed).expect("config serializes");
        hex_digest(&bytes)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
