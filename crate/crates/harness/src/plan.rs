//! Experiment plans: which models and methods to run, how often, and with
//! which settings. Plans are JSON; see the README for the schema.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use trustvi::baselines::{AdviConfig, NewtonBaselineConfig};
use trustvi::optimizer::OptimizerConfig;
use trustvi::zoo;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Trustvi,
    Advi,
    Hfsgvi,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Trustvi, Method::Advi, Method::Hfsgvi];

    pub fn name(self) -> &'static str {
        match self {
            Method::Trustvi => "trustvi",
            Method::Advi => "advi",
            Method::Hfsgvi => "hfsgvi",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| anyhow::anyhow!("unknown method `{s}` (expected trustvi, advi or hfsgvi)"))
    }
}

/// A full experiment. `budget` and the per-run seed override the fields of
/// the same name inside the method configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub models: Vec<String>,
    pub methods: Vec<Method>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    pub budget: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub trustvi: OptimizerConfig,
    #[serde(default)]
    pub advi: AdviConfig,
    #[serde(default)]
    pub hfsgvi: NewtonBaselineConfig,
}

fn default_repetitions() -> usize {
    5
}

impl ExperimentPlan {
    pub fn new(models: &[&str], methods: &[Method], budget: u64) -> Self {
        Self {
            models: models.iter().map(|s| s.to_string()).collect(),
            methods: methods.to_vec(),
            repetitions: default_repetitions(),
            budget,
            master_seed: 0,
            out_dir: None,
            trustvi: OptimizerConfig::default(),
            advi: AdviConfig::default(),
            hfsgvi: NewtonBaselineConfig::default(),
        }
    }

    /// Parse JSON, reporting the field path and position of the first error.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let plan: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            anyhow::anyhow!("line {}, column {}, at `{}`: {}", inner.line(), inner.column(), e.path(), inner)
        })?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading plan {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("invalid plan {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            bail!("plan lists no models");
        }
        if self.methods.is_empty() {
            bail!("plan lists no methods");
        }
        if self.repetitions == 0 || self.repetitions % 2 == 0 {
            bail!("repetitions = {} must be odd so the median run is defined", self.repetitions);
        }
        if self.budget == 0 {
            bail!("budget must be positive");
        }
        for m in &self.models {
            if !zoo::REGISTRY.contains(&m.as_str()) {
                bail!("unknown model `{m}`; run `list-models` for the registry");
            }
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            bail!("a method is listed twice");
        }
        self.trustvi.validate().context("trustvi settings")?;
        self.advi.validate().context("advi settings")?;
        self.hfsgvi.validate().context("hfsgvi settings")?;
        Ok(())
    }
}
