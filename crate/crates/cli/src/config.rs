//! Experiment configuration file.
//!
//! One TOML file drives every subcommand. Each section is optional and
//! every missing key falls back to its default; unknown keys are rejected.

use std::path::Path;

use fairinject::attack::AttackConfig;
use fairinject::eval::VictimConfig;
use fairinject::model::ModelKind;
use fairinject::synth::SbmConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Synthetic graph for `generate`.
    pub data: SbmConfig,
    pub attack: AttackConfig,
    pub victim: VictimConfig,
    pub evaluate: EvaluateSection,
    pub defense: DefenseSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub victim: ModelKind,
    pub seeds: Vec<u64>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            victim: ModelKind::Gcn2,
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseSection {
    /// Fractions of training nodes to drop, most uncertain first.
    pub etas: Vec<f64>,
}

impl Default for DefenseSection {
    fn default() -> Self {
        DefenseSection {
            etas: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text).map_err(|(field, message)| CliError::Config {
            path: path.display().to_string(),
            field,
            message,
        })
    }

    /// Parses and validates; errors carry the dotted path of the bad field.
    pub fn parse(text: &str) -> Result<Self, (String, String)> {
        let de = toml::Deserializer::parse(text).map_err(|e| (String::new(), e.to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            (field, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), (String, String)> {
        fn prefixed(section: &str, e: fairinject::Error) -> (String, String) {
            match e {
                fairinject::Error::InvalidParameter { name, reason } => {
                    (format!("{section}.{name}"), reason)
                }
                other => (section.to_string(), other.to_string()),
            }
        }
        self.data.validate().map_err(|e| prefixed("data", e))?;
        self.attack.validate().map_err(|e| prefixed("attack", e))?;
        if self.victim.hidden == 0 || self.victim.lr.is_nan() || self.victim.lr <= 0.0 {
            return Err(("victim".into(), "hidden and lr must be positive".into()));
        }
        if self.evaluate.seeds.is_empty() {
            return Err(("evaluate.seeds".into(), "need at least one seed".into()));
        }
        if let Some(bad) = self.defense.etas.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(("defense.etas".into(), format!("{bad} not in [0, 1]")));
        }
        Ok(())
    }
}
