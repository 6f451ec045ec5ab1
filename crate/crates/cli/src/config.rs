//! The TOML configuration file. Every section is optional; missing keys
//! take their defaults and unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use echores::echo::SynthConfig;
use echores::laec::FdkfConfig;
use echores::model::ModelConfig;
use echores::train::TrainConfig;

use crate::fail::{CliError, Kind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// Master seed for synthesis, model initialization and training order.
    pub seed: u64,
    pub synth: SynthConfig,
    pub fdkf: FdkfConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Seconds excluded from the start of each item when computing ERLE.
    pub erle_skip_secs: f64,
    /// Any of `laec`, `model`, `pass-through`, `oracle-mask`.
    pub systems: Vec<String>,
    /// Share of double-talk items held out for validation during training.
    pub val_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            erle_skip_secs: 2.0,
            systems: vec!["laec".into(), "model".into()],
            val_fraction: 0.1,
        }
    }
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthConfig::default(),
            fdkf: FdkfConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl CliConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::new(Kind::Config, format!("{origin}: {e}")))
    }

    /// Parses a config file. The flag is set when the file has a `[model]`
    /// section.
    pub fn load(path: &Path) -> Result<(Self, bool), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg = Self::parse(&text, &path.display().to_string())?;
        let pinned = text
            .parse::<toml::Table>()
            .is_ok_and(|t| t.contains_key("model"));
        Ok((cfg, pinned))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.synth.validate()?;
        self.fdkf.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if !(self.eval.erle_skip_secs >= 0.0) {
            return Err(CliError::new(Kind::Config, "eval.erle_skip_secs must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.eval.val_fraction) {
            return Err(CliError::new(Kind::Config, "eval.val_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}
