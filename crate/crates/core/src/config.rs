//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//!
//! [data]            # synthetic universe, see `UniverseConfig`
//! train_days = 60
//!
//! [agent]           # policy kind, grids and network sizes
//! kind = { kind = "halop", k = 3 }
//!
//! [ppo]
//! rounds = 120
//!
//! [eval]
//! schedule = "twap"
//! ```
//!
//! Every section and key is optional; missing ones take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::error::{Error, Result};
use crate::lob::UniverseConfig;
use crate::metrics::ScheduleKind;
use crate::trainer::PpoConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub schedule: ScheduleKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            schedule: ScheduleKind::Twap,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub data: UniverseConfig,
    pub agent: AgentConfig,
    pub ppo: PpoConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.agent.validate()?;
        self.ppo.validate()
    }
}
