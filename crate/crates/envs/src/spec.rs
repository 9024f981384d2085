//! Named presets and TOML environment files.
//!
//! ```toml
//! kind = "bss"          # "ers", "bss" or "bandit"
//! n_bikes = 40
//! ...                   # remaining fields of the matching config
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bandit::{BanditConfig, BanditEnv};
use crate::bss::{BssConfig, BssEnv};
use crate::error::{EnvError, Result};
use crate::ers::{ErsConfig, ErsEnv};
use crate::Environment;

pub const PRESETS: [&str; 4] = ["ers-toy", "ers-toy-poisson", "bss-toy", "bandit-toy"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvSpec {
    Ers(ErsConfig),
    Bss(BssConfig),
    Bandit(BanditConfig),
}

impl EnvSpec {
    /// `ers-toy` has demand surges, `ers-toy-poisson` does not.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "ers-toy" => Some(EnvSpec::Ers(ErsConfig::toy(true))),
            "ers-toy-poisson" => Some(EnvSpec::Ers(ErsConfig::toy(false))),
            "bss-toy" => Some(EnvSpec::Bss(BssConfig::toy())),
            "bandit-toy" => Some(EnvSpec::Bandit(BanditConfig::toy())),
            _ => None,
        }
    }

    /// Environment family: `"ers"`, `"bss"` or `"bandit"`.
    pub fn kind(&self) -> &'static str {
        match self {
            EnvSpec::Ers(_) => "ers",
            EnvSpec::Bss(_) => "bss",
            EnvSpec::Bandit(_) => "bandit",
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| EnvError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EnvError::Config(format!("{}: {e}", path.display())))?;
        EnvSpec::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("environment configs serialize")
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvSpec::Ers(c) => Box::new(ErsEnv::new(c.clone())?),
            EnvSpec::Bss(c) => Box::new(BssEnv::new(c.clone())?),
            EnvSpec::Bandit(c) => Box::new(BanditEnv::new(c.clone())?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for name in PRESETS {
            let spec = EnvSpec::preset(name).unwrap();
            let back = EnvSpec::from_toml(&spec.to_toml()).unwrap();
            assert_eq!(spec, back, "{name}");
            back.build().unwrap();
        }
        assert!(EnvSpec::preset("nope").is_none());
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut text = EnvSpec::preset("bandit-toy").unwrap().to_toml();
        text.push_str("\nbogus = 1\n");
        assert!(EnvSpec::from_toml(&text).is_err());
    }
}
