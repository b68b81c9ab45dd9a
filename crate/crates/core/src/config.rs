//! Pipeline configuration: one sectioned TOML file covering every stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codelm::CharLmConfig;
use crate::error::{Error, Result};
use crate::gridcnn::GridConfig;
use crate::pairgen::{PairGenConfig, SplitSpec};
use crate::siamese::SiameseConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodeprepConfig {
    pub min_freq: usize,
}

impl Default for CodeprepConfig {
    fn default() -> Self {
        CodeprepConfig { min_freq: 5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Master seed; commands that draw random numbers refuse to run without it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub codeprep: CodeprepConfig,
    pub pairgen: PairGenConfig,
    pub codelm: CharLmConfig,
    pub siamese: SiameseConfig,
    pub gridcnn: GridConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Config::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.codeprep.min_freq == 0 {
            return Err(Error::Config("codeprep min_freq must be >= 1".into()));
        }
        SplitSpec::new(self.pairgen.ratios, 0).map_err(|e| Error::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.pairgen.tag_jaccard_min) {
            return Err(Error::Config("pairgen tag_jaccard_min must lie in [0, 1]".into()));
        }
        self.codelm.validate()?;
        self.siamese.validate()?;
        self.gridcnn.validate()
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("`seed` is required for this command".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = Config::parse("seed = 9\n[siamese]\nepochs = 2\n[gridcnn]\nside = 32\nbudgets = [8, 16, 8]\n").unwrap();
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.siamese.epochs, 2);
        assert_eq!(c.siamese.word_dim, 64);
        assert_eq!(c.gridcnn.side, 32);
        assert_eq!(c.codeprep.min_freq, 5);
        assert_eq!(c.pairgen.ratios, [0.8, 0.1, 0.1]);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["sed = 1", "[siamese]\nepoch = 3", "[nope]\nx = 1"] {
            assert!(Config::parse(text).unwrap_err().is_config(), "{text}");
        }
    }

    #[test]
    fn seed_required() {
        let c = Config::parse("").unwrap();
        assert!(c.require_seed().unwrap_err().is_config());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::parse("[pairgen]\nratios = [0.5, 0.5, 0.5]").is_err());
        assert!(Config::parse("[codeprep]\nmin_freq = 0").is_err());
    }

    #[test]
    fn roundtrip() {
        let mut c = Config::parse("seed = 3\n[codelm]\nhidden_dim = 17\n").unwrap();
        c.gridcnn.mlp_hidden = vec![5, 3];
        let text = c.to_toml().unwrap();
        let back = Config::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml().unwrap(), text);
    }
}
