//! Run configuration, read from a sectioned TOML file.
//!
//! ```toml
//! [market]
//! d = 3
//! sigma = 0.5
//! k = 0.9
//! mu = 0.0
//! s0 = 1.0
//! strike = 1.0
//! steps = 10
//! payoff = "max_call"
//!
//! [rights]
//! n = 2
//! delta = 2
//!
//! [training]
//! total_paths = 200000
//! batch_size = 1000
//! buffer_capacity = 200000
//!
//! [evaluation]
//! m_l = 20000
//! m_u = 50
//! j_inner = 1000
//!
//! [seeds]
//! train = 1
//! eval = 2
//!
//! [output]
//! checkpoint = "out/d3_n2.qnet"
//! report = "out/d3_n2.json"
//! ```
//!
//! Omitted training hyperparameters take their documented defaults, hidden
//! layers default to 3 x 32 (3 x 90 above ten assets) and `alpha` to 0.05.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::EvalSettings;
use crate::market::MarketModel;
use crate::qlearn::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rights {
    pub n: usize,
    pub delta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub train: u64,
    pub eval: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub checkpoint: PathBuf,
    pub report: PathBuf,
    /// Loss trace CSV; defaults to the checkpoint path with `.loss.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_csv: Option<PathBuf>,
}

impl Outputs {
    pub fn loss_csv(&self) -> PathBuf {
        self.loss_csv.clone().unwrap_or_else(|| sibling(&self.checkpoint, "loss.csv"))
    }

    /// Where the config used for a report is echoed.
    pub fn config_echo(&self) -> PathBuf {
        sibling(&self.report, "config.toml")
    }
}

/// `dir/name.ext` -> `dir/name.ext.suffix`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketModel,
    pub rights: Rights,
    pub training: TrainConfig,
    pub evaluation: EvalSettings,
    pub seeds: Seeds,
    pub output: Outputs,
}

impl RunConfig {
    /// Parses, fills defaults and validates.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.training.hidden.is_empty() {
            cfg.training.hidden = TrainConfig::default_hidden(cfg.market.d);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        if self.rights.n == 0 || self.rights.delta == 0 {
            return Err(Error::Config("rights: n and delta must be >= 1".into()));
        }
        self.training.validate()?;
        self.evaluation.validate()?;
        if self.seeds.train == self.seeds.eval {
            return Err(Error::Config("seeds: eval must differ from train".into()));
        }
        Ok(())
    }

    /// `--seed s`: train with `s`, evaluate with `s + 1`.
    pub fn override_seed(&mut self, seed: u64) {
        self.seeds = Seeds { train: seed, eval: seed.wrapping_add(1) };
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
