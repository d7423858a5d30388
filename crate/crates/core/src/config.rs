//! Run configuration documents (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::Modulation;
use crate::error::{Error, Result};
use crate::models::Scheme;
use crate::training::TrainConfig;

/// Trade-off weights swept when a configuration lists none.
pub const DEFAULT_LAMBDAS: [f64; 8] = [0.01, 0.05, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineGrid {
    pub snr_db: Vec<f64>,
    pub rates: Vec<f64>,
    pub modulations: Vec<Modulation>,
}

impl Default for BaselineGrid {
    fn default() -> Self {
        BaselineGrid {
            snr_db: vec![3.0, 13.0],
            rates: vec![0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 50.0],
            modulations: vec![Modulation::Bpsk, Modulation::Pam4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Schemes trained by a sweep.
    pub schemes: Vec<Scheme>,
    pub lambdas: Vec<f64>,
    /// Held-out samples per evaluation.
    pub n_test: usize,
    pub output_dir: PathBuf,
    pub baselines: BaselineGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            schemes: Scheme::ALL.to_vec(),
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            n_test: 100_000,
            output_dir: PathBuf::from("runs"),
            baselines: BaselineGrid::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.schemes.is_empty() {
            return Err(Error::Config("`schemes` must not be empty".into()));
        }
        if self.lambdas.is_empty() {
            return Err(Error::Config("`lambdas` must not be empty".into()));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("`lambdas` entries must be positive, got {l}")));
        }
        if self.n_test == 0 {
            return Err(Error::Config("`n_test` must be positive".into()));
        }
        let b = &self.baselines;
        if let Some(r) = b.rates.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
            return Err(Error::Config(format!("baseline rates must be non-negative, got {r}")));
        }
        if b.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("baseline SNRs must be finite".into()));
        }
        Ok(())
    }
}
