use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// Which parts of the objective are active. All on is the full method; all
/// off is plain fine-tuning with cross-entropy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Components {
    pub replay: bool,
    pub l1: bool,
    pub l2: bool,
    pub lu: bool,
}

impl Components {
    pub const ALL: Components = Components {
        replay: true,
        l1: true,
        l2: true,
        lu: true,
    };
    pub const NONE: Components = Components {
        replay: false,
        l1: false,
        l2: false,
        lu: false,
    };
}

impl Default for Components {
    fn default() -> Self {
        Self::ALL
    }
}

/// Training hyperparameters. Field names double as the config-file keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub tau: f64,
    pub bank_budget: usize,
    /// New generators per incremental task.
    #[serde(rename = "L")]
    pub task_size: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub seed: u64,
    pub components: Components,
    /// Re-select tau on the calibration split after every task.
    pub calibrate_tau: bool,
    pub tau_grid: Vec<f64>,
    /// Latest-released generators withheld when the manifest marks none.
    pub unseen_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 4,
            batch_size: 512,
            alpha1: 0.2,
            alpha2: 0.5,
            alpha3: 0.5,
            alpha4: 1.0,
            tau: 0.65,
            bank_budget: 150,
            task_size: 4,
            hidden_dim: 512,
            latent_dim: 256,
            seed: 0,
            components: Components::ALL,
            calibrate_tau: false,
            tau_grid: default_tau_grid(),
            unseen_count: 2,
        }
    }
}

pub fn default_tau_grid() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Parses `start:stop:step` (inclusive of `stop` up to rounding).
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("bad grid `{spec}`: {e}")))?;
    match nums.as_slice() {
        [v] => Ok(vec![*v]),
        [start, stop, step] if *step > 0.0 && stop >= start => {
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| start + step * i as f64).collect())
        }
        _ => Err(Error::Config(format!("grid `{spec}` must be `v` or `start:stop:step`"))),
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.raw_weights().validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.task_size == 0 || self.bank_budget == 0 {
            return Err(Error::Config("epochs, batch_size, L and bank_budget must be positive".into()));
        }
        if self.hidden_dim == 0 || self.latent_dim == 0 {
            return Err(Error::Config("hidden_dim and latent_dim must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.tau_grid.is_empty() {
            return Err(Error::Config("tau_grid is empty".into()));
        }
        Ok(())
    }

    pub fn raw_weights(&self) -> LossWeights {
        LossWeights {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            alpha3: self.alpha3,
            alpha4: self.alpha4,
        }
    }

    /// Weights with disabled components zeroed.
    pub fn effective_weights(&self) -> LossWeights {
        let c = self.components;
        let on = |b: bool, v: f64| if b { v } else { 0.0 };
        LossWeights {
            alpha1: on(c.l1, self.alpha1),
            alpha2: on(c.l2, self.alpha2),
            alpha3: on(c.lu, self.alpha3),
            alpha4: on(c.replay, self.alpha4),
        }
    }
}
