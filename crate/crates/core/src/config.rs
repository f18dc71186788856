//! JSON run configuration. Every section is optional; unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bnn::{Architecture, TrainConfig};
use crate::error::{Error, Result};
use crate::harness::HarnessConfig;
use crate::meals::MealConfig;
use crate::mpc::MpcConfig;
use crate::sim::ParamBounds;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub sim: SimConfig,
    pub meals: MealConfig,
    pub bnn: BnnConfig,
    pub mpc: MpcConfig,
    pub harness: HarnessConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Integrator sub-step in hours; must divide one hour.
    pub dt_sub: f64,
    pub params: ParamBounds,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { dt_sub: 0.05, params: ParamBounds::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BnnConfig {
    pub hidden: usize,
    pub t_hist: usize,
    pub t_fut: usize,
    pub dropout: f64,
    pub train: TrainConfig,
    pub finetune: TrainConfig,
}

impl Default for BnnConfig {
    fn default() -> Self {
        BnnConfig {
            hidden: 64,
            t_hist: 72,
            t_fut: 72,
            dropout: 0.1,
            train: TrainConfig { lr: 0.1, max_epochs: 200, patience: 30, plateau_patience: 10, ..TrainConfig::default() },
            finetune: TrainConfig { lr: 0.1, max_epochs: 150, patience: 150, plateau_patience: 10, val_fraction: 0.0, ..TrainConfig::default() },
        }
    }
}

impl BnnConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture { hidden: self.hidden, t_hist: self.t_hist, t_fut: self.t_fut, dropout: self.dropout }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sim.dt_sub > 0.0) || (1.0 / self.sim.dt_sub - (1.0 / self.sim.dt_sub).round()).abs() > 1e-9 {
            return Err(Error::Config(format!("sim.dt_sub {} must divide one hour", self.sim.dt_sub)));
        }
        self.sim.params.validate()?;
        self.meals.validate()?;
        self.bnn.architecture().validate()?;
        self.bnn.train.validate()?;
        self.bnn.finetune.validate()?;
        self.mpc.validate()?;
        self.harness.validate()?;
        if self.mpc.horizon_hours() != self.bnn.t_fut {
            return Err(Error::Config(format!(
                "mpc.horizon_days * 24 = {} must equal bnn.t_fut = {}",
                self.mpc.horizon_hours(),
                self.bnn.t_fut
            )));
        }
        if self.harness.warmup_days * 24 < self.bnn.t_hist {
            return Err(Error::Config("harness.warmup_days must cover bnn.t_hist".into()));
        }
        Ok(())
    }
}
