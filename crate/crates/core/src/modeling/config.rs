use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transformer shape shared by the classifier and the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_positions: usize,
}

impl ArchConfig {
    /// 2 layers, width 64, 4 heads.
    pub fn small() -> Self {
        ArchConfig {
            layers: 2,
            d_model: 64,
            heads: 4,
            d_ff: 256,
            max_positions: 64,
        }
    }

    /// 4 layers, width 128, 4 heads.
    pub fn large() -> Self {
        ArchConfig {
            layers: 4,
            d_model: 128,
            heads: 4,
            d_ff: 512,
            max_positions: 64,
        }
    }

    /// Two-layer width-16 model used by gradient checks.
    pub fn tiny() -> Self {
        ArchConfig {
            layers: 2,
            d_model: 16,
            heads: 2,
            d_ff: 32,
            max_positions: 32,
        }
    }

    /// `factor` times the layers and width of `self`.
    pub fn scaled(&self, factor: usize) -> Self {
        ArchConfig {
            layers: self.layers * factor,
            d_model: self.d_model * factor,
            heads: self.heads,
            d_ff: self.d_ff * factor,
            max_positions: self.max_positions,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d_model == 0 || self.heads == 0 || self.d_ff == 0 || self.max_positions < 2 {
            return Err(Error::Config(format!("architecture sizes must be positive: {self:?}")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(arch: ArchConfig, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            arch,
            batch_size: 8,
            learning_rate: 5e-4,
            weight_decay: 0.01,
            epochs,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config(format!("bad training hyperparameters: {self:?}")));
        }
        Ok(())
    }
}
