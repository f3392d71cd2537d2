use serde::{Deserialize, Serialize};
use thiserror::Error;

use mutraj_core::artifact::sha256_hex;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid model config: {0}")]
    Model(String),
    #[error("invalid train config: {0}")]
    Train(String),
}

/// Reference sizes of the full-scale model; informational only.
pub const FULL_SCALE_LAYERS: usize = 12;
pub const FULL_SCALE_HIDDEN: usize = 512;
pub const FULL_SCALE_HEADS: usize = 8;
pub const FULL_SCALE_MAX_SEQ: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub max_seq: usize,
    pub vocab: usize,
    pub rope_base: f64,
    /// Standard deviation of the normal initialisation of weight matrices.
    pub init_std: f64,
}

impl ModelConfig {
    pub fn desk(vocab: usize) -> Self {
        Self { layers: 2, hidden: 64, heads: 4, max_seq: 256, vocab, rope_base: 10_000.0, init_std: 0.02 }
    }

    pub fn full_scale(vocab: usize) -> Self {
        Self {
            layers: FULL_SCALE_LAYERS,
            hidden: FULL_SCALE_HIDDEN,
            heads: FULL_SCALE_HEADS,
            max_seq: FULL_SCALE_MAX_SEQ,
            ..Self::desk(vocab)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn ffn(&self) -> usize {
        4 * self.hidden
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Model(m.into()));
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 || self.max_seq == 0 || self.vocab == 0 {
            return bad("all sizes must be positive");
        }
        if self.hidden % self.heads != 0 {
            return bad("hidden must be divisible by heads");
        }
        if self.head_dim() % 2 != 0 {
            return bad("head dimension must be even for rotary embeddings");
        }
        if !(self.rope_base > 1.0 && self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad("rope_base must exceed 1 and init_std must be positive");
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("serializable").as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Linear,
    Cosine,
}

impl std::str::FromStr for LrSchedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(LrSchedule::Linear),
            "cosine" => Ok(LrSchedule::Cosine),
            _ => Err(format!("unknown schedule {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Initialisation seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 16,
            lr_start: 1e-4,
            lr_end: 1e-5,
            schedule: LrSchedule::Linear,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Train(m.into()));
        if self.steps == 0 || self.batch_size == 0 {
            return bad("steps and batch_size must be positive");
        }
        if !(self.lr_end > 0.0 && self.lr_end < self.lr_start && self.lr_start.is_finite()) {
            return bad("need 0 < lr_end < lr_start");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return bad("betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }

    /// Learning rate at `step` (0-based), reaching `lr_end` at the last step.
    pub fn lr_at(&self, step: u64) -> f64 {
        let frac = if self.steps <= 1 { 1.0 } else { (step.min(self.steps - 1)) as f64 / (self.steps - 1) as f64 };
        match self.schedule {
            LrSchedule::Linear => self.lr_start + (self.lr_end - self.lr_start) * frac,
            LrSchedule::Cosine => {
                self.lr_end + (self.lr_start - self.lr_end) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_defaults() {
        let c = ModelConfig::desk(100);
        assert_eq!((c.layers, c.hidden, c.heads, c.max_seq), (2, 64, 4, 256));
        assert!(c.validate().is_ok());
        let p = ModelConfig::full_scale(150_210);
        assert_eq!((p.layers, p.hidden, p.heads, p.max_seq), (12, 512, 8, 2048));
        assert!(ModelConfig { heads: 3, ..c.clone() }.validate().is_err());
        assert!(ModelConfig { heads: 64, ..c.clone() }.validate().is_err());
        assert_ne!(c.hash(), ModelConfig { vocab: 101, ..c }.hash());
    }

    #[test]
    fn schedule_endpoints() {
        for schedule in [LrSchedule::Linear, LrSchedule::Cosine] {
            let t = TrainConfig { steps: 50, schedule, ..Default::default() };
            assert_eq!(t.lr_at(0), 1e-4);
            assert!((t.lr_at(49) - 1e-5).abs() < 1e-18);
            assert!((1..49).all(|s| t.lr_at(s) <= t.lr_at(s - 1)));
        }
        assert!(TrainConfig { lr_end: 1e-3, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { beta2: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
