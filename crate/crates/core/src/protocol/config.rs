use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::DEFAULT_SIGMA;
use crate::gini::DEFAULT_BINS;
use crate::nn::{Activation, OptimizerKind};
use crate::phe::{DEFAULT_KEY_BITS, DEFAULT_SCALE_BITS, MIN_KEY_BITS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateInit {
    Gini,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub size: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub const fn new(size: usize, activation: Activation) -> Self {
        LayerSpec { size, activation }
    }
}

/// Hyperparameters shared by the secure and plaintext trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Gate noise scale, shared by feature and embedding gates.
    pub sigma: f64,
    pub lambda: f64,
    /// Server rate for the interactive weights (plain SGD) and `alpha0`.
    pub lr_server: f64,
    /// Client rate for the bottom model and both gate vectors.
    pub lr_client: f64,
    /// Optimizer for `alpha0`, bottom models and gate means.
    pub optimizer: OptimizerKind,
    /// Monte-Carlo gate samples per round.
    pub mc_samples: usize,
    pub batch_size: usize,
    pub max_rounds: u64,
    pub mask_sigma: f64,
    pub key_bits: u64,
    pub scale_bits: u32,
    /// Required for keys under the default size.
    pub insecure_test_mode: bool,
    pub init: GateInit,
    /// Feature-gate mean under constant initialization.
    pub constant_mu: f64,
    /// Initial embedding-gate mean.
    pub omega_init: f64,
    pub mu_range: (f64, f64),
    pub gini_bins: usize,
    /// Interactive weights start uniform on this range.
    pub w_init: (f64, f64),
    pub bottom: Vec<LayerSpec>,
    pub top_hidden: Vec<LayerSpec>,
    pub pin_feature_gates: bool,
    pub pin_embedding_gates: bool,
    pub threshold: f64,
    /// Early stopping on held-out loss: rounds without improvement.
    pub patience: Option<u64>,
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            sigma: DEFAULT_SIGMA,
            lambda: 0.1,
            lr_server: 0.03,
            lr_client: 0.03,
            optimizer: OptimizerKind::Adam,
            mc_samples: 1,
            batch_size: 32,
            max_rounds: 500,
            mask_sigma: 1.0,
            key_bits: DEFAULT_KEY_BITS,
            scale_bits: DEFAULT_SCALE_BITS,
            insecure_test_mode: false,
            init: GateInit::Gini,
            constant_mu: 0.5,
            omega_init: 0.5,
            mu_range: (0.0, 0.5),
            gini_bins: DEFAULT_BINS,
            w_init: (0.5, 1.5),
            bottom: vec![LayerSpec::new(32, Activation::Relu), LayerSpec::new(8, Activation::Linear)],
            top_hidden: vec![LayerSpec::new(16, Activation::Relu)],
            pin_feature_gates: false,
            pin_embedding_gates: false,
            threshold: crate::gates::DEFAULT_THRESHOLD,
            patience: None,
            eval_every: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("sigma", self.sigma)?;
        positive("lr_server", self.lr_server)?;
        positive("lr_client", self.lr_client)?;
        positive("mask_sigma", self.mask_sigma)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.key_bits < MIN_KEY_BITS {
            return Err(Error::Config(format!("key_bits must be at least {MIN_KEY_BITS}")));
        }
        if self.key_bits < DEFAULT_KEY_BITS && !self.insecure_test_mode {
            return Err(Error::Config(format!(
                "{}-bit keys need insecure_test_mode = true",
                self.key_bits
            )));
        }
        if self.mu_range.0 >= self.mu_range.1 {
            return Err(Error::Config("mu_range must be increasing".into()));
        }
        if self.w_init.0 > self.w_init.1 {
            return Err(Error::Config("w_init must be increasing".into()));
        }
        if self.bottom.is_empty() || self.bottom.iter().chain(&self.top_hidden).any(|l| l.size == 0) {
            return Err(Error::Config("layer sizes must be positive and the bottom model non-empty".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        self.bottom.last().map_or(0, |l| l.size)
    }

    pub fn bottom_sizes(&self) -> Vec<(usize, Activation)> {
        self.bottom.iter().map(|l| (l.size, l.activation)).collect()
    }

    pub fn top_sizes(&self) -> Vec<(usize, Activation)> {
        self.top_hidden.iter().map(|l| (l.size, l.activation)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_small_keys_need_opt_in() {
        TrainConfig::default().validate().unwrap();
        let mut c = TrainConfig {
            key_bits: 512,
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.insecure_test_mode = true;
        c.validate().unwrap();
        c.key_bits = 256;
        assert!(c.validate().is_err());
        assert!(TrainConfig {
            mc_samples: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }
}
