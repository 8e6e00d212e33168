use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::gcn::CompositionOp;

/// All model and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    /// Number of entity groups.
    pub n_groups: usize,
    /// Length of the historical window.
    pub window: usize,
    /// Number of hierarchical layers.
    pub n_layers: usize,
    /// Representation width.
    pub dim: usize,
    /// GRU hidden width (the decoder consumes these states).
    pub gru_hidden: usize,
    pub batch_size: usize,
    /// Learning rate for everything except the mapping logits.
    pub lr_default: f64,
    /// Learning rate for the mapping logits.
    pub lr_mapper: f64,
    /// Early stopping: epochs without validation improvement.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// When false, the group pathway is skipped and only the entity
    /// convolution runs (single-graph ablation).
    pub group_pathway: bool,
    /// Filter a sample's other true labels out of the candidate set when
    /// ranking.
    pub filtered_eval: bool,
    pub decoder_channels: usize,
    pub decoder_kernel_width: usize,
    /// Kernel width of the correlation-intensity convolution.
    pub corr_kernel_width: usize,
    /// Depth of the correlation transform stacks.
    pub mlp_depth: usize,
    pub composition: CompositionOp,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            n_groups: 16,
            window: 7,
            n_layers: 2,
            dim: 100,
            gru_hidden: 100,
            batch_size: 16,
            lr_default: 0.001,
            lr_mapper: 0.05,
            patience: 3,
            max_epochs: 30,
            seed: 1,
            group_pathway: true,
            filtered_eval: false,
            decoder_channels: 50,
            decoder_kernel_width: 3,
            corr_kernel_width: 3,
            mlp_depth: 1,
            composition: CompositionOp::Subtract,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_groups", self.n_groups),
            ("window", self.window),
            ("n_layers", self.n_layers),
            ("dim", self.dim),
            ("gru_hidden", self.gru_hidden),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("decoder_channels", self.decoder_channels),
            ("mlp_depth", self.mlp_depth),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::invalid("config", format!("{name} must be at least 1")));
            }
        }
        if self.lr_default <= 0.0 || self.lr_mapper <= 0.0 {
            return Err(Error::invalid("config", "learning rates must be positive"));
        }
        if self.gru_hidden != self.dim {
            return Err(Error::invalid(
                "config",
                "gru_hidden must equal dim: the convolution outputs feed the GRU directly",
            ));
        }
        if self.decoder_kernel_width % 2 == 0 || self.corr_kernel_width % 2 == 0 {
            return Err(Error::invalid("config", "kernel widths must be odd"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn zero_counts_are_rejected() {
        let mut cfg = Config::default();
        cfg.n_groups = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn negative_learning_rate_is_rejected() {
        let mut cfg = Config::default();
        cfg.lr_default = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = Config {
            dim: 32,
            gru_hidden: 32,
            seed: 99,
            composition: CompositionOp::Multiply,
            ..Config::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        let back: Config = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
