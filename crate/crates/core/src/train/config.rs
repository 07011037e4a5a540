use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PostPretrain,
    Train,
    LabelFreeUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the contrastive term.
    pub lambda: f64,
    pub lr_encoder: f64,
    /// Learning rate of GCN and classifier weights.
    pub lr_gcn: f64,
    /// Encoder learning rate during post-pretraining.
    pub lr_post_pretrain: f64,
    pub epochs: usize,
    pub stage1_epochs: usize,
    pub update_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dim: usize,
    pub layers: usize,
    pub max_len: usize,
    /// Early-stopping patience in epochs, on validation accuracy.
    pub patience: usize,
    pub val_fraction: f64,
    /// Run the GCN on the `layers`-hop neighbourhood of each batch only.
    pub project_hops: bool,
    pub stage: Stage,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.03,
            lr_encoder: 1e-5,
            lr_gcn: 5e-4,
            lr_post_pretrain: 1e-4,
            epochs: 30,
            stage1_epochs: 3,
            update_epochs: 3,
            batch_size: 64,
            seed: 0,
            dim: 64,
            layers: crate::gcn::DEFAULT_LAYERS,
            max_len: crate::vocab::DEFAULT_MAX_LEN,
            patience: 5,
            val_fraction: 0.1,
            project_hops: false,
            stage: Stage::Train,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return bad("lambda must be finite and non-negative");
        }
        if self.layers == 0 || self.dim == 0 || self.max_len == 0 {
            return bad("layers, dim and max_len must be positive");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must be in [0, 1)");
        }
        for lr in [self.lr_encoder, self.lr_gcn, self.lr_post_pretrain] {
            if !lr.is_finite() || lr < 0.0 {
                return bad("learning rates must be finite and non-negative");
            }
        }
        Ok(())
    }
}
