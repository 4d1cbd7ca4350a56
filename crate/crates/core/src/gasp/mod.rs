//! Goal-aware supervised pretraining of a small causal sequence model.
//!
//! Sequences are random walks that start anywhere and ignore the goal. At
//! every observation the model predicts, as independent sigmoids, which of
//! the four actions reduce the distance to the goal. The goal's position is
//! never given directly: it must be inferred by comparing the goal embedding
//! with the patches seen along the way. The hidden state at an observation
//! token is the latent the planner consumes.

pub mod bc;
pub mod model;
pub mod rpg;
pub mod tokens;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bc::{bc_loss, train_bc};
pub use model::{GaspModel, GaspNet, ModelConfig};
pub use rpg::{rpg_categories, rpg_loss, rpg_pretrain};
pub use tokens::{encode_tokens, observation_features, relative_position, TokenBatch, TokenSequence, RPE_DIM};
pub use train::{
    gasp_accuracy, gasp_holdout, gasp_loss, labelled_batch, make_example, train_gasp, write_curve, CurvePoint,
    GaspAccuracy, GaspDatasetSpec, GaspExample, TrainedModel,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaspConfig {
    pub model: ModelConfig,
    /// Moves per training walk.
    pub seq_len: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub log_every: usize,
    pub holdout_worlds: usize,
    pub holdout_sequences: usize,
    pub rpg_mask_prob: f64,
    pub rpg_steps: usize,
    pub bc_steps: usize,
}

impl Default for GaspConfig {
    fn default() -> Self {
        GaspConfig {
            model: ModelConfig::default(),
            seq_len: 10,
            batch_size: 16,
            steps: 8000,
            lr: 1e-3,
            log_every: 500,
            holdout_worlds: 50,
            holdout_sequences: 1000,
            rpg_mask_prob: 0.25,
            rpg_steps: 4000,
            bc_steps: 4000,
        }
    }
}

impl GaspConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: &str| Err(Error::Config(format!("gasp: {m}")));
        if self.seq_len == 0 || self.batch_size == 0 {
            return bad("seq_len and batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.holdout_worlds == 0 || self.holdout_sequences == 0 {
            return bad("holdout_worlds and holdout_sequences must be positive");
        }
        if !(0.0..=1.0).contains(&self.rpg_mask_prob) {
            return bad("rpg_mask_prob must lie in [0, 1]");
        }
        Ok(())
    }
}
