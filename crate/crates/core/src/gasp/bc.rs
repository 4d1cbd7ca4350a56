//! Behaviour cloning: the same sequence model trained with categorical
//! cross-entropy to reproduce the actions of optimal demonstrations.

use super::model::{gather_rows, scatter_add_rows, GaspModel, GaspNet};
use super::tokens::{TokenBatch, TokenSequence};
use super::train::{fit, full_history_accuracy, GaspDatasetSpec, GaspExample, TrainedModel};
use super::GaspConfig;
use crate::config::WorldConfig;
use crate::env::NUM_ACTIONS;
use crate::error::Result;
use crate::nn::loss::cross_entropy;
use crate::nn::{ParamSet, Real, Tensor};
use crate::seed;

pub struct BcBatch<T> {
    pub tokens: TokenBatch<T>,
    /// Demonstrated action per observation slot; `None` after the last action.
    pub targets: Vec<Option<usize>>,
    /// `[batch * n_obs * 4]` valid-action support.
    pub support: Vec<bool>,
}

pub fn bc_batch<T: Real>(examples: &[&GaspExample]) -> Result<BcBatch<T>> {
    let seqs: Vec<&TokenSequence> = examples.iter().map(|e| &e.tokens).collect();
    let tokens = TokenBatch::from_sequences(&seqs)?;
    let n = tokens.n_obs;
    let mut targets = vec![None; examples.len() * n];
    let mut support = vec![true; examples.len() * n * NUM_ACTIONS];
    for (b, ex) in examples.iter().enumerate() {
        for (i, a) in ex.tokens.actions.iter().enumerate() {
            targets[b * n + i] = Some(a.index());
            support[(b * n + i) * NUM_ACTIONS..(b * n + i + 1) * NUM_ACTIONS].copy_from_slice(&ex.valid[i]);
        }
    }
    Ok(BcBatch {
        tokens,
        targets,
        support,
    })
}

pub fn bc_loss<T: Real>(net: &GaspNet, ps: &mut ParamSet<T>, batch: &BcBatch<T>, with_grad: bool) -> Result<T> {
    let pass = net.forward(ps, &batch.tokens)?;
    let rows = batch.tokens.obs_rows();
    let h = gather_rows(&pass.hidden, &rows);
    let logits = net.action_logits(ps, &h)?;
    let (loss, dlogits) = cross_entropy(&logits, &batch.targets, Some(&batch.support))?;
    if with_grad {
        let dh = net.action_head_backward(ps, &h, &dlogits);
        let mut d_hidden = Tensor::zeros(pass.hidden.shape());
        scatter_add_rows(&mut d_hidden, &rows, &dh);
        net.backward(ps, &batch.tokens, &pass, &d_hidden);
    }
    Ok(loss)
}

/// Held-out demonstrations; accuracy is exact match against the optimal set.
pub fn bc_holdout(world: &WorldConfig, cfg: &GaspConfig, run_seed: u64) -> Result<Vec<GaspExample>> {
    GaspDatasetSpec::new(world, cfg.seq_len, run_seed)
        .examples(0..cfg.holdout_sequences as u64, |d, i| d.holdout_demo(i, cfg.holdout_worlds))
}

pub fn train_bc(world: &WorldConfig, cfg: &GaspConfig, run_seed: u64) -> Result<TrainedModel> {
    world.validate()?;
    cfg.validate()?;
    let data = GaspDatasetSpec::new(world, cfg.seq_len, run_seed);
    let holdout = bc_holdout(world, cfg, run_seed)?;
    let mut model = GaspModel::new(world.embed_dim, cfg.model, None, seed::derive(run_seed, "bc", &[]));
    let bs = cfg.batch_size as u64;
    let curve = fit(
        &mut model,
        cfg.bc_steps,
        cfg.lr,
        cfg.log_every,
        |net, ps, step| {
            let s = step as u64;
            let examples = data.examples(s * bs..(s + 1) * bs, GaspDatasetSpec::train_demo)?;
            let refs: Vec<&GaspExample> = examples.iter().collect();
            bc_loss(net, ps, &bc_batch(&refs)?, true)
        },
        |m| full_history_accuracy(m, &holdout),
    )?;
    Ok(TrainedModel { model, curve })
}
