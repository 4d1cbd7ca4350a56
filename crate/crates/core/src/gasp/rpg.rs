//! Masked goal-direction pretraining: optimal demonstrations with random
//! tokens replaced by a learned mask token. Masked observations predict the
//! reduced direction to the goal, masked actions predict the action taken.

use rayon::prelude::*;

use super::model::{gather_rows, scatter_add_rows, GaspModel, GaspNet};
use super::tokens::{TokenBatch, TokenSequence};
use super::train::{fit, GaspDatasetSpec, GaspExample, TrainedModel};
use super::GaspConfig;
use crate::config::WorldConfig;
use crate::env::ActionMask;
use crate::error::Result;
use crate::nn::loss::cross_entropy;
use crate::nn::{ParamSet, Real, Tensor};
use crate::oracle::GradientTable;
use crate::seed;

pub struct RpgBatch<T> {
    pub tokens: TokenBatch<T>,
    /// `(hidden row, category id)` of every masked observation.
    pub obs_targets: Vec<(usize, usize)>,
    /// `(hidden row, action index, valid actions)` of every masked action.
    pub act_targets: Vec<(usize, usize, ActionMask)>,
}

pub fn rpg_batch<T: Real>(
    examples: &[&GaspExample],
    table: &GradientTable,
    mask_prob: f64,
    rng: &mut impl rand::Rng,
) -> Result<RpgBatch<T>> {
    let seqs: Vec<&TokenSequence> = examples.iter().map(|e| &e.tokens).collect();
    let mut tokens = TokenBatch::from_sequences(&seqs)?;
    let mut masked = vec![false; tokens.batch * tokens.seq_len()];
    let (mut obs_targets, mut act_targets) = (Vec::new(), Vec::new());
    for (b, ex) in examples.iter().enumerate() {
        for (i, &cell) in ex.cells.iter().enumerate() {
            if rng.random_bool(mask_prob) {
                let row = tokens.obs_row(b, i);
                masked[row] = true;
                obs_targets.push((row, table.category(cell, ex.goal)?.id));
            }
        }
        for (i, a) in ex.tokens.actions.iter().enumerate() {
            if rng.random_bool(mask_prob) {
                let row = tokens.action_row(b, i);
                masked[row] = true;
                act_targets.push((row, a.index(), ex.valid[i]));
            }
        }
    }
    tokens.masked_tokens = masked;
    Ok(RpgBatch {
        tokens,
        obs_targets,
        act_targets,
    })
}

/// Summed mean cross-entropies of the category and action heads at masked
/// tokens. Zero when nothing is masked.
pub fn rpg_loss<T: Real>(net: &GaspNet, ps: &mut ParamSet<T>, batch: &RpgBatch<T>, with_grad: bool) -> Result<T> {
    if batch.obs_targets.is_empty() && batch.act_targets.is_empty() {
        return Ok(T::zero());
    }
    let pass = net.forward(ps, &batch.tokens)?;
    let mut d_hidden = Tensor::zeros(pass.hidden.shape());
    let mut loss = T::zero();
    if !batch.obs_targets.is_empty() {
        let rows: Vec<usize> = batch.obs_targets.iter().map(|t| t.0).collect();
        let targets: Vec<Option<usize>> = batch.obs_targets.iter().map(|t| Some(t.1)).collect();
        let h = gather_rows(&pass.hidden, &rows);
        let (l, dl) = cross_entropy(&net.category_logits(ps, &h)?, &targets, None)?;
        loss += l;
        if with_grad {
            let dh = net.category_head_backward(ps, &h, &dl)?;
            scatter_add_rows(&mut d_hidden, &rows, &dh);
        }
    }
    if !batch.act_targets.is_empty() {
        let rows: Vec<usize> = batch.act_targets.iter().map(|t| t.0).collect();
        let targets: Vec<Option<usize>> = batch.act_targets.iter().map(|t| Some(t.1)).collect();
        let support: Vec<bool> = batch.act_targets.iter().flat_map(|t| t.2).collect();
        let h = gather_rows(&pass.hidden, &rows);
        let (l, dl) = cross_entropy(&net.action_logits(ps, &h)?, &targets, Some(&support))?;
        loss += l;
        if with_grad {
            let dh = net.action_head_backward(ps, &h, &dl);
            scatter_add_rows(&mut d_hidden, &rows, &dh);
        }
    }
    if with_grad {
        net.backward(ps, &batch.tokens, &pass, &d_hidden);
    }
    Ok(loss)
}

fn argmax<T: Real>(v: &[T], support: Option<&ActionMask>) -> usize {
    let mut best = None;
    for (k, x) in v.iter().enumerate() {
        if support.is_none_or(|s| s[k]) && best.is_none_or(|b: usize| *x > v[b]) {
            best = Some(k);
        }
    }
    best.unwrap_or(0)
}

/// Accuracy over masked tokens of held-out demonstrations, masks drawn
/// from a fixed stream.
pub fn rpg_masked_accuracy(
    model: &GaspModel,
    examples: &[GaspExample],
    table: &GradientTable,
    mask_prob: f64,
    mask_seed: u64,
) -> Result<f64> {
    let tallies: Vec<(usize, usize)> = examples
        .par_chunks(250)
        .enumerate()
        .map(|(k, chunk)| {
            let mut rng = seed::rng(mask_seed, "rpg-holdout-mask", &[k as u64]);
            let refs: Vec<&GaspExample> = chunk.iter().collect();
            let batch = rpg_batch::<f32>(&refs, table, mask_prob, &mut rng)?;
            let pass = model.forward(&batch.tokens)?;
            let (mut hits, mut n) = (0, 0);
            if !batch.obs_targets.is_empty() {
                let rows: Vec<usize> = batch.obs_targets.iter().map(|t| t.0).collect();
                let logits = model.net.category_logits(&model.params, &gather_rows(&pass.hidden, &rows))?;
                for (j, t) in batch.obs_targets.iter().enumerate() {
                    hits += (argmax(logits.row(j), None) == t.1) as usize;
                }
                n += rows.len();
            }
            if !batch.act_targets.is_empty() {
                let rows: Vec<usize> = batch.act_targets.iter().map(|t| t.0).collect();
                let logits = model.net.action_logits(&model.params, &gather_rows(&pass.hidden, &rows))?;
                for (j, t) in batch.act_targets.iter().enumerate() {
                    hits += (argmax(logits.row(j), Some(&t.2)) == t.1) as usize;
                }
                n += rows.len();
            }
            Ok((hits, n))
        })
        .collect::<Result<_>>()?;
    let (hits, n) = tallies.iter().fold((0, 0), |a, t| (a.0 + t.0, a.1 + t.1));
    Ok(if n == 0 { 0.0 } else { hits as f64 / n as f64 })
}

pub fn rpg_pretrain(world: &WorldConfig, cfg: &GaspConfig, run_seed: u64) -> Result<TrainedModel> {
    world.validate()?;
    cfg.validate()?;
    let table = GradientTable::enumerate(world.grid()?);
    let data = GaspDatasetSpec::new(world, cfg.seq_len, run_seed);
    let holdout = data.examples(0..cfg.holdout_sequences as u64, |d, i| d.holdout_demo(i, cfg.holdout_worlds))?;
    let mut model = GaspModel::new(
        world.embed_dim,
        cfg.model,
        Some(table.len()),
        seed::derive(run_seed, "gasp-rpg", &[]),
    );
    let bs = cfg.batch_size as u64;
    let curve = fit(
        &mut model,
        cfg.rpg_steps,
        cfg.lr,
        cfg.log_every,
        |net, ps, step| {
            let s = step as u64;
            let examples = data.examples(s * bs..(s + 1) * bs, GaspDatasetSpec::train_demo)?;
            let refs: Vec<&GaspExample> = examples.iter().collect();
            let mut rng = seed::rng(run_seed, "rpg-mask", &[s]);
            let batch = rpg_batch(&refs, &table, cfg.rpg_mask_prob, &mut rng)?;
            rpg_loss(net, ps, &batch, true)
        },
        |m| rpg_masked_accuracy(m, &holdout, &table, cfg.rpg_mask_prob, run_seed),
    )?;
    Ok(TrainedModel { model, curve })
}

/// Number of categories of the RPG head for a world configuration.
pub fn rpg_categories(world: &WorldConfig) -> Result<usize> {
    Ok(GradientTable::enumerate(world.grid()?).len())
}
