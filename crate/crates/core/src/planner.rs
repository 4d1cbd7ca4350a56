//! PPO actor-critic on top of a frozen feature source.
//!
//! Advantages are plain discounted returns minus the critic's value, with
//! no bootstrapping past the end of an episode. One epoch collects a batch
//! of episodes and takes a single full-batch gradient step. The ratio's
//! denominator comes from a snapshot of the actor refreshed every
//! `old_sync_every` epochs.

use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::config::WorldConfig;
use crate::env::{sample_training_task, Action, ActionMask, AglTask, RewardKind, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::nn::loss::{entropy, entropy_grad, masked_softmax};
use crate::nn::{checkpoint, Activation, AdamConfig, AdamState, Mlp, ParamSet, Real, Tensor};
use crate::oracle::WorldEmbeddings;
use crate::rollout::{choose, Episode, FeatureSource, PolicyMode};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    /// Critic loss weight.
    pub alpha: f64,
    /// Entropy bonus weight.
    pub beta: f64,
    pub clip_eps: f64,
    pub gamma: f64,
    pub lr: f64,
    pub old_sync_every: usize,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub hidden: Vec<usize>,
    pub normalize_advantages: bool,
    /// Consecutive epochs with mean episode reward below `-budget` before
    /// training is abandoned.
    pub divergence_patience: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            alpha: 0.5,
            beta: 0.01,
            clip_eps: 0.2,
            gamma: 0.99,
            lr: 1e-4,
            old_sync_every: 4,
            epochs: 600,
            episodes_per_epoch: 64,
            hidden: vec![64, 64, 64],
            normalize_advantages: false,
            divergence_patience: 10,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo: {m}")));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.alpha < 0.0 || self.beta < 0.0 {
            return bad("lr must be positive and alpha, beta non-negative");
        }
        if self.old_sync_every == 0 || self.episodes_per_epoch == 0 || self.divergence_patience == 0 {
            return bad("old_sync_every, episodes_per_epoch and divergence_patience must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyNet {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl PolicyNet {
    pub fn input_dim(&self) -> usize {
        self.actor.input_dim()
    }
}

/// Actor and critic with their parameters.
#[derive(Debug, Clone)]
pub struct ActorCritic<T: Real = f32> {
    pub net: PolicyNet,
    pub params: ParamSet<T>,
}

impl<T: Real> ActorCritic<T> {
    pub fn new(input_dim: usize, hidden: &[usize], init_seed: u64) -> Self {
        let mut params = ParamSet::new();
        let mut rng = seed::rng(init_seed, "policy-init", &[]);
        let widths = |out: usize| {
            let mut w = vec![input_dim];
            w.extend_from_slice(hidden);
            w.push(out);
            w
        };
        let actor = Mlp::new(&mut params, "actor", &widths(NUM_ACTIONS), Activation::Tanh, &mut rng);
        let critic = Mlp::new(&mut params, "critic", &widths(1), Activation::Tanh, &mut rng);
        ActorCritic {
            net: PolicyNet { actor, critic },
            params,
        }
    }

    pub fn cast<U: Real>(&self) -> ActorCritic<U> {
        ActorCritic {
            net: self.net.clone(),
            params: self.params.cast(),
        }
    }

    /// Masked action distributions and values, one per feature row.
    pub fn evaluate(&self, features: &Tensor<T>, masks: &[ActionMask]) -> Result<(Vec<[T; NUM_ACTIONS]>, Vec<T>)> {
        let (logits, _) = self.net.actor.forward(&self.params, features)?;
        let (values, _) = self.net.critic.forward(&self.params, features)?;
        let probs = masks
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let p = masked_softmax(logits.row(i), Some(m))?;
                Ok(p.try_into().expect("four actions"))
            })
            .collect::<Result<_>>()?;
        Ok((probs, values.data().to_vec()))
    }
}

impl ActorCritic<f32> {
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.params, path)
    }

    pub fn load(path: &Path, input_dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut ac = ActorCritic::new(input_dim, hidden, 0);
        checkpoint::load_into(&mut ac.params, path)?;
        Ok(ac)
    }

    pub fn fingerprint(&self) -> String {
        self.params.fingerprint()
    }
}

/// Masked softmax of the actor at one feature vector.
pub fn policy_dist<T: Real>(actor: &Mlp, ps: &ParamSet<T>, latent: &[T], valid: &ActionMask) -> Result<Vec<T>> {
    let x = Tensor::matrix(1, latent.len(), latent.to_vec())?;
    let (logits, _) = actor.forward(ps, &x)?;
    masked_softmax(logits.row(0), Some(valid))
}

/// Steps of whole episodes, each episode contiguous.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub feature_dim: usize,
    /// `len() * feature_dim` values.
    pub features: Vec<f32>,
    pub actions: Vec<usize>,
    /// Log-probability of the action under the policy that chose it.
    pub log_probs: Vec<f32>,
    pub rewards: Vec<f32>,
    pub values: Vec<f32>,
    pub masks: Vec<ActionMask>,
    /// True on the last step of each episode.
    pub dones: Vec<bool>,
    pub episode: Vec<usize>,
    /// Per episode.
    pub successes: Vec<bool>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn num_episodes(&self) -> usize {
        self.successes.len()
    }

    pub fn feature_tensor(&self) -> Tensor<f32> {
        Tensor::matrix(self.len(), self.feature_dim, self.features.clone()).expect("sized on push")
    }
}

/// Discounted returns restarting at every episode end, and `return - value`.
pub fn compute_returns_advantages(buffer: &RolloutBuffer, gamma: f64) -> (Vec<f32>, Vec<f32>) {
    let n = buffer.len();
    let mut returns = vec![0.0f32; n];
    let mut running = 0.0f64;
    for t in (0..n).rev() {
        if buffer.dones[t] {
            running = 0.0;
        }
        running = buffer.rewards[t] as f64 + gamma * running;
        returns[t] = running as f32;
    }
    let adv = returns.iter().zip(&buffer.values).map(|(r, v)| r - v).collect();
    (adv, returns)
}

/// One training batch in the precision of the loss.
pub struct PpoBatch<T> {
    pub features: Tensor<T>,
    pub actions: Vec<usize>,
    pub masks: Vec<ActionMask>,
    /// Probability of the taken action under the old actor.
    pub old_probs: Vec<T>,
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoLossParts<T> {
    pub total: T,
    /// Mean clipped surrogate (to be maximised).
    pub clip: T,
    /// Mean squared value error.
    pub value: T,
    /// Mean policy entropy.
    pub entropy: T,
}

/// `mean[-L_clip + alpha (V - R)^2 - beta H]`, with gradients accumulated
/// into `ps` when `with_grad`.
pub fn ppo_loss<T: Real>(
    net: &PolicyNet,
    ps: &mut ParamSet<T>,
    batch: &PpoBatch<T>,
    cfg: &PpoConfig,
    with_grad: bool,
) -> Result<PpoLossParts<T>> {
    let n = batch.actions.len();
    if n == 0 || batch.features.dims2().0 != n {
        return Err(Error::Shape(format!("ppo batch of {n} steps")));
    }
    let (logits, actor_cache) = net.actor.forward(ps, &batch.features)?;
    let (values, critic_cache) = net.critic.forward(ps, &batch.features)?;
    let inv_n = T::from_f64(1.0 / n as f64);
    let (alpha, beta, eps) = (T::from_f64(cfg.alpha), T::from_f64(cfg.beta), T::from_f64(cfg.clip_eps));
    let (mut clip_sum, mut value_sum, mut entropy_sum) = (T::zero(), T::zero(), T::zero());
    let mut d_logits = Tensor::zeros(logits.shape());
    let mut d_values = Tensor::zeros(values.shape());
    for i in 0..n {
        let p = masked_softmax(logits.row(i), Some(&batch.masks[i]))?;
        let a = batch.actions[i];
        let adv = batch.advantages[i];
        let ratio = p[a] / batch.old_probs[i];
        let clipped = ratio.max(T::one() - eps).min(T::one() + eps);
        let (unclipped_term, clipped_term) = (ratio * adv, clipped * adv);
        clip_sum += unclipped_term.min(clipped_term);
        let v_err = values.row(i)[0] - batch.returns[i];
        value_sum += v_err * v_err;
        let h = entropy(&p);
        entropy_sum += h;
        if with_grad {
            // The min takes the clipped branch, whose gradient is zero,
            // exactly when the ratio has left the trust region in the
            // direction the advantage rewards.
            let outside = (adv >= T::zero() && ratio > T::one() + eps) || (adv < T::zero() && ratio < T::one() - eps);
            let dh = entropy_grad(&p);
            let g = d_logits.row_mut(i);
            for k in 0..NUM_ACTIONS {
                let mut v = -beta * dh[k];
                if !outside {
                    let onehot = if k == a { T::one() } else { T::zero() };
                    v -= adv * ratio * (onehot - p[k]);
                }
                g[k] = v * inv_n;
            }
            d_values.row_mut(i)[0] = T::from_f64(2.0) * alpha * v_err * inv_n;
        }
    }
    if with_grad {
        net.actor.backward(ps, &actor_cache, &d_logits);
        net.critic.backward(ps, &critic_cache, &d_values);
    }
    let (clip, value, ent) = (clip_sum * inv_n, value_sum * inv_n, entropy_sum * inv_n);
    Ok(PpoLossParts {
        total: -clip + alpha * value - beta * ent,
        clip,
        value,
        entropy: ent,
    })
}

/// A task with its world's embeddings, shared between episodes.
pub type WorldTask = (AglTask, Arc<WorldEmbeddings>);

/// Run every task to completion in lockstep, one network call per step.
/// `rngs` holds one stream per task.
pub fn collect_rollout(
    tasks: &[WorldTask],
    features: FeatureSource,
    policy: &ActorCritic,
    world: &WorldConfig,
    mode: PolicyMode,
    reward: RewardKind,
    rngs: &mut [seed::Rng],
) -> Result<RolloutBuffer> {
    assert_eq!(tasks.len(), rngs.len(), "one stream per task");
    let mut episodes = tasks
        .iter()
        .map(|(t, w)| Episode::new(*t, Arc::clone(w), world.modality))
        .collect::<Result<Vec<_>>>()?;
    let dim = policy.net.input_dim();
    // Per-episode step records: (features, action, log-prob, value, mask).
    let mut steps: Vec<Vec<(Vec<f32>, usize, f32, f32, ActionMask)>> = vec![Vec::new(); tasks.len()];
    loop {
        let active: Vec<usize> = (0..episodes.len()).filter(|&i| !episodes[i].is_done()).collect();
        if active.is_empty() {
            break;
        }
        let views: Vec<&Episode> = active.iter().map(|&i| &episodes[i]).collect();
        let feats = features.features(&views)?;
        if feats.dims2().1 != dim {
            return Err(Error::Shape(format!("features have width {}, policy expects {dim}", feats.dims2().1)));
        }
        let masks: Vec<ActionMask> = views.iter().map(|e| e.valid_mask()).collect();
        let (probs, values) = policy.evaluate(&feats, &masks)?;
        for (k, &i) in active.iter().enumerate() {
            let a = choose(&probs[k], mode, &mut rngs[i]);
            let action = Action::from_index(a).expect("index below four");
            episodes[i].step(action, reward)?;
            steps[i].push((feats.row(k).to_vec(), a, probs[k][a].ln(), values[k], masks[k]));
        }
    }
    let mut buf = RolloutBuffer {
        feature_dim: dim,
        ..RolloutBuffer::default()
    };
    for (e, (ep, recs)) in episodes.iter().zip(steps).enumerate() {
        let last = recs.len() - 1;
        for (t, (f, a, lp, v, m)) in recs.into_iter().enumerate() {
            buf.features.extend(f);
            buf.actions.push(a);
            buf.log_probs.push(lp);
            buf.values.push(v);
            buf.masks.push(m);
            buf.rewards.push(ep.rewards[t] as f32);
            buf.dones.push(t == last);
            buf.episode.push(e);
        }
        buf.successes.push(ep.state.success);
    }
    Ok(buf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoLogRow {
    pub epoch: usize,
    pub mean_reward: f64,
    pub success_rate: f64,
    pub loss: f64,
    pub clip: f64,
    pub value: f64,
    pub entropy: f64,
}

pub fn write_log(path: &Path, rows: &[PpoLogRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub struct PpoRun {
    pub policy: ActorCritic,
    pub log: Vec<PpoLogRow>,
}

/// Training tasks of one epoch, drawn from the world pool.
fn epoch_tasks(world: &WorldConfig, run_seed: u64, variant: u64, epoch: usize, n: usize) -> Result<Vec<WorldTask>> {
    (0..n)
        .map(|e| {
            let mut rng = seed::rng(run_seed, "ppo-task", &[variant, epoch as u64, e as u64]);
            let spec = world.train_spec(run_seed, rng.random_range(0..world.train_worlds));
            let task = sample_training_task(spec, &world.train_distances, world.budget, world.sampling, &mut rng)?;
            Ok((task, Arc::new(WorldEmbeddings::new(&spec)?)))
        })
        .collect()
}

/// Train a policy for `variant` (which also keys its random streams). The
/// feature source is only read, so a sequence model behind it is
/// unchanged afterwards.
pub fn train_ppo(
    world: &WorldConfig,
    features: FeatureSource,
    cfg: &PpoConfig,
    reward: RewardKind,
    run_seed: u64,
    variant: &str,
) -> Result<PpoRun> {
    world.validate()?;
    cfg.validate()?;
    let vid = seed::str_id(variant);
    let dim = features.dim(world.embed_dim);
    let mut policy = ActorCritic::<f32>::new(dim, &cfg.hidden, seed::derive(run_seed, "ppo-init", &[vid]));
    let mut old = policy.params.clone();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &policy.params);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut below = 0;
    for epoch in 0..cfg.epochs {
        let tasks = epoch_tasks(world, run_seed, vid, epoch, cfg.episodes_per_epoch)?;
        let mut rngs: Vec<seed::Rng> = (0..tasks.len())
            .map(|e| seed::rng(run_seed, "ppo-act", &[vid, epoch as u64, e as u64]))
            .collect();
        let buf = collect_rollout(&tasks, features, &policy, world, PolicyMode::Stochastic, reward, &mut rngs)?;
        let (mut adv, ret) = compute_returns_advantages(&buf, cfg.gamma);
        if cfg.normalize_advantages {
            normalize(&mut adv);
        }
        let feats = buf.feature_tensor();
        let old_net = ActorCritic {
            net: policy.net.clone(),
            params: old.clone(),
        };
        let (old_probs, _) = old_net.evaluate(&feats, &buf.masks)?;
        let batch = PpoBatch {
            old_probs: old_probs.iter().zip(&buf.actions).map(|(p, &a)| p[a]).collect(),
            features: feats,
            actions: buf.actions.clone(),
            masks: buf.masks.clone(),
            advantages: adv,
            returns: ret,
        };
        let parts = ppo_loss(&policy.net, &mut policy.params, &batch, cfg, true)?;
        if !parts.total.is_finite() {
            return Err(Error::NonFinite(format!("ppo loss at epoch {epoch}")));
        }
        adam.step(&mut policy.params)?;
        if (epoch + 1) % cfg.old_sync_every == 0 {
            old = policy.params.clone();
        }

        let episodes = buf.num_episodes() as f64;
        let mean_reward = buf.rewards.iter().map(|&r| r as f64).sum::<f64>() / episodes;
        below = if mean_reward < -(world.budget as f64) { below + 1 } else { 0 };
        log.push(PpoLogRow {
            epoch: epoch + 1,
            mean_reward,
            success_rate: buf.successes.iter().filter(|&&s| s).count() as f64 / episodes,
            loss: parts.total as f64,
            clip: parts.clip as f64,
            value: parts.value as f64,
            entropy: parts.entropy as f64,
        });
        if below >= cfg.divergence_patience {
            return Err(Error::Diverged(format!(
                "mean episode reward below -{} for {below} epochs (epoch {})",
                world.budget,
                epoch + 1
            )));
        }
    }
    Ok(PpoRun { policy, log })
}

fn normalize(v: &mut [f32]) {
    let n = v.len() as f32;
    let mean = v.iter().sum::<f32>() / n;
    let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f32>() / n).sqrt();
    for x in v.iter_mut() {
        *x = (*x - mean) / (std + 1e-8);
    }
}
