//! Live episodes and the feature views that planners act on.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{Action, ActionMask, AglTask, EpisodeState, RewardKind, StepOutcome};
use crate::error::{Error, Result};
use crate::gasp::{observation_features, GaspModel, TokenBatch, TokenSequence};
use crate::nn::Tensor;
use crate::oracle::{GoalModality, PatchEmbedding, WorldEmbeddings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    Stochastic,
    #[default]
    Argmax,
}

impl std::str::FromStr for PolicyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic" => Ok(PolicyMode::Stochastic),
            "argmax" => Ok(PolicyMode::Argmax),
            _ => Err(Error::Config(format!("unknown policy mode {s:?}"))),
        }
    }
}

/// Pick an action index from a distribution with zeros on invalid actions.
/// Argmax ties go to the lowest index.
pub fn choose(probs: &[f32], mode: PolicyMode, rng: &mut impl rand::Rng) -> usize {
    let last_valid = probs.iter().rposition(|&p| p > 0.0).expect("some action has mass");
    match mode {
        PolicyMode::Argmax => {
            let mut best = last_valid;
            for (i, &p) in probs.iter().enumerate() {
                if p > probs[best] || (p == probs[best] && i < best) {
                    best = i;
                }
            }
            best
        }
        PolicyMode::Stochastic => {
            let u: f32 = rng.random();
            let mut acc = 0.0;
            for (i, &p) in probs.iter().enumerate() {
                acc += p;
                if p > 0.0 && u < acc {
                    return i;
                }
            }
            last_valid
        }
    }
}

/// An episode in progress together with what the agent has observed.
#[derive(Debug, Clone)]
pub struct Episode {
    pub state: EpisodeState,
    pub world: Arc<WorldEmbeddings>,
    pub goal: PatchEmbedding,
    pub tokens: TokenSequence,
    pub actions: Vec<Action>,
    pub rewards: Vec<i32>,
}

impl Episode {
    pub fn new(task: AglTask, world: Arc<WorldEmbeddings>, modality: GoalModality) -> Result<Self> {
        task.validate()?;
        if world.world() != &task.world {
            return Err(Error::InvalidTask("embeddings belong to a different world".into()));
        }
        let goal = world.goal(task.goal, modality);
        let tokens = TokenSequence::new(goal.0.clone(), observation_features(&world, task.start))?;
        Ok(Episode {
            state: EpisodeState::new(task),
            world,
            goal,
            tokens,
            actions: Vec::new(),
            rewards: Vec::new(),
        })
    }

    pub fn valid_mask(&self) -> ActionMask {
        self.state.action_mask()
    }

    pub fn is_done(&self) -> bool {
        self.state.done
    }

    pub fn step(&mut self, action: Action, reward_kind: RewardKind) -> Result<StepOutcome> {
        let outcome = self.state.advance(action, reward_kind)?;
        self.actions.push(action);
        self.rewards.push(outcome.reward);
        self.tokens.push(action, &observation_features(&self.world, outcome.next))?;
        Ok(outcome)
    }
}

/// What a planner's networks see at each step.
#[derive(Debug, Clone, Copy)]
pub enum FeatureSource<'a> {
    /// Current patch and the goal embedding; no history and no position.
    Memoryless,
    /// The sequence model's latent at the current observation.
    Gasp { model: &'a GaspModel, mask_goal: bool },
}

impl FeatureSource<'_> {
    pub fn dim(&self, embed_dim: usize) -> usize {
        match self {
            FeatureSource::Memoryless => 2 * embed_dim,
            FeatureSource::Gasp { model, .. } => model.net.config.d_model,
        }
    }

    /// One feature row per episode.
    pub fn features(&self, episodes: &[&Episode]) -> Result<Tensor<f32>> {
        match *self {
            FeatureSource::Memoryless => {
                let mut rows = Vec::new();
                let mut width = None;
                for ep in episodes {
                    let here = ep.state.current;
                    let start = rows.len();
                    rows.extend_from_slice(ep.world.patch(here).as_slice());
                    rows.extend_from_slice(ep.goal.as_slice());
                    let w = rows.len() - start;
                    if *width.get_or_insert(w) != w {
                        return Err(Error::Shape("episodes mix embedding widths".into()));
                    }
                }
                Tensor::matrix(episodes.len(), width.unwrap_or(0), rows)
            }
            FeatureSource::Gasp { model, mask_goal } => {
                let seqs: Vec<&TokenSequence> = episodes.iter().map(|e| &e.tokens).collect();
                let batch = TokenBatch::from_sequences(&seqs)?.with_goal_masked(mask_goal);
                Ok(model.last_step(&batch)?.0)
            }
        }
    }
}
