//! Token layout: `[GOAL, obs_0, act_0, obs_1, act_1, ..., obs_t]`.
//!
//! Observation `i` sits at token `1 + 2i`, action `i` at `2 + 2i`.

use crate::env::{Action, Cell, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};
use crate::oracle::{PatchEmbedding, RandomTrajectory, WorldEmbeddings, FREQUENCIES};

pub const RPE_DIM: usize = 8;

/// Sin/cos code of the offset from the top-left cell.
pub fn relative_position(cell: Cell) -> [f32; RPE_DIM] {
    let mut out = [0.0; RPE_DIM];
    for (k, w) in FREQUENCIES.iter().enumerate() {
        let (r, c) = (cell.row as f64 * w, cell.col as f64 * w);
        out[4 * k] = r.sin() as f32;
        out[4 * k + 1] = r.cos() as f32;
        out[4 * k + 2] = c.sin() as f32;
        out[4 * k + 3] = c.cos() as f32;
    }
    out
}

/// Patch embedding of `cell` followed by its position code.
pub fn observation_features(world: &WorldEmbeddings, cell: Cell) -> Vec<f32> {
    let mut v = world.patch(cell).0.clone();
    v.extend_from_slice(&relative_position(cell));
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub goal: Vec<f32>,
    /// `num_obs() * obs_dim` values.
    observations: Vec<f32>,
    pub actions: Vec<Action>,
    obs_dim: usize,
}

impl TokenSequence {
    pub fn new(goal: Vec<f32>, first_obs: Vec<f32>) -> Result<Self> {
        if goal.is_empty() || first_obs.is_empty() {
            return Err(Error::Shape("empty goal or observation".into()));
        }
        Ok(TokenSequence {
            goal,
            obs_dim: first_obs.len(),
            observations: first_obs,
            actions: Vec::new(),
        })
    }

    /// Append `action` and the observation it led to.
    pub fn push(&mut self, action: Action, obs: &[f32]) -> Result<()> {
        if obs.len() != self.obs_dim {
            return Err(Error::Shape(format!("observation has {} values, expected {}", obs.len(), self.obs_dim)));
        }
        self.actions.push(action);
        self.observations.extend_from_slice(obs);
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn goal_dim(&self) -> usize {
        self.goal.len()
    }

    pub fn num_obs(&self) -> usize {
        self.observations.len() / self.obs_dim
    }

    pub fn num_tokens(&self) -> usize {
        2 * self.num_obs()
    }

    pub fn obs_token(i: usize) -> usize {
        1 + 2 * i
    }

    pub fn action_token(i: usize) -> usize {
        2 + 2 * i
    }

    pub fn observation(&self, i: usize) -> &[f32] {
        &self.observations[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    /// The first `n` observations and the actions between them.
    pub fn prefix(&self, n: usize) -> TokenSequence {
        assert!(n >= 1 && n <= self.num_obs(), "prefix {n} of {}", self.num_obs());
        TokenSequence {
            goal: self.goal.clone(),
            observations: self.observations[..n * self.obs_dim].to_vec(),
            actions: self.actions[..n - 1].to_vec(),
            obs_dim: self.obs_dim,
        }
    }

    /// Goal plus observation `i` alone: the history-free view of step `i`.
    pub fn current_only(&self, i: usize) -> TokenSequence {
        TokenSequence {
            goal: self.goal.clone(),
            observations: self.observation(i).to_vec(),
            actions: Vec::new(),
            obs_dim: self.obs_dim,
        }
    }
}

pub fn encode_tokens(traj: &RandomTrajectory, world: &WorldEmbeddings, goal: &PatchEmbedding) -> Result<TokenSequence> {
    traj.validate()?;
    if goal.dim() != world.world().embed_dim {
        return Err(Error::Shape(format!(
            "goal embedding has dim {}, world has {}",
            goal.dim(),
            world.world().embed_dim
        )));
    }
    let mut seq = TokenSequence::new(goal.0.clone(), observation_features(world, traj.cells[0]))?;
    for (a, &cell) in traj.actions.iter().zip(&traj.cells[1..]) {
        seq.push(*a, &observation_features(world, cell))?;
    }
    Ok(seq)
}

/// Sequences packed for one forward pass. Shorter sequences are padded at
/// the end, which the causal mask keeps invisible to real tokens.
#[derive(Debug, Clone)]
pub struct TokenBatch<T> {
    pub batch: usize,
    pub n_obs: usize,
    /// `[batch, goal_dim]`.
    pub goal: Tensor<T>,
    /// `[batch * n_obs, obs_dim]`.
    pub obs: Tensor<T>,
    /// `[batch * (n_obs - 1), 4]` one-hot.
    pub act: Tensor<T>,
    /// Observations per sequence before padding.
    pub lengths: Vec<usize>,
    /// Zero the goal token.
    pub mask_goal: bool,
    /// Tokens (`[batch * len]`) replaced by the learned mask token; empty
    /// when nothing is masked.
    pub masked_tokens: Vec<bool>,
}

impl<T: Real> TokenBatch<T> {
    pub fn from_sequences(seqs: &[&TokenSequence]) -> Result<Self> {
        let first = seqs.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
        let (gd, od) = (first.goal_dim(), first.obs_dim());
        if let Some(s) = seqs.iter().find(|s| s.goal_dim() != gd || s.obs_dim() != od) {
            return Err(Error::Shape(format!(
                "mixed token widths in batch: ({gd}, {od}) vs ({}, {})",
                s.goal_dim(),
                s.obs_dim()
            )));
        }
        let n_obs = seqs.iter().map(|s| s.num_obs()).max().expect("non-empty");
        let batch = seqs.len();
        let mut goal = Tensor::zeros(&[batch, gd]);
        let mut obs = Tensor::zeros(&[batch * n_obs, od]);
        let mut act = Tensor::zeros(&[batch * (n_obs - 1), NUM_ACTIONS]);
        for (b, s) in seqs.iter().enumerate() {
            for (dst, &v) in goal.row_mut(b).iter_mut().zip(&s.goal) {
                *dst = T::from_f64(v as f64);
            }
            for i in 0..s.num_obs() {
                for (dst, &v) in obs.row_mut(b * n_obs + i).iter_mut().zip(s.observation(i)) {
                    *dst = T::from_f64(v as f64);
                }
            }
            for (i, a) in s.actions.iter().enumerate() {
                act.row_mut(b * (n_obs - 1) + i)[a.index()] = T::one();
            }
        }
        Ok(TokenBatch {
            batch,
            n_obs,
            goal,
            obs,
            act,
            lengths: seqs.iter().map(|s| s.num_obs()).collect(),
            mask_goal: false,
            masked_tokens: Vec::new(),
        })
    }

    pub fn with_goal_masked(mut self, mask: bool) -> Self {
        self.mask_goal = mask;
        self
    }

    /// Tokens per sequence.
    pub fn seq_len(&self) -> usize {
        2 * self.n_obs
    }

    /// Row of observation `i` of sequence `b` in the `[batch * len, d]` hidden state.
    pub fn obs_row(&self, b: usize, i: usize) -> usize {
        b * self.seq_len() + TokenSequence::obs_token(i)
    }

    pub fn action_row(&self, b: usize, i: usize) -> usize {
        b * self.seq_len() + TokenSequence::action_token(i)
    }

    /// Hidden rows of every observation slot, padding included, in
    /// `(b, i)` order.
    pub fn obs_rows(&self) -> Vec<usize> {
        (0..self.batch)
            .flat_map(|b| (0..self.n_obs).map(move |i| (b, i)))
            .map(|(b, i)| self.obs_row(b, i))
            .collect()
    }

    /// Whether observation slot `i` of sequence `b` holds a real token.
    pub fn is_real(&self, b: usize, i: usize) -> bool {
        i < self.lengths[b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{AglTask, GridSpec, WorldSpec, WorldStyle};
    use crate::oracle::{gen_random_trajectory, GoalModality};
    use crate::seed;

    fn world(sigma: f32) -> WorldEmbeddings {
        WorldEmbeddings::new(&WorldSpec {
            grid: GridSpec::new(5, 5).unwrap(),
            seed: 3,
            style: WorldStyle::InformativeGradient,
            embed_dim: 16,
            noise_sigma: sigma,
        })
        .unwrap()
    }

    fn walk(w: &WorldEmbeddings, len: usize) -> RandomTrajectory {
        let task = AglTask::new(*w.world(), Cell::new(0, 0), Cell::new(3, 2), 10).unwrap();
        gen_random_trajectory(&task, len, &mut seed::rng_from(1)).unwrap()
    }

    #[test]
    fn one_step_layout() {
        let w = world(0.5);
        let traj = walk(&w, 1);
        let goal = w.goal(traj.task.goal, GoalModality::Aerial);
        let seq = encode_tokens(&traj, &w, &goal).unwrap();
        assert_eq!(seq.num_tokens(), 4);
        assert_eq!(seq.observation(1)[16..], relative_position(traj.cells[1]));
        assert_eq!(seq, encode_tokens(&traj, &w, &goal).unwrap());

        let batch = TokenBatch::<f32>::from_sequences(&[&seq]).unwrap();
        assert_eq!(batch.seq_len(), 4);
        assert_eq!(batch.obs_rows(), vec![1, 3]);
        assert_eq!(batch.action_row(0, 0), 2);
        assert_eq!(batch.act.row(0)[traj.actions[0].index()], 1.0);
    }

    #[test]
    fn modality_is_invisible_without_noise() {
        let w = world(0.0);
        let traj = walk(&w, 3);
        let tokens: Vec<_> = GoalModality::ALL
            .iter()
            .map(|&m| encode_tokens(&traj, &w, &w.goal(traj.task.goal, m)).unwrap())
            .collect();
        assert_eq!(tokens[0], tokens[1]);
        assert_eq!(tokens[0], tokens[2]);
    }

    #[test]
    fn padding_and_views() {
        let w = world(0.5);
        let long = encode_tokens(&walk(&w, 4), &w, &w.goal(Cell::new(3, 2), GoalModality::Text)).unwrap();
        let short = long.prefix(2);
        assert_eq!(short.num_obs(), 2);
        assert_eq!(short.actions.len(), 1);
        assert_eq!(long.current_only(3).observation(0), long.observation(3));

        let batch = TokenBatch::<f64>::from_sequences(&[&short, &long]).unwrap();
        assert_eq!(batch.n_obs, 5);
        assert!(batch.is_real(0, 1) && !batch.is_real(0, 2));
        assert!(batch.obs.row(4).iter().all(|&v| v == 0.0));
        assert!(TokenBatch::<f32>::from_sequences(&[]).is_err());
    }
}
