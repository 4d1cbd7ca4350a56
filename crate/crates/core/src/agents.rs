//! Agents behind one interface, and the registry the CLI resolves names in.

use std::path::Path;
use std::sync::Arc;

use crate::config::{RunConfig, BC_CHECKPOINT, GASP_CHECKPOINT, RPG_CHECKPOINT};
use crate::env::{apply_action, Action, Cell, GridSpec, RewardKind, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::gasp::{rpg_categories, GaspModel, TokenBatch, TokenSequence};
use crate::nn::loss::masked_softmax;
use crate::oracle::RandomWalkConvention;
use crate::planner::{train_ppo, ActorCritic, PpoRun};
use crate::rollout::{choose, Episode, FeatureSource, PolicyMode};

pub type Distribution = [f32; NUM_ACTIONS];

/// Something that picks moves. Implementations are immutable, so one agent
/// can serve many episodes at once.
pub trait Agent: Send + Sync {
    fn name(&self) -> &str;

    /// Action distribution for each episode at its current step, zero on
    /// invalid actions.
    fn policy(&self, episodes: &[&Episode]) -> Result<Vec<Distribution>>;

    /// Mode actually used when `requested` is asked for.
    fn effective_mode(&self, requested: PolicyMode) -> PolicyMode {
        requested
    }

    fn act(&self, episode: &Episode, mode: PolicyMode, rng: &mut crate::seed::Rng) -> Result<Action> {
        let probs = self.policy(&[episode])?;
        let mode = self.effective_mode(mode);
        Ok(Action::from_index(choose(&probs[0], mode, rng)).expect("index below four"))
    }
}

/// Uniform over the valid actions.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomAgent;

impl Agent for RandomAgent {
    fn name(&self) -> &str {
        "random"
    }

    /// The argmax of a uniform distribution is a fixed walk, so always sample.
    fn effective_mode(&self, _: PolicyMode) -> PolicyMode {
        PolicyMode::Stochastic
    }

    fn policy(&self, episodes: &[&Episode]) -> Result<Vec<Distribution>> {
        Ok(episodes
            .iter()
            .map(|e| {
                let mask = e.valid_mask();
                let n = mask.iter().filter(|&&v| v).count() as f32;
                mask.map(|v| if v { 1.0 / n } else { 0.0 })
            })
            .collect())
    }
}

/// Monte Carlo counterpart of the exact random-walk oracle: one walk, true
/// if it occupies `goal` within `budget` moves. Under
/// [`RandomWalkConvention::UniformWithNoop`] an off-grid draw costs a step.
pub fn random_walk_hits(
    grid: GridSpec,
    start: Cell,
    goal: Cell,
    budget: usize,
    convention: RandomWalkConvention,
    rng: &mut impl rand::Rng,
) -> Result<bool> {
    grid.check(start)?;
    grid.check(goal)?;
    let mut here = start;
    for _ in 0..budget {
        let action = match convention {
            RandomWalkConvention::MaskedUniform => {
                let valid = crate::env::valid_actions(grid, here)?;
                valid[rng.random_range(0..valid.len())]
            }
            RandomWalkConvention::UniformWithNoop => Action::ALL[rng.random_range(0..NUM_ACTIONS)],
        };
        if let Ok(next) = apply_action(here, action, grid) {
            here = next;
        }
        if here == goal {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Actor on top of either raw observations or a frozen sequence model.
#[derive(Debug, Clone)]
pub struct PlannerAgent {
    name: String,
    model: Option<Arc<GaspModel>>,
    mask_goal: bool,
    policy: ActorCritic,
}

impl PlannerAgent {
    pub fn memoryless(name: &str, policy: ActorCritic) -> Self {
        PlannerAgent {
            name: name.to_owned(),
            model: None,
            mask_goal: false,
            policy,
        }
    }

    pub fn with_model(name: &str, model: Arc<GaspModel>, mask_goal: bool, policy: ActorCritic) -> Self {
        PlannerAgent {
            name: name.to_owned(),
            model: Some(model),
            mask_goal,
            policy,
        }
    }

    /// The same agent with the goal token zeroed (or restored) at inference.
    pub fn goal_masked(mut self, mask_goal: bool) -> Self {
        self.mask_goal = mask_goal;
        self
    }

    pub fn features(&self) -> FeatureSource<'_> {
        match &self.model {
            None => FeatureSource::Memoryless,
            Some(m) => FeatureSource::Gasp {
                model: m,
                mask_goal: self.mask_goal,
            },
        }
    }

    pub fn actor_critic(&self) -> &ActorCritic {
        &self.policy
    }
}

impl Agent for PlannerAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn policy(&self, episodes: &[&Episode]) -> Result<Vec<Distribution>> {
        if episodes.is_empty() {
            return Ok(Vec::new());
        }
        let feats = self.features().features(episodes)?;
        let masks: Vec<_> = episodes.iter().map(|e| e.valid_mask()).collect();
        Ok(self.policy.evaluate(&feats, &masks)?.0)
    }
}

/// Acts straight from a sequence model's action head, with no planner.
/// Stochastic mode samples the softmax of the head's logits over valid
/// actions; argmax mode takes the largest logit.
#[derive(Debug, Clone)]
pub struct HeadAgent {
    name: String,
    model: Arc<GaspModel>,
}

impl HeadAgent {
    pub fn new(name: &str, model: Arc<GaspModel>) -> Self {
        HeadAgent {
            name: name.to_owned(),
            model,
        }
    }
}

impl Agent for HeadAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn policy(&self, episodes: &[&Episode]) -> Result<Vec<Distribution>> {
        if episodes.is_empty() {
            return Ok(Vec::new());
        }
        let seqs: Vec<&TokenSequence> = episodes.iter().map(|e| &e.tokens).collect();
        let (_, logits) = self.model.last_step(&TokenBatch::from_sequences(&seqs)?)?;
        episodes
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let p = masked_softmax(logits.row(i), Some(&e.valid_mask()))?;
                Ok(p.try_into().expect("four actions"))
            })
            .collect()
    }
}

/// Every agent the registry can build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentKind {
    Random,
    PpoMemoryless,
    Bc,
    Gomaa,
    GomaaMask,
    LlmGeo,
    GomaaSparse,
    GomaaRpg,
}

/// Which sequence model a planner sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backbone {
    None,
    Gasp,
    Rpg,
}

impl AgentKind {
    pub const ALL: [AgentKind; 8] = [
        AgentKind::Random,
        AgentKind::PpoMemoryless,
        AgentKind::Bc,
        AgentKind::Gomaa,
        AgentKind::GomaaMask,
        AgentKind::LlmGeo,
        AgentKind::GomaaSparse,
        AgentKind::GomaaRpg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Random => "random",
            AgentKind::PpoMemoryless => "ppo-memoryless",
            AgentKind::Bc => "bc",
            AgentKind::Gomaa => "gomaa",
            AgentKind::GomaaMask => "gomaa-mask",
            AgentKind::LlmGeo => "llm-geo",
            AgentKind::GomaaSparse => "gomaa-sparse",
            AgentKind::GomaaRpg => "gomaa-rpg",
        }
    }

    /// True for agents with a PPO planner to train.
    pub fn is_planner(self) -> bool {
        matches!(
            self,
            AgentKind::PpoMemoryless
                | AgentKind::Gomaa
                | AgentKind::GomaaMask
                | AgentKind::GomaaSparse
                | AgentKind::GomaaRpg
        )
    }

    pub fn backbone(self) -> Backbone {
        match self {
            AgentKind::Random | AgentKind::PpoMemoryless => Backbone::None,
            AgentKind::GomaaRpg => Backbone::Rpg,
            AgentKind::Bc => Backbone::None,
            _ => Backbone::Gasp,
        }
    }

    pub fn mask_goal(self) -> bool {
        self == AgentKind::GomaaMask
    }

    pub fn reward(self) -> RewardKind {
        if self == AgentKind::GomaaSparse {
            RewardKind::Sparse
        } else {
            RewardKind::Dense
        }
    }

    /// Checkpoints the agent is built from.
    pub fn artifacts(self, cfg: &RunConfig) -> Vec<std::path::PathBuf> {
        let p = &cfg.paths;
        let mut out = Vec::new();
        match self.backbone() {
            Backbone::Gasp => out.push(p.artifact(GASP_CHECKPOINT)),
            Backbone::Rpg => out.push(p.artifact(RPG_CHECKPOINT)),
            Backbone::None => {}
        }
        if self == AgentKind::Bc {
            out.push(p.artifact(BC_CHECKPOINT));
        }
        if self.is_planner() {
            out.push(p.planner(self.name()));
        }
        out
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown agent {s:?}")))
    }
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

/// Load the sequence model a planner variant sits on.
pub fn load_backbone(kind: AgentKind, cfg: &RunConfig) -> Result<Option<GaspModel>> {
    let (path, cats) = match kind.backbone() {
        Backbone::None => return Ok(None),
        Backbone::Gasp => (cfg.paths.artifact(GASP_CHECKPOINT), None),
        Backbone::Rpg => (cfg.paths.artifact(RPG_CHECKPOINT), Some(rpg_categories(&cfg.world)?)),
    };
    require(&path)?;
    Ok(Some(GaspModel::load(&path, cfg.world.embed_dim, cfg.gasp.model, cats)?))
}

/// Train the planner of `kind` on an already loaded backbone.
pub fn train_planner(kind: AgentKind, backbone: Option<&GaspModel>, cfg: &RunConfig) -> Result<PpoRun> {
    if !kind.is_planner() {
        return Err(Error::Config(format!("agent {kind} has no planner to train")));
    }
    let features = match backbone {
        None if kind.backbone() == Backbone::None => FeatureSource::Memoryless,
        Some(model) if kind.backbone() != Backbone::None => FeatureSource::Gasp {
            model,
            mask_goal: kind.mask_goal(),
        },
        _ => return Err(Error::Config(format!("wrong backbone for agent {kind}"))),
    };
    train_ppo(&cfg.world, features, &cfg.ppo, kind.reward(), cfg.seed, kind.name())
}

/// Build an agent from the checkpoints in the run directory.
pub fn load_agent(kind: AgentKind, cfg: &RunConfig) -> Result<Box<dyn Agent>> {
    for path in kind.artifacts(cfg) {
        require(&path)?;
    }
    let name = kind.name();
    Ok(match kind {
        AgentKind::Random => Box::new(RandomAgent),
        AgentKind::Bc => {
            let model = GaspModel::load(&cfg.paths.artifact(BC_CHECKPOINT), cfg.world.embed_dim, cfg.gasp.model, None)?;
            Box::new(HeadAgent::new(name, Arc::new(model)))
        }
        AgentKind::LlmGeo => {
            let model = load_backbone(kind, cfg)?.expect("gasp backbone");
            Box::new(HeadAgent::new(name, Arc::new(model)))
        }
        _ => {
            let backbone = load_backbone(kind, cfg)?;
            let dim = match &backbone {
                None => FeatureSource::Memoryless.dim(cfg.world.embed_dim),
                Some(m) => m.net.config.d_model,
            };
            let policy = ActorCritic::load(&cfg.paths.planner(name), dim, &cfg.ppo.hidden)?;
            match backbone {
                None => Box::new(PlannerAgent::memoryless(name, policy)),
                Some(m) => Box::new(PlannerAgent::with_model(name, Arc::new(m), kind.mask_goal(), policy)),
            }
        }
    })
}
