//! Success-ratio evaluation: shared task suites, lockstep episode runs,
//! per-trial tables with box-plot aggregates, and trace export.
//!
//! Every agent faces the same suite. A task is fixed by
//! `(base_seed, distance, trial, world, pair)` and never by the budget, so
//! sweeping the budget replays the same starts and goals. Each episode owns
//! a random stream keyed by the agent name and task, and episodes are run
//! in fixed chunks, so results do not depend on the thread count.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::Agent;
use crate::config::WorldConfig;
use crate::env::{sample_task, Action, AglTask, Cell, EpisodeState, RewardKind, TaskRecord, WorldStyle};
use crate::error::{Error, Result};
use crate::oracle::WorldEmbeddings;
use crate::rollout::{choose, Episode, PolicyMode};
use crate::seed;

/// Episodes evaluated together in one batched policy call.
const CHUNK: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Worlds per trial.
    pub worlds: usize,
    /// World style; the world section's style when unset.
    pub style: Option<WorldStyle>,
    pub distances: Vec<usize>,
    /// Budget; the world section's budget when unset.
    pub budget: Option<usize>,
    pub pairs_per_world: usize,
    pub mode: PolicyMode,
    pub trials: usize,
    pub base_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            worlds: 100,
            style: None,
            distances: vec![4, 5, 6, 7, 8],
            budget: None,
            pairs_per_world: 5,
            mode: PolicyMode::Argmax,
            trials: 3,
            base_seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, world: &WorldConfig) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("eval: {m}")));
        if self.trials == 0 || self.worlds == 0 || self.pairs_per_world == 0 {
            return bad("trials, worlds and pairs_per_world must be positive".into());
        }
        if self.distances.is_empty() {
            return bad("distances is empty".into());
        }
        let grid = world.grid()?;
        let budget = self.budget(world);
        if budget == 0 {
            return bad("budget must be positive".into());
        }
        for &c in &self.distances {
            if c == 0 || c > grid.diameter() {
                return bad(format!("distance {c} is infeasible on a {}x{} grid", grid.rows, grid.cols));
            }
            if c > budget {
                return bad(format!("distance {c} exceeds budget {budget}"));
            }
        }
        Ok(())
    }

    pub fn budget(&self, world: &WorldConfig) -> usize {
        self.budget.unwrap_or(world.budget)
    }

    fn world_cfg(&self, world: &WorldConfig) -> WorldConfig {
        WorldConfig {
            style: self.style.unwrap_or(world.style),
            budget: self.budget(world),
            ..world.clone()
        }
    }
}

/// One evaluation task with its world.
#[derive(Debug, Clone)]
pub struct SuiteTask {
    pub task: AglTask,
    pub world: Arc<WorldEmbeddings>,
}

/// The shared suite for one `(distance, trial)`, in task-index order.
pub fn task_suite(world: &WorldConfig, cfg: &EvalConfig, distance: usize, trial: usize) -> Result<Vec<SuiteTask>> {
    let wc = cfg.world_cfg(world);
    let budget = wc.budget;
    (0..cfg.worlds)
        .into_par_iter()
        .map(|w| {
            let spec = wc.spec(seed::derive(cfg.base_seed, "eval-world", &[trial as u64, w as u64]));
            let emb = Arc::new(WorldEmbeddings::new(&spec)?);
            (0..cfg.pairs_per_world)
                .map(|p| {
                    let mut rng = seed::rng(cfg.base_seed, "suite", &[distance as u64, trial as u64, w as u64, p as u64]);
                    Ok(SuiteTask {
                        task: sample_task(spec, distance, budget, &mut rng)?,
                        world: Arc::clone(&emb),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().flatten().collect())
}

/// Everything needed to replay an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub task: TaskRecord,
    pub rows: usize,
    pub cols: usize,
    pub start: Cell,
    pub goal: Cell,
    /// Visited cells, starting with the start cell.
    pub path: Vec<Cell>,
    pub actions: Vec<Action>,
    pub rewards: Vec<i32>,
    pub success: bool,
    pub mode: PolicyMode,
}

impl TraceRecord {
    fn from_episode(ep: &Episode, mode: PolicyMode) -> Self {
        let task = ep.state.task;
        let mut path = vec![task.start];
        let mut here = task.start;
        for &a in &ep.actions {
            here = here.displaced(a, task.grid()).expect("recorded actions are valid");
            path.push(here);
        }
        TraceRecord {
            task: TaskRecord::from_task(&task),
            rows: task.world.grid.rows,
            cols: task.world.grid.cols,
            start: task.start,
            goal: task.goal,
            path,
            actions: ep.actions.clone(),
            rewards: ep.rewards.clone(),
            success: ep.state.success,
            mode,
        }
    }

    /// Re-simulate the actions and check cells, rewards and outcome.
    pub fn replay(&self) -> Result<()> {
        // Replay needs only the grid; the embedding parameters are arbitrary.
        let defaults = WorldConfig::default();
        let task = self.task.clone().into_task(defaults.embed_dim, defaults.noise_sigma)?;
        let mut state = EpisodeState::new(task);
        let mismatch = |m: String| Err(Error::InvalidTask(format!("trace does not replay: {m}")));
        if self.path.first() != Some(&task.start) || self.path.len() != self.actions.len() + 1 {
            return mismatch("path does not match the actions".into());
        }
        for (i, &a) in self.actions.iter().enumerate() {
            let out = state.advance(a, RewardKind::Dense)?;
            if out.next != self.path[i + 1] || Some(&out.reward) != self.rewards.get(i) {
                return mismatch(format!("step {i}"));
            }
        }
        if state.success != self.success || self.rewards.len() != self.actions.len() {
            return mismatch("outcome".into());
        }
        Ok(())
    }
}

/// Play one task to the end.
pub fn run_episode(
    agent: &dyn Agent,
    task: &SuiteTask,
    modality: crate::oracle::GoalModality,
    mode: PolicyMode,
    rng: &mut seed::Rng,
) -> Result<TraceRecord> {
    let mode = agent.effective_mode(mode);
    let mut ep = Episode::new(task.task, Arc::clone(&task.world), modality)?;
    while !ep.is_done() {
        let a = agent.act(&ep, mode, rng)?;
        ep.step(a, RewardKind::Dense)?;
    }
    Ok(TraceRecord::from_episode(&ep, mode))
}

/// Random stream of one agent on one suite task.
pub fn episode_rng(cfg: &EvalConfig, agent: &str, distance: usize, trial: usize, index: usize) -> seed::Rng {
    seed::rng(
        cfg.base_seed,
        "agent",
        &[seed::str_id(agent), distance as u64, trial as u64, index as u64],
    )
}

/// Play every task of a suite, batching policy calls across episodes.
pub fn run_suite(
    agent: &dyn Agent,
    suite: &[SuiteTask],
    world: &WorldConfig,
    cfg: &EvalConfig,
    distance: usize,
    trial: usize,
) -> Result<Vec<TraceRecord>> {
    let mode = agent.effective_mode(cfg.mode);
    let chunks: Vec<Vec<TraceRecord>> = suite
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, tasks)| {
            let mut eps = tasks
                .iter()
                .map(|t| Episode::new(t.task, Arc::clone(&t.world), world.modality))
                .collect::<Result<Vec<_>>>()?;
            let mut rngs: Vec<seed::Rng> = (0..tasks.len())
                .map(|i| episode_rng(cfg, agent.name(), distance, trial, c * CHUNK + i))
                .collect();
            loop {
                let active: Vec<usize> = (0..eps.len()).filter(|&i| !eps[i].is_done()).collect();
                if active.is_empty() {
                    break;
                }
                let views: Vec<&Episode> = active.iter().map(|&i| &eps[i]).collect();
                let probs = agent.policy(&views)?;
                for (k, &i) in active.iter().enumerate() {
                    let a = choose(&probs[k], mode, &mut rngs[i]);
                    let action = Action::from_index(a).expect("index below four");
                    if !eps[i].valid_mask()[a] {
                        return Err(Error::InvalidTask(format!("agent {} chose an invalid action", agent.name())));
                    }
                    eps[i].step(action, RewardKind::Dense)?;
                }
            }
            Ok(eps.iter().map(|e| TraceRecord::from_episode(e, mode)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrRow {
    pub agent: String,
    #[serde(rename = "C")]
    pub distance: usize,
    #[serde(rename = "B")]
    pub budget: usize,
    pub trial: usize,
    pub successes: usize,
    pub total: usize,
    pub sr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    /// Quartiles by linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "statistics of nothing");
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        BoxStats {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        }
    }
}

pub type Aggregates = BTreeMap<String, BTreeMap<usize, BoxStats>>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SrTable {
    pub rows: Vec<SrRow>,
}

impl SrTable {
    /// Box-plot statistics across trials, per agent and distance.
    pub fn aggregates(&self) -> Aggregates {
        let mut groups: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
        for r in &self.rows {
            groups
                .entry(r.agent.clone())
                .or_default()
                .entry(r.distance)
                .or_default()
                .push(r.sr);
        }
        groups
            .into_iter()
            .map(|(a, by_c)| (a, by_c.into_iter().map(|(c, v)| (c, BoxStats::of(&v))).collect()))
            .collect()
    }

    /// Mean SR across trials.
    pub fn mean_sr(&self, agent: &str, distance: usize) -> Option<f64> {
        self.aggregates().get(agent)?.get(&distance).map(|s| s.mean)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        create_parent(path)?;
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<Result<Vec<SrRow>, _>>()?;
        Ok(SrTable { rows })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        create_parent(path)?;
        std::fs::write(path, serde_json::to_string_pretty(&self.aggregates())? + "\n")?;
        Ok(())
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Evaluate one agent on every distance and trial.
pub fn success_ratio(agent: &dyn Agent, world: &WorldConfig, cfg: &EvalConfig) -> Result<SrTable> {
    sweep(&[agent], world, cfg)
}

/// Evaluate several agents on the same suites.
pub fn sweep(agents: &[&dyn Agent], world: &WorldConfig, cfg: &EvalConfig) -> Result<SrTable> {
    cfg.validate(world)?;
    let budget = cfg.budget(world);
    let mut rows = Vec::new();
    for &c in &cfg.distances {
        for trial in 0..cfg.trials {
            let suite = task_suite(world, cfg, c, trial)?;
            for agent in agents {
                let traces = run_suite(*agent, &suite, world, cfg, c, trial)?;
                let successes = traces.iter().filter(|t| t.success).count();
                rows.push(SrRow {
                    agent: agent.name().to_owned(),
                    distance: c,
                    budget,
                    trial,
                    successes,
                    total: traces.len(),
                    sr: successes as f64 / traces.len() as f64,
                });
            }
        }
    }
    rows.sort_by(|a, b| (&a.agent, a.distance, a.trial).cmp(&(&b.agent, b.distance, b.trial)));
    Ok(SrTable { rows })
}

pub fn export_trace(trace: &TraceRecord, path: &Path) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, serde_json::to_string_pretty(trace)? + "\n")?;
    Ok(())
}

pub fn load_trace(path: &Path) -> Result<TraceRecord> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Check that mean SR does not increase along `agents` at each distance.
/// On failure the message names every violated pair.
pub fn assert_sr_order(table: &SrTable, agents: &[&str], distances: &[usize]) -> std::result::Result<(), String> {
    let mut broken = Vec::new();
    for &c in distances {
        for w in agents.windows(2) {
            let (hi, lo) = (table.mean_sr(w[0], c), table.mean_sr(w[1], c));
            match (hi, lo) {
                (Some(h), Some(l)) if h >= l => {}
                (Some(h), Some(l)) => broken.push(format!("C={c}: {} {h:.4} < {} {l:.4}", w[0], w[1])),
                _ => broken.push(format!("C={c}: missing {} or {}", w[0], w[1])),
            }
        }
    }
    if broken.is_empty() {
        Ok(())
    } else {
        Err(broken.join("; "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Distribution, RandomAgent};
    use crate::env::{action_mask, NUM_ACTIONS};
    use crate::oracle::{optimal_mask, random_policy_sr_exact, RandomWalkConvention};

    /// Always takes the lowest-index optimal action.
    struct Shortest;
    impl Agent for Shortest {
        fn name(&self) -> &str {
            "shortest"
        }
        fn policy(&self, eps: &[&Episode]) -> Result<Vec<Distribution>> {
            eps.iter()
                .map(|e| {
                    let m = optimal_mask(e.state.current, e.state.task.goal, e.state.task.grid())?;
                    let k = m.iter().position(|&x| x).expect("not at goal");
                    let mut p = [0.0; NUM_ACTIONS];
                    p[k] = 1.0;
                    Ok(p)
                })
                .collect()
        }
    }

    /// Moves away from the goal when it can, else anywhere valid.
    struct Away;
    impl Agent for Away {
        fn name(&self) -> &str {
            "away"
        }
        fn policy(&self, eps: &[&Episode]) -> Result<Vec<Distribution>> {
            eps.iter()
                .map(|e| {
                    let grid = e.state.task.grid();
                    let here = e.state.current;
                    let opt = optimal_mask(here, e.state.task.goal, grid)?;
                    let valid = action_mask(grid, here)?;
                    let pick = (0..NUM_ACTIONS)
                        .find(|&a| valid[a] && !opt[a] && !opt[Action::ALL[a].opposite().index()])
                        .or_else(|| (0..NUM_ACTIONS).find(|&a| valid[a] && !opt[a]))
                        .unwrap_or_else(|| valid.iter().position(|&v| v).unwrap());
                    let mut p = [0.0; NUM_ACTIONS];
                    p[pick] = 1.0;
                    Ok(p)
                })
                .collect()
        }
    }

    /// Alternates between two cells.
    struct Shuttle;
    impl Agent for Shuttle {
        fn name(&self) -> &str {
            "shuttle"
        }
        fn policy(&self, eps: &[&Episode]) -> Result<Vec<Distribution>> {
            Ok(eps
                .iter()
                .map(|e| {
                    let valid = e.valid_mask();
                    let first = valid.iter().position(|&v| v).unwrap();
                    let a = match e.actions.last() {
                        Some(prev) => prev.opposite().index(),
                        None => first,
                    };
                    let mut p = [0.0; NUM_ACTIONS];
                    p[a] = 1.0;
                    p
                })
                .collect())
        }
    }

    fn world() -> WorldConfig {
        WorldConfig {
            embed_dim: 8,
            ..WorldConfig::default()
        }
    }

    fn cfg() -> EvalConfig {
        EvalConfig {
            worlds: 20,
            trials: 2,
            ..EvalConfig::default()
        }
    }

    #[test]
    fn scripted_agents() {
        let (w, cfg) = (world(), cfg());
        for c in [1, 4, 8] {
            let suite = task_suite(&w, &cfg, c, 0).unwrap();
            let mut rng = seed::rng_from(0);
            for t in &suite[..10] {
                let tr = run_episode(&Shortest, t, w.modality, PolicyMode::Argmax, &mut rng).unwrap();
                assert!(tr.success);
                assert_eq!(tr.actions.len(), c);
                assert_eq!(tr.rewards.iter().sum::<i32>(), c as i32 + 1);
                tr.replay().unwrap();

                let tr = run_episode(&Away, t, w.modality, PolicyMode::Argmax, &mut rng).unwrap();
                assert!(!tr.success || c == 1);
                assert_eq!(tr.actions.len(), if tr.success { c } else { 10 });
                tr.replay().unwrap();
            }
        }
        let t = sweep(&[&Shortest, &Shuttle], &w, &cfg).unwrap();
        for r in &t.rows {
            let want = if r.agent == "shortest" { 1.0 } else { 0.0 };
            assert_eq!(r.sr, want, "{r:?}");
        }
    }

    #[test]
    fn away_agent_earns_only_penalties() {
        let w = world();
        let spec = w.spec(3);
        let task = AglTask::new(spec, Cell::new(2, 2), Cell::new(2, 4), 10).unwrap();
        let t = SuiteTask {
            task,
            world: Arc::new(WorldEmbeddings::new(&spec).unwrap()),
        };
        let tr = run_episode(&Away, &t, w.modality, PolicyMode::Argmax, &mut seed::rng_from(0)).unwrap();
        assert!(!tr.success);
        assert!(tr.rewards.iter().take(2).all(|&r| r == -1));
    }

    #[test]
    fn random_agent_matches_oracle_and_repeats() {
        let w = world();
        let cfg = EvalConfig {
            worlds: 1000,
            trials: 1,
            distances: vec![6, 8],
            ..EvalConfig::default()
        };
        // Argmax is requested; the random agent samples anyway.
        assert_eq!(cfg.mode, PolicyMode::Argmax);
        let t = success_ratio(&RandomAgent, &w, &cfg).unwrap();
        let grid = w.grid().unwrap();
        for r in &t.rows {
            let exact = random_policy_sr_exact(grid, r.distance, 10, RandomWalkConvention::MaskedUniform).unwrap();
            // 5000 episodes: four standard errors is about 0.01 here.
            assert!((r.sr - exact).abs() < 0.015, "{r:?} vs {exact}");
        }
        let suite = task_suite(&w, &cfg, 6, 0).unwrap();
        let mut a = seed::rng_from(5);
        let mut b = seed::rng_from(5);
        let ta = run_episode(&RandomAgent, &suite[0], w.modality, PolicyMode::Stochastic, &mut a).unwrap();
        let tb = run_episode(&RandomAgent, &suite[0], w.modality, PolicyMode::Stochastic, &mut b).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn suite_runner_matches_single_episodes() {
        let (w, cfg) = (world(), EvalConfig { mode: PolicyMode::Stochastic, ..cfg() });
        let suite = task_suite(&w, &cfg, 5, 1).unwrap();
        let traces = run_suite(&RandomAgent, &suite, &w, &cfg, 5, 1).unwrap();
        for (i, (t, tr)) in suite.iter().zip(&traces).enumerate() {
            let mut rng = episode_rng(&cfg, "random", 5, 1, i);
            assert_eq!(&run_episode(&RandomAgent, t, w.modality, cfg.mode, &mut rng).unwrap(), tr);
        }
    }

    #[test]
    fn table_counts_and_round_trip() {
        struct Named(&'static str);
        impl Agent for Named {
            fn name(&self) -> &str {
                self.0
            }
            fn policy(&self, eps: &[&Episode]) -> Result<Vec<Distribution>> {
                RandomAgent.policy(eps)
            }
        }
        let w = world();
        let cfg = EvalConfig {
            worlds: 4,
            trials: 3,
            ..EvalConfig::default()
        };
        let t = sweep(&[&Named("a"), &Named("b")], &w, &cfg).unwrap();
        assert_eq!(t.rows.len(), 30);
        assert_eq!(t.aggregates().values().map(|m| m.len()).sum::<usize>(), 10);
        for r in &t.rows {
            assert_eq!(r.total, 20);
            assert_eq!(r.sr, r.successes as f64 / r.total as f64);
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sr.csv");
        t.write_csv(&p).unwrap();
        assert_eq!(SrTable::read_csv(&p).unwrap(), t);
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("agent,C,B,trial,successes,total,sr\n"));
        let p2 = dir.path().join("again.csv");
        sweep(&[&Named("a"), &Named("b")], &w, &cfg).unwrap().write_csv(&p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());

        let j = dir.path().join("sr.json");
        t.write_json(&j).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&j).unwrap()).unwrap();
        assert!(v["a"]["6"]["median"].is_number());
    }

    #[test]
    fn box_stats() {
        let s = BoxStats::of(&[0.4, 0.1, 0.3, 0.2]);
        assert_eq!((s.min, s.max), (0.1, 0.4));
        assert!((s.mean - 0.25).abs() < 1e-12);
        assert!((s.median - 0.25).abs() < 1e-12);
        assert!((s.q1 - 0.175).abs() < 1e-12);
        assert!((s.q3 - 0.325).abs() < 1e-12);
        assert_eq!(BoxStats::of(&[0.5]).q1, 0.5);
    }

    #[test]
    fn budget_monotone_for_random() {
        let w = world();
        for c in [4, 6] {
            let mut last = 0.0;
            for b in [c, c + 2, c + 4, c + 6, c + 8] {
                let cfg = EvalConfig {
                    worlds: 40,
                    trials: 1,
                    distances: vec![c],
                    budget: Some(b),
                    mode: PolicyMode::Stochastic,
                    ..EvalConfig::default()
                };
                let sr = success_ratio(&RandomAgent, &w, &cfg).unwrap().rows[0].sr;
                assert!(sr >= last, "C={c} B={b}: {sr} < {last}");
                last = sr;
            }
        }
    }

    #[test]
    fn traces_export_and_replay() {
        let w = world();
        let cfg = EvalConfig {
            mode: PolicyMode::Stochastic,
            ..cfg()
        };
        let suite = task_suite(&w, &cfg, 7, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for (i, t) in suite.iter().take(20).enumerate() {
            let tr = run_episode(&RandomAgent, t, w.modality, cfg.mode, &mut seed::rng_from(i as u64)).unwrap();
            let p = dir.path().join(format!("t{i}.json"));
            export_trace(&tr, &p).unwrap();
            let back = load_trace(&p).unwrap();
            assert_eq!(back, tr);
            back.replay().unwrap();
            assert!(back.path.iter().all(|c| c.row < 5 && c.col < 5));
            let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
            assert!(v["rewards"].is_array());
        }
        let mut bad = run_episode(&RandomAgent, &suite[0], w.modality, cfg.mode, &mut seed::rng_from(1)).unwrap();
        bad.rewards[0] = 2;
        assert!(bad.replay().is_err());
    }

    #[test]
    fn order_helper() {
        let mk = |agent: &str, sr: f64| SrRow {
            agent: agent.into(),
            distance: 6,
            budget: 10,
            trial: 0,
            successes: 0,
            total: 1,
            sr,
        };
        let t = SrTable {
            rows: vec![mk("a", 0.5), mk("b", 0.5), mk("c", 0.6)],
        };
        assert!(assert_sr_order(&t, &["a", "b"], &[6]).is_ok());
        let err = assert_sr_order(&t, &["a", "b", "c"], &[6]).unwrap_err();
        assert!(err.contains("b 0.5000 < c 0.6000"), "{err}");
        assert!(assert_sr_order(&t, &["a", "z"], &[6]).is_err());
    }
}
