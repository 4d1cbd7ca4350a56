use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{gather_rows, scatter_add_rows, GaspModel, GaspNet};
use super::tokens::{encode_tokens, TokenBatch, TokenSequence};
use super::GaspConfig;
use crate::config::WorldConfig;
use crate::env::{action_mask, manhattan, sample_training_task, ActionMask, AglTask, Cell, WorldSpec, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::nn::loss::bce_with_logits;
use crate::nn::{AdamConfig, AdamState, ParamSet, Real, Tensor};
use crate::oracle::{gen_optimal_trajectory, gen_random_trajectory, label_trajectory, RandomTrajectory, WorldEmbeddings};
use crate::seed;

/// A token sequence with its per-step supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct GaspExample {
    pub tokens: TokenSequence,
    pub cells: Vec<Cell>,
    pub goal: Cell,
    /// Optimal-action set per observation; `None` where the walk stands on the goal.
    pub labels: Vec<Option<ActionMask>>,
    pub valid: Vec<ActionMask>,
}

pub fn make_example(traj: &RandomTrajectory, world: &WorldEmbeddings, world_cfg: &WorldConfig) -> Result<GaspExample> {
    let goal = world.goal(traj.task.goal, world_cfg.modality);
    let tokens = encode_tokens(traj, world, &goal)?;
    let mut labels = vec![None; traj.cells.len()];
    for l in label_trajectory(traj) {
        labels[l.step] = Some(l.mask);
    }
    let grid = traj.task.grid();
    let valid = traj
        .cells
        .iter()
        .map(|&c| action_mask(grid, c))
        .collect::<Result<_>>()?;
    Ok(GaspExample {
        tokens,
        cells: traj.cells.clone(),
        goal: traj.task.goal,
        labels,
        valid,
    })
}

/// Where training sequences come from: random walks (GASP) or optimal
/// demonstrations (RPG, behaviour cloning) on the world pool of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct GaspDatasetSpec {
    pub world: WorldConfig,
    /// Moves per random walk.
    pub seq_len: usize,
    pub seed: u64,
}

impl GaspDatasetSpec {
    pub fn new(world: &WorldConfig, seq_len: usize, seed: u64) -> Self {
        GaspDatasetSpec {
            world: world.clone(),
            seq_len,
            seed,
        }
    }

    fn walk_on(&self, spec: WorldSpec, rng: &mut seed::Rng) -> Result<RandomTrajectory> {
        let grid = spec.grid;
        let goal = grid.cell_at(rng.random_range(0..grid.len()));
        let start = loop {
            let c = grid.cell_at(rng.random_range(0..grid.len()));
            if c != goal {
                break c;
            }
        };
        let budget = self.world.budget.max(manhattan(start, goal));
        let task = AglTask::new(spec, start, goal, budget)?;
        gen_random_trajectory(&task, self.seq_len, rng)
    }

    fn demo_on(&self, spec: WorldSpec, rng: &mut seed::Rng) -> Result<RandomTrajectory> {
        let w = &self.world;
        let task = sample_training_task(spec, &w.train_distances, w.budget, w.sampling, rng)?;
        gen_optimal_trajectory(&task, rng)
    }

    fn pool_world(&self, rng: &mut seed::Rng) -> WorldSpec {
        self.world.train_spec(self.seed, rng.random_range(0..self.world.train_worlds))
    }

    fn example(&self, traj: &RandomTrajectory) -> Result<GaspExample> {
        make_example(traj, &WorldEmbeddings::new(&traj.task.world)?, &self.world)
    }

    /// Random walk number `index` on a pool world.
    pub fn train_walk(&self, index: u64) -> Result<RandomTrajectory> {
        let mut rng = seed::rng(self.seed, "gasp-walk", &[index]);
        let spec = self.pool_world(&mut rng);
        self.walk_on(spec, &mut rng)
    }

    /// Optimal demonstration number `index` on a pool world.
    pub fn train_demo(&self, index: u64) -> Result<RandomTrajectory> {
        let mut rng = seed::rng(self.seed, "gasp-demo", &[index]);
        let spec = self.pool_world(&mut rng);
        self.demo_on(spec, &mut rng)
    }

    pub fn holdout_walk(&self, index: u64, worlds: usize) -> Result<RandomTrajectory> {
        let mut rng = seed::rng(self.seed, "gasp-holdout-walk", &[index]);
        self.walk_on(self.world.holdout_spec(self.seed, index as usize % worlds), &mut rng)
    }

    pub fn holdout_demo(&self, index: u64, worlds: usize) -> Result<RandomTrajectory> {
        let mut rng = seed::rng(self.seed, "gasp-holdout-demo", &[index]);
        self.demo_on(self.world.holdout_spec(self.seed, index as usize % worlds), &mut rng)
    }

    /// Labelled examples for indices `range`, built in parallel.
    pub fn examples<F>(&self, range: std::ops::Range<u64>, gen: F) -> Result<Vec<GaspExample>>
    where
        F: Fn(&Self, u64) -> Result<RandomTrajectory> + Sync,
    {
        range
            .into_par_iter()
            .map(|i| self.example(&gen(self, i)?))
            .collect()
    }
}

/// Tokens plus multi-label targets at every observation slot.
pub struct LabelledBatch<T> {
    pub tokens: TokenBatch<T>,
    /// `[batch * n_obs, 4]`.
    pub targets: Tensor<T>,
    /// Entries entering the loss: labelled steps, valid actions only.
    pub loss_mask: Vec<bool>,
}

pub fn labelled_batch<T: Real>(examples: &[&GaspExample]) -> Result<LabelledBatch<T>> {
    let seqs: Vec<&TokenSequence> = examples.iter().map(|e| &e.tokens).collect();
    let tokens = TokenBatch::from_sequences(&seqs)?;
    let n = tokens.n_obs;
    let mut targets = Tensor::zeros(&[examples.len() * n, NUM_ACTIONS]);
    let mut loss_mask = vec![false; examples.len() * n * NUM_ACTIONS];
    for (b, ex) in examples.iter().enumerate() {
        if ex.labels.len() != ex.tokens.num_obs() || ex.valid.len() != ex.tokens.num_obs() {
            return Err(Error::Shape("labels do not match observations".into()));
        }
        for (i, label) in ex.labels.iter().enumerate() {
            let Some(label) = label else { continue };
            let r = b * n + i;
            for a in 0..NUM_ACTIONS {
                targets.row_mut(r)[a] = if label[a] { T::one() } else { T::zero() };
                loss_mask[r * NUM_ACTIONS + a] = ex.valid[i][a];
            }
        }
    }
    Ok(LabelledBatch {
        tokens,
        targets,
        loss_mask,
    })
}

/// Multi-label BCE of the action head at observation slots. With
/// `with_grad`, gradients are accumulated into `ps`.
pub fn gasp_loss<T: Real>(net: &GaspNet, ps: &mut ParamSet<T>, batch: &LabelledBatch<T>, with_grad: bool) -> Result<T> {
    let pass = net.forward(ps, &batch.tokens)?;
    let rows = batch.tokens.obs_rows();
    let h = gather_rows(&pass.hidden, &rows);
    let logits = net.action_logits(ps, &h)?;
    let (loss, dlogits) = bce_with_logits(&logits, &batch.targets, &batch.loss_mask)?;
    if with_grad {
        let dh = net.action_head_backward(ps, &h, &dlogits);
        let mut d_hidden = Tensor::zeros(pass.hidden.shape());
        scatter_add_rows(&mut d_hidden, &rows, &dh);
        net.backward(ps, &batch.tokens, &pass, &d_hidden);
    }
    Ok(loss)
}

/// Best valid action under `logits`; ties go to the lowest index.
pub fn masked_argmax<T: Real>(logits: &[T], valid: &ActionMask) -> usize {
    let mut best = None;
    for a in 0..NUM_ACTIONS {
        if valid[a] && best.is_none_or(|b: usize| logits[a] > logits[b]) {
            best = Some(a);
        }
    }
    best.expect("every cell has a valid action")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaspAccuracy {
    /// Exact match (argmax in the optimal set) with the whole history visible.
    pub full: f64,
    /// The same with every step seen as goal plus current observation only.
    pub masked: f64,
    /// Full-history accuracy by step index.
    pub per_step: Vec<f64>,
}

const EVAL_CHUNK: usize = 250;

fn count_hits(model: &GaspModel, examples: &[GaspExample], history: bool) -> Result<Vec<(usize, usize)>> {
    let steps = examples.iter().map(|e| e.tokens.num_obs()).max().unwrap_or(0);
    let partial: Vec<Vec<(usize, usize)>> = examples
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let mut tally = vec![(0, 0); steps];
            if history {
                let refs: Vec<&GaspExample> = chunk.iter().collect();
                let batch = labelled_batch::<f32>(&refs)?;
                let logits = model.step_logits(&batch.tokens)?;
                for (b, ex) in chunk.iter().enumerate() {
                    for (i, label) in ex.labels.iter().enumerate() {
                        if let Some(label) = label {
                            let a = masked_argmax(logits.row(b * batch.tokens.n_obs + i), &ex.valid[i]);
                            tally[i].0 += label[a] as usize;
                            tally[i].1 += 1;
                        }
                    }
                }
            } else {
                for (i, t) in tally.iter_mut().enumerate() {
                    let picked: Vec<(&GaspExample, TokenSequence)> = chunk
                        .iter()
                        .filter(|e| e.labels.get(i).is_some_and(|l| l.is_some()))
                        .map(|e| (e, e.tokens.current_only(i)))
                        .collect();
                    if picked.is_empty() {
                        continue;
                    }
                    let seqs: Vec<&TokenSequence> = picked.iter().map(|(_, s)| s).collect();
                    let logits = model.step_logits(&TokenBatch::from_sequences(&seqs)?)?;
                    for (b, (ex, _)) in picked.iter().enumerate() {
                        let a = masked_argmax(logits.row(b), &ex.valid[i]);
                        t.0 += ex.labels[i].expect("filtered")[a] as usize;
                        t.1 += 1;
                    }
                }
            }
            Ok(tally)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![(0, 0); steps];
    for tally in partial {
        for (t, p) in total.iter_mut().zip(tally) {
            t.0 += p.0;
            t.1 += p.1;
        }
    }
    Ok(total)
}

fn ratio(hits: usize, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        hits as f64 / count as f64
    }
}

/// Fraction of labelled steps whose argmax action is optimal.
pub fn full_history_accuracy(model: &GaspModel, examples: &[GaspExample]) -> Result<f64> {
    let t = count_hits(model, examples, true)?;
    Ok(ratio(t.iter().map(|x| x.0).sum(), t.iter().map(|x| x.1).sum()))
}

pub fn gasp_accuracy(model: &GaspModel, examples: &[GaspExample]) -> Result<GaspAccuracy> {
    let full = count_hits(model, examples, true)?;
    let masked = count_hits(model, examples, false)?;
    let sum = |t: &[(usize, usize)]| ratio(t.iter().map(|x| x.0).sum(), t.iter().map(|x| x.1).sum());
    Ok(GaspAccuracy {
        full: sum(&full),
        masked: sum(&masked),
        per_step: full.iter().map(|&(h, n)| ratio(h, n)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    /// Mean training loss since the previous point.
    pub loss: f64,
    pub holdout_acc: f64,
}

pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Adam loop shared by every sequence-model objective. `loss_at(net, ps,
/// step)` must accumulate gradients and return the loss.
pub(crate) fn fit<F, H>(
    model: &mut GaspModel,
    steps: usize,
    lr: f64,
    log_every: usize,
    mut loss_at: F,
    mut holdout: H,
) -> Result<Vec<CurvePoint>>
where
    F: FnMut(&GaspNet, &mut ParamSet<f32>, usize) -> Result<f32>,
    H: FnMut(&GaspModel) -> Result<f64>,
{
    let mut adam = AdamState::new(AdamConfig::with_lr(lr), &model.params);
    let mut curve = Vec::new();
    let (mut acc, mut n) = (0.0, 0usize);
    for step in 0..steps {
        let loss = loss_at(&model.net, &mut model.params, step)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step}")));
        }
        adam.step(&mut model.params)?;
        acc += loss as f64;
        n += 1;
        if (step + 1) % log_every.max(1) == 0 || step + 1 == steps {
            curve.push(CurvePoint {
                step: step + 1,
                loss: acc / n as f64,
                holdout_acc: holdout(model)?,
            });
            (acc, n) = (0.0, 0);
        }
    }
    Ok(curve)
}

pub struct TrainedModel {
    pub model: GaspModel,
    pub curve: Vec<CurvePoint>,
}

/// Held-out random walks for measuring a GASP model.
pub fn gasp_holdout(world: &WorldConfig, cfg: &GaspConfig, run_seed: u64) -> Result<Vec<GaspExample>> {
    let data = GaspDatasetSpec::new(world, cfg.seq_len, run_seed);
    data.examples(0..cfg.holdout_sequences as u64, |d, i| d.holdout_walk(i, cfg.holdout_worlds))
}

pub fn train_gasp(world: &WorldConfig, cfg: &GaspConfig, run_seed: u64) -> Result<TrainedModel> {
    world.validate()?;
    cfg.validate()?;
    let data = GaspDatasetSpec::new(world, cfg.seq_len, run_seed);
    let holdout = gasp_holdout(world, cfg, run_seed)?;
    let mut model = GaspModel::new(world.embed_dim, cfg.model, None, seed::derive(run_seed, "gasp", &[]));
    let bs = cfg.batch_size as u64;
    let curve = fit(
        &mut model,
        cfg.steps,
        cfg.lr,
        cfg.log_every,
        |net, ps, step| {
            let s = step as u64;
            let examples = data.examples(s * bs..(s + 1) * bs, GaspDatasetSpec::train_walk)?;
            let refs: Vec<&GaspExample> = examples.iter().collect();
            gasp_loss(net, ps, &labelled_batch(&refs)?, true)
        },
        |m| full_history_accuracy(m, &holdout),
    )?;
    Ok(TrainedModel { model, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gasp::ModelConfig;
    use crate::nn::finite_diff_check;

    fn world() -> WorldConfig {
        WorldConfig {
            embed_dim: 12,
            train_worlds: 50,
            ..WorldConfig::default()
        }
    }

    fn tiny() -> GaspConfig {
        GaspConfig {
            model: ModelConfig {
                d_model: 8,
                heads: 2,
                layers: 1,
            },
            seq_len: 3,
            batch_size: 4,
            steps: 0,
            holdout_worlds: 3,
            holdout_sequences: 20,
            ..GaspConfig::default()
        }
    }

    #[test]
    fn labels_match_the_oracle() {
        let data = GaspDatasetSpec::new(&world(), 10, 5);
        let examples = data.examples(0..100, GaspDatasetSpec::train_walk).unwrap();
        let mut checked = 0;
        for ex in &examples {
            assert_eq!(ex.tokens.num_obs(), 11);
            for (i, &c) in ex.cells.iter().enumerate() {
                if c == ex.goal {
                    assert!(ex.labels[i].is_none());
                    continue;
                }
                let grid = world().grid().unwrap();
                let opt = crate::oracle::optimal_actions(c, ex.goal, grid).unwrap();
                let label = ex.labels[i].unwrap();
                assert!(crate::env::Action::ALL.iter().all(|a| label[a.index()] == opt.contains(a)));
                checked += 1;
            }
        }
        assert!(checked >= 1000, "{checked}");
    }

    #[test]
    fn saturated_logits_give_near_zero_loss() {
        let data = GaspDatasetSpec::new(&world(), 4, 1);
        let examples = data.examples(0..6, GaspDatasetSpec::train_walk).unwrap();
        let refs: Vec<&GaspExample> = examples.iter().collect();
        let batch = labelled_batch::<f64>(&refs).unwrap();
        let logits = batch.targets.data().iter().map(|&y| if y > 0.5 { 20.0 } else { -20.0 });
        let logits = Tensor::from_vec(batch.targets.shape(), logits.collect()).unwrap();
        let (good, _) = bce_with_logits(&logits, &batch.targets, &batch.loss_mask).unwrap();
        assert!(good < 1e-6, "{good}");
        let inverted = Tensor::from_vec(logits.shape(), logits.data().iter().map(|v| -v).collect()).unwrap();
        let (bad, _) = bce_with_logits(&inverted, &batch.targets, &batch.loss_mask).unwrap();
        assert!(bad > 10.0, "{bad}");
    }

    #[test]
    fn untrained_loss_is_near_ln2() {
        let data = GaspDatasetSpec::new(&world(), 10, 2);
        let mut total = 0.0;
        for s in 0..5 {
            let mut model = GaspModel::<f64>::new(12, ModelConfig::default(), None, s);
            let examples = data.examples(s * 16..(s + 1) * 16, GaspDatasetSpec::train_walk).unwrap();
            let refs: Vec<&GaspExample> = examples.iter().collect();
            let batch = labelled_batch(&refs).unwrap();
            total += gasp_loss(&model.net, &mut model.params, &batch, false).unwrap();
        }
        let mean = total / 5.0;
        assert!((mean - std::f64::consts::LN_2).abs() < 0.1, "{mean}");
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let data = GaspDatasetSpec::new(&world(), 3, 8);
        let examples = data.examples(0..2, GaspDatasetSpec::train_walk).unwrap();
        let refs: Vec<&GaspExample> = examples.iter().collect();
        let batch = labelled_batch::<f64>(&refs).unwrap();
        let mut model = GaspModel::<f64>::new(12, tiny().model, None, 3);
        let net = model.net.clone();
        let report = finite_diff_check(&mut model.params, 1e-5, 400, 1, |ps, g| {
            gasp_loss(&net, ps, &batch, g).unwrap()
        });
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }

    #[test]
    fn zero_steps_leaves_the_init() {
        let cfg = tiny();
        let run = train_gasp(&world(), &cfg, 4).unwrap();
        let init = GaspModel::<f32>::new(12, cfg.model, None, seed::derive(4, "gasp", &[]));
        assert_eq!(run.model.fingerprint(), init.fingerprint());
        assert!(run.curve.is_empty());
    }

    #[test]
    fn short_training_is_deterministic() {
        let cfg = GaspConfig {
            steps: 6,
            log_every: 3,
            ..tiny()
        };
        let a = train_gasp(&world(), &cfg, 4).unwrap();
        let b = train_gasp(&world(), &cfg, 4).unwrap();
        assert_eq!(a.model.fingerprint(), b.model.fingerprint());
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.curve.len(), 2);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        write_curve(&path, &a.curve).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,loss,holdout_acc\n"));
    }

    #[test]
    fn accuracy_counts_only_labelled_steps() {
        let cfg = tiny();
        let holdout = gasp_holdout(&world(), &cfg, 1).unwrap();
        let model = GaspModel::new(12, cfg.model, None, 1);
        let acc = gasp_accuracy(&model, &holdout).unwrap();
        assert_eq!(acc.per_step.len(), 4);
        assert!((0.0..=1.0).contains(&acc.full) && (0.0..=1.0).contains(&acc.masked));
        // Step 0 sees no history, so both views agree there.
        let first: Vec<GaspExample> = holdout
            .iter()
            .map(|e| GaspExample {
                tokens: e.tokens.prefix(1),
                cells: e.cells[..1].to_vec(),
                labels: e.labels[..1].to_vec(),
                valid: e.valid[..1].to_vec(),
                goal: e.goal,
            })
            .collect();
        let acc = gasp_accuracy(&model, &first).unwrap();
        assert_eq!(acc.full, acc.masked);
    }
}
