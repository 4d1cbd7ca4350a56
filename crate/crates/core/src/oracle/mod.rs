//! Ground truth: optimal-action sets, labelled random trajectories, optimal
//! demonstrations, the exact random-policy oracle, synthetic embeddings and
//! goal-direction categories.

pub mod embed;
pub mod gradient;
pub mod random_walk;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::env::{action_mask, l2sq, Action, ActionMask, AglTask, Cell, GridSpec, TaskRecord, NUM_ACTIONS};
use crate::error::{Error, Result};

pub use embed::{gen_goal_embedding, gen_patch_embedding, GoalModality, PatchEmbedding, WorldEmbeddings, FREQUENCIES};
pub use gradient::{reduced_direction, GradientCategory, GradientTable};
pub use random_walk::{random_policy_sr_exact, RandomWalkConvention};

/// Valid actions that strictly reduce squared distance to the goal. For unit
/// axis moves this is the same set as the actions reducing Manhattan
/// distance.
pub fn optimal_mask(current: Cell, goal: Cell, grid: GridSpec) -> Result<ActionMask> {
    if current == goal {
        return Err(Error::InvalidTask(format!(
            "optimal actions are undefined on the goal cell ({}, {})",
            goal.row, goal.col
        )));
    }
    let valid = action_mask(grid, current)?;
    let here = l2sq(current, goal);
    let mut out = [false; NUM_ACTIONS];
    for a in Action::ALL {
        if valid[a.index()] {
            let next = current.displaced(a, grid).expect("valid action stays in grid");
            out[a.index()] = l2sq(next, goal) < here;
        }
    }
    Ok(out)
}

pub fn optimal_actions(current: Cell, goal: Cell, grid: GridSpec) -> Result<Vec<Action>> {
    let mask = optimal_mask(current, goal, grid)?;
    Ok(Action::ALL.into_iter().filter(|a| mask[a.index()]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimalLabel {
    pub step: usize,
    pub mask: ActionMask,
}

/// Cell/action sequence of one walk. `cells.len() == actions.len() + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomTrajectory {
    pub task: AglTask,
    pub cells: Vec<Cell>,
    pub actions: Vec<Action>,
}

impl RandomTrajectory {
    pub fn validate(&self) -> Result<()> {
        let grid = self.task.grid();
        if self.cells.len() != self.actions.len() + 1 {
            return Err(Error::InvalidTask(format!(
                "{} cells for {} actions",
                self.cells.len(),
                self.actions.len()
            )));
        }
        if self.cells[0] != self.task.start {
            return Err(Error::InvalidTask("trajectory does not begin at the start cell".into()));
        }
        for (i, a) in self.actions.iter().enumerate() {
            let next = crate::env::apply_action(self.cells[i], *a, grid)?;
            if next != self.cells[i + 1] {
                return Err(Error::InvalidTask(format!("step {i} does not follow its action")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// One label per off-goal step; steps standing on the goal carry none.
pub fn label_trajectory(traj: &RandomTrajectory) -> Vec<OptimalLabel> {
    let grid = traj.task.grid();
    traj.cells
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != traj.task.goal)
        .map(|(step, &c)| OptimalLabel {
            step,
            mask: optimal_mask(c, traj.task.goal, grid).expect("cell is off-goal and in grid"),
        })
        .collect()
}

fn pick(mask: &ActionMask, rng: &mut impl rand::Rng) -> Action {
    let choices: Vec<Action> = Action::ALL.into_iter().filter(|a| mask[a.index()]).collect();
    choices[rng.random_range(0..choices.len())]
}

/// Uniform random walk of `length` moves from the task start. The walk may
/// cross or sit on the goal; it does not stop there.
pub fn gen_random_trajectory(task: &AglTask, length: usize, rng: &mut impl rand::Rng) -> Result<RandomTrajectory> {
    if length == 0 {
        return Err(Error::InvalidTask("trajectory length must be at least 1".into()));
    }
    let grid = task.grid();
    let mut cells = vec![task.start];
    let mut actions = Vec::with_capacity(length);
    for _ in 0..length {
        let here = *cells.last().expect("non-empty");
        let a = pick(&action_mask(grid, here)?, rng);
        actions.push(a);
        cells.push(here.displaced(a, grid).expect("picked a valid action"));
    }
    Ok(RandomTrajectory {
        task: *task,
        cells,
        actions,
    })
}

/// A shortest start-to-goal path, breaking ties uniformly at random.
pub fn gen_optimal_trajectory(task: &AglTask, rng: &mut impl rand::Rng) -> Result<RandomTrajectory> {
    let grid = task.grid();
    let mut cells = vec![task.start];
    let mut actions = Vec::new();
    while let Some(&here) = cells.last().filter(|&&c| c != task.goal) {
        let a = pick(&optimal_mask(here, task.goal, grid)?, rng);
        actions.push(a);
        cells.push(here.displaced(a, grid).expect("optimal actions are valid"));
    }
    Ok(RandomTrajectory {
        task: *task,
        cells,
        actions,
    })
}

/// One line of a labelled-trajectory dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub task: TaskRecord,
    pub cells: Vec<[usize; 2]>,
    pub actions: Vec<Action>,
    pub labels: Vec<OptimalLabel>,
}

impl TrajectoryRecord {
    pub fn from_trajectory(traj: &RandomTrajectory) -> Self {
        TrajectoryRecord {
            task: TaskRecord::from_task(&traj.task),
            cells: traj.cells.iter().map(|&c| c.into()).collect(),
            actions: traj.actions.clone(),
            labels: label_trajectory(traj),
        }
    }

    /// Rebuild and re-validate, including the labels.
    pub fn into_trajectory(self, embed_dim: usize, noise_sigma: f32) -> Result<RandomTrajectory> {
        let traj = RandomTrajectory {
            task: self.task.into_task(embed_dim, noise_sigma)?,
            cells: self.cells.into_iter().map(Cell::from).collect(),
            actions: self.actions,
        };
        traj.validate()?;
        if label_trajectory(&traj) != self.labels {
            return Err(Error::InvalidTask("stored labels disagree with the oracle".into()));
        }
        Ok(traj)
    }
}

pub fn write_trajectories<W: Write>(mut out: W, trajs: &[RandomTrajectory]) -> Result<()> {
    for t in trajs {
        serde_json::to_writer(&mut out, &TrajectoryRecord::from_trajectory(t))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trajectories<R: BufRead>(input: R, embed_dim: usize, noise_sigma: f32) -> Result<Vec<RandomTrajectory>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("dataset line {}: {e}", lineno + 1)))?;
        out.push(rec.into_trajectory(embed_dim, noise_sigma)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{manhattan, WorldSpec, WorldStyle};
    use crate::seed;

    fn world() -> WorldSpec {
        WorldSpec {
            grid: GridSpec::new(5, 5).unwrap(),
            seed: 2,
            style: WorldStyle::InformativeGradient,
            embed_dim: 16,
            noise_sigma: 0.2,
        }
    }

    fn task(start: Cell, goal: Cell) -> AglTask {
        AglTask::new(world(), start, goal, 10).unwrap()
    }

    #[test]
    fn optimal_action_examples() {
        let g = world().grid;
        assert_eq!(
            optimal_actions(Cell::new(2, 2), Cell::new(0, 0), g).unwrap(),
            vec![Action::Up, Action::Left]
        );
        assert_eq!(optimal_actions(Cell::new(2, 0), Cell::new(0, 0), g).unwrap(), vec![Action::Up]);
        assert!(optimal_actions(Cell::new(1, 1), Cell::new(1, 1), g).is_err());
    }

    #[test]
    fn single_step_label() {
        let t = RandomTrajectory {
            task: task(Cell::new(2, 2), Cell::new(0, 0)),
            cells: vec![Cell::new(2, 2), Cell::new(1, 2)],
            actions: vec![Action::Up],
        };
        let labels = label_trajectory(&t);
        assert_eq!(labels[0], OptimalLabel { step: 0, mask: [true, false, true, false] });
        assert_eq!(labels.len(), 2);
    }

    #[test]
    fn goal_steps_are_unlabelled() {
        let t = RandomTrajectory {
            task: task(Cell::new(0, 0), Cell::new(0, 1)),
            cells: vec![Cell::new(0, 0), Cell::new(0, 1), Cell::new(0, 0)],
            actions: vec![Action::Right, Action::Left],
        };
        let steps: Vec<usize> = label_trajectory(&t).iter().map(|l| l.step).collect();
        assert_eq!(steps, vec![0, 2]);
    }

    #[test]
    fn random_trajectory_determinism_and_bounds() {
        let t = task(Cell::new(2, 2), Cell::new(0, 4));
        let a = gen_random_trajectory(&t, 50, &mut seed::rng_from(3)).unwrap();
        let b = gen_random_trajectory(&t, 50, &mut seed::rng_from(3)).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert!(gen_random_trajectory(&t, 0, &mut seed::rng_from(3)).is_err());
        let mut rng = seed::rng_from(8);
        for _ in 0..1000 {
            let tr = gen_random_trajectory(&t, 12, &mut rng).unwrap();
            assert!(tr.cells.iter().all(|&c| t.grid().contains(c)));
        }
    }

    #[test]
    fn optimal_trajectory_examples() {
        let mut rng = seed::rng_from(1);
        let tr = gen_optimal_trajectory(&task(Cell::new(0, 0), Cell::new(0, 3)), &mut rng).unwrap();
        assert_eq!(tr.actions, vec![Action::Right; 3]);
        let tr = gen_optimal_trajectory(&task(Cell::new(0, 0), Cell::new(2, 2)), &mut rng).unwrap();
        assert_eq!(tr.len(), 4);
        for w in tr.cells.windows(2) {
            assert_eq!(manhattan(w[1], tr.task.goal) + 1, manhattan(w[0], tr.task.goal));
        }
    }

    #[test]
    fn dataset_round_trip_and_label_check() {
        let mut rng = seed::rng_from(5);
        let trajs: Vec<RandomTrajectory> = (0..5)
            .map(|_| gen_random_trajectory(&task(Cell::new(1, 1), Cell::new(3, 4)), 10, &mut rng).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &trajs).unwrap();
        assert_eq!(read_trajectories(&buf[..], 16, 0.2).unwrap(), trajs);

        let mut rec = TrajectoryRecord::from_trajectory(&trajs[0]);
        rec.labels[0].mask = [true; 4];
        let line = serde_json::to_string(&rec).unwrap();
        assert!(read_trajectories(line.as_bytes(), 16, 0.2).is_err());
    }
}
