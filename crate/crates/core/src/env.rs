//! Grid environment: cells, actions, transitions, rewards and task sampling.
//!
//! The search area is an `rows x cols` grid indexed row-major from the
//! top-left cell. The agent starts at `start`, must occupy `goal` within
//! `budget` moves, and only ever sees the content of the cell it stands on.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidTask(format!(
                "grid must be at least 2x2, got {rows}x{cols}"
            )));
        }
        Ok(Self { rows, cols })
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.row < self.rows && cell.col < self.cols
    }

    pub fn check(&self, cell: Cell) -> Result<()> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(Error::CellOutOfGrid {
                row: cell.row,
                col: cell.col,
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest Manhattan distance between two cells.
    pub fn diameter(&self) -> usize {
        self.rows - 1 + self.cols - 1
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.cols + cell.col
    }

    /// Inverse of [`GridSpec::index`].
    pub fn cell_at(&self, index: usize) -> Cell {
        Cell {
            row: index / self.cols,
            col: index % self.cols,
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.rows).flat_map(move |row| (0..self.cols).map(move |col| Cell { row, col }))
    }
}

impl std::fmt::Display for GridSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl std::str::FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Config(format!("grid must look like 5x5, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad grid dimension {v:?}")))
        };
        GridSpec::new(parse(r)?, parse(c)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// The neighbouring cell in direction `action`, if it is inside `grid`.
    pub fn displaced(self, action: Action, grid: GridSpec) -> Option<Cell> {
        let (dr, dc) = action.delta();
        let row = self.row.checked_add_signed(dr)?;
        let col = self.col.checked_add_signed(dc)?;
        let next = Cell { row, col };
        grid.contains(next).then_some(next)
    }
}

impl From<[usize; 2]> for Cell {
    fn from(v: [usize; 2]) -> Self {
        Cell::new(v[0], v[1])
    }
}

impl From<Cell> for [usize; 2] {
    fn from(c: Cell) -> Self {
        [c.row, c.col]
    }
}

/// Movement in canonical top-view orientation. The declaration order is the
/// canonical action order used by every mask and logit vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

pub const NUM_ACTIONS: usize = 4;

/// Boolean vector over [`Action::ALL`].
pub type ActionMask = [bool; NUM_ACTIONS];

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    /// `(drow, dcol)` unit displacement.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }

    pub fn opposite(self) -> Action {
        match self {
            Action::Up => Action::Down,
            Action::Down => Action::Up,
            Action::Left => Action::Right,
            Action::Right => Action::Left,
        }
    }
}

pub fn action_mask(grid: GridSpec, cell: Cell) -> Result<ActionMask> {
    grid.check(cell)?;
    Ok(Action::ALL.map(|a| cell.displaced(a, grid).is_some()))
}

/// Actions that keep the agent inside the grid, in canonical order.
pub fn valid_actions(grid: GridSpec, cell: Cell) -> Result<Vec<Action>> {
    let mask = action_mask(grid, cell)?;
    Ok(Action::ALL.into_iter().filter(|a| mask[a.index()]).collect())
}

pub fn apply_action(cell: Cell, action: Action, grid: GridSpec) -> Result<Cell> {
    grid.check(cell)?;
    cell.displaced(action, grid).ok_or(Error::InvalidAction {
        action,
        row: cell.row,
        col: cell.col,
    })
}

/// Squared Euclidean distance between cell centres.
pub fn l2sq(a: Cell, b: Cell) -> usize {
    let dr = a.row.abs_diff(b.row);
    let dc = a.col.abs_diff(b.col);
    dr * dr + dc * dc
}

pub fn manhattan(a: Cell, b: Cell) -> usize {
    a.row.abs_diff(b.row) + a.col.abs_diff(b.col)
}

/// Dense shaping reward for the move `prev -> next`.
///
/// Reaching the goal gives +2. Otherwise a move that revisits a cell or ends
/// farther from the goal gives -1, and a move that ends closer gives +1.
/// Squared distance changes by an odd amount on every unit move, so there is
/// no tie case.
pub fn dense_reward(prev: Cell, next: Cell, goal: Cell, visited: &BTreeSet<Cell>) -> i32 {
    if next == goal {
        2
    } else if visited.contains(&next) || l2sq(next, goal) > l2sq(prev, goal) {
        -1
    } else {
        1
    }
}

pub fn sparse_reward(next: Cell, goal: Cell) -> i32 {
    i32::from(next == goal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    #[default]
    Dense,
    Sparse,
}

impl RewardKind {
    pub fn reward(self, prev: Cell, next: Cell, goal: Cell, visited: &BTreeSet<Cell>) -> i32 {
        match self {
            RewardKind::Dense => dense_reward(prev, next, goal, visited),
            RewardKind::Sparse => sparse_reward(next, goal),
        }
    }
}

/// How patch embeddings are generated for a world; see [`crate::oracle::embed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldStyle {
    Uninformative,
    InformativeGradient,
}

impl std::str::FromStr for WorldStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uninformative" => Ok(WorldStyle::Uninformative),
            "informative_gradient" | "informative" => Ok(WorldStyle::InformativeGradient),
            other => Err(Error::Config(format!("unknown world style {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub grid: GridSpec,
    pub seed: u64,
    pub style: WorldStyle,
    pub embed_dim: usize,
    pub noise_sigma: f32,
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        GridSpec::new(self.grid.rows, self.grid.cols)?;
        if self.embed_dim < 4 {
            return Err(Error::InvalidTask(format!(
                "embed_dim must be at least 4, got {}",
                self.embed_dim
            )));
        }
        if self.style == WorldStyle::InformativeGradient
            && self.embed_dim < crate::oracle::embed::POSITIONAL_DIM
        {
            return Err(Error::InvalidTask(format!(
                "informative worlds need embed_dim >= {}",
                crate::oracle::embed::POSITIONAL_DIM
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidTask(format!(
                "noise_sigma must be finite and non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// One localization episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AglTask {
    pub world: WorldSpec,
    pub start: Cell,
    pub goal: Cell,
    pub budget: usize,
    pub distance: usize,
}

impl AglTask {
    pub fn new(world: WorldSpec, start: Cell, goal: Cell, budget: usize) -> Result<Self> {
        let task = AglTask {
            world,
            start,
            goal,
            budget,
            distance: manhattan(start, goal),
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        let grid = self.world.grid;
        grid.check(self.start)?;
        grid.check(self.goal)?;
        if self.start == self.goal {
            return Err(Error::InvalidTask("start equals goal".into()));
        }
        if manhattan(self.start, self.goal) != self.distance {
            return Err(Error::InvalidTask(format!(
                "distance {} does not match manhattan(start, goal) = {}",
                self.distance,
                manhattan(self.start, self.goal)
            )));
        }
        if self.budget == 0 || self.distance > self.budget {
            return Err(Error::InvalidTask(format!(
                "budget {} cannot cover distance {}",
                self.budget, self.distance
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> GridSpec {
        self.world.grid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub next: Cell,
    pub reward: i32,
    pub done: bool,
    pub success: bool,
}

/// Value-semantics episode state. `path` is the ordered list of occupied
/// cells starting with the start cell; `visited` is the same set for lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub task: AglTask,
    pub current: Cell,
    pub steps_taken: usize,
    pub path: Vec<Cell>,
    pub visited: BTreeSet<Cell>,
    pub done: bool,
    pub success: bool,
}

impl EpisodeState {
    pub fn new(task: AglTask) -> Self {
        EpisodeState {
            task,
            current: task.start,
            steps_taken: 0,
            path: vec![task.start],
            visited: BTreeSet::from([task.start]),
            done: false,
            success: false,
        }
    }

    pub fn action_mask(&self) -> ActionMask {
        Action::ALL.map(|a| self.current.displaced(a, self.task.grid()).is_some())
    }

    /// Advance in place.
    pub fn advance(&mut self, action: Action, reward_kind: RewardKind) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let next = apply_action(self.current, action, self.task.grid())?;
        let reward = reward_kind.reward(self.current, next, self.task.goal, &self.visited);
        self.current = next;
        self.steps_taken += 1;
        self.path.push(next);
        self.visited.insert(next);
        self.success = next == self.task.goal;
        self.done = self.success || self.steps_taken == self.task.budget;
        Ok(StepOutcome {
            next,
            reward,
            done: self.done,
            success: self.success,
        })
    }

    pub fn step(&self, action: Action, reward_kind: RewardKind) -> Result<(EpisodeState, StepOutcome)> {
        let mut next = self.clone();
        let outcome = next.advance(action, reward_kind)?;
        Ok((next, outcome))
    }
}

/// All ordered `(start, goal)` pairs at Manhattan distance `distance`.
pub fn pairs_at_distance(grid: GridSpec, distance: usize) -> Vec<(Cell, Cell)> {
    let mut out = Vec::new();
    for s in grid.cells() {
        for g in grid.cells() {
            if manhattan(s, g) == distance {
                out.push((s, g));
            }
        }
    }
    out
}

fn check_feasible(grid: GridSpec, distance: usize, budget: usize) -> Result<()> {
    if distance == 0 || distance > grid.diameter() {
        return Err(Error::InfeasibleDistance {
            distance,
            rows: grid.rows,
            cols: grid.cols,
        });
    }
    if distance > budget {
        return Err(Error::InvalidTask(format!(
            "distance {distance} exceeds budget {budget}"
        )));
    }
    Ok(())
}

/// Draw a task uniformly over the ordered pairs at distance `distance`.
pub fn sample_task(
    world: WorldSpec,
    distance: usize,
    budget: usize,
    rng: &mut impl rand::Rng,
) -> Result<AglTask> {
    world.validate()?;
    check_feasible(world.grid, distance, budget)?;
    let pairs = pairs_at_distance(world.grid, distance);
    let (start, goal) = pairs[rng.random_range(0..pairs.len())];
    Ok(AglTask {
        world,
        start,
        goal,
        budget,
        distance,
    })
}

/// Distance distribution used to build training tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSampling {
    /// Draw the distance uniformly from the range, then a pair at that distance.
    #[default]
    UniformDistance,
    /// Draw uniformly over every pair whose distance lies in the range.
    UniformPair,
}

pub fn sample_training_task(
    world: WorldSpec,
    distances: &[usize],
    budget: usize,
    sampling: DistanceSampling,
    rng: &mut impl rand::Rng,
) -> Result<AglTask> {
    if distances.is_empty() {
        return Err(Error::InvalidTask("empty distance range".into()));
    }
    for &c in distances {
        check_feasible(world.grid, c, budget)?;
    }
    match sampling {
        DistanceSampling::UniformDistance => {
            let c = distances[rng.random_range(0..distances.len())];
            sample_task(world, c, budget, rng)
        }
        DistanceSampling::UniformPair => {
            world.validate()?;
            let pairs: Vec<(Cell, Cell)> = distances
                .iter()
                .flat_map(|&c| pairs_at_distance(world.grid, c))
                .collect();
            let (start, goal) = pairs[rng.random_range(0..pairs.len())];
            Ok(AglTask {
                world,
                start,
                goal,
                budget,
                distance: manhattan(start, goal),
            })
        }
    }
}

/// One line of a task file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    pub style: WorldStyle,
    pub start: [usize; 2],
    pub goal: [usize; 2],
    pub budget: usize,
    pub distance: usize,
}

impl TaskRecord {
    pub fn from_task(task: &AglTask) -> Self {
        TaskRecord {
            rows: task.world.grid.rows,
            cols: task.world.grid.cols,
            seed: task.world.seed,
            style: task.world.style,
            start: task.start.into(),
            goal: task.goal.into(),
            budget: task.budget,
            distance: task.distance,
        }
    }

    /// Task files do not carry the embedding parameters; they come from the
    /// run configuration.
    pub fn into_task(self, embed_dim: usize, noise_sigma: f32) -> Result<AglTask> {
        let task = AglTask {
            world: WorldSpec {
                grid: GridSpec::new(self.rows, self.cols)?,
                seed: self.seed,
                style: self.style,
                embed_dim,
                noise_sigma,
            },
            start: self.start.into(),
            goal: self.goal.into(),
            budget: self.budget,
            distance: self.distance,
        };
        task.validate()?;
        Ok(task)
    }
}

pub fn write_tasks<W: Write>(mut out: W, tasks: &[AglTask]) -> Result<()> {
    for t in tasks {
        serde_json::to_writer(&mut out, &TaskRecord::from_task(t))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parse a line-delimited task file. Blank lines are skipped.
pub fn read_tasks<R: BufRead>(input: R, embed_dim: usize, noise_sigma: f32) -> Result<Vec<AglTask>> {
    let mut tasks = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TaskRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("task line {}: {e}", lineno + 1)))?;
        tasks.push(record.into_task(embed_dim, noise_sigma)?);
    }
    Ok(tasks)
}
