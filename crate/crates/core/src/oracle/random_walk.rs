//! Exact success probability of the uniform random policy.
//!
//! Absorbing-state dynamic programming over `(cell, step)`: the probability
//! mass that reaches the goal is removed from the walk and accumulated, so
//! after `budget` steps the accumulator holds P(hit goal within budget).

use serde::{Deserialize, Serialize};

use crate::env::{manhattan, pairs_at_distance, Action, Cell, GridSpec};
use crate::error::{Error, Result};

/// How a random agent treats moves that would leave the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomWalkConvention {
    /// Uniform over the valid actions of the current cell.
    #[default]
    MaskedUniform,
    /// Uniform over all four actions; an off-grid move wastes the step.
    UniformWithNoop,
}

impl std::str::FromStr for RandomWalkConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masked" | "masked_uniform" => Ok(Self::MaskedUniform),
            "noop" | "uniform_with_noop" => Ok(Self::UniformWithNoop),
            other => Err(Error::Config(format!("unknown random-walk convention {other:?}"))),
        }
    }
}

/// Probability that a random walk from `start` occupies `goal` at some step
/// `1..=budget`.
pub fn hit_probability(
    grid: GridSpec,
    start: Cell,
    goal: Cell,
    budget: usize,
    convention: RandomWalkConvention,
) -> Result<f64> {
    grid.check(start)?;
    grid.check(goal)?;
    if budget < manhattan(start, goal) {
        return Ok(0.0);
    }
    let n = grid.len();
    let goal_idx = grid.index(goal);
    let mut mass = vec![0.0f64; n];
    let mut next = vec![0.0f64; n];
    mass[grid.index(start)] = 1.0;
    let mut hit = 0.0;
    for _ in 0..budget {
        next.iter_mut().for_each(|x| *x = 0.0);
        for cell in grid.cells() {
            let p = mass[grid.index(cell)];
            if p == 0.0 {
                continue;
            }
            let moves: Vec<Option<Cell>> = Action::ALL.iter().map(|&a| cell.displaced(a, grid)).collect();
            match convention {
                RandomWalkConvention::MaskedUniform => {
                    let valid = moves.iter().flatten().count() as f64;
                    for m in moves.iter().flatten() {
                        next[grid.index(*m)] += p / valid;
                    }
                }
                RandomWalkConvention::UniformWithNoop => {
                    for m in &moves {
                        let dest = m.unwrap_or(cell);
                        next[grid.index(dest)] += p / 4.0;
                    }
                }
            }
        }
        hit += next[goal_idx];
        next[goal_idx] = 0.0;
        std::mem::swap(&mut mass, &mut next);
    }
    Ok(hit)
}

/// Random-policy success ratio averaged uniformly over every ordered
/// `(start, goal)` pair at Manhattan distance `distance`.
pub fn random_policy_sr_exact(
    grid: GridSpec,
    distance: usize,
    budget: usize,
    convention: RandomWalkConvention,
) -> Result<f64> {
    if distance == 0 || distance > grid.diameter() {
        return Err(Error::InfeasibleDistance {
            distance,
            rows: grid.rows,
            cols: grid.cols,
        });
    }
    let pairs = pairs_at_distance(grid, distance);
    let mut total = 0.0;
    for &(s, g) in &pairs {
        total += hit_probability(grid, s, g, budget, convention)?;
    }
    Ok(total / pairs.len() as f64)
}
