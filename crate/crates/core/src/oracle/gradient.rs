//! Reduced goal-direction ("gradient") categories.
//!
//! The displacement `(goal.row - row, goal.col - col)` divided by the gcd of
//! its components identifies the bearing to the goal. `(0, 0)` is reserved
//! for the agent standing on the goal.

use serde::{Deserialize, Serialize};

use crate::env::{Cell, GridSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GradientCategory {
    pub dy: i32,
    pub dx: i32,
    pub id: usize,
}

impl GradientCategory {
    pub fn is_at_goal(&self) -> bool {
        self.dy == 0 && self.dx == 0
    }
}

fn gcd(mut a: i32, mut b: i32) -> i32 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Displacement to the goal reduced by the gcd of its components.
pub fn reduced_direction(current: Cell, goal: Cell) -> (i32, i32) {
    let dy = goal.row as i32 - current.row as i32;
    let dx = goal.col as i32 - current.col as i32;
    match gcd(dy, dx) {
        0 => (0, 0),
        g => (dy / g, dx / g),
    }
}

/// Sorted, deduplicated category table for one grid. Ids are positions in
/// the table, so they depend only on the grid dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradientTable {
    pub categories: Vec<GradientCategory>,
}

impl GradientTable {
    pub fn enumerate(grid: GridSpec) -> Self {
        let mut dirs: Vec<(i32, i32)> = grid
            .cells()
            .flat_map(|a| grid.cells().map(move |b| reduced_direction(a, b)))
            .collect();
        dirs.sort_unstable();
        dirs.dedup();
        GradientTable {
            categories: dirs
                .into_iter()
                .enumerate()
                .map(|(id, (dy, dx))| GradientCategory { dy, dx, id })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn id_of(&self, dy: i32, dx: i32) -> Option<usize> {
        self.categories
            .binary_search_by(|c| (c.dy, c.dx).cmp(&(dy, dx)))
            .ok()
    }

    pub fn category(&self, current: Cell, goal: Cell) -> Result<GradientCategory> {
        let (dy, dx) = reduced_direction(current, goal);
        self.id_of(dy, dx)
            .map(|id| self.categories[id])
            .ok_or_else(|| Error::InvalidTask(format!("direction ({dy}, {dx}) not in category table")))
    }
}
