//! Brute-force references shared by the integration tests.

use std::collections::{BTreeSet, VecDeque};

use agl_core::env::{Action, Cell, GridSpec};

/// Shortest-path lengths from `goal` by breadth-first search over valid moves.
pub fn bfs(grid: GridSpec, goal: Cell) -> Vec<usize> {
    let mut dist = vec![usize::MAX; grid.len()];
    dist[grid.index(goal)] = 0;
    let mut queue = VecDeque::from([goal]);
    while let Some(c) = queue.pop_front() {
        let d = dist[grid.index(c)];
        for a in Action::ALL {
            if let Some(n) = c.displaced(a, grid) {
                if dist[grid.index(n)] == usize::MAX {
                    dist[grid.index(n)] = d + 1;
                    queue.push_back(n);
                }
            }
        }
    }
    dist
}

pub fn brute_optimal(grid: GridSpec, cell: Cell, dist: &[usize]) -> BTreeSet<Action> {
    Action::ALL
        .into_iter()
        .filter(|&a| {
            cell.displaced(a, grid)
                .is_some_and(|n| dist[grid.index(n)] < dist[grid.index(cell)])
        })
        .collect()
}
