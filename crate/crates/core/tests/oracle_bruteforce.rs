mod common;

use std::collections::BTreeSet;

use common::{bfs, brute_optimal};

use agl_core::config::WorldConfig;
use agl_core::env::{action_mask, l2sq, Action, AglTask, GridSpec};
use agl_core::oracle::{
    gen_optimal_trajectory, gen_random_trajectory, label_trajectory, optimal_actions, GradientCategory, GradientTable,
};
use agl_core::seed;

fn grids() -> [GridSpec; 2] {
    [GridSpec::new(5, 5).unwrap(), GridSpec::new(7, 7).unwrap()]
}

fn world_for(grid: GridSpec) -> WorldConfig {
    WorldConfig {
        rows: grid.rows,
        cols: grid.cols,
        ..WorldConfig::default()
    }
}

#[test]
fn optimal_actions_match_shortest_paths() {
    for grid in grids() {
        for goal in grid.cells() {
            let dist = bfs(grid, goal);
            for cell in grid.cells().filter(|&c| c != goal) {
                let got: BTreeSet<Action> = optimal_actions(cell, goal, grid).unwrap().into_iter().collect();
                assert_eq!(got, brute_optimal(grid, cell, &dist), "{cell:?} -> {goal:?}");
                assert!(!got.is_empty());
            }
            assert!(optimal_actions(goal, goal, grid).is_err());
        }
    }
}

#[test]
fn labels_and_optimal_walks_match_brute_force() {
    for grid in grids() {
        let spec = world_for(grid).spec(3);
        let mut rng = seed::rng_from(17);
        for goal in grid.cells() {
            let dist = bfs(grid, goal);
            for start in grid.cells().filter(|&c| c != goal) {
                let task = AglTask::new(spec, start, goal, 4 * grid.diameter()).unwrap();

                let walk = gen_random_trajectory(&task, 12, &mut rng).unwrap();
                walk.validate().unwrap();
                let labels = label_trajectory(&walk);
                let off_goal: Vec<usize> = (0..walk.cells.len()).filter(|&i| walk.cells[i] != goal).collect();
                assert_eq!(labels.iter().map(|l| l.step).collect::<Vec<_>>(), off_goal);
                for l in &labels {
                    let want = brute_optimal(grid, walk.cells[l.step], &dist);
                    let got: BTreeSet<Action> = Action::ALL.into_iter().filter(|a| l.mask[a.index()]).collect();
                    assert_eq!(got, want);
                }

                let demo = gen_optimal_trajectory(&task, &mut rng).unwrap();
                demo.validate().unwrap();
                assert_eq!(demo.len(), dist[grid.index(start)]);
                assert_eq!(*demo.cells.last().unwrap(), goal);
                for w in demo.cells.windows(2) {
                    assert_eq!(dist[grid.index(w[1])] + 1, dist[grid.index(w[0])]);
                }
            }
        }
    }
}

#[test]
fn every_move_changes_distance() {
    for grid in grids() {
        for goal in grid.cells() {
            for cell in grid.cells() {
                let mask = action_mask(grid, cell).unwrap();
                for a in Action::ALL.into_iter().filter(|a| mask[a.index()]) {
                    let next = cell.displaced(a, grid).unwrap();
                    assert_ne!(l2sq(next, goal), l2sq(cell, goal));
                }
            }
        }
    }
}

#[test]
fn gradient_table_matches_golden() {
    let golden: Vec<GradientCategory> =
        serde_json::from_str(include_str!("data/gradient_categories_5x5.json")).unwrap();
    let table = GradientTable::enumerate(GridSpec::new(5, 5).unwrap());
    assert_eq!(table.categories, golden);
    assert_eq!(table.len(), 49);
    assert_eq!(golden.iter().filter(|c| c.is_at_goal()).count(), 1);
}
