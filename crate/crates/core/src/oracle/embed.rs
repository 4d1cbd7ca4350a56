//! Synthetic patch and goal embeddings.
//!
//! Two world styles are supported:
//!
//! * `Uninformative`: every cell gets an independent pseudorandom unit
//!   vector. Cell content says nothing about where the goal is; only
//!   recognising the goal on arrival is possible.
//! * `InformativeGradient`: a smooth sin/cos code of `(row, col)` in
//!   [`POSITIONAL_DIM`] coordinates, concatenated with seeded noise of norm
//!   `noise_sigma`, normalised, then passed through a world-specific random
//!   rotation of the whole vector. Inner products between cells survive the
//!   rotation and fall off smoothly with displacement, so similarity to the
//!   goal forms a gradient the agent can climb, blurred by the noise. No
//!   coordinate of a single glimpse reveals absolute position; the goal has
//!   to be triangulated from several observations.
//!
//! Everything is a pure function of `(world.seed, cell, style)`; values are
//! computed in `f64` and rounded once.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::agle::AgleFile;
use crate::env::{Cell, WorldSpec, WorldStyle};
use crate::error::{Error, Result};
use crate::seed;

/// Width of the positional block in informative worlds.
pub const POSITIONAL_DIM: usize = 8;

/// Angular frequencies (radians per cell) of the positional code. The lower
/// one keeps cosine similarity monotone in displacement up to 8 cells.
pub const FREQUENCIES: [f64; 2] = [PI / 8.0, PI / 4.0];

/// Goal perturbation norm as a fraction of `noise_sigma`.
pub const MODALITY_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalModality {
    Aerial,
    Ground,
    Text,
}

impl GoalModality {
    pub const ALL: [GoalModality; 3] = [GoalModality::Aerial, GoalModality::Ground, GoalModality::Text];

    fn tag(self) -> u64 {
        match self {
            GoalModality::Aerial => 0,
            GoalModality::Ground => 1,
            GoalModality::Text => 2,
        }
    }
}

impl std::str::FromStr for GoalModality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aerial" => Ok(GoalModality::Aerial),
            "ground" => Ok(GoalModality::Ground),
            "text" => Ok(GoalModality::Text),
            other => Err(Error::Config(format!("unknown goal modality {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchEmbedding(pub Vec<f32>);

impl PatchEmbedding {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &PatchEmbedding) -> f32 {
        let dot: f32 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        let na: f32 = self.0.iter().map(|a| a * a).sum::<f32>().sqrt();
        let nb: f32 = other.0.iter().map(|a| a * a).sum::<f32>().sqrt();
        dot / (na * nb)
    }
}

/// Unit-norm sin/cos code of a cell position, in absolute grid coordinates.
pub fn positional_code(cell: Cell) -> [f64; POSITIONAL_DIM] {
    let mut out = [0.0; POSITIONAL_DIM];
    for (k, w) in FREQUENCIES.iter().enumerate() {
        let (r, c) = (cell.row as f64 * w, cell.col as f64 * w);
        out[4 * k] = r.sin() * 0.5;
        out[4 * k + 1] = r.cos() * 0.5;
        out[4 * k + 2] = c.sin() * 0.5;
        out[4 * k + 3] = c.cos() * 0.5;
    }
    out
}

fn gaussian(rng: &mut seed::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// World-specific `dim x dim` orthogonal matrix (rows orthonormal, stored
/// row-major), built by Gram-Schmidt on a seeded Gaussian matrix.
fn world_rotation(world_seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = seed::rng(world_seed, "world-rotation", &[dim as u64]);
    let mut q = vec![0.0; dim * dim];
    let mut i = 0;
    while i < dim {
        let mut v = gaussian(&mut rng, dim);
        for row in q[..i * dim].chunks_exact(dim) {
            let d: f64 = v.iter().zip(row).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(row).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        for (dst, x) in q[i * dim..(i + 1) * dim].iter_mut().zip(&v) {
            *dst = x / norm;
        }
        i += 1;
    }
    q
}

fn patch_f64(world: &WorldSpec, rotation: Option<&[f64]>, cell: Cell) -> Vec<f64> {
    let cell_parts = [cell.row as u64, cell.col as u64];
    match world.style {
        WorldStyle::Uninformative => {
            let mut rng = seed::rng(world.seed, "uninformative-patch", &cell_parts);
            let mut v = gaussian(&mut rng, world.embed_dim);
            normalize(&mut v);
            v
        }
        WorldStyle::InformativeGradient => {
            let rot = rotation.expect("informative worlds carry a rotation");
            let mut v = positional_code(cell).to_vec();
            let k = world.embed_dim - POSITIONAL_DIM;
            if k > 0 {
                let mut rng = seed::rng(world.seed, "patch-noise", &cell_parts);
                let scale = world.noise_sigma as f64 / (k as f64).sqrt();
                v.extend(gaussian(&mut rng, k).into_iter().map(|x| x * scale));
            }
            normalize(&mut v);
            let mut out: Vec<f64> = rot
                .chunks_exact(world.embed_dim)
                .map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum())
                .collect();
            normalize(&mut out);
            out
        }
    }
}

fn rotation_for(world: &WorldSpec) -> Option<Vec<f64>> {
    (world.style == WorldStyle::InformativeGradient).then(|| world_rotation(world.seed, world.embed_dim))
}

fn to_f32(v: Vec<f64>) -> PatchEmbedding {
    PatchEmbedding(v.into_iter().map(|x| x as f32).collect())
}

pub fn gen_patch_embedding(world: &WorldSpec, cell: Cell) -> Result<PatchEmbedding> {
    world.validate()?;
    world.grid.check(cell)?;
    Ok(to_f32(patch_f64(world, rotation_for(world).as_deref(), cell)))
}

fn goal_f64(world: &WorldSpec, patch: Vec<f64>, goal: Cell, modality: GoalModality) -> Vec<f64> {
    if world.noise_sigma == 0.0 {
        return patch;
    }
    let mut rng = seed::rng(
        world.seed,
        "goal-modality",
        &[modality.tag(), goal.row as u64, goal.col as u64],
    );
    let mut u = gaussian(&mut rng, world.embed_dim);
    let d: f64 = u.iter().zip(&patch).map(|(a, b)| a * b).sum();
    u.iter_mut().zip(&patch).for_each(|(a, b)| *a -= d * b);
    normalize(&mut u);
    let scale = MODALITY_SCALE * world.noise_sigma as f64;
    let mut v: Vec<f64> = patch.iter().zip(&u).map(|(p, q)| p + scale * q).collect();
    normalize(&mut v);
    v
}

/// Goal description in the shared embedding space: the goal cell's patch
/// embedding plus a small modality-specific perturbation orthogonal to it.
/// With `noise_sigma == 0` every modality yields the patch embedding itself.
pub fn gen_goal_embedding(world: &WorldSpec, goal: Cell, modality: GoalModality) -> Result<PatchEmbedding> {
    world.validate()?;
    world.grid.check(goal)?;
    let patch = patch_f64(world, rotation_for(world).as_deref(), goal);
    Ok(to_f32(goal_f64(world, patch, goal, modality)))
}

/// Every patch embedding of a world, computed once.
#[derive(Debug, Clone)]
pub struct WorldEmbeddings {
    world: WorldSpec,
    rotation: Option<Vec<f64>>,
    patches: Vec<PatchEmbedding>,
    /// Goal rows loaded from a file, by modality; they replace the
    /// synthetic goal generator.
    loaded_goals: [Option<PatchEmbedding>; 3],
    loaded: bool,
}

impl WorldEmbeddings {
    pub fn new(world: &WorldSpec) -> Result<Self> {
        world.validate()?;
        let rotation = rotation_for(world);
        let patches = world
            .grid
            .cells()
            .map(|c| to_f32(patch_f64(world, rotation.as_deref(), c)))
            .collect();
        Ok(WorldEmbeddings {
            world: *world,
            rotation,
            patches,
            loaded_goals: Default::default(),
            loaded: false,
        })
    }

    /// Take patch and goal rows from an embedding file instead of the
    /// generators. Every cell of the grid must be present and the row width
    /// must equal `world.embed_dim`.
    pub fn from_agle(world: &WorldSpec, file: &AgleFile) -> Result<Self> {
        world.validate()?;
        if file.dim != world.embed_dim {
            return Err(Error::Config(format!(
                "embedding file has dim {}, world expects {}",
                file.dim, world.embed_dim
            )));
        }
        let problems = file.validate(Some(world.grid));
        if !problems.is_empty() {
            return Err(Error::Config(format!("embedding file: {}", problems.join("; "))));
        }
        let patches = world
            .grid
            .cells()
            .map(|c| PatchEmbedding(file.cell(c).expect("validated above").to_vec()))
            .collect();
        let loaded_goals = GoalModality::ALL.map(|m| file.goal(m).map(|r| PatchEmbedding(r.to_vec())));
        Ok(WorldEmbeddings {
            world: *world,
            rotation: None,
            patches,
            loaded_goals,
            loaded: true,
        })
    }

    pub fn world(&self) -> &WorldSpec {
        &self.world
    }

    pub fn patch(&self, cell: Cell) -> &PatchEmbedding {
        &self.patches[self.world.grid.index(cell)]
    }

    /// Goal embedding for `goal`. A world loaded from a file returns its goal
    /// row for the modality if it has one, else the goal cell's patch.
    pub fn goal(&self, goal: Cell, modality: GoalModality) -> PatchEmbedding {
        if let Some(row) = &self.loaded_goals[modality.tag() as usize] {
            return row.clone();
        }
        if self.loaded {
            return self.patch(goal).clone();
        }
        let exact = patch_f64(&self.world, self.rotation.as_deref(), goal);
        to_f32(goal_f64(&self.world, exact, goal, modality))
    }
}
