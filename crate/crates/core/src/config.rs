//! Run configuration: one JSON document covering every stage.
//!
//! Unknown keys are rejected at every level. Omitted keys take the defaults
//! below. The `AGL_SEED` environment variable overrides `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::align::AlignConfig;
use crate::env::{DistanceSampling, GridSpec, WorldSpec, WorldStyle};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::gasp::GaspConfig;
use crate::oracle::GoalModality;
use crate::planner::PpoConfig;
use crate::seed;

pub const SEED_ENV: &str = "AGL_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub rows: usize,
    pub cols: usize,
    pub style: WorldStyle,
    pub embed_dim: usize,
    pub noise_sigma: f32,
    /// Size of the pool of training worlds.
    pub train_worlds: usize,
    pub budget: usize,
    /// Distances drawn when building training tasks.
    pub train_distances: Vec<usize>,
    pub sampling: DistanceSampling,
    pub modality: GoalModality,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            rows: 5,
            cols: 5,
            style: WorldStyle::InformativeGradient,
            embed_dim: 32,
            noise_sigma: 0.5,
            train_worlds: 20_000,
            budget: 10,
            train_distances: (1..=8).collect(),
            sampling: DistanceSampling::UniformDistance,
            modality: GoalModality::Aerial,
        }
    }
}

impl WorldConfig {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.rows, self.cols)
    }

    pub fn spec(&self, world_seed: u64) -> WorldSpec {
        WorldSpec {
            grid: GridSpec {
                rows: self.rows,
                cols: self.cols,
            },
            seed: world_seed,
            style: self.style,
            embed_dim: self.embed_dim,
            noise_sigma: self.noise_sigma,
        }
    }

    /// World `index` of the training pool. Worlds are built on demand, so
    /// the pool can be large.
    pub fn train_spec(&self, run_seed: u64, index: usize) -> WorldSpec {
        self.spec(seed::derive(run_seed, "train-world", &[index as u64]))
    }

    /// Worlds outside the training pool, for held-out measurements.
    pub fn holdout_spec(&self, run_seed: u64, index: usize) -> WorldSpec {
        self.spec(seed::derive(run_seed, "holdout-world", &[index as u64]))
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid().map_err(|e| Error::Config(format!("world: {e}")))?;
        self.spec(0)
            .validate()
            .map_err(|e| Error::Config(format!("world: {e}")))?;
        if self.train_worlds == 0 {
            return Err(Error::Config("world.train_worlds must be positive".into()));
        }
        if self.budget == 0 {
            return Err(Error::Config("world.budget must be positive".into()));
        }
        if self.train_distances.is_empty() {
            return Err(Error::Config("world.train_distances is empty".into()));
        }
        for &c in &self.train_distances {
            if c == 0 || c > grid.diameter() || c > self.budget {
                return Err(Error::Config(format!("world.train_distances: {c} is infeasible")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Run directory; every artifact and the resolved config land here.
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

pub const GASP_CHECKPOINT: &str = "gasp.aglw";
pub const RPG_CHECKPOINT: &str = "gasp_rpg.aglw";
pub const BC_CHECKPOINT: &str = "bc.aglw";
pub const ALIGN_CHECKPOINT: &str = "align.aglw";
pub const RESOLVED_CONFIG: &str = "config.resolved.json";

impl PathsConfig {
    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Actor/critic checkpoint of a planner variant.
    pub fn planner(&self, variant: &str) -> PathBuf {
        self.out_dir.join(format!("ppo_{variant}.aglw"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub align: AlignConfig,
    pub gasp: GaspConfig,
    pub ppo: PpoConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_json(&text)
    }

    /// Apply `AGL_SEED` if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.align.validate()?;
        self.gasp.validate()?;
        self.ppo.validate()?;
        self.eval.validate(&self.world)?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Write the resolved config into the run directory.
    pub fn write_resolved(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.paths.out_dir)?;
        let path = self.paths.artifact(RESOLVED_CONFIG);
        std::fs::write(&path, self.to_json() + "\n")?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"world": {"rows": 5, "colz": 5}}"#).unwrap_err();
        assert!(err.to_string().contains("colz"), "{err}");
        assert!(RunConfig::from_json(r#"{"speed": 1}"#).is_err());
    }

    #[test]
    fn infeasible_values_are_config_errors() {
        let err = RunConfig::from_json(r#"{"world": {"train_distances": [9]}}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(RunConfig::from_json(r#"{"world": {"noise_sigma": -1}}"#).is_err());
    }
}
