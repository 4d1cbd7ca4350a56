//! AGLE embedding files: precomputed patch and goal embeddings that can
//! stand in for the synthetic generators.
//!
//! ```text
//! "AGLE" | version u32 | count u32 | dim u32
//! count * dim f32 (row-major)
//! index_len u32 | index (UTF-8 JSON)
//! ```
//! Little-endian throughout. The index maps `cell:<r>:<c>` and
//! `goal:<aerial|ground|text>` to row numbers. A `meta` entry holding a JSON
//! object is allowed and does not count as a row key.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use crate::env::{Cell, GridSpec};
use crate::error::{Error, Result};
use crate::oracle::{GoalModality, WorldEmbeddings};

pub const MAGIC: &[u8; 4] = b"AGLE";
pub const VERSION: u32 = 1;
pub const NORM_TOLERANCE: f32 = 1e-4;
pub const META_KEY: &str = "meta";

#[derive(Debug, Clone, PartialEq)]
pub struct AgleFile {
    pub dim: usize,
    /// `count * dim` values, row-major.
    pub data: Vec<f32>,
    pub index: BTreeMap<String, usize>,
    pub meta: Option<Map<String, Value>>,
}

/// Row key of a cell.
pub fn cell_key(cell: Cell) -> String {
    format!("cell:{}:{}", cell.row, cell.col)
}

pub fn goal_key(modality: GoalModality) -> String {
    let tag = match modality {
        GoalModality::Aerial => "aerial",
        GoalModality::Ground => "ground",
        GoalModality::Text => "text",
    };
    format!("goal:{tag}")
}

fn key_is_well_formed(key: &str) -> bool {
    if let Some(rest) = key.strip_prefix("cell:") {
        let mut parts = rest.split(':');
        let ok = |p: Option<&str>| p.is_some_and(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()));
        ok(parts.next()) && ok(parts.next()) && parts.next().is_none()
    } else {
        matches!(key, "goal:aerial" | "goal:ground" | "goal:text")
    }
}

fn le_u32(buf: &[u8], at: usize, what: &str) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::decode(at, format!("truncated {what}")))
}

impl AgleFile {
    pub fn count(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.index.get(key).map(|&i| self.row(i))
    }

    pub fn cell(&self, cell: Cell) -> Option<&[f32]> {
        self.get(&cell_key(cell))
    }

    pub fn goal(&self, modality: GoalModality) -> Option<&[f32]> {
        self.get(&goal_key(modality))
    }

    /// Parse and structurally check a file. Semantic checks (norms, grid
    /// coverage) live in [`AgleFile::validate`].
    pub fn decode(buf: &[u8]) -> Result<Self> {
        if buf.get(..4) != Some(MAGIC.as_slice()) {
            return Err(Error::decode(0, "bad magic, expected AGLE"));
        }
        let version = le_u32(buf, 4, "version")?;
        if version != VERSION {
            return Err(Error::decode(4, format!("unsupported version {version}")));
        }
        let count = le_u32(buf, 8, "count")? as usize;
        let dim = le_u32(buf, 12, "dim")? as usize;
        let payload_len = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::decode(8, "payload size overflows"))?;
        let payload_end = 16usize
            .checked_add(payload_len)
            .filter(|&e| e <= buf.len())
            .ok_or_else(|| {
                Error::decode(
                    buf.len(),
                    format!("truncated payload: header promises {payload_len} bytes after offset 16"),
                )
            })?;
        let data = buf[16..payload_end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let index_len = le_u32(buf, payload_end, "index length")? as usize;
        let index_start = payload_end + 4;
        let index_end = index_start
            .checked_add(index_len)
            .filter(|&e| e <= buf.len())
            .ok_or_else(|| Error::decode(index_start, "truncated index"))?;
        if index_end != buf.len() {
            return Err(Error::decode(index_end, "trailing bytes after index"));
        }
        let text = std::str::from_utf8(&buf[index_start..index_end])
            .map_err(|e| Error::decode(index_start + e.valid_up_to(), "index is not UTF-8"))?;
        let json: Map<String, Value> =
            serde_json::from_str(text).map_err(|e| Error::decode(index_start, format!("index JSON: {e}")))?;

        let mut index = BTreeMap::new();
        let mut meta = None;
        for (key, value) in json {
            if key == META_KEY {
                match value {
                    Value::Object(m) => meta = Some(m),
                    _ => return Err(Error::decode(index_start, "meta entry must be an object")),
                }
                continue;
            }
            if !key_is_well_formed(&key) {
                return Err(Error::decode(index_start, format!("malformed index key {key:?}")));
            }
            let row = value
                .as_u64()
                .and_then(|r| usize::try_from(r).ok())
                .filter(|&r| r < count)
                .ok_or_else(|| Error::decode(index_start, format!("index key {key:?} has no valid row")))?;
            index.insert(key, row);
        }
        if index.len() != count {
            return Err(Error::decode(
                index_start,
                format!("index names {} rows, header says {count}", index.len()),
            ));
        }
        Ok(AgleFile { dim, data, index, meta })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut json = Map::new();
        for (k, &v) in &self.index {
            json.insert(k.clone(), Value::from(v));
        }
        if let Some(m) = &self.meta {
            json.insert(META_KEY.into(), Value::Object(m.clone()));
        }
        let text = serde_json::to_string(&json).expect("index serialises");
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    /// Every patch of a world plus the goal rows of `goal` in all three
    /// modalities.
    pub fn from_world(world: &WorldEmbeddings, goal: Cell) -> Result<Self> {
        let spec = world.world();
        spec.grid.check(goal)?;
        let mut data = Vec::new();
        let mut index = BTreeMap::new();
        for (i, cell) in spec.grid.cells().enumerate() {
            data.extend_from_slice(world.patch(cell).as_slice());
            index.insert(cell_key(cell), i);
        }
        for (k, m) in GoalModality::ALL.into_iter().enumerate() {
            data.extend_from_slice(world.goal(goal, m).as_slice());
            index.insert(goal_key(m), spec.grid.len() + k);
        }
        let mut meta = Map::new();
        meta.insert("source".into(), Value::from("synthetic"));
        meta.insert("world_seed".into(), Value::from(spec.seed));
        meta.insert("goal".into(), Value::from(vec![goal.row, goal.col]));
        Ok(AgleFile {
            dim: spec.embed_dim,
            data,
            index,
            meta: Some(meta),
        })
    }

    /// Every problem found; empty means valid. With a grid, also require a
    /// row for every cell of it.
    pub fn validate(&self, grid: Option<GridSpec>) -> Vec<String> {
        let mut problems = Vec::new();
        if self.dim == 0 {
            problems.push("dim is zero".to_string());
        }
        if self.dim != 0 && self.data.len() % self.dim != 0 {
            problems.push(format!("{} values do not fill rows of {}", self.data.len(), self.dim));
            return problems;
        }
        let mut seen = vec![false; self.count()];
        for (key, &row) in &self.index {
            match seen.get_mut(row) {
                Some(s) if *s => problems.push(format!("row {row} named twice (again by {key})")),
                Some(s) => *s = true,
                None => problems.push(format!("{key} points past the last row")),
            }
        }
        for i in 0..self.count() {
            let row = self.row(i);
            if row.iter().any(|v| !v.is_finite()) {
                problems.push(format!("row {i} has non-finite entries"));
                continue;
            }
            let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                problems.push(format!("row {i} has norm {norm}"));
            }
        }
        if let Some(grid) = grid {
            for cell in grid.cells() {
                if self.cell(cell).is_none() {
                    problems.push(format!("missing {}", cell_key(cell)));
                }
            }
        }
        problems
    }
}
