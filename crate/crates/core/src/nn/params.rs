use sha2::{Digest, Sha256};

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// A trainable value and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Handle into a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameters with parallel gradients. Layers hold [`ParamId`]s and
/// read/write through the set, so a whole model can be snapshotted, cast or
/// checkpointed without knowing its structure.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T = f32> {
    entries: Vec<(String, Param<T>)>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn add(&mut self, path: &str, value: Tensor<T>) -> ParamId {
        assert!(self.find(path).is_none(), "duplicate parameter path {path}");
        let grad = Tensor::zeros(value.shape());
        self.entries.push((path.to_string(), Param { value, grad }));
        ParamId(self.entries.len() - 1)
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
    pub fn add_uniform(&mut self, path: &str, shape: &[usize], fan_in: usize, rng: &mut impl rand::Rng) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(rng.random_range(-bound..bound)))
            .collect();
        self.add(path, Tensor::from_vec(shape, data).expect("shape matches data"))
    }

    pub fn add_const(&mut self, path: &str, shape: &[usize], v: f64) -> ParamId {
        let mut t = Tensor::zeros(shape);
        t.fill(T::from_f64(v));
        self.add(path, t)
    }

    pub fn find(&self, path: &str) -> Option<ParamId> {
        self.entries.iter().position(|(p, _)| p == path).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].1.value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].1.value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].1.grad
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.entries[id.0].1
    }

    pub fn path(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(p, v)| (p.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(p, v)| (p.as_str(), v))
    }

    /// Entries ordered by path; the checkpoint order.
    pub fn sorted(&self) -> Vec<(&str, &Param<T>)> {
        let mut v: Vec<_> = self.iter().collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, p)| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in &mut self.entries {
            p.grad.fill(T::zero());
        }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(path, p)| {
                    (
                        path.clone(),
                        Param {
                            value: p.value.cast(),
                            grad: p.grad.cast(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Copy every value from `other`, which must have identical paths and shapes.
    pub fn copy_values_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Shape("parameter sets differ in size".into()));
        }
        for ((pa, a), (pb, b)) in self.entries.iter_mut().zip(&other.entries) {
            if pa != pb || a.value.shape() != b.value.shape() {
                return Err(Error::Shape(format!("parameter {pa} does not match {pb}")));
            }
            a.value.data_mut().copy_from_slice(b.value.data());
        }
        Ok(())
    }

    /// Replace values from decoded checkpoint entries. Every parameter must
    /// be present exactly once with a matching shape.
    pub fn load_values(&mut self, entries: &[(String, Tensor<f32>)]) -> Result<()> {
        if entries.len() != self.entries.len() {
            return Err(Error::Shape(format!(
                "checkpoint holds {} parameters, model has {}",
                entries.len(),
                self.entries.len()
            )));
        }
        for (path, t) in entries {
            let id = self
                .find(path)
                .ok_or_else(|| Error::Shape(format!("unexpected parameter {path}")))?;
            let dst = self.value_mut(id);
            if dst.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "parameter {path}: checkpoint shape {:?}, model shape {:?}",
                    t.shape(),
                    dst.shape()
                )));
            }
            for (d, s) in dst.data_mut().iter_mut().zip(t.data()) {
                *d = T::from_f64(*s as f64);
            }
        }
        Ok(())
    }

    /// SHA-256 over paths, shapes and values; equal hashes mean bitwise
    /// equal parameters.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (path, p) in self.sorted() {
            h.update(path.as_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in p.value.data() {
                h.update(x.as_f64().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
