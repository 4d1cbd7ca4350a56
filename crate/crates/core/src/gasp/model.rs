use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokens::{TokenBatch, TokenSequence, RPE_DIM};
use crate::env::NUM_ACTIONS;
use crate::error::{Error, Result};
use crate::nn::attention::TransformerCache;
use crate::nn::{checkpoint, CausalTransformer, Linear, ParamId, ParamSet, Real, Tensor};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            heads: 4,
            layers: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.layers == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "model: need positive sizes with heads dividing d_model, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct RpgHead {
    mask_token: ParamId,
    category_head: Linear,
}

/// Layer layout of the sequence model. Parameters live in a separate
/// [`ParamSet`] so the same layout runs in `f32` and `f64`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaspNet {
    pub embed_dim: usize,
    pub config: ModelConfig,
    goal_proj: Linear,
    obs_proj: Linear,
    act_proj: Linear,
    transformer: CausalTransformer,
    action_head: Linear,
    rpg: Option<RpgHead>,
}

pub struct GaspPass<T> {
    /// `[batch * len, d_model]`, after the final layer norm.
    pub hidden: Tensor<T>,
    cache: TransformerCache<T>,
}

pub fn gather_rows<T: Real>(x: &Tensor<T>, rows: &[usize]) -> Tensor<T> {
    let d = x.dims2().1;
    let mut out = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        out.extend_from_slice(x.row(r));
    }
    Tensor::matrix(rows.len(), d, out).expect("row count matches")
}

pub fn scatter_add_rows<T: Real>(dst: &mut Tensor<T>, rows: &[usize], src: &Tensor<T>) {
    for (k, &r) in rows.iter().enumerate() {
        for (d, &s) in dst.row_mut(r).iter_mut().zip(src.row(k)) {
            *d += s;
        }
    }
}

impl GaspNet {
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        embed_dim: usize,
        config: ModelConfig,
        rpg_categories: Option<usize>,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let d = config.d_model;
        let goal_proj = Linear::new(ps, "gasp.goal_proj", embed_dim, d, rng);
        let obs_proj = Linear::new(ps, "gasp.obs_proj", embed_dim + RPE_DIM, d, rng);
        let act_proj = Linear::new(ps, "gasp.act_proj", NUM_ACTIONS, d, rng);
        let transformer = CausalTransformer::new(ps, "gasp.transformer", d, config.heads, config.layers, rng);
        let action_head = Linear::new(ps, "gasp.action_head", d, NUM_ACTIONS, rng);
        let rpg = rpg_categories.map(|k| RpgHead {
            mask_token: ps.add_uniform("gasp.rpg.mask_token", &[d], d, rng),
            category_head: Linear::new(ps, "gasp.rpg.category_head", d, k, rng),
        });
        GaspNet {
            embed_dim,
            config,
            goal_proj,
            obs_proj,
            act_proj,
            transformer,
            action_head,
            rpg,
        }
    }

    pub fn categories(&self) -> Option<usize> {
        self.rpg.as_ref().map(|r| r.category_head.fan_out)
    }

    pub fn forward<T: Real>(&self, ps: &ParamSet<T>, b: &TokenBatch<T>) -> Result<GaspPass<T>> {
        let (len, d) = (b.seq_len(), self.config.d_model);
        let g = self.goal_proj.forward(ps, &b.goal)?;
        let o = self.obs_proj.forward(ps, &b.obs)?;
        let a = if b.n_obs > 1 {
            Some(self.act_proj.forward(ps, &b.act)?)
        } else {
            None
        };
        let mut x = Tensor::zeros(&[b.batch * len, d]);
        for bi in 0..b.batch {
            if !b.mask_goal {
                x.row_mut(bi * len).copy_from_slice(g.row(bi));
            }
            for i in 0..b.n_obs {
                x.row_mut(b.obs_row(bi, i)).copy_from_slice(o.row(bi * b.n_obs + i));
            }
            if let Some(a) = &a {
                for i in 0..b.n_obs - 1 {
                    x.row_mut(b.action_row(bi, i))
                        .copy_from_slice(a.row(bi * (b.n_obs - 1) + i));
                }
            }
        }
        if !b.masked_tokens.is_empty() {
            let rpg = self
                .rpg
                .as_ref()
                .ok_or_else(|| Error::Shape("token masking needs a model with a mask token".into()))?;
            if b.masked_tokens.len() != b.batch * len {
                return Err(Error::Shape(format!(
                    "token mask has {} entries for {} tokens",
                    b.masked_tokens.len(),
                    b.batch * len
                )));
            }
            let m = ps.value(rpg.mask_token).data();
            for (r, _) in b.masked_tokens.iter().enumerate().filter(|(_, &on)| on) {
                x.row_mut(r).copy_from_slice(m);
            }
        }
        let (hidden, cache) = self.transformer.forward(ps, &x, b.batch, len)?;
        Ok(GaspPass { hidden, cache })
    }

    /// Accumulate parameter gradients given `dL/d hidden`.
    pub fn backward<T: Real>(&self, ps: &mut ParamSet<T>, b: &TokenBatch<T>, pass: &GaspPass<T>, d_hidden: &Tensor<T>) {
        let (len, d) = (b.seq_len(), self.config.d_model);
        let mut dx = self.transformer.backward(ps, &pass.cache, d_hidden, b.batch, len);
        if let Some(rpg) = &self.rpg {
            let mut dm = vec![T::zero(); d];
            for (r, _) in b.masked_tokens.iter().enumerate().filter(|(_, &on)| on) {
                for (acc, &v) in dm.iter_mut().zip(dx.row(r)) {
                    *acc += v;
                }
                dx.row_mut(r).fill(T::zero());
            }
            for (g, v) in ps.param_mut(rpg.mask_token).grad.data_mut().iter_mut().zip(dm) {
                *g += v;
            }
        }
        let mut dg = Tensor::zeros(&[b.batch, d]);
        let mut dobs = Tensor::zeros(&[b.batch * b.n_obs, d]);
        let mut dact = Tensor::zeros(&[b.batch * (b.n_obs - 1), d]);
        for bi in 0..b.batch {
            dg.row_mut(bi).copy_from_slice(dx.row(bi * len));
            for i in 0..b.n_obs {
                dobs.row_mut(bi * b.n_obs + i).copy_from_slice(dx.row(b.obs_row(bi, i)));
            }
            for i in 0..b.n_obs.saturating_sub(1) {
                dact.row_mut(bi * (b.n_obs - 1) + i)
                    .copy_from_slice(dx.row(b.action_row(bi, i)));
            }
        }
        if !b.mask_goal {
            self.goal_proj.backward(ps, &b.goal, &dg);
        }
        self.obs_proj.backward(ps, &b.obs, &dobs);
        if b.n_obs > 1 {
            self.act_proj.backward(ps, &b.act, &dact);
        }
    }

    pub fn action_logits<T: Real>(&self, ps: &ParamSet<T>, h: &Tensor<T>) -> Result<Tensor<T>> {
        self.action_head.forward(ps, h)
    }

    pub fn action_head_backward<T: Real>(&self, ps: &mut ParamSet<T>, h: &Tensor<T>, dlogits: &Tensor<T>) -> Tensor<T> {
        self.action_head.backward(ps, h, dlogits)
    }

    pub fn category_logits<T: Real>(&self, ps: &ParamSet<T>, h: &Tensor<T>) -> Result<Tensor<T>> {
        let rpg = self.rpg.as_ref().ok_or_else(|| Error::Shape("model has no category head".into()))?;
        rpg.category_head.forward(ps, h)
    }

    pub fn category_head_backward<T: Real>(
        &self,
        ps: &mut ParamSet<T>,
        h: &Tensor<T>,
        dlogits: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let rpg = self.rpg.as_ref().ok_or_else(|| Error::Shape("model has no category head".into()))?;
        Ok(rpg.category_head.backward(ps, h, dlogits))
    }
}

/// A sequence model with its parameters.
#[derive(Debug, Clone)]
pub struct GaspModel<T: Real = f32> {
    pub net: GaspNet,
    pub params: ParamSet<T>,
}

impl<T: Real> GaspModel<T> {
    pub fn new(embed_dim: usize, config: ModelConfig, rpg_categories: Option<usize>, init_seed: u64) -> Self {
        let mut params = ParamSet::new();
        let mut rng = seed::rng(init_seed, "gasp-init", &[]);
        let net = GaspNet::new(&mut params, embed_dim, config, rpg_categories, &mut rng);
        GaspModel { net, params }
    }

    pub fn cast<U: Real>(&self) -> GaspModel<U> {
        GaspModel {
            net: self.net.clone(),
            params: self.params.cast(),
        }
    }

    pub fn forward(&self, b: &TokenBatch<T>) -> Result<GaspPass<T>> {
        self.net.forward(&self.params, b)
    }

    /// Action-head logits at every observation slot, `[batch * n_obs, 4]`.
    pub fn step_logits(&self, b: &TokenBatch<T>) -> Result<Tensor<T>> {
        let pass = self.forward(b)?;
        self.net.action_logits(&self.params, &gather_rows(&pass.hidden, &b.obs_rows()))
    }

    /// Latent and action logits at the last real observation of each sequence.
    pub fn last_step(&self, b: &TokenBatch<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let pass = self.forward(b)?;
        let rows: Vec<usize> = (0..b.batch).map(|bi| b.obs_row(bi, b.lengths[bi] - 1)).collect();
        let h = gather_rows(&pass.hidden, &rows);
        let logits = self.net.action_logits(&self.params, &h)?;
        Ok((h, logits))
    }

    /// Hidden state at observation `step`.
    pub fn latent(&self, seq: &TokenSequence, step: usize) -> Result<Vec<T>> {
        if step >= seq.num_obs() {
            return Err(Error::Shape(format!("step {step} outside {} observations", seq.num_obs())));
        }
        let b = TokenBatch::from_sequences(&[seq])?;
        let pass = self.forward(&b)?;
        Ok(pass.hidden.row(b.obs_row(0, step)).to_vec())
    }
}

impl GaspModel<f32> {
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.params, path)
    }

    pub fn load(
        path: &Path,
        embed_dim: usize,
        config: ModelConfig,
        rpg_categories: Option<usize>,
    ) -> Result<Self> {
        let mut model = GaspModel::new(embed_dim, config, rpg_categories, 0);
        checkpoint::load_into(&mut model.params, path)?;
        Ok(model)
    }

    pub fn fingerprint(&self) -> String {
        self.params.fingerprint()
    }
}
