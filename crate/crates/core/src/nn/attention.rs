use super::layers::{Activation, LayerNorm, LayerNormCache, Linear, Mlp, MlpCache};
use super::{c, ParamSet, Real, Tensor};
use crate::error::{Error, Result};

/// Multi-head scaled dot-product self-attention with a causal mask.
///
/// Inputs are `[batch * len, dim]`, one contiguous block of `len` rows per
/// sequence. Row `t` of a sequence attends to rows `0..=t` only; the masked
/// scores are never computed, so later rows cannot leak into earlier ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalSelfAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    input: Tensor<T>,
    qkv: Tensor<T>,
    /// Per (sequence, head, query row): weights over keys `0..=row`.
    probs: Vec<Vec<T>>,
    mixed: Tensor<T>,
}

impl CausalSelfAttention {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, path: &str, dim: usize, heads: usize, rng: &mut impl rand::Rng) -> Self {
        assert!(heads > 0 && dim % heads == 0, "model dim {dim} not divisible by {heads} heads");
        CausalSelfAttention {
            qkv: Linear::new(ps, &format!("{path}.qkv"), dim, 3 * dim, rng),
            proj: Linear::new(ps, &format!("{path}.proj"), dim, dim, rng),
            heads,
            dim,
        }
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamSet<T>,
        x: &Tensor<T>,
        batch: usize,
        len: usize,
    ) -> Result<(Tensor<T>, AttentionCache<T>)> {
        check_layout(x, batch, len, self.dim)?;
        let qkv = self.qkv.forward(ps, x)?;
        let (d, hd) = (self.dim, self.head_dim());
        let scale = c::<T>(1.0 / (hd as f64).sqrt());
        let mut mixed = Tensor::zeros(&[batch * len, d]);
        let mut probs = Vec::with_capacity(batch * self.heads * len);
        for b in 0..batch {
            for h in 0..self.heads {
                let (qo, ko, vo) = (h * hd, d + h * hd, 2 * d + h * hd);
                for i in 0..len {
                    let q = &qkv.row(b * len + i)[qo..qo + hd];
                    let mut w: Vec<T> = (0..=i)
                        .map(|j| {
                            let k = &qkv.row(b * len + j)[ko..ko + hd];
                            dot(q, k) * scale
                        })
                        .collect();
                    softmax_in_place(&mut w);
                    let out = &mut mixed.row_mut(b * len + i)[qo..qo + hd];
                    for (j, &p) in w.iter().enumerate() {
                        let v = &qkv.row(b * len + j)[vo..vo + hd];
                        for (o, &vv) in out.iter_mut().zip(v) {
                            *o += p * vv;
                        }
                    }
                    probs.push(w);
                }
            }
        }
        let y = self.proj.forward(ps, &mixed)?;
        Ok((
            y,
            AttentionCache {
                input: x.clone(),
                qkv,
                probs,
                mixed,
            },
        ))
    }

    pub fn backward<T: Real>(
        &self,
        ps: &mut ParamSet<T>,
        cache: &AttentionCache<T>,
        dy: &Tensor<T>,
        batch: usize,
        len: usize,
    ) -> Tensor<T> {
        let dmixed = self.proj.backward(ps, &cache.mixed, dy);
        let (d, hd) = (self.dim, self.head_dim());
        let scale = c::<T>(1.0 / (hd as f64).sqrt());
        let qkv = &cache.qkv;
        let mut dqkv = Tensor::zeros(&[batch * len, 3 * d]);
        let mut dp = Vec::with_capacity(len);
        for b in 0..batch {
            for h in 0..self.heads {
                let (qo, ko, vo) = (h * hd, d + h * hd, 2 * d + h * hd);
                for i in 0..len {
                    let p = &cache.probs[(b * self.heads + h) * len + i];
                    let dout = &dmixed.row(b * len + i)[qo..qo + hd];
                    dp.clear();
                    for (j, &pj) in p.iter().enumerate() {
                        let r = b * len + j;
                        dp.push(dot(dout, &qkv.row(r)[vo..vo + hd]));
                        let dv = &mut dqkv.row_mut(r)[vo..vo + hd];
                        for (g, &o) in dv.iter_mut().zip(dout) {
                            *g += pj * o;
                        }
                    }
                    let inner: T = p.iter().zip(&dp).map(|(&a, &b)| a * b).sum();
                    for (j, &pj) in p.iter().enumerate() {
                        let ds = pj * (dp[j] - inner) * scale;
                        let (ri, rj) = (b * len + i, b * len + j);
                        for t in 0..hd {
                            let kj = qkv.row(rj)[ko + t];
                            dqkv.row_mut(ri)[qo + t] += ds * kj;
                        }
                        for t in 0..hd {
                            let qi = qkv.row(ri)[qo + t];
                            dqkv.row_mut(rj)[ko + t] += ds * qi;
                        }
                    }
                }
            }
        }
        self.qkv.backward(ps, &cache.input, &dqkv)
    }
}

fn check_layout<T: Real>(x: &Tensor<T>, batch: usize, len: usize, dim: usize) -> Result<()> {
    let (n, d) = x.dims2();
    if len == 0 || n != batch * len || d != dim {
        return Err(Error::Shape(format!(
            "attention expects [{batch}*{len}, {dim}] input, got [{n}, {d}]"
        )));
    }
    Ok(())
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn softmax_in_place<T: Real>(w: &mut [T]) {
    let m = w.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for v in w.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in w.iter_mut() {
        *v /= z;
    }
}

/// Pre-norm block: `h = x + attn(ln1(x))`, `y = h + mlp(ln2(h))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: CausalSelfAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    ln1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    ln2: LayerNormCache<T>,
    mlp: MlpCache<T>,
}

impl TransformerBlock {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, path: &str, dim: usize, heads: usize, rng: &mut impl rand::Rng) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(ps, &format!("{path}.ln1"), dim),
            attn: CausalSelfAttention::new(ps, &format!("{path}.attn"), dim, heads, rng),
            ln2: LayerNorm::new(ps, &format!("{path}.ln2"), dim),
            mlp: Mlp::new(ps, &format!("{path}.mlp"), &[dim, 4 * dim, dim], Activation::Gelu, rng),
        }
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamSet<T>,
        x: &Tensor<T>,
        batch: usize,
        len: usize,
    ) -> Result<(Tensor<T>, BlockCache<T>)> {
        let (a_in, ln1) = self.ln1.forward(ps, x);
        let (a_out, attn) = self.attn.forward(ps, &a_in, batch, len)?;
        let mut h = x.clone();
        h.add_assign(&a_out);
        let (m_in, ln2) = self.ln2.forward(ps, &h);
        let (m_out, mlp) = self.mlp.forward(ps, &m_in)?;
        h.add_assign(&m_out);
        Ok((h, BlockCache { ln1, attn, ln2, mlp }))
    }

    pub fn backward<T: Real>(
        &self,
        ps: &mut ParamSet<T>,
        cache: &BlockCache<T>,
        dy: &Tensor<T>,
        batch: usize,
        len: usize,
    ) -> Tensor<T> {
        let dm_in = self.mlp.backward(ps, &cache.mlp, dy);
        let mut dh = self.ln2.backward(ps, &cache.ln2, &dm_in);
        dh.add_assign(dy);
        let da_in = self.attn.backward(ps, &cache.attn, &dh, batch, len);
        let mut dx = self.ln1.backward(ps, &cache.ln1, &da_in);
        dx.add_assign(&dh);
        dx
    }
}

/// Stack of [`TransformerBlock`]s followed by a final layer norm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalTransformer {
    pub blocks: Vec<TransformerBlock>,
    pub ln_f: LayerNorm,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct TransformerCache<T> {
    blocks: Vec<BlockCache<T>>,
    ln_f: LayerNormCache<T>,
}

impl CausalTransformer {
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        path: &str,
        dim: usize,
        heads: usize,
        layers: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let blocks = (0..layers)
            .map(|i| TransformerBlock::new(ps, &format!("{path}.block{i}"), dim, heads, rng))
            .collect();
        CausalTransformer {
            blocks,
            ln_f: LayerNorm::new(ps, &format!("{path}.ln_f"), dim),
            dim,
        }
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamSet<T>,
        x: &Tensor<T>,
        batch: usize,
        len: usize,
    ) -> Result<(Tensor<T>, TransformerCache<T>)> {
        let mut h = x.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(ps, &h, batch, len)?;
            blocks.push(cache);
            h = next;
        }
        let (y, ln_f) = self.ln_f.forward(ps, &h);
        Ok((y, TransformerCache { blocks, ln_f }))
    }

    pub fn backward<T: Real>(
        &self,
        ps: &mut ParamSet<T>,
        cache: &TransformerCache<T>,
        dy: &Tensor<T>,
        batch: usize,
        len: usize,
    ) -> Tensor<T> {
        let mut g = self.ln_f.backward(ps, &cache.ln_f, dy);
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            g = block.backward(ps, bc, &g, batch, len);
        }
        g
    }
}
