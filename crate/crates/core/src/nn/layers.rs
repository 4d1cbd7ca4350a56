use serde::{Deserialize, Serialize};

use super::{c, ParamId, ParamSet, Real, Tensor};
use crate::error::{Error, Result};

/// Affine map `y = x W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, path: &str, fan_in: usize, fan_out: usize, rng: &mut impl rand::Rng) -> Self {
        let w = ps.add_uniform(&format!("{path}.weight"), &[fan_in, fan_out], fan_in, rng);
        let b = ps.add_uniform(&format!("{path}.bias"), &[fan_out], fan_in, rng);
        Linear { w, b, fan_in, fan_out }
    }

    /// `x` is `[n, fan_in]`.
    pub fn forward<T: Real>(&self, ps: &ParamSet<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, d) = x.dims2();
        if d != self.fan_in {
            return Err(Error::Shape(format!(
                "linear {}: expected {} inputs, got {d}",
                ps.path(self.w),
                self.fan_in
            )));
        }
        let bias = ps.value(self.b).data();
        let mut out = Vec::with_capacity(n * self.fan_out);
        for _ in 0..n {
            out.extend_from_slice(bias);
        }
        T::gemm(
            false,
            false,
            n,
            self.fan_out,
            self.fan_in,
            T::one(),
            x.data(),
            ps.value(self.w).data(),
            T::one(),
            &mut out,
        );
        Tensor::matrix(n, self.fan_out, out)
    }

    /// Accumulates weight/bias gradients and returns `dL/dx`.
    pub fn backward<T: Real>(&self, ps: &mut ParamSet<T>, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (n, _) = x.dims2();
        let mut dx = vec![T::zero(); n * self.fan_in];
        T::gemm(
            false,
            true,
            n,
            self.fan_in,
            self.fan_out,
            T::one(),
            dy.data(),
            ps.value(self.w).data(),
            T::zero(),
            &mut dx,
        );
        let gw = ps.param_mut(self.w);
        T::gemm(
            true,
            false,
            self.fan_in,
            self.fan_out,
            n,
            T::one(),
            x.data(),
            dy.data(),
            T::one(),
            gw.grad.data_mut(),
        );
        let gb = ps.param_mut(self.b).grad.data_mut();
        for i in 0..n {
            for (g, d) in gb.iter_mut().zip(dy.row(i)) {
                *g += *d;
            }
        }
        Tensor::matrix(n, self.fan_in, dx).expect("sized above")
    }
}

/// Per-row layer normalisation with learned scale and shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Tensor<T>,
    rstd: Vec<T>,
}

impl LayerNorm {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, path: &str, dim: usize) -> Self {
        let gamma = ps.add_const(&format!("{path}.gamma"), &[dim], 1.0);
        let beta = ps.add_const(&format!("{path}.beta"), &[dim], 0.0);
        LayerNorm { gamma, beta, dim }
    }

    pub fn forward<T: Real>(&self, ps: &ParamSet<T>, x: &Tensor<T>) -> (Tensor<T>, LayerNormCache<T>) {
        let (n, d) = x.dims2();
        assert_eq!(d, self.dim, "layer norm width");
        let gamma = ps.value(self.gamma).data();
        let beta = ps.value(self.beta).data();
        let inv_d = c::<T>(1.0 / d as f64);
        let mut xhat = Tensor::zeros(&[n, d]);
        let mut y = Tensor::zeros(&[n, d]);
        let mut rstd = Vec::with_capacity(n);
        for i in 0..n {
            let row = x.row(i);
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let r = T::one() / (var + c(LAYER_NORM_EPS)).sqrt();
            rstd.push(r);
            let xh = xhat.row_mut(i);
            for j in 0..d {
                xh[j] = (row[j] - mean) * r;
            }
            let yr = y.row_mut(i);
            for j in 0..d {
                yr[j] = xhat.row(i)[j] * gamma[j] + beta[j];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward<T: Real>(&self, ps: &mut ParamSet<T>, cache: &LayerNormCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (n, d) = dy.dims2();
        let inv_d = c::<T>(1.0 / d as f64);
        {
            let gg = ps.param_mut(self.gamma).grad.data_mut();
            for i in 0..n {
                for ((g, &dyv), &xh) in gg.iter_mut().zip(dy.row(i)).zip(cache.xhat.row(i)) {
                    *g += dyv * xh;
                }
            }
        }
        {
            let gb = ps.param_mut(self.beta).grad.data_mut();
            for i in 0..n {
                for (g, &dyv) in gb.iter_mut().zip(dy.row(i)) {
                    *g += dyv;
                }
            }
        }
        let gamma = ps.value(self.gamma).data();
        let mut dx = Tensor::zeros(&[n, d]);
        let mut dxhat = vec![T::zero(); d];
        for i in 0..n {
            let xh = cache.xhat.row(i);
            for j in 0..d {
                dxhat[j] = dy.row(i)[j] * gamma[j];
            }
            let mean_d = dxhat.iter().copied().sum::<T>() * inv_d;
            let mean_dx = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
            let r = cache.rstd[i];
            let out = dx.row_mut(i);
            for j in 0..d {
                out[j] = r * (dxhat[j] - mean_d - xh[j] * mean_dx);
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// Tanh approximation of GELU.
    Gelu,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

impl Activation {
    pub fn forward<T: Real>(self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        match self {
            Activation::Tanh => y.data_mut().iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Gelu => y.data_mut().iter_mut().for_each(|v| {
                let x = *v;
                let u = c::<T>(GELU_K) * (x + c::<T>(GELU_C) * x * x * x);
                *v = c::<T>(0.5) * x * (T::one() + u.tanh());
            }),
        }
        y
    }

    /// `dL/dx` given the pre-activation input `x`.
    pub fn backward<T: Real>(self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let mut dx = dy.clone();
        match self {
            Activation::Tanh => {
                for (g, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
                    let t = xv.tanh();
                    *g *= T::one() - t * t;
                }
            }
            Activation::Gelu => {
                for (g, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
                    let k = c::<T>(GELU_K);
                    let cc = c::<T>(GELU_C);
                    let u = k * (xv + cc * xv * xv * xv);
                    let t = u.tanh();
                    let du = k * (T::one() + c::<T>(3.0) * cc * xv * xv);
                    let half = c::<T>(0.5);
                    *g *= half * (T::one() + t) + half * xv * (T::one() - t * t) * du;
                }
            }
        }
        dx
    }
}

/// Multi-layer perceptron: linear layers with an activation between them
/// and none after the last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    inputs: Vec<Tensor<T>>,
    pre: Vec<Tensor<T>>,
}

impl Mlp {
    /// `sizes` lists every width including input and output.
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        path: &str,
        sizes: &[usize],
        activation: Activation,
        rng: &mut impl rand::Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output widths");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(ps, &format!("{path}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out
    }

    pub fn forward<T: Real>(&self, ps: &ParamSet<T>, x: &Tensor<T>) -> Result<(Tensor<T>, MlpCache<T>)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(ps, &h)?;
            inputs.push(h);
            if i + 1 < self.layers.len() {
                h = self.activation.forward(&z);
                pre.push(z);
            } else {
                h = z;
            }
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    pub fn backward<T: Real>(&self, ps: &mut ParamSet<T>, cache: &MlpCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let mut g = dy.clone();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                g = self.activation.backward(&cache.pre[i], &g);
            }
            g = self.layers[i].backward(ps, &cache.inputs[i], &g);
        }
        g
    }
}
