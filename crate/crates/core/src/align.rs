//! Contrastive alignment of a trainable encoder to a frozen target space.
//!
//! The frozen side is a planted linear map: targets are a fixed random
//! rotation of the source features plus a little noise, L2-normalised. The
//! encoder sees only the source features and is trained with InfoNCE until
//! its normalised output retrieves the matching target row.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, Mlp, ParamSet, Real, Tensor};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub temperature: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    /// Encoder widths, input first. Input and output widths must match the
    /// planted map, which is square.
    pub encoder: Vec<usize>,
    pub train_pairs: usize,
    pub holdout_pairs: usize,
    /// Norm of the noise added to each target before normalisation.
    pub target_noise: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            temperature: 0.07,
            batch_size: 64,
            steps: 2000,
            lr: 1e-3,
            encoder: vec![32, 64, 32],
            train_pairs: 4096,
            holdout_pairs: 128,
            target_noise: 0.05,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("align: {m}")));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if self.encoder.len() < 2 || self.encoder.contains(&0) {
            return bad("encoder needs at least two positive widths");
        }
        if self.encoder[0] != *self.encoder.last().expect("len checked") {
            return bad("encoder input and output widths must match");
        }
        if self.batch_size < 2 || self.train_pairs < self.batch_size {
            return bad("need batch_size >= 2 and train_pairs >= batch_size");
        }
        if self.holdout_pairs < 2 {
            return bad("holdout_pairs must be at least 2");
        }
        if !(self.lr > 0.0) || self.target_noise < 0.0 {
            return bad("lr must be positive and target_noise non-negative");
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.encoder[0]
    }
}

/// Mean InfoNCE loss of L2-normalised rows against their partners, with the
/// positive included in each denominator. Returns the loss and its gradient
/// with respect to `encoded`.
pub fn infonce_loss<T: Real>(encoded: &Tensor<T>, target: &Tensor<T>, temperature: f64) -> Result<(T, Tensor<T>)> {
    let (n, d) = encoded.dims2();
    if n == 0 {
        return Err(Error::Shape("InfoNCE needs at least one pair".into()));
    }
    if target.dims2() != (n, d) {
        return Err(Error::Shape(format!(
            "InfoNCE: encoded {:?}, target {:?}",
            encoded.shape(),
            target.shape()
        )));
    }
    let inv_t = T::from_f64(1.0 / temperature);
    let mut logits = vec![T::zero(); n * n];
    T::gemm(false, true, n, n, d, inv_t, encoded.data(), target.data(), T::zero(), &mut logits);
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut total = T::zero();
    let mut dlogits = vec![T::zero(); n * n];
    for i in 0..n {
        let row = &logits[i * n..(i + 1) * n];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - m).exp()).sum();
        total += z.ln() + m - row[i];
        for j in 0..n {
            let p = (row[j] - m).exp() / z;
            dlogits[i * n + j] = (p - if i == j { T::one() } else { T::zero() }) * inv_n;
        }
    }
    let mut grad = vec![T::zero(); n * d];
    T::gemm(false, false, n, d, n, inv_t, &dlogits, target.data(), T::zero(), &mut grad);
    Ok((total * inv_n, Tensor::matrix(n, d, grad)?))
}

/// Row-wise L2 normalisation; returns the normalised rows and the norms.
pub fn l2_normalize<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
    let (n, _) = x.dims2();
    let mut y = x.clone();
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let r = y.row_mut(i);
        let norm = r.iter().map(|&v| v * v).sum::<T>().sqrt().max(T::from_f64(1e-12));
        r.iter_mut().for_each(|v| *v /= norm);
        norms.push(norm);
    }
    (y, norms)
}

/// Backward of [`l2_normalize`]: `dx = (dy - y (y . dy)) / |x|`.
pub fn l2_normalize_backward<T: Real>(y: &Tensor<T>, norms: &[T], dy: &Tensor<T>) -> Tensor<T> {
    let (n, _) = y.dims2();
    let mut dx = dy.clone();
    for i in 0..n {
        let yr = y.row(i);
        let proj: T = yr.iter().zip(dy.row(i)).map(|(&a, &b)| a * b).sum();
        for (g, &yv) in dx.row_mut(i).iter_mut().zip(yr) {
            *g = (*g - yv * proj) / norms[i];
        }
    }
    dx
}

/// The trainable side `s_theta`: an MLP followed by L2 normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignEncoder<T = f32> {
    pub mlp: Mlp,
    pub params: ParamSet<T>,
}

pub struct EncoderCache<T> {
    mlp: crate::nn::layers::MlpCache<T>,
    out: Tensor<T>,
    norms: Vec<T>,
}

impl<T: Real> AlignEncoder<T> {
    pub fn new(widths: &[usize], seed: u64) -> Self {
        let mut params = ParamSet::new();
        let mlp = Mlp::new(&mut params, "encoder", widths, Activation::Tanh, &mut seed::rng(seed, "align-init", &[]));
        AlignEncoder { mlp, params }
    }

    pub fn encode(&self, source: &Tensor<T>) -> Result<(Tensor<T>, EncoderCache<T>)> {
        let (h, mlp) = self.mlp.forward(&self.params, source)?;
        let (out, norms) = l2_normalize(&h);
        Ok((out.clone(), EncoderCache { mlp, out, norms }))
    }

    /// Accumulate parameter gradients from `d loss / d encoded`.
    pub fn backward(&mut self, cache: &EncoderCache<T>, d_encoded: &Tensor<T>) {
        let dh = l2_normalize_backward(&cache.out, &cache.norms, d_encoded);
        self.mlp.backward(&mut self.params, &cache.mlp, &dh);
    }
}

/// Frozen target encoder `f_phi`: a planted orthogonal map.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTarget {
    pub params: ParamSet<f32>,
    pub dim: usize,
    pub noise: f64,
}

impl PlantedTarget {
    pub fn new(dim: usize, noise: f64, seed: u64) -> Self {
        let mut rng = seed::rng(seed, "align-target", &[]);
        let mut q: Vec<f64> = Vec::with_capacity(dim * dim);
        while q.len() < dim * dim {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            for row in q.chunks_exact(dim) {
                let d: f64 = v.iter().zip(row).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(row).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                q.extend(v.iter().map(|x| x / norm));
            }
        }
        let mut params = ParamSet::new();
        params.add(
            "target.rotation",
            Tensor::matrix(dim, dim, q.into_iter().map(|x| x as f32).collect()).expect("square"),
        );
        PlantedTarget { params, dim, noise }
    }

    pub fn rotation(&self) -> &Tensor<f32> {
        self.params.value(crate::nn::ParamId(0))
    }

    /// `n` source rows and their normalised targets, from stream `tag`.
    pub fn pairs(&self, n: usize, seed: u64, tag: &str) -> (Tensor<f32>, Tensor<f32>) {
        let d = self.dim;
        let mut rng = seed::rng(seed, tag, &[]);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let source: Vec<f64> = (0..n * d).map(|_| normal()).collect();
        let rot = self.rotation().data();
        let mut target = Vec::with_capacity(n * d);
        for i in 0..n {
            let x = &source[i * d..(i + 1) * d];
            let mut y: Vec<f64> = rot
                .chunks_exact(d)
                .map(|row| row.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum::<f64>())
                .collect();
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            y.iter_mut().for_each(|v| *v /= norm);
            let noise: Vec<f64> = (0..d).map(|_| normal() * self.noise / (d as f64).sqrt()).collect();
            y.iter_mut().zip(&noise).for_each(|(v, e)| *v += e);
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            target.extend(y.iter().map(|v| (v / norm) as f32));
        }
        (
            Tensor::matrix(n, d, source.into_iter().map(|v| v as f32).collect()).expect("sized"),
            Tensor::matrix(n, d, target).expect("sized"),
        )
    }
}

/// Fraction of rows whose most similar target (by cosine) is their own.
pub fn retrieval_top1(encoded: &Tensor<f32>, target: &Tensor<f32>) -> Result<f64> {
    let (n, d) = encoded.dims2();
    if n < 2 || target.dims2() != (n, d) {
        return Err(Error::Shape("retrieval needs matching batches of at least two rows".into()));
    }
    let (e, _) = l2_normalize(encoded);
    let (t, _) = l2_normalize(target);
    let mut sims = vec![0f32; n * n];
    f32::gemm(false, true, n, n, d, 1.0, e.data(), t.data(), 0.0, &mut sims);
    let hits = (0..n)
        .filter(|&i| {
            let row = &sims[i * n..(i + 1) * n];
            // First maximum wins, so ties never count as a hit by accident.
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (j, &v)| if v > row[b] { j } else { b });
            best == i
        })
        .count();
    Ok(hits as f64 / n as f64)
}

#[derive(Debug, Clone)]
pub struct AlignOutcome {
    pub encoder: AlignEncoder<f32>,
    pub losses: Vec<f32>,
    pub holdout_top1: f64,
    pub initial_top1: f64,
    pub target_fingerprint_before: String,
    pub target_fingerprint_after: String,
}

/// Train the encoder on the planted task.
pub fn train_align(cfg: &AlignConfig, target: &PlantedTarget, run_seed: u64) -> Result<AlignOutcome> {
    cfg.validate()?;
    if cfg.dim() != target.dim {
        return Err(Error::Config(format!(
            "align encoder width {} does not match target dim {}",
            cfg.dim(),
            target.dim
        )));
    }
    let before = target.params.fingerprint();
    let (train_x, train_y) = target.pairs(cfg.train_pairs, run_seed, "align-train");
    let (hold_x, hold_y) = target.pairs(cfg.holdout_pairs, run_seed, "align-holdout");
    let mut encoder = AlignEncoder::<f32>::new(&cfg.encoder, run_seed);
    let initial_top1 = retrieval_top1(&encoder.encode(&hold_x)?.0, &hold_y)?;
    let mut opt = AdamState::new(AdamConfig::with_lr(cfg.lr), &encoder.params);
    let mut rng = seed::rng(run_seed, "align-batches", &[]);
    let mut losses = Vec::with_capacity(cfg.steps);
    let d = cfg.dim();
    for step in 0..cfg.steps {
        let idx = rand::seq::index::sample(&mut rng, cfg.train_pairs, cfg.batch_size);
        let mut xb = Vec::with_capacity(cfg.batch_size * d);
        let mut yb = Vec::with_capacity(cfg.batch_size * d);
        for i in idx.iter() {
            xb.extend_from_slice(train_x.row(i));
            yb.extend_from_slice(train_y.row(i));
        }
        let xb = Tensor::matrix(cfg.batch_size, d, xb)?;
        let yb = Tensor::matrix(cfg.batch_size, d, yb)?;
        let (enc, cache) = encoder.encode(&xb)?;
        let (loss, grad) = infonce_loss(&enc, &yb, cfg.temperature)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("InfoNCE loss is {loss} at step {step}")));
        }
        losses.push(loss);
        encoder.backward(&cache, &grad);
        opt.step(&mut encoder.params)?;
    }
    let holdout_top1 = retrieval_top1(&encoder.encode(&hold_x)?.0, &hold_y)?;
    Ok(AlignOutcome {
        encoder,
        losses,
        holdout_top1,
        initial_top1,
        target_fingerprint_before: before,
        target_fingerprint_after: target.params.fingerprint(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::finite_diff_check;

    fn unit_rows(rows: &[&[f64]]) -> Tensor<f64> {
        let d = rows[0].len();
        let (t, _) = l2_normalize(&Tensor::matrix(rows.len(), d, rows.concat()).unwrap());
        t
    }

    #[test]
    fn infonce_examples() {
        let a = unit_rows(&[&[1.0, 0.0]]);
        assert_eq!(infonce_loss(&a, &a, 0.07).unwrap().0, 0.0);

        let same = unit_rows(&[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]]);
        let (l, _) = infonce_loss(&same, &same, 0.5).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);

        // s_i . f_i = 1, s_i . f_j = -1
        let s = unit_rows(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        let (l, _) = infonce_loss(&s, &s, 0.07).unwrap();
        let expect = -((1.0f64 / 0.07).exp() / ((1.0f64 / 0.07).exp() + (-1.0f64 / 0.07).exp())).ln();
        assert!((l - expect).abs() < 1e-15);
        assert!((l - 3.904_687_043_2e-13).abs() < 1e-15, "{l:e}");

        assert!(infonce_loss(&Tensor::<f64>::zeros(&[0, 2]), &Tensor::zeros(&[0, 2]), 0.1).is_err());
    }

    #[test]
    fn infonce_is_permutation_invariant() {
        let e = unit_rows(&[&[1.0, 0.2, 0.0], &[0.1, 1.0, 0.3], &[0.0, -0.4, 1.0]]);
        let t = unit_rows(&[&[0.9, 0.1, 0.1], &[0.0, 1.0, 0.0], &[0.3, 0.0, 1.0]]);
        let perm = [2, 0, 1];
        let pe = unit_rows(&perm.map(|i| e.row(i)));
        let pt = unit_rows(&perm.map(|i| t.row(i)));
        let (a, _) = infonce_loss(&e, &t, 0.1).unwrap();
        let (b, _) = infonce_loss(&pe, &pt, 0.1).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let mut enc = AlignEncoder::<f64>::new(&[6, 10, 6], 3);
        let target = PlantedTarget::new(6, 0.1, 4);
        let (x, y) = target.pairs(5, 5, "t");
        let (x, y) = (x.cast::<f64>(), y.cast::<f64>());
        let mlp = enc.mlp.clone();
        let report = finite_diff_check(&mut enc.params, 1e-4, 128, 2, |ps, grad| {
            let (h, mc) = mlp.forward(ps, &x).unwrap();
            let (e, norms) = l2_normalize(&h);
            let (loss, g) = infonce_loss(&e, &y, 0.2).unwrap();
            if grad {
                let dh = l2_normalize_backward(&e, &norms, &g);
                mlp.backward(ps, &mc, &dh);
            }
            loss
        });
        assert!(report.max_rel_error <= 1e-3, "{report:?}");
    }

    #[test]
    fn exact_inverse_retrieves_everything() {
        let target = PlantedTarget::new(8, 0.0, 1);
        let (x, y) = target.pairs(64, 2, "t");
        let mut enc = AlignEncoder::<f32>::new(&[8, 8], 0);
        // Weight is [in, out]: y = x W, so W = R^T.
        let rot = target.rotation().clone();
        let w = enc.params.value_mut(enc.mlp.layers[0].w);
        for i in 0..8 {
            for j in 0..8 {
                w.data_mut()[i * 8 + j] = rot.data()[j * 8 + i];
            }
        }
        enc.params.value_mut(enc.mlp.layers[0].b).fill(0.0);
        assert_eq!(retrieval_top1(&enc.encode(&x).unwrap().0, &y).unwrap(), 1.0);
    }

    #[test]
    fn zero_steps_keeps_init_and_training_is_deterministic() {
        let cfg = AlignConfig {
            steps: 0,
            ..AlignConfig::default()
        };
        let target = PlantedTarget::new(cfg.dim(), cfg.target_noise, 1);
        let out = train_align(&cfg, &target, 9).unwrap();
        assert_eq!(out.encoder.params, AlignEncoder::<f32>::new(&cfg.encoder, 9).params);

        let cfg = AlignConfig {
            steps: 30,
            train_pairs: 256,
            ..AlignConfig::default()
        };
        let a = train_align(&cfg, &target, 9).unwrap();
        let b = train_align(&cfg, &target, 9).unwrap();
        assert_eq!(a.encoder.params.fingerprint(), b.encoder.params.fingerprint());
        assert_eq!(a.target_fingerprint_before, a.target_fingerprint_after);
    }
}
