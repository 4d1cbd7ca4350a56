//! Finite-difference checks of every differentiable operation, in one place
//! so that the command line and the test suites run the same cases.

use rand::Rng as _;
use serde::Serialize;

use crate::align::{infonce_loss, l2_normalize, l2_normalize_backward, AlignEncoder, PlantedTarget};
use crate::config::WorldConfig;
use crate::error::Result;
use crate::gasp::bc::{bc_batch, bc_loss};
use crate::gasp::rpg::rpg_batch;
use crate::gasp::{gasp_loss, labelled_batch, rpg_loss, GaspDatasetSpec, GaspExample, GaspModel, ModelConfig};
use crate::nn::loss::{bce_with_logits, cross_entropy, entropy, entropy_grad, masked_softmax};
use crate::nn::{finite_diff_check, Activation, CausalTransformer, GradCheckReport, LayerNorm, Linear, Mlp, ParamSet, Tensor};
use crate::oracle::GradientTable;
use crate::planner::{ppo_loss, ActorCritic, PpoBatch, PpoConfig};
use crate::seed;

#[derive(Debug, Clone, Serialize)]
pub struct GradCase {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCase {
    fn new(name: &'static str, tolerance: f64, report: GradCheckReport) -> Self {
        GradCase {
            name,
            max_rel_error: report.max_rel_error,
            checked: report.checked,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Purely linear or quadratic compositions.
pub const EXACT_TOL: f64 = 1e-6;
pub const TOL: f64 = 1e-3;

fn random_matrix(rows: usize, cols: usize, rng: &mut seed::Rng) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized")
}

fn linear() -> GradCase {
    let mut rng = seed::rng_from(1);
    let mut ps = ParamSet::<f64>::new();
    let lin = Linear::new(&mut ps, "linear", 5, 4, &mut rng);
    let x = ps.add_uniform("input", &[3, 5], 1, &mut rng);
    let report = finite_diff_check(&mut ps, 1e-3, 256, 7, |ps, grad| {
        let xv = ps.value(x).clone();
        let y = lin.forward(ps, &xv).expect("shapes fixed");
        if grad {
            let dx = lin.backward(ps, &xv, &y);
            ps.param_mut(x).grad.add_assign(&dx);
        }
        y.data().iter().map(|v| 0.5 * v * v).sum()
    });
    GradCase::new("linear", EXACT_TOL, report)
}

fn mlp() -> GradCase {
    let mut rng = seed::rng_from(2);
    let mut ps = ParamSet::<f64>::new();
    let ln = LayerNorm::new(&mut ps, "ln", 6);
    let mlp = Mlp::new(&mut ps, "mlp", &[6, 8, 8, 3], Activation::Tanh, &mut rng);
    let x = ps.add_uniform("input", &[4, 6], 1, &mut rng);
    let target = random_matrix(4, 3, &mut rng);
    let report = finite_diff_check(&mut ps, 1e-4, 256, 3, |ps, grad| {
        let xv = ps.value(x).clone();
        let (h, lc) = ln.forward(ps, &xv);
        let (y, mc) = mlp.forward(ps, &h).expect("shapes fixed");
        let diff: Vec<f64> = y.data().iter().zip(target.data()).map(|(a, b)| a - b).collect();
        if grad {
            let dy = Tensor::matrix(4, 3, diff.iter().map(|d| 2.0 * d).collect()).expect("sized");
            let dh = mlp.backward(ps, &mc, &dy);
            let dx = ln.backward(ps, &lc, &dh);
            ps.param_mut(x).grad.add_assign(&dx);
        }
        diff.iter().map(|d| d * d).sum()
    });
    GradCase::new("layer norm + tanh mlp", TOL, report)
}

fn attention() -> GradCase {
    let mut rng = seed::rng_from(5);
    let mut ps = ParamSet::<f64>::new();
    let tr = CausalTransformer::new(&mut ps, "t", 8, 2, 2, &mut rng);
    let (batch, len) = (2, 4);
    let x = ps.add_uniform("input", &[batch * len, 8], 1, &mut rng);
    let target = random_matrix(batch * len, 8, &mut rng);
    let report = finite_diff_check(&mut ps, 1e-4, 256, 11, |ps, grad| {
        let xv = ps.value(x).clone();
        let (y, cache) = tr.forward(ps, &xv, batch, len).expect("layout fixed");
        if grad {
            let dx = tr.backward(ps, &cache, &target, batch, len);
            ps.param_mut(x).grad.add_assign(&dx);
        }
        y.data().iter().zip(target.data()).map(|(a, b)| a * b).sum()
    });
    GradCase::new("causal attention blocks", TOL, report)
}

fn bce() -> GradCase {
    let mut rng = seed::rng_from(9);
    let mut ps = ParamSet::<f64>::new();
    let z = ps.add_uniform("logits", &[5, 4], 1, &mut rng);
    for v in ps.value_mut(z).data_mut() {
        *v *= 3.0;
    }
    let targets = Tensor::matrix(5, 4, (0..20).map(|_| rng.random_range(0..2) as f64).collect()).expect("sized");
    let mask: Vec<bool> = (0..20).map(|i| i % 7 != 3).collect();
    let report = finite_diff_check(&mut ps, 1e-4, 64, 1, |ps, grad| {
        let (l, g) = bce_with_logits(ps.value(z), &targets, &mask).expect("shapes fixed");
        if grad {
            ps.param_mut(z).grad.add_assign(&g);
        }
        l
    });
    GradCase::new("binary cross-entropy", TOL, report)
}

fn softmax_losses() -> GradCase {
    let mut rng = seed::rng_from(10);
    let mut ps = ParamSet::<f64>::new();
    let z = ps.add_uniform("logits", &[5, 4], 1, &mut rng);
    let classes = [Some(0), None, Some(3), Some(1), Some(2)];
    let support: Vec<bool> = (0..20).map(|i| i != 2 && i != 19).collect();
    let report = finite_diff_check(&mut ps, 1e-4, 64, 1, |ps, grad| {
        let logits = ps.value(z).clone();
        let (ce, gce) = cross_entropy(&logits, &classes, Some(&support)).expect("shapes fixed");
        let mut h = 0.0;
        let mut gh = vec![0.0; 20];
        for r in 0..5 {
            let p = masked_softmax(logits.row(r), Some(&support[r * 4..r * 4 + 4])).expect("support non-empty");
            h += entropy(&p);
            gh[r * 4..r * 4 + 4].copy_from_slice(&entropy_grad(&p));
        }
        if grad {
            let g = ps.param_mut(z).grad.data_mut();
            for i in 0..20 {
                g[i] += gce.data()[i] + 0.3 * gh[i];
            }
        }
        ce + 0.3 * h
    });
    GradCase::new("cross-entropy + entropy", TOL, report)
}

fn infonce() -> GradCase {
    let mut enc = AlignEncoder::<f64>::new(&[6, 10, 6], 3);
    let target = PlantedTarget::new(6, 0.1, 4);
    let (x, y) = target.pairs(5, 5, "gradcheck");
    let (x, y) = (x.cast::<f64>(), y.cast::<f64>());
    let mlp = enc.mlp.clone();
    let report = finite_diff_check(&mut enc.params, 1e-4, 128, 2, |ps, grad| {
        let (h, mc) = mlp.forward(ps, &x).expect("shapes fixed");
        let (e, norms) = l2_normalize(&h);
        let (loss, g) = infonce_loss(&e, &y, 0.2).expect("shapes fixed");
        if grad {
            let dh = l2_normalize_backward(&e, &norms, &g);
            mlp.backward(ps, &mc, &dh);
        }
        loss
    });
    GradCase::new("InfoNCE through the encoder", TOL, report)
}

fn small_world() -> WorldConfig {
    WorldConfig {
        embed_dim: 12,
        train_worlds: 20,
        ..WorldConfig::default()
    }
}

const SMALL: ModelConfig = ModelConfig {
    d_model: 8,
    heads: 2,
    layers: 1,
};

fn sequence_losses() -> Result<Vec<GradCase>> {
    let world = small_world();
    let data = GaspDatasetSpec::new(&world, 3, 8);
    let walks = data.examples(0..2, GaspDatasetSpec::train_walk)?;
    let demos = data.examples(0..2, GaspDatasetSpec::train_demo)?;
    let walk_refs: Vec<&GaspExample> = walks.iter().collect();
    let demo_refs: Vec<&GaspExample> = demos.iter().collect();

    let labelled = labelled_batch::<f64>(&walk_refs)?;
    let mut m = GaspModel::<f64>::new(12, SMALL, None, 3);
    let net = m.net.clone();
    let gasp = finite_diff_check(&mut m.params, 1e-5, 400, 1, |ps, g| {
        gasp_loss(&net, ps, &labelled, g).expect("batch fixed")
    });

    let table = GradientTable::enumerate(world.grid()?);
    let masked = rpg_batch::<f64>(&demo_refs, &table, 0.5, &mut seed::rng_from(3))?;
    let mut m = GaspModel::<f64>::new(12, SMALL, Some(table.len()), 4);
    let net = m.net.clone();
    let rpg = finite_diff_check(&mut m.params, 1e-5, 400, 2, |ps, g| rpg_loss(&net, ps, &masked, g).expect("batch fixed"));

    let demos_batch = bc_batch::<f64>(&demo_refs)?;
    let mut m = GaspModel::<f64>::new(12, SMALL, None, 5);
    let net = m.net.clone();
    let bc = finite_diff_check(&mut m.params, 1e-5, 400, 4, |ps, g| {
        bc_loss(&net, ps, &demos_batch, g).expect("batch fixed")
    });
    Ok(vec![
        GradCase::new("sequence model, multi-label loss", TOL, gasp),
        GradCase::new("sequence model, masked-category loss", TOL, rpg),
        GradCase::new("sequence model, behaviour cloning", TOL, bc),
    ])
}

fn ppo() -> GradCase {
    let ac = ActorCritic::<f64>::new(3, &[4, 4, 4], 7);
    let mut old = ac.clone();
    for (_, p) in old.params.iter_mut() {
        for v in p.value.data_mut() {
            *v *= 0.9;
        }
    }
    // A two-step episode: an interior step then a corner step.
    let features = Tensor::matrix(2, 3, vec![0.2, -0.4, 0.9, -1.0, 0.3, 0.5]).expect("sized");
    let masks = vec![[true; 4], [false, true, false, true]];
    let actions = vec![2, 1];
    let (old_probs, _) = old.evaluate(&features, &masks).expect("shapes fixed");
    let batch = PpoBatch {
        old_probs: old_probs.iter().zip(&actions).map(|(p, &a)| p[a]).collect(),
        features,
        actions,
        masks,
        advantages: vec![0.7, -1.3],
        returns: vec![1.5, -0.5],
    };
    let cfg = PpoConfig::default();
    let mut ps = ac.params.clone();
    let report = finite_diff_check(&mut ps, 1e-6, 1000, 1, |ps, g| {
        ppo_loss(&ac.net, ps, &batch, &cfg, g).expect("batch fixed").total
    });
    GradCase::new("PPO actor-critic loss", TOL, report)
}

/// Run every case.
pub fn grad_check_all() -> Result<Vec<GradCase>> {
    let mut cases = vec![linear(), mlp(), attention(), bce(), softmax_losses(), infonce()];
    cases.extend(sequence_losses()?);
    cases.push(ppo());
    Ok(cases)
}
