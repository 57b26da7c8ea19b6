//! Learned state–action features `φ(s, a)` for linear value estimation.
//!
//! A small fully connected network with rectifier hidden layers and a softmax
//! output, so every feature vector lies on the probability simplex
//! (`‖φ‖₂ ≤ ‖φ‖₁ = 1`). Two bias-free linear heads predict reward and utility
//! from `φ`; the network is trained on random-policy rollouts and then frozen.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::rng::{seed_rng, StreamRng};

/// Anything that maps `(state, action)` to a feature vector of fixed length.
pub trait FeatureFn {
    fn dim(&self) -> usize;
    fn features_into(&self, state: &[f64], action: &[f64], out: &mut [f64]);

    fn features(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.features_into(state, action, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            hidden: vec![64, 32],
            output_dim: 16,
        }
    }
}

impl ArchConfig {
    /// Layer sizes used in the original experiments.
    pub fn paper() -> Self {
        ArchConfig {
            hidden: vec![256, 128, 64, 64],
            output_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 128,
            epochs: 40,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutBuffer {
    pub samples: Vec<Sample>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `n` transitions from uniformly random actions, in episodes of `horizon`
/// steps started from the environment's initial-state law.
pub fn collect_rollouts<E: Environment>(
    env: &mut E,
    n: usize,
    horizon: usize,
    rng: &mut StreamRng,
) -> Result<RolloutBuffer> {
    if n == 0 {
        return Err(Error::validation("rollout buffer size must be at least 1"));
    }
    if horizon == 0 {
        return Err(Error::validation("horizon must be at least 1"));
    }
    let mut samples = Vec::with_capacity(n);
    while samples.len() < n {
        let s0 = env.sample_initial(rng);
        env.reset_to(&s0)?;
        for _ in 0..horizon {
            if samples.len() == n {
                break;
            }
            let state = env.state().to_vec();
            let action: Vec<f64> = (0..env.action_dim()).map(|_| rng.random::<f64>()).collect();
            let t = env.step(&action, rng)?;
            samples.push(Sample {
                state,
                action,
                reward: t.reward,
                utility: t.utility,
            });
        }
    }
    Ok(RolloutBuffer { samples })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    input: usize,
    output: usize,
    /// Row-major `output × input`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.input).zip(&self.bias))
        {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// The frozen trunk: `φ = softmax(W_L relu(… relu(W_1 x + b_1) …) + b_L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    input_dim: usize,
    layers: Vec<Dense>,
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

impl FeatureMap {
    pub fn new(input_dim: usize, arch: &ArchConfig, rng: &mut StreamRng) -> Result<Self> {
        if input_dim == 0 || arch.output_dim == 0 || arch.hidden.contains(&0) {
            return Err(Error::config("layer sizes must be positive"));
        }
        let mut sizes = vec![input_dim];
        sizes.extend(&arch.hidden);
        sizes.push(arch.output_dim);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (input, output) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / input as f64).sqrt()).expect("positive scale");
                Dense {
                    input,
                    output,
                    weights: (0..input * output).map(|_| normal.sample(rng)).collect(),
                    bias: vec![0.0; output],
                }
            })
            .collect();
        Ok(FeatureMap { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(|l| l.output))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Activations of every layer; the last entry is `φ`.
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.output];
            layer.forward(acts.last().expect("nonempty"), &mut out);
            if i == last {
                softmax_in_place(&mut out);
            } else {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }

    fn input(state: &[f64], action: &[f64]) -> Vec<f64> {
        state.iter().chain(action).copied().collect()
    }

    pub fn save(&self, heads: Option<&RewardHeads>, path: &Path) -> Result<()> {
        let meta = MapHeader {
            layer_sizes: self.layer_sizes(),
            activation: "relu".into(),
            output: "softmax".into(),
            heads: heads.is_some(),
        };
        let mut arrays: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            arrays.push(&l.weights);
            arrays.push(&l.bias);
        }
        if let Some(h) = heads {
            arrays.push(&h.theta_r);
            arrays.push(&h.theta_g);
        }
        crate::persist::write_file(path, MAP_KIND, &meta, &arrays)
    }

    pub fn load(path: &Path) -> Result<(Self, Option<RewardHeads>)> {
        let (meta, arrays): (MapHeader, _) = crate::persist::read_file(path, MAP_KIND)?;
        let bad = |m: &str| Error::Format {
            path: path.to_path_buf(),
            message: m.to_string(),
        };
        if meta.activation != "relu" || meta.output != "softmax" {
            return Err(bad("unsupported activation"));
        }
        let n_layers = meta.layer_sizes.len().saturating_sub(1);
        if n_layers == 0 || arrays.len() != 2 * n_layers + if meta.heads { 2 } else { 0 } {
            return Err(bad("array count does not match the layer sizes"));
        }
        let mut it = arrays.into_iter();
        let mut layers = Vec::with_capacity(n_layers);
        for w in meta.layer_sizes.windows(2) {
            let weights = it.next().expect("counted");
            let bias = it.next().expect("counted");
            if weights.len() != w[0] * w[1] || bias.len() != w[1] {
                return Err(bad("layer array has the wrong length"));
            }
            layers.push(Dense {
                input: w[0],
                output: w[1],
                weights,
                bias,
            });
        }
        let map = FeatureMap {
            input_dim: meta.layer_sizes[0],
            layers,
        };
        let heads = if meta.heads {
            let theta_r = it.next().expect("counted");
            let theta_g = it.next().expect("counted");
            if theta_r.len() != map.output_dim() || theta_g.len() != map.output_dim() {
                return Err(bad("head length does not match the output dimension"));
            }
            Some(RewardHeads { theta_r, theta_g })
        } else {
            None
        };
        Ok((map, heads))
    }
}

const MAP_KIND: &str = "feature_map";

#[derive(Serialize, Deserialize)]
struct MapHeader {
    layer_sizes: Vec<usize>,
    activation: String,
    output: String,
    heads: bool,
}

impl FeatureFn for FeatureMap {
    fn dim(&self) -> usize {
        self.output_dim()
    }

    fn features_into(&self, state: &[f64], action: &[f64], out: &mut [f64]) {
        let x = Self::input(state, action);
        let mut cur = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.output];
            layer.forward(&cur, &mut next);
            if i != last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cur = next;
        }
        softmax_in_place(&mut cur);
        out.copy_from_slice(&cur);
    }
}

/// Linear predictors `r ≈ θ_r·φ`, `g ≈ θ_g·φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardHeads {
    pub theta_r: Vec<f64>,
    pub theta_g: Vec<f64>,
}

impl RewardHeads {
    pub fn predict(&self, phi: &[f64]) -> (f64, f64) {
        let dot = |t: &[f64]| t.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>();
        (dot(&self.theta_r), dot(&self.theta_g))
    }
}

/// Network plus heads, with a flat parameter view for optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModelNet {
    pub map: FeatureMap,
    pub heads: RewardHeads,
}

impl FeatureModelNet {
    pub fn new(input_dim: usize, arch: &ArchConfig, rng: &mut StreamRng) -> Result<Self> {
        let map = FeatureMap::new(input_dim, arch, rng)?;
        let d = map.output_dim();
        Ok(FeatureModelNet {
            map,
            heads: RewardHeads {
                theta_r: vec![0.5; d],
                theta_g: vec![0.5; d],
            },
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.map.parameter_count() + 2 * self.map.output_dim()
    }

    /// Layout: per layer weights then bias, then `θ_r`, then `θ_g`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.map.layers {
            out.extend(&l.weights);
            out.extend(&l.bias);
        }
        out.extend(&self.heads.theta_r);
        out.extend(&self.heads.theta_g);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let mut at = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&params[at..at + dst.len()]);
            at += dst.len();
        };
        for l in &mut self.map.layers {
            take(&mut l.weights);
            take(&mut l.bias);
        }
        take(&mut self.heads.theta_r);
        take(&mut self.heads.theta_g);
    }

    /// Mask of parameters subject to weight decay (weights, not biases).
    fn decay_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.map.layers {
            out.extend(std::iter::repeat_n(true, l.weights.len()));
            out.extend(std::iter::repeat_n(false, l.bias.len()));
        }
        out.extend(std::iter::repeat_n(true, 2 * self.map.output_dim()));
        out
    }

    /// Mean over `batch` of `(θ_r·φ - r)² + (θ_g·φ - g)²`, accumulating its
    /// gradient into `grad` when given.
    pub fn loss_and_grad(&self, batch: &[&Sample], mut grad: Option<&mut [f64]>) -> f64 {
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let scale = 1.0 / batch.len() as f64;
        let d = self.map.output_dim();
        let mut total = 0.0;
        for sample in batch {
            let acts = self.map.forward_all(&FeatureMap::input(&sample.state, &sample.action));
            let phi = acts.last().expect("nonempty");
            let (pr, pg) = self.heads.predict(phi);
            let (er, eg) = (pr - sample.reward, pg - sample.utility);
            total += er * er + eg * eg;
            let Some(grad) = grad.as_deref_mut() else { continue };

            let heads_at = grad.len() - 2 * d;
            for k in 0..d {
                grad[heads_at + k] += scale * 2.0 * er * phi[k];
                grad[heads_at + d + k] += scale * 2.0 * eg * phi[k];
            }
            // dL/dφ, then through the softmax.
            let u: Vec<f64> = (0..d)
                .map(|k| 2.0 * (er * self.heads.theta_r[k] + eg * self.heads.theta_g[k]))
                .collect();
            let dot: f64 = u.iter().zip(phi).map(|(a, b)| a * b).sum();
            let mut delta: Vec<f64> = u.iter().zip(phi).map(|(uk, pk)| pk * (uk - dot)).collect();

            // Offsets of each layer's block in the flat layout.
            let mut offsets = Vec::with_capacity(self.map.layers.len());
            let mut at = 0;
            for l in &self.map.layers {
                offsets.push(at);
                at += l.weights.len() + l.bias.len();
            }
            for (li, layer) in self.map.layers.iter().enumerate().rev() {
                let input = &acts[li];
                let w_at = offsets[li];
                let b_at = w_at + layer.weights.len();
                for (o, dz) in delta.iter().enumerate() {
                    let row = &mut grad[w_at + o * layer.input..w_at + (o + 1) * layer.input];
                    for (gw, x) in row.iter_mut().zip(input) {
                        *gw += scale * dz * x;
                    }
                    grad[b_at + o] += scale * dz;
                }
                if li == 0 {
                    break;
                }
                let mut back = vec![0.0; layer.input];
                for (o, dz) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.input..(o + 1) * layer.input];
                    for (b, w) in back.iter_mut().zip(row) {
                        *b += w * dz;
                    }
                }
                // Rectifier: pass gradient only where the activation was positive.
                for (b, a) in back.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *b = 0.0;
                    }
                }
                delta = back;
            }
        }
        total * scale
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One decoupled-weight-decay Adam step.
    fn step(&mut self, params: &mut [f64], grad: &[f64], decay: &[bool], cfg: &OptConfig) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            let update = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
            if decay[i] {
                params[i] -= cfg.learning_rate * cfg.weight_decay * params[i];
            }
            params[i] -= cfg.learning_rate * update;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedFeatures {
    pub map: FeatureMap,
    pub heads: RewardHeads,
    /// Full-buffer loss after each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mini-batch loss at every optimizer step.
    pub step_losses: Vec<f64>,
}

pub fn train_feature_map(
    buffer: &RolloutBuffer,
    arch: &ArchConfig,
    opt: &OptConfig,
) -> Result<TrainedFeatures> {
    let first = buffer
        .samples
        .first()
        .ok_or_else(|| Error::validation("rollout buffer is empty"))?;
    if opt.batch_size == 0 || !(opt.learning_rate > 0.0) || opt.weight_decay < 0.0 {
        return Err(Error::config("invalid optimizer settings"));
    }
    let mut rng = seed_rng(opt.seed, "feature-map");
    let input_dim = first.state.len() + first.action.len();
    let mut net = FeatureModelNet::new(input_dim, arch, &mut rng)?;
    // Start the heads at the target means; φ sums to one, so this predicts
    // the mean everywhere.
    let n = buffer.len() as f64;
    let mean_r = buffer.samples.iter().map(|s| s.reward).sum::<f64>() / n;
    let mean_g = buffer.samples.iter().map(|s| s.utility).sum::<f64>() / n;
    net.heads.theta_r.iter_mut().for_each(|t| *t = mean_r);
    net.heads.theta_g.iter_mut().for_each(|t| *t = mean_g);
    let mut params = net.params();
    let mask = net.decay_mask();
    let mut grad = vec![0.0; params.len()];
    let mut adam = Adam::new(params.len());
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let all: Vec<&Sample> = buffer.samples.iter().collect();
    let mut epoch_losses = Vec::with_capacity(opt.epochs);
    let mut step_losses = Vec::new();

    for _ in 0..opt.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(opt.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &buffer.samples[i]).collect();
            let loss = net.loss_and_grad(&batch, Some(&mut grad));
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step: step_losses.len(),
                });
            }
            step_losses.push(loss);
            adam.step(&mut params, &grad, &mask, opt);
            net.set_params(&params);
        }
        epoch_losses.push(net.loss_and_grad(&all, None));
    }
    Ok(TrainedFeatures {
        map: net.map,
        heads: net.heads,
        epoch_losses,
        step_losses,
    })
}

/// Mean squared error of each head on `buffer`.
pub fn head_mse(map: &FeatureMap, heads: &RewardHeads, buffer: &RolloutBuffer) -> (f64, f64) {
    let n = buffer.len().max(1) as f64;
    let (mut er, mut eg) = (0.0, 0.0);
    for s in &buffer.samples {
        let (pr, pg) = heads.predict(&map.features(&s.state, &s.action));
        er += (pr - s.reward).powi(2);
        eg += (pg - s.utility).powi(2);
    }
    (er / n, eg / n)
}

/// Running maximum of `‖φ(s,a) - φ(s,a')‖₂ / ‖a - a'‖₂` over random probes in
/// the unit cube. Entry `k` is the estimate after `k + 1` probes; pairs with
/// identical actions are skipped.
pub fn estimate_lipschitz_rho<F: FeatureFn>(
    map: &F,
    state_dim: usize,
    action_dim: usize,
    probes: usize,
    rng: &mut StreamRng,
) -> Vec<f64> {
    let mut best = 0.0f64;
    let mut out = Vec::with_capacity(probes);
    for _ in 0..probes {
        let s: Vec<f64> = (0..state_dim).map(|_| rng.random()).collect();
        let a: Vec<f64> = (0..action_dim).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..action_dim).map(|_| rng.random()).collect();
        best = best.max(lipschitz_ratio(map, &s, &a, &b).unwrap_or(0.0));
        out.push(best);
    }
    out
}

/// `None` when the two actions coincide.
pub fn lipschitz_ratio<F: FeatureFn>(map: &F, s: &[f64], a: &[f64], b: &[f64]) -> Option<f64> {
    let da: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    if da == 0.0 {
        return None;
    }
    let fa = map.features(s, a);
    let fb = map.features(s, b);
    let df: f64 = fa.iter().zip(&fb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    Some(df / da)
}

/// Largest relative error between the analytic gradient and central
/// differences at step `eps`. Components where both gradients are below
/// `floor` in magnitude are compared against `floor` instead, so exact zeros
/// (inactive rectifiers) do not divide by zero.
pub fn gradient_check(net: &FeatureModelNet, batch: &[&Sample], eps: f64, floor: f64) -> f64 {
    let mut grad = vec![0.0; net.parameter_count()];
    net.loss_and_grad(batch, Some(&mut grad));
    let base = net.params();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    let mut p = base.clone();
    for i in 0..base.len() {
        p[i] = base[i] + eps;
        probe.set_params(&p);
        let up = probe.loss_and_grad(batch, None);
        p[i] = base[i] - eps;
        probe.set_params(&p);
        let down = probe.loss_and_grad(batch, None);
        p[i] = base[i];
        let numeric = (up - down) / (2.0 * eps);
        let denom = grad[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max((grad[i] - numeric).abs() / denom);
    }
    worst
}
