//! UCBFair: optimistic least-squares value iteration over a frozen feature
//! map, with a softmax policy over Voronoi loci and a projected dual update on
//! the fairness constraint.
//!
//! Each episode runs a backward pass (ridge regression per step `h`, targets
//! built from the current weights at stored next states), acts forward by
//! sampling a locus from the softmax and an action uniformly inside its
//! region, then moves the dual variable toward the constraint violation.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::featmap::FeatureFn;
use crate::metrics::{update_ledger, RegretLedger};
use crate::rng::{sub_stream, StreamRng};
use crate::types::ThresholdAction;
use crate::voronoi::VoronoiActionSpace;

/// How the exploration coefficient β is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BonusSpec {
    Direct { beta: f64 },
    /// `β = C₁·d·H·√ζ`, `ζ = ln(ln(#loci)·4dT/p)` with `T = KH`.
    Theory { c1: f64, failure_probability: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UcbFairConfig {
    pub horizon: usize,
    pub episodes: usize,
    pub constraint_level: f64,
    /// Upper clip `𝒱` of the dual variable.
    #[serde(default = "default_dual_ceiling")]
    pub dual_ceiling: f64,
    /// Dual step `η`; defaults to `𝒱 / (H√K)`.
    #[serde(default)]
    pub dual_step: Option<f64>,
    /// Softmax temperature `α`; defaults to `ln(#loci)·K / (2(1+𝒱+H))`.
    #[serde(default)]
    pub temperature: Option<f64>,
    pub bonus: BonusSpec,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    /// Cover radius of the action lattice.
    pub epsilon: f64,
    /// Episodes kept for regression; older ones are dropped from `Λ` too.
    #[serde(default = "default_history_cap")]
    pub history_cap: usize,
    #[serde(default = "default_refactor_every")]
    pub refactor_every: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_dual_ceiling() -> f64 {
    10.0
}
fn default_ridge() -> f64 {
    1.0
}
fn default_history_cap() -> usize {
    5000
}
fn default_refactor_every() -> usize {
    64
}

impl UcbFairConfig {
    pub fn new(horizon: usize, episodes: usize, constraint_level: f64, epsilon: f64, beta: f64) -> Self {
        UcbFairConfig {
            horizon,
            episodes,
            constraint_level,
            dual_ceiling: default_dual_ceiling(),
            dual_step: None,
            temperature: None,
            bonus: BonusSpec::Direct { beta },
            ridge: default_ridge(),
            epsilon,
            history_cap: default_history_cap(),
            refactor_every: default_refactor_every(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.episodes == 0 {
            return Err(Error::config("horizon and episode count must be positive"));
        }
        if !(0.0..=self.horizon as f64).contains(&self.constraint_level) {
            return Err(Error::config(format!(
                "constraint level {} outside [0, H]",
                self.constraint_level
            )));
        }
        let positive = [Some(self.dual_ceiling), self.dual_step, self.temperature, Some(self.epsilon)];
        if positive.iter().flatten().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::config("dual ceiling, dual step, temperature and epsilon must be positive"));
        }
        if self.ridge != 1.0 {
            return Err(Error::config("ridge parameter is fixed at 1"));
        }
        match self.bonus {
            BonusSpec::Direct { beta } if !(beta >= 0.0 && beta.is_finite()) => {
                return Err(Error::config("bonus coefficient must be nonnegative"))
            }
            BonusSpec::Theory { c1, failure_probability: p }
                if !(c1 > 0.0 && p > 0.0 && p < 1.0) =>
            {
                return Err(Error::config("theory bonus needs C₁ > 0 and p in (0, 1)"))
            }
            _ => {}
        }
        if self.history_cap == 0 || self.refactor_every == 0 {
            return Err(Error::config("history cap and refactorization period must be positive"));
        }
        Ok(())
    }
}

/// Hyperparameters after defaults are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub loci: usize,
    pub d: usize,
}

pub fn derive_params(config: &UcbFairConfig, loci: usize, d: usize) -> DerivedParams {
    let h = config.horizon as f64;
    let k = config.episodes as f64;
    // ln(#loci) is zero for a single locus, where the softmax is moot anyway.
    let log_loci = (loci.max(2) as f64).ln();
    let alpha = config
        .temperature
        .unwrap_or(log_loci * k / (2.0 * (1.0 + config.dual_ceiling + h)));
    let eta = config.dual_step.unwrap_or(config.dual_ceiling / (h * k.sqrt()));
    let beta = match config.bonus {
        BonusSpec::Direct { beta } => beta,
        BonusSpec::Theory { c1, failure_probability } => {
            let t = k * h;
            let zeta = (log_loci * 4.0 * d as f64 * t / failure_probability).ln();
            c1 * d as f64 * h * zeta.sqrt()
        }
    };
    DerivedParams {
        alpha,
        beta,
        eta,
        loci,
        d,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y = A x` for a row-major square `A`.
fn mat_vec(a: &[f64], x: &[f64], y: &mut [f64]) {
    let d = x.len();
    for (yi, row) in y.iter_mut().zip(a.chunks_exact(d)) {
        *yi = dot(row, x);
    }
}

/// `w = Λ⁻¹ Σ φ_τ y_τ`.
pub fn ridge_solve(inverse: &[f64], phis: &[&[f64]], targets: &[f64], d: usize) -> Vec<f64> {
    let mut b = vec![0.0; d];
    for (phi, y) in phis.iter().zip(targets) {
        for (bi, p) in b.iter_mut().zip(*phi) {
            *bi += p * y;
        }
    }
    let mut w = vec![0.0; d];
    mat_vec(inverse, &b, &mut w);
    w
}

/// `min(w·φ + β√(φᵀΛ⁻¹φ), H)`.
pub fn q_estimate(weights: &[f64], inverse: &[f64], beta: f64, horizon: f64, phi: &[f64]) -> f64 {
    (dot(weights, phi) + beta * quadratic_form(inverse, phi).sqrt()).min(horizon)
}

/// `φᵀΛ⁻¹φ`, floored at zero against rounding.
fn quadratic_form(inverse: &[f64], phi: &[f64]) -> f64 {
    let d = phi.len();
    let mut quad = 0.0;
    for (row, p) in inverse.chunks_exact(d).zip(phi) {
        quad += p * dot(row, phi);
    }
    quad.max(0.0)
}

/// Softmax of `α(Q_r + ν Q_g)` over loci.
pub fn softmax_policy(alpha: f64, q_r: &[f64], q_g: &[f64], nu: f64) -> Vec<f64> {
    let logits: Vec<f64> = q_r.iter().zip(q_g).map(|(r, g)| alpha * (r + nu * g)).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    probs
}

/// `Σ_i π(I_i) Q(I_i)`, clipped to `[0, H]`.
pub fn value_estimate(probs: &[f64], q: &[f64], horizon: f64) -> f64 {
    dot(probs, q).clamp(0.0, horizon)
}

/// `clip(ν + η(c̃ - V_g), 0, 𝒱)`.
pub fn dual_update(nu: f64, eta: f64, constraint_level: f64, value_g: f64, ceiling: f64) -> f64 {
    (nu + eta * (constraint_level - value_g)).clamp(0.0, ceiling)
}

/// Ridge statistics of one step `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeStats {
    pub gram: Vec<f64>,
    pub inverse: Vec<f64>,
    pub w_r: Vec<f64>,
    pub w_g: Vec<f64>,
}

impl RidgeStats {
    fn new(d: usize, ridge: f64) -> Self {
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = ridge;
        }
        let inverse = eye.iter().map(|v| if *v != 0.0 { 1.0 / v } else { 0.0 }).collect();
        RidgeStats {
            gram: eye,
            inverse,
            w_r: vec![0.0; d],
            w_g: vec![0.0; d],
        }
    }

    /// Sherman–Morrison for `Λ ± φφᵀ`.
    fn rank_one(&mut self, phi: &[f64], sign: f64) {
        let d = phi.len();
        let mut u = vec![0.0; d];
        mat_vec(&self.inverse, phi, &mut u);
        let denom = 1.0 + sign * dot(phi, &u);
        for i in 0..d {
            for j in 0..d {
                self.gram[i * d + j] += sign * phi[i] * phi[j];
                self.inverse[i * d + j] -= sign * u[i] * u[j] / denom;
            }
        }
    }

    /// Largest Frobenius gap between the maintained inverse and a direct one.
    pub fn inverse_error(&self) -> f64 {
        let d = self.w_r.len();
        let direct = DMatrix::from_row_slice(d, d, &self.gram)
            .try_inverse()
            .expect("ridge Gram matrix is positive definite");
        let kept = DMatrix::from_row_slice(d, d, &self.inverse);
        (direct - kept).norm()
    }
}

/// One stored transition: `φ(s_h, a_h)`, rewards, and `φ(s_{h+1}, I_i)` for
/// every locus (empty at the last step).
#[derive(Debug, Clone, PartialEq)]
pub struct StoredStep {
    pub phi: Vec<f64>,
    pub reward: f64,
    pub utility: f64,
    pub next_phis: Vec<f64>,
}

/// Q and V estimates at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEval {
    pub probs: Vec<f64>,
    pub q_r: Vec<f64>,
    pub q_g: Vec<f64>,
    pub v_r: f64,
    pub v_g: f64,
}

/// Counts of bound checks on ν, Q and V; any violation is a bug.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractAudit {
    pub nu_checks: u64,
    pub nu_violations: u64,
    pub q_checks: u64,
    pub q_violations: u64,
    pub v_checks: u64,
    pub v_violations: u64,
}

impl ContractAudit {
    pub fn violations(&self) -> u64 {
        self.nu_violations + self.q_violations + self.v_violations
    }
}

pub struct UcbFair<F: FeatureFn> {
    config: UcbFairConfig,
    params: DerivedParams,
    space: VoronoiActionSpace,
    phi: F,
    nu: f64,
    episodes_done: usize,
    stats: Vec<RidgeStats>,
    history: VecDeque<Vec<StoredStep>>,
    current: Vec<StoredStep>,
    audit: ContractAudit,
}

/// Per-episode training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub initial_state: Vec<f64>,
    pub estimated_v_r: f64,
    pub estimated_v_g: f64,
    pub value_r: f64,
    pub value_g: f64,
    pub nu: f64,
    pub mean_loss: f64,
    pub mean_disparity: f64,
    pub final_state: Vec<f64>,
}

impl<F: FeatureFn> UcbFair<F> {
    pub fn new(config: UcbFairConfig, space: VoronoiActionSpace, phi: F) -> Result<Self> {
        config.validate()?;
        let d = phi.dim();
        if d == 0 {
            return Err(Error::config("feature dimension must be positive"));
        }
        let params = derive_params(&config, space.len(), d);
        let stats = (0..config.horizon).map(|_| RidgeStats::new(d, config.ridge)).collect();
        Ok(UcbFair {
            config,
            params,
            space,
            phi,
            nu: 0.0,
            episodes_done: 0,
            stats,
            history: VecDeque::new(),
            current: Vec::new(),
            audit: ContractAudit::default(),
        })
    }

    pub fn config(&self) -> &UcbFairConfig {
        &self.config
    }

    pub fn params(&self) -> &DerivedParams {
        &self.params
    }

    pub fn space(&self) -> &VoronoiActionSpace {
        &self.space
    }

    pub fn feature_fn(&self) -> &F {
        &self.phi
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    /// Ridge statistics of step `h` (0-based).
    pub fn stats(&self, h: usize) -> &RidgeStats {
        &self.stats[h]
    }

    pub fn history(&self) -> impl Iterator<Item = &[StoredStep]> {
        self.history.iter().map(|e| e.as_slice())
    }

    pub fn audit(&self) -> ContractAudit {
        self.audit
    }

    fn locus_features(&self, state: &[f64]) -> Vec<f64> {
        let d = self.params.d;
        let mut out = vec![0.0; self.space.len() * d];
        for (i, chunk) in out.chunks_exact_mut(d).enumerate() {
            self.phi.features_into(state, self.space.locus(i), chunk);
        }
        out
    }

    /// Q, policy and V at step `h` from per-locus features.
    fn evaluate_phis(&mut self, h: usize, phis: &[f64]) -> PolicyEval {
        let d = self.params.d;
        let horizon = self.config.horizon as f64;
        let st = &self.stats[h];
        let mut q_r = Vec::with_capacity(self.space.len());
        let mut q_g = Vec::with_capacity(self.space.len());
        for phi in phis.chunks_exact(d) {
            let bonus = self.params.beta * quadratic_form(&st.inverse, phi).sqrt();
            q_r.push((dot(&st.w_r, phi) + bonus).min(horizon));
            q_g.push((dot(&st.w_g, phi) + bonus).min(horizon));
        }
        let probs = softmax_policy(self.params.alpha, &q_r, &q_g, self.nu);
        let v_r = value_estimate(&probs, &q_r, horizon);
        let v_g = value_estimate(&probs, &q_g, horizon);

        let a = &mut self.audit;
        a.q_checks += 2 * q_r.len() as u64;
        a.q_violations += q_r.iter().chain(&q_g).filter(|q| !(**q <= horizon)).count() as u64;
        a.v_checks += 2;
        a.v_violations += [v_r, v_g].iter().filter(|v| !(0.0..=horizon).contains(*v)).count() as u64;
        PolicyEval {
            probs,
            q_r,
            q_g,
            v_r,
            v_g,
        }
    }

    /// Q, policy and V estimates at `state` for step `h` (0-based).
    pub fn policy(&mut self, h: usize, state: &[f64]) -> PolicyEval {
        let phis = self.locus_features(state);
        self.evaluate_phis(h, &phis)
    }

    /// Backward pass: refit `w_{r,h}`, `w_{g,h}` for `h = H…1` on the history.
    pub fn plan(&mut self) {
        let d = self.params.d;
        let horizon = self.config.horizon;
        let mut next_values: Vec<(f64, f64)> = Vec::new();
        for h in (0..horizon).rev() {
            let n = self.history.len();
            let mut targets_r = Vec::with_capacity(n);
            let mut targets_g = Vec::with_capacity(n);
            for (tau, episode) in self.history.iter().enumerate() {
                let step = &episode[h];
                let (vr, vg) = if h + 1 < horizon { next_values[tau] } else { (0.0, 0.0) };
                targets_r.push(step.reward + vr);
                targets_g.push(step.utility + vg);
            }
            let phis: Vec<&[f64]> = self.history.iter().map(|e| e[h].phi.as_slice()).collect();
            let w_r = ridge_solve(&self.stats[h].inverse, &phis, &targets_r, d);
            let w_g = ridge_solve(&self.stats[h].inverse, &phis, &targets_g, d);
            self.stats[h].w_r = w_r;
            self.stats[h].w_g = w_g;

            // Values at step h of the states reached at h-1, for the next layer.
            if h > 0 {
                let blocks: Vec<Vec<f64>> =
                    self.history.iter().map(|e| e[h - 1].next_phis.clone()).collect();
                next_values = blocks
                    .iter()
                    .map(|phis| {
                        let eval = self.evaluate_phis(h, phis);
                        (eval.v_r, eval.v_g)
                    })
                    .collect();
            }
        }
    }

    /// Sample an action at step `h` (0-based) in `state`.
    pub fn act(&mut self, h: usize, state: &[f64], rng: &mut StreamRng) -> (ThresholdAction, PolicyEval) {
        let eval = self.policy(h, state);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut locus = eval.probs.len() - 1;
        for (i, p) in eval.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                locus = i;
                break;
            }
        }
        (self.space.sample_uniform_in_region(locus, rng), eval)
    }

    /// Record the transition taken at step `h`.
    pub fn observe(&mut self, h: usize, state: &[f64], action: &[f64], reward: f64, utility: f64, next_state: &[f64]) {
        let next_phis = if h + 1 < self.config.horizon {
            self.locus_features(next_state)
        } else {
            Vec::new()
        };
        self.current.push(StoredStep {
            phi: self.phi.features(state, action),
            reward,
            utility,
            next_phis,
        });
    }

    /// Dual update from the episode's initial utility estimate, then fold the
    /// episode into the ridge statistics.
    pub fn finish_episode(&mut self, estimated_v_g: f64) -> Result<()> {
        if self.current.len() != self.config.horizon {
            return Err(Error::validation(format!(
                "episode has {} steps, expected {}",
                self.current.len(),
                self.config.horizon
            )));
        }
        self.nu = dual_update(
            self.nu,
            self.params.eta,
            self.config.constraint_level,
            estimated_v_g,
            self.config.dual_ceiling,
        );
        self.audit.nu_checks += 1;
        if !(0.0..=self.config.dual_ceiling).contains(&self.nu) {
            self.audit.nu_violations += 1;
        }
        let episode = std::mem::take(&mut self.current);
        for (h, step) in episode.iter().enumerate() {
            self.stats[h].rank_one(&step.phi, 1.0);
        }
        self.history.push_back(episode);
        if self.history.len() > self.config.history_cap {
            let old = self.history.pop_front().expect("nonempty");
            for (h, step) in old.iter().enumerate() {
                self.stats[h].rank_one(&step.phi, -1.0);
            }
        }
        self.episodes_done += 1;
        if self.episodes_done.is_multiple_of(self.config.refactor_every) {
            self.refactor();
        }
        Ok(())
    }

    /// Rebuild every `Λ_h` from the stored history and invert it directly.
    pub fn refactor(&mut self) {
        let d = self.params.d;
        for (h, st) in self.stats.iter_mut().enumerate() {
            let mut gram = DMatrix::<f64>::identity(d, d) * self.config.ridge;
            for episode in &self.history {
                let phi = nalgebra::DVector::from_column_slice(&episode[h].phi);
                gram += &phi * phi.transpose();
            }
            let inverse = gram
                .clone()
                .cholesky()
                .expect("ridge Gram matrix is positive definite")
                .inverse();
            for i in 0..d {
                for j in 0..d {
                    st.gram[i * d + j] = gram[(i, j)];
                    st.inverse[i * d + j] = inverse[(i, j)];
                }
            }
        }
    }

    /// Worst maintained-inverse error over all steps.
    pub fn inverse_error(&self) -> f64 {
        self.stats.iter().map(RidgeStats::inverse_error).fold(0.0, f64::max)
    }

    /// One full episode from `initial`: plan, act for `H` steps, dual update.
    pub fn run_episode<E: Environment>(
        &mut self,
        env: &mut E,
        initial: &[f64],
        rng: &mut StreamRng,
    ) -> Result<EpisodeLog> {
        let episode = self.episodes_done + 1;
        self.plan();
        env.reset_to(initial).map_err(|e| e.in_episode(episode, 0))?;
        let mut log = EpisodeLog {
            episode,
            initial_state: initial.to_vec(),
            estimated_v_r: 0.0,
            estimated_v_g: 0.0,
            value_r: 0.0,
            value_g: 0.0,
            nu: self.nu,
            mean_loss: 0.0,
            mean_disparity: 0.0,
            final_state: Vec::new(),
        };
        for h in 0..self.config.horizon {
            let state = env.state().to_vec();
            let (action, eval) = self.act(h, &state, rng);
            if h == 0 {
                log.estimated_v_r = eval.v_r;
                log.estimated_v_g = eval.v_g;
            }
            let t = env
                .step(action.as_slice(), rng)
                .map_err(|e| e.in_episode(episode, h + 1))?;
            self.observe(h, &state, action.as_slice(), t.reward, t.utility, &t.next_state);
            log.value_r += t.reward;
            log.value_g += t.utility;
            log.mean_loss += t.loss;
            log.mean_disparity += t.disparity;
        }
        let hf = self.config.horizon as f64;
        log.mean_loss /= hf;
        log.mean_disparity /= hf;
        log.final_state = env.state().to_vec();
        self.finish_episode(log.estimated_v_g)?;
        log.nu = self.nu;
        Ok(log)
    }
}

/// Outcome of [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub ledger: RegretLedger,
    pub logs: Vec<EpisodeLog>,
}

/// Run the remaining episodes up to `config.episodes`. Episode `k` draws its
/// initial state and actions from its own stream, so a resumed run matches an
/// uninterrupted one. `oracle` supplies the constrained optimum at an initial
/// state when available.
pub fn train<F: FeatureFn, E: Environment>(
    agent: &mut UcbFair<F>,
    env: &mut E,
    oracle: Option<&mut dyn FnMut(&[f64]) -> Result<f64>>,
) -> Result<TrainingRun> {
    let k = agent.config.episodes;
    train_until(agent, env, oracle, k)
}

/// Like [`train`] but stops once `last_episode` episodes are done.
pub fn train_until<F: FeatureFn, E: Environment>(
    agent: &mut UcbFair<F>,
    env: &mut E,
    mut oracle: Option<&mut dyn FnMut(&[f64]) -> Result<f64>>,
    last_episode: usize,
) -> Result<TrainingRun> {
    let mut ledger = RegretLedger::new(agent.config.constraint_level);
    let mut logs = Vec::new();
    let stop = last_episode.min(agent.config.episodes);
    while agent.episodes_done < stop {
        let k = agent.episodes_done as u64 + 1;
        let mut rng = sub_stream(agent.config.seed, "ucbfair/episode", k);
        let initial = env.sample_initial(&mut rng);
        let best = match oracle.as_deref_mut() {
            Some(f) => Some(f(&initial)?),
            None => None,
        };
        let log = agent.run_episode(env, &initial, &mut rng)?;
        update_ledger(&mut ledger, log.value_r, log.value_g, best);
        logs.push(log);
    }
    Ok(TrainingRun { ledger, logs })
}

const CHECKPOINT_KIND: &str = "ucbfair_checkpoint";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: UcbFairConfig,
    d: usize,
    loci: usize,
    nu: f64,
    episodes_done: usize,
    history_episodes: usize,
    audit: ContractAudit,
}

impl<F: FeatureFn> UcbFair<F> {
    /// Persist `Λ`, `Λ⁻¹`, weights, ν, the episode counter and the history.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        if !self.current.is_empty() {
            return Err(Error::validation("cannot checkpoint in the middle of an episode"));
        }
        let header = CheckpointHeader {
            config: self.config.clone(),
            d: self.params.d,
            loci: self.space.len(),
            nu: self.nu,
            episodes_done: self.episodes_done,
            history_episodes: self.history.len(),
            audit: self.audit,
        };
        let mut arrays: Vec<&[f64]> = Vec::new();
        for st in &self.stats {
            arrays.extend([st.gram.as_slice(), &st.inverse, &st.w_r, &st.w_g]);
        }
        let rewards: Vec<Vec<f64>> = self
            .history
            .iter()
            .map(|e| e.iter().flat_map(|s| [s.reward, s.utility]).collect())
            .collect();
        for (episode, rg) in self.history.iter().zip(&rewards) {
            arrays.push(rg);
            for step in episode {
                arrays.push(&step.phi);
                arrays.push(&step.next_phis);
            }
        }
        crate::persist::write_file(path, CHECKPOINT_KIND, &header, &arrays)
    }

    /// Restore a checkpoint written by an agent with the same lattice and
    /// feature map.
    pub fn load_checkpoint(path: &Path, space: VoronoiActionSpace, phi: F) -> Result<Self> {
        let (header, arrays): (CheckpointHeader, Vec<Vec<f64>>) =
            crate::persist::read_file(path, CHECKPOINT_KIND)?;
        let bad = |m: &str| Error::Format {
            path: path.to_path_buf(),
            message: m.to_string(),
        };
        if header.d != phi.dim() || header.loci != space.len() {
            return Err(bad("feature dimension or locus count differs from the checkpoint"));
        }
        let mut agent = UcbFair::new(header.config, space, phi)?;
        let h = agent.config.horizon;
        let expected = 4 * h + header.history_episodes * (1 + 2 * h);
        if arrays.len() != expected {
            return Err(bad("array count does not match the header"));
        }
        let mut it = arrays.into_iter();
        for st in &mut agent.stats {
            st.gram = it.next().expect("counted");
            st.inverse = it.next().expect("counted");
            st.w_r = it.next().expect("counted");
            st.w_g = it.next().expect("counted");
        }
        for _ in 0..header.history_episodes {
            let rg = it.next().expect("counted");
            if rg.len() != 2 * h {
                return Err(bad("reward block has the wrong length"));
            }
            let mut episode = Vec::with_capacity(h);
            for step in 0..h {
                episode.push(StoredStep {
                    phi: it.next().expect("counted"),
                    reward: rg[2 * step],
                    utility: rg[2 * step + 1],
                    next_phis: it.next().expect("counted"),
                });
            }
            agent.history.push_back(episode);
        }
        agent.nu = header.nu;
        agent.episodes_done = header.episodes_done;
        agent.audit = header.audit;
        Ok(agent)
    }
}
