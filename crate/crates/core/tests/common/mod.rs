//! Hand-built two-state, two-region linear MDP with exact evaluation.
#![allow(dead_code)]

use fairdyn::env::{Environment, Transition};
use fairdyn::featmap::FeatureFn;
use fairdyn::rng::StreamRng;
use fairdyn::ucbfair::{UcbFair, UcbFairConfig};
use fairdyn::voronoi::VoronoiActionSpace;
use fairdyn::Result;
use rand::Rng;

pub const REWARD: [[f64; 2]; 2] = [[0.2, 0.6], [0.5, 1.0]];
pub const UTILITY: [[f64; 2]; 2] = [[0.9, 0.3], [1.0, 0.4]];
/// Probability of moving to state 1 from `(s, region)`.
pub const TO_ONE: [[f64; 2]; 2] = [[0.7, 0.2], [0.9, 0.4]];
pub const HORIZON: usize = 5;
/// Feature magnitude. With unit ridge a large scale keeps the bonus of an
/// untried region near `beta * scale` while visited regions shrink as
/// `beta / sqrt(n)`, so exploration and late optimism are tuned separately.
pub const FEATURE_SCALE: f64 = 50.0;
pub const CONSTRAINT: f64 = 3.5;
pub const TOY_BETA: f64 = 0.06;
pub const TOY_DUAL_STEP: f64 = 0.2;

pub fn region(action: &[f64]) -> usize {
    usize::from(action[0] >= 0.5)
}

/// One-hot of `(state, region)`, so the MDP is exactly linear in it.
pub struct OneHot;

impl FeatureFn for OneHot {
    fn dim(&self) -> usize {
        4
    }
    fn features_into(&self, state: &[f64], action: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[2 * state[0] as usize + region(action)] = FEATURE_SCALE;
    }
}

pub struct ToyMdp {
    pub s: f64,
}

impl Environment for ToyMdp {
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn state(&self) -> &[f64] {
        std::slice::from_ref(&self.s)
    }
    fn reset_to(&mut self, state: &[f64]) -> Result<()> {
        self.s = state[0];
        Ok(())
    }
    fn sample_initial(&self, _: &mut StreamRng) -> Vec<f64> {
        vec![0.0]
    }
    fn step(&mut self, action: &[f64], rng: &mut StreamRng) -> Result<Transition> {
        let s = self.s as usize;
        let a = region(action);
        self.s = if rng.random::<f64>() < TO_ONE[s][a] { 1.0 } else { 0.0 };
        Ok(Transition {
            next_state: vec![self.s],
            reward: REWARD[s][a],
            utility: UTILITY[s][a],
            loss: 1.0 - REWARD[s][a],
            disparity: 1.0 - UTILITY[s][a],
        })
    }
}

/// Exact `(V_r, V_g)` from state 0 of a policy giving `Pr(region 1)` per
/// `(h, s)`.
pub fn exact_values(prob_high: &[[f64; 2]]) -> (f64, f64) {
    let (mut vr, mut vg) = ([0.0; 2], [0.0; 2]);
    for h in (0..prob_high.len()).rev() {
        let (mut nr, mut ng) = ([0.0; 2], [0.0; 2]);
        for s in 0..2 {
            for a in 0..2 {
                let w = if a == 1 { prob_high[h][s] } else { 1.0 - prob_high[h][s] };
                let p = TO_ONE[s][a];
                nr[s] += w * (REWARD[s][a] + p * vr[1] + (1.0 - p) * vr[0]);
                ng[s] += w * (UTILITY[s][a] + p * vg[1] + (1.0 - p) * vg[0]);
            }
        }
        vr = nr;
        vg = ng;
    }
    (vr[0], vg[0])
}

/// Constrained optimum over mixtures of the `2^(2H)` deterministic policies.
/// With one constraint an optimal mixture needs at most two of them.
pub fn constrained_optimum(horizon: usize, level: f64) -> f64 {
    let n = 1usize << (2 * horizon);
    let points: Vec<(f64, f64)> = (0..n)
        .map(|bits| {
            let pol: Vec<[f64; 2]> = (0..horizon)
                .map(|h| [((bits >> (2 * h)) & 1) as f64, ((bits >> (2 * h + 1)) & 1) as f64])
                .collect();
            exact_values(&pol)
        })
        .collect();
    let (feasible, infeasible): (Vec<(f64, f64)>, Vec<(f64, f64)>) = points.iter().partition(|p| p.1 >= level);
    let mut best = feasible.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    for a in &feasible {
        for b in &infeasible {
            let t = (level - b.1) / (a.1 - b.1);
            best = best.max(t * a.0 + (1.0 - t) * b.0);
        }
    }
    best
}

/// The agent's current policy as `Pr(region 1)` per `(h, s)`.
pub fn agent_policy(agent: &mut UcbFair<OneHot>) -> Vec<[f64; 2]> {
    (0..agent.config().horizon)
        .map(|h| {
            let mut row = [0.0; 2];
            for (s, p) in row.iter_mut().enumerate() {
                let eval = agent.policy(h, &[s as f64]);
                *p = eval.probs[1];
            }
            row
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// UCBFair on the toy with `k` planned episodes.
pub fn toy_agent(k: usize, seed: u64) -> UcbFair<OneHot> {
    let mut config = UcbFairConfig::new(HORIZON, k, CONSTRAINT, 0.25, TOY_BETA);
    config.dual_step = Some(TOY_DUAL_STEP);
    config.seed = seed;
    UcbFair::new(config, VoronoiActionSpace::lattice(1, 2).unwrap(), OneHot).unwrap()
}

/// Log-log slope of cumulative regret. Regret below one is floored at one,
/// so a bounded (or negative) regret reads as exponent zero.
pub fn growth_exponent(points: &[(f64, f64)]) -> f64 {
    let floored: Vec<(f64, f64)> = points.iter().map(|&(k, r)| (k, r.max(1.0))).collect();
    log_log_slope(&floored)
}
