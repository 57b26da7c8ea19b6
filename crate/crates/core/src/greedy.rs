//! Myopic baseline: at each step, projected gradient descent on
//! `(1-λ)·loss + λ·disparity` over the threshold vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::FairnessEnv;
use crate::error::{Error, Result};
use crate::features::outcome_rates;
use crate::metrics::{disparity, loss, DisparityKind};
use crate::rng::StreamRng;
use crate::types::ThresholdAction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreedyConfig {
    pub lambda: f64,
    #[serde(default = "default_step")]
    pub step_size: f64,
    #[serde(default = "default_steps")]
    pub descent_steps: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_step() -> f64 {
    0.05
}
fn default_steps() -> usize {
    200
}
fn default_restarts() -> usize {
    3
}

impl GreedyConfig {
    pub fn new(lambda: f64) -> Self {
        GreedyConfig {
            lambda,
            step_size: default_step(),
            descent_steps: default_steps(),
            restarts: default_restarts(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("λ = {} outside [0, 1]", self.lambda)));
        }
        if !(self.step_size > 0.0) || self.descent_steps == 0 || self.restarts == 0 {
            return Err(Error::config("greedy step size and counts must be positive"));
        }
        Ok(())
    }
}

/// `(1-λ)·𝓛(s, a) + λ·𝓓(s, a)`.
pub fn greedy_objective(env: &FairnessEnv, state: &[f64], action: &[f64], lambda: f64) -> Result<f64> {
    let eval = env.evaluate(state, action)?;
    Ok((1.0 - lambda) * eval.loss + lambda * eval.disparity)
}

/// Objective value and gradient in the thresholds.
pub fn greedy_gradient(env: &FairnessEnv, state: &[f64], action: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    let rates = outcome_rates(&env.model, &env.groups, state, action)?;
    let n = action.len();
    let derivs: Vec<_> = (0..n)
        .map(|g| env.model.rate_derivatives(g, state[g], action[g]))
        .collect();

    let spec = env.loss;
    let tn_sign = if spec.printed_sign { 1.0 } else { -1.0 };
    let raw_loss = 1.0 - spec.alpha * rates.tp() + tn_sign * spec.beta * rates.tn();
    let mut grad = vec![0.0; n];
    // The loss is clipped to [0, 1]; outside that band it is flat.
    if (0.0..=1.0).contains(&raw_loss) {
        for (g, gr) in rates.groups.iter().enumerate() {
            let dtp = gr.fraction * gr.qualification * derivs[g].tpr;
            let dtn = -gr.fraction * (1.0 - gr.qualification) * derivs[g].fpr;
            grad[g] += (1.0 - lambda) * (-spec.alpha * dtp + tn_sign * spec.beta * dtn);
        }
    }

    if n == 2 && lambda > 0.0 {
        let (g1, g2) = (&rates.groups[0], &rates.groups[1]);
        let mut gap_term = |a: f64, b: f64, da: f64, db: f64| {
            let gap = a - b;
            grad[0] += lambda * gap * da;
            grad[1] -= lambda * gap * db;
        };
        let acc_d = |g: usize, q: f64| q * derivs[g].tpr + (1.0 - q) * derivs[g].fpr;
        match env.disparity {
            DisparityKind::DP => gap_term(
                g1.acceptance(),
                g2.acceptance(),
                acc_d(0, g1.qualification),
                acc_d(1, g2.qualification),
            ),
            DisparityKind::EOp => {
                gap_term(g1.conditional.tpr, g2.conditional.tpr, derivs[0].tpr, derivs[1].tpr)
            }
            DisparityKind::EO => {
                gap_term(g1.conditional.tpr, g2.conditional.tpr, derivs[0].tpr, derivs[1].tpr);
                gap_term(g1.conditional.fpr, g2.conditional.fpr, derivs[0].fpr, derivs[1].fpr);
            }
            DisparityKind::QR => {}
        }
    }
    let value = (1.0 - lambda) * loss(&spec, &rates) + lambda * disparity(env.disparity, &rates)?;
    Ok((value, grad))
}

/// Projected descent on `[0, 1]^n` with backtracking. Each step moves a
/// distance `step_size` along the negative gradient direction (halving until
/// the objective decreases), so flat tails of the score law do not stall it;
/// a step that cannot decrease the objective ends the descent.
pub fn descend<F>(mut objective: F, start: Vec<f64>, step_size: f64, steps: usize) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = start;
    let (mut fx, mut grad) = objective(&x)?;
    for _ in 0..steps {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            break;
        }
        let mut step = step_size / norm;
        let mut moved = false;
        while step * norm > 1e-12 {
            let cand: Vec<f64> = x
                .iter()
                .zip(&grad)
                .map(|(xi, gi)| (xi - step * gi).clamp(0.0, 1.0))
                .collect();
            if cand == x {
                break;
            }
            let (fc, gc) = objective(&cand)?;
            if fc < fx {
                x = cand;
                fx = fc;
                grad = gc;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if !moved {
            break;
        }
    }
    Ok((x, fx))
}

/// Best of `restarts` descents from uniform-random thresholds.
pub fn greedy_act(env: &FairnessEnv, state: &[f64], config: &GreedyConfig, rng: &mut StreamRng) -> Result<ThresholdAction> {
    config.validate()?;
    let n = env.group_count();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..config.restarts {
        let start: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let (x, fx) = descend(
            |a| greedy_gradient(env, state, a, config.lambda),
            start,
            config.step_size,
            config.descent_steps,
        )?;
        if best.as_ref().is_none_or(|(_, fb)| fx < *fb) {
            best = Some((x, fx));
        }
    }
    let (x, _) = best.expect("at least one restart");
    ThresholdAction::new(x)
}
