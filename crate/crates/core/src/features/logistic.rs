//! Label-reweighted logistic regression used to turn a multi-feature dataset
//! into a scalar score whose positive mass tracks a target qualification rate.

use serde::{Deserialize, Serialize};

use super::dataset::LabeledDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticConfig {
    /// Ridge penalty on the non-intercept weights.
    pub l2: f64,
    pub max_iterations: usize,
    /// Stop once the gradient norm falls below this value.
    pub tolerance: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l2: 1e-3,
            max_iterations: 20_000,
            tolerance: 1e-9,
        }
    }
}

/// `x -> Pr(Ŷ=1)`: logistic link over the features with a per-group intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringFunction {
    pub weights: Vec<f64>,
    pub intercepts: Vec<f64>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ScoringFunction {
    pub fn logit(&self, x: &[f64], group: usize) -> f64 {
        self.intercepts[group] + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn score(&self, x: &[f64], group: usize) -> f64 {
        sigmoid(self.logit(x, group))
    }

    pub fn scores(&self, data: &LabeledDataset) -> Vec<f64> {
        data.features
            .iter()
            .zip(&data.groups)
            .map(|(x, &g)| self.score(x, g))
            .collect()
    }
}

/// Importance weights that move each group's positive share to `target_rates`.
///
/// `w = q_g / Pr(Y=1|G=g)` for positives and `(1-q_g) / Pr(Y=-1|G=g)` for
/// negatives.
pub fn label_weights(data: &LabeledDataset, target_rates: &[f64]) -> Result<Vec<f64>> {
    if target_rates.len() != data.group_count() {
        return Err(Error::Dimension {
            expected: data.group_count(),
            actual: target_rates.len(),
        });
    }
    if let Some(q) = target_rates.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(Error::validation(format!("target rate {q} outside (0, 1)")));
    }
    let base = data.base_rates();
    Ok(data
        .labels
        .iter()
        .zip(&data.groups)
        .map(|(&y, &g)| {
            if y == 1 {
                target_rates[g] / base[g]
            } else {
                (1.0 - target_rates[g]) / (1.0 - base[g])
            }
        })
        .collect())
}

struct Objective<'a> {
    data: &'a LabeledDataset,
    weights: Vec<f64>,
    l2: f64,
}

impl Objective<'_> {
    fn dim(&self) -> usize {
        self.data.width() + self.data.group_count()
    }

    fn unpack<'p>(&self, params: &'p [f64]) -> (&'p [f64], &'p [f64]) {
        params.split_at(self.data.width())
    }

    /// Weighted mean log-loss and its gradient.
    fn eval(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let (w, b) = self.unpack(params);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let width = self.data.width();
        let mut loss = 0.0;
        for ((x, (&y, &g)), &wt) in self
            .data
            .features
            .iter()
            .zip(self.data.labels.iter().zip(&self.data.groups))
            .zip(&self.weights)
        {
            let z = b[g] + w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
            let t = if y == 1 { 1.0 } else { 0.0 };
            // log(1 + exp(z)) - t z, computed stably.
            let softplus = if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            loss += wt * (softplus - t * z);
            let r = wt * (sigmoid(z) - t);
            for (gi, v) in grad[..width].iter_mut().zip(x) {
                *gi += r * v;
            }
            grad[width + g] += r;
        }
        let total: f64 = self.weights.iter().sum();
        loss /= total;
        grad.iter_mut().for_each(|g| *g /= total);
        loss += 0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>();
        for (gi, v) in grad[..width].iter_mut().zip(w) {
            *gi += self.l2 * v;
        }
        loss
    }

    /// Upper bound on the gradient's Lipschitz constant.
    fn smoothness(&self) -> f64 {
        let max_sq = self
            .data
            .features
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>() + 1.0)
            .fold(0.0, f64::max);
        let total: f64 = self.weights.iter().sum();
        let max_w = self.weights.iter().copied().fold(0.0, f64::max);
        0.25 * max_sq * max_w * self.data.len() as f64 / total + self.l2
    }
}

/// Fit the reweighted logistic surrogate by accelerated gradient descent.
pub fn reweighted_logistic_fit(
    data: &LabeledDataset,
    target_rates: &[f64],
    config: &LogisticConfig,
) -> Result<ScoringFunction> {
    if data.is_empty() {
        return Err(Error::validation("cannot fit an empty dataset"));
    }
    let objective = Objective {
        data,
        weights: label_weights(data, target_rates)?,
        l2: config.l2,
    };
    let dim = objective.dim();
    let step = 1.0 / objective.smoothness();
    let mut params = vec![0.0; dim];
    let mut prev = params.clone();
    let mut lookahead = params.clone();
    let mut grad = vec![0.0; dim];
    let mut momentum = 1.0f64;
    let mut grad_norm = f64::INFINITY;

    for _ in 0..config.max_iterations {
        objective.eval(&lookahead, &mut grad);
        let next: Vec<f64> = lookahead
            .iter()
            .zip(&grad)
            .map(|(p, g)| p - step * g)
            .collect();
        prev.copy_from_slice(&params);
        params = next;

        let loss = objective.eval(&params, &mut grad);
        grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !loss.is_finite() {
            break;
        }
        if grad_norm < config.tolerance {
            let (w, b) = params.split_at(data.width());
            return Ok(ScoringFunction {
                weights: w.to_vec(),
                intercepts: b.to_vec(),
            });
        }
        // Restart momentum when the step points uphill. Near the optimum the
        // loss itself is flat to rounding, so compare directions, not values.
        let uphill: f64 = grad.iter().zip(params.iter().zip(&prev)).map(|(g, (p, q))| g * (p - q)).sum();
        if uphill > 0.0 {
            momentum = 1.0;
            lookahead.copy_from_slice(&params);
        } else {
            let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / next_momentum;
            for ((l, p), q) in lookahead.iter_mut().zip(&params).zip(&prev) {
                *l = p + beta * (p - q);
            }
            momentum = next_momentum;
        }
    }
    Err(Error::FitNonConvergence {
        iterations: config.max_iterations,
        grad_norm,
    })
}
