use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::ConditionalRates;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Synthetic score law `X ~ N(Y, 1)`, identical for every group.
///
/// Raw scores in `[raw_min, raw_max]` are mapped affinely onto the action
/// space: `raw = raw_min + (raw_max - raw_min) * a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianScoreModel {
    pub raw_min: f64,
    pub raw_max: f64,
}

impl Default for GaussianScoreModel {
    fn default() -> Self {
        GaussianScoreModel {
            raw_min: -4.0,
            raw_max: 6.0,
        }
    }
}

impl GaussianScoreModel {
    pub const ID: &'static str = "gaussian";

    pub fn raw_threshold(&self, action: f64) -> f64 {
        self.raw_min + (self.raw_max - self.raw_min) * action
    }

    pub fn action_of_raw(&self, raw: f64) -> f64 {
        (raw - self.raw_min) / (self.raw_max - self.raw_min)
    }

    /// Acceptance rates for a raw score cutoff (`-inf` accepts everyone).
    pub fn rates_at_raw(&self, raw: f64) -> ConditionalRates {
        ConditionalRates {
            tpr: normal_cdf(1.0 - raw),
            fpr: normal_cdf(-1.0 - raw),
        }
    }

    pub fn rates(&self, action: f64) -> ConditionalRates {
        self.rates_at_raw(self.raw_threshold(action))
    }

    /// Derivatives of `(tpr, fpr)` with respect to the canonical action.
    pub fn rate_derivatives(&self, action: f64) -> ConditionalRates {
        let raw = self.raw_threshold(action);
        let scale = self.raw_max - self.raw_min;
        ConditionalRates {
            tpr: -scale * normal_pdf(raw - 1.0),
            fpr: -scale * normal_pdf(raw + 1.0),
        }
    }

    /// `Pr(Y=1 | X=x)` for prior qualification rate `q`; logistic in `x`.
    pub fn posterior(&self, q: f64, x: f64) -> f64 {
        // Likelihood ratio N(x; 1, 1) / N(x; -1, 1) = exp(2x).
        1.0 / (1.0 + (1.0 - q) / q * (-2.0 * x).exp())
    }
}
