//! Mean-field replicator dynamics of group qualification rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ConditionalRates, FeatureModel};
use crate::types::{GroupSpec, PopulationState, ThresholdAction};

/// Group-independent payoff `U[y][ŷ]` of holding label `y` and receiving
/// prediction `ŷ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityMatrix {
    /// `U[+1][+1]`: qualified and accepted.
    pub qualified_accepted: f64,
    /// `U[+1][-1]`: qualified and rejected.
    pub qualified_rejected: f64,
    /// `U[-1][+1]`: unqualified and accepted.
    pub unqualified_accepted: f64,
    /// `U[-1][-1]`: unqualified and rejected.
    pub unqualified_rejected: f64,
}

impl Default for UtilityMatrix {
    fn default() -> Self {
        UtilityMatrix {
            qualified_accepted: 4.0,
            qualified_rejected: 2.0,
            unqualified_accepted: 5.0,
            unqualified_rejected: 1.0,
        }
    }
}

impl UtilityMatrix {
    /// Checks positivity, preference for acceptance, costly qualification
    /// among the accepted, and absence of a dominant label.
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.qualified_accepted,
            self.qualified_rejected,
            self.unqualified_accepted,
            self.unqualified_rejected,
        ];
        if all.iter().any(|u| !(u.is_finite() && *u > 0.0)) {
            return Err(Error::config("utility entries must be positive"));
        }
        if self.qualified_accepted <= self.qualified_rejected
            || self.unqualified_accepted <= self.unqualified_rejected
        {
            return Err(Error::config("acceptance must be preferred over rejection"));
        }
        if self.unqualified_accepted <= self.qualified_accepted {
            return Err(Error::config(
                "qualification must be costly among accepted individuals",
            ));
        }
        if self.qualified_rejected <= self.unqualified_rejected {
            return Err(Error::config(
                "qualification must be preferred among rejected individuals",
            ));
        }
        Ok(())
    }
}

/// Fitness of each label within one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessPair {
    pub w_plus: f64,
    pub w_minus: f64,
}

/// Per-group fitness from label-conditional acceptance rates.
pub fn fitness(rates: &ConditionalRates, u: &UtilityMatrix) -> Result<FitnessPair> {
    for p in [rates.tpr, rates.fpr] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::validation(format!(
                "conditional acceptance rate {p} is not a probability"
            )));
        }
    }
    Ok(FitnessPair {
        w_plus: u.qualified_accepted * rates.tpr + u.qualified_rejected * (1.0 - rates.tpr),
        w_minus: u.unqualified_accepted * rates.fpr + u.unqualified_rejected * (1.0 - rates.fpr),
    })
}

/// Same as [`fitness`] but from explicit `Pr(Ŷ=ŷ | Y=y)` rows, which must be
/// normalized.
pub fn fitness_from_rows(
    positive_row: [f64; 2],
    negative_row: [f64; 2],
    u: &UtilityMatrix,
) -> Result<FitnessPair> {
    for row in [positive_row, negative_row] {
        if (row[0] + row[1] - 1.0).abs() > 1e-12 || row.iter().any(|p| *p < 0.0) {
            return Err(Error::validation(format!(
                "conditional row {row:?} does not sum to 1"
            )));
        }
    }
    fitness(
        &ConditionalRates {
            tpr: positive_row[1],
            fpr: negative_row[1],
        },
        u,
    )
}

/// Discrete replicator update `q' = q W₊ / (q W₊ + (1-q) W₋)`.
pub fn replicator_step(q: f64, fit: FitnessPair) -> f64 {
    let mean = q * fit.w_plus + (1.0 - q) * fit.w_minus;
    (q * fit.w_plus / mean).clamp(0.0, 1.0)
}

/// Next qualification rate of one group under the given acceptance rates.
pub fn next_rate(q: f64, rates: &ConditionalRates, u: &UtilityMatrix) -> Result<f64> {
    Ok(replicator_step(q, fitness(rates, u)?))
}

/// Deterministic transition of all group rates; group sizes are unchanged.
pub fn transition_rates(
    q: &[f64],
    action: &[f64],
    u: &UtilityMatrix,
    model: &FeatureModel,
) -> Result<Vec<f64>> {
    if q.len() != action.len() {
        return Err(Error::Dimension {
            expected: q.len(),
            actual: action.len(),
        });
    }
    q.iter()
        .zip(action)
        .enumerate()
        .map(|(g, (&qg, &ag))| next_rate(qg, &model.rates(g, qg, ag), u))
        .collect()
}

pub fn transition(
    state: &PopulationState,
    action: &ThresholdAction,
    groups: &GroupSpec,
    u: &UtilityMatrix,
    model: &FeatureModel,
) -> Result<PopulationState> {
    state.check_groups(groups)?;
    Ok(PopulationState {
        qualification_rates: transition_rates(state.rates(), action.as_slice(), u, model)?,
        feature_model: state.feature_model.clone(),
    })
}
