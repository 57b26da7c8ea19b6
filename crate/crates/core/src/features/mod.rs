//! Conditional feature laws `Pr(X | Y, G)` and the classification outcome
//! rates they induce under group-specific thresholds.

pub mod dataset;
pub mod empirical;
pub mod gaussian;
pub mod logistic;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{GroupSpec, PopulationState, ThresholdAction};

pub use dataset::{ingest_dataset, LabeledDataset, SchemaConfig};
pub use empirical::{build_empirical_model, EmpiricalModelFamily, EmpiricalScoreModel};
pub use gaussian::GaussianScoreModel;
pub use logistic::{reweighted_logistic_fit, LogisticConfig, ScoringFunction};

/// Acceptance probabilities conditioned on the true label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalRates {
    /// `Pr(Ŷ=1 | Y=1, G=g)`
    pub tpr: f64,
    /// `Pr(Ŷ=1 | Y=-1, G=g)`
    pub fpr: f64,
}

/// One group's contribution to the population confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub fraction: f64,
    pub qualification: f64,
    pub conditional: ConditionalRates,
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    pub fn_: f64,
}

impl GroupRates {
    fn new(fraction: f64, qualification: f64, conditional: ConditionalRates) -> Self {
        let pos = fraction * qualification;
        let neg = fraction * (1.0 - qualification);
        GroupRates {
            fraction,
            qualification,
            conditional,
            tp: pos * conditional.tpr,
            fn_: pos * (1.0 - conditional.tpr),
            fp: neg * conditional.fpr,
            tn: neg * (1.0 - conditional.fpr),
        }
    }

    /// `Pr(Ŷ=1 | G=g)`
    pub fn acceptance(&self) -> f64 {
        self.qualification * self.conditional.tpr
            + (1.0 - self.qualification) * self.conditional.fpr
    }
}

/// Joint outcome rates over the whole population, per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRates {
    pub groups: Vec<GroupRates>,
}

impl OutcomeRates {
    pub fn tp(&self) -> f64 {
        self.groups.iter().map(|g| g.tp).sum()
    }
    pub fn fp(&self) -> f64 {
        self.groups.iter().map(|g| g.fp).sum()
    }
    pub fn tn(&self) -> f64 {
        self.groups.iter().map(|g| g.tn).sum()
    }
    pub fn fn_(&self) -> f64 {
        self.groups.iter().map(|g| g.fn_).sum()
    }
}

/// The score law used to evaluate thresholds.
#[derive(Debug, Clone)]
pub enum FeatureModel {
    Gaussian(GaussianScoreModel),
    Empirical(Arc<EmpiricalModelFamily>),
}

impl FeatureModel {
    pub fn gaussian() -> Self {
        FeatureModel::Gaussian(GaussianScoreModel::default())
    }

    /// Resolve a model identifier from configuration.
    pub fn from_id(id: &str, empirical: Option<Arc<EmpiricalModelFamily>>) -> Result<Self> {
        match id {
            GaussianScoreModel::ID => Ok(Self::gaussian()),
            EmpiricalModelFamily::ID => empirical
                .map(FeatureModel::Empirical)
                .ok_or_else(|| Error::config("empirical feature model requested but none was built")),
            other => Err(Error::config(format!("unknown feature model `{other}`"))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            FeatureModel::Gaussian(_) => GaussianScoreModel::ID,
            FeatureModel::Empirical(_) => EmpiricalModelFamily::ID,
        }
    }

    /// Acceptance rates of group `group` at qualification rate `q` and
    /// canonical threshold `action`.
    pub fn rates(&self, group: usize, q: f64, action: f64) -> ConditionalRates {
        match self {
            FeatureModel::Gaussian(m) => m.rates(action),
            FeatureModel::Empirical(m) => m.rates(group, q, action),
        }
    }

    /// Derivatives of [`FeatureModel::rates`] in the threshold.
    pub fn rate_derivatives(&self, group: usize, q: f64, action: f64) -> ConditionalRates {
        match self {
            FeatureModel::Gaussian(m) => m.rate_derivatives(action),
            FeatureModel::Empirical(m) => {
                let h = EmpiricalModelFamily::DIFF_STEP;
                let hi = m.rates(group, q, (action + h).min(1.0));
                let lo = m.rates(group, q, (action - h).max(0.0));
                let span = (action + h).min(1.0) - (action - h).max(0.0);
                ConditionalRates {
                    tpr: (hi.tpr - lo.tpr) / span,
                    fpr: (hi.fpr - lo.fpr) / span,
                }
            }
        }
    }

    pub fn group_count(&self) -> Option<usize> {
        match self {
            FeatureModel::Gaussian(_) => None,
            FeatureModel::Empirical(m) => Some(m.group_count()),
        }
    }
}

/// Population confusion-matrix rates for `action` in `state`.
pub fn outcome_rates(
    model: &FeatureModel,
    groups: &GroupSpec,
    state: &[f64],
    action: &[f64],
) -> Result<OutcomeRates> {
    if state.len() != groups.group_count {
        return Err(Error::Dimension {
            expected: groups.group_count,
            actual: state.len(),
        });
    }
    if action.len() != groups.group_count {
        return Err(Error::Dimension {
            expected: groups.group_count,
            actual: action.len(),
        });
    }
    if let Some(n) = model.group_count() {
        if n != groups.group_count {
            return Err(Error::Dimension {
                expected: groups.group_count,
                actual: n,
            });
        }
    }
    Ok(OutcomeRates {
        groups: (0..groups.group_count)
            .map(|g| {
                GroupRates::new(
                    groups.group_fractions[g],
                    state[g],
                    model.rates(g, state[g], action[g]),
                )
            })
            .collect(),
    })
}

/// Typed convenience wrapper over [`outcome_rates`].
pub fn outcome_rates_for(
    model: &FeatureModel,
    groups: &GroupSpec,
    state: &PopulationState,
    action: &ThresholdAction,
) -> Result<OutcomeRates> {
    outcome_rates(model, groups, state.rates(), action.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unknown_model_is_a_configuration_error() {
        assert!(matches!(
            FeatureModel::from_id("weibull", None),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            FeatureModel::from_id("empirical", None),
            Err(Error::Config(_))
        ));
        assert!(FeatureModel::from_id("gaussian", None).is_ok());
    }

    #[test]
    fn marginals_are_preserved() {
        let groups = GroupSpec::new(vec![0.3, 0.7]).unwrap();
        let r = outcome_rates(&FeatureModel::gaussian(), &groups, &[0.8, 0.25], &[0.4, 0.6])
            .unwrap();
        let pos = 0.3 * 0.8 + 0.7 * 0.25;
        assert!((r.tp() + r.fn_() - pos).abs() < 1e-15);
        assert!((r.tn() + r.fp() - (1.0 - pos)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn joint_rates_sum_to_one(q1 in 0.0f64..=1.0, q2 in 0.0f64..=1.0,
                                  a1 in 0.0f64..=1.0, a2 in 0.0f64..=1.0,
                                  f in 0.05f64..0.95) {
            let groups = GroupSpec::new(vec![f, 1.0 - f]).unwrap();
            let r = outcome_rates(&FeatureModel::gaussian(), &groups, &[q1, q2], &[a1, a2]).unwrap();
            let total = r.tp() + r.fp() + r.tn() + r.fn_();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            for g in &r.groups {
                for v in [g.tp, g.fp, g.tn, g.fn_, g.acceptance()] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
