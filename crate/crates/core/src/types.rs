//! Shared domain vocabulary: groups, population states, threshold actions,
//! episode configuration and per-step records.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version tag written into every persisted JSON document.
pub const SCHEMA_VERSION: u32 = 1;

/// Demographic groups and their (fixed) population shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group_count: usize,
    pub group_fractions: Vec<f64>,
}

impl GroupSpec {
    pub fn new(group_fractions: Vec<f64>) -> Result<Self> {
        let spec = GroupSpec {
            group_count: group_fractions.len(),
            group_fractions,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Equal-sized groups.
    pub fn uniform(group_count: usize) -> Result<Self> {
        if group_count == 0 {
            return Err(Error::validation("group_count must be at least 2"));
        }
        Self::new(vec![1.0 / group_count as f64; group_count])
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_count < 2 {
            return Err(Error::validation("group_count must be at least 2"));
        }
        if self.group_fractions.len() != self.group_count {
            return Err(Error::Dimension {
                expected: self.group_count,
                actual: self.group_fractions.len(),
            });
        }
        if let Some(f) = self
            .group_fractions
            .iter()
            .find(|f| !(**f > 0.0 && **f < 1.0))
        {
            return Err(Error::validation(format!(
                "group fraction {f} outside (0, 1)"
            )));
        }
        let total: f64 = self.group_fractions.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!(
                "group fractions sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// The MDP state: per-group qualification rates `Pr(Y=1 | G=g)` under a named
/// conditional feature law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    pub qualification_rates: Vec<f64>,
    pub feature_model: String,
}

impl PopulationState {
    pub fn new(qualification_rates: Vec<f64>, feature_model: impl Into<String>) -> Result<Self> {
        let state = PopulationState {
            qualification_rates,
            feature_model: feature_model.into(),
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        for q in &self.qualification_rates {
            if !(0.0..=1.0).contains(q) {
                return Err(Error::validation(format!(
                    "qualification rate {q} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn check_groups(&self, groups: &GroupSpec) -> Result<()> {
        if self.qualification_rates.len() != groups.group_count {
            return Err(Error::Dimension {
                expected: groups.group_count,
                actual: self.qualification_rates.len(),
            });
        }
        Ok(())
    }

    pub fn rates(&self) -> &[f64] {
        &self.qualification_rates
    }

    pub fn mean_rate(&self) -> f64 {
        let q = &self.qualification_rates;
        q.iter().sum::<f64>() / q.len() as f64
    }
}

/// Per-group classification thresholds in the canonical action space `[0, 1]^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAction {
    pub thresholds: Vec<f64>,
}

impl ThresholdAction {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if let Some(a) = thresholds.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::validation(format!("threshold {a} outside [0, 1]")));
        }
        Ok(ThresholdAction { thresholds })
    }

    pub fn uniform(value: f64, group_count: usize) -> Result<Self> {
        Self::new(vec![value; group_count])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }
}

/// Clip a raw action vector into `[0, 1]^n`.
pub fn clamp_action(raw: &[f64], groups: &GroupSpec) -> Result<ThresholdAction> {
    if raw.len() != groups.group_count {
        return Err(Error::Dimension {
            expected: groups.group_count,
            actual: raw.len(),
        });
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation("action contains non-finite components"));
    }
    Ok(ThresholdAction {
        thresholds: raw.iter().map(|x| x.clamp(0.0, 1.0)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub horizon: usize,
    pub episode_count: usize,
    pub constraint_level: f64,
    pub seed: u64,
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if self.episode_count == 0 {
            return Err(Error::config("episode_count must be at least 1"));
        }
        if !(0.0..=self.horizon as f64).contains(&self.constraint_level) {
            return Err(Error::config(format!(
                "constraint_level {} outside [0, {}]",
                self.constraint_level, self.horizon
            )));
        }
        Ok(())
    }
}

/// One interaction step. `reward = 1 - loss` and `utility = 1 - disparity`
/// hold exactly because the record is only built through [`StepRecord::new`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: PopulationState,
    pub action: ThresholdAction,
    pub reward: f64,
    pub utility: f64,
    pub loss: f64,
    pub disparity: f64,
}

impl StepRecord {
    pub fn new(state: PopulationState, action: ThresholdAction, loss: f64, disparity: f64) -> Self {
        StepRecord {
            state,
            action,
            reward: 1.0 - loss,
            utility: 1.0 - disparity,
            loss,
            disparity,
        }
    }
}

#[derive(Serialize)]
struct VersionedRef<'a, T> {
    fairdyn_schema: u32,
    #[serde(flatten)]
    inner: &'a T,
}

#[derive(Deserialize)]
struct VersionedOwned<T> {
    fairdyn_schema: u32,
    #[serde(flatten)]
    inner: T,
}

/// Canonical JSON form: the value's fields plus `"fairdyn_schema": 1`.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(&VersionedRef {
        fairdyn_schema: SCHEMA_VERSION,
        inner: value,
    })?)
}

pub fn from_canonical_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let doc: VersionedOwned<T> = serde_json::from_str(text)?;
    if doc.fairdyn_schema != SCHEMA_VERSION {
        return Err(Error::validation(format!(
            "unsupported fairdyn_schema {} (expected {SCHEMA_VERSION})",
            doc.fairdyn_schema
        )));
    }
    Ok(doc.inner)
}
