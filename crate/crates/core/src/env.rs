//! Episodic environments: the classifier–population system and the interface
//! agents see.

use serde::{Deserialize, Serialize};

use crate::dynamics::{transition_rates, UtilityMatrix};
use crate::error::{Error, Result};
use crate::features::{outcome_rates, FeatureModel};
use crate::metrics::{disparity, loss, DisparityKind, LossSpec};
use crate::rng::StreamRng;
use crate::types::GroupSpec;

/// Everything an agent observes after one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub utility: f64,
    pub loss: f64,
    pub disparity: f64,
}

pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn state(&self) -> &[f64];
    fn reset_to(&mut self, state: &[f64]) -> Result<()>;
    /// A fresh initial state; agents decide whether to use it.
    fn sample_initial(&self, rng: &mut StreamRng) -> Vec<f64>;
    fn step(&mut self, action: &[f64], rng: &mut StreamRng) -> Result<Transition>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    #[serde(default = "default_model")]
    pub feature_model: String,
    #[serde(default = "default_fractions")]
    pub group_fractions: Vec<f64>,
    #[serde(default)]
    pub utility: UtilityMatrix,
    #[serde(default = "LossSpec::true_positive")]
    pub loss: LossSpec,
    #[serde(default = "default_disparity")]
    pub disparity: DisparityKind,
    /// Box `[lo, hi]^n` from which initial qualification rates are drawn.
    #[serde(default = "default_initial_box")]
    pub initial_box: [f64; 2],
}

fn default_model() -> String {
    "gaussian".into()
}

fn default_fractions() -> Vec<f64> {
    vec![0.5, 0.5]
}

fn default_disparity() -> DisparityKind {
    DisparityKind::DP
}

fn default_initial_box() -> [f64; 2] {
    [0.05, 0.95]
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            feature_model: default_model(),
            group_fractions: default_fractions(),
            utility: UtilityMatrix::default(),
            loss: LossSpec::true_positive(),
            disparity: default_disparity(),
            initial_box: default_initial_box(),
        }
    }
}

/// The mean-field classifier–population system. The state is the vector of
/// group qualification rates; the action is the vector of group thresholds.
#[derive(Debug, Clone)]
pub struct FairnessEnv {
    pub groups: GroupSpec,
    pub utility: UtilityMatrix,
    pub model: FeatureModel,
    pub loss: LossSpec,
    pub disparity: DisparityKind,
    pub initial_box: [f64; 2],
    state: Vec<f64>,
}

/// Loss, disparity and next state of one `(state, action)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEval {
    pub loss: f64,
    pub disparity: f64,
    pub next_state: Vec<f64>,
}

impl FairnessEnv {
    pub fn new(config: &EnvConfig, model: FeatureModel) -> Result<Self> {
        let groups = GroupSpec::new(config.group_fractions.clone())?;
        config.utility.validate()?;
        config.loss.validate()?;
        let [lo, hi] = config.initial_box;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::config(format!("initial box [{lo}, {hi}] not within [0, 1]")));
        }
        if model.id() != config.feature_model {
            return Err(Error::config(format!(
                "feature model `{}` does not match configured `{}`",
                model.id(),
                config.feature_model
            )));
        }
        let n = groups.group_count;
        Ok(FairnessEnv {
            groups,
            utility: config.utility,
            model,
            loss: config.loss,
            disparity: config.disparity,
            initial_box: config.initial_box,
            state: vec![0.5; n],
        })
    }

    /// Synthetic Gaussian environment with default settings.
    pub fn gaussian(loss: LossSpec, disparity: DisparityKind) -> Self {
        let config = EnvConfig {
            loss,
            disparity,
            ..EnvConfig::default()
        };
        Self::new(&config, FeatureModel::gaussian()).expect("default configuration is valid")
    }

    pub fn group_count(&self) -> usize {
        self.groups.group_count
    }

    /// Pure evaluation of one step from `state`.
    pub fn evaluate(&self, state: &[f64], action: &[f64]) -> Result<StepEval> {
        if let Some(a) = action.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::validation(format!("threshold {a} outside [0, 1]")));
        }
        let rates = outcome_rates(&self.model, &self.groups, state, action)?;
        Ok(StepEval {
            loss: loss(&self.loss, &rates),
            disparity: disparity(self.disparity, &rates)?,
            next_state: transition_rates(state, action, &self.utility, &self.model)?,
        })
    }
}

impl Environment for FairnessEnv {
    fn state_dim(&self) -> usize {
        self.groups.group_count
    }

    fn action_dim(&self) -> usize {
        self.groups.group_count
    }

    fn state(&self) -> &[f64] {
        &self.state
    }

    fn reset_to(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != self.groups.group_count {
            return Err(Error::Dimension {
                expected: self.groups.group_count,
                actual: state.len(),
            });
        }
        if let Some(q) = state.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(Error::validation(format!("qualification rate {q} outside [0, 1]")));
        }
        self.state = state.to_vec();
        Ok(())
    }

    fn sample_initial(&self, rng: &mut StreamRng) -> Vec<f64> {
        use rand::Rng;
        let [lo, hi] = self.initial_box;
        (0..self.groups.group_count)
            .map(|_| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }

    fn step(&mut self, action: &[f64], _rng: &mut StreamRng) -> Result<Transition> {
        let eval = self.evaluate(&self.state, action)?;
        self.state.clone_from(&eval.next_state);
        Ok(Transition {
            next_state: eval.next_state,
            reward: 1.0 - eval.loss,
            utility: 1.0 - eval.disparity,
            loss: eval.loss,
            disparity: eval.disparity,
        })
    }
}
