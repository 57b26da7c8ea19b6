//! Episode loop, phase portraits and curve smoothing.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::env::{Environment, FairnessEnv};
use crate::error::{Error, Result};
use crate::featmap::FeatureFn;
use crate::greedy::{greedy_act, GreedyConfig};
use crate::rng::{sub_stream, StreamRng};
use crate::types::{PopulationState, StepRecord, ThresholdAction};
use crate::ucbfair::UcbFair;

/// Anything that maps `(step, state)` to a threshold action.
pub trait Policy {
    fn act(&mut self, step: usize, state: &[f64], rng: &mut StreamRng) -> Result<ThresholdAction>;
}

/// The same thresholds regardless of state.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPolicy(pub ThresholdAction);

impl Policy for FixedPolicy {
    fn act(&mut self, _: usize, _: &[f64], _: &mut StreamRng) -> Result<ThresholdAction> {
        Ok(self.0.clone())
    }
}

/// Greedy descent against a private copy of the environment's metrics.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    pub env: FairnessEnv,
    pub config: GreedyConfig,
}

impl Policy for GreedyPolicy {
    fn act(&mut self, _: usize, state: &[f64], rng: &mut StreamRng) -> Result<ThresholdAction> {
        greedy_act(&self.env, state, &self.config, rng)
    }
}

/// Acts with the current weights; call [`UcbFair::plan`] first.
impl<F: FeatureFn> Policy for UcbFair<F> {
    fn act(&mut self, step: usize, state: &[f64], rng: &mut StreamRng) -> Result<ThresholdAction> {
        let h = step.min(self.config().horizon - 1);
        Ok(UcbFair::act(self, h, state, rng).0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub steps: Vec<StepRecord>,
    pub value_r: f64,
    pub value_g: f64,
    pub final_state: Vec<f64>,
    #[serde(skip)]
    pub elapsed: Duration,
}

/// Run `horizon` steps from `initial`.
pub fn run_episode(
    env: &mut FairnessEnv,
    policy: &mut dyn Policy,
    initial: &[f64],
    horizon: usize,
    rng: &mut StreamRng,
) -> Result<EpisodeRecord> {
    if horizon == 0 {
        return Err(Error::config("horizon must be at least 1"));
    }
    let started = Instant::now();
    env.reset_to(initial)?;
    let model = env.model.id();
    let mut steps = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let state = env.state().to_vec();
        let action = policy.act(h, &state, rng).map_err(|e| e.in_episode(1, h + 1))?;
        let t = env.step(action.as_slice(), rng).map_err(|e| e.in_episode(1, h + 1))?;
        steps.push(StepRecord::new(
            PopulationState::new(state, model)?,
            action,
            t.loss,
            t.disparity,
        ));
    }
    Ok(EpisodeRecord {
        value_r: steps.iter().map(|s| s.reward).sum(),
        value_g: steps.iter().map(|s| s.utility).sum(),
        final_state: env.state().to_vec(),
        steps,
        elapsed: started.elapsed(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Grid points per axis, including both ends of `[0, 1]`.
    pub per_axis: usize,
    #[serde(default = "default_rollouts")]
    pub rollouts: usize,
}

fn default_rollouts() -> usize {
    20
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            per_axis: 9,
            rollouts: default_rollouts(),
        }
    }
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        let m = self.per_axis - 1;
        (0..=m).map(|i| i as f64 / m as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortraitCell {
    pub q1: f64,
    pub q2: f64,
    pub dq1: f64,
    pub dq2: f64,
    pub disparity: f64,
    /// Standard error of the mean of `Δq₁ + Δq₂`.
    pub dsum_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePortraitGrid {
    pub grid: GridSpec,
    /// Row-major over `(q1, q2)`, `q1` slowest.
    pub cells: Vec<PortraitCell>,
}

pub const PORTRAIT_HEADER: &str = "q1,q2,dq1,dq2,disparity,dsum_se";

impl PhasePortraitGrid {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("phase portrait", e);
        writeln!(out, "{PORTRAIT_HEADER}").map_err(io)?;
        for c in &self.cells {
            writeln!(
                out,
                "{:.6},{:.6},{:.12},{:.12},{:.12},{:.12}",
                c.q1, c.q2, c.dq1, c.dq2, c.disparity, c.dsum_se
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

/// Mean one-step displacement and disparity of a frozen policy on a
/// two-group grid, `grid.rollouts` sampled actions per cell. Cell `i` draws
/// from its own stream, so cells are independent of evaluation order.
pub fn phase_portrait(
    policy: &mut dyn Policy,
    env: &FairnessEnv,
    grid: GridSpec,
    seed: u64,
) -> Result<PhasePortraitGrid> {
    if grid.per_axis < 2 || grid.rollouts == 0 {
        return Err(Error::config("phase portrait needs ≥ 2 points per axis and ≥ 1 rollout"));
    }
    if env.group_count() != 2 {
        return Err(Error::Unsupported("phase portraits are two-dimensional".into()));
    }
    let points = grid.points();
    let mut cells = Vec::with_capacity(points.len() * points.len());
    for (i, &q1) in points.iter().enumerate() {
        for (j, &q2) in points.iter().enumerate() {
            let mut rng = sub_stream(seed, "portrait", (i * points.len() + j) as u64);
            let state = [q1, q2];
            let r = grid.rollouts as f64;
            let (mut d1, mut d2, mut disp, mut sum_sq) = (0.0, 0.0, 0.0, 0.0);
            for _ in 0..grid.rollouts {
                let action = policy.act(0, &state, &mut rng)?;
                let eval = env.evaluate(&state, action.as_slice())?;
                let (a, b) = (eval.next_state[0] - q1, eval.next_state[1] - q2);
                d1 += a;
                d2 += b;
                sum_sq += (a + b) * (a + b);
                disp += eval.disparity;
            }
            let mean_sum = (d1 + d2) / r;
            let var = if grid.rollouts > 1 {
                ((sum_sq - r * mean_sum * mean_sum) / (r - 1.0)).max(0.0)
            } else {
                0.0
            };
            cells.push(PortraitCell {
                q1,
                q2,
                dq1: d1 / r,
                dq2: d2 / r,
                disparity: disp / r,
                dsum_se: (var / r).sqrt(),
            });
        }
    }
    Ok(PhasePortraitGrid { grid, cells })
}

/// Trailing-window mean and population standard deviation; the first
/// `window - 1` entries use the available prefix.
pub fn sliding_stats(series: &[f64], window: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if window == 0 {
        return Err(Error::validation("window must be at least 1"));
    }
    let mut means = Vec::with_capacity(series.len());
    let mut stds = Vec::with_capacity(series.len());
    for i in 0..series.len() {
        let w = &series[i.saturating_sub(window - 1)..=i];
        let n = w.len() as f64;
        let m = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        means.push(m);
        stds.push(var.sqrt());
    }
    Ok((means, stds))
}
