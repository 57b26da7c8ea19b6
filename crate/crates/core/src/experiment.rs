//! Experiment configuration and the reproducible artifact bundle.
//!
//! A run writes `ledger.csv`, `training_curve.csv`, `phase_portrait.csv`,
//! `evaluation.csv` and `manifest.json` into the output directory. None of
//! them carry timestamps, so identical config and seed give identical bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{EnvConfig, Environment, FairnessEnv};
use crate::error::{Error, Result};
use crate::featmap::{collect_rollouts, train_feature_map, ArchConfig, FeatureMap, OptConfig};
use crate::features::empirical::default_q_grid;
use crate::features::{build_empirical_model, ingest_dataset, FeatureModel, LogisticConfig, SchemaConfig};
use crate::greedy::GreedyConfig;
use crate::harness::{phase_portrait, run_episode, sliding_stats, GreedyPolicy, GridSpec, PhasePortraitGrid, Policy};
use crate::metrics::{update_ledger, DisparityKind, LossSpec, RegretLedger};
use crate::oracle::{oracle_optimal_value, OracleResolution};
use crate::rng::{seed_rng, sub_stream};
use crate::types::{EpisodeConfig, SCHEMA_VERSION};
use crate::ucbfair::{self, BonusSpec, UcbFair, UcbFairConfig};
use crate::voronoi::build_grid_cover;

pub const LEDGER_FILE: &str = "ledger.csv";
pub const CURVE_FILE: &str = "training_curve.csv";
pub const PORTRAIT_FILE: &str = "phase_portrait.csv";
pub const EVALUATION_FILE: &str = "evaluation.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const CURVE_HEADER: &str = "episode,value_r,value_g,estimated_v_r,estimated_v_g,nu,mean_loss,mean_disparity,loss_sliding_mean,loss_sliding_std,disparity_sliding_mean,disparity_sliding_std";
pub const EVALUATION_HEADER: &str = "run,start_q1,start_q2,end_q1,end_q2,value_r,value_g";

/// Window of the sliding statistics in the training curve.
pub const CURVE_WINDOW: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub environment: EnvConfig,
    /// Required when `environment.feature_model` is `empirical`.
    #[serde(default)]
    pub dataset: Option<DatasetSettings>,
    pub episodes: EpisodeConfig,
    pub agent: AgentConfig,
    #[serde(default)]
    pub sweep: GridSpec,
    /// Closed-loop evaluation runs of the final policy, one horizon each.
    #[serde(default = "default_evaluation_runs")]
    pub evaluation_runs: usize,
    /// Attach the constrained optimum to every ledger row (slow for long
    /// horizons).
    #[serde(default)]
    pub oracle: Option<OracleResolution>,
    pub output_dir: PathBuf,
}

fn default_evaluation_runs() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSettings {
    pub path: PathBuf,
    #[serde(default = "SchemaConfig::adult")]
    pub schema: SchemaConfig,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub logistic: LogisticConfig,
}

fn default_bins() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentConfig {
    Ucbfair(UcbFairSettings),
    Greedy(GreedyConfig),
    /// Driven over the wire protocol; see the `serve` command.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UcbFairSettings {
    /// Cover radius of the action lattice.
    pub epsilon: f64,
    pub bonus: BonusSpec,
    #[serde(default)]
    pub dual_ceiling: Option<f64>,
    #[serde(default)]
    pub dual_step: Option<f64>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub history_cap: Option<usize>,
    #[serde(default)]
    pub refactor_every: Option<usize>,
    #[serde(default)]
    pub features: FeatureSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSettings {
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub opt: OptConfig,
    #[serde(default = "default_rollout_samples")]
    pub rollout_samples: usize,
}

fn default_rollout_samples() -> usize {
    8000
}

impl Default for FeatureSettings {
    fn default() -> Self {
        FeatureSettings {
            arch: ArchConfig::default(),
            opt: OptConfig::default(),
            rollout_samples: default_rollout_samples(),
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale Fig. 1 setup: tp-loss, synthetic Gaussian scores, default
    /// utilities, K = 2000 episodes of H = 100 steps.
    pub fn fig1(output_dir: impl Into<PathBuf>, disparity: DisparityKind, seed: u64) -> Self {
        let horizon = 100;
        ExperimentConfig {
            environment: EnvConfig {
                loss: LossSpec::true_positive(),
                disparity,
                ..EnvConfig::default()
            },
            dataset: None,
            episodes: EpisodeConfig {
                horizon,
                episode_count: 2000,
                constraint_level: 0.95 * horizon as f64,
                seed,
            },
            agent: AgentConfig::Ucbfair(UcbFairSettings {
                epsilon: 0.18,
                bonus: BonusSpec::Direct { beta: 1.0 },
                dual_ceiling: None,
                dual_step: None,
                temperature: None,
                history_cap: Some(400),
                refactor_every: None,
                features: FeatureSettings::default(),
            }),
            sweep: GridSpec::default(),
            evaluation_runs: 20,
            oracle: None,
            output_dir: output_dir.into(),
        }
    }

    /// Read a TOML (`.toml`) or JSON config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.episodes.validate()?;
        self.environment.utility.validate()?;
        self.environment.loss.validate()?;
        if self.environment.feature_model == "empirical" && self.dataset.is_none() {
            return Err(Error::config("empirical feature model needs a `dataset` section"));
        }
        if self.sweep.per_axis < 2 || self.sweep.rollouts == 0 {
            return Err(Error::config("sweep needs ≥ 2 points per axis and ≥ 1 rollout"));
        }
        match &self.agent {
            AgentConfig::Ucbfair(s) => {
                self.ucbfair_config(s).validate()?;
                if s.features.rollout_samples == 0 {
                    return Err(Error::config("feature rollouts must be positive"));
                }
            }
            AgentConfig::Greedy(g) => g.validate()?,
            AgentConfig::External => {}
        }
        Ok(())
    }

    pub fn ucbfair_config(&self, s: &UcbFairSettings) -> UcbFairConfig {
        let e = &self.episodes;
        let mut c = UcbFairConfig::new(e.horizon, e.episode_count, e.constraint_level, s.epsilon, 0.0);
        c.bonus = s.bonus;
        c.seed = e.seed;
        c.dual_step = s.dual_step;
        c.temperature = s.temperature;
        if let Some(v) = s.dual_ceiling {
            c.dual_ceiling = v;
        }
        if let Some(v) = s.history_cap {
            c.history_cap = v;
        }
        if let Some(v) = s.refactor_every {
            c.refactor_every = v;
        }
        c
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    /// Environment described by the config, with the empirical model built
    /// from the dataset when requested.
    pub fn build_env(&self) -> Result<FairnessEnv> {
        let empirical = match &self.dataset {
            Some(d) if self.environment.feature_model == "empirical" => {
                let data = ingest_dataset(&d.path, &d.schema)?;
                let id = d.path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                Some(Arc::new(build_empirical_model(&data, &id, &default_q_grid(), d.bins, &d.logistic)?))
            }
            _ => None,
        };
        let model = FeatureModel::from_id(&self.environment.feature_model, empirical)?;
        FairnessEnv::new(&self.environment, model)
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    pub value_r: f64,
    pub value_g: f64,
    pub estimated_v_r: Option<f64>,
    pub estimated_v_g: Option<f64>,
    pub nu: Option<f64>,
    pub mean_loss: f64,
    pub mean_disparity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub value_r: f64,
    pub value_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fairdyn_schema: u32,
    pub crate_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub agent: String,
    pub files: Vec<(String, String)>,
    pub regret: f64,
    pub distortion: f64,
    pub contract_violations: u64,
}

pub struct ExperimentOutcome {
    pub ledger: RegretLedger,
    pub curve: Vec<CurveRow>,
    pub evaluation: Vec<EvaluationRow>,
    pub portrait: PhasePortraitGrid,
    pub manifest: Manifest,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.12}")).unwrap_or_default()
}

pub fn write_curve_csv(rows: &[CurveRow], path: &Path) -> Result<()> {
    let losses: Vec<f64> = rows.iter().map(|r| r.mean_loss).collect();
    let disps: Vec<f64> = rows.iter().map(|r| r.mean_disparity).collect();
    let (lm, ls) = sliding_stats(&losses, CURVE_WINDOW)?;
    let (dm, ds) = sliding_stats(&disps, CURVE_WINDOW)?;
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        out.push_str(&format!(
            "{},{:.12},{:.12},{},{},{},{:.12},{:.12},{:.12},{:.12},{:.12},{:.12}\n",
            r.episode,
            r.value_r,
            r.value_g,
            fmt_opt(r.estimated_v_r),
            fmt_opt(r.estimated_v_g),
            fmt_opt(r.nu),
            r.mean_loss,
            r.mean_disparity,
            lm[i],
            ls[i],
            dm[i],
            ds[i]
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_evaluation_csv(rows: &[EvaluationRow], path: &Path) -> Result<()> {
    let mut out = String::from(EVALUATION_HEADER);
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        let (s, e) = (&r.start, &r.end);
        out.push_str(&format!(
            "{i},{:.12},{:.12},{:.12},{:.12},{:.12},{:.12}\n",
            s[0], s[1], e[0], e[1], r.value_r, r.value_g
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Evaluate a frozen policy from `runs` initial states in the configured box.
pub fn evaluate_policy(
    policy: &mut dyn Policy,
    env: &mut FairnessEnv,
    horizon: usize,
    runs: usize,
    seed: u64,
) -> Result<Vec<EvaluationRow>> {
    (0..runs)
        .map(|i| {
            let mut rng = sub_stream(seed, "evaluation", i as u64);
            let start = env.sample_initial(&mut rng);
            let rec = run_episode(env, policy, &start, horizon, &mut rng)?;
            Ok(EvaluationRow {
                start,
                end: rec.final_state,
                value_r: rec.value_r,
                value_g: rec.value_g,
            })
        })
        .collect()
}

/// Train (when the agent learns), evaluate, sweep, and write the bundle.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut env = config.build_env()?;
    let ep = config.episodes;
    let seed = ep.seed;

    let oracle_env = env.clone();
    let mut oracle_fn = config.oracle.map(|res| {
        move |s: &[f64]| -> Result<f64> {
            Ok(oracle_optimal_value(&oracle_env, ep.horizon, ep.constraint_level, s, res)?.value_r)
        }
    });
    let mut ledger = RegretLedger::new(ep.constraint_level);
    let mut curve = Vec::with_capacity(ep.episode_count);
    let (evaluation, portrait, violations, agent_name) = match &config.agent {
        AgentConfig::External => {
            return Err(Error::Unsupported(
                "external agents drive the environment through the protocol server".into(),
            ))
        }
        AgentConfig::Ucbfair(s) => {
            let uc = config.ucbfair_config(s);
            let map = fit_feature_map(&mut env, &s.features, ep.horizon, seed)?;
            let space = build_grid_cover(env.action_dim(), uc.epsilon)?;
            let mut agent = UcbFair::new(uc, space, map)?;
            let run = ucbfair::train(
                &mut agent,
                &mut env,
                oracle_fn.as_mut().map(|f| f as &mut dyn FnMut(&[f64]) -> Result<f64>),
            )?;
            ledger = run.ledger;
            curve.extend(run.logs.into_iter().map(|l| CurveRow {
                episode: l.episode,
                value_r: l.value_r,
                value_g: l.value_g,
                estimated_v_r: Some(l.estimated_v_r),
                estimated_v_g: Some(l.estimated_v_g),
                nu: Some(l.nu),
                mean_loss: l.mean_loss,
                mean_disparity: l.mean_disparity,
            }));
            agent.plan();
            let evaluation = evaluate_policy(&mut agent, &mut env, ep.horizon, config.evaluation_runs, seed)?;
            let portrait = phase_portrait(&mut agent, &env, config.sweep, seed)?;
            (evaluation, portrait, agent.audit().violations(), "ucbfair")
        }
        AgentConfig::Greedy(g) => {
            let mut policy = GreedyPolicy {
                env: env.clone(),
                config: *g,
            };
            for k in 1..=ep.episode_count {
                let mut rng = sub_stream(seed, "greedy/episode", k as u64);
                let start = env.sample_initial(&mut rng);
                let best = match oracle_fn.as_mut() {
                    Some(f) => Some(f(&start)?),
                    None => None,
                };
                let rec = run_episode(&mut env, &mut policy, &start, ep.horizon, &mut rng)
                    .map_err(|e| match e {
                        Error::Episode { step, source, .. } => Error::Episode { episode: k, step, source },
                        other => other,
                    })?;
                update_ledger(&mut ledger, rec.value_r, rec.value_g, best);
                let h = ep.horizon as f64;
                curve.push(CurveRow {
                    episode: k,
                    value_r: rec.value_r,
                    value_g: rec.value_g,
                    estimated_v_r: None,
                    estimated_v_g: None,
                    nu: None,
                    mean_loss: rec.steps.iter().map(|s| s.loss).sum::<f64>() / h,
                    mean_disparity: rec.steps.iter().map(|s| s.disparity).sum::<f64>() / h,
                });
            }
            let evaluation = evaluate_policy(&mut policy, &mut env, ep.horizon, config.evaluation_runs, seed)?;
            let portrait = phase_portrait(&mut policy, &env, config.sweep, seed)?;
            (evaluation, portrait, 0, "greedy")
        }
    };

    let ledger_path = dir.join(LEDGER_FILE);
    let file = fs::File::create(&ledger_path).map_err(|e| Error::io(&ledger_path, e))?;
    ledger.write_csv(std::io::BufWriter::new(file))?;
    write_curve_csv(&curve, &dir.join(CURVE_FILE))?;
    let portrait_path = dir.join(PORTRAIT_FILE);
    let mut buf = Vec::new();
    portrait.write_csv(&mut buf)?;
    fs::write(&portrait_path, buf).map_err(|e| Error::io(&portrait_path, e))?;
    write_evaluation_csv(&evaluation, &dir.join(EVALUATION_FILE))?;

    let mut files = Vec::new();
    for name in [LEDGER_FILE, CURVE_FILE, PORTRAIT_FILE, EVALUATION_FILE] {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        files.push((name.to_string(), hex::encode(Sha256::digest(&bytes))));
    }
    let manifest = Manifest {
        fairdyn_schema: SCHEMA_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        seed,
        agent: agent_name.to_string(),
        files,
        regret: ledger.regret(),
        distortion: ledger.distortion(),
        contract_violations: violations,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;

    Ok(ExperimentOutcome {
        ledger,
        curve,
        evaluation,
        portrait,
        manifest,
    })
}

/// Collect random-action rollouts and fit the frozen feature map.
pub fn fit_feature_map(env: &mut FairnessEnv, settings: &FeatureSettings, horizon: usize, seed: u64) -> Result<FeatureMap> {
    let mut rng = seed_rng(seed, "feature-rollouts");
    let buffer = collect_rollouts(env, settings.rollout_samples, horizon, &mut rng)?;
    Ok(train_feature_map(&buffer, &settings.arch, &settings.opt)?.map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_greedy(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            environment: EnvConfig::default(),
            dataset: None,
            episodes: EpisodeConfig {
                horizon: 5,
                episode_count: 4,
                constraint_level: 4.0,
                seed: 7,
            },
            agent: AgentConfig::Greedy(GreedyConfig::new(0.5)),
            sweep: GridSpec { per_axis: 3, rollouts: 2 },
            evaluation_runs: 2,
            oracle: None,
            output_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn config_round_trips_through_toml_and_json() {
        let c = ExperimentConfig::fig1("out", DisparityKind::QR, 3);
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("c.toml");
        fs::write(&toml_path, toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(ExperimentConfig::load(&toml_path).unwrap(), c);
        let json_path = dir.path().join("c.json");
        fs::write(&json_path, serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(ExperimentConfig::load(&json_path).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let c = ExperimentConfig::fig1("out", DisparityKind::DP, 0);
        let mut v = serde_json::to_value(&c).unwrap();
        v["agent"]["surprise"] = 1.into();
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
        let mut v = serde_json::to_value(&c).unwrap();
        v["episodes"]["surprise"] = 1.into();
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
    }

    #[test]
    fn greedy_bundle_is_written_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("nested/run");
        let config = small_greedy(&out);
        let first = run_experiment(&config).unwrap();
        let snapshot: Vec<Vec<u8>> = [LEDGER_FILE, CURVE_FILE, PORTRAIT_FILE, EVALUATION_FILE, MANIFEST_FILE]
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap())
            .collect();
        run_experiment(&config).unwrap();
        for (f, bytes) in [LEDGER_FILE, CURVE_FILE, PORTRAIT_FILE, EVALUATION_FILE, MANIFEST_FILE]
            .iter()
            .zip(&snapshot)
        {
            assert_eq!(&fs::read(out.join(f)).unwrap(), bytes, "{f}");
        }
        assert_eq!(first.curve.len(), 4);
        assert_eq!(first.portrait.cells.len(), 9);
        let curve = fs::read_to_string(out.join(CURVE_FILE)).unwrap();
        assert!(curve.starts_with(CURVE_HEADER));
    }

    #[test]
    fn external_agent_is_not_run_here() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = small_greedy(dir.path());
        config.agent = AgentConfig::External;
        assert!(matches!(run_experiment(&config), Err(Error::Unsupported(_))));
    }
}
